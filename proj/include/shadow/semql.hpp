#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "shadow/schema.hpp"

namespace shadow {

struct UnsupportedSql : std::runtime_error {
    explicit UnsupportedSql(const std::string& msg) : std::runtime_error(msg) {}
};
struct BindError : std::runtime_error {
    explicit BindError(const std::string& msg) : std::runtime_error(msg) {}
};
struct GrammarViolation : std::runtime_error {
    explicit GrammarViolation(const std::string& msg) : std::runtime_error(msg) {}
};
struct IncompleteSequence : std::runtime_error {
    explicit IncompleteSequence(const std::string& msg) : std::runtime_error(msg) {}
};

// Grammar symbols. Column, Table and Literal are the terminal slots filled
// by SelectColumn / SelectTable / EmitLiteral actions.
enum class Sym {
    Stmt,
    Query,
    Select,
    Distinct,
    AggList,
    Agg,
    ValUnit,
    From,
    TabList,
    WhereOpt,
    Cond,
    Val,
    GroupOpt,
    ColList,
    HavingOpt,
    OrderOpt,
    OrdList,
    OrdItem,
    LimitOpt,
    Column,
    Table,
    Literal,
};

bool is_terminal(Sym s);
const char* sym_name(Sym s);

struct Production {
    int id;
    Sym head;
    std::string name;
    std::vector<Sym> rhs;
};

// The full production table, indexed by rule id.
const std::vector<Production>& grammar();
int rule_count();
// Rule ids whose head is the given non-terminal.
const std::vector<int>& rules_for(Sym head);
// Rule id by unique name ("CondAnd", "AggCount", ...).
int rule_id(const std::string& name);

// Typed tree. Interior nodes carry the production id they expand; leaves
// carry a schema node id (Column/Table) or a verbatim literal token.
struct SemqlAst {
    Sym sym = Sym::Stmt;
    int rule = -1;
    std::vector<SemqlAst> children;
    int schema_node = -1;
    std::string literal;

    bool operator==(const SemqlAst& o) const;
};

struct Action {
    enum class Kind { ApplyRule, SelectColumn, SelectTable, EmitLiteral };
    Kind kind = Kind::ApplyRule;
    int id = -1;  // rule id or schema node id
    std::string literal;

    bool operator==(const Action& o) const {
        return kind == o.kind && id == o.id && literal == o.literal;
    }
};
using ActionSequence = std::vector<Action>;

std::string action_str(const Action& a);

SemqlAst sql_to_ast(const std::string& sql, const SchemaGraph& graph);
std::string ast_to_sql(const SemqlAst& ast, const SchemaGraph& graph);

// Sorts And/Or conjunct chains into a stable order so logically identical
// filters compare equal.
SemqlAst canonicalize(SemqlAst ast);

ActionSequence flatten(const SemqlAst& ast);
SemqlAst unflatten(const ActionSequence& actions);

// Fewest actions that can fully expand the symbol (terminals cost one).
int min_actions(Sym s);

// Tracks the frontier of open symbols during left-to-right generation.
// Top of the stack is the next symbol to expand.
class GrammarCursor {
public:
    GrammarCursor();

    bool done() const { return stack_.empty(); }
    Sym next() const;
    // Legal rule ids when next() is a non-terminal; empty when it is a
    // terminal slot.
    std::vector<int> legal_rules() const;
    void advance(const Action& a);

private:
    std::vector<Sym> stack_;
};

// Fraction of queries whose parse -> emit -> reparse fixes the same
// canonical tree. Parse or emit failures count as non-recovered.
double recover_rate(const std::vector<std::pair<std::string, const SchemaGraph*>>& corpus);

}  // namespace shadow
