#include "shadow/semql.hpp"

#include <algorithm>
#include <cctype>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace shadow {

namespace {

std::string lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

std::vector<Production> build_grammar() {
    std::vector<Production> g;
    auto add = [&](Sym head, std::string name, std::vector<Sym> rhs) {
        g.push_back({static_cast<int>(g.size()), head, std::move(name), std::move(rhs)});
    };
    add(Sym::Stmt, "StmtQuery", {Sym::Query});
    add(Sym::Stmt, "StmtIntersect", {Sym::Query, Sym::Stmt});
    add(Sym::Stmt, "StmtUnion", {Sym::Query, Sym::Stmt});
    add(Sym::Stmt, "StmtExcept", {Sym::Query, Sym::Stmt});
    add(Sym::Query, "QueryBody",
        {Sym::Select, Sym::From, Sym::WhereOpt, Sym::GroupOpt, Sym::OrderOpt});
    add(Sym::Select, "SelectList", {Sym::Distinct, Sym::AggList});
    add(Sym::Distinct, "DistinctFalse", {});
    add(Sym::Distinct, "DistinctTrue", {});
    add(Sym::AggList, "AggListOne", {Sym::Agg});
    add(Sym::AggList, "AggListMore", {Sym::Agg, Sym::AggList});
    add(Sym::Agg, "AggNone", {Sym::ValUnit});
    add(Sym::Agg, "AggMax", {Sym::ValUnit});
    add(Sym::Agg, "AggMin", {Sym::ValUnit});
    add(Sym::Agg, "AggCount", {Sym::ValUnit});
    add(Sym::Agg, "AggSum", {Sym::ValUnit});
    add(Sym::Agg, "AggAvg", {Sym::ValUnit});
    add(Sym::Agg, "AggMaxDistinct", {Sym::ValUnit});
    add(Sym::Agg, "AggMinDistinct", {Sym::ValUnit});
    add(Sym::Agg, "AggCountDistinct", {Sym::ValUnit});
    add(Sym::Agg, "AggSumDistinct", {Sym::ValUnit});
    add(Sym::Agg, "AggAvgDistinct", {Sym::ValUnit});
    add(Sym::ValUnit, "UnitCol", {Sym::Column});
    add(Sym::ValUnit, "UnitPlus", {Sym::Column, Sym::Column});
    add(Sym::ValUnit, "UnitMinus", {Sym::Column, Sym::Column});
    add(Sym::ValUnit, "UnitTimes", {Sym::Column, Sym::Column});
    add(Sym::ValUnit, "UnitDivide", {Sym::Column, Sym::Column});
    add(Sym::From, "FromTables", {Sym::TabList});
    add(Sym::From, "FromSubquery", {Sym::Stmt});
    add(Sym::TabList, "TabListOne", {Sym::Table});
    add(Sym::TabList, "TabListMore", {Sym::Table, Sym::TabList});
    add(Sym::WhereOpt, "NoWhere", {});
    add(Sym::WhereOpt, "Where", {Sym::Cond});
    add(Sym::Cond, "CondAnd", {Sym::Cond, Sym::Cond});
    add(Sym::Cond, "CondOr", {Sym::Cond, Sym::Cond});
    add(Sym::Cond, "CondNot", {Sym::Cond});
    add(Sym::Cond, "CondEq", {Sym::Agg, Sym::Val});
    add(Sym::Cond, "CondNe", {Sym::Agg, Sym::Val});
    add(Sym::Cond, "CondLt", {Sym::Agg, Sym::Val});
    add(Sym::Cond, "CondGt", {Sym::Agg, Sym::Val});
    add(Sym::Cond, "CondLe", {Sym::Agg, Sym::Val});
    add(Sym::Cond, "CondGe", {Sym::Agg, Sym::Val});
    add(Sym::Cond, "CondLike", {Sym::Agg, Sym::Val});
    add(Sym::Cond, "CondIn", {Sym::Agg, Sym::Val});
    add(Sym::Cond, "CondBetween", {Sym::Agg, Sym::Val, Sym::Val});
    add(Sym::Val, "ValLiteral", {Sym::Literal});
    add(Sym::Val, "ValColumn", {Sym::Column});
    add(Sym::Val, "ValSubquery", {Sym::Stmt});
    add(Sym::GroupOpt, "NoGroup", {});
    add(Sym::GroupOpt, "Group", {Sym::ColList, Sym::HavingOpt});
    add(Sym::ColList, "ColListOne", {Sym::Column});
    add(Sym::ColList, "ColListMore", {Sym::Column, Sym::ColList});
    add(Sym::HavingOpt, "NoHaving", {});
    add(Sym::HavingOpt, "Having", {Sym::Cond});
    add(Sym::OrderOpt, "NoOrder", {});
    add(Sym::OrderOpt, "Order", {Sym::OrdList, Sym::LimitOpt});
    add(Sym::OrdList, "OrdListOne", {Sym::OrdItem});
    add(Sym::OrdList, "OrdListMore", {Sym::OrdItem, Sym::OrdList});
    add(Sym::OrdItem, "OrdAsc", {Sym::Agg});
    add(Sym::OrdItem, "OrdDesc", {Sym::Agg});
    add(Sym::LimitOpt, "NoLimit", {});
    add(Sym::LimitOpt, "Limit", {Sym::Literal});
    return g;
}

}  // namespace

bool is_terminal(Sym s) { return s == Sym::Column || s == Sym::Table || s == Sym::Literal; }

const char* sym_name(Sym s) {
    switch (s) {
        case Sym::Stmt: return "Stmt";
        case Sym::Query: return "Query";
        case Sym::Select: return "Select";
        case Sym::Distinct: return "Distinct";
        case Sym::AggList: return "AggList";
        case Sym::Agg: return "Agg";
        case Sym::ValUnit: return "ValUnit";
        case Sym::From: return "From";
        case Sym::TabList: return "TabList";
        case Sym::WhereOpt: return "WhereOpt";
        case Sym::Cond: return "Cond";
        case Sym::Val: return "Val";
        case Sym::GroupOpt: return "GroupOpt";
        case Sym::ColList: return "ColList";
        case Sym::HavingOpt: return "HavingOpt";
        case Sym::OrderOpt: return "OrderOpt";
        case Sym::OrdList: return "OrdList";
        case Sym::OrdItem: return "OrdItem";
        case Sym::LimitOpt: return "LimitOpt";
        case Sym::Column: return "Column";
        case Sym::Table: return "Table";
        case Sym::Literal: return "Literal";
    }
    return "?";
}

const std::vector<Production>& grammar() {
    static const std::vector<Production> g = build_grammar();
    return g;
}

int rule_count() { return static_cast<int>(grammar().size()); }

const std::vector<int>& rules_for(Sym head) {
    static const std::map<Sym, std::vector<int>> by_head = [] {
        std::map<Sym, std::vector<int>> m;
        for (const auto& p : grammar()) m[p.head].push_back(p.id);
        return m;
    }();
    static const std::vector<int> empty;
    auto it = by_head.find(head);
    return it == by_head.end() ? empty : it->second;
}

int rule_id(const std::string& name) {
    static const std::map<std::string, int> by_name = [] {
        std::map<std::string, int> m;
        for (const auto& p : grammar()) m[p.name] = p.id;
        return m;
    }();
    auto it = by_name.find(name);
    if (it == by_name.end()) throw GrammarViolation("unknown rule name: " + name);
    return it->second;
}

bool SemqlAst::operator==(const SemqlAst& o) const {
    return sym == o.sym && rule == o.rule && schema_node == o.schema_node &&
           literal == o.literal && children == o.children;
}

std::string action_str(const Action& a) {
    switch (a.kind) {
        case Action::Kind::ApplyRule: return "Rule(" + grammar()[a.id].name + ")";
        case Action::Kind::SelectColumn: return "Col(" + std::to_string(a.id) + ")";
        case Action::Kind::SelectTable: return "Tab(" + std::to_string(a.id) + ")";
        case Action::Kind::EmitLiteral: return "Lit(" + a.literal + ")";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// tokenizer

namespace {

struct Token {
    enum Type { Ident, Number, String, Op, End };
    Type type = End;
    std::string text;   // verbatim
    std::string norm;   // lowercase for idents/keywords, text otherwise
};

std::vector<Token> lex(const std::string& sql) {
    std::vector<Token> out;
    std::size_t i = 0;
    auto isid = [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
    };
    while (i < sql.size()) {
        char c = sql[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
            continue;
        }
        if (c == '\'' || c == '"') {
            std::size_t j = i + 1;
            while (j < sql.size() && sql[j] != c) ++j;
            if (j >= sql.size()) throw UnsupportedSql("unterminated string literal");
            // strings are kept verbatim in single quotes
            out.push_back({Token::String, "'" + sql.substr(i + 1, j - i - 1) + "'", ""});
            i = j + 1;
            continue;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) ||
            (c == '.' && i + 1 < sql.size() && std::isdigit(static_cast<unsigned char>(sql[i + 1])))) {
            std::size_t j = i;
            while (j < sql.size() &&
                   (std::isdigit(static_cast<unsigned char>(sql[j])) || sql[j] == '.')) {
                ++j;
            }
            out.push_back({Token::Number, sql.substr(i, j - i), ""});
            i = j;
            continue;
        }
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            std::size_t j = i;
            while (j < sql.size() && isid(sql[j])) ++j;
            std::string t = sql.substr(i, j - i);
            out.push_back({Token::Ident, t, lower(t)});
            i = j;
            continue;
        }
        if ((c == '<' || c == '>' || c == '!') && i + 1 < sql.size()) {
            std::string two = sql.substr(i, 2);
            if (two == "<=" || two == ">=" || two == "!=" || two == "<>") {
                out.push_back({Token::Op, two == "<>" ? "!=" : two, ""});
                i += 2;
                continue;
            }
        }
        static const std::string singles = "=<>(),.*+-/;";
        if (singles.find(c) != std::string::npos) {
            if (c != ';') out.push_back({Token::Op, std::string(1, c), ""});
            ++i;
            continue;
        }
        throw UnsupportedSql(std::string("unexpected character '") + c + "'");
    }
    out.push_back({Token::End, "", ""});
    return out;
}

const std::set<std::string> kAggNames = {"max", "min", "count", "sum", "avg"};
const std::set<std::string> kKeywords = {
    "select", "distinct", "from",  "where",  "group",   "by",    "having", "order",
    "limit",  "asc",      "desc",  "and",    "or",      "not",   "in",     "like",
    "between", "join",    "on",    "as",     "intersect", "union", "except"};

// ---------------------------------------------------------------------------
// parser

struct ColRef {
    std::string alias;  // empty when unqualified
    std::string name;
};

class Parser {
public:
    Parser(std::vector<Token> toks, const SchemaGraph& g) : toks_(std::move(toks)), g_(g) {}

    SemqlAst parse() {
        SemqlAst ast = parse_stmt();
        if (!at(Token::End)) throw UnsupportedSql("trailing input after statement: " + cur().text);
        return ast;
    }

private:
    std::vector<Token> toks_;
    const SchemaGraph& g_;
    std::size_t pos_ = 0;

    const Token& cur() const { return toks_[pos_]; }
    const Token& peek(std::size_t k = 1) const {
        return toks_[std::min(pos_ + k, toks_.size() - 1)];
    }
    bool at(Token::Type t) const { return cur().type == t; }
    bool at_kw(const std::string& kw) const {
        return cur().type == Token::Ident && cur().norm == kw;
    }
    bool at_op(const std::string& op) const {
        return cur().type == Token::Op && cur().text == op;
    }
    bool eat_kw(const std::string& kw) {
        if (!at_kw(kw)) return false;
        ++pos_;
        return true;
    }
    bool eat_op(const std::string& op) {
        if (!at_op(op)) return false;
        ++pos_;
        return true;
    }
    void expect_kw(const std::string& kw) {
        if (!eat_kw(kw)) throw UnsupportedSql("expected " + kw + ", got '" + cur().text + "'");
    }
    void expect_op(const std::string& op) {
        if (!eat_op(op)) throw UnsupportedSql("expected '" + op + "', got '" + cur().text + "'");
    }

    static SemqlAst node(const std::string& rule_name, std::vector<SemqlAst> children = {}) {
        int id = rule_id(rule_name);
        SemqlAst n;
        n.sym = grammar()[id].head;
        n.rule = id;
        n.children = std::move(children);
        return n;
    }
    static SemqlAst column_leaf(int node_id) {
        SemqlAst n;
        n.sym = Sym::Column;
        n.schema_node = node_id;
        return n;
    }
    static SemqlAst table_leaf(int node_id) {
        SemqlAst n;
        n.sym = Sym::Table;
        n.schema_node = node_id;
        return n;
    }
    static SemqlAst literal_leaf(std::string text) {
        SemqlAst n;
        n.sym = Sym::Literal;
        n.literal = std::move(text);
        return n;
    }

    SemqlAst parse_stmt() {
        SemqlAst q = parse_query();
        if (eat_kw("intersect")) return node("StmtIntersect", {std::move(q), parse_stmt()});
        if (eat_kw("union")) return node("StmtUnion", {std::move(q), parse_stmt()});
        if (eat_kw("except")) return node("StmtExcept", {std::move(q), parse_stmt()});
        return node("StmtQuery", {std::move(q)});
    }

    // Query-local FROM scope. Select items are parsed before FROM binds the
    // scope, so they are held unbound and resolved afterwards.
    struct Scope {
        std::map<std::string, int> alias_to_table;  // lowercase alias or table name
        std::vector<int> from_tables;               // table indices in FROM order
    };
    std::vector<Scope> scopes_;
    Scope& scope() { return scopes_.back(); }

    struct ParsedItem {
        std::string agg_rule;
        std::string unit_rule;
        ColRef a, b;
    };

    SemqlAst parse_query() {
        expect_kw("select");
        bool distinct = eat_kw("distinct");
        std::vector<ParsedItem> items;
        items.push_back(parse_item());
        while (eat_op(",")) items.push_back(parse_item());

        expect_kw("from");
        scopes_.emplace_back();
        SemqlAst from = parse_from();

        std::vector<SemqlAst> aggs;
        for (const auto& it : items) aggs.push_back(bind_item(it));
        SemqlAst agg_list = node("AggListOne", {std::move(aggs.back())});
        for (auto r = aggs.rbegin() + 1; r != aggs.rend(); ++r) {
            agg_list = node("AggListMore", {std::move(*r), std::move(agg_list)});
        }
        SemqlAst select = node("SelectList",
                               {node(distinct ? "DistinctTrue" : "DistinctFalse"),
                                std::move(agg_list)});

        SemqlAst where = eat_kw("where") ? node("Where", {parse_cond()}) : node("NoWhere");

        SemqlAst group = node("NoGroup");
        if (eat_kw("group")) {
            expect_kw("by");
            std::vector<SemqlAst> cols;
            cols.push_back(parse_column());
            while (eat_op(",")) cols.push_back(parse_column());
            SemqlAst col_list = node("ColListOne", {std::move(cols.back())});
            for (auto r = cols.rbegin() + 1; r != cols.rend(); ++r) {
                col_list = node("ColListMore", {std::move(*r), std::move(col_list)});
            }
            SemqlAst having = eat_kw("having") ? node("Having", {parse_cond()}) : node("NoHaving");
            group = node("Group", {std::move(col_list), std::move(having)});
        }

        SemqlAst order = node("NoOrder");
        if (eat_kw("order")) {
            expect_kw("by");
            std::vector<SemqlAst> ords;
            ords.push_back(parse_ord_item());
            while (eat_op(",")) ords.push_back(parse_ord_item());
            SemqlAst ord_list = node("OrdListOne", {std::move(ords.back())});
            for (auto r = ords.rbegin() + 1; r != ords.rend(); ++r) {
                ord_list = node("OrdListMore", {std::move(*r), std::move(ord_list)});
            }
            SemqlAst limit = node("NoLimit");
            if (eat_kw("limit")) {
                if (!at(Token::Number)) throw UnsupportedSql("LIMIT expects a number");
                limit = node("Limit", {literal_leaf(cur().text)});
                ++pos_;
            }
            order = node("Order", {std::move(ord_list), std::move(limit)});
        }

        scopes_.pop_back();
        return node("QueryBody", {std::move(select), std::move(from), std::move(where),
                                  std::move(group), std::move(order)});
    }

    SemqlAst parse_from() {
        if (at_op("(")) {
            if (peek().norm != "select") throw UnsupportedSql("expected subquery after FROM (");
            expect_op("(");
            SemqlAst sub = parse_stmt();
            expect_op(")");
            if (eat_kw("as") && at(Token::Ident)) ++pos_;  // subquery alias is unusable here
            return node("FromSubquery", {std::move(sub)});
        }
        std::vector<int> tables;
        parse_from_table(tables);
        while (true) {
            if (eat_kw("join") || eat_op(",")) {
                parse_from_table(tables);
                if (eat_kw("on")) parse_cond();  // join keys are re-derived from foreign keys
                continue;
            }
            break;
        }
        SemqlAst tab_list = node("TabListOne", {table_leaf(tables.back())});
        for (auto r = tables.rbegin() + 1; r != tables.rend(); ++r) {
            tab_list = node("TabListMore", {table_leaf(*r), std::move(tab_list)});
        }
        return node("FromTables", {std::move(tab_list)});
    }

    void parse_from_table(std::vector<int>& tables) {
        if (!at(Token::Ident) || kKeywords.count(cur().norm)) {
            throw UnsupportedSql("expected table name, got '" + cur().text + "'");
        }
        std::string name = cur().norm;
        ++pos_;
        int ti = -1;
        for (std::size_t i = 0; i < g_.tables.size(); ++i) {
            if (lower(g_.tables[i].original_name) == name) {
                ti = static_cast<int>(i);
                break;
            }
        }
        if (ti < 0) throw BindError("unknown table '" + name + "' in " + g_.db_id);
        for (int prev : scope().from_tables) {
            if (prev == ti) throw UnsupportedSql("self join on table '" + name + "'");
        }
        scope().from_tables.push_back(ti);
        scope().alias_to_table[name] = ti;
        if (eat_kw("as")) {
            if (!at(Token::Ident)) throw UnsupportedSql("expected alias after AS");
            scope().alias_to_table[cur().norm] = ti;
            ++pos_;
        }
        tables.push_back(ti);
    }

    ParsedItem parse_item() {
        ParsedItem it;
        if (cur().type == Token::Ident && kAggNames.count(cur().norm) && peek().text == "(") {
            std::string agg = cur().norm;
            ++pos_;
            expect_op("(");
            bool d = eat_kw("distinct");
            std::string base = agg == "max"     ? "AggMax"
                               : agg == "min"   ? "AggMin"
                               : agg == "count" ? "AggCount"
                               : agg == "sum"   ? "AggSum"
                                                : "AggAvg";
            it.agg_rule = d ? base + "Distinct" : base;
            parse_item_unit(it);
            expect_op(")");
        } else {
            it.agg_rule = "AggNone";
            parse_item_unit(it);
        }
        return it;
    }

    void parse_item_unit(ParsedItem& it) {
        it.a = parse_colref();
        if (at_op("+")) {
            it.unit_rule = "UnitPlus";
        } else if (at_op("-")) {
            it.unit_rule = "UnitMinus";
        } else if (at_op("/")) {
            it.unit_rule = "UnitDivide";
        } else if (at_op("*") && peek().type == Token::Ident) {
            it.unit_rule = "UnitTimes";
        } else {
            it.unit_rule = "UnitCol";
            return;
        }
        ++pos_;
        it.b = parse_colref();
    }

    ColRef parse_colref() {
        if (at_op("*")) {
            ++pos_;
            return {"", "*"};
        }
        if (!at(Token::Ident) || kKeywords.count(cur().norm)) {
            throw UnsupportedSql("expected column, got '" + cur().text + "'");
        }
        std::string first = cur().norm;
        ++pos_;
        if (eat_op(".")) {
            if (!at(Token::Ident)) throw UnsupportedSql("expected column after '.'");
            std::string second = cur().norm;
            ++pos_;
            return {first, second};
        }
        return {"", first};
    }

    int bind_column(const ColRef& ref) {
        if (ref.name == "*") return g_.column_node(0);
        auto col_in_table = [&](int ti) {
            for (std::size_t ci = 0; ci < g_.columns.size(); ++ci) {
                if (g_.columns[ci].table == ti && lower(g_.columns[ci].original_name) == ref.name) {
                    return g_.column_node(static_cast<int>(ci));
                }
            }
            return -1;
        };
        if (!ref.alias.empty()) {
            auto it = scope().alias_to_table.find(ref.alias);
            if (it == scope().alias_to_table.end()) {
                throw BindError("unknown alias '" + ref.alias + "'");
            }
            int n = col_in_table(it->second);
            if (n < 0) {
                throw BindError("no column '" + ref.name + "' in table '" +
                                g_.tables[it->second].original_name + "'");
            }
            return n;
        }
        for (int ti : scope().from_tables) {
            int n = col_in_table(ti);
            if (n >= 0) return n;
        }
        // FROM subqueries leave the scope empty; fall back to a unique
        // whole-schema match.
        int found = -1;
        for (std::size_t ci = 1; ci < g_.columns.size(); ++ci) {
            if (lower(g_.columns[ci].original_name) == ref.name) {
                if (found >= 0) throw BindError("ambiguous column '" + ref.name + "'");
                found = g_.column_node(static_cast<int>(ci));
            }
        }
        if (found < 0) throw BindError("unknown column '" + ref.name + "' in " + g_.db_id);
        return found;
    }

    SemqlAst bind_item(const ParsedItem& it) {
        std::vector<SemqlAst> cols;
        cols.push_back(column_leaf(bind_column(it.a)));
        if (it.unit_rule != "UnitCol") cols.push_back(column_leaf(bind_column(it.b)));
        return node(it.agg_rule, {node(it.unit_rule, std::move(cols))});
    }

    SemqlAst parse_column() { return column_leaf(bind_column(parse_colref())); }

    SemqlAst parse_agg() {
        ParsedItem it = parse_item();
        return bind_item(it);
    }

    SemqlAst parse_ord_item() {
        SemqlAst agg = parse_agg();
        if (eat_kw("desc")) return node("OrdDesc", {std::move(agg)});
        eat_kw("asc");
        return node("OrdAsc", {std::move(agg)});
    }

    SemqlAst parse_cond() {
        SemqlAst left = parse_cond_and();
        while (eat_kw("or")) left = node("CondOr", {std::move(left), parse_cond_and()});
        return left;
    }

    SemqlAst parse_cond_and() {
        SemqlAst left = parse_cond_not();
        while (eat_kw("and")) left = node("CondAnd", {std::move(left), parse_cond_not()});
        return left;
    }

    SemqlAst parse_cond_not() {
        if (eat_kw("not")) return node("CondNot", {parse_cond_not()});
        return parse_cond_primary();
    }

    SemqlAst parse_cond_primary() {
        if (at_op("(") && peek().norm != "select") {
            expect_op("(");
            SemqlAst c = parse_cond();
            expect_op(")");
            return c;
        }
        SemqlAst left = parse_agg();
        bool negate = eat_kw("not");
        SemqlAst out;
        if (eat_kw("between")) {
            SemqlAst lo = parse_val();
            expect_kw("and");
            SemqlAst hi = parse_val();
            out = node("CondBetween", {std::move(left), std::move(lo), std::move(hi)});
        } else if (eat_kw("in")) {
            out = node("CondIn", {std::move(left), parse_val()});
        } else if (eat_kw("like")) {
            out = node("CondLike", {std::move(left), parse_val()});
        } else if (negate) {
            throw UnsupportedSql("expected IN, LIKE or BETWEEN after NOT");
        } else {
            std::string op;
            for (const char* o : {"=", "!=", "<=", ">=", "<", ">"}) {
                if (at_op(o)) {
                    op = o;
                    break;
                }
            }
            if (op.empty()) throw UnsupportedSql("expected comparison, got '" + cur().text + "'");
            ++pos_;
            std::string rule = op == "="    ? "CondEq"
                               : op == "!=" ? "CondNe"
                               : op == "<"  ? "CondLt"
                               : op == ">"  ? "CondGt"
                               : op == "<=" ? "CondLe"
                                            : "CondGe";
            out = node(rule, {std::move(left), parse_val()});
        }
        if (negate) out = node("CondNot", {std::move(out)});
        return out;
    }

    SemqlAst parse_val() {
        if (at_op("(")) {
            if (peek().norm != "select") throw UnsupportedSql("expected subquery after '('");
            expect_op("(");
            SemqlAst sub = parse_stmt();
            expect_op(")");
            return node("ValSubquery", {std::move(sub)});
        }
        if (at(Token::Number) || at(Token::String)) {
            SemqlAst v = node("ValLiteral", {literal_leaf(cur().text)});
            ++pos_;
            return v;
        }
        return node("ValColumn", {parse_column()});
    }
};

// ---------------------------------------------------------------------------
// emission

class Emitter {
public:
    explicit Emitter(const SchemaGraph& g) : g_(g) {}

    std::string stmt(const SemqlAst& n) {
        check(n, Sym::Stmt);
        const std::string& r = name(n);
        if (r == "StmtQuery") return query(n.children[0]);
        std::string op = r == "StmtIntersect" ? "INTERSECT" : r == "StmtUnion" ? "UNION" : "EXCEPT";
        return query(n.children[0]) + " " + op + " " + stmt(n.children[1]);
    }

private:
    const SchemaGraph& g_;

    // column emission scope of the innermost query
    struct Scope {
        std::map<int, std::string> table_alias;  // table index -> alias text
        bool qualify = false;
    };
    std::vector<Scope> scopes_;

    static const std::string& name(const SemqlAst& n) { return grammar()[n.rule].name; }
    static void check(const SemqlAst& n, Sym s) {
        if (n.sym != s || (is_terminal(s) ? n.rule != -1 : n.rule < 0)) {
            throw BindError(std::string("malformed tree at ") + sym_name(s));
        }
    }

    int column_index(const SemqlAst& leaf) {
        if (leaf.sym != Sym::Column || leaf.schema_node < static_cast<int>(g_.tables.size()) ||
            leaf.schema_node >= g_.node_count()) {
            throw BindError("action does not select a column node");
        }
        return g_.node_to_column(leaf.schema_node);
    }

    int table_index(const SemqlAst& leaf) {
        if (leaf.sym != Sym::Table || leaf.schema_node < 0 ||
            leaf.schema_node >= static_cast<int>(g_.tables.size())) {
            throw BindError("action does not select a table node");
        }
        return leaf.schema_node;
    }

    std::string column(const SemqlAst& leaf) {
        int ci = column_index(leaf);
        if (ci == 0) return "*";
        const auto& col = g_.columns[ci];
        std::string nm = lower(col.original_name);
        if (!scopes_.empty() && scopes_.back().qualify) {
            auto it = scopes_.back().table_alias.find(col.table);
            if (it != scopes_.back().table_alias.end()) return it->second + "." + nm;
            return lower(g_.tables[col.table].original_name) + "." + nm;
        }
        return nm;
    }

    std::string query(const SemqlAst& n) {
        check(n, Sym::Query);
        const SemqlAst& from = n.children[1];

        Scope sc;
        std::string from_str;
        if (name(from) == "FromSubquery") {
            from_str = "(" + stmt(from.children[0]) + ")";
        } else {
            std::vector<int> tables;
            const SemqlAst* tl = &from.children[0];
            while (true) {
                tables.push_back(table_index(tl->children[0]));
                if (name(*tl) == "TabListOne") break;
                tl = &tl->children[1];
            }
            sc.qualify = tables.size() > 1;
            for (std::size_t i = 0; i < tables.size(); ++i) {
                sc.table_alias[tables[i]] = "T" + std::to_string(i + 1);
            }
            for (std::size_t i = 0; i < tables.size(); ++i) {
                std::string t = lower(g_.tables[tables[i]].original_name);
                if (i == 0) {
                    from_str = t + (sc.qualify ? " AS T1" : "");
                    continue;
                }
                from_str += " JOIN " + t + " AS T" + std::to_string(i + 1);
                // join key from the first earlier table with a foreign key
                for (std::size_t j = 0; j < i; ++j) {
                    auto fk = g_.find_fk(tables[j], tables[i]);
                    if (!fk) continue;
                    const auto& ca = g_.columns[g_.node_to_column(fk->first)];
                    const auto& cb = g_.columns[g_.node_to_column(fk->second)];
                    from_str += " ON T" + std::to_string(j + 1) + "." + lower(ca.original_name) +
                                " = T" + std::to_string(i + 1) + "." + lower(cb.original_name);
                    break;
                }
            }
        }
        scopes_.push_back(sc);

        const SemqlAst& sel = n.children[0];
        std::string out = "SELECT ";
        if (name(sel.children[0]) == "DistinctTrue") out += "DISTINCT ";
        const SemqlAst* al = &sel.children[1];
        while (true) {
            out += agg(al->children[0]);
            if (name(*al) == "AggListOne") break;
            out += ", ";
            al = &al->children[1];
        }
        out += " FROM " + from_str;

        const SemqlAst& where = n.children[2];
        if (name(where) == "Where") out += " WHERE " + cond(where.children[0], 1);

        const SemqlAst& group = n.children[3];
        if (name(group) == "Group") {
            out += " GROUP BY ";
            const SemqlAst* cl = &group.children[0];
            while (true) {
                out += column(cl->children[0]);
                if (name(*cl) == "ColListOne") break;
                out += ", ";
                cl = &cl->children[1];
            }
            const SemqlAst& having = group.children[1];
            if (name(having) == "Having") out += " HAVING " + cond(having.children[0], 1);
        }

        const SemqlAst& order = n.children[4];
        if (name(order) == "Order") {
            out += " ORDER BY ";
            const SemqlAst* ol = &order.children[0];
            while (true) {
                const SemqlAst& item = ol->children[0];
                out += agg(item.children[0]);
                out += name(item) == "OrdDesc" ? " DESC" : " ASC";
                if (name(*ol) == "OrdListOne") break;
                out += ", ";
                ol = &ol->children[1];
            }
            const SemqlAst& limit = order.children[1];
            if (name(limit) == "Limit") out += " LIMIT " + limit.children[0].literal;
        }

        scopes_.pop_back();
        return out;
    }

    std::string val_unit(const SemqlAst& n) {
        const std::string& r = name(n);
        if (r == "UnitCol") return column(n.children[0]);
        std::string op = r == "UnitPlus"    ? " + "
                         : r == "UnitMinus" ? " - "
                         : r == "UnitTimes" ? " * "
                                            : " / ";
        return column(n.children[0]) + op + column(n.children[1]);
    }

    std::string agg(const SemqlAst& n) {
        const std::string& r = name(n);
        if (r == "AggNone") return val_unit(n.children[0]);
        std::string fn = r.substr(3);  // MaxDistinct, Count, ...
        bool distinct = fn.size() > 8 && fn.substr(fn.size() - 8) == "Distinct";
        if (distinct) fn = fn.substr(0, fn.size() - 8);
        std::string up;
        for (char c : fn) up += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        return up + "(" + (distinct ? "DISTINCT " : "") + val_unit(n.children[0]) + ")";
    }

    std::string val(const SemqlAst& n) {
        const std::string& r = name(n);
        if (r == "ValLiteral") return n.children[0].literal;
        if (r == "ValColumn") return column(n.children[0]);
        return "(" + stmt(n.children[0]) + ")";
    }

    // precedence: OR 1, AND 2, NOT 3, atoms 4; children below the ambient
    // precedence get parentheses so the string reparses to the same shape
    int prec(const SemqlAst& n) {
        const std::string& r = name(n);
        if (r == "CondOr") return 1;
        if (r == "CondAnd") return 2;
        if (r == "CondNot") return 3;
        return 4;
    }

    std::string cond(const SemqlAst& n, int ambient) {
        const std::string& r = name(n);
        std::string s;
        if (r == "CondOr") {
            s = cond(n.children[0], 1) + " OR " + cond(n.children[1], 1);
        } else if (r == "CondAnd") {
            s = cond(n.children[0], 2) + " AND " + cond(n.children[1], 2);
        } else if (r == "CondNot") {
            s = "NOT " + cond(n.children[0], 4);
        } else if (r == "CondBetween") {
            s = agg(n.children[0]) + " BETWEEN " + val(n.children[1]) + " AND " +
                val(n.children[2]);
        } else {
            std::string op = r == "CondEq"   ? " = "
                             : r == "CondNe" ? " != "
                             : r == "CondLt" ? " < "
                             : r == "CondGt" ? " > "
                             : r == "CondLe" ? " <= "
                             : r == "CondGe" ? " >= "
                             : r == "CondLike" ? " LIKE "
                                               : " IN ";
            s = agg(n.children[0]) + op + val(n.children[1]);
        }
        if (prec(n) < ambient) return "(" + s + ")";
        return s;
    }
};

std::string ast_key(const SemqlAst& n) {
    std::string s = std::to_string(n.rule) + ":" + std::to_string(n.schema_node) + ":" + n.literal;
    for (const auto& c : n.children) s += "(" + ast_key(c) + ")";
    return s;
}

}  // namespace

SemqlAst sql_to_ast(const std::string& sql, const SchemaGraph& graph) {
    return Parser(lex(sql), graph).parse();
}

std::string ast_to_sql(const SemqlAst& ast, const SchemaGraph& graph) {
    return Emitter(graph).stmt(ast);
}

SemqlAst canonicalize(SemqlAst ast) {
    for (auto& c : ast.children) c = canonicalize(std::move(c));
    if (ast.rule >= 0) {
        const std::string& r = grammar()[ast.rule].name;
        if (r == "CondAnd" || r == "CondOr") {
            // flatten the chain of same-operator conjuncts, sort, rebuild
            // right-nested
            std::vector<SemqlAst> chain;
            std::vector<SemqlAst> todo;
            todo.push_back(std::move(ast));
            while (!todo.empty()) {
                SemqlAst n = std::move(todo.back());
                todo.pop_back();
                if (n.rule >= 0 && grammar()[n.rule].name == r) {
                    todo.push_back(std::move(n.children[1]));
                    todo.push_back(std::move(n.children[0]));
                } else {
                    chain.push_back(std::move(n));
                }
            }
            std::sort(chain.begin(), chain.end(),
                      [](const SemqlAst& a, const SemqlAst& b) { return ast_key(a) < ast_key(b); });
            SemqlAst out = std::move(chain.back());
            int rid = rule_id(r);
            for (auto it = chain.rbegin() + 1; it != chain.rend(); ++it) {
                SemqlAst parent;
                parent.sym = Sym::Cond;
                parent.rule = rid;
                parent.children.push_back(std::move(*it));
                parent.children.push_back(std::move(out));
                out = std::move(parent);
            }
            return out;
        }
    }
    return ast;
}

ActionSequence flatten(const SemqlAst& ast) {
    ActionSequence out;
    std::function<void(const SemqlAst&)> walk = [&](const SemqlAst& n) {
        if (n.sym == Sym::Column) {
            out.push_back({Action::Kind::SelectColumn, n.schema_node, ""});
        } else if (n.sym == Sym::Table) {
            out.push_back({Action::Kind::SelectTable, n.schema_node, ""});
        } else if (n.sym == Sym::Literal) {
            out.push_back({Action::Kind::EmitLiteral, -1, n.literal});
        } else {
            out.push_back({Action::Kind::ApplyRule, n.rule, ""});
            for (const auto& c : n.children) walk(c);
        }
    };
    walk(ast);
    return out;
}

namespace {

SemqlAst unflatten_sym(Sym s, const ActionSequence& acts, std::size_t& i) {
    if (i >= acts.size()) {
        throw IncompleteSequence("sequence ends while expecting " + std::string(sym_name(s)));
    }
    const Action& a = acts[i++];
    SemqlAst n;
    n.sym = s;
    if (s == Sym::Column) {
        if (a.kind != Action::Kind::SelectColumn) {
            throw GrammarViolation("expected SelectColumn, got " + action_str(a));
        }
        n.schema_node = a.id;
        return n;
    }
    if (s == Sym::Table) {
        if (a.kind != Action::Kind::SelectTable) {
            throw GrammarViolation("expected SelectTable, got " + action_str(a));
        }
        n.schema_node = a.id;
        return n;
    }
    if (s == Sym::Literal) {
        if (a.kind != Action::Kind::EmitLiteral) {
            throw GrammarViolation("expected EmitLiteral, got " + action_str(a));
        }
        n.literal = a.literal;
        return n;
    }
    if (a.kind != Action::Kind::ApplyRule || a.id < 0 || a.id >= rule_count() ||
        grammar()[a.id].head != s) {
        throw GrammarViolation("expected a " + std::string(sym_name(s)) + " rule, got " +
                               action_str(a));
    }
    n.rule = a.id;
    for (Sym child : grammar()[a.id].rhs) n.children.push_back(unflatten_sym(child, acts, i));
    return n;
}

}  // namespace

SemqlAst unflatten(const ActionSequence& actions) {
    if (actions.empty()) throw IncompleteSequence("empty action sequence");
    std::size_t i = 0;
    SemqlAst ast = unflatten_sym(Sym::Stmt, actions, i);
    if (i != actions.size()) {
        throw GrammarViolation("trailing actions after a complete statement");
    }
    return ast;
}

int min_actions(Sym s) {
    static const std::map<Sym, int> costs = [] {
        constexpr int inf = 1 << 20;
        std::map<Sym, int> c;
        for (const auto& p : grammar()) {
            c.emplace(p.head, inf);
            for (Sym r : p.rhs) c.emplace(r, is_terminal(r) ? 1 : inf);
        }
        bool changed = true;
        while (changed) {
            changed = false;
            for (const auto& p : grammar()) {
                int total = 1;
                for (Sym r : p.rhs) total = std::min(total + c.at(r), inf);
                if (total < c.at(p.head)) {
                    c[p.head] = total;
                    changed = true;
                }
            }
        }
        return c;
    }();
    return costs.at(s);
}

GrammarCursor::GrammarCursor() { stack_.push_back(Sym::Stmt); }

Sym GrammarCursor::next() const {
    if (stack_.empty()) throw GrammarViolation("cursor already complete");
    return stack_.back();
}

std::vector<int> GrammarCursor::legal_rules() const {
    Sym s = next();
    if (is_terminal(s)) return {};
    return rules_for(s);
}

void GrammarCursor::advance(const Action& a) {
    Sym s = next();
    stack_.pop_back();
    switch (a.kind) {
        case Action::Kind::SelectColumn:
            if (s != Sym::Column) throw GrammarViolation("SelectColumn while expecting " +
                                                         std::string(sym_name(s)));
            return;
        case Action::Kind::SelectTable:
            if (s != Sym::Table) throw GrammarViolation("SelectTable while expecting " +
                                                        std::string(sym_name(s)));
            return;
        case Action::Kind::EmitLiteral:
            if (s != Sym::Literal) throw GrammarViolation("EmitLiteral while expecting " +
                                                          std::string(sym_name(s)));
            return;
        case Action::Kind::ApplyRule: {
            if (a.id < 0 || a.id >= rule_count() || grammar()[a.id].head != s) {
                throw GrammarViolation("rule " + std::to_string(a.id) + " while expecting " +
                                       std::string(sym_name(s)));
            }
            const auto& rhs = grammar()[a.id].rhs;
            for (auto it = rhs.rbegin(); it != rhs.rend(); ++it) stack_.push_back(*it);
            return;
        }
    }
}

double recover_rate(const std::vector<std::pair<std::string, const SchemaGraph*>>& corpus) {
    if (corpus.empty()) return 0.0;
    std::size_t ok = 0;
    for (const auto& [sql, graph] : corpus) {
        try {
            SemqlAst a1 = canonicalize(sql_to_ast(sql, *graph));
            std::string emitted = ast_to_sql(a1, *graph);
            SemqlAst a2 = canonicalize(sql_to_ast(emitted, *graph));
            if (a1 == a2) ++ok;
        } catch (const std::exception&) {
        }
    }
    return static_cast<double>(ok) / static_cast<double>(corpus.size());
}

}  // namespace shadow
