#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "shadow/tensor.hpp"

namespace shadow {

struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Directed labeled edges over schema nodes. Self loops are handled by the
// R-GCN self-loop weight and never materialized as edges.
enum class EdgeLabel {
    BelongsTo,          // column -> owning table
    HasColumn,          // table -> column
    ForeignKeyForward,  // column -> referenced column
    ForeignKeyBackward,
    PrimaryKey,    // table -> its primary-key column
    PrimaryKeyOf,  // primary-key column -> table
    SelfLoop,
};
constexpr int kNumEdgeLabels = 7;
constexpr int kNumRgcnRelations = 6;  // SelfLoop excluded

struct SchemaEdge {
    int src = 0;
    EdgeLabel label = EdgeLabel::SelfLoop;
    int dst = 0;
};

// Node ids are dense 0..m-1, tables first then columns. Column 0 of the
// column block is the global `*`.
struct SchemaGraph {
    struct Table {
        std::string original_name;
        std::vector<std::string> tokens;
    };
    struct Column {
        std::string original_name;
        std::vector<std::string> tokens;
        int table = -1;  // -1 for `*`
        std::string value_type;
    };

    std::string db_id;
    std::vector<Table> tables;
    std::vector<Column> columns;
    std::vector<SchemaEdge> edges;

    int node_count() const { return static_cast<int>(tables.size() + columns.size()); }
    bool is_table_node(int node) const { return node < static_cast<int>(tables.size()); }
    int column_node(int col_index) const { return static_cast<int>(tables.size()) + col_index; }
    int node_to_column(int node) const { return node - static_cast<int>(tables.size()); }
    const std::vector<std::string>& node_tokens(int node) const {
        return is_table_node(node) ? tables[node].tokens
                                   : columns[node - tables.size()].tokens;
    }
    // Foreign-key forward edge between two column nodes, if any.
    std::optional<std::pair<int, int>> find_fk(int table_a, int table_b) const;
};

enum class LinkTag {
    TableExactMatch = 0,
    TablePartialMatch = 1,
    ColumnExactMatch = 2,
    ColumnPartialMatch = 3,
    ColumnValueExactMatch = 4,
    ColumnValuePartialMatch = 5,
    NoMatch = 6,
};
constexpr int kNumLinkTags = 7;

// Priority for conflict resolution: exact > partial > value-exact >
// value-partial > no-match. Lower rank wins.
int link_tag_rank(LinkTag t);

struct LinkMatrix {
    IdGrid grid;  // n question positions x m schema nodes, values are LinkTag
    LinkTag at(std::int64_t i, std::int64_t j) const {
        return static_cast<LinkTag>(grid.at(i, j));
    }
};

// Discrete relation vocabulary biasing relation-aware attention. 26 ids:
//   0..6   question->schema linking tags (same order as LinkTag)
//   7..11  question<->question clamped distance, -2..+2
//   12..19 schema<->schema: BelongsTo, HasColumn, FkForward, FkBackward,
//          PrimaryKey, PrimaryKeyOf, TableFkForward, TableFkBackward
//   20..23 SelfLoopQuestion, SelfLoopSchema, NoEdgeSameType, NoEdgeCrossType
//   24..25 schema->question: Linked, NoLink
namespace rel {
constexpr int kLinkBase = 0;
constexpr int kDistBase = 7;  // kDistBase + (d + 2) for d in [-2, +2]
constexpr int kBelongsTo = 12;
constexpr int kHasColumn = 13;
constexpr int kFkForward = 14;
constexpr int kFkBackward = 15;
constexpr int kPrimaryKey = 16;
constexpr int kPrimaryKeyOf = 17;
constexpr int kTableFkForward = 18;
constexpr int kTableFkBackward = 19;
constexpr int kSelfLoopQuestion = 20;
constexpr int kSelfLoopSchema = 21;
constexpr int kNoEdgeSameType = 22;
constexpr int kNoEdgeCrossType = 23;
constexpr int kSchemaToQuestionLinked = 24;
constexpr int kSchemaToQuestionNoLink = 25;
constexpr int kVocabSize = 26;
}  // namespace rel

using RelationMatrix = IdGrid;  // (n+m) x (n+m), values in [0, rel::kVocabSize)

struct TrainExample {
    std::vector<std::string> question;
    std::string db_id;
    std::string gold_sql;
    std::vector<int> gold_actions_placeholder;  // filled by the grammar module
};

// Tokenized DB content per column node: column node id -> list of cell token
// sequences. Built from per-table CSV files when present.
struct ValueIndex {
    std::map<int, std::vector<std::vector<std::string>>> cells;
};

std::vector<std::string> normalize_name(const std::string& name);
std::vector<std::string> tokenize_question(const std::string& text);

std::vector<SchemaGraph> load_tables(const std::string& path);
std::vector<TrainExample> load_examples(const std::string& path,
                                        const std::vector<SchemaGraph>& schemas);
// dir holds <table>.csv files (header row = column names) for one database.
ValueIndex load_value_index(const std::string& dir, const SchemaGraph& graph);

LinkMatrix tag_linking(const std::vector<std::string>& question, const SchemaGraph& graph,
                       const ValueIndex* values = nullptr, int max_ngram = 5);

RelationMatrix build_relation_matrix(std::int64_t question_len, const SchemaGraph& graph,
                                     const LinkMatrix& link);

}  // namespace shadow
