#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <fstream>

#include "shadow/schema.hpp"

using namespace shadow;

namespace {

std::string data_dir() {
    const char* d = std::getenv("SHADOW_DATA_DIR");
    return d ? d : "data";
}

std::vector<SchemaGraph> toy_schemas() { return load_tables(data_dir() + "/toy_tables.json"); }

const SchemaGraph& by_id(const std::vector<SchemaGraph>& gs, const std::string& id) {
    for (const auto& g : gs) {
        if (g.db_id == id) return g;
    }
    throw std::runtime_error("missing db " + id);
}

bool has_edge(const SchemaGraph& g, int src, EdgeLabel l, int dst) {
    for (const auto& e : g.edges) {
        if (e.src == src && e.label == l && e.dst == dst) return true;
    }
    return false;
}

int find_node(const SchemaGraph& g, const std::string& name, bool table) {
    auto toks = normalize_name(name);
    for (int v = 0; v < g.node_count(); ++v) {
        if (g.is_table_node(v) == table && g.node_tokens(v) == toks) return v;
    }
    return -1;
}

}  // namespace

TEST_CASE("load_tables smallest schema") {
    std::string path = "/tmp/shadow_tiny_tables.json";
    {
        std::ofstream out(path);
        out << R"([{"db_id":"tiny","table_names_original":["team"],
                    "column_names_original":[[-1,"*"],[0,"name"]],
                    "column_types":["text","text"],
                    "primary_keys":[1],"foreign_keys":[]}])";
    }
    auto gs = load_tables(path);
    REQUIRE(gs.size() == 1);
    const auto& g = gs[0];
    CHECK(g.node_count() == 3);  // team, *, name
    CHECK(g.tables.size() == 1);
    CHECK(g.columns.size() == 2);
    int team = 0, name = g.column_node(1);
    CHECK(has_edge(g, name, EdgeLabel::BelongsTo, team));
    CHECK(has_edge(g, team, EdgeLabel::HasColumn, name));
    CHECK(has_edge(g, team, EdgeLabel::PrimaryKey, name));
    CHECK(has_edge(g, name, EdgeLabel::PrimaryKeyOf, team));
}

TEST_CASE("load_tables multi-word names and fk reverses") {
    auto gs = toy_schemas();
    const auto& g = by_id(gs, "sports");
    int ms = find_node(g, "match_season", true);
    REQUIRE(ms >= 0);
    CHECK(g.node_tokens(ms).size() == 2);  // "match season"

    // every forward FK edge has its backward twin
    for (const auto& e : g.edges) {
        if (e.label == EdgeLabel::ForeignKeyForward) {
            CHECK(has_edge(g, e.dst, EdgeLabel::ForeignKeyBackward, e.src));
        }
    }
    CHECK(has_edge(g, g.column_node(6), EdgeLabel::ForeignKeyForward, g.column_node(1)));
}

TEST_CASE("load_tables error paths") {
    std::string path = "/tmp/shadow_bad_tables.json";
    {
        std::ofstream out(path);
        out << R"([{"db_id":"bad","table_names_original":["t"],
                    "column_names_original":[[-1,"*"],[0,"a"]],
                    "column_types":["text","text"],
                    "primary_keys":[],"foreign_keys":[[1,9]]}])";
    }
    CHECK_THROWS_WITH_AS(load_tables(path), doctest::Contains("bad"), ParseError);

    {
        std::ofstream out(path);
        out << R"([{"db_id":"bad2","table_names_original":["t"],
                    "column_names_original":[[-1,"*"],[3,"a"]],
                    "column_types":["text","text"],
                    "primary_keys":[],"foreign_keys":[]}])";
    }
    CHECK_THROWS_AS(load_tables(path), ParseError);

    {
        std::ofstream out(path);
        out << R"([{"db_id":"bad3","table_names_original":["t"],
                    "column_names_original":[[-1,"*"]],
                    "column_types":["text"],"primary_keys":[]}])";
    }
    CHECK_THROWS_WITH_AS(load_tables(path), doctest::Contains("foreign_keys"), ParseError);
}

TEST_CASE("load_examples") {
    std::string path = "/tmp/shadow_examples.json";
    {
        std::ofstream out(path);
        out << R"([{"db_id":"sports","question":"How many teams?","query":"SELECT count(*) FROM team"}])";
    }
    auto gs = toy_schemas();
    auto ex = load_examples(path, gs);
    REQUIRE(ex.size() == 1);
    CHECK(ex[0].question == std::vector<std::string>{"how", "many", "teams", "?"});

    {
        std::ofstream out(path);
        out << R"([])";
    }
    CHECK(load_examples(path, gs).empty());

    {
        std::ofstream out(path);
        out << R"([{"db_id":"nosuch","question":"x","query":"y"}])";
    }
    CHECK_THROWS_WITH_AS(load_examples(path, gs), doctest::Contains("sports"), ParseError);
}

TEST_CASE("tag_linking exact and partial") {
    auto gs = toy_schemas();
    const auto& g = by_id(gs, "sports");
    auto q = tokenize_question("what is the name of each team in every season ?");
    auto link = tag_linking(q, g);

    int name_col = find_node(g, "name", false);
    int team_tab = find_node(g, "team", true);
    int ms_tab = find_node(g, "match_season", true);
    std::int64_t name_pos = 3, team_pos = 6, season_pos = 9;
    CHECK(link.at(name_pos, name_col) == LinkTag::ColumnExactMatch);
    CHECK(link.at(team_pos, team_tab) == LinkTag::TableExactMatch);
    CHECK(link.at(season_pos, ms_tab) == LinkTag::TablePartialMatch);
    CHECK(link.at(0, name_col) == LinkTag::NoMatch);
}

TEST_CASE("tag_linking value index") {
    auto gs = toy_schemas();
    const auto& g = by_id(gs, "sports");
    auto values = load_value_index(data_dir() + "/values/sports", g);
    int year_col = find_node(g, "year", false);
    REQUIRE(values.cells.count(year_col) == 1);

    auto q = tokenize_question("How many games were played in 2007 ?");
    auto link = tag_linking(q, g, &values);

    // brute-force oracle over the index
    bool oracle_hit = false;
    for (const auto& cell : values.cells.at(year_col)) {
        if (cell == std::vector<std::string>{"2007"}) oracle_hit = true;
    }
    REQUIRE(oracle_hit);
    std::int64_t pos_2007 = 6;
    CHECK(q[pos_2007] == "2007");
    CHECK(link.at(pos_2007, year_col) == LinkTag::ColumnValueExactMatch);

    // multi-token value: partial hit on a single token
    int tname_col = find_node(g, "name", false);
    auto q2 = tokenize_question("which team are the dragons ?");
    auto link2 = tag_linking(q2, g, &values);
    CHECK(link2.at(4, tname_col) == LinkTag::ColumnValuePartialMatch);
}

TEST_CASE("tag_linking full-name guarantee and node-reorder consistency") {
    auto gs = toy_schemas();
    const auto& g = by_id(gs, "sports");
    auto q = tokenize_question("show the match season with most wins");
    auto link = tag_linking(q, g);
    int ms = find_node(g, "match_season", true);
    bool any_exact = false;
    for (std::int64_t i = 0; i < link.grid.rows; ++i) {
        if (link.at(i, ms) == LinkTag::TableExactMatch) any_exact = true;
    }
    CHECK(any_exact);

    // renaming db_id or permuting unrelated nodes leaves a node's tags intact
    SchemaGraph g2 = g;
    g2.db_id = "renamed";
    std::swap(g2.columns[2], g2.columns[3]);  // swap two team columns: name <-> rank
    auto link2 = tag_linking(q, g2);
    int ms2 = find_node(g2, "match_season", true);
    for (std::int64_t i = 0; i < link.grid.rows; ++i) {
        CHECK(link.at(i, ms) == link2.at(i, ms2));
    }
}

TEST_CASE("build_relation_matrix basics") {
    auto gs = toy_schemas();
    const auto& g = by_id(gs, "sports");
    auto q = tokenize_question("name");
    auto link = tag_linking(q, g);
    auto R = build_relation_matrix(1, g, link);
    std::int64_t m = g.node_count();
    REQUIRE(R.rows == 1 + m);
    CHECK(R.at(0, 0) == rel::kSelfLoopQuestion);
    int name_col = find_node(g, "name", false);
    CHECK(R.at(0, 1 + name_col) == rel::kLinkBase + static_cast<int>(LinkTag::ColumnExactMatch));
    CHECK(R.at(1 + name_col, 0) == rel::kSchemaToQuestionLinked);

    // two adjacent question tokens get Dist(+1)/Dist(-1)
    auto q2 = tokenize_question("the name");
    auto link2 = tag_linking(q2, g);
    auto R2 = build_relation_matrix(2, g, link2);
    CHECK(R2.at(0, 1) == rel::kDistBase + 3);
    CHECK(R2.at(1, 0) == rel::kDistBase + 1);

    // table <-> owned column mirrored across the diagonal
    int team = find_node(g, "team", true);
    CHECK(R2.at(2 + team, 2 + name_col) == rel::kHasColumn);
    CHECK(R2.at(2 + name_col, 2 + team) == rel::kBelongsTo);
    CHECK(R2.at(2 + team, 2 + team) == rel::kSelfLoopSchema);

    // question<->schema block restricted to linking ids reproduces LinkMatrix
    for (std::int64_t i = 0; i < 2; ++i) {
        for (std::int64_t j = 0; j < m; ++j) {
            CHECK(R2.at(i, 2 + j) == static_cast<int>(link2.at(i, j)));
        }
    }
}

TEST_CASE("relation matrix table fk relation") {
    auto gs = toy_schemas();
    const auto& g = by_id(gs, "sports");
    auto q = tokenize_question("x");
    auto R = build_relation_matrix(1, g, tag_linking(q, g));
    int team = find_node(g, "team", true);
    int ms = find_node(g, "match_season", true);
    CHECK(R.at(1 + ms, 1 + team) == rel::kTableFkForward);
    CHECK(R.at(1 + team, 1 + ms) == rel::kTableFkBackward);

    // all ids within vocabulary
    for (int id : R.ids) {
        CHECK(id >= 0);
        CHECK(id < rel::kVocabSize);
    }
}
