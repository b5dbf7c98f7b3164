#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "shadow/encoder.hpp"

using namespace shadow;
using namespace shadow::testutil;

namespace {

std::vector<std::string> base_vocab() {
    return {"*",    "team",   "match", "season", "name", "rank", "year",
            "wins", "how",    "many",  "did",    "the",  "win",  "in",
            "id",   "student", "c0",   "c1",     "t"};
}

}  // namespace

TEST_CASE("pooled node vector is the mean of its token embeddings") {
    ParamStore store(1);
    EmbeddingTable table(store, "emb", base_vocab(), 8, 4);
    SchemaGraph g;
    g.db_id = "x";
    g.tables.push_back({"match_season", {"match", "season"}});
    g.columns.push_back({"*", {"*"}, -1, "text"});

    Tape t;
    Ctx ctx(t, store);
    auto pooled = t.val(table.pooled_nodes(ctx, g));
    auto toks = t.val(table.lookup(ctx, {"match", "season"}));
    for (std::int64_t j = 0; j < 8; ++j) {
        CHECK(pooled.at(0, j) == doctest::Approx(0.5 * (toks.at(0, j) + toks.at(1, j))).epsilon(1e-12));
    }
    auto star = t.val(table.lookup(ctx, {"*"}));
    for (std::int64_t j = 0; j < 8; ++j) CHECK(pooled.at(1, j) == star.at(0, j));
}

TEST_CASE("out-of-vocabulary tokens hash to stable bucket ids") {
    ParamStore store(2);
    EmbeddingTable table(store, "emb", base_vocab(), 8, 4);
    std::int64_t v = static_cast<std::int64_t>(base_vocab().size());
    std::int64_t id1 = table.token_id("zyzzyva");
    CHECK(id1 >= v);
    CHECK(id1 < v + 4);
    CHECK(table.token_id("zyzzyva") == id1);
    CHECK(table.token_id("team") < v);

    Tape t;
    Ctx ctx(t, store);
    auto x = t.val(table.lookup(ctx, {"zyzzyva", "qwerty"}));
    CHECK(x.rows() == 2);
    for (double val : x.data) CHECK(std::isfinite(val));
}

TEST_CASE("abstract stream sees node type only, semantic stream sees names") {
    ParamStore store(3);
    EncoderConfig cfg;
    cfg.d = 8;
    cfg.heads = 2;
    cfg.basis_count = 2;
    cfg.gpnn_layers = 1;
    cfg.rat_layers = 1;
    Encoder enc(store, cfg, base_vocab());

    SchemaGraph g;
    g.db_id = "two";
    g.tables.push_back({"team", {"team"}});
    g.tables.push_back({"student", {"student"}});
    g.columns.push_back({"*", {"*"}, -1, "text"});

    Tape t;
    Ctx ctx(t, store);
    StreamState st = enc.embed(ctx, {"how", "many"}, g);
    auto a0 = t.val(st.abstract_schema);
    auto s0 = t.val(st.semantic_schema);
    bool semantic_differs = false;
    for (std::int64_t j = 0; j < 8; ++j) {
        CHECK(a0.at(0, j) == a0.at(1, j));  // same type row
        semantic_differs = semantic_differs || s0.at(0, j) != s0.at(1, j);
    }
    CHECK(semantic_differs);
    CHECK(t.val(st.question).rows() == 2);
}

TEST_CASE("empty stacks reduce encode to the embedding concat") {
    ParamStore store(4);
    EncoderConfig cfg;
    cfg.d = 8;
    cfg.heads = 2;
    cfg.gpnn_layers = 0;
    cfg.rat_layers = 0;
    Encoder enc(store, cfg, base_vocab());

    SchemaGraph g = tiny_graph(1);
    std::vector<std::string> q{"how", "many"};
    LinkMatrix link = tag_linking(q, g);
    RelationMatrix rel = build_relation_matrix(2, g, link);

    Tape t;
    Ctx ctx(t, store);
    auto out = enc.encode(ctx, q, g, link, rel);
    StreamState st = enc.embed(ctx, q, g);
    auto f = t.val(out.f);
    auto q0 = t.val(st.question);
    auto a0 = t.val(st.abstract_schema);
    REQUIRE(f.rows() == 5);
    for (std::int64_t j = 0; j < 8; ++j) {
        CHECK(f.at(0, j) == q0.at(0, j));
        CHECK(f.at(2, j) == a0.at(0, j));
    }
    CHECK(t.val(out.f_q).rows() == 2);
    CHECK(t.val(out.f_schema).rows() == 3);
}

TEST_CASE("encode output shape and determinism on the toy schema") {
    auto gs = load_tables(data_dir() + "/toy_tables.json");
    const SchemaGraph& g = by_id(gs, "sports");
    std::vector<std::string> q{"how", "many", "wins", "did", "the", "team", "win"};
    LinkMatrix link = tag_linking(q, g);
    RelationMatrix rel = build_relation_matrix(static_cast<std::int64_t>(q.size()), g, link);

    ParamStore store(5);
    EncoderConfig cfg;
    cfg.d = 32;
    cfg.heads = 4;
    cfg.basis_count = 4;
    cfg.gpnn_layers = 2;
    cfg.rat_layers = 2;
    Encoder enc(store, cfg, base_vocab());

    auto run = [&]() {
        Tape t;
        Ctx ctx(t, store);
        return t.val(enc.encode(ctx, q, g, link, rel).f);
    };
    Tensor f1 = run();
    Tensor f2 = run();
    REQUIRE(f1.rows() == static_cast<std::int64_t>(q.size()) + g.node_count());
    REQUIRE(f1.cols() == 32);
    for (double v : f1.data) CHECK(std::isfinite(v));
    CHECK(f1.data == f2.data);  // eval mode is deterministic
}

TEST_CASE("encode rejects inconsistent link and relation shapes") {
    ParamStore store(6);
    EncoderConfig cfg;
    cfg.d = 8;
    cfg.heads = 2;
    cfg.gpnn_layers = 1;
    cfg.rat_layers = 0;
    cfg.basis_count = 2;
    Encoder enc(store, cfg, base_vocab());
    SchemaGraph g = tiny_graph(1);
    std::vector<std::string> q{"how", "many"};
    LinkMatrix link = tag_linking(q, g);
    RelationMatrix rel = build_relation_matrix(2, g, link);

    Tape t;
    Ctx ctx(t, store);
    LinkMatrix bad_link;
    bad_link.grid = IdGrid(3, 3, static_cast<int>(LinkTag::NoMatch));
    CHECK_THROWS_AS(enc.encode(ctx, q, g, bad_link, rel), DimensionError);
    IdGrid bad_rel(4, 4, rel::kNoEdgeSameType);
    CHECK_THROWS_AS(enc.encode(ctx, q, g, link, bad_rel), DimensionError);
}

TEST_CASE("encoder schema permutation equivariance") {
    auto gs = load_tables(data_dir() + "/toy_tables.json");
    const SchemaGraph& g = by_id(gs, "sports");
    std::vector<int> table_perm{1, 0};
    std::vector<int> col_perm{0, 3, 1, 2, 5, 4, 7, 6};
    SchemaGraph g2 = permute_schema(g, table_perm, col_perm);
    auto nperm = node_permutation(g, table_perm, col_perm);

    std::vector<std::string> q{"how", "many", "wins", "in", "season"};
    std::int64_t n = static_cast<std::int64_t>(q.size());
    LinkMatrix l1 = tag_linking(q, g);
    LinkMatrix l2 = tag_linking(q, g2);
    RelationMatrix r1 = build_relation_matrix(n, g, l1);
    RelationMatrix r2 = build_relation_matrix(n, g2, l2);

    ParamStore store(7);
    EncoderConfig cfg;
    cfg.d = 16;
    cfg.heads = 2;
    cfg.basis_count = 2;
    cfg.gpnn_layers = 2;
    cfg.rat_layers = 2;
    Encoder enc(store, cfg, base_vocab());

    Tape t;
    Ctx ctx(t, store);
    auto o1 = enc.encode(ctx, q, g, l1, r1);
    auto o2 = enc.encode(ctx, q, g2, l2, r2);
    Tensor fq1 = t.val(o1.f_q), fq2 = t.val(o2.f_q);
    for (std::size_t i = 0; i < fq1.data.size(); ++i) {
        CHECK(std::abs(fq1.data[i] - fq2.data[i]) <= 1e-9);
    }
    Tensor fs1 = permute_rows(t.val(o1.f_schema), nperm);
    Tensor fs2 = t.val(o2.f_schema);
    for (std::size_t i = 0; i < fs1.data.size(); ++i) {
        CHECK(std::abs(fs1.data[i] - fs2.data[i]) <= 1e-9);
    }
}
