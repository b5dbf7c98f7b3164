#pragma once

#include <cstdlib>
#include <random>
#include <string>
#include <vector>

#include "shadow/schema.hpp"
#include "shadow/tensor.hpp"

namespace shadow::testutil {

inline std::string data_dir() {
    const char* d = std::getenv("SHADOW_DATA_DIR");
    return d ? d : "data";
}

inline Tensor random_tensor(std::int64_t r, std::int64_t c, std::mt19937_64& rng,
                            double lo = -2.0, double hi = 2.0) {
    std::uniform_real_distribution<double> uni(lo, hi);
    Tensor t(r, c);
    for (double& v : t.data) v = uni(rng);
    return t;
}

inline const SchemaGraph& by_id(const std::vector<SchemaGraph>& gs, const std::string& id) {
    for (const auto& g : gs) {
        if (g.db_id == id) return g;
    }
    throw std::runtime_error("missing db " + id);
}

// Tiny hand-built schema: one table, the global `*`, `k` owned columns.
inline SchemaGraph tiny_graph(int k = 1) {
    SchemaGraph g;
    g.db_id = "tiny";
    g.tables.push_back({"t", {"t"}});
    g.columns.push_back({"*", {"*"}, -1, "text"});
    for (int i = 0; i < k; ++i) {
        std::string name = "c" + std::to_string(i);
        g.columns.push_back({name, {name}, 0, "text"});
        int cnode = g.column_node(1 + i);
        g.edges.push_back({cnode, EdgeLabel::BelongsTo, 0});
        g.edges.push_back({0, EdgeLabel::HasColumn, cnode});
    }
    return g;
}

// Relabels schema nodes: tables permuted among tables, columns among
// columns (node ids stay tables-first). table_perm[i] = new index of old
// table i; likewise col_perm.
inline SchemaGraph permute_schema(const SchemaGraph& g, const std::vector<int>& table_perm,
                                  const std::vector<int>& col_perm) {
    SchemaGraph out;
    out.db_id = g.db_id;
    out.tables.resize(g.tables.size());
    out.columns.resize(g.columns.size());
    for (std::size_t i = 0; i < g.tables.size(); ++i) {
        out.tables[static_cast<std::size_t>(table_perm[i])] = g.tables[i];
    }
    for (std::size_t i = 0; i < g.columns.size(); ++i) {
        auto col = g.columns[i];
        if (col.table >= 0) col.table = table_perm[static_cast<std::size_t>(col.table)];
        out.columns[static_cast<std::size_t>(col_perm[i])] = col;
    }
    auto map_node = [&](int v) {
        int T = static_cast<int>(g.tables.size());
        return v < T ? table_perm[static_cast<std::size_t>(v)]
                     : T + col_perm[static_cast<std::size_t>(v - T)];
    };
    for (auto e : g.edges) {
        e.src = map_node(e.src);
        e.dst = map_node(e.dst);
        out.edges.push_back(e);
    }
    return out;
}

// node_perm[old] = new, combining a table and a column permutation.
inline std::vector<int> node_permutation(const SchemaGraph& g, const std::vector<int>& table_perm,
                                         const std::vector<int>& col_perm) {
    std::vector<int> p(static_cast<std::size_t>(g.node_count()));
    int T = static_cast<int>(g.tables.size());
    for (int v = 0; v < g.node_count(); ++v) {
        p[static_cast<std::size_t>(v)] =
            v < T ? table_perm[static_cast<std::size_t>(v)]
                  : T + col_perm[static_cast<std::size_t>(v - T)];
    }
    return p;
}

inline Tensor permute_rows(const Tensor& x, const std::vector<int>& perm) {
    Tensor out(x.rows(), x.cols());
    for (std::int64_t i = 0; i < x.rows(); ++i) {
        for (std::int64_t j = 0; j < x.cols(); ++j) {
            out.at(perm[static_cast<std::size_t>(i)], j) = x.at(i, j);
        }
    }
    return out;
}

inline IdGrid permute_grid_cols(const IdGrid& g, const std::vector<int>& perm) {
    IdGrid out(g.rows, g.cols);
    for (std::int64_t i = 0; i < g.rows; ++i) {
        for (std::int64_t j = 0; j < g.cols; ++j) {
            out.at(i, perm[static_cast<std::size_t>(j)]) = g.at(i, j);
        }
    }
    return out;
}

}  // namespace shadow::testutil
