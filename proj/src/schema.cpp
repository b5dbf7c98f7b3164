#include "shadow/schema.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace shadow {

namespace {

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

std::string lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream iss(s);
    std::string tok;
    while (iss >> tok) out.push_back(tok);
    return out;
}

// Minimal CSV: comma-separated, double quotes with "" escapes.
std::vector<std::string> parse_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

int link_tag_rank(LinkTag t) {
    switch (t) {
        case LinkTag::TableExactMatch:
        case LinkTag::ColumnExactMatch: return 0;
        case LinkTag::TablePartialMatch:
        case LinkTag::ColumnPartialMatch: return 1;
        case LinkTag::ColumnValueExactMatch: return 2;
        case LinkTag::ColumnValuePartialMatch: return 3;
        case LinkTag::NoMatch: return 4;
    }
    return 4;
}

std::vector<std::string> normalize_name(const std::string& name) {
    std::string s = lower(name);
    for (char& c : s) {
        if (c == '_') c = ' ';
    }
    return split_ws(s);
}

std::vector<std::string> tokenize_question(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            out.push_back(lower(cur));
            cur.clear();
        }
    };
    for (char c : text) {
        if (is_word_char(c)) {
            cur += c;
        } else if (std::isspace(static_cast<unsigned char>(c))) {
            flush();
        } else {
            flush();
            out.push_back(std::string(1, c));
        }
    }
    flush();
    return out;
}

std::optional<std::pair<int, int>> SchemaGraph::find_fk(int table_a, int table_b) const {
    for (const auto& e : edges) {
        if (e.label != EdgeLabel::ForeignKeyForward) continue;
        int src_tab = columns[node_to_column(e.src)].table;
        int dst_tab = columns[node_to_column(e.dst)].table;
        if (src_tab == table_a && dst_tab == table_b) return std::make_pair(e.src, e.dst);
        if (src_tab == table_b && dst_tab == table_a) return std::make_pair(e.dst, e.src);
    }
    return std::nullopt;
}

std::vector<SchemaGraph> load_tables(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open tables file: " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("tables file " + path + ": " + e.what());
    }
    if (!doc.is_array()) throw ParseError("tables file " + path + ": expected a JSON array");

    std::vector<SchemaGraph> out;
    for (const auto& db : doc) {
        std::string db_id = db.value("db_id", std::string());
        auto require = [&](const char* field) -> const nlohmann::json& {
            if (!db.contains(field)) {
                throw ParseError("database '" + db_id + "': missing field " + field);
            }
            return db.at(field);
        };
        SchemaGraph g;
        g.db_id = db_id;
        if (g.db_id.empty()) throw ParseError("database entry without db_id in " + path);

        for (const auto& t : require("table_names_original")) {
            SchemaGraph::Table tab;
            tab.original_name = t.get<std::string>();
            tab.tokens = normalize_name(tab.original_name);
            g.tables.push_back(std::move(tab));
        }
        const auto& col_names = require("column_names_original");
        const auto& col_types = require("column_types");
        for (std::size_t i = 0; i < col_names.size(); ++i) {
            const auto& c = col_names[i];
            SchemaGraph::Column col;
            col.table = c.at(0).get<int>();
            col.original_name = c.at(1).get<std::string>();
            col.tokens = normalize_name(col.original_name);
            col.value_type = i < col_types.size() ? col_types[i].get<std::string>() : "text";
            if (col.table >= static_cast<int>(g.tables.size()) || col.table < -1) {
                throw ParseError("database '" + db_id + "': column '" + col.original_name +
                                 "' owner index " + std::to_string(col.table) + " out of range");
            }
            g.columns.push_back(std::move(col));
        }

        int tbase = static_cast<int>(g.tables.size());
        for (std::size_t ci = 0; ci < g.columns.size(); ++ci) {
            int tab = g.columns[ci].table;
            if (tab < 0) continue;  // `*` has no owner
            int cnode = tbase + static_cast<int>(ci);
            g.edges.push_back({cnode, EdgeLabel::BelongsTo, tab});
            g.edges.push_back({tab, EdgeLabel::HasColumn, cnode});
        }
        for (const auto& pk : require("primary_keys")) {
            int ci = pk.get<int>();
            if (ci < 0 || ci >= static_cast<int>(g.columns.size())) {
                throw ParseError("database '" + db_id + "': primary key index " +
                                 std::to_string(ci) + " out of range");
            }
            int tab = g.columns[ci].table;
            if (tab < 0) {
                throw ParseError("database '" + db_id + "': primary key on ownerless column");
            }
            g.edges.push_back({tab, EdgeLabel::PrimaryKey, tbase + ci});
            g.edges.push_back({tbase + ci, EdgeLabel::PrimaryKeyOf, tab});
        }
        for (const auto& fk : require("foreign_keys")) {
            int a = fk.at(0).get<int>();
            int b = fk.at(1).get<int>();
            if (a < 0 || a >= static_cast<int>(g.columns.size()) || b < 0 ||
                b >= static_cast<int>(g.columns.size())) {
                throw ParseError("database '" + db_id + "': dangling foreign-key index [" +
                                 std::to_string(a) + "," + std::to_string(b) + "]");
            }
            g.edges.push_back({tbase + a, EdgeLabel::ForeignKeyForward, tbase + b});
            g.edges.push_back({tbase + b, EdgeLabel::ForeignKeyBackward, tbase + a});
        }
        out.push_back(std::move(g));
    }
    return out;
}

std::vector<TrainExample> load_examples(const std::string& path,
                                        const std::vector<SchemaGraph>& schemas) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open examples file: " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("examples file " + path + ": " + e.what());
    }
    if (!doc.is_array()) throw ParseError("examples file " + path + ": expected a JSON array");

    std::set<std::string> known;
    for (const auto& s : schemas) known.insert(s.db_id);

    std::vector<TrainExample> out;
    for (const auto& ex : doc) {
        TrainExample e;
        e.db_id = ex.at("db_id").get<std::string>();
        if (!known.count(e.db_id)) {
            std::string ids;
            for (const auto& k : known) ids += (ids.empty() ? "" : ", ") + k;
            throw ParseError("examples file " + path + ": unknown db_id '" + e.db_id +
                             "', known: [" + ids + "]");
        }
        e.question = tokenize_question(ex.at("question").get<std::string>());
        e.gold_sql = ex.at("query").get<std::string>();
        out.push_back(std::move(e));
    }
    return out;
}

ValueIndex load_value_index(const std::string& dir, const SchemaGraph& graph) {
    ValueIndex idx;
    for (std::size_t ti = 0; ti < graph.tables.size(); ++ti) {
        std::filesystem::path file =
            std::filesystem::path(dir) / (graph.tables[ti].original_name + ".csv");
        std::ifstream in(file);
        if (!in) continue;  // value files are optional per table
        std::string line;
        if (!std::getline(in, line)) continue;
        auto header = parse_csv_line(line);
        // header column -> column node id within this table
        std::vector<int> node_of(header.size(), -1);
        for (std::size_t h = 0; h < header.size(); ++h) {
            auto want = normalize_name(header[h]);
            for (std::size_t ci = 0; ci < graph.columns.size(); ++ci) {
                if (graph.columns[ci].table == static_cast<int>(ti) &&
                    graph.columns[ci].tokens == want) {
                    node_of[h] = graph.column_node(static_cast<int>(ci));
                    break;
                }
            }
        }
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            auto cells = parse_csv_line(line);
            for (std::size_t h = 0; h < cells.size() && h < node_of.size(); ++h) {
                if (node_of[h] < 0) continue;
                auto toks = tokenize_question(cells[h]);
                if (!toks.empty()) idx.cells[node_of[h]].push_back(std::move(toks));
            }
        }
    }
    return idx;
}

LinkMatrix tag_linking(const std::vector<std::string>& question, const SchemaGraph& graph,
                       const ValueIndex* values, int max_ngram) {
    if (question.empty()) throw ParseError("tag_linking: empty question");
    std::int64_t n = static_cast<std::int64_t>(question.size());
    std::int64_t m = graph.node_count();
    LinkMatrix link;
    link.grid = IdGrid(n, m, static_cast<int>(LinkTag::NoMatch));

    auto stamp = [&](std::int64_t i0, std::int64_t len, std::int64_t j, LinkTag tag) {
        for (std::int64_t i = i0; i < i0 + len; ++i) {
            LinkTag cur = link.at(i, j);
            if (link_tag_rank(tag) < link_tag_rank(cur)) {
                link.grid.at(i, j) = static_cast<int>(tag);
            }
        }
    };
    auto subset_of = [](const std::vector<std::string>& gram,
                        const std::vector<std::string>& name) {
        for (const auto& g : gram) {
            if (std::find(name.begin(), name.end(), g) == name.end()) return false;
        }
        return true;
    };

    for (int len = std::min<int>(max_ngram, static_cast<int>(n)); len >= 1; --len) {
        for (std::int64_t i = 0; i + len <= n; ++i) {
            std::vector<std::string> gram(question.begin() + i, question.begin() + i + len);
            for (std::int64_t j = 0; j < m; ++j) {
                bool table = graph.is_table_node(static_cast<int>(j));
                const auto& name = graph.node_tokens(static_cast<int>(j));
                if (gram == name) {
                    stamp(i, len, j,
                          table ? LinkTag::TableExactMatch : LinkTag::ColumnExactMatch);
                } else if (gram.size() < name.size() && subset_of(gram, name)) {
                    stamp(i, len, j,
                          table ? LinkTag::TablePartialMatch : LinkTag::ColumnPartialMatch);
                }
            }
            if (values) {
                for (const auto& [node, cells] : values->cells) {
                    for (const auto& cell : cells) {
                        if (gram == cell) {
                            stamp(i, len, node, LinkTag::ColumnValueExactMatch);
                        } else if (gram.size() < cell.size() && subset_of(gram, cell)) {
                            stamp(i, len, node, LinkTag::ColumnValuePartialMatch);
                        }
                    }
                }
            }
        }
    }
    return link;
}

RelationMatrix build_relation_matrix(std::int64_t n, const SchemaGraph& graph,
                                     const LinkMatrix& link) {
    std::int64_t m = graph.node_count();
    if (link.grid.rows != n || link.grid.cols != m) {
        throw DimensionError("build_relation_matrix: link matrix " +
                             std::to_string(link.grid.rows) + "x" +
                             std::to_string(link.grid.cols) + " vs question " +
                             std::to_string(n) + " and schema " + std::to_string(m));
    }
    RelationMatrix R(n + m, n + m);

    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < n; ++j) {
            std::int64_t d = std::clamp<std::int64_t>(j - i, -2, 2);
            R.at(i, j) = rel::kDistBase + static_cast<int>(d + 2);
        }
        R.at(i, i) = rel::kSelfLoopQuestion;
    }
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < m; ++j) {
            int tag = link.grid.at(i, j);
            R.at(i, n + j) = rel::kLinkBase + tag;
            R.at(n + j, i) = tag == static_cast<int>(LinkTag::NoMatch)
                                 ? rel::kSchemaToQuestionNoLink
                                 : rel::kSchemaToQuestionLinked;
        }
    }
    for (std::int64_t a = 0; a < m; ++a) {
        for (std::int64_t b = 0; b < m; ++b) {
            bool ta = graph.is_table_node(static_cast<int>(a));
            bool tb = graph.is_table_node(static_cast<int>(b));
            R.at(n + a, n + b) = ta == tb ? rel::kNoEdgeSameType : rel::kNoEdgeCrossType;
        }
        R.at(n + a, n + a) = rel::kSelfLoopSchema;
    }
    // table<->table foreign-key relations derived from column FKs
    for (const auto& e : graph.edges) {
        if (e.label != EdgeLabel::ForeignKeyForward) continue;
        int ta = graph.columns[graph.node_to_column(e.src)].table;
        int tb = graph.columns[graph.node_to_column(e.dst)].table;
        if (ta >= 0 && tb >= 0 && ta != tb) {
            R.at(n + ta, n + tb) = rel::kTableFkForward;
            R.at(n + tb, n + ta) = rel::kTableFkBackward;
        }
    }
    for (const auto& e : graph.edges) {
        int id;
        switch (e.label) {
            case EdgeLabel::BelongsTo: id = rel::kBelongsTo; break;
            case EdgeLabel::HasColumn: id = rel::kHasColumn; break;
            case EdgeLabel::ForeignKeyForward: id = rel::kFkForward; break;
            case EdgeLabel::ForeignKeyBackward: id = rel::kFkBackward; break;
            case EdgeLabel::PrimaryKey: id = rel::kPrimaryKey; break;
            case EdgeLabel::PrimaryKeyOf: id = rel::kPrimaryKeyOf; break;
            default: continue;
        }
        R.at(n + e.src, n + e.dst) = id;
    }
    return R;
}

}  // namespace shadow
