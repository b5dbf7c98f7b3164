#include "shadow/encoder.hpp"

#include <cstdint>

namespace shadow {

namespace {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace

EmbeddingTable::EmbeddingTable(ParamStore& store, std::string prefix,
                               std::vector<std::string> vocab, std::int64_t d, int oov_buckets)
    : prefix_(std::move(prefix)), vocab_(std::move(vocab)), oov_buckets_(oov_buckets) {
    for (std::size_t i = 0; i < vocab_.size(); ++i) {
        index_.emplace(vocab_[i], static_cast<std::int64_t>(i));
    }
    store.create(prefix_ + ".word", static_cast<std::int64_t>(vocab_.size()) + oov_buckets_, d);
}

std::int64_t EmbeddingTable::token_id(const std::string& token) const {
    auto it = index_.find(token);
    if (it != index_.end()) return it->second;
    return static_cast<std::int64_t>(vocab_.size()) +
           static_cast<std::int64_t>(fnv1a(token) % static_cast<std::uint64_t>(oov_buckets_));
}

Var EmbeddingTable::lookup(Ctx& ctx, const std::vector<std::string>& tokens) const {
    if (tokens.empty()) throw DimensionError("embedding: empty token sequence");
    std::vector<std::int64_t> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(token_id(t));
    return ctx.tape.embedding_lookup(ctx.p(prefix_ + ".word"), ids);
}

Var EmbeddingTable::pooled_nodes(Ctx& ctx, const SchemaGraph& graph) const {
    std::vector<std::int64_t> ids;
    std::vector<std::pair<std::int64_t, std::int64_t>> spans;  // per node: first, count
    for (int v = 0; v < graph.node_count(); ++v) {
        const auto& toks = graph.node_tokens(v);
        if (toks.empty()) throw DimensionError("embedding: node with no name tokens");
        spans.emplace_back(static_cast<std::int64_t>(ids.size()),
                           static_cast<std::int64_t>(toks.size()));
        for (const auto& t : toks) ids.push_back(token_id(t));
    }
    Var flat = ctx.tape.embedding_lookup(ctx.p(prefix_ + ".word"), ids);
    Tensor pool(graph.node_count(), static_cast<std::int64_t>(ids.size()));
    for (std::size_t v = 0; v < spans.size(); ++v) {
        auto [first, count] = spans[v];
        for (std::int64_t k = 0; k < count; ++k) {
            pool.at(static_cast<std::int64_t>(v), first + k) = 1.0 / count;
        }
    }
    return ctx.tape.matmul(ctx.tape.constant(std::move(pool)), flat);
}

Encoder::Encoder(ParamStore& store, const EncoderConfig& cfg, std::vector<std::string> vocab)
    : cfg_(cfg),
      words_(store, "enc.words", std::move(vocab), cfg.d, cfg.oov_buckets),
      prior_(store, "enc.prior") {
    store.create("enc.type", 2, cfg.d);  // row 0 tables, row 1 columns
    for (int i = 0; i < cfg.gpnn_layers; ++i) {
        projections_.emplace_back(store, "enc.proj" + std::to_string(i), cfg.d, cfg.heads,
                                  cfg.basis_count);
    }
    for (int i = 0; i < cfg.rat_layers; ++i) {
        rat_.emplace_back(store, "enc.rat" + std::to_string(i), cfg.d, cfg.heads,
                          /*relational=*/true);
    }
}

StreamState Encoder::embed(Ctx& ctx, const std::vector<std::string>& question,
                           const SchemaGraph& graph) const {
    std::vector<std::int64_t> type_ids;
    for (int v = 0; v < graph.node_count(); ++v) {
        type_ids.push_back(graph.is_table_node(v) ? 0 : 1);
    }
    return StreamState{words_.lookup(ctx, question), words_.pooled_nodes(ctx, graph),
                       ctx.tape.embedding_lookup(ctx.p("enc.type"), type_ids)};
}

EncoderOutput Encoder::encode(Ctx& ctx, const std::vector<std::string>& question,
                              const SchemaGraph& graph, const LinkMatrix& link,
                              const RelationMatrix& relations) const {
    std::int64_t n = static_cast<std::int64_t>(question.size());
    std::int64_t m = graph.node_count();
    if (link.grid.rows != n || link.grid.cols != m) {
        throw DimensionError("encode: link matrix is " + std::to_string(link.grid.rows) + "x" +
                             std::to_string(link.grid.cols) + " for n=" + std::to_string(n) +
                             " m=" + std::to_string(m));
    }
    if (relations.rows != n + m || relations.cols != n + m) {
        throw DimensionError("encode: relation matrix is " + std::to_string(relations.rows) +
                             "x" + std::to_string(relations.cols) + ", expected " +
                             std::to_string(n + m) + " square");
    }

    StreamState st = embed(ctx, question, graph);
    if (!projections_.empty()) {
        Var prior = prior_.forward(ctx, link);
        for (const auto& layer : projections_) {
            st = layer.forward(ctx, st, graph, prior);
        }
    }

    Var f = ctx.tape.concat_rows(st.question, st.abstract_schema);
    for (const auto& layer : rat_) {
        f = layer.forward(ctx, f, &relations);
    }
    return EncoderOutput{f, ctx.tape.slice_rows(f, 0, n), ctx.tape.slice_rows(f, n, m),
                         st.question};
}

}  // namespace shadow
