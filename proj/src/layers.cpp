#include "shadow/layers.hpp"

#include <cmath>

namespace shadow {

namespace {

int rgcn_relation_index(EdgeLabel l) {
    switch (l) {
        case EdgeLabel::BelongsTo: return 0;
        case EdgeLabel::HasColumn: return 1;
        case EdgeLabel::ForeignKeyForward: return 2;
        case EdgeLabel::ForeignKeyBackward: return 3;
        case EdgeLabel::PrimaryKey: return 4;
        case EdgeLabel::PrimaryKeyOf: return 5;
        case EdgeLabel::SelfLoop: break;
    }
    throw DimensionError("rgcn: edge references an unknown relation id " +
                         std::to_string(static_cast<int>(l)));
}

void record_attention(Ctx& ctx, const Tensor& alpha) {
    if (ctx.attention_log) ctx.attention_log->push_back(alpha);
}

}  // namespace

Linear::Linear(ParamStore& store, std::string pfx, std::int64_t in, std::int64_t out,
               bool zero_init)
    : prefix(std::move(pfx)) {
    if (zero_init) {
        store.create_zero(prefix + ".w", in, out);
        store.create_zero(prefix + ".b", 1, out);
    } else {
        store.create(prefix + ".w", in, out);
        store.create_zero(prefix + ".b", 1, out);
    }
}

Var Linear::forward(Ctx& ctx, Var x) const {
    return ctx.tape.add_rowvec(ctx.tape.matmul(x, ctx.p(prefix + ".w")), ctx.p(prefix + ".b"));
}

RgcnLayer::RgcnLayer(ParamStore& store, std::string prefix, std::int64_t d, int basis_count)
    : prefix_(std::move(prefix)), d_(d), basis_(basis_count) {
    for (int b = 0; b < basis_; ++b) {
        store.create(prefix_ + ".basis." + std::to_string(b), d, d);
    }
    store.create(prefix_ + ".coef", kNumRgcnRelations, basis_);
    store.create(prefix_ + ".self", d, d);
}

Var RgcnLayer::forward(Ctx& ctx, Var h, const SchemaGraph& graph) const {
    Tape& t = ctx.tape;
    std::int64_t m = t.val(h).rows();
    if (m != graph.node_count()) {
        throw DimensionError("rgcn: " + std::to_string(m) + " states vs " +
                             std::to_string(graph.node_count()) + " graph nodes");
    }

    // per-relation normalized adjacency: A[dst][src] = 1/|incoming(dst, r)|
    std::vector<Tensor> adj(kNumRgcnRelations);
    std::vector<std::vector<int>> in_degree(kNumRgcnRelations,
                                            std::vector<int>(static_cast<std::size_t>(m), 0));
    for (const auto& e : graph.edges) {
        ++in_degree[static_cast<std::size_t>(rgcn_relation_index(e.label))]
                   [static_cast<std::size_t>(e.dst)];
    }
    for (int r = 0; r < kNumRgcnRelations; ++r) adj[r] = Tensor(m, m);
    for (const auto& e : graph.edges) {
        int r = rgcn_relation_index(e.label);
        adj[static_cast<std::size_t>(r)].at(e.dst, e.src) =
            1.0 / in_degree[static_cast<std::size_t>(r)][static_cast<std::size_t>(e.dst)];
    }

    Var coef = ctx.p(prefix_ + ".coef");
    Var agg;
    for (int r = 0; r < kNumRgcnRelations; ++r) {
        bool any = false;
        for (int deg : in_degree[static_cast<std::size_t>(r)]) any = any || deg > 0;
        if (!any) continue;
        Var w_r;
        for (int b = 0; b < basis_; ++b) {
            Var term = t.scale_var(ctx.p(prefix_ + ".basis." + std::to_string(b)),
                                   t.pick(coef, r, b));
            w_r = w_r.valid() ? t.add(w_r, term) : term;
        }
        Var msg = t.matmul(t.constant(adj[static_cast<std::size_t>(r)]), t.matmul(h, w_r));
        agg = agg.valid() ? t.add(agg, msg) : msg;
    }

    Var self = t.matmul(h, ctx.p(prefix_ + ".self"));
    return t.relu(agg.valid() ? t.add(agg, self) : self);
}

AttentionLayer::AttentionLayer(ParamStore& store, std::string prefix, std::int64_t d, int heads,
                               bool relational, int relation_vocab)
    : prefix_(std::move(prefix)),
      d_(d),
      heads_(heads),
      relational_(relational),
      relation_vocab_(relation_vocab) {
    if (d % heads != 0) {
        throw DimensionError("attention: width " + std::to_string(d) +
                             " not divisible by head count " + std::to_string(heads));
    }
    store.create(prefix_ + ".wq", d, d);
    store.create(prefix_ + ".wk", d, d);
    store.create(prefix_ + ".wv", d, d);
    std::int64_t dh = d / heads;
    if (relational_) {
        store.create(prefix_ + ".rk", relation_vocab, dh);
        store.create(prefix_ + ".rv", relation_vocab, dh);
    }
    for (const char* ln : {".ln1", ".ln2"}) {
        std::string gain = prefix_ + ln + ".g";
        if (!store.has(gain)) {
            store.create_zero(gain, 1, d).data.assign(static_cast<std::size_t>(d), 1.0);
        } else {
            store.create_zero(gain, 1, d);  // shape check on reload
        }
        store.create_zero(prefix_ + ln + ".b", 1, d);
    }
    store.create(prefix_ + ".fc1.w", d, d);
    store.create_zero(prefix_ + ".fc1.b", 1, d);
    store.create(prefix_ + ".fc2.w", d, d);
    store.create_zero(prefix_ + ".fc2.b", 1, d);
}

Var AttentionLayer::forward(Ctx& ctx, Var x, const IdGrid* relations) const {
    Tape& t = ctx.tape;
    if (relations && !relational_) {
        throw DimensionError("attention layer '" + prefix_ + "' has no relation tables");
    }
    if (relations) {
        std::int64_t L = t.val(x).rows();
        if (relations->rows != L || relations->cols != L) {
            throw DimensionError("attention: relation grid " + std::to_string(relations->rows) +
                                 "x" + std::to_string(relations->cols) + " vs sequence length " +
                                 std::to_string(L));
        }
        for (int id : relations->ids) {
            if (id < 0 || id >= relation_vocab_) {
                throw DimensionError("attention: relation id " + std::to_string(id) +
                                     " outside vocabulary of size " +
                                     std::to_string(relation_vocab_));
            }
        }
    }

    std::int64_t dh = d_ / heads_;
    double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    Var xq = t.matmul(x, ctx.p(prefix_ + ".wq"));
    Var xk = t.matmul(x, ctx.p(prefix_ + ".wk"));
    Var xv = t.matmul(x, ctx.p(prefix_ + ".wv"));

    Var z;
    for (int h = 0; h < heads_; ++h) {
        Var q = t.slice_cols(xq, h * dh, dh);
        Var k = t.slice_cols(xk, h * dh, dh);
        Var v = t.slice_cols(xv, h * dh, dh);
        Var e = t.matmul(q, t.transpose(k));
        if (relations) {
            e = t.add(e, t.rat_bias_scores(q, ctx.p(prefix_ + ".rk"), *relations));
        }
        e = t.scale(e, inv_sqrt);
        Var alpha = t.softmax_rows(e);
        record_attention(ctx, t.val(alpha));
        alpha = ctx.drop(alpha);
        Var zh = t.matmul(alpha, v);
        if (relations) {
            zh = t.add(zh, t.rat_bias_values(alpha, ctx.p(prefix_ + ".rv"), *relations));
        }
        z = z.valid() ? t.concat_cols(z, zh) : zh;
    }

    Var ybar = t.layer_norm(t.add(x, z), ctx.p(prefix_ + ".ln1.g"), ctx.p(prefix_ + ".ln1.b"));
    Var ff = t.add_rowvec(t.matmul(ybar, ctx.p(prefix_ + ".fc1.w")), ctx.p(prefix_ + ".fc1.b"));
    ff = t.relu(ff);
    ff = t.add_rowvec(t.matmul(ff, ctx.p(prefix_ + ".fc2.w")), ctx.p(prefix_ + ".fc2.b"));
    ff = ctx.drop(ff);
    return t.layer_norm(t.add(ybar, ff), ctx.p(prefix_ + ".ln2.g"), ctx.p(prefix_ + ".ln2.b"));
}

LinkingPrior::LinkingPrior(ParamStore& store, std::string prefix, std::int64_t emb_dim)
    : prefix_(std::move(prefix)) {
    store.create(prefix_ + ".emb", kNumLinkTags, emb_dim);
    store.create(prefix_ + ".lin.w", emb_dim, 1);
    store.create_zero(prefix_ + ".lin.b", 1, 1);
}

Var LinkingPrior::forward(Ctx& ctx, const LinkMatrix& link) const {
    Tape& t = ctx.tape;
    std::vector<std::int64_t> tags(link.grid.ids.begin(), link.grid.ids.end());
    Var rows = t.embedding_lookup(ctx.p(prefix_ + ".emb"), tags);
    Var scores = t.add_rowvec(t.matmul(rows, ctx.p(prefix_ + ".lin.w")), ctx.p(prefix_ + ".lin.b"));
    return t.reshape(scores, link.grid.rows, link.grid.cols);
}

ProjectionLayer::ProjectionLayer(ParamStore& store, std::string prefix, std::int64_t d,
                                 int heads, int basis_count, bool scaled_attention)
    : prefix_(std::move(prefix)),
      d_(d),
      scaled_(scaled_attention),
      gate_question_(store, prefix_ + ".gate_q", d, d, /*zero_init=*/true),
      gate_semantic_(store, prefix_ + ".gate_s", d, d, /*zero_init=*/true),
      gate_abstract_(store, prefix_ + ".gate_a", d, d, /*zero_init=*/true),
      rgcn_abstract_(store, prefix_ + ".rgcn_a", d, basis_count),
      rgcn_semantic_(store, prefix_ + ".rgcn_s", d, basis_count),
      question_encoder_(store, prefix_ + ".tf_q", d, heads, /*relational=*/false) {
    store.create(prefix_ + ".wq", d, d);
    store.create(prefix_ + ".wk", d, d);
    store.create(prefix_ + ".wv_q", d, d);
    store.create(prefix_ + ".wv_s", d, d);
    store.create(prefix_ + ".wv_a", d, d);
}

StreamState ProjectionLayer::forward(Ctx& ctx, const StreamState& in, const SchemaGraph& graph,
                                     Var prior, const ProjectionOverride* override_attn) const {
    Tape& t = ctx.tape;
    Var q = in.question, s = in.semantic_schema, a = in.abstract_schema;

    // question -> semantic schema attention, shifted by the linking prior
    Var e = t.matmul(t.matmul(q, ctx.p(prefix_ + ".wq")),
                     t.transpose(t.matmul(s, ctx.p(prefix_ + ".wk"))));
    if (scaled_) e = t.scale(e, 1.0 / std::sqrt(static_cast<double>(d_)));
    e = t.add(e, prior);

    Var alpha, u;
    if (override_attn) {
        alpha = t.constant(override_attn->alpha);
        u = t.constant(override_attn->u);
    } else {
        alpha = t.softmax_rows(e);
        u = t.max_rows(t.transpose(alpha));  // column maxima: mention scores
    }
    record_attention(ctx, t.val(alpha));
    if (ctx.mention_log) ctx.mention_log->push_back(t.val(u));

    // augmented abstract schema feeds the question update
    Var a_hat = t.scale_rows(a, u);
    Var alpha_d = ctx.drop(alpha);
    Var b = t.matmul(alpha_d, t.matmul(a_hat, ctx.p(prefix_ + ".wv_q")));
    Var gq = t.sigmoid(gate_question_.forward(ctx, b));
    Var q_bar = t.add(t.mul(gq, b), t.mul(t.rsub_scalar(1.0, gq), q));

    // transposed attention, shared by both schema streams
    Var alpha_hat = t.softmax_rows(t.transpose(e));
    record_attention(ctx, t.val(alpha_hat));
    Var alpha_hat_d = ctx.drop(alpha_hat);

    Var c_s = t.matmul(alpha_hat_d, t.matmul(q, ctx.p(prefix_ + ".wv_s")));
    Var gs = t.sigmoid(gate_semantic_.forward(ctx, c_s));
    Var s_bar = t.add(t.mul(gs, c_s), t.mul(t.rsub_scalar(1.0, gs), s));

    Var c_a = t.matmul(alpha_hat_d, t.matmul(q, ctx.p(prefix_ + ".wv_a")));
    Var ga = t.sigmoid(gate_abstract_.forward(ctx, c_a));
    Var a_bar = t.add(t.mul(ga, c_a), t.mul(t.rsub_scalar(1.0, ga), a_hat));

    StreamState out;
    out.abstract_schema = rgcn_abstract_.forward(ctx, a_bar, graph);
    out.semantic_schema = rgcn_semantic_.forward(ctx, s_bar, graph);
    out.question = question_encoder_.forward(ctx, q_bar);
    return out;
}

}  // namespace shadow
