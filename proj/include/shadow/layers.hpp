#pragma once

#include <string>

#include "shadow/params.hpp"
#include "shadow/schema.hpp"
#include "shadow/tape.hpp"

namespace shadow {

struct Linear {
    Linear(ParamStore& store, std::string prefix, std::int64_t in, std::int64_t out,
           bool zero_init = false);
    Var forward(Ctx& ctx, Var x) const;

    std::string prefix;
};

// Relational graph convolution with basis-decomposed per-relation weights.
// Messages over each relation are averaged; nodes without incoming edges
// keep a zero aggregate (no division by zero).
class RgcnLayer {
public:
    RgcnLayer(ParamStore& store, std::string prefix, std::int64_t d, int basis_count);
    Var forward(Ctx& ctx, Var h, const SchemaGraph& graph) const;

private:
    std::string prefix_;
    std::int64_t d_;
    int basis_;
};

// Multi-head self-attention block: attention, residual + layer norm,
// position-wise feed-forward, second residual + layer norm. With a relation
// grid it adds the shared key/value relation biases; without one it is the
// plain transformer layer.
class AttentionLayer {
public:
    AttentionLayer(ParamStore& store, std::string prefix, std::int64_t d, int heads,
                   bool relational, int relation_vocab = rel::kVocabSize);
    Var forward(Ctx& ctx, Var x, const IdGrid* relations = nullptr) const;

    int heads() const { return heads_; }

private:
    std::string prefix_;
    std::int64_t d_;
    int heads_;
    bool relational_;
    int relation_vocab_;
};

// Shared linking prior: one scalar per (question token, schema node) cell
// from the link tag embedding. The same parameters serve every projection
// layer.
class LinkingPrior {
public:
    LinkingPrior(ParamStore& store, std::string prefix, std::int64_t emb_dim = 16);
    Var forward(Ctx& ctx, const LinkMatrix& link) const;

private:
    std::string prefix_;
};

struct StreamState {
    Var question;         // n x d
    Var semantic_schema;  // m x d
    Var abstract_schema;  // m x d
};

// Test seam: inject a fixed question->schema attention matrix and mention
// score instead of computing them from the streams.
struct ProjectionOverride {
    Tensor alpha;  // n x m, row-stochastic
    Tensor u;      // m x 1
};

// One graph projection layer: question<->semantic-schema attention with the
// linking prior, mention-scaled abstract schema as the value stream for the
// question update, transposed shared attention for the two schema updates,
// then R-GCN / transformer character encoding per stream.
class ProjectionLayer {
public:
    ProjectionLayer(ParamStore& store, std::string prefix, std::int64_t d, int heads,
                    int basis_count, bool scaled_attention = false);
    StreamState forward(Ctx& ctx, const StreamState& in, const SchemaGraph& graph, Var prior,
                        const ProjectionOverride* override_attn = nullptr) const;

private:
    std::string prefix_;
    std::int64_t d_;
    bool scaled_;
    Linear gate_question_;
    Linear gate_semantic_;
    Linear gate_abstract_;
    RgcnLayer rgcn_abstract_;
    RgcnLayer rgcn_semantic_;
    AttentionLayer question_encoder_;
};

}  // namespace shadow
