#pragma once

#include <string>
#include <vector>

#include "shadow/layers.hpp"
#include "shadow/params.hpp"
#include "shadow/schema.hpp"

namespace shadow {

struct EncoderConfig {
    int gpnn_layers = 4;
    int rat_layers = 4;
    std::int64_t d = 512;
    int heads = 8;
    int basis_count = 8;
    int oov_buckets = 64;
};

// Trainable word embeddings over a fixed vocabulary plus hash buckets for
// out-of-vocabulary tokens. Bucket assignment is a stable FNV-1a hash, so
// lookups are deterministic across runs and platforms.
class EmbeddingTable {
public:
    EmbeddingTable(ParamStore& store, std::string prefix, std::vector<std::string> vocab,
                   std::int64_t d, int oov_buckets);

    std::int64_t token_id(const std::string& token) const;
    Var lookup(Ctx& ctx, const std::vector<std::string>& tokens) const;
    // One row per schema node: the mean of its name-token embeddings.
    Var pooled_nodes(Ctx& ctx, const SchemaGraph& graph) const;

    const std::vector<std::string>& vocab() const { return vocab_; }

private:
    std::string prefix_;
    std::vector<std::string> vocab_;
    std::map<std::string, std::int64_t> index_;
    int oov_buckets_;
};

struct EncoderOutput {
    Var f;         // (n+m) x d, question rows first
    Var f_q;       // n x d view
    Var f_schema;  // m x d view
    Var q_projected;  // question stream after the projection stack
};

// Projection stack over (question, semantic schema, abstract schema), then
// relation-aware attention over the concatenated question + abstract rows.
class Encoder {
public:
    Encoder(ParamStore& store, const EncoderConfig& cfg, std::vector<std::string> vocab);

    StreamState embed(Ctx& ctx, const std::vector<std::string>& question,
                      const SchemaGraph& graph) const;
    EncoderOutput encode(Ctx& ctx, const std::vector<std::string>& question,
                         const SchemaGraph& graph, const LinkMatrix& link,
                         const RelationMatrix& relations) const;

    const EncoderConfig& config() const { return cfg_; }
    const std::vector<std::string>& vocab() const { return words_.vocab(); }

private:
    EncoderConfig cfg_;
    EmbeddingTable words_;
    LinkingPrior prior_;
    std::vector<ProjectionLayer> projections_;
    std::vector<AttentionLayer> rat_;
};

}  // namespace shadow
