#pragma once

#include <string>
#include <vector>

#include "shadow/encoder.hpp"
#include "shadow/params.hpp"
#include "shadow/semql.hpp"

namespace shadow {

struct DecodeTimeout : std::runtime_error {
    DecodeTimeout(const std::string& msg, ActionSequence partial)
        : std::runtime_error(msg), best_partial(std::move(partial)) {}
    ActionSequence best_partial;
};

struct DecodeResult {
    ActionSequence actions;
    double score = 0.0;  // log-probability of the returned sequence
};

// Grammar-constrained coarse-to-fine decoder over one recurrent spine.
// Pass 1 emits the rule skeleton with typed placeholders at terminal slots;
// pass 2 continues from the skeleton state and fills column/table slots by
// pointer attention over the schema rows of the encoder output. Literal
// slots are never scored; at decode time they copy number-like question
// tokens in order (default "1").
class Decoder {
public:
    Decoder(ParamStore& store, std::int64_t d);

    // Teacher-forced loss: skeleton cross-entropy over ApplyRule steps plus
    // pointer cross-entropy over SelectColumn/SelectTable steps.
    Var decode_loss(Ctx& ctx, const EncoderOutput& enc, const SchemaGraph& graph,
                    const ActionSequence& gold) const;

    DecodeResult decode(Ctx& ctx, const EncoderOutput& enc, const SchemaGraph& graph,
                        const std::vector<std::string>& question, int beam_size = 5,
                        int max_len = 128) const;

private:
    std::int64_t d_;

    Var gru_step(Ctx& ctx, Var x, Var h) const;
    Var attend(Ctx& ctx, Var h, Var memory) const;
    Var rule_logits(Ctx& ctx, Var h, Var context) const;
    Var pointer_logits(Ctx& ctx, Var h, Var f_schema, bool tables) const;
    Var input_embedding(Ctx& ctx, const Action& a, Var f_schema) const;

    DecodeResult search(Ctx& ctx, const EncoderOutput& enc, const SchemaGraph& graph,
                        const std::vector<std::string>& question, int beam_size,
                        int max_len) const;
};

}  // namespace shadow
