#include "shadow/decoder.hpp"

#include <algorithm>
#include <cctype>

namespace shadow {

namespace {

constexpr std::int64_t kStartEmb = 0;
constexpr std::int64_t kColumnSlotEmb = 1;
constexpr std::int64_t kTableSlotEmb = 2;
constexpr std::int64_t kLiteralSlotEmb = 3;

bool number_like(const std::string& t) {
    bool digit = false;
    for (char c : t) {
        if (std::isdigit(static_cast<unsigned char>(c))) {
            digit = true;
        } else if (c != '.') {
            return false;
        }
    }
    return digit;
}

Tensor rule_mask(const std::vector<int>& legal) {
    Tensor m(1, rule_count());
    for (int r : legal) m.at(0, r) = 1.0;
    return m;
}

Tensor node_type_mask(const SchemaGraph& g, bool tables) {
    Tensor m(1, g.node_count());
    for (int v = 0; v < g.node_count(); ++v) {
        if (g.is_table_node(v) == tables) m.at(0, v) = 1.0;
    }
    return m;
}

}  // namespace

Decoder::Decoder(ParamStore& store, std::int64_t d) : d_(d) {
    store.create("dec.rule_emb", rule_count(), d);
    store.create("dec.kind_emb", 4, d);
    for (const char* gate : {"z", "r", "h"}) {
        store.create("dec.gru." + std::string(gate) + ".w", 3 * d, d);
        store.create_zero("dec.gru." + std::string(gate) + ".b", 1, d);
    }
    store.create("dec.att.w", d, d);
    store.create("dec.out.w", 2 * d, rule_count());
    store.create_zero("dec.out.b", 1, rule_count());
    store.create("dec.ptr.col.w", d, d);
    store.create("dec.ptr.tab.w", d, d);
}

Var Decoder::gru_step(Ctx& ctx, Var x, Var h) const {
    Tape& t = ctx.tape;
    auto gate = [&](const char* g, Var in) {
        return t.add_rowvec(t.matmul(in, ctx.p("dec.gru." + std::string(g) + ".w")),
                            ctx.p("dec.gru." + std::string(g) + ".b"));
    };
    Var xh = t.concat_cols(x, h);
    Var z = t.sigmoid(gate("z", xh));
    Var r = t.sigmoid(gate("r", xh));
    Var xrh = t.concat_cols(x, t.mul(r, h));
    // tanh(u) = 2*sigmoid(2u) - 1
    Var cand = t.scale(t.rsub_scalar(1.0, t.scale(t.sigmoid(t.scale(gate("h", xrh), 2.0)), 2.0)),
                       -1.0);
    return t.add(t.mul(z, h), t.mul(t.rsub_scalar(1.0, z), cand));
}

Var Decoder::attend(Ctx& ctx, Var h, Var memory) const {
    Tape& t = ctx.tape;
    Var scores = t.matmul(t.matmul(h, ctx.p("dec.att.w")), t.transpose(memory));
    return t.matmul(t.softmax_rows(scores), memory);
}

Var Decoder::rule_logits(Ctx& ctx, Var h, Var context) const {
    Tape& t = ctx.tape;
    return t.add_rowvec(t.matmul(t.concat_cols(h, context), ctx.p("dec.out.w")),
                        ctx.p("dec.out.b"));
}

Var Decoder::pointer_logits(Ctx& ctx, Var h, Var f_schema, bool tables) const {
    Tape& t = ctx.tape;
    Var w = ctx.p(tables ? "dec.ptr.tab.w" : "dec.ptr.col.w");
    return t.matmul(t.matmul(h, w), t.transpose(f_schema));
}

Var Decoder::input_embedding(Ctx& ctx, const Action& a, Var f_schema) const {
    Tape& t = ctx.tape;
    switch (a.kind) {
        case Action::Kind::ApplyRule:
            return t.slice_rows(ctx.p("dec.rule_emb"), a.id, 1);
        case Action::Kind::SelectColumn:
        case Action::Kind::SelectTable:
            return t.slice_rows(f_schema, a.id, 1);
        case Action::Kind::EmitLiteral:
            return t.slice_rows(ctx.p("dec.kind_emb"), kLiteralSlotEmb, 1);
    }
    throw GrammarViolation("unknown action kind");
}

Var Decoder::decode_loss(Ctx& ctx, const EncoderOutput& enc, const SchemaGraph& graph,
                         const ActionSequence& gold) const {
    Tape& t = ctx.tape;
    std::int64_t m = t.val(enc.f_schema).rows();
    if (m != graph.node_count()) {
        throw DimensionError("decode_loss: schema memory has " + std::to_string(m) +
                             " rows for a graph of " + std::to_string(graph.node_count()));
    }
    if (gold.empty()) throw GrammarViolation("empty gold sequence");
    Tensor col_mask = node_type_mask(graph, false);
    Tensor tab_mask = node_type_mask(graph, true);

    Var loss = t.constant(Tensor(1, 1));
    Var h = t.constant(Tensor(1, d_));
    Var prev = t.slice_rows(ctx.p("dec.kind_emb"), kStartEmb, 1);
    GrammarCursor cur;

    // pass 1: skeleton over rules, terminals abstracted to typed slots
    for (const Action& a : gold) {
        Var c = attend(ctx, h, enc.f);
        h = gru_step(ctx, t.concat_cols(prev, c), h);
        if (a.kind == Action::Kind::ApplyRule) {
            Tensor mask = rule_mask(cur.legal_rules());
            Var lp = t.log_softmax_rows(rule_logits(ctx, h, c), &mask);
            if (a.id < 0 || a.id >= rule_count() || mask.at(0, a.id) == 0.0) {
                throw GrammarViolation("gold rule is not a legal continuation");
            }
            loss = t.sub(loss, t.pick(lp, 0, a.id));
            prev = t.slice_rows(ctx.p("dec.rule_emb"), a.id, 1);
        } else {
            std::int64_t slot = a.kind == Action::Kind::SelectColumn  ? kColumnSlotEmb
                                : a.kind == Action::Kind::SelectTable ? kTableSlotEmb
                                                                      : kLiteralSlotEmb;
            prev = t.slice_rows(ctx.p("dec.kind_emb"), slot, 1);
        }
        cur.advance(a);
    }
    if (!cur.done()) throw GrammarViolation("gold sequence leaves the grammar cursor open");

    // pass 2: details, conditioned on the completed skeleton state
    Var h2 = h;
    prev = t.slice_rows(ctx.p("dec.kind_emb"), kStartEmb, 1);
    for (const Action& a : gold) {
        Var c = attend(ctx, h2, enc.f);
        h2 = gru_step(ctx, t.concat_cols(prev, c), h2);
        if (a.kind == Action::Kind::SelectColumn || a.kind == Action::Kind::SelectTable) {
            bool tables = a.kind == Action::Kind::SelectTable;
            const Tensor& mask = tables ? tab_mask : col_mask;
            if (a.id < 0 || a.id >= m || mask.at(0, a.id) == 0.0) {
                throw GrammarViolation("gold pointer selects a node of the wrong type");
            }
            Var lp = t.log_softmax_rows(pointer_logits(ctx, h2, enc.f_schema, tables), &mask);
            loss = t.sub(loss, t.pick(lp, 0, a.id));
        }
        prev = input_embedding(ctx, a, enc.f_schema);
    }
    return loss;
}

DecodeResult Decoder::search(Ctx& ctx, const EncoderOutput& enc, const SchemaGraph& graph,
                             const std::vector<std::string>& question, int beam_size,
                             int max_len) const {
    Tape& t = ctx.tape;
    Tensor col_mask = node_type_mask(graph, false);
    Tensor tab_mask = node_type_mask(graph, true);

    struct Hyp {
        ActionSequence actions;
        double logp = 0.0;
        Var h;
        Var prev;
        GrammarCursor cur;
        int min_remaining = 0;  // fewest actions that can close every open symbol
    };

    Hyp init;
    init.h = t.constant(Tensor(1, d_));
    init.prev = t.slice_rows(ctx.p("dec.kind_emb"), kStartEmb, 1);
    init.min_remaining = min_actions(Sym::Stmt);
    std::vector<Hyp> active{std::move(init)};
    std::vector<Hyp> completed;
    ActionSequence last_partial;

    for (int step = 0; step < max_len && !active.empty(); ++step) {
        last_partial = active.front().actions;
        std::vector<Hyp> grown;
        for (Hyp& hyp : active) {
            Var c = attend(ctx, hyp.h, enc.f);
            Var h = gru_step(ctx, t.concat_cols(hyp.prev, c), hyp.h);
            Sym s = hyp.cur.next();
            if (is_terminal(s)) {
                // typed placeholder; scored (or copied) in the detail pass
                Action a;
                a.kind = s == Sym::Column  ? Action::Kind::SelectColumn
                         : s == Sym::Table ? Action::Kind::SelectTable
                                           : Action::Kind::EmitLiteral;
                a.id = -1;
                std::int64_t slot = s == Sym::Column  ? kColumnSlotEmb
                                    : s == Sym::Table ? kTableSlotEmb
                                                      : kLiteralSlotEmb;
                Hyp child;
                child.actions = hyp.actions;
                child.actions.push_back(a);
                child.logp = hyp.logp;
                child.h = h;
                child.prev = t.slice_rows(ctx.p("dec.kind_emb"), slot, 1);
                child.cur = hyp.cur;
                child.cur.advance(a);
                child.min_remaining = hyp.min_remaining - 1;
                grown.push_back(std::move(child));
                continue;
            }
            std::vector<int> legal = hyp.cur.legal_rules();
            // cost of swapping the open symbol for a rule's right-hand side
            auto cost_after = [&](int r) {
                int cost = hyp.min_remaining - min_actions(s);
                for (Sym rhs : grammar()[r].rhs) cost += min_actions(rhs);
                return cost;
            };
            // keep only rules that can still finish within the budget; if
            // none fit, the hypothesis is doomed either way, so expand it
            // unpruned and let the length cap produce the timeout
            int budget = max_len - (step + 1);
            std::vector<int> feasible;
            for (int r : legal) {
                if (cost_after(r) <= budget) feasible.push_back(r);
            }
            if (feasible.empty()) feasible = legal;
            Tensor mask = rule_mask(legal);
            Tensor lp = t.val(t.log_softmax_rows(rule_logits(ctx, h, c), &mask));
            for (int r : feasible) {
                Hyp child;
                child.actions = hyp.actions;
                child.actions.push_back({Action::Kind::ApplyRule, r, ""});
                child.logp = hyp.logp + lp.at(0, r);
                child.h = h;
                child.prev = t.slice_rows(ctx.p("dec.rule_emb"), r, 1);
                child.cur = hyp.cur;
                child.cur.advance(child.actions.back());
                child.min_remaining = cost_after(r);
                grown.push_back(std::move(child));
            }
        }
        std::stable_sort(grown.begin(), grown.end(),
                         [](const Hyp& a, const Hyp& b) { return a.logp > b.logp; });
        active.clear();
        for (Hyp& hyp : grown) {
            if (hyp.cur.done()) {
                completed.push_back(std::move(hyp));
            } else if (static_cast<int>(active.size()) < beam_size) {
                active.push_back(std::move(hyp));
            }
        }
    }
    if (completed.empty()) {
        ActionSequence partial = active.empty() ? std::move(last_partial) : active.front().actions;
        throw DecodeTimeout("no complete hypothesis within the length budget",
                            std::move(partial));
    }
    std::stable_sort(completed.begin(), completed.end(),
                     [](const Hyp& a, const Hyp& b) { return a.logp > b.logp; });
    if (static_cast<int>(completed.size()) > beam_size) completed.resize(beam_size);

    std::vector<std::string> literal_queue;
    for (const auto& tok : question) {
        if (number_like(tok)) literal_queue.push_back(tok);
    }

    DecodeResult best;
    bool have = false;
    for (const Hyp& hyp : completed) {
        ActionSequence actions = hyp.actions;
        double total = hyp.logp;
        Var h2 = hyp.h;
        Var prev = t.slice_rows(ctx.p("dec.kind_emb"), kStartEmb, 1);
        std::size_t next_literal = 0;
        for (Action& a : actions) {
            Var c = attend(ctx, h2, enc.f);
            h2 = gru_step(ctx, t.concat_cols(prev, c), h2);
            if (a.kind == Action::Kind::SelectColumn || a.kind == Action::Kind::SelectTable) {
                bool tables = a.kind == Action::Kind::SelectTable;
                const Tensor& mask = tables ? tab_mask : col_mask;
                Tensor lp =
                    t.val(t.log_softmax_rows(pointer_logits(ctx, h2, enc.f_schema, tables), &mask));
                std::int64_t pick = -1;
                for (std::int64_t j = 0; j < lp.cols(); ++j) {
                    if (mask.at(0, j) != 0.0 && (pick < 0 || lp.at(0, j) > lp.at(0, pick))) {
                        pick = j;
                    }
                }
                a.id = static_cast<int>(pick);
                total += lp.at(0, pick);
            } else if (a.kind == Action::Kind::EmitLiteral) {
                a.literal = next_literal < literal_queue.size() ? literal_queue[next_literal++]
                                                                : "1";
            }
            prev = input_embedding(ctx, a, enc.f_schema);
        }
        if (!have || total > best.score) {
            best = {std::move(actions), total};
            have = true;
        }
    }
    return best;
}

DecodeResult Decoder::decode(Ctx& ctx, const EncoderOutput& enc, const SchemaGraph& graph,
                             const std::vector<std::string>& question, int beam_size,
                             int max_len) const {
    if (beam_size < 1) throw DimensionError("beam size must be at least 1");
    std::int64_t m = ctx.tape.val(enc.f_schema).rows();
    if (m != graph.node_count()) {
        throw DimensionError("decode: schema memory has " + std::to_string(m) +
                             " rows for a graph of " + std::to_string(graph.node_count()));
    }
    DecodeResult best = search(ctx, enc, graph, question, beam_size, max_len);
    if (beam_size > 1) {
        // widening the beam never returns a worse sequence than greedy
        DecodeResult greedy = search(ctx, enc, graph, question, 1, max_len);
        if (greedy.score > best.score) best = greedy;
    }
    return best;
}

}  // namespace shadow
