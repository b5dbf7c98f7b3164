#include "shadow/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace shadow {

namespace {

using nlohmann::json;

std::string format_double(double v) {
    std::ostringstream s;
    s.precision(17);
    s << v;
    return s.str();
}

}  // namespace

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw ConfigError("config file " + path + ": " + e.what());
    }
    RunConfig cfg;
    auto get_to = [&](const char* key, auto& out) {
        if (doc.contains(key)) doc.at(key).get_to(out);
    };
    get_to("tables", cfg.tables);
    get_to("examples", cfg.examples);
    get_to("values_dir", cfg.values_dir);
    get_to("checkpoint", cfg.checkpoint);
    get_to("log_dir", cfg.log_dir);
    get_to("synthetic", cfg.synthetic);
    get_to("d", cfg.d);
    get_to("heads", cfg.heads);
    get_to("basis", cfg.basis);
    get_to("gpnn_layers", cfg.gpnn_layers);
    get_to("rat_layers", cfg.rat_layers);
    get_to("lr", cfg.lr);
    get_to("dropout", cfg.dropout);
    get_to("batch", cfg.batch);
    get_to("epochs", cfg.epochs);
    get_to("eval_every", cfg.eval_every);
    get_to("beam", cfg.beam);
    get_to("seed", cfg.seed);
    cfg.validate();
    return cfg;
}

void RunConfig::validate() const {
    if (gpnn_layers < 0 || rat_layers < 0) throw ConfigError("layer counts must be >= 0");
    if (batch < 1) throw ConfigError("batch must be >= 1");
    if (d < 1 || heads < 1 || d % heads != 0) {
        throw ConfigError("d must be a positive multiple of heads");
    }
    if (basis < 1) throw ConfigError("basis must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0,1)");
    if (beam < 1) throw ConfigError("beam must be >= 1");
    if (synthetic < 0) throw ConfigError("synthetic must be >= 0");
}

// ---------------------------------------------------------------------------
// hardness (Spider-style component counting, documented in the README)

const char* hardness_name(Hardness h) {
    switch (h) {
        case Hardness::Easy: return "easy";
        case Hardness::Medium: return "medium";
        case Hardness::Hard: return "hard";
        case Hardness::ExtraHard: return "extra_hard";
    }
    return "?";
}

namespace {

struct HardnessCounts {
    int comp1 = 0;   // where/group/order/limit/join/or/like usage
    int comp2 = 0;   // nested statements (set operators and subqueries)
    int others = 0;  // multiple aggs / select columns / conditions / groups
};

const std::string& rname(const SemqlAst& n) { return grammar()[n.rule].name; }

void count_cond(const SemqlAst& cond, int& leaves, bool& has_or, bool& has_like, int& subqueries) {
    const std::string& r = rname(cond);
    if (r == "CondAnd" || r == "CondOr") {
        if (r == "CondOr") has_or = true;
        count_cond(cond.children[0], leaves, has_or, has_like, subqueries);
        count_cond(cond.children[1], leaves, has_or, has_like, subqueries);
        return;
    }
    if (r == "CondNot") {
        count_cond(cond.children[0], leaves, has_or, has_like, subqueries);
        return;
    }
    ++leaves;
    if (r == "CondLike") has_like = true;
    for (const auto& c : cond.children) {
        if (c.sym == Sym::Val && rname(c) == "ValSubquery") ++subqueries;
    }
}

void count_query(const SemqlAst& query, HardnessCounts& hc) {
    const SemqlAst& sel = query.children[0];
    int select_items = 0, agg_items = 0;
    const SemqlAst* al = &sel.children[1];
    while (true) {
        ++select_items;
        if (rname(al->children[0]) != "AggNone") ++agg_items;
        if (rname(*al) == "AggListOne") break;
        al = &al->children[1];
    }
    if (select_items > 1) ++hc.others;
    if (agg_items > 1) ++hc.others;

    const SemqlAst& from = query.children[1];
    if (rname(from) == "FromSubquery") {
        ++hc.comp2;
        count_query(from.children[0].children[0], hc);
    } else {
        int tables = 1;
        const SemqlAst* tl = &from.children[0];
        while (rname(*tl) != "TabListOne") {
            ++tables;
            tl = &tl->children[1];
        }
        if (tables > 1) ++hc.comp1;
    }

    int where_leaves = 0, group_cols = 0;
    bool has_or = false, has_like = false;
    if (rname(query.children[2]) == "Where") {
        int sub = 0;
        count_cond(query.children[2].children[0], where_leaves, has_or, has_like, sub);
        hc.comp2 += sub;
        hc.comp1 += where_leaves > 0 ? 1 : 0;
    }
    if (where_leaves > 1) ++hc.others;
    if (has_or) ++hc.comp1;
    if (has_like) ++hc.comp1;

    const SemqlAst& group = query.children[3];
    if (rname(group) == "Group") {
        ++hc.comp1;
        const SemqlAst* cl = &group.children[0];
        group_cols = 1;
        while (rname(*cl) != "ColListOne") {
            ++group_cols;
            cl = &cl->children[1];
        }
        if (rname(group.children[1]) == "Having") {
            int sub = 0, leaves = 0;
            count_cond(group.children[1].children[0], leaves, has_or, has_like, sub);
            hc.comp2 += sub;
        }
    }
    if (group_cols > 1) ++hc.others;

    const SemqlAst& order = query.children[4];
    if (rname(order) == "Order") {
        ++hc.comp1;
        if (rname(order.children[1]) == "Limit") ++hc.comp1;
    }
}

void count_stmt(const SemqlAst& stmt, HardnessCounts& hc, bool top) {
    if (rname(stmt) != "StmtQuery") {
        ++hc.comp2;
        count_query(stmt.children[0], hc);
        count_stmt(stmt.children[1], hc, false);
        return;
    }
    if (!top) ++hc.comp2;
    count_query(stmt.children[0], hc);
}

}  // namespace

Hardness classify_hardness(const SemqlAst& ast) {
    HardnessCounts hc;
    count_stmt(ast, hc, true);
    if (hc.comp1 <= 1 && hc.others == 0 && hc.comp2 == 0) return Hardness::Easy;
    if ((hc.others <= 2 && hc.comp1 <= 1 && hc.comp2 == 0) ||
        (hc.comp1 <= 2 && hc.others < 2 && hc.comp2 == 0)) {
        return Hardness::Medium;
    }
    if ((hc.others > 2 && hc.comp1 <= 2 && hc.comp2 == 0) ||
        (hc.comp1 > 2 && hc.comp1 <= 3 && hc.others <= 2 && hc.comp2 == 0) ||
        (hc.comp1 <= 1 && hc.others == 0 && hc.comp2 <= 1)) {
        return Hardness::Hard;
    }
    return Hardness::ExtraHard;
}

std::string EvalReport::to_json() const {
    json doc;
    doc["total"] = total;
    doc["exact_match"] = exact_match;
    doc["recover_rate"] = recover;
    json buckets = json::object();
    for (const auto& [name, count] : bucket_total) {
        json b;
        b["total"] = count;
        b["hit"] = bucket_hit.count(name) ? bucket_hit.at(name) : 0;
        b["accuracy"] = count > 0 ? static_cast<double>(b["hit"].get<int>()) / count : 0.0;
        buckets[name] = b;
    }
    doc["hardness"] = buckets;
    doc["component_match"] = component_match;
    return doc.dump(2);
}

// ---------------------------------------------------------------------------
// synthetic corpus

namespace {

struct PatternSpec {
    const char* db;
    const char* sql;       // {A} {B} {C} literal slots
    const char* question;  // must mention the literals in the same order
};

// every grammar production appears in at least one pattern
const PatternSpec kPatterns[] = {
    {"sports", "SELECT name FROM team", "list the name of every team"},
    {"sports", "SELECT * FROM team", "show all columns of team"},
    {"sports", "SELECT name, rank FROM team", "give name and rank of each team"},
    {"sports", "SELECT DISTINCT rank FROM team", "which different ranks exist"},
    {"sports", "SELECT count(*) FROM team", "how many teams are there"},
    {"sports", "SELECT max(wins) FROM match_season", "largest wins in any season"},
    {"sports", "SELECT min(wins) FROM match_season", "smallest wins in any season"},
    {"sports", "SELECT sum(wins) FROM match_season", "total wins over all seasons"},
    {"sports", "SELECT avg(wins) FROM match_season", "average wins per season"},
    {"sports", "SELECT count(DISTINCT team_id) FROM match_season",
     "how many different teams played a season"},
    {"sports", "SELECT max(DISTINCT rank) FROM team", "largest among the distinct ranks"},
    {"sports", "SELECT min(DISTINCT rank) FROM team", "smallest among the distinct ranks"},
    {"sports", "SELECT sum(DISTINCT wins) FROM match_season", "sum of the distinct win counts"},
    {"sports", "SELECT avg(DISTINCT wins) FROM match_season", "mean of the distinct win counts"},
    {"sports", "SELECT wins - year FROM match_season", "wins minus year for each season"},
    {"sports", "SELECT wins + year FROM match_season", "wins plus year for each season"},
    {"sports", "SELECT wins * year FROM match_season", "wins times year for each season"},
    {"sports", "SELECT wins / year FROM match_season", "wins divided by year for each season"},
    {"sports", "SELECT name FROM team WHERE rank = {A}", "names of teams with rank equal to {A}"},
    {"sports", "SELECT name FROM team WHERE rank != {A}", "teams whose rank is not {A}"},
    {"sports", "SELECT name FROM team WHERE rank < {A}", "teams ranked strictly below {A}"},
    {"sports", "SELECT name FROM team WHERE rank > {A}", "teams ranked strictly above {A}"},
    {"sports", "SELECT name FROM team WHERE rank <= {A}", "teams ranked at most {A}"},
    {"sports", "SELECT name FROM team WHERE rank >= {A}", "teams ranked at least {A}"},
    {"sports", "SELECT name FROM team WHERE name LIKE {A}", "team names matching {A}"},
    {"sports", "SELECT name FROM team WHERE rank BETWEEN {A} AND {B}",
     "teams ranked between {A} and {B}"},
    {"sports",
     "SELECT name FROM team WHERE team_id IN (SELECT team_id FROM match_season WHERE wins > {A})",
     "teams that won a season with more than {A} wins"},
    {"sports", "SELECT name FROM team WHERE team_id NOT IN (SELECT team_id FROM match_season)",
     "teams that never played any season"},
    {"sports", "SELECT name FROM team WHERE rank = {A} AND name LIKE {B}",
     "teams with rank {A} whose name matches {B}"},
    {"sports", "SELECT name FROM team WHERE rank = {A} OR rank = {B}",
     "teams ranked either {A} or {B}"},
    {"sports",
     "SELECT year FROM match_season WHERE wins > (SELECT avg(wins) FROM match_season)",
     "years of seasons with wins above the overall average"},
    {"sports",
     "SELECT T1.name FROM team AS T1 JOIN match_season AS T2 ON T1.team_id = T2.team_id WHERE "
     "T2.year = {A}",
     "names of teams that played in the year {A}"},
    {"sports", "SELECT count(*) FROM match_season GROUP BY team_id HAVING count(*) > {A}",
     "per team season counts above {A}"},
    {"sports", "SELECT team_id FROM match_season GROUP BY team_id",
     "the distinct playing teams grouped by id"},
    {"sports", "SELECT team_id, year FROM match_season GROUP BY team_id, year",
     "team and year pairs of the seasons"},
    {"sports", "SELECT name FROM team ORDER BY rank ASC", "team names from best rank to worst"},
    {"sports", "SELECT name FROM team ORDER BY rank DESC", "team names from worst rank to best"},
    {"sports", "SELECT name FROM team ORDER BY rank ASC LIMIT {A}",
     "the top {A} teams by rank"},
    {"sports", "SELECT name FROM team ORDER BY rank ASC, name DESC",
     "teams sorted by rank then reverse name"},
    {"sports", "SELECT name FROM team INTERSECT SELECT name FROM team WHERE rank < {A}",
     "team names intersected with those ranked under {A}"},
    {"sports", "SELECT name FROM team UNION SELECT name FROM team WHERE rank > {A}",
     "team names together with those ranked over {A}"},
    {"sports", "SELECT name FROM team EXCEPT SELECT name FROM team WHERE rank = {A}",
     "team names excluding those ranked {A}"},
    {"sports", "SELECT count(*) FROM (SELECT team_id FROM match_season WHERE wins > {A})",
     "count of seasons having wins beyond {A}"},
    {"concerts", "SELECT name FROM stadium WHERE capacity > {A}",
     "stadiums with capacity over {A}"},
    {"concerts",
     "SELECT T1.name FROM stadium AS T1 JOIN concert AS T2 ON T1.stadium_id = T2.stadium_id "
     "WHERE T2.attendance > T1.capacity",
     "stadiums where a concert drew more than the capacity"},
    {"concerts", "SELECT name FROM stadium WHERE NOT capacity > {A}",
     "stadiums not holding more than {A}"},
    {"concerts", "SELECT name FROM stadium WHERE name NOT LIKE {A}",
     "stadium names that do not match {A}"},
    {"concerts", "SELECT year FROM concert WHERE attendance BETWEEN {A} AND {B}",
     "concert years with attendance from {A} to {B}"},
    {"concerts",
     "SELECT stadium_id FROM concert GROUP BY stadium_id HAVING sum(attendance) > {A}",
     "stadiums whose combined attendance tops {A}"},
    {"concerts",
     "SELECT name FROM stadium WHERE (capacity > {A} OR capacity < {B}) AND stadium_id = {C}",
     "stadiums above {A} or below {B} seats with id {C}"},
    {"college", "SELECT avg(age) FROM student GROUP BY dept_id",
     "average student age in each department"},
    {"college",
     "SELECT T2.dept_name FROM student AS T1 JOIN department AS T2 ON T1.dept_id = T2.dept_id "
     "GROUP BY T2.dept_name ORDER BY count(*) DESC LIMIT {A}",
     "the {A} departments with the most students"},
    {"college",
     "SELECT dept_name FROM department WHERE budget > (SELECT avg(budget) FROM department)",
     "departments whose budget beats the average"},
};

std::string fill_slots(const std::string& tpl, const std::vector<std::string>& values) {
    static const char* slots[] = {"{A}", "{B}", "{C}"};
    std::string out = tpl;
    for (std::size_t i = 0; i < values.size(); ++i) {
        auto pos = out.find(slots[i]);
        while (pos != std::string::npos) {
            out.replace(pos, 3, values[i]);
            pos = out.find(slots[i]);
        }
    }
    return out;
}

int slot_count(const std::string& tpl) {
    int n = 0;
    for (const char* s : {"{A}", "{B}", "{C}"}) {
        if (tpl.find(s) != std::string::npos) ++n;
    }
    return n;
}

}  // namespace

std::vector<TrainExample> synthetic_corpus(const std::vector<SchemaGraph>& schemas, int count,
                                           std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> literal(2, 99);
    std::vector<TrainExample> out;
    constexpr int kPatternCount = static_cast<int>(sizeof(kPatterns) / sizeof(kPatterns[0]));
    for (int i = 0; i < count; ++i) {
        const PatternSpec& p = kPatterns[i % kPatternCount];
        std::vector<std::string> values;
        for (int s = 0; s < slot_count(p.sql); ++s) {
            values.push_back(std::to_string(literal(rng)));
        }
        TrainExample ex;
        ex.db_id = p.db;
        ex.gold_sql = fill_slots(p.sql, values);
        ex.question = tokenize_question(fill_slots(p.question, values));
        // validated at generation time so downstream code can rely on it
        sql_to_ast(ex.gold_sql, *std::find_if(schemas.begin(), schemas.end(),
                                              [&](const SchemaGraph& g) {
                                                  return g.db_id == ex.db_id;
                                              }));
        out.push_back(std::move(ex));
    }
    return out;
}

// ---------------------------------------------------------------------------
// pipeline

Pipeline::Pipeline(const RunConfig& cfg) : cfg_(cfg), store_(cfg.seed) {
    cfg_.validate();
    schemas_ = load_tables(cfg_.tables);
    if (cfg_.synthetic > 0) {
        examples_ = synthetic_corpus(schemas_, cfg_.synthetic, cfg_.seed);
    } else if (!cfg_.examples.empty()) {
        examples_ = load_examples(cfg_.examples, schemas_);
    }
    prepare_examples();

    std::set<std::string> vocab_set;
    for (const auto& ex : examples_) vocab_set.insert(ex.question.begin(), ex.question.end());
    for (const auto& g : schemas_) {
        for (int v = 0; v < g.node_count(); ++v) {
            const auto& toks = g.node_tokens(v);
            vocab_set.insert(toks.begin(), toks.end());
        }
    }
    build_model({vocab_set.begin(), vocab_set.end()});
}

Pipeline::Pipeline(const RunConfig& cfg, const std::string& checkpoint_path)
    : cfg_(cfg), store_(cfg.seed) {
    cfg_.validate();
    schemas_ = load_tables(cfg_.tables);
    if (cfg_.synthetic > 0) {
        examples_ = synthetic_corpus(schemas_, cfg_.synthetic, cfg_.seed);
    } else if (!cfg_.examples.empty()) {
        examples_ = load_examples(cfg_.examples, schemas_);
    }
    prepare_examples();

    auto extra = store_.load(checkpoint_path);
    auto it = extra.find("vocab");
    if (it == extra.end()) throw CheckpointMismatch("checkpoint carries no vocabulary");
    build_model(it->second);
}

void Pipeline::prepare_examples() {
    for (const auto& ex : examples_) {
        auto git = std::find_if(schemas_.begin(), schemas_.end(),
                                [&](const SchemaGraph& g) { return g.db_id == ex.db_id; });
        if (git == schemas_.end()) throw ParseError("example references unknown db " + ex.db_id);
        Prepared prep;
        prep.graph = &*git;
        ValueIndex values;
        bool have_values = false;
        if (!cfg_.values_dir.empty()) {
            std::string dir = cfg_.values_dir + "/" + ex.db_id;
            if (std::filesystem::is_directory(dir)) {
                values = load_value_index(dir, *git);
                have_values = true;
            }
        }
        prep.link = tag_linking(ex.question, *git, have_values ? &values : nullptr);
        prep.relations = build_relation_matrix(static_cast<std::int64_t>(ex.question.size()),
                                               *git, prep.link);
        prep.gold_ast = canonicalize(sql_to_ast(ex.gold_sql, *git));
        prep.gold = flatten(sql_to_ast(ex.gold_sql, *git));
        prepared_.push_back(std::move(prep));
    }
}

void Pipeline::build_model(std::vector<std::string> vocab) {
    EncoderConfig ec;
    ec.gpnn_layers = cfg_.gpnn_layers;
    ec.rat_layers = cfg_.rat_layers;
    ec.d = cfg_.d;
    ec.heads = cfg_.heads;
    ec.basis_count = cfg_.basis;
    encoder_ = std::make_unique<Encoder>(store_, ec, std::move(vocab));
    decoder_ = std::make_unique<Decoder>(store_, cfg_.d);
}

EncoderOutput Pipeline::encode_example(Ctx& ctx, const TrainExample& ex,
                                       const Prepared& prep) const {
    return encoder_->encode(ctx, ex.question, *prep.graph, prep.link, prep.relations);
}

TrainResult Pipeline::train(std::ostream& log) {
    if (examples_.empty()) throw ConfigError("training corpus is empty");
    TrainResult result;
    std::mt19937_64 dropout_rng(cfg_.seed * 0x9e3779b97f4a7c15ull + 1);
    std::mt19937_64 order_rng(cfg_.seed * 0x9e3779b97f4a7c15ull + 2);

    std::vector<std::size_t> order(examples_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    bool evaluated = false;
    for (int epoch = 1; epoch <= cfg_.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), order_rng);
        for (std::size_t start = 0; start < order.size(); start += cfg_.batch) {
            std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg_.batch));
            double scale = 1.0 / static_cast<double>(stop - start);
            std::map<std::string, Tensor> acc;
            double batch_loss = 0.0;
            for (std::size_t k = start; k < stop; ++k) {
                const TrainExample& ex = examples_[order[k]];
                const Prepared& prep = prepared_[order[k]];
                Tape t;
                Ctx ctx(t, store_);
                ctx.train = true;
                ctx.dropout_rate = cfg_.dropout;
                ctx.rng = &dropout_rng;
                Var loss = decoder_->decode_loss(ctx, encode_example(ctx, ex, prep), *prep.graph,
                                                 prep.gold);
                batch_loss += t.val(loss).at(0, 0) * scale;
                t.backward(loss);
                for (auto& [name, grad] : ctx.param_grads()) {
                    auto [it, fresh] = acc.try_emplace(name, grad.rows(), grad.cols());
                    for (std::size_t j = 0; j < grad.data.size(); ++j) {
                        it->second.data[j] += grad.data[j] * scale;
                    }
                }
            }
            store_.adam_step(acc, cfg_.lr);
            result.loss_log.push_back(batch_loss);
            ++result.steps;
            log << "step " << result.steps << " loss " << format_double(batch_loss) << "\n";
        }
        if (cfg_.eval_every > 0 && epoch % cfg_.eval_every == 0) {
            EvalReport report = evaluate();
            log << "epoch " << epoch << " exact_match " << format_double(report.exact_match)
                << "\n";
            if (!evaluated || report.exact_match > result.best_exact_match) {
                result.best_exact_match = report.exact_match;
                store_.save(cfg_.checkpoint, {{"vocab", encoder_->vocab()}});
            }
            evaluated = true;
        }
    }
    if (!evaluated) store_.save(cfg_.checkpoint, {{"vocab", encoder_->vocab()}});
    return result;
}

EvalReport Pipeline::evaluate() {
    if (examples_.empty()) throw ConfigError("evaluation corpus is empty");
    EvalReport report;
    report.total = static_cast<int>(examples_.size());

    const char* kClauses[] = {"select", "from", "where", "group", "order", "set_op"};
    std::map<std::string, int> clause_hits;

    std::vector<std::pair<std::string, const SchemaGraph*>> recover_corpus;
    for (std::size_t i = 0; i < examples_.size(); ++i) {
        const TrainExample& ex = examples_[i];
        const Prepared& prep = prepared_[i];
        recover_corpus.emplace_back(ex.gold_sql, prep.graph);

        Hardness h = classify_hardness(prep.gold_ast);
        report.bucket_total[hardness_name(h)] += 1;

        bool hit = false;
        SemqlAst pred;
        bool decoded = false;
        try {
            Tape t;
            Ctx ctx(t, store_);
            DecodeResult r = decoder_->decode(ctx, encode_example(ctx, ex, prep), *prep.graph,
                                              ex.question, cfg_.beam);
            // roundtrip through SQL so the reported match is what a user of
            // the emitted query would see
            std::string sql = ast_to_sql(unflatten(r.actions), *prep.graph);
            pred = canonicalize(sql_to_ast(sql, *prep.graph));
            decoded = true;
            hit = pred == prep.gold_ast;
        } catch (const std::exception&) {
        }
        if (hit) {
            report.exact_match += 1.0;
            report.bucket_hit[hardness_name(h)] += 1;
        }

        auto clause_of = [](const SemqlAst& stmt, const char* clause) -> const SemqlAst* {
            const SemqlAst& q = stmt.children[0];
            std::string c(clause);
            if (c == "set_op") return &stmt;  // compared by rule id below
            int idx = c == "select" ? 0 : c == "from" ? 1 : c == "where" ? 2 : c == "group" ? 3 : 4;
            return &q.children[idx];
        };
        for (const char* clause : kClauses) {
            if (!decoded) continue;
            if (std::string(clause) == "set_op") {
                if (pred.rule == prep.gold_ast.rule) ++clause_hits[clause];
            } else if (*clause_of(pred, clause) == *clause_of(prep.gold_ast, clause)) {
                ++clause_hits[clause];
            }
        }
    }
    report.exact_match /= report.total;
    report.recover = recover_rate(recover_corpus);
    for (const char* clause : kClauses) {
        report.component_match[clause] =
            static_cast<double>(clause_hits[clause]) / report.total;
    }
    return report;
}

std::string Pipeline::diagnose_abstraction(const std::string& question_a,
                                           const std::string& question_b,
                                           const std::string& db_id) const {
    auto git = std::find_if(schemas_.begin(), schemas_.end(),
                            [&](const SchemaGraph& g) { return g.db_id == db_id; });
    if (git == schemas_.end()) throw ConfigError("unknown db " + db_id);
    auto ta = tokenize_question(question_a);
    auto tb = tokenize_question(question_b);
    if (ta.size() != tb.size()) {
        throw ConfigError("questions must have the same token count (" +
                          std::to_string(ta.size()) + " vs " + std::to_string(tb.size()) + ")");
    }
    auto encode_q = [&](const std::vector<std::string>& q) {
        Tape t;
        Ctx ctx(t, const_cast<ParamStore&>(store_));
        LinkMatrix link = tag_linking(q, *git);
        RelationMatrix rel =
            build_relation_matrix(static_cast<std::int64_t>(q.size()), *git, link);
        return t.val(encoder_->encode(ctx, q, *git, link, rel).q_projected);
    };
    Tensor qa = encode_q(ta);
    Tensor qb = encode_q(tb);

    std::ostringstream out;
    out.precision(17);
    for (std::int64_t i = 0; i < qa.rows(); ++i) {
        for (std::int64_t j = 0; j < qb.rows(); ++j) {
            double dot = 0, na = 0, nb = 0;
            for (std::int64_t k = 0; k < qa.cols(); ++k) {
                dot += qa.at(i, k) * qb.at(j, k);
                na += qa.at(i, k) * qa.at(i, k);
                nb += qb.at(j, k) * qb.at(j, k);
            }
            if (j) out << ",";
            out << dot / std::max(std::sqrt(na) * std::sqrt(nb), 1e-12);
        }
        out << "\n";
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// commands

int cmd_train(const RunConfig& cfg, std::ostream& out) {
    Pipeline pipe(cfg);
    TrainResult result = pipe.train(out);
    json doc;
    doc["steps"] = result.steps;
    doc["final_loss"] = result.loss_log.empty() ? 0.0 : result.loss_log.back();
    doc["best_exact_match"] = result.best_exact_match;
    doc["checkpoint"] = cfg.checkpoint;
    out << doc.dump(2) << "\n";

    std::filesystem::create_directories(cfg.log_dir);
    std::ofstream loss_file(cfg.log_dir + "/loss_log.txt");
    for (double v : result.loss_log) loss_file << format_double(v) << "\n";
    return 0;
}

int cmd_eval(const RunConfig& cfg, std::ostream& out) {
    Pipeline pipe(cfg, cfg.checkpoint);
    out << pipe.evaluate().to_json() << "\n";
    return 0;
}

int cmd_transpile(const RunConfig& cfg, std::istream& in, std::ostream& out, std::ostream& err) {
    auto schemas = load_tables(cfg.tables);
    std::string line;
    int lineno = 0;
    int failures = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto tab = line.find('\t');
        try {
            if (tab == std::string::npos) {
                throw ParseError("expected 'db_id<TAB>sql'");
            }
            std::string db = line.substr(0, tab);
            std::string sql = line.substr(tab + 1);
            auto git = std::find_if(schemas.begin(), schemas.end(),
                                    [&](const SchemaGraph& g) { return g.db_id == db; });
            if (git == schemas.end()) throw ParseError("unknown db " + db);
            out << ast_to_sql(sql_to_ast(sql, *git), *git) << "\n";
        } catch (const std::exception& e) {
            err << "line " << lineno << ": " << e.what() << "\n";
            ++failures;
        }
    }
    return failures == 0 ? 0 : 1;
}

int cmd_diagnose_abstraction(const RunConfig& cfg, const std::string& question_a,
                             const std::string& question_b, const std::string& db_id,
                             std::ostream& out) {
    Pipeline pipe(cfg, cfg.checkpoint);
    out << pipe.diagnose_abstraction(question_a, question_b, db_id);
    return 0;
}

int cmd_subsample(const RunConfig& cfg, double fraction, const std::string& out_path,
                  std::ostream& out) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("fraction must be in (0,1]");
    std::ifstream in(cfg.examples);
    if (!in) throw ConfigError("cannot open examples file: " + cfg.examples);
    json doc;
    in >> doc;
    if (!doc.is_array()) throw ConfigError("examples file must hold a JSON list");

    std::size_t n = doc.size();
    // round half up
    std::size_t k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 0.5));
    json subset = json::array();
    if (k >= n) {
        subset = doc;
    } else {
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        std::mt19937_64 rng(cfg.seed);
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(k);
        std::sort(idx.begin(), idx.end());
        for (std::size_t i : idx) subset.push_back(doc[i]);
    }
    std::ofstream of(out_path);
    if (!of) throw ConfigError("cannot write " + out_path);
    of << subset.dump(2) << "\n";
    json summary;
    summary["input"] = n;
    summary["output"] = subset.size();
    summary["path"] = out_path;
    out << summary.dump(2) << "\n";
    return 0;
}

}  // namespace shadow
