#include "shadow/params.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

namespace shadow {

namespace {
constexpr int kCheckpointVersion = 1;
}

namespace {

void check_shape(const std::string& name, const Tensor& existing, std::int64_t rows,
                 std::int64_t cols) {
    if (existing.rows() != rows || existing.cols() != cols) {
        throw CheckpointMismatch("parameter " + name + " is " + existing.shape_str() +
                                 ", expected [" + std::to_string(rows) + "," +
                                 std::to_string(cols) + "]");
    }
}

}  // namespace

Tensor& ParamStore::create(const std::string& name, std::int64_t rows, std::int64_t cols) {
    auto it = params_.find(name);
    if (it != params_.end()) {
        check_shape(name, it->second, rows, cols);
        return it->second;
    }
    Tensor t(rows, cols);
    double bound = 1.0 / std::sqrt(static_cast<double>(rows));
    std::uniform_real_distribution<double> uni(-bound, bound);
    for (double& v : t.data) v = uni(rng_);
    t.requires_grad = true;
    return params_.emplace(name, std::move(t)).first->second;
}

Tensor& ParamStore::create_zero(const std::string& name, std::int64_t rows, std::int64_t cols) {
    auto it = params_.find(name);
    if (it != params_.end()) {
        check_shape(name, it->second, rows, cols);
        return it->second;
    }
    Tensor t(rows, cols);
    t.requires_grad = true;
    return params_.emplace(name, std::move(t)).first->second;
}

Tensor& ParamStore::get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) {
        throw CheckpointMismatch("unknown parameter: " + name);
    }
    return it->second;
}

const Tensor& ParamStore::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) {
        throw CheckpointMismatch("unknown parameter: " + name);
    }
    return it->second;
}

void ParamStore::adam_step(const std::map<std::string, Tensor>& grads, double lr, double beta1,
                           double beta2, double eps) {
    ++adam_t_;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(adam_t_));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(adam_t_));
    for (const auto& [name, g] : grads) {
        auto pit = params_.find(name);
        if (pit == params_.end()) {
            throw CheckpointMismatch("adam_step: gradient for unknown parameter " + name);
        }
        Tensor& p = pit->second;
        if (!g.same_shape(p)) {
            throw DimensionError("adam_step: gradient shape " + g.shape_str() +
                                 " vs parameter " + p.shape_str() + " for " + name);
        }
        for (double v : g.data) {
            if (!std::isfinite(v)) {
                throw NumericError("adam_step: non-finite gradient for parameter " + name);
            }
        }
        Tensor& m = adam_m_.try_emplace(name, p.rows(), p.cols()).first->second;
        Tensor& v = adam_v_.try_emplace(name, p.rows(), p.cols()).first->second;
        for (std::size_t i = 0; i < p.data.size(); ++i) {
            m.data[i] = beta1 * m.data[i] + (1.0 - beta1) * g.data[i];
            v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * g.data[i] * g.data[i];
            double mhat = m.data[i] / bc1;
            double vhat = v.data[i] / bc2;
            p.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

void ParamStore::save(const std::string& path,
                      const std::map<std::string, std::vector<std::string>>& extra) const {
    nlohmann::json doc;
    doc["format_version"] = kCheckpointVersion;
    doc["adam_t"] = adam_t_;
    nlohmann::json ps = nlohmann::json::object();
    for (const auto& [name, t] : params_) {
        ps[name] = {{"shape", {t.rows(), t.cols()}}, {"data", t.data}};
    }
    doc["params"] = std::move(ps);
    for (const auto& [k, v] : extra) doc["extra"][k] = v;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out << doc.dump();
}

std::map<std::string, std::vector<std::string>> ParamStore::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
    nlohmann::json doc;
    in >> doc;
    if (!doc.contains("format_version") || doc["format_version"].get<int>() != kCheckpointVersion) {
        throw CheckpointMismatch("checkpoint " + path + ": unsupported format version");
    }
    for (auto& [name, obj] : doc["params"].items()) {
        auto shape = obj["shape"].get<std::vector<std::int64_t>>();
        auto data = obj["data"].get<std::vector<double>>();
        if (shape.size() != 2) {
            throw CheckpointMismatch("checkpoint " + path + ": parameter " + name +
                                     " is not 2-D");
        }
        Tensor t(shape[0], shape[1], std::move(data));
        t.requires_grad = true;
        auto it = params_.find(name);
        if (it != params_.end() && !it->second.same_shape(t)) {
            throw CheckpointMismatch("checkpoint " + path + ": parameter " + name + " shape " +
                                     t.shape_str() + " conflicts with model shape " +
                                     it->second.shape_str());
        }
        params_[name] = std::move(t);
    }
    adam_t_ = doc.value("adam_t", 0);
    std::map<std::string, std::vector<std::string>> extra;
    if (doc.contains("extra")) {
        for (auto& [k, v] : doc["extra"].items()) {
            extra[k] = v.get<std::vector<std::string>>();
        }
    }
    return extra;
}

Var Ctx::p(const std::string& name) {
    auto it = cache_.find(name);
    if (it != cache_.end()) return it->second;
    Var v = tape.leaf(params.get(name));
    cache_.emplace(name, v);
    return v;
}

Var Ctx::drop(Var x) {
    if (!train || dropout_rate == 0.0) return x;
    if (!rng) throw NumericError("dropout requested in train mode without an RNG");
    return tape.dropout(x, dropout_rate, true, *rng);
}

std::map<std::string, Tensor> Ctx::param_grads() const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, v] : cache_) out.emplace(name, tape.grad(v));
    return out;
}

double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double eps) {
    Tensor xg = x;
    xg.requires_grad = true;
    Tape tape;
    Var in = tape.leaf(xg);
    Var out = f(tape, in);
    tape.backward(out);
    Tensor analytic = tape.grad(in);

    auto eval = [&](const Tensor& xt) {
        Tape t;
        Tensor xc = xt;
        xc.requires_grad = false;
        Var v = t.leaf(xc);
        Var o = f(t, v);
        return t.val(o).data[0];
    };

    double max_rel = 0.0;
    Tensor probe = x;
    for (std::size_t i = 0; i < probe.data.size(); ++i) {
        double orig = probe.data[i];
        probe.data[i] = orig + eps;
        double fp = eval(probe);
        probe.data[i] = orig - eps;
        double fm = eval(probe);
        probe.data[i] = orig;
        double numeric = (fp - fm) / (2.0 * eps);
        double a = analytic.data[i];
        double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
        max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
    }
    return max_rel;
}

}  // namespace shadow
