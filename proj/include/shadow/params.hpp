#pragma once

#include <map>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "shadow/tape.hpp"
#include "shadow/tensor.hpp"

namespace shadow {

struct CheckpointMismatch : std::runtime_error {
    explicit CheckpointMismatch(const std::string& msg) : std::runtime_error(msg) {}
};

// Named trainable parameters plus Adam moment buffers. Names are slash-free
// dotted paths ("encoder.proj0.wq"). Frozen stores are safely shared across
// threads; mutation (create/adam step/load) is exclusive-access.
class ParamStore {
public:
    explicit ParamStore(std::uint64_t init_seed = 1) : rng_(init_seed) {}

    // Creates the parameter on first call, returns the existing one after.
    Tensor& create(const std::string& name, std::int64_t rows, std::int64_t cols);
    Tensor& create_zero(const std::string& name, std::int64_t rows, std::int64_t cols);
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    bool has(const std::string& name) const { return params_.count(name) > 0; }

    const std::map<std::string, Tensor>& all() const { return params_; }

    // One Adam update over the given per-parameter gradients.
    // Missing names are untouched; non-finite gradients raise NumericError.
    void adam_step(const std::map<std::string, Tensor>& grads, double lr,
                   double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void save(const std::string& path,
              const std::map<std::string, std::vector<std::string>>& extra = {}) const;
    // Loads parameters; existing entries must match shapes. Returns extra
    // string-list metadata stored alongside (e.g. vocabularies).
    std::map<std::string, std::vector<std::string>> load(const std::string& path);

    std::int64_t adam_t() const { return adam_t_; }

private:
    std::map<std::string, Tensor> params_;
    std::map<std::string, Tensor> adam_m_;
    std::map<std::string, Tensor> adam_v_;
    std::int64_t adam_t_ = 0;
    std::mt19937_64 rng_;
};

// Per-forward context: one tape, shared parameter store, dropout mode.
// Parameter leaves are created lazily and cached so a parameter used twice
// in a forward shares one tape node (gradients accumulate).
struct Ctx {
    Ctx(Tape& t, ParamStore& p) : tape(t), params(p) {}

    Tape& tape;
    ParamStore& params;
    bool train = false;
    double dropout_rate = 0.0;
    std::mt19937_64* rng = nullptr;
    std::vector<Tensor>* attention_log = nullptr;  // records every attention matrix when set
    std::vector<Tensor>* mention_log = nullptr;    // records projection mention scores u when set

    Var p(const std::string& name);
    Var drop(Var x);
    // Gradients of every parameter touched this forward, after tape.backward.
    std::map<std::string, Tensor> param_grads() const;

private:
    std::unordered_map<std::string, Var> cache_;
};

// Max relative error between tape gradients of f at x and central finite
// differences; denominator max(|a|,|b|,1e-8). f must be pure.
double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double eps = 1e-5);

}  // namespace shadow
