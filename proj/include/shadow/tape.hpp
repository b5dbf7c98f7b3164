#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "shadow/tensor.hpp"

namespace shadow {

struct Var {
    int idx = -1;
    bool valid() const { return idx >= 0; }
};

// Reverse-mode tape. Nodes are appended in topological order during the
// forward pass; backward() walks them once in reverse. One tape per forward;
// exclusive access while in use.
class Tape {
public:
    Var leaf(Tensor t);
    Var constant(Tensor t);

    const Tensor& val(Var v) const { return nodes_[v.idx].value; }
    Tensor grad(Var v) const;
    void backward(Var out);
    std::size_t size() const { return nodes_.size(); }

    Var matmul(Var a, Var b);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var add_rowvec(Var x, Var b);  // b is 1xC, broadcast over rows
    Var relu(Var x);
    Var sigmoid(Var x);
    Var softmax_rows(Var x, const Tensor* mask = nullptr);
    Var log_softmax_rows(Var x, const Tensor* mask = nullptr);
    Var layer_norm(Var x, Var gain, Var bias);
    Var concat_cols(Var a, Var b);
    Var concat_rows(Var a, Var b);
    Var slice_cols(Var x, std::int64_t start, std::int64_t len);
    Var slice_rows(Var x, std::int64_t start, std::int64_t len);
    Var transpose(Var x);
    Var mean_rows(Var x);                                   // 1xC column means
    Var max_rows(Var x, std::vector<std::int64_t>* argmax = nullptr);  // Rx1, ties -> lowest index
    Var scale_rows(Var x, Var u);                           // u is Rx1
    Var dropout(Var x, double rate, bool train, std::mt19937_64& rng);
    Var embedding_lookup(Var table, const std::vector<std::int64_t>& ids);
    Var sum_all(Var x);  // 1x1
    Var scale(Var x, double c);
    Var scale_var(Var x, Var s);  // s is 1x1
    Var pick(Var x, std::int64_t r, std::int64_t c);  // 1x1
    Var rsub_scalar(double c, Var x);                 // c - x
    Var reshape(Var x, std::int64_t r, std::int64_t c);

    // e[i][j] = dot(q_i, table[rel(i,j)])
    Var rat_bias_scores(Var q, Var table, const IdGrid& rel);
    // z[i] = sum_j alpha[i][j] * table[rel(i,j)]
    Var rat_bias_values(Var alpha, Var table, const IdGrid& rel);

private:
    struct Node {
        Tensor value;
        std::vector<double> grad;  // lazily allocated
        std::function<void(Tape&)> backward;
        bool needs_grad = false;
    };

    std::vector<Node> nodes_;

    Var push(Tensor value, bool needs_grad, std::function<void(Tape&)> bwd);
    std::vector<double>& grad_buf(int idx);
    bool needs(Var v) const { return nodes_[v.idx].needs_grad; }
    void check_finite(const Tensor& t, const char* op) const;
};

}  // namespace shadow
