#include "shadow/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace shadow {

Var Tape::push(Tensor value, bool needs_grad, std::function<void(Tape&)> bwd) {
    Node n;
    n.value = std::move(value);
    n.backward = std::move(bwd);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

std::vector<double>& Tape::grad_buf(int idx) {
    auto& g = nodes_[idx].grad;
    if (g.empty()) {
        g.assign(static_cast<std::size_t>(nodes_[idx].value.size()), 0.0);
    }
    return g;
}

Var Tape::leaf(Tensor t) {
    bool ng = t.requires_grad;
    return push(std::move(t), ng, nullptr);
}

Var Tape::constant(Tensor t) {
    t.requires_grad = false;
    return push(std::move(t), false, nullptr);
}

Tensor Tape::grad(Var v) const {
    const Node& n = nodes_[v.idx];
    Tensor g(n.value.rows(), n.value.cols());
    if (!n.grad.empty()) {
        g.data = n.grad;
    }
    return g;
}

void Tape::backward(Var out) {
    const Tensor& o = nodes_[out.idx].value;
    if (o.size() != 1) {
        throw DimensionError("backward: output must be scalar, got " + o.shape_str());
    }
    grad_buf(out.idx)[0] = 1.0;
    for (int i = out.idx; i >= 0; --i) {
        Node& n = nodes_[i];
        if (n.needs_grad && !n.grad.empty() && n.backward) {
            n.backward(*this);
        }
    }
}

void Tape::check_finite(const Tensor& t, const char* op) const {
    for (double v : t.data) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string(op) + ": non-finite value in output");
        }
    }
}

Var Tape::matmul(Var a, Var b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    if (A.cols() != B.rows()) {
        throw DimensionError("matmul: inner dimensions disagree, " + A.shape_str() + " vs " +
                             B.shape_str());
    }
    Tensor C(A.rows(), B.cols());
    for (std::int64_t i = 0; i < A.rows(); ++i) {
        for (std::int64_t k = 0; k < A.cols(); ++k) {
            double av = A.at(i, k);
            if (av == 0.0) continue;
            for (std::int64_t j = 0; j < B.cols(); ++j) {
                C.at(i, j) += av * B.at(k, j);
            }
        }
    }
    int ai = a.idx, bi = b.idx;
    Var out = push(std::move(C), needs(a) || needs(b), nullptr);
    int oi = out.idx;
    nodes_[oi].backward = [ai, bi, oi](Tape& t) {
        const Tensor& A = t.nodes_[ai].value;
        const Tensor& B = t.nodes_[bi].value;
        const auto& go = t.nodes_[oi].grad;
        if (t.nodes_[ai].needs_grad) {
            auto& ga = t.grad_buf(ai);
            for (std::int64_t i = 0; i < A.rows(); ++i) {
                for (std::int64_t j = 0; j < B.cols(); ++j) {
                    double g = go[static_cast<std::size_t>(i * B.cols() + j)];
                    if (g == 0.0) continue;
                    for (std::int64_t k = 0; k < A.cols(); ++k) {
                        ga[static_cast<std::size_t>(i * A.cols() + k)] += g * B.at(k, j);
                    }
                }
            }
        }
        if (t.nodes_[bi].needs_grad) {
            auto& gb = t.grad_buf(bi);
            for (std::int64_t i = 0; i < A.rows(); ++i) {
                for (std::int64_t k = 0; k < A.cols(); ++k) {
                    double av = A.at(i, k);
                    if (av == 0.0) continue;
                    for (std::int64_t j = 0; j < B.cols(); ++j) {
                        gb[static_cast<std::size_t>(k * B.cols() + j)] +=
                            av * go[static_cast<std::size_t>(i * B.cols() + j)];
                    }
                }
            }
        }
    };
    return out;
}

Var Tape::add(Var a, Var b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    if (!A.same_shape(B)) {
        throw DimensionError("add: shape mismatch " + A.shape_str() + " vs " + B.shape_str());
    }
    Tensor C = A;
    for (std::size_t i = 0; i < C.data.size(); ++i) C.data[i] += B.data[i];
    int ai = a.idx, bi = b.idx;
    Var out = push(std::move(C), needs(a) || needs(b), nullptr);
    int oi = out.idx;
    nodes_[oi].backward = [ai, bi, oi](Tape& t) {
        const auto& go = t.nodes_[oi].grad;
        if (t.nodes_[ai].needs_grad) {
            auto& ga = t.grad_buf(ai);
            for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
        }
        if (t.nodes_[bi].needs_grad) {
            auto& gb = t.grad_buf(bi);
            for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
        }
    };
    return out;
}

Var Tape::sub(Var a, Var b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    if (!A.same_shape(B)) {
        throw DimensionError("sub: shape mismatch " + A.shape_str() + " vs " + B.shape_str());
    }
    Tensor C = A;
    for (std::size_t i = 0; i < C.data.size(); ++i) C.data[i] -= B.data[i];
    int ai = a.idx, bi = b.idx;
    Var out = push(std::move(C), needs(a) || needs(b), nullptr);
    int oi = out.idx;
    nodes_[oi].backward = [ai, bi, oi](Tape& t) {
        const auto& go = t.nodes_[oi].grad;
        if (t.nodes_[ai].needs_grad) {
            auto& ga = t.grad_buf(ai);
            for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
        }
        if (t.nodes_[bi].needs_grad) {
            auto& gb = t.grad_buf(bi);
            for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
        }
    };
    return out;
}

Var Tape::mul(Var a, Var b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    if (!A.same_shape(B)) {
        throw DimensionError("mul: shape mismatch " + A.shape_str() + " vs " + B.shape_str());
    }
    Tensor C = A;
    for (std::size_t i = 0; i < C.data.size(); ++i) C.data[i] *= B.data[i];
    int ai = a.idx, bi = b.idx;
    Var out = push(std::move(C), needs(a) || needs(b), nullptr);
    int oi = out.idx;
    nodes_[oi].backward = [ai, bi, oi](Tape& t) {
        const auto& go = t.nodes_[oi].grad;
        const Tensor& A = t.nodes_[ai].value;
        const Tensor& B = t.nodes_[bi].value;
        if (t.nodes_[ai].needs_grad) {
            auto& ga = t.grad_buf(ai);
            for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * B.data[i];
        }
        if (t.nodes_[bi].needs_grad) {
            auto& gb = t.grad_buf(bi);
            for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * A.data[i];
        }
    };
    return out;
}

Var Tape::add_rowvec(Var x, Var b) {
    const Tensor& X = val(x);
    const Tensor& B = val(b);
    if (B.rows() != 1 || B.cols() != X.cols()) {
        throw DimensionError("add_rowvec: bias " + B.shape_str() + " vs input " + X.shape_str());
    }
    Tensor C = X;
    for (std::int64_t i = 0; i < C.rows(); ++i) {
        for (std::int64_t j = 0; j < C.cols(); ++j) C.at(i, j) += B.at(0, j);
    }
    int xi = x.idx, bi = b.idx;
    Var out = push(std::move(C), needs(x) || needs(b), nullptr);
    int oi = out.idx;
    nodes_[oi].backward = [xi, bi, oi](Tape& t) {
        const auto& go = t.nodes_[oi].grad;
        const Tensor& X = t.nodes_[xi].value;
        if (t.nodes_[xi].needs_grad) {
            auto& gx = t.grad_buf(xi);
            for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
        }
        if (t.nodes_[bi].needs_grad) {
            auto& gb = t.grad_buf(bi);
            for (std::int64_t i = 0; i < X.rows(); ++i) {
                for (std::int64_t j = 0; j < X.cols(); ++j) {
                    gb[static_cast<std::size_t>(j)] += go[static_cast<std::size_t>(i * X.cols() + j)];
                }
            }
        }
    };
    return out;
}

Var Tape::relu(Var x) {
    Tensor C = val(x);
    for (double& v : C.data) v = v > 0.0 ? v : 0.0;
    int xi = x.idx;
    Var out = push(std::move(C), needs(x), nullptr);
    int oi = out.idx;
    nodes_[oi].backward = [xi, oi](Tape& t) {
        if (!t.nodes_[xi].needs_grad) return;
        const auto& go = t.nodes_[oi].grad;
        const Tensor& X = t.nodes_[xi].value;
        auto& gx = t.grad_buf(xi);
        for (std::size_t i = 0; i < go.size(); ++i) {
            if (X.data[i] > 0.0) gx[i] += go[i];
        }
    };
    return out;
}

Var Tape::sigmoid(Var x) {
    Tensor C = val(x);
    for (double& v : C.data) {
        if (v >= 0.0) {
            v = 1.0 / (1.0 + std::exp(-v));
        } else {
            double e = std::exp(v);
            v = e / (1.0 + e);
        }
    }
    int xi = x.idx;
    Var out = push(std::move(C), needs(x), nullptr);
    int oi = out.idx;
    nodes_[oi].backward = [xi, oi](Tape& t) {
        if (!t.nodes_[xi].needs_grad) return;
        const auto& go = t.nodes_[oi].grad;
        const Tensor& Y = t.nodes_[oi].value;
        auto& gx = t.grad_buf(xi);
        for (std::size_t i = 0; i < go.size(); ++i) {
            gx[i] += go[i] * Y.data[i] * (1.0 - Y.data[i]);
        }
    };
    return out;
}

Var Tape::softmax_rows(Var x, const Tensor* mask) {
    const Tensor& X = val(x);
    if (mask && !mask->same_shape(X)) {
        throw DimensionError("softmax_rows: mask " + mask->shape_str() + " vs input " +
                             X.shape_str());
    }
    Tensor C(X.rows(), X.cols());
    for (std::int64_t i = 0; i < X.rows(); ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::int64_t j = 0; j < X.cols(); ++j) {
            if (!mask || mask->at(i, j) != 0.0) mx = std::max(mx, X.at(i, j));
        }
        if (!std::isfinite(mx)) {
            throw NumericError("softmax_rows: fully masked row " + std::to_string(i));
        }
        double sum = 0.0;
        for (std::int64_t j = 0; j < X.cols(); ++j) {
            if (!mask || mask->at(i, j) != 0.0) {
                double e = std::exp(X.at(i, j) - mx);
                C.at(i, j) = e;
                sum += e;
            }
        }
        for (std::int64_t j = 0; j < X.cols(); ++j) C.at(i, j) /= sum;
    }
    int xi = x.idx;
    Var out = push(std::move(C), needs(x), nullptr);
    int oi = out.idx;
    nodes_[oi].backward = [xi, oi](Tape& t) {
        if (!t.nodes_[xi].needs_grad) return;
        const auto& go = t.nodes_[oi].grad;
        const Tensor& Y = t.nodes_[oi].value;
        auto& gx = t.grad_buf(xi);
        for (std::int64_t i = 0; i < Y.rows(); ++i) {
            double dot = 0.0;
            for (std::int64_t j = 0; j < Y.cols(); ++j) {
                dot += go[static_cast<std::size_t>(i * Y.cols() + j)] * Y.at(i, j);
            }
            for (std::int64_t j = 0; j < Y.cols(); ++j) {
                gx[static_cast<std::size_t>(i * Y.cols() + j)] +=
                    Y.at(i, j) * (go[static_cast<std::size_t>(i * Y.cols() + j)] - dot);
            }
        }
    };
    return out;
}

Var Tape::log_softmax_rows(Var x, const Tensor* mask) {
    const Tensor& X = val(x);
    if (mask && !mask->same_shape(X)) {
        throw DimensionError("log_softmax_rows: mask " + mask->shape_str() + " vs input " +
                             X.shape_str());
    }
    Tensor C(X.rows(), X.cols());
    Tensor M = mask ? *mask : Tensor::full(X.rows(), X.cols(), 1.0);
    for (std::int64_t i = 0; i < X.rows(); ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::int64_t j = 0; j < X.cols(); ++j) {
            if (M.at(i, j) != 0.0) mx = std::max(mx, X.at(i, j));
        }
        if (!std::isfinite(mx)) {
            throw NumericError("log_softmax_rows: fully masked row " + std::to_string(i));
        }
        double sum = 0.0;
        for (std::int64_t j = 0; j < X.cols(); ++j) {
            if (M.at(i, j) != 0.0) sum += std::exp(X.at(i, j) - mx);
        }
        double lse = mx + std::log(sum);
        for (std::int64_t j = 0; j < X.cols(); ++j) {
            C.at(i, j) = M.at(i, j) != 0.0 ? X.at(i, j) - lse
                                           : -std::numeric_limits<double>::infinity();
        }
    }
    int xi = x.idx;
    Var out = push(std::move(C), needs(x), nullptr);
    int oi = out.idx;
    nodes_[oi].backward = [xi, oi, M](Tape& t) {
        if (!t.nodes_[xi].needs_grad) return;
        const auto& go = t.nodes_[oi].grad;
        const Tensor& Y = t.nodes_[oi].value;
        auto& gx = t.grad_buf(xi);
        for (std::int64_t i = 0; i < Y.rows(); ++i) {
            double gsum = 0.0;
            for (std::int64_t j = 0; j < Y.cols(); ++j) {
                if (M.at(i, j) != 0.0) gsum += go[static_cast<std::size_t>(i * Y.cols() + j)];
            }
            for (std::int64_t j = 0; j < Y.cols(); ++j) {
                if (M.at(i, j) == 0.0) continue;
                double p = std::exp(Y.at(i, j));
                gx[static_cast<std::size_t>(i * Y.cols() + j)] +=
                    go[static_cast<std::size_t>(i * Y.cols() + j)] - p * gsum;
            }
        }
    };
    return out;
}

Var Tape::layer_norm(Var x, Var gain, Var bias) {
    const Tensor& X = val(x);
    const Tensor& G = val(gain);
    const Tensor& B = val(bias);
    if (G.rows() != 1 || G.cols() != X.cols() || B.rows() != 1 || B.cols() != X.cols()) {
        throw DimensionError("layer_norm: gain/bias must be 1x" + std::to_string(X.cols()));
    }
    const double eps = 1e-5;
    Tensor C(X.rows(), X.cols());
    std::vector<double> means(static_cast<std::size_t>(X.rows()));
    std::vector<double> istds(static_cast<std::size_t>(X.rows()));
    for (std::int64_t i = 0; i < X.rows(); ++i) {
        double m = 0.0;
        for (std::int64_t j = 0; j < X.cols(); ++j) m += X.at(i, j);
        m /= static_cast<double>(X.cols());
        double v = 0.0;
        for (std::int64_t j = 0; j < X.cols(); ++j) {
            double d = X.at(i, j) - m;
            v += d * d;
        }
        v /= static_cast<double>(X.cols());
        double istd = 1.0 / std::sqrt(v + eps);
        means[static_cast<std::size_t>(i)] = m;
        istds[static_cast<std::size_t>(i)] = istd;
        for (std::int64_t j = 0; j < X.cols(); ++j) {
            C.at(i, j) = (X.at(i, j) - m) * istd * G.at(0, j) + B.at(0, j);
        }
    }
    int xi = x.idx, gi = gain.idx, bi = bias.idx;
    Var out = push(std::move(C), needs(x) || needs(gain) || needs(bias), nullptr);
    int oi = out.idx;
    nodes_[oi].backward = [xi, gi, bi, oi, means, istds](Tape& t) {
        const auto& go = t.nodes_[oi].grad;
        const Tensor& X = t.nodes_[xi].value;
        const Tensor& G = t.nodes_[gi].value;
        std::int64_t R = X.rows(), Cc = X.cols();
        for (std::int64_t i = 0; i < R; ++i) {
            double m = means[static_cast<std::size_t>(i)];
            double istd = istds[static_cast<std::size_t>(i)];
            if (t.nodes_[gi].needs_grad || t.nodes_[bi].needs_grad) {
                for (std::int64_t j = 0; j < Cc; ++j) {
                    double g = go[static_cast<std::size_t>(i * Cc + j)];
                    double xhat = (X.at(i, j) - m) * istd;
                    if (t.nodes_[gi].needs_grad) {
                        t.grad_buf(gi)[static_cast<std::size_t>(j)] += g * xhat;
                    }
                    if (t.nodes_[bi].needs_grad) {
                        t.grad_buf(bi)[static_cast<std::size_t>(j)] += g;
                    }
                }
            }
            if (t.nodes_[xi].needs_grad) {
                auto& gx = t.grad_buf(xi);
                // d xhat_j = istd * (dy_j*g_j - mean_k(dy*g) - xhat_j * mean_k(dy*g*xhat))
                double s1 = 0.0, s2 = 0.0;
                for (std::int64_t j = 0; j < Cc; ++j) {
                    double gy = go[static_cast<std::size_t>(i * Cc + j)] * G.at(0, j);
                    double xhat = (X.at(i, j) - m) * istd;
                    s1 += gy;
                    s2 += gy * xhat;
                }
                double n = static_cast<double>(Cc);
                for (std::int64_t j = 0; j < Cc; ++j) {
                    double gy = go[static_cast<std::size_t>(i * Cc + j)] * G.at(0, j);
                    double xhat = (X.at(i, j) - m) * istd;
                    gx[static_cast<std::size_t>(i * Cc + j)] +=
                        istd * (gy - s1 / n - xhat * s2 / n);
                }
            }
        }
    };
    return out;
}

Var Tape::concat_cols(Var a, Var b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    if (A.rows() != B.rows()) {
        throw DimensionError("concat_cols: row mismatch " + A.shape_str() + " vs " +
                             B.shape_str());
    }
    Tensor C(A.rows(), A.cols() + B.cols());
    for (std::int64_t i = 0; i < A.rows(); ++i) {
        for (std::int64_t j = 0; j < A.cols(); ++j) C.at(i, j) = A.at(i, j);
        for (std::int64_t j = 0; j < B.cols(); ++j) C.at(i, A.cols() + j) = B.at(i, j);
    }
    int ai = a.idx, bi = b.idx;
    Var out = push(std::move(C), needs(a) || needs(b), nullptr);
    int oi = out.idx;
    nodes_[oi].backward = [ai, bi, oi](Tape& t) {
        const auto& go = t.nodes_[oi].grad;
        const Tensor& A = t.nodes_[ai].value;
        const Tensor& B = t.nodes_[bi].value;
        std::int64_t tc = A.cols() + B.cols();
        if (t.nodes_[ai].needs_grad) {
            auto& ga = t.grad_buf(ai);
            for (std::int64_t i = 0; i < A.rows(); ++i) {
                for (std::int64_t j = 0; j < A.cols(); ++j) {
                    ga[static_cast<std::size_t>(i * A.cols() + j)] +=
                        go[static_cast<std::size_t>(i * tc + j)];
                }
            }
        }
        if (t.nodes_[bi].needs_grad) {
            auto& gb = t.grad_buf(bi);
            for (std::int64_t i = 0; i < B.rows(); ++i) {
                for (std::int64_t j = 0; j < B.cols(); ++j) {
                    gb[static_cast<std::size_t>(i * B.cols() + j)] +=
                        go[static_cast<std::size_t>(i * tc + A.cols() + j)];
                }
            }
        }
    };
    return out;
}

Var Tape::concat_rows(Var a, Var b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    if (A.cols() != B.cols()) {
        throw DimensionError("concat_rows: col mismatch " + A.shape_str() + " vs " +
                             B.shape_str());
    }
    Tensor C(A.rows() + B.rows(), A.cols());
    std::copy(A.data.begin(), A.data.end(), C.data.begin());
    std::copy(B.data.begin(), B.data.end(), C.data.begin() + A.data.size());
    int ai = a.idx, bi = b.idx;
    Var out = push(std::move(C), needs(a) || needs(b), nullptr);
    int oi = out.idx;
    nodes_[oi].backward = [ai, bi, oi](Tape& t) {
        const auto& go = t.nodes_[oi].grad;
        std::size_t na = t.nodes_[ai].value.data.size();
        if (t.nodes_[ai].needs_grad) {
            auto& ga = t.grad_buf(ai);
            for (std::size_t i = 0; i < na; ++i) ga[i] += go[i];
        }
        if (t.nodes_[bi].needs_grad) {
            auto& gb = t.grad_buf(bi);
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[na + i];
        }
    };
    return out;
}

Var Tape::slice_cols(Var x, std::int64_t start, std::int64_t len) {
    const Tensor& X = val(x);
    if (start < 0 || start + len > X.cols()) {
        throw DimensionError("slice_cols: range out of bounds for " + X.shape_str());
    }
    Tensor C(X.rows(), len);
    for (std::int64_t i = 0; i < X.rows(); ++i) {
        for (std::int64_t j = 0; j < len; ++j) C.at(i, j) = X.at(i, start + j);
    }
    int xi = x.idx;
    Var out = push(std::move(C), needs(x), nullptr);
    int oi = out.idx;
    nodes_[oi].backward = [xi, oi, start, len](Tape& t) {
        if (!t.nodes_[xi].needs_grad) return;
        const auto& go = t.nodes_[oi].grad;
        const Tensor& X = t.nodes_[xi].value;
        auto& gx = t.grad_buf(xi);
        for (std::int64_t i = 0; i < X.rows(); ++i) {
            for (std::int64_t j = 0; j < len; ++j) {
                gx[static_cast<std::size_t>(i * X.cols() + start + j)] +=
                    go[static_cast<std::size_t>(i * len + j)];
            }
        }
    };
    return out;
}

Var Tape::slice_rows(Var x, std::int64_t start, std::int64_t len) {
    const Tensor& X = val(x);
    if (start < 0 || start + len > X.rows()) {
        throw DimensionError("slice_rows: range out of bounds for " + X.shape_str());
    }
    Tensor C(len, X.cols());
    for (std::int64_t i = 0; i < len; ++i) {
        for (std::int64_t j = 0; j < X.cols(); ++j) C.at(i, j) = X.at(start + i, j);
    }
    int xi = x.idx;
    Var out = push(std::move(C), needs(x), nullptr);
    int oi = out.idx;
    nodes_[oi].backward = [xi, oi, start, len](Tape& t) {
        if (!t.nodes_[xi].needs_grad) return;
        const auto& go = t.nodes_[oi].grad;
        const Tensor& X = t.nodes_[xi].value;
        auto& gx = t.grad_buf(xi);
        for (std::int64_t i = 0; i < len; ++i) {
            for (std::int64_t j = 0; j < X.cols(); ++j) {
                gx[static_cast<std::size_t>((start + i) * X.cols() + j)] +=
                    go[static_cast<std::size_t>(i * X.cols() + j)];
            }
        }
    };
    return out;
}

Var Tape::transpose(Var x) {
    const Tensor& X = val(x);
    Tensor C(X.cols(), X.rows());
    for (std::int64_t i = 0; i < X.rows(); ++i) {
        for (std::int64_t j = 0; j < X.cols(); ++j) C.at(j, i) = X.at(i, j);
    }
    int xi = x.idx;
    Var out = push(std::move(C), needs(x), nullptr);
    int oi = out.idx;
    nodes_[oi].backward = [xi, oi](Tape& t) {
        if (!t.nodes_[xi].needs_grad) return;
        const auto& go = t.nodes_[oi].grad;
        const Tensor& X = t.nodes_[xi].value;
        auto& gx = t.grad_buf(xi);
        for (std::int64_t i = 0; i < X.rows(); ++i) {
            for (std::int64_t j = 0; j < X.cols(); ++j) {
                gx[static_cast<std::size_t>(i * X.cols() + j)] +=
                    go[static_cast<std::size_t>(j * X.rows() + i)];
            }
        }
    };
    return out;
}

Var Tape::mean_rows(Var x) {
    const Tensor& X = val(x);
    if (X.rows() < 1) throw DimensionError("mean_rows: empty input");
    Tensor C(1, X.cols());
    for (std::int64_t i = 0; i < X.rows(); ++i) {
        for (std::int64_t j = 0; j < X.cols(); ++j) C.at(0, j) += X.at(i, j);
    }
    for (std::int64_t j = 0; j < X.cols(); ++j) C.at(0, j) /= static_cast<double>(X.rows());
    int xi = x.idx;
    Var out = push(std::move(C), needs(x), nullptr);
    int oi = out.idx;
    nodes_[oi].backward = [xi, oi](Tape& t) {
        if (!t.nodes_[xi].needs_grad) return;
        const auto& go = t.nodes_[oi].grad;
        const Tensor& X = t.nodes_[xi].value;
        auto& gx = t.grad_buf(xi);
        double inv = 1.0 / static_cast<double>(X.rows());
        for (std::int64_t i = 0; i < X.rows(); ++i) {
            for (std::int64_t j = 0; j < X.cols(); ++j) {
                gx[static_cast<std::size_t>(i * X.cols() + j)] +=
                    go[static_cast<std::size_t>(j)] * inv;
            }
        }
    };
    return out;
}

Var Tape::max_rows(Var x, std::vector<std::int64_t>* argmax) {
    const Tensor& X = val(x);
    if (X.cols() < 1) throw DimensionError("max_rows: empty rows");
    Tensor C(X.rows(), 1);
    std::vector<std::int64_t> arg(static_cast<std::size_t>(X.rows()), 0);
    for (std::int64_t i = 0; i < X.rows(); ++i) {
        double best = X.at(i, 0);
        std::int64_t bj = 0;
        for (std::int64_t j = 1; j < X.cols(); ++j) {
            if (X.at(i, j) > best) {  // strict: ties keep lowest index
                best = X.at(i, j);
                bj = j;
            }
        }
        C.at(i, 0) = best;
        arg[static_cast<std::size_t>(i)] = bj;
    }
    if (argmax) *argmax = arg;
    int xi = x.idx;
    Var out = push(std::move(C), needs(x), nullptr);
    int oi = out.idx;
    nodes_[oi].backward = [xi, oi, arg](Tape& t) {
        if (!t.nodes_[xi].needs_grad) return;
        const auto& go = t.nodes_[oi].grad;
        const Tensor& X = t.nodes_[xi].value;
        auto& gx = t.grad_buf(xi);
        for (std::int64_t i = 0; i < X.rows(); ++i) {
            gx[static_cast<std::size_t>(i * X.cols() + arg[static_cast<std::size_t>(i)])] +=
                go[static_cast<std::size_t>(i)];
        }
    };
    return out;
}

Var Tape::scale_rows(Var x, Var u) {
    const Tensor& X = val(x);
    const Tensor& U = val(u);
    if (U.rows() != X.rows() || U.cols() != 1) {
        throw DimensionError("scale_rows: scale must be " + std::to_string(X.rows()) +
                             "x1, got " + U.shape_str());
    }
    Tensor C = X;
    for (std::int64_t i = 0; i < X.rows(); ++i) {
        for (std::int64_t j = 0; j < X.cols(); ++j) C.at(i, j) *= U.at(i, 0);
    }
    int xi = x.idx, ui = u.idx;
    Var out = push(std::move(C), needs(x) || needs(u), nullptr);
    int oi = out.idx;
    nodes_[oi].backward = [xi, ui, oi](Tape& t) {
        const auto& go = t.nodes_[oi].grad;
        const Tensor& X = t.nodes_[xi].value;
        const Tensor& U = t.nodes_[ui].value;
        if (t.nodes_[xi].needs_grad) {
            auto& gx = t.grad_buf(xi);
            for (std::int64_t i = 0; i < X.rows(); ++i) {
                for (std::int64_t j = 0; j < X.cols(); ++j) {
                    gx[static_cast<std::size_t>(i * X.cols() + j)] +=
                        go[static_cast<std::size_t>(i * X.cols() + j)] * U.at(i, 0);
                }
            }
        }
        if (t.nodes_[ui].needs_grad) {
            auto& gu = t.grad_buf(ui);
            for (std::int64_t i = 0; i < X.rows(); ++i) {
                double s = 0.0;
                for (std::int64_t j = 0; j < X.cols(); ++j) {
                    s += go[static_cast<std::size_t>(i * X.cols() + j)] * X.at(i, j);
                }
                gu[static_cast<std::size_t>(i)] += s;
            }
        }
    };
    return out;
}

Var Tape::dropout(Var x, double rate, bool train, std::mt19937_64& rng) {
    if (!train || rate == 0.0) {
        return x;  // eval identity, bit-exact
    }
    if (rate < 0.0 || rate >= 1.0) {
        throw NumericError("dropout: rate must be in [0,1), got " + std::to_string(rate));
    }
    const Tensor& X = val(x);
    double keep = 1.0 - rate;
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::vector<double> mask(X.data.size());
    for (auto& m : mask) m = uni(rng) < keep ? 1.0 / keep : 0.0;  // inverted scaling
    Tensor C = X;
    for (std::size_t i = 0; i < C.data.size(); ++i) C.data[i] *= mask[i];
    int xi = x.idx;
    Var out = push(std::move(C), needs(x), nullptr);
    int oi = out.idx;
    nodes_[oi].backward = [xi, oi, mask](Tape& t) {
        if (!t.nodes_[xi].needs_grad) return;
        const auto& go = t.nodes_[oi].grad;
        auto& gx = t.grad_buf(xi);
        for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * mask[i];
    };
    return out;
}

Var Tape::embedding_lookup(Var table, const std::vector<std::int64_t>& ids) {
    const Tensor& T = val(table);
    Tensor C(static_cast<std::int64_t>(ids.size()), T.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= T.rows()) {
            throw DimensionError("embedding_lookup: id " + std::to_string(ids[i]) +
                                 " out of range for table " + T.shape_str());
        }
        for (std::int64_t j = 0; j < T.cols(); ++j) {
            C.at(static_cast<std::int64_t>(i), j) = T.at(ids[i], j);
        }
    }
    int ti = table.idx;
    Var out = push(std::move(C), needs(table), nullptr);
    int oi = out.idx;
    nodes_[oi].backward = [ti, oi, ids](Tape& t) {
        if (!t.nodes_[ti].needs_grad) return;
        const auto& go = t.nodes_[oi].grad;
        const Tensor& T = t.nodes_[ti].value;
        auto& gt = t.grad_buf(ti);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            for (std::int64_t j = 0; j < T.cols(); ++j) {
                gt[static_cast<std::size_t>(ids[i] * T.cols() + j)] +=
                    go[i * static_cast<std::size_t>(T.cols()) + static_cast<std::size_t>(j)];
            }
        }
    };
    return out;
}

Var Tape::sum_all(Var x) {
    const Tensor& X = val(x);
    double s = 0.0;
    for (double v : X.data) s += v;
    int xi = x.idx;
    Var out = push(Tensor(1, 1, {s}), needs(x), nullptr);
    int oi = out.idx;
    nodes_[oi].backward = [xi, oi](Tape& t) {
        if (!t.nodes_[xi].needs_grad) return;
        double g = t.nodes_[oi].grad[0];
        auto& gx = t.grad_buf(xi);
        for (auto& v : gx) v += g;
    };
    return out;
}

Var Tape::scale(Var x, double c) {
    Tensor C = val(x);
    for (double& v : C.data) v *= c;
    int xi = x.idx;
    Var out = push(std::move(C), needs(x), nullptr);
    int oi = out.idx;
    nodes_[oi].backward = [xi, oi, c](Tape& t) {
        if (!t.nodes_[xi].needs_grad) return;
        const auto& go = t.nodes_[oi].grad;
        auto& gx = t.grad_buf(xi);
        for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * c;
    };
    return out;
}

Var Tape::scale_var(Var x, Var s) {
    const Tensor& S = val(s);
    if (S.size() != 1) throw DimensionError("scale_var: scale must be 1x1");
    Tensor C = val(x);
    double sv = S.data[0];
    for (double& v : C.data) v *= sv;
    int xi = x.idx, si = s.idx;
    Var out = push(std::move(C), needs(x) || needs(s), nullptr);
    int oi = out.idx;
    nodes_[oi].backward = [xi, si, oi](Tape& t) {
        const auto& go = t.nodes_[oi].grad;
        const Tensor& X = t.nodes_[xi].value;
        double sv = t.nodes_[si].value.data[0];
        if (t.nodes_[xi].needs_grad) {
            auto& gx = t.grad_buf(xi);
            for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * sv;
        }
        if (t.nodes_[si].needs_grad) {
            double acc = 0.0;
            for (std::size_t i = 0; i < go.size(); ++i) acc += go[i] * X.data[i];
            t.grad_buf(si)[0] += acc;
        }
    };
    return out;
}

Var Tape::pick(Var x, std::int64_t r, std::int64_t c) {
    const Tensor& X = val(x);
    if (r < 0 || r >= X.rows() || c < 0 || c >= X.cols()) {
        throw DimensionError("pick: index out of range for " + X.shape_str());
    }
    int xi = x.idx;
    Var out = push(Tensor(1, 1, {X.at(r, c)}), needs(x), nullptr);
    int oi = out.idx;
    nodes_[oi].backward = [xi, oi, r, c](Tape& t) {
        if (!t.nodes_[xi].needs_grad) return;
        const Tensor& X = t.nodes_[xi].value;
        t.grad_buf(xi)[static_cast<std::size_t>(r * X.cols() + c)] += t.nodes_[oi].grad[0];
    };
    return out;
}

Var Tape::rsub_scalar(double c, Var x) {
    Tensor C = val(x);
    for (double& v : C.data) v = c - v;
    int xi = x.idx;
    Var out = push(std::move(C), needs(x), nullptr);
    int oi = out.idx;
    nodes_[oi].backward = [xi, oi](Tape& t) {
        if (!t.nodes_[xi].needs_grad) return;
        const auto& go = t.nodes_[oi].grad;
        auto& gx = t.grad_buf(xi);
        for (std::size_t i = 0; i < go.size(); ++i) gx[i] -= go[i];
    };
    return out;
}

Var Tape::reshape(Var x, std::int64_t r, std::int64_t c) {
    const Tensor& X = val(x);
    if (r * c != X.size()) {
        throw DimensionError("reshape: cannot view " + X.shape_str() + " as " +
                             std::to_string(r) + "x" + std::to_string(c));
    }
    Tensor C(r, c, X.data);
    int xi = x.idx;
    Var out = push(std::move(C), needs(x), nullptr);
    int oi = out.idx;
    nodes_[oi].backward = [xi, oi](Tape& t) {
        if (!t.nodes_[xi].needs_grad) return;
        const auto& go = t.nodes_[oi].grad;
        auto& gx = t.grad_buf(xi);
        for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
    };
    return out;
}

Var Tape::rat_bias_scores(Var q, Var table, const IdGrid& rel) {
    const Tensor& Q = val(q);
    const Tensor& T = val(table);
    if (rel.rows != Q.rows()) {
        throw DimensionError("rat_bias_scores: relation grid rows " + std::to_string(rel.rows) +
                             " vs queries " + Q.shape_str());
    }
    Tensor C(rel.rows, rel.cols);
    for (std::int64_t i = 0; i < rel.rows; ++i) {
        for (std::int64_t j = 0; j < rel.cols; ++j) {
            int r = rel.at(i, j);
            if (r < 0 || r >= T.rows()) {
                throw DimensionError("rat_bias_scores: relation id " + std::to_string(r) +
                                     " outside vocabulary of size " + std::to_string(T.rows()));
            }
            double s = 0.0;
            for (std::int64_t k = 0; k < Q.cols(); ++k) s += Q.at(i, k) * T.at(r, k);
            C.at(i, j) = s;
        }
    }
    int qi = q.idx, ti = table.idx;
    Var out = push(std::move(C), needs(q) || needs(table), nullptr);
    int oi = out.idx;
    IdGrid relc = rel;
    nodes_[oi].backward = [qi, ti, oi, relc](Tape& t) {
        const auto& go = t.nodes_[oi].grad;
        const Tensor& Q = t.nodes_[qi].value;
        const Tensor& T = t.nodes_[ti].value;
        for (std::int64_t i = 0; i < relc.rows; ++i) {
            for (std::int64_t j = 0; j < relc.cols; ++j) {
                double g = go[static_cast<std::size_t>(i * relc.cols + j)];
                if (g == 0.0) continue;
                int r = relc.at(i, j);
                if (t.nodes_[qi].needs_grad) {
                    auto& gq = t.grad_buf(qi);
                    for (std::int64_t k = 0; k < Q.cols(); ++k) {
                        gq[static_cast<std::size_t>(i * Q.cols() + k)] += g * T.at(r, k);
                    }
                }
                if (t.nodes_[ti].needs_grad) {
                    auto& gt = t.grad_buf(ti);
                    for (std::int64_t k = 0; k < Q.cols(); ++k) {
                        gt[static_cast<std::size_t>(r * T.cols() + k)] += g * Q.at(i, k);
                    }
                }
            }
        }
    };
    return out;
}

Var Tape::rat_bias_values(Var alpha, Var table, const IdGrid& rel) {
    const Tensor& A = val(alpha);
    const Tensor& T = val(table);
    if (rel.rows != A.rows() || rel.cols != A.cols()) {
        throw DimensionError("rat_bias_values: relation grid vs attention " + A.shape_str());
    }
    Tensor C(A.rows(), T.cols());
    for (std::int64_t i = 0; i < A.rows(); ++i) {
        for (std::int64_t j = 0; j < A.cols(); ++j) {
            int r = rel.at(i, j);
            if (r < 0 || r >= T.rows()) {
                throw DimensionError("rat_bias_values: relation id " + std::to_string(r) +
                                     " outside vocabulary of size " + std::to_string(T.rows()));
            }
            double a = A.at(i, j);
            if (a == 0.0) continue;
            for (std::int64_t k = 0; k < T.cols(); ++k) C.at(i, k) += a * T.at(r, k);
        }
    }
    int ai = alpha.idx, ti = table.idx;
    Var out = push(std::move(C), needs(alpha) || needs(table), nullptr);
    int oi = out.idx;
    IdGrid relc = rel;
    nodes_[oi].backward = [ai, ti, oi, relc](Tape& t) {
        const auto& go = t.nodes_[oi].grad;
        const Tensor& A = t.nodes_[ai].value;
        const Tensor& T = t.nodes_[ti].value;
        for (std::int64_t i = 0; i < A.rows(); ++i) {
            for (std::int64_t j = 0; j < A.cols(); ++j) {
                int r = relc.at(i, j);
                if (t.nodes_[ai].needs_grad) {
                    double s = 0.0;
                    for (std::int64_t k = 0; k < T.cols(); ++k) {
                        s += go[static_cast<std::size_t>(i * T.cols() + k)] * T.at(r, k);
                    }
                    t.grad_buf(ai)[static_cast<std::size_t>(i * A.cols() + j)] += s;
                }
                if (t.nodes_[ti].needs_grad) {
                    double a = A.at(i, j);
                    if (a == 0.0) continue;
                    auto& gt = t.grad_buf(ti);
                    for (std::int64_t k = 0; k < T.cols(); ++k) {
                        gt[static_cast<std::size_t>(r * T.cols() + k)] +=
                            a * go[static_cast<std::size_t>(i * T.cols() + k)];
                    }
                }
            }
        }
    };
    return out;
}

}  // namespace shadow
