#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace shadow {

struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dense row-major 2-D array of f64. Vectors are 1xN or Nx1.
struct Tensor {
    std::vector<std::int64_t> shape;  // [rows, cols]
    std::vector<double> data;
    bool requires_grad = false;

    Tensor() : shape{0, 0} {}
    Tensor(std::int64_t r, std::int64_t c, double fill = 0.0)
        : shape{r, c}, data(static_cast<std::size_t>(r * c), fill) {}
    Tensor(std::int64_t r, std::int64_t c, std::vector<double> d)
        : shape{r, c}, data(std::move(d)) {
        if (static_cast<std::int64_t>(data.size()) != r * c) {
            throw DimensionError("Tensor: data length " + std::to_string(data.size()) +
                                 " does not match shape " + std::to_string(r) + "x" +
                                 std::to_string(c));
        }
    }

    static Tensor zeros(std::int64_t r, std::int64_t c) { return Tensor(r, c, 0.0); }
    static Tensor full(std::int64_t r, std::int64_t c, double v) { return Tensor(r, c, v); }
    static Tensor row(std::vector<double> d) {
        auto n = static_cast<std::int64_t>(d.size());
        return Tensor(1, n, std::move(d));
    }

    std::int64_t rows() const { return shape[0]; }
    std::int64_t cols() const { return shape[1]; }
    std::int64_t size() const { return rows() * cols(); }

    double& at(std::int64_t r, std::int64_t c) {
        return data[static_cast<std::size_t>(r * cols() + c)];
    }
    double at(std::int64_t r, std::int64_t c) const {
        return data[static_cast<std::size_t>(r * cols() + c)];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    std::string shape_str() const {
        return std::to_string(rows()) + "x" + std::to_string(cols());
    }
};

// Grid of small integer ids (relation labels, link tags).
struct IdGrid {
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    std::vector<int> ids;

    IdGrid() = default;
    IdGrid(std::int64_t r, std::int64_t c, int fill = 0)
        : rows(r), cols(c), ids(static_cast<std::size_t>(r * c), fill) {}

    int& at(std::int64_t r, std::int64_t c) {
        return ids[static_cast<std::size_t>(r * cols + c)];
    }
    int at(std::int64_t r, std::int64_t c) const {
        return ids[static_cast<std::size_t>(r * cols + c)];
    }
};

}  // namespace shadow
