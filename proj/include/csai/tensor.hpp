#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string>
#include <vector>

namespace csai {

/// Dense row-major tensor of doubles. Rank is dynamic (1..4 in practice).
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> s);

    int64_t numel() const;
    int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(shape.size()); }

    double& operator()(int64_t i) { return data[static_cast<size_t>(i)]; }
    double operator()(int64_t i) const { return data[static_cast<size_t>(i)]; }
    double& operator()(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
    double operator()(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * shape[1] + j)]; }
    double& operator()(int64_t i, int64_t j, int64_t k) {
        return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
    }
    double operator()(int64_t i, int64_t j, int64_t k) const {
        return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
    }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    bool all_finite() const;
    std::string shape_str() const;

    static Tensor zeros(std::vector<int64_t> s);
    static Tensor full(std::vector<int64_t> s, double v);
    static Tensor from(std::vector<int64_t> s, std::vector<double> values);
    /// Uniform in [-bound, bound].
    static Tensor uniform(std::vector<int64_t> s, double bound, std::mt19937_64& rng);
};

int64_t shape_numel(const std::vector<int64_t>& shape);

}  // namespace csai
