#include "csai/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace csai {

int64_t shape_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t s : shape) n *= s;
    return n;
}

Tensor::Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
}

int64_t Tensor::numel() const { return static_cast<int64_t>(data.size()); }

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
}

Tensor Tensor::zeros(std::vector<int64_t> s) { return Tensor(std::move(s)); }

Tensor Tensor::full(std::vector<int64_t> s, double v) {
    Tensor t(std::move(s));
    for (double& x : t.data) x = v;
    return t;
}

Tensor Tensor::from(std::vector<int64_t> s, std::vector<double> values) {
    Tensor t;
    t.shape = std::move(s);
    if (static_cast<int64_t>(values.size()) != shape_numel(t.shape))
        throw std::invalid_argument("Tensor::from: data length does not match shape");
    t.data = std::move(values);
    return t;
}

Tensor Tensor::uniform(std::vector<int64_t> s, double bound, std::mt19937_64& rng) {
    Tensor t(std::move(s));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& x : t.data) x = dist(rng);
    return t;
}

}  // namespace csai
