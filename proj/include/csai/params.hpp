#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "csai/autodiff.hpp"
#include "csai/tensor.hpp"

namespace csai {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Named parameter tensors with gradient accumulators and Adam moments.
/// Declaration order is stable and defines the checkpoint layout.
class ParamStore {
public:
    struct Entry {
        std::string name;
        Tensor value;
        Tensor grad;
        Tensor m;
        Tensor v;
    };

    Tensor& add(const std::string& name, Tensor init);
    bool has(const std::string& name) const { return index_.count(name) > 0; }
    Tensor& value(const std::string& name);
    const Tensor& value(const std::string& name) const;
    Tensor& grad(const std::string& name);

    size_t size() const { return entries_.size(); }
    Entry& entry(size_t i) { return entries_[i]; }
    const Entry& entry(size_t i) const { return entries_[i]; }
    int64_t scalar_count() const;

    void zero_grads();
    /// Bias-corrected Adam update; t is the 1-based step count.
    void adam_step(const AdamConfig& cfg, int64_t t);

    void save(const std::string& path) const;
    static ParamStore load(const std::string& path);

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, size_t> index_;
};

void adam_step(ParamStore& store, double lr, double beta1, double beta2, double eps, int64_t t);

/// Puts every store entry on a tape as a grad-requiring leaf and harvests
/// the gradients back after backward().
class ParamBinding {
public:
    ParamBinding(Tape& tape, ParamStore& store);
    Var operator[](const std::string& name) const;
    /// Accumulates tape gradients into the store's grad buffers.
    void harvest() const;

private:
    Tape* tape_;
    ParamStore* store_;
    std::unordered_map<std::string, Var> vars_;
};

}  // namespace csai
