#include "csai/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace csai {

namespace {
constexpr char kMagic[8] = {'C', 'S', 'A', 'I', 'P', 'R', 'M', '1'};

void write_u64_le(std::ostream& os, uint64_t v) {
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(buf, 8);
}

uint64_t read_u64_le(std::istream& is) {
    unsigned char buf[8];
    is.read(reinterpret_cast<char*>(buf), 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
    return v;
}

void write_f64_le(std::ostream& os, double d) {
    write_u64_le(os, std::bit_cast<uint64_t>(d));
}

double read_f64_le(std::istream& is) {
    return std::bit_cast<double>(read_u64_le(is));
}
}  // namespace

Tensor& ParamStore::add(const std::string& name, Tensor init) {
    if (has(name)) throw std::invalid_argument("ParamStore::add: duplicate parameter " + name);
    Entry e;
    e.name = name;
    e.grad = Tensor::zeros(init.shape);
    e.m = Tensor::zeros(init.shape);
    e.v = Tensor::zeros(init.shape);
    e.value = std::move(init);
    entries_.push_back(std::move(e));
    index_[name] = entries_.size() - 1;
    return entries_.back().value;
}

Tensor& ParamStore::value(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("ParamStore: unknown parameter " + name);
    return entries_[it->second].value;
}

const Tensor& ParamStore::value(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("ParamStore: unknown parameter " + name);
    return entries_[it->second].value;
}

Tensor& ParamStore::grad(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("ParamStore: unknown parameter " + name);
    return entries_[it->second].grad;
}

int64_t ParamStore::scalar_count() const {
    int64_t n = 0;
    for (const Entry& e : entries_) n += e.value.numel();
    return n;
}

void ParamStore::zero_grads() {
    for (Entry& e : entries_)
        std::fill(e.grad.data.begin(), e.grad.data.end(), 0.0);
}

void ParamStore::adam_step(const AdamConfig& cfg, int64_t t) {
    if (t < 1) throw std::invalid_argument("adam_step: t must be >= 1");
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (Entry& e : entries_) {
        for (size_t i = 0; i < e.value.data.size(); ++i) {
            const double g = e.grad.data[i];
            e.m.data[i] = cfg.beta1 * e.m.data[i] + (1.0 - cfg.beta1) * g;
            e.v.data[i] = cfg.beta2 * e.v.data[i] + (1.0 - cfg.beta2) * g * g;
            const double mhat = e.m.data[i] / bc1;
            const double vhat = e.v.data[i] / bc2;
            e.value.data[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

void adam_step(ParamStore& store, double lr, double beta1, double beta2, double eps, int64_t t) {
    store.adam_step(AdamConfig{lr, beta1, beta2, eps}, t);
}

void ParamStore::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("ParamStore::save: cannot open " + path);
    nlohmann::ordered_json header;
    header["params"] = nlohmann::ordered_json::array();
    for (const Entry& e : entries_) {
        nlohmann::ordered_json p;
        p["name"] = e.name;
        p["shape"] = e.value.shape;
        header["params"].push_back(p);
    }
    const std::string hs = header.dump();
    os.write(kMagic, 8);
    write_u64_le(os, hs.size());
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const Entry& e : entries_)
        for (double d : e.value.data) write_f64_le(os, d);
    if (!os) throw std::runtime_error("ParamStore::save: write failed for " + path);
}

ParamStore ParamStore::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("ParamStore::load: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("ParamStore::load: bad magic in " + path);
    const uint64_t hlen = read_u64_le(is);
    std::string hs(hlen, '\0');
    is.read(hs.data(), static_cast<std::streamsize>(hlen));
    nlohmann::json header = nlohmann::json::parse(hs);
    ParamStore store;
    for (const auto& p : header.at("params")) {
        std::vector<int64_t> shape = p.at("shape").get<std::vector<int64_t>>();
        Tensor t = Tensor::zeros(shape);
        for (double& d : t.data) d = read_f64_le(is);
        store.add(p.at("name").get<std::string>(), std::move(t));
    }
    if (!is) throw std::runtime_error("ParamStore::load: truncated file " + path);
    return store;
}

ParamBinding::ParamBinding(Tape& tape, ParamStore& store) : tape_(&tape), store_(&store) {
    for (size_t i = 0; i < store.size(); ++i) {
        const auto& e = store.entry(i);
        vars_[e.name] = tape.leaf(e.value, /*requires_grad=*/true);
    }
}

Var ParamBinding::operator[](const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw std::out_of_range("ParamBinding: unknown parameter " + name);
    return it->second;
}

void ParamBinding::harvest() const {
    for (size_t i = 0; i < store_->size(); ++i) {
        auto& e = store_->entry(i);
        Tensor g = tape_->grad(vars_.at(e.name));
        for (size_t j = 0; j < g.data.size(); ++j) e.grad.data[j] += g.data[j];
    }
}

}  // namespace csai
