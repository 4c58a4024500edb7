#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>

#include "gnas/matrix.hpp"
#include "gnas/rng.hpp"

namespace gnas {

/// One trainable tensor with its gradient accumulator and Adam state. The moment
/// buffers and the step counter are per-entry so that path-local updates (only the
/// sampled architecture's parameters) stay well-defined.
struct Param {
    Matrix value;
    Matrix grad;
    Matrix m; // first moment
    Matrix v; // second moment
    int64_t step = 0;
    bool grad_populated = false;

    void ensure_grad() {
        if (!grad.same_shape(value)) grad = Matrix(value.rows(), value.cols());
    }
};

/// Named collection of trainable tensors. std::map keeps iteration deterministic.
struct ParamBank {
    std::map<std::string, Param> entries;

    bool has(const std::string& name) const { return entries.count(name) > 0; }

    Param& at(const std::string& name) {
        auto it = entries.find(name);
        if (it == entries.end()) throw std::runtime_error("ParamBank: no entry '" + name + "'");
        return it->second;
    }
    const Param& at(const std::string& name) const {
        auto it = entries.find(name);
        if (it == entries.end()) throw std::runtime_error("ParamBank: no entry '" + name + "'");
        return it->second;
    }

    Param& create(const std::string& name, int rows, int cols) {
        auto [it, inserted] = entries.emplace(name, Param{});
        if (!inserted) throw std::runtime_error("ParamBank: duplicate entry '" + name + "'");
        it->second.value = Matrix(rows, cols);
        return it->second;
    }

    size_t parameter_count() const {
        size_t c = 0;
        for (const auto& [name, p] : entries) c += p.value.size();
        return c;
    }

    void zero_grads() {
        for (auto& [name, p] : entries) {
            if (p.grad_populated) p.grad.fill(0.0);
            p.grad_populated = false;
        }
    }
};

struct AdamConfig {
    double lr = 0.005;
    double weight_decay = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with decoupled weight decay. Touches only entries whose gradient was
/// populated by a backward pass; their gradients are zeroed afterwards.
inline void adam_step(ParamBank& bank, const AdamConfig& cfg) {
    int updated = 0;
    for (auto& [name, p] : bank.entries) {
        if (!p.grad_populated) continue;
        ++updated;
        if (!p.m.same_shape(p.value)) {
            p.m = Matrix(p.value.rows(), p.value.cols());
            p.v = Matrix(p.value.rows(), p.value.cols());
        }
        p.step += 1;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p.step));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p.step));
        for (size_t i = 0; i < p.value.size(); ++i) {
            double g = p.grad.data()[i];
            double& m = p.m.data()[i];
            double& v = p.v.data()[i];
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            double mhat = m / bc1;
            double vhat = v / bc2;
            double& w = p.value.data()[i];
            w -= cfg.lr * cfg.weight_decay * w;
            w -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
        p.grad.fill(0.0);
        p.grad_populated = false;
    }
    if (updated == 0) throw std::runtime_error("adam_step: no gradients populated");
}

// ---------------------------------------------------------------------------
// Binary serialization: header (magic, version, entry count), then per entry the
// name, shape, and row-major 64-bit floats. Little-endian throughout.
// ---------------------------------------------------------------------------

namespace bankio {

constexpr char kMagic[8] = {'G', 'N', 'A', 'S', 'B', 'N', 'K', '\0'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("bank file truncated");
    return v;
}

} // namespace bankio

inline void save_bank(const ParamBank& bank, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write bank file: " + path);
    out.write(bankio::kMagic, sizeof(bankio::kMagic));
    bankio::write_pod(out, bankio::kVersion);
    bankio::write_pod(out, static_cast<uint64_t>(bank.entries.size()));
    for (const auto& [name, p] : bank.entries) {
        bankio::write_pod(out, static_cast<uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        bankio::write_pod(out, static_cast<uint32_t>(p.value.rows()));
        bankio::write_pod(out, static_cast<uint32_t>(p.value.cols()));
        out.write(reinterpret_cast<const char*>(p.value.data().data()),
                  static_cast<std::streamsize>(p.value.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("write error on bank file: " + path);
}

inline ParamBank load_bank(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open bank file: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, bankio::kMagic, sizeof(magic)) != 0)
        throw std::runtime_error("not a bank file: " + path);
    auto version = bankio::read_pod<uint32_t>(in);
    if (version != bankio::kVersion)
        throw std::runtime_error("unsupported bank version " + std::to_string(version));
    auto count = bankio::read_pod<uint64_t>(in);
    ParamBank bank;
    for (uint64_t e = 0; e < count; ++e) {
        auto name_len = bankio::read_pod<uint32_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        auto rows = bankio::read_pod<uint32_t>(in);
        auto cols = bankio::read_pod<uint32_t>(in);
        Param& p = bank.create(name, static_cast<int>(rows), static_cast<int>(cols));
        in.read(reinterpret_cast<char*>(p.value.data().data()),
                static_cast<std::streamsize>(p.value.size() * sizeof(double)));
        if (!in) throw std::runtime_error("bank file truncated: " + path);
    }
    return bank;
}

inline uint64_t bank_checksum(const ParamBank& bank) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, p] : bank.entries) {
        h = fnv1a64(name, h);
        int shape[2] = {p.value.rows(), p.value.cols()};
        h = fnv1a64(shape, sizeof(shape), h);
        h = fnv1a64(p.value.data().data(), p.value.size() * sizeof(double), h);
    }
    return h;
}

} // namespace gnas
