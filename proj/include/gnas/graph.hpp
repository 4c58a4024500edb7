#pragma once

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gnas/matrix.hpp"
#include "gnas/rng.hpp"

namespace gnas {

enum class Split : uint8_t { None = 0, Train = 1, Val = 2, Test = 3 };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
        default: return "none";
    }
}

inline Split split_from_name(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    if (s == "none") return Split::None;
    throw std::runtime_error("unknown split tag '" + s + "'");
}

/// Undirected, unweighted node-classification graph. Adjacency is kept both as a
/// sorted unique edge list (i < j) and as a dense symmetric 0/1 matrix with zero
/// diagonal. Self-loops are a forward-pass concept and are never stored here.
/// Immutable after construction; share freely across threads.
struct Graph {
    int n = 0;
    int feature_dim = 0;
    int num_classes = 0;
    std::vector<std::pair<int, int>> edges; // i < j, sorted, unique
    Matrix features;                        // n x feature_dim
    std::vector<int> labels;                // values in [0, num_classes)
    std::vector<Split> split;

    Matrix dense_adj;        // derived
    std::vector<int> degree; // derived
    uint64_t adj_hash = 0;   // derived, content hash of dense_adj

    int num_edges() const { return static_cast<int>(edges.size()); }

    std::vector<int> nodes_in(Split s) const {
        std::vector<int> out;
        for (int i = 0; i < n; ++i)
            if (split[i] == s) out.push_back(i);
        return out;
    }
    std::vector<int> train_nodes() const { return nodes_in(Split::Train); }
    std::vector<int> val_nodes() const { return nodes_in(Split::Val); }
    std::vector<int> test_nodes() const { return nodes_in(Split::Test); }

    /// Rebuild the derived members from `edges`. Call after any edit to the edge list.
    void finalize() {
        std::sort(edges.begin(), edges.end());
        edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
        dense_adj = Matrix(n, n);
        degree.assign(n, 0);
        for (auto [u, v] : edges) {
            if (u == v || u < 0 || v < 0 || u >= n || v >= n)
                throw std::runtime_error("Graph: invalid edge (" + std::to_string(u) + "," +
                                         std::to_string(v) + ")");
            dense_adj(u, v) = 1.0;
            dense_adj(v, u) = 1.0;
            ++degree[u];
            ++degree[v];
        }
        adj_hash = matrix_content_hash(dense_adj);
    }

    void validate() const {
        if (static_cast<int>(labels.size()) != n || static_cast<int>(split.size()) != n)
            throw std::runtime_error("Graph: label/split length != n");
        if (features.rows() != n || features.cols() != feature_dim)
            throw std::runtime_error("Graph: feature matrix shape mismatch");
        for (int i = 0; i < n; ++i)
            if (labels[i] < 0 || labels[i] >= num_classes)
                throw std::runtime_error("Graph: label id " + std::to_string(labels[i]) +
                                         " out of range at node " + std::to_string(i));
        if (!features.all_finite()) throw std::runtime_error("Graph: non-finite feature value");
    }

    static uint64_t matrix_content_hash(const Matrix& m) {
        uint64_t h = fnv1a64(&m, 0); // seed
        int shape[2] = {m.rows(), m.cols()};
        h = fnv1a64(shape, sizeof(shape), h);
        return fnv1a64(m.data().data(), m.data().size() * sizeof(double), h);
    }
};

/// Clone `g` with a different adjacency (features/labels/splits preserved).
/// Used to evaluate and retrain on perturbed graphs.
inline Graph with_adjacency(const Graph& g, const Matrix& adj) {
    if (adj.rows() != g.n || adj.cols() != g.n)
        throw std::invalid_argument("with_adjacency: shape mismatch");
    Graph out = g;
    out.edges.clear();
    for (int i = 0; i < g.n; ++i)
        for (int j = i + 1; j < g.n; ++j)
            if (adj(i, j) != 0.0) out.edges.emplace_back(i, j);
    out.finalize();
    return out;
}

struct DatasetManifest {
    std::string edges_path;
    std::string features_path;
    std::string labels_path;
    std::string splits_path;
    int n = 0;
    int d0 = 0;
    int c = 0;
};

struct LoadStats {
    int dropped_self_loops = 0;
    int merged_duplicate_edges = 0; // includes reversed duplicates
};

namespace detail {

inline std::ifstream open_or_throw(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    return in;
}

} // namespace detail

inline DatasetManifest read_manifest(const std::string& path) {
    auto in = detail::open_or_throw(path);
    nlohmann::json j = nlohmann::json::parse(in);
    DatasetManifest m;
    auto dir = std::filesystem::path(path).parent_path();
    auto resolve = [&](const std::string& p) {
        std::filesystem::path fp(p);
        return fp.is_absolute() ? fp.string() : (dir / fp).string();
    };
    m.edges_path = resolve(j.at("edges").get<std::string>());
    m.features_path = resolve(j.at("features").get<std::string>());
    m.labels_path = resolve(j.at("labels").get<std::string>());
    m.splits_path = resolve(j.at("splits").get<std::string>());
    m.n = j.at("n").get<int>();
    m.d0 = j.at("d0").get<int>();
    m.c = j.at("c").get<int>();
    return m;
}

/// Load a dataset from its four files. Asymmetric input edges are symmetrized and
/// duplicates merged silently (counted in `stats`); self-loops are dropped with a
/// warning count. Dimension mismatches against the manifest are errors.
inline Graph load_dataset(const DatasetManifest& m, LoadStats* stats = nullptr) {
    LoadStats local;
    Graph g;
    g.n = m.n;
    g.feature_dim = m.d0;
    g.num_classes = m.c;

    {
        auto in = detail::open_or_throw(m.edges_path);
        std::set<std::pair<int, int>> seen;
        int u, v;
        int raw = 0;
        while (in >> u >> v) {
            ++raw;
            if (u == v) {
                ++local.dropped_self_loops;
                continue;
            }
            if (u < 0 || v < 0 || u >= g.n || v >= g.n)
                throw std::runtime_error("edge endpoint out of range: " + std::to_string(u) +
                                         " " + std::to_string(v));
            auto e = std::minmax(u, v);
            if (!seen.insert({e.first, e.second}).second) ++local.merged_duplicate_edges;
        }
        if (!in.eof())
            throw std::runtime_error("malformed edge file: " + m.edges_path);
        g.edges.assign(seen.begin(), seen.end());
    }

    {
        auto in = detail::open_or_throw(m.features_path);
        g.features = Matrix(g.n, g.feature_dim);
        std::string line;
        int row = 0;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            if (row >= g.n) throw std::runtime_error("feature file has more rows than n");
            std::stringstream ss(line);
            std::string cell;
            int col = 0;
            while (std::getline(ss, cell, ',')) {
                if (col >= g.feature_dim)
                    throw std::runtime_error("feature row " + std::to_string(row) +
                                             " has more than d0 columns");
                double val = std::stod(cell);
                if (!std::isfinite(val))
                    throw std::runtime_error("non-finite feature value at row " +
                                             std::to_string(row));
                g.features(row, col++) = val;
            }
            if (col != g.feature_dim)
                throw std::runtime_error("feature row " + std::to_string(row) +
                                         " has " + std::to_string(col) + " columns, expected " +
                                         std::to_string(g.feature_dim));
            ++row;
        }
        if (row != g.n)
            throw std::runtime_error("feature file has " + std::to_string(row) +
                                     " rows, expected " + std::to_string(g.n));
    }

    {
        auto in = detail::open_or_throw(m.labels_path);
        int label;
        while (in >> label) g.labels.push_back(label);
        if (static_cast<int>(g.labels.size()) != g.n)
            throw std::runtime_error("label file has " + std::to_string(g.labels.size()) +
                                     " rows, expected " + std::to_string(g.n));
        for (int l : g.labels)
            if (l < 0 || l >= g.num_classes)
                throw std::runtime_error("label id " + std::to_string(l) + " >= c");
    }

    {
        auto in = detail::open_or_throw(m.splits_path);
        std::string tag;
        while (in >> tag) g.split.push_back(split_from_name(tag));
        if (static_cast<int>(g.split.size()) != g.n)
            throw std::runtime_error("split file has " + std::to_string(g.split.size()) +
                                     " rows, expected " + std::to_string(g.n));
    }

    g.finalize();
    g.validate();
    if (stats) *stats = local;
    return g;
}

inline Graph load_dataset(const std::string& manifest_path, LoadStats* stats = nullptr) {
    return load_dataset(read_manifest(manifest_path), stats);
}

/// Write the four dataset files plus a manifest. Paths inside the manifest are the
/// bare file names (resolved relative to the manifest on load).
inline void save_dataset(const Graph& g, const std::string& dir,
                         const std::string& manifest_name = "manifest.json") {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    auto write_file = [&](const std::string& name, auto writer) {
        std::ofstream out(fs::path(dir) / name);
        if (!out) throw std::runtime_error("cannot write " + (fs::path(dir) / name).string());
        writer(out);
    };
    write_file("edges.txt", [&](std::ofstream& out) {
        for (auto [u, v] : g.edges) out << u << " " << v << "\n";
    });
    write_file("features.csv", [&](std::ofstream& out) {
        char buf[32];
        for (int i = 0; i < g.n; ++i) {
            for (int j = 0; j < g.feature_dim; ++j) {
                std::snprintf(buf, sizeof(buf), "%.17g", g.features(i, j));
                out << (j ? "," : "") << buf;
            }
            out << "\n";
        }
    });
    write_file("labels.txt", [&](std::ofstream& out) {
        for (int l : g.labels) out << l << "\n";
    });
    write_file("splits.txt", [&](std::ofstream& out) {
        for (Split s : g.split) out << split_name(s) << "\n";
    });
    nlohmann::ordered_json j;
    j["edges"] = "edges.txt";
    j["features"] = "features.csv";
    j["labels"] = "labels.txt";
    j["splits"] = "splits.txt";
    j["n"] = g.n;
    j["d0"] = g.feature_dim;
    j["c"] = g.num_classes;
    write_file(manifest_name, [&](std::ofstream& out) { out << j.dump(2) << "\n"; });
}

} // namespace gnas
