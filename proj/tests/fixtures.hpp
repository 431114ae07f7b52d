#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <unistd.h>

#include "c2bm/graph.hpp"
#include "c2bm/rng.hpp"

namespace fixtures {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("c2bm_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline std::string data_path(const std::string& rel) { return std::string(C2BM_DATA_DIR) + "/" + rel; }

// Asia network written out by hand, node order as in the bundled file.
inline c2bm::MixedGraph asia_truth() {
    c2bm::MixedGraph g({"asia", "tub", "smoke", "lung", "bronc", "either", "xray", "dysp"});
    auto e = [&](const char* a, const char* b) { g.add_directed(g.index_of(a), g.index_of(b)); };
    e("asia", "tub");
    e("smoke", "lung");
    e("smoke", "bronc");
    e("tub", "either");
    e("lung", "either");
    e("either", "xray");
    e("either", "dysp");
    e("bronc", "dysp");
    return g;
}

inline c2bm::MixedGraph random_dag(std::size_t n, double density, c2bm::Rng& rng) {
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    rng.shuffle(std::span<std::size_t>(perm));
    c2bm::MixedGraph g(n);
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = a + 1; b < n; ++b) {
            if (rng.bernoulli(density)) g.add_directed(perm[a], perm[b]);
        }
    }
    return g;
}

// Every DAG sharing the skeleton and v-structures of `dag`, by brute force
// over all 2^m orientations.
inline std::vector<c2bm::MixedGraph> markov_class_bruteforce(const c2bm::MixedGraph& dag) {
    const auto edges = dag.directed_edges();
    const auto target = c2bm::v_structures(dag);
    std::vector<c2bm::MixedGraph> out;
    for (std::size_t mask = 0; mask < (std::size_t{1} << edges.size()); ++mask) {
        c2bm::MixedGraph g(dag.names());
        for (std::size_t k = 0; k < edges.size(); ++k) {
            auto [a, b] = edges[k];
            if (mask >> k & 1) std::swap(a, b);
            g.add_directed(a, b);
        }
        if (!c2bm::directed_part_acyclic(g)) continue;
        if (c2bm::v_structures(g) != target) continue;
        out.push_back(g);
    }
    return out;
}

// CPDAG oracle: an edge is directed iff every class member agrees on it.
inline c2bm::MixedGraph cpdag_bruteforce(const c2bm::MixedGraph& dag) {
    const auto members = markov_class_bruteforce(dag);
    c2bm::MixedGraph out(dag.names());
    for (auto [a, b] : dag.directed_edges()) {
        bool forward = true;
        bool backward = true;
        for (const auto& m : members) {
            forward = forward && m.has_directed(a, b);
            backward = backward && m.has_directed(b, a);
        }
        if (forward) {
            out.add_directed(a, b);
        } else if (backward) {
            out.add_directed(b, a);
        } else {
            out.add_undirected(a, b);
        }
    }
    return out;
}

}  // namespace fixtures
