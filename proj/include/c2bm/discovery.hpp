#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "c2bm/bayesnet.hpp"
#include "c2bm/graph.hpp"

namespace c2bm {

struct GesConfig {
    double ess = 1.0;
    std::size_t max_parents = 6;
    std::size_t max_subset = 3;  // largest T (Insert) / H (Delete) set tried

    nlohmann::json to_json() const;
    static GesConfig from_json(const nlohmann::json& j);
};

/// BDeu local scores over a discrete dataset, cached by (node, parent set).
/// Not safe for concurrent use (the cache is filled lazily).
class BdeuScorer {
public:
    /// Throws ConfigError when ess <= 0, InvalidGraph past 64 columns.
    BdeuScorer(const ConceptTable& data, double ess);

    std::size_t node_count() const { return cards_.size(); }
    std::size_t sample_count() const { return rows_; }
    double ess() const { return ess_; }
    const std::vector<std::string>& names() const { return names_; }

    /// log marginal likelihood of `node` given `parents` under the BDeu prior
    /// alpha_ijk = ess / (q_i r_i). Throws InvalidGraph if node is a parent.
    double local_score(NodeIndex node, const std::vector<NodeIndex>& parents) const;
    double local_score(NodeIndex node, std::uint64_t parent_mask) const;
    std::size_t cache_size() const;

private:
    double compute(NodeIndex node, std::uint64_t parent_mask) const;

    std::vector<std::string> names_;
    std::vector<std::size_t> cards_;
    std::size_t rows_ = 0;
    std::vector<std::vector<std::uint16_t>> columns_;
    double ess_ = 1.0;
    mutable std::unordered_map<std::uint64_t, double> cache_[64];
};

/// Sum of local scores of a DAG.
double score_dag(const BdeuScorer& scorer, const MixedGraph& dag);

/// Score of any consistent extension of a CPDAG. Throws NotACpdag.
double score_cpdag(const BdeuScorer& scorer, const MixedGraph& cpdag);

struct GesStep {
    std::string phase;  // "forward" | "backward"
    NodeIndex x = 0;
    NodeIndex y = 0;
    std::vector<NodeIndex> subset;  // T for Insert, H for Delete
    double delta = 0.0;
    double score = 0.0;             // total after the step

    nlohmann::json to_json() const;
};

struct GesResult {
    MixedGraph cpdag;
    double score = 0.0;
    std::vector<GesStep> steps;
};

/// Greedy Equivalence Search from the empty graph: a forward phase of
/// Insert(x, y, T) operators, then a backward phase of Delete(x, y, H), each
/// applying the best valid operator while the score strictly improves.
/// Ties go to the lexicographically smallest (x, y, subset bitmask).
/// Throws EmptyDataset.
GesResult ges_search(const BdeuScorer& scorer, const GesConfig& config = {});

}  // namespace c2bm
