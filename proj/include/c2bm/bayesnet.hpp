#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "c2bm/graph.hpp"

namespace c2bm {

struct Variable {
    std::string name;
    std::vector<std::string> states;
};

/// Discrete Bayesian network. CPT rows are stored flat per node; the row for a
/// parent configuration is found by mixed-radix indexing over parents() in
/// declaration order, the last parent varying fastest.
class DiscreteBayesNet {
public:
    /// Validates shapes, row sums (InvalidCpt) and acyclicity (CycleDetected).
    DiscreteBayesNet(std::vector<Variable> variables,
                     std::vector<std::vector<NodeIndex>> parents,
                     std::vector<std::vector<double>> cpts);

    std::size_t size() const { return variables_.size(); }
    const MixedGraph& graph() const { return graph_; }
    const Variable& variable(NodeIndex i) const { return variables_.at(i); }
    std::size_t cardinality(NodeIndex i) const { return variables_.at(i).states.size(); }
    std::vector<std::size_t> cardinalities() const;
    std::vector<std::string> names() const { return graph_.names(); }
    const std::vector<NodeIndex>& parents(NodeIndex i) const { return parents_.at(i); }
    const std::vector<double>& cpt(NodeIndex i) const { return cpts_.at(i); }

    /// Row offset into cpt(i) for the given full assignment.
    std::size_t row_index(NodeIndex i, std::span<const int> assignment) const;
    std::span<const double> row(NodeIndex i, std::span<const int> assignment) const;

    /// Exact joint probability of a full assignment.
    double joint(std::span<const int> assignment) const;

private:
    std::vector<Variable> variables_;
    std::vector<std::vector<NodeIndex>> parents_;
    std::vector<std::vector<double>> cpts_;
    MixedGraph graph_;
    std::vector<NodeIndex> order_;
};

/// Largest |row sum - 1| accepted by the parser; such rows are renormalized.
inline constexpr double kCptRowTolerance = 1e-6;

/// Parses the BIF subset (network / variable / probability blocks).
/// Throws ParseError with a 1-based line and column, InvalidCpt on bad rows.
DiscreteBayesNet parse_network(std::string_view text);
DiscreteBayesNet load_network(const std::filesystem::path& path);

/// Row-major table of category indices, one column per node.
struct ConceptTable {
    std::vector<std::string> names;
    std::vector<std::size_t> cardinalities;
    std::size_t rows = 0;
    std::vector<int> values;

    std::size_t cols() const { return names.size(); }
    int at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }
    std::span<const int> row(std::size_t r) const { return {values.data() + r * cols(), cols()}; }
    ConceptTable select_rows(std::span<const std::size_t> rows) const;
    ConceptTable select_cols(std::span<const std::size_t> cols) const;
};

/// n i.i.d. samples drawn in topological order. Deterministic given seed.
/// Nodes listed in `clamps` are fixed to the given category (do-semantics).
ConceptTable ancestral_sample(const DiscreteBayesNet& net, std::size_t n, std::uint64_t seed,
                              const std::map<NodeIndex, int>& clamps = {});

struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;
};

/// Shuffled disjoint partition of 0..n-1. Validation and test sizes are
/// floor(n * ratio); the remainder goes to train. Throws InvalidRatios.
SplitIndices split_dataset(std::size_t n, std::array<double, 3> ratios, std::uint64_t seed);

void write_concepts_csv(const std::filesystem::path& path, const ConceptTable& table);
/// Cardinalities are inferred as max value + 1 unless `cardinalities` is given.
ConceptTable read_concepts_csv(const std::filesystem::path& path,
                               const std::vector<std::size_t>& cardinalities = {});

}  // namespace c2bm
