#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

namespace c2bm {

using NodeIndex = std::size_t;
using Edge = std::pair<NodeIndex, NodeIndex>;

struct NodeId {
    NodeIndex index = 0;
    std::string name;

    bool operator==(const NodeId&) const = default;
};

/// Status of an unordered node pair {i, j} as seen from i.
enum class EdgeMark : std::uint8_t {
    None,
    Forward,   // i -> j
    Backward,  // j -> i
    Undirected,
};

/// DAG / PDAG / CPDAG over named nodes. Stored as a dense mark matrix, which
/// is fine at the scale of the bundled networks (<= 60 nodes).
class MixedGraph {
public:
    MixedGraph() = default;
    explicit MixedGraph(std::size_t node_count);
    explicit MixedGraph(std::vector<std::string> names);

    std::size_t size() const { return names_.size(); }
    const std::vector<std::string>& names() const { return names_; }
    const std::string& name(NodeIndex i) const { return names_.at(i); }
    NodeId node(NodeIndex i) const { return {i, names_.at(i)}; }
    /// Throws UnknownNode.
    NodeIndex index_of(const std::string& name) const;
    std::optional<NodeIndex> find(const std::string& name) const;

    EdgeMark mark(NodeIndex i, NodeIndex j) const { return marks_[i * size() + j]; }
    bool has_directed(NodeIndex from, NodeIndex to) const {
        return mark(from, to) == EdgeMark::Forward;
    }
    bool has_undirected(NodeIndex i, NodeIndex j) const {
        return mark(i, j) == EdgeMark::Undirected;
    }
    bool adjacent(NodeIndex i, NodeIndex j) const { return mark(i, j) != EdgeMark::None; }

    /// Adds i -> j. Throws InvalidGraph on self-loops or an already-adjacent pair.
    void add_directed(NodeIndex from, NodeIndex to);
    void add_undirected(NodeIndex i, NodeIndex j);
    /// Replaces whatever connects the pair with from -> to.
    void set_directed(NodeIndex from, NodeIndex to);
    void set_undirected(NodeIndex i, NodeIndex j);
    void remove_edge(NodeIndex i, NodeIndex j);

    std::vector<NodeIndex> parents(NodeIndex node) const;
    std::vector<NodeIndex> children(NodeIndex node) const;
    std::vector<NodeIndex> neighbors(NodeIndex node) const;  // undirected only
    std::vector<NodeIndex> adjacents(NodeIndex node) const;

    /// Sorted ascending.
    std::vector<Edge> directed_edges() const;
    /// Sorted ascending with first < second.
    std::vector<Edge> undirected_edges() const;
    std::size_t edge_count() const;
    bool is_fully_directed() const;

    bool operator==(const MixedGraph& other) const = default;

private:
    void check_pair(NodeIndex i, NodeIndex j) const;
    void set_mark(NodeIndex i, NodeIndex j, EdgeMark m);

    std::vector<std::string> names_;
    std::vector<EdgeMark> marks_;
};

/// The edge set used to wire a model; always a DAG.
struct EdgeSet {
    std::vector<Edge> edges;

    /// Throws InvalidGraph if undirected edges are present, CycleDetected on cycles.
    static EdgeSet from_graph(const MixedGraph& g);
};

/// Exact non-negative rational used for the weighted Hamming score.
class Rational {
public:
    Rational() = default;
    Rational(std::int64_t num, std::int64_t den = 1);

    std::int64_t num() const { return num_; }
    std::int64_t den() const { return den_; }
    double to_double() const { return static_cast<double>(num_) / static_cast<double>(den_); }

    Rational& operator+=(const Rational& other);
    friend Rational operator+(Rational a, const Rational& b) { return a += b; }
    bool operator==(const Rational& other) const = default;
    auto operator<=>(const Rational& other) const {
        return static_cast<__int128>(num_) * other.den_ <=> static_cast<__int128>(other.num_) * den_;
    }

private:
    std::int64_t num_ = 0;
    std::int64_t den_ = 1;
};

// ---- ordering and reachability -----------------------------------------

/// Kahn's algorithm in rounds: nodes sorted by depth level, then index.
/// Requires no undirected edges (InvalidGraph) and no directed cycle
/// (CycleDetected).
std::vector<NodeIndex> topological_order(const MixedGraph& g);

/// True when the directed part of g has no cycle (undirected edges ignored).
bool directed_part_acyclic(const MixedGraph& g);

/// True when a directed path from -> ... -> to exists (length >= 1).
bool has_directed_path(const MixedGraph& g, NodeIndex from, NodeIndex to);

/// Proper ancestors of target, ascending. Throws UnknownNode.
std::vector<NodeIndex> ancestors_of(const MixedGraph& g, NodeIndex target);

/// Proper descendants of node, ascending.
std::vector<NodeIndex> descendants_of(const MixedGraph& g, NodeIndex node);

/// level(root) = 0, otherwise 1 + max level of parents.
std::vector<std::size_t> depth_levels(const MixedGraph& g);

// ---- equivalence classes -----------------------------------------------

/// Closes a PDAG under Meek rules R1-R4. Throws InconsistentPdag when an
/// orientation would close a directed cycle.
MixedGraph apply_meek_rules(const MixedGraph& g);

/// Compelled edges stay directed, reversible edges become undirected.
MixedGraph dag_to_cpdag(const MixedGraph& dag);

/// Any DAG in the class described by a PDAG (Dor & Tarsi). Throws
/// InconsistentPdag when no consistent extension exists.
MixedGraph pdag_to_dag(const MixedGraph& pdag);

/// Unshielded colliders a -> c <- b, as (min(a,b), c, max(a,b)) triples.
std::vector<std::tuple<NodeIndex, NodeIndex, NodeIndex>> v_structures(const MixedGraph& dag);

// ---- comparison metrics --------------------------------------------------

/// Weighted per-pair penalty score. Throws NodeCountMismatch.
Rational structural_hamming(const MixedGraph& truth, const MixedGraph& predicted);

/// Number of pairs whose edge status differs. Throws NodeCountMismatch.
std::size_t mistaken_edges(const MixedGraph& truth, const MixedGraph& predicted);

/// Every concept points straight at the task.
MixedGraph flat_cbm_graph(const std::vector<std::string>& names,
                          const std::vector<NodeIndex>& concepts, NodeIndex task);

// ---- subgraphs -------------------------------------------------------------

/// Graph restricted to `keep` (in the given order), edges among them only.
MixedGraph induced_subgraph(const MixedGraph& g, const std::vector<NodeIndex>& keep);

/// DAG over `keep` with a -> b whenever g has a directed path from a to b
/// whose interior avoids `keep` (the directed part of the latent projection).
MixedGraph latent_projection(const MixedGraph& dag, const std::vector<NodeIndex>& keep);

// ---- serialization --------------------------------------------------------

/// {"nodes":[...],"directed":[[i,j],...],"undirected":[[i,j],...]}, edges sorted.
nlohmann::json graph_to_json(const MixedGraph& g);
MixedGraph graph_from_json(const nlohmann::json& doc);

}  // namespace c2bm
