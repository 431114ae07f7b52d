#include "c2bm/graph.hpp"

#include <algorithm>

#include "c2bm/errors.hpp"

namespace c2bm {

namespace {

EdgeMark mirror(EdgeMark m) {
    switch (m) {
        case EdgeMark::Forward: return EdgeMark::Backward;
        case EdgeMark::Backward: return EdgeMark::Forward;
        default: return m;
    }
}

std::vector<std::string> default_names(std::size_t n) {
    std::vector<std::string> names(n);
    for (std::size_t i = 0; i < n; ++i) names[i] = "v" + std::to_string(i);
    return names;
}

}  // namespace

// ---- MixedGraph -------------------------------------------------------------

MixedGraph::MixedGraph(std::size_t node_count) : MixedGraph(default_names(node_count)) {}

MixedGraph::MixedGraph(std::vector<std::string> names)
    : names_(std::move(names)), marks_(names_.size() * names_.size(), EdgeMark::None) {
    std::vector<std::string> sorted = names_;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        throw InvalidGraph("duplicate node name");
    }
}

NodeIndex MixedGraph::index_of(const std::string& name) const {
    auto found = find(name);
    if (!found) throw UnknownNode("unknown node '" + name + "'");
    return *found;
}

std::optional<NodeIndex> MixedGraph::find(const std::string& name) const {
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) return std::nullopt;
    return static_cast<NodeIndex>(it - names_.begin());
}

void MixedGraph::check_pair(NodeIndex i, NodeIndex j) const {
    if (i >= size() || j >= size()) {
        throw UnknownNode("node index out of range");
    }
    if (i == j) throw InvalidGraph("self-loop on node " + names_[i]);
}

void MixedGraph::set_mark(NodeIndex i, NodeIndex j, EdgeMark m) {
    marks_[i * size() + j] = m;
    marks_[j * size() + i] = mirror(m);
}

void MixedGraph::add_directed(NodeIndex from, NodeIndex to) {
    check_pair(from, to);
    if (adjacent(from, to)) {
        throw InvalidGraph("pair " + names_[from] + "," + names_[to] + " already connected");
    }
    set_mark(from, to, EdgeMark::Forward);
}

void MixedGraph::add_undirected(NodeIndex i, NodeIndex j) {
    check_pair(i, j);
    if (adjacent(i, j)) {
        throw InvalidGraph("pair " + names_[i] + "," + names_[j] + " already connected");
    }
    set_mark(i, j, EdgeMark::Undirected);
}

void MixedGraph::set_directed(NodeIndex from, NodeIndex to) {
    check_pair(from, to);
    set_mark(from, to, EdgeMark::Forward);
}

void MixedGraph::set_undirected(NodeIndex i, NodeIndex j) {
    check_pair(i, j);
    set_mark(i, j, EdgeMark::Undirected);
}

void MixedGraph::remove_edge(NodeIndex i, NodeIndex j) {
    check_pair(i, j);
    set_mark(i, j, EdgeMark::None);
}

std::vector<NodeIndex> MixedGraph::parents(NodeIndex node) const {
    std::vector<NodeIndex> out;
    for (NodeIndex k = 0; k < size(); ++k) {
        if (mark(node, k) == EdgeMark::Backward) out.push_back(k);
    }
    return out;
}

std::vector<NodeIndex> MixedGraph::children(NodeIndex node) const {
    std::vector<NodeIndex> out;
    for (NodeIndex k = 0; k < size(); ++k) {
        if (mark(node, k) == EdgeMark::Forward) out.push_back(k);
    }
    return out;
}

std::vector<NodeIndex> MixedGraph::neighbors(NodeIndex node) const {
    std::vector<NodeIndex> out;
    for (NodeIndex k = 0; k < size(); ++k) {
        if (mark(node, k) == EdgeMark::Undirected) out.push_back(k);
    }
    return out;
}

std::vector<NodeIndex> MixedGraph::adjacents(NodeIndex node) const {
    std::vector<NodeIndex> out;
    for (NodeIndex k = 0; k < size(); ++k) {
        if (mark(node, k) != EdgeMark::None) out.push_back(k);
    }
    return out;
}

std::vector<Edge> MixedGraph::directed_edges() const {
    std::vector<Edge> out;
    for (NodeIndex i = 0; i < size(); ++i) {
        for (NodeIndex j = 0; j < size(); ++j) {
            if (mark(i, j) == EdgeMark::Forward) out.emplace_back(i, j);
        }
    }
    return out;
}

std::vector<Edge> MixedGraph::undirected_edges() const {
    std::vector<Edge> out;
    for (NodeIndex i = 0; i < size(); ++i) {
        for (NodeIndex j = i + 1; j < size(); ++j) {
            if (mark(i, j) == EdgeMark::Undirected) out.emplace_back(i, j);
        }
    }
    return out;
}

std::size_t MixedGraph::edge_count() const {
    std::size_t count = 0;
    for (NodeIndex i = 0; i < size(); ++i) {
        for (NodeIndex j = i + 1; j < size(); ++j) {
            if (adjacent(i, j)) ++count;
        }
    }
    return count;
}

bool MixedGraph::is_fully_directed() const {
    return std::none_of(marks_.begin(), marks_.end(),
                        [](EdgeMark m) { return m == EdgeMark::Undirected; });
}

EdgeSet EdgeSet::from_graph(const MixedGraph& g) {
    if (!g.is_fully_directed()) throw InvalidGraph("edge set requires a fully directed graph");
    topological_order(g);  // throws CycleDetected
    return EdgeSet{g.directed_edges()};
}

// ---- Rational ---------------------------------------------------------------

Rational::Rational(std::int64_t num, std::int64_t den) : num_(num), den_(den) {
    if (den_ == 0) throw std::invalid_argument("zero denominator");
    if (den_ < 0) {
        num_ = -num_;
        den_ = -den_;
    }
    const std::int64_t g = std::gcd(num_ < 0 ? -num_ : num_, den_);
    if (g > 1) {
        num_ /= g;
        den_ /= g;
    }
}

Rational& Rational::operator+=(const Rational& other) {
    *this = Rational(num_ * other.den_ + other.num_ * den_, den_ * other.den_);
    return *this;
}

// ---- ordering ---------------------------------------------------------------

std::vector<NodeIndex> topological_order(const MixedGraph& g) {
    if (!g.is_fully_directed()) {
        throw InvalidGraph("topological order needs a fully directed graph");
    }
    const std::size_t n = g.size();
    std::vector<std::size_t> indegree(n, 0);
    for (auto [from, to] : g.directed_edges()) ++indegree[to];

    // Kahn's algorithm run in rounds: each round releases the whole current
    // frontier in ascending index order.
    std::vector<NodeIndex> frontier;
    for (NodeIndex v = 0; v < n; ++v) {
        if (indegree[v] == 0) frontier.push_back(v);
    }
    std::vector<NodeIndex> order;
    order.reserve(n);
    while (!frontier.empty()) {
        std::vector<NodeIndex> next;
        for (NodeIndex v : frontier) {
            order.push_back(v);
            for (NodeIndex c : g.children(v)) {
                if (--indegree[c] == 0) next.push_back(c);
            }
        }
        std::sort(next.begin(), next.end());
        frontier = std::move(next);
    }
    if (order.size() != n) throw CycleDetected("directed cycle in graph");
    return order;
}

bool directed_part_acyclic(const MixedGraph& g) {
    const std::size_t n = g.size();
    std::vector<std::size_t> indegree(n, 0);
    for (auto [from, to] : g.directed_edges()) ++indegree[to];
    std::vector<NodeIndex> stack;
    for (NodeIndex v = 0; v < n; ++v) {
        if (indegree[v] == 0) stack.push_back(v);
    }
    std::size_t seen = 0;
    while (!stack.empty()) {
        const NodeIndex v = stack.back();
        stack.pop_back();
        ++seen;
        for (NodeIndex c : g.children(v)) {
            if (--indegree[c] == 0) stack.push_back(c);
        }
    }
    return seen == n;
}

bool has_directed_path(const MixedGraph& g, NodeIndex from, NodeIndex to) {
    std::vector<bool> visited(g.size(), false);
    std::vector<NodeIndex> stack{from};
    while (!stack.empty()) {
        const NodeIndex v = stack.back();
        stack.pop_back();
        for (NodeIndex c : g.children(v)) {
            if (c == to) return true;
            if (!visited[c]) {
                visited[c] = true;
                stack.push_back(c);
            }
        }
    }
    return false;
}

std::vector<NodeIndex> ancestors_of(const MixedGraph& g, NodeIndex target) {
    if (target >= g.size()) throw UnknownNode("node index out of range");
    std::vector<bool> seen(g.size(), false);
    std::vector<NodeIndex> stack{target};
    while (!stack.empty()) {
        const NodeIndex v = stack.back();
        stack.pop_back();
        for (NodeIndex p : g.parents(v)) {
            if (!seen[p]) {
                seen[p] = true;
                stack.push_back(p);
            }
        }
    }
    std::vector<NodeIndex> out;
    for (NodeIndex v = 0; v < g.size(); ++v) {
        if (seen[v] && v != target) out.push_back(v);
    }
    return out;
}

std::vector<NodeIndex> descendants_of(const MixedGraph& g, NodeIndex node) {
    if (node >= g.size()) throw UnknownNode("node index out of range");
    std::vector<bool> seen(g.size(), false);
    std::vector<NodeIndex> stack{node};
    while (!stack.empty()) {
        const NodeIndex v = stack.back();
        stack.pop_back();
        for (NodeIndex c : g.children(v)) {
            if (!seen[c]) {
                seen[c] = true;
                stack.push_back(c);
            }
        }
    }
    std::vector<NodeIndex> out;
    for (NodeIndex v = 0; v < g.size(); ++v) {
        if (seen[v] && v != node) out.push_back(v);
    }
    return out;
}

std::vector<std::size_t> depth_levels(const MixedGraph& g) {
    const auto order = topological_order(g);
    std::vector<std::size_t> level(g.size(), 0);
    for (NodeIndex v : order) {
        for (NodeIndex p : g.parents(v)) level[v] = std::max(level[v], level[p] + 1);
    }
    return level;
}

// ---- Meek rules -------------------------------------------------------------

namespace {

// R1: c -> a - b, c and b nonadjacent.
bool meek_r1(const MixedGraph& g, NodeIndex a, NodeIndex b) {
    for (NodeIndex c : g.parents(a)) {
        if (c != b && !g.adjacent(c, b)) return true;
    }
    return false;
}

// R2: a -> c -> b with a - b.
bool meek_r2(const MixedGraph& g, NodeIndex a, NodeIndex b) {
    for (NodeIndex c : g.children(a)) {
        if (g.has_directed(c, b)) return true;
    }
    return false;
}

// R3: a - c -> b, a - d -> b, c and d nonadjacent.
bool meek_r3(const MixedGraph& g, NodeIndex a, NodeIndex b) {
    std::vector<NodeIndex> kite;
    for (NodeIndex c : g.neighbors(a)) {
        if (c != b && g.has_directed(c, b)) kite.push_back(c);
    }
    for (std::size_t i = 0; i < kite.size(); ++i) {
        for (std::size_t j = i + 1; j < kite.size(); ++j) {
            if (!g.adjacent(kite[i], kite[j])) return true;
        }
    }
    return false;
}

// R4: a - c -> d -> b with a adjacent to d and c, b nonadjacent.
bool meek_r4(const MixedGraph& g, NodeIndex a, NodeIndex b) {
    for (NodeIndex c : g.neighbors(a)) {
        if (c == b || g.adjacent(c, b)) continue;
        for (NodeIndex d : g.children(c)) {
            if (d != a && g.has_directed(d, b) && g.adjacent(a, d)) return true;
        }
    }
    return false;
}

bool meek_orients(const MixedGraph& g, NodeIndex a, NodeIndex b) {
    return meek_r1(g, a, b) || meek_r2(g, a, b) || meek_r3(g, a, b) || meek_r4(g, a, b);
}

}  // namespace

MixedGraph apply_meek_rules(const MixedGraph& g) {
    MixedGraph out = g;
    bool changed = true;
    while (changed) {
        changed = false;
        for (auto [i, j] : out.undirected_edges()) {
            if (!out.has_undirected(i, j)) continue;
            NodeIndex from = i;
            NodeIndex to = j;
            if (meek_orients(out, i, j)) {
                // from/to already set
            } else if (meek_orients(out, j, i)) {
                from = j;
                to = i;
            } else {
                continue;
            }
            if (has_directed_path(out, to, from)) {
                throw InconsistentPdag("orienting " + out.name(from) + " -> " + out.name(to) +
                                       " closes a directed cycle");
            }
            out.set_directed(from, to);
            changed = true;
        }
    }
    return out;
}

// ---- CPDAG from DAG (compelled edge labelling) -----------------------------

MixedGraph dag_to_cpdag(const MixedGraph& dag) {
    const auto order = topological_order(dag);
    const std::size_t n = dag.size();
    std::vector<std::size_t> rank(n);
    for (std::size_t k = 0; k < n; ++k) rank[order[k]] = k;

    // Edges sorted by (rank of head ascending, rank of tail descending).
    std::vector<Edge> edges = dag.directed_edges();
    std::sort(edges.begin(), edges.end(), [&](const Edge& a, const Edge& b) {
        if (rank[a.second] != rank[b.second]) return rank[a.second] < rank[b.second];
        return rank[a.first] > rank[b.first];
    });

    enum class Label : std::uint8_t { Unknown, Compelled, Reversible };
    std::vector<Label> label(n * n, Label::Unknown);
    auto at = [&](NodeIndex from, NodeIndex to) -> Label& { return label[from * n + to]; };

    auto label_into = [&](NodeIndex y, Label value) {
        for (NodeIndex p : dag.parents(y)) {
            if (at(p, y) == Label::Unknown) at(p, y) = value;
        }
    };

    for (const auto& [x, y] : edges) {
        if (at(x, y) != Label::Unknown) continue;
        bool done = false;
        for (NodeIndex w : dag.parents(x)) {
            if (at(w, x) != Label::Compelled) continue;
            if (!dag.has_directed(w, y)) {
                at(x, y) = Label::Compelled;
                label_into(y, Label::Compelled);
                done = true;
                break;
            }
            at(w, y) = Label::Compelled;
        }
        if (done) continue;
        bool other_parent = false;
        for (NodeIndex z : dag.parents(y)) {
            if (z != x && !dag.adjacent(z, x)) {
                other_parent = true;
                break;
            }
        }
        const Label value = other_parent ? Label::Compelled : Label::Reversible;
        at(x, y) = value;
        label_into(y, value);
    }

    MixedGraph out(dag.names());
    for (const auto& [x, y] : dag.directed_edges()) {
        if (at(x, y) == Label::Compelled) {
            out.add_directed(x, y);
        } else {
            out.add_undirected(x, y);
        }
    }
    return out;
}

MixedGraph pdag_to_dag(const MixedGraph& pdag) {
    MixedGraph work = pdag;
    MixedGraph result = pdag;
    const std::size_t n = pdag.size();
    std::vector<bool> removed(n, false);
    for (std::size_t remaining = n; remaining > 0; --remaining) {
        bool found = false;
        for (NodeIndex x = 0; x < n && !found; ++x) {
            if (removed[x]) continue;
            if (!work.children(x).empty()) continue;
            const auto neighbors = work.neighbors(x);
            const auto adjacent = work.adjacents(x);
            bool ok = true;
            for (NodeIndex y : neighbors) {
                for (NodeIndex z : adjacent) {
                    if (z != y && !work.adjacent(y, z)) {
                        ok = false;
                        break;
                    }
                }
                if (!ok) break;
            }
            if (!ok) continue;
            for (NodeIndex y : neighbors) result.set_directed(y, x);
            for (NodeIndex z : adjacent) work.remove_edge(x, z);
            removed[x] = true;
            found = true;
        }
        if (!found) throw InconsistentPdag("PDAG admits no consistent extension");
    }
    return result;
}

std::vector<std::tuple<NodeIndex, NodeIndex, NodeIndex>> v_structures(const MixedGraph& dag) {
    std::vector<std::tuple<NodeIndex, NodeIndex, NodeIndex>> out;
    for (NodeIndex c = 0; c < dag.size(); ++c) {
        const auto pa = dag.parents(c);
        for (std::size_t i = 0; i < pa.size(); ++i) {
            for (std::size_t j = i + 1; j < pa.size(); ++j) {
                if (!dag.adjacent(pa[i], pa[j])) out.emplace_back(pa[i], c, pa[j]);
            }
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

// ---- metrics ------------------------------------------------------------------

Rational structural_hamming(const MixedGraph& truth, const MixedGraph& predicted) {
    if (truth.size() != predicted.size()) {
        throw NodeCountMismatch("graphs have different node counts");
    }
    Rational total;
    for (NodeIndex i = 0; i < truth.size(); ++i) {
        for (NodeIndex j = i + 1; j < truth.size(); ++j) {
            const EdgeMark t = truth.mark(i, j);
            const EdgeMark p = predicted.mark(i, j);
            if (t == p) continue;
            const bool t_dir = t == EdgeMark::Forward || t == EdgeMark::Backward;
            const bool p_dir = p == EdgeMark::Forward || p == EdgeMark::Backward;
            if (t == EdgeMark::None) {
                total += p_dir ? Rational(1) : Rational(1, 2);
            } else if (t_dir && p_dir) {
                total += Rational(1, 3);
            } else if (p == EdgeMark::None) {
                total += Rational(1, 4);
            } else if (t == EdgeMark::Undirected) {
                total += Rational(1, 4);
            } else {
                total += Rational(1, 5);
            }
        }
    }
    return total;
}

std::size_t mistaken_edges(const MixedGraph& truth, const MixedGraph& predicted) {
    if (truth.size() != predicted.size()) {
        throw NodeCountMismatch("graphs have different node counts");
    }
    std::size_t count = 0;
    for (NodeIndex i = 0; i < truth.size(); ++i) {
        for (NodeIndex j = i + 1; j < truth.size(); ++j) {
            if (truth.mark(i, j) != predicted.mark(i, j)) ++count;
        }
    }
    return count;
}

MixedGraph flat_cbm_graph(const std::vector<std::string>& names,
                          const std::vector<NodeIndex>& concepts, NodeIndex task) {
    MixedGraph g(names);
    for (NodeIndex c : concepts) {
        if (c == task) throw InvalidGraph("task cannot be one of the concepts");
        g.add_directed(c, task);
    }
    return g;
}

// ---- subgraphs ----------------------------------------------------------------

MixedGraph induced_subgraph(const MixedGraph& g, const std::vector<NodeIndex>& keep) {
    std::vector<std::string> names;
    names.reserve(keep.size());
    for (NodeIndex v : keep) names.push_back(g.name(v));
    MixedGraph out(std::move(names));
    for (std::size_t a = 0; a < keep.size(); ++a) {
        for (std::size_t b = 0; b < keep.size(); ++b) {
            if (a == b) continue;
            const EdgeMark m = g.mark(keep[a], keep[b]);
            if (m == EdgeMark::Forward) out.set_directed(a, b);
            if (m == EdgeMark::Undirected && a < b) out.set_undirected(a, b);
        }
    }
    return out;
}

MixedGraph latent_projection(const MixedGraph& dag, const std::vector<NodeIndex>& keep) {
    std::vector<std::string> names;
    std::vector<long> position(dag.size(), -1);
    for (std::size_t k = 0; k < keep.size(); ++k) {
        names.push_back(dag.name(keep[k]));
        position[keep[k]] = static_cast<long>(k);
    }
    MixedGraph out(std::move(names));
    for (std::size_t a = 0; a < keep.size(); ++a) {
        std::vector<bool> visited(dag.size(), false);
        std::vector<NodeIndex> stack{keep[a]};
        while (!stack.empty()) {
            const NodeIndex v = stack.back();
            stack.pop_back();
            for (NodeIndex c : dag.children(v)) {
                if (visited[c]) continue;
                visited[c] = true;
                if (position[c] >= 0) {
                    out.set_directed(a, static_cast<std::size_t>(position[c]));
                } else {
                    stack.push_back(c);
                }
            }
        }
    }
    return out;
}

// ---- serialization ----------------------------------------------------------

nlohmann::json graph_to_json(const MixedGraph& g) {
    nlohmann::json doc;
    doc["nodes"] = g.names();
    doc["directed"] = nlohmann::json::array();
    for (auto [i, j] : g.directed_edges()) doc["directed"].push_back({i, j});
    doc["undirected"] = nlohmann::json::array();
    for (auto [i, j] : g.undirected_edges()) doc["undirected"].push_back({i, j});
    return doc;
}

MixedGraph graph_from_json(const nlohmann::json& doc) {
    try {
        MixedGraph g(doc.at("nodes").get<std::vector<std::string>>());
        if (doc.contains("directed")) {
            for (const auto& e : doc.at("directed")) {
                const auto from = e.at(0).get<NodeIndex>();
                const auto to = e.at(1).get<NodeIndex>();
                if (from < g.size() && to < g.size() && g.has_directed(to, from)) {
                    throw CycleDetected("edges " + g.name(from) + " -> " + g.name(to) +
                                        " and back form a 2-cycle");
                }
                g.add_directed(from, to);
            }
        }
        if (doc.contains("undirected")) {
            for (const auto& e : doc.at("undirected")) {
                g.add_undirected(e.at(0).get<NodeIndex>(), e.at(1).get<NodeIndex>());
            }
        }
        return g;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidGraph(std::string("malformed graph document: ") + e.what());
    }
}

}  // namespace c2bm
