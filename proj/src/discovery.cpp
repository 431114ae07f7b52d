#include "c2bm/discovery.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <deque>
#include <span>

#include "c2bm/errors.hpp"

namespace c2bm {

nlohmann::json GesConfig::to_json() const {
    return {{"ess", ess}, {"max_parents", max_parents}, {"max_subset", max_subset}};
}

GesConfig GesConfig::from_json(const nlohmann::json& j) {
    GesConfig c;
    c.ess = j.value("ess", c.ess);
    c.max_parents = j.value("max_parents", c.max_parents);
    c.max_subset = j.value("max_subset", c.max_subset);
    if (!(c.ess > 0.0)) throw ConfigError("discovery.ess must be positive");
    if (c.max_parents < 1) throw ConfigError("discovery.max_parents must be >= 1");
    return c;
}

namespace {

using Mask = std::uint64_t;

Mask bit(NodeIndex i) { return Mask{1} << i; }

Mask to_mask(const std::vector<NodeIndex>& nodes) {
    Mask m = 0;
    for (NodeIndex v : nodes) m |= bit(v);
    return m;
}

std::vector<NodeIndex> to_nodes(Mask m) {
    std::vector<NodeIndex> out;
    while (m) {
        out.push_back(static_cast<NodeIndex>(std::countr_zero(m)));
        m &= m - 1;
    }
    return out;
}

}  // namespace

// ---- BDeu ------------------------------------------------------------------------

BdeuScorer::BdeuScorer(const ConceptTable& data, double ess)
    : names_(data.names), cards_(data.cardinalities), rows_(data.rows), ess_(ess) {
    if (!(ess > 0.0)) throw ConfigError("BDeu equivalent sample size must be positive");
    if (cards_.size() > 64) throw InvalidGraph("BDeu scorer supports at most 64 variables");
    columns_.assign(cards_.size(), std::vector<std::uint16_t>(rows_));
    for (std::size_t r = 0; r < rows_; ++r) {
        for (std::size_t c = 0; c < cards_.size(); ++c) {
            const int v = data.at(r, c);
            if (v < 0 || static_cast<std::size_t>(v) >= cards_[c]) {
                throw ShapeMismatch("value out of range in column '" + names_[c] + "'");
            }
            columns_[c][r] = static_cast<std::uint16_t>(v);
        }
    }
}

double BdeuScorer::local_score(NodeIndex node, const std::vector<NodeIndex>& parents) const {
    for (NodeIndex p : parents) {
        if (p >= node_count()) throw UnknownNode("parent index out of range");
    }
    return local_score(node, to_mask(parents));
}

double BdeuScorer::local_score(NodeIndex node, Mask parent_mask) const {
    if (node >= node_count()) throw UnknownNode("node index out of range");
    if (parent_mask & bit(node)) throw InvalidGraph("a node cannot be its own parent");
    auto& cache = cache_[node];
    const auto it = cache.find(parent_mask);
    if (it != cache.end()) return it->second;
    const double s = compute(node, parent_mask);
    cache.emplace(parent_mask, s);
    return s;
}

std::size_t BdeuScorer::cache_size() const {
    std::size_t total = 0;
    for (const auto& c : cache_) total += c.size();
    return total;
}

double BdeuScorer::compute(NodeIndex node, Mask parent_mask) const {
    const auto parents = to_nodes(parent_mask);
    const std::size_t r = cards_[node];
    double q = 1.0;
    for (NodeIndex p : parents) q *= static_cast<double>(cards_[p]);
    if (q > 1e15) throw InvalidGraph("parent configuration space too large");
    const double a_jk = ess_ / (q * static_cast<double>(r));
    const double a_j = ess_ / q;

    // config index per row, parents in ascending index order
    std::vector<std::uint64_t> key(rows_, 0);
    for (NodeIndex p : parents) {
        const auto& col = columns_[p];
        const std::uint64_t card = cards_[p];
        for (std::size_t row = 0; row < rows_; ++row) key[row] = key[row] * card + col[row];
    }
    const auto& child = columns_[node];
    double score = 0.0;
    auto add_config = [&](std::span<const double> counts) {
        double n_j = 0.0;
        for (double c : counts) n_j += c;
        if (n_j == 0.0) return;
        score += std::lgamma(a_j) - std::lgamma(a_j + n_j);
        for (double c : counts) {
            if (c > 0.0) score += std::lgamma(a_jk + c) - std::lgamma(a_jk);
        }
    };
    if (q * static_cast<double>(r) <= 1 << 20) {
        std::vector<double> counts(static_cast<std::size_t>(q) * r, 0.0);
        for (std::size_t row = 0; row < rows_; ++row) counts[key[row] * r + child[row]] += 1.0;
        for (std::size_t j = 0; j < static_cast<std::size_t>(q); ++j) add_config(std::span(counts).subspan(j * r, r));
    } else {
        std::vector<std::pair<std::uint64_t, std::uint16_t>> pairs(rows_);
        for (std::size_t row = 0; row < rows_; ++row) pairs[row] = {key[row], child[row]};
        std::sort(pairs.begin(), pairs.end());
        std::vector<double> counts(r, 0.0);
        for (std::size_t k = 0; k < pairs.size(); ++k) {
            counts[pairs[k].second] += 1.0;
            if (k + 1 == pairs.size() || pairs[k + 1].first != pairs[k].first) {
                add_config(counts);
                std::fill(counts.begin(), counts.end(), 0.0);
            }
        }
    }
    return score;
}

double score_dag(const BdeuScorer& scorer, const MixedGraph& dag) {
    if (dag.size() != scorer.node_count()) throw NodeCountMismatch("graph and dataset differ in node count");
    double total = 0.0;
    for (NodeIndex v = 0; v < dag.size(); ++v) total += scorer.local_score(v, dag.parents(v));
    return total;
}

double score_cpdag(const BdeuScorer& scorer, const MixedGraph& cpdag) {
    MixedGraph ext;
    try {
        ext = pdag_to_dag(cpdag);
    } catch (const Error& e) {
        throw NotACpdag(std::string("graph has no consistent extension: ") + e.what());
    }
    if (dag_to_cpdag(ext) != cpdag) throw NotACpdag("graph is not the completed PDAG of its extension");
    return score_dag(scorer, ext);
}

nlohmann::json GesStep::to_json() const {
    return {{"phase", phase}, {"x", x}, {"y", y}, {"subset", subset}, {"delta", delta}, {"score", score}};
}

// ---- GES ---------------------------------------------------------------------------

namespace {

struct Pdag {
    const MixedGraph& g;

    Mask adjacent(NodeIndex v) const { return to_mask(g.adjacents(v)); }
    Mask neighbors(NodeIndex v) const { return to_mask(g.neighbors(v)); }
    Mask parents(NodeIndex v) const { return to_mask(g.parents(v)); }

    bool clique(Mask m) const {
        const auto nodes = to_nodes(m);
        for (std::size_t a = 0; a < nodes.size(); ++a) {
            for (std::size_t b = a + 1; b < nodes.size(); ++b) {
                if (!g.adjacent(nodes[a], nodes[b])) return false;
            }
        }
        return true;
    }

    // True when every semi-directed path from `from` to `to` meets `blocked`.
    bool paths_blocked(NodeIndex from, NodeIndex to, Mask blocked) const {
        Mask seen = bit(from);
        std::deque<NodeIndex> queue{from};
        while (!queue.empty()) {
            const NodeIndex u = queue.front();
            queue.pop_front();
            for (NodeIndex v = 0; v < g.size(); ++v) {
                const EdgeMark m = g.mark(u, v);
                if (m != EdgeMark::Forward && m != EdgeMark::Undirected) continue;
                if (v == to) return false;
                if ((seen | blocked) & bit(v)) continue;
                seen |= bit(v);
                queue.push_back(v);
            }
        }
        return true;
    }
};

// Subsets of `pool` with at most `limit` members, ascending by bitmask.
std::vector<Mask> subsets(Mask pool, std::size_t limit) {
    const auto items = to_nodes(pool);
    std::vector<Mask> out{0};
    for (NodeIndex v : items) {
        const std::size_t existing = out.size();
        for (std::size_t k = 0; k < existing; ++k) {
            if (static_cast<std::size_t>(std::popcount(out[k])) < limit) out.push_back(out[k] | bit(v));
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

struct Candidate {
    bool found = false;
    NodeIndex x = 0;
    NodeIndex y = 0;
    Mask subset = 0;
    double delta = 0.0;
};

constexpr double kMinGain = 1e-9;

Candidate best_insert(const BdeuScorer& scorer, const MixedGraph& g, const GesConfig& cfg) {
    const Pdag p{g};
    Candidate best;
    const std::size_t n = g.size();
    for (NodeIndex x = 0; x < n; ++x) {
        for (NodeIndex y = 0; y < n; ++y) {
            if (x == y || g.adjacent(x, y)) continue;
            const Mask adj_x = p.adjacent(x);
            const Mask nb_y = p.neighbors(y);
            const Mask na = nb_y & adj_x;
            const Mask t0 = nb_y & ~adj_x & ~bit(x);
            const Mask pa = p.parents(y);
            for (Mask t : subsets(t0, cfg.max_subset)) {
                const Mask s = na | t;
                const Mask base = s | pa;
                if (static_cast<std::size_t>(std::popcount(base)) + 1 > cfg.max_parents) continue;
                if (!p.clique(s)) continue;
                if (!p.paths_blocked(y, x, s)) continue;
                const double delta = scorer.local_score(y, base | bit(x)) - scorer.local_score(y, base);
                if (delta > kMinGain && (!best.found || delta > best.delta)) best = {true, x, y, t, delta};
            }
        }
    }
    return best;
}

Candidate best_delete(const BdeuScorer& scorer, const MixedGraph& g, const GesConfig& cfg) {
    const Pdag p{g};
    Candidate best;
    const std::size_t n = g.size();
    for (NodeIndex x = 0; x < n; ++x) {
        for (NodeIndex y = 0; y < n; ++y) {
            if (x == y) continue;
            const EdgeMark m = g.mark(x, y);
            if (m != EdgeMark::Forward && m != EdgeMark::Undirected) continue;
            const Mask na = p.neighbors(y) & p.adjacent(x);
            const Mask pa = p.parents(y) & ~bit(x);
            for (Mask h : subsets(na, cfg.max_subset)) {
                const Mask rest = na & ~h;
                if (!p.clique(rest)) continue;
                const Mask base = rest | pa;
                const double delta = scorer.local_score(y, base) - scorer.local_score(y, base | bit(x));
                if (delta > kMinGain && (!best.found || delta > best.delta)) best = {true, x, y, h, delta};
            }
        }
    }
    return best;
}

MixedGraph complete(const MixedGraph& pdag) { return dag_to_cpdag(pdag_to_dag(pdag)); }

}  // namespace

GesResult ges_search(const BdeuScorer& scorer, const GesConfig& config) {
    if (scorer.sample_count() == 0) throw EmptyDataset("GES needs at least one sample");
    GesResult res;
    res.cpdag = MixedGraph(scorer.names());
    res.score = score_dag(scorer, res.cpdag);

    auto record = [&](const char* phase, const Candidate& c) {
        res.score = score_dag(scorer, pdag_to_dag(res.cpdag));
        res.steps.push_back({phase, c.x, c.y, to_nodes(c.subset), c.delta, res.score});
    };

    while (true) {
        const Candidate c = best_insert(scorer, res.cpdag, config);
        if (!c.found) break;
        MixedGraph next = res.cpdag;
        next.set_directed(c.x, c.y);
        for (NodeIndex t : to_nodes(c.subset)) next.set_directed(t, c.y);
        res.cpdag = complete(next);
        record("forward", c);
    }
    while (true) {
        const Candidate c = best_delete(scorer, res.cpdag, config);
        if (!c.found) break;
        MixedGraph next = res.cpdag;
        next.remove_edge(c.x, c.y);
        for (NodeIndex h : to_nodes(c.subset)) {
            next.set_directed(c.y, h);
            if (next.has_undirected(c.x, h)) next.set_directed(c.x, h);
        }
        res.cpdag = complete(next);
        record("backward", c);
    }
    return res;
}

}  // namespace c2bm
