#include <doctest.h>

#include <algorithm>
#include <functional>
#include <set>

#include "c2bm/errors.hpp"
#include "c2bm/interventions.hpp"
#include "fixtures.hpp"

using namespace c2bm;

namespace {

ModelConfig tiny_config(std::uint64_t seed) {
    ModelConfig c;
    c.embedding_dim = 4;
    c.encoder_hidden = 5;
    c.head_hidden = 6;
    c.seed = seed;
    return c;
}

// Random features and labels over the graph's nodes (labels need not be
// consistent with the model; only bookkeeping is under test).
Dataset labelled_data(const MixedGraph& g, const std::vector<std::size_t>& cards, std::size_t rows,
                      std::size_t feature_dim, Rng& rng) {
    Dataset d;
    d.features = Tensor(rows, feature_dim);
    for (double& v : d.features.data) v = 2.0 * rng.normal();
    d.concepts = ConceptTable{g.names(), cards, rows, {}};
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c : cards) d.concepts.values.push_back(static_cast<int>(rng.below(c)));
        d.test.push_back(r);
    }
    return d;
}

// Shifts every head's final bias so untrained models are far from uniform.
void perturb(C2bmModel& m, Rng& rng) {
    for (std::size_t i = 0; i < m.node_count(); ++i) {
        auto& b = m.head(i).bias(m.head(i).widths().size() - 2).value;
        for (double& v : b.data) v += 2.0 * rng.normal();
    }
}

// Longest-path depth from the roots, recomputed independently.
std::vector<std::size_t> depth_oracle(const MixedGraph& g) {
    std::vector<int> memo(g.size(), -1);
    std::function<int(NodeIndex)> depth = [&](NodeIndex v) {
        if (memo[v] >= 0) return memo[v];
        int d = 0;
        for (NodeIndex p : g.parents(v)) d = std::max(d, depth(p) + 1);
        return memo[v] = d;
    };
    std::vector<std::size_t> out;
    for (NodeIndex v = 0; v < g.size(); ++v) out.push_back(static_cast<std::size_t>(depth(v)));
    return out;
}

}  // namespace

TEST_CASE("level policy on Asia") {
    const auto g = fixtures::asia_truth();
    const auto depth = depth_oracle(g);
    for (std::size_t level = 0; level <= 3; ++level) {
        auto policy = level_policy(g, "dysp", level, 1.0, 7);
        std::set<std::string> expected;
        for (NodeIndex v = 0; v < g.size(); ++v) {
            if (g.name(v) != "dysp" && depth[v] <= level) expected.insert(g.name(v));
        }
        const auto plan = policy.next();
        CHECK(std::set<std::string>(plan.nodes.begin(), plan.nodes.end()) == expected);
        CHECK(plan.level == level);
    }
    CHECK(level_policy(g, "dysp", 0, 1.0, 0).eligible() == std::vector<std::string>{"asia", "smoke"});
    CHECK(level_policy(g, "dysp", 3, 1.0, 0).next().nodes.size() == 7);
    CHECK(level_policy(g, "dysp", 3, 0.0, 0).next().nodes.empty());

    // half of level <= 1 (5 eligible) rounds to 2 or 3; same seed, same draws
    auto a = level_policy(g, "dysp", 1, 0.5, 42);
    auto b = level_policy(g, "dysp", 1, 0.5, 42);
    std::set<std::vector<std::string>> distinct;
    for (int k = 0; k < 50; ++k) {
        const auto pa = a.next();
        CHECK(pa.nodes == b.next().nodes);
        CHECK(pa.nodes.size() == 3);
        for (const auto& n : pa.nodes) CHECK(n != "dysp");
        distinct.insert(pa.nodes);
    }
    CHECK(distinct.size() > 3);

    CHECK_THROWS_AS(level_policy(g, "nope", 0, 1.0, 0), UnknownNode);
    CHECK_THROWS_AS(level_policy(g, "dysp", 0, 1.5, 0), ConfigError);
}

TEST_CASE("evaluation under interventions") {
    const auto g = fixtures::asia_truth();
    const std::vector<std::size_t> cards(8, 2);
    Rng rng(3);
    const auto data = labelled_data(g, cards, 200, 6, rng);
    C2bmModel m(g, cards, "dysp", 6, tiny_config(1));
    perturb(m, rng);

    SUBCASE("empty plan equals plain accuracy") {
        const auto acc = node_accuracy(m, data, data.test);
        const auto p = evaluate_with_interventions(m, data, data.test, {InterventionPlan{}});
        double mean = 0.0;
        for (double a : acc) mean += a;
        mean /= static_cast<double>(acc.size());
        CHECK(p.downstream_accuracy == doctest::Approx(mean).epsilon(1e-12));
        CHECK(p.all_accuracy == doctest::Approx(mean).epsilon(1e-12));
        CHECK(p.task_accuracy == acc[m.task()]);
        CHECK(p.clamped_per_sample == 0.0);
        CHECK_FALSE(p.level.has_value());

        const auto report = evaluate_model(m, data, data.test);
        CHECK(report.task_accuracy == acc[m.task()]);
        CHECK(report.node_accuracy.size() == 7);
        CHECK(report.to_json()["node_accuracy"].contains("either"));
    }
    SUBCASE("clamped nodes are exact and leave the downstream pool") {
        InterventionPlan plan{{"smoke", "either", "xray"}, {}, 2};
        const auto clamps = plan_clamps(m, data, data.test, {plan});
        const auto probs = m.predict(data.features.select_rows(data.test), clamps);
        const auto labels = node_labels(m, data.concepts, data.test);
        const auto smoke = *m.find_node("smoke");
        const auto either = *m.find_node("either");
        for (std::size_t k = 0; k < data.test.size(); ++k) {
            CHECK(probs[smoke](k, labels[smoke][k]) == 1.0);
            CHECK(probs[either](k, labels[either][k]) == 1.0);
        }
        // xray is not modeled by C2BM, so only two nodes are clamped
        const auto p = evaluate_with_interventions(m, data, data.test, {plan});
        CHECK(p.clamped_per_sample == 2.0);
        CHECK(p.level == 2u);
        const auto acc = node_accuracy(m, data, data.test, clamps);
        double rest = 0.0;
        for (std::size_t i = 0; i < acc.size(); ++i) {
            if (i != smoke && i != either) rest += acc[i];
        }
        CHECK(p.downstream_accuracy == doctest::Approx(rest / 5.0).epsilon(1e-12));
        CHECK(p.all_accuracy == doctest::Approx((rest + 2.0) / 7.0).epsilon(1e-12));
    }
    SUBCASE("do-values override the ground truth") {
        InterventionPlan plan{{"lung"}, {{"lung", 1}}, std::nullopt};
        const auto clamps = plan_clamps(m, data, data.test, {plan});
        const auto lung = *m.find_node("lung");
        for (int v : clamps[lung]) CHECK(v == 1);
        CHECK_THROWS_AS(plan_clamps(m, data, data.test, {InterventionPlan{{}, {{"lung", 2}}, {}}}), ConfigError);
        CHECK_THROWS_AS(plan_clamps(m, data, data.test, {InterventionPlan{{}, {{"xray", 0}}, {}}}), UnknownNode);
        CHECK_THROWS_AS(plan_clamps(m, data, data.test, std::vector<InterventionPlan>(3)), ShapeMismatch);
    }
    SUBCASE("curve has a point per level") {
        const auto curve = intervention_curve(m, data, data.test, g, 1.0, 0);
        REQUIRE(curve.size() == 5);
        CHECK_FALSE(curve[0].level.has_value());
        const double clamped[] = {0.0, 2.0, 5.0, 6.0, 6.0};
        for (std::size_t k = 0; k < 5; ++k) {
            CHECK(curve[k].clamped_per_sample == clamped[k]);
            if (k > 0) CHECK(curve[k].level == k - 1);
        }
        // with every concept clamped only the task is scored
        CHECK(curve[4].downstream_accuracy == curve[4].task_accuracy);
        const auto j = curve[0].to_json();
        CHECK(j["level"].is_null());
    }
}

TEST_CASE("CaCE") {
    const auto g = fixtures::asia_truth();
    const std::vector<std::size_t> cards(8, 2);
    Rng rng(17);
    const auto data = labelled_data(g, cards, 100, 5, rng);
    C2bmModel m(g, cards, "dysp", 5, tiny_config(4));
    perturb(m, rng);

    CHECK(cace(m, data, data.test, "smoke", "dysp") > 1e-6);
    // no directed path from tub to bronc
    CHECK(cace(m, data, data.test, "tub", "bronc") == 0.0);
    CHECK(cace(m, data, data.test, "dysp", "smoke") == 0.0);
    // smoke reaches lung only directly; blocking bronc leaves that path open
    CHECK(blocked_cace(m, data, data.test, "smoke", "lung", "bronc") ==
          cace(m, data, data.test, "smoke", "lung"));
    // either is the only route from tub to dysp
    CHECK(cace(m, data, data.test, "tub", "dysp") > 1e-6);
    CHECK(blocked_cace(m, data, data.test, "tub", "dysp", "either") == 0.0);
    CHECK(blocked_cace(m, data, data.test, "smoke", "dysp", "smoke") == 0.0);

    std::vector<std::size_t> multi = cards;
    multi[g.index_of("lung")] = 3;
    auto data3 = labelled_data(g, multi, 20, 5, rng);
    C2bmModel m3(g, multi, "dysp", 5, tiny_config(4));
    CHECK_THROWS_AS(cace(m3, data3, data3.test, "lung", "dysp"), NonBinaryConcept);
    CHECK_THROWS_AS(cace(m3, data3, data3.test, "smoke", "lung"), NonBinaryConcept);
    CHECK_THROWS_AS(cace(m, data, data.test, "xray", "dysp"), UnknownNode);
    CHECK_THROWS_AS(blocked_cace(m, data, data.test, "tub", "dysp", "nope"), UnknownNode);
}

TEST_CASE("blocking a cut vertex zeroes CaCE on random DAGs") {
    Rng rng(2718);
    int checked = 0;
    for (int trial = 0; trial < 60 && checked < 25; ++trial) {
        const std::size_t n = 4 + rng.below(3);
        const auto dag = fixtures::random_dag(n, 0.5, rng);
        // a target with a single parent, and a proper ancestor of that parent
        for (NodeIndex t = 0; t < n; ++t) {
            const auto pa = dag.parents(t);
            if (pa.size() != 1) continue;
            const auto anc = ancestors_of(dag, pa[0]);
            std::vector<NodeIndex> sources;
            for (NodeIndex c : anc) {
                if (c != pa[0]) sources.push_back(c);
            }
            if (sources.empty()) continue;
            const NodeIndex c = sources[rng.below(sources.size())];
            const std::vector<std::size_t> cards(n, 2);
            const auto data = labelled_data(dag, cards, 40, 3, rng);
            C2bmModel m(dag, cards, dag.name(t), 3, tiny_config(static_cast<std::uint64_t>(trial)));
            perturb(m, rng);
            CHECK(blocked_cace(m, data, data.test, dag.name(c), dag.name(t), dag.name(pa[0])) == 0.0);
            ++checked;
            break;
        }
    }
    CHECK(checked >= 20);
}

TEST_CASE("a clamp that matches a one-hot prediction is a no-op") {
    const auto g = fixtures::asia_truth();
    const std::vector<std::size_t> cards(8, 2);
    Rng rng(5);
    const auto data = labelled_data(g, cards, 50, 4, rng);
    C2bmModel m(g, cards, "dysp", 4, tiny_config(2));
    perturb(m, rng);
    // saturate smoke's root head so its prediction is exactly one-hot
    const auto smoke = *m.find_node("smoke");
    auto& head = m.head(smoke);
    for (auto* p : head.parameters()) std::fill(p->value.data.begin(), p->value.data.end(), 0.0);
    head.bias(head.widths().size() - 2).value.data = {0.0, 1000.0};

    const Tensor x = data.features.select_rows(data.test);
    const auto free = m.predict(x);
    for (std::size_t k = 0; k < data.test.size(); ++k) REQUIRE(free[smoke](k, 1) == 1.0);
    Clamps same(m.node_count());
    same[smoke].assign(data.test.size(), 1);
    const auto clamped = m.predict(x, same);
    for (std::size_t i = 0; i < m.node_count(); ++i) CHECK(clamped[i].data == free[i].data);

    same[smoke].assign(data.test.size(), 0);
    const auto flipped = m.predict(x, same);
    CHECK(flipped[*m.find_node("lung")].data != free[*m.find_node("lung")].data);
}
