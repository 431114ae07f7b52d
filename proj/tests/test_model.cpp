#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "c2bm/errors.hpp"
#include "c2bm/model.hpp"
#include "fixtures.hpp"
#include "gradcheck.hpp"

using namespace c2bm;

namespace {

void zero(Mlp& m) {
    for (auto* p : m.parameters()) std::fill(p->value.data.begin(), p->value.data.end(), 0.0);
}

void set_last_bias(Mlp& m, const std::vector<double>& values) {
    auto& b = m.bias(m.widths().size() - 2).value;
    REQUIRE(b.cols == values.size());
    b.data = values;
}

Tensor random_features(std::size_t rows, std::size_t cols, Rng& rng) {
    Tensor t(rows, cols);
    for (double& v : t.data) v = rng.normal();
    return t;
}

MixedGraph chain(std::size_t n) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < n; ++i) names.push_back("v" + std::to_string(i));
    MixedGraph g(names);
    for (std::size_t i = 0; i + 1 < n; ++i) g.add_directed(i, i + 1);
    return g;
}

double softmax1(double l0, double l1) { return 1.0 / (1.0 + std::exp(l0 - l1)); }

ModelConfig small_config() {
    ModelConfig c;
    c.embedding_dim = 4;
    c.encoder_hidden = 5;
    c.head_hidden = 6;
    return c;
}

}  // namespace

TEST_CASE("model config JSON") {
    ModelConfig c;
    c.alpha = 0.3;
    c.fixed_weights = true;
    c.seed = 9;
    const auto back = ModelConfig::from_json(c.to_json());
    CHECK(back.alpha == 0.3);
    CHECK(back.fixed_weights);
    CHECK(back.seed == 9);
    CHECK(ModelConfig::from_json(nlohmann::json::object()).alpha == 0.8);
    CHECK(ModelConfig::from_json(nlohmann::json::object()).train_intervention_prob == 0.25);
    CHECK_THROWS_AS(ModelConfig::from_json({{"alpha", 1.5}}), ConfigError);
    CHECK_THROWS_AS(ModelConfig::from_json({{"train_intervention_prob", -0.1}}), ConfigError);
    CHECK_THROWS_AS(ModelConfig::from_json({{"lr", 0.0}}), ConfigError);
}

TEST_CASE("ancestor pruning on Asia") {
    const auto g = fixtures::asia_truth();
    C2bmModel m(g, std::vector<std::size_t>(8, 2), "dysp", 10, small_config());
    CHECK(m.node_count() == 7);
    CHECK(m.dropped() == std::vector<std::string>{"xray"});
    CHECK(m.node_names()[m.task()] == "dysp");
    CHECK(m.graph().edge_count() == 7);
    CHECK_FALSE(m.find_node("xray").has_value());

    // hypernetwork width = sum over parents of card(i) * card(j)
    std::vector<std::size_t> cards{2, 2, 3, 2, 4, 2, 2, 2};
    C2bmModel multi(g, cards, "dysp", 10, small_config());
    const auto either = *multi.find_node("either");
    CHECK(multi.head(either).out_width() == 2 * 2 + 2 * 2);
    const auto bronc = *multi.find_node("bronc");
    CHECK(multi.head(bronc).out_width() == 4 * 3);
    const auto smoke = *multi.find_node("smoke");
    CHECK(multi.head(smoke).out_width() == 3);  // root head emits logits

    CHECK_THROWS_AS(C2bmModel(g, cards, "nope", 10, small_config()), UnknownNode);
    auto cyclic = g;
    cyclic.set_undirected(0, 1);
    CHECK_THROWS_AS(C2bmModel(cyclic, cards, "dysp", 10, small_config()), InvalidGraph);
}

TEST_CASE("encode_exogenous") {
    const auto g = chain(2);
    C2bmModel m(g, {2, 2}, "v1", 2, small_config());
    for (std::size_t i = 0; i < 2; ++i) zero(m.encoder(i));
    set_last_bias(m.encoder(0), {1, 2, 3, 4});
    Rng rng(1);
    const auto u = m.encode_exogenous(random_features(3, 2, rng));
    REQUIRE(u.size() == 2);
    CHECK(u[0].rows == 3);
    CHECK(u[0].cols == 4);
    for (std::size_t r = 0; r < 3; ++r) CHECK(std::vector<double>(u[0].row(r).begin(), u[0].row(r).end()) == std::vector<double>{1, 2, 3, 4});
    for (double v : u[1].data) CHECK(v == 0.0);

    // hand-set tiny weights: h = leaky(x W0 + b0), U = h W1 + b1
    Mlp& e = m.encoder(1);
    zero(e);
    e.weight(0).value(0, 0) = 0.5;   // h0 = 0.5 x0
    e.weight(0).value(1, 1) = -1.0;  // h1 = -x1
    e.weight(1).value(0, 0) = 2.0;   // U0 = 2 h0
    e.weight(1).value(1, 0) = 1.0;   //    + h1
    e.weight(1).value(1, 3) = 3.0;   // U3 = 3 h1
    const Tensor x(1, 2, {2.0, 4.0});
    // h = [1, leaky(-4) = -0.04, 0, 0, 0]; U0 = 2 - 0.04, U3 = -0.12
    const auto v = m.encode_exogenous(x)[1];
    CHECK(v(0, 0) == doctest::Approx(1.96).epsilon(1e-12));
    CHECK(v(0, 1) == 0.0);
    CHECK(v(0, 3) == doctest::Approx(-0.12).epsilon(1e-12));

    CHECK_THROWS_AS(m.encode_exogenous(Tensor(1, 3)), ShapeMismatch);
}

TEST_CASE("zero hypernetworks give uniform children") {
    const auto g = fixtures::asia_truth();
    C2bmModel m(g, std::vector<std::size_t>(8, 2), "dysp", 6, small_config());
    for (std::size_t i = 0; i < m.node_count(); ++i) {
        if (!m.graph().parents(i).empty()) zero(m.head(i));
    }
    Rng rng(3);
    const auto x = random_features(4, 6, rng);
    const auto w = m.emit_weights(m.encode_exogenous(x));
    const auto p = m.predict(x);
    for (std::size_t i = 0; i < m.node_count(); ++i) {
        const auto parents = m.graph().parents(i);
        CHECK(w[i].size() == parents.size());
        for (const auto& block : w[i]) {
            CHECK(block.cols == 4);  // binary child, binary parent: 2 x 2
            for (double v : block.data) CHECK(v == 0.0);
        }
        if (!parents.empty()) {
            for (double v : p[i].data) CHECK(v == doctest::Approx(0.5).epsilon(1e-15));
        }
    }
    const auto ex = m.explain(x.select_rows(std::vector<std::size_t>{0}));
    CHECK(ex.edges.size() == 7);
    for (const auto& s : ex.summaries) CHECK(*s == 0.0);
}

TEST_CASE("hand-set chain matches the softmax oracle") {
    // a -> b -> c, all binary. Root logits and structural weights are set
    // through the final biases, with every weight matrix zero.
    const auto g = chain(3);
    C2bmModel m(g, {2, 2, 2}, "v2", 3, small_config());
    for (std::size_t i = 0; i < 3; ++i) zero(m.head(i));
    set_last_bias(m.head(0), {0.3, 1.1});
    set_last_bias(m.head(1), {0.5, -1.0, 2.0, 0.25});   // W_ba row-major
    set_last_bias(m.head(2), {-0.7, 1.5, 0.4, -2.0});   // W_cb
    Rng rng(5);
    const auto x = random_features(2, 3, rng);
    const auto p = m.predict(x);

    const double pa1 = softmax1(0.3, 1.1);
    const double pa0 = 1 - pa1;
    const double pb1 = softmax1(0.5 * pa0 - 1.0 * pa1, 2.0 * pa0 + 0.25 * pa1);
    const double pb0 = 1 - pb1;
    const double pc1 = softmax1(-0.7 * pb0 + 1.5 * pb1, 0.4 * pb0 - 2.0 * pb1);
    for (std::size_t r = 0; r < 2; ++r) {
        CHECK(p[0](r, 1) == doctest::Approx(pa1).epsilon(1e-12));
        CHECK(p[1](r, 1) == doctest::Approx(pb1).epsilon(1e-12));
        CHECK(p[2](r, 1) == doctest::Approx(pc1).epsilon(1e-12));
    }

    // the encode / emit / propagate decomposition agrees with predict
    const auto u = m.encode_exogenous(x);
    const auto q = m.propagate(u, m.emit_weights(u));
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t k = 0; k < p[i].size(); ++k) CHECK(q[i].data[k] == doctest::Approx(p[i].data[k]).epsilon(1e-14));
    }

    // clamp b = 0: b is exactly one-hot and c follows from it
    Clamps clamps(3);
    clamps[1] = {0, -1};
    const auto pc = m.predict(x, clamps);
    CHECK(pc[1](0, 0) == 1.0);
    CHECK(pc[1](0, 1) == 0.0);
    CHECK(pc[2](0, 1) == doctest::Approx(softmax1(-0.7, 0.4)).epsilon(1e-12));
    CHECK(pc[2](1, 1) == doctest::Approx(pc1).epsilon(1e-12));  // row 1 not clamped
    const auto ex = m.explain(x.select_rows(std::vector<std::size_t>{0}), Clamps{{}, {0}, {}});
    CHECK(ex.probabilities[1] == std::vector<double>{1.0, 0.0});
    REQUIRE(ex.summaries.size() == 2);
    CHECK(*ex.summaries[0] == doctest::Approx(0.25 - 2.0));
    CHECK(*ex.summaries[1] == doctest::Approx(-2.0 - 0.4));

    Clamps bad(3);
    bad[1] = {2, 0};
    CHECK_THROWS_AS(m.predict(x, bad), ShapeMismatch);
    CHECK_THROWS_AS(m.predict(x, Clamps(2)), ShapeMismatch);
}

TEST_CASE("structural weights depend on the input") {
    const auto g = chain(2);
    C2bmModel m(g, {2, 2}, "v1", 3, small_config());
    const Tensor x(2, 3, {1.0, -0.5, 0.2, -1.0, 2.0, 0.7});
    const auto w = m.emit_weights(m.encode_exogenous(x));
    CHECK(w[1][0].row(0)[0] != w[1][0].row(1)[0]);

    ModelConfig fixed = small_config();
    fixed.fixed_weights = true;
    C2bmModel f(g, {2, 2}, "v1", 3, fixed);
    const auto wf = f.emit_weights(f.encode_exogenous(x));
    for (std::size_t k = 0; k < 4; ++k) CHECK(wf[1][0].row(0)[k] == wf[1][0].row(1)[k]);
}

TEST_CASE("explain summary sign matches the autodiff derivative") {
    const auto g = fixtures::asia_truth();
    ModelConfig cfg = small_config();
    cfg.seed = 17;
    C2bmModel m(g, std::vector<std::size_t>(8, 2), "dysp", 5, cfg);
    Rng rng(8);
    for (int trial = 0; trial < 10; ++trial) {
        const auto x = random_features(1, 5, rng);
        const auto ex = m.explain(x);
        for (std::size_t e = 0; e < ex.edges.size(); ++e) {
            // d logit_child[1] / d p_parent[1] along the simplex p = [1 - s, s]
            Parameter s("s", Tensor(1, 1, 0.4));
            Tape tape;
            Var sv = tape.param(s);
            Var p = concat_cols({sub(tape.constant(Tensor(1, 1, 1.0)), sv), sv});
            Var w = tape.constant(Tensor(1, 4, ex.edges[e].matrix.data));
            Var logit1 = slice_cols(batched_matvec(w, p), 1, 1);
            s.zero_grad();
            tape.backward(sum(logit1));
            const double d = s.grad.data[0];
            CHECK(d == doctest::Approx(*ex.summaries[e]).epsilon(1e-12));
            CHECK((d > 0) == (*ex.summaries[e] > 0));
        }
    }
}

TEST_CASE("probabilities stay normalized under fuzzed clamps") {
    Rng rng(2025);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t n = 3 + rng.below(4);
        auto g = fixtures::random_dag(n, 0.5, rng);
        // make the last topological node the task with everyone as ancestor
        const auto order = topological_order(g);
        const NodeIndex task = order.back();
        for (NodeIndex v : order) {
            if (v != task && !g.adjacent(v, task)) g.add_directed(v, task);
        }
        std::vector<std::size_t> cards(n);
        for (auto& c : cards) c = 2 + rng.below(3);
        ModelConfig cfg = small_config();
        cfg.seed = static_cast<std::uint64_t>(trial);
        C2bmModel m(g, cards, g.name(task), 4, cfg);
        const std::size_t rows = 20;
        const auto x = random_features(rows, 4, rng);
        for (int pattern = 0; pattern < 100; ++pattern) {
            Clamps clamps(m.node_count());
            for (std::size_t i = 0; i < m.node_count(); ++i) {
                if (!rng.bernoulli(0.5)) continue;
                clamps[i].resize(rows);
                for (int& v : clamps[i]) v = rng.bernoulli(0.3) ? -1 : static_cast<int>(rng.below(m.cardinalities()[i]));
            }
            const auto p = m.predict(x, clamps);
            for (std::size_t i = 0; i < p.size(); ++i) {
                for (std::size_t r = 0; r < rows; ++r) {
                    double total = 0.0;
                    for (double v : p[i].row(r)) {
                        CHECK(std::isfinite(v));
                        total += v;
                    }
                    CHECK(std::abs(total - 1.0) <= 1e-6);
                    if (!clamps[i].empty() && clamps[i][r] >= 0) {
                        CHECK(p[i](r, static_cast<std::size_t>(clamps[i][r])) == 1.0);
                    }
                }
            }
        }
    }
}

TEST_CASE("do-blocking on a chain") {
    const auto g = chain(4);
    ModelConfig cfg = small_config();
    cfg.seed = 4;
    C2bmModel m(g, {2, 3, 2, 2}, "v3", 5, cfg);
    Rng rng(12);
    const auto x = random_features(8, 5, rng);
    for (int v1 = 0; v1 < 3; ++v1) {
        Clamps base(4);
        base[1].assign(8, v1);
        const auto ref = m.predict(x, base);
        for (int v0 = 0; v0 < 2; ++v0) {
            Clamps c = base;
            c[0].assign(8, v0);
            const auto p = m.predict(x, c);
            for (std::size_t i = 1; i < 4; ++i) CHECK(p[i].data == ref[i].data);
        }
    }
    // without the clamp on v1, the upstream clamp does reach the task
    Clamps a(4), b(4);
    a[0].assign(8, 0);
    b[0].assign(8, 1);
    CHECK(m.predict(x, a)[3].data != m.predict(x, b)[3].data);
}

TEST_CASE("joint likelihood factorizes into per-node conditionals") {
    const auto g = fixtures::asia_truth();
    ModelConfig cfg = small_config();
    cfg.seed = 21;
    cfg.alpha = 0.5;
    C2bmModel m(g, std::vector<std::size_t>(8, 2), "dysp", 6, cfg);
    Rng rng(13);
    const std::size_t rows = 16;
    const auto x = random_features(rows, 6, rng);
    std::vector<std::vector<int>> labels(m.node_count(), std::vector<int>(rows));
    for (auto& col : labels) {
        for (int& v : col) v = static_cast<int>(rng.below(2));
    }
    Clamps all(m.node_count());
    for (std::size_t i = 0; i < m.node_count(); ++i) all[i] = labels[i];

    // joint: every node observed at once; loss = 0.5 * mean(-log P(v | x))
    Tape tape(false);
    const double joint = m.loss(tape, x, labels, all).value().data[0];

    // conditionals: node i evaluated alone with only its parents clamped
    double summed = 0.0;
    std::vector<double> per_row(rows, 0.0);
    for (std::size_t i = 0; i < m.node_count(); ++i) {
        Clamps parents_only(m.node_count());
        for (std::size_t j : m.graph().parents(i)) parents_only[j] = labels[j];
        const auto p = m.predict(x, parents_only)[i];
        for (std::size_t r = 0; r < rows; ++r) per_row[r] += -std::log(p(r, static_cast<std::size_t>(labels[i][r])));
    }
    for (double v : per_row) summed += v;
    summed = 0.5 * summed / static_cast<double>(rows);
    CHECK(joint == doctest::Approx(summed).epsilon(1e-12));
}

TEST_CASE("loss closed forms") {
    const auto g = fixtures::asia_truth();
    ModelConfig cfg = small_config();
    C2bmModel m(g, std::vector<std::size_t>(8, 2), "dysp", 3, cfg);
    Rng rng(4);
    const auto x = random_features(5, 3, rng);
    std::vector<std::vector<int>> ones(m.node_count(), std::vector<int>(5, 1));

    // uniform everywhere: (1 - a) ln 2 + a * C ln 2 with C = 6 concepts
    for (std::size_t i = 0; i < m.node_count(); ++i) zero(m.head(i));
    {
        Tape t(false);
        const double l = m.loss(t, x, ones, {}).value().data[0];
        CHECK(l == doctest::Approx(0.2 * std::log(2.0) + 0.8 * 6 * std::log(2.0)).epsilon(1e-12));
    }
    // confident and correct everywhere: loss ~ 0
    for (std::size_t i = 0; i < m.node_count(); ++i) {
        if (m.graph().parents(i).empty()) {
            set_last_bias(m.head(i), {0.0, 60.0});
        } else {
            std::vector<double> b;
            for (std::size_t k = 0; k < m.graph().parents(i).size(); ++k) {
                const std::vector<double> w{0.0, 0.0, 0.0, 60.0};
                b.insert(b.end(), w.begin(), w.end());
            }
            set_last_bias(m.head(i), b);
        }
    }
    {
        Tape t(false);
        CHECK(m.loss(t, x, ones, {}).value().data[0] < 1e-12);
    }
    CHECK_THROWS_AS(m.loss(*std::make_unique<Tape>(false), Tensor(0, 3), ones, {}), EmptyDataset);
}

TEST_CASE("alpha = 0 ignores concept labels in the gradient") {
    const auto g = fixtures::asia_truth();
    ModelConfig cfg = small_config();
    cfg.alpha = 0.0;
    cfg.seed = 5;
    C2bmModel m(g, std::vector<std::size_t>(8, 2), "dysp", 4, cfg);
    Rng rng(6);
    const auto x = random_features(10, 4, rng);
    std::vector<std::vector<int>> a(m.node_count(), std::vector<int>(10)), b;
    for (auto& col : a) {
        for (int& v : col) v = static_cast<int>(rng.below(2));
    }
    b = a;
    for (std::size_t i = 0; i < m.node_count(); ++i) {
        if (i == m.task()) continue;
        for (int& v : b[i]) v = 1 - v;
    }
    auto grads = [&](const std::vector<std::vector<int>>& labels) {
        for (auto* p : m.parameters()) p->zero_grad();
        Tape t;
        t.backward(m.loss(t, x, labels, {}));
        std::vector<double> out;
        for (auto* p : m.parameters()) out.insert(out.end(), p->grad.data.begin(), p->grad.data.end());
        return out;
    };
    const auto ga = grads(a);
    CHECK(ga == grads(b));
    // the task term alone still produces gradients
    CHECK(std::any_of(ga.begin(), ga.end(), [](double v) { return v != 0.0; }));
}

TEST_CASE("full loss gradient vs finite differences on a 4-node toy") {
    // a -> c, b -> c, c -> d with a ternary b
    MixedGraph g({"a", "b", "c", "d"});
    g.add_directed(0, 2);
    g.add_directed(1, 2);
    g.add_directed(2, 3);
    ModelConfig cfg = small_config();
    cfg.seed = 31;
    C2bmModel m(g, {2, 3, 2, 2}, "d", 3, cfg);
    Rng rng(77);
    const auto x = random_features(6, 3, rng);
    const std::vector<std::vector<int>> labels{{0, 1, 1, 0, 1, 0}, {2, 0, 1, 1, 2, 0}, {1, 1, 0, 0, 1, 0}, {0, 1, 0, 1, 1, 1}};
    Clamps clamps(4);
    clamps[1] = {-1, 0, -1, 2, -1, -1};
    auto loss = [&](Tape& t, bool back) {
        Var l = m.loss(t, x, labels, clamps);
        if (back) t.backward(l);
        return l.value().data[0];
    };
    const auto res = gradcheck::compare(m.parameters(), loss, 1e-5);
    CHECK(res.checked > 300);
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("flat CBM baseline") {
    const std::vector<std::string> names{"a", "b", "t"};
    ModelConfig cfg = small_config();
    FlatCbm lin(names, {2, 3, 2}, "t", 4, DecoderKind::Linear, cfg);
    CHECK(lin.kind() == "cbm_linear");
    CHECK(lin.decoder_weight().rows == 5);
    CHECK(lin.decoder_weight().cols == 2);
    CHECK(lin.graph().edge_count() == 2);
    FlatCbm mlp(names, {2, 3, 2}, "t", 4, DecoderKind::Mlp, cfg);
    CHECK_THROWS_AS(mlp.decoder_weight(), InvalidGraph);
    CHECK_THROWS_AS(FlatCbm(names, {2, 3, 2}, "z", 4, DecoderKind::Linear, cfg), UnknownNode);

    Rng rng(3);
    const auto x = random_features(7, 4, rng);
    Clamps c(3);
    c[1].assign(7, 2);
    const auto p = lin.predict(x, c);
    for (std::size_t r = 0; r < 7; ++r) {
        CHECK(p[1](r, 2) == 1.0);
        CHECK(p[0](r, 0) + p[0](r, 1) == doctest::Approx(1.0));
        CHECK(p[2](r, 0) + p[2](r, 1) == doctest::Approx(1.0));
    }
    const std::vector<std::vector<int>> labels{{0, 1, 0, 1, 0, 1, 1}, {2, 2, 1, 0, 1, 0, 2}, {1, 0, 0, 1, 1, 0, 1}};
    auto loss = [&](Tape& t, bool back) {
        Var l = mlp.loss(t, x, labels, c);
        if (back) t.backward(l);
        return l.value().data[0];
    };
    CHECK(gradcheck::compare(mlp.parameters(), loss, 1e-5).max_rel_err < 1e-4);
}

namespace {

// Two uniform binary roots and c = a XOR b. Features carry a and b with a
// little noise.
Dataset xor_dataset(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    Dataset d;
    d.features = Tensor(n, 4);
    d.concepts = ConceptTable{{"a", "b", "c"}, {2, 2, 2}, n, {}};
    for (std::size_t r = 0; r < n; ++r) {
        const int a = static_cast<int>(rng.below(2));
        const int b = static_cast<int>(rng.below(2));
        d.concepts.values.insert(d.concepts.values.end(), {a, b, a ^ b});
        d.features(r, 0) = (a ? 1.0 : -1.0) + 0.1 * rng.normal();
        d.features(r, 1) = (b ? 1.0 : -1.0) + 0.1 * rng.normal();
        d.features(r, 2) = rng.normal();
        d.features(r, 3) = rng.normal();
        (r % 10 < 7 ? d.train : r % 10 < 8 ? d.val : d.test).push_back(r);
    }
    return d;
}

}  // namespace

TEST_CASE("adaptive weights fit XOR, fixed linear weights cannot") {
    const auto data = xor_dataset(3000, 99);
    MixedGraph g({"a", "b", "c"});
    g.add_directed(0, 2);
    g.add_directed(1, 2);
    ModelConfig cfg;
    cfg.seed = 1;
    cfg.max_epochs = 150;
    C2bmModel adaptive(g, {2, 2, 2}, "c", 4, cfg);
    train_model(adaptive, data);
    const double acc_adaptive = node_accuracy(adaptive, data, data.test)[2];

    cfg.fixed_weights = true;
    C2bmModel fixed(g, {2, 2, 2}, "c", 4, cfg);
    train_model(fixed, data);
    const double acc_fixed = node_accuracy(fixed, data, data.test)[2];
    MESSAGE("XOR child accuracy: adaptive " << acc_adaptive << ", fixed " << acc_fixed);
    CHECK(acc_adaptive > 0.95);
    CHECK(acc_fixed <= 0.75);
}

TEST_CASE("training contract and persistence") {
    const auto data = xor_dataset(600, 5);
    MixedGraph g({"a", "b", "c"});
    g.add_directed(0, 2);
    g.add_directed(1, 2);
    ModelConfig cfg = small_config();
    cfg.seed = 3;
    cfg.max_epochs = 60;
    cfg.patience = 5;
    cfg.batch_size = 64;
    C2bmModel m1(g, {2, 2, 2}, "c", 4, cfg);
    C2bmModel m2(g, {2, 2, 2}, "c", 4, cfg);
    std::size_t calls = 0;
    const auto log = train_model(m1, data, [&](std::size_t, double, double) { ++calls; });
    train_model(m2, data);
    CHECK(calls == log.epochs_run);
    CHECK(log.val_loss.size() == log.epochs_run);
    CHECK(log.epochs_run <= cfg.max_epochs);
    if (log.epochs_run < cfg.max_epochs) CHECK(log.epochs_run - log.best_epoch == cfg.patience);
    const auto p1 = m1.parameters();
    const auto p2 = m2.parameters();
    for (std::size_t i = 0; i < p1.size(); ++i) {
        CHECK(p1[i]->value.data == p2[i]->value.data);
        for (double v : p1[i]->value.data) CHECK(static_cast<double>(static_cast<float>(v)) == v);
    }

    const auto dir = std::filesystem::temp_directory_path() / "c2bm_model_test";
    m1.save(dir / "model.ckpt");
    const auto loaded = load_model(dir / "model.ckpt");
    CHECK(loaded->kind() == "c2bm");
    CHECK(loaded->node_names() == m1.node_names());
    Clamps c(3);
    c[0].assign(data.features.rows, 1);
    CHECK(loaded->predict(data.features, c)[2].data == m1.predict(data.features, c)[2].data);

    FlatCbm flat({"a", "b", "c"}, {2, 2, 2}, "c", 4, DecoderKind::Mlp, cfg);
    train_model(flat, data);
    flat.save(dir / "flat.ckpt");
    const auto lf = load_model(dir / "flat.ckpt");
    CHECK(lf->kind() == "cbm_mlp");
    CHECK(lf->predict(data.features)[2].data == flat.predict(data.features)[2].data);

    write_checkpoint(dir / "other.ckpt", {{"kind", "feature_spec"}}, {});
    CHECK_THROWS_AS(load_model(dir / "other.ckpt"), CheckpointError);
    std::filesystem::remove_all(dir);

    Dataset empty = data;
    empty.train.clear();
    CHECK_THROWS_AS(train_model(m1, empty), EmptyDataset);
}
