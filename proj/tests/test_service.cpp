#include <doctest.h>

#include <atomic>
#include <cmath>
#include <thread>

#include <httplib.h>

#include "c2bm/errors.hpp"
#include "c2bm/io.hpp"
#include "c2bm/service.hpp"
#include "run_fixture.hpp"

using namespace c2bm;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const ApiService& shared_service() {
    static const ApiService service(fixtures::small_asia_run());
    return service;
}

std::vector<double> probs_of(const json& body, const std::string& node) {
    return body.at("probabilities").at(node).get<std::vector<double>>();
}

}  // namespace

TEST_CASE("service refuses a run without a checkpoint") {
    fixtures::TempDir dir("empty_run");
    CHECK_THROWS_AS(ApiService(dir.path()), CheckpointMissing);
}

TEST_CASE("graph endpoint lists ancestors with depth levels") {
    const auto& svc = shared_service();
    const auto r = svc.graph();
    REQUIRE(r.status == 200);
    const auto& model = svc.model();
    CHECK(r.body.at("nodes").size() == model.node_count());
    CHECK(r.body.at("task") == "dysp");
    const auto depth = depth_levels(model.graph());
    for (const auto& n : r.body.at("nodes")) {
        const std::size_t i = n.at("index");
        CHECK(n.at("name") == model.node_names()[i]);
        CHECK(n.at("depth") == depth[i]);
        CHECK(n.at("states").size() == n.at("cardinality").get<std::size_t>());
        CHECK(n.at("is_task") == (i == model.task()));
    }
    CHECK(r.body.at("edges").size() == model.graph().directed_edges().size());
    bool xray_dropped = false;
    for (const auto& d : r.body.at("dropped")) xray_dropped = xray_dropped || d == "xray";
    CHECK(xray_dropped);
}

TEST_CASE("samples endpoint pages through a split") {
    const auto& svc = shared_service();
    const auto r = svc.samples("test", 5, 3);
    REQUIRE(r.status == 200);
    REQUIRE(r.body.at("samples").size() == 3);
    CHECK(r.body.at("total") == svc.data().test.size());
    const auto& first = r.body.at("samples")[0];
    CHECK(first.at("sample_index") == svc.data().test[5]);
    CHECK_FALSE(first.contains("features"));
    CHECK(first.at("concepts").size() == svc.data().concepts.names.size());
    CHECK(first.at("predictions").size() == svc.model().node_count());

    CHECK(svc.samples("test", svc.data().test.size() + 10, 5).body.at("samples").empty());
    CHECK(svc.samples("holdout", 0, 5).status == 400);
    CHECK(svc.samples("test", 0, 0).status == 400);
    CHECK(svc.samples("test", 0, 501).status == 400);
}

TEST_CASE("predict by index and by raw features agree") {
    const auto& svc = shared_service();
    const std::size_t row = svc.data().test[0];
    const auto by_index = svc.predict({{"sample_index", row}});
    REQUIRE(by_index.status == 200);
    CHECK(by_index.body.at("clamped").empty());

    // features.csv is standardized; undo it to recover the raw vector
    const auto spec = load_feature_spec(RunPaths{fixtures::small_asia_run()}.feature_spec());
    std::vector<double> raw;
    for (std::size_t c = 0; c < svc.data().features.cols; ++c) {
        raw.push_back(svc.data().features(row, c) * spec.stddev[c] + spec.mean[c]);
    }
    const auto by_raw = svc.predict({{"raw_features", raw}});
    REQUIRE(by_raw.status == 200);
    for (const auto& name : svc.model().node_names()) {
        const auto a = probs_of(by_index.body, name);
        const auto b = probs_of(by_raw.body, name);
        for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k] == doctest::Approx(b[k]).epsilon(1e-9));
    }
    raw.pop_back();
    CHECK(svc.predict({{"raw_features", raw}}).status == 400);
    CHECK(svc.predict({{"sample_index", svc.data().concepts.rows}}).status == 404);
    CHECK(svc.predict({{"sample_index", -1}}).status == 400);
    CHECK(svc.predict(json::object()).status == 400);
}

TEST_CASE("intervene returns an exact one-hot and spares non-descendants") {
    const auto& svc = shared_service();
    const auto& model = svc.model();
    const std::size_t row = svc.data().test[1];
    const auto base = svc.predict({{"sample_index", row}});
    const auto r = svc.intervene({{"sample_index", row}, {"clamps", {{"bronc", 1}}}});
    REQUIRE(r.status == 200);
    CHECK(probs_of(r.body, "bronc") == std::vector<double>{0.0, 1.0});
    CHECK(r.body.at("clamped") == json::array({"bronc"}));

    const auto bronc = *model.find_node("bronc");
    const auto below = descendants_of(model.graph(), bronc);
    for (std::size_t i = 0; i < model.node_count(); ++i) {
        if (i == bronc || std::find(below.begin(), below.end(), i) != below.end()) continue;
        CHECK(probs_of(r.body, model.node_names()[i]) == probs_of(base.body, model.node_names()[i]));
    }
    CHECK(svc.intervene({{"sample_index", row}, {"clamps", {{"xray", 1}}}}).status == 400);
    CHECK(svc.intervene({{"sample_index", row}, {"clamps", {{"bronc", 2}}}}).status == 400);
    CHECK(svc.intervene({{"sample_index", row}, {"clamps", {{"bronc", "yes"}}}}).status == 400);
    CHECK(svc.intervene({{"sample_index", row}}).status == 400);
}

TEST_CASE("explain endpoint matches the library call") {
    const auto& svc = shared_service();
    const auto* c2 = dynamic_cast<const C2bmModel*>(&svc.model());
    REQUIRE(c2 != nullptr);
    const std::size_t row = svc.data().test[2];
    Clamps clamps(c2->node_count());
    clamps[*c2->find_node("smoke")] = {0};
    const auto lib = c2->explain(svc.data().features.select_rows(std::vector<std::size_t>{row}), clamps);
    const auto r = svc.explain({{"sample_index", row}, {"clamps", {{"smoke", 0}}}});
    REQUIRE(r.status == 200);
    REQUIRE(r.body.at("edges").size() == lib.edges.size());
    for (std::size_t k = 0; k < lib.edges.size(); ++k) {
        const auto& e = r.body.at("edges")[k];
        CHECK(e.at("parent") == c2->node_names()[lib.edges[k].parent]);
        CHECK(e.at("child") == c2->node_names()[lib.edges[k].child]);
        for (std::size_t a = 0; a < lib.edges[k].matrix.rows; ++a) {
            for (std::size_t b = 0; b < lib.edges[k].matrix.cols; ++b) {
                CHECK(std::abs(e.at("weights")[a][b].get<double>() - lib.edges[k].matrix(a, b)) < 1e-6);
            }
        }
        if (lib.summaries[k]) CHECK(std::abs(e.at("summary").get<double>() - *lib.summaries[k]) < 1e-6);
    }
    for (std::size_t i = 0; i < c2->node_count(); ++i) {
        const auto p = probs_of(r.body, c2->node_names()[i]);
        for (std::size_t k = 0; k < p.size(); ++k) CHECK(std::abs(p[k] - lib.probabilities[i][k]) < 1e-6);
    }
}

TEST_CASE("explain needs a c2bm checkpoint") {
    fixtures::TempDir dir("flat_run");
    const RunPaths src{fixtures::small_asia_run()};
    fs::copy(src.root, dir.path(), fs::copy_options::recursive);
    fs::copy_file(src.baseline("cbm_linear"), RunPaths{dir.path()}.model(), fs::copy_options::overwrite_existing);
    const ApiService flat(dir.path());
    const auto r = flat.explain({{"sample_index", 0}});
    CHECK(r.status == 400);
    CHECK(r.body.contains("error"));
    CHECK(flat.intervene({{"sample_index", 0}, {"clamps", {{"xray", 1}}}}).status == 200);
}

TEST_CASE("metrics returns the stored report and live clamp evaluations") {
    const auto& svc = shared_service();
    const auto stored = svc.metrics("");
    REQUIRE(stored.status == 200);
    CHECK(stored.body.at("report") == json::parse(read_text_file(RunPaths{fixtures::small_asia_run()}.report())));
    CHECK_FALSE(stored.body.contains("live"));

    const auto live = svc.metrics("bronc,either,smoke:1");
    REQUIRE(live.status == 200);
    const auto& point = live.body.at("live");
    CHECK(point.at("clamps").at("nodes") == json::array({"bronc", "either"}));
    // live points involve no sampling, so they repeat exactly
    CHECK(svc.metrics("bronc,either,smoke:1").body == live.body);
    CHECK(svc.metrics("nope").status == 400);
    CHECK(svc.metrics("smoke:x").status == 400);
}

TEST_CASE("api calls leave the model unchanged") {
    const auto& svc = shared_service();
    const std::string before = read_text_file(RunPaths{fixtures::small_asia_run()}.model());
    const auto first = svc.samples("test", 0, 20).body;
    for (int k = 0; k < 5; ++k) {
        svc.intervene({{"sample_index", k}, {"clamps", {{"bronc", k % 2}, {"smoke", 1}}}});
        svc.explain({{"sample_index", k}, {"clamps", {{"lung", 1}}}});
        svc.metrics("lung:0");
    }
    CHECK(svc.samples("test", 0, 20).body == first);
    CHECK(read_text_file(RunPaths{fixtures::small_asia_run()}.model()) == before);
}

TEST_CASE("concurrent requests see independent inference passes") {
    const auto& svc = shared_service();
    const auto expected = svc.intervene({{"sample_index", 3}, {"clamps", {{"lung", 0}}}}).body;
    std::atomic<int> mismatches{0};
    std::vector<std::thread> workers;
    for (int t = 0; t < 4; ++t) {
        workers.emplace_back([&] {
            for (int k = 0; k < 10; ++k) {
                if (svc.intervene({{"sample_index", 3}, {"clamps", {{"lung", 0}}}}).body != expected) ++mismatches;
                svc.predict({{"sample_index", k}});
            }
        });
    }
    for (auto& w : workers) w.join();
    CHECK(mismatches == 0);
}

TEST_CASE("http server routes the api over a socket") {
    const auto& svc = shared_service();
    std::atomic<int> port{0};
    std::atomic<bool> stop{false};
    std::thread server([&] {
        ServeOptions opts;
        opts.port = 0;
        serve(svc, opts, [&](int p) { port = p; }, [&] { return stop.load(); });
    });
    while (port == 0) std::this_thread::sleep_for(std::chrono::milliseconds(10));

    httplib::Client cli("127.0.0.1", port);
    auto graph = cli.Get("/api/v1/graph");
    REQUIRE(graph);
    CHECK(graph->status == 200);
    CHECK(json::parse(graph->body) == svc.graph().body);

    auto page = cli.Get("/api/v1/samples?split=test&offset=2&limit=4");
    REQUIRE(page);
    CHECK(json::parse(page->body) == svc.samples("test", 2, 4).body);
    CHECK(cli.Get("/api/v1/samples?limit=abc")->status == 400);

    const json req{{"sample_index", 4}, {"clamps", {{"bronc", 1}}}};
    auto iv = cli.Post("/api/v1/intervene", req.dump(), "application/json");
    REQUIRE(iv);
    CHECK(json::parse(iv->body) == svc.intervene(req).body);
    auto ex = cli.Post("/api/v1/explain", req.dump(), "application/json");
    CHECK(json::parse(ex->body) == svc.explain(req).body);
    auto pr = cli.Post("/api/v1/predict", "{not json", "application/json");
    CHECK(pr->status == 400);
    CHECK(json::parse(pr->body).at("type") == "bad_request");
    CHECK(cli.Get("/api/v1/metrics?clamps=bronc")->status == 200);
    CHECK(cli.Get("/api/v1/nothing")->status == 404);

    stop = true;
    server.join();
}

TEST_CASE("binding a taken port fails") {
    httplib::Server blocker;
    const int port = blocker.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    ServeOptions opts;
    opts.port = port;
    CHECK_THROWS_AS(serve(shared_service(), opts), BindFailure);
}
