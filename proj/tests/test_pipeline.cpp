#include <doctest.h>

#include "c2bm/errors.hpp"
#include "c2bm/io.hpp"
#include "c2bm/pipeline.hpp"
#include "run_fixture.hpp"

using namespace c2bm;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<fs::path> run_outputs(const RunPaths& p) {
    return {p.config(),  p.concepts(), p.features(), p.splits(), p.schema(),      p.feature_spec(),
            p.true_graph(), p.cpdag(), p.refined(),  p.model(),  p.baseline("cbm_linear"), p.report()};
}

}  // namespace

TEST_CASE("run config round trip and validation") {
    RunConfig cfg;
    cfg.dataset.network = "sachs";
    cfg.dataset.task = "Akt";
    cfg.discovery.ess = 10;
    cfg.eval.cace.push_back({"smoke", "dysp", std::string("bronc")});
    const auto back = RunConfig::from_json(cfg.to_json());
    CHECK(back.to_json() == cfg.to_json());

    CHECK_THROWS_AS(RunConfig::from_json({{"oracle", {{"kind", "http"}}}}), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json({{"bogus", json::object()}}), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json({{"dataset", {{"splits", {0.5, 0.5, 0.5}}}}}), ConfigError);
    CHECK_THROWS_AS(resolve_network("no_such_network"), ConfigError);
    CHECK(fs::exists(resolve_network("asia")));
}

TEST_CASE("asia end to end with the stub oracle") {
    const RunPaths paths{fixtures::small_asia_run()};
    for (const auto& p : run_outputs(paths)) CHECK_MESSAGE(fs::exists(p), p.string());

    const auto report = json::parse(read_text_file(paths.report()));
    CHECK(report.at("task") == "dysp");
    const double acc = report.at("models").at("c2bm").at("task_accuracy");
    CHECK(acc > 0.5);
    CHECK(acc <= 1.0);
    CHECK(report.at("models").contains("cbm_linear"));
    for (const char* g : {"cpdag", "refined"}) {
        CHECK(report.at("graphs").at(g).contains("shd"));
        CHECK(report.at("graphs").at(g).contains("mistaken_edges"));
    }
    // the refined graph is a DAG and the model is pruned to task ancestors
    const auto refined = graph_from_json(json::parse(read_text_file(paths.refined())));
    CHECK(refined.is_fully_directed());
    CHECK(directed_part_acyclic(refined));
    const auto model = load_model(paths.model());
    CHECK_FALSE(model->find_node("xray"));
}

TEST_CASE("rerun without force skips every stage and leaves outputs untouched") {
    const RunPaths paths{fixtures::small_asia_run()};
    std::vector<std::string> before;
    for (const auto& p : run_outputs(paths)) before.push_back(read_text_file(p));

    Pipeline again(fixtures::small_asia_config(), paths.root);
    CHECK(again.generate() == StageStatus::Skipped);
    CHECK(again.discover() == StageStatus::Skipped);
    CHECK(again.refine() == StageStatus::Skipped);
    CHECK(again.train() == StageStatus::Skipped);
    CHECK(again.evaluate() == StageStatus::Skipped);

    std::size_t k = 0;
    for (const auto& p : run_outputs(paths)) CHECK_MESSAGE(read_text_file(p) == before[k++], p.string());
}

TEST_CASE("identical config and seeds give byte-identical files") {
    const RunPaths first{fixtures::small_asia_run()};
    fixtures::TempDir dir("determinism");
    Pipeline(fixtures::small_asia_config(), dir.path()).run_all();
    const RunPaths second{dir.path()};
    CHECK(read_text_file(first.concepts()) == read_text_file(second.concepts()));
    CHECK(read_text_file(first.features()) == read_text_file(second.features()));
    CHECK(read_text_file(first.splits()) == read_text_file(second.splits()));
    CHECK(read_text_file(first.model()) == read_text_file(second.model()));
    CHECK(read_text_file(first.report()) == read_text_file(second.report()));
}

TEST_CASE("forced stages rerun and a different seed changes the data") {
    fixtures::TempDir dir("force");
    auto cfg = fixtures::small_asia_config();
    cfg.dataset.n = 300;
    Pipeline p(cfg, dir.path());
    CHECK(p.generate() == StageStatus::Ran);
    CHECK(p.generate() == StageStatus::Skipped);
    const auto original = read_text_file(p.paths().concepts());
    cfg.set_seed(7);
    Pipeline forced(cfg, dir.path(), true);
    CHECK(forced.generate() == StageStatus::Ran);
    CHECK(read_text_file(p.paths().concepts()) != original);
}

TEST_CASE("stage failures carry the stage name") {
    fixtures::TempDir dir("stage_error");
    Pipeline p(fixtures::small_asia_config(), dir.path());
    try {
        p.refine();
        FAIL("refine without a dataset must fail");
    } catch (const StageError& e) {
        CHECK(e.stage() == "refine");
    }
    auto cfg = fixtures::small_asia_config();
    cfg.dataset.task = "not_a_variable";
    Pipeline bad(cfg, dir.path());
    try {
        bad.generate();
        FAIL("unknown task must fail");
    } catch (const StageError& e) {
        CHECK(e.stage() == "generate");
    }
    CHECK_FALSE(fs::exists(RunPaths{dir.path()}.concepts()));
}

TEST_CASE("reduced concept set keeps the latent projection as truth") {
    fixtures::TempDir dir("reduced");
    auto cfg = fixtures::small_asia_config();
    cfg.dataset.n = 400;
    cfg.dataset.concepts = {"smoke"};
    Pipeline p(cfg, dir.path());
    p.generate();
    const auto truth = graph_from_json(json::parse(read_text_file(p.paths().true_graph())));
    REQUIRE(truth.size() == 2);
    CHECK(truth.has_directed(truth.index_of("smoke"), truth.index_of("dysp")));
    const auto rd = load_run_data(p.paths());
    CHECK(rd.data.concepts.names.size() == 2);
    CHECK(rd.data.features.cols == cfg.dataset.featurizer.latent_dim);
}
