#include <atomic>
#include <csignal>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "c2bm/discovery.hpp"
#include "c2bm/errors.hpp"
#include "c2bm/io.hpp"
#include "c2bm/pipeline.hpp"
#include "c2bm/service.hpp"

namespace fs = std::filesystem;
using namespace c2bm;

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

struct Globals {
    std::string config;
    std::string run_dir = "runs/default";
    std::optional<std::uint64_t> seed;
    bool force = false;
};

// --config wins, then the run directory's own config.json, then defaults.
RunConfig resolve_config(const Globals& g) {
    RunConfig cfg;
    if (!g.config.empty()) {
        cfg = RunConfig::load(g.config);
    } else if (fs::exists(RunPaths{g.run_dir}.config())) {
        cfg = RunConfig::load(RunPaths{g.run_dir}.config());
    }
    if (g.seed) cfg.set_seed(*g.seed);
    return cfg;
}

Pipeline make_pipeline(const Globals& g) {
    Pipeline p(resolve_config(g), g.run_dir, g.force);
    p.set_logger([](const std::string& line) { std::cerr << line << "\n"; });
    return p;
}

void report_stage(const char* name, StageStatus s) {
    std::cerr << name << (s == StageStatus::Ran ? ": done" : ": skipped (outputs exist, use --force)") << "\n";
}

// A run directory, or its dataset/ subdirectory.
fs::path run_root(const fs::path& data) {
    if (fs::exists(data / "dataset")) return data;
    if (data.filename() == "dataset" || (data.has_parent_path() && fs::exists(data / "concepts.csv"))) {
        return data.parent_path();
    }
    return data;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Causally reliable concept bottleneck models: data synthesis, discovery, training, serving"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config, "JSON run configuration")->check(CLI::ExistingFile);
    app.add_option("--run-dir", g.run_dir, "run directory")->capture_default_str();
    app.add_option("--seed", g.seed, "overrides every seed in the configuration");
    app.add_flag("--force", g.force, "rerun stages whose outputs exist");

    auto* generate = app.add_subcommand("generate", "sample the network and featurize");
    auto* refine = app.add_subcommand("refine", "orient the CPDAG with the configured oracle");
    auto* train = app.add_subcommand("train", "train C2BM and the baselines");
    auto* pipeline = app.add_subcommand("pipeline", "run every stage in order");

    auto* discover = app.add_subcommand("discover", "GES over a concepts CSV, or over the run's training rows");
    std::string discover_data, discover_out;
    std::optional<double> ess;
    discover->add_option("--data", discover_data, "concepts CSV")->check(CLI::ExistingFile);
    discover->add_option("--ess", ess, "BDeu equivalent sample size");
    discover->add_option("--out", discover_out, "output graph JSON (needs --data)");

    auto* evaluate = app.add_subcommand("evaluate", "evaluate a checkpoint, or the run's models");
    std::string eval_model, eval_data, eval_policy = "levels", eval_out;
    std::optional<double> fraction;
    std::optional<std::size_t> seeds;
    evaluate->add_option("--model", eval_model, "checkpoint")->check(CLI::ExistingFile);
    evaluate->add_option("--data", eval_data, "run or dataset directory (default: --run-dir)");
    evaluate->add_option("--policy", eval_policy)->check(CLI::IsMember({"levels"}))->capture_default_str();
    evaluate->add_option("--fraction", fraction, "fraction of eligible nodes clamped per level")
        ->check(CLI::Range(0.0, 1.0));
    evaluate->add_option("--seeds", seeds, "policy draws averaged per level");
    evaluate->add_option("--out", eval_out, "report path (needs --model)");

    auto* serve_cmd = app.add_subcommand("serve", "serve /api/v1 over a trained run");
    ServeOptions serve_opts;
    serve_cmd->add_option("--host", serve_opts.host)->capture_default_str();
    serve_cmd->add_option("--port", serve_opts.port)->check(CLI::Range(0, 65535))->capture_default_str();
    serve_cmd->add_option("--static", serve_opts.static_dir, "UI assets served at /")->check(CLI::ExistingDirectory);

    CLI11_PARSE(app, argc, argv);

    try {
        if (generate->parsed()) report_stage("generate", make_pipeline(g).generate());
        if (refine->parsed()) report_stage("refine", make_pipeline(g).refine());
        if (train->parsed()) report_stage("train", make_pipeline(g).train());
        if (pipeline->parsed()) make_pipeline(g).run_all();

        if (discover->parsed()) {
            if (discover_data.empty()) {
                auto cfg = resolve_config(g);
                if (ess) cfg.discovery.ess = *ess;
                Pipeline p(cfg, g.run_dir, g.force);
                report_stage("discover", p.discover());
            } else {
                if (discover_out.empty()) throw ConfigError("discover --data needs --out");
                GesConfig cfg = resolve_config(g).discovery;
                if (ess) cfg.ess = *ess;
                const auto table = read_concepts_csv(discover_data);
                const auto res = ges_search(BdeuScorer(table, cfg.ess), cfg);
                std::string steps;
                for (const auto& s : res.steps) steps += s.to_json().dump() + "\n";
                write_file_atomic(discover_out, graph_to_json(res.cpdag).dump(2) + "\n");
                write_file_atomic(fs::path(discover_out).replace_extension(".log"), steps);
                std::cerr << "discover: " << res.steps.size() << " operators, score " << res.score << "\n";
            }
        }

        if (evaluate->parsed()) {
            auto cfg = resolve_config(g);
            if (fraction) cfg.eval.fraction = *fraction;
            if (seeds) cfg.eval.policy_seeds = *seeds;
            if (eval_model.empty()) {
                if (!eval_data.empty() || !eval_out.empty()) throw ConfigError("evaluate --data/--out need --model");
                Pipeline p(cfg, g.run_dir, g.force);
                report_stage("evaluate", p.evaluate());
            } else {
                if (eval_out.empty()) throw ConfigError("evaluate --model needs --out");
                const RunPaths paths{run_root(eval_data.empty() ? fs::path(g.run_dir) : fs::path(eval_data))};
                const auto rd = load_run_data(paths);
                const auto model = load_model(eval_model);
                const auto policy = fs::exists(paths.true_graph())
                                        ? graph_from_json(nlohmann::json::parse(read_text_file(paths.true_graph())))
                                        : model->graph();
                const auto report = evaluate_run_model(*model, rd.data, policy, cfg.eval, cfg.dataset.seed);
                write_file_atomic(eval_out, report.to_json().dump(2) + "\n");
                std::cerr << "evaluate: task accuracy " << report.task_accuracy << "\n";
            }
        }

        if (serve_cmd->parsed()) {
            const ApiService service(g.run_dir);
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            serve(
                service, serve_opts,
                [&](int port) { std::cerr << "serving " << g.run_dir << " on http://" << serve_opts.host << ":" << port << "\n"; },
                [] { return g_stop.load(); });
        }
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const StageError& e) {
        std::cerr << "stage " << e.stage() << " failed: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
