#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "c2bm/discovery.hpp"
#include "c2bm/featurizer.hpp"
#include "c2bm/interventions.hpp"
#include "c2bm/model.hpp"
#include "c2bm/orientation.hpp"

namespace c2bm {

struct DatasetSettings {
    std::string network = "asia";  // bundled name or path to a .bif file
    std::string task = "dysp";
    /// Variables kept as concepts; empty keeps every non-task variable.
    /// Features are always generated from the full network.
    std::vector<std::string> concepts;
    std::size_t n = 10000;
    std::uint64_t seed = 0;
    std::array<double, 3> splits{0.7, 0.1, 0.2};
    FeaturizerConfig featurizer;

    nlohmann::json to_json() const;
    static DatasetSettings from_json(const nlohmann::json& j);
};

struct CaceQuery {
    std::string concept_name;
    std::string target;
    std::optional<std::string> mediator;
};

struct EvalSettings {
    std::string policy = "levels";
    double fraction = 1.0;
    std::size_t policy_seeds = 5;
    std::vector<CaceQuery> cace;

    nlohmann::json to_json() const;
    static EvalSettings from_json(const nlohmann::json& j);
};

/// Single JSON document with sections dataset, discovery, oracle, model,
/// baselines and eval. Missing keys take their defaults.
struct RunConfig {
    DatasetSettings dataset;
    GesConfig discovery;
    OracleSettings oracle;
    ModelConfig model;
    std::vector<std::string> baselines{"cbm_linear"};  // "cbm_linear" | "cbm_mlp"
    EvalSettings eval;

    nlohmann::json to_json() const;
    /// Validates every section; throws ConfigError.
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::filesystem::path& path);
    /// Sets dataset, model and oracle-independent seeds at once.
    void set_seed(std::uint64_t seed);
};

/// Path to a bundled network by name, or the argument itself if it names an
/// existing file. Throws ConfigError.
std::filesystem::path resolve_network(const std::string& network);

/// Files of a run directory.
struct RunPaths {
    std::filesystem::path root;

    std::filesystem::path config() const { return root / "config.json"; }
    std::filesystem::path concepts() const { return root / "dataset" / "concepts.csv"; }
    std::filesystem::path features() const { return root / "dataset" / "features.csv"; }
    std::filesystem::path splits() const { return root / "dataset" / "splits.json"; }
    std::filesystem::path schema() const { return root / "dataset" / "schema.json"; }
    std::filesystem::path feature_spec() const { return root / "dataset" / "feature_spec.ckpt"; }
    std::filesystem::path true_graph() const { return root / "graphs" / "true.json"; }
    std::filesystem::path cpdag() const { return root / "graphs" / "cpdag.json"; }
    std::filesystem::path refined() const { return root / "graphs" / "refined.json"; }
    std::filesystem::path model() const { return root / "model.ckpt"; }
    std::filesystem::path baseline(const std::string& kind) const { return root / "baselines" / (kind + ".ckpt"); }
    std::filesystem::path report() const { return root / "reports" / "report.json"; }
    std::filesystem::path log(const std::string& name) const { return root / "logs" / name; }
};

/// The generated dataset as stored in a run directory.
struct RunData {
    Dataset data;
    std::string task;
    std::vector<std::vector<std::string>> states;  // per concept column
};

RunData load_run_data(const RunPaths& paths);

enum class StageStatus { Ran, Skipped };

/// Runs the pipeline stages over one run directory. Each stage skips itself
/// when its outputs exist (unless forced) and wraps failures in StageError.
class Pipeline {
public:
    Pipeline(RunConfig config, std::filesystem::path run_dir, bool force = false);

    const RunConfig& config() const { return config_; }
    const RunPaths& paths() const { return paths_; }

    /// Samples the network, fits the featurizer, writes the dataset and the
    /// true graph over the kept variables.
    StageStatus generate();
    /// GES over the training rows.
    StageStatus discover();
    /// Oracle refinement of the CPDAG. The stub oracle without a fixture
    /// reads its verdicts from graphs/true.json.
    StageStatus refine();
    /// Trains C2BM on the refined graph, then every configured baseline.
    StageStatus train();
    /// Writes reports/report.json.
    StageStatus evaluate();
    /// All stages in order.
    void run_all();

    void set_logger(std::function<void(const std::string&)> logger) { logger_ = std::move(logger); }

private:
    template <class F>
    StageStatus stage(const char* name, const std::vector<std::filesystem::path>& outputs, F&& body);
    void log(const std::string& line) const;

    RunConfig config_;
    RunPaths paths_;
    bool force_;
    std::function<void(const std::string&)> logger_;
};

/// Evaluation of one model on the test split: accuracies, the averaged
/// intervention curve over `settings.policy_seeds` draws, and CaCE queries
/// (queries naming nodes the model lacks are skipped).
EvalReport evaluate_run_model(const ConceptModel& model, const Dataset& data, const MixedGraph& policy_graph,
                              const EvalSettings& settings, std::uint64_t seed);

}  // namespace c2bm
