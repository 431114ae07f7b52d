#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "c2bm/featurizer.hpp"
#include "c2bm/model.hpp"
#include "c2bm/pipeline.hpp"

namespace c2bm {

/// JSON response with an HTTP status.
struct ApiResponse {
    int status = 200;
    nlohmann::json body;
};

/// Read-only view over a trained run directory: the checkpoint is loaded
/// once and every handler runs an independent inference pass, so handlers
/// may be called concurrently.
class ApiService {
public:
    /// Throws CheckpointMissing when model.ckpt or the dataset is absent.
    explicit ApiService(const std::filesystem::path& run_dir);

    /// Nodes (with depth level, states, ground-truth flag), edges, task.
    ApiResponse graph() const;
    /// ?split=train|val|test&offset&limit (limit <= 500). Concepts and
    /// predictions per sample, features omitted.
    ApiResponse samples(const std::string& split, std::size_t offset, std::size_t limit) const;
    /// {"sample_index": i} or {"raw_features": [...]} (unstandardized).
    ApiResponse predict(const nlohmann::json& request) const;
    /// {"sample_index": i, "clamps": {node: category}}.
    ApiResponse intervene(const nlohmann::json& request) const;
    /// {"sample_index": i, "clamps"?: {...}}: probabilities and edge weights.
    ApiResponse explain(const nlohmann::json& request) const;
    /// Stored report, plus a live test-split point when `clamps` is given as
    /// "node" (ground truth) or "node:category" items separated by commas.
    ApiResponse metrics(const std::string& clamps) const;

    const ConceptModel& model() const { return *model_; }
    const Dataset& data() const { return run_.data; }

private:
    std::size_t sample_row(const nlohmann::json& request) const;
    Clamps parse_clamps(const nlohmann::json& clamps, std::size_t rows) const;
    nlohmann::json describe(const std::vector<Tensor>& probs, std::size_t r, const Clamps& clamps,
                            std::optional<std::size_t> row) const;

    RunPaths paths_;
    RunData run_;
    std::unique_ptr<ConceptModel> model_;
    std::optional<FeatureSpec> spec_;
    MixedGraph policy_graph_;
    nlohmann::json report_;
};

struct ServeOptions {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string static_dir;  // served at / when nonempty
};

/// Blocks serving /api/v1 until `stop` returns true (checked every 200 ms)
/// or the server is stopped. `on_ready` receives the bound port. Throws
/// BindFailure.
void serve(const ApiService& service, const ServeOptions& options, const std::function<void(int)>& on_ready = {},
           const std::function<bool()>& stop = {});

}  // namespace c2bm
