#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "c2bm/bayesnet.hpp"
#include "c2bm/graph.hpp"
#include "c2bm/tensor.hpp"

namespace c2bm {

struct ModelConfig {
    std::size_t embedding_dim = 16;
    std::size_t encoder_hidden = 32;
    std::size_t head_hidden = 32;  // root heads, hypernetworks, MLP decoder
    double alpha = 0.8;
    double train_intervention_prob = 0.25;
    double lr = 5e-3;
    std::size_t batch_size = 512;
    std::size_t max_epochs = 500;
    std::size_t patience = 30;
    std::uint64_t seed = 0;
    /// Ablation: feed the hypernetworks a constant input, so structural
    /// weights no longer depend on x.
    bool fixed_weights = false;

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

/// Per-node, per-row clamp values in model node order; an empty inner
/// vector means the node is not clamped, -1 leaves a single row free.
using Clamps = std::vector<std::vector<int>>;

/// Features plus full concept annotations, and the row ids of each split.
struct Dataset {
    Tensor features;
    ConceptTable concepts;
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;
};

struct TrainLog {
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    std::size_t best_epoch = 0;
    double best_val_loss = 0.0;
    std::size_t epochs_run = 0;
    std::vector<std::string> dropped_concepts;
};

/// Common surface of C2BM and the flat baselines, used by evaluation and
/// serving. Nodes are the modeled variables (concepts plus the task).
class ConceptModel {
public:
    virtual ~ConceptModel() = default;

    const std::vector<std::string>& node_names() const { return names_; }
    const std::vector<std::size_t>& cardinalities() const { return cards_; }
    std::size_t node_count() const { return names_.size(); }
    std::size_t task() const { return task_; }
    std::size_t feature_dim() const { return feature_dim_; }
    const ModelConfig& config() const { return config_; }
    std::optional<std::size_t> find_node(const std::string& name) const;
    /// Column of each model node in `table`, matched by name.
    std::vector<std::size_t> columns_in(const ConceptTable& table) const;

    /// Probabilities of every node after clamping (clamped nodes are exact
    /// one-hots). Throws ShapeMismatch on bad input width.
    virtual std::vector<Tensor> predict(const Tensor& x, const Clamps& clamps = {}) const = 0;
    /// The DAG the model propagates over (flat models: concepts -> task).
    virtual const MixedGraph& graph() const = 0;
    virtual std::string kind() const = 0;

    virtual std::vector<Parameter*> parameters() = 0;
    virtual nlohmann::json meta() const = 0;
    void save(const std::filesystem::path& path) const;

    /// (1 - alpha) CE(task) + alpha * sum CE(concept), batch-averaged and
    /// recorded on `tape`. Concept terms use pre-clamp predictions.
    virtual Var loss(Tape& tape, const Tensor& x, const std::vector<std::vector<int>>& labels,
                     const Clamps& clamps) const = 0;

protected:
    std::vector<std::string> names_;
    std::vector<std::size_t> cards_;
    std::size_t task_ = 0;
    std::size_t feature_dim_ = 0;
    ModelConfig config_;
};

/// Structural weights W_ij (card(i) x card(j)) for every edge j -> i, for
/// one sample.
struct EdgeWeights {
    std::size_t parent = 0;
    std::size_t child = 0;
    Tensor matrix;
};

struct Explanation {
    std::vector<std::vector<double>> probabilities;  // per node
    std::vector<EdgeWeights> edges;
    /// W[1,1] - W[1,0] for binary parent and child, otherwise nullopt.
    std::vector<std::optional<double>> summaries;
};

class C2bmModel final : public ConceptModel {
public:
    /// `dag` is over all dataset variables; it is pruned to the task and its
    /// ancestors. Non-ancestor variables are reported in dropped().
    C2bmModel(const MixedGraph& dag, const std::vector<std::size_t>& cardinalities,
              const std::string& task, std::size_t feature_dim, const ModelConfig& config);

    std::vector<Tensor> predict(const Tensor& x, const Clamps& clamps = {}) const override;
    const MixedGraph& graph() const override { return graph_; }
    std::string kind() const override { return "c2bm"; }
    std::vector<Parameter*> parameters() override;
    nlohmann::json meta() const override;
    Var loss(Tape& tape, const Tensor& x, const std::vector<std::vector<int>>& labels,
             const Clamps& clamps) const override;

    const std::vector<std::string>& dropped() const { return dropped_; }

    /// U_i = g_i(x) for every node, each [rows x embedding_dim].
    std::vector<Tensor> encode_exogenous(const Tensor& x) const;
    /// Per edge j -> i, per row: W_ij flattened row-major in a [rows x card(i) card(j)] tensor.
    std::vector<std::vector<Tensor>> emit_weights(const std::vector<Tensor>& u) const;
    /// Propagation from given embeddings and weights (used for the
    /// encode/emit/propagate decomposition).
    std::vector<Tensor> propagate(const std::vector<Tensor>& u, const std::vector<std::vector<Tensor>>& weights,
                                  const Clamps& clamps = {}) const;

    /// Weights and probabilities for one input row.
    Explanation explain(const Tensor& x_row, const Clamps& clamps = {}) const;

    Mlp& encoder(std::size_t i) { return encoders_.at(i); }
    Mlp& head(std::size_t i) { return heads_.at(i); }  // root head or hypernetwork

    static std::unique_ptr<C2bmModel> from_checkpoint(const nlohmann::json& meta);

private:
    struct Forward {
        std::vector<Var> pre;
        std::vector<Var> post;
    };
    Forward forward(Tape& tape, Var x, const Clamps& clamps) const;
    void build(std::uint64_t seed);

    MixedGraph graph_;
    std::vector<std::vector<std::size_t>> parents_;
    std::vector<std::size_t> order_;
    std::vector<std::string> dropped_;
    std::vector<Mlp> encoders_;
    std::vector<Mlp> heads_;
};

enum class DecoderKind { Linear, Mlp };

/// Concept bottleneck baseline: shared single-hidden-layer concept encoder,
/// every concept feeds the task decoder directly.
class FlatCbm final : public ConceptModel {
public:
    FlatCbm(const std::vector<std::string>& names, const std::vector<std::size_t>& cardinalities,
            const std::string& task, std::size_t feature_dim, DecoderKind decoder, const ModelConfig& config);

    std::vector<Tensor> predict(const Tensor& x, const Clamps& clamps = {}) const override;
    const MixedGraph& graph() const override { return graph_; }
    std::string kind() const override { return decoder_kind_ == DecoderKind::Linear ? "cbm_linear" : "cbm_mlp"; }
    std::vector<Parameter*> parameters() override;
    nlohmann::json meta() const override;
    Var loss(Tape& tape, const Tensor& x, const std::vector<std::vector<int>>& labels,
             const Clamps& clamps) const override;

    DecoderKind decoder_kind() const { return decoder_kind_; }
    /// Linear decoder weight matrix [sum of concept cards x task card].
    const Tensor& decoder_weight() const;

    static std::unique_ptr<FlatCbm> from_checkpoint(const nlohmann::json& meta);

private:
    struct Forward {
        std::vector<Var> pre;
        std::vector<Var> post;
    };
    Forward forward(Tape& tape, Var x, const Clamps& clamps) const;

    MixedGraph graph_;
    DecoderKind decoder_kind_;
    Mlp concept_encoder_;
    Mlp decoder_;
};

/// Adam training with random training-time interventions and early stopping
/// on the validation loss; the best-validation parameters are restored and
/// rounded to f32. Throws EmptyDataset.
TrainLog train_model(ConceptModel& model, const Dataset& data,
                     const std::function<void(std::size_t, double, double)>& on_epoch = {});

/// Loads any model kind saved with ConceptModel::save. Throws CheckpointError.
std::unique_ptr<ConceptModel> load_model(const std::filesystem::path& path);

/// Argmax accuracy per node on `rows` with optional clamps.
std::vector<double> node_accuracy(const ConceptModel& model, const Dataset& data,
                                  const std::vector<std::size_t>& rows, const Clamps& clamps = {});

/// Labels of each model node for `rows`: result[node][k].
std::vector<std::vector<int>> node_labels(const ConceptModel& model, const ConceptTable& table,
                                          const std::vector<std::size_t>& rows);

}  // namespace c2bm
