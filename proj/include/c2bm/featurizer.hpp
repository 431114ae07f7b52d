#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "c2bm/bayesnet.hpp"
#include "c2bm/tensor.hpp"

namespace c2bm {

struct FeaturizerConfig {
    std::size_t latent_dim = 32;
    double noise_fraction = 0.5;
    bool standardize = true;
    double lr = 1e-3;
    std::size_t epochs = 200;
    std::size_t patience = 20;
    std::size_t batch_size = 256;
    /// Activation applied to the latent layer: "none", "leaky_relu" or "sigmoid".
    std::string latent_activation = "sigmoid";

    nlohmann::json to_json() const;
    static FeaturizerConfig from_json(const nlohmann::json& j);
};

Activation latent_activation_of(const FeaturizerConfig& config);

/// Concatenated one-hot encoding of every column.
Tensor one_hot(const ConceptTable& table);

/// Autoencoder over one-hot concepts plus the feature standardization stats.
struct FeatureSpec {
    FeaturizerConfig config;
    std::vector<std::size_t> cardinalities;
    Mlp encoder;  // [in -> 2 latent -> latent]
    Mlp decoder;  // [latent -> 2 latent -> in]
    std::vector<double> mean;
    std::vector<double> stddev;
    double final_mse = 0.0;

    bool fitted() const { return encoder.widths().size() > 1; }
    bool has_stats() const { return !mean.empty(); }
    Tensor encode(const Tensor& onehot) const;
    Tensor reconstruct(const Tensor& onehot) const;
};

/// Trains the autoencoder with MSE on the given rows (early stopping on the
/// training MSE). Throws EmptyDataset with fewer than 2 rows.
FeatureSpec fit_autoencoder(const ConceptTable& train, const FeaturizerConfig& config, std::uint64_t seed);

/// (1 - f) * encode(onehot(v)) + f * n with n ~ N(0, 1); row r draws its
/// noise from stream r of `seed`. Not standardized. Throws NotFitted.
Tensor mix_features(const FeatureSpec& spec, const ConceptTable& samples, std::uint64_t seed);

/// Stores per-column mean/std of `rows` of raw features in `spec`.
void fit_standardization(FeatureSpec& spec, const Tensor& raw, std::span<const std::size_t> rows);

/// Standardizes with the stored stats (identity if standardize is off).
/// Throws NotFitted when stats are missing.
Tensor standardize(const FeatureSpec& spec, const Tensor& raw);

/// mix_features followed by standardize.
Tensor featurize(const FeatureSpec& spec, const ConceptTable& samples, std::uint64_t seed);

void save_feature_spec(const std::filesystem::path& path, const FeatureSpec& spec);
FeatureSpec load_feature_spec(const std::filesystem::path& path);

void write_features_csv(const std::filesystem::path& path, const Tensor& features);
Tensor read_features_csv(const std::filesystem::path& path);

}  // namespace c2bm
