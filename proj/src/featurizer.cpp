#include "c2bm/featurizer.hpp"

#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>

#include "c2bm/errors.hpp"
#include "c2bm/io.hpp"

namespace c2bm {

nlohmann::json FeaturizerConfig::to_json() const {
    return {{"latent_dim", latent_dim}, {"noise_fraction", noise_fraction},
            {"standardize", standardize}, {"lr", lr},
            {"epochs", epochs},         {"patience", patience},
            {"batch_size", batch_size}, {"latent_activation", latent_activation}};
}

FeaturizerConfig FeaturizerConfig::from_json(const nlohmann::json& j) {
    FeaturizerConfig c;
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.noise_fraction = j.value("noise_fraction", c.noise_fraction);
    c.standardize = j.value("standardize", c.standardize);
    c.lr = j.value("lr", c.lr);
    c.epochs = j.value("epochs", c.epochs);
    c.patience = j.value("patience", c.patience);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.latent_activation = j.value("latent_activation", c.latent_activation);
    latent_activation_of(c);
    if (c.latent_dim < 1) throw ConfigError("featurizer.latent_dim must be >= 1");
    if (c.noise_fraction < 0.0 || c.noise_fraction > 1.0) {
        throw ConfigError("featurizer.noise_fraction must lie in [0, 1]");
    }
    if (c.batch_size < 1) throw ConfigError("featurizer.batch_size must be >= 1");
    return c;
}

Activation latent_activation_of(const FeaturizerConfig& config) {
    if (config.latent_activation == "none") return Activation::None;
    if (config.latent_activation == "leaky_relu") return Activation::LeakyRelu;
    if (config.latent_activation == "sigmoid") return Activation::Sigmoid;
    throw ConfigError("featurizer.latent_activation must be none, leaky_relu or sigmoid");
}

Tensor one_hot(const ConceptTable& table) {
    const std::size_t width = std::accumulate(table.cardinalities.begin(), table.cardinalities.end(),
                                              std::size_t{0});
    Tensor out(table.rows, width);
    for (std::size_t r = 0; r < table.rows; ++r) {
        std::size_t offset = 0;
        for (std::size_t c = 0; c < table.cols(); ++c) {
            out(r, offset + static_cast<std::size_t>(table.at(r, c))) = 1.0;
            offset += table.cardinalities[c];
        }
    }
    return out;
}

Tensor FeatureSpec::encode(const Tensor& onehot) const { return encoder.forward(onehot); }

Tensor FeatureSpec::reconstruct(const Tensor& onehot) const {
    return decoder.forward(encoder.forward(onehot));
}

FeatureSpec fit_autoencoder(const ConceptTable& train, const FeaturizerConfig& config, std::uint64_t seed) {
    if (train.rows < 2) throw EmptyDataset("autoencoder needs at least 2 samples");
    FeatureSpec spec;
    spec.config = config;
    spec.cardinalities = train.cardinalities;
    const Tensor x = one_hot(train);
    const std::size_t in = x.cols;
    const std::size_t latent = config.latent_dim;
    Rng init = Rng::derive(seed, 1);
    spec.encoder = Mlp("ae.enc", {in, 2 * latent, latent}, init, latent_activation_of(config));
    spec.decoder = Mlp("ae.dec", {latent, 2 * latent, in}, init);

    std::vector<Parameter*> params = spec.encoder.parameters();
    for (auto* p : spec.decoder.parameters()) params.push_back(p);
    AdamState adam;
    adam.lr = config.lr;
    Rng shuffle = Rng::derive(seed, 2);
    std::vector<std::size_t> order(x.rows);
    std::iota(order.begin(), order.end(), 0);

    auto snapshot = [&]() {
        std::vector<Tensor> out;
        for (auto* p : params) out.push_back(p->value);
        return out;
    };
    auto full_mse = [&]() {
        const Tensor rec = spec.reconstruct(x);
        double total = 0.0;
        for (std::size_t k = 0; k < rec.size(); ++k) total += (rec.data[k] - x.data[k]) * (rec.data[k] - x.data[k]);
        return total / static_cast<double>(rec.size());
    };

    double best = full_mse();
    auto best_params = snapshot();
    std::size_t since_best = 0;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        shuffle.shuffle(std::span<std::size_t>(order));
        for (std::size_t start = 0; start < x.rows; start += config.batch_size) {
            const std::size_t end = std::min(x.rows, start + config.batch_size);
            const Tensor xb = x.select_rows(std::span(order).subspan(start, end - start));
            for (auto* p : params) p->zero_grad();
            Tape tape;
            Var rec = spec.decoder.forward(tape, spec.encoder.forward(tape, tape.constant(xb)));
            tape.backward(mse(rec, xb));
            adam_step(adam, params);
        }
        const double m = full_mse();
        if (m < best) {
            best = m;
            best_params = snapshot();
            since_best = 0;
        } else if (++since_best >= config.patience) {
            break;
        }
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        params[i]->value = best_params[i];
        round_to_f32(*params[i]);
    }
    spec.final_mse = full_mse();
    return spec;
}

Tensor mix_features(const FeatureSpec& spec, const ConceptTable& samples, std::uint64_t seed) {
    if (!spec.fitted()) throw NotFitted("feature spec has no trained autoencoder");
    if (samples.cardinalities != spec.cardinalities) {
        throw ShapeMismatch("samples do not match the featurizer's concept layout");
    }
    Tensor enc = spec.encode(one_hot(samples));
    const double f = spec.config.noise_fraction;
    for (std::size_t r = 0; r < enc.rows; ++r) {
        Rng noise = Rng::derive(seed, r);
        for (double& v : enc.row(r)) v = (1.0 - f) * v + f * noise.normal();
    }
    return enc;
}

void fit_standardization(FeatureSpec& spec, const Tensor& raw, std::span<const std::size_t> rows) {
    if (rows.empty()) throw EmptyDataset("standardization needs at least one row");
    spec.mean.assign(raw.cols, 0.0);
    spec.stddev.assign(raw.cols, 0.0);
    const double n = static_cast<double>(rows.size());
    for (std::size_t r : rows) {
        for (std::size_t c = 0; c < raw.cols; ++c) spec.mean[c] += raw(r, c);
    }
    for (double& m : spec.mean) m /= n;
    for (std::size_t r : rows) {
        for (std::size_t c = 0; c < raw.cols; ++c) {
            const double d = raw(r, c) - spec.mean[c];
            spec.stddev[c] += d * d;
        }
    }
    for (double& s : spec.stddev) {
        s = std::sqrt(s / n);
        if (s < 1e-12) s = 1.0;
    }
}

Tensor standardize(const FeatureSpec& spec, const Tensor& raw) {
    if (!spec.config.standardize) return raw;
    if (!spec.has_stats()) throw NotFitted("feature spec has no standardization statistics");
    if (spec.mean.size() != raw.cols) throw ShapeMismatch("feature width differs from the feature spec");
    Tensor out = raw;
    for (std::size_t r = 0; r < raw.rows; ++r) {
        for (std::size_t c = 0; c < raw.cols; ++c) out(r, c) = (raw(r, c) - spec.mean[c]) / spec.stddev[c];
    }
    return out;
}

Tensor featurize(const FeatureSpec& spec, const ConceptTable& samples, std::uint64_t seed) {
    return standardize(spec, mix_features(spec, samples, seed));
}

// ---- persistence ---------------------------------------------------------------

void save_feature_spec(const std::filesystem::path& path, const FeatureSpec& spec) {
    if (!spec.fitted()) throw NotFitted("cannot save an unfitted feature spec");
    nlohmann::json meta = {{"kind", "feature_spec"},
                           {"config", spec.config.to_json()},
                           {"cardinalities", spec.cardinalities},
                           {"final_mse", spec.final_mse}};
    std::vector<NamedTensor> tensors;
    for (const auto* p : spec.encoder.parameters()) tensors.push_back(to_named(*p));
    for (const auto* p : spec.decoder.parameters()) tensors.push_back(to_named(*p));
    if (spec.has_stats()) {
        NamedTensor mean{"stats.mean", {1, spec.mean.size()}, {}};
        NamedTensor sd{"stats.std", {1, spec.stddev.size()}, {}};
        for (double v : spec.mean) mean.data.push_back(static_cast<float>(v));
        for (double v : spec.stddev) sd.data.push_back(static_cast<float>(v));
        tensors.push_back(std::move(mean));
        tensors.push_back(std::move(sd));
    }
    write_checkpoint(path, meta, tensors);
}

FeatureSpec load_feature_spec(const std::filesystem::path& path) {
    const auto ck = read_checkpoint(path);
    if (ck.meta.value("kind", "") != "feature_spec") throw CheckpointError(path.string() + " is not a feature spec");
    FeatureSpec spec;
    spec.config = FeaturizerConfig::from_json(ck.meta.at("config"));
    spec.cardinalities = ck.meta.at("cardinalities").get<std::vector<std::size_t>>();
    spec.final_mse = ck.meta.value("final_mse", 0.0);
    const std::size_t in = std::accumulate(spec.cardinalities.begin(), spec.cardinalities.end(), std::size_t{0});
    const std::size_t latent = spec.config.latent_dim;
    Rng dummy(0);
    spec.encoder = Mlp("ae.enc", {in, 2 * latent, latent}, dummy, latent_activation_of(spec.config));
    spec.decoder = Mlp("ae.dec", {latent, 2 * latent, in}, dummy);
    for (auto* p : spec.encoder.parameters()) load_into(*p, ck.find(p->name));
    for (auto* p : spec.decoder.parameters()) load_into(*p, ck.find(p->name));
    for (const auto& t : ck.tensors) {
        if (t.name == "stats.mean") spec.mean.assign(t.data.begin(), t.data.end());
        if (t.name == "stats.std") spec.stddev.assign(t.data.begin(), t.data.end());
    }
    return spec;
}

void write_features_csv(const std::filesystem::path& path, const Tensor& features) {
    std::string out;
    out.reserve(features.size() * 12);
    for (std::size_t c = 0; c < features.cols; ++c) {
        if (c) out += ',';
        out += "x" + std::to_string(c);
    }
    out += '\n';
    char buf[32];
    for (std::size_t r = 0; r < features.rows; ++r) {
        for (std::size_t c = 0; c < features.cols; ++c) {
            if (c) out += ',';
            auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, static_cast<float>(features(r, c)));
            out.append(buf, ptr);
        }
        out += '\n';
    }
    write_file_atomic(path, out);
}

Tensor read_features_csv(const std::filesystem::path& path) {
    const std::string text = read_text_file(path);
    std::size_t pos = text.find('\n');
    if (pos == std::string::npos) throw EmptyDataset(path.string() + " has no header");
    const std::size_t cols = static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), ',')) + 1;
    std::vector<double> values;
    std::size_t rows = 0;
    const char* p = text.data() + pos + 1;
    const char* end = text.data() + text.size();
    while (p < end) {
        if (*p == '\n' || *p == '\r') {
            ++p;
            continue;
        }
        for (std::size_t c = 0; c < cols; ++c) {
            float v = 0.0f;
            auto [ptr, ec] = std::from_chars(p, end, v);
            if (ec != std::errc()) throw ParseError("bad feature value", rows + 2, c + 1);
            values.push_back(v);
            p = ptr;
            if (c + 1 < cols) {
                if (p >= end || *p != ',') throw ParseError("expected ','", rows + 2, c + 1);
                ++p;
            }
        }
        ++rows;
    }
    return Tensor(rows, cols, std::move(values));
}

}  // namespace c2bm
