#include "c2bm/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "c2bm/errors.hpp"

namespace c2bm {

nlohmann::json ModelConfig::to_json() const {
    return {{"embedding_dim", embedding_dim},
            {"encoder_hidden", encoder_hidden},
            {"head_hidden", head_hidden},
            {"alpha", alpha},
            {"train_intervention_prob", train_intervention_prob},
            {"lr", lr},
            {"batch_size", batch_size},
            {"max_epochs", max_epochs},
            {"patience", patience},
            {"seed", seed},
            {"fixed_weights", fixed_weights}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
    c.encoder_hidden = j.value("encoder_hidden", c.encoder_hidden);
    c.head_hidden = j.value("head_hidden", c.head_hidden);
    c.alpha = j.value("alpha", c.alpha);
    c.train_intervention_prob = j.value("train_intervention_prob", c.train_intervention_prob);
    c.lr = j.value("lr", c.lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.seed = j.value("seed", c.seed);
    c.fixed_weights = j.value("fixed_weights", c.fixed_weights);
    if (c.alpha < 0.0 || c.alpha > 1.0) throw ConfigError("model.alpha must lie in [0, 1]");
    if (c.train_intervention_prob < 0.0 || c.train_intervention_prob > 1.0) {
        throw ConfigError("model.train_intervention_prob must lie in [0, 1]");
    }
    if (c.embedding_dim < 1 || c.encoder_hidden < 1 || c.head_hidden < 1) {
        throw ConfigError("model widths must be >= 1");
    }
    if (c.batch_size < 1) throw ConfigError("model.batch_size must be >= 1");
    if (!(c.lr > 0.0)) throw ConfigError("model.lr must be positive");
    return c;
}

namespace {

void check_clamps(const Clamps& clamps, std::size_t nodes, std::size_t rows,
                  const std::vector<std::size_t>& cards) {
    if (clamps.empty()) return;
    if (clamps.size() != nodes) throw ShapeMismatch("clamps must list every model node");
    for (std::size_t i = 0; i < nodes; ++i) {
        if (clamps[i].empty()) continue;
        if (clamps[i].size() != rows) throw ShapeMismatch("clamp column has the wrong number of rows");
        for (int v : clamps[i]) {
            if (v >= static_cast<int>(cards[i])) throw ShapeMismatch("clamp value out of range");
        }
    }
}

bool clamped(const Clamps& clamps, std::size_t node) {
    return !clamps.empty() && !clamps[node].empty();
}

// Replaces clamped rows of p with the one-hot of their clamp value.
Var apply_clamp(Var p, const std::vector<int>& values) {
    const std::size_t rows = p.rows();
    const std::size_t card = p.cols();
    std::vector<std::uint8_t> mask(rows, 0);
    Tensor fixed(rows, card);
    bool any = false;
    for (std::size_t r = 0; r < rows; ++r) {
        if (values[r] < 0) continue;
        mask[r] = 1;
        fixed(r, static_cast<std::size_t>(values[r])) = 1.0;
        any = true;
    }
    return any ? override_rows(p, mask, fixed) : p;
}

void check_width(const Tensor& x, std::size_t width) {
    if (x.cols != width) {
        throw ShapeMismatch("feature width " + std::to_string(x.cols) + " differs from the model's " +
                            std::to_string(width));
    }
}

Var concept_loss(Tape& tape, const std::vector<Var>& pre, const std::vector<std::vector<int>>& labels,
                 std::size_t task, double alpha) {
    (void)tape;
    Var task_term = scale(cross_entropy_rows(pre[task], labels[task]), 1.0 - alpha);
    Var total = task_term;
    for (std::size_t i = 0; i < pre.size(); ++i) {
        if (i == task) continue;
        total = add(total, scale(cross_entropy_rows(pre[i], labels[i]), alpha));
    }
    return total;
}

}  // namespace

// ---- ConceptModel ------------------------------------------------------------------

std::optional<std::size_t> ConceptModel::find_node(const std::string& name) const {
    const auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) return std::nullopt;
    return static_cast<std::size_t>(it - names_.begin());
}

std::vector<std::size_t> ConceptModel::columns_in(const ConceptTable& table) const {
    std::vector<std::size_t> cols;
    for (std::size_t i = 0; i < names_.size(); ++i) {
        const auto it = std::find(table.names.begin(), table.names.end(), names_[i]);
        if (it == table.names.end()) throw UnknownNode("dataset has no column '" + names_[i] + "'");
        const auto c = static_cast<std::size_t>(it - table.names.begin());
        if (table.cardinalities[c] != cards_[i]) {
            throw ShapeMismatch("column '" + names_[i] + "' has a different cardinality");
        }
        cols.push_back(c);
    }
    return cols;
}

void ConceptModel::save(const std::filesystem::path& path) const {
    std::vector<NamedTensor> tensors;
    for (auto* p : const_cast<ConceptModel*>(this)->parameters()) tensors.push_back(to_named(*p));
    write_checkpoint(path, meta(), tensors);
}

// ---- C2BM ----------------------------------------------------------------------------

C2bmModel::C2bmModel(const MixedGraph& dag, const std::vector<std::size_t>& cardinalities,
                     const std::string& task, std::size_t feature_dim, const ModelConfig& config) {
    if (cardinalities.size() != dag.size()) throw NodeCountMismatch("one cardinality per graph node required");
    EdgeSet::from_graph(dag);  // rejects undirected edges and cycles
    const NodeIndex t = dag.index_of(task);
    std::vector<NodeIndex> keep = ancestors_of(dag, t);
    keep.push_back(t);
    std::sort(keep.begin(), keep.end());
    for (NodeIndex i = 0; i < dag.size(); ++i) {
        if (!std::binary_search(keep.begin(), keep.end(), i)) dropped_.push_back(dag.name(i));
    }
    graph_ = induced_subgraph(dag, keep);
    for (NodeIndex k : keep) {
        names_.push_back(dag.name(k));
        cards_.push_back(cardinalities[k]);
    }
    task_ = graph_.index_of(task);
    feature_dim_ = feature_dim;
    config_ = config;
    build(config.seed);
}

void C2bmModel::build(std::uint64_t seed) {
    const std::size_t n = graph_.size();
    order_ = topological_order(graph_);
    parents_.assign(n, {});
    for (std::size_t i = 0; i < n; ++i) parents_[i] = graph_.parents(i);
    Rng init = Rng::derive(seed, 11);
    encoders_.clear();
    heads_.clear();
    const std::size_t d = config_.embedding_dim;
    const std::size_t h = config_.head_hidden;
    for (std::size_t i = 0; i < n; ++i) {
        encoders_.emplace_back("enc." + names_[i], std::vector<std::size_t>{feature_dim_, config_.encoder_hidden, d},
                               init);
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (parents_[i].empty()) {
            heads_.emplace_back("root." + names_[i], std::vector<std::size_t>{d, h, cards_[i]}, init,
                                Activation::Softmax);
        } else {
            std::size_t width = 0;
            for (std::size_t j : parents_[i]) width += cards_[i] * cards_[j];
            heads_.emplace_back("hyper." + names_[i], std::vector<std::size_t>{d, h, width}, init);
        }
    }
}

std::vector<Parameter*> C2bmModel::parameters() {
    std::vector<Parameter*> out;
    for (auto& e : encoders_) {
        for (auto* p : e.parameters()) out.push_back(p);
    }
    for (auto& m : heads_) {
        for (auto* p : m.parameters()) out.push_back(p);
    }
    return out;
}

C2bmModel::Forward C2bmModel::forward(Tape& tape, Var x, const Clamps& clamps) const {
    const std::size_t n = graph_.size();
    check_width(x.value(), feature_dim_);
    check_clamps(clamps, n, x.rows(), cards_);
    Forward f{std::vector<Var>(n), std::vector<Var>(n)};
    for (std::size_t i : order_) {
        Var u = encoders_[i].forward(tape, x);
        if (parents_[i].empty()) {
            f.pre[i] = heads_[i].forward(tape, u);
        } else {
            if (config_.fixed_weights) u = tape.constant(Tensor(x.rows(), config_.embedding_dim));
            Var theta = heads_[i].forward(tape, u);
            std::size_t offset = 0;
            Var logits;
            bool first = true;
            for (std::size_t j : parents_[i]) {
                const std::size_t w = cards_[i] * cards_[j];
                Var term = batched_matvec(slice_cols(theta, offset, w), f.post[j]);
                logits = first ? term : add(logits, term);
                first = false;
                offset += w;
            }
            f.pre[i] = softmax_rows(logits);
        }
        f.post[i] = clamped(clamps, i) ? apply_clamp(f.pre[i], clamps[i]) : f.pre[i];
    }
    return f;
}

std::vector<Tensor> C2bmModel::predict(const Tensor& x, const Clamps& clamps) const {
    Tape tape(false);
    const auto f = forward(tape, tape.constant(x), clamps);
    std::vector<Tensor> out;
    for (const Var& v : f.post) out.push_back(v.value());
    return out;
}

Var C2bmModel::loss(Tape& tape, const Tensor& x, const std::vector<std::vector<int>>& labels,
                    const Clamps& clamps) const {
    if (x.rows == 0) throw EmptyDataset("loss needs a nonempty batch");
    if (labels.size() != graph_.size()) throw ShapeMismatch("labels must list every model node");
    const auto f = forward(tape, tape.constant(x), clamps);
    return concept_loss(tape, f.pre, labels, task_, config_.alpha);
}

std::vector<Tensor> C2bmModel::encode_exogenous(const Tensor& x) const {
    check_width(x, feature_dim_);
    std::vector<Tensor> u;
    for (const auto& e : encoders_) u.push_back(e.forward(x));
    return u;
}

std::vector<std::vector<Tensor>> C2bmModel::emit_weights(const std::vector<Tensor>& u) const {
    if (u.size() != graph_.size()) throw ShapeMismatch("one embedding per node required");
    std::vector<std::vector<Tensor>> out(graph_.size());
    for (std::size_t i = 0; i < graph_.size(); ++i) {
        if (parents_[i].empty()) continue;
        if (u[i].cols != config_.embedding_dim) throw ShapeMismatch("embedding width differs from the config");
        const Tensor input = config_.fixed_weights ? Tensor(u[i].rows, config_.embedding_dim) : u[i];
        const Tensor theta = heads_[i].forward(input);
        std::size_t offset = 0;
        for (std::size_t j : parents_[i]) {
            const std::size_t w = cards_[i] * cards_[j];
            Tensor block(theta.rows, w);
            for (std::size_t r = 0; r < theta.rows; ++r) {
                std::copy_n(theta.row(r).begin() + static_cast<std::ptrdiff_t>(offset), w, block.row(r).begin());
            }
            out[i].push_back(std::move(block));
            offset += w;
        }
    }
    return out;
}

std::vector<Tensor> C2bmModel::propagate(const std::vector<Tensor>& u,
                                         const std::vector<std::vector<Tensor>>& weights,
                                         const Clamps& clamps) const {
    const std::size_t n = graph_.size();
    if (u.size() != n || weights.size() != n) throw ShapeMismatch("one embedding and weight list per node");
    const std::size_t rows = u.empty() ? 0 : u[0].rows;
    check_clamps(clamps, n, rows, cards_);
    std::vector<Tensor> p(n);
    for (std::size_t i : order_) {
        if (parents_[i].empty()) {
            p[i] = heads_[i].forward(u[i]);
        } else {
            if (weights[i].size() != parents_[i].size()) throw ShapeMismatch("missing structural weights");
            Tensor logits(rows, cards_[i]);
            for (std::size_t k = 0; k < parents_[i].size(); ++k) {
                const std::size_t j = parents_[i][k];
                const Tensor& w = weights[i][k];
                if (w.rows != rows || w.cols != cards_[i] * cards_[j]) throw ShapeMismatch("bad weight block");
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t a = 0; a < cards_[i]; ++a) {
                        double s = 0.0;
                        for (std::size_t b = 0; b < cards_[j]; ++b) s += w(r, a * cards_[j] + b) * p[j](r, b);
                        logits(r, a) += s;
                    }
                }
            }
            for (std::size_t r = 0; r < rows; ++r) {
                auto row = logits.row(r);
                const double mx = *std::max_element(row.begin(), row.end());
                double z = 0.0;
                for (double& v : row) z += (v = std::exp(v - mx));
                for (double& v : row) v /= z;
            }
            p[i] = std::move(logits);
        }
        if (clamped(clamps, i)) {
            for (std::size_t r = 0; r < rows; ++r) {
                const int v = clamps[i][r];
                if (v < 0) continue;
                auto row = p[i].row(r);
                std::fill(row.begin(), row.end(), 0.0);
                row[static_cast<std::size_t>(v)] = 1.0;
            }
        }
    }
    return p;
}

Explanation C2bmModel::explain(const Tensor& x_row, const Clamps& clamps) const {
    if (x_row.rows != 1) throw ShapeMismatch("explain takes a single row");
    const auto u = encode_exogenous(x_row);
    const auto w = emit_weights(u);
    const auto p = propagate(u, w, clamps);
    Explanation out;
    for (const auto& t : p) out.probabilities.emplace_back(t.data.begin(), t.data.end());
    for (std::size_t i = 0; i < graph_.size(); ++i) {
        for (std::size_t k = 0; k < parents_[i].size(); ++k) {
            const std::size_t j = parents_[i][k];
            Tensor m(cards_[i], cards_[j], std::vector<double>(w[i][k].data.begin(), w[i][k].data.end()));
            std::optional<double> summary;
            if (cards_[i] == 2 && cards_[j] == 2) summary = m(1, 1) - m(1, 0);
            out.edges.push_back({j, i, std::move(m)});
            out.summaries.push_back(summary);
        }
    }
    return out;
}

nlohmann::json C2bmModel::meta() const {
    return {{"kind", kind()},       {"config", config_.to_json()}, {"graph", graph_to_json(graph_)},
            {"cardinalities", cards_}, {"task", names_[task_]},   {"feature_dim", feature_dim_},
            {"dropped", dropped_}};
}

std::unique_ptr<C2bmModel> C2bmModel::from_checkpoint(const nlohmann::json& meta) {
    const MixedGraph g = graph_from_json(meta.at("graph"));
    auto m = std::make_unique<C2bmModel>(g, meta.at("cardinalities").get<std::vector<std::size_t>>(),
                                         meta.at("task").get<std::string>(),
                                         meta.at("feature_dim").get<std::size_t>(),
                                         ModelConfig::from_json(meta.at("config")));
    m->dropped_ = meta.value("dropped", std::vector<std::string>{});
    return m;
}

// ---- flat CBM ------------------------------------------------------------------------

FlatCbm::FlatCbm(const std::vector<std::string>& names, const std::vector<std::size_t>& cardinalities,
                 const std::string& task, std::size_t feature_dim, DecoderKind decoder, const ModelConfig& config)
    : decoder_kind_(decoder) {
    if (names.size() != cardinalities.size()) throw NodeCountMismatch("one cardinality per node required");
    names_ = names;
    cards_ = cardinalities;
    const auto it = std::find(names_.begin(), names_.end(), task);
    if (it == names_.end()) throw UnknownNode("task '" + task + "' is not among the nodes");
    task_ = static_cast<std::size_t>(it - names_.begin());
    feature_dim_ = feature_dim;
    config_ = config;
    std::vector<NodeIndex> concepts;
    std::size_t width = 0;
    for (std::size_t i = 0; i < names_.size(); ++i) {
        if (i == task_) continue;
        concepts.push_back(i);
        width += cards_[i];
    }
    if (concepts.empty()) throw EmptyDataset("a flat CBM needs at least one concept");
    graph_ = flat_cbm_graph(names_, concepts, task_);
    Rng init = Rng::derive(config.seed, 12);
    concept_encoder_ = Mlp("cbm.enc", {feature_dim_, config.encoder_hidden, width}, init);
    if (decoder == DecoderKind::Linear) {
        decoder_ = Mlp("cbm.dec", {width, cards_[task_]}, init, Activation::Softmax);
    } else {
        decoder_ = Mlp("cbm.dec", {width, config.head_hidden, cards_[task_]}, init, Activation::Softmax);
    }
}

std::vector<Parameter*> FlatCbm::parameters() {
    std::vector<Parameter*> out = concept_encoder_.parameters();
    for (auto* p : decoder_.parameters()) out.push_back(p);
    return out;
}

const Tensor& FlatCbm::decoder_weight() const {
    if (decoder_kind_ != DecoderKind::Linear) throw InvalidGraph("only the linear decoder has a single weight matrix");
    return decoder_.parameters().front()->value;
}

FlatCbm::Forward FlatCbm::forward(Tape& tape, Var x, const Clamps& clamps) const {
    const std::size_t n = names_.size();
    check_width(x.value(), feature_dim_);
    check_clamps(clamps, n, x.rows(), cards_);
    Forward f{std::vector<Var>(n), std::vector<Var>(n)};
    Var logits = concept_encoder_.forward(tape, x);
    std::vector<Var> bottleneck;
    std::size_t offset = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (i == task_) continue;
        f.pre[i] = softmax_rows(slice_cols(logits, offset, cards_[i]));
        f.post[i] = clamped(clamps, i) ? apply_clamp(f.pre[i], clamps[i]) : f.pre[i];
        bottleneck.push_back(f.post[i]);
        offset += cards_[i];
    }
    f.pre[task_] = decoder_.forward(tape, bottleneck.size() == 1 ? bottleneck[0] : concat_cols(bottleneck));
    f.post[task_] = clamped(clamps, task_) ? apply_clamp(f.pre[task_], clamps[task_]) : f.pre[task_];
    return f;
}

std::vector<Tensor> FlatCbm::predict(const Tensor& x, const Clamps& clamps) const {
    Tape tape(false);
    const auto f = forward(tape, tape.constant(x), clamps);
    std::vector<Tensor> out;
    for (const Var& v : f.post) out.push_back(v.value());
    return out;
}

Var FlatCbm::loss(Tape& tape, const Tensor& x, const std::vector<std::vector<int>>& labels,
                  const Clamps& clamps) const {
    if (x.rows == 0) throw EmptyDataset("loss needs a nonempty batch");
    if (labels.size() != names_.size()) throw ShapeMismatch("labels must list every model node");
    const auto f = forward(tape, tape.constant(x), clamps);
    return concept_loss(tape, f.pre, labels, task_, config_.alpha);
}

nlohmann::json FlatCbm::meta() const {
    return {{"kind", kind()},          {"config", config_.to_json()},   {"names", names_},
            {"cardinalities", cards_}, {"task", names_[task_]},        {"feature_dim", feature_dim_}};
}

std::unique_ptr<FlatCbm> FlatCbm::from_checkpoint(const nlohmann::json& meta) {
    const std::string kind = meta.at("kind").get<std::string>();
    return std::make_unique<FlatCbm>(meta.at("names").get<std::vector<std::string>>(),
                                     meta.at("cardinalities").get<std::vector<std::size_t>>(),
                                     meta.at("task").get<std::string>(), meta.at("feature_dim").get<std::size_t>(),
                                     kind == "cbm_linear" ? DecoderKind::Linear : DecoderKind::Mlp,
                                     ModelConfig::from_json(meta.at("config")));
}

std::unique_ptr<ConceptModel> load_model(const std::filesystem::path& path) {
    const auto ck = read_checkpoint(path);
    std::unique_ptr<ConceptModel> model;
    try {
        const std::string kind = ck.meta.at("kind").get<std::string>();
        if (kind == "c2bm") {
            model = C2bmModel::from_checkpoint(ck.meta);
        } else if (kind == "cbm_linear" || kind == "cbm_mlp") {
            model = FlatCbm::from_checkpoint(ck.meta);
        } else {
            throw CheckpointError(path.string() + " holds an unknown model kind '" + kind + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(path.string() + ": bad model metadata: " + e.what());
    }
    for (auto* p : model->parameters()) load_into(*p, ck.find(p->name));
    return model;
}

// ---- training ------------------------------------------------------------------------

std::vector<std::vector<int>> node_labels(const ConceptModel& model, const ConceptTable& table,
                                          const std::vector<std::size_t>& rows) {
    const auto cols = model.columns_in(table);
    std::vector<std::vector<int>> labels(cols.size(), std::vector<int>(rows.size()));
    for (std::size_t k = 0; k < rows.size(); ++k) {
        for (std::size_t i = 0; i < cols.size(); ++i) labels[i][k] = table.at(rows[k], cols[i]);
    }
    return labels;
}

std::vector<double> node_accuracy(const ConceptModel& model, const Dataset& data,
                                  const std::vector<std::size_t>& rows, const Clamps& clamps) {
    if (rows.empty()) throw EmptyDataset("accuracy needs at least one row");
    const auto labels = node_labels(model, data.concepts, rows);
    const auto probs = model.predict(data.features.select_rows(rows), clamps);
    std::vector<double> acc(probs.size(), 0.0);
    for (std::size_t i = 0; i < probs.size(); ++i) {
        std::size_t hits = 0;
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const auto row = probs[i].row(r);
            const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
            hits += best == labels[i][r];
        }
        acc[i] = static_cast<double>(hits) / static_cast<double>(rows.size());
    }
    return acc;
}

TrainLog train_model(ConceptModel& model, const Dataset& data,
                     const std::function<void(std::size_t, double, double)>& on_epoch) {
    if (data.train.empty()) throw EmptyDataset("no training rows");
    if (data.val.empty()) throw EmptyDataset("no validation rows");
    if (data.features.rows != data.concepts.rows) throw ShapeMismatch("features and concepts differ in row count");
    const ModelConfig& cfg = model.config();
    const std::size_t n = model.node_count();
    const auto params = model.parameters();

    const Tensor val_x = data.features.select_rows(data.val);
    const auto val_labels = node_labels(model, data.concepts, data.val);
    auto val_loss = [&]() {
        Tape tape(false);
        return model.loss(tape, val_x, val_labels, {}).value().data[0];
    };
    auto snapshot = [&]() {
        std::vector<Tensor> out;
        for (auto* p : params) out.push_back(p->value);
        return out;
    };

    AdamState adam;
    adam.lr = cfg.lr;
    Rng shuffle = Rng::derive(cfg.seed, 21);
    Rng interventions = Rng::derive(cfg.seed, 22);
    std::vector<std::size_t> order = data.train;

    TrainLog log;
    if (const auto* c2 = dynamic_cast<const C2bmModel*>(&model)) log.dropped_concepts = c2->dropped();
    log.best_val_loss = val_loss();
    auto best = snapshot();
    std::size_t since_best = 0;
    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        shuffle.shuffle(std::span<std::size_t>(order));
        double train_total = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            const std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                order.begin() + static_cast<std::ptrdiff_t>(end));
            const auto labels = node_labels(model, data.concepts, rows);
            Clamps clamps(n);
            if (cfg.train_intervention_prob > 0.0) {
                for (std::size_t i = 0; i < n; ++i) {
                    if (i == model.task()) continue;
                    clamps[i].assign(rows.size(), -1);
                    for (std::size_t r = 0; r < rows.size(); ++r) {
                        if (interventions.bernoulli(cfg.train_intervention_prob)) clamps[i][r] = labels[i][r];
                    }
                }
            }
            for (auto* p : params) p->zero_grad();
            Tape tape;
            Var l = model.loss(tape, data.features.select_rows(rows), labels, clamps);
            tape.backward(l);
            adam_step(adam, params);
            train_total += l.value().data[0] * static_cast<double>(rows.size());
        }
        const double v = val_loss();
        log.train_loss.push_back(train_total / static_cast<double>(order.size()));
        log.val_loss.push_back(v);
        log.epochs_run = epoch;
        if (on_epoch) on_epoch(epoch, log.train_loss.back(), v);
        if (v < log.best_val_loss) {
            log.best_val_loss = v;
            log.best_epoch = epoch;
            best = snapshot();
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        params[i]->value = best[i];
        round_to_f32(*params[i]);
    }
    log.best_val_loss = val_loss();
    return log;
}

}  // namespace c2bm
