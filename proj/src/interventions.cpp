#include "c2bm/interventions.hpp"

#include <algorithm>
#include <cmath>

#include "c2bm/errors.hpp"

namespace c2bm {

nlohmann::json InterventionPlan::to_json() const {
    nlohmann::json j{{"nodes", nodes}, {"values", values}};
    j["level"] = level ? nlohmann::json(*level) : nlohmann::json();
    return j;
}

LevelPolicy::LevelPolicy(const MixedGraph& graph, const std::string& task, std::size_t level, double fraction,
                         std::uint64_t seed)
    : level_(level), rng_(seed) {
    const auto task_index = graph.find(task);
    if (!task_index) throw UnknownNode("task '" + task + "' is not in the policy graph");
    if (!(fraction >= 0.0 && fraction <= 1.0)) throw ConfigError("intervention fraction must lie in [0, 1]");
    const auto depth = depth_levels(graph);
    for (NodeIndex v = 0; v < graph.size(); ++v) {
        if (v != *task_index && depth[v] <= level) eligible_.push_back(graph.name(v));
    }
    count_ = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(eligible_.size())));
}

InterventionPlan LevelPolicy::next() {
    InterventionPlan plan;
    plan.level = level_;
    if (count_ == 0) return plan;
    std::vector<std::size_t> idx(eligible_.size());
    for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
    if (count_ < idx.size()) {
        rng_.shuffle(std::span(idx));
        idx.resize(count_);
        std::sort(idx.begin(), idx.end());
    }
    for (std::size_t k : idx) plan.nodes.push_back(eligible_[k]);
    return plan;
}

LevelPolicy level_policy(const MixedGraph& graph, const std::string& task, std::size_t level, double fraction,
                         std::uint64_t seed) {
    return LevelPolicy(graph, task, level, fraction, seed);
}

Clamps plan_clamps(const ConceptModel& model, const Dataset& data, const std::vector<std::size_t>& rows,
                   const std::vector<InterventionPlan>& plans) {
    if (plans.size() != 1 && plans.size() != rows.size()) {
        throw ShapeMismatch("need one intervention plan, or one per row");
    }
    const auto cols = model.columns_in(data.concepts);
    Clamps clamps(model.node_count());
    auto set = [&](std::size_t node, std::size_t k, int value) {
        if (value < 0 || static_cast<std::size_t>(value) >= model.cardinalities()[node]) {
            throw ConfigError("do-value out of range for '" + model.node_names()[node] + "'");
        }
        if (clamps[node].empty()) clamps[node].assign(rows.size(), -1);
        clamps[node][k] = value;
    };
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const auto& plan = plans.size() == 1 ? plans[0] : plans[k];
        for (const auto& name : plan.nodes) {
            if (const auto node = model.find_node(name)) set(*node, k, data.concepts.at(rows[k], cols[*node]));
        }
        for (const auto& [name, value] : plan.values) {
            const auto node = model.find_node(name);
            if (!node) throw UnknownNode("cannot clamp unknown node '" + name + "'");
            set(*node, k, value);
        }
    }
    return clamps;
}

nlohmann::json CurvePoint::to_json() const {
    return {
        {"level", level ? nlohmann::json(*level) : nlohmann::json()},
        {"downstream_accuracy", downstream_accuracy},
        {"all_accuracy", all_accuracy},
        {"task_accuracy", task_accuracy},
        {"clamped_per_sample", clamped_per_sample},
    };
}

nlohmann::json CaceResult::to_json() const {
    return {
        {"concept", concept_name},
        {"target", target},
        {"mediator", mediator ? nlohmann::json(*mediator) : nlohmann::json()},
        {"value", value},
    };
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json curve_json = nlohmann::json::array();
    for (const auto& p : curve) curve_json.push_back(p.to_json());
    nlohmann::json cace_json = nlohmann::json::array();
    for (const auto& c : cace) cace_json.push_back(c.to_json());
    return {
        {"model_kind", model_kind},
        {"node_accuracy", node_accuracy},
        {"mean_label_accuracy", mean_label_accuracy},
        {"task_accuracy", task_accuracy},
        {"curve", curve_json},
        {"cace", cace_json},
    };
}

namespace {

int argmax_row(const Tensor& t, std::size_t r) {
    const auto row = t.row(r);
    return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
}

}  // namespace

CurvePoint evaluate_with_interventions(const ConceptModel& model, const Dataset& data,
                                       const std::vector<std::size_t>& rows,
                                       const std::vector<InterventionPlan>& plans) {
    if (rows.empty()) throw EmptyDataset("evaluation needs at least one row");
    const Clamps clamps = plan_clamps(model, data, rows, plans);
    const auto labels = node_labels(model, data.concepts, rows);
    const auto probs = model.predict(data.features.select_rows(rows), clamps);

    CurvePoint point;
    if (!plans.empty()) point.level = plans[0].level;
    std::size_t down_hits = 0, down_total = 0, all_hits = 0, task_hits = 0, clamped = 0;
    for (std::size_t k = 0; k < rows.size(); ++k) {
        for (std::size_t i = 0; i < model.node_count(); ++i) {
            const bool hit = argmax_row(probs[i], k) == labels[i][k];
            const bool is_clamped = !clamps[i].empty() && clamps[i][k] >= 0;
            all_hits += hit;
            if (is_clamped) {
                ++clamped;
            } else {
                down_hits += hit;
                ++down_total;
            }
            if (i == model.task()) task_hits += hit;
        }
    }
    const double n = static_cast<double>(rows.size());
    point.downstream_accuracy = down_total ? static_cast<double>(down_hits) / static_cast<double>(down_total) : 1.0;
    point.all_accuracy = static_cast<double>(all_hits) / (n * static_cast<double>(model.node_count()));
    point.task_accuracy = static_cast<double>(task_hits) / n;
    point.clamped_per_sample = static_cast<double>(clamped) / n;
    return point;
}

std::vector<CurvePoint> intervention_curve(const ConceptModel& model, const Dataset& data,
                                           const std::vector<std::size_t>& rows, const MixedGraph& policy_graph,
                                           double fraction, std::uint64_t seed) {
    const std::string& task = model.node_names()[model.task()];
    std::vector<CurvePoint> curve{evaluate_with_interventions(model, data, rows, {InterventionPlan{}})};
    const auto depth = depth_levels(policy_graph);
    const std::size_t max_level = depth.empty() ? 0 : *std::max_element(depth.begin(), depth.end());
    for (std::size_t level = 0; level <= max_level; ++level) {
        auto policy = level_policy(policy_graph, task, level, fraction, Rng::derive(seed, level).next());
        std::vector<InterventionPlan> plans;
        plans.reserve(rows.size());
        for (std::size_t k = 0; k < rows.size(); ++k) plans.push_back(policy.next());
        curve.push_back(evaluate_with_interventions(model, data, rows, plans));
        curve.back().level = level;
    }
    return curve;
}

namespace {

double cace_impl(const ConceptModel& model, const Dataset& data, const std::vector<std::size_t>& rows,
                 const std::string& concept_name, const std::string& target, const std::string* mediator) {
    if (rows.empty()) throw EmptyDataset("CaCE needs at least one row");
    const auto c = model.find_node(concept_name);
    if (!c) throw UnknownNode("concept '" + concept_name + "' is not modeled");
    const auto t = model.find_node(target);
    if (!t) throw UnknownNode("target '" + target + "' is not modeled");
    if (model.cardinalities()[*c] != 2) throw NonBinaryConcept("concept '" + concept_name + "' is not binary");
    if (model.cardinalities()[*t] != 2) throw NonBinaryConcept("target '" + target + "' is not binary");

    Clamps base(model.node_count());
    if (mediator != nullptr) {
        const auto m = model.find_node(*mediator);
        if (!m) throw UnknownNode("mediator '" + *mediator + "' is not modeled");
        const std::size_t col = model.columns_in(data.concepts)[*m];
        base[*m].resize(rows.size());
        for (std::size_t k = 0; k < rows.size(); ++k) base[*m][k] = data.concepts.at(rows[k], col);
    }
    const Tensor x = data.features.select_rows(rows);
    auto arm = [&](int value) {
        Clamps clamps = base;
        if (clamps[*c].empty()) clamps[*c].assign(rows.size(), value);
        return model.predict(x, clamps)[*t];
    };
    const Tensor on = arm(1);
    const Tensor off = arm(0);
    double total = 0.0;
    for (std::size_t k = 0; k < rows.size(); ++k) total += std::abs(on.row(k)[1] - off.row(k)[1]);
    return total / static_cast<double>(rows.size());
}

}  // namespace

double cace(const ConceptModel& model, const Dataset& data, const std::vector<std::size_t>& rows,
            const std::string& concept_name, const std::string& target) {
    return cace_impl(model, data, rows, concept_name, target, nullptr);
}

double blocked_cace(const ConceptModel& model, const Dataset& data, const std::vector<std::size_t>& rows,
                    const std::string& concept_name, const std::string& target, const std::string& mediator) {
    return cace_impl(model, data, rows, concept_name, target, &mediator);
}

EvalReport evaluate_model(const ConceptModel& model, const Dataset& data, const std::vector<std::size_t>& rows) {
    EvalReport report;
    report.model_kind = model.kind();
    const auto acc = node_accuracy(model, data, rows);
    double concept_sum = 0.0;
    for (std::size_t i = 0; i < acc.size(); ++i) {
        report.node_accuracy[model.node_names()[i]] = acc[i];
        if (i != model.task()) concept_sum += acc[i];
    }
    report.task_accuracy = acc[model.task()];
    report.mean_label_accuracy = acc.size() > 1 ? concept_sum / static_cast<double>(acc.size() - 1) : 0.0;
    return report;
}

}  // namespace c2bm
