#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "c2bm/graph.hpp"
#include "c2bm/model.hpp"
#include "c2bm/rng.hpp"

namespace c2bm {

/// Nodes to clamp to their ground-truth values, plus optional fixed
/// do-values that take precedence over the ground truth.
struct InterventionPlan {
    std::vector<std::string> nodes;
    std::map<std::string, int> values;
    std::optional<std::size_t> level;

    nlohmann::json to_json() const;
};

/// Draws plans that clamp a random `fraction` of the non-task concepts at
/// depth <= level in `graph` (rounded to the nearest count). Deterministic
/// per seed.
class LevelPolicy {
public:
    LevelPolicy(const MixedGraph& graph, const std::string& task, std::size_t level, double fraction,
                std::uint64_t seed);

    InterventionPlan next();
    const std::vector<std::string>& eligible() const { return eligible_; }
    std::size_t level() const { return level_; }

private:
    std::vector<std::string> eligible_;
    std::size_t level_;
    std::size_t count_;
    Rng rng_;
};

/// Throws UnknownNode when `task` is not in the graph, ConfigError when
/// fraction lies outside [0, 1].
LevelPolicy level_policy(const MixedGraph& graph, const std::string& task, std::size_t level, double fraction,
                         std::uint64_t seed);

/// Clamps for `rows` of data.concepts: one plan per row (or a single plan
/// shared by every row). Plan nodes unknown to the model are ignored.
/// Throws ShapeMismatch on a plan count mismatch, UnknownNode/ConfigError on
/// out-of-range do-values.
Clamps plan_clamps(const ConceptModel& model, const Dataset& data, const std::vector<std::size_t>& rows,
                   const std::vector<InterventionPlan>& plans);

struct CurvePoint {
    std::optional<std::size_t> level;  // empty = no intervention
    double downstream_accuracy = 0.0;  // over non-clamped nodes, task included
    double all_accuracy = 0.0;         // over every node, clamped ones count as correct
    double task_accuracy = 0.0;
    double clamped_per_sample = 0.0;

    nlohmann::json to_json() const;
};

struct CaceResult {
    std::string concept_name;
    std::string target;
    std::optional<std::string> mediator;
    double value = 0.0;

    nlohmann::json to_json() const;
};

struct EvalReport {
    std::string model_kind;
    std::map<std::string, double> node_accuracy;
    double mean_label_accuracy = 0.0;  // concepts only
    double task_accuracy = 0.0;
    std::vector<CurvePoint> curve;
    std::vector<CaceResult> cace;

    nlohmann::json to_json() const;
};

/// One curve point: every row of `rows` gets its own plan.
CurvePoint evaluate_with_interventions(const ConceptModel& model, const Dataset& data,
                                       const std::vector<std::size_t>& rows,
                                       const std::vector<InterventionPlan>& plans);

/// No-intervention point followed by levels 0..max depth of `policy_graph`,
/// with per-row plans from level_policy(policy_graph, task, level, fraction,
/// derive(seed, level)).
std::vector<CurvePoint> intervention_curve(const ConceptModel& model, const Dataset& data,
                                           const std::vector<std::size_t>& rows, const MixedGraph& policy_graph,
                                           double fraction, std::uint64_t seed);

/// Mean over rows of |p(target = 1 | do(concept = 1)) - p(target = 1 | do(concept = 0))|.
/// Throws NonBinaryConcept, UnknownNode.
double cace(const ConceptModel& model, const Dataset& data, const std::vector<std::size_t>& rows,
            const std::string& concept_name, const std::string& target);

/// CaCE with `mediator` clamped to its ground truth in both arms (the
/// mediator clamp wins if it names the concept itself).
double blocked_cace(const ConceptModel& model, const Dataset& data, const std::vector<std::size_t>& rows,
                    const std::string& concept_name, const std::string& target, const std::string& mediator);

/// Per-node accuracy, mean concept accuracy and task accuracy on `rows`.
EvalReport evaluate_model(const ConceptModel& model, const Dataset& data, const std::vector<std::size_t>& rows);

}  // namespace c2bm
