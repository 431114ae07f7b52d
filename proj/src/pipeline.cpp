#include "c2bm/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <set>
#include <sstream>

#include "c2bm/bayesnet.hpp"
#include "c2bm/errors.hpp"
#include "c2bm/io.hpp"

#ifndef C2BM_DATA_DIR
#define C2BM_DATA_DIR "data"
#endif

namespace c2bm {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- config ---------------------------------------------------------------------

namespace {

template <class T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.contains(key) || j.at(key).is_null()) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
}

const json& section(const json& j, const char* key) {
    static const json empty = json::object();
    if (!j.contains(key)) return empty;
    if (!j.at(key).is_object()) throw ConfigError(std::string("config section '") + key + "' must be an object");
    return j.at(key);
}

}  // namespace

json DatasetSettings::to_json() const {
    return {
        {"network", network},   {"task", task},     {"concepts", concepts},
        {"n", n},               {"seed", seed},     {"splits", splits},
        {"featurizer", featurizer.to_json()},
    };
}

DatasetSettings DatasetSettings::from_json(const json& j) {
    DatasetSettings s;
    s.network = get_or(j, "network", s.network);
    s.task = get_or(j, "task", s.task);
    s.concepts = get_or(j, "concepts", s.concepts);
    s.n = get_or(j, "n", s.n);
    s.seed = get_or(j, "seed", s.seed);
    s.splits = get_or(j, "splits", s.splits);
    s.featurizer = FeaturizerConfig::from_json(section(j, "featurizer"));
    if (s.network.empty()) throw ConfigError("dataset.network must be set");
    if (s.task.empty()) throw ConfigError("dataset.task must be set");
    if (s.n < 10) throw ConfigError("dataset.n must be at least 10");
    double total = 0.0;
    for (double r : s.splits) {
        if (!(r >= 0.0)) throw ConfigError("dataset.splits must be nonnegative");
        total += r;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("dataset.splits must sum to 1");
    if (std::find(s.concepts.begin(), s.concepts.end(), s.task) != s.concepts.end()) {
        throw ConfigError("dataset.concepts must not list the task");
    }
    return s;
}

json EvalSettings::to_json() const {
    json queries = json::array();
    for (const auto& q : cace) {
        json e{{"concept", q.concept_name}, {"target", q.target}};
        if (q.mediator) e["mediator"] = *q.mediator;
        queries.push_back(e);
    }
    return {{"policy", policy}, {"fraction", fraction}, {"policy_seeds", policy_seeds}, {"cace", queries}};
}

EvalSettings EvalSettings::from_json(const json& j) {
    EvalSettings s;
    s.policy = get_or(j, "policy", s.policy);
    s.fraction = get_or(j, "fraction", s.fraction);
    s.policy_seeds = get_or(j, "policy_seeds", s.policy_seeds);
    if (j.contains("cace")) {
        if (!j.at("cace").is_array()) throw ConfigError("eval.cace must be an array");
        for (const auto& q : j.at("cace")) {
            CaceQuery c;
            c.concept_name = get_or<std::string>(q, "concept", "");
            c.target = get_or<std::string>(q, "target", "");
            if (q.contains("mediator") && !q.at("mediator").is_null()) c.mediator = get_or<std::string>(q, "mediator", "");
            if (c.concept_name.empty() || c.target.empty()) throw ConfigError("eval.cace entries need concept and target");
            s.cace.push_back(c);
        }
    }
    if (s.policy != "levels") throw ConfigError("eval.policy must be 'levels'");
    if (!(s.fraction >= 0.0 && s.fraction <= 1.0)) throw ConfigError("eval.fraction must lie in [0, 1]");
    if (s.policy_seeds < 1) throw ConfigError("eval.policy_seeds must be >= 1");
    return s;
}

json RunConfig::to_json() const {
    return {
        {"dataset", dataset.to_json()}, {"discovery", discovery.to_json()}, {"oracle", oracle.to_json()},
        {"model", model.to_json()},     {"baselines", baselines},           {"eval", eval.to_json()},
    };
}

RunConfig RunConfig::from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    static const std::set<std::string> known{"dataset", "discovery", "oracle", "model", "baselines", "eval"};
    for (const auto& [key, _] : j.items()) {
        if (!known.count(key)) throw ConfigError("unknown config section '" + key + "'");
    }
    RunConfig c;
    c.dataset = DatasetSettings::from_json(section(j, "dataset"));
    c.discovery = GesConfig::from_json(section(j, "discovery"));
    c.oracle = OracleSettings::from_json(section(j, "oracle"));
    c.model = ModelConfig::from_json(section(j, "model"));
    c.baselines = get_or(j, "baselines", c.baselines);
    c.eval = EvalSettings::from_json(section(j, "eval"));
    for (const auto& b : c.baselines) {
        if (b != "cbm_linear" && b != "cbm_mlp") throw ConfigError("unknown baseline '" + b + "'");
    }
    if (c.oracle.kind == "http" && c.oracle.endpoint.empty()) {
        throw ConfigError("oracle.endpoint is required when oracle.kind is 'http'");
    }
    if (!c.oracle.stub_path.empty() && !fs::exists(c.oracle.stub_path)) {
        throw ConfigError("oracle.stub_path " + c.oracle.stub_path + " does not exist");
    }
    if (!c.oracle.prompt_path.empty() && !fs::exists(c.oracle.prompt_path)) {
        throw ConfigError("oracle.prompt_path " + c.oracle.prompt_path + " does not exist");
    }
    resolve_network(c.dataset.network);
    return c;
}

RunConfig RunConfig::load(const fs::path& path) {
    std::string text;
    try {
        text = read_text_file(path);
    } catch (const Error&) {
        throw ConfigError("cannot read config " + path.string());
    }
    const auto j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config " + path.string() + " is not valid JSON");
    return from_json(j);
}

void RunConfig::set_seed(std::uint64_t seed) {
    dataset.seed = seed;
    model.seed = seed;
}

fs::path resolve_network(const std::string& network) {
    if (fs::is_regular_file(network)) return network;
    const char* env = std::getenv("C2BM_DATA_DIR");
    const fs::path dir = env != nullptr ? fs::path(env) : fs::path(C2BM_DATA_DIR);
    const fs::path bundled = dir / "networks" / (network + ".bif");
    if (fs::is_regular_file(bundled)) return bundled;
    throw ConfigError("network '" + network + "' is neither a file nor a bundled network");
}

// ---- run data -----------------------------------------------------------------------

RunData load_run_data(const RunPaths& paths) {
    for (const auto& p : {paths.schema(), paths.concepts(), paths.features(), paths.splits()}) {
        if (!fs::exists(p)) throw CheckpointMissing("run directory lacks " + p.string());
    }
    const auto schema = json::parse(read_text_file(paths.schema()));
    const auto splits = json::parse(read_text_file(paths.splits()));
    RunData rd;
    rd.task = schema.at("task").get<std::string>();
    rd.states = schema.at("states").get<std::vector<std::vector<std::string>>>();
    std::vector<std::size_t> cards;
    for (const auto& s : rd.states) cards.push_back(s.size());
    rd.data.concepts = read_concepts_csv(paths.concepts(), cards);
    rd.data.features = read_features_csv(paths.features());
    rd.data.train = splits.at("train").get<std::vector<std::size_t>>();
    rd.data.val = splits.at("val").get<std::vector<std::size_t>>();
    rd.data.test = splits.at("test").get<std::vector<std::size_t>>();
    if (rd.data.features.rows != rd.data.concepts.rows) throw ShapeMismatch("features and concepts differ in rows");
    return rd;
}

// ---- pipeline ---------------------------------------------------------------------

Pipeline::Pipeline(RunConfig config, fs::path run_dir, bool force)
    : config_(std::move(config)), paths_{std::move(run_dir)}, force_(force) {}

void Pipeline::log(const std::string& line) const {
    if (logger_) logger_(line);
}

template <class F>
StageStatus Pipeline::stage(const char* name, const std::vector<fs::path>& outputs, F&& body) {
    const bool done = std::all_of(outputs.begin(), outputs.end(), [](const fs::path& p) { return fs::exists(p); });
    if (done && !force_) {
        log(std::string(name) + ": skipped (outputs exist)");
        return StageStatus::Skipped;
    }
    const auto start = std::chrono::steady_clock::now();
    log(std::string(name) + ": running");
    try {
        write_file_atomic(paths_.config(), config_.to_json().dump(2) + "\n");
        body();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(name, e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::ostringstream msg;
    msg << name << ": done in " << secs << " s";
    log(msg.str());
    return StageStatus::Ran;
}

namespace {

json load_json(const fs::path& path) {
    if (!fs::exists(path)) throw CheckpointMissing("missing " + path.string());
    return json::parse(read_text_file(path));
}

MixedGraph load_graph(const fs::path& path) { return graph_from_json(load_json(path)); }

void save_json(const fs::path& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

}  // namespace

StageStatus Pipeline::generate() {
    const auto outputs = {paths_.concepts(), paths_.features(), paths_.splits(), paths_.schema(),
                          paths_.feature_spec(), paths_.true_graph()};
    return stage("generate", outputs, [&] {
        const auto& ds = config_.dataset;
        const auto net = load_network(resolve_network(ds.network));
        const auto& g = net.graph();
        if (!g.find(ds.task)) throw UnknownNode("task '" + ds.task + "' is not in the network");
        std::set<std::string> wanted(ds.concepts.begin(), ds.concepts.end());
        for (const auto& c : wanted) {
            if (!g.find(c)) throw UnknownNode("concept '" + c + "' is not in the network");
        }
        std::vector<NodeIndex> keep;
        for (NodeIndex v = 0; v < g.size(); ++v) {
            if (wanted.empty() || wanted.count(g.name(v)) || g.name(v) == ds.task) keep.push_back(v);
        }

        const auto table = ancestral_sample(net, ds.n, ds.seed);
        const auto split = split_dataset(ds.n, ds.splits, ds.seed);
        if (split.train.size() < 2 || split.val.empty() || split.test.empty()) {
            throw EmptyDataset("splits leave an empty train, validation or test set");
        }
        auto spec = fit_autoencoder(table.select_rows(split.train), ds.featurizer, ds.seed);
        const auto raw = mix_features(spec, table, ds.seed);
        fit_standardization(spec, raw, split.train);

        json states = json::array();
        for (NodeIndex v : keep) states.push_back(net.variable(v).states);
        std::vector<std::string> names;
        for (NodeIndex v : keep) names.push_back(g.name(v));
        write_concepts_csv(paths_.concepts(), table.select_cols(keep));
        write_features_csv(paths_.features(), standardize(spec, raw));
        save_feature_spec(paths_.feature_spec(), spec);
        save_json(paths_.splits(), {{"train", split.train}, {"val", split.val}, {"test", split.test}});
        save_json(paths_.schema(), {{"names", names}, {"states", states}, {"task", ds.task},
                                    {"network", ds.network}, {"feature_dim", raw.cols}});
        save_json(paths_.true_graph(), graph_to_json(latent_projection(g, keep)));
        std::ostringstream msg;
        msg << "generate: " << ds.n << " samples, " << keep.size() << " variables, " << raw.cols
            << " features, autoencoder mse " << spec.final_mse;
        log(msg.str());
    });
}

StageStatus Pipeline::discover() {
    return stage("discover", {paths_.cpdag()}, [&] {
        const auto rd = load_run_data(paths_);
        BdeuScorer scorer(rd.data.concepts.select_rows(rd.data.train), config_.discovery.ess);
        const auto res = ges_search(scorer, config_.discovery);
        std::string steps;
        for (const auto& s : res.steps) steps += s.to_json().dump() + "\n";
        write_file_atomic(paths_.log("ges.log"), steps);
        save_json(paths_.cpdag(), graph_to_json(res.cpdag));
        log("discover: " + std::to_string(res.steps.size()) + " operators, " +
            std::to_string(res.cpdag.edge_count()) + " edges");
    });
}

StageStatus Pipeline::refine() {
    return stage("refine", {paths_.refined()}, [&] {
        const auto rd = load_run_data(paths_);
        const auto cpdag = load_graph(paths_.cpdag());
        std::optional<MixedGraph> truth;
        if (fs::exists(paths_.true_graph())) truth = load_graph(paths_.true_graph());
        auto settings = config_.oracle;
        // describe variables without a configured description by their states
        for (std::size_t c = 0; c < rd.data.concepts.cols(); ++c) {
            const auto& name = rd.data.concepts.names[c];
            if (settings.descriptions.count(name)) continue;
            std::string desc = "categorical variable with states";
            for (std::size_t k = 0; k < rd.states[c].size(); ++k) desc += (k ? ", " : " ") + rd.states[c][k];
            settings.descriptions[name] = desc;
        }
        const auto oracle = make_oracle(settings, truth ? &*truth : nullptr);
        BdeuScorer scorer(rd.data.concepts.select_rows(rd.data.train), config_.discovery.ess);
        const auto res = refine_cpdag(cpdag, *oracle, &scorer, settings);
        json decisions = json::array();
        for (const auto& d : res.decisions) {
            decisions.push_back({{"a", d.a}, {"b", d.b}, {"verdict", to_string(d.verdict)}, {"outcome", d.outcome}});
        }
        save_json(paths_.log("refine.json"), decisions);
        save_json(paths_.refined(), graph_to_json(res.dag));
        log("refine: " + std::to_string(res.decisions.size()) + " edges queried");
    });
}

StageStatus Pipeline::train() {
    std::vector<fs::path> outputs{paths_.model()};
    for (const auto& b : config_.baselines) outputs.push_back(paths_.baseline(b));
    return stage("train", outputs, [&] {
        const auto rd = load_run_data(paths_);
        const auto refined = load_graph(paths_.refined());
        const auto& cards = rd.data.concepts.cardinalities;
        const std::size_t dim = rd.data.features.cols;
        auto record = [&](const std::string& kind, const TrainLog& tl) {
            save_json(paths_.log("train_" + kind + ".json"),
                      {{"train_loss", tl.train_loss}, {"val_loss", tl.val_loss}, {"best_epoch", tl.best_epoch},
                       {"best_val_loss", tl.best_val_loss}, {"epochs_run", tl.epochs_run},
                       {"dropped_concepts", tl.dropped_concepts}});
            log("train: " + kind + " stopped after " + std::to_string(tl.epochs_run) + " epochs");
        };
        C2bmModel model(refined, cards, rd.task, dim, config_.model);
        record("c2bm", train_model(model, rd.data));
        model.save(paths_.model());
        for (const auto& b : config_.baselines) {
            FlatCbm flat(rd.data.concepts.names, cards, rd.task, dim,
                         b == "cbm_mlp" ? DecoderKind::Mlp : DecoderKind::Linear, config_.model);
            record(b, train_model(flat, rd.data));
            flat.save(paths_.baseline(b));
        }
    });
}

EvalReport evaluate_run_model(const ConceptModel& model, const Dataset& data, const MixedGraph& policy_graph,
                              const EvalSettings& settings, std::uint64_t seed) {
    EvalReport report = evaluate_model(model, data, data.test);
    for (std::size_t s = 0; s < settings.policy_seeds; ++s) {
        const auto curve =
            intervention_curve(model, data, data.test, policy_graph, settings.fraction, Rng::derive(seed, 100 + s).next());
        if (report.curve.empty()) {
            report.curve = curve;
            continue;
        }
        for (std::size_t k = 0; k < curve.size(); ++k) {
            report.curve[k].downstream_accuracy += curve[k].downstream_accuracy;
            report.curve[k].all_accuracy += curve[k].all_accuracy;
            report.curve[k].task_accuracy += curve[k].task_accuracy;
            report.curve[k].clamped_per_sample += curve[k].clamped_per_sample;
        }
    }
    const double k = static_cast<double>(settings.policy_seeds);
    for (auto& p : report.curve) {
        p.downstream_accuracy /= k;
        p.all_accuracy /= k;
        p.task_accuracy /= k;
        p.clamped_per_sample /= k;
    }
    for (const auto& q : settings.cace) {
        if (!model.find_node(q.concept_name) || !model.find_node(q.target)) continue;
        if (q.mediator && !model.find_node(*q.mediator)) continue;
        CaceResult r{q.concept_name, q.target, q.mediator, 0.0};
        r.value = q.mediator ? blocked_cace(model, data, data.test, q.concept_name, q.target, *q.mediator)
                             : cace(model, data, data.test, q.concept_name, q.target);
        report.cace.push_back(r);
    }
    return report;
}

StageStatus Pipeline::evaluate() {
    return stage("evaluate", {paths_.report()}, [&] {
        const auto rd = load_run_data(paths_);
        const auto truth = load_graph(paths_.true_graph());
        json graphs = json::object();
        for (const auto& [name, path] : {std::pair{"cpdag", paths_.cpdag()}, std::pair{"refined", paths_.refined()}}) {
            if (!fs::exists(path)) continue;
            const auto g = load_graph(path);
            const auto shd = structural_hamming(truth, g);
            graphs[name] = {{"shd", shd.to_double()},
                            {"shd_rational", std::to_string(shd.num()) + "/" + std::to_string(shd.den())},
                            {"mistaken_edges", mistaken_edges(truth, g)},
                            {"edges", g.edge_count()}};
        }
        json models = json::object();
        const auto seed = config_.dataset.seed;
        const auto main = load_model(paths_.model());
        models["c2bm"] = evaluate_run_model(*main, rd.data, truth, config_.eval, seed).to_json();
        for (const auto& b : config_.baselines) {
            if (!fs::exists(paths_.baseline(b))) continue;
            const auto m = load_model(paths_.baseline(b));
            models[b] = evaluate_run_model(*m, rd.data, truth, config_.eval, seed).to_json();
        }
        save_json(paths_.report(), {{"task", rd.task}, {"test_rows", rd.data.test.size()},
                                    {"graphs", graphs}, {"models", models}});
        log("evaluate: c2bm task accuracy " + std::to_string(models["c2bm"]["task_accuracy"].get<double>()));
    });
}

void Pipeline::run_all() {
    generate();
    discover();
    refine();
    train();
    evaluate();
}

}  // namespace c2bm
