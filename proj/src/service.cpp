#include "c2bm/service.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "c2bm/errors.hpp"
#include "c2bm/interventions.hpp"
#include "c2bm/io.hpp"

namespace c2bm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Client mistakes surface as 400; anything else propagates as 500.
class BadRequest : public Error {
public:
    using Error::Error;
};

class NotFound : public Error {
public:
    using Error::Error;
};

ApiResponse error_response(int status, const std::string& type, const std::string& message) {
    return {status, {{"error", message}, {"type", type}}};
}

template <class F>
ApiResponse guarded(F&& body) {
    try {
        return body();
    } catch (const NotFound& e) {
        return error_response(404, "not_found", e.what());
    } catch (const BadRequest& e) {
        return error_response(400, "bad_request", e.what());
    } catch (const ConfigError& e) {
        return error_response(400, "config_error", e.what());
    } catch (const UnknownNode& e) {
        return error_response(400, "unknown_node", e.what());
    } catch (const ShapeMismatch& e) {
        return error_response(400, "shape_mismatch", e.what());
    } catch (const NotFitted& e) {
        return error_response(400, "not_fitted", e.what());
    } catch (const json::exception& e) {
        return error_response(400, "bad_request", std::string("malformed request: ") + e.what());
    }
}

int argmax(std::span<const double> row) {
    return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
}

}  // namespace

ApiService::ApiService(const fs::path& run_dir) : paths_{run_dir} {
    if (!fs::exists(paths_.model())) throw CheckpointMissing("no trained model at " + paths_.model().string());
    run_ = load_run_data(paths_);
    model_ = load_model(paths_.model());
    if (fs::exists(paths_.feature_spec())) spec_ = load_feature_spec(paths_.feature_spec());
    policy_graph_ = fs::exists(paths_.true_graph()) ? graph_from_json(json::parse(read_text_file(paths_.true_graph())))
                                                    : model_->graph();
    if (fs::exists(paths_.report())) report_ = json::parse(read_text_file(paths_.report()));
    model_->columns_in(run_.data.concepts);  // every model node must be annotated
}

std::size_t ApiService::sample_row(const json& request) const {
    if (!request.is_object() || !request.contains("sample_index")) throw BadRequest("sample_index is required");
    const auto& v = request.at("sample_index");
    if (!v.is_number_integer() || v.get<long long>() < 0) throw BadRequest("sample_index must be a nonnegative integer");
    const auto row = v.get<std::size_t>();
    if (row >= run_.data.concepts.rows) throw NotFound("sample_index " + std::to_string(row) + " out of range");
    return row;
}

Clamps ApiService::parse_clamps(const json& clamps, std::size_t rows) const {
    Clamps out(model_->node_count());
    if (clamps.is_null()) return out;
    if (!clamps.is_object()) throw BadRequest("clamps must be an object {node: category}");
    for (const auto& [name, value] : clamps.items()) {
        const auto node = model_->find_node(name);
        if (!node) throw UnknownNode("cannot clamp unknown node '" + name + "'");
        if (!value.is_number_integer()) throw BadRequest("clamp for '" + name + "' must be an integer category");
        const auto cat = value.get<long long>();
        if (cat < 0 || static_cast<std::size_t>(cat) >= model_->cardinalities()[*node]) {
            throw BadRequest("category " + std::to_string(cat) + " out of range for '" + name + "'");
        }
        out[*node].assign(rows, static_cast<int>(cat));
    }
    return out;
}

json ApiService::describe(const std::vector<Tensor>& probs, std::size_t r, const Clamps& clamps,
                          std::optional<std::size_t> row) const {
    json probabilities = json::object();
    json predicted = json::object();
    json clamped = json::array();
    for (std::size_t i = 0; i < model_->node_count(); ++i) {
        const auto& name = model_->node_names()[i];
        const auto p = probs[i].row(r);
        probabilities[name] = std::vector<double>(p.begin(), p.end());
        predicted[name] = argmax(p);
        if (!clamps.empty() && !clamps[i].empty() && clamps[i][r] >= 0) clamped.push_back(name);
    }
    json out{{"probabilities", probabilities}, {"predicted", predicted}, {"clamped", clamped}};
    if (row) {
        out["sample_index"] = *row;
        json truth = json::object();
        for (std::size_t c = 0; c < run_.data.concepts.cols(); ++c) {
            truth[run_.data.concepts.names[c]] = run_.data.concepts.at(*row, c);
        }
        out["ground_truth"] = truth;
    }
    return out;
}

ApiResponse ApiService::graph() const {
    return guarded([&] {
        const auto& g = model_->graph();
        const auto depth = depth_levels(g);
        const auto cols = model_->columns_in(run_.data.concepts);
        json nodes = json::array();
        for (std::size_t i = 0; i < model_->node_count(); ++i) {
            nodes.push_back({{"name", model_->node_names()[i]},
                             {"index", i},
                             {"depth", depth[i]},
                             {"cardinality", model_->cardinalities()[i]},
                             {"states", run_.states[cols[i]]},
                             {"is_task", i == model_->task()}});
        }
        json edges = json::array();
        for (const auto& [u, v] : g.directed_edges()) {
            edges.push_back({{"parent", g.name(u)}, {"child", g.name(v)}});
        }
        json dropped = json::array();
        for (const auto& name : run_.data.concepts.names) {
            if (!model_->find_node(name)) dropped.push_back(name);
        }
        return ApiResponse{200, {{"model_kind", model_->kind()},
                                 {"task", model_->node_names()[model_->task()]},
                                 {"nodes", nodes},
                                 {"edges", edges},
                                 {"dropped", dropped}}};
    });
}

ApiResponse ApiService::samples(const std::string& split, std::size_t offset, std::size_t limit) const {
    return guarded([&] {
        const std::vector<std::size_t>* rows = nullptr;
        if (split == "train") rows = &run_.data.train;
        if (split == "val") rows = &run_.data.val;
        if (split == "test") rows = &run_.data.test;
        if (rows == nullptr) throw BadRequest("split must be train, val or test");
        if (limit == 0 || limit > 500) throw BadRequest("limit must lie in 1..500");
        const std::size_t begin = std::min(offset, rows->size());
        const std::size_t end = std::min(rows->size(), begin + limit);
        const std::vector<std::size_t> page(rows->begin() + static_cast<std::ptrdiff_t>(begin),
                                            rows->begin() + static_cast<std::ptrdiff_t>(end));
        json items = json::array();
        if (!page.empty()) {
            const auto probs = model_->predict(run_.data.features.select_rows(page));
            for (std::size_t k = 0; k < page.size(); ++k) {
                auto d = describe(probs, k, {}, page[k]);
                items.push_back({{"sample_index", page[k]},
                                 {"concepts", d["ground_truth"]},
                                 {"predictions", d["probabilities"]},
                                 {"predicted", d["predicted"]}});
            }
        }
        return ApiResponse{200, {{"split", split}, {"total", rows->size()}, {"offset", begin}, {"samples", items}}};
    });
}

ApiResponse ApiService::predict(const json& request) const {
    return guarded([&] {
        if (request.is_object() && request.contains("raw_features")) {
            if (!spec_) throw BadRequest("run has no feature spec; use sample_index");
            const auto raw = request.at("raw_features").get<std::vector<double>>();
            if (raw.size() != model_->feature_dim()) {
                throw BadRequest("raw_features must have " + std::to_string(model_->feature_dim()) + " values");
            }
            Tensor x(1, raw.size());
            x.data = raw;
            const auto probs = model_->predict(standardize(*spec_, x));
            return ApiResponse{200, describe(probs, 0, {}, std::nullopt)};
        }
        const std::size_t row = sample_row(request);
        const auto probs = model_->predict(run_.data.features.select_rows(std::vector<std::size_t>{row}));
        return ApiResponse{200, describe(probs, 0, {}, row)};
    });
}

ApiResponse ApiService::intervene(const json& request) const {
    return guarded([&] {
        const std::size_t row = sample_row(request);
        if (!request.contains("clamps")) throw BadRequest("clamps is required");
        const Clamps clamps = parse_clamps(request.at("clamps"), 1);
        const auto probs = model_->predict(run_.data.features.select_rows(std::vector<std::size_t>{row}), clamps);
        return ApiResponse{200, describe(probs, 0, clamps, row)};
    });
}

ApiResponse ApiService::explain(const json& request) const {
    return guarded([&] {
        const auto* c2 = dynamic_cast<const C2bmModel*>(model_.get());
        if (c2 == nullptr) throw BadRequest("explain needs a c2bm model, not " + model_->kind());
        const std::size_t row = sample_row(request);
        const Clamps clamps = parse_clamps(request.value("clamps", json()), 1);
        const auto ex = c2->explain(run_.data.features.select_rows(std::vector<std::size_t>{row}), clamps);
        std::vector<Tensor> probs;
        for (const auto& p : ex.probabilities) {
            Tensor t(1, p.size());
            t.data = p;
            probs.push_back(t);
        }
        json out = describe(probs, 0, clamps, row);
        json edges = json::array();
        for (std::size_t k = 0; k < ex.edges.size(); ++k) {
            const auto& e = ex.edges[k];
            json matrix = json::array();
            for (std::size_t r = 0; r < e.matrix.rows; ++r) {
                const auto m = e.matrix.row(r);
                matrix.push_back(std::vector<double>(m.begin(), m.end()));
            }
            edges.push_back({{"parent", model_->node_names()[e.parent]},
                             {"child", model_->node_names()[e.child]},
                             {"weights", matrix},
                             {"summary", ex.summaries[k] ? json(*ex.summaries[k]) : json()}});
        }
        out["edges"] = edges;
        return ApiResponse{200, out};
    });
}

ApiResponse ApiService::metrics(const std::string& clamps) const {
    return guarded([&] {
        json out{{"report", report_}};
        if (clamps.empty()) return ApiResponse{200, out};
        InterventionPlan plan;
        std::stringstream items(clamps);
        std::string item;
        while (std::getline(items, item, ',')) {
            if (item.empty()) continue;
            const auto colon = item.find(':');
            const std::string name = item.substr(0, colon);
            if (!model_->find_node(name)) throw UnknownNode("cannot clamp unknown node '" + name + "'");
            if (colon == std::string::npos) {
                plan.nodes.push_back(name);
                continue;
            }
            try {
                plan.values[name] = std::stoi(item.substr(colon + 1));
            } catch (const std::exception&) {
                throw BadRequest("bad category in clamp '" + item + "'");
            }
        }
        out["live"] = evaluate_with_interventions(*model_, run_.data, run_.data.test, {plan}).to_json();
        out["live"]["clamps"] = plan.to_json();
        return ApiResponse{200, out};
    });
}

// ---- HTTP ---------------------------------------------------------------------------

namespace {

void reply(httplib::Response& res, const ApiResponse& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
}

std::size_t query_size(const httplib::Request& req, const char* key, std::size_t fallback) {
    if (!req.has_param(key)) return fallback;
    const std::string v = req.get_param_value(key);
    if (v.empty() || !std::all_of(v.begin(), v.end(), [](char c) { return c >= '0' && c <= '9'; })) {
        throw BadRequest(std::string(key) + " must be a nonnegative integer");
    }
    return std::stoul(v);
}

json parse_body(const httplib::Request& req) {
    const auto j = json::parse(req.body, nullptr, false);
    if (j.is_discarded()) throw BadRequest("request body is not valid JSON");
    return j;
}

}  // namespace

void serve(const ApiService& service, const ServeOptions& options, const std::function<void(int)>& on_ready,
           const std::function<bool()>& stop) {
    httplib::Server server;
    server.Get("/api/v1/graph", [&](const httplib::Request&, httplib::Response& res) { reply(res, service.graph()); });
    server.Get("/api/v1/samples", [&](const httplib::Request& req, httplib::Response& res) {
        reply(res, guarded([&] {
                  const std::string split = req.has_param("split") ? req.get_param_value("split") : "test";
                  return service.samples(split, query_size(req, "offset", 0), query_size(req, "limit", 50));
              }));
    });
    server.Post("/api/v1/predict", [&](const httplib::Request& req, httplib::Response& res) {
        reply(res, guarded([&] { return service.predict(parse_body(req)); }));
    });
    server.Post("/api/v1/intervene", [&](const httplib::Request& req, httplib::Response& res) {
        reply(res, guarded([&] { return service.intervene(parse_body(req)); }));
    });
    server.Post("/api/v1/explain", [&](const httplib::Request& req, httplib::Response& res) {
        reply(res, guarded([&] { return service.explain(parse_body(req)); }));
    });
    server.Get("/api/v1/metrics", [&](const httplib::Request& req, httplib::Response& res) {
        reply(res, service.metrics(req.has_param("clamps") ? req.get_param_value("clamps") : ""));
    });
    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        std::string what = "internal error";
        try {
            std::rethrow_exception(ep);
        } catch (const std::exception& e) {
            what = e.what();
        } catch (...) {
        }
        reply(res, error_response(500, "internal", what));
    });
    if (!options.static_dir.empty() && !server.set_mount_point("/", options.static_dir)) {
        throw ConfigError("static directory " + options.static_dir + " does not exist");
    }

    // httplib also sets SO_REUSEPORT, which would let a second server share a
    // taken port silently
    server.set_socket_options([](socket_t sock) {
        int yes = 1;
        setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
    });
    int port = options.port;
    if (port == 0) {
        port = server.bind_to_any_port(options.host);
        if (port < 0) throw BindFailure("cannot bind " + options.host);
    } else if (!server.bind_to_port(options.host, port)) {
        throw BindFailure("cannot bind " + options.host + ":" + std::to_string(port));
    }
    std::thread worker([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    if (on_ready) on_ready(port);
    while (server.is_running()) {
        if (stop && stop()) {
            server.stop();
            break;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(200));
    }
    worker.join();
}

}  // namespace c2bm
