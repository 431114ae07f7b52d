#include "c2bm/orientation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <sstream>

#include <httplib.h>

#include "c2bm/errors.hpp"

namespace c2bm {

std::string to_string(Verdict v) {
    switch (v) {
        case Verdict::A: return "A";
        case Verdict::B: return "B";
        case Verdict::C: return "C";
    }
    return "C";
}

Verdict verdict_from_string(std::string_view s) {
    if (s == "A") return Verdict::A;
    if (s == "B") return Verdict::B;
    if (s == "C") return Verdict::C;
    throw MalformedResponse("unknown verdict '" + std::string(s) + "'");
}

const std::string kDefaultCausalPrompt =
    "You are an expert in causal inference and logical analysis. \n"
    "I will provide you with two concepts and you have to infer the causal relationship between them.\n"
    "**Concept 1:** {concept_1} - {concept_1_description}\n"
    "**Concept 2:** {concept_2} - {concept_2_description}\n"
    "\n"
    "Now, use your knowledge and, if available, the context provided, to determine \n"
    "which of the following options is the correct one:\n"
    "(A) changing {concept_1} to certain values result in a change in {concept_2};\n"
    "(B) changing {concept_2} to certain values result in a change in {concept_1};\n"
    "(C) there is no causal relationship or reciprocal influence between {concept_1} and {concept_2}.\n"
    "\n"
    "The following information are extracted from recent and reliable sources:\n"
    "{context}\n"
    "\n"
    "The answer has to be enclosed within <answer> tags (e.g. <answer>A</answer>).\n"
    "Analyze the situation step-by-step to ensure the final conclusion is accurate.\n";

std::string render_prompt(const std::string& tmpl, const EdgeQuery& q) {
    const std::pair<std::string_view, const std::string*> fields[] = {
        {"{concept_1_description}", &q.a.description},
        {"{concept_2_description}", &q.b.description},
        {"{concept_1}", &q.a.name},
        {"{concept_2}", &q.b.name},
        {"{context}", &q.context},
    };
    std::string out;
    out.reserve(tmpl.size() + 256);
    std::size_t i = 0;
    while (i < tmpl.size()) {
        bool replaced = false;
        if (tmpl[i] == '{') {
            for (const auto& [key, value] : fields) {
                if (tmpl.compare(i, key.size(), key) == 0) {
                    out += *value;
                    i += key.size();
                    replaced = true;
                    break;
                }
            }
        }
        if (!replaced) out += tmpl[i++];
    }
    return out;
}

std::optional<Verdict> parse_answer(std::string_view text) {
    static constexpr std::string_view open = "<answer>";
    static constexpr std::string_view close = "</answer>";
    std::optional<Verdict> last;
    std::size_t pos = 0;
    while ((pos = text.find(open, pos)) != std::string_view::npos) {
        pos += open.size();
        const std::size_t end = text.find(close, pos);
        if (end == std::string_view::npos) break;
        std::string_view body = text.substr(pos, end - pos);
        while (!body.empty() && std::isspace(static_cast<unsigned char>(body.front()))) body.remove_prefix(1);
        while (!body.empty() && std::isspace(static_cast<unsigned char>(body.back()))) body.remove_suffix(1);
        if (body.size() >= 3 && body.front() == '(' && body.back() == ')') body = body.substr(1, body.size() - 2);
        if (body.size() == 1) {
            const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(body[0])));
            if (c == 'A') last = Verdict::A;
            if (c == 'B') last = Verdict::B;
            if (c == 'C') last = Verdict::C;
        }
        pos = end + close.size();
    }
    return last;
}

// ---- stub ---------------------------------------------------------------------

namespace {

std::string pair_key(const std::string& a, const std::string& b) { return a + "|" + b; }

Verdict swapped(Verdict v) {
    if (v == Verdict::A) return Verdict::B;
    if (v == Verdict::B) return Verdict::A;
    return Verdict::C;
}

}  // namespace

StubOracle::StubOracle(std::map<std::string, Verdict> table, std::size_t votes)
    : table_(std::move(table)), votes_(votes) {
    if (votes_ < 1) throw ConfigError("oracle.votes must be >= 1");
}

StubOracle::StubOracle(const StubOracle& other)
    : table_(other.table_), votes_(other.votes_), lookups_(other.lookups_.load()) {}

StubOracle StubOracle::from_dag(const MixedGraph& dag, std::size_t votes) {
    std::map<std::string, Verdict> table;
    for (const auto& [u, v] : dag.directed_edges()) table[pair_key(dag.name(u), dag.name(v))] = Verdict::A;
    return StubOracle(std::move(table), votes);
}

StubOracle StubOracle::from_json(const nlohmann::json& j, std::size_t votes) {
    if (!j.is_object()) throw ConfigError("stub fixture must be a JSON object");
    std::map<std::string, Verdict> table;
    for (const auto& [key, value] : j.items()) {
        if (key.find('|') == std::string::npos) throw ConfigError("stub key '" + key + "' is not of the form a|b");
        if (!value.is_string()) throw ConfigError("stub verdict for '" + key + "' must be a string");
        try {
            table[key] = verdict_from_string(value.get<std::string>());
        } catch (const MalformedResponse&) {
            throw ConfigError("stub verdict for '" + key + "' must be A, B or C");
        }
    }
    return StubOracle(std::move(table), votes);
}

Verdict StubOracle::query(const EdgeQuery& q) const {
    ++lookups_;
    if (auto it = table_.find(pair_key(q.a.name, q.b.name)); it != table_.end()) return it->second;
    if (auto it = table_.find(pair_key(q.b.name, q.a.name)); it != table_.end()) return swapped(it->second);
    return Verdict::C;
}

// ---- http -------------------------------------------------------------------

HttpOracle::HttpOracle(HttpOracleConfig config) : config_(std::move(config)) {
    if (config_.votes < 1) throw ConfigError("oracle.votes must be >= 1");
    if (config_.max_in_flight < 1) throw ConfigError("oracle.max_in_flight must be >= 1");
    const auto& ep = config_.endpoint;
    const std::size_t scheme = ep.find("://");
    if (scheme == std::string::npos) throw ConfigError("oracle.endpoint must start with http:// or https://");
    const std::string proto = ep.substr(0, scheme);
    if (proto != "http" && proto != "https") throw ConfigError("unsupported oracle endpoint scheme '" + proto + "'");
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
    if (proto == "https") throw ConfigError("this build has no TLS support; use an http:// endpoint");
#endif
    const std::size_t slash = ep.find('/', scheme + 3);
    base_ = slash == std::string::npos ? ep : ep.substr(0, slash);
    path_ = slash == std::string::npos ? "/" : ep.substr(slash);
    if (base_.size() <= scheme + 3) throw ConfigError("oracle.endpoint has no host");
}

Verdict HttpOracle::query(const EdgeQuery& q) const {
    const nlohmann::json payload = {
        {"model", config_.model},
        {"messages", nlohmann::json::array({{{"role", "user"}, {"content", render_prompt(config_.prompt_template, q)}}})},
        {"temperature", config_.temperature},
    };
    const std::string body = payload.dump();
    httplib::Headers headers;
    if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

    std::string last_error;
    bool reached = false;
    for (int attempt = 0; attempt < 2; ++attempt) {
        httplib::Client cli(base_);
        const auto secs = static_cast<time_t>(config_.timeout_seconds);
        const auto usecs = static_cast<time_t>((config_.timeout_seconds - static_cast<double>(secs)) * 1e6);
        cli.set_connection_timeout(secs, usecs);
        cli.set_read_timeout(secs, usecs);
        cli.set_write_timeout(secs, usecs);
        const auto res = cli.Post(path_, headers, body, "application/json");
        if (!res) {
            last_error = "cannot reach oracle at " + config_.endpoint + ": " + httplib::to_string(res.error());
            continue;
        }
        reached = true;
        if (res->status < 200 || res->status >= 300) {
            last_error = "oracle returned HTTP " + std::to_string(res->status);
            continue;
        }
        std::string content = res->body;
        const auto parsed = nlohmann::json::parse(res->body, nullptr, false);
        if (!parsed.is_discarded() && parsed.is_object()) {
            const auto& choices = parsed.value("choices", nlohmann::json::array());
            if (choices.is_array() && !choices.empty() && choices[0].contains("message") &&
                choices[0]["message"].value("content", nlohmann::json()).is_string()) {
                content = choices[0]["message"]["content"].get<std::string>();
            }
        }
        if (const auto v = parse_answer(content)) return *v;
        last_error = "oracle response has no <answer> tag";
    }
    if (!reached) throw OracleUnreachable(last_error);
    throw MalformedResponse(last_error);
}

// ---- voting -------------------------------------------------------------------

Verdict tally(const std::vector<Verdict>& votes) {
    std::size_t counts[3] = {0, 0, 0};
    for (Verdict v : votes) ++counts[static_cast<int>(v)];
    const std::size_t top = std::max({counts[0], counts[1], counts[2]});
    if (top == 0) return Verdict::C;
    int winners = 0;
    int winner = 2;
    for (int k = 0; k < 3; ++k) {
        if (counts[k] == top) {
            ++winners;
            winner = k;
        }
    }
    return winners == 1 ? static_cast<Verdict>(winner) : Verdict::C;
}

Verdict majority_verdict(const OracleClient& client, const EdgeQuery& q) {
    const std::size_t total = client.votes();
    if (total < 1) throw ConfigError("oracle.votes must be >= 1");
    const std::size_t fan = std::max<std::size_t>(1, client.max_in_flight());
    std::vector<Verdict> votes;
    std::exception_ptr last_error;
    for (std::size_t start = 0; start < total; start += fan) {
        const std::size_t batch = std::min(fan, total - start);
        if (batch == 1) {
            try {
                votes.push_back(client.query(q));
            } catch (const Error&) {
                last_error = std::current_exception();
            }
            continue;
        }
        std::vector<std::future<Verdict>> pending;
        for (std::size_t k = 0; k < batch; ++k) {
            pending.push_back(std::async(std::launch::async, [&client, &q] { return client.query(q); }));
        }
        for (auto& f : pending) {
            try {
                votes.push_back(f.get());
            } catch (const Error&) {
                last_error = std::current_exception();
            }
        }
    }
    if (votes.empty()) std::rethrow_exception(last_error);
    return tally(votes);
}

// ---- settings -------------------------------------------------------------------

nlohmann::json OracleSettings::to_json() const {
    return {
        {"kind", kind},
        {"endpoint", endpoint},
        {"api_key_env", api_key_env},
        {"model", model},
        {"votes", votes},
        {"temperature", temperature},
        {"timeout_seconds", timeout_seconds},
        {"max_in_flight", max_in_flight},
        {"prompt_path", prompt_path},
        {"context_dir", context_dir},
        {"stub_path", stub_path},
        {"descriptions", descriptions},
    };
}

OracleSettings OracleSettings::from_json(const nlohmann::json& j) {
    OracleSettings s;
    try {
        s.kind = j.value("kind", s.kind);
        s.endpoint = j.value("endpoint", s.endpoint);
        s.api_key_env = j.value("api_key_env", s.api_key_env);
        s.model = j.value("model", s.model);
        s.votes = j.value("votes", s.votes);
        s.temperature = j.value("temperature", s.temperature);
        s.timeout_seconds = j.value("timeout_seconds", s.timeout_seconds);
        s.max_in_flight = j.value("max_in_flight", s.max_in_flight);
        s.prompt_path = j.value("prompt_path", s.prompt_path);
        s.context_dir = j.value("context_dir", s.context_dir);
        s.stub_path = j.value("stub_path", s.stub_path);
        if (j.contains("descriptions")) s.descriptions = j.at("descriptions").get<std::map<std::string, std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("oracle config: ") + e.what());
    }
    if (s.kind != "stub" && s.kind != "http") throw ConfigError("oracle.kind must be 'stub' or 'http'");
    if (s.votes < 1) throw ConfigError("oracle.votes must be >= 1");
    if (s.max_in_flight < 1) throw ConfigError("oracle.max_in_flight must be >= 1");
    if (!(s.timeout_seconds > 0.0)) throw ConfigError("oracle.timeout_seconds must be positive");
    return s;
}

namespace {

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

std::unique_ptr<OracleClient> make_oracle(const OracleSettings& settings, const MixedGraph* truth) {
    if (settings.kind == "stub") {
        if (!settings.stub_path.empty()) {
            const auto j = nlohmann::json::parse(read_text(settings.stub_path), nullptr, false);
            if (j.is_discarded()) throw ConfigError("stub fixture " + settings.stub_path + " is not valid JSON");
            return std::make_unique<StubOracle>(StubOracle::from_json(j, settings.votes));
        }
        if (truth == nullptr) throw ConfigError("stub oracle needs oracle.stub_path or a ground-truth graph");
        return std::make_unique<StubOracle>(StubOracle::from_dag(*truth, settings.votes));
    }
    if (settings.kind != "http") throw ConfigError("oracle.kind must be 'stub' or 'http'");
    HttpOracleConfig cfg;
    cfg.endpoint = settings.endpoint;
    cfg.model = settings.model;
    cfg.votes = settings.votes;
    cfg.temperature = settings.temperature;
    cfg.timeout_seconds = settings.timeout_seconds;
    cfg.max_in_flight = settings.max_in_flight;
    if (!settings.api_key_env.empty()) {
        const char* key = std::getenv(settings.api_key_env.c_str());
        if (key == nullptr) throw ConfigError("environment variable " + settings.api_key_env + " is not set");
        cfg.api_key = key;
    }
    if (!settings.prompt_path.empty()) cfg.prompt_template = read_text(settings.prompt_path);
    return std::make_unique<HttpOracle>(std::move(cfg));
}

EdgeQuery make_query(const OracleSettings& settings, const std::string& a, const std::string& b) {
    auto info = [&](const std::string& name) {
        const auto it = settings.descriptions.find(name);
        return ConceptInfo{name, it == settings.descriptions.end() ? name : it->second};
    };
    EdgeQuery q{info(a), info(b), ""};
    if (!settings.context_dir.empty()) {
        const std::filesystem::path dir(settings.context_dir);
        for (const auto& file : {dir / (a + "__" + b + ".txt"), dir / (b + "__" + a + ".txt")}) {
            if (std::filesystem::exists(file)) {
                q.context = read_text(file);
                break;
            }
        }
    }
    return q;
}

// ---- refinement ---------------------------------------------------------------

std::vector<Edge> undirected_edge_order(const MixedGraph& g, const BdeuScorer* scorer) {
    auto edges = g.undirected_edges();
    if (scorer == nullptr) return edges;
    if (scorer->node_count() != g.size()) throw NodeCountMismatch("graph and dataset differ in node count");
    std::vector<std::pair<double, Edge>> keyed;
    for (const auto& e : edges) {
        const double gain = scorer->local_score(e.second, std::vector<NodeIndex>{e.first}) -
                            scorer->local_score(e.second, std::vector<NodeIndex>{});
        keyed.push_back({std::abs(gain), e});
    }
    std::stable_sort(keyed.begin(), keyed.end(), [](const auto& l, const auto& r) {
        if (l.first != r.first) return l.first > r.first;
        return l.second < r.second;
    });
    for (std::size_t k = 0; k < edges.size(); ++k) edges[k] = keyed[k].second;
    return edges;
}

RefineResult refine_cpdag(const MixedGraph& g, const OracleClient& client, const BdeuScorer* scorer,
                          const OracleSettings& settings) {
    if (!directed_part_acyclic(g)) throw NotACpdag("directed part of the input graph is cyclic");
    RefineResult res{g, {}};
    MixedGraph& cur = res.dag;

    // A closure that fails leaves the graph as it was, which is still acyclic.
    auto close = [](MixedGraph& graph) {
        try {
            graph = apply_meek_rules(graph);
        } catch (const InconsistentPdag&) {
        }
    };

    for (const auto& [u, v] : undirected_edge_order(g, scorer)) {
        const std::string& a = g.name(u);
        const std::string& b = g.name(v);
        const Verdict verdict = majority_verdict(client, make_query(settings, a, b));
        if (verdict == Verdict::C) {
            const bool was_undirected = cur.has_undirected(u, v);
            cur.remove_edge(u, v);
            if (was_undirected) close(cur);
            res.decisions.push_back({a, b, verdict, "dropped"});
            continue;
        }
        const NodeIndex from = verdict == Verdict::A ? u : v;
        const NodeIndex to = verdict == Verdict::A ? v : u;
        if (cur.has_directed(from, to)) {
            res.decisions.push_back({a, b, verdict, "confirmed"});
            continue;
        }
        cur.remove_edge(u, v);
        if (has_directed_path(cur, to, from)) {
            close(cur);
            res.decisions.push_back({a, b, verdict, "cycle"});
            continue;
        }
        cur.add_directed(from, to);
        close(cur);
        res.decisions.push_back({a, b, verdict, "oriented"});
    }
    return res;
}

}  // namespace c2bm
