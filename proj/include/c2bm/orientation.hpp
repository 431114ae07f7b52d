#pragma once

#include <atomic>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "c2bm/discovery.hpp"
#include "c2bm/graph.hpp"

namespace c2bm {

/// A: concept_1 -> concept_2, B: concept_2 -> concept_1, C: no relation.
enum class Verdict { A, B, C };

std::string to_string(Verdict v);
/// Accepts "A", "B" or "C". Throws MalformedResponse.
Verdict verdict_from_string(std::string_view s);

struct ConceptInfo {
    std::string name;
    std::string description;
};

struct EdgeQuery {
    ConceptInfo a;
    ConceptInfo b;
    std::string context;
};

/// Causal prompt used when no template file is configured.
extern const std::string kDefaultCausalPrompt;

/// Substitutes {concept_1}, {concept_1_description}, {concept_2},
/// {concept_2_description} and {context}.
std::string render_prompt(const std::string& tmpl, const EdgeQuery& q);

/// Verdict in the last <answer>X</answer> tag of `text`, if any.
std::optional<Verdict> parse_answer(std::string_view text);

class OracleClient {
public:
    virtual ~OracleClient() = default;
    /// One vote. Throws OracleUnreachable or MalformedResponse.
    virtual Verdict query(const EdgeQuery& q) const = 0;
    virtual std::size_t votes() const = 0;
    /// Votes issued concurrently per edge.
    virtual std::size_t max_in_flight() const { return 1; }
};

/// Table-driven oracle keyed by "a|b". A lookup for (b, a) falls back to
/// the (a, b) entry with A and B swapped; unknown pairs answer C.
class StubOracle final : public OracleClient {
public:
    explicit StubOracle(std::map<std::string, Verdict> table, std::size_t votes = 1);
    StubOracle(const StubOracle& other);
    /// Verdicts read off a DAG: A/B along its directed edges, C elsewhere.
    static StubOracle from_dag(const MixedGraph& dag, std::size_t votes = 1);
    /// JSON object {"a|b": "A" | "B" | "C", ...}. Throws ConfigError.
    static StubOracle from_json(const nlohmann::json& j, std::size_t votes = 1);

    Verdict query(const EdgeQuery& q) const override;
    std::size_t votes() const override { return votes_; }
    std::size_t lookups() const { return lookups_; }

private:
    std::map<std::string, Verdict> table_;
    std::size_t votes_;
    mutable std::atomic<std::size_t> lookups_ = 0;
};

struct HttpOracleConfig {
    std::string endpoint;  // e.g. http://host:port/v1/chat/completions
    std::string api_key;   // sent as a bearer token when nonempty
    std::string model;
    std::string prompt_template = kDefaultCausalPrompt;
    double temperature = 0.0;
    double timeout_seconds = 30.0;
    std::size_t votes = 10;
    std::size_t max_in_flight = 4;
};

/// Chat-completion style client: POSTs {"model", "messages", "temperature"}
/// and reads choices[0].message.content (or the raw body). A call that fails
/// to connect or lacks an answer tag is retried once.
class HttpOracle final : public OracleClient {
public:
    /// Throws ConfigError on a malformed endpoint.
    explicit HttpOracle(HttpOracleConfig config);

    Verdict query(const EdgeQuery& q) const override;
    std::size_t votes() const override { return config_.votes; }
    std::size_t max_in_flight() const override { return config_.max_in_flight; }

private:
    HttpOracleConfig config_;
    std::string base_;
    std::string path_;
};

/// Mode of the votes; any tie for the top count resolves to C.
Verdict tally(const std::vector<Verdict>& votes);

/// Issues client.votes() queries (up to max_in_flight at once) and returns
/// the tally. Failed votes are skipped; if every vote fails the last error
/// is rethrown.
Verdict majority_verdict(const OracleClient& client, const EdgeQuery& q);

struct OracleSettings {
    std::string kind = "stub";  // "stub" | "http"
    std::string endpoint;
    std::string api_key_env;
    std::string model;
    std::size_t votes = 10;
    double temperature = 0.0;
    double timeout_seconds = 30.0;
    std::size_t max_in_flight = 4;
    std::string prompt_path;
    std::string context_dir;
    std::string stub_path;  // stub fixture; empty = verdicts from the true graph
    std::map<std::string, std::string> descriptions;

    nlohmann::json to_json() const;
    static OracleSettings from_json(const nlohmann::json& j);
};

/// Builds the configured client. A stub without a fixture reads its verdicts
/// from `truth` (throws ConfigError when neither is available).
std::unique_ptr<OracleClient> make_oracle(const OracleSettings& settings, const MixedGraph* truth);

/// Query for a pair, with descriptions and optional context file
/// "<context_dir>/<a>__<b>.txt" (either order).
EdgeQuery make_query(const OracleSettings& settings, const std::string& a, const std::string& b);

struct EdgeDecision {
    std::string a;
    std::string b;
    Verdict verdict = Verdict::C;
    std::string outcome;  // "oriented", "confirmed", "dropped", "cycle"
};

struct RefineResult {
    MixedGraph dag;
    std::vector<EdgeDecision> decisions;
};

/// Undirected edges of g, strongest first: descending |BDeu gain of a as a
/// parent of b|, ties by (a, b). Lexicographic without a scorer.
std::vector<Edge> undirected_edge_order(const MixedGraph& g, const BdeuScorer* scorer);

/// Resolves every undirected edge of a CPDAG with one majority verdict each:
/// A/B orient (then Meek rules run), C deletes, an orientation that would
/// close a cycle deletes instead. An edge Meek already oriented is kept when
/// the verdict agrees ("confirmed") and otherwise handled like a fresh edge.
/// Directed input edges are kept as they are. The result is a DAG. Throws
/// NotACpdag when the input's directed part is cyclic.
RefineResult refine_cpdag(const MixedGraph& g, const OracleClient& client, const BdeuScorer* scorer = nullptr,
                          const OracleSettings& settings = {});

}  // namespace c2bm
