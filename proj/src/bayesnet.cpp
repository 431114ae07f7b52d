#include "c2bm/bayesnet.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <optional>
#include <sstream>

#include "c2bm/errors.hpp"
#include "c2bm/io.hpp"
#include "c2bm/rng.hpp"

namespace c2bm {

// ---- DiscreteBayesNet ---------------------------------------------------------

namespace {

std::vector<std::string> variable_names(const std::vector<Variable>& vars) {
    std::vector<std::string> names;
    names.reserve(vars.size());
    for (const auto& v : vars) names.push_back(v.name);
    return names;
}

}  // namespace

DiscreteBayesNet::DiscreteBayesNet(std::vector<Variable> variables,
                                   std::vector<std::vector<NodeIndex>> parents,
                                   std::vector<std::vector<double>> cpts)
    : variables_(std::move(variables)),
      parents_(std::move(parents)),
      cpts_(std::move(cpts)),
      graph_(variable_names(variables_)) {
    const std::size_t n = variables_.size();
    if (parents_.size() != n || cpts_.size() != n) {
        throw InvalidCpt("parent lists and CPTs must cover every variable");
    }
    for (NodeIndex i = 0; i < n; ++i) {
        if (variables_[i].states.size() < 2) {
            throw InvalidCpt("variable '" + variables_[i].name + "' needs at least 2 states");
        }
        std::size_t rows = 1;
        for (NodeIndex p : parents_[i]) {
            if (p >= n || p == i) throw InvalidCpt("bad parent for '" + variables_[i].name + "'");
            if (graph_.adjacent(p, i)) {
                throw InvalidCpt("duplicate parent for '" + variables_[i].name + "'");
            }
            graph_.add_directed(p, i);
            rows *= variables_[p].states.size();
        }
        const std::size_t card = variables_[i].states.size();
        if (cpts_[i].size() != rows * card) {
            throw InvalidCpt("CPT of '" + variables_[i].name + "' has " +
                             std::to_string(cpts_[i].size()) + " entries, expected " +
                             std::to_string(rows * card));
        }
        for (std::size_t r = 0; r < rows; ++r) {
            double sum = 0.0;
            for (std::size_t k = 0; k < card; ++k) {
                const double p = cpts_[i][r * card + k];
                if (!(p >= 0.0) || !std::isfinite(p)) {
                    throw InvalidCpt("CPT of '" + variables_[i].name + "' has an invalid entry");
                }
                sum += p;
            }
            if (std::abs(sum - 1.0) > kCptRowTolerance) {
                throw InvalidCpt("CPT row " + std::to_string(r) + " of '" + variables_[i].name +
                                 "' sums to " + std::to_string(sum));
            }
            for (std::size_t k = 0; k < card; ++k) cpts_[i][r * card + k] /= sum;
        }
    }
    order_ = topological_order(graph_);
}

std::vector<std::size_t> DiscreteBayesNet::cardinalities() const {
    std::vector<std::size_t> out;
    out.reserve(size());
    for (const auto& v : variables_) out.push_back(v.states.size());
    return out;
}

std::size_t DiscreteBayesNet::row_index(NodeIndex i, std::span<const int> assignment) const {
    std::size_t r = 0;
    for (NodeIndex p : parents_[i]) {
        r = r * variables_[p].states.size() + static_cast<std::size_t>(assignment[p]);
    }
    return r * variables_[i].states.size();
}

std::span<const double> DiscreteBayesNet::row(NodeIndex i, std::span<const int> assignment) const {
    return {cpts_[i].data() + row_index(i, assignment), variables_[i].states.size()};
}

double DiscreteBayesNet::joint(std::span<const int> assignment) const {
    double p = 1.0;
    for (NodeIndex i = 0; i < size(); ++i) {
        p *= row(i, assignment)[static_cast<std::size_t>(assignment[i])];
    }
    return p;
}

// ---- BIF parsing --------------------------------------------------------------

namespace {

struct Token {
    std::string text;
    std::size_t line = 0;
    std::size_t column = 0;
    bool punct = false;
};

bool is_punct(char c) {
    return c == '{' || c == '}' || c == '(' || c == ')' || c == '[' || c == ']' || c == ';' ||
           c == ',' || c == '|';
}

std::vector<Token> tokenize(std::string_view text) {
    std::vector<Token> out;
    std::size_t line = 1;
    std::size_t col = 1;
    std::size_t i = 0;
    auto advance = [&]() {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
        ++i;
    };
    while (i < text.size()) {
        const char c = text[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            advance();
        } else if (c == '/' && i + 1 < text.size() && text[i + 1] == '/') {
            while (i < text.size() && text[i] != '\n') advance();
        } else if (c == '/' && i + 1 < text.size() && text[i + 1] == '*') {
            const std::size_t l0 = line;
            const std::size_t c0 = col;
            advance();
            advance();
            while (i + 1 < text.size() && !(text[i] == '*' && text[i + 1] == '/')) advance();
            if (i + 1 >= text.size()) throw ParseError("unterminated comment", l0, c0);
            advance();
            advance();
        } else if (is_punct(c)) {
            out.push_back({std::string(1, c), line, col, true});
            advance();
        } else {
            Token t{{}, line, col, false};
            while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i])) &&
                   !is_punct(text[i])) {
                t.text.push_back(text[i]);
                advance();
            }
            out.push_back(std::move(t));
        }
    }
    return out;
}

class BifParser {
public:
    explicit BifParser(std::string_view text) : tokens_(tokenize(text)) {
        if (!text.empty()) {
            std::size_t line = 1;
            std::size_t col = 1;
            for (char c : text) {
                if (c == '\n') {
                    ++line;
                    col = 1;
                } else {
                    ++col;
                }
            }
            end_line_ = line;
            end_col_ = col;
        }
    }

    DiscreteBayesNet parse() {
        while (!at_end()) {
            const Token& t = peek();
            if (t.text == "network") {
                parse_network_block();
            } else if (t.text == "variable") {
                parse_variable();
            } else if (t.text == "probability") {
                parse_probability();
            } else {
                fail("expected 'network', 'variable' or 'probability', found '" + t.text + "'", t);
            }
        }
        if (variables_.empty()) fail_at_end("network declares no variables");

        const std::size_t n = variables_.size();
        std::vector<std::vector<NodeIndex>> parents(n);
        std::vector<std::vector<double>> cpts(n);
        for (NodeIndex i = 0; i < n; ++i) {
            if (!tables_[i]) {
                throw ParseError("no probability block for '" + variables_[i].name + "'",
                                 decl_pos_[i].first, decl_pos_[i].second);
            }
            parents[i] = tables_[i]->parents;
            cpts[i] = tables_[i]->values;
        }
        return DiscreteBayesNet(std::move(variables_), std::move(parents), std::move(cpts));
    }

private:
    struct Table {
        std::vector<NodeIndex> parents;
        std::vector<double> values;
    };

    bool at_end() const { return pos_ >= tokens_.size(); }

    const Token& peek() {
        if (at_end()) fail_at_end("unexpected end of input");
        return tokens_[pos_];
    }

    const Token& next() {
        const Token& t = peek();
        ++pos_;
        return t;
    }

    [[noreturn]] void fail(const std::string& msg, const Token& t) const {
        throw ParseError(msg, t.line, t.column);
    }

    [[noreturn]] void fail_at_end(const std::string& msg) const {
        throw ParseError(msg, end_line_, end_col_);
    }

    const Token& expect(const std::string& text) {
        const Token& t = next();
        if (t.text != text) fail("expected '" + text + "', found '" + t.text + "'", t);
        return t;
    }

    const Token& expect_word() {
        const Token& t = next();
        if (t.punct) fail("expected a name, found '" + t.text + "'", t);
        return t;
    }

    double expect_number() {
        const Token& t = next();
        double v = 0.0;
        const char* first = t.text.data();
        const char* last = first + t.text.size();
        auto [ptr, ec] = std::from_chars(first, last, v);
        if (t.punct || ec != std::errc() || ptr != last) {
            fail("expected a probability, found '" + t.text + "'", t);
        }
        return v;
    }

    // Skips a balanced { ... } block, including nested ones.
    void skip_block() {
        expect("{");
        int depth = 1;
        while (depth > 0) {
            const Token& t = next();
            if (t.text == "{") ++depth;
            if (t.text == "}") --depth;
        }
    }

    void skip_statement() {
        while (next().text != ";") {
        }
    }

    void parse_network_block() {
        expect("network");
        while (peek().text != "{") next();
        skip_block();
    }

    NodeIndex lookup(const Token& t) const {
        auto it = index_.find(t.text);
        if (it == index_.end()) fail("unknown variable '" + t.text + "'", t);
        return it->second;
    }

    void parse_variable() {
        expect("variable");
        const Token& name = expect_word();
        if (index_.count(name.text)) fail("variable '" + name.text + "' declared twice", name);
        expect("{");
        Variable var{name.text, {}};
        bool typed = false;
        while (peek().text != "}") {
            const Token& key = next();
            if (key.text == "type") {
                const Token& kind = expect_word();
                if (kind.text != "discrete") fail("only discrete variables are supported", kind);
                expect("[");
                const Token& count_tok = expect_word();
                std::size_t count = 0;
                auto [ptr, ec] = std::from_chars(count_tok.text.data(),
                                                 count_tok.text.data() + count_tok.text.size(), count);
                if (ec != std::errc() || ptr != count_tok.text.data() + count_tok.text.size()) {
                    fail("expected a state count", count_tok);
                }
                expect("]");
                expect("{");
                while (true) {
                    var.states.push_back(expect_word().text);
                    const Token& sep = next();
                    if (sep.text == "}") break;
                    if (sep.text != ",") fail("expected ',' or '}' in state list", sep);
                }
                if (var.states.size() != count) {
                    fail("declared " + std::to_string(count) + " states but listed " +
                             std::to_string(var.states.size()),
                         count_tok);
                }
                expect(";");
                typed = true;
            } else if (key.text == "property") {
                skip_statement();
            } else {
                fail("unexpected '" + key.text + "' in variable block", key);
            }
        }
        expect("}");
        if (!typed) fail("variable '" + name.text + "' has no type", name);
        index_[var.name] = variables_.size();
        decl_pos_.emplace_back(name.line, name.column);
        variables_.push_back(std::move(var));
        tables_.emplace_back();
    }

    std::size_t state_index(NodeIndex var, const Token& t) const {
        const auto& states = variables_[var].states;
        auto it = std::find(states.begin(), states.end(), t.text);
        if (it == states.end()) {
            fail("'" + t.text + "' is not a state of '" + variables_[var].name + "'", t);
        }
        return static_cast<std::size_t>(it - states.begin());
    }

    std::vector<double> read_numbers(std::size_t count) {
        std::vector<double> values;
        while (true) {
            values.push_back(expect_number());
            const Token& sep = next();
            if (sep.text == ";") break;
            if (sep.text != ",") fail("expected ',' or ';' after a probability", sep);
        }
        if (values.size() != count) {
            const Token& prev = tokens_[pos_ - 1];
            fail("expected " + std::to_string(count) + " probabilities, found " +
                     std::to_string(values.size()),
                 prev);
        }
        return values;
    }

    void parse_probability() {
        expect("probability");
        expect("(");
        const Token& child_tok = expect_word();
        const NodeIndex child = lookup(child_tok);
        if (tables_[child]) fail("second probability block for '" + child_tok.text + "'", child_tok);
        Table table;
        if (peek().text == "|") {
            next();
            while (true) {
                table.parents.push_back(lookup(expect_word()));
                const Token& sep = next();
                if (sep.text == ")") break;
                if (sep.text != ",") fail("expected ',' or ')' in parent list", sep);
            }
        } else {
            expect(")");
        }

        const std::size_t card = variables_[child].states.size();
        std::size_t rows = 1;
        for (NodeIndex p : table.parents) rows *= variables_[p].states.size();
        table.values.assign(rows * card, 0.0);
        std::vector<bool> filled(rows, false);
        std::optional<std::vector<double>> fallback;

        expect("{");
        while (peek().text != "}") {
            const Token& head = peek();
            if (head.text == "table") {
                next();
                table.values = read_numbers(rows * card);
                if (!table.parents.empty()) {
                    // BIF tables list the child slowest; transpose to row layout.
                    std::vector<double> rowwise(rows * card);
                    for (std::size_t k = 0; k < card; ++k) {
                        for (std::size_t r = 0; r < rows; ++r) {
                            rowwise[r * card + k] = table.values[k * rows + r];
                        }
                    }
                    table.values = std::move(rowwise);
                }
                std::fill(filled.begin(), filled.end(), true);
            } else if (head.text == "default") {
                next();
                fallback = read_numbers(card);
            } else if (head.text == "property") {
                next();
                skip_statement();
            } else if (head.text == "(") {
                next();
                std::size_t r = 0;
                for (std::size_t k = 0; k < table.parents.size(); ++k) {
                    const NodeIndex p = table.parents[k];
                    r = r * variables_[p].states.size() + state_index(p, expect_word());
                    const Token& sep = next();
                    const bool last = k + 1 == table.parents.size();
                    if (sep.text != (last ? ")" : ",")) {
                        fail(std::string("expected '") + (last ? ")" : ",") + "'", sep);
                    }
                }
                if (table.parents.empty()) expect(")");
                const auto values = read_numbers(card);
                std::copy(values.begin(), values.end(), table.values.begin() + r * card);
                filled[r] = true;
            } else {
                fail("unexpected '" + head.text + "' in probability block", head);
            }
        }
        const Token& close = expect("}");
        for (std::size_t r = 0; r < rows; ++r) {
            if (filled[r]) continue;
            if (!fallback) fail("probability block for '" + child_tok.text + "' misses rows", close);
            std::copy(fallback->begin(), fallback->end(), table.values.begin() + r * card);
        }
        tables_[child] = std::move(table);
    }

    std::vector<Token> tokens_;
    std::size_t pos_ = 0;
    std::size_t end_line_ = 1;
    std::size_t end_col_ = 1;
    std::vector<Variable> variables_;
    std::vector<std::pair<std::size_t, std::size_t>> decl_pos_;
    std::vector<std::optional<Table>> tables_;
    std::map<std::string, NodeIndex> index_;
};

}  // namespace

DiscreteBayesNet parse_network(std::string_view text) { return BifParser(text).parse(); }

DiscreteBayesNet load_network(const std::filesystem::path& path) {
    return parse_network(read_text_file(path));
}

// ---- sampling -----------------------------------------------------------------

ConceptTable ConceptTable::select_rows(std::span<const std::size_t> picked) const {
    ConceptTable out{names, cardinalities, picked.size(), {}};
    out.values.reserve(picked.size() * cols());
    for (std::size_t r : picked) {
        const auto src = row(r);
        out.values.insert(out.values.end(), src.begin(), src.end());
    }
    return out;
}

ConceptTable ConceptTable::select_cols(std::span<const std::size_t> picked) const {
    ConceptTable out;
    out.rows = rows;
    for (std::size_t c : picked) {
        out.names.push_back(names.at(c));
        out.cardinalities.push_back(cardinalities.at(c));
    }
    out.values.reserve(rows * picked.size());
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c : picked) out.values.push_back(at(r, c));
    }
    return out;
}

ConceptTable ancestral_sample(const DiscreteBayesNet& net, std::size_t n, std::uint64_t seed,
                              const std::map<NodeIndex, int>& clamps) {
    if (n == 0) throw Error("sample count must be positive");
    std::vector<int> clamp_of(net.size(), -1);
    for (auto [v, k] : clamps) {
        if (v >= net.size()) throw UnknownNode("clamp on unknown node");
        if (k < 0 || static_cast<std::size_t>(k) >= net.cardinality(v)) {
            throw Error("clamp value out of range for '" + net.variable(v).name + "'");
        }
        clamp_of[v] = k;
    }
    ConceptTable table{net.names(), net.cardinalities(), n, std::vector<int>(n * net.size(), 0)};
    const auto order = topological_order(net.graph());
    Rng rng(seed);
    for (std::size_t s = 0; s < n; ++s) {
        std::span<int> sample(table.values.data() + s * net.size(), net.size());
        for (NodeIndex v : order) {
            sample[v] = clamp_of[v] >= 0 ? clamp_of[v]
                                         : static_cast<int>(rng.categorical(net.row(v, sample)));
        }
    }
    return table;
}

SplitIndices split_dataset(std::size_t n, std::array<double, 3> ratios, std::uint64_t seed) {
    double total = 0.0;
    for (double r : ratios) {
        if (!(r > 0.0) || !std::isfinite(r)) throw InvalidRatios("split ratios must be positive");
        total += r;
    }
    if (std::abs(total - 1.0) > 1e-9) throw InvalidRatios("split ratios must sum to 1");

    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng = Rng::derive(seed, 0x5b1e);
    rng.shuffle(std::span<std::size_t>(idx));

    // small epsilon so that e.g. 10 * 0.1 lands on 1 despite rounding
    auto floor_size = [&](double r) {
        return static_cast<std::size_t>(std::floor(static_cast<double>(n) * r + 1e-9));
    };
    const std::size_t n_val = floor_size(ratios[1]);
    const std::size_t n_test = floor_size(ratios[2]);
    const std::size_t n_train = n - n_val - n_test;

    SplitIndices out;
    out.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.val.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train),
                   idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    out.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end());
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.val.begin(), out.val.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

// ---- CSV ------------------------------------------------------------------------

void write_concepts_csv(const std::filesystem::path& path, const ConceptTable& table) {
    std::string out;
    for (std::size_t c = 0; c < table.cols(); ++c) {
        if (c) out += ',';
        out += table.names[c];
    }
    out += '\n';
    for (std::size_t r = 0; r < table.rows; ++r) {
        for (std::size_t c = 0; c < table.cols(); ++c) {
            if (c) out += ',';
            out += std::to_string(table.at(r, c));
        }
        out += '\n';
    }
    write_file_atomic(path, out);
}

ConceptTable read_concepts_csv(const std::filesystem::path& path,
                               const std::vector<std::size_t>& cardinalities) {
    std::istringstream in(read_text_file(path));
    std::string line;
    ConceptTable table;
    if (!std::getline(in, line)) throw EmptyDataset(path.string() + " is empty");
    {
        std::istringstream header(line);
        std::string name;
        while (std::getline(header, name, ',')) {
            if (!name.empty() && name.back() == '\r') name.pop_back();
            table.names.push_back(name);
        }
    }
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        std::size_t cols = 0;
        const char* p = line.data();
        const char* end = p + line.size();
        while (p < end && *p != '\r') {
            int v = 0;
            auto [ptr, ec] = std::from_chars(p, end, v);
            if (ec != std::errc() || v < 0) {
                throw ParseError("bad category value", line_no, static_cast<std::size_t>(p - line.data()) + 1);
            }
            table.values.push_back(v);
            ++cols;
            p = ptr;
            if (p < end && *p == ',') ++p;
        }
        if (cols != table.names.size()) {
            throw ParseError("expected " + std::to_string(table.names.size()) + " columns", line_no, 1);
        }
        ++table.rows;
    }
    if (!cardinalities.empty()) {
        if (cardinalities.size() != table.cols()) throw Error("cardinality list does not match CSV");
        table.cardinalities = cardinalities;
    } else {
        table.cardinalities.assign(table.cols(), 2);
        for (std::size_t i = 0; i < table.values.size(); ++i) {
            auto& card = table.cardinalities[i % table.cols()];
            card = std::max(card, static_cast<std::size_t>(table.values[i]) + 1);
        }
    }
    for (std::size_t i = 0; i < table.values.size(); ++i) {
        if (static_cast<std::size_t>(table.values[i]) >= table.cardinalities[i % table.cols()]) {
            throw Error("category out of range in " + path.string());
        }
    }
    return table;
}

}  // namespace c2bm
