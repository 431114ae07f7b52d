#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "c2bm/rng.hpp"

namespace c2bm {

/// Dense row-major matrix of doubles. Every tensor in the project is 2-D;
/// batches run along the rows.
struct Tensor {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
    Tensor(std::size_t r, std::size_t c, std::vector<double> values);

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
    std::size_t size() const { return data.size(); }
    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
    Tensor select_rows(std::span<const std::size_t> picked) const;
};

/// Trainable tensor with its gradient accumulator.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.rows, value.cols) {}
    void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

class Tape;

/// Handle to a node recorded on a Tape.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const Tensor& grad() const;
    std::size_t rows() const { return value().rows; }
    std::size_t cols() const { return value().cols; }
};

/// Reverse-mode autodiff tape. Nodes are appended in evaluation order, so
/// walking the tape backwards visits every node after all of its consumers.
class Tape {
public:
    /// An inference tape (trainable = false) copies parameters in as
    /// constants and never touches their gradients.
    explicit Tape(bool trainable = true) : trainable_(trainable) {}

    bool trainable() const { return trainable_; }
    Var constant(Tensor value);
    /// Leaf bound to a parameter. On a trainable tape, backward() accumulates
    /// into p.grad (the gradient buffer is treated as scratch, not state).
    Var param(const Parameter& p);

    /// Seeds d(loss)/d(loss) = 1 and propagates. Throws NonScalarLoss.
    void backward(Var loss);

    const Tensor& value(const Var& v) const { return nodes_[v.id].value; }
    const Tensor& grad(const Var& v) const { return nodes_[v.id].grad; }
    std::size_t node_count() const { return nodes_.size(); }

    // Internal: used by the op implementations.
    Var push(Tensor value, std::vector<std::size_t> inputs, std::function<void(Tape&, std::size_t)> back);
    Tensor& grad_mut(std::size_t id);
    bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
    const Tensor& value_at(std::size_t id) const { return nodes_[id].value; }
    const std::vector<std::size_t>& inputs_of(std::size_t id) const { return nodes_[id].inputs; }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<std::size_t> inputs;
        std::function<void(Tape&, std::size_t)> back;
        const Parameter* param = nullptr;
        bool needs_grad = false;
    };
    std::vector<Node> nodes_;
    bool trainable_ = true;
};

// ---- operations ----------------------------------------------------------------
// All throw ShapeMismatch on incompatible operands.

Var matmul(Var a, Var b);              // [n x k] * [k x m]
Var add_bias(Var x, Var bias);          // x + broadcast of a [1 x m] row
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);                  // elementwise
Var scale(Var x, double s);
Var leaky_relu(Var x, double slope = 0.01);
Var sigmoid(Var x);
Var softmax_rows(Var x);                // max-subtracted per row
Var sum(Var x);                          // [1 x 1]
Var mean(Var x);                         // [1 x 1]
Var square(Var x);
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(Var x, std::size_t start, std::size_t width);

/// out[b, i] = sum_j w[b, i * cols(p) + j] * p[b, j]: applies a per-row
/// matrix (flattened row-major in w) to the matching row of p.
Var batched_matvec(Var w, Var p);

/// Rows with mask[r] set are replaced by the matching row of `fixed`; no
/// gradient reaches x through replaced rows.
Var override_rows(Var x, const std::vector<std::uint8_t>& mask, const Tensor& fixed);

/// Mean over rows of -log(max(p[r, label[r]], 1e-12)).
Var cross_entropy_rows(Var probs, std::span<const int> labels);
/// Mean squared error over all entries.
Var mse(Var x, const Tensor& target);

inline constexpr double kProbFloor = 1e-12;

/// -log p[label] with the 1e-12 floor. Throws UnnormalizedInput when p does
/// not sum to 1 within 1e-6, ShapeMismatch on a bad label.
double cross_entropy(std::span<const double> probabilities, std::size_t label);

// ---- layers --------------------------------------------------------------------

enum class Activation { None, Softmax, Sigmoid, LeakyRelu };

/// Affine layers with LeakyReLU(0.01) between them.
class Mlp {
public:
    Mlp() = default;
    /// widths = {in, hidden..., out}; weights uniform(+-1/sqrt(fan_in)).
    Mlp(std::string name, std::vector<std::size_t> widths, Rng& rng,
        Activation final_activation = Activation::None);

    Var forward(Tape& tape, Var x) const;
    /// Inference without gradient tracking.
    Tensor forward(const Tensor& x) const;

    std::size_t in_width() const { return widths_.front(); }
    std::size_t out_width() const { return widths_.back(); }
    const std::vector<std::size_t>& widths() const { return widths_; }
    Activation final_activation() const { return final_; }
    std::vector<Parameter*> parameters();
    std::vector<const Parameter*> parameters() const;
    Parameter& weight(std::size_t layer) { return weights_.at(layer); }
    Parameter& bias(std::size_t layer) { return biases_.at(layer); }

private:
    std::vector<std::size_t> widths_;
    std::vector<Parameter> weights_;
    std::vector<Parameter> biases_;
    Activation final_ = Activation::None;
};

// ---- optimizer -----------------------------------------------------------------

struct AdamState {
    std::uint64_t step = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::vector<Tensor> m;
    std::vector<Tensor> v;
};

/// Bias-corrected Adam update of every parameter from its grad.
void adam_step(AdamState& state, const std::vector<Parameter*>& params);

// ---- checkpoint container --------------------------------------------------------

struct NamedTensor {
    std::string name;
    std::vector<std::uint64_t> dims;
    std::vector<float> data;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// "C2BM" magic, u32 version, u64 length + JSON metadata, u32 tensor count,
/// then per tensor: u32 name length, name, u32 rank, u64 dims, f32 payload.
/// All integers and floats little-endian. Written atomically.
void write_checkpoint(const std::filesystem::path& path, const nlohmann::json& meta,
                      const std::vector<NamedTensor>& tensors);
std::string encode_checkpoint(const nlohmann::json& meta, const std::vector<NamedTensor>& tensors);

struct Checkpoint {
    nlohmann::json meta;
    std::vector<NamedTensor> tensors;

    const NamedTensor& find(const std::string& name) const;
};

/// Throws CheckpointError on bad magic, version or truncation.
Checkpoint read_checkpoint(const std::filesystem::path& path);
Checkpoint decode_checkpoint(std::string_view bytes);

NamedTensor to_named(const Parameter& p);
/// Copies a stored tensor into p (shape must match). Throws CheckpointError.
void load_into(Parameter& p, const NamedTensor& t);
/// Rounds every value to the nearest f32, so an in-memory model equals its
/// saved copy exactly.
void round_to_f32(Parameter& p);

}  // namespace c2bm
