#include "c2bm/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

#include "c2bm/errors.hpp"
#include "c2bm/io.hpp"

namespace c2bm {

namespace {

std::string shape_str(const Tensor& t) {
    return "[" + std::to_string(t.rows) + " x " + std::to_string(t.cols) + "]";
}

void require(bool ok, const std::string& what) {
    if (!ok) throw ShapeMismatch(what);
}

}  // namespace

Tensor::Tensor(std::size_t r, std::size_t c, std::vector<double> values)
    : rows(r), cols(c), data(std::move(values)) {
    require(data.size() == r * c, "tensor data does not match its shape");
}

Tensor Tensor::select_rows(std::span<const std::size_t> picked) const {
    Tensor out(picked.size(), cols);
    for (std::size_t i = 0; i < picked.size(); ++i) {
        const auto src = row(picked[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

const Tensor& Var::value() const { return tape->value(*this); }
const Tensor& Var::grad() const { return tape->grad(*this); }

// ---- Tape ------------------------------------------------------------------------

Var Tape::constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, {}, nullptr, nullptr, false});
    return {this, nodes_.size() - 1};
}

Var Tape::param(const Parameter& p) {
    if (!trainable_) return constant(p.value);
    nodes_.push_back(Node{p.value, {}, {}, nullptr, &p, true});
    return {this, nodes_.size() - 1};
}

Var Tape::push(Tensor value, std::vector<std::size_t> inputs,
               std::function<void(Tape&, std::size_t)> back) {
    bool needs = false;
    for (std::size_t in : inputs) needs = needs || nodes_[in].needs_grad;
    nodes_.push_back(Node{std::move(value), {}, std::move(inputs), needs ? std::move(back) : nullptr,
                          nullptr, needs});
    return {this, nodes_.size() - 1};
}

Tensor& Tape::grad_mut(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.size() != n.value.size()) n.grad = Tensor(n.value.rows, n.value.cols);
    return n.grad;
}

void Tape::backward(Var loss) {
    const Tensor& v = nodes_[loss.id].value;
    if (v.rows != 1 || v.cols != 1) {
        throw NonScalarLoss("backward needs a 1 x 1 loss, got " + shape_str(v));
    }
    for (auto& n : nodes_) n.grad = Tensor();
    grad_mut(loss.id).data[0] = 1.0;
    for (std::size_t id = loss.id + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (!n.needs_grad || n.grad.size() == 0) continue;
        if (n.back) n.back(*this, id);
        if (n.param) {
            auto* p = const_cast<Parameter*>(n.param);
            if (p->grad.size() != p->value.size()) p->grad = Tensor(p->value.rows, p->value.cols);
            for (std::size_t k = 0; k < n.grad.size(); ++k) p->grad.data[k] += n.grad.data[k];
        }
    }
}

// ---- ops -------------------------------------------------------------------------

Var matmul(Var a, Var b) {
    Tape& t = *a.tape;
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    require(A.cols == B.rows, "matmul " + shape_str(A) + " * " + shape_str(B));
    Tensor C(A.rows, B.cols);
    for (std::size_t i = 0; i < A.rows; ++i) {
        double* c = C.data.data() + i * C.cols;
        for (std::size_t k = 0; k < A.cols; ++k) {
            const double aik = A.data[i * A.cols + k];
            if (aik == 0.0) continue;
            const double* brow = B.data.data() + k * B.cols;
            for (std::size_t j = 0; j < B.cols; ++j) c[j] += aik * brow[j];
        }
    }
    const std::size_t ia = a.id;
    const std::size_t ib = b.id;
    return t.push(std::move(C), {ia, ib}, [ia, ib](Tape& tp, std::size_t self) {
        const Tensor& G = tp.grad_mut(self);
        const Tensor& A = tp.value_at(ia);
        const Tensor& B = tp.value_at(ib);
        if (tp.needs_grad(ia)) {
            Tensor& dA = tp.grad_mut(ia);
            for (std::size_t i = 0; i < A.rows; ++i) {
                const double* g = G.data.data() + i * G.cols;
                for (std::size_t k = 0; k < A.cols; ++k) {
                    const double* brow = B.data.data() + k * B.cols;
                    double acc = 0.0;
                    for (std::size_t j = 0; j < B.cols; ++j) acc += g[j] * brow[j];
                    dA.data[i * A.cols + k] += acc;
                }
            }
        }
        if (tp.needs_grad(ib)) {
            Tensor& dB = tp.grad_mut(ib);
            for (std::size_t i = 0; i < A.rows; ++i) {
                const double* g = G.data.data() + i * G.cols;
                for (std::size_t k = 0; k < A.cols; ++k) {
                    const double aik = A.data[i * A.cols + k];
                    if (aik == 0.0) continue;
                    double* db = dB.data.data() + k * B.cols;
                    for (std::size_t j = 0; j < B.cols; ++j) db[j] += aik * g[j];
                }
            }
        }
    });
}

Var add_bias(Var x, Var bias) {
    const Tensor& X = x.value();
    const Tensor& b = bias.value();
    require(b.rows == 1 && b.cols == X.cols, "bias " + shape_str(b) + " for " + shape_str(X));
    Tensor out = X;
    for (std::size_t r = 0; r < X.rows; ++r) {
        for (std::size_t c = 0; c < X.cols; ++c) out.data[r * X.cols + c] += b.data[c];
    }
    const std::size_t ix = x.id;
    const std::size_t ib = bias.id;
    return x.tape->push(std::move(out), {ix, ib}, [ix, ib](Tape& tp, std::size_t self) {
        const Tensor& G = tp.grad_mut(self);
        if (tp.needs_grad(ix)) {
            Tensor& dx = tp.grad_mut(ix);
            for (std::size_t k = 0; k < G.size(); ++k) dx.data[k] += G.data[k];
        }
        if (tp.needs_grad(ib)) {
            Tensor& db = tp.grad_mut(ib);
            for (std::size_t r = 0; r < G.rows; ++r) {
                for (std::size_t c = 0; c < G.cols; ++c) db.data[c] += G.data[r * G.cols + c];
            }
        }
    });
}

namespace {

Var linear_combo(Var a, Var b, double sa, double sb) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    require(A.same_shape(B), "elementwise " + shape_str(A) + " vs " + shape_str(B));
    Tensor out(A.rows, A.cols);
    for (std::size_t k = 0; k < A.size(); ++k) out.data[k] = sa * A.data[k] + sb * B.data[k];
    const std::size_t ia = a.id;
    const std::size_t ib = b.id;
    return a.tape->push(std::move(out), {ia, ib}, [ia, ib, sa, sb](Tape& tp, std::size_t self) {
        const Tensor& G = tp.grad_mut(self);
        if (tp.needs_grad(ia)) {
            Tensor& d = tp.grad_mut(ia);
            for (std::size_t k = 0; k < G.size(); ++k) d.data[k] += sa * G.data[k];
        }
        if (tp.needs_grad(ib)) {
            Tensor& d = tp.grad_mut(ib);
            for (std::size_t k = 0; k < G.size(); ++k) d.data[k] += sb * G.data[k];
        }
    });
}

// Elementwise unary op with derivative expressed through input and output.
template <typename F, typename D>
Var unary(Var x, F f, D dfdx) {
    const Tensor& X = x.value();
    Tensor out(X.rows, X.cols);
    for (std::size_t k = 0; k < X.size(); ++k) out.data[k] = f(X.data[k]);
    const std::size_t ix = x.id;
    return x.tape->push(std::move(out), {ix}, [ix, dfdx](Tape& tp, std::size_t self) {
        const Tensor& G = tp.grad_mut(self);
        const Tensor& X = tp.value_at(ix);
        const Tensor& Y = tp.value_at(self);
        Tensor& d = tp.grad_mut(ix);
        for (std::size_t k = 0; k < G.size(); ++k) d.data[k] += G.data[k] * dfdx(X.data[k], Y.data[k]);
    });
}

}  // namespace

Var add(Var a, Var b) { return linear_combo(a, b, 1.0, 1.0); }
Var sub(Var a, Var b) { return linear_combo(a, b, 1.0, -1.0); }

Var mul(Var a, Var b) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    require(A.same_shape(B), "mul " + shape_str(A) + " vs " + shape_str(B));
    Tensor out(A.rows, A.cols);
    for (std::size_t k = 0; k < A.size(); ++k) out.data[k] = A.data[k] * B.data[k];
    const std::size_t ia = a.id;
    const std::size_t ib = b.id;
    return a.tape->push(std::move(out), {ia, ib}, [ia, ib](Tape& tp, std::size_t self) {
        const Tensor& G = tp.grad_mut(self);
        const Tensor& A = tp.value_at(ia);
        const Tensor& B = tp.value_at(ib);
        if (tp.needs_grad(ia)) {
            Tensor& d = tp.grad_mut(ia);
            for (std::size_t k = 0; k < G.size(); ++k) d.data[k] += G.data[k] * B.data[k];
        }
        if (tp.needs_grad(ib)) {
            Tensor& d = tp.grad_mut(ib);
            for (std::size_t k = 0; k < G.size(); ++k) d.data[k] += G.data[k] * A.data[k];
        }
    });
}

Var scale(Var x, double s) {
    return unary(x, [s](double v) { return s * v; }, [s](double, double) { return s; });
}

Var leaky_relu(Var x, double slope) {
    return unary(
        x, [slope](double v) { return v > 0.0 ? v : slope * v; },
        [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Var sigmoid(Var x) {
    return unary(
        x,
        [](double v) {
            if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
            const double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Var square(Var x) {
    return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var softmax_rows(Var x) {
    const Tensor& X = x.value();
    Tensor out(X.rows, X.cols);
    for (std::size_t r = 0; r < X.rows; ++r) {
        const auto in = X.row(r);
        auto o = out.row(r);
        const double mx = *std::max_element(in.begin(), in.end());
        double total = 0.0;
        for (std::size_t c = 0; c < X.cols; ++c) {
            o[c] = std::exp(in[c] - mx);
            total += o[c];
        }
        for (double& v : o) v /= total;
    }
    const std::size_t ix = x.id;
    return x.tape->push(std::move(out), {ix}, [ix](Tape& tp, std::size_t self) {
        const Tensor& G = tp.grad_mut(self);
        const Tensor& Y = tp.value_at(self);
        Tensor& d = tp.grad_mut(ix);
        for (std::size_t r = 0; r < Y.rows; ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < Y.cols; ++c) dot += G(r, c) * Y(r, c);
            for (std::size_t c = 0; c < Y.cols; ++c) d(r, c) += Y(r, c) * (G(r, c) - dot);
        }
    });
}

Var sum(Var x) {
    const Tensor& X = x.value();
    double total = 0.0;
    for (double v : X.data) total += v;
    const std::size_t ix = x.id;
    return x.tape->push(Tensor(1, 1, total), {ix}, [ix](Tape& tp, std::size_t self) {
        const double g = tp.grad_mut(self).data[0];
        Tensor& d = tp.grad_mut(ix);
        for (double& v : d.data) v += g;
    });
}

Var mean(Var x) {
    const double n = static_cast<double>(x.value().size());
    return scale(sum(x), 1.0 / n);
}

Var concat_cols(const std::vector<Var>& parts) {
    require(!parts.empty(), "concat of nothing");
    const std::size_t rows = parts.front().rows();
    std::size_t cols = 0;
    std::vector<std::size_t> ids;
    for (const Var& p : parts) {
        require(p.rows() == rows, "concat row mismatch");
        cols += p.cols();
        ids.push_back(p.id);
    }
    Tensor out(rows, cols);
    std::size_t offset = 0;
    for (const Var& p : parts) {
        const Tensor& P = p.value();
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy(P.row(r).begin(), P.row(r).end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(offset));
        }
        offset += P.cols;
    }
    return parts.front().tape->push(std::move(out), ids, [ids](Tape& tp, std::size_t self) {
        const Tensor& G = tp.grad_mut(self);
        std::size_t offset = 0;
        for (std::size_t id : ids) {
            const std::size_t w = tp.value_at(id).cols;
            if (tp.needs_grad(id)) {
                Tensor& d = tp.grad_mut(id);
                for (std::size_t r = 0; r < G.rows; ++r) {
                    for (std::size_t c = 0; c < w; ++c) d(r, c) += G(r, offset + c);
                }
            }
            offset += w;
        }
    });
}

Var slice_cols(Var x, std::size_t start, std::size_t width) {
    const Tensor& X = x.value();
    require(start + width <= X.cols, "slice past the end of " + shape_str(X));
    Tensor out(X.rows, width);
    for (std::size_t r = 0; r < X.rows; ++r) {
        for (std::size_t c = 0; c < width; ++c) out(r, c) = X(r, start + c);
    }
    const std::size_t ix = x.id;
    return x.tape->push(std::move(out), {ix}, [ix, start, width](Tape& tp, std::size_t self) {
        const Tensor& G = tp.grad_mut(self);
        Tensor& d = tp.grad_mut(ix);
        for (std::size_t r = 0; r < G.rows; ++r) {
            for (std::size_t c = 0; c < width; ++c) d(r, start + c) += G(r, c);
        }
    });
}

Var batched_matvec(Var w, Var p) {
    const Tensor& W = w.value();
    const Tensor& P = p.value();
    require(W.rows == P.rows && P.cols > 0 && W.cols % P.cols == 0,
            "batched_matvec " + shape_str(W) + " with " + shape_str(P));
    const std::size_t m = W.cols / P.cols;
    const std::size_t k = P.cols;
    Tensor out(W.rows, m);
    for (std::size_t b = 0; b < W.rows; ++b) {
        for (std::size_t i = 0; i < m; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < k; ++j) acc += W(b, i * k + j) * P(b, j);
            out(b, i) = acc;
        }
    }
    const std::size_t iw = w.id;
    const std::size_t ip = p.id;
    return w.tape->push(std::move(out), {iw, ip}, [iw, ip, m, k](Tape& tp, std::size_t self) {
        const Tensor& G = tp.grad_mut(self);
        const Tensor& W = tp.value_at(iw);
        const Tensor& P = tp.value_at(ip);
        if (tp.needs_grad(iw)) {
            Tensor& dW = tp.grad_mut(iw);
            for (std::size_t b = 0; b < G.rows; ++b) {
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < k; ++j) dW(b, i * k + j) += G(b, i) * P(b, j);
                }
            }
        }
        if (tp.needs_grad(ip)) {
            Tensor& dP = tp.grad_mut(ip);
            for (std::size_t b = 0; b < G.rows; ++b) {
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < k; ++j) dP(b, j) += G(b, i) * W(b, i * k + j);
                }
            }
        }
    });
}

Var override_rows(Var x, const std::vector<std::uint8_t>& mask, const Tensor& fixed) {
    const Tensor& X = x.value();
    require(mask.size() == X.rows && fixed.same_shape(X), "override_rows shape");
    Tensor out = X;
    for (std::size_t r = 0; r < X.rows; ++r) {
        if (mask[r]) std::copy(fixed.row(r).begin(), fixed.row(r).end(), out.row(r).begin());
    }
    const std::size_t ix = x.id;
    return x.tape->push(std::move(out), {ix}, [ix, mask](Tape& tp, std::size_t self) {
        const Tensor& G = tp.grad_mut(self);
        Tensor& d = tp.grad_mut(ix);
        for (std::size_t r = 0; r < G.rows; ++r) {
            if (mask[r]) continue;
            for (std::size_t c = 0; c < G.cols; ++c) d(r, c) += G(r, c);
        }
    });
}

Var cross_entropy_rows(Var probs, std::span<const int> labels) {
    const Tensor& P = probs.value();
    require(labels.size() == P.rows && P.rows > 0, "cross_entropy_rows label count");
    double total = 0.0;
    for (std::size_t r = 0; r < P.rows; ++r) {
        const auto y = static_cast<std::size_t>(labels[r]);
        require(y < P.cols, "label out of range");
        total -= std::log(std::max(P(r, y), kProbFloor));
    }
    const double n = static_cast<double>(P.rows);
    const std::size_t ip = probs.id;
    std::vector<int> ys(labels.begin(), labels.end());
    return probs.tape->push(Tensor(1, 1, total / n), {ip}, [ip, ys, n](Tape& tp, std::size_t self) {
        const double g = tp.grad_mut(self).data[0];
        const Tensor& P = tp.value_at(ip);
        Tensor& d = tp.grad_mut(ip);
        for (std::size_t r = 0; r < P.rows; ++r) {
            const auto y = static_cast<std::size_t>(ys[r]);
            const double p = P(r, y);
            if (p > kProbFloor) d(r, y) -= g / (n * p);
        }
    });
}

Var mse(Var x, const Tensor& target) {
    const Tensor& X = x.value();
    require(X.same_shape(target), "mse " + shape_str(X) + " vs " + shape_str(target));
    Tape& t = *x.tape;
    return mean(square(sub(x, t.constant(target))));
}

double cross_entropy(std::span<const double> probabilities, std::size_t label) {
    if (label >= probabilities.size()) throw ShapeMismatch("label out of range");
    double total = 0.0;
    for (double p : probabilities) total += p;
    if (std::abs(total - 1.0) > 1e-6) {
        throw UnnormalizedInput("probabilities sum to " + std::to_string(total));
    }
    return -std::log(std::max(probabilities[label], kProbFloor));
}

// ---- Mlp -------------------------------------------------------------------------

Mlp::Mlp(std::string name, std::vector<std::size_t> widths, Rng& rng, Activation final_activation)
    : widths_(std::move(widths)), final_(final_activation) {
    if (widths_.size() < 2) throw ShapeMismatch("an MLP needs at least input and output widths");
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
        const std::size_t fan_in = widths_[l];
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        Tensor w(fan_in, widths_[l + 1]);
        for (double& v : w.data) v = rng.uniform(-bound, bound);
        Tensor b(1, widths_[l + 1]);
        for (double& v : b.data) v = rng.uniform(-bound, bound);
        weights_.emplace_back(name + ".w" + std::to_string(l), std::move(w));
        biases_.emplace_back(name + ".b" + std::to_string(l), std::move(b));
    }
}

Var Mlp::forward(Tape& tape, Var x) const {
    if (x.cols() != in_width()) {
        throw ShapeMismatch("MLP expects width " + std::to_string(in_width()) + ", got " +
                            std::to_string(x.cols()));
    }
    Var h = x;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        h = add_bias(matmul(h, tape.param(weights_[l])), tape.param(biases_[l]));
        if (l + 1 < weights_.size()) h = leaky_relu(h);
    }
    if (final_ == Activation::Softmax) h = softmax_rows(h);
    if (final_ == Activation::Sigmoid) h = sigmoid(h);
    if (final_ == Activation::LeakyRelu) h = leaky_relu(h);
    return h;
}

Tensor Mlp::forward(const Tensor& x) const {
    Tape tape(false);
    return forward(tape, tape.constant(x)).value();
}

std::vector<Parameter*> Mlp::parameters() {
    std::vector<Parameter*> out;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        out.push_back(&weights_[l]);
        out.push_back(&biases_[l]);
    }
    return out;
}

std::vector<const Parameter*> Mlp::parameters() const {
    std::vector<const Parameter*> out;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        out.push_back(&weights_[l]);
        out.push_back(&biases_[l]);
    }
    return out;
}

// ---- Adam ------------------------------------------------------------------------

void adam_step(AdamState& state, const std::vector<Parameter*>& params) {
    if (state.m.empty()) {
        for (const Parameter* p : params) {
            state.m.emplace_back(p->value.rows, p->value.cols);
            state.v.emplace_back(p->value.rows, p->value.cols);
        }
    }
    if (state.m.size() != params.size()) throw ShapeMismatch("Adam state does not match parameters");
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter& p = *params[i];
        if (!p.grad.same_shape(p.value) || !state.m[i].same_shape(p.value)) {
            throw ShapeMismatch("gradient shape differs from parameter " + p.name);
        }
        auto& m = state.m[i].data;
        auto& v = state.v[i].data;
        for (std::size_t k = 0; k < p.value.size(); ++k) {
            const double g = p.grad.data[k];
            m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g;
            v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g * g;
            const double mhat = m[k] / c1;
            const double vhat = v[k] / c2;
            p.value.data[k] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

// ---- checkpoint ------------------------------------------------------------------

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::string_view take(std::size_t n) {
        need(n);
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw CheckpointError("checkpoint is truncated");
    }

    std::string_view bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const nlohmann::json& meta, const std::vector<NamedTensor>& tensors) {
    std::string out = "C2BM";
    put<std::uint32_t>(out, kCheckpointVersion);
    const std::string meta_text = meta.dump();
    put<std::uint64_t>(out, meta_text.size());
    out += meta_text;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        std::uint64_t count = 1;
        for (auto d : t.dims) count *= d;
        if (count != t.data.size()) throw CheckpointError("tensor " + t.name + " has inconsistent dims");
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
        out += t.name;
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dims.size()));
        for (auto d : t.dims) put<std::uint64_t>(out, d);
        for (float f : t.data) put<float>(out, f);
    }
    return out;
}

void write_checkpoint(const std::filesystem::path& path, const nlohmann::json& meta,
                      const std::vector<NamedTensor>& tensors) {
    write_file_atomic(path, encode_checkpoint(meta, tensors));
}

Checkpoint decode_checkpoint(std::string_view bytes) {
    Reader in(bytes);
    if (in.take(4) != "C2BM") throw CheckpointError("bad magic, not a C2BM checkpoint");
    const auto version = in.get<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    }
    Checkpoint ck;
    const auto meta_len = in.get<std::uint64_t>();
    try {
        ck.meta = nlohmann::json::parse(in.take(meta_len));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("bad checkpoint metadata: ") + e.what());
    }
    const auto count = in.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        t.name = std::string(in.take(in.get<std::uint32_t>()));
        const auto rank = in.get<std::uint32_t>();
        std::uint64_t n = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            t.dims.push_back(in.get<std::uint64_t>());
            n *= t.dims.back();
        }
        const auto payload = in.take(n * sizeof(float));
        t.data.resize(n);
        std::memcpy(t.data.data(), payload.data(), payload.size());
        ck.tensors.push_back(std::move(t));
    }
    if (!in.done()) throw CheckpointError("trailing bytes after the last tensor");
    return ck;
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw CheckpointError("no checkpoint at " + path.string());
    return decode_checkpoint(read_text_file(path));
}

const NamedTensor& Checkpoint::find(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return t;
    }
    throw CheckpointError("checkpoint has no tensor '" + name + "'");
}

NamedTensor to_named(const Parameter& p) {
    NamedTensor t{p.name, {p.value.rows, p.value.cols}, {}};
    t.data.reserve(p.value.size());
    for (double v : p.value.data) t.data.push_back(static_cast<float>(v));
    return t;
}

void load_into(Parameter& p, const NamedTensor& t) {
    if (t.dims.size() != 2 || t.dims[0] != p.value.rows || t.dims[1] != p.value.cols) {
        throw CheckpointError("tensor '" + t.name + "' has the wrong shape for " + p.name);
    }
    for (std::size_t k = 0; k < t.data.size(); ++k) p.value.data[k] = t.data[k];
}

void round_to_f32(Parameter& p) {
    for (double& v : p.value.data) v = static_cast<float>(v);
}

}  // namespace c2bm
