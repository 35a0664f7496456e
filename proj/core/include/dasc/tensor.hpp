#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "dasc/error.hpp"

namespace dasc {

class Rng;

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major f64 tensor. A Tensor is a shared handle to its storage, so
// parameter tensors keep their identity across tapes and gradients accumulate
// in place. Storage layout is flat; no views or strides (transpose copies).
class Tensor {
public:
    struct Node {
        Shape shape;
        std::vector<double> value;
        std::vector<double> grad;  // empty unless gradient-tracked
        bool requires_grad = false;
    };

    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor randn(Shape shape, Rng& rng, double stddev,
                        bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t i) const;
    std::size_t size() const;

    std::vector<double>& data();
    const std::vector<double>& data() const;

    bool requires_grad() const;
    // True when grad storage exists (leaf with requires_grad, or an
    // intermediate recorded on a gradient-enabled tape).
    bool tracked() const;
    std::vector<double>& grad();
    const std::vector<double>& grad() const;
    void zero_grad();

    double item() const;                         // scalar tensors only
    double at(std::size_t flat_index) const;
    double at(std::size_t row, std::size_t col) const;

    // Deep copy of values; the copy is an independent leaf.
    Tensor clone(bool requires_grad = false) const;

    const std::shared_ptr<Node>& node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
    std::shared_ptr<Node> node_;
};

// Records the backward closures for one forward construction. backward() runs
// once per tape; reset() zeroes every touched gradient so the same recorded
// pass can be replayed. A tape constructed with grad_enabled=false records
// nothing and allocates no gradients (inference mode).
class Tape {
public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool grad_enabled() const { return grad_enabled_; }
    std::size_t num_ops() const { return ops_.size(); }
    bool spent() const { return used_; }

    // loss must be a scalar produced on this tape.
    void backward(const Tensor& loss);

    // Zero all touched grads and allow backward() again.
    void reset();

    // --- op plumbing ---
    template <typename... Ts>
    bool tracks(const Ts&... inputs) const {
        return grad_enabled_ && (... || inputs.tracked());
    }
    // Allocates grad storage on out, registers the closure and all involved
    // nodes. Call only when tracks(...) returned true.
    void attach(Tensor& out, std::function<void()> backward_fn,
                std::initializer_list<const Tensor*> inputs);
    // Registers an input so reset() also zeroes it (for ops whose input list
    // is not known at compile time, e.g. concat).
    void note_input(const Tensor& in);

private:
    void note(const std::shared_ptr<Tensor::Node>& n);

    bool grad_enabled_ = true;
    bool used_ = false;
    std::vector<std::function<void()>> ops_;
    std::vector<std::shared_ptr<Tensor::Node>> touched_;
    std::unordered_set<const Tensor::Node*> touched_set_;
    std::unordered_set<const Tensor::Node*> produced_;
};

// ---------------------------------------------------------------------------
// Operations. Broadcasting, where supported, follows the trailing-dimension
// rule: the second operand's shape must equal a trailing suffix of the
// first's. Anything else is a ShapeError.
// ---------------------------------------------------------------------------

Tensor matmul(Tape& t, const Tensor& a, const Tensor& b);
Tensor transpose(Tape& t, const Tensor& a);

Tensor add(Tape& t, const Tensor& a, const Tensor& b);
Tensor sub(Tape& t, const Tensor& a, const Tensor& b);
Tensor mul(Tape& t, const Tensor& a, const Tensor& b);
Tensor scale(Tape& t, const Tensor& a, double s);
Tensor add_scalar(Tape& t, const Tensor& a, double c);

Tensor sigmoid(Tape& t, const Tensor& x);
Tensor tanh(Tape& t, const Tensor& x);

// Normalizes over the last axis; gain/bias have that axis's shape.
Tensor layer_norm(Tape& t, const Tensor& x, const Tensor& gain,
                  const Tensor& bias, double eps = 1e-5);

// Row gather: out[i] = table[ids[i]]. ids out of range -> IndexError.
Tensor embedding_lookup(Tape& t, const Tensor& table, std::span<const int> ids);

Tensor concat_rows(Tape& t, const std::vector<Tensor>& parts);
Tensor concat_cols(Tape& t, const std::vector<Tensor>& parts);
Tensor slice_rows(Tape& t, const Tensor& x, std::size_t start, std::size_t len);
Tensor slice_cols(Tape& t, const Tensor& x, std::size_t start, std::size_t len);

// Row-wise stabilized softmax. With causal=true (square inputs only) row r is
// normalized over columns [0, r]; entries beyond r are exactly zero.
Tensor softmax_rows(Tape& t, const Tensor& x, bool causal = false);

// Mean over rows of -log softmax(logits)[target]; max-subtraction stabilized.
Tensor softmax_xent(Tape& t, const Tensor& logits, std::span<const int> targets);

// Stabilized binary cross entropy on a scalar logit, label in {0,1}.
Tensor bce_with_logits(Tape& t, const Tensor& logit, double label);

// sum_i weights[i] * bce(logits[i], labels[i]); logits is treated flat.
Tensor bce_with_logits_weighted_sum(Tape& t, const Tensor& logits,
                                    std::span<const double> labels,
                                    std::span<const double> weights);

// out[i] = m[i, indices[i]] for a rank-2 m.
Tensor select_positions(Tape& t, const Tensor& m, std::span<const int> indices);

// Row-wise dot product of two same-shape rank-2 tensors -> [rows].
Tensor row_dot(Tape& t, const Tensor& a, const Tensor& b);
Tensor row_sum(Tape& t, const Tensor& x);

// a[r x c] times vector x[c] -> [r].
Tensor matvec(Tape& t, const Tensor& a, const Tensor& x);

// sum_i weights[i] * v[i] with constant weights.
Tensor weighted_sum(Tape& t, const Tensor& v, std::span<const double> weights);

Tensor sum(Tape& t, const Tensor& x);
Tensor mean(Tape& t, const Tensor& x);

// Inverted dropout; p == 0 returns x unchanged.
Tensor dropout(Tape& t, const Tensor& x, double p, Rng& rng);

} // namespace dasc
