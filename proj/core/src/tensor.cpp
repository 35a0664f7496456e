#include "dasc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dasc/rng.hpp"

namespace dasc {

// ---------------------------------------------------------------------------
// shape helpers
// ---------------------------------------------------------------------------

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

void require_rank(const Tensor& x, std::size_t r, const char* what) {
    if (x.rank() != r) {
        throw ShapeError(std::string(what) + ": expected rank " +
                         std::to_string(r) + ", got " + shape_str(x.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(what) + ": shapes differ: " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

// Trailing-suffix broadcast check: returns the repeat count of b over a.
std::size_t broadcast_reps(const Tensor& a, const Tensor& b, const char* what) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa == sb) return 1;
    if (sb.size() < sa.size() &&
        std::equal(sb.begin(), sb.end(), sa.end() - sb.size())) {
        return a.size() / b.size();
    }
    throw ShapeError(std::string(what) +
                     ": shapes not broadcastable by the trailing-dimension rule: " +
                     shape_str(sa) + " vs " + shape_str(sb));
}

double stable_sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// loss = max(z,0) - z*y + log(1 + exp(-|z|))
double stable_bce(double z, double y) {
    return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::fabs(z)));
}

// C[m x n] += A[m x k] * B[k x n]
void gemm_nn_acc(const double* a, const double* b, double* c, std::size_t m,
                 std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (std::size_t l = 0; l < k; ++l) {
            const double av = ai[l];
            const double* bl = b + l * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bl[j];
        }
    }
}

// OUT[m x k] += X[m x n] * Y^T, with Y stored [k x n]
void gemm_nt_acc(const double* x, const double* y, double* out, std::size_t m,
                 std::size_t n, std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* xi = x + i * n;
        double* oi = out + i * k;
        for (std::size_t j = 0; j < k; ++j) {
            const double* yj = y + j * n;
            double s = 0.0;
            for (std::size_t l = 0; l < n; ++l) s += xi[l] * yj[l];
            oi[j] += s;
        }
    }
}

// OUT[k x n] += A^T * X, with A stored [m x k], X stored [m x n]
void gemm_tn_acc(const double* a, const double* x, double* out, std::size_t m,
                 std::size_t k, std::size_t n) {
    for (std::size_t l = 0; l < m; ++l) {
        const double* al = a + l * k;
        const double* xl = x + l * n;
        for (std::size_t i = 0; i < k; ++i) {
            const double av = al[i];
            double* oi = out + i * n;
            for (std::size_t j = 0; j < n; ++j) oi[j] += av * xl[j];
        }
    }
}

} // namespace

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto node = std::make_shared<Node>();
    const std::size_t n = shape_numel(shape);
    node->shape = std::move(shape);
    node->value.assign(n, 0.0);
    node->requires_grad = requires_grad;
    if (requires_grad) node->grad.assign(n, 0.0);
    return Tensor(std::move(node));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.data().begin(), t.data().end(), value);
    return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data,
                         bool requires_grad) {
    if (shape_numel(shape) != data.size()) {
        throw ShapeError("Tensor::from_data: " + shape_str(shape) +
                         " does not hold " + std::to_string(data.size()) +
                         " elements");
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    if (requires_grad) node->grad.assign(node->value.size(), 0.0);
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.data()) v = rng.normal(0.0, stddev);
    return t;
}

const Shape& Tensor::shape() const {
    if (!node_) throw StateError("Tensor: use of an undefined tensor");
    return node_->shape;
}

std::size_t Tensor::dim(std::size_t i) const {
    const Shape& s = shape();
    if (i >= s.size()) throw ShapeError("Tensor::dim: axis out of range");
    return s[i];
}

std::size_t Tensor::size() const { return node_ ? node_->value.size() : 0; }

std::vector<double>& Tensor::data() {
    if (!node_) throw StateError("Tensor: use of an undefined tensor");
    return node_->value;
}

const std::vector<double>& Tensor::data() const {
    if (!node_) throw StateError("Tensor: use of an undefined tensor");
    return node_->value;
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

bool Tensor::tracked() const { return node_ && !node_->grad.empty(); }

std::vector<double>& Tensor::grad() {
    if (!tracked()) throw StateError("Tensor::grad: tensor has no gradient storage");
    return node_->grad;
}

const std::vector<double>& Tensor::grad() const {
    if (!tracked()) throw StateError("Tensor::grad: tensor has no gradient storage");
    return node_->grad;
}

void Tensor::zero_grad() {
    if (tracked()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

double Tensor::item() const {
    if (size() != 1) {
        throw ShapeError("Tensor::item: tensor is not scalar: " + shape_str(shape()));
    }
    return node_->value[0];
}

double Tensor::at(std::size_t flat_index) const {
    if (flat_index >= size()) throw IndexError("Tensor::at: flat index out of range");
    return node_->value[flat_index];
}

double Tensor::at(std::size_t row, std::size_t col) const {
    require_rank(*this, 2, "Tensor::at(row, col)");
    if (row >= dim(0) || col >= dim(1)) {
        throw IndexError("Tensor::at: index out of range");
    }
    return node_->value[row * dim(1) + col];
}

Tensor Tensor::clone(bool requires_grad) const {
    return from_data(shape(), data(), requires_grad);
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

void Tape::note(const std::shared_ptr<Tensor::Node>& n) {
    if (touched_set_.insert(n.get()).second) touched_.push_back(n);
}

void Tape::note_input(const Tensor& in) {
    if (in.tracked()) note(in.node());
}

void Tape::attach(Tensor& out, std::function<void()> backward_fn,
                  std::initializer_list<const Tensor*> inputs) {
    auto& on = out.node();
    on->grad.assign(on->value.size(), 0.0);
    produced_.insert(on.get());
    note(on);
    for (const Tensor* in : inputs) {
        if (in->tracked()) note(in->node());
    }
    ops_.push_back(std::move(backward_fn));
}

void Tape::backward(const Tensor& loss) {
    if (!grad_enabled_) {
        throw StateError("Tape::backward: tape was created with gradients disabled");
    }
    if (used_) {
        throw StateError("Tape::backward: tape already consumed; call reset() first");
    }
    if (loss.size() != 1) {
        throw Error("Tape::backward: loss must be scalar, got " + shape_str(loss.shape()));
    }
    if (!loss.tracked() || produced_.find(loss.node().get()) == produced_.end()) {
        throw StateError("Tape::backward: loss was not produced on this tape");
    }
    loss.node()->grad[0] = 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    used_ = true;
}

void Tape::reset() {
    for (auto& n : touched_) std::fill(n->grad.begin(), n->grad.end(), 0.0);
    used_ = false;
}

// ---------------------------------------------------------------------------
// ops
// ---------------------------------------------------------------------------

Tensor matmul(Tape& t, const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul lhs");
    require_rank(b, 2, "matmul rhs");
    if (a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: inner dimensions disagree: " +
                         shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor c = Tensor::zeros({m, n});
    gemm_nn_acc(a.data().data(), b.data().data(), c.data().data(), m, k, n);
    if (t.tracks(a, b)) {
        auto an = a.node(), bn = b.node(), cn = c.node();
        t.attach(c,
                 [an, bn, cn, m, k, n] {
                     if (!an->grad.empty()) {
                         gemm_nt_acc(cn->grad.data(), bn->value.data(),
                                     an->grad.data(), m, n, k);
                     }
                     if (!bn->grad.empty()) {
                         gemm_tn_acc(an->value.data(), cn->grad.data(),
                                     bn->grad.data(), m, k, n);
                     }
                 },
                 {&a, &b});
    }
    return c;
}

Tensor transpose(Tape& t, const Tensor& a) {
    require_rank(a, 2, "transpose");
    const std::size_t r = a.dim(0), c = a.dim(1);
    Tensor out = Tensor::zeros({c, r});
    const auto& av = a.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) ov[j * r + i] = av[i * c + j];
    }
    if (t.tracks(a)) {
        auto an = a.node(), on = out.node();
        t.attach(out,
                 [an, on, r, c] {
                     if (an->grad.empty()) return;
                     for (std::size_t i = 0; i < r; ++i) {
                         for (std::size_t j = 0; j < c; ++j) {
                             an->grad[i * c + j] += on->grad[j * r + i];
                         }
                     }
                 },
                 {&a});
    }
    return out;
}

namespace {

enum class Ew { Add, Sub, Mul };

Tensor elementwise(Tape& t, const Tensor& a, const Tensor& b, Ew op,
                   const char* name) {
    const std::size_t reps = broadcast_reps(a, b, name);
    const std::size_t bs = b.size();
    Tensor c = Tensor::zeros(a.shape());
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& cv = c.data();
    for (std::size_t r = 0; r < reps; ++r) {
        const std::size_t base = r * bs;
        for (std::size_t i = 0; i < bs; ++i) {
            switch (op) {
                case Ew::Add: cv[base + i] = av[base + i] + bv[i]; break;
                case Ew::Sub: cv[base + i] = av[base + i] - bv[i]; break;
                case Ew::Mul: cv[base + i] = av[base + i] * bv[i]; break;
            }
        }
    }
    if (t.tracks(a, b)) {
        auto an = a.node(), bn = b.node(), cn = c.node();
        t.attach(c,
                 [an, bn, cn, reps, bs, op] {
                     for (std::size_t r = 0; r < reps; ++r) {
                         const std::size_t base = r * bs;
                         for (std::size_t i = 0; i < bs; ++i) {
                             const double g = cn->grad[base + i];
                             switch (op) {
                                 case Ew::Add:
                                     if (!an->grad.empty()) an->grad[base + i] += g;
                                     if (!bn->grad.empty()) bn->grad[i] += g;
                                     break;
                                 case Ew::Sub:
                                     if (!an->grad.empty()) an->grad[base + i] += g;
                                     if (!bn->grad.empty()) bn->grad[i] -= g;
                                     break;
                                 case Ew::Mul:
                                     if (!an->grad.empty())
                                         an->grad[base + i] += g * bn->value[i];
                                     if (!bn->grad.empty())
                                         bn->grad[i] += g * an->value[base + i];
                                     break;
                             }
                         }
                     }
                 },
                 {&a, &b});
    }
    return c;
}

} // namespace

Tensor add(Tape& t, const Tensor& a, const Tensor& b) {
    return elementwise(t, a, b, Ew::Add, "add");
}

Tensor sub(Tape& t, const Tensor& a, const Tensor& b) {
    return elementwise(t, a, b, Ew::Sub, "sub");
}

Tensor mul(Tape& t, const Tensor& a, const Tensor& b) {
    return elementwise(t, a, b, Ew::Mul, "mul");
}

Tensor scale(Tape& t, const Tensor& a, double s) {
    Tensor c = Tensor::zeros(a.shape());
    const auto& av = a.data();
    auto& cv = c.data();
    for (std::size_t i = 0; i < av.size(); ++i) cv[i] = s * av[i];
    if (t.tracks(a)) {
        auto an = a.node(), cn = c.node();
        t.attach(c,
                 [an, cn, s] {
                     if (an->grad.empty()) return;
                     for (std::size_t i = 0; i < an->grad.size(); ++i) {
                         an->grad[i] += s * cn->grad[i];
                     }
                 },
                 {&a});
    }
    return c;
}

Tensor add_scalar(Tape& t, const Tensor& a, double c0) {
    Tensor c = Tensor::zeros(a.shape());
    const auto& av = a.data();
    auto& cv = c.data();
    for (std::size_t i = 0; i < av.size(); ++i) cv[i] = av[i] + c0;
    if (t.tracks(a)) {
        auto an = a.node(), cn = c.node();
        t.attach(c,
                 [an, cn] {
                     if (an->grad.empty()) return;
                     for (std::size_t i = 0; i < an->grad.size(); ++i) {
                         an->grad[i] += cn->grad[i];
                     }
                 },
                 {&a});
    }
    return c;
}

Tensor sigmoid(Tape& t, const Tensor& x) {
    Tensor y = Tensor::zeros(x.shape());
    const auto& xv = x.data();
    auto& yv = y.data();
    for (std::size_t i = 0; i < xv.size(); ++i) yv[i] = stable_sigmoid(xv[i]);
    if (t.tracks(x)) {
        auto xn = x.node(), yn = y.node();
        t.attach(y,
                 [xn, yn] {
                     if (xn->grad.empty()) return;
                     for (std::size_t i = 0; i < xn->grad.size(); ++i) {
                         const double s = yn->value[i];
                         xn->grad[i] += yn->grad[i] * s * (1.0 - s);
                     }
                 },
                 {&x});
    }
    return y;
}

Tensor tanh(Tape& t, const Tensor& x) {
    Tensor y = Tensor::zeros(x.shape());
    const auto& xv = x.data();
    auto& yv = y.data();
    for (std::size_t i = 0; i < xv.size(); ++i) yv[i] = std::tanh(xv[i]);
    if (t.tracks(x)) {
        auto xn = x.node(), yn = y.node();
        t.attach(y,
                 [xn, yn] {
                     if (xn->grad.empty()) return;
                     for (std::size_t i = 0; i < xn->grad.size(); ++i) {
                         const double v = yn->value[i];
                         xn->grad[i] += yn->grad[i] * (1.0 - v * v);
                     }
                 },
                 {&x});
    }
    return y;
}

Tensor layer_norm(Tape& t, const Tensor& x, const Tensor& gain,
                  const Tensor& bias, double eps) {
    if (x.rank() == 0) throw ShapeError("layer_norm: rank-0 input");
    const std::size_t d = x.shape().back();
    if (gain.size() != d || bias.size() != d) {
        throw ShapeError("layer_norm: gain/bias must have the last-axis size " +
                         std::to_string(d));
    }
    const std::size_t rows = x.size() / d;
    Tensor y = Tensor::zeros(x.shape());
    std::vector<double> xhat(x.size());
    std::vector<double> inv_std(rows);
    const auto& xv = x.data();
    const auto& gv = gain.data();
    const auto& bv = bias.data();
    auto& yv = y.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xv.data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += xr[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = xr[j] - mu;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_std[r] = inv;
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (xr[j] - mu) * inv;
            xhat[r * d + j] = h;
            yv[r * d + j] = gv[j] * h + bv[j];
        }
    }
    if (t.tracks(x, gain, bias)) {
        auto xn = x.node(), gn = gain.node(), bn = bias.node(), yn = y.node();
        t.attach(y,
                 [xn, gn, bn, yn, xhat = std::move(xhat),
                  inv_std = std::move(inv_std), rows, d] {
                     for (std::size_t r = 0; r < rows; ++r) {
                         const double* dy = yn->grad.data() + r * d;
                         const double* xh = xhat.data() + r * d;
                         if (!gn->grad.empty()) {
                             for (std::size_t j = 0; j < d; ++j) {
                                 gn->grad[j] += dy[j] * xh[j];
                             }
                         }
                         if (!bn->grad.empty()) {
                             for (std::size_t j = 0; j < d; ++j) bn->grad[j] += dy[j];
                         }
                         if (!xn->grad.empty()) {
                             double m1 = 0.0, m2 = 0.0;
                             for (std::size_t j = 0; j < d; ++j) {
                                 const double dxh = dy[j] * gn->value[j];
                                 m1 += dxh;
                                 m2 += dxh * xh[j];
                             }
                             m1 /= static_cast<double>(d);
                             m2 /= static_cast<double>(d);
                             const double inv = inv_std[r];
                             for (std::size_t j = 0; j < d; ++j) {
                                 const double dxh = dy[j] * gn->value[j];
                                 xn->grad[r * d + j] += inv * (dxh - m1 - xh[j] * m2);
                             }
                         }
                     }
                 },
                 {&x, &gain, &bias});
    }
    return y;
}

Tensor embedding_lookup(Tape& t, const Tensor& table, std::span<const int> ids) {
    require_rank(table, 2, "embedding_lookup table");
    const std::size_t v = table.dim(0), d = table.dim(1);
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= v) {
            throw IndexError("embedding_lookup: id " + std::to_string(id) +
                             " out of range for table of " + std::to_string(v) +
                             " rows");
        }
    }
    Tensor out = Tensor::zeros({ids.size(), d});
    const auto& tv = table.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const double* src = tv.data() + static_cast<std::size_t>(ids[i]) * d;
        std::copy(src, src + d, ov.data() + i * d);
    }
    if (t.tracks(table)) {
        auto tn = table.node(), on = out.node();
        std::vector<int> idv(ids.begin(), ids.end());
        t.attach(out,
                 [tn, on, idv = std::move(idv), d] {
                     if (tn->grad.empty()) return;
                     for (std::size_t i = 0; i < idv.size(); ++i) {
                         double* dst =
                             tn->grad.data() + static_cast<std::size_t>(idv[i]) * d;
                         const double* src = on->grad.data() + i * d;
                         for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                     }
                 },
                 {&table});
    }
    return out;
}

Tensor concat_rows(Tape& t, const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no parts");
    const std::size_t cols = parts[0].rank() == 2 ? parts[0].dim(1) : 0;
    std::size_t rows = 0;
    for (const auto& p : parts) {
        require_rank(p, 2, "concat_rows part");
        if (p.dim(1) != cols) {
            throw ShapeError("concat_rows: column counts differ");
        }
        rows += p.dim(0);
    }
    Tensor out = Tensor::zeros({rows, cols});
    auto& ov = out.data();
    std::size_t at = 0;
    for (const auto& p : parts) {
        std::copy(p.data().begin(), p.data().end(), ov.begin() + at);
        at += p.size();
    }
    bool any = false;
    for (const auto& p : parts) any = any || t.tracks(p);
    if (any) {
        std::vector<std::shared_ptr<Tensor::Node>> ins;
        ins.reserve(parts.size());
        for (const auto& p : parts) ins.push_back(p.node());
        auto on = out.node();
        t.attach(out,
                 [ins = std::move(ins), on] {
                     std::size_t at = 0;
                     for (auto& n : ins) {
                         if (!n->grad.empty()) {
                             for (std::size_t i = 0; i < n->grad.size(); ++i) {
                                 n->grad[i] += on->grad[at + i];
                             }
                         }
                         at += n->value.size();
                     }
                 },
                 {});
        for (const auto& p : parts) t.note_input(p);
    }
    return out;
}

Tensor concat_cols(Tape& t, const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no parts");
    const std::size_t rows = parts[0].rank() == 2 ? parts[0].dim(0) : 0;
    std::size_t cols = 0;
    for (const auto& p : parts) {
        require_rank(p, 2, "concat_cols part");
        if (p.dim(0) != rows) throw ShapeError("concat_cols: row counts differ");
        cols += p.dim(1);
    }
    Tensor out = Tensor::zeros({rows, cols});
    auto& ov = out.data();
    std::size_t col_at = 0;
    for (const auto& p : parts) {
        const std::size_t pc = p.dim(1);
        const auto& pv = p.data();
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy(pv.begin() + r * pc, pv.begin() + (r + 1) * pc,
                      ov.begin() + r * cols + col_at);
        }
        col_at += pc;
    }
    bool any = false;
    for (const auto& p : parts) any = any || t.tracks(p);
    if (any) {
        std::vector<std::shared_ptr<Tensor::Node>> ins;
        std::vector<std::size_t> widths;
        for (const auto& p : parts) {
            ins.push_back(p.node());
            widths.push_back(p.dim(1));
        }
        auto on = out.node();
        t.attach(out,
                 [ins = std::move(ins), widths = std::move(widths), on, rows,
                  cols] {
                     std::size_t col_at = 0;
                     for (std::size_t pi = 0; pi < ins.size(); ++pi) {
                         auto& n = ins[pi];
                         const std::size_t pc = widths[pi];
                         if (!n->grad.empty()) {
                             for (std::size_t r = 0; r < rows; ++r) {
                                 for (std::size_t j = 0; j < pc; ++j) {
                                     n->grad[r * pc + j] +=
                                         on->grad[r * cols + col_at + j];
                                 }
                             }
                         }
                         col_at += pc;
                     }
                 },
                 {});
        for (const auto& p : parts) t.note_input(p);
    }
    return out;
}

Tensor slice_rows(Tape& t, const Tensor& x, std::size_t start, std::size_t len) {
    require_rank(x, 2, "slice_rows");
    if (start + len > x.dim(0)) throw IndexError("slice_rows: range out of bounds");
    const std::size_t cols = x.dim(1);
    Tensor out = Tensor::zeros({len, cols});
    std::copy(x.data().begin() + start * cols,
              x.data().begin() + (start + len) * cols, out.data().begin());
    if (t.tracks(x)) {
        auto xn = x.node(), on = out.node();
        t.attach(out,
                 [xn, on, start, len, cols] {
                     if (xn->grad.empty()) return;
                     for (std::size_t i = 0; i < len * cols; ++i) {
                         xn->grad[start * cols + i] += on->grad[i];
                     }
                 },
                 {&x});
    }
    return out;
}

Tensor slice_cols(Tape& t, const Tensor& x, std::size_t start, std::size_t len) {
    require_rank(x, 2, "slice_cols");
    if (start + len > x.dim(1)) throw IndexError("slice_cols: range out of bounds");
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    Tensor out = Tensor::zeros({rows, len});
    const auto& xv = x.data();
    auto& ov = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy(xv.begin() + r * cols + start, xv.begin() + r * cols + start + len,
                  ov.begin() + r * len);
    }
    if (t.tracks(x)) {
        auto xn = x.node(), on = out.node();
        t.attach(out,
                 [xn, on, start, len, rows, cols] {
                     if (xn->grad.empty()) return;
                     for (std::size_t r = 0; r < rows; ++r) {
                         for (std::size_t j = 0; j < len; ++j) {
                             xn->grad[r * cols + start + j] += on->grad[r * len + j];
                         }
                     }
                 },
                 {&x});
    }
    return out;
}

Tensor softmax_rows(Tape& t, const Tensor& x, bool causal) {
    require_rank(x, 2, "softmax_rows");
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    if (causal && rows != cols) {
        throw ShapeError("softmax_rows: causal mode needs a square matrix");
    }
    Tensor y = Tensor::zeros({rows, cols});
    const auto& xv = x.data();
    auto& yv = y.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t support = causal ? r + 1 : cols;
        const double* xr = xv.data() + r * cols;
        double mx = xr[0];
        for (std::size_t j = 1; j < support; ++j) mx = std::max(mx, xr[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < support; ++j) {
            const double e = std::exp(xr[j] - mx);
            yv[r * cols + j] = e;
            z += e;
        }
        for (std::size_t j = 0; j < support; ++j) yv[r * cols + j] /= z;
    }
    if (t.tracks(x)) {
        auto xn = x.node(), yn = y.node();
        t.attach(y,
                 [xn, yn, rows, cols, causal] {
                     if (xn->grad.empty()) return;
                     for (std::size_t r = 0; r < rows; ++r) {
                         const std::size_t support = causal ? r + 1 : cols;
                         const double* yr = yn->value.data() + r * cols;
                         const double* dy = yn->grad.data() + r * cols;
                         double dot = 0.0;
                         for (std::size_t j = 0; j < support; ++j) dot += dy[j] * yr[j];
                         for (std::size_t j = 0; j < support; ++j) {
                             xn->grad[r * cols + j] += yr[j] * (dy[j] - dot);
                         }
                     }
                 },
                 {&x});
    }
    return y;
}

Tensor softmax_xent(Tape& t, const Tensor& logits, std::span<const int> targets) {
    require_rank(logits, 2, "softmax_xent logits");
    const std::size_t n = logits.dim(0), v = logits.dim(1);
    if (targets.size() != n) {
        throw ShapeError("softmax_xent: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(n) + " rows");
    }
    for (int id : targets) {
        if (id < 0 || static_cast<std::size_t>(id) >= v) {
            throw IndexError("softmax_xent: target " + std::to_string(id) +
                             " out of range for " + std::to_string(v) + " classes");
        }
    }
    std::vector<double> probs(n * v);
    const auto& lv = logits.data();
    double loss = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        const double* lr = lv.data() + r * v;
        double mx = lr[0];
        for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, lr[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < v; ++j) {
            const double e = std::exp(lr[j] - mx);
            probs[r * v + j] = e;
            z += e;
        }
        const double logz = std::log(z) + mx;
        for (std::size_t j = 0; j < v; ++j) probs[r * v + j] /= z;
        loss += logz - lr[static_cast<std::size_t>(targets[r])];
    }
    loss /= static_cast<double>(n);
    Tensor out = Tensor::scalar(loss);
    if (t.tracks(logits)) {
        auto ln = logits.node(), on = out.node();
        std::vector<int> tv(targets.begin(), targets.end());
        t.attach(out,
                 [ln, on, probs = std::move(probs), tv = std::move(tv), n, v] {
                     if (ln->grad.empty()) return;
                     const double up = on->grad[0] / static_cast<double>(n);
                     for (std::size_t r = 0; r < n; ++r) {
                         for (std::size_t j = 0; j < v; ++j) {
                             double g = probs[r * v + j];
                             if (j == static_cast<std::size_t>(tv[r])) g -= 1.0;
                             ln->grad[r * v + j] += up * g;
                         }
                     }
                 },
                 {&logits});
    }
    return out;
}

Tensor bce_with_logits(Tape& t, const Tensor& logit, double label) {
    if (logit.size() != 1) {
        throw ShapeError("bce_with_logits: logit must be scalar");
    }
    if (label != 0.0 && label != 1.0) {
        throw Error("bce_with_logits: label must be 0 or 1");
    }
    const double z = logit.item();
    Tensor out = Tensor::scalar(stable_bce(z, label));
    if (t.tracks(logit)) {
        auto ln = logit.node(), on = out.node();
        t.attach(out,
                 [ln, on, label] {
                     if (ln->grad.empty()) return;
                     ln->grad[0] += on->grad[0] * (stable_sigmoid(ln->value[0]) - label);
                 },
                 {&logit});
    }
    return out;
}

Tensor bce_with_logits_weighted_sum(Tape& t, const Tensor& logits,
                                    std::span<const double> labels,
                                    std::span<const double> weights) {
    const std::size_t n = logits.size();
    if (labels.size() != n || weights.size() != n) {
        throw ShapeError("bce_with_logits_weighted_sum: label/weight counts differ "
                         "from logit count");
    }
    const auto& lv = logits.data();
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (weights[i] != 0.0) loss += weights[i] * stable_bce(lv[i], labels[i]);
    }
    Tensor out = Tensor::scalar(loss);
    if (t.tracks(logits)) {
        auto ln = logits.node(), on = out.node();
        std::vector<double> lab(labels.begin(), labels.end());
        std::vector<double> w(weights.begin(), weights.end());
        t.attach(out,
                 [ln, on, lab = std::move(lab), w = std::move(w), n] {
                     if (ln->grad.empty()) return;
                     const double up = on->grad[0];
                     for (std::size_t i = 0; i < n; ++i) {
                         if (w[i] == 0.0) continue;
                         ln->grad[i] +=
                             up * w[i] * (stable_sigmoid(ln->value[i]) - lab[i]);
                     }
                 },
                 {&logits});
    }
    return out;
}

Tensor select_positions(Tape& t, const Tensor& m, std::span<const int> indices) {
    require_rank(m, 2, "select_positions");
    const std::size_t n = m.dim(0), v = m.dim(1);
    if (indices.size() != n) {
        throw ShapeError("select_positions: need one index per row");
    }
    for (int id : indices) {
        if (id < 0 || static_cast<std::size_t>(id) >= v) {
            throw IndexError("select_positions: index " + std::to_string(id) +
                             " out of range for " + std::to_string(v) + " columns");
        }
    }
    Tensor out = Tensor::zeros({n});
    const auto& mv = m.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < n; ++i) {
        ov[i] = mv[i * v + static_cast<std::size_t>(indices[i])];
    }
    if (t.tracks(m)) {
        auto mn = m.node(), on = out.node();
        std::vector<int> idx(indices.begin(), indices.end());
        t.attach(out,
                 [mn, on, idx = std::move(idx), v] {
                     if (mn->grad.empty()) return;
                     for (std::size_t i = 0; i < idx.size(); ++i) {
                         mn->grad[i * v + static_cast<std::size_t>(idx[i])] +=
                             on->grad[i];
                     }
                 },
                 {&m});
    }
    return out;
}

Tensor row_dot(Tape& t, const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "row_dot lhs");
    require_same_shape(a, b, "row_dot");
    const std::size_t rows = a.dim(0), cols = a.dim(1);
    Tensor out = Tensor::zeros({rows});
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < cols; ++j) s += av[r * cols + j] * bv[r * cols + j];
        ov[r] = s;
    }
    if (t.tracks(a, b)) {
        auto an = a.node(), bn = b.node(), on = out.node();
        t.attach(out,
                 [an, bn, on, rows, cols] {
                     for (std::size_t r = 0; r < rows; ++r) {
                         const double g = on->grad[r];
                         if (!an->grad.empty()) {
                             for (std::size_t j = 0; j < cols; ++j) {
                                 an->grad[r * cols + j] += g * bn->value[r * cols + j];
                             }
                         }
                         if (!bn->grad.empty()) {
                             for (std::size_t j = 0; j < cols; ++j) {
                                 bn->grad[r * cols + j] += g * an->value[r * cols + j];
                             }
                         }
                     }
                 },
                 {&a, &b});
    }
    return out;
}

Tensor row_sum(Tape& t, const Tensor& x) {
    require_rank(x, 2, "row_sum");
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    Tensor out = Tensor::zeros({rows});
    const auto& xv = x.data();
    auto& ov = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < cols; ++j) s += xv[r * cols + j];
        ov[r] = s;
    }
    if (t.tracks(x)) {
        auto xn = x.node(), on = out.node();
        t.attach(out,
                 [xn, on, rows, cols] {
                     if (xn->grad.empty()) return;
                     for (std::size_t r = 0; r < rows; ++r) {
                         const double g = on->grad[r];
                         for (std::size_t j = 0; j < cols; ++j) {
                             xn->grad[r * cols + j] += g;
                         }
                     }
                 },
                 {&x});
    }
    return out;
}

Tensor matvec(Tape& t, const Tensor& a, const Tensor& x) {
    require_rank(a, 2, "matvec matrix");
    if (x.rank() != 1 || x.dim(0) != a.dim(1)) {
        throw ShapeError("matvec: " + shape_str(a.shape()) + " times " +
                         shape_str(x.shape()));
    }
    const std::size_t rows = a.dim(0), cols = a.dim(1);
    Tensor out = Tensor::zeros({rows});
    const auto& av = a.data();
    const auto& xv = x.data();
    auto& ov = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < cols; ++j) s += av[r * cols + j] * xv[j];
        ov[r] = s;
    }
    if (t.tracks(a, x)) {
        auto an = a.node(), xn = x.node(), on = out.node();
        t.attach(out,
                 [an, xn, on, rows, cols] {
                     for (std::size_t r = 0; r < rows; ++r) {
                         const double g = on->grad[r];
                         if (!an->grad.empty()) {
                             for (std::size_t j = 0; j < cols; ++j) {
                                 an->grad[r * cols + j] += g * xn->value[j];
                             }
                         }
                         if (!xn->grad.empty()) {
                             for (std::size_t j = 0; j < cols; ++j) {
                                 xn->grad[j] += g * an->value[r * cols + j];
                             }
                         }
                     }
                 },
                 {&a, &x});
    }
    return out;
}

Tensor weighted_sum(Tape& t, const Tensor& v, std::span<const double> weights) {
    if (v.size() != weights.size()) {
        throw ShapeError("weighted_sum: weight count differs from element count");
    }
    const auto& vv = v.data();
    double s = 0.0;
    for (std::size_t i = 0; i < vv.size(); ++i) s += weights[i] * vv[i];
    Tensor out = Tensor::scalar(s);
    if (t.tracks(v)) {
        auto vn = v.node(), on = out.node();
        std::vector<double> w(weights.begin(), weights.end());
        t.attach(out,
                 [vn, on, w = std::move(w)] {
                     if (vn->grad.empty()) return;
                     const double up = on->grad[0];
                     for (std::size_t i = 0; i < w.size(); ++i) {
                         vn->grad[i] += up * w[i];
                     }
                 },
                 {&v});
    }
    return out;
}

Tensor sum(Tape& t, const Tensor& x) {
    const auto& xv = x.data();
    double s = 0.0;
    for (double v : xv) s += v;
    Tensor out = Tensor::scalar(s);
    if (t.tracks(x)) {
        auto xn = x.node(), on = out.node();
        t.attach(out,
                 [xn, on] {
                     if (xn->grad.empty()) return;
                     const double up = on->grad[0];
                     for (auto& g : xn->grad) g += up;
                 },
                 {&x});
    }
    return out;
}

Tensor mean(Tape& t, const Tensor& x) {
    if (x.size() == 0) throw ShapeError("mean: empty tensor");
    const auto& xv = x.data();
    double s = 0.0;
    for (double v : xv) s += v;
    const double n = static_cast<double>(x.size());
    Tensor out = Tensor::scalar(s / n);
    if (t.tracks(x)) {
        auto xn = x.node(), on = out.node();
        t.attach(out,
                 [xn, on, n] {
                     if (xn->grad.empty()) return;
                     const double up = on->grad[0] / n;
                     for (auto& g : xn->grad) g += up;
                 },
                 {&x});
    }
    return out;
}

Tensor dropout(Tape& t, const Tensor& x, double p, Rng& rng) {
    if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: p must be in [0, 1)");
    if (p == 0.0) return x;
    const std::size_t n = x.size();
    std::vector<double> mask(n);
    const double keep = 1.0 - p;
    for (auto& m : mask) m = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
    Tensor out = Tensor::zeros(x.shape());
    const auto& xv = x.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < n; ++i) ov[i] = xv[i] * mask[i];
    if (t.tracks(x)) {
        auto xn = x.node(), on = out.node();
        t.attach(out,
                 [xn, on, mask = std::move(mask)] {
                     if (xn->grad.empty()) return;
                     for (std::size_t i = 0; i < mask.size(); ++i) {
                         xn->grad[i] += on->grad[i] * mask[i];
                     }
                 },
                 {&x});
    }
    return out;
}

} // namespace dasc
