#include "bmc/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace bmc::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using MapM = Eigen::Map<RowMat>;

[[noreturn]] void shape_error(const char* op, const std::vector<std::size_t>& a,
                              const std::vector<std::size_t>& b) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                                shape_str(b));
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
    if (t.rank() != rank)
        throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) +
                                    ", got " + shape_str(t.shape));
}

void same_tape(Var a, Var b) {
    if (a.tape != b.tape || a.tape == nullptr) throw std::invalid_argument("vars from different tapes");
}

MapC as_mat(const Tensor& t) {
    return MapC(t.data.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

double stable_sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Elementwise unary op with derivative expressed via input and output values.
template <class F, class D>
Var unary(Var a, F f, D dfdx) {
    const Tensor& av = a.value();
    Tensor out{av.shape, std::vector<double>(av.size())};
    for (std::size_t i = 0; i < av.size(); ++i) out.data[i] = f(av.data[i]);
    const int ia = a.id;
    return a.tape->push(std::move(out), {ia}, [ia, dfdx](Tape& tape, const Tensor& g) {
        const Tensor& x = tape.value(ia);
        Tensor& slot = tape.grad_slot(ia);
        for (std::size_t i = 0; i < g.size(); ++i) slot.data[i] += g.data[i] * dfdx(x.data[i]);
    });
}

}  // namespace

// ---- Tensor ---------------------------------------------------------------

Tensor::Tensor(std::vector<std::size_t> shape_, std::vector<double> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
    const std::size_t n =
        std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    if (n != data.size())
        throw std::invalid_argument("tensor data size " + std::to_string(data.size()) +
                                    " does not match shape " + shape_str(shape));
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }
Tensor Tensor::vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor({n}, std::move(v));
}
Tensor Tensor::zeros(std::vector<std::size_t> shape) { return filled(std::move(shape), 0.0); }
Tensor Tensor::filled(std::vector<std::size_t> shape, double v) {
    const std::size_t n =
        std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    return Tensor(std::move(shape), std::vector<double>(n, v));
}

std::size_t Tensor::rows() const {
    if (rank() == 2) return shape[0];
    return 1;
}

std::size_t Tensor::cols() const {
    if (rank() == 2) return shape[1];
    if (rank() == 1) return shape[0];
    return 1;
}

double Tensor::item() const {
    if (data.size() != 1) throw std::invalid_argument("item() on tensor of shape " + shape_str(shape));
    return data[0];
}

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

// ---- Var / Tape -----------------------------------------------------------

const Tensor& Var::value() const { return tape->value(id); }
const Tensor& Var::grad() const { return tape->grad(id); }

Tape::Tape(SgMode mode, std::vector<Tensor> frozen) : sg_mode_(mode) {
    if (mode == SgMode::replay) sg_log_ = std::move(frozen);
}

Var Tape::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::push(Tensor value, std::vector<int> parents, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = std::any_of(parents.begin(), parents.end(),
                                  [this](int p) { return nodes_[p].requires_grad; });
    if (n.requires_grad) {
        n.parents = std::move(parents);
        n.backward = std::move(backward);
    }
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Tensor& Tape::grad_slot(int id) {
    Node& n = nodes_[id];
    if (n.grad.data.size() != n.value.data.size()) n.grad = Tensor::zeros(n.value.shape);
    return n.grad;
}

void Tape::accumulate(int id, const Tensor& g) {
    if (!nodes_[id].requires_grad) return;
    Tensor& slot = grad_slot(id);
    for (std::size_t i = 0; i < g.size(); ++i) slot.data[i] += g.data[i];
}

const Tensor& Tape::grad(int id) const {
    const Node& n = nodes_.at(id);
    if (n.grad.data.size() != n.value.data.size())
        throw std::logic_error("gradient not available for node " + std::to_string(id));
    return n.grad;
}

void Tape::backward(Var loss) {
    if (loss.tape != this) throw std::invalid_argument("backward: var belongs to another tape");
    if (loss.value().size() != 1 || loss.value().rank() > 1)
        throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss.shape()));
    for (auto& n : nodes_)
        if (n.requires_grad) n.grad = Tensor::zeros(n.value.shape);
    if (!nodes_[loss.id].requires_grad) return;
    nodes_[loss.id].grad.data[0] = 1.0;
    for (int i = loss.id; i >= 0; --i) {
        Node& n = nodes_[i];
        if (!n.requires_grad || !n.backward) continue;
        n.backward(*this, n.grad);
    }
}

Tensor Tape::next_frozen(const Tensor& live) {
    switch (sg_mode_) {
        case SgMode::live:
            return live;
        case SgMode::record:
            sg_log_.push_back(live);
            return live;
        case SgMode::replay: {
            if (sg_cursor_ >= sg_log_.size())
                throw std::logic_error("stop_gradient replay: more sg calls than recorded");
            const Tensor& t = sg_log_[sg_cursor_++];
            if (t.shape != live.shape) shape_error("stop_gradient replay", t.shape, live.shape);
            return t;
        }
    }
    return live;
}

// ---- elementwise ----------------------------------------------------------

Var add(Var a, Var b) {
    same_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.shape != bv.shape) shape_error("add", av.shape, bv.shape);
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv.data[i];
    const int ia = a.id, ib = b.id;
    return a.tape->push(std::move(out), {ia, ib}, [ia, ib](Tape& t, const Tensor& g) {
        t.accumulate(ia, g);
        t.accumulate(ib, g);
    });
}

Var sub(Var a, Var b) {
    same_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.shape != bv.shape) shape_error("sub", av.shape, bv.shape);
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= bv.data[i];
    const int ia = a.id, ib = b.id;
    return a.tape->push(std::move(out), {ia, ib}, [ia, ib](Tape& t, const Tensor& g) {
        t.accumulate(ia, g);
        if (t.requires_grad(ib)) {
            Tensor& s = t.grad_slot(ib);
            for (std::size_t i = 0; i < g.size(); ++i) s.data[i] -= g.data[i];
        }
    });
}

Var mul(Var a, Var b) {
    same_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.shape != bv.shape) shape_error("mul", av.shape, bv.shape);
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= bv.data[i];
    const int ia = a.id, ib = b.id;
    return a.tape->push(std::move(out), {ia, ib}, [ia, ib](Tape& t, const Tensor& g) {
        if (t.requires_grad(ia)) {
            const Tensor& y = t.value(ib);
            Tensor& s = t.grad_slot(ia);
            for (std::size_t i = 0; i < g.size(); ++i) s.data[i] += g.data[i] * y.data[i];
        }
        if (t.requires_grad(ib)) {
            const Tensor& x = t.value(ia);
            Tensor& s = t.grad_slot(ib);
            for (std::size_t i = 0; i < g.size(); ++i) s.data[i] += g.data[i] * x.data[i];
        }
    });
}

Var neg(Var a) { return scale(a, -1.0); }

Var scale(Var a, double c) {
    return unary(a, [c](double x) { return c * x; }, [c](double) { return c; });
}

Var add_scalar(Var a, double c) {
    return unary(a, [c](double x) { return x + c; }, [](double) { return 1.0; });
}

Var add_row(Var x, Var bias) {
    same_tape(x, bias);
    const Tensor& xv = x.value();
    const Tensor& bv = bias.value();
    require_rank("add_row", xv, 2);
    require_rank("add_row", bv, 1);
    if (xv.cols() != bv.size()) shape_error("add_row", xv.shape, bv.shape);
    Tensor out = xv;
    const std::size_t n = xv.rows(), d = xv.cols();
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) out.data[r * d + c] += bv.data[c];
    const int ix = x.id, ib = bias.id;
    return x.tape->push(std::move(out), {ix, ib}, [ix, ib, n, d](Tape& t, const Tensor& g) {
        t.accumulate(ix, g);
        if (t.requires_grad(ib)) {
            Tensor& s = t.grad_slot(ib);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < d; ++c) s.data[c] += g.data[r * d + c];
        }
    });
}

Var exp(Var a) {
    return unary(a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Var log(Var a) {
    for (double v : a.value().data)
        if (!(v > 0.0)) throw std::domain_error("log of non-positive value " + std::to_string(v));
    return unary(a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Var sigmoid(Var a) {
    return unary(a, stable_sigmoid, [](double x) {
        const double s = stable_sigmoid(x);
        return s * (1.0 - s);
    });
}

Var log_sigmoid(Var a) {
    return unary(
        a, [](double x) { return std::min(x, 0.0) - std::log1p(std::exp(-std::abs(x))); },
        [](double x) { return stable_sigmoid(-x); });
}

Var square(Var a) {
    return unary(a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var reciprocal(Var a) {
    for (double v : a.value().data)
        if (v == 0.0) throw std::domain_error("reciprocal of zero");
    return unary(a, [](double x) { return 1.0 / x; }, [](double x) { return -1.0 / (x * x); });
}

Var relu(Var a) {
    return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                 [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var clamp_min(Var a, double lo) {
    return unary(a, [lo](double x) { return x > lo ? x : lo; },
                 [lo](double x) { return x > lo ? 1.0 : 0.0; });
}

Var minimum(Var a, double c) {
    return unary(a, [c](double x) { return x < c ? x : c; },
                 [c](double x) { return x < c ? 1.0 : 0.0; });
}

// ---- reductions / indexing ------------------------------------------------

Var sum(Var a) {
    const Tensor& av = a.value();
    double s = 0.0;
    for (double v : av.data) s += v;
    const int ia = a.id;
    return a.tape->push(Tensor::scalar(s), {ia}, [ia](Tape& t, const Tensor& g) {
        Tensor& slot = t.grad_slot(ia);
        for (double& v : slot.data) v += g.data[0];
    });
}

Var mean(Var a) {
    const std::size_t n = a.value().size();
    if (n == 0) throw std::invalid_argument("mean of empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var element(Var v, std::size_t i) {
    const Tensor& vv = v.value();
    if (i >= vv.size()) throw std::out_of_range("element index out of range");
    const int iv = v.id;
    return v.tape->push(Tensor::scalar(vv.data[i]), {iv},
                        [iv, i](Tape& t, const Tensor& g) { t.grad_slot(iv).data[i] += g.data[0]; });
}

Var stack(std::span<const Var> scalars) {
    if (scalars.empty()) throw std::invalid_argument("stack of zero scalars");
    Tape* tape = scalars.front().tape;
    std::vector<double> vals;
    std::vector<int> ids;
    for (const Var& s : scalars) {
        if (s.tape != tape) throw std::invalid_argument("vars from different tapes");
        if (s.value().size() != 1) throw std::invalid_argument("stack expects scalars");
        vals.push_back(s.value().data[0]);
        ids.push_back(s.id);
    }
    return tape->push(Tensor::vector(std::move(vals)), ids, [ids](Tape& t, const Tensor& g) {
        for (std::size_t i = 0; i < ids.size(); ++i)
            if (t.requires_grad(ids[i])) t.grad_slot(ids[i]).data[0] += g.data[i];
    });
}

// ---- matrix ops -----------------------------------------------------------

Var matmul(Var a, Var b) {
    same_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_rank("matmul", av, 2);
    require_rank("matmul", bv, 2);
    if (av.cols() != bv.rows()) shape_error("matmul", av.shape, bv.shape);
    Tensor out = Tensor::zeros({av.rows(), bv.cols()});
    MapM(out.data.data(), av.rows(), bv.cols()).noalias() = as_mat(av) * as_mat(bv);
    const int ia = a.id, ib = b.id;
    return a.tape->push(std::move(out), {ia, ib}, [ia, ib](Tape& t, const Tensor& g) {
        const Tensor& x = t.value(ia);
        const Tensor& y = t.value(ib);
        if (t.requires_grad(ia)) {
            Tensor& s = t.grad_slot(ia);
            MapM(s.data.data(), x.rows(), x.cols()).noalias() += as_mat(g) * as_mat(y).transpose();
        }
        if (t.requires_grad(ib)) {
            Tensor& s = t.grad_slot(ib);
            MapM(s.data.data(), y.rows(), y.cols()).noalias() += as_mat(x).transpose() * as_mat(g);
        }
    });
}

Var matmul_nt(Var a, Var b) {
    same_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_rank("matmul_nt", av, 2);
    require_rank("matmul_nt", bv, 2);
    if (av.cols() != bv.cols()) shape_error("matmul_nt", av.shape, bv.shape);
    Tensor out = Tensor::zeros({av.rows(), bv.rows()});
    MapM(out.data.data(), av.rows(), bv.rows()).noalias() = as_mat(av) * as_mat(bv).transpose();
    const int ia = a.id, ib = b.id;
    return a.tape->push(std::move(out), {ia, ib}, [ia, ib](Tape& t, const Tensor& g) {
        const Tensor& x = t.value(ia);
        const Tensor& y = t.value(ib);
        if (t.requires_grad(ia)) {
            Tensor& s = t.grad_slot(ia);
            MapM(s.data.data(), x.rows(), x.cols()).noalias() += as_mat(g) * as_mat(y);
        }
        if (t.requires_grad(ib)) {
            Tensor& s = t.grad_slot(ib);
            MapM(s.data.data(), y.rows(), y.cols()).noalias() += as_mat(g).transpose() * as_mat(x);
        }
    });
}


Var log_softmax(Var x) {
    const Tensor& xv = x.value();
    if (xv.rank() != 1 && xv.rank() != 2)
        throw std::invalid_argument("log_softmax: expected rank 1 or 2, got " + shape_str(xv.shape));
    const std::size_t n = xv.rows(), d = xv.cols();
    Tensor out = xv;
    for (std::size_t r = 0; r < n; ++r) {
        double* row = out.data.data() + r * d;
        const double mx = *std::max_element(row, row + d);
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += std::exp(row[c] - mx);
        const double lse = mx + std::log(s);
        for (std::size_t c = 0; c < d; ++c) row[c] -= lse;
    }
    const int ix = x.id;
    const int self = static_cast<int>(x.tape->size());
    return x.tape->push(std::move(out), {ix}, [ix, self, n, d](Tape& t, const Tensor& g) {
        const Tensor& y = t.value(self);
        Tensor& s = t.grad_slot(ix);
        for (std::size_t r = 0; r < n; ++r) {
            const double* gr = g.data.data() + r * d;
            const double* yr = y.data.data() + r * d;
            double gs = 0.0;
            for (std::size_t c = 0; c < d; ++c) gs += gr[c];
            double* sr = s.data.data() + r * d;
            for (std::size_t c = 0; c < d; ++c) sr[c] += gr[c] - std::exp(yr[c]) * gs;
        }
    });
}

Var causal_softmax(Var x, double scale_) {
    const Tensor& xv = x.value();
    require_rank("causal_softmax", xv, 2);
    const std::size_t n = xv.rows(), m = xv.cols();
    if (n != m) shape_error("causal_softmax", xv.shape, {n, n});
    Tensor out = Tensor::zeros({n, n});
    for (std::size_t r = 0; r < n; ++r) {
        const double* xr = xv.data.data() + r * n;
        double* pr = out.data.data() + r * n;
        double mx = scale_ * xr[0];
        for (std::size_t c = 1; c <= r; ++c) mx = std::max(mx, scale_ * xr[c]);
        double s = 0.0;
        for (std::size_t c = 0; c <= r; ++c) {
            pr[c] = std::exp(scale_ * xr[c] - mx);
            s += pr[c];
        }
        for (std::size_t c = 0; c <= r; ++c) pr[c] /= s;
    }
    const int ix = x.id;
    const int self = static_cast<int>(x.tape->size());
    return x.tape->push(std::move(out), {ix}, [ix, self, n, scale_](Tape& t, const Tensor& g) {
        const Tensor& p = t.value(self);
        Tensor& s = t.grad_slot(ix);
        for (std::size_t r = 0; r < n; ++r) {
            const double* pr = p.data.data() + r * n;
            const double* gr = g.data.data() + r * n;
            double dot = 0.0;
            for (std::size_t c = 0; c <= r; ++c) dot += pr[c] * gr[c];
            double* sr = s.data.data() + r * n;
            for (std::size_t c = 0; c <= r; ++c) sr[c] += scale_ * pr[c] * (gr[c] - dot);
        }
    });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
    same_tape(x, gain);
    same_tape(x, bias);
    const Tensor& xv = x.value();
    require_rank("layer_norm", xv, 2);
    const std::size_t n = xv.rows(), d = xv.cols();
    if (gain.value().shape != std::vector<std::size_t>{d}) shape_error("layer_norm", xv.shape, gain.shape());
    if (bias.value().shape != std::vector<std::size_t>{d}) shape_error("layer_norm", xv.shape, bias.shape());
    const Tensor& gv = gain.value();
    const Tensor& bv = bias.value();
    Tensor out = Tensor::zeros({n, d});
    // Normalized rows and inverse std are kept for the adjoint.
    auto xhat = std::make_shared<std::vector<double>>(n * d);
    auto rstd = std::make_shared<std::vector<double>>(n);
    for (std::size_t r = 0; r < n; ++r) {
        const double* xr = xv.data.data() + r * d;
        double mu = 0.0;
        for (std::size_t c = 0; c < d; ++c) mu += xr[c];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mu) * (xr[c] - mu);
        var /= static_cast<double>(d);
        const double rs = 1.0 / std::sqrt(var + eps);
        (*rstd)[r] = rs;
        for (std::size_t c = 0; c < d; ++c) {
            const double h = (xr[c] - mu) * rs;
            (*xhat)[r * d + c] = h;
            out.data[r * d + c] = h * gv.data[c] + bv.data[c];
        }
    }
    const int ix = x.id, ig = gain.id, ib = bias.id;
    return x.tape->push(
        std::move(out), {ix, ig, ib}, [ix, ig, ib, n, d, xhat, rstd](Tape& t, const Tensor& g) {
            const Tensor& gv = t.value(ig);
            if (t.requires_grad(ig)) {
                Tensor& s = t.grad_slot(ig);
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t c = 0; c < d; ++c) s.data[c] += g.data[r * d + c] * (*xhat)[r * d + c];
            }
            if (t.requires_grad(ib)) {
                Tensor& s = t.grad_slot(ib);
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t c = 0; c < d; ++c) s.data[c] += g.data[r * d + c];
            }
            if (t.requires_grad(ix)) {
                Tensor& s = t.grad_slot(ix);
                const double inv_d = 1.0 / static_cast<double>(d);
                for (std::size_t r = 0; r < n; ++r) {
                    double m1 = 0.0, m2 = 0.0;
                    for (std::size_t c = 0; c < d; ++c) {
                        const double dh = g.data[r * d + c] * gv.data[c];
                        m1 += dh;
                        m2 += dh * (*xhat)[r * d + c];
                    }
                    m1 *= inv_d;
                    m2 *= inv_d;
                    for (std::size_t c = 0; c < d; ++c) {
                        const double dh = g.data[r * d + c] * gv.data[c];
                        s.data[r * d + c] += (*rstd)[r] * (dh - m1 - (*xhat)[r * d + c] * m2);
                    }
                }
            }
        });
}

Var gather(Var x, std::span<const int> index) {
    const Tensor& xv = x.value();
    require_rank("gather", xv, 2);
    const std::size_t n = xv.rows(), d = xv.cols();
    if (index.size() != n) shape_error("gather", xv.shape, {index.size()});
    std::vector<int> idx(index.begin(), index.end());
    Tensor out = Tensor::zeros({n});
    for (std::size_t r = 0; r < n; ++r) {
        if (idx[r] < 0 || static_cast<std::size_t>(idx[r]) >= d) throw std::out_of_range("gather index");
        out.data[r] = xv.data[r * d + static_cast<std::size_t>(idx[r])];
    }
    const int ix = x.id;
    return x.tape->push(std::move(out), {ix}, [ix, idx, d](Tape& t, const Tensor& g) {
        Tensor& s = t.grad_slot(ix);
        for (std::size_t r = 0; r < idx.size(); ++r) s.data[r * d + static_cast<std::size_t>(idx[r])] += g.data[r];
    });
}

Var embedding(Var table, std::span<const int> ids) {
    const Tensor& tv = table.value();
    require_rank("embedding", tv, 2);
    const std::size_t v = tv.rows(), d = tv.cols();
    std::vector<int> idx(ids.begin(), ids.end());
    Tensor out = Tensor::zeros({idx.size(), d});
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] < 0 || static_cast<std::size_t>(idx[r]) >= v) throw std::out_of_range("embedding id");
        std::copy_n(tv.data.begin() + static_cast<std::ptrdiff_t>(idx[r] * d), d,
                    out.data.begin() + static_cast<std::ptrdiff_t>(r * d));
    }
    const int it = table.id;
    return table.tape->push(std::move(out), {it}, [it, idx, d](Tape& t, const Tensor& g) {
        Tensor& s = t.grad_slot(it);
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (std::size_t c = 0; c < d; ++c) s.data[static_cast<std::size_t>(idx[r]) * d + c] += g.data[r * d + c];
    });
}

Var slice_rows(Var x, std::size_t start, std::size_t count) {
    const Tensor& xv = x.value();
    require_rank("slice_rows", xv, 2);
    const std::size_t d = xv.cols();
    if (start + count > xv.rows()) throw std::out_of_range("slice_rows out of range");
    Tensor out({count, d}, std::vector<double>(xv.data.begin() + static_cast<std::ptrdiff_t>(start * d),
                                               xv.data.begin() + static_cast<std::ptrdiff_t>((start + count) * d)));
    const int ix = x.id;
    return x.tape->push(std::move(out), {ix}, [ix, start, d](Tape& t, const Tensor& g) {
        Tensor& s = t.grad_slot(ix);
        for (std::size_t i = 0; i < g.size(); ++i) s.data[start * d + i] += g.data[i];
    });
}

Var slice_cols(Var x, std::size_t start, std::size_t count) {
    const Tensor& xv = x.value();
    require_rank("slice_cols", xv, 2);
    const std::size_t n = xv.rows(), d = xv.cols();
    if (start + count > d) throw std::out_of_range("slice_cols out of range");
    Tensor out = Tensor::zeros({n, count});
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < count; ++c) out.data[r * count + c] = xv.data[r * d + start + c];
    const int ix = x.id;
    return x.tape->push(std::move(out), {ix}, [ix, start, count, n, d](Tape& t, const Tensor& g) {
        Tensor& s = t.grad_slot(ix);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < count; ++c) s.data[r * d + start + c] += g.data[r * count + c];
    });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols of nothing");
    Tape* tape = parts.front().tape;
    const std::size_t n = parts.front().value().rows();
    std::vector<int> ids;
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const Var& p : parts) {
        if (p.tape != tape) throw std::invalid_argument("vars from different tapes");
        require_rank("concat_cols", p.value(), 2);
        if (p.value().rows() != n) shape_error("concat_cols", parts.front().shape(), p.shape());
        ids.push_back(p.id);
        widths.push_back(p.value().cols());
        total += p.value().cols();
    }
    Tensor out = Tensor::zeros({n, total});
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor& pv = parts[k].value();
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < widths[k]; ++c) out.data[r * total + off + c] = pv.data[r * widths[k] + c];
        off += widths[k];
    }
    return tape->push(std::move(out), ids, [ids, widths, n, total](Tape& t, const Tensor& g) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (t.requires_grad(ids[k])) {
                Tensor& s = t.grad_slot(ids[k]);
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t c = 0; c < widths[k]; ++c) s.data[r * widths[k] + c] += g.data[r * total + off + c];
            }
            off += widths[k];
        }
    });
}

Var stop_gradient(Var a) {
    Tensor v = a.tape->next_frozen(a.value());
    return a.tape->constant(std::move(v));
}

// ---- gradient utilities ---------------------------------------------------

std::vector<Tensor> grad(Var loss, std::span<const Var> leaves) {
    loss.tape->backward(loss);
    std::vector<Tensor> out;
    out.reserve(leaves.size());
    for (const Var& l : leaves) {
        if (l.tape->requires_grad(l.id))
            out.push_back(l.grad());
        else
            out.push_back(Tensor::zeros(l.shape()));
    }
    return out;
}

FdReport fd_check(const ScalarFn& f, std::span<const Tensor> params, double h, FdMode mode) {
    if (!(h > 0.0)) throw std::invalid_argument("fd_check: h must be positive");
    FdReport report;
    std::vector<Tensor> base_sg;
    {
        Tape tape(SgMode::record);
        std::vector<Var> leaves;
        for (const Tensor& p : params) leaves.push_back(tape.leaf(p, true));
        Var loss = f(tape, leaves);
        report.value = loss.item();
        for (const Tensor& g : grad(loss, leaves))
            report.analytic.insert(report.analytic.end(), g.data.begin(), g.data.end());
        base_sg = tape.sg_log();
    }
    auto eval = [&](std::vector<Tensor>& ps) {
        Tape tape(mode == FdMode::freeze_sg ? SgMode::replay : SgMode::live,
                  mode == FdMode::freeze_sg ? base_sg : std::vector<Tensor>{});
        std::vector<Var> leaves;
        for (const Tensor& p : ps) leaves.push_back(tape.constant(p));
        return f(tape, leaves).item();
    };
    std::vector<Tensor> work(params.begin(), params.end());
    for (auto& p : work) {
        for (double& x : p.data) {
            const double x0 = x;
            x = x0 + h;
            const double fp = eval(work);
            x = x0 - h;
            const double fm = eval(work);
            x = x0;
            report.numeric.push_back((fp - fm) / (2.0 * h));
        }
    }
    double scale_ = 0.0;
    for (std::size_t i = 0; i < report.analytic.size(); ++i) {
        report.max_abs_err = std::max(report.max_abs_err, std::abs(report.analytic[i] - report.numeric[i]));
        scale_ = std::max({scale_, std::abs(report.analytic[i]), std::abs(report.numeric[i])});
    }
    report.max_rel_err = scale_ > 0.0 ? report.max_abs_err / scale_ : report.max_abs_err;
    return report;
}

}  // namespace bmc::ad
