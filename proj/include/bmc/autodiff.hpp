#pragma once

// Tape-based reverse-mode differentiation over small dense 64-bit tensors.
//
// A Tape records every primitive in creation order, so node indices are a
// valid topological order and the backward pass is a single reverse sweep.
// Tensors are rank 0 (scalar), 1 (vector) or 2 (row-major matrix).

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace bmc::ad {

struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<std::size_t> shape_, std::vector<double> data_);

    static Tensor scalar(double v);
    static Tensor vector(std::vector<double> v);
    static Tensor zeros(std::vector<std::size_t> shape);
    static Tensor filled(std::vector<std::size_t> shape, double v);

    [[nodiscard]] std::size_t size() const { return data.size(); }
    [[nodiscard]] std::size_t rank() const { return shape.size(); }
    [[nodiscard]] std::size_t rows() const;
    [[nodiscard]] std::size_t cols() const;
    [[nodiscard]] double item() const;
    [[nodiscard]] double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    [[nodiscard]] double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

    bool operator==(const Tensor&) const = default;
};

std::string shape_str(const std::vector<std::size_t>& shape);

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while its tape lives.
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    [[nodiscard]] const Tensor& value() const;
    [[nodiscard]] const Tensor& grad() const;
    [[nodiscard]] double item() const { return value().item(); }
    [[nodiscard]] const std::vector<std::size_t>& shape() const { return value().shape; }
};

/// How stop_gradient nodes behave. `record` logs each forward value in call
/// order; `replay` returns the logged values instead of the live ones, which
/// pins every sg-wrapped quantity to a base point for finite differences.
enum class SgMode { live, record, replay };

class Tape {
public:
    Tape() = default;
    explicit Tape(SgMode mode, std::vector<Tensor> frozen = {});
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor value, bool requires_grad = true);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    /// Reverse sweep from a scalar. Resets all gradients first, so repeated
    /// calls on the same tape agree bitwise.
    void backward(Var loss);

    [[nodiscard]] const Tensor& value(int id) const { return nodes_[id].value; }
    [[nodiscard]] const Tensor& grad(int id) const;
    [[nodiscard]] bool requires_grad(int id) const { return nodes_[id].requires_grad; }
    [[nodiscard]] std::size_t size() const { return nodes_.size(); }

    [[nodiscard]] SgMode sg_mode() const { return sg_mode_; }
    [[nodiscard]] const std::vector<Tensor>& sg_log() const { return sg_log_; }

    // Primitive plumbing. `backward` receives the tape and the node's own
    // adjoint; it must accumulate into parents via accumulate().
    using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;
    Var push(Tensor value, std::vector<int> parents, BackwardFn backward);
    void accumulate(int id, const Tensor& g);
    Tensor& grad_slot(int id);

    // Used by stop_gradient.
    Tensor next_frozen(const Tensor& live);

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        std::vector<int> parents;
        BackwardFn backward;
    };
    std::vector<Node> nodes_;
    SgMode sg_mode_ = SgMode::live;
    std::vector<Tensor> sg_log_;
    std::size_t sg_cursor_ = 0;
};

// ---- primitives -----------------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
/// x[n,d] + bias[d] added to every row.
Var add_row(Var x, Var bias);

Var exp(Var a);
/// Throws std::domain_error on any non-positive entry.
Var log(Var a);
Var sigmoid(Var a);
/// log(sigmoid(a)) evaluated without overflow.
Var log_sigmoid(Var a);
Var square(Var a);
Var reciprocal(Var a);
Var relu(Var a);
/// max(a, lo); the adjoint flows only where a > lo.
Var clamp_min(Var a, double lo);
/// min(a, c) against a scalar ceiling; the adjoint flows only where a < c.
Var minimum(Var a, double c);

Var sum(Var a);
Var mean(Var a);
/// Scalar element `i` of a vector.
Var element(Var v, std::size_t i);
/// Stack scalars into a vector.
Var stack(std::span<const Var> scalars);

Var matmul(Var a, Var b);
/// a · bᵀ
Var matmul_nt(Var a, Var b);
Var log_softmax(Var x);
/// Row-wise softmax of `scale * x` with entries above the diagonal masked.
Var causal_softmax(Var x, double scale);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

/// out[i] = x[i, index[i]]
Var gather(Var x, std::span<const int> index);
/// out[i, :] = table[ids[i], :]
Var embedding(Var table, std::span<const int> ids);
Var slice_rows(Var x, std::size_t start, std::size_t count);
Var slice_cols(Var x, std::size_t start, std::size_t count);
Var concat_cols(std::span<const Var> parts);

/// Identity forward, zero adjoint to the parent.
Var stop_gradient(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var operator*(Var a, double c) { return scale(a, c); }
inline Var operator+(Var a, double c) { return add_scalar(a, c); }
inline Var operator+(double c, Var a) { return add_scalar(a, c); }
inline Var operator-(Var a, double c) { return add_scalar(a, -c); }
inline Var operator-(double c, Var a) { return add_scalar(neg(a), c); }

// ---- gradient utilities ---------------------------------------------------

/// Gradients of a scalar with respect to `leaves`, in order.
std::vector<Tensor> grad(Var loss, std::span<const Var> leaves);

using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

enum class FdMode {
    /// stop_gradient values are pinned to their base-point values.
    freeze_sg,
    /// stop_gradient is re-evaluated at every perturbed point.
    naive,
};

struct FdReport {
    std::vector<double> analytic;  // flattened over all params
    std::vector<double> numeric;
    double max_abs_err = 0.0;
    /// max |analytic - numeric| divided by max(‖analytic‖∞, ‖numeric‖∞).
    double max_rel_err = 0.0;
    double value = 0.0;
};

/// Central finite differences of `f` around `params`, compared to reverse mode.
FdReport fd_check(const ScalarFn& f, std::span<const Tensor> params, double h, FdMode mode);

}  // namespace bmc::ad
