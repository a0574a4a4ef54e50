#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "cvlnm/errors.hpp"

namespace cvlnm {

using Scalar = double;
using Shape = std::vector<std::size_t>;

namespace detail {

struct Node {
  Shape shape;
  std::vector<Scalar> data;
  std::vector<Scalar> grad;  // sized lazily, kept in sync with data
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Accumulates this node's grad into its parents' grads.
  std::function<void(Node&)> backward;

  std::size_t size() const { return data.size(); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

/// Dense row-major tensor handle with reverse-mode autodiff. Copies are
/// shallow; the underlying node is shared. Values are immutable once an op
/// has consumed them (by convention; data() is exposed for parameter updates
/// and finite-difference probes, which happen outside any live graph).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Scalar value, bool requires_grad = false);
  static Tensor scalar(Scalar value, bool requires_grad = false);
  static Tensor from(std::vector<Scalar> data, Shape shape,
                     bool requires_grad = false);
  static Tensor vector(std::vector<Scalar> data, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t size() const;
  std::size_t ndim() const;
  std::size_t rows() const;  // 2-D only
  std::size_t cols() const;  // 2-D only
  bool requires_grad() const;

  std::vector<Scalar>& data();
  const std::vector<Scalar>& data() const;
  /// Gradient buffer; allocated (zeroed) on first access.
  std::vector<Scalar>& grad();
  void zero_grad();

  Scalar item() const;                          // scalar tensors only
  Scalar at(std::size_t i) const;               // 1-D
  Scalar at(std::size_t r, std::size_t c) const;  // 2-D

  std::shared_ptr<detail::Node> node() const { return node_; }
  static Tensor wrap(std::shared_ptr<detail::Node> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// While alive, ops do not record the graph; results never require grad.
/// Used for inference and finite-difference probes.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

// ---- ops ----------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise, scalar broadcast
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, Scalar c);

Tensor matmul(const Tensor& a, const Tensor& b);  // (m×k)·(k×n)
Tensor matvec(const Tensor& a, const Tensor& x);  // (m×k)·(k)
Tensor transpose(const Tensor& a);

Tensor softmax(const Tensor& x);       // 1-D
Tensor softmax_rows(const Tensor& x);  // 2-D, per row

enum class Act { Tanh, Relu, LeakyRelu, Sigmoid };
Tensor activation(const Tensor& x, Act kind, Scalar slope = 0.01);
Tensor tanh_t(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, Scalar slope = 0.01);
Tensor sigmoid(const Tensor& x);

Tensor concat(const std::vector<Tensor>& parts);       // 1-D vectors
Tensor hconcat(const std::vector<Tensor>& parts);      // 2-D, along columns
Tensor stack_rows(const std::vector<Tensor>& rows);    // 1-D vectors -> 2-D
Tensor row(const Tensor& a, std::size_t i);            // 2-D -> 1-D
Tensor pick(const Tensor& x, std::size_t i);           // 1-D -> scalar

Tensor sum(const Tensor& x);   // -> scalar
Tensor mean(const Tensor& x);  // -> scalar
Tensor reciprocal(const Tensor& x);  // elementwise 1/x
Tensor log_clamped(const Tensor& x, Scalar floor = 1e-12);

/// Forward: one-hot at argmax of the input distribution. Backward: identity
/// (straight-through).
Tensor straight_through_onehot(const Tensor& probs);

/// Detached copy: same values, no graph connection, never requires grad.
Tensor detach(const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

/// Reverse pass from a scalar loss. Accumulates into .grad() of every
/// requires-grad node reachable from `loss`; each node is visited once.
void backward(const Tensor& loss);

// ---- rng and initialization ---------------------------------------------

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Scalar uniform() { return dist_(engine_); }  // [0,1)
  Scalar uniform(Scalar lo, Scalar hi) { return lo + (hi - lo) * uniform(); }
  Scalar normal() { return normal_(engine_); }
  std::uint64_t integer(std::uint64_t n);  // [0,n)
  std::mt19937_64& engine() { return engine_; }

  /// Full serialized state (engine and both distributions), whitespace
  /// separated decimals; round-trips exactly.
  std::string state() const;
  void set_state(const std::string& state);

 private:
  std::mt19937_64 engine_;
  std::uniform_real_distribution<Scalar> dist_{0.0, 1.0};
  std::normal_distribution<Scalar> normal_{0.0, 1.0};
};

Tensor init_fanin_uniform(Shape shape, std::size_t fan_in, Rng& rng);
Tensor init_normal(Shape shape, Scalar stddev, Rng& rng);

// ---- verification --------------------------------------------------------

struct GradCheckOptions {
  Scalar step = 1e-5;
  std::size_t max_coords_per_param = 40;
  std::uint64_t seed = 0;
  /// Floor of the relative-error denominator. Gradients below this magnitude
  /// are effectively compared in absolute terms, which keeps the check
  /// meaningful where the finite-difference probe cannot resolve a tiny
  /// derivative against the rounding noise of the full loss value.
  Scalar denom_floor = 1e-8;
  /// Skip coordinates where the forward and backward one-sided differences
  /// disagree strongly, i.e. where an activation kink (ReLU-style) lies
  /// inside the probe window. A central difference is not a valid derivative
  /// estimate at such points, while the subgradient taken by the reverse pass
  /// is still correct.
  bool skip_nonsmooth = false;
};

/// Max relative error between autodiff and central finite differences over
/// sampled coordinates of `params`. `f` must rebuild the forward graph on
/// every call.
Scalar grad_check(const std::function<Tensor()>& f,
                  const std::vector<Tensor>& params,
                  const GradCheckOptions& options = {});

std::string shape_str(const Shape& s);

}  // namespace cvlnm
