#include "cvlnm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace cvlnm {

namespace {

thread_local bool g_grad_enabled = true;

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

using NodePtr = std::shared_ptr<detail::Node>;

NodePtr make_leaf(Shape shape, std::vector<Scalar> data, bool requires_grad) {
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->requires_grad = requires_grad && g_grad_enabled;
  return n;
}

Tensor make_op(Shape shape, std::vector<Scalar> data, const char* op,
               std::vector<NodePtr> parents,
               std::function<void(detail::Node&)> backward) {
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->op = op;
  if (g_grad_enabled) {
    bool needs = false;
    for (const auto& p : parents)
      if (p->requires_grad) needs = true;
    if (needs) {
      n->requires_grad = true;
      n->parents = std::move(parents);
      n->backward = std::move(backward);
    }
  }
  return Tensor::wrap(std::move(n));
}

void check_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ShapeError(std::string(op) + ": undefined tensor");
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

// ---- Tensor basics --------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = shape_numel(shape);
  return wrap(make_leaf(std::move(shape), std::vector<Scalar>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, Scalar value, bool requires_grad) {
  auto n = shape_numel(shape);
  return wrap(make_leaf(std::move(shape), std::vector<Scalar>(n, value), requires_grad));
}

Tensor Tensor::scalar(Scalar value, bool requires_grad) {
  return wrap(make_leaf({}, {value}, requires_grad));
}

Tensor Tensor::from(std::vector<Scalar> data, Shape shape, bool requires_grad) {
  if (shape_numel(shape) != data.size())
    throw ShapeError("Tensor::from: " + std::to_string(data.size()) +
                     " values do not fill shape " + shape_str(shape));
  return wrap(make_leaf(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::vector(std::vector<Scalar> data, bool requires_grad) {
  Shape s{data.size()};
  return wrap(make_leaf(std::move(s), std::move(data), requires_grad));
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->data.size(); }
std::size_t Tensor::ndim() const { return node_->shape.size(); }

std::size_t Tensor::rows() const {
  if (ndim() != 2) throw ShapeError("rows(): tensor is not 2-D, shape " + shape_str(shape()));
  return node_->shape[0];
}

std::size_t Tensor::cols() const {
  if (ndim() != 2) throw ShapeError("cols(): tensor is not 2-D, shape " + shape_str(shape()));
  return node_->shape[1];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

std::vector<Scalar>& Tensor::data() { return node_->data; }
const std::vector<Scalar>& Tensor::data() const { return node_->data; }

std::vector<Scalar>& Tensor::grad() {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  node_->grad.assign(node_->data.size(), 0.0);
}

Scalar Tensor::item() const {
  if (size() != 1) throw ShapeError("item(): tensor has " + std::to_string(size()) + " elements");
  return node_->data[0];
}

Scalar Tensor::at(std::size_t i) const { return node_->data.at(i); }

Scalar Tensor::at(std::size_t r, std::size_t c) const {
  return node_->data.at(r * cols() + c);
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

// ---- elementwise ops -------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_defined(a, "add");
  check_defined(b, "add");
  const auto& da = a.data();
  const auto& db = b.data();
  if (a.shape() == b.shape()) {
    std::vector<Scalar> out(da.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] + db[i];
    return make_op(a.shape(), std::move(out), "add", {a.node(), b.node()},
                   [](detail::Node& self) {
                     for (int side = 0; side < 2; ++side) {
                       auto& p = *self.parents[side];
                       if (!p.requires_grad) continue;
                       p.ensure_grad();
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                         p.grad[i] += self.grad[i];
                     }
                   });
  }
  if (b.size() == 1 && b.ndim() <= 1) {
    Scalar c = b.data()[0];
    std::vector<Scalar> out(da.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] + c;
    return make_op(a.shape(), std::move(out), "add_scalar", {a.node(), b.node()},
                   [](detail::Node& self) {
                     auto& pa = *self.parents[0];
                     auto& pb = *self.parents[1];
                     if (pa.requires_grad) {
                       pa.ensure_grad();
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                         pa.grad[i] += self.grad[i];
                     }
                     if (pb.requires_grad) {
                       pb.ensure_grad();
                       Scalar s = 0;
                       for (Scalar g : self.grad) s += g;
                       pb.grad[0] += s;
                     }
                   });
  }
  if (a.size() == 1 && a.ndim() <= 1) return add(b, a);
  if (a.ndim() == 2 && b.ndim() == 1 && a.cols() == b.size()) {
    // row broadcast (bias add)
    std::size_t r = a.rows(), c = a.cols();
    std::vector<Scalar> out(da.size());
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[i * c + j] = da[i * c + j] + db[j];
    return make_op(a.shape(), std::move(out), "add_rows", {a.node(), b.node()},
                   [r, c](detail::Node& self) {
                     auto& pa = *self.parents[0];
                     auto& pb = *self.parents[1];
                     if (pa.requires_grad) {
                       pa.ensure_grad();
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                         pa.grad[i] += self.grad[i];
                     }
                     if (pb.requires_grad) {
                       pb.ensure_grad();
                       for (std::size_t i = 0; i < r; ++i)
                         for (std::size_t j = 0; j < c; ++j)
                           pb.grad[j] += self.grad[i * c + j];
                     }
                   });
  }
  throw ShapeError("add: incompatible shapes " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()));
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, neg(b)); }

Tensor mul(const Tensor& a, const Tensor& b) {
  check_defined(a, "mul");
  check_defined(b, "mul");
  const auto& da = a.data();
  const auto& db = b.data();
  if (a.shape() == b.shape()) {
    std::vector<Scalar> out(da.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * db[i];
    return make_op(a.shape(), std::move(out), "mul", {a.node(), b.node()},
                   [](detail::Node& self) {
                     auto& pa = *self.parents[0];
                     auto& pb = *self.parents[1];
                     if (pa.requires_grad) {
                       pa.ensure_grad();
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                         pa.grad[i] += self.grad[i] * pb.data[i];
                     }
                     if (pb.requires_grad) {
                       pb.ensure_grad();
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                         pb.grad[i] += self.grad[i] * pa.data[i];
                     }
                   });
  }
  if (b.size() == 1 && b.ndim() <= 1) {
    Scalar c = db[0];
    std::vector<Scalar> out(da.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * c;
    return make_op(a.shape(), std::move(out), "mul_scalar", {a.node(), b.node()},
                   [](detail::Node& self) {
                     auto& pa = *self.parents[0];
                     auto& pb = *self.parents[1];
                     if (pa.requires_grad) {
                       pa.ensure_grad();
                       Scalar c = pb.data[0];
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                         pa.grad[i] += self.grad[i] * c;
                     }
                     if (pb.requires_grad) {
                       pb.ensure_grad();
                       Scalar s = 0;
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                         s += self.grad[i] * pa.data[i];
                       pb.grad[0] += s;
                     }
                   });
  }
  if (a.size() == 1 && a.ndim() <= 1) return mul(b, a);
  throw ShapeError("mul: incompatible shapes " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()));
}

Tensor scale(const Tensor& a, Scalar c) {
  check_defined(a, "scale");
  std::vector<Scalar> out(a.size());
  const auto& da = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * c;
  return make_op(a.shape(), std::move(out), "scale", {a.node()},
                 [c](detail::Node& self) {
                   auto& p = *self.parents[0];
                   p.ensure_grad();
                   for (std::size_t i = 0; i < self.grad.size(); ++i)
                     p.grad[i] += self.grad[i] * c;
                 });
}

// ---- linear algebra --------------------------------------------------------

namespace {

// c[m×n] += a[m×k]·b[k×n]
void mm_nn(const Scalar* a, const Scalar* b, Scalar* c, std::size_t m,
           std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t l = 0; l < k; ++l) {
      Scalar av = a[i * k + l];
      if (av == 0.0) continue;
      const Scalar* brow = b + l * n;
      Scalar* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
}

// c[m×n] += a[m×k]·b[n×k]ᵀ
void mm_nt(const Scalar* a, const Scalar* b, Scalar* c, std::size_t m,
           std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      Scalar s = 0;
      const Scalar* arow = a + i * k;
      const Scalar* brow = b + j * k;
      for (std::size_t l = 0; l < k; ++l) s += arow[l] * brow[l];
      c[i * n + j] += s;
    }
}

// c[m×n] += a[k×m]ᵀ·b[k×n]
void mm_tn(const Scalar* a, const Scalar* b, Scalar* c, std::size_t m,
           std::size_t k, std::size_t n) {
  for (std::size_t l = 0; l < k; ++l)
    for (std::size_t i = 0; i < m; ++i) {
      Scalar av = a[l * m + i];
      if (av == 0.0) continue;
      const Scalar* brow = b + l * n;
      Scalar* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_defined(a, "matmul");
  check_defined(b, "matmul");
  if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.rows())
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<Scalar> out(m * n, 0.0);
  mm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  return make_op({m, n}, std::move(out), "matmul", {a.node(), b.node()},
                 [m, k, n](detail::Node& self) {
                   auto& pa = *self.parents[0];
                   auto& pb = *self.parents[1];
                   if (pa.requires_grad) {
                     pa.ensure_grad();
                     // dA = dC · Bᵀ
                     mm_nt(self.grad.data(), pb.data.data(), pa.grad.data(), m, n, k);
                   }
                   if (pb.requires_grad) {
                     pb.ensure_grad();
                     // dB = Aᵀ · dC
                     mm_tn(pa.data.data(), self.grad.data(), pb.grad.data(), k, m, n);
                   }
                 });
}

Tensor matvec(const Tensor& a, const Tensor& x) {
  check_defined(a, "matvec");
  check_defined(x, "matvec");
  if (a.ndim() != 2 || x.ndim() != 1 || a.cols() != x.size())
    throw ShapeError("matvec: incompatible shapes " + shape_str(a.shape()) +
                     " and " + shape_str(x.shape()));
  std::size_t m = a.rows(), k = a.cols();
  std::vector<Scalar> out(m, 0.0);
  const auto& da = a.data();
  const auto& dx = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    Scalar s = 0;
    for (std::size_t l = 0; l < k; ++l) s += da[i * k + l] * dx[l];
    out[i] = s;
  }
  return make_op({m}, std::move(out), "matvec", {a.node(), x.node()},
                 [m, k](detail::Node& self) {
                   auto& pa = *self.parents[0];
                   auto& px = *self.parents[1];
                   if (pa.requires_grad) {
                     pa.ensure_grad();
                     for (std::size_t i = 0; i < m; ++i) {
                       Scalar g = self.grad[i];
                       if (g == 0.0) continue;
                       for (std::size_t l = 0; l < k; ++l)
                         pa.grad[i * k + l] += g * px.data[l];
                     }
                   }
                   if (px.requires_grad) {
                     px.ensure_grad();
                     for (std::size_t i = 0; i < m; ++i) {
                       Scalar g = self.grad[i];
                       if (g == 0.0) continue;
                       for (std::size_t l = 0; l < k; ++l)
                         px.grad[l] += g * pa.data[i * k + l];
                     }
                   }
                 });
}

Tensor transpose(const Tensor& a) {
  check_defined(a, "transpose");
  if (a.ndim() != 2)
    throw ShapeError("transpose: tensor is not 2-D, shape " + shape_str(a.shape()));
  std::size_t r = a.rows(), c = a.cols();
  std::vector<Scalar> out(r * c);
  const auto& da = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = da[i * c + j];
  return make_op({c, r}, std::move(out), "transpose", {a.node()},
                 [r, c](detail::Node& self) {
                   auto& p = *self.parents[0];
                   p.ensure_grad();
                   for (std::size_t i = 0; i < r; ++i)
                     for (std::size_t j = 0; j < c; ++j)
                       p.grad[i * c + j] += self.grad[j * r + i];
                 });
}

// ---- softmax / activations --------------------------------------------------

namespace {

void softmax_span(const Scalar* x, Scalar* y, std::size_t n) {
  Scalar mx = x[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  Scalar z = 0;
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = std::exp(x[i] - mx);
    z += y[i];
  }
  for (std::size_t i = 0; i < n; ++i) y[i] /= z;
}

// dx = y ⊙ (dy − <dy,y>)
void softmax_backward_span(const Scalar* y, const Scalar* gy, Scalar* gx,
                           std::size_t n) {
  Scalar dot = 0;
  for (std::size_t i = 0; i < n; ++i) dot += gy[i] * y[i];
  for (std::size_t i = 0; i < n; ++i) gx[i] += y[i] * (gy[i] - dot);
}

}  // namespace

Tensor softmax(const Tensor& x) {
  check_defined(x, "softmax");
  if (x.ndim() != 1 || x.size() == 0)
    throw ShapeError("softmax: expected non-empty 1-D tensor, shape " +
                     shape_str(x.shape()));
  std::size_t n = x.size();
  std::vector<Scalar> out(n);
  softmax_span(x.data().data(), out.data(), n);
  return make_op(x.shape(), std::move(out), "softmax", {x.node()},
                 [n](detail::Node& self) {
                   auto& p = *self.parents[0];
                   p.ensure_grad();
                   softmax_backward_span(self.data.data(), self.grad.data(),
                                         p.grad.data(), n);
                 });
}

Tensor softmax_rows(const Tensor& x) {
  check_defined(x, "softmax_rows");
  if (x.ndim() != 2 || x.cols() == 0)
    throw ShapeError("softmax_rows: expected 2-D tensor with non-empty rows, shape " +
                     shape_str(x.shape()));
  std::size_t r = x.rows(), c = x.cols();
  std::vector<Scalar> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    softmax_span(x.data().data() + i * c, out.data() + i * c, c);
  return make_op(x.shape(), std::move(out), "softmax_rows", {x.node()},
                 [r, c](detail::Node& self) {
                   auto& p = *self.parents[0];
                   p.ensure_grad();
                   for (std::size_t i = 0; i < r; ++i)
                     softmax_backward_span(self.data.data() + i * c,
                                           self.grad.data() + i * c,
                                           p.grad.data() + i * c, c);
                 });
}

Tensor activation(const Tensor& x, Act kind, Scalar slope) {
  check_defined(x, "activation");
  std::size_t n = x.size();
  std::vector<Scalar> out(n);
  const auto& dx = x.data();
  switch (kind) {
    case Act::Tanh:
      for (std::size_t i = 0; i < n; ++i) out[i] = std::tanh(dx[i]);
      break;
    case Act::Relu:
      for (std::size_t i = 0; i < n; ++i) out[i] = dx[i] > 0 ? dx[i] : 0.0;
      break;
    case Act::LeakyRelu:
      for (std::size_t i = 0; i < n; ++i) out[i] = dx[i] > 0 ? dx[i] : slope * dx[i];
      break;
    case Act::Sigmoid:
      for (std::size_t i = 0; i < n; ++i) out[i] = 1.0 / (1.0 + std::exp(-dx[i]));
      break;
  }
  return make_op(x.shape(), std::move(out), "activation", {x.node()},
                 [kind, slope](detail::Node& self) {
                   auto& p = *self.parents[0];
                   p.ensure_grad();
                   for (std::size_t i = 0; i < self.grad.size(); ++i) {
                     Scalar d = 0;
                     switch (kind) {
                       case Act::Tanh:
                         d = 1.0 - self.data[i] * self.data[i];
                         break;
                       case Act::Relu:
                         d = p.data[i] > 0 ? 1.0 : 0.0;
                         break;
                       case Act::LeakyRelu:
                         d = p.data[i] > 0 ? 1.0 : slope;
                         break;
                       case Act::Sigmoid:
                         d = self.data[i] * (1.0 - self.data[i]);
                         break;
                     }
                     p.grad[i] += self.grad[i] * d;
                   }
                 });
}

Tensor tanh_t(const Tensor& x) { return activation(x, Act::Tanh); }
Tensor relu(const Tensor& x) { return activation(x, Act::Relu); }
Tensor leaky_relu(const Tensor& x, Scalar slope) {
  return activation(x, Act::LeakyRelu, slope);
}
Tensor sigmoid(const Tensor& x) { return activation(x, Act::Sigmoid); }

// ---- shape manipulation ------------------------------------------------------

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat: no parts");
  std::size_t total = 0;
  std::vector<NodePtr> parents;
  parents.reserve(parts.size());
  for (const auto& p : parts) {
    check_defined(p, "concat");
    if (p.ndim() > 1)
      throw ShapeError("concat: expected 1-D parts, got " + shape_str(p.shape()));
    total += p.size();
    parents.push_back(p.node());
  }
  std::vector<Scalar> out;
  out.reserve(total);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_op({total}, std::move(out), "concat", std::move(parents),
                 [](detail::Node& self) {
                   std::size_t off = 0;
                   for (auto& pp : self.parents) {
                     auto& p = *pp;
                     if (p.requires_grad) {
                       p.ensure_grad();
                       for (std::size_t i = 0; i < p.data.size(); ++i)
                         p.grad[i] += self.grad[off + i];
                     }
                     off += p.data.size();
                   }
                 });
}

Tensor hconcat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("hconcat: no parts");
  std::size_t r = parts.front().rows();
  std::size_t total_c = 0;
  std::vector<NodePtr> parents;
  for (const auto& p : parts) {
    if (p.ndim() != 2 || p.rows() != r)
      throw ShapeError("hconcat: row mismatch, " + shape_str(p.shape()));
    total_c += p.cols();
    parents.push_back(p.node());
  }
  std::vector<Scalar> out(r * total_c);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::size_t c = p.cols();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j)
        out[i * total_c + off + j] = p.data()[i * c + j];
    off += c;
  }
  return make_op({r, total_c}, std::move(out), "hconcat", std::move(parents),
                 [r, total_c](detail::Node& self) {
                   std::size_t off = 0;
                   for (auto& pp : self.parents) {
                     auto& p = *pp;
                     std::size_t c = p.shape[1];
                     if (p.requires_grad) {
                       p.ensure_grad();
                       for (std::size_t i = 0; i < r; ++i)
                         for (std::size_t j = 0; j < c; ++j)
                           p.grad[i * c + j] += self.grad[i * total_c + off + j];
                     }
                     off += c;
                   }
                 });
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw ShapeError("stack_rows: no rows");
  std::size_t c = rows.front().size();
  std::vector<NodePtr> parents;
  std::vector<Scalar> out;
  out.reserve(rows.size() * c);
  for (const auto& v : rows) {
    if (v.ndim() != 1 || v.size() != c)
      throw ShapeError("stack_rows: length mismatch, " + shape_str(v.shape()));
    out.insert(out.end(), v.data().begin(), v.data().end());
    parents.push_back(v.node());
  }
  return make_op({rows.size(), c}, std::move(out), "stack_rows", std::move(parents),
                 [c](detail::Node& self) {
                   for (std::size_t i = 0; i < self.parents.size(); ++i) {
                     auto& p = *self.parents[i];
                     if (!p.requires_grad) continue;
                     p.ensure_grad();
                     for (std::size_t j = 0; j < c; ++j)
                       p.grad[j] += self.grad[i * c + j];
                   }
                 });
}

Tensor row(const Tensor& a, std::size_t i) {
  check_defined(a, "row");
  if (a.ndim() != 2 || i >= a.rows())
    throw ShapeError("row: index " + std::to_string(i) + " out of range for " +
                     shape_str(a.shape()));
  std::size_t c = a.cols();
  std::vector<Scalar> out(a.data().begin() + i * c, a.data().begin() + (i + 1) * c);
  return make_op({c}, std::move(out), "row", {a.node()},
                 [i, c](detail::Node& self) {
                   auto& p = *self.parents[0];
                   p.ensure_grad();
                   for (std::size_t j = 0; j < c; ++j)
                     p.grad[i * c + j] += self.grad[j];
                 });
}

Tensor pick(const Tensor& x, std::size_t i) {
  check_defined(x, "pick");
  if (x.ndim() != 1 || i >= x.size())
    throw ShapeError("pick: index " + std::to_string(i) + " out of range for " +
                     shape_str(x.shape()));
  return make_op({}, {x.data()[i]}, "pick", {x.node()},
                 [i](detail::Node& self) {
                   auto& p = *self.parents[0];
                   p.ensure_grad();
                   p.grad[i] += self.grad[0];
                 });
}

// ---- reductions / misc -------------------------------------------------------

Tensor sum(const Tensor& x) {
  check_defined(x, "sum");
  Scalar s = std::accumulate(x.data().begin(), x.data().end(), 0.0);
  return make_op({}, {s}, "sum", {x.node()}, [](detail::Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (auto& g : p.grad) g += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  check_defined(x, "mean");
  if (x.size() == 0) throw ShapeError("mean: empty tensor");
  Scalar s = std::accumulate(x.data().begin(), x.data().end(), 0.0);
  Scalar n = static_cast<Scalar>(x.size());
  return make_op({}, {s / n}, "mean", {x.node()}, [n](detail::Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (auto& g : p.grad) g += self.grad[0] / n;
  });
}

Tensor reciprocal(const Tensor& x) {
  check_defined(x, "reciprocal");
  std::size_t n = x.size();
  std::vector<Scalar> out(n);
  const auto& dx = x.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = 1.0 / dx[i];
  return make_op(x.shape(), std::move(out), "reciprocal", {x.node()},
                 [](detail::Node& self) {
                   auto& p = *self.parents[0];
                   p.ensure_grad();
                   for (std::size_t i = 0; i < self.grad.size(); ++i)
                     p.grad[i] -= self.grad[i] * self.data[i] * self.data[i];
                 });
}

Tensor log_clamped(const Tensor& x, Scalar floor) {
  check_defined(x, "log_clamped");
  std::size_t n = x.size();
  std::vector<Scalar> out(n);
  const auto& dx = x.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = std::log(std::max(dx[i], floor));
  return make_op(x.shape(), std::move(out), "log_clamped", {x.node()},
                 [floor](detail::Node& self) {
                   auto& p = *self.parents[0];
                   p.ensure_grad();
                   for (std::size_t i = 0; i < self.grad.size(); ++i)
                     if (p.data[i] > floor)
                       p.grad[i] += self.grad[i] / p.data[i];
                 });
}

Tensor straight_through_onehot(const Tensor& probs) {
  check_defined(probs, "straight_through_onehot");
  if (probs.ndim() != 1 || probs.size() == 0)
    throw ShapeError("straight_through_onehot: expected non-empty 1-D tensor");
  std::size_t n = probs.size();
  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i)
    if (probs.data()[i] > probs.data()[best]) best = i;
  std::vector<Scalar> out(n, 0.0);
  out[best] = 1.0;
  return make_op(probs.shape(), std::move(out), "st_onehot", {probs.node()},
                 [](detail::Node& self) {
                   auto& p = *self.parents[0];
                   p.ensure_grad();
                   for (std::size_t i = 0; i < self.grad.size(); ++i)
                     p.grad[i] += self.grad[i];
                 });
}

Tensor detach(const Tensor& x) {
  check_defined(x, "detach");
  return Tensor::wrap(make_leaf(x.shape(), x.data(), false));
}

// ---- backward ------------------------------------------------------------------

void backward(const Tensor& loss) {
  check_defined(loss, "backward");
  if (loss.size() != 1)
    throw ShapeError("backward: loss must be scalar, shape " + shape_str(loss.shape()));
  auto root = loss.node();
  if (!root->requires_grad) return;

  // Iterative post-order DFS: parents precede each node in `order`.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      detail::Node* parent = node->parents[idx++].get();
      if (parent->requires_grad && visited.insert(parent).second)
        stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* n : order) n->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward) (*it)->backward(**it);
}

// ---- rng / init -------------------------------------------------------------------

std::uint64_t Rng::integer(std::uint64_t n) {
  std::uniform_int_distribution<std::uint64_t> d(0, n - 1);
  return d(engine_);
}

std::string Rng::state() const {
  std::ostringstream out;
  out << engine_ << " | " << dist_ << " | " << normal_;
  return out.str();
}

void Rng::set_state(const std::string& state) {
  std::istringstream in(state);
  char bar;
  in >> engine_ >> bar >> dist_ >> bar >> normal_;
  if (!in) throw IoError("rng: cannot parse serialized state");
}

Tensor init_fanin_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  Scalar bound = 1.0 / std::sqrt(static_cast<Scalar>(fan_in));
  std::size_t n = shape_numel(shape);
  std::vector<Scalar> data(n);
  for (auto& v : data) v = rng.uniform(-bound, bound);
  return Tensor::from(std::move(data), std::move(shape), true);
}

Tensor init_normal(Shape shape, Scalar stddev, Rng& rng) {
  std::size_t n = shape_numel(shape);
  std::vector<Scalar> data(n);
  for (auto& v : data) v = stddev * rng.normal();
  return Tensor::from(std::move(data), std::move(shape), true);
}

// ---- grad check -----------------------------------------------------------------

Scalar grad_check(const std::function<Tensor()>& f,
                  const std::vector<Tensor>& params,
                  const GradCheckOptions& options) {
  for (auto p : params) p.zero_grad();
  Tensor loss = f();
  Scalar base = loss.item();
  if (!std::isfinite(base))
    throw NumericsError("grad_check: non-finite loss at base point");
  backward(loss);

  std::vector<std::vector<Scalar>> ad_grads;
  ad_grads.reserve(params.size());
  for (auto p : params) ad_grads.push_back(p.grad());

  Rng rng(options.seed);
  Scalar max_rel = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi];
    std::size_t n = p.size();
    std::vector<std::size_t> coords;
    if (n <= options.max_coords_per_param) {
      coords.resize(n);
      std::iota(coords.begin(), coords.end(), 0);
    } else {
      for (std::size_t i = 0; i < options.max_coords_per_param; ++i)
        coords.push_back(rng.integer(n));
    }
    for (std::size_t c : coords) {
      Scalar saved = p.data()[c];
      Scalar h = options.step;
      NoGradGuard no_grad;
      p.data()[c] = saved + h;
      Scalar up = f().item();
      p.data()[c] = saved - h;
      Scalar down = f().item();
      p.data()[c] = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw NumericsError("grad_check: non-finite loss at perturbed point");
      Scalar fd = (up - down) / (2 * h);
      if (options.skip_nonsmooth) {
        Scalar fwd = (up - base) / h;
        Scalar bwd = (base - down) / h;
        if (std::abs(fwd - bwd) >
            0.1 * std::max({std::abs(fwd), std::abs(bwd), options.denom_floor}))
          continue;
      }
      Scalar ad = ad_grads[pi][c];
      Scalar rel = std::abs(ad - fd) /
                   std::max({std::abs(ad), std::abs(fd), options.denom_floor});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace cvlnm
