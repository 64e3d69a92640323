#ifndef QREW_TENSOR_HPP
#define QREW_TENSOR_HPP

// Dense matrix tensors with reverse-mode automatic differentiation.
//
// Every Tensor is a handle to a tape node holding an Eigen matrix value.
// Operations record parent links and a backprop closure; backward() walks
// the recorded nodes once, in reverse construction order. Batches are
// explicit collections of matrices rather than a third dimension, so all
// gradient code stays rank-2 and auditable. Only scalar and explicit
// row-vector broadcasts exist; everything else requires matching shapes.
//
// Leaf gradients accumulate across backward() calls (call zero_grad()
// between steps); transient node gradients are reset on every pass.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "qrew/errors.hpp"

namespace qrew::ad {

using Index = Eigen::Index;

namespace detail {

inline std::atomic<std::uint64_t>& node_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

inline int& no_grad_depth() {
  thread_local int depth = 0;
  return depth;
}

}  // namespace detail

// RAII guard: while active, newly created tensors never require grad and
// no tape is recorded. Used for evaluation and decoding.
class NoGradGuard {
 public:
  NoGradGuard() { ++detail::no_grad_depth(); }
  ~NoGradGuard() { --detail::no_grad_depth(); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
  static bool active() { return detail::no_grad_depth() > 0; }
};

template <typename Scalar>
class TensorT {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  // Tape node; internal, exposed only for the op implementations below.
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    std::uint64_t id = 0;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;  // reads node.grad, adds to parents
  };

  TensorT() = default;
  explicit TensorT(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static TensorT leaf(Matrix value, bool requires_grad = false) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->id = detail::node_counter()++;
    if (requires_grad && !NoGradGuard::active()) {
      node->requires_grad = true;
      node->grad = Matrix::Zero(node->value.rows(), node->value.cols());
    }
    return TensorT(std::move(node));
  }

  static TensorT scalar(Scalar v, bool requires_grad = false) {
    Matrix m(1, 1);
    m(0, 0) = v;
    return leaf(std::move(m), requires_grad);
  }

  static TensorT zeros(Index rows, Index cols, bool requires_grad = false) {
    return leaf(Matrix::Zero(rows, cols), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Index size() const { return node_->value.size(); }

  const Matrix& value() const { return node_->value; }

  // In-place value access for optimizer updates and initialization.
  // Only meaningful for leaves between tape constructions.
  Matrix& mutable_value() { return node_->value; }

  bool requires_grad() const { return node_ && node_->requires_grad; }

  const Matrix& grad() const {
    if (!requires_grad()) {
      throw ConfigError("tensor does not track gradients");
    }
    return node_->grad;
  }

  void zero_grad() {
    if (requires_grad()) node_->grad.setZero();
  }

  void set_requires_grad(bool on) {
    if (!node_ || on == node_->requires_grad) return;
    node_->requires_grad = on;
    node_->grad = on ? Matrix::Zero(rows(), cols()) : Matrix();
  }

  bool is_leaf() const { return node_ && !node_->backprop; }

  const std::shared_ptr<Node>& node() const { return node_; }

  std::string shape_str() const {
    return "[" + std::to_string(rows()) + " x " + std::to_string(cols()) + "]";
  }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

template <typename Scalar>
void check_same_shape(const TensorT<Scalar>& a, const TensorT<Scalar>& b,
                      const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() +
                     " vs " + b.shape_str());
  }
}

}  // namespace detail

// Records one op node. `backprop` receives the node itself so it can read
// node.grad and node.parents without owning references.
template <typename Scalar>
TensorT<Scalar> make_op(typename TensorT<Scalar>::Matrix value,
                        const std::vector<TensorT<Scalar>>& parents,
                        std::function<void(typename TensorT<Scalar>::Node&)> backprop) {
  auto node = std::make_shared<typename TensorT<Scalar>::Node>();
  node->value = std::move(value);
  node->id = detail::node_counter()++;
  bool needs = false;
  if (!NoGradGuard::active()) {
    for (const auto& p : parents) {
      if (p.requires_grad()) { needs = true; break; }
    }
  }
  if (needs) {
    node->requires_grad = true;
    node->grad = TensorT<Scalar>::Matrix::Zero(node->value.rows(), node->value.cols());
    node->backprop = std::move(backprop);
    for (const auto& p : parents) node->parents.push_back(p.node());
  }
  return TensorT<Scalar>(std::move(node));
}

// --- elementwise and linear ops -------------------------------------------

template <typename Scalar>
TensorT<Scalar> add(const TensorT<Scalar>& a, const TensorT<Scalar>& b) {
  detail::check_same_shape(a, b, "add");
  using Node = typename TensorT<Scalar>::Node;
  return make_op<Scalar>(a.value() + b.value(), {a, b}, [](Node& n) {
    for (int i = 0; i < 2; ++i) {
      if (n.parents[i]->requires_grad) n.parents[i]->grad += n.grad;
    }
  });
}

template <typename Scalar>
TensorT<Scalar> sub(const TensorT<Scalar>& a, const TensorT<Scalar>& b) {
  detail::check_same_shape(a, b, "sub");
  using Node = typename TensorT<Scalar>::Node;
  return make_op<Scalar>(a.value() - b.value(), {a, b}, [](Node& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->grad += n.grad;
    if (n.parents[1]->requires_grad) n.parents[1]->grad -= n.grad;
  });
}

template <typename Scalar>
TensorT<Scalar> mul(const TensorT<Scalar>& a, const TensorT<Scalar>& b) {
  detail::check_same_shape(a, b, "mul");
  using Node = typename TensorT<Scalar>::Node;
  return make_op<Scalar>(a.value().cwiseProduct(b.value()), {a, b}, [](Node& n) {
    if (n.parents[0]->requires_grad) {
      n.parents[0]->grad += n.grad.cwiseProduct(n.parents[1]->value);
    }
    if (n.parents[1]->requires_grad) {
      n.parents[1]->grad += n.grad.cwiseProduct(n.parents[0]->value);
    }
  });
}

template <typename Scalar>
TensorT<Scalar> scale(const TensorT<Scalar>& a, Scalar c) {
  using Node = typename TensorT<Scalar>::Node;
  return make_op<Scalar>(a.value() * c, {a}, [c](Node& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->grad += n.grad * c;
  });
}

// s is a 1x1 tensor; result = s * x with gradients into both.
template <typename Scalar>
TensorT<Scalar> scalar_mul(const TensorT<Scalar>& s, const TensorT<Scalar>& x) {
  if (s.rows() != 1 || s.cols() != 1) {
    throw ShapeError("scalar_mul: scalar operand has shape " + s.shape_str());
  }
  using Node = typename TensorT<Scalar>::Node;
  return make_op<Scalar>(x.value() * s.value()(0, 0), {s, x}, [](Node& n) {
    if (n.parents[0]->requires_grad) {
      n.parents[0]->grad(0, 0) += n.grad.cwiseProduct(n.parents[1]->value).sum();
    }
    if (n.parents[1]->requires_grad) {
      n.parents[1]->grad += n.grad * n.parents[0]->value(0, 0);
    }
  });
}

// x [m,n] + b [1,n], the explicit row-vector broadcast (bias add).
template <typename Scalar>
TensorT<Scalar> add_rowwise(const TensorT<Scalar>& x, const TensorT<Scalar>& b) {
  if (b.rows() != 1 || b.cols() != x.cols()) {
    throw ShapeError("add_rowwise: bias " + b.shape_str() +
                     " does not match " + x.shape_str());
  }
  using Node = typename TensorT<Scalar>::Node;
  typename TensorT<Scalar>::Matrix out = x.value();
  out.rowwise() += b.value().row(0);
  return make_op<Scalar>(std::move(out), {x, b}, [](Node& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->grad += n.grad;
    if (n.parents[1]->requires_grad) {
      n.parents[1]->grad.row(0) += n.grad.colwise().sum();
    }
  });
}

template <typename Scalar>
TensorT<Scalar> matmul(const TensorT<Scalar>& a, const TensorT<Scalar>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + a.shape_str() + " x " + b.shape_str());
  }
  using Node = typename TensorT<Scalar>::Node;
  return make_op<Scalar>(a.value() * b.value(), {a, b}, [](Node& n) {
    if (n.parents[0]->requires_grad) {
      n.parents[0]->grad += n.grad * n.parents[1]->value.transpose();
    }
    if (n.parents[1]->requires_grad) {
      n.parents[1]->grad += n.parents[0]->value.transpose() * n.grad;
    }
  });
}

// a [m,k] x b [n,k]^T -> [m,n].
template <typename Scalar>
TensorT<Scalar> matmul_nt(const TensorT<Scalar>& a, const TensorT<Scalar>& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: " + a.shape_str() + " x " + b.shape_str() + "^T");
  }
  using Node = typename TensorT<Scalar>::Node;
  return make_op<Scalar>(a.value() * b.value().transpose(), {a, b}, [](Node& n) {
    if (n.parents[0]->requires_grad) {
      n.parents[0]->grad += n.grad * n.parents[1]->value;
    }
    if (n.parents[1]->requires_grad) {
      n.parents[1]->grad += n.grad.transpose() * n.parents[0]->value;
    }
  });
}

template <typename Scalar>
TensorT<Scalar> tanh(const TensorT<Scalar>& x) {
  using Node = typename TensorT<Scalar>::Node;
  typename TensorT<Scalar>::Matrix y = x.value().array().tanh().matrix();
  return make_op<Scalar>(std::move(y), {x}, [](Node& n) {
    if (n.parents[0]->requires_grad) {
      n.parents[0]->grad.array() +=
          n.grad.array() * (Scalar(1) - n.value.array().square());
    }
  });
}

template <typename Scalar>
TensorT<Scalar> log(const TensorT<Scalar>& x) {
  using Node = typename TensorT<Scalar>::Node;
  return make_op<Scalar>(x.value().array().log().matrix(), {x}, [](Node& n) {
    if (n.parents[0]->requires_grad) {
      n.parents[0]->grad.array() += n.grad.array() / n.parents[0]->value.array();
    }
  });
}

// Softmax along `axis`: 1 normalizes each row (default), 0 each column.
template <typename Scalar>
TensorT<Scalar> softmax(const TensorT<Scalar>& x, int axis = 1) {
  if (axis != 0 && axis != 1) {
    throw ConfigError("softmax axis must be 0 or 1");
  }
  using Matrix = typename TensorT<Scalar>::Matrix;
  using Node = typename TensorT<Scalar>::Node;
  Matrix y;
  if (axis == 1) {
    y = (x.value().colwise() - x.value().rowwise().maxCoeff()).array().exp();
    Eigen::Array<Scalar, Eigen::Dynamic, 1> sums = y.rowwise().sum();
    y.array().colwise() /= sums;
  } else {
    y = (x.value().rowwise() - x.value().colwise().maxCoeff()).array().exp();
    Eigen::Array<Scalar, 1, Eigen::Dynamic> sums = y.colwise().sum();
    y.array().rowwise() /= sums;
  }
  return make_op<Scalar>(std::move(y), {x}, [axis](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    const Matrix& y = n.value;
    if (axis == 1) {
      Eigen::Array<Scalar, Eigen::Dynamic, 1> dot =
          (n.grad.array() * y.array()).rowwise().sum();
      n.parents[0]->grad.array() +=
          y.array() * (n.grad.array().colwise() - dot);
    } else {
      Eigen::Array<Scalar, 1, Eigen::Dynamic> dot =
          (n.grad.array() * y.array()).colwise().sum();
      n.parents[0]->grad.array() +=
          y.array() * (n.grad.array().rowwise() - dot);
    }
  });
}

// Per-row layer normalization with affine transform:
// out = (x - mean) / sqrt(var + eps) .* gamma + beta, gamma/beta [1,n].
// Population variance; eps sits inside the square root.
template <typename Scalar>
TensorT<Scalar> layer_norm(const TensorT<Scalar>& x, const TensorT<Scalar>& gamma,
                           const TensorT<Scalar>& beta, Scalar eps = Scalar(1e-5)) {
  if (gamma.rows() != 1 || gamma.cols() != x.cols() || beta.rows() != 1 ||
      beta.cols() != x.cols()) {
    throw ShapeError("layer_norm: affine params must be [1," +
                     std::to_string(x.cols()) + "], got " + gamma.shape_str() +
                     " and " + beta.shape_str());
  }
  using Matrix = typename TensorT<Scalar>::Matrix;
  using Node = typename TensorT<Scalar>::Node;
  using ColArray = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  const Index n = x.cols();
  ColArray mean_col = x.value().rowwise().mean();
  Matrix centered = x.value().colwise() - mean_col.matrix().col(0);
  ColArray var = centered.array().square().rowwise().sum() / Scalar(n);
  ColArray inv_std = (var + eps).sqrt().inverse();
  Matrix normalized = centered.array().colwise() * inv_std;
  Matrix out = normalized.array().rowwise() * gamma.value().row(0).array();
  out.rowwise() += beta.value().row(0);

  // The closure keeps `normalized` and `inv_std`; x is recoverable from them.
  return make_op<Scalar>(
      std::move(out), {x, gamma, beta},
      [normalized, inv_std, n](Node& node) {
        if (node.parents[2]->requires_grad) {
          node.parents[2]->grad.row(0) += node.grad.colwise().sum();
        }
        if (node.parents[1]->requires_grad) {
          node.parents[1]->grad.row(0) +=
              (node.grad.array() * normalized.array()).colwise().sum().matrix();
        }
        if (node.parents[0]->requires_grad) {
          const auto g_row = node.parents[1]->value.row(0).array();
          Matrix dn = node.grad.array().rowwise() * g_row;
          ColArray dn_mean = dn.rowwise().mean();
          ColArray proj =
              (dn.array() * normalized.array()).rowwise().sum() / Scalar(n);
          Matrix dx =
              ((dn.array().colwise() - dn_mean) -
               (normalized.array().colwise() * proj)).colwise() * inv_std;
          node.parents[0]->grad += dx;
        }
      });
}

using Mask = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

// Replaces entries where mask is true by `fill`; gradient is zero there.
template <typename Scalar>
TensorT<Scalar> masked_fill(const TensorT<Scalar>& x, const Mask& mask,
                            Scalar fill) {
  if (mask.rows() != x.rows() || mask.cols() != x.cols()) {
    throw ShapeError("masked_fill: mask [" + std::to_string(mask.rows()) + " x " +
                     std::to_string(mask.cols()) + "] vs " + x.shape_str());
  }
  using Matrix = typename TensorT<Scalar>::Matrix;
  using Node = typename TensorT<Scalar>::Node;
  Matrix out = mask.array().select(Matrix::Constant(x.rows(), x.cols(), fill),
                                   x.value());
  return make_op<Scalar>(std::move(out), {x}, [mask](Node& n) {
    if (n.parents[0]->requires_grad) {
      n.parents[0]->grad += mask.array().select(
          Matrix::Zero(n.grad.rows(), n.grad.cols()), n.grad);
    }
  });
}

// Gathers rows of `table` [V,d] by token id; gradients scatter-add back.
template <typename Scalar>
TensorT<Scalar> embedding_lookup(const TensorT<Scalar>& table,
                                 const std::vector<int>& ids) {
  using Matrix = typename TensorT<Scalar>::Matrix;
  using Node = typename TensorT<Scalar>::Node;
  Matrix out(static_cast<Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows()) {
      throw OOVTokenError("token id " + std::to_string(ids[i]) +
                          " outside table of " + std::to_string(table.rows()) +
                          " rows");
    }
    out.row(static_cast<Index>(i)) = table.value().row(ids[i]);
  }
  return make_op<Scalar>(std::move(out), {table}, [ids](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      n.parents[0]->grad.row(ids[i]) += n.grad.row(static_cast<Index>(i));
    }
  });
}

template <typename Scalar>
TensorT<Scalar> concat_rows(const std::vector<TensorT<Scalar>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  using Matrix = typename TensorT<Scalar>::Matrix;
  using Node = typename TensorT<Scalar>::Node;
  Index total = 0;
  for (const auto& p : parts) {
    if (p.cols() != parts[0].cols()) {
      throw ShapeError("concat_rows: column mismatch " + p.shape_str() +
                       " vs " + parts[0].shape_str());
    }
    total += p.rows();
  }
  Matrix out(total, parts[0].cols());
  Index offset = 0;
  for (const auto& p : parts) {
    out.middleRows(offset, p.rows()) = p.value();
    offset += p.rows();
  }
  return make_op<Scalar>(std::move(out), parts, [](Node& n) {
    Index offset = 0;
    for (auto& parent : n.parents) {
      if (parent->requires_grad) {
        parent->grad += n.grad.middleRows(offset, parent->value.rows());
      }
      offset += parent->value.rows();
    }
  });
}

template <typename Scalar>
TensorT<Scalar> concat_cols(const std::vector<TensorT<Scalar>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  using Matrix = typename TensorT<Scalar>::Matrix;
  using Node = typename TensorT<Scalar>::Node;
  Index total = 0;
  for (const auto& p : parts) {
    if (p.rows() != parts[0].rows()) {
      throw ShapeError("concat_cols: row mismatch " + p.shape_str() + " vs " +
                       parts[0].shape_str());
    }
    total += p.cols();
  }
  Matrix out(parts[0].rows(), total);
  Index offset = 0;
  for (const auto& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
  }
  return make_op<Scalar>(std::move(out), parts, [](Node& n) {
    Index offset = 0;
    for (auto& parent : n.parents) {
      if (parent->requires_grad) {
        parent->grad += n.grad.middleCols(offset, parent->value.cols());
      }
      offset += parent->value.cols();
    }
  });
}

template <typename Scalar>
TensorT<Scalar> slice_rows(const TensorT<Scalar>& x, Index start, Index count) {
  if (start < 0 || count < 1 || start + count > x.rows()) {
    throw ShapeError("slice_rows: [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") outside " + x.shape_str());
  }
  using Node = typename TensorT<Scalar>::Node;
  return make_op<Scalar>(x.value().middleRows(start, count), {x},
                         [start, count](Node& n) {
                           if (n.parents[0]->requires_grad) {
                             n.parents[0]->grad.middleRows(start, count) += n.grad;
                           }
                         });
}

template <typename Scalar>
TensorT<Scalar> slice_cols(const TensorT<Scalar>& x, Index start, Index count) {
  if (start < 0 || count < 1 || start + count > x.cols()) {
    throw ShapeError("slice_cols: [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") outside " + x.shape_str());
  }
  using Node = typename TensorT<Scalar>::Node;
  return make_op<Scalar>(x.value().middleCols(start, count), {x},
                         [start, count](Node& n) {
                           if (n.parents[0]->requires_grad) {
                             n.parents[0]->grad.middleCols(start, count) += n.grad;
                           }
                         });
}

template <typename Scalar>
TensorT<Scalar> sum_all(const TensorT<Scalar>& x) {
  using Matrix = typename TensorT<Scalar>::Matrix;
  using Node = typename TensorT<Scalar>::Node;
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  return make_op<Scalar>(std::move(out), {x}, [](Node& n) {
    if (n.parents[0]->requires_grad) {
      n.parents[0]->grad.array() += n.grad(0, 0);
    }
  });
}

template <typename Scalar>
TensorT<Scalar> mean_all(const TensorT<Scalar>& x) {
  using Matrix = typename TensorT<Scalar>::Matrix;
  using Node = typename TensorT<Scalar>::Node;
  Matrix out(1, 1);
  out(0, 0) = x.value().mean();
  return make_op<Scalar>(std::move(out), {x}, [](Node& n) {
    if (n.parents[0]->requires_grad) {
      n.parents[0]->grad.array() +=
          n.grad(0, 0) / static_cast<Scalar>(n.parents[0]->value.size());
    }
  });
}

// Mean along `axis`: 0 averages over rows -> [1,n], 1 over columns -> [m,1].
template <typename Scalar>
TensorT<Scalar> mean(const TensorT<Scalar>& x, int axis) {
  if (axis != 0 && axis != 1) throw ConfigError("mean axis must be 0 or 1");
  using Matrix = typename TensorT<Scalar>::Matrix;
  using Node = typename TensorT<Scalar>::Node;
  Matrix out;
  if (axis == 0) {
    out = x.value().colwise().mean();
  } else {
    out = x.value().rowwise().mean();
  }
  return make_op<Scalar>(std::move(out), {x}, [axis](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    auto& pg = n.parents[0]->grad;
    if (axis == 0) {
      pg += (Matrix::Ones(pg.rows(), 1) * n.grad) / static_cast<Scalar>(pg.rows());
    } else {
      pg += (n.grad * Matrix::Ones(1, pg.cols())) / static_cast<Scalar>(pg.cols());
    }
  });
}

// Token-level negative log likelihood, summed over rows whose target is
// not `ignore_id`: sum_t (logsumexp(logits_t) - logits_t[target_t]).
template <typename Scalar>
TensorT<Scalar> cross_entropy(const TensorT<Scalar>& logits,
                              const std::vector<int>& targets, int ignore_id) {
  if (static_cast<Index>(targets.size()) != logits.rows()) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) +
                     " targets vs logits " + logits.shape_str());
  }
  using Matrix = typename TensorT<Scalar>::Matrix;
  using Node = typename TensorT<Scalar>::Node;
  Scalar total = 0;
  for (Index t = 0; t < logits.rows(); ++t) {
    if (targets[t] == ignore_id) continue;
    if (targets[t] < 0 || targets[t] >= logits.cols()) {
      throw OOVTokenError("target id " + std::to_string(targets[t]) +
                          " outside vocabulary of " +
                          std::to_string(logits.cols()));
    }
    const auto row = logits.value().row(t);
    const Scalar mx = row.maxCoeff();
    const Scalar lse = mx + std::log((row.array() - mx).exp().sum());
    total += lse - row(targets[t]);
  }
  Matrix out(1, 1);
  out(0, 0) = total;
  return make_op<Scalar>(std::move(out), {logits}, [targets, ignore_id](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    const Scalar g = n.grad(0, 0);
    const Matrix& v = n.parents[0]->value;
    for (Index t = 0; t < v.rows(); ++t) {
      if (targets[t] == ignore_id) continue;
      const auto row = v.row(t);
      const Scalar mx = row.maxCoeff();
      Eigen::Array<Scalar, 1, Eigen::Dynamic> p = (row.array() - mx).exp();
      p /= p.sum();
      n.parents[0]->grad.row(t) += g * p.matrix();
      n.parents[0]->grad(t, targets[t]) -= g;
    }
  });
}

// Cross entropy against per-row soft targets:
// sum_t ( logsumexp(s_t) * sum_k p_tk - sum_k p_tk * s_tk ).
// For probability rows this is -sum_t sum_k p log softmax(s).
template <typename Scalar>
TensorT<Scalar> soft_cross_entropy(const TensorT<Scalar>& logits,
                                   const typename TensorT<Scalar>::Matrix& probs) {
  if (probs.rows() != logits.rows() || probs.cols() != logits.cols()) {
    throw ShapeError("soft_cross_entropy: probs [" + std::to_string(probs.rows()) +
                     " x " + std::to_string(probs.cols()) + "] vs logits " +
                     logits.shape_str());
  }
  using Matrix = typename TensorT<Scalar>::Matrix;
  using Node = typename TensorT<Scalar>::Node;
  Scalar total = 0;
  for (Index t = 0; t < logits.rows(); ++t) {
    const auto row = logits.value().row(t);
    const Scalar mx = row.maxCoeff();
    const Scalar lse = mx + std::log((row.array() - mx).exp().sum());
    const Scalar psum = probs.row(t).sum();
    total += lse * psum - probs.row(t).dot(row);
  }
  Matrix out(1, 1);
  out(0, 0) = total;
  return make_op<Scalar>(std::move(out), {logits}, [probs](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    const Scalar g = n.grad(0, 0);
    const Matrix& v = n.parents[0]->value;
    for (Index t = 0; t < v.rows(); ++t) {
      const auto row = v.row(t);
      const Scalar mx = row.maxCoeff();
      Eigen::Array<Scalar, 1, Eigen::Dynamic> sm = (row.array() - mx).exp();
      sm /= sm.sum();
      const Scalar psum = probs.row(t).sum();
      n.parents[0]->grad.row(t) +=
          g * (sm * psum - probs.row(t).array()).matrix();
    }
  });
}

// Inverted dropout; identity when rate == 0.
template <typename Scalar>
TensorT<Scalar> dropout(const TensorT<Scalar>& x, double rate,
                        std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ConfigError("dropout rate must lie in [0, 1)");
  }
  if (rate == 0.0) return x;
  using Matrix = typename TensorT<Scalar>::Matrix;
  using Node = typename TensorT<Scalar>::Node;
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  Matrix mask(x.rows(), x.cols());
  const Scalar keep_scale = Scalar(1.0 / (1.0 - rate));
  for (Index r = 0; r < x.rows(); ++r) {
    for (Index c = 0; c < x.cols(); ++c) {
      mask(r, c) = dist(rng) < rate ? Scalar(0) : keep_scale;
    }
  }
  return make_op<Scalar>(x.value().cwiseProduct(mask), {x}, [mask](Node& n) {
    if (n.parents[0]->requires_grad) {
      n.parents[0]->grad += n.grad.cwiseProduct(mask);
    }
  });
}

// --- backward ---------------------------------------------------------------

// Reverse pass from a scalar loss. Transient (non-leaf) gradients are reset
// before propagation; leaf gradients accumulate, so two calls without
// zero_grad() exactly double every leaf gradient.
template <typename Scalar>
void backward(const TensorT<Scalar>& loss) {
  if (!loss.defined() || loss.rows() != 1 || loss.cols() != 1) {
    throw NotScalarError("backward requires a 1x1 loss tensor");
  }
  if (!loss.requires_grad()) return;

  using Node = typename TensorT<Scalar>::Node;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack = {loss.node().get()};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    Node* node = stack.back();
    stack.pop_back();
    order.push_back(node);
    for (const auto& p : node->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) {
        stack.push_back(p.get());
      }
    }
  }
  std::sort(order.begin(), order.end(),
            [](const Node* a, const Node* b) { return a->id > b->id; });

  for (Node* node : order) {
    if (node->backprop) node->grad.setZero();
  }
  loss.node()->grad(0, 0) += Scalar(1);
  for (Node* node : order) {
    if (node->backprop) node->backprop(*node);
  }
}

// --- gradient checking -------------------------------------------------------

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
};

// Central finite differences against reverse-mode gradients for a scalar
// function of the named parameters. Parameters without gradient tracking
// are excluded. Relative error uses denominator max(|a|, |b|, 1e-4), which
// turns absolute for vanishing gradients. Throws
// NondeterministicFunctionError when two evaluations at the same point
// disagree.
template <typename F>
GradCheckReport grad_check(F&& f,
                           std::vector<std::pair<std::string, TensorT<double>>> params,
                           double step = 1e-5) {
  const double v1 = f().value()(0, 0);
  const double v2 = f().value()(0, 0);
  if (v1 != v2) {
    throw NondeterministicFunctionError(
        "function value changed between evaluations: " + std::to_string(v1) +
        " vs " + std::to_string(v2));
  }

  for (auto& [name, p] : params) p.zero_grad();
  auto loss = f();
  backward(loss);

  GradCheckReport report;
  for (auto& [name, p] : params) {
    if (!p.requires_grad()) continue;
    GradCheckEntry entry{name, 0.0};
    const TensorT<double>::Matrix analytic = p.grad();
    auto& value = p.mutable_value();
    for (Index r = 0; r < value.rows(); ++r) {
      for (Index c = 0; c < value.cols(); ++c) {
        const double original = value(r, c);
        double f_plus, f_minus;
        {
          NoGradGuard guard;
          value(r, c) = original + step;
          f_plus = f().value()(0, 0);
          value(r, c) = original - step;
          f_minus = f().value()(0, 0);
          value(r, c) = original;
        }
        const double fd = (f_plus - f_minus) / (2.0 * step);
        const double ad = analytic(r, c);
        const double denom = std::max({std::fabs(ad), std::fabs(fd), 1e-4});
        entry.max_rel_err = std::max(entry.max_rel_err, std::fabs(ad - fd) / denom);
      }
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.entries.push_back(std::move(entry));
  }
  return report;
}

using Tensor = TensorT<double>;
using Matrix = Tensor::Matrix;

}  // namespace qrew::ad

#endif  // QREW_TENSOR_HPP
