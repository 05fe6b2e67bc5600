#include "qsim/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace qsim {

Eigen::Index shape_size(const Shape& shape) {
  Eigen::Index n = 1;
  for (Eigen::Index e : shape) {
    if (e < 0) throw std::invalid_argument("negative extent in shape " + shape_str(shape));
    n *= e;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

void TapeNode::accumulate_grad(const Eigen::ArrayXd& g) {
  if (grad.size() == 0) grad = Eigen::ArrayXd::Zero(value.size());
  grad += g;
}

}  // namespace detail

namespace {

thread_local bool g_grad_enabled = true;

std::shared_ptr<detail::TapeNode> make_leaf(Shape shape, Eigen::ArrayXd value, bool requires_grad) {
  auto node = std::make_shared<detail::TapeNode>();
  if (shape_size(shape) != value.size())
    throw std::invalid_argument("tensor data size " + std::to_string(value.size()) +
                                " does not match shape " + shape_str(shape));
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return node;
}

}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Tensor make_op_result(Shape shape, Eigen::ArrayXd value, std::vector<Tensor> inputs,
                      std::function<void(detail::TapeNode&)> backward_fn) {
  auto node = make_leaf(std::move(shape), std::move(value), false);
  bool track = false;
  if (g_grad_enabled) {
    for (const Tensor& t : inputs)
      if (t.requires_grad()) track = true;
  }
  if (track) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (const Tensor& t : inputs) node->parents.push_back(t.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

// ---- construction ------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  Eigen::ArrayXd v = Eigen::ArrayXd::Zero(shape_size(shape));
  return Tensor(make_leaf(std::move(shape), std::move(v), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Eigen::ArrayXd v = Eigen::ArrayXd::Constant(shape_size(shape), value);
  return Tensor(make_leaf(std::move(shape), std::move(v), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return full(Shape{}, value, requires_grad);
}

Tensor Tensor::from_array(Shape shape, std::span<const double> values, bool requires_grad) {
  Eigen::ArrayXd v = Eigen::Map<const Eigen::ArrayXd>(values.data(), static_cast<Eigen::Index>(values.size()));
  return Tensor(make_leaf(std::move(shape), std::move(v), requires_grad));
}

Tensor Tensor::from_vector(const Eigen::VectorXd& v, bool requires_grad) {
  return from_array(Shape{v.size()}, std::span<const double>(v.data(), static_cast<std::size_t>(v.size())),
                    requires_grad);
}

Tensor Tensor::from_matrix(const Eigen::MatrixXd& m, bool requires_grad) {
  RowMatrixXd rm = m;
  Eigen::ArrayXd v = Eigen::Map<const Eigen::ArrayXd>(rm.data(), rm.size());
  return Tensor(make_leaf(Shape{m.rows(), m.cols()}, std::move(v), requires_grad));
}

// ---- accessors -----------------------------------------------------------

namespace {
const Shape& require(const std::shared_ptr<detail::TapeNode>& n) {
  if (!n) throw std::runtime_error("operation on empty tensor");
  return n->shape;
}
}  // namespace

const Shape& Tensor::shape() const { return require(node_); }
Eigen::Index Tensor::size() const { require(node_); return node_->value.size(); }
bool Tensor::is_scalar() const { require(node_); return node_->value.size() == 1 && node_->shape.size() <= 1; }

Eigen::Index Tensor::rows() const {
  const Shape& s = require(node_);
  if (s.size() >= 3) throw std::invalid_argument("no 2-D view of shape " + shape_str(s));
  return s.size() == 2 ? s[0] : 1;
}

Eigen::Index Tensor::cols() const {
  const Shape& s = require(node_);
  if (s.size() >= 3) throw std::invalid_argument("no 2-D view of shape " + shape_str(s));
  return s.empty() ? 1 : s.back();
}

double Tensor::value() const {
  require(node_);
  if (node_->value.size() != 1) throw std::invalid_argument("value() needs a scalar, got " + shape_str(node_->shape));
  return node_->value[0];
}

double Tensor::at(Eigen::Index flat_index) const {
  require(node_);
  return node_->value[flat_index];
}

Eigen::Map<const Eigen::ArrayXd> Tensor::array() const {
  require(node_);
  return {node_->value.data(), node_->value.size()};
}

Eigen::Map<Eigen::ArrayXd> Tensor::array() {
  require(node_);
  return {node_->value.data(), node_->value.size()};
}

Eigen::Map<const RowMatrixXd> Tensor::matrix() const {
  require(node_);
  return {node_->value.data(), rows(), cols()};
}

Eigen::Map<RowMatrixXd> Tensor::matrix() {
  require(node_);
  return {node_->value.data(), rows(), cols()};
}

Eigen::VectorXd Tensor::to_vector() const {
  require(node_);
  return Eigen::Map<const Eigen::VectorXd>(node_->value.data(), node_->value.size());
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
  require(node_);
  if (value && node_->backward_fn)
    throw std::invalid_argument("set_requires_grad applies to leaves only");
  node_->requires_grad = value;
}

bool Tensor::has_grad() const { return node_ && node_->grad.size() > 0; }

Eigen::Map<const Eigen::ArrayXd> Tensor::grad() const {
  require(node_);
  if (node_->grad.size() == 0) throw std::runtime_error("tensor has no gradient; run backward first");
  return {node_->grad.data(), node_->grad.size()};
}

void Tensor::zero_grad() {
  require(node_);
  node_->grad.resize(0);
}

bool Tensor::has_tape() const { return node_ && static_cast<bool>(node_->backward_fn); }

// ---- op helpers ----------------------------------------------------------

namespace {

using detail::TapeNode;

Eigen::Map<const RowMatrixXd> as_matrix(const TapeNode& n) {
  const Eigen::Index r = n.shape.size() == 2 ? n.shape[0] : 1;
  const Eigen::Index c = n.shape.empty() ? 1 : n.shape.back();
  return {n.value.data(), r, c};
}

Eigen::Map<const RowMatrixXd> grad_matrix(const TapeNode& n) {
  const Eigen::Index r = n.shape.size() == 2 ? n.shape[0] : 1;
  const Eigen::Index c = n.shape.empty() ? 1 : n.shape.back();
  return {n.grad.data(), r, c};
}

void accumulate_matrix_grad(TapeNode& parent, const RowMatrixXd& g) {
  parent.accumulate_grad(Eigen::Map<const Eigen::ArrayXd>(g.data(), g.size()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}

}  // namespace

// ---- ops ------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Eigen::Index m = a.rows(), k = a.cols(), k2 = b.rows(), n = b.cols();
  if (k != k2)
    throw std::invalid_argument("matmul: inner dimensions differ, " + shape_str(a.shape()) + " @ " +
                                shape_str(b.shape()));
  RowMatrixXd out = a.matrix() * b.matrix();
  return make_op_result(Shape{m, n}, Eigen::Map<const Eigen::ArrayXd>(out.data(), out.size()), {a, b},
                        [](TapeNode& node) {
                          auto& pa = *node.parents[0];
                          auto& pb = *node.parents[1];
                          const auto g = grad_matrix(node);
                          if (pa.requires_grad) accumulate_matrix_grad(pa, g * as_matrix(pb).transpose());
                          if (pb.requires_grad) accumulate_matrix_grad(pb, as_matrix(pa).transpose() * g);
                        });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) {
    return make_op_result(a.shape(), a.array() + b.array(), {a, b}, [](TapeNode& node) {
      if (node.parents[0]->requires_grad) node.parents[0]->accumulate_grad(node.grad);
      if (node.parents[1]->requires_grad) node.parents[1]->accumulate_grad(node.grad);
    });
  }
  // row broadcast: {m,n} + {n} (or {1,n})
  if (a.shape().size() == 2 && b.shape().size() <= 2 && b.rows() == 1 && b.cols() == a.cols()) {
    RowMatrixXd out = a.matrix();
    out.rowwise() += Eigen::RowVectorXd::Map(b.array().data(), b.cols());
    return make_op_result(a.shape(), Eigen::Map<const Eigen::ArrayXd>(out.data(), out.size()), {a, b},
                          [](TapeNode& node) {
                            if (node.parents[0]->requires_grad) node.parents[0]->accumulate_grad(node.grad);
                            if (node.parents[1]->requires_grad) {
                              Eigen::RowVectorXd colsum = grad_matrix(node).colwise().sum();
                              node.parents[1]->accumulate_grad(
                                  Eigen::Map<const Eigen::ArrayXd>(colsum.data(), colsum.size()));
                            }
                          });
  }
  throw std::invalid_argument("add: incompatible shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  return make_op_result(a.shape(), a.array() - b.array(), {a, b}, [](TapeNode& node) {
    if (node.parents[0]->requires_grad) node.parents[0]->accumulate_grad(node.grad);
    if (node.parents[1]->requires_grad) node.parents[1]->accumulate_grad(-node.grad);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  return make_op_result(a.shape(), a.array() * b.array(), {a, b}, [](TapeNode& node) {
    if (node.parents[0]->requires_grad) node.parents[0]->accumulate_grad(node.grad * node.parents[1]->value);
    if (node.parents[1]->requires_grad) node.parents[1]->accumulate_grad(node.grad * node.parents[0]->value);
  });
}

Tensor scale(const Tensor& a, double c) {
  return make_op_result(a.shape(), a.array() * c, {a}, [c](TapeNode& node) {
    if (node.parents[0]->requires_grad) node.parents[0]->accumulate_grad(node.grad * c);
  });
}

Tensor relu(const Tensor& x) {
  return make_op_result(x.shape(), x.array().max(0.0), {x}, [](TapeNode& node) {
    if (!node.parents[0]->requires_grad) return;
    node.parents[0]->accumulate_grad(node.grad * (node.parents[0]->value > 0.0).cast<double>());
  });
}

Tensor tanh(const Tensor& x) {
  Eigen::ArrayXd y = x.array().tanh();
  return make_op_result(x.shape(), std::move(y), {x}, [](TapeNode& node) {
    if (!node.parents[0]->requires_grad) return;
    node.parents[0]->accumulate_grad(node.grad * (1.0 - node.value.square()));
  });
}

Tensor elu(const Tensor& x) {
  Eigen::ArrayXd y = (x.array() > 0.0).select(x.array(), x.array().exp() - 1.0);
  return make_op_result(x.shape(), std::move(y), {x}, [](TapeNode& node) {
    if (!node.parents[0]->requires_grad) return;
    // d/dx elu = 1 for x > 0, exp(x) = y + 1 otherwise
    Eigen::ArrayXd d = (node.parents[0]->value > 0.0).select(Eigen::ArrayXd::Ones(node.value.size()),
                                                             node.value + 1.0);
    node.parents[0]->accumulate_grad(node.grad * d);
  });
}

Tensor abs(const Tensor& x) {
  return make_op_result(x.shape(), x.array().abs(), {x}, [](TapeNode& node) {
    if (!node.parents[0]->requires_grad) return;
    node.parents[0]->accumulate_grad(node.grad * node.parents[0]->value.sign());
  });
}

Tensor sum(const Tensor& x) {
  Eigen::ArrayXd v(1);
  v[0] = x.array().sum();
  return make_op_result(Shape{}, std::move(v), {x}, [](TapeNode& node) {
    if (!node.parents[0]->requires_grad) return;
    node.parents[0]->accumulate_grad(
        Eigen::ArrayXd::Constant(node.parents[0]->value.size(), node.grad[0]));
  });
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw std::invalid_argument("mean of empty tensor");
  const double inv_n = 1.0 / static_cast<double>(x.size());
  Eigen::ArrayXd v(1);
  v[0] = x.array().mean();
  return make_op_result(Shape{}, std::move(v), {x}, [inv_n](TapeNode& node) {
    if (!node.parents[0]->requires_grad) return;
    node.parents[0]->accumulate_grad(
        Eigen::ArrayXd::Constant(node.parents[0]->value.size(), node.grad[0] * inv_n));
  });
}

Tensor sum_rows(const Tensor& x) {
  if (x.shape().size() != 2) throw std::invalid_argument("sum_rows needs a 2-D tensor, got " + shape_str(x.shape()));
  Eigen::VectorXd v = x.matrix().rowwise().sum();
  return make_op_result(Shape{x.rows()}, Eigen::Map<const Eigen::ArrayXd>(v.data(), v.size()), {x},
                        [](TapeNode& node) {
                          if (!node.parents[0]->requires_grad) return;
                          const Eigen::Index r = node.parents[0]->shape[0];
                          const Eigen::Index c = node.parents[0]->shape[1];
                          RowMatrixXd g(r, c);
                          for (Eigen::Index i = 0; i < r; ++i) g.row(i).setConstant(node.grad[i]);
                          accumulate_matrix_grad(*node.parents[0], g);
                        });
}

Tensor hcat(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("hcat of nothing");
  const Eigen::Index r = parts[0].rows();
  Eigen::Index total = 0;
  for (const Tensor& p : parts) {
    if (p.rows() != r) throw std::invalid_argument("hcat: row count mismatch");
    total += p.cols();
  }
  RowMatrixXd out(r, total);
  Eigen::Index at = 0;
  std::vector<Eigen::Index> widths;
  widths.reserve(parts.size());
  for (const Tensor& p : parts) {
    out.middleCols(at, p.cols()) = p.matrix();
    widths.push_back(p.cols());
    at += p.cols();
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return make_op_result(Shape{r, total}, Eigen::Map<const Eigen::ArrayXd>(out.data(), out.size()),
                        std::move(inputs), [widths](TapeNode& node) {
                          const auto g = grad_matrix(node);
                          Eigen::Index at = 0;
                          for (std::size_t k = 0; k < node.parents.size(); ++k) {
                            if (node.parents[k]->requires_grad) {
                              RowMatrixXd gk = g.middleCols(at, widths[k]);
                              accumulate_matrix_grad(*node.parents[k], gk);
                            }
                            at += widths[k];
                          }
                        });
}

Tensor stack_scalars(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("stack_scalars of nothing");
  Eigen::ArrayXd v(static_cast<Eigen::Index>(parts.size()));
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i].size() != 1) throw std::invalid_argument("stack_scalars: element is not scalar");
    v[static_cast<Eigen::Index>(i)] = parts[i].at(0);
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  const Eigen::Index count = v.size();
  return make_op_result(Shape{count}, std::move(v), std::move(inputs), [](TapeNode& node) {
    for (std::size_t k = 0; k < node.parents.size(); ++k) {
      if (!node.parents[k]->requires_grad) continue;
      Eigen::ArrayXd g(1);
      g[0] = node.grad[static_cast<Eigen::Index>(k)];
      node.parents[k]->accumulate_grad(g);
    }
  });
}

Tensor row(const Tensor& x, Eigen::Index i) {
  if (x.shape().size() != 2) throw std::invalid_argument("row needs a 2-D tensor");
  if (i < 0 || i >= x.rows()) throw std::out_of_range("row index out of range");
  const Eigen::Index c = x.cols();
  Eigen::ArrayXd v = x.array().segment(i * c, c);
  return make_op_result(Shape{1, c}, std::move(v), {x}, [i, c](TapeNode& node) {
    if (!node.parents[0]->requires_grad) return;
    Eigen::ArrayXd g = Eigen::ArrayXd::Zero(node.parents[0]->value.size());
    g.segment(i * c, c) = node.grad;
    node.parents[0]->accumulate_grad(g);
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size())
    throw std::invalid_argument("reshape: size mismatch " + shape_str(x.shape()) + " -> " + shape_str(shape));
  return make_op_result(std::move(shape), x.array(), {x}, [](TapeNode& node) {
    if (node.parents[0]->requires_grad) node.parents[0]->accumulate_grad(node.grad);
  });
}

Tensor select_columns(const Tensor& x, std::span<const Eigen::Index> index) {
  if (x.shape().size() != 2) throw std::invalid_argument("select_columns needs a 2-D tensor");
  const Eigen::Index r = x.rows(), c = x.cols();
  if (static_cast<Eigen::Index>(index.size()) != r)
    throw std::invalid_argument("select_columns: one index per row required");
  Eigen::ArrayXd v(r);
  for (Eigen::Index i = 0; i < r; ++i) {
    if (index[i] < 0 || index[i] >= c) throw std::out_of_range("select_columns: column index out of range");
    v[i] = x.at(i * c + index[i]);
  }
  std::vector<Eigen::Index> idx(index.begin(), index.end());
  return make_op_result(Shape{r}, std::move(v), {x}, [idx, c](TapeNode& node) {
    if (!node.parents[0]->requires_grad) return;
    Eigen::ArrayXd g = Eigen::ArrayXd::Zero(node.parents[0]->value.size());
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(idx.size()); ++i)
      g[i * c + idx[i]] += node.grad[i];
    node.parents[0]->accumulate_grad(g);
  });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  Tensor d = sub(a, b);
  return mean(mul(d, d));
}

// ---- backward -------------------------------------------------------

void backward(const Tensor& loss) {
  if (!loss.defined()) throw std::invalid_argument("backward on empty tensor");
  if (loss.size() != 1) throw std::invalid_argument("backward needs a scalar loss, got " + shape_str(loss.shape()));
  if (!loss.requires_grad())
    throw std::runtime_error("backward on a detached graph: loss does not require grad");

  // iterative post-order over the tape
  std::vector<detail::TapeNode*> order;
  std::unordered_set<detail::TapeNode*> seen;
  std::vector<std::pair<detail::TapeNode*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next_child] = stack.back();
    if (next_child < node->parents.size()) {
      detail::TapeNode* child = node->parents[next_child++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->accumulate_grad(Eigen::ArrayXd::Ones(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TapeNode* node = *it;
    if (node->backward_fn && node->grad.size() > 0) node->backward_fn(*node);
  }
}

void check_finite(const Eigen::Ref<const Eigen::ArrayXd>& a, const char* what) {
  if (!a.isFinite().all()) throw std::runtime_error(std::string("non-finite values in ") + what);
}

void check_finite(const Tensor& t, const char* what) { check_finite(t.array(), what); }

}  // namespace qsim
