#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace qsim {

using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Shape = std::vector<Eigen::Index>;

/// Number of elements a shape describes; 1 for the empty (scalar) shape.
Eigen::Index shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TapeNode {
  Shape shape;
  Eigen::ArrayXd value;
  Eigen::ArrayXd grad;  // empty until backward touches this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<TapeNode>> parents;
  std::function<void(TapeNode&)> backward_fn;  // empty for leaves

  void accumulate_grad(const Eigen::ArrayXd& g);
};

}  // namespace detail

/// Dense 64-bit tensor participating in a reverse-mode tape.
///
/// A Tensor is a shared handle onto a tape node: copies alias the same
/// storage and graph position. Ops are eager Eigen computations; when
/// gradients are enabled and any input requires them, the op also records
/// how to push gradients back to its inputs. Storage is flat row-major.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor from_array(Shape shape, std::span<const double> values, bool requires_grad = false);
  static Tensor from_vector(const Eigen::VectorXd& v, bool requires_grad = false);
  static Tensor from_matrix(const Eigen::MatrixXd& m, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  Eigen::Index size() const;
  bool is_scalar() const;
  /// Leading extent for the 2-D view: shape[0] for matrices, 1 for vectors/scalars.
  Eigen::Index rows() const;
  /// Trailing extent for the 2-D view.
  Eigen::Index cols() const;

  double value() const;  // scalar tensors only
  double at(Eigen::Index flat_index) const;

  Eigen::Map<const Eigen::ArrayXd> array() const;
  Eigen::Map<Eigen::ArrayXd> array();
  Eigen::Map<const RowMatrixXd> matrix() const;  // 2-D view; 1-D maps to 1 x n
  Eigen::Map<RowMatrixXd> matrix();
  Eigen::VectorXd to_vector() const;

  bool requires_grad() const;
  void set_requires_grad(bool value);

  bool has_grad() const;
  Eigen::Map<const Eigen::ArrayXd> grad() const;
  void zero_grad();

  /// True when this tensor was produced by a recorded op (has inputs).
  bool has_tape() const;

  std::shared_ptr<detail::TapeNode> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TapeNode> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::TapeNode> node_;

  friend Tensor make_op_result(Shape shape, Eigen::ArrayXd value,
                               std::vector<Tensor> inputs,
                               std::function<void(detail::TapeNode&)> backward_fn);
};

/// Thread-local gradient switch. While a NoGradGuard is alive, ops do not
/// record the tape even if inputs require grad (target-network evaluation,
/// action selection, analysis sweeps).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// ---- ops -------------------------------------------------------------

/// a @ b for 2-D operands (vectors are 1 x n rows).
Tensor matmul(const Tensor& a, const Tensor& b);
/// Elementwise sum; also accepts a 1-D (or 1 x n) b broadcast across the rows of a.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
/// Elementwise product, same shapes.
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor elu(const Tensor& x);
Tensor abs(const Tensor& x);

Tensor sum(const Tensor& x);   // -> scalar
Tensor mean(const Tensor& x);  // -> scalar
/// Row sums of a 2-D tensor -> 1-D of length rows().
Tensor sum_rows(const Tensor& x);

/// Column-concatenation of 2-D tensors with equal row counts (1-D as 1 x n).
Tensor hcat(std::span<const Tensor> parts);
/// Stacks scalar tensors into a 1-D tensor.
Tensor stack_scalars(std::span<const Tensor> parts);
/// Row i of a 2-D tensor as a 1 x cols tensor.
Tensor row(const Tensor& x, Eigen::Index i);
/// Same data, new shape (row-major order preserved).
Tensor reshape(const Tensor& x, Shape shape);
/// Gathers x(i, index[i]) for each row -> 1-D of length rows().
Tensor select_columns(const Tensor& x, std::span<const Eigen::Index> index);

/// mean((a - b)^2) over all elements.
Tensor mse(const Tensor& a, const Tensor& b);

/// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
/// reachable node that requires grad; repeated calls without zero_grad add up.
void backward(const Tensor& loss);

/// Throws std::runtime_error naming `what` if any element is NaN/Inf.
void check_finite(const Tensor& t, const char* what);
void check_finite(const Eigen::Ref<const Eigen::ArrayXd>& a, const char* what);

}  // namespace qsim
