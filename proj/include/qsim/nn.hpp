#pragma once

#include "qsim/rng.hpp"
#include "qsim/tensor.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace qsim {

enum class Activation { ReLU, Identity, Tanh };

/// Fully connected network description: layer_widths = [in, h1, ..., out].
struct MlpSpec {
  std::vector<Eigen::Index> layer_widths;
  Activation hidden_activation = Activation::ReLU;
  Activation final_activation = Activation::Identity;

  Eigen::Index input_width() const;
  Eigen::Index output_width() const;
  std::size_t num_layers() const { return layer_widths.size() - 1; }
  void validate() const;
};

/// One weight {in,out} and bias {out} tensor per layer.
struct MlpParams {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;

  /// Uniform init on [-1/sqrt(fan_in), +1/sqrt(fan_in)].
  static MlpParams init(const MlpSpec& spec, Rng& rng, bool requires_grad = true);
  static MlpParams zeros(const MlpSpec& spec, bool requires_grad = false);

  std::vector<Tensor> all() const;
  MlpParams clone(bool requires_grad) const;
  /// Overwrites values in place (hard target update).
  void copy_values_from(const MlpParams& other);
  /// theta_this <- tau * theta_other + (1 - tau) * theta_this.
  void lerp_values_from(const MlpParams& other, double tau);
};

Tensor apply_activation(Activation act, const Tensor& x);

/// Forward pass; input is {batch, in} or a 1-D {in} treated as one row.
/// Validates widths and finiteness of input and parameters.
Tensor mlp_forward(const MlpSpec& spec, const MlpParams& params, const Tensor& input);

/// Convenience single-row evaluation without taping.
Eigen::VectorXd mlp_eval(const MlpSpec& spec, const MlpParams& params, const Eigen::VectorXd& input);

// ---- optimizer -------------------------------------------------------

enum class OptimizerKind { Adam, Sgd };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double learning_rate = 0.0005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Holds per-parameter moment accumulators and a step counter; step() applies
/// the gradients currently stored on the bound parameters.
class Optimizer {
 public:
  Optimizer(std::vector<Tensor> params, OptimizerConfig config);

  void step();
  void zero_grad();
  std::int64_t step_count() const { return step_count_; }
  const OptimizerConfig& config() const { return config_; }

 private:
  std::vector<Tensor> params_;
  std::vector<Eigen::ArrayXd> m_;
  std::vector<Eigen::ArrayXd> v_;
  OptimizerConfig config_;
  std::int64_t step_count_ = 0;
};

// ---- checkpoints ----------------------------------------------------

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Binary checkpoint: magic "QSCK", version byte 0x01, then flat
/// (name, shape, little-endian f64 data) records. Layout in docs/formats.md.
void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::string& path);

}  // namespace qsim
