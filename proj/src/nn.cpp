#include "qsim/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace qsim {

Eigen::Index MlpSpec::input_width() const {
  validate();
  return layer_widths.front();
}

Eigen::Index MlpSpec::output_width() const {
  validate();
  return layer_widths.back();
}

void MlpSpec::validate() const {
  if (layer_widths.size() < 2)
    throw std::invalid_argument("MlpSpec needs at least input and output widths");
  for (Eigen::Index w : layer_widths)
    if (w <= 0) throw std::invalid_argument("MlpSpec widths must be positive");
}

MlpParams MlpParams::init(const MlpSpec& spec, Rng& rng, bool requires_grad) {
  spec.validate();
  MlpParams p;
  for (std::size_t l = 0; l + 1 < spec.layer_widths.size(); ++l) {
    const Eigen::Index fan_in = spec.layer_widths[l];
    const Eigen::Index fan_out = spec.layer_widths[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor w = Tensor::zeros({fan_in, fan_out}, requires_grad);
    Tensor b = Tensor::zeros({fan_out}, requires_grad);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.array()[i] = rng.uniform(-bound, bound);
    for (Eigen::Index i = 0; i < b.size(); ++i) b.array()[i] = rng.uniform(-bound, bound);
    p.weights.push_back(std::move(w));
    p.biases.push_back(std::move(b));
  }
  return p;
}

MlpParams MlpParams::zeros(const MlpSpec& spec, bool requires_grad) {
  spec.validate();
  MlpParams p;
  for (std::size_t l = 0; l + 1 < spec.layer_widths.size(); ++l) {
    p.weights.push_back(Tensor::zeros({spec.layer_widths[l], spec.layer_widths[l + 1]}, requires_grad));
    p.biases.push_back(Tensor::zeros({spec.layer_widths[l + 1]}, requires_grad));
  }
  return p;
}

std::vector<Tensor> MlpParams::all() const {
  std::vector<Tensor> out;
  out.reserve(weights.size() * 2);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.push_back(weights[i]);
    out.push_back(biases[i]);
  }
  return out;
}

MlpParams MlpParams::clone(bool requires_grad) const {
  MlpParams p;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    p.weights.push_back(Tensor::from_array(weights[i].shape(),
                                           {weights[i].array().data(), static_cast<std::size_t>(weights[i].size())},
                                           requires_grad));
    p.biases.push_back(Tensor::from_array(biases[i].shape(),
                                          {biases[i].array().data(), static_cast<std::size_t>(biases[i].size())},
                                          requires_grad));
  }
  return p;
}

void MlpParams::copy_values_from(const MlpParams& other) {
  if (weights.size() != other.weights.size())
    throw std::invalid_argument("copy_values_from: layer count mismatch");
  for (std::size_t i = 0; i < weights.size(); ++i) {
    weights[i].array() = other.weights[i].array();
    biases[i].array() = other.biases[i].array();
  }
}

void MlpParams::lerp_values_from(const MlpParams& other, double tau) {
  if (weights.size() != other.weights.size())
    throw std::invalid_argument("lerp_values_from: layer count mismatch");
  for (std::size_t i = 0; i < weights.size(); ++i) {
    weights[i].array() = tau * other.weights[i].array() + (1.0 - tau) * weights[i].array();
    biases[i].array() = tau * other.biases[i].array() + (1.0 - tau) * biases[i].array();
  }
}

Tensor apply_activation(Activation act, const Tensor& x) {
  switch (act) {
    case Activation::ReLU: return relu(x);
    case Activation::Identity: return x;
    case Activation::Tanh: return tanh(x);
  }
  throw std::logic_error("unknown activation");
}

Tensor mlp_forward(const MlpSpec& spec, const MlpParams& params, const Tensor& input) {
  spec.validate();
  if (params.weights.size() != spec.num_layers())
    throw std::invalid_argument("mlp_forward: parameter count does not match spec");
  Tensor x = input.shape().size() == 2 ? input : reshape(input, {1, input.size()});
  if (x.cols() != spec.input_width())
    throw std::invalid_argument("mlp_forward: input width " + std::to_string(x.cols()) + " != spec width " +
                                std::to_string(spec.input_width()));
  check_finite(input, "mlp input");
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    check_finite(params.weights[l], "mlp weights");
    check_finite(params.biases[l], "mlp biases");
    x = add(matmul(x, params.weights[l]), params.biases[l]);
    const bool last = l + 1 == params.weights.size();
    x = apply_activation(last ? spec.final_activation : spec.hidden_activation, x);
  }
  if (input.shape().size() != 2) x = reshape(x, {x.cols()});
  return x;
}

Eigen::VectorXd mlp_eval(const MlpSpec& spec, const MlpParams& params, const Eigen::VectorXd& input) {
  NoGradGuard no_grad;
  return mlp_forward(spec, params, Tensor::from_vector(input)).to_vector();
}

// ---- optimizer -------------------------------------------------------

Optimizer::Optimizer(std::vector<Tensor> params, OptimizerConfig config)
    : params_(std::move(params)), config_(config) {
  if (config_.learning_rate <= 0.0) throw std::invalid_argument("learning rate must be positive");
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    m_.push_back(Eigen::ArrayXd::Zero(p.size()));
    v_.push_back(Eigen::ArrayXd::Zero(p.size()));
  }
}

void Optimizer::step() {
  ++step_count_;
  const double t = static_cast<double>(step_count_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad()) continue;  // parameter untouched by this loss
    Eigen::Map<const Eigen::ArrayXd> g = p.grad();
    check_finite(g, "gradients");
    switch (config_.kind) {
      case OptimizerKind::Sgd:
        p.array() -= config_.learning_rate * g;
        break;
      case OptimizerKind::Adam: {
        m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
        v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g.square();
        const double bc1 = 1.0 - std::pow(config_.beta1, t);
        const double bc2 = 1.0 - std::pow(config_.beta2, t);
        p.array() -= config_.learning_rate * (m_[i] / bc1) / ((v_[i] / bc2).sqrt() + config_.epsilon);
        break;
      }
    }
  }
}

void Optimizer::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

// ---- checkpoints ----------------------------------------------------

namespace {

constexpr char kMagic[4] = {'Q', 'S', 'C', 'K'};
constexpr std::uint8_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_u64(std::ostream& os, std::uint64_t v) {
  write_u32(os, static_cast<std::uint32_t>(v));
  write_u32(os, static_cast<std::uint32_t>(v >> 32));
}

std::uint64_t read_u64(std::istream& is) {
  const std::uint64_t lo = read_u32(is);
  const std::uint64_t hi = read_u32(is);
  return lo | (hi << 32);
}

void write_f64(std::ostream& os, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  write_u64(os, bits);
}

double read_f64(std::istream& is) {
  const std::uint64_t bits = read_u64(is);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  os.write(kMagic, 4);
  os.put(static_cast<char>(kVersion));
  write_u32(os, static_cast<std::uint32_t>(tensors.size()));
  for (const NamedTensor& nt : tensors) {
    write_u32(os, static_cast<std::uint32_t>(nt.name.size()));
    os.write(nt.name.data(), static_cast<std::streamsize>(nt.name.size()));
    write_u32(os, static_cast<std::uint32_t>(nt.tensor.shape().size()));
    for (Eigen::Index e : nt.tensor.shape()) write_u64(os, static_cast<std::uint64_t>(e));
    for (Eigen::Index i = 0; i < nt.tensor.size(); ++i) write_f64(os, nt.tensor.at(i));
  }
  if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

std::vector<NamedTensor> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  const int version = is.get();
  if (version != kVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t count = read_u32(is);
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint32_t name_len = read_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const std::uint32_t ndim = read_u32(is);
    Shape shape(ndim);
    for (std::uint32_t d = 0; d < ndim; ++d) shape[d] = static_cast<Eigen::Index>(read_u64(is));
    Tensor t = Tensor::zeros(shape);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.array()[i] = read_f64(is);
    if (!is) throw std::runtime_error("truncated checkpoint: " + path);
    out.push_back({std::move(name), std::move(t)});
  }
  return out;
}

}  // namespace qsim
