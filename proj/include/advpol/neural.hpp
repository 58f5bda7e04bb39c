#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "advpol/binio.hpp"
#include "advpol/errors.hpp"
#include "advpol/rng.hpp"

namespace advpol {

enum class Activation : std::uint32_t { Tanh = 0, Identity = 1 };

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Hidden-layer activations of one forward pass, in layer order.
struct ActivationTrace {
  std::vector<Eigen::VectorXd> hidden;

  Eigen::VectorXd concatenated() const {
    Eigen::Index n = 0;
    for (const auto& h : hidden) n += h.size();
    Eigen::VectorXd out(n);
    Eigen::Index at = 0;
    for (const auto& h : hidden) {
      out.segment(at, h.size()) = h;
      at += h.size();
    }
    return out;
  }
};

/// Cached layer outputs of a batched forward pass; input to backward().
struct MlpTape {
  /// outputs[0] is the input batch, outputs[l + 1] the output of layer l.
  std::vector<Eigen::MatrixXd> outputs;
  bool empty() const noexcept { return outputs.empty(); }
};

/// Dense feed-forward network: affine layers, `hidden` activation between
/// them, linear output. All parameters live in one flat vector laid out as
/// W0 (row-major), b0, W1, b1, ...
class Mlp {
 public:
  Mlp() = default;

  explicit Mlp(std::vector<std::size_t> layer_sizes, Activation hidden = Activation::Tanh)
      : sizes_(std::move(layer_sizes)), hidden_(hidden) {
    if (sizes_.size() < 2) throw ConfigError("an MLP needs at least input and output sizes");
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      offsets_.push_back(n);
      n += sizes_[l + 1] * sizes_[l] + sizes_[l + 1];
    }
    theta_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  }

  /// Orthogonal weights (gain per layer), zero biases.
  static Mlp orthogonal(std::vector<std::size_t> layer_sizes, double hidden_gain, double output_gain,
                        Rng& rng, Activation hidden = Activation::Tanh) {
    Mlp m(std::move(layer_sizes), hidden);
    for (std::size_t l = 0; l < m.num_layers(); ++l) {
      const double gain = l + 1 == m.num_layers() ? output_gain : hidden_gain;
      m.weight(l) = orthogonal_matrix(m.sizes_[l + 1], m.sizes_[l], rng) * gain;
    }
    return m;
  }

  const std::vector<std::size_t>& layer_sizes() const noexcept { return sizes_; }
  Activation hidden_activation() const noexcept { return hidden_; }
  std::size_t num_layers() const noexcept { return sizes_.empty() ? 0 : sizes_.size() - 1; }
  std::size_t input_dim() const noexcept { return sizes_.front(); }
  std::size_t output_dim() const noexcept { return sizes_.back(); }
  std::size_t num_params() const noexcept { return static_cast<std::size_t>(theta_.size()); }

  const Eigen::VectorXd& params() const noexcept { return theta_; }
  Eigen::VectorXd& params() noexcept { return theta_; }

  Eigen::Map<const RowMajorMatrix> weight(std::size_t l) const {
    return {theta_.data() + offsets_[l], rows(l), cols(l)};
  }
  Eigen::Map<RowMajorMatrix> weight(std::size_t l) { return {theta_.data() + offsets_[l], rows(l), cols(l)}; }
  Eigen::Map<const Eigen::VectorXd> bias(std::size_t l) const {
    return {theta_.data() + offsets_[l] + rows(l) * cols(l), rows(l)};
  }
  Eigen::Map<Eigen::VectorXd> bias(std::size_t l) {
    return {theta_.data() + offsets_[l] + rows(l) * cols(l), rows(l)};
  }

  /// Batched forward pass; inputs are columns. Fills `tape` when given.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& inputs, MlpTape* tape = nullptr) const {
    if (static_cast<std::size_t>(inputs.rows()) != input_dim())
      throw ConfigError("MLP input has dimension " + std::to_string(inputs.rows()) + ", expected " +
                        std::to_string(input_dim()));
    if (tape) {
      tape->outputs.clear();
      tape->outputs.push_back(inputs);
    }
    Eigen::MatrixXd a = inputs;
    for (std::size_t l = 0; l < num_layers(); ++l) {
      Eigen::MatrixXd z = weight(l) * a;
      z.colwise() += bias(l);
      if (l + 1 < num_layers() && hidden_ == Activation::Tanh) z = z.array().tanh().matrix();
      a = std::move(z);
      if (tape) tape->outputs.push_back(a);
    }
    return a;
  }

  /// Single-input forward pass with optional hidden-activation capture.
  Eigen::VectorXd forward(const Eigen::VectorXd& input, ActivationTrace* trace) const {
    if (static_cast<std::size_t>(input.size()) != input_dim())
      throw ConfigError("MLP input has dimension " + std::to_string(input.size()) + ", expected " +
                        std::to_string(input_dim()));
    if (trace) trace->hidden.clear();
    Eigen::VectorXd a = input;
    for (std::size_t l = 0; l < num_layers(); ++l) {
      Eigen::VectorXd z = weight(l) * a + bias(l);
      if (l + 1 < num_layers()) {
        if (hidden_ == Activation::Tanh) z = z.array().tanh().matrix();
        if (trace) trace->hidden.push_back(z);
      }
      a = std::move(z);
    }
    return a;
  }

  /// Gradient of sum_columns <output_grad, output> with respect to the flat
  /// parameters, given the tape of the matching forward pass. When
  /// `input_grad` is non-null it receives the gradient with respect to inputs.
  Eigen::VectorXd backward(const MlpTape& tape, const Eigen::MatrixXd& output_grad,
                           Eigen::MatrixXd* input_grad = nullptr) const {
    if (tape.outputs.size() != num_layers() + 1)
      throw ConfigError("backward called without a cached forward pass");
    if (static_cast<std::size_t>(output_grad.rows()) != output_dim() ||
        output_grad.cols() != tape.outputs.front().cols())
      throw ConfigError("output gradient shape does not match the cached forward pass");
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(theta_.size());
    Eigen::MatrixXd delta = output_grad;
    for (std::size_t l = num_layers(); l-- > 0;) {
      const Eigen::MatrixXd& a_in = tape.outputs[l];
      Eigen::Map<RowMajorMatrix> gw(grad.data() + offsets_[l], rows(l), cols(l));
      gw.noalias() = delta * a_in.transpose();
      Eigen::Map<Eigen::VectorXd>(grad.data() + offsets_[l] + rows(l) * cols(l), rows(l)) =
          delta.rowwise().sum();
      if (l > 0 || input_grad) {
        Eigen::MatrixXd next = weight(l).transpose() * delta;
        if (l > 0 && hidden_ == Activation::Tanh)
          next.array() *= 1.0 - a_in.array().square();
        delta = std::move(next);
      }
    }
    if (input_grad) *input_grad = delta;
    return grad;
  }

  static constexpr std::uint32_t kFormatVersion = 1;

  /// Binary record: "AMLP", u32 version, u32 activation, u64 layer count,
  /// u64 sizes..., u64 parameter count, f64 parameters (flat layout above).
  void write_binary(std::ostream& os) const {
    os.write("AMLP", 4);
    binio::write<std::uint32_t>(os, kFormatVersion);
    binio::write<std::uint32_t>(os, static_cast<std::uint32_t>(hidden_));
    binio::write<std::uint64_t>(os, sizes_.size());
    for (auto s : sizes_) binio::write<std::uint64_t>(os, s);
    binio::write<std::uint64_t>(os, num_params());
    os.write(reinterpret_cast<const char*>(theta_.data()),
             static_cast<std::streamsize>(theta_.size() * sizeof(double)));
  }

  static Mlp read_binary(std::istream& is) {
    binio::expect_magic(is, "AMLP");
    const auto version = binio::read<std::uint32_t>(is);
    if (version != kFormatVersion) throw ConfigError("unsupported MLP format version " + std::to_string(version));
    const auto act = binio::read<std::uint32_t>(is);
    if (act > 1) throw ConfigError("unknown activation code in MLP record");
    const auto n = binio::read<std::uint64_t>(is);
    if (n < 2 || n > 64) throw ConfigError("bad layer count in MLP record");
    std::vector<std::size_t> sizes(n);
    for (auto& s : sizes) s = binio::read<std::uint64_t>(is);
    Mlp m(sizes, static_cast<Activation>(act));
    const auto np = binio::read<std::uint64_t>(is);
    if (np != m.num_params()) throw ConfigError("parameter count does not match layer sizes");
    is.read(reinterpret_cast<char*>(m.theta_.data()), static_cast<std::streamsize>(np * sizeof(double)));
    if (!is) throw ConfigError("truncated MLP record");
    return m;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["format_version"] = kFormatVersion;
    j["activation"] = hidden_ == Activation::Tanh ? "tanh" : "identity";
    j["layer_sizes"] = sizes_;
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t l = 0; l < num_layers(); ++l) {
      nlohmann::json w = nlohmann::json::array();
      for (Eigen::Index r = 0; r < weight(l).rows(); ++r) {
        std::vector<double> row(weight(l).row(r).begin(), weight(l).row(r).end());
        w.push_back(row);
      }
      std::vector<double> b(bias(l).begin(), bias(l).end());
      layers.push_back({{"weight", w}, {"bias", b}});
    }
    j["layers"] = layers;
    return j;
  }

  static Mlp from_json(const nlohmann::json& j) {
    if (j.at("format_version").get<std::uint32_t>() != kFormatVersion)
      throw ConfigError("unsupported MLP format version");
    const std::string act = j.at("activation").get<std::string>();
    Mlp m(j.at("layer_sizes").get<std::vector<std::size_t>>(),
          act == "tanh" ? Activation::Tanh : Activation::Identity);
    const auto& layers = j.at("layers");
    if (layers.size() != m.num_layers()) throw ConfigError("layer count mismatch in MLP json");
    for (std::size_t l = 0; l < m.num_layers(); ++l) {
      const auto& w = layers[l].at("weight");
      for (Eigen::Index r = 0; r < m.weight(l).rows(); ++r)
        for (Eigen::Index c = 0; c < m.weight(l).cols(); ++c) m.weight(l)(r, c) = w.at(r).at(c).get<double>();
      const auto& b = layers[l].at("bias");
      for (Eigen::Index r = 0; r < m.bias(l).size(); ++r) m.bias(l)(r) = b.at(r).get<double>();
    }
    return m;
  }

 private:
  Eigen::Index rows(std::size_t l) const { return static_cast<Eigen::Index>(sizes_[l + 1]); }
  Eigen::Index cols(std::size_t l) const { return static_cast<Eigen::Index>(sizes_[l]); }

  static Eigen::MatrixXd orthogonal_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
    if (rows == 0 || cols == 0) return Eigen::MatrixXd::Zero(rows, cols);
    const auto big = static_cast<Eigen::Index>(std::max(rows, cols));
    const auto small = static_cast<Eigen::Index>(std::min(rows, cols));
    Eigen::MatrixXd g(big, small);
    for (Eigen::Index c = 0; c < small; ++c)
      for (Eigen::Index r = 0; r < big; ++r) g(r, c) = standard_normal(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
    const Eigen::MatrixXd r = qr.matrixQR().topRows(small).triangularView<Eigen::Upper>();
    for (Eigen::Index c = 0; c < small; ++c)
      if (r(c, c) < 0) q.col(c) *= -1.0;
    if (static_cast<Eigen::Index>(rows) == big) return q;
    return q.transpose();
  }

  std::vector<std::size_t> sizes_;
  std::vector<std::size_t> offsets_;
  Activation hidden_ = Activation::Tanh;
  Eigen::VectorXd theta_;
};

struct GradCheckReport {
  bool passed = true;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::vector<double> rel_errors;
};

/// Loss with analytic gradient: returns the loss and writes d loss / d theta.
using DifferentiableLoss = std::function<double(const Eigen::VectorXd& theta, Eigen::VectorXd* grad)>;

/// Compares the analytic gradient against central differences. The relative
/// error per coordinate is |g - fd| / max(|g|, |fd|, floor).
inline GradCheckReport grad_check(const Eigen::VectorXd& theta, const DifferentiableLoss& loss,
                                  double tolerance, double h = 1e-5, double floor = 1e-6) {
  GradCheckReport rep;
  Eigen::VectorXd analytic(theta.size());
  loss(theta, &analytic);
  Eigen::VectorXd probe = theta;
  rep.rel_errors.resize(static_cast<std::size_t>(theta.size()));
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    probe(i) = theta(i) + h;
    const double up = loss(probe, nullptr);
    probe(i) = theta(i) - h;
    const double down = loss(probe, nullptr);
    probe(i) = theta(i);
    const double fd = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(analytic(i)), std::abs(fd), floor});
    const double err = std::abs(analytic(i) - fd) / denom;
    rep.rel_errors[static_cast<std::size_t>(i)] = err;
    if (err > rep.max_rel_error || !std::isfinite(err)) {
      rep.max_rel_error = std::isfinite(err) ? err : std::numeric_limits<double>::infinity();
      rep.worst_index = static_cast<std::size_t>(i);
    }
  }
  rep.passed = rep.max_rel_error < tolerance;
  return rep;
}

}  // namespace advpol
