#pragma once

// Dense feed-forward base learner with manual backpropagation, optional sign
// binarization (straight-through estimator), optimizers and checkpoints.
//
// Parameters live in one flat buffer, layer by layer: the weight matrix of
// layer l (out x in, row-major) followed by its bias vector.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "gncl/core.hpp"
#include "gncl/losses.hpp"
#include "gncl/rng.hpp"

namespace gncl {

enum class Activation : std::uint32_t { Identity = 0, ReLU = 1 };

inline double sign_of(double v) noexcept { return v >= 0.0 ? 1.0 : -1.0; }

class DenseNet {
 public:
  DenseNet() = default;

  /// hidden_activations has one entry per hidden layer (layer_dims.size() - 2).
  DenseNet(std::vector<std::size_t> layer_dims, std::vector<Activation> hidden_activations,
           bool binarized)
      : dims_(std::move(layer_dims)), hidden_(std::move(hidden_activations)), binarized_(binarized) {
    require(dims_.size() >= 2, "DenseNet: need at least input and output dims");
    for (auto d : dims_) require(d >= 1, "DenseNet: layer dims must be positive");
    require(hidden_.size() == dims_.size() - 2, "DenseNet: one activation per hidden layer");
    std::size_t offset = 0;
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
      weight_offset_.push_back(offset);
      offset += dims_[l + 1] * dims_[l];
      bias_offset_.push_back(offset);
      offset += dims_[l + 1];
    }
    params_.assign(offset, 0.0);
  }

  const std::vector<std::size_t>& layer_dims() const noexcept { return dims_; }
  std::size_t layer_count() const noexcept { return dims_.size() - 1; }
  std::size_t input_dim() const noexcept { return dims_.front(); }
  std::size_t output_dim() const noexcept { return dims_.back(); }
  bool binarized() const noexcept { return binarized_; }
  const std::vector<Activation>& hidden_activations() const noexcept { return hidden_; }

  /// Activation applied after layer l; the output layer is always Identity.
  Activation activation(std::size_t l) const noexcept {
    return l + 1 < layer_count() ? hidden_[l] : Activation::Identity;
  }

  std::size_t parameter_count() const noexcept { return params_.size(); }
  std::span<double> parameters() noexcept { return params_; }
  std::span<const double> parameters() const noexcept { return params_; }

  std::size_t weight_offset(std::size_t l) const { return weight_offset_.at(l); }
  std::size_t bias_offset(std::size_t l) const { return bias_offset_.at(l); }

  double& weight(std::size_t l, std::size_t out, std::size_t in) {
    return params_[weight_offset_[l] + out * dims_[l] + in];
  }
  double weight(std::size_t l, std::size_t out, std::size_t in) const {
    return params_[weight_offset_[l] + out * dims_[l] + in];
  }
  double& bias(std::size_t l, std::size_t out) { return params_[bias_offset_[l] + out]; }
  double bias(std::size_t l, std::size_t out) const { return params_[bias_offset_[l] + out]; }

  bool same_shape(const DenseNet& other) const {
    return dims_ == other.dims_ && hidden_ == other.hidden_ && binarized_ == other.binarized_;
  }

  friend bool operator==(const DenseNet& a, const DenseNet& b) {
    return a.same_shape(b) && a.params_ == b.params_;
  }

 private:
  std::vector<std::size_t> dims_;
  std::vector<Activation> hidden_;
  bool binarized_ = false;
  std::vector<std::size_t> weight_offset_;
  std::vector<std::size_t> bias_offset_;
  std::vector<double> params_;
};

/// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases. Binarized nets
/// default to Identity hidden activations so that sign() itself is the
/// nonlinearity (sign after ReLU would be constant).
inline DenseNet init_net(std::uint64_t seed, const std::vector<std::size_t>& layer_dims, bool binarized,
                         Activation hidden = Activation::ReLU) {
  require(layer_dims.size() >= 2, "init_net: need at least two layer dims");
  const Activation act = binarized ? Activation::Identity : hidden;
  DenseNet net(layer_dims, std::vector<Activation>(layer_dims.size() - 2, act), binarized);
  RandomStream rng(seed);
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(layer_dims[l]));
    for (std::size_t o = 0; o < layer_dims[l + 1]; ++o)
      for (std::size_t i = 0; i < layer_dims[l]; ++i) net.weight(l, o, i) = rng.uniform(-scale, scale);
  }
  return net;
}

/// Intermediate values of one forward pass, consumed by backward().
struct ForwardTrace {
  std::vector<Vector> inputs;        // input to layer l (binarized if applicable)
  std::vector<Vector> preactivation;  // W x + b for layer l
  std::vector<Vector> activated;      // act(pre) before any sign, layer l
  Vector output;
};

inline ForwardTrace forward_trace(const DenseNet& net, std::span<const double> x) {
  require(x.size() == net.input_dim(), "forward: input dimension mismatch");
  ForwardTrace trace;
  Vector current(x.begin(), x.end());
  const bool bin = net.binarized();
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const std::size_t in = net.layer_dims()[l];
    const std::size_t out = net.layer_dims()[l + 1];
    Vector pre(out);
    for (std::size_t o = 0; o < out; ++o) {
      double acc = net.bias(l, o);
      for (std::size_t i = 0; i < in; ++i) {
        const double w = net.weight(l, o, i);
        acc += (bin ? sign_of(w) : w) * current[i];
      }
      pre[o] = acc;
    }
    Vector act = pre;
    if (net.activation(l) == Activation::ReLU)
      for (double& v : act) v = std::max(v, 0.0);
    trace.inputs.push_back(std::move(current));
    trace.preactivation.push_back(std::move(pre));
    const bool hidden = l + 1 < net.layer_count();
    Vector next = act;
    if (bin && hidden)
      for (double& v : next) v = sign_of(v);
    trace.activated.push_back(std::move(act));
    current = std::move(next);
  }
  trace.output = std::move(current);
  return trace;
}

inline Vector forward(const DenseNet& net, std::span<const double> x) {
  return forward_trace(net, x).output;
}

/// Accumulates scale * d(upstream . z)/d(params) into grads. For binarized
/// nets sign() is passed through as identity, zeroed where the stored weight
/// (or the pre-sign activation) exceeds 1 in magnitude.
inline void backward_accumulate(const DenseNet& net, const ForwardTrace& trace,
                                std::span<const double> upstream, std::span<double> grads,
                                double scale = 1.0) {
  require(upstream.size() == net.output_dim(), "backward: upstream length mismatch");
  require(grads.size() == net.parameter_count(), "backward: gradient buffer size mismatch");
  require(trace.inputs.size() == net.layer_count(), "backward: trace does not match network");
  const bool bin = net.binarized();
  Vector delta_out(upstream.begin(), upstream.end());  // dL/d(layer output)
  for (std::size_t l = net.layer_count(); l-- > 0;) {
    const std::size_t in = net.layer_dims()[l];
    const std::size_t out = net.layer_dims()[l + 1];
    const bool hidden = l + 1 < net.layer_count();
    Vector delta_pre(out);
    for (std::size_t o = 0; o < out; ++o) {
      double d = delta_out[o];
      if (bin && hidden && std::abs(trace.activated[l][o]) > 1.0) d = 0.0;
      if (net.activation(l) == Activation::ReLU && trace.preactivation[l][o] <= 0.0) d = 0.0;
      delta_pre[o] = d;
    }
    const Vector& input = trace.inputs[l];
    const std::size_t woff = net.weight_offset(l);
    const std::size_t boff = net.bias_offset(l);
    for (std::size_t o = 0; o < out; ++o) {
      const double d = scale * delta_pre[o];
      for (std::size_t i = 0; i < in; ++i) {
        if (bin && std::abs(net.weight(l, o, i)) > 1.0) continue;
        grads[woff + o * in + i] += d * input[i];
      }
      grads[boff + o] += d;
    }
    if (l == 0) break;
    Vector delta_in(in, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
      if (delta_pre[o] == 0.0) continue;
      for (std::size_t i = 0; i < in; ++i) {
        const double w = net.weight(l, o, i);
        delta_in[i] += (bin ? sign_of(w) : w) * delta_pre[o];
      }
    }
    delta_out = std::move(delta_in);
  }
}

/// Parameter gradient of upstream . h(x), in the flat parameter layout.
inline Vector backward(const DenseNet& net, std::span<const double> x, std::span<const double> upstream) {
  Vector grads(net.parameter_count(), 0.0);
  backward_accumulate(net, forward_trace(net, x), upstream, grads);
  return grads;
}

// ---------------------------------------------------------------------------
// Optimizers

enum class OptimizerKind { SGDMomentum, AdaBelief };

struct OptimizerSettings {
  OptimizerKind kind = OptimizerKind::SGDMomentum;
  double momentum = 0.9;  // SGD
  double beta1 = 0.9;     // AdaBelief
  double beta2 = 0.999;
  double eps = 1e-16;
};

struct LrSchedule {
  double initial = 0.01;
  int halve_every = 10;

  void validate() const {
    require(initial > 0.0, "LrSchedule: initial rate must be positive");
    require(halve_every >= 1, "LrSchedule: halve_every must be positive");
  }

  double rate(int epoch) const {
    return initial * std::ldexp(1.0, -(epoch / halve_every));
  }
};

class OptimizerState {
 public:
  OptimizerState(OptimizerSettings settings, const DenseNet& net)
      : settings_(settings), first_(net.parameter_count(), 0.0), second_(net.parameter_count(), 0.0) {}

  const OptimizerSettings& settings() const noexcept { return settings_; }
  std::uint64_t step_count() const noexcept { return steps_; }
  double learning_rate() const noexcept { return rate_; }
  const std::vector<double>& first_moment() const noexcept { return first_; }
  const std::vector<double>& second_moment() const noexcept { return second_; }

  void step(DenseNet& net, std::span<const double> grads, double rate) {
    require(rate >= 0.0, "optimizer: learning rate must be non-negative");
    require(grads.size() == net.parameter_count() && first_.size() == grads.size(),
            "optimizer: gradient shape does not match parameters");
    rate_ = rate;
    ++steps_;
    auto params = net.parameters();
    if (settings_.kind == OptimizerKind::SGDMomentum) {
      for (std::size_t p = 0; p < params.size(); ++p) {
        first_[p] = settings_.momentum * first_[p] + grads[p];
        params[p] -= rate * first_[p];
      }
      return;
    }
    const double b1 = settings_.beta1, b2 = settings_.beta2, eps = settings_.eps;
    const double t = static_cast<double>(steps_);
    const double corr1 = 1.0 - std::pow(b1, t);
    const double corr2 = 1.0 - std::pow(b2, t);
    for (std::size_t p = 0; p < params.size(); ++p) {
      const double g = grads[p];
      first_[p] = b1 * first_[p] + (1.0 - b1) * g;
      const double dev = g - first_[p];
      second_[p] = b2 * second_[p] + (1.0 - b2) * dev * dev + eps;
      const double mhat = first_[p] / corr1;
      const double shat = second_[p] / corr2;
      params[p] -= rate * mhat / (std::sqrt(shat) + eps);
    }
  }

 private:
  OptimizerSettings settings_;
  std::vector<double> first_;
  std::vector<double> second_;
  std::uint64_t steps_ = 0;
  double rate_ = 0.0;
};

inline void apply_update(OptimizerState& opt, DenseNet& net, std::span<const double> grads, int epoch,
                         const LrSchedule& schedule) {
  opt.step(net, grads, schedule.rate(epoch));
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_parameter = 0;
  std::size_t parameter_count = 0;
  bool passed = false;
};

/// Relative error |a - n| / max(|a|, |n|, floor).
inline double relative_error(double analytic, double numeric, double floor = 1e-4) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline GradCheckReport compare_with_finite_differences(const DenseNet& net, const LossKind& kind,
                                                       std::span<const double> x, std::span<const double> y,
                                                       std::span<const double> analytic, double tolerance,
                                                       double step = 1e-5) {
  require(analytic.size() == net.parameter_count(), "gradient_check: gradient size mismatch");
  DenseNet probe = net;
  auto params = probe.parameters();
  GradCheckReport report;
  report.parameter_count = params.size();
  for (std::size_t p = 0; p < params.size(); ++p) {
    const double saved = params[p];
    params[p] = saved + step;
    const double up = loss_value(kind, forward(probe, x), y);
    params[p] = saved - step;
    const double down = loss_value(kind, forward(probe, x), y);
    params[p] = saved;
    const double err = relative_error(analytic[p], (up - down) / (2.0 * step));
    if (err > report.max_rel_error) {
      report.max_rel_error = err;
      report.worst_parameter = p;
    }
  }
  report.passed = report.max_rel_error < tolerance;
  return report;
}

/// Draws a seeded input/label, compares backward() against central finite
/// differences of loss(forward(x)). For NLL the output biases of a copy are
/// shifted so that all outputs are >= 1 (NLL needs positive predictions).
inline GradCheckReport gradient_check(const DenseNet& net, const LossKind& kind, double tolerance = 1e-5,
                                      std::uint64_t seed = 0) {
  require(!net.binarized(), "gradient_check: binarized networks are not differentiable");
  require(kind.output_dim == net.output_dim(), "gradient_check: loss C does not match network output");
  RandomStream rng(derive_seed(seed, {stream::kGradCheck}));
  Vector x(net.input_dim());
  for (double& v : x) v = rng.uniform(-1.0, 1.0);
  Vector y(kind.output_dim, 0.0);
  if (kind.is_classification()) {
    y[rng.index(kind.output_dim)] = 1.0;
  } else if (kind.is_binary()) {
    y[0] = rng.uniform() < 0.5 ? -1.0 : 1.0;
  } else {
    y[0] = rng.uniform(-1.0, 1.0);
  }
  DenseNet probe = net;
  if (kind.tag == LossTag::NLL) {
    const Vector z = forward(probe, x);
    const double lowest = *std::min_element(z.begin(), z.end());
    const double shift = lowest < 1.0 ? 1.0 - lowest : 0.0;
    const std::size_t last = probe.layer_count() - 1;
    for (std::size_t o = 0; o < probe.output_dim(); ++o) probe.bias(last, o) += shift;
  }
  const Vector z = forward(probe, x);
  const Vector upstream = loss_gradient(kind, z, y);
  const Vector analytic = backward(probe, x, upstream);
  return compare_with_finite_differences(probe, kind, x, y, analytic, tolerance);
}

// ---------------------------------------------------------------------------
// Checkpoints: "GNCL", u32 version, u32 dim count, u32 dims[], u32 flags
// (bit 0 = binarized), u32 activation per hidden layer, then the flat
// parameter buffer as little-endian IEEE-754 doubles. All integers LE.

inline constexpr char kCheckpointMagic[4] = {'G', 'N', 'C', 'L'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f64(std::ostream& out, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint32_t get_u32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError(what + ": truncated checkpoint");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline double get_f64(std::istream& in, const std::string& what) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw FormatError(what + ": truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(v);
}

}  // namespace detail

inline void write_checkpoint(std::ostream& out, const DenseNet& net) {
  out.write(kCheckpointMagic, 4);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(net.layer_dims().size()));
  for (auto d : net.layer_dims()) detail::put_u32(out, static_cast<std::uint32_t>(d));
  detail::put_u32(out, net.binarized() ? 1u : 0u);
  for (auto a : net.hidden_activations()) detail::put_u32(out, static_cast<std::uint32_t>(a));
  for (double p : net.parameters()) detail::put_f64(out, p);
}

inline DenseNet read_checkpoint(std::istream& in, const std::string& name = "checkpoint") {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw FormatError(name + ": missing GNCL magic");
  const auto version = detail::get_u32(in, name);
  if (version != kCheckpointVersion) throw FormatError(name + ": unsupported version " + std::to_string(version));
  const auto count = detail::get_u32(in, name);
  if (count < 2 || count > 1024) throw FormatError(name + ": implausible layer count");
  std::vector<std::size_t> dims(count);
  for (auto& d : dims) {
    d = detail::get_u32(in, name);
    if (d == 0) throw FormatError(name + ": zero layer dimension");
  }
  const auto flags = detail::get_u32(in, name);
  std::vector<Activation> hidden(count - 2);
  for (auto& a : hidden) {
    const auto code = detail::get_u32(in, name);
    if (code > 1) throw FormatError(name + ": unknown activation code");
    a = static_cast<Activation>(code);
  }
  DenseNet net(dims, hidden, (flags & 1u) != 0);
  for (double& p : net.parameters()) p = detail::get_f64(in, name);
  return net;
}

inline void save_checkpoint(const std::string& path, const DenseNet& net) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path + ": cannot open for writing");
  write_checkpoint(out, net);
}

inline DenseNet load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open");
  return read_checkpoint(in, path);
}

}  // namespace gncl
