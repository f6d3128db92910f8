#pragma once

// Closed-form losses with exact gradients, Hessians and third-derivative
// bounds. Every function here is pure; NLL clamp events are reported through
// an optional caller-owned LossDiagnostics.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <string_view>

#include "gncl/core.hpp"

namespace gncl {

enum class LossTag { MSE, NLL, CrossEntropySoftmax, Exponential, GaussianHinge };

struct LossKind {
  LossTag tag = LossTag::MSE;
  std::size_t output_dim = 1;
  double nll_clamp = 1e-12;

  void validate() const {
    require(output_dim >= 1, "LossKind: output_dim must be positive");
    require(nll_clamp > 0.0, "LossKind: nll_clamp must be positive");
    switch (tag) {
      case LossTag::MSE:
      case LossTag::Exponential:
      case LossTag::GaussianHinge:
        require(output_dim == 1, "LossKind: mse/exponential/gaussianhinge require C = 1");
        break;
      case LossTag::NLL:
      case LossTag::CrossEntropySoftmax:
        require(output_dim >= 2, "LossKind: nll/crossentropy require C >= 2");
        break;
    }
  }

  bool is_classification() const noexcept {
    return tag == LossTag::NLL || tag == LossTag::CrossEntropySoftmax;
  }
  bool is_binary() const noexcept {
    return tag == LossTag::Exponential || tag == LossTag::GaussianHinge;
  }

  static LossKind mse() { return {LossTag::MSE, 1}; }
  static LossKind exponential() { return {LossTag::Exponential, 1}; }
  static LossKind gaussian_hinge() { return {LossTag::GaussianHinge, 1}; }
  static LossKind cross_entropy(std::size_t classes) { return {LossTag::CrossEntropySoftmax, classes}; }
  static LossKind nll(std::size_t classes, double clamp = 1e-12) {
    return {LossTag::NLL, classes, clamp};
  }

  friend bool operator==(const LossKind&, const LossKind&) = default;
};

inline std::string_view loss_name(LossTag tag) {
  switch (tag) {
    case LossTag::MSE: return "mse";
    case LossTag::NLL: return "nll";
    case LossTag::CrossEntropySoftmax: return "crossentropy";
    case LossTag::Exponential: return "exponential";
    case LossTag::GaussianHinge: return "gaussianhinge";
  }
  return "unknown";
}

inline LossTag parse_loss_tag(std::string_view name) {
  for (auto tag : {LossTag::MSE, LossTag::NLL, LossTag::CrossEntropySoftmax, LossTag::Exponential,
                   LossTag::GaussianHinge})
    if (loss_name(tag) == name) return tag;
  throw ConfigError("unknown loss '" + std::string(name) + "'");
}

struct LossDiagnostics {
  std::size_t nll_clamps = 0;
};

struct LossEval {
  double value = 0.0;
  Vector gradient;
  Matrix hessian;
};

/// Numerically stable softmax (max-subtracted).
inline Vector softmax(std::span<const double> z) {
  require(!z.empty(), "softmax: empty input");
  for (double v : z) require(std::isfinite(v), "softmax: non-finite input");
  const double peak = *std::max_element(z.begin(), z.end());
  Vector q(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    q[i] = std::exp(z[i] - peak);
    total += q[i];
  }
  for (double& v : q) v /= total;
  return q;
}

namespace detail {

inline void check_inputs(const LossKind& kind, std::span<const double> z, std::span<const double> y) {
  kind.validate();
  require(z.size() == kind.output_dim, "loss: prediction length does not match C");
  require(y.size() == kind.output_dim, "loss: label length does not match C");
  if (kind.is_binary()) {
    require(y[0] == 1.0 || y[0] == -1.0, "loss: binary label must be -1 or +1");
  } else if (kind.is_classification()) {
    std::size_t ones = 0;
    for (double v : y) {
      require(v == 0.0 || v == 1.0, "loss: label is not one-hot");
      ones += v == 1.0;
    }
    require(ones == 1, "loss: label is not one-hot");
  }
}

inline double clamped(double v, double eps, LossDiagnostics* diag) {
  if (v < eps) {
    if (diag) ++diag->nll_clamps;
    return eps;
  }
  return v;
}

inline constexpr double kInvSqrtPi = std::numbers::inv_sqrtpi;

}  // namespace detail

inline double loss_value(const LossKind& kind, std::span<const double> z, std::span<const double> y,
                         LossDiagnostics* diag = nullptr) {
  detail::check_inputs(kind, z, y);
  switch (kind.tag) {
    case LossTag::MSE: {
      const double r = z[0] - y[0];
      return 0.5 * r * r;
    }
    case LossTag::NLL: {
      double total = 0.0;
      for (std::size_t i = 0; i < z.size(); ++i) {
        const double zi = detail::clamped(z[i], kind.nll_clamp, diag);
        if (y[i] != 0.0) total -= y[i] * std::log(zi);
      }
      return total;
    }
    case LossTag::CrossEntropySoftmax: {
      // -log softmax(z)_c = logsumexp(z) - z_c
      const double peak = *std::max_element(z.begin(), z.end());
      double sum = 0.0;
      for (double v : z) sum += std::exp(v - peak);
      const double lse = peak + std::log(sum);
      double total = 0.0;
      for (std::size_t i = 0; i < z.size(); ++i)
        if (y[i] != 0.0) total += y[i] * (lse - z[i]);
      return total;
    }
    case LossTag::Exponential:
      return std::exp(-z[0] * y[0]);
    case LossTag::GaussianHinge: {
      const double h = z[0];
      const double margin = y[0] * h;
      // 1 + erf(-yh) == erfc(yh)
      return std::exp(-h * h) * detail::kInvSqrtPi - margin * std::erfc(margin);
    }
  }
  return 0.0;
}

inline Vector loss_gradient(const LossKind& kind, std::span<const double> z, std::span<const double> y,
                            LossDiagnostics* diag = nullptr) {
  detail::check_inputs(kind, z, y);
  Vector g(z.size(), 0.0);
  switch (kind.tag) {
    case LossTag::MSE:
      g[0] = z[0] - y[0];
      break;
    case LossTag::NLL:
      for (std::size_t i = 0; i < z.size(); ++i) {
        const double zi = detail::clamped(z[i], kind.nll_clamp, diag);
        g[i] = -y[i] / zi;
      }
      break;
    case LossTag::CrossEntropySoftmax: {
      const Vector q = softmax(z);
      for (std::size_t i = 0; i < z.size(); ++i) g[i] = q[i] - y[i];
      break;
    }
    case LossTag::Exponential:
      g[0] = -y[0] * std::exp(-z[0] * y[0]);
      break;
    case LossTag::GaussianHinge:
      g[0] = -y[0] * std::erfc(y[0] * z[0]);
      break;
  }
  return g;
}

inline Matrix loss_hessian(const LossKind& kind, std::span<const double> z, std::span<const double> y,
                           LossDiagnostics* diag = nullptr) {
  detail::check_inputs(kind, z, y);
  const std::size_t c = z.size();
  Matrix h(c, c);
  switch (kind.tag) {
    case LossTag::MSE:
      h(0, 0) = 1.0;
      break;
    case LossTag::NLL:
      for (std::size_t i = 0; i < c; ++i) {
        const double zi = detail::clamped(z[i], kind.nll_clamp, diag);
        h(i, i) = y[i] / (zi * zi);
      }
      break;
    case LossTag::CrossEntropySoftmax: {
      const Vector q = softmax(z);
      for (std::size_t i = 0; i < c; ++i) {
        for (std::size_t j = i; j < c; ++j) {
          const double v = (i == j) ? q[i] * (1.0 - q[i]) : -q[i] * q[j];
          h(i, j) = v;
          h(j, i) = v;
        }
      }
      break;
    }
    case LossTag::Exponential:
      h(0, 0) = std::exp(-z[0] * y[0]);
      break;
    case LossTag::GaussianHinge:
      h(0, 0) = 2.0 * detail::kInvSqrtPi * std::exp(-z[0] * z[0]);
      break;
  }
  return h;
}

inline LossEval evaluate_loss(const LossKind& kind, std::span<const double> z, std::span<const double> y,
                              LossDiagnostics* diag = nullptr) {
  return {loss_value(kind, z, y, diag), loss_gradient(kind, z, y), loss_hessian(kind, z, y)};
}

/// Third partial derivative d^3 l / dz_i dz_j dz_k.
inline double loss_third_derivative(const LossKind& kind, std::span<const double> z,
                                    std::span<const double> y, std::size_t i, std::size_t j,
                                    std::size_t k) {
  detail::check_inputs(kind, z, y);
  require(i < z.size() && j < z.size() && k < z.size(), "loss_third_derivative: index out of range");
  switch (kind.tag) {
    case LossTag::MSE:
      return 0.0;
    case LossTag::NLL: {
      if (i != j || j != k) return 0.0;
      const double zi = std::max(z[i], kind.nll_clamp);
      return -2.0 * y[i] / (zi * zi * zi);
    }
    case LossTag::CrossEntropySoftmax: {
      const Vector q = softmax(z);
      const auto delta = [](std::size_t a, std::size_t b) { return a == b ? 1.0 : 0.0; };
      return delta(i, j) * q[i] * (delta(i, k) - q[k]) - q[i] * q[j] * (delta(i, k) - q[k]) -
             q[i] * q[j] * (delta(j, k) - q[k]);
    }
    case LossTag::Exponential:
      return -y[0] * std::exp(-z[0] * y[0]);
    case LossTag::GaussianHinge:
      return -4.0 * detail::kInvSqrtPi * z[0] * std::exp(-z[0] * z[0]);
  }
  return 0.0;
}

/// Maximum of |d^3 l| for the softmax cross-entropy over the whole simplex:
/// max_q |q(1-q)(1-2q)| attained at q = (3 - sqrt 3)/6, which equals sqrt(3)/18.
inline const double kCrossEntropyThirdDerivativeMax = std::sqrt(3.0) / 18.0;

/// The constant quoted in the literature for the same quantity (pairwise
/// distinct indices only). Kept for comparison; it is not a valid bound.
inline constexpr double kPublishedCrossEntropyThirdDerivativeBound = 0.038;

/// Prediction region over which a third-derivative bound is requested.
/// Exponential/GaussianHinge use [lower, upper]; NLL uses lower (> 0 gives a
/// finite bound) or the configured clamp; MSE and cross-entropy ignore it.
struct PredictionDomain {
  double lower = -1.0;
  double upper = 1.0;
  bool nll_clamped = false;

  static PredictionDomain interval(double lo, double hi) {
    require(lo <= hi, "PredictionDomain: empty interval");
    return {lo, hi, false};
  }
  static PredictionDomain symmetric(double radius) { return interval(-radius, radius); }
  static PredictionDomain clamped() { return {-1.0, 1.0, true}; }
};

struct RemainderSpec {
  ExtendedReal m;
  std::size_t C = 1;
  std::string domain_note;
  /// False when m is finite only because of a numerical clamp.
  bool meaningful = true;
};

inline RemainderSpec third_derivative_bound(const LossKind& kind, const PredictionDomain& domain = {}) {
  kind.validate();
  RemainderSpec spec;
  spec.C = kind.output_dim;
  switch (kind.tag) {
    case LossTag::MSE:
      spec.m = ExtendedReal(0.0);
      spec.domain_note = "all of R";
      break;
    case LossTag::CrossEntropySoftmax:
      spec.m = ExtendedReal(kCrossEntropyThirdDerivativeMax);
      spec.domain_note = "all of R^C (softmax simplex)";
      break;
    case LossTag::Exponential: {
      const double reach = std::max(-domain.lower, domain.upper);
      spec.m = ExtendedReal(std::exp(reach));
      spec.domain_note = "h in [" + std::to_string(domain.lower) + ", " + std::to_string(domain.upper) + "]";
      break;
    }
    case LossTag::GaussianHinge: {
      const auto magnitude = [](double h) {
        return 4.0 * detail::kInvSqrtPi * std::abs(h) * std::exp(-h * h);
      };
      double best = std::max(magnitude(domain.lower), magnitude(domain.upper));
      for (double peak : {-std::numbers::sqrt2 / 2.0, std::numbers::sqrt2 / 2.0})
        if (domain.lower <= peak && peak <= domain.upper) best = std::max(best, magnitude(peak));
      spec.m = ExtendedReal(best);
      spec.domain_note = "h in [" + std::to_string(domain.lower) + ", " + std::to_string(domain.upper) + "]";
      break;
    }
    case LossTag::NLL:
      if (domain.nll_clamped) {
        const double eps = kind.nll_clamp;
        spec.m = ExtendedReal(2.0 / (eps * eps * eps));
        spec.domain_note = "z clamped to >= " + std::to_string(eps);
        spec.meaningful = false;
      } else if (domain.lower > 0.0) {
        const double lo = domain.lower;
        spec.m = ExtendedReal(2.0 / (lo * lo * lo));
        spec.domain_note = "z in [" + std::to_string(lo) + ", inf)";
      } else {
        spec.m = ExtendedReal::infinity();
        spec.domain_note = "z -> 0 allowed; unbounded";
        spec.meaningful = false;
      }
      break;
  }
  return spec;
}

}  // namespace gncl
