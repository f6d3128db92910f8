#pragma once

// Empirical bias-variance decomposition of an averaged ensemble:
//
//   l(f) = (1/M) sum_i l(h_i) - (1/2M) sum_i d_i^T D d_i + R
//
// with f the member mean, d_i = h_i - f and D the loss Hessian at f. R is
// obtained by subtraction; the analytic third-order bound is reported next to
// it.

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "gncl/core.hpp"
#include "gncl/data.hpp"
#include "gncl/losses.hpp"
#include "gncl/network.hpp"
#include "gncl/parallel.hpp"

namespace gncl {

struct DecompositionRow {
  double ensemble_loss = 0.0;
  double avg_member_loss = 0.0;
  double diversity = 0.0;
  double empirical_remainder = 0.0;
  ExtendedReal remainder_bound;
};

struct DecompositionReport {
  double ensemble_loss = 0.0;
  double avg_member_loss = 0.0;
  double diversity = 0.0;
  double empirical_remainder = 0.0;
  ExtendedReal remainder_bound;
  std::optional<std::vector<DecompositionRow>> per_sample;

  /// |ensemble_loss - (avg_member_loss - diversity + empirical_remainder)|
  double identity_residual() const {
    return std::abs(ensemble_loss - (avg_member_loss - diversity + empirical_remainder));
  }
};

inline Vector ensemble_mean(std::span<const Vector> member_outputs) {
  require(!member_outputs.empty(), "ensemble_mean: no members");
  const std::size_t c = member_outputs.front().size();
  Vector f(c, 0.0);
  for (const auto& h : member_outputs) {
    require(h.size() == c, "ensemble_mean: member outputs differ in length");
    for (std::size_t j = 0; j < c; ++j) f[j] += h[j];
  }
  const double m = static_cast<double>(member_outputs.size());
  for (double& v : f) v /= m;
  return f;
}

/// (1/2M) sum_i (h_i - f)^T D (h_i - f).
inline double diversity_term(std::span<const Vector> member_outputs, std::span<const double> f, const Matrix& D,
                             std::size_t M) {
  require(M >= 1 && M == member_outputs.size(), "diversity_term: M does not match member count");
  const std::size_t c = f.size();
  require(D.rows() == c && D.cols() == c, "diversity_term: D has wrong shape");
  require(asymmetry(D) <= 1e-10, "diversity_term: D is not symmetric");
  double total = 0.0;
  Vector d(c);
  for (const auto& h : member_outputs) {
    require(h.size() == c, "diversity_term: member output length mismatch");
    for (std::size_t j = 0; j < c; ++j) d[j] = h[j] - f[j];
    double quad = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      double row = 0.0;
      for (std::size_t k = 0; k < c; ++k) row += D(j, k) * d[k];
      quad += d[j] * row;
    }
    total += quad;
  }
  return total / (2.0 * static_cast<double>(M));
}

/// Largest |h_ij - f_j| over members and coordinates.
inline double max_deviation(std::span<const Vector> member_outputs, std::span<const double> f) {
  double worst = 0.0;
  for (const auto& h : member_outputs)
    for (std::size_t j = 0; j < f.size(); ++j) worst = std::max(worst, std::abs(h[j] - f[j]));
  return worst;
}

/// Prediction domain used when the caller does not supply one: the symmetric
/// interval [-R, R] with R = max(1, largest |prediction|) for the binary
/// losses, unclamped for NLL.
inline PredictionDomain default_domain(const LossKind& kind, std::span<const Vector> member_outputs,
                                       std::span<const double> f) {
  if (kind.is_binary()) {
    double reach = 1.0;
    for (const auto& h : member_outputs)
      for (double v : h) reach = std::max(reach, std::abs(v));
    for (double v : f) reach = std::max(reach, std::abs(v));
    return PredictionDomain::symmetric(reach);
  }
  return {};
}

/// (1/6) m C (max_ij |h_ij - f_j|)^3; exactly 0 when all members agree.
inline ExtendedReal remainder_bound(const LossKind& kind, std::span<const Vector> member_outputs,
                                    std::span<const double> f,
                                    const std::optional<PredictionDomain>& domain = std::nullopt) {
  const double dev = max_deviation(member_outputs, f);
  const RemainderSpec spec =
      third_derivative_bound(kind, domain ? *domain : default_domain(kind, member_outputs, f));
  if (dev == 0.0) return ExtendedReal(0.0);
  if (spec.m.is_infinite()) return ExtendedReal::infinity();
  return ExtendedReal(spec.m.value() * static_cast<double>(spec.C) * dev * dev * dev / 6.0);
}

inline DecompositionRow decompose_sample(std::span<const Vector> member_outputs, std::span<const double> y,
                                         const LossKind& kind, LossDiagnostics* diag = nullptr) {
  const Vector f = ensemble_mean(member_outputs);
  const std::size_t M = member_outputs.size();
  DecompositionRow row;
  row.ensemble_loss = loss_value(kind, f, y, diag);
  double total = 0.0;
  for (const auto& h : member_outputs) total += loss_value(kind, h, y, diag);
  row.avg_member_loss = total / static_cast<double>(M);
  row.diversity = diversity_term(member_outputs, f, loss_hessian(kind, f, y), M);
  row.empirical_remainder = row.ensemble_loss - row.avg_member_loss + row.diversity;
  row.remainder_bound = remainder_bound(kind, member_outputs, f);
  return row;
}

/// Aggregates rows with an unweighted mean in index order. The aggregate
/// remainder is recomputed by subtraction so the identity closes exactly.
inline DecompositionReport aggregate_rows(const std::vector<DecompositionRow>& rows, bool keep_rows) {
  require(!rows.empty(), "decompose: empty dataset");
  DecompositionReport report;
  double bound = 0.0;
  bool infinite = false;
  for (const auto& r : rows) {
    report.ensemble_loss += r.ensemble_loss;
    report.avg_member_loss += r.avg_member_loss;
    report.diversity += r.diversity;
    if (r.remainder_bound.is_infinite())
      infinite = true;
    else
      bound += r.remainder_bound.value();
  }
  const double n = static_cast<double>(rows.size());
  report.ensemble_loss /= n;
  report.avg_member_loss /= n;
  report.diversity /= n;
  report.empirical_remainder = report.ensemble_loss - report.avg_member_loss + report.diversity;
  report.remainder_bound = infinite ? ExtendedReal::infinity() : ExtendedReal(bound / n);
  if (keep_rows) report.per_sample = rows;
  return report;
}

struct DecomposeOptions {
  bool per_sample = false;
  std::size_t workers = 1;
};

/// Decomposition of the uniformly averaged members over a dataset. Labels
/// must already be in the form the loss expects (one-hot or +-1).
inline DecompositionReport decompose_dataset(std::span<const DenseNet> members, const Dataset& data,
                                             const LossKind& kind, const DecomposeOptions& options = {}) {
  require(!members.empty(), "decompose_dataset: no members");
  require(data.size() >= 1, "decompose_dataset: empty dataset");
  for (const auto& net : members) {
    require(net.output_dim() == kind.output_dim, "decompose_dataset: member output dim does not match loss C");
    require(net.input_dim() == data.dim(), "decompose_dataset: member input dim does not match dataset");
  }
  require(data.label_dim() == kind.output_dim, "decompose_dataset: label width does not match loss C");
  std::vector<DecompositionRow> rows(data.size());
  parallel_for(data.size(), options.workers, [&](std::size_t i) {
    std::vector<Vector> outputs;
    outputs.reserve(members.size());
    for (const auto& net : members) outputs.push_back(forward(net, data.x(i)));
    rows[i] = decompose_sample(outputs, data.y(i), kind);
  });
  return aggregate_rows(rows, options.per_sample);
}

}  // namespace gncl
