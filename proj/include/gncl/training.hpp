#pragma once

// Ensemble trainers. Every method shares the same mini-batch machinery:
// forward all participating members on a batch, turn the per-sample member
// outputs into per-member upstream gradients (this is where the methods
// differ), backpropagate in sample order and step each member's optimizer.
//
// All randomness comes from streams derived from TrainConfig::seed:
//   member init     derive_seed(seed, {kInit, member})
//   batch order     derive_seed(seed, {kShuffle, stream, epoch})
//   bootstrap       derive_seed(seed, {kBootstrap, member})
//   Poisson weights derive_seed(seed, {kPoisson, member})
// so results do not depend on how work is scheduled.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gncl/core.hpp"
#include "gncl/data.hpp"
#include "gncl/decomposition.hpp"
#include "gncl/losses.hpp"
#include "gncl/network.hpp"
#include "gncl/parallel.hpp"
#include "gncl/rng.hpp"

namespace gncl {

enum class MethodTag { GNCL, GNCL2, Bagging, Wagging, SMCL, Snapshot, GradBoost };
enum class PoissonVariant { Discrete };

inline std::string_view method_name(MethodTag tag) {
  switch (tag) {
    case MethodTag::GNCL: return "gncl";
    case MethodTag::GNCL2: return "gncl2";
    case MethodTag::Bagging: return "bagging";
    case MethodTag::Wagging: return "wagging";
    case MethodTag::SMCL: return "smcl";
    case MethodTag::Snapshot: return "snapshot";
    case MethodTag::GradBoost: return "gradboost";
  }
  return "unknown";
}

inline MethodTag parse_method_tag(std::string_view name) {
  if (name == "independent" || name == "e2e") return MethodTag::GNCL;
  for (auto tag : {MethodTag::GNCL, MethodTag::GNCL2, MethodTag::Bagging, MethodTag::Wagging, MethodTag::SMCL,
                   MethodTag::Snapshot, MethodTag::GradBoost})
    if (method_name(tag) == name) return tag;
  throw ConfigError("unknown method '" + std::string(name) + "'");
}

/// The snapshot schedule used for the 16-member snapshot ensembles.
inline std::vector<int> reference_snapshot_epochs() {
  return {2, 3, 4, 5, 10, 15, 20, 25, 30, 40, 50, 60, 70, 80, 90};
}

struct MethodSpec {
  MethodTag tag = MethodTag::GNCL;
  double lambda = 0.0;
  /// Snapshot only: a copy is taken before epoch index e runs (after e
  /// completed epochs).
  std::vector<int> snapshot_epochs;
  PoissonVariant poisson_variant = PoissonVariant::Discrete;

  bool uses_lambda() const noexcept { return tag == MethodTag::GNCL || tag == MethodTag::GNCL2; }

  static MethodSpec gncl(double lambda) { return {MethodTag::GNCL, lambda, {}}; }
  static MethodSpec gncl2(double lambda) { return {MethodTag::GNCL2, lambda, {}}; }
  static MethodSpec independent() { return gncl(0.0); }
  static MethodSpec end_to_end() { return gncl(1.0); }
  static MethodSpec of(MethodTag tag) { return {tag, 0.0, {}}; }
  static MethodSpec snapshot(std::vector<int> epochs) { return {MethodTag::Snapshot, 0.0, std::move(epochs)}; }

  void validate(int total_epochs) const {
    if (tag == MethodTag::GNCL && !(lambda >= 0.0 && lambda <= 1.0))
      throw ConfigError("gncl: lambda must lie in [0, 1], got " + std::to_string(lambda));
    if (tag == MethodTag::GNCL2 && !(lambda >= 0.0 && std::isfinite(lambda)))
      throw ConfigError("gncl2: lambda must be >= 0, got " + std::to_string(lambda));
    if (tag == MethodTag::Snapshot) {
      for (std::size_t i = 0; i < snapshot_epochs.size(); ++i) {
        const int e = snapshot_epochs[i];
        if (e < 0) throw ConfigError("snapshot: negative snapshot epoch");
        if (i > 0 && e <= snapshot_epochs[i - 1]) throw ConfigError("snapshot: epochs must be strictly increasing");
        if (e >= total_epochs)
          throw ConfigError("snapshot: epoch " + std::to_string(e) + " is not below total epochs " +
                            std::to_string(total_epochs));
      }
    } else if (!snapshot_epochs.empty()) {
      throw ConfigError(std::string(method_name(tag)) + ": snapshot_epochs only apply to snapshot");
    }
  }

  friend bool operator==(const MethodSpec&, const MethodSpec&) = default;
};

struct TrainConfig {
  static constexpr std::size_t kDefaultMembers = 8;

  /// Ensemble size; derived for Snapshot, where an explicit value must match.
  std::optional<std::size_t> members;
  int epochs = 30;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  OptimizerSettings optimizer;
  LrSchedule schedule;
  LossKind loss = LossKind::cross_entropy(2);
  /// Full layer dims [d, hidden..., C].
  std::vector<std::size_t> layer_dims;
  bool binarized = false;
  Activation activation = Activation::ReLU;
  /// Worker threads for member-parallel work inside a batch. Results do not
  /// depend on it.
  std::size_t workers = 1;

  std::size_t resolved_members(const MethodSpec& method) const {
    if (method.tag == MethodTag::Snapshot) {
      const std::size_t derived = method.snapshot_epochs.size() + 1;
      if (members && *members != derived)
        throw ConfigError("snapshot: M=" + std::to_string(*members) + " but the schedule yields " +
                          std::to_string(derived) + " members");
      return derived;
    }
    return members.value_or(kDefaultMembers);
  }

  void validate(const MethodSpec& method, const Dataset& data) const {
    method.validate(epochs);
    if (members && *members == 0) throw ConfigError("M must be at least 1");
    resolved_members(method);
    if (epochs < 0) throw ConfigError("epochs must be non-negative");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(schedule.initial > 0.0) || schedule.halve_every < 1) throw ConfigError("invalid learning-rate schedule");
    try {
      loss.validate();
    } catch (const ContractViolation& e) {
      throw ConfigError(e.what());
    }
    if (layer_dims.size() < 2) throw ConfigError("layer_dims needs input and output entries");
    if (data.size() == 0) throw ConfigError("training data is empty");
    if (layer_dims.front() != data.dim())
      throw ConfigError("layer_dims input " + std::to_string(layer_dims.front()) + " does not match data dim " +
                        std::to_string(data.dim()));
    if (layer_dims.back() != loss.output_dim || data.label_dim() != loss.output_dim)
      throw ConfigError("network output, label width and loss C must agree");
  }
};

struct EpochRecord {
  int epoch = 0;
  /// Training loss under the method's own objective.
  double objective_loss = 0.0;
  /// Plain ensemble loss l(f) on the training set after the epoch.
  double ensemble_loss = 0.0;
};

struct Ensemble {
  std::vector<DenseNet> members;
  MethodSpec method;
  TrainConfig config;
  std::vector<EpochRecord> history;

  std::size_t size() const noexcept { return members.size(); }

  Vector predict(std::span<const double> x) const {
    std::vector<Vector> outputs;
    outputs.reserve(members.size());
    for (const auto& m : members) outputs.push_back(forward(m, x));
    return ensemble_mean(outputs);
  }
};

/// Called after every training epoch with the members as they currently stand.
using EpochCallback = std::function<void(int epoch, std::span<const DenseNet> members)>;

// ---------------------------------------------------------------------------
// Sampling helpers

/// n draws with replacement from [0, n).
inline std::vector<std::size_t> bootstrap_sample(std::size_t n, std::uint64_t stream_seed) {
  require(n >= 1, "bootstrap_sample: n must be positive");
  RandomStream rng(stream_seed);
  std::vector<std::size_t> rows(n);
  for (auto& r : rows) r = static_cast<std::size_t>(rng.index(n));
  return rows;
}

/// n i.i.d. Poisson(1) weights.
inline std::vector<unsigned> poisson_weights(std::size_t n, std::uint64_t stream_seed) {
  require(n >= 1, "poisson_weights: n must be positive");
  RandomStream rng(stream_seed);
  std::vector<unsigned> w(n);
  for (auto& v : w) v = rng.poisson(1.0);
  return w;
}

/// Argmin over member losses, lowest index on ties.
inline std::size_t smcl_assignment(std::span<const double> member_losses) {
  require(!member_losses.empty(), "smcl_assignment: no members");
  std::size_t best = 0;
  for (std::size_t i = 1; i < member_losses.size(); ++i)
    if (member_losses[i] < member_losses[best]) best = i;
  return best;
}

// ---------------------------------------------------------------------------
// Batch objectives

struct BatchResult {
  double loss = 0.0;
  /// Per-member gradient of the batch-mean objective, flat parameter layout.
  std::vector<Vector> grads;
  /// Members that received any gradient signal in this batch.
  std::vector<char> touched;
};

/// Fills upstream[i] = d(sample objective)/d(h_i) for every member, marks
/// touched members and returns the sample objective.
using SampleObjective = std::function<double(std::size_t row, std::span<const Vector> outputs,
                                             std::span<const double> y, std::vector<Vector>& upstream,
                                             std::vector<char>& touched)>;

/// Generic coupled batch: forward every member on every row, evaluate the
/// objective per sample, then backpropagate with scale 1/|batch| in row order.
inline BatchResult coupled_batch(std::span<const DenseNet> members, const Dataset& data,
                                 std::span<const std::size_t> rows, const SampleObjective& objective,
                                 std::size_t workers = 1) {
  require(!members.empty(), "batch: no members");
  require(!rows.empty(), "batch: empty batch");
  const std::size_t M = members.size();
  const std::size_t B = rows.size();
  std::vector<std::vector<ForwardTrace>> traces(M, std::vector<ForwardTrace>(B));
  parallel_for(M, workers, [&](std::size_t i) {
    for (std::size_t b = 0; b < B; ++b) traces[i][b] = forward_trace(members[i], data.x(rows[b]));
  });

  BatchResult result;
  result.touched.assign(M, 0);
  std::vector<std::vector<Vector>> upstream(B);
  std::vector<Vector> outputs(M);
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < M; ++i) outputs[i] = traces[i][b].output;
    upstream[b].assign(M, Vector(members[0].output_dim(), 0.0));
    total += objective(rows[b], outputs, data.y(rows[b]), upstream[b], result.touched);
  }
  result.loss = total / static_cast<double>(B);

  const double scale = 1.0 / static_cast<double>(B);
  result.grads.assign(M, Vector{});
  parallel_for(M, workers, [&](std::size_t i) {
    result.grads[i].assign(members[i].parameter_count(), 0.0);
    if (!result.touched[i]) return;
    for (std::size_t b = 0; b < B; ++b) backward_accumulate(members[i], traces[i][b], upstream[b][i], result.grads[i], scale);
  });
  return result;
}

namespace detail {

inline SampleObjective gncl_objective(double lambda, const LossKind& kind) {
  return [lambda, kind](std::size_t, std::span<const Vector> outputs, std::span<const double> y,
                        std::vector<Vector>& upstream, std::vector<char>& touched) {
    const std::size_t M = outputs.size();
    const Vector f = ensemble_mean(outputs);
    const double w_ens = lambda / static_cast<double>(M);
    const double w_own = (1.0 - lambda) / static_cast<double>(M);
    const Vector g_f = loss_gradient(kind, f, y);
    double own_total = 0.0;
    for (std::size_t i = 0; i < M; ++i) {
      own_total += loss_value(kind, outputs[i], y);
      const Vector g_i = loss_gradient(kind, outputs[i], y);
      for (std::size_t c = 0; c < g_i.size(); ++c) upstream[i][c] = w_ens * g_f[c] + w_own * g_i[c];
      touched[i] = 1;
    }
    return lambda * loss_value(kind, f, y) + (1.0 - lambda) * own_total / static_cast<double>(M);
  };
}

inline SampleObjective gncl2_objective(double lambda, const LossKind& kind) {
  return [lambda, kind](std::size_t, std::span<const Vector> outputs, std::span<const double> y,
                        std::vector<Vector>& upstream, std::vector<char>& touched) {
    const std::size_t M = outputs.size();
    const std::size_t C = kind.output_dim;
    const double m = static_cast<double>(M);
    const Vector f = ensemble_mean(outputs);
    const Matrix D = loss_hessian(kind, f, y);  // held constant: no gradient through D
    std::vector<Vector> dev(M, Vector(C));
    Vector dev_sum(C, 0.0);
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t c = 0; c < C; ++c) {
        dev[i][c] = outputs[i][c] - f[c];
        dev_sum[c] += dev[i][c];
      }
    const auto apply_D = [&](const Vector& v) {
      Vector out(C, 0.0);
      for (std::size_t r = 0; r < C; ++r)
        for (std::size_t c = 0; c < C; ++c) out[r] += D(r, c) * v[c];
      return out;
    };
    const Vector D_sum = apply_D(dev_sum);
    double own_total = 0.0;
    for (std::size_t k = 0; k < M; ++k) {
      own_total += loss_value(kind, outputs[k], y);
      const Vector g_k = loss_gradient(kind, outputs[k], y);
      const Vector D_dk = apply_D(dev[k]);
      // d/dh_k sum_i d_i^T D d_i = 2 D d_k - (2/M) D sum_i d_i
      for (std::size_t c = 0; c < C; ++c) {
        const double penalty_grad = 2.0 * D_dk[c] - (2.0 / m) * D_sum[c];
        upstream[k][c] = (1.0 / m) * g_k[c] - (lambda / (2.0 * m)) * penalty_grad;
      }
      touched[k] = 1;
    }
    const double spread = diversity_term(outputs, f, D, M);
    return own_total / m - lambda * spread;
  };
}

inline SampleObjective smcl_objective(const LossKind& kind) {
  return [kind](std::size_t, std::span<const Vector> outputs, std::span<const double> y,
                std::vector<Vector>& upstream, std::vector<char>& touched) {
    Vector losses(outputs.size());
    for (std::size_t i = 0; i < outputs.size(); ++i) losses[i] = loss_value(kind, outputs[i], y);
    const std::size_t winner = smcl_assignment(losses);
    upstream[winner] = loss_gradient(kind, outputs[winner], y);
    touched[winner] = 1;
    return losses[winner];
  };
}

/// Single-member objective w(row) * l(h, y).
inline SampleObjective weighted_objective(const LossKind& kind, const std::vector<unsigned>* weights) {
  return [kind, weights](std::size_t row, std::span<const Vector> outputs, std::span<const double> y,
                         std::vector<Vector>& upstream, std::vector<char>& touched) {
    const double w = weights ? static_cast<double>((*weights)[row]) : 1.0;
    const Vector g = loss_gradient(kind, outputs[0], y);
    for (std::size_t c = 0; c < g.size(); ++c) upstream[0][c] = w * g[c];
    touched[0] = 1;
    return w * loss_value(kind, outputs[0], y);
  };
}

/// Stage-wise boosting objective l((prefix_sum + h) / m) through h only.
inline SampleObjective boosting_objective(const LossKind& kind, const std::vector<Vector>& prefix_sums,
                                          std::size_t stage) {
  return [kind, &prefix_sums, stage](std::size_t row, std::span<const Vector> outputs, std::span<const double> y,
                                     std::vector<Vector>& upstream, std::vector<char>& touched) {
    const double m = static_cast<double>(stage);
    Vector z(outputs[0].size());
    for (std::size_t c = 0; c < z.size(); ++c) z[c] = (prefix_sums[row][c] + outputs[0][c]) / m;
    const Vector g = loss_gradient(kind, z, y);
    for (std::size_t c = 0; c < g.size(); ++c) upstream[0][c] = g[c] / m;
    touched[0] = 1;
    return loss_value(kind, z, y);
  };
}

}  // namespace detail

/// Batch-mean GNCL objective lambda*l(f) + (1-lambda)/M * sum_i l(h_i) and its
/// per-member gradients.
inline BatchResult gncl_batch_loss(std::span<const DenseNet> members, const Dataset& data,
                                   std::span<const std::size_t> rows, double lambda, const LossKind& kind,
                                   std::size_t workers = 1) {
  require(lambda >= 0.0 && lambda <= 1.0, "gncl_batch_loss: lambda must lie in [0, 1]");
  return coupled_batch(members, data, rows, detail::gncl_objective(lambda, kind), workers);
}

/// Batch-mean explicit form (1/M) sum_i l(h_i) - (lambda/2M) sum_i d_i^T D d_i
/// with D = Hessian at f treated as a constant.
inline BatchResult gncl2_batch_loss(std::span<const DenseNet> members, const Dataset& data,
                                    std::span<const std::size_t> rows, double lambda, const LossKind& kind,
                                    std::size_t workers = 1) {
  require(lambda >= 0.0, "gncl2_batch_loss: lambda must be non-negative");
  return coupled_batch(members, data, rows, detail::gncl2_objective(lambda, kind), workers);
}

inline BatchResult smcl_batch_loss(std::span<const DenseNet> members, const Dataset& data,
                                   std::span<const std::size_t> rows, const LossKind& kind,
                                   std::size_t workers = 1) {
  return coupled_batch(members, data, rows, detail::smcl_objective(kind), workers);
}

// ---------------------------------------------------------------------------
// Epoch loops

/// Mean of l(f(x), y) over a dataset for the uniformly averaged members.
inline double ensemble_loss(std::span<const DenseNet> members, const Dataset& data, const LossKind& kind) {
  require(!members.empty() && data.size() > 0, "ensemble_loss: empty input");
  double total = 0.0;
  std::vector<Vector> outputs(members.size());
  for (std::size_t r = 0; r < data.size(); ++r) {
    for (std::size_t i = 0; i < members.size(); ++i) outputs[i] = forward(members[i], data.x(r));
    total += loss_value(kind, ensemble_mean(outputs), data.y(r));
  }
  return total / static_cast<double>(data.size());
}

namespace detail {

/// One pass over `order` in batches; returns the row-weighted objective mean.
/// Only touched members take an optimizer step.
inline double run_epoch(std::vector<DenseNet>& members, std::vector<OptimizerState>& optimizers,
                        const Dataset& data, const std::vector<std::size_t>& order, const SampleObjective& objective,
                        const TrainConfig& config, int epoch) {
  const double rate = config.schedule.rate(epoch);
  double total = 0.0;
  for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
    const std::size_t stop = std::min(order.size(), start + config.batch_size);
    const std::span<const std::size_t> rows(order.data() + start, stop - start);
    const BatchResult batch = coupled_batch(members, data, rows, objective, config.workers);
    total += batch.loss * static_cast<double>(rows.size());
    for (std::size_t i = 0; i < members.size(); ++i)
      if (batch.touched[i]) optimizers[i].step(members[i], batch.grads[i], rate);
  }
  return total / static_cast<double>(order.size());
}

inline std::vector<std::size_t> iota_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = i;
  return rows;
}

inline std::vector<std::size_t> shuffled(std::vector<std::size_t> rows, std::uint64_t seed, std::uint64_t stream_id,
                                         int epoch) {
  RandomStream rng(derive_seed(seed, {stream::kShuffle, stream_id, static_cast<std::uint64_t>(epoch)}));
  rng.shuffle(rows);
  return rows;
}

inline DenseNet fresh_member(const TrainConfig& config, std::size_t index) {
  return init_net(derive_seed(config.seed, {stream::kInit, index}), config.layer_dims, config.binarized,
                  config.activation);
}

/// Trains all members jointly on shared batches (GNCL, GNCL2, SMCL).
inline void train_coupled(Ensemble& ens, const Dataset& data, const SampleObjective& objective,
                          const EpochCallback& on_epoch) {
  const TrainConfig& cfg = ens.config;
  std::vector<OptimizerState> opts;
  for (const auto& m : ens.members) opts.emplace_back(cfg.optimizer, m);
  for (int e = 0; e < cfg.epochs; ++e) {
    const auto order = shuffled(iota_rows(data.size()), cfg.seed, 0, e);
    const double obj = run_epoch(ens.members, opts, data, order, objective, cfg, e);
    ens.history.push_back({e, obj, ensemble_loss(ens.members, data, cfg.loss)});
    if (on_epoch) on_epoch(e, ens.members);
  }
}

/// Members trained independently, each on its own row multiset and weights
/// (Bagging, Wagging).
inline void train_independent(Ensemble& ens, const Dataset& data, const std::vector<std::vector<std::size_t>>& rows,
                              const std::vector<std::vector<unsigned>>* weights, const EpochCallback& on_epoch) {
  const TrainConfig& cfg = ens.config;
  const std::size_t M = ens.members.size();
  std::vector<OptimizerState> opts;
  for (const auto& m : ens.members) opts.emplace_back(cfg.optimizer, m);
  TrainConfig serial = cfg;
  serial.workers = 1;
  for (int e = 0; e < cfg.epochs; ++e) {
    std::vector<double> member_obj(M, 0.0);
    parallel_for(M, cfg.workers, [&](std::size_t i) {
      std::vector<DenseNet> solo{std::move(ens.members[i])};
      std::vector<OptimizerState> solo_opt{std::move(opts[i])};
      const auto order = shuffled(rows[i], cfg.seed, i, e);
      const auto objective = weighted_objective(cfg.loss, weights ? &(*weights)[i] : nullptr);
      member_obj[i] = run_epoch(solo, solo_opt, data, order, objective, serial, e);
      ens.members[i] = std::move(solo[0]);
      opts[i] = std::move(solo_opt[0]);
    });
    double obj = 0.0;
    for (double v : member_obj) obj += v;
    ens.history.push_back({e, obj / static_cast<double>(M), ensemble_loss(ens.members, data, cfg.loss)});
    if (on_epoch) on_epoch(e, ens.members);
  }
}

}  // namespace detail

/// Trains one model with `run_epoch(model, epoch)` for every epoch and keeps a
/// deep copy of the parameters just before each listed epoch runs; the final
/// model is appended last.
inline std::vector<DenseNet> snapshot_collect(DenseNet model, int total_epochs, const std::vector<int>& snapshot_epochs,
                                              const std::function<void(DenseNet&, int)>& run_epoch) {
  MethodSpec::snapshot(snapshot_epochs).validate(total_epochs);
  std::vector<DenseNet> members;
  std::size_t next = 0;
  for (int e = 0; e < total_epochs; ++e) {
    if (next < snapshot_epochs.size() && snapshot_epochs[next] == e) {
      members.push_back(model);
      ++next;
    }
    run_epoch(model, e);
  }
  members.push_back(std::move(model));
  return members;
}

/// Trains member number `stage` (1-based) of a greedy boosted ensemble:
/// minimizes l((sum of frozen outputs + h(x)) / stage) through h only.
inline DenseNet boosting_stage(std::span<const DenseNet> frozen_prefix, std::size_t stage, const TrainConfig& config,
                               const Dataset& data, std::vector<EpochRecord>* history = nullptr,
                               const EpochCallback& on_epoch = {}) {
  require(stage == frozen_prefix.size() + 1, "boosting_stage: stage must equal prefix size + 1");
  const std::size_t C = config.loss.output_dim;
  std::vector<Vector> prefix_sums(data.size(), Vector(C, 0.0));
  for (std::size_t r = 0; r < data.size(); ++r)
    for (const auto& net : frozen_prefix) {
      const Vector h = forward(net, data.x(r));
      for (std::size_t c = 0; c < C; ++c) prefix_sums[r][c] += h[c];
    }
  std::vector<DenseNet> solo{detail::fresh_member(config, stage - 1)};
  std::vector<OptimizerState> opt{OptimizerState(config.optimizer, solo[0])};
  const auto objective = detail::boosting_objective(config.loss, prefix_sums, stage);
  for (int e = 0; e < config.epochs; ++e) {
    const auto order = detail::shuffled(detail::iota_rows(data.size()), config.seed, stage - 1, e);
    const double obj = detail::run_epoch(solo, opt, data, order, objective, config, e);
    if (history || on_epoch) {
      std::vector<DenseNet> current(frozen_prefix.begin(), frozen_prefix.end());
      current.push_back(solo[0]);
      const int global_epoch = static_cast<int>(stage - 1) * config.epochs + e;
      if (history) history->push_back({global_epoch, obj, ensemble_loss(current, data, config.loss)});
      if (on_epoch) on_epoch(global_epoch, current);
    }
  }
  return std::move(solo[0]);
}

/// Trains an ensemble with the given method. Configuration problems surface
/// as ConfigError before any training happens.
inline Ensemble train(const MethodSpec& method, const TrainConfig& config, const Dataset& data,
                      const EpochCallback& on_epoch = {}) {
  config.validate(method, data);
  Ensemble ens;
  ens.method = method;
  ens.config = config;
  const std::size_t M = config.resolved_members(method);
  const LossKind& kind = config.loss;

  switch (method.tag) {
    case MethodTag::GNCL:
    case MethodTag::GNCL2:
    case MethodTag::SMCL: {
      for (std::size_t i = 0; i < M; ++i) ens.members.push_back(detail::fresh_member(config, i));
      const SampleObjective objective = method.tag == MethodTag::GNCL    ? detail::gncl_objective(method.lambda, kind)
                                        : method.tag == MethodTag::GNCL2 ? detail::gncl2_objective(method.lambda, kind)
                                                                         : detail::smcl_objective(kind);
      detail::train_coupled(ens, data, objective, on_epoch);
      break;
    }
    case MethodTag::Bagging: {
      std::vector<std::vector<std::size_t>> rows;
      for (std::size_t i = 0; i < M; ++i) {
        ens.members.push_back(detail::fresh_member(config, i));
        rows.push_back(bootstrap_sample(data.size(), derive_seed(config.seed, {stream::kBootstrap, i})));
      }
      detail::train_independent(ens, data, rows, nullptr, on_epoch);
      break;
    }
    case MethodTag::Wagging: {
      std::vector<std::vector<std::size_t>> rows;
      std::vector<std::vector<unsigned>> weights;
      for (std::size_t i = 0; i < M; ++i) {
        ens.members.push_back(detail::fresh_member(config, i));
        rows.push_back(detail::iota_rows(data.size()));
        weights.push_back(poisson_weights(data.size(), derive_seed(config.seed, {stream::kPoisson, i})));
      }
      detail::train_independent(ens, data, rows, &weights, on_epoch);
      break;
    }
    case MethodTag::Snapshot: {
      std::vector<DenseNet> solo{detail::fresh_member(config, 0)};
      std::vector<OptimizerState> opt{OptimizerState(config.optimizer, solo[0])};
      const auto objective = detail::weighted_objective(kind, nullptr);
      std::vector<DenseNet> taken;
      std::size_t next = 0;
      ens.members = snapshot_collect(std::move(solo[0]), config.epochs, method.snapshot_epochs,
                                     [&](DenseNet& model, int e) {
                                       if (next < method.snapshot_epochs.size() && method.snapshot_epochs[next] == e) {
                                         taken.push_back(model);
                                         ++next;
                                       }
                                       std::vector<DenseNet> one{std::move(model)};
                                       const auto order = detail::shuffled(detail::iota_rows(data.size()), config.seed, 0, e);
                                       const double obj = detail::run_epoch(one, opt, data, order, objective, config, e);
                                       model = std::move(one[0]);
                                       std::vector<DenseNet> current = taken;
                                       current.push_back(model);
                                       ens.history.push_back({e, obj, ensemble_loss(current, data, kind)});
                                       if (on_epoch) on_epoch(e, current);
                                     });
      break;
    }
    case MethodTag::GradBoost: {
      for (std::size_t stage = 1; stage <= M; ++stage) {
        DenseNet member = boosting_stage(ens.members, stage, config, data, &ens.history, on_epoch);
        ens.members.push_back(std::move(member));
      }
      break;
    }
  }
  return ens;
}

/// Reference single model trained on l(h) with the same seed streams as
/// member 0 of GNCL.
inline DenseNet train_single_model(TrainConfig config, const Dataset& data) {
  config.members = 1;
  return train(MethodSpec::independent(), config, data).members.front();
}

}  // namespace gncl
