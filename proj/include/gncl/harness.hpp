#pragma once

// Experiment runner: expands a config into (method, lambda, seed) cells,
// trains and evaluates each cell, and writes metrics.csv, manifest.json and
// optional trends.json / report.json / checkpoints.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "gncl/core.hpp"
#include "gncl/data.hpp"
#include "gncl/decomposition.hpp"
#include "gncl/losses.hpp"
#include "gncl/network.hpp"
#include "gncl/parallel.hpp"
#include "gncl/rng.hpp"
#include "gncl/training.hpp"

namespace gncl {

inline constexpr const char* kLibraryVersion = "0.1.0";

inline constexpr const char* kMetricsHeader =
    "method,lambda,seed,epoch,train_loss,test_acc_ensemble,test_acc_member_avg,diversity_test,remainder_bound_test";

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Configuration

struct DatasetSpec {
  std::string source = "spirals";  // spirals | blobs | csv | idx
  std::size_t n_per_class = 300;
  std::size_t classes = 2;
  std::size_t dim = 2;
  double spread = 1.0;
  double noise = 0.05;
  double test_fraction = 1.0 / 3.0;
  std::string path;
  std::string test_path;
  int label_column = -1;
  bool has_header = false;
  std::string images;
  std::string labels;
  std::string test_images;
  std::string test_labels;
  bool normalize = true;
};

struct NetSpec {
  std::vector<std::size_t> hidden{32};
  bool binarized = false;
  Activation activation = Activation::ReLU;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  NetSpec net;
  TrainConfig train;
  std::string loss = "crossentropy";
  std::vector<MethodSpec> methods;
  /// Methods listed without an explicit lambda expand over this grid.
  std::vector<std::vector<double>> method_lambdas;
  std::vector<double> lambda_grid;
  std::size_t repeats = 1;
  bool per_epoch = false;
  std::size_t workers = 1;
  std::string preset;
  Json source;
};

struct EvalFragment {
  double test_acc_ensemble = 0.0;
  double test_acc_member_avg = 0.0;
  double diversity_test = 0.0;
  ExtendedReal remainder_bound_test;
};

struct MetricsRow {
  std::string method;
  std::optional<double> lambda;
  std::uint64_t seed = 0;
  std::optional<int> epoch;  // empty means "final"
  double train_loss = 0.0;
  EvalFragment eval;
};

inline std::vector<double> default_lambda_grid() {
  std::vector<double> grid;
  for (int i = 0; i <= 10; ++i) grid.push_back(i / 10.0);
  return grid;
}

namespace detail {

template <class T>
void read_if(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::ReLU;
  if (name == "identity") return Activation::Identity;
  throw ConfigError("unknown activation '" + name + "'");
}

inline void apply_preset(ExperimentConfig& cfg, const std::string& name) {
  if (name.empty()) return;
  if (name != "paper-protocol") throw ConfigError("unknown preset '" + name + "'");
  cfg.train.members = 16;
  cfg.train.epochs = 100;
  cfg.train.batch_size = 128;
  cfg.train.schedule = {0.001, 25};
  cfg.train.optimizer.kind = OptimizerKind::AdaBelief;
}

inline MethodSpec parse_method(const Json& j, std::vector<double>& lambdas) {
  MethodSpec spec;
  const std::string name = j.at("method").get<std::string>();
  spec.tag = parse_method_tag(name);
  if (name == "e2e") lambdas = {1.0};
  if (name == "independent") lambdas = {0.0};
  if (j.contains("lambda")) {
    const auto& l = j.at("lambda");
    lambdas = l.is_array() ? l.get<std::vector<double>>() : std::vector<double>{l.get<double>()};
  }
  if (j.contains("snapshot_epochs")) spec.snapshot_epochs = j.at("snapshot_epochs").get<std::vector<int>>();
  else if (spec.tag == MethodTag::Snapshot) spec.snapshot_epochs = reference_snapshot_epochs();
  if (j.contains("poisson_variant") && j.at("poisson_variant").get<std::string>() != "discrete")
    throw ConfigError("only the discrete Poisson variant is supported");
  return spec;
}

}  // namespace detail

/// Builds a config from JSON. Desk-scale defaults apply to missing fields; a
/// "preset" replaces them before explicit fields are read.
inline ExperimentConfig parse_config(const Json& j) {
  ExperimentConfig cfg;
  cfg.source = j;
  cfg.train.optimizer.kind = OptimizerKind::AdaBelief;
  cfg.train.schedule = {0.01, 10};
  cfg.lambda_grid = default_lambda_grid();
  try {
    detail::read_if(j, "preset", cfg.preset);
    detail::apply_preset(cfg, cfg.preset);

    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      auto& s = cfg.dataset;
      detail::read_if(d, "source", s.source);
      detail::read_if(d, "n_per_class", s.n_per_class);
      detail::read_if(d, "classes", s.classes);
      detail::read_if(d, "dim", s.dim);
      detail::read_if(d, "spread", s.spread);
      detail::read_if(d, "noise", s.noise);
      detail::read_if(d, "test_fraction", s.test_fraction);
      detail::read_if(d, "path", s.path);
      detail::read_if(d, "test_path", s.test_path);
      detail::read_if(d, "label_column", s.label_column);
      detail::read_if(d, "has_header", s.has_header);
      detail::read_if(d, "images", s.images);
      detail::read_if(d, "labels", s.labels);
      detail::read_if(d, "test_images", s.test_images);
      detail::read_if(d, "test_labels", s.test_labels);
      detail::read_if(d, "normalize", s.normalize);
    }
    if (j.contains("net")) {
      const auto& n = j.at("net");
      detail::read_if(n, "hidden", cfg.net.hidden);
      detail::read_if(n, "binarized", cfg.net.binarized);
      if (n.contains("activation")) cfg.net.activation = detail::parse_activation(n.at("activation").get<std::string>());
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      if (t.contains("M")) cfg.train.members = t.at("M").get<std::size_t>();
      detail::read_if(t, "epochs", cfg.train.epochs);
      detail::read_if(t, "batch_size", cfg.train.batch_size);
      detail::read_if(t, "seed", cfg.train.seed);
      if (t.contains("optimizer")) {
        const auto& o = t.at("optimizer");
        auto& os = cfg.train.optimizer;
        if (o.contains("kind")) {
          const auto kind = o.at("kind").get<std::string>();
          if (kind == "sgd") os.kind = OptimizerKind::SGDMomentum;
          else if (kind == "adabelief") os.kind = OptimizerKind::AdaBelief;
          else throw ConfigError("unknown optimizer '" + kind + "'");
        }
        detail::read_if(o, "momentum", os.momentum);
        detail::read_if(o, "beta1", os.beta1);
        detail::read_if(o, "beta2", os.beta2);
        detail::read_if(o, "eps", os.eps);
      }
      if (t.contains("lr")) {
        detail::read_if(t.at("lr"), "initial", cfg.train.schedule.initial);
        detail::read_if(t.at("lr"), "halve_every", cfg.train.schedule.halve_every);
      }
    }
    detail::read_if(j, "seed", cfg.train.seed);
    detail::read_if(j, "loss", cfg.loss);
    detail::read_if(j, "lambda_grid", cfg.lambda_grid);
    detail::read_if(j, "repeats", cfg.repeats);
    detail::read_if(j, "per_epoch", cfg.per_epoch);
    detail::read_if(j, "workers", cfg.workers);
    if (j.contains("methods")) {
      for (const auto& m : j.at("methods")) {
        std::vector<double> lambdas;
        cfg.methods.push_back(detail::parse_method(m, lambdas));
        cfg.method_lambdas.push_back(lambdas);
      }
    } else {
      cfg.methods.push_back(MethodSpec::gncl(0.0));
      cfg.method_lambdas.push_back({});
    }
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }

  for (double l : cfg.lambda_grid)
    if (!(l >= 0.0 && l <= 1.0)) throw ConfigError("lambda_grid value " + std::to_string(l) + " is outside [0, 1]");
  if (cfg.repeats < 1) throw ConfigError("repeats must be at least 1");
  if (cfg.workers < 1) throw ConfigError("workers must be at least 1");
  parse_loss_tag(cfg.loss);
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  Json j;
  try {
    j = Json::parse(in, nullptr, true, true);
  } catch (const Json::exception& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
  return parse_config(j);
}

/// GNCL_SEED overrides the config seed; an explicit flag overrides both.
inline void apply_seed_overrides(ExperimentConfig& cfg, std::optional<std::uint64_t> flag_seed) {
  if (const char* env = std::getenv("GNCL_SEED"); env && *env) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (*end != '\0') throw ConfigError(std::string("GNCL_SEED is not an integer: ") + env);
    cfg.train.seed = v;
  }
  if (flag_seed) cfg.train.seed = *flag_seed;
}

// ---------------------------------------------------------------------------
// Data

struct ExperimentData {
  Dataset train;
  Dataset test;
};

/// Materializes the configured dataset. Generated data and the split depend
/// only on `seed`; labels are converted to +-1 for the binary losses.
inline ExperimentData load_experiment_data(const DatasetSpec& spec, const LossKind& kind, std::uint64_t seed) {
  Dataset all;
  std::optional<Dataset> test;
  const std::uint64_t data_seed = derive_seed(seed, {stream::kData});
  if (spec.source == "spirals") {
    all = gen_spirals(data_seed, spec.n_per_class, spec.classes, spec.noise);
  } else if (spec.source == "blobs") {
    all = gen_blobs(data_seed, spec.n_per_class, spec.classes, spec.dim, spec.spread);
  } else if (spec.source == "csv") {
    all = load_csv(spec.path, spec.label_column, spec.has_header);
    if (!spec.test_path.empty()) test = load_csv(spec.test_path, spec.label_column, spec.has_header);
  } else if (spec.source == "idx") {
    all = load_idx(spec.images, spec.labels);
    if (!spec.test_images.empty()) test = load_idx(spec.test_images, spec.test_labels);
  } else {
    throw ConfigError("unknown dataset source '" + spec.source + "'");
  }
  ExperimentData out;
  if (test) {
    out.train = std::move(all);
    out.test = std::move(*test);
  } else {
    auto split = train_test_split(all, spec.test_fraction, derive_seed(seed, {stream::kSplit}));
    out.train = std::move(split.first);
    out.test = std::move(split.second);
  }
  if (spec.normalize) {
    auto [train_n, stats] = normalize(out.train);
    out.test = apply_normalization(out.test, stats);
    out.train = std::move(train_n);
  }
  if (kind.is_binary()) {
    if (out.train.class_count != 2 || out.test.class_count != 2)
      throw ConfigError(std::string(loss_name(kind.tag)) + " needs a two-class dataset, got " +
                        std::to_string(out.train.class_count) + " classes");
    out.train = with_binary_labels(out.train);
    out.test = with_binary_labels(out.test);
  }
  return out;
}

inline LossKind make_loss(const std::string& name, std::size_t classes) {
  switch (parse_loss_tag(name)) {
    case LossTag::MSE: return LossKind::mse();
    case LossTag::Exponential: return LossKind::exponential();
    case LossTag::GaussianHinge: return LossKind::gaussian_hinge();
    case LossTag::CrossEntropySoftmax: return LossKind::cross_entropy(classes);
    case LossTag::NLL: return LossKind::nll(classes);
  }
  throw ConfigError("unknown loss '" + name + "'");
}

// ---------------------------------------------------------------------------
// Evaluation

/// Predicted class: argmax for C >= 2, sign (0 counts as +1) for C = 1.
inline std::size_t predicted_class(std::span<const double> out) {
  if (out.size() == 1) return out[0] >= 0.0 ? 1 : 0;
  return argmax(out);
}

inline EvalFragment evaluate(std::span<const DenseNet> members, const Dataset& test, const LossKind& kind) {
  require(!members.empty() && test.size() > 0, "evaluate: empty ensemble or test set");
  const std::size_t M = members.size();
  std::size_t ens_hits = 0;
  std::vector<std::size_t> member_hits(M, 0);
  std::vector<Vector> outputs(M);
  for (std::size_t r = 0; r < test.size(); ++r) {
    for (std::size_t i = 0; i < M; ++i) outputs[i] = forward(members[i], test.x(r));
    const std::size_t truth = predicted_class(test.y(r));
    if (predicted_class(ensemble_mean(outputs)) == truth) ++ens_hits;
    for (std::size_t i = 0; i < M; ++i)
      if (predicted_class(outputs[i]) == truth) ++member_hits[i];
  }
  const double n = static_cast<double>(test.size());
  EvalFragment out;
  out.test_acc_ensemble = static_cast<double>(ens_hits) / n;
  double acc = 0.0;
  for (auto h : member_hits) acc += static_cast<double>(h) / n;
  out.test_acc_member_avg = acc / static_cast<double>(M);
  const DecompositionReport report = decompose_dataset(members, test, kind);
  out.diversity_test = report.diversity;
  out.remainder_bound_test = report.remainder_bound;
  return out;
}

inline EvalFragment evaluate(const Ensemble& ens, const Dataset& test, const LossKind& kind) {
  return evaluate(ens.members, test, kind);
}

// ---------------------------------------------------------------------------
// Serialization

inline std::string format_real(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string format_extended(const ExtendedReal& v) { return v.is_infinite() ? "inf" : format_real(v.value()); }

inline std::string metrics_csv_line(const MetricsRow& r) {
  std::string line = r.method + ",";
  if (r.lambda) line += format_real(*r.lambda);
  line += "," + std::to_string(r.seed) + ",";
  line += r.epoch ? std::to_string(*r.epoch) : "final";
  line += "," + format_real(r.train_loss) + "," + format_real(r.eval.test_acc_ensemble) + "," +
          format_real(r.eval.test_acc_member_avg) + "," + format_real(r.eval.diversity_test) + "," +
          format_extended(r.eval.remainder_bound_test);
  return line;
}

inline Json extended_json(const ExtendedReal& v) {
  return v.is_infinite() ? Json("inf") : Json(v.value());
}

inline Json report_json(const DecompositionReport& r) {
  Json j;
  j["ensemble_loss"] = r.ensemble_loss;
  j["avg_member_loss"] = r.avg_member_loss;
  j["diversity"] = r.diversity;
  j["empirical_remainder"] = r.empirical_remainder;
  j["remainder_bound"] = extended_json(r.remainder_bound);
  j["identity_residual"] = r.identity_residual();
  if (r.per_sample) {
    Json rows = Json::array();
    for (const auto& s : *r.per_sample)
      rows.push_back({{"ensemble_loss", s.ensemble_loss},
                      {"avg_member_loss", s.avg_member_loss},
                      {"diversity", s.diversity},
                      {"empirical_remainder", s.empirical_remainder},
                      {"remainder_bound", extended_json(s.remainder_bound)}});
    j["per_sample"] = std::move(rows);
  }
  return j;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

// ---------------------------------------------------------------------------
// Running

struct Cell {
  std::size_t method_index = 0;
  MethodSpec method;
  std::uint64_t seed = 0;
};

struct CellResult {
  std::vector<MetricsRow> rows;
  std::optional<Ensemble> ensemble;
  std::string error;
};

struct ExperimentResult {
  std::vector<Cell> cells;
  std::vector<CellResult> results;
  std::size_t failed = 0;
  double wall_seconds = 0.0;

  std::vector<MetricsRow> rows() const {
    std::vector<MetricsRow> all;
    for (const auto& r : results) all.insert(all.end(), r.rows.begin(), r.rows.end());
    return all;
  }
};

/// Expands methods x lambda x repeats in that order. Repeat r uses seed + r.
inline std::vector<Cell> expand_cells(const ExperimentConfig& cfg) {
  std::vector<Cell> cells;
  for (std::size_t m = 0; m < cfg.methods.size(); ++m) {
    std::vector<double> lambdas{cfg.methods[m].lambda};
    if (cfg.methods[m].uses_lambda())
      lambdas = cfg.method_lambdas[m].empty() ? cfg.lambda_grid : cfg.method_lambdas[m];
    for (double l : lambdas)
      for (std::size_t r = 0; r < cfg.repeats; ++r) {
        MethodSpec spec = cfg.methods[m];
        spec.lambda = l;
        cells.push_back({m, spec, cfg.train.seed + r});
      }
  }
  return cells;
}

inline std::string cell_method_name(const MethodSpec& m) { return std::string(method_name(m.tag)); }

inline TrainConfig cell_train_config(const ExperimentConfig& cfg, const ExperimentData& data, const LossKind& kind,
                                     const Cell& cell) {
  TrainConfig tc = cfg.train;
  tc.seed = cell.seed;
  tc.loss = kind;
  tc.binarized = cfg.net.binarized;
  tc.activation = cfg.net.activation;
  tc.workers = 1;
  tc.layer_dims.clear();
  tc.layer_dims.push_back(data.train.dim());
  for (auto h : cfg.net.hidden) tc.layer_dims.push_back(h);
  tc.layer_dims.push_back(kind.output_dim);
  return tc;
}

inline CellResult run_cell(const ExperimentConfig& cfg, const ExperimentData& data, const LossKind& kind,
                           const Cell& cell, bool keep_ensemble) {
  CellResult result;
  const TrainConfig tc = cell_train_config(cfg, data, kind, cell);
  const std::string name = cell_method_name(cell.method);
  const std::optional<double> lambda =
      cell.method.uses_lambda() ? std::optional<double>(cell.method.lambda) : std::nullopt;
  EpochCallback on_epoch;
  if (cfg.per_epoch) {
    on_epoch = [&](int epoch, std::span<const DenseNet> members) {
      MetricsRow row{name, lambda, cell.seed, epoch + 1, ensemble_loss(members, data.train, kind),
                     evaluate(members, data.test, kind)};
      result.rows.push_back(row);
    };
  }
  Ensemble ens = train(cell.method, tc, data.train, on_epoch);
  result.rows.push_back(
      {name, lambda, cell.seed, std::nullopt, ensemble_loss(ens.members, data.train, kind), evaluate(ens, data.test, kind)});
  if (keep_ensemble) result.ensemble = std::move(ens);
  return result;
}

/// Validates every cell's configuration before any training starts.
inline void validate_cells(const ExperimentConfig& cfg, const ExperimentData& data, const LossKind& kind,
                           const std::vector<Cell>& cells) {
  for (const auto& cell : cells) cell_train_config(cfg, data, kind, cell).validate(cell.method, data.train);
}

struct RunOptions {
  std::optional<std::filesystem::path> out_dir;
  bool save_checkpoints = false;
};

inline Json manifest_json(const ExperimentConfig& cfg, const ExperimentResult& result) {
  Json j;
  j["library"] = "gncl";
  j["version"] = kLibraryVersion;
  j["config"] = cfg.source;
  j["resolved_seed"] = cfg.train.seed;
  j["cells"] = result.cells.size();
  Json failures = Json::array();
  for (std::size_t i = 0; i < result.cells.size(); ++i)
    if (!result.results[i].error.empty())
      failures.push_back({{"method", cell_method_name(result.cells[i].method)},
                          {"lambda", result.cells[i].method.lambda},
                          {"seed", result.cells[i].seed},
                          {"error", result.results[i].error}});
  j["failures"] = failures;
  j["wall_time_seconds"] = result.wall_seconds;
  j["finished_at_unix"] = static_cast<std::int64_t>(std::time(nullptr));
  return j;
}

inline void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows) {
  std::string text = std::string(kMetricsHeader) + "\n";
  for (const auto& r : rows) text += metrics_csv_line(r) + "\n";
  write_text(path, text);
}

/// Runs every cell. Cells run on up to cfg.workers threads; output order is
/// the cell order. A failing cell is recorded and the rest continue.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const RunOptions& options = {}) {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t classes = cfg.dataset.source == "idx" ? 10 : cfg.dataset.classes;
  LossKind kind = make_loss(cfg.loss, classes);
  ExperimentData data = load_experiment_data(cfg.dataset, kind, cfg.train.seed);
  if (kind.is_classification()) kind.output_dim = data.train.class_count;

  ExperimentResult result;
  result.cells = expand_cells(cfg);
  validate_cells(cfg, data, kind, result.cells);
  result.results.resize(result.cells.size());
  parallel_for(result.cells.size(), cfg.workers, [&](std::size_t i) {
    try {
      result.results[i] = run_cell(cfg, data, kind, result.cells[i], options.save_checkpoints);
    } catch (const std::exception& e) {
      result.results[i].error = e.what();
    }
  });
  for (const auto& r : result.results)
    if (!r.error.empty()) ++result.failed;
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  if (options.out_dir) {
    const auto& dir = *options.out_dir;
    std::filesystem::create_directories(dir);
    write_metrics_csv(dir / "metrics.csv", result.rows());
    write_text(dir / "manifest.json", manifest_json(cfg, result).dump(2) + "\n");
    if (options.save_checkpoints)
      for (std::size_t i = 0; i < result.cells.size(); ++i) {
        const auto& ens = result.results[i].ensemble;
        if (!ens) continue;
        const auto& cell = result.cells[i];
        std::string tag = cell_method_name(cell.method);
        if (cell.method.uses_lambda()) tag += "_lambda" + format_real(cell.method.lambda);
        tag += "_seed" + std::to_string(cell.seed);
        const auto cdir = dir / "checkpoints" / tag;
        std::filesystem::create_directories(cdir);
        for (std::size_t m = 0; m < ens->members.size(); ++m) {
          char name[32];
          std::snprintf(name, sizeof name, "member_%03zu.gncl", m);
          save_checkpoint((cdir / name).string(), ens->members[m]);
        }
      }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Trends

/// Average ranks (1-based), ties share the mean rank.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

/// Spearman rank correlation; 0 when either column is constant.
inline double spearman(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "spearman: columns differ in length");
  if (a.size() < 2) return 0.0;
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

struct TrendSummary {
  std::string method;
  std::uint64_t seed = 0;
  double spearman_diversity = 0.0;
  double spearman_member_accuracy = 0.0;
};

struct Trends {
  std::vector<TrendSummary> per_seed;
  double mean_spearman_diversity = 0.0;
  double mean_spearman_member_accuracy = 0.0;
};

/// Spearman correlations of lambda against diversity_test and against
/// test_acc_member_avg over the final rows of each (lambda-method, seed).
inline Trends lambda_trends(const std::vector<MetricsRow>& rows) {
  Trends t;
  std::vector<std::pair<std::string, std::uint64_t>> keys;
  for (const auto& r : rows)
    if (r.lambda && !r.epoch) {
      const std::pair<std::string, std::uint64_t> key{r.method, r.seed};
      if (std::find(keys.begin(), keys.end(), key) == keys.end()) keys.push_back(key);
    }
  for (const auto& [method, seed] : keys) {
    Vector lam, div, acc;
    for (const auto& r : rows)
      if (r.lambda && !r.epoch && r.method == method && r.seed == seed) {
        lam.push_back(*r.lambda);
        div.push_back(r.eval.diversity_test);
        acc.push_back(r.eval.test_acc_member_avg);
      }
    if (lam.size() < 3) throw ConfigError("sweep: lambda grid needs at least 3 points");
    t.per_seed.push_back({method, seed, spearman(lam, div), spearman(lam, acc)});
  }
  for (const auto& s : t.per_seed) {
    t.mean_spearman_diversity += s.spearman_diversity;
    t.mean_spearman_member_accuracy += s.spearman_member_accuracy;
  }
  if (!t.per_seed.empty()) {
    t.mean_spearman_diversity /= static_cast<double>(t.per_seed.size());
    t.mean_spearman_member_accuracy /= static_cast<double>(t.per_seed.size());
  }
  return t;
}

inline Json trends_json(const Trends& t) {
  Json j;
  Json seeds = Json::array();
  for (const auto& s : t.per_seed)
    seeds.push_back({{"method", s.method},
                     {"seed", s.seed},
                     {"spearman_lambda_diversity", s.spearman_diversity},
                     {"spearman_lambda_member_accuracy", s.spearman_member_accuracy}});
  j["per_seed"] = seeds;
  j["mean_spearman_lambda_diversity"] = t.mean_spearman_diversity;
  j["mean_spearman_lambda_member_accuracy"] = t.mean_spearman_member_accuracy;
  return j;
}

struct SweepResult {
  ExperimentResult experiment;
  Trends trends;
};

/// run_experiment over the lambda grid plus trend statistics (trends.json).
inline SweepResult sweep_lambda(const ExperimentConfig& cfg, const RunOptions& options = {}) {
  bool any_lambda = false;
  for (std::size_t m = 0; m < cfg.methods.size(); ++m) {
    if (!cfg.methods[m].uses_lambda()) continue;
    any_lambda = true;
    const std::size_t points = cfg.method_lambdas[m].empty() ? cfg.lambda_grid.size() : cfg.method_lambdas[m].size();
    if (points < 3)
      throw ConfigError("sweep: method '" + std::string(method_name(cfg.methods[m].tag)) + "' has " +
                        std::to_string(points) + " lambda value(s); a sweep needs at least 3");
  }
  if (!any_lambda) throw ConfigError("sweep: no lambda method configured");
  SweepResult out;
  out.experiment = run_experiment(cfg, options);
  out.trends = lambda_trends(out.experiment.rows());
  if (options.out_dir) write_text(*options.out_dir / "trends.json", trends_json(out.trends).dump(2) + "\n");
  return out;
}

// ---------------------------------------------------------------------------
// Offline decomposition

inline std::string dims_text(const DenseNet& net) {
  std::string s = "[";
  for (std::size_t i = 0; i < net.layer_dims().size(); ++i) s += (i ? "," : "") + std::to_string(net.layer_dims()[i]);
  return s + "]";
}

/// Loads member checkpoints, checks they agree in shape and decomposes the
/// ensemble loss on `data`. Writes report.json when out_dir is given.
inline DecompositionReport decompose_cmd(const std::vector<std::string>& checkpoints, const Dataset& data,
                                         const LossKind& kind, const std::optional<std::filesystem::path>& out_dir,
                                         bool per_sample = false) {
  if (checkpoints.empty()) throw ConfigError("decompose: no checkpoints given");
  std::vector<DenseNet> members;
  for (const auto& p : checkpoints) members.push_back(load_checkpoint(p));
  for (std::size_t i = 1; i < members.size(); ++i)
    if (members[i].layer_dims() != members[0].layer_dims())
      throw ShapeError("decompose: checkpoint '" + checkpoints[i] + "' has dims " + dims_text(members[i]) +
                       " but '" + checkpoints[0] + "' has " + dims_text(members[0]));
  if (members[0].input_dim() != data.dim() || members[0].output_dim() != kind.output_dim)
    throw ShapeError("decompose: checkpoint dims " + dims_text(members[0]) + " do not fit data dim " +
                     std::to_string(data.dim()) + " and C=" + std::to_string(kind.output_dim));
  const DecompositionReport report = decompose_dataset(members, data, kind, {per_sample, 1});
  if (out_dir) write_text(*out_dir / "report.json", report_json(report).dump(2) + "\n");
  return report;
}

}  // namespace gncl
