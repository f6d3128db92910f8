// Command-line front end: train, sweep, decompose, gradcheck.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "gncl/gncl.hpp"

namespace fs = std::filesystem;
using namespace gncl;

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "gncl_out";
  std::optional<std::size_t> workers;
  bool per_epoch = false;
};

void add_common(CLI::App* app, CommonFlags& f, bool need_config = true) {
  auto* opt = app->add_option("--config", f.config, "JSON experiment config");
  if (need_config) opt->required();
  app->add_option("--seed", f.seed, "seed (overrides config and GNCL_SEED)");
  app->add_option("--out", f.out, "output directory");
  app->add_option("--workers", f.workers, "concurrent cells")->check(CLI::PositiveNumber);
  app->add_flag("--per-epoch", f.per_epoch, "also emit a metrics row after every epoch");
}

ExperimentConfig resolve(const CommonFlags& f) {
  ExperimentConfig cfg = f.config.empty() ? parse_config(Json::object()) : load_config(f.config);
  apply_seed_overrides(cfg, f.seed);
  if (f.workers) cfg.workers = *f.workers;
  if (f.per_epoch) cfg.per_epoch = true;
  return cfg;
}

int report_cells(const ExperimentResult& r) {
  for (std::size_t i = 0; i < r.cells.size(); ++i)
    if (!r.results[i].error.empty())
      std::fprintf(stderr, "cell %zu (%s, seed %llu) failed: %s\n", i, cell_method_name(r.cells[i].method).c_str(),
                   static_cast<unsigned long long>(r.cells[i].seed), r.results[i].error.c_str());
  std::printf("%zu cells, %zu failed, %.2f s\n", r.cells.size(), r.failed, r.wall_seconds);
  return r.failed == 0 ? 0 : 1;
}

int cmd_train(const CommonFlags& f, const std::optional<std::string>& method, const std::optional<double>& lambda) {
  ExperimentConfig cfg = resolve(f);
  if (method) {
    std::vector<double> lambdas;
    Json spec{{"method", *method}};
    if (lambda) spec["lambda"] = *lambda;
    cfg.methods = {detail::parse_method(spec, lambdas)};
    cfg.method_lambdas = {lambdas};
  }
  cfg.repeats = 1;
  const auto cells = expand_cells(cfg);
  if (cells.size() != 1)
    throw ConfigError("train runs one cell but the config expands to " + std::to_string(cells.size()) +
                      "; give --method/--lambda or use sweep");
  const auto result = run_experiment(cfg, {fs::path(f.out), true});
  std::printf("wrote %s\n", (fs::path(f.out) / "metrics.csv").string().c_str());
  return report_cells(result);
}

int cmd_sweep(const CommonFlags& f) {
  const ExperimentConfig cfg = resolve(f);
  bool any_lambda = false;
  for (const auto& m : cfg.methods) any_lambda = any_lambda || m.uses_lambda();
  if (!any_lambda) return report_cells(run_experiment(cfg, {fs::path(f.out), false}));
  const auto sweep = sweep_lambda(cfg, {fs::path(f.out), false});
  for (const auto& s : sweep.trends.per_seed)
    std::printf("%s seed %llu: spearman(lambda, diversity) = %.4f, spearman(lambda, member acc) = %.4f\n",
                s.method.c_str(), static_cast<unsigned long long>(s.seed), s.spearman_diversity,
                s.spearman_member_accuracy);
  std::printf("mean spearman(lambda, diversity) = %.4f\n", sweep.trends.mean_spearman_diversity);
  return report_cells(sweep.experiment);
}

int cmd_decompose(const CommonFlags& f, std::vector<std::string> checkpoints, const std::string& split,
                  bool per_sample) {
  const ExperimentConfig cfg = resolve(f);
  std::vector<std::string> files;
  for (const auto& c : checkpoints) {
    if (fs::is_directory(c)) {
      std::vector<std::string> found;
      for (const auto& e : fs::directory_iterator(c))
        if (e.path().extension() == ".gncl") found.push_back(e.path().string());
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else {
      files.push_back(c);
    }
  }
  const std::size_t classes = cfg.dataset.source == "idx" ? 10 : cfg.dataset.classes;
  LossKind kind = make_loss(cfg.loss, classes);
  const ExperimentData data = load_experiment_data(cfg.dataset, kind, cfg.train.seed);
  if (kind.is_classification()) kind.output_dim = data.train.class_count;
  if (split != "test" && split != "train") throw ConfigError("--split must be 'train' or 'test'");
  const Dataset& target = split == "train" ? data.train : data.test;
  const auto report = decompose_cmd(files, target, kind, fs::path(f.out), per_sample);
  std::printf("members: %zu, samples: %zu\n", files.size(), target.size());
  std::printf("ensemble_loss       %.12g\n", report.ensemble_loss);
  std::printf("avg_member_loss     %.12g\n", report.avg_member_loss);
  std::printf("diversity           %.12g\n", report.diversity);
  std::printf("empirical_remainder %.12g\n", report.empirical_remainder);
  std::printf("remainder_bound     %s\n", format_extended(report.remainder_bound).c_str());
  std::printf("identity residual:  %.3e\n", report.identity_residual());
  return report.identity_residual() <= 1e-12 ? 0 : 1;
}

int cmd_gradcheck(const std::vector<std::size_t>& hidden, std::size_t classes, std::uint64_t seed, double tol) {
  const std::vector<LossKind> kinds{LossKind::mse(), LossKind::nll(classes), LossKind::cross_entropy(classes),
                                    LossKind::exponential(), LossKind::gaussian_hinge()};
  bool ok = true;
  for (const auto& kind : kinds) {
    std::vector<std::size_t> dims{4};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(kind.output_dim);
    const DenseNet net = init_net(seed, dims, false);
    const auto rep = gradient_check(net, kind, tol, seed);
    std::printf("%-14s params %6zu  max rel error %.3e  %s\n", std::string(loss_name(kind.tag)).c_str(),
                rep.parameter_count, rep.max_rel_error, rep.passed ? "ok" : "FAIL");
    ok = ok && rep.passed;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generalized negative correlation learning: ensemble training and loss decomposition"};
  app.require_subcommand(1);

  CommonFlags train_flags, sweep_flags, decompose_flags;
  std::optional<std::string> train_method;
  std::optional<double> train_lambda;
  auto* train = app.add_subcommand("train", "train and evaluate one (method, lambda, seed) cell");
  add_common(train, train_flags);
  train->add_option("--method", train_method, "method name, overrides the config's method list");
  train->add_option("--lambda", train_lambda, "lambda for gncl/gncl2");

  auto* sweep = app.add_subcommand("sweep", "run the full method x lambda x seed grid");
  add_common(sweep, sweep_flags);

  std::vector<std::string> checkpoints;
  std::string split = "test";
  bool per_sample = false;
  auto* decompose = app.add_subcommand("decompose", "decompose the loss of saved members on a dataset");
  add_common(decompose, decompose_flags, false);
  decompose->add_option("--checkpoint", checkpoints, "member checkpoint file or directory (repeatable)")->required();
  decompose->add_option("--split", split, "train or test");
  decompose->add_flag("--per-sample", per_sample, "include per-sample rows in report.json");

  std::vector<std::size_t> hidden{8, 8};
  std::size_t classes = 3;
  std::uint64_t gc_seed = 0;
  double tol = 1e-5;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of backprop for every loss");
  gradcheck->add_option("--hidden", hidden, "hidden layer widths")->delimiter(',');
  gradcheck->add_option("--classes", classes, "C for the multi-class losses");
  gradcheck->add_option("--seed", gc_seed, "initialization seed");
  gradcheck->add_option("--tol", tol, "relative error tolerance");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(train_flags, train_method, train_lambda);
    if (*sweep) return cmd_sweep(sweep_flags);
    if (*decompose) return cmd_decompose(decompose_flags, checkpoints, split, per_sample);
    if (*gradcheck) return cmd_gradcheck(hidden, classes, gc_seed, tol);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
