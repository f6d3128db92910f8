#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "gncl/gncl.hpp"

using namespace gncl;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  const fs::path dir = fs::temp_directory_path() / (std::string("gncl_harness_") + info->name());
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

DenseNet constant_net(std::size_t in, const Vector& value) {
  DenseNet net({in, value.size()}, {}, false);
  for (std::size_t o = 0; o < value.size(); ++o) net.bias(0, o) = value[o];
  return net;
}

Dataset two_class_points() {
  Dataset d{Matrix(4, 1, 0.0), Matrix(4, 2, 0.0), 2, "points"};
  for (std::size_t r = 0; r < 4; ++r) d.labels(r, r % 2) = 1.0;
  d.features(0, 0) = 1.0;
  d.features(1, 0) = -1.0;
  d.features(2, 0) = 2.0;
  d.features(3, 0) = -2.0;
  return d;
}

/// Member whose logits are (x, -x): predicts class 0 for positive x.
DenseNet sign_net(double scale) {
  DenseNet net({1, 2}, {}, false);
  net.weight(0, 0, 0) = scale;
  net.weight(0, 1, 0) = -scale;
  return net;
}

Json small_config_json() {
  return Json::parse(R"({
    "dataset": {"source": "blobs", "n_per_class": 10, "classes": 3, "dim": 2},
    "net": {"hidden": [4]},
    "train": {"M": 2, "epochs": 2, "batch_size": 8, "seed": 5},
    "lambda_grid": [0.0, 0.5, 1.0],
    "repeats": 2,
    "methods": [{"method": "gncl"}, {"method": "gncl2"}]
  })");
}

}  // namespace

TEST(EvaluateTest, PerfectEnsembleAndSingleMember) {
  const auto data = two_class_points();
  const std::vector<DenseNet> members{sign_net(1.0)};
  const auto e = evaluate(members, data, LossKind::cross_entropy(2));
  EXPECT_EQ(e.test_acc_ensemble, 1.0);
  EXPECT_EQ(e.test_acc_member_avg, 1.0);
  EXPECT_EQ(e.diversity_test, 0.0);
}

TEST(EvaluateTest, OppositeMembersAverageToHalf) {
  const auto data = two_class_points();
  const std::vector<DenseNet> members{sign_net(2.0), sign_net(-1.0)};
  const auto kind = LossKind::cross_entropy(2);
  const auto e = evaluate(members, data, kind);
  EXPECT_EQ(e.test_acc_member_avg, 0.5);
  EXPECT_EQ(e.test_acc_ensemble, 1.0);
  EXPECT_EQ(e.diversity_test, decompose_dataset(members, data, kind).diversity);
  EXPECT_GT(e.diversity_test, 0.0);
}

TEST(EvaluateTest, TiesGoToLowestIndex) {
  const auto data = two_class_points();
  const std::vector<DenseNet> members{constant_net(1, {0.0, 0.0})};
  EXPECT_EQ(evaluate(members, data, LossKind::cross_entropy(2)).test_acc_ensemble, 0.5);
  EXPECT_EQ(predicted_class(Vector{0.0}), 1u);
  EXPECT_EQ(predicted_class(Vector{-0.5}), 0u);
}

TEST(EvaluateTest, InfiniteBoundForUnclampedNll) {
  Dataset d{Matrix(1, 1, 0.0), Matrix(1, 2, 0.0), 2, "nll"};
  d.labels(0, 0) = 1.0;
  const std::vector<DenseNet> members{constant_net(1, {0.6, 0.4}), constant_net(1, {0.2, 0.8})};
  const auto e = evaluate(members, d, LossKind::nll(2));
  EXPECT_TRUE(e.remainder_bound_test.is_infinite());
  MetricsRow row{"gncl", 0.5, 1, std::nullopt, 0.25, e};
  const std::string line = metrics_csv_line(row);
  EXPECT_EQ(line.substr(line.rfind(',') + 1), "inf");
  EXPECT_EQ(line.substr(0, 16), "gncl,0.5,1,final");
}

TEST(MetricsTest, CsvLineShape) {
  MetricsRow row{"bagging", std::nullopt, 7, 3, 0.125, {0.75, 0.5, 0.25, ExtendedReal(0.0625)}};
  EXPECT_EQ(metrics_csv_line(row), "bagging,,7,3,0.125,0.75,0.5,0.25,0.0625");
  EXPECT_EQ(std::string(kMetricsHeader),
            "method,lambda,seed,epoch,train_loss,test_acc_ensemble,test_acc_member_avg,diversity_test,"
            "remainder_bound_test");
  EXPECT_EQ(format_real(0.1), "0.10000000000000001");
}

TEST(ConfigTest, DefaultsAndPreset) {
  const auto cfg = parse_config(Json::object());
  EXPECT_EQ(cfg.train.resolved_members(MethodSpec::gncl(0.5)), 8u);
  EXPECT_EQ(cfg.train.epochs, 30);
  EXPECT_EQ(cfg.train.batch_size, 32u);
  EXPECT_EQ(cfg.train.schedule.initial, 0.01);
  EXPECT_EQ(cfg.train.schedule.halve_every, 10);
  EXPECT_EQ(cfg.lambda_grid, default_lambda_grid());
  EXPECT_EQ(cfg.lambda_grid.size(), 11u);

  const auto preset = parse_config(Json{{"preset", "paper-protocol"}, {"train", {{"epochs", 7}}}});
  EXPECT_EQ(preset.train.members, std::optional<std::size_t>(16));
  EXPECT_EQ(preset.train.epochs, 7);
  EXPECT_EQ(preset.train.batch_size, 128u);
  EXPECT_EQ(preset.train.schedule.initial, 0.001);
  EXPECT_EQ(preset.train.schedule.halve_every, 25);
  EXPECT_THROW(parse_config(Json{{"preset", "huge"}}), ConfigError);
}

TEST(ConfigTest, ParsesMethodsAndRejectsBadValues) {
  const auto cfg = parse_config(Json::parse(R"({
    "methods": [{"method": "gncl", "lambda": [0.2, 0.4]}, {"method": "snapshot"}, {"method": "independent"}],
    "train": {"optimizer": {"kind": "sgd", "momentum": 0.5}}
  })"));
  ASSERT_EQ(cfg.methods.size(), 3u);
  EXPECT_EQ(cfg.method_lambdas[0], (std::vector<double>{0.2, 0.4}));
  EXPECT_EQ(cfg.methods[1].snapshot_epochs, reference_snapshot_epochs());
  EXPECT_EQ(cfg.methods[2].tag, MethodTag::GNCL);
  EXPECT_EQ(cfg.train.optimizer.kind, OptimizerKind::SGDMomentum);
  EXPECT_EQ(cfg.train.optimizer.momentum, 0.5);

  EXPECT_THROW(parse_config(Json{{"lambda_grid", {0.0, 1.5}}}), ConfigError);
  EXPECT_THROW(parse_config(Json{{"repeats", 0}}), ConfigError);
  EXPECT_THROW(parse_config(Json{{"loss", "hinge"}}), ConfigError);
  EXPECT_THROW(parse_config(Json{{"methods", {{{"method", "boost"}}}}}), ConfigError);
  EXPECT_THROW(parse_config(Json{{"train", {{"epochs", "many"}}}}), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);
}

TEST(ConfigTest, SeedPrecedence) {
  auto cfg = parse_config(Json{{"seed", 3}});
  EXPECT_EQ(cfg.train.seed, 3u);
  ::unsetenv("GNCL_SEED");
  apply_seed_overrides(cfg, std::nullopt);
  EXPECT_EQ(cfg.train.seed, 3u);
  ::setenv("GNCL_SEED", "11", 1);
  apply_seed_overrides(cfg, std::nullopt);
  EXPECT_EQ(cfg.train.seed, 11u);
  apply_seed_overrides(cfg, 42);
  EXPECT_EQ(cfg.train.seed, 42u);
  ::setenv("GNCL_SEED", "abc", 1);
  EXPECT_THROW(apply_seed_overrides(cfg, std::nullopt), ConfigError);
  ::unsetenv("GNCL_SEED");
}

TEST(ExperimentTest, CellCountAndFinalRows) {
  const auto cfg = parse_config(small_config_json());
  const auto cells = expand_cells(cfg);
  ASSERT_EQ(cells.size(), 12u);
  EXPECT_EQ(cells[0].seed, 5u);
  EXPECT_EQ(cells[1].seed, 6u);
  EXPECT_EQ(cells[2].method.lambda, 0.5);

  const auto dir = temp_dir();
  const auto result = run_experiment(cfg, {dir, false});
  EXPECT_EQ(result.failed, 0u);
  const auto rows = result.rows();
  EXPECT_EQ(rows.size(), 12u);
  for (const auto& r : rows) {
    EXPECT_FALSE(r.epoch.has_value());
    EXPECT_GE(r.eval.test_acc_ensemble, 0.0);
    EXPECT_LE(r.eval.test_acc_ensemble, 1.0);
    EXPECT_GE(r.eval.diversity_test, -1e-10);
  }
  const std::string csv = read_file(dir / "metrics.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kMetricsHeader);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 13);

  const auto manifest = Json::parse(read_file(dir / "manifest.json"));
  EXPECT_EQ(manifest.at("version"), kLibraryVersion);
  EXPECT_EQ(manifest.at("cells"), 12);
  EXPECT_TRUE(manifest.contains("wall_time_seconds"));
  EXPECT_EQ(manifest.at("config"), small_config_json());
}

TEST(ExperimentTest, RerunsAreByteIdenticalAcrossWorkerCounts) {
  auto cfg = parse_config(small_config_json());
  const auto a = temp_dir() / "a";
  const auto b = temp_dir() / "b";
  run_experiment(cfg, {a, false});
  cfg.workers = 3;
  run_experiment(cfg, {b, false});
  EXPECT_EQ(read_file(a / "metrics.csv"), read_file(b / "metrics.csv"));
}

TEST(ExperimentTest, PerEpochRowsAndCheckpoints) {
  auto j = small_config_json();
  j["methods"] = Json::parse(R"([{"method": "bagging"}])");
  j["repeats"] = 1;
  j["per_epoch"] = true;
  const auto dir = temp_dir();
  const auto result = run_experiment(parse_config(j), {dir, true});
  const auto rows = result.rows();
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].epoch, std::optional<int>(1));
  EXPECT_EQ(rows[1].epoch, std::optional<int>(2));
  EXPECT_FALSE(rows[2].epoch.has_value());
  EXPECT_FALSE(rows[0].lambda.has_value());
  EXPECT_EQ(rows[1].train_loss, rows[2].train_loss);
  const auto ckpt = dir / "checkpoints" / "bagging_seed5";
  EXPECT_TRUE(fs::exists(ckpt / "member_000.gncl"));
  EXPECT_TRUE(fs::exists(ckpt / "member_001.gncl"));
  EXPECT_EQ(load_checkpoint((ckpt / "member_001.gncl").string()), result.results[0].ensemble->members[1]);
}

TEST(ExperimentTest, InvalidLambdaFailsBeforeTraining) {
  auto j = small_config_json();
  j["methods"] = Json::parse(R"([{"method": "gncl", "lambda": [0.5, 1.5]}])");
  const auto cfg = parse_config(j);
  const auto dir = temp_dir();
  EXPECT_THROW(run_experiment(cfg, {dir, false}), ConfigError);
  EXPECT_FALSE(fs::exists(dir / "metrics.csv"));
  j["lambda_grid"] = {0.0, 1.5};
  EXPECT_THROW(parse_config(j), ConfigError);
}

TEST(ExperimentTest, BinaryLossUsesSignLabels) {
  auto j = small_config_json();
  j["dataset"]["classes"] = 2;
  j["loss"] = "exponential";
  j["methods"] = Json::parse(R"([{"method": "gncl", "lambda": 0.5}])");
  j["repeats"] = 1;
  const auto result = run_experiment(parse_config(j));
  ASSERT_EQ(result.failed, 0u);
  EXPECT_GT(result.rows()[0].eval.test_acc_ensemble, 0.5);
  j["dataset"]["classes"] = 3;
  EXPECT_THROW(run_experiment(parse_config(j)), ConfigError);
}

TEST(TrendTest, SpearmanExamples) {
  const Vector lam{0.0, 0.5, 1.0, 1.5};
  EXPECT_DOUBLE_EQ(spearman(lam, Vector{1.0, 2.0, 4.0, 8.0}), 1.0);
  EXPECT_DOUBLE_EQ(spearman(lam, Vector{3.0, 2.0, 1.0, 0.0}), -1.0);
  EXPECT_EQ(spearman(lam, Vector{2.0, 2.0, 2.0, 2.0}), 0.0);
  EXPECT_EQ(average_ranks(Vector{5.0, 1.0, 5.0}), (std::vector<double>{2.5, 1.0, 2.5}));
}

TEST(TrendTest, LambdaTrendsPerSeed) {
  std::vector<MetricsRow> rows;
  for (std::uint64_t seed : {1, 2})
    for (double l : {0.0, 0.5, 1.0}) {
      MetricsRow r{"gncl", l, seed, std::nullopt, 0.0, {}};
      r.eval.diversity_test = seed == 1 ? l : 1.0 - l;
      r.eval.test_acc_member_avg = 0.5;
      rows.push_back(r);
    }
  rows.push_back({"bagging", std::nullopt, 1, std::nullopt, 0.0, {}});
  const auto t = lambda_trends(rows);
  ASSERT_EQ(t.per_seed.size(), 2u);
  EXPECT_DOUBLE_EQ(t.per_seed[0].spearman_diversity, 1.0);
  EXPECT_DOUBLE_EQ(t.per_seed[1].spearman_diversity, -1.0);
  EXPECT_DOUBLE_EQ(t.mean_spearman_diversity, 0.0);
  EXPECT_EQ(t.mean_spearman_member_accuracy, 0.0);
}

TEST(TrendTest, SweepWritesTrends) {
  auto cfg = parse_config(small_config_json());
  const auto dir = temp_dir();
  const auto sweep = sweep_lambda(cfg, {dir, false});
  EXPECT_EQ(sweep.trends.per_seed.size(), 4u);
  const auto j = Json::parse(read_file(dir / "trends.json"));
  EXPECT_TRUE(j.contains("mean_spearman_lambda_diversity"));
  cfg.lambda_grid = {0.0, 1.0};
  EXPECT_THROW(sweep_lambda(cfg), ConfigError);
}

TEST(DecomposeCmdTest, SingleMemberHasZeroDiversity) {
  const auto dir = temp_dir();
  const auto net = init_net(3, {2, 4, 3}, false);
  save_checkpoint((dir / "m0.gncl").string(), net);
  const auto data = gen_blobs(1, 5, 3, 2, 1.0);
  const auto report = decompose_cmd({(dir / "m0.gncl").string()}, data, LossKind::cross_entropy(3), dir);
  EXPECT_EQ(report.diversity, 0.0);
  EXPECT_LE(report.identity_residual(), 1e-12);
  const auto j = Json::parse(read_file(dir / "report.json"));
  EXPECT_EQ(j.at("diversity"), 0.0);
}

TEST(DecomposeCmdTest, MseToyEnsembleMatchesDecomposition) {
  const auto dir = temp_dir();
  save_checkpoint((dir / "a.gncl").string(), constant_net(1, {0.0}));
  save_checkpoint((dir / "b.gncl").string(), constant_net(1, {2.0}));
  const Dataset data{Matrix(1, 1, 0.0), Matrix(1, 1, 1.0), 1, "toy"};
  const auto report = decompose_cmd({(dir / "a.gncl").string(), (dir / "b.gncl").string()}, data, LossKind::mse(),
                                    std::nullopt, true);
  EXPECT_EQ(report.ensemble_loss, 0.0);
  EXPECT_EQ(report.avg_member_loss, 0.5);
  EXPECT_EQ(report.diversity, 0.5);
  EXPECT_EQ(report.empirical_remainder, 0.0);
  ASSERT_TRUE(report.per_sample.has_value());
  EXPECT_EQ(report.per_sample->size(), 1u);
}

TEST(DecomposeCmdTest, CrossEntropyRemainderWithinBound) {
  const auto dir = temp_dir();
  std::vector<std::string> paths;
  for (int i = 0; i < 4; ++i) {
    paths.push_back((dir / ("m" + std::to_string(i) + ".gncl")).string());
    save_checkpoint(paths.back(), init_net(20 + i, {2, 6, 3}, false));
  }
  const auto report = decompose_cmd(paths, gen_blobs(2, 10, 3, 2, 1.0), LossKind::cross_entropy(3), std::nullopt);
  ASSERT_TRUE(report.remainder_bound.is_finite());
  EXPECT_LE(std::abs(report.empirical_remainder), report.remainder_bound.value() + 1e-9);
}

TEST(DecomposeCmdTest, IncompatibleCheckpointsListDims) {
  const auto dir = temp_dir();
  save_checkpoint((dir / "a.gncl").string(), init_net(1, {2, 4, 3}, false));
  save_checkpoint((dir / "b.gncl").string(), init_net(2, {2, 5, 3}, false));
  const auto data = gen_blobs(1, 5, 3, 2, 1.0);
  try {
    decompose_cmd({(dir / "a.gncl").string(), (dir / "b.gncl").string()}, data, LossKind::cross_entropy(3),
                  std::nullopt);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("[2,5,3]"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[2,4,3]"), std::string::npos);
  }
  EXPECT_THROW(decompose_cmd({(dir / "a.gncl").string()}, data, LossKind::cross_entropy(4), std::nullopt), ShapeError);
  EXPECT_THROW(decompose_cmd({}, data, LossKind::cross_entropy(3), std::nullopt), ConfigError);
}
