#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "gisurrogate/pipeline.hpp"
#include "gisurrogate/sampling.hpp"

using namespace gisur;
namespace fs = std::filesystem;

namespace {

template <class F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no gisur::Error thrown";
  return ErrorKind::Io;
}

TestbedConfig small_config() {
  TestbedConfig cfg;
  cfg.resolution = 12;
  return cfg;
}

// sizes {4, 8}, 4 test points; generated once for the whole file.
const Dataset& tiny() {
  static const Dataset ds = generate_dataset(small_config(), {4, 8}, 4, 0, 1);
  return ds;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("gisur_test_pipeline_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json without_timings(const std::string& manifest) {
  auto j = nlohmann::json::parse(manifest);
  j.erase("created");
  j.erase("total_wall_seconds");
  for (auto& s : j.at("samples")) s.erase("wall_seconds");
  return j;
}

const DatasetRecord* find_record(const Dataset& ds, const ParamPoint& p) {
  for (const auto& r : ds.records)
    if (r.point.values == p.values) return &r;
  return nullptr;
}

}  // namespace

TEST(DeriveSeed, DeterministicAndTagSensitive) {
  EXPECT_EQ(derive_seed(7, {1, 2, 3}), derive_seed(7, {1, 2, 3}));
  std::set<std::uint64_t> seen;
  for (std::uint64_t s : {0, 1}) {
    for (std::uint64_t a : {0, 1, 2}) {
      for (std::uint64_t b : {0, 1}) seen.insert(derive_seed(s, {a, b}));
    }
  }
  EXPECT_EQ(seen.size(), 12u);
  EXPECT_NE(derive_seed(0, {1, 2}), derive_seed(0, {2, 1}));
  EXPECT_NE(derive_seed(0, {1}), derive_seed(1, {0}));
}

TEST(ParallelFor, MatchesSerial) {
  std::vector<double> serial(200), threaded(200);
  auto body = [](std::vector<double>& out) {
    return [&out](std::size_t i) { out[i] = std::sin(static_cast<double>(i)) * static_cast<double>(i); };
  };
  parallel_for(200, 1, body(serial));
  parallel_for(200, 4, body(threaded));
  EXPECT_EQ(serial, threaded);
  std::atomic<int> calls{0};
  parallel_for(0, 4, [&](std::size_t) { ++calls; });
  EXPECT_EQ(calls.load(), 0);
  EXPECT_GE(resolve_threads(0), 1u);
  EXPECT_EQ(resolve_threads(3), 3u);
}

TEST(ParallelFor, RethrowsLowestFailingIndex) {
  for (unsigned threads : {1u, 3u}) {
    try {
      parallel_for(50, threads, [](std::size_t i) {
        if (i == 17 || i == 31) throw Error(ErrorKind::InvalidArgument, "index " + std::to_string(i));
      });
      ADD_FAILURE() << "nothing thrown";
    } catch (const Error& e) {
      EXPECT_NE(std::string(e.what()).find("index 17"), std::string::npos) << e.what();
    }
  }
}

TEST(GenerateDataset, Structure) {
  const Dataset& ds = tiny();
  ASSERT_EQ(ds.records.size(), 12u);
  EXPECT_EQ(ds.train_count(), 8u);
  EXPECT_EQ(ds.training(4).size(), 4u);
  EXPECT_EQ(ds.test().size(), 4u);
  const auto small = ds.training(4);
  const auto big = ds.training(8);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(small[i], big[i]);
  std::set<std::vector<double>> train_points;
  for (const auto* r : big) train_points.insert({r->point.values.data(), r->point.values.data() + 4});
  for (const auto* r : ds.test()) {
    EXPECT_EQ(train_points.count({r->point.values.data(), r->point.values.data() + 4}), 0u);
  }
  for (std::size_t k = 1; k < ds.records.size(); ++k) {
    EXPECT_GT(ds.records[k].sequence_index, ds.records[k - 1].sequence_index);
  }
  const Testbed tb(ds.config);
  EXPECT_EQ(ds.free_count(), tb.free_count());
  for (const auto& r : ds.records) {
    EXPECT_EQ(r.solution.u.size(), static_cast<Eigen::Index>(tb.free_count()));
    EXPECT_EQ(r.solution.sensitivities.cols(), 4);
    EXPECT_EQ(r.kpi.gradient.size(), 4);
    EXPECT_GT(r.kpi.value, 0.0);
  }
}

TEST(GenerateDataset, RecordsMatchDirectSolves) {
  const Dataset& ds = tiny();
  const DesignPlan plan = plan_dataset(12, ds.config);
  for (std::size_t k : {0u, 5u, 11u}) {
    const DatasetRecord& rec = ds.records[k];
    EXPECT_EQ(rec.point.values, plan.accepted[k].values);
    const FieldSolution sol = solve(rec.point, ds.config);
    EXPECT_LE((sol.u - rec.solution.u).cwiseAbs().maxCoeff(), 1e-12 * sol.u.cwiseAbs().maxCoeff());
    EXPECT_LE((sol.sensitivities - rec.solution.sensitivities).cwiseAbs().maxCoeff(),
              1e-12 * sol.sensitivities.cwiseAbs().maxCoeff());
    EXPECT_NEAR(compute_kpi(rec.point, sol, ds.config).value, rec.kpi.value, 1e-12 * rec.kpi.value);
  }
}

TEST(GenerateDataset, SeedIsSobolSkip) {
  const Dataset ds = generate_dataset(small_config(), {2}, 1, 5, 1);
  const DesignPlan plan = plan_dataset(3, small_config(), 5);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(ds.records[k].point.values, plan.accepted[k].values);
  EXPECT_EQ(ds.records[0].point.values, tiny().records[5].point.values);
}

TEST(GenerateDataset, Errors) {
  const TestbedConfig cfg = small_config();
  EXPECT_EQ(kind_of([&] { generate_dataset(cfg, {}, 2, 0); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(kind_of([&] { generate_dataset(cfg, {4, 4}, 2, 0); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(kind_of([&] { generate_dataset(cfg, {8, 4}, 2, 0); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(kind_of([&] { generate_dataset(cfg, {4}, 0, 0); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(kind_of([&] { generate_dataset(cfg, {4}, 1, 65536); }), ErrorKind::InvalidArgument);
}

TEST(GenerateDataset, DeterministicApartFromTimings) {
  const Dataset a = generate_dataset(small_config(), {4, 8}, 4, 0, 1);
  const Dataset b = generate_dataset(small_config(), {4, 8}, 4, 0, 3);
  EXPECT_EQ(without_timings(manifest_json(a)), without_timings(manifest_json(b)));
  const fs::path da = scratch("det_a"), db = scratch("det_b");
  save_dataset(a, da);
  save_dataset(b, db);
  for (const char* f : {"params.txt", "states.txt", "sensitivities.txt", "kpi.txt"}) {
    EXPECT_EQ(slurp(da / f), slurp(db / f)) << f;
  }
  fs::remove_all(da);
  fs::remove_all(db);
}

TEST(DatasetIo, RoundTripIsExact) {
  const Dataset& ds = tiny();
  const fs::path dir = scratch("roundtrip");
  save_dataset(ds, dir);
  const Dataset back = load_dataset(dir);
  EXPECT_EQ(back.sizes, ds.sizes);
  EXPECT_EQ(back.test_size, ds.test_size);
  EXPECT_EQ(back.seed, ds.seed);
  EXPECT_EQ(back.created, ds.created);
  EXPECT_EQ(config_hash(back.config), config_hash(ds.config));
  ASSERT_EQ(back.records.size(), ds.records.size());
  for (std::size_t k = 0; k < ds.records.size(); ++k) {
    EXPECT_EQ(back.records[k].point.values, ds.records[k].point.values);
    EXPECT_EQ(back.records[k].solution.u, ds.records[k].solution.u);
    EXPECT_EQ(back.records[k].solution.sensitivities, ds.records[k].solution.sensitivities);
    EXPECT_EQ(back.records[k].kpi.value, ds.records[k].kpi.value);
    EXPECT_EQ(back.records[k].kpi.gradient, ds.records[k].kpi.gradient);
    EXPECT_EQ(back.records[k].sequence_index, ds.records[k].sequence_index);
  }
  EXPECT_EQ(manifest_json(back), manifest_json(ds));
  fs::remove_all(dir);
}

TEST(DatasetIo, Errors) {
  EXPECT_EQ(kind_of([] { load_dataset(scratch("missing")); }), ErrorKind::Io);
  const fs::path dir = scratch("corrupt");
  save_dataset(tiny(), dir);
  {
    std::ofstream out(dir / "manifest.json");
    out << "{ not json";
  }
  EXPECT_EQ(kind_of([&] { load_dataset(dir); }), ErrorKind::Io);
  fs::remove_all(dir);
  save_dataset(tiny(), dir);
  {
    std::ofstream out(dir / "kpi.txt");
    out << "1 5\n1 2 3 4 5\n";
  }
  EXPECT_EQ(kind_of([&] { load_dataset(dir); }), ErrorKind::InconsistentDimensions);
  fs::remove_all(dir);
}

TEST(ConfigHash, SensitiveToConfig) {
  TestbedConfig a = small_config();
  TestbedConfig b = a;
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.remanence_T = 1.1;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(FieldSurrogate, StructureAndSpan) {
  const Dataset& ds = tiny();
  TrainOptions opt;
  opt.threads = 1;
  const FieldSurrogate s = train_field_surrogate(ds, 8, 5, GpMode::GradientFree, opt);
  ASSERT_EQ(s.models.size(), 5u);
  EXPECT_EQ(s.basis.rank(), 5u);
  for (const auto& m : s.models) {
    EXPECT_EQ(m.normalization().lower, s.models[0].normalization().lower);
    EXPECT_EQ(m.normalization().scale, s.models[0].normalization().scale);
  }
  const Matrix& W = *s.basis.weight;
  for (const auto* rec : ds.test()) {
    const FieldPrediction pred = predict_field(s, rec->point);
    ASSERT_EQ(pred.variances.size(), 5);
    EXPECT_GE(pred.variances.minCoeff(), 0.0);
    // Lies in span(Q): the Abar-projection is the identity on it.
    const Vector back = s.basis.Q * (s.basis.Q.transpose() * (W * pred.u));
    EXPECT_LE((back - pred.u).norm(), 1e-9 * pred.u.norm());
    // In the Abar norm the projection is the best element of span(Q).
    const Vector proj = reconstruct(s.basis, project(s.basis, rec->solution.u));
    EXPECT_GE(relative_error(rec->solution.u, pred.u, W), relative_error(rec->solution.u, proj, W) - 1e-12);
    EXPECT_EQ(predict_field(s, rec->point, false).variances.size(), 0);
  }
  ParamPoint outside = ds.records[0].point;
  outside.values[0] = ds.config.bounds.upper[0] + 1.0;
  EXPECT_EQ(kind_of([&] { predict_field(s, outside); }), ErrorKind::InvalidArgument);
}

TEST(FieldSurrogate, InterpolatesTrainingPointsAtNoiseFloor) {
  const Dataset& ds = tiny();
  TrainOptions opt;
  opt.threads = 1;
  for (GpMode mode : {GpMode::GradientFree, GpMode::GradientEnhanced}) {
    FieldSurrogate s = train_field_surrogate(ds, 8, 6, mode, opt);
    for (auto& m : s.models) {
      KernelParams p = m.params();
      p.noise_variance = kNoiseFloor;
      m = GpModel::condition(m.data(), mode, p);
    }
    const Testbed tb(ds.config);
    for (const auto* rec : ds.training(8)) {
      const Matrix A = tb.assemble(rec->point, rec->solution.u).matrix;
      const Vector proj = reconstruct(s.basis, project(s.basis, rec->solution.u));
      const double roundtrip = relative_error(rec->solution.u, proj, A);
      EXPECT_LE(relative_error(rec->solution.u, predict_field(s, rec->point).u, A), roundtrip + 1e-5);
    }
  }
}

TEST(FieldSurrogate, SingleSample) {
  const Dataset ds = generate_dataset(small_config(), {1}, 1, 0, 1);
  TrainOptions opt;
  const FieldSurrogate s = train_field_surrogate(ds, 1, 1, GpMode::GradientFree, opt);
  ASSERT_EQ(s.models.size(), 1u);
  const DatasetRecord& rec = ds.records[0];
  const Matrix A = Testbed(ds.config).assemble(rec.point, rec.solution.u).matrix;
  const Vector proj = reconstruct(s.basis, project(s.basis, rec.solution.u));
  EXPECT_LE(relative_error(rec.solution.u, predict_field(s, rec.point).u, A),
            relative_error(rec.solution.u, proj, A) + 1e-10);
  const GpModel kpi = train_kpi_surrogate(ds, 1, GpMode::GradientEnhanced, opt);
  EXPECT_NEAR(kpi.predict(rec.point.values).mean, rec.kpi.value, 1e-9 * rec.kpi.value);
}

TEST(FieldSurrogate, ZeroedSensitivitiesGeVsGf) {
  // With the same fixed hyperparameters, GE on zero sensitivities equals GF
  // only where the derivative observations decouple; at the training points
  // both interpolate the coefficients.
  Dataset ds = tiny();
  for (auto& r : ds.records) r.solution.sensitivities.setZero();
  TrainOptions opt;
  opt.threads = 1;
  FieldSurrogate ge = train_field_surrogate(ds, 8, 3, GpMode::GradientEnhanced, opt);
  FieldSurrogate gf = train_field_surrogate(ds, 8, 3, GpMode::GradientFree, opt);
  for (std::size_t k = 0; k < 3; ++k) {
    KernelParams p = gf.models[k].params();
    p.noise_variance = kNoiseFloor;
    gf.models[k] = GpModel::condition(gf.models[k].data(), GpMode::GradientFree, p);
    ge.models[k] = GpModel::condition(ge.models[k].data(), GpMode::GradientEnhanced, p);
    EXPECT_EQ(ge.models[k].data().gradients->cwiseAbs().maxCoeff(), 0.0);
    for (const auto* rec : ds.training(8)) {
      EXPECT_NEAR(ge.models[k].predict(rec->point.values).mean, gf.models[k].predict(rec->point.values).mean,
                  1e-5 * gf.models[k].normalization().y_scale);
    }
  }
}

TEST(FieldSurrogate, Deterministic) {
  const Dataset& ds = tiny();
  TrainOptions opt;
  opt.seed = 3;
  opt.threads = 1;
  TrainOptions opt4 = opt;
  opt4.threads = 4;
  const FieldSurrogate a = train_field_surrogate(ds, 4, 3, GpMode::GradientEnhanced, opt);
  const FieldSurrogate b = train_field_surrogate(ds, 4, 3, GpMode::GradientEnhanced, opt4);
  for (const auto* rec : ds.test()) EXPECT_EQ(predict_field(a, rec->point).u, predict_field(b, rec->point).u);
}

TEST(Evaluate, TruthInjectionGivesZeroErrors) {
  const Dataset& ds = tiny();
  const auto metrics = test_metrics(ds, 1);
  ASSERT_EQ(metrics.size(), 4u);
  const FieldSurrogate s = train_field_surrogate(ds, 4, 3, GpMode::GradientFree, TrainOptions{});
  const ModeEvaluation ev = evaluate(
      ds, metrics, s.basis, [&](const ParamPoint& p) { return find_record(ds, p)->solution.u; },
      [&](const ParamPoint& p) { return find_record(ds, p)->kpi.value; }, 1);
  EXPECT_EQ(ev.field_rel_error, 0.0);
  EXPECT_EQ(ev.kpi_mape_direct, 0.0);
  EXPECT_LE(ev.kpi_mape_field, 1e-10);
  EXPECT_GT(ev.pod_baseline, 0.0);
  EXPECT_GE(ev.predict_seconds, 0.0);
}

TEST(Evaluate, ScalingTheFieldShowsUpInBothRoutes) {
  const Dataset& ds = tiny();
  const auto metrics = test_metrics(ds, 1);
  const FieldSurrogate s = train_field_surrogate(ds, 4, 3, GpMode::GradientFree, TrainOptions{});
  const ModeEvaluation ev = evaluate(
      ds, metrics, s.basis, [&](const ParamPoint& p) { return Vector(1.1 * find_record(ds, p)->solution.u); },
      [&](const ParamPoint& p) { return 0.9 * find_record(ds, p)->kpi.value; }, 1);
  // Linear law: the error is exactly 10 % in the energy norm and the energy
  // (quadratic in u, plus the remanence term) moves by a nonzero amount.
  EXPECT_NEAR(ev.field_rel_error, 0.1, 1e-12);
  EXPECT_NEAR(ev.kpi_mape_direct, 10.0, 1e-9);
  EXPECT_GT(ev.kpi_mape_field, 0.0);
}

TEST(Evaluate, ZeroExcitationIsZeroReference) {
  TestbedConfig cfg = small_config();
  cfg.remanence_T = 0.0;
  const Dataset ds = generate_dataset(cfg, {2}, 2, 0, 1);
  for (const auto& r : ds.records) EXPECT_EQ(r.kpi.value, 0.0);
  const Dataset& live = tiny();
  const FieldSurrogate s = train_field_surrogate(live, 4, 2, GpMode::GradientFree, TrainOptions{});
  std::vector<Matrix> metrics = test_metrics(ds, 1);
  EXPECT_EQ(kind_of([&] {
              evaluate(
                  ds, metrics, s.basis, [&](const ParamPoint& p) { return find_record(ds, p)->solution.u; },
                  [](const ParamPoint&) { return 1.0; }, 1);
            }),
            ErrorKind::ZeroReference);
}

TEST(Study, ReportCoversEveryCell) {
  const Dataset& ds = tiny();
  StudyOptions opt;
  opt.rank = 3;
  opt.threads = 1;
  opt.basis_study = true;
  opt.basis_max_r = 10;
  std::vector<std::string> progress;
  opt.progress = [&](const std::string& s) { progress.push_back(s); };
  const StudyResult res = run_study(ds, opt);
  EXPECT_EQ(progress.size(), 4u);
  EXPECT_EQ(res.report.rows.size(), 2u * 2u * report_metrics().size());
  for (std::size_t p : ds.sizes) {
    for (GpMode m : {GpMode::GradientFree, GpMode::GradientEnhanced}) {
      ASSERT_TRUE(res.report.has(p, m));
      for (const auto& metric : report_metrics()) EXPECT_GE(res.report.at(p, m, metric), 0.0) << metric;
      EXPECT_GE(res.report.at(p, m, "field_rel_error"), 0.0);
    }
  }
  EXPECT_EQ(kind_of([&] { res.report.at(99, GpMode::GradientFree, "field_rel_error"); }), ErrorKind::InvalidArgument);

  ASSERT_EQ(res.timing.rows.size(), 5u);
  EXPECT_EQ(res.timing.rows[0], "simulation");
  EXPECT_EQ(res.timing.partitions, ds.sizes);
  for (std::size_t p : ds.sizes) {
    EXPECT_EQ(res.timing.at("GF field fit", p), res.report.at(p, GpMode::GradientFree, "field_fit_seconds"));
    EXPECT_EQ(res.timing.at("GE KPI fit", p), res.report.at(p, GpMode::GradientEnhanced, "kpi_fit_seconds"));
  }
  EXPECT_LE(res.timing.at("simulation", 4), res.timing.at("simulation", 8));
  EXPECT_GT(res.timing.per_sample_seconds, 0.0);

  // Plain rank <= n_s; augmented rank >= plain.
  for (std::size_t p : ds.sizes) {
    std::size_t plain = 0, aug = 0;
    for (const auto& row : res.basis) {
      if (row.partition != p) continue;
      EXPECT_GE(row.rel_error, 0.0);
      (row.augmented ? aug : plain) = std::max(row.augmented ? aug : plain, row.r);
    }
    EXPECT_EQ(plain, p);
    EXPECT_GE(aug, plain);
    EXPECT_LE(aug, 10u);
  }
  // Abar-norm errors shrink as modes are added.
  for (std::size_t i = 1; i < res.basis.size(); ++i) {
    const BasisRow& a = res.basis[i - 1];
    const BasisRow& b = res.basis[i];
    if (a.partition == b.partition && a.augmented == b.augmented) EXPECT_LE(b.rel_error, a.rel_error + 1e-12);
  }
}

TEST(Study, SingleModeAndTimingMetrics) {
  const Dataset ds = generate_dataset(small_config(), {3}, 2, 0, 1);
  StudyOptions opt;
  opt.rank = 2;
  opt.modes = {GpMode::GradientFree};
  const StudyResult res = run_study(ds, opt);
  EXPECT_TRUE(res.report.has(3, GpMode::GradientFree));
  EXPECT_FALSE(res.report.has(3, GpMode::GradientEnhanced));
  EXPECT_TRUE(std::isnan(res.timing.at("GE field fit", 3)));
  EXPECT_TRUE(res.basis.empty());
  EXPECT_TRUE(is_timing_metric("field_fit_seconds"));
  EXPECT_TRUE(is_timing_metric("field_predict_seconds"));
  EXPECT_FALSE(is_timing_metric("kpi_mape_direct"));
  opt.modes.clear();
  EXPECT_EQ(kind_of([&] { run_study(ds, opt); }), ErrorKind::InvalidArgument);
}

TEST(Csv, ReportRoundTripAndLayout) {
  EvalReport r;
  r.rows.push_back({15, GpMode::GradientFree, "field_rel_error", 0.1 + 0.2});
  r.rows.push_back({15, GpMode::GradientEnhanced, "kpi_mape_direct", 1.0 / 3.0});
  r.rows.push_back({31, GpMode::GradientEnhanced, "field_fit_seconds", 1e-300});
  const fs::path dir = scratch("csv");
  fs::create_directories(dir);
  write_report_csv(r, dir / "report.csv");
  const std::string text = slurp(dir / "report.csv");
  EXPECT_EQ(text.substr(0, text.find('\n')), "partition,mode,metric,value");
  EXPECT_NE(text.find("15,gf,field_rel_error,0.30000000000000004"), std::string::npos);
  const EvalReport back = read_report_csv(dir / "report.csv");
  ASSERT_EQ(back.rows.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back.rows[i].partition, r.rows[i].partition);
    EXPECT_EQ(back.rows[i].mode, r.rows[i].mode);
    EXPECT_EQ(back.rows[i].metric, r.rows[i].metric);
    EXPECT_EQ(back.rows[i].value, r.rows[i].value);
  }

  TimingTable t;
  t.partitions = {15, 31};
  t.rows = {"simulation", "GF field fit"};
  t.cells = {{1.5, 3.0}, {0.25, std::nan("")}};
  write_timing_csv(t, dir / "timing.csv");
  EXPECT_EQ(slurp(dir / "timing.csv"), "row,15,31\nsimulation,1.5,3\nGF field fit,0.25,nan\n");

  write_basis_csv({{15, false, 1, 0.5}, {15, true, 2, 0.25}}, dir / "basis.csv");
  EXPECT_EQ(slurp(dir / "basis.csv"), "partition,basis,r,rel_error\n15,plain,1,0.5\n15,augmented,2,0.25\n");

  {
    std::ofstream out(dir / "bad.csv");
    out << "partition,mode,metric,value\n15,xx,field_rel_error,1\n";
  }
  EXPECT_NE(kind_of([&] { read_report_csv(dir / "bad.csv"); }), ErrorKind::ZeroReference);
  EXPECT_EQ(kind_of([&] { read_report_csv(dir / "nope.csv"); }), ErrorKind::Io);
  fs::remove_all(dir);
  EXPECT_EQ(format_number(0.1), "0.10000000000000001");
}
