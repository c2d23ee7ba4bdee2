#include "gisurrogate/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>
#include <tuple>

#include "gisurrogate/sampling.hpp"

namespace gisur {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

unsigned resolve_threads(unsigned threads) {
  if (threads > 0) return threads;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? hw : 1;
}

void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& fn) {
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(resolve_threads(threads), count));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::size_t failed_index = std::numeric_limits<std::size_t>::max();
  std::exception_ptr failure;
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (i < failed_index) {
          failed_index = i;
          failure = std::current_exception();
        }
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned t = 0; t < workers; ++t) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t s = mix(seed);
  for (std::uint64_t t : tags) s = mix(mix(s) ^ t);
  return s;
}

std::vector<const DatasetRecord*> Dataset::training(std::size_t partition) const {
  if (partition < 1 || partition > train_count()) {
    throw Error(ErrorKind::InvalidArgument, "partition " + std::to_string(partition) + " exceeds the training set");
  }
  std::vector<const DatasetRecord*> out;
  for (std::size_t i = 0; i < partition; ++i) out.push_back(&records[i]);
  return out;
}

std::vector<const DatasetRecord*> Dataset::test() const {
  std::vector<const DatasetRecord*> out;
  for (std::size_t i = train_count(); i < records.size(); ++i) out.push_back(&records[i]);
  return out;
}

std::size_t Dataset::free_count() const {
  return records.empty() ? 0 : static_cast<std::size_t>(records.front().solution.u.size());
}

Dataset generate_dataset(const TestbedConfig& cfg, std::vector<std::size_t> sizes, std::size_t test_size,
                         std::uint64_t seed, unsigned threads) {
  cfg.validate();
  if (sizes.empty()) throw Error(ErrorKind::InvalidArgument, "at least one partition size is required");
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] < 1 || (i > 0 && sizes[i] <= sizes[i - 1])) {
      throw Error(ErrorKind::InvalidArgument, "partition sizes must be positive and strictly ascending");
    }
  }
  if (test_size < 1) throw Error(ErrorKind::InvalidArgument, "test size must be >= 1");
  if (seed >= kSobolMaxPoints) throw Error(ErrorKind::InvalidArgument, "seed (Sobol skip) must be < 65536");

  const auto t0 = Clock::now();
  Dataset ds;
  ds.config = cfg;
  ds.sizes = std::move(sizes);
  ds.test_size = test_size;
  ds.seed = seed;
  ds.created = utc_timestamp();

  const DesignPlan plan = plan_dataset(ds.train_count() + test_size, cfg, static_cast<std::size_t>(seed));
  ds.rejected = plan.rejected;
  const Testbed testbed(cfg);
  ds.records.resize(plan.accepted.size());
  parallel_for(plan.accepted.size(), threads, [&](std::size_t k) {
    DatasetRecord& rec = ds.records[k];
    rec.point = plan.accepted[k];
    rec.sequence_index = plan.sequence_index[k];
    const auto ts = Clock::now();
    try {
      rec.solution = testbed.solve(rec.point);
      rec.kpi = testbed.compute_kpi(rec.point, rec.solution);
    } catch (const Error& e) {
      throw Error(e.kind(), "sample " + std::to_string(k) + ": " + e.what());
    }
    rec.wall_seconds = seconds_since(ts);
  });
  ds.total_wall_seconds = seconds_since(t0);
  return ds;
}

// ---------------------------------------------------------------------------
// Training

namespace {

std::shared_ptr<const Matrix> midpoint_weight(const Dataset& ds) {
  return std::make_shared<const Matrix>(build_weight(midpoint(ds.config.bounds), ds.config));
}

Matrix input_matrix(const std::vector<const DatasetRecord*>& recs) {
  const Eigen::Index d = recs.front()->point.values.size();
  Matrix X(static_cast<Eigen::Index>(recs.size()), d);
  for (std::size_t j = 0; j < recs.size(); ++j) X.row(static_cast<Eigen::Index>(j)) = recs[j]->point.values.transpose();
  return X;
}

constexpr std::uint64_t kKpiTag = 1000003;

// A lone sample carries no length-scale information; it is conditioned at
// the default hyperparameters instead of optimized.
GpModel fit_or_condition(const TrainingSet& set, GpMode mode, const FitOptions& fo) {
  if (set.size() == 1) return GpModel::condition(set, mode, default_kernel_params());
  return fit(set, mode, fo);
}

}  // namespace

FieldSurrogate train_field_surrogate(const Dataset& ds, std::size_t partition, std::size_t r, GpMode mode,
                                     std::shared_ptr<const Matrix> weight, const TrainOptions& options) {
  const auto t0 = Clock::now();
  const auto recs = ds.training(partition);
  std::vector<const FieldSolution*> sols;
  for (const auto* rec : recs) sols.push_back(&rec->solution);
  FieldSurrogate out;
  out.mode = mode;
  out.basis = compute_basis(build_snapshots(sols, false), std::move(weight), r);
  const std::size_t rank = out.basis.rank();

  const Matrix X = input_matrix(recs);
  const Eigen::Index ns = X.rows();
  const Eigen::Index d = X.cols();
  Matrix coeffs(ns, static_cast<Eigen::Index>(rank));
  std::vector<Matrix> coeff_grads;  // per sample: rank x d
  for (Eigen::Index j = 0; j < ns; ++j) {
    coeffs.row(j) = project(out.basis, recs[static_cast<std::size_t>(j)]->solution.u).transpose();
    if (mode == GpMode::GradientEnhanced) {
      coeff_grads.push_back(project_sensitivities(out.basis, recs[static_cast<std::size_t>(j)]->solution.sensitivities));
    }
  }

  std::vector<std::optional<GpModel>> models(rank);
  parallel_for(rank, options.threads, [&](std::size_t k) {
    TrainingSet set;
    set.inputs = X;
    set.targets = coeffs.col(static_cast<Eigen::Index>(k));
    set.bounds = ds.config.bounds;
    if (mode == GpMode::GradientEnhanced) {
      Matrix g(ns, d);
      for (Eigen::Index j = 0; j < ns; ++j) g.row(j) = coeff_grads[static_cast<std::size_t>(j)].row(static_cast<Eigen::Index>(k));
      set.gradients = std::move(g);
    }
    FitOptions fo = options.fit;
    fo.seed = derive_seed(options.seed, {partition, static_cast<std::uint64_t>(mode), k});
    try {
      models[k] = fit_or_condition(set, mode, fo);
    } catch (const Error& e) {
      throw Error(e.kind(), "coefficient " + std::to_string(k) + ", partition " + std::to_string(partition) + ", " +
                                to_string(mode) + ": " + e.what());
    }
  });
  for (auto& m : models) out.models.push_back(std::move(*m));
  out.fit_seconds = seconds_since(t0);
  return out;
}

FieldSurrogate train_field_surrogate(const Dataset& ds, std::size_t partition, std::size_t r, GpMode mode,
                                     const TrainOptions& options) {
  return train_field_surrogate(ds, partition, r, mode, midpoint_weight(ds), options);
}

FieldPrediction predict_field(const FieldSurrogate& surrogate, const ParamPoint& p, bool with_variance) {
  if (!p.in_bounds()) throw Error(ErrorKind::InvalidArgument, "prediction point outside the bounds");
  const std::size_t r = surrogate.models.size();
  Vector xi(static_cast<Eigen::Index>(r));
  FieldPrediction out;
  if (with_variance) out.variances.resize(static_cast<Eigen::Index>(r));
  for (std::size_t k = 0; k < r; ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    if (with_variance) {
      std::tie(xi[i], out.variances[i]) = surrogate.models[k].mean_and_variance(p.values);
    } else {
      xi[i] = surrogate.models[k].mean(p.values);
    }
  }
  out.u = reconstruct(surrogate.basis, xi);
  return out;
}

GpModel train_kpi_surrogate(const Dataset& ds, std::size_t partition, GpMode mode, const TrainOptions& options) {
  const auto recs = ds.training(partition);
  TrainingSet set;
  set.inputs = input_matrix(recs);
  set.targets.resize(set.inputs.rows());
  set.bounds = ds.config.bounds;
  Matrix g(set.inputs.rows(), set.inputs.cols());
  for (std::size_t j = 0; j < recs.size(); ++j) {
    set.targets[static_cast<Eigen::Index>(j)] = recs[j]->kpi.value;
    g.row(static_cast<Eigen::Index>(j)) = recs[j]->kpi.gradient.transpose();
  }
  if (mode == GpMode::GradientEnhanced) set.gradients = std::move(g);
  FitOptions fo = options.fit;
  fo.seed = derive_seed(options.seed, {partition, static_cast<std::uint64_t>(mode), kKpiTag});
  try {
    return fit_or_condition(set, mode, fo);
  } catch (const Error& e) {
    throw Error(e.kind(), "KPI model, partition " + std::to_string(partition) + ", " + to_string(mode) + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Evaluation

std::vector<Matrix> test_metrics(const Dataset& ds, unsigned threads) {
  const auto recs = ds.test();
  const Testbed testbed(ds.config);
  std::vector<Matrix> out(recs.size());
  parallel_for(recs.size(), threads, [&](std::size_t k) {
    out[k] = testbed.assemble(recs[k]->point, recs[k]->solution.u).matrix;
  });
  return out;
}

namespace {

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;  // fixed order
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

double abs_percentage_error(double truth, double approx) {
  if (truth == 0.0) throw Error(ErrorKind::ZeroReference, "test KPI is zero; MAPE is undefined");
  return 100.0 * std::abs((approx - truth) / truth);
}

}  // namespace

ModeEvaluation evaluate(const Dataset& ds, const std::vector<Matrix>& metrics, const WeightedPodBasis& basis,
                        const FieldPredictor& field, const KpiPredictor& kpi, unsigned threads) {
  const auto recs = ds.test();
  if (recs.empty()) throw Error(ErrorKind::InvalidArgument, "empty test set");
  if (metrics.size() != recs.size()) throw Error(ErrorKind::DimensionMismatch, "one metric per test point required");
  for (const auto* rec : recs) {
    if (rec->kpi.value == 0.0) throw Error(ErrorKind::ZeroReference, "test KPI is zero; MAPE is undefined");
  }
  const Testbed testbed(ds.config);
  const std::size_t n = recs.size();
  std::vector<double> field_err(n), baseline(n), kpi_field(n), kpi_direct(n), times(n);
  parallel_for(n, threads, [&](std::size_t k) {
    const DatasetRecord& rec = *recs[k];
    const auto t0 = Clock::now();
    const Vector u_tilde = field(rec.point);
    times[k] = seconds_since(t0);
    field_err[k] = relative_error(rec.solution.u, u_tilde, metrics[k]);
    baseline[k] = relative_error(rec.solution.u, reconstruct(basis, project(basis, rec.solution.u)), metrics[k]);
    kpi_field[k] = abs_percentage_error(rec.kpi.value, testbed.energy(rec.point, u_tilde));
    kpi_direct[k] = abs_percentage_error(rec.kpi.value, kpi(rec.point));
  });
  ModeEvaluation ev;
  ev.field_rel_error = mean_of(field_err);
  ev.pod_baseline = mean_of(baseline);
  ev.kpi_mape_field = mean_of(kpi_field);
  ev.kpi_mape_direct = mean_of(kpi_direct);
  ev.predict_seconds = median_of(times);
  return ev;
}

ModeEvaluation evaluate(const Dataset& ds, const std::vector<Matrix>& metrics, const FieldSurrogate& field,
                        const GpModel& kpi, unsigned threads) {
  ModeEvaluation ev = evaluate(
      ds, metrics, field.basis, [&](const ParamPoint& p) { return predict_field(field, p).u; },
      [&](const ParamPoint& p) { return kpi.mean(p.values); }, threads);
  std::vector<double> times;
  for (const auto* rec : ds.test()) {
    const auto t0 = Clock::now();
    const FieldPrediction pred = predict_field(field, rec->point, false);
    times.push_back(seconds_since(t0));
    if (pred.u.size() == 0) throw Error(ErrorKind::InvalidArgument, "empty prediction");
  }
  ev.predict_mean_seconds = median_of(times);
  return ev;
}

double EvalReport::at(std::size_t partition, GpMode mode, const std::string& metric) const {
  for (const auto& row : rows) {
    if (row.partition == partition && row.mode == mode && row.metric == metric) return row.value;
  }
  throw Error(ErrorKind::InvalidArgument,
              "no report cell " + std::to_string(partition) + "/" + to_string(mode) + "/" + metric);
}

bool EvalReport::has(std::size_t partition, GpMode mode) const {
  return std::any_of(rows.begin(), rows.end(),
                     [&](const ReportRow& r) { return r.partition == partition && r.mode == mode; });
}

bool is_timing_metric(const std::string& metric) {
  const std::string suffix = "_seconds";
  return metric.size() >= suffix.size() && metric.compare(metric.size() - suffix.size(), suffix.size(), suffix) == 0;
}

double TimingTable::at(const std::string& row, std::size_t partition) const {
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] != row) continue;
    for (std::size_t j = 0; j < partitions.size(); ++j) {
      if (partitions[j] == partition) return cells[i][j];
    }
  }
  throw Error(ErrorKind::InvalidArgument, "no timing cell " + row + "/" + std::to_string(partition));
}

TimingTable timing_report(const Dataset& ds, const std::vector<FitTimes>& fits) {
  TimingTable t;
  t.partitions = ds.sizes;
  t.rows = {"simulation", "GF field fit", "GE field fit", "GF KPI fit", "GE KPI fit"};
  t.cells.assign(t.rows.size(), std::vector<double>(t.partitions.size(), std::nan("")));
  double total = 0.0;
  for (std::size_t i = 0; i < ds.train_count(); ++i) total += ds.records[i].wall_seconds;
  t.per_sample_seconds = ds.train_count() > 0 ? total / static_cast<double>(ds.train_count()) : 0.0;
  for (std::size_t j = 0; j < t.partitions.size(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < t.partitions[j]; ++i) s += ds.records[i].wall_seconds;
    t.cells[0][j] = s;
  }
  for (const auto& f : fits) {
    const auto col = std::find(t.partitions.begin(), t.partitions.end(), f.partition);
    if (col == t.partitions.end()) continue;
    const auto j = static_cast<std::size_t>(col - t.partitions.begin());
    const bool ge = f.mode == GpMode::GradientEnhanced;
    t.cells[ge ? 2 : 1][j] = f.field_seconds;
    t.cells[ge ? 4 : 3][j] = f.kpi_seconds;
  }
  return t;
}

std::vector<BasisRow> basis_study(const Dataset& ds, std::shared_ptr<const Matrix> weight, std::size_t max_r,
                                  unsigned threads) {
  const auto tests = ds.test();
  std::vector<BasisRow> rows;
  for (std::size_t partition : ds.sizes) {
    std::vector<const FieldSolution*> sols;
    for (const auto* rec : ds.training(partition)) sols.push_back(&rec->solution);
    for (bool augmented : {false, true}) {
      const WeightedPodBasis basis = compute_basis(build_snapshots(sols, augmented, ds.h), weight, max_r);
      const std::size_t rmax = basis.rank();
      // errors[k][r-1] for test point k.
      std::vector<std::vector<double>> errors(tests.size(), std::vector<double>(rmax));
      parallel_for(tests.size(), threads, [&](std::size_t k) {
        const Vector& u = tests[k]->solution.u;
        const Vector xi = project(basis, u);
        for (std::size_t r = 1; r <= rmax; ++r) {
          const Vector approx = basis.Q.leftCols(static_cast<Eigen::Index>(r)) * xi.head(static_cast<Eigen::Index>(r));
          errors[k][r - 1] = relative_error(u, approx, *weight);
        }
      });
      for (std::size_t r = 1; r <= rmax; ++r) {
        std::vector<double> col;
        for (const auto& e : errors) col.push_back(e[r - 1]);
        rows.push_back({partition, augmented, r, mean_of(col)});
      }
    }
  }
  return rows;
}

StudyResult run_study(const Dataset& ds, const StudyOptions& options) {
  if (ds.test().empty()) throw Error(ErrorKind::InvalidArgument, "dataset has no test set");
  if (options.modes.empty()) throw Error(ErrorKind::InvalidArgument, "no GP modes selected");
  StudyResult result;
  const auto weight = midpoint_weight(ds);
  const auto metrics = test_metrics(ds, options.threads);
  TrainOptions train;
  train.fit = options.fit;
  train.seed = options.seed;
  train.threads = options.threads;
  std::vector<FitTimes> fits;
  for (std::size_t partition : ds.sizes) {
    for (GpMode mode : options.modes) {
      const FieldSurrogate field = train_field_surrogate(ds, partition, options.rank, mode, weight, train);
      const auto tk = Clock::now();
      const GpModel kpi = train_kpi_surrogate(ds, partition, mode, train);
      const double kpi_seconds = seconds_since(tk);
      // Timings are taken serially so predict times are not inflated by contention.
      const ModeEvaluation ev = evaluate(ds, metrics, field, kpi, 1);
      fits.push_back({partition, mode, field.fit_seconds, kpi_seconds});
      auto add = [&](const char* metric, double v) { result.report.rows.push_back({partition, mode, metric, v}); };
      add("field_rel_error", ev.field_rel_error);
      add("pod_baseline", ev.pod_baseline);
      add("kpi_mape_field", ev.kpi_mape_field);
      add("kpi_mape_direct", ev.kpi_mape_direct);
      add("field_fit_seconds", field.fit_seconds);
      add("kpi_fit_seconds", kpi_seconds);
      add("field_predict_seconds", ev.predict_seconds);
      add("field_predict_mean_seconds", ev.predict_mean_seconds);
      if (options.progress) {
        std::ostringstream msg;
        msg << "partition " << partition << " " << to_string(mode) << ": field_rel_error "
            << ev.field_rel_error << ", kpi_mape_direct " << ev.kpi_mape_direct << "%, fit "
            << field.fit_seconds + kpi_seconds << " s";
        options.progress(msg.str());
      }
    }
  }
  result.timing = timing_report(ds, fits);
  if (options.basis_study) result.basis = basis_study(ds, weight, options.basis_max_r, options.threads);
  return result;
}

// ---------------------------------------------------------------------------
// CSV

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw Error(ErrorKind::Io, "write failed: " + path.string());
}

}  // namespace

void write_report_csv(const EvalReport& report, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "partition,mode,metric,value\n";
  for (const auto& r : report.rows) {
    out << r.partition << ',' << to_string(r.mode) << ',' << r.metric << ',' << format_number(r.value) << '\n';
  }
  finish(out, path);
}

EvalReport read_report_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "partition,mode,metric,value") {
    throw Error(ErrorKind::Io, "unexpected report header in " + path.string());
  }
  EvalReport report;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string partition, mode, metric, value;
    if (!std::getline(ss, partition, ',') || !std::getline(ss, mode, ',') || !std::getline(ss, metric, ',') ||
        !std::getline(ss, value)) {
      throw Error(ErrorKind::Io, "malformed report line: " + line);
    }
    try {
      report.rows.push_back({std::stoul(partition), gp_mode_from_string(mode), metric, std::stod(value)});
    } catch (const std::logic_error&) {
      throw Error(ErrorKind::Io, "malformed report line: " + line);
    }
  }
  return report;
}

void write_timing_csv(const TimingTable& timing, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "row";
  for (std::size_t p : timing.partitions) out << ',' << p;
  out << '\n';
  for (std::size_t i = 0; i < timing.rows.size(); ++i) {
    out << timing.rows[i];
    for (double v : timing.cells[i]) out << ',' << format_number(v);
    out << '\n';
  }
  finish(out, path);
}

void write_basis_csv(const std::vector<BasisRow>& rows, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "partition,basis,r,rel_error\n";
  for (const auto& r : rows) {
    out << r.partition << ',' << (r.augmented ? "augmented" : "plain") << ',' << r.r << ','
        << format_number(r.rel_error) << '\n';
  }
  finish(out, path);
}

}  // namespace gisur
