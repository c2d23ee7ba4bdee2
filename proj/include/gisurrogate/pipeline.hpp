#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "gisurrogate/gpr.hpp"
#include "gisurrogate/pod.hpp"
#include "gisurrogate/testbed.hpp"

namespace gisur {

/// Runs fn(0) .. fn(count - 1) on up to `threads` workers (0 = hardware
/// concurrency). The exception of the lowest failing index is rethrown.
void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& fn);

unsigned resolve_threads(unsigned threads);

/// Deterministic 64-bit seed mixing (splitmix64 over the tags).
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags);

struct DatasetRecord {
  ParamPoint point;
  FieldSolution solution;
  KpiSample kpi;
  std::size_t sequence_index = 0;
  double wall_seconds = 0.0;
};

struct Dataset {
  TestbedConfig config;
  std::vector<std::size_t> sizes;  // ascending, nested training prefixes
  std::size_t test_size = 0;
  std::uint64_t seed = 0;          // Sobol skip offset
  std::size_t rejected = 0;
  double h = kDefaultAugmentationStep;
  std::string created;             // ISO-8601 UTC
  double total_wall_seconds = 0.0;
  std::vector<DatasetRecord> records;

  std::size_t train_count() const { return sizes.empty() ? 0 : sizes.back(); }
  /// Records [0, partition).
  std::vector<const DatasetRecord*> training(std::size_t partition) const;
  /// The trailing test_size records.
  std::vector<const DatasetRecord*> test() const;
  std::size_t free_count() const;
};

/// The Sobol plan skips `seed` leading points; max(sizes) + test_size
/// feasible points are solved with sensitivities and KPI.
Dataset generate_dataset(const TestbedConfig& cfg, std::vector<std::size_t> sizes, std::size_t test_size,
                         std::uint64_t seed, unsigned threads = 0);

/// Directory layout: manifest.json, params.txt, states.txt,
/// sensitivities.txt (row per sample and parameter), kpi.txt (value, gradient).
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);
/// manifest.json contents, also used for hashing.
std::string manifest_json(const Dataset& ds);
std::string config_hash(const TestbedConfig& cfg);

struct FieldSurrogate {
  WeightedPodBasis basis;
  std::vector<GpModel> models;  // one per reduced coefficient
  GpMode mode = GpMode::GradientFree;
  double fit_seconds = 0.0;
};

struct FieldPrediction {
  Vector u;
  Vector variances;  // per coefficient; empty unless requested
};

struct TrainOptions {
  FitOptions fit;          // seed is overridden per model
  std::uint64_t seed = 0;
  unsigned threads = 0;
};

/// Plain-snapshot basis of the first `partition` records.
FieldSurrogate train_field_surrogate(const Dataset& ds, std::size_t partition, std::size_t r, GpMode mode,
                                     std::shared_ptr<const Matrix> weight, const TrainOptions& options);
FieldSurrogate train_field_surrogate(const Dataset& ds, std::size_t partition, std::size_t r, GpMode mode,
                                     const TrainOptions& options);
FieldPrediction predict_field(const FieldSurrogate& surrogate, const ParamPoint& p, bool with_variance = true);

GpModel train_kpi_surrogate(const Dataset& ds, std::size_t partition, GpMode mode, const TrainOptions& options);

/// A(p, u_true) for every test record: the metric of the field error.
std::vector<Matrix> test_metrics(const Dataset& ds, unsigned threads = 0);

struct ModeEvaluation {
  double field_rel_error = 0.0;   // mean over the test set
  double pod_baseline = 0.0;      // mean project-reconstruct error of the true field
  double kpi_mape_field = 0.0;    // percent, KPI from the reconstructed field
  double kpi_mape_direct = 0.0;   // percent, direct KPI model
  double predict_seconds = 0.0;   // median predict_field time per test point
  double predict_mean_seconds = 0.0;  // same without the variances (surrogate overload only)
};

using FieldPredictor = std::function<Vector(const ParamPoint&)>;
using KpiPredictor = std::function<double(const ParamPoint&)>;

/// Scores arbitrary predictors on the test set. Throws ZeroReference if a
/// test KPI is zero.
ModeEvaluation evaluate(const Dataset& ds, const std::vector<Matrix>& metrics, const WeightedPodBasis& basis,
                        const FieldPredictor& field, const KpiPredictor& kpi, unsigned threads = 0);
ModeEvaluation evaluate(const Dataset& ds, const std::vector<Matrix>& metrics, const FieldSurrogate& field,
                        const GpModel& kpi, unsigned threads = 0);

struct ReportRow {
  std::size_t partition = 0;
  GpMode mode = GpMode::GradientFree;
  std::string metric;
  double value = 0.0;
};

struct EvalReport {
  std::vector<ReportRow> rows;

  /// Throws InvalidArgument when the cell is missing.
  double at(std::size_t partition, GpMode mode, const std::string& metric) const;
  bool has(std::size_t partition, GpMode mode) const;
};

inline const std::vector<std::string>& report_metrics() {
  static const std::vector<std::string> names = {"field_rel_error",   "pod_baseline",      "kpi_mape_field",
                                                 "kpi_mape_direct",   "field_fit_seconds", "kpi_fit_seconds",
                                                 "field_predict_seconds", "field_predict_mean_seconds"};
  return names;
}
/// Wall-clock metrics; excluded from reproducibility comparisons.
bool is_timing_metric(const std::string& metric);

struct TimingTable {
  std::vector<std::size_t> partitions;
  std::vector<std::string> rows;         // simulation, GF field fit, ...
  std::vector<std::vector<double>> cells;// rows x partitions, seconds
  double per_sample_seconds = 0.0;       // mean simulation time over the training records

  double at(const std::string& row, std::size_t partition) const;
};

struct FitTimes {
  std::size_t partition = 0;
  GpMode mode = GpMode::GradientFree;
  double field_seconds = 0.0;
  double kpi_seconds = 0.0;
};

TimingTable timing_report(const Dataset& ds, const std::vector<FitTimes>& fits);

struct BasisRow {
  std::size_t partition = 0;
  bool augmented = false;
  std::size_t r = 0;
  double rel_error = 0.0;  // mean over the test set
};

/// Mean test-set projection error against r for plain and augmented bases,
/// measured in the weight (Abar) norm.
std::vector<BasisRow> basis_study(const Dataset& ds, std::shared_ptr<const Matrix> weight, std::size_t max_r,
                                  unsigned threads = 0);

struct StudyOptions {
  std::size_t rank = 14;
  std::vector<GpMode> modes = {GpMode::GradientFree, GpMode::GradientEnhanced};
  std::uint64_t seed = 0;
  unsigned threads = 0;
  bool basis_study = false;
  std::size_t basis_max_r = 60;
  FitOptions fit;
  /// Called after each (partition, mode) with a short status line.
  std::function<void(const std::string&)> progress;
};

struct StudyResult {
  EvalReport report;
  TimingTable timing;
  std::vector<BasisRow> basis;
};

StudyResult run_study(const Dataset& ds, const StudyOptions& options);

void write_report_csv(const EvalReport& report, const std::filesystem::path& path);
EvalReport read_report_csv(const std::filesystem::path& path);
void write_timing_csv(const TimingTable& timing, const std::filesystem::path& path);
void write_basis_csv(const std::vector<BasisRow>& rows, const std::filesystem::path& path);

/// 17 significant digits, enough to round-trip a double.
std::string format_number(double v);

}  // namespace gisur
