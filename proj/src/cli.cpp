#include "gisurrogate/cli.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "gisurrogate/pipeline.hpp"

namespace gisur {

double demo1d_function(double x) { return x * std::sin(x); }
double demo1d_derivative(double x) { return std::sin(x) + x * std::cos(x); }

Demo1d run_demo1d(std::uint64_t seed, const FitOptions& base) {
  constexpr int kSamples = 5;
  constexpr int kGrid = 201;
  constexpr double kLo = 0.0;
  constexpr double kHi = 10.0;
  TrainingSet set;
  set.bounds.lower = Vector::Constant(1, kLo);
  set.bounds.upper = Vector::Constant(1, kHi);
  set.inputs.resize(kSamples, 1);
  set.targets.resize(kSamples);
  Matrix g(kSamples, 1);
  for (int i = 0; i < kSamples; ++i) {
    const double x = kLo + (kHi - kLo) * i / (kSamples - 1);
    set.inputs(i, 0) = x;
    set.targets[i] = demo1d_function(x);
    g(i, 0) = demo1d_derivative(x);
  }
  set.gradients = g;

  Demo1d d;
  FitOptions fo = base;
  fo.seed = derive_seed(seed, {0});
  d.gf = fit(set, GpMode::GradientFree, fo);
  fo.seed = derive_seed(seed, {1});
  d.ge = fit(set, GpMode::GradientEnhanced, fo);

  d.x.resize(kGrid);
  d.truth.resize(kGrid);
  d.gf_mean.resize(kGrid);
  d.gf_sd.resize(kGrid);
  d.ge_mean.resize(kGrid);
  d.ge_sd.resize(kGrid);
  double gf_sq = 0.0, ge_sq = 0.0;
  for (int i = 0; i < kGrid; ++i) {
    const double x = kLo + (kHi - kLo) * i / (kGrid - 1);
    const Vector xv = Vector::Constant(1, x);
    d.x[i] = x;
    d.truth[i] = demo1d_function(x);
    d.gf_mean[i] = d.gf.predict(xv).mean;
    d.ge_mean[i] = d.ge.predict(xv).mean;
    d.gf_sd[i] = std::sqrt(d.gf.variance(xv));
    d.ge_sd[i] = std::sqrt(d.ge.variance(xv));
    gf_sq += std::pow(d.gf_mean[i] - d.truth[i], 2);
    ge_sq += std::pow(d.ge_mean[i] - d.truth[i], 2);
  }
  d.gf_rmse = std::sqrt(gf_sq / kGrid);
  d.ge_rmse = std::sqrt(ge_sq / kGrid);
  d.gf_band = 2.0 * 1.96 * d.gf_sd.mean();
  d.ge_band = 2.0 * 1.96 * d.ge_sd.mean();
  return d;
}

void write_demo1d_csv(const Demo1d& d, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << "x,truth,gf_mean,gf_lo95,gf_hi95,ge_mean,ge_lo95,ge_hi95\n";
  for (Eigen::Index i = 0; i < d.x.size(); ++i) {
    out << format_number(d.x[i]) << ',' << format_number(d.truth[i]) << ',' << format_number(d.gf_mean[i]) << ','
        << format_number(d.gf_mean[i] - 1.96 * d.gf_sd[i]) << ',' << format_number(d.gf_mean[i] + 1.96 * d.gf_sd[i])
        << ',' << format_number(d.ge_mean[i]) << ',' << format_number(d.ge_mean[i] - 1.96 * d.ge_sd[i]) << ','
        << format_number(d.ge_mean[i] + 1.96 * d.ge_sd[i]) << '\n';
  }
  out.flush();
  if (!out) throw Error(ErrorKind::Io, "write failed: " + path.string());
}

namespace {

using Clock = std::chrono::steady_clock;

struct GenerateArgs {
  std::string out;
  std::vector<std::size_t> sizes = {15, 31, 61, 119};
  std::size_t test = 30;
  int resolution = 24;
  std::string material = "linear";
  std::vector<double> lower;
  std::vector<double> upper;
  std::uint64_t seed = 0;
  unsigned threads = 0;
};

struct TrainEvalArgs {
  std::string dataset;
  std::string out;
  std::size_t rank = 14;
  std::string modes = "both";
  std::uint64_t seed = 0;
  unsigned threads = 0;
  bool basis_study = false;
  bool ard = false;
};

struct DemoArgs {
  std::string out = "demo1d.csv";
  std::uint64_t seed = 0;
};

TestbedConfig testbed_config(const GenerateArgs& a) {
  TestbedConfig cfg;
  cfg.resolution = a.resolution;
  cfg.material = material_from_string(a.material);
  if (!a.lower.empty() || !a.upper.empty()) {
    if (a.lower.size() != kParamCount || a.upper.size() != kParamCount) {
      throw Error(ErrorKind::InvalidArgument, "--lower and --upper need " + std::to_string(kParamCount) + " values each");
    }
    cfg.bounds.lower = Eigen::Map<const Vector>(a.lower.data(), kParamCount);
    cfg.bounds.upper = Eigen::Map<const Vector>(a.upper.data(), kParamCount);
  }
  cfg.validate();
  return cfg;
}

std::vector<GpMode> parse_modes(const std::string& s) {
  if (s == "gf") return {GpMode::GradientFree};
  if (s == "ge") return {GpMode::GradientEnhanced};
  if (s == "both") return {GpMode::GradientFree, GpMode::GradientEnhanced};
  throw Error(ErrorKind::InvalidArgument, "--modes must be gf, ge or both");
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

int cmd_generate(const GenerateArgs& a, std::ostream& out) {
  const TestbedConfig cfg = testbed_config(a);
  out << "generate: out=" << a.out << " sizes=" << join(a.sizes) << " test=" << a.test
      << " resolution=" << cfg.resolution << " material=" << to_string(cfg.material) << " seed=" << a.seed
      << " threads=" << resolve_threads(a.threads) << " lower=" << cfg.bounds.lower.transpose()
      << " upper=" << cfg.bounds.upper.transpose() << '\n';
  const auto t0 = Clock::now();
  const Dataset ds = generate_dataset(cfg, a.sizes, a.test, a.seed, a.threads);
  save_dataset(ds, a.out);
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  out << "accepted " << ds.records.size() << ", rejected " << ds.rejected << ", free unknowns "
      << ds.free_count() << ", wall time " << secs << " s\n";
  return kExitOk;
}

int cmd_train_eval(const TrainEvalArgs& a, std::ostream& out) {
  const std::filesystem::path out_dir = a.out.empty() ? std::filesystem::path(a.dataset) : std::filesystem::path(a.out);
  StudyOptions opt;
  opt.rank = a.rank;
  opt.modes = parse_modes(a.modes);
  opt.seed = a.seed;
  opt.threads = a.threads;
  opt.basis_study = a.basis_study;
  opt.fit.ard = a.ard;
  opt.progress = [&out](const std::string& line) { out << line << '\n' << std::flush; };
  if (opt.rank < 1) throw Error(ErrorKind::InvalidArgument, "--rank must be >= 1");
  out << "train-eval: dataset=" << a.dataset << " out=" << out_dir.string() << " rank=" << a.rank
      << " modes=" << a.modes << " seed=" << a.seed << " threads=" << resolve_threads(a.threads)
      << " basis-study=" << (a.basis_study ? "yes" : "no") << " ard=" << (a.ard ? "yes" : "no") << '\n';
  const Dataset ds = load_dataset(a.dataset);
  out << "dataset: " << ds.records.size() << " samples, partitions " << join(ds.sizes) << ", test " << ds.test_size
      << ", material " << to_string(ds.config.material) << ", resolution " << ds.config.resolution << '\n';
  const StudyResult res = run_study(ds, opt);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  write_report_csv(res.report, out_dir / "report.csv");
  write_timing_csv(res.timing, out_dir / "timing.csv");
  out << "wrote " << (out_dir / "report.csv").string() << " and " << (out_dir / "timing.csv").string() << '\n';
  if (a.basis_study) {
    write_basis_csv(res.basis, out_dir / "basis.csv");
    out << "wrote " << (out_dir / "basis.csv").string() << '\n';
  }
  return kExitOk;
}

int cmd_demo1d(const DemoArgs& a, std::ostream& out) {
  out << "demo-1d: out=" << a.out << " seed=" << a.seed << '\n';
  const Demo1d d = run_demo1d(a.seed);
  write_demo1d_csv(d, a.out);
  out.precision(10);
  out << "GF RMSE " << d.gf_rmse << ", mean 95% band " << d.gf_band << '\n';
  out << "GE RMSE " << d.ge_rmse << ", mean 95% band " << d.ge_band << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Gradient-informed surrogate modeling of a parametric magnetostatic testbed", "gisur"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Sample the design space and solve every point with sensitivities");
  g->add_option("--out", gen.out, "Dataset directory")->required();
  g->add_option("--sizes", gen.sizes, "Nested training partition sizes, ascending")->delimiter(',')->capture_default_str();
  g->add_option("--test", gen.test, "Number of held-out test points")->capture_default_str();
  g->add_option("--resolution", gen.resolution, "Elements per side of the mesh")->capture_default_str();
  g->add_option("--material", gen.material, "Core material law")->check(CLI::IsMember({"linear", "brauer"}))->capture_default_str();
  g->add_option("--lower", gen.lower, "Lower bounds MH,MW,MAG,Theta1")->delimiter(',');
  g->add_option("--upper", gen.upper, "Upper bounds MH,MW,MAG,Theta1")->delimiter(',');
  g->add_option("--seed", gen.seed, "Number of leading Sobol points skipped")->capture_default_str();
  g->add_option("--threads", gen.threads, "Worker threads (0 = all cores, 1 = serial)")->capture_default_str();

  TrainEvalArgs te;
  auto* t = app.add_subcommand("train-eval", "Train field and KPI surrogates on every partition and score them");
  t->add_option("--dataset", te.dataset, "Dataset directory written by generate")->required();
  t->add_option("--out", te.out, "Report directory (default: the dataset directory)");
  t->add_option("--rank", te.rank, "Number of POD modes")->capture_default_str();
  t->add_option("--modes", te.modes, "GP variants to train")->check(CLI::IsMember({"gf", "ge", "both"}))->capture_default_str();
  t->add_option("--seed", te.seed, "Optimizer restart seed")->capture_default_str();
  t->add_option("--threads", te.threads, "Worker threads (0 = all cores, 1 = serial)")->capture_default_str();
  t->add_flag("--basis-study", te.basis_study, "Also write basis.csv comparing plain and augmented bases");
  t->add_flag("--ard", te.ard, "One length scale per parameter");

  DemoArgs demo;
  auto* dm = app.add_subcommand("demo-1d", "GF vs GE regression of x sin x from 5 samples");
  dm->add_option("--out", demo.out, "CSV output path")->capture_default_str();
  dm->add_option("--seed", demo.seed, "Optimizer restart seed")->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*g) return cmd_generate(gen, out);
    if (*t) return cmd_train_eval(te, out);
    return cmd_demo1d(demo, out);
  } catch (const Error& e) {
    err << "error (" << to_string(e.kind()) << "): " << e.what() << '\n';
    return e.kind() == ErrorKind::InvalidArgument ? kExitUsage : kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace gisur
