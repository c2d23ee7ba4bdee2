#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "gisurrogate/gpr.hpp"

namespace gisur {

// Exit codes of the command-line front end.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// f(x) = x sin x on [0, 10], 5 equispaced samples with exact derivatives,
/// GF and GE models on a 201-point grid.
struct Demo1d {
  Vector x, truth;
  Vector gf_mean, gf_sd, ge_mean, ge_sd;
  double gf_rmse = 0.0;
  double ge_rmse = 0.0;
  double gf_band = 0.0;  // mean width of the 95% band
  double ge_band = 0.0;
  GpModel gf, ge;
};

Demo1d run_demo1d(std::uint64_t seed, const FitOptions& base = {});
double demo1d_function(double x);
double demo1d_derivative(double x);
void write_demo1d_csv(const Demo1d& demo, const std::filesystem::path& path);

/// Parses and runs one subcommand; output goes to `out`, diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace gisur
