#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "gisurrogate/matrix_io.hpp"
#include "gisurrogate/pipeline.hpp"

namespace gisur {

namespace {

using nlohmann::json;

constexpr int kFormatVersion = 1;

json vec(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector unvec(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json config_json(const TestbedConfig& cfg) {
  return {{"resolution", cfg.resolution},
          {"half_width_mm", cfg.half_width_mm},
          {"material", to_string(cfg.material)},
          {"brauer", {{"k1", cfg.brauer.k1}, {"k2", cfg.brauer.k2}, {"k3", cfg.brauer.k3}}},
          {"remanence_T", cfg.remanence_T},
          {"source_current_A_per_mm2", cfg.source_current_A_per_mm2},
          {"bounds", {{"lower", vec(cfg.bounds.lower)}, {"upper", vec(cfg.bounds.upper)}}},
          {"newton_tolerance", cfg.newton_tolerance},
          {"newton_max_iterations", cfg.newton_max_iterations},
          {"finite_difference_geometry", cfg.finite_difference_geometry}};
}

TestbedConfig config_from_json(const json& j) {
  TestbedConfig cfg;
  cfg.resolution = j.at("resolution").get<int>();
  cfg.half_width_mm = j.at("half_width_mm").get<double>();
  cfg.material = material_from_string(j.at("material").get<std::string>());
  cfg.brauer.k1 = j.at("brauer").at("k1").get<double>();
  cfg.brauer.k2 = j.at("brauer").at("k2").get<double>();
  cfg.brauer.k3 = j.at("brauer").at("k3").get<double>();
  cfg.remanence_T = j.at("remanence_T").get<double>();
  cfg.source_current_A_per_mm2 = j.at("source_current_A_per_mm2").get<double>();
  cfg.bounds.lower = unvec(j.at("bounds").at("lower"));
  cfg.bounds.upper = unvec(j.at("bounds").at("upper"));
  cfg.newton_tolerance = j.at("newton_tolerance").get<double>();
  cfg.newton_max_iterations = j.at("newton_max_iterations").get<int>();
  cfg.finite_difference_geometry = j.at("finite_difference_geometry").get<bool>();
  cfg.validate();
  return cfg;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string config_hash(const TestbedConfig& cfg) {
  // FNV-1a over the canonical JSON form.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : config_json(cfg).dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string manifest_json(const Dataset& ds) {
  json samples = json::array();
  for (std::size_t k = 0; k < ds.records.size(); ++k) {
    const auto& r = ds.records[k];
    samples.push_back({{"index", k},
                       {"sequence_index", r.sequence_index},
                       {"wall_seconds", r.wall_seconds},
                       {"newton_iterations", r.solution.newton_iterations},
                       {"residual_norm", r.solution.residual_norm}});
  }
  const auto names = param_names();
  json j = {{"format_version", kFormatVersion},
            {"config", config_json(ds.config)},
            {"config_hash", config_hash(ds.config)},
            {"parameters", std::vector<std::string>(names.begin(), names.end())},
            {"sizes", ds.sizes},
            {"test_size", ds.test_size},
            {"seed", ds.seed},
            {"sobol_skip", ds.seed},
            {"accepted", ds.records.size()},
            {"rejected", ds.rejected},
            {"free_count", ds.free_count()},
            {"h", ds.h},
            {"field_metric", "A(p, u_true)"},
            {"field_route_kpi", "energy(p, u_reconstructed)"},
            {"created", ds.created},
            {"total_wall_seconds", ds.total_wall_seconds},
            {"samples", samples}};
  return j.dump(2) + "\n";
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  if (ds.records.empty()) throw Error(ErrorKind::InvalidArgument, "dataset is empty");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());

  const auto n = static_cast<Eigen::Index>(ds.records.size());
  const Eigen::Index d = ds.records.front().point.values.size();
  const auto nf = static_cast<Eigen::Index>(ds.free_count());
  Matrix params(n, d), states(n, nf), sens(n * d, nf), kpi(n, 1 + d);
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto& r = ds.records[static_cast<std::size_t>(k)];
    params.row(k) = r.point.values.transpose();
    states.row(k) = r.solution.u.transpose();
    sens.middleRows(k * d, d) = r.solution.sensitivities.transpose();
    kpi(k, 0) = r.kpi.value;
    kpi.row(k).tail(d) = r.kpi.gradient.transpose();
  }
  save_matrix(dir / "params.txt", params);
  save_matrix(dir / "states.txt", states);
  save_matrix(dir / "sensitivities.txt", sens);
  save_matrix(dir / "kpi.txt", kpi);
  std::ofstream out(dir / "manifest.json");
  out << manifest_json(ds);
  if (!out) throw Error(ErrorKind::Io, "cannot write manifest in " + dir.string());
}

Dataset load_dataset(const std::filesystem::path& dir) {
  json j;
  try {
    j = json::parse(read_file(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Io, std::string("malformed manifest: ") + e.what());
  }
  Dataset ds;
  try {
    if (j.at("format_version").get<int>() != kFormatVersion) throw Error(ErrorKind::Io, "unsupported dataset format");
    ds.config = config_from_json(j.at("config"));
    ds.sizes = j.at("sizes").get<std::vector<std::size_t>>();
    ds.test_size = j.at("test_size").get<std::size_t>();
    ds.seed = j.at("seed").get<std::uint64_t>();
    ds.rejected = j.at("rejected").get<std::size_t>();
    ds.h = j.at("h").get<double>();
    ds.created = j.at("created").get<std::string>();
    ds.total_wall_seconds = j.at("total_wall_seconds").get<double>();
    const json& samples = j.at("samples");
    const Matrix params = load_matrix(dir / "params.txt");
    const Matrix states = load_matrix(dir / "states.txt");
    const Matrix sens = load_matrix(dir / "sensitivities.txt");
    const Matrix kpi = load_matrix(dir / "kpi.txt");
    const Eigen::Index n = params.rows();
    const Eigen::Index d = params.cols();
    if (static_cast<std::size_t>(n) != samples.size() || states.rows() != n || sens.rows() != n * d ||
        sens.cols() != states.cols() || kpi.rows() != n || kpi.cols() != 1 + d ||
        static_cast<std::size_t>(d) != ds.config.bounds.size()) {
      throw Error(ErrorKind::InconsistentDimensions, "dataset files disagree in shape");
    }
    if (static_cast<std::size_t>(n) != ds.train_count() + ds.test_size) {
      throw Error(ErrorKind::InconsistentDimensions, "sample count does not match sizes + test");
    }
    ds.records.resize(static_cast<std::size_t>(n));
    for (Eigen::Index k = 0; k < n; ++k) {
      auto& r = ds.records[static_cast<std::size_t>(k)];
      const json& s = samples.at(static_cast<std::size_t>(k));
      r.point = make_point(ds.config.bounds, params.row(k).transpose());
      r.solution.u = states.row(k).transpose();
      r.solution.sensitivities = sens.middleRows(k * d, d).transpose();
      r.solution.newton_iterations = s.at("newton_iterations").get<int>();
      r.solution.residual_norm = s.at("residual_norm").get<double>();
      r.kpi.value = kpi(k, 0);
      r.kpi.gradient = kpi.row(k).tail(d).transpose();
      r.sequence_index = s.at("sequence_index").get<std::size_t>();
      r.wall_seconds = s.at("wall_seconds").get<double>();
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Io, std::string("malformed manifest: ") + e.what());
  }
  return ds;
}

}  // namespace gisur
