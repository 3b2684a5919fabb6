#pragma once

// Artifact-level pipeline behind the command-line tool: run configuration,
// serialized stage outputs, manifests, and the cache / fit / forecast /
// baseline / evaluate / simulate commands. Stages only talk through files
// under the cache and output directories.

#include <openssl/evp.h>

#include <Eigen/Dense>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "hba/analog.hpp"
#include "hba/evaluate.hpp"
#include "hba/forecast.hpp"
#include "hba/io.hpp"
#include "hba/model.hpp"
#include "hba/synthetic.hpp"
#include "json.hpp"

namespace hba {

inline constexpr const char* kCodeVersion = "hba 0.1.0";

namespace fs = std::filesystem;
using Json = nlohmann::json;

// ---------------------------------------------------------------- hashing

inline std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) throw Error("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw InvalidArgument("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string sha256_file(const fs::path& p) { return sha256_hex(read_file(p)); }

// ---------------------------------------------------------------- config

struct RunConfig {
  fs::path counts;
  fs::path forcing;
  fs::path cache_dir = "cache";
  fs::path output_dir = "output";
  std::string label;  // empty: HBA1 for EOF, HBA2 for LE
  ModelSettings model;
  SamplerConfig sampler;
  ForecastOptions forecast;
  std::uint64_t seed = 1;
  int chains = 1;
  std::vector<int> holdout;  // years
  SyntheticSpec synthetic;

  std::string run_label() const {
    if (!label.empty()) return label;
    return model.method == DimredMethod::kEof ? "HBA1" : "HBA2";
  }
};

inline DimredMethod parse_method(const std::string& s) {
  if (s == "eof" || s == "EOF") return DimredMethod::kEof;
  if (s == "le" || s == "LE") return DimredMethod::kLaplacianEigenmap;
  throw InvalidArgument("unknown method '" + s + "' (expected eof or le)");
}

namespace detail {

enum class KeyRole {
  kPrepare,  // changes the cached factorization / coefficients / distances
  kRun,      // changes sampler or forecast output
  kOther,    // recorded but does not change numbers (paths, labels, synthetic)
  kIgnored,  // not recorded (thread count)
};

struct ConfigKey {
  std::string name;
  KeyRole role;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

[[noreturn]] inline void bad_value(const std::string& key, const std::string& v, const char* what) {
  throw InvalidArgument("config: key '" + key + "' expects " + what + ", got '" + v + "'");
}

inline std::string fmt(int v) { return std::to_string(v); }
inline std::string fmt(std::uint64_t v) { return std::to_string(v); }
inline std::string fmt(unsigned v) { return std::to_string(v); }
inline std::string fmt(double v) { return format_double(v); }
inline std::string fmt(bool v) { return v ? "true" : "false"; }
inline std::string fmt(const std::string& v) { return v; }
inline std::string fmt(const fs::path& v) { return v.generic_string(); }
inline std::string fmt(DimredMethod v) { return to_string(v); }
inline std::string fmt(TrainingMode v) { return to_string(v); }
inline std::string fmt(LatentSystem v) { return to_string(v); }
inline std::string fmt(Anchor v) { return v == Anchor::kCalendar ? "calendar" : "index"; }
inline std::string fmt(const std::optional<TimeStamp>& v) { return v ? format_stamp(*v) : ""; }
inline std::string fmt(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

template <typename T>
T parse_integral(const std::string& key, const std::string& v) {
  T out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "an integer");
  return out;
}

inline void parse(const std::string& k, const std::string& v, int& out) { out = parse_integral<int>(k, v); }
inline void parse(const std::string& k, const std::string& v, std::uint64_t& out) {
  out = parse_integral<std::uint64_t>(k, v);
}
inline void parse(const std::string& k, const std::string& v, unsigned& out) { out = parse_integral<unsigned>(k, v); }
inline void parse(const std::string& k, const std::string& v, double& out) {
  auto d = parse_double(v);
  if (!d) bad_value(k, v, "a number");
  out = *d;
}
inline void parse(const std::string& k, const std::string& v, bool& out) {
  if (v == "true" || v == "1" || v == "yes") out = true;
  else if (v == "false" || v == "0" || v == "no") out = false;
  else bad_value(k, v, "true or false");
}
inline void parse(const std::string&, const std::string& v, std::string& out) { out = v; }
inline void parse(const std::string&, const std::string& v, fs::path& out) { out = v; }
inline void parse(const std::string&, const std::string& v, DimredMethod& out) { out = parse_method(v); }
inline void parse(const std::string&, const std::string& v, TrainingMode& out) { out = parse_training_mode(v); }
inline void parse(const std::string&, const std::string& v, LatentSystem& out) { out = parse_latent_system(v); }
inline void parse(const std::string& k, const std::string& v, Anchor& out) {
  if (v == "calendar") out = Anchor::kCalendar;
  else if (v == "index") out = Anchor::kIndexOffset;
  else bad_value(k, v, "calendar or index");
}
inline void parse(const std::string&, const std::string& v, std::optional<TimeStamp>& out) {
  if (v.empty()) out.reset();
  else out = parse_stamp(v);
}
inline void parse(const std::string& k, const std::string& v, std::vector<int>& out) {
  out.clear();
  if (v.empty()) return;
  for (const auto& cell : detail::split_cells(v, ',')) out.push_back(parse_integral<int>(k, std::string(detail::trim(cell))));
}

template <typename Ref>
ConfigKey key(std::string name, KeyRole role, Ref ref) {
  ConfigKey k;
  k.name = name;
  k.role = role;
  k.get = [ref](const RunConfig& c) { return fmt(ref(const_cast<RunConfig&>(c))); };
  k.set = [ref, name](RunConfig& c, const std::string& v) { parse(name, v, ref(c)); };
  return k;
}

inline const std::vector<ConfigKey>& config_keys() {
  using R = RunConfig;
  constexpr auto P = KeyRole::kPrepare;
  constexpr auto S = KeyRole::kRun;
  constexpr auto O = KeyRole::kOther;
  static const std::vector<ConfigKey> keys = {
      key("counts", O, [](R& c) -> fs::path& { return c.counts; }),
      key("forcing", O, [](R& c) -> fs::path& { return c.forcing; }),
      key("cache_dir", O, [](R& c) -> fs::path& { return c.cache_dir; }),
      key("output_dir", O, [](R& c) -> fs::path& { return c.output_dir; }),
      key("label", O, [](R& c) -> std::string& { return c.label; }),
      key("method", P, [](R& c) -> DimredMethod& { return c.model.method; }),
      key("n_beta", P, [](R& c) -> int& { return c.model.n_beta; }),
      key("n_alpha", P, [](R& c) -> int& { return c.model.n_alpha; }),
      key("q_min", P, [](R& c) -> int& { return c.model.hyper.q_min; }),
      key("q_max", P, [](R& c) -> int& { return c.model.hyper.q_max; }),
      key("m_min", S, [](R& c) -> int& { return c.model.hyper.m_min; }),
      key("m_max", P, [](R& c) -> int& { return c.model.hyper.m_max; }),
      key("eps", S, [](R& c) -> double& { return c.model.hyper.eps; }),
      key("a1", S, [](R& c) -> double& { return c.model.hyper.a1; }),
      key("b1", S, [](R& c) -> double& { return c.model.hyper.b1; }),
      key("a2", S, [](R& c) -> double& { return c.model.hyper.a2; }),
      key("b2", S, [](R& c) -> double& { return c.model.hyper.b2; }),
      key("knn_grid", P, [](R& c) -> std::vector<int>& { return c.model.hyper.knn_grid; }),
      key("tau", P, [](R& c) -> int& { return c.model.alignment.tau; }),
      key("anchor", P, [](R& c) -> Anchor& { return c.model.alignment.anchor; }),
      key("index_offset", P, [](R& c) -> int& { return c.model.alignment.index_offset; }),
      key("ref_start", P, [](R& c) -> std::optional<TimeStamp>& { return c.model.ref_start; }),
      key("ref_end", P, [](R& c) -> std::optional<TimeStamp>& { return c.model.ref_end; }),
      key("training_mode", P, [](R& c) -> TrainingMode& { return c.model.training_mode; }),
      key("rotation_only", P, [](R& c) -> bool& { return c.model.procrustes.rotation_only; }),
      key("nmf_max_iter", P, [](R& c) -> int& { return c.model.nmf.max_iter; }),
      key("nmf_tol", P, [](R& c) -> double& { return c.model.nmf.tol; }),
      key("nmf_offset", P, [](R& c) -> bool& { return c.model.nmf.offset; }),
      key("nmf_ridge", P, [](R& c) -> double& { return c.model.nmf.ridge; }),
      key("threads", KeyRole::kIgnored, [](R& c) -> unsigned& { return c.model.threads; }),
      key("holdout", P, [](R& c) -> std::vector<int>& { return c.holdout; }),
      key("iterations", S, [](R& c) -> int& { return c.sampler.iterations; }),
      key("burn_in", S, [](R& c) -> int& { return c.sampler.burn_in; }),
      key("thin", S, [](R& c) -> int& { return c.sampler.thin; }),
      key("adapt", S, [](R& c) -> bool& { return c.sampler.adapt; }),
      key("adapt_interval", S, [](R& c) -> int& { return c.sampler.adapt_interval; }),
      key("beta_proposal_var", S, [](R& c) -> double& { return c.sampler.beta_proposal_var; }),
      key("theta1_proposal_var", S, [](R& c) -> double& { return c.sampler.theta1_proposal_var; }),
      key("sigma2_proposal_var", S, [](R& c) -> double& { return c.sampler.sigma2_proposal_var; }),
      key("jacobian", S, [](R& c) -> bool& { return c.sampler.jacobian; }),
      key("random_sweep", S, [](R& c) -> bool& { return c.sampler.random_sweep; }),
      key("process_noise", S, [](R& c) -> bool& { return c.forecast.process_noise; }),
      key("seed", S, [](R& c) -> std::uint64_t& { return c.seed; }),
      key("chains", S, [](R& c) -> int& { return c.chains; }),
      key("sim.system", O, [](R& c) -> LatentSystem& { return c.synthetic.system; }),
      key("sim.n_y", O, [](R& c) -> int& { return c.synthetic.n_y; }),
      key("sim.n_x", O, [](R& c) -> int& { return c.synthetic.n_x; }),
      key("sim.n_periods", O, [](R& c) -> int& { return c.synthetic.n_periods; }),
      key("sim.n_basis", O, [](R& c) -> int& { return c.synthetic.n_basis; }),
      key("sim.tau", O, [](R& c) -> int& { return c.synthetic.tau; }),
      key("sim.periods_per_response", O, [](R& c) -> int& { return c.synthetic.periods_per_response; }),
      key("sim.history", O, [](R& c) -> int& { return c.synthetic.history; }),
      key("sim.first_year", O, [](R& c) -> int& { return c.synthetic.first_year; }),
      key("sim.response_month", O, [](R& c) -> int& { return c.synthetic.response_month; }),
      key("sim.count_scale", O, [](R& c) -> double& { return c.synthetic.count_scale; }),
      key("sim.forcing_noise", O, [](R& c) -> double& { return c.synthetic.forcing_noise; }),
      key("sim.seed", O, [](R& c) -> std::uint64_t& { return c.synthetic.seed; }),
      key("sim.period", O, [](R& c) -> int& { return c.synthetic.period; }),
      key("sim.planted_q", O, [](R& c) -> int& { return c.synthetic.planted_q; }),
      key("sim.phase_amplitude", O, [](R& c) -> double& { return c.synthetic.phase_amplitude; }),
      key("sim.noise_amplitude", O, [](R& c) -> double& { return c.synthetic.noise_amplitude; }),
      key("sim.dt", O, [](R& c) -> double& { return c.synthetic.dt; }),
      key("sim.substeps", O, [](R& c) -> int& { return c.synthetic.substeps; }),
      key("sim.spinup", O, [](R& c) -> int& { return c.synthetic.spinup; }),
  };
  return keys;
}

}  // namespace detail

inline void set_config_value(RunConfig& c, const std::string& name, const std::string& value) {
  for (const auto& k : detail::config_keys()) {
    if (k.name == name) {
      k.set(c, value);
      return;
    }
  }
  throw InvalidArgument("config: unknown key '" + name + "'");
}

// Recorded settings in schema order; `prepare_only` keeps the keys that
// change cached preparation artifacts.
inline std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& c, bool prepare_only = false) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : detail::config_keys()) {
    if (k.role == detail::KeyRole::kIgnored) continue;
    if (prepare_only && k.role != detail::KeyRole::kPrepare) continue;
    out.emplace_back(k.name, k.get(c));
  }
  return out;
}

inline std::string config_text(const RunConfig& c) {
  std::string s;
  for (const auto& [k, v] : config_entries(c)) s += k + " = " + v + "\n";
  return s;
}

// key = value lines; '#' starts a comment. Relative paths are taken
// relative to the config file's directory.
inline RunConfig parse_config(std::istream& in, const fs::path& base = {}) {
  RunConfig c;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string_view t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos)
      throw ParseError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string k(detail::trim(t.substr(0, eq)));
    const std::string v(detail::trim(t.substr(eq + 1)));
    try {
      set_config_value(c, k, v);
    } catch (const Error& e) {
      throw InvalidArgument("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  for (fs::path* p : {&c.counts, &c.forcing, &c.cache_dir, &c.output_dir})
    if (!p->empty() && p->is_relative() && !base.empty()) *p = (base / *p).lexically_normal();
  return c;
}

inline RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("config: cannot read " + path.string());
  return parse_config(in, path.parent_path());
}

// ---------------------------------------------------------------- grids

// Per-site table: id, lon, lat, then one column per year. A location
// sidecar is written next to it.
struct Grid {
  std::vector<Location> locations;
  std::vector<int> years;
  Eigen::MatrixXd values;  // sites x years
};

inline void write_grid(const fs::path& path, const Grid& g) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  out << "id,lon,lat";
  for (int y : g.years) out << ',' << y;
  out << '\n';
  for (std::size_t i = 0; i < g.locations.size(); ++i) {
    const auto& l = g.locations[i];
    out << l.id << ',' << format_double(l.lon) << ',' << format_double(l.lat);
    for (Eigen::Index j = 0; j < g.values.cols(); ++j) out << ',' << format_double(g.values(static_cast<Eigen::Index>(i), j));
    out << '\n';
  }
  detail::write_locations(default_sidecar(path), g.locations);
}

inline Grid read_grid(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("missing grid " + path.string());
  Grid g;
  std::string line;
  std::getline(in, line);
  auto head = detail::split_cells(line, ',');
  if (head.size() < 3 || head[0] != "id") throw ParseError(path.string() + ": bad grid header");
  for (std::size_t j = 3; j < head.size(); ++j) g.years.push_back(detail::parse_integral<int>("grid year", head[j]));
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_cells(line, ',');
    if (cells.size() != head.size()) throw ParseError(path.string() + ": ragged grid row");
    Location l;
    l.id = cells[0];
    std::vector<double> vals;
    for (std::size_t j = 1; j < cells.size(); ++j) {
      auto v = parse_double(detail::trim(cells[j]));
      if (!v) throw ParseError(path.string() + ": bad grid cell '" + cells[j] + "'");
      if (j == 1) l.lon = *v;
      else if (j == 2) l.lat = *v;
      else vals.push_back(*v);
    }
    g.locations.push_back(l);
    rows.push_back(vals);
  }
  g.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(g.years.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) g.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return g;
}

// ---------------------------------------------------------------- artifacts

inline void write_text_file(const fs::path& p, const std::string& s) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw InvalidArgument("cannot write " + p.string());
  out << s;
}

inline void write_json(const fs::path& p, const Json& j) { write_text_file(p, j.dump(2) + "\n"); }

inline Json read_json(const fs::path& p) {
  try {
    return Json::parse(read_file(p));
  } catch (const Json::exception& e) {
    throw ParseError(p.string() + ": " + e.what());
  }
}

inline void write_factorization(std::ostream& out, const Factorization& f) {
  out << "hba-factorization 1\n" << f.iterations << ' ' << (f.converged ? 1 : 0) << '\n';
  write_matrix(out, f.psi);
  write_matrix(out, f.b);
  write_matrix(out, f.offset);
  out << f.loss_trace.size();
  for (double v : f.loss_trace) out << ' ' << format_double(v);
  out << '\n';
}

inline Factorization read_factorization(std::istream& in) {
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != "hba-factorization" || version != 1)
    throw ParseError("not a factorization file");
  Factorization f;
  int conv = 0;
  in >> f.iterations >> conv;
  f.converged = conv != 0;
  f.psi = read_matrix(in);
  f.b = read_matrix(in);
  f.offset = read_matrix(in);
  std::size_t n = 0;
  in >> n;
  std::string tok;
  for (std::size_t i = 0; i < n && in >> tok; ++i) f.loss_trace.push_back(parse_double(tok).value_or(0.0));
  if (!in) throw ParseError("truncated factorization file");
  return f;
}

inline void write_coefficients(std::ostream& out, const std::map<int, ForcingCoefficients>& coeffs) {
  out << "hba-coefficients 1\n" << coeffs.size() << '\n';
  for (const auto& [k, c] : coeffs) {
    out << to_string(c.method) << ' ' << k << '\n';
    write_matrix(out, c.alpha);
  }
}

inline std::map<int, ForcingCoefficients> read_coefficients(std::istream& in) {
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != "hba-coefficients" || version != 1)
    throw ParseError("not a coefficients file");
  std::size_t n = 0;
  in >> n;
  std::map<int, ForcingCoefficients> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::string method;
    int k = 0;
    if (!(in >> method >> k)) throw ParseError("truncated coefficients file");
    ForcingCoefficients c;
    c.method = parse_method(method);
    c.k_nn = k;
    c.alpha = read_matrix(in);
    out.emplace(k, std::move(c));
  }
  return out;
}

// Kept draws (plus traces) of one chain.
inline void write_chain(std::ostream& out, const ChainOutput& c) {
  out << "hba-chain 1\n" << c.training.size();
  for (int t : c.training) out << ' ' << t;
  out << '\n' << c.iterations << ' ' << c.burn_in << ' ' << c.thin << '\n';
  out << format_double(c.acceptance.beta) << ' ' << format_double(c.acceptance.theta1) << ' '
      << format_double(c.acceptance.sigma2) << '\n';
  write_matrix(out, c.acceptance.beta_by_entry);
  write_matrix(out, c.beta_proposal_var);
  out << format_double(c.theta1_proposal_var) << ' ' << format_double(c.sigma2_proposal_var) << '\n';
  auto params = [&](const ModelParams& p) {
    out << p.m << ' ' << p.q << ' ' << format_double(p.theta1) << ' ' << format_double(p.sigma2_eta) << ' ' << p.k_nn;
  };
  out << c.log_posterior_trace.size() << '\n';
  for (std::size_t i = 0; i < c.log_posterior_trace.size(); ++i) {
    out << format_double(c.log_posterior_trace[i]) << ' ';
    params(c.param_trace[i]);
    out << '\n';
  }
  const Eigen::Index nb = c.beta_draws.empty() ? 0 : c.beta_draws.front().rows();
  out << c.beta_draws.size() << ' ' << nb << '\n';
  for (std::size_t l = 0; l < c.beta_draws.size(); ++l) {
    params(c.param_draws[l]);
    const Eigen::MatrixXd& b = c.beta_draws[l];
    for (Eigen::Index t = 0; t < b.cols(); ++t)
      for (Eigen::Index j = 0; j < b.rows(); ++j) out << ' ' << format_double(b(j, t));
    out << '\n';
  }
}

inline ChainOutput read_chain(std::istream& in) {
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != "hba-chain" || version != 1) throw ParseError("not a chain file");
  auto real = [&] {
    std::string tok;
    if (!(in >> tok)) throw ParseError("truncated chain file");
    auto v = parse_double(tok);
    if (!v) throw ParseError("bad number '" + tok + "' in chain file");
    return *v;
  };
  auto params = [&] {
    ModelParams p;
    in >> p.m >> p.q;
    p.theta1 = real();
    p.sigma2_eta = real();
    in >> p.k_nn;
    return p;
  };
  ChainOutput c;
  std::size_t n = 0;
  in >> n;
  c.training.resize(n);
  for (auto& t : c.training) in >> t;
  in >> c.iterations >> c.burn_in >> c.thin;
  c.acceptance.beta = real();
  c.acceptance.theta1 = real();
  c.acceptance.sigma2 = real();
  c.acceptance.beta_by_entry = read_matrix(in);
  c.beta_proposal_var = read_matrix(in);
  c.theta1_proposal_var = real();
  c.sigma2_proposal_var = real();
  std::size_t n_trace = 0;
  in >> n_trace;
  for (std::size_t i = 0; i < n_trace; ++i) {
    c.log_posterior_trace.push_back(real());
    c.param_trace.push_back(params());
  }
  std::size_t n_draws = 0;
  Eigen::Index nb = 0;
  in >> n_draws >> nb;
  for (std::size_t l = 0; l < n_draws; ++l) {
    c.param_draws.push_back(params());
    Eigen::MatrixXd b(nb, static_cast<Eigen::Index>(n));
    for (Eigen::Index t = 0; t < b.cols(); ++t)
      for (Eigen::Index j = 0; j < nb; ++j) b(j, t) = real();
    c.beta_draws.push_back(std::move(b));
  }
  if (!in) throw ParseError("truncated chain file");
  return c;
}

// ---------------------------------------------------------------- manifests

struct ArtifactSet {
  fs::path root;
  std::vector<fs::path> files;

  Json hashes() const {
    Json j = Json::object();
    for (const auto& f : files) j[fs::relative(f, root).generic_string()] = sha256_file(f);
    return j;
  }
};

inline Json config_json(const RunConfig& c) {
  Json j = Json::object();
  for (const auto& [k, v] : config_entries(c)) j[k] = v;
  return j;
}

// No clocks or host names: the manifest is a pure function of the config,
// seeds, inputs and outputs.
inline fs::path write_manifest(const fs::path& path, const std::string& command, const RunConfig& c, const Json& inputs,
                               const ArtifactSet& artifacts) {
  Json m;
  m["command"] = command;
  m["code_version"] = kCodeVersion;
  m["config"] = config_json(c);
  m["config_sha256"] = sha256_hex(config_text(c));
  m["seed"] = c.seed;
  m["chains"] = c.chains;
  m["label"] = c.run_label();
  m["inputs"] = inputs;
  m["artifacts"] = artifacts.hashes();
  write_json(path, m);
  return path;
}

// ---------------------------------------------------------------- stages

struct Inputs {
  CountField counts;
  ForcingField forcing;
  std::string counts_sha;
  std::string forcing_sha;

  Json json() const { return Json{{"counts", counts_sha}, {"forcing", forcing_sha}}; }
};

inline Inputs load_inputs(const RunConfig& c) {
  return run_stage("load", [&] {
    if (c.counts.empty() || c.forcing.empty()) throw InvalidArgument("config must name counts and forcing files");
    Inputs in;
    in.counts = load_count_field(c.counts);
    in.forcing = load_forcing_field(c.forcing);
    in.counts_sha = sha256_file(c.counts);
    in.forcing_sha = sha256_file(c.forcing);
    return in;
  });
}

struct Target {
  int year = 0;
  int index = 0;
};

inline std::vector<Target> resolve_targets(const RunConfig& c, const CountField& counts) {
  return run_stage("config", [&] {
    if (c.holdout.empty()) throw InvalidArgument("no holdout year given");
    std::vector<Target> out;
    for (int y : c.holdout) {
      const int t = counts.index_of_year(y);
      if (t < 0) throw InvalidArgument("holdout year " + std::to_string(y) + " is not in the count record");
      out.push_back({y, t});
    }
    return out;
  });
}

inline std::vector<int> excluded_for(const RunConfig& c, const std::vector<Target>& targets) {
  std::vector<int> ex;
  if (c.model.training_mode == TrainingMode::kExclude)
    for (const auto& t : targets) ex.push_back(t.index);
  return ex;
}

inline fs::path prepared_dir(const RunConfig& c, int year) { return c.cache_dir / c.run_label() / std::to_string(year); }
inline fs::path target_dir(const RunConfig& c, int year) { return c.output_dir / c.run_label() / std::to_string(year); }
inline fs::path label_dir(const RunConfig& c) { return c.output_dir / c.run_label(); }

inline std::string prepare_fingerprint(const RunConfig& c, const Inputs& in, const Target& t) {
  std::string s = std::string(kCodeVersion) + "\n" + in.counts_sha + "\n" + in.forcing_sha + "\ntarget " +
                  std::to_string(t.index) + "\n";
  for (const auto& [k, v] : config_entries(c, true)) s += k + "=" + v + "\n";
  return sha256_hex(s);
}

inline std::vector<fs::path> prepared_files(const fs::path& dir) {
  return {dir / "prepared.json", dir / "factorization.txt", dir / "coefficients.txt", dir / "distance.cache"};
}

inline void write_prepared(const fs::path& dir, const PreparedModel& pm, const std::string& fingerprint) {
  fs::create_directories(dir);
  Json j;
  j["fingerprint"] = fingerprint;
  j["target"] = pm.target;
  j["training"] = pm.training;
  j["excluded"] = pm.excluded;
  j["alignment"] = pm.alignment.forcing_index;
  j["knn_grid"] = pm.hyper.knn_grid;
  Json fail = Json::object();
  for (const auto& [k, msg] : pm.le_failures) fail[std::to_string(k)] = msg;
  j["le_failures"] = fail;
  j["nmf_iterations"] = pm.factorization.iterations;
  j["nmf_converged"] = pm.factorization.converged;
  write_json(dir / "prepared.json", j);
  std::ostringstream f, c, d;
  write_factorization(f, pm.factorization);
  write_coefficients(c, pm.coefficients);
  write_distance_cache(d, pm.cache);
  write_text_file(dir / "factorization.txt", f.str());
  write_text_file(dir / "coefficients.txt", c.str());
  write_text_file(dir / "distance.cache", d.str());
}

inline PreparedModel read_prepared(const fs::path& dir, const Hyperparams& hyper) {
  for (const auto& f : prepared_files(dir))
    if (!fs::exists(f)) throw InvalidArgument("missing artifact " + f.string() + " (run cache or fit first)");
  const Json j = read_json(dir / "prepared.json");
  PreparedModel pm;
  pm.target = j.at("target").get<int>();
  pm.training = j.at("training").get<std::vector<int>>();
  pm.excluded = j.at("excluded").get<std::vector<int>>();
  pm.alignment.forcing_index = j.at("alignment").get<std::vector<int>>();
  pm.hyper = hyper;
  pm.hyper.knn_grid = j.at("knn_grid").get<std::vector<int>>();
  for (const auto& [k, msg] : j.at("le_failures").items()) pm.le_failures.emplace(std::stoi(k), msg.get<std::string>());
  std::ifstream f(dir / "factorization.txt"), c(dir / "coefficients.txt"), d(dir / "distance.cache");
  pm.factorization = read_factorization(f);
  pm.coefficients = read_coefficients(c);
  pm.cache = read_distance_cache(d);
  return pm;
}

// Cached preparation for one target, rebuilt when absent, stale or forced.
inline PreparedModel ensure_prepared(const RunConfig& c, const Inputs& in, const Target& t,
                                     const std::vector<int>& excluded, bool rebuild) {
  const fs::path dir = prepared_dir(c, t.year);
  const std::string fp = prepare_fingerprint(c, in, t);
  if (!rebuild && fs::exists(dir / "prepared.json")) {
    const Json j = run_stage("cache", [&] { return read_json(dir / "prepared.json"); });
    if (j.value("fingerprint", "") == fp) return run_stage("cache", [&] { return read_prepared(dir, c.model.hyper); });
  }
  PreparedModel pm = prepare_model(in.counts, in.forcing, t.index, c.model, excluded);
  run_stage("cache", [&] {
    write_prepared(dir, pm, fp);
    return 0;
  });
  return pm;
}

inline Json prepared_hashes(const RunConfig& c, const std::vector<Target>& targets) {
  ArtifactSet a{c.cache_dir, {}};
  for (const auto& t : targets)
    for (const auto& f : prepared_files(prepared_dir(c, t.year))) a.files.push_back(f);
  return a.hashes();
}

inline std::uint64_t target_seed(const RunConfig& c, std::size_t k) { return c.seed + 1000ULL * k; }

// cmd_cache: load -> anomalize -> NMF -> dimred -> distance cache.
inline fs::path cmd_cache(const RunConfig& c, bool rebuild = true) {
  Inputs in = load_inputs(c);
  const auto targets = resolve_targets(c, in.counts);
  const auto ex = excluded_for(c, targets);
  for (const auto& t : targets) ensure_prepared(c, in, t, ex, rebuild);
  ArtifactSet a{c.cache_dir, {}};
  for (const auto& t : targets)
    for (const auto& f : prepared_files(prepared_dir(c, t.year))) a.files.push_back(f);
  return run_stage("output", [&] { return write_manifest(c.cache_dir / c.run_label() / "manifest_cache.json", "cache", c, in.json(), a); });
}

inline fs::path chain_path(const RunConfig& c, int year, int chain) {
  return target_dir(c, year) / ("chain_" + std::to_string(chain + 1) + ".txt");
}

inline Json chain_summary(const std::vector<ChainOutput>& chains) {
  Json out = Json::array();
  for (const auto& ch : chains) {
    std::map<int, int> qs, ms;
    double t1 = 0, s2 = 0;
    for (const auto& p : ch.param_draws) {
      ++qs[p.q];
      ++ms[p.m];
      t1 += p.theta1;
      s2 += p.sigma2_eta;
    }
    const double n = std::max<double>(1.0, static_cast<double>(ch.param_draws.size()));
    auto mode = [](const std::map<int, int>& h) {
      int best = 0, count = -1;
      for (const auto& [v, k] : h)
        if (k > count) best = v, count = k;
      return best;
    };
    Json j;
    j["kept_draws"] = ch.param_draws.size();
    j["acceptance_beta"] = ch.acceptance.beta;
    j["acceptance_theta1"] = ch.acceptance.theta1;
    j["acceptance_sigma2"] = ch.acceptance.sigma2;
    j["q_mode"] = mode(qs);
    j["m_mode"] = mode(ms);
    j["theta1_mean"] = t1 / n;
    j["sigma2_mean"] = s2 / n;
    out.push_back(j);
  }
  return out;
}

// cmd_fit: preparation (reused from the cache directory when current) and
// the sampler chains.
inline fs::path cmd_fit(const RunConfig& c, bool rebuild = false) {
  Inputs in = load_inputs(c);
  const auto targets = resolve_targets(c, in.counts);
  const auto ex = excluded_for(c, targets);
  ArtifactSet a{c.output_dir, {}};
  for (std::size_t k = 0; k < targets.size(); ++k) {
    const Target& t = targets[k];
    PreparedModel pm = ensure_prepared(c, in, t, ex, rebuild);
    SamplerConfig sc = c.sampler;
    std::vector<ChainOutput> chains = run_chains(in.counts, pm, sc, target_seed(c, k), c.chains);
    run_stage("output", [&] {
      for (int ch = 0; ch < c.chains; ++ch) {
        std::ostringstream s;
        write_chain(s, chains[static_cast<std::size_t>(ch)]);
        write_text_file(chain_path(c, t.year, ch), s.str());
        a.files.push_back(chain_path(c, t.year, ch));
      }
      write_json(target_dir(c, t.year) / "fit_summary.json", chain_summary(chains));
      a.files.push_back(target_dir(c, t.year) / "fit_summary.json");
      return 0;
    });
  }
  Json inputs = in.json();
  inputs["prepared"] = prepared_hashes(c, targets);
  return run_stage("output", [&] { return write_manifest(label_dir(c) / "manifest_fit.json", "fit", c, inputs, a); });
}

inline std::vector<ChainOutput> read_chains(const RunConfig& c, int year) {
  std::vector<ChainOutput> out;
  for (int ch = 0; ch < c.chains; ++ch) {
    const fs::path p = chain_path(c, year, ch);
    if (!fs::exists(p)) throw InvalidArgument("missing artifact " + p.string() + " (run fit first)");
    std::ifstream in(p);
    out.push_back(read_chain(in));
  }
  return out;
}

// cmd_forecast: posterior predictive grids (mean, 2.5%, 97.5%) over the
// holdout years, plus a draw table per year.
inline fs::path cmd_forecast(const RunConfig& c) {
  Inputs in = load_inputs(c);
  const auto targets = resolve_targets(c, in.counts);
  const int n_y = in.counts.n_locations();
  Grid mean{in.counts.locations, {}, Eigen::MatrixXd(n_y, static_cast<Eigen::Index>(targets.size()))};
  Grid lower = mean, upper = mean;
  ArtifactSet a{c.output_dir, {}};
  for (std::size_t k = 0; k < targets.size(); ++k) {
    const Target& t = targets[k];
    const PreparedModel pm = run_stage("forecast", [&] { return read_prepared(prepared_dir(c, t.year), c.model.hyper); });
    const std::vector<ChainOutput> chains = run_stage("forecast", [&] { return read_chains(c, t.year); });
    ForecastResult r = run_stage("forecast", [&] {
      Rng rng(target_seed(c, k) + 7919ULL);
      ForecastOptions opt = c.forecast;
      opt.eps = c.model.hyper.eps;
      return forecast(pool_chains(chains), pm.cache, t.index, pm.factorization.psi, pm.factorization.offset, rng, opt);
    });
    for (Grid* g : {&mean, &lower, &upper}) g->years.push_back(t.year);
    mean.values.col(static_cast<Eigen::Index>(k)) = r.mean;
    lower.values.col(static_cast<Eigen::Index>(k)) = r.lower;
    upper.values.col(static_cast<Eigen::Index>(k)) = r.upper;

    run_stage("output", [&] {
      std::ostringstream s;
      s << "draw,chain,top_analog";
      for (const auto& l : in.counts.locations) s << ',' << l.id;
      s << '\n';
      std::size_t row = 0;
      for (std::size_t ch = 0; ch < chains.size(); ++ch) {
        for (std::size_t l = 0; l < chains[ch].beta_draws.size(); ++l, ++row) {
          s << row + 1 << ',' << ch + 1 << ',' << in.counts.times[static_cast<std::size_t>(r.top_analog[row])].year;
          for (Eigen::Index i = 0; i < n_y; ++i) s << ',' << r.draws(i, static_cast<Eigen::Index>(row));
          s << '\n';
        }
      }
      const fs::path dp = target_dir(c, t.year) / "draws.csv";
      write_text_file(dp, s.str());
      a.files.push_back(dp);

      Json diag;
      diag["target_year"] = t.year;
      diag["process_noise"] = r.process_noise;
      diag["intensity_point"] = std::vector<double>(r.intensity_point.data(), r.intensity_point.data() + n_y);
      diag["intensity_noise"] = std::vector<double>(r.intensity_noise.data(), r.intensity_noise.data() + n_y);
      std::map<std::string, double> top, wmean;
      for (int idx : r.top_analog) top[std::to_string(in.counts.times[static_cast<std::size_t>(idx)].year)] += 1.0 / static_cast<double>(r.top_analog.size());
      const Eigen::VectorXd w = r.weights.colwise().mean();
      for (std::size_t i = 0; i < r.training.size(); ++i)
        wmean[std::to_string(in.counts.times[static_cast<std::size_t>(r.training[i])].year)] = w(static_cast<Eigen::Index>(i));
      diag["top_analog_share"] = top;
      diag["mean_weight"] = wmean;
      const fs::path jp = target_dir(c, t.year) / "forecast_diagnostics.json";
      write_json(jp, diag);
      a.files.push_back(jp);
      return 0;
    });
  }
  run_stage("output", [&] {
    write_grid(label_dir(c) / "forecast_mean.csv", mean);
    write_grid(label_dir(c) / "forecast_lower.csv", lower);
    write_grid(label_dir(c) / "forecast_upper.csv", upper);
    for (const char* n : {"forecast_mean.csv", "forecast_lower.csv", "forecast_upper.csv"}) a.files.push_back(label_dir(c) / n);
    return 0;
  });
  Json inputs = in.json();
  inputs["prepared"] = prepared_hashes(c, targets);
  ArtifactSet chain_files{c.output_dir, {}};
  for (const auto& t : targets)
    for (int ch = 0; ch < c.chains; ++ch) chain_files.files.push_back(chain_path(c, t.year, ch));
  inputs["chains"] = chain_files.hashes();
  return run_stage("output", [&] { return write_manifest(label_dir(c) / "manifest_forecast.json", "forecast", c, inputs, a); });
}

// Training periods the fit would use, without running the preparation.
inline std::vector<int> training_periods(const RunConfig& c, const Inputs& in, const Target& t,
                                         const std::vector<int>& excluded) {
  const TimeAlignment al = align_all(c.model.alignment, in.counts, in.forcing, t.index + 1);
  std::vector<int> ex = excluded;
  ex.erase(std::remove(ex.begin(), ex.end(), t.index), ex.end());
  return select_training(al, t.index, c.model.hyper.q_max, ex, c.model.training_mode, in.counts.n_periods());
}

inline fs::path baseline_dir(const RunConfig& c) { return c.output_dir / "baselines"; }

// cmd_baseline: climatology and persistence grids in the forecast format.
inline fs::path cmd_baseline(const RunConfig& c) {
  Inputs in = load_inputs(c);
  const auto targets = resolve_targets(c, in.counts);
  const auto ex = excluded_for(c, targets);
  const int n_y = in.counts.n_locations();
  Grid clim{in.counts.locations, {}, Eigen::MatrixXd(n_y, static_cast<Eigen::Index>(targets.size()))};
  Grid pers = clim;
  run_stage("baseline", [&] {
    for (std::size_t k = 0; k < targets.size(); ++k) {
      const auto tr = training_periods(c, in, targets[k], ex);
      clim.years.push_back(targets[k].year);
      pers.years.push_back(targets[k].year);
      clim.values.col(static_cast<Eigen::Index>(k)) = climatology(in.counts.counts, tr);
      pers.values.col(static_cast<Eigen::Index>(k)) = persistence(in.counts.counts, tr, targets[k].index);
    }
    return 0;
  });
  ArtifactSet a{c.output_dir, {baseline_dir(c) / "climatology.csv", baseline_dir(c) / "persistence.csv"}};
  return run_stage("output", [&] {
    fs::create_directories(baseline_dir(c));
    write_grid(a.files[0], clim);
    write_grid(a.files[1], pers);
    return write_manifest(baseline_dir(c) / "manifest_baseline.json", "baseline", c, in.json(), a);
  });
}

struct EvaluationRow {
  std::string model;
  int year = 0;
  Score score;
};

inline std::string format_corr(const std::optional<double>& c) { return c ? format_double(*c) : "undefined"; }

// cmd_evaluate: scores every available grid against the observed counts.
inline std::vector<EvaluationRow> cmd_evaluate(const RunConfig& c, fs::path* manifest = nullptr) {
  Inputs in = load_inputs(c);
  const auto targets = resolve_targets(c, in.counts);
  std::vector<std::pair<std::string, fs::path>> sources = {{c.run_label(), label_dir(c) / "forecast_mean.csv"},
                                                           {"climatology", baseline_dir(c) / "climatology.csv"},
                                                           {"persistence", baseline_dir(c) / "persistence.csv"}};
  std::vector<EvaluationRow> rows;
  Json inputs = in.json();
  run_stage("evaluate", [&] {
    int found = 0;
    for (const auto& [name, path] : sources) {
      if (!fs::exists(path)) continue;
      ++found;
      inputs[fs::relative(path, c.output_dir).generic_string()] = sha256_file(path);
      const Grid g = read_grid(path);
      if (g.values.rows() != in.counts.n_locations()) throw InvalidArgument(path.string() + ": site count mismatch");
      for (const auto& t : targets) {
        const auto col = std::find(g.years.begin(), g.years.end(), t.year);
        if (col == g.years.end()) throw InvalidArgument(path.string() + ": no column for " + std::to_string(t.year));
        const Eigen::VectorXd f = g.values.col(col - g.years.begin());
        rows.push_back({name, t.year, evaluate(f, in.counts.counts.col(t.index).cast<double>())});
      }
    }
    if (found == 0) throw InvalidArgument("no forecast or baseline grids under " + c.output_dir.string());
    return 0;
  });
  std::ostringstream s;
  s << "model,year,mspe,corr\n";
  for (const auto& r : rows) s << r.model << ',' << r.year << ',' << format_double(r.score.mspe) << ',' << format_corr(r.score.corr) << '\n';
  ArtifactSet a{c.output_dir, {label_dir(c) / "scores.csv"}};
  fs::path m = run_stage("output", [&] {
    write_text_file(a.files[0], s.str());
    return write_manifest(label_dir(c) / "manifest_evaluate.json", "evaluate", c, inputs, a);
  });
  if (manifest) *manifest = m;
  return rows;
}

// cmd_simulate: synthetic counts and forcing at the configured input paths,
// truth record under the output directory.
inline fs::path cmd_simulate(const RunConfig& c) {
  SyntheticData d = run_stage("simulate", [&] { return generate_synthetic(c.synthetic); });
  return run_stage("output", [&] {
    if (c.counts.empty() || c.forcing.empty()) throw InvalidArgument("config must name counts and forcing output paths");
    fs::create_directories(c.counts.parent_path().empty() ? fs::path(".") : c.counts.parent_path());
    fs::create_directories(c.forcing.parent_path().empty() ? fs::path(".") : c.forcing.parent_path());
    write_count_field(c.counts, d.counts);
    write_forcing_field(c.forcing, d.forcing);
    Json truth;
    truth["system"] = to_string(c.synthetic.system);
    truth["phase"] = d.truth.phase;
    truth["exact_analog"] = d.truth.exact_analog;
    truth["planted_q"] = d.truth.planted_q;
    std::vector<std::vector<double>> inten;
    for (Eigen::Index i = 0; i < d.truth.intensity.rows(); ++i) {
      inten.emplace_back();
      for (Eigen::Index t = 0; t < d.truth.intensity.cols(); ++t) inten.back().push_back(d.truth.intensity(i, t));
    }
    truth["intensity"] = inten;
    const fs::path tp = c.output_dir / "synthetic_truth.json";
    write_json(tp, truth);
    ArtifactSet a{c.output_dir, {tp}};
    Json outputs{{"counts", sha256_file(c.counts)}, {"forcing", sha256_file(c.forcing)}};
    Json inputs{{"generated", outputs}};
    return write_manifest(c.output_dir / "manifest_simulate.json", "simulate", c, inputs, a);
  });
}

}  // namespace hba
