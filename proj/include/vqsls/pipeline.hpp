#pragma once

// Run configuration, model construction, checkpoints and the stage
// functions behind the command-line tool.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "vqsls/chem.hpp"
#include "vqsls/mps.hpp"
#include "vqsls/noise.hpp"
#include "vqsls/optimizer.hpp"
#include "vqsls/spin.hpp"
#include "vqsls/sws.hpp"

namespace vqsls {

using json = nlohmann::json;

/// Invalid or unreadable run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A stage was started before the checkpoint it depends on exists.
class PrerequisiteError : public Error {
 public:
  PrerequisiteError(const std::string& stage, const std::string& what) : Error(what), stage_(stage) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

// ---- configuration ------------------------------------------------------------

struct IsingConfig {
  int n_sites = 12;
  double j1 = 1.0, j2 = 0.9, ht = 0.4;
  GeneratorSign sign = GeneratorSign::minus;
  bool periodic = true;
};

struct MoleculeConfig {
  std::string fcidump;
  int n_doubles = -1;
  std::size_t n_cut = kUnbounded, n_max = kUnbounded;  ///< surrogate truncation unless set there
};

struct SurrogateConfig {
  std::string type = "exact";  ///< mps | sws | exact
  int chi = 4;
  std::size_t n_cut = kUnbounded, n_max = kUnbounded;
  std::vector<double> initial_params;  ///< empty: problem default
  double grad_tol = 1e-6;
  int max_iter = 0;
};

struct HighLevelConfig {
  std::string type = "exact";  ///< exact | statevector | sws-untruncated | mps
  int chi = 64;
};

struct LineSearchConfig {
  int M = 7;
  int degree = 4;
  double drop_tol = 1e-3;
  std::optional<int> keep_top;
  int max_iters = 10;
  std::optional<double> fd_step;
  std::string target_kind = "energy_error";  ///< energy_error | param_error
  std::optional<double> target;              ///< default: gaussian sigma
  bool sequential = false;
  int bootstrap = 200;
  double energy_tol = 1e-10;
  double w_min = 1e-3, w_max = 1.0;
  int n_widths = 12;
  double de_min = 1e-6, de_max = 1e-1;
  int n_noise = 10;
  int resamples = 200;
};

struct PowellConfig {
  bool enabled = true;
  std::optional<double> ftol;  ///< default 2 * window noise level
  std::optional<double> xtol;  ///< default smallest window parameter error
  int max_cycles = 200;
};

struct ShotsConfig {
  std::vector<double> epsilons{1e-3, 1e-4, 1e-5};
  std::string variance = "exact";  ///< exact | linear
};

struct NoiseConfig {
  std::string type = "none";  ///< none | gaussian | shots | depolarizing
  double sigma = 0.0;
  std::optional<long long> n_shots;
  std::optional<double> epsilon;  ///< shots: n_shots from the estimate at this error
  bool covariances = false;
  double p = 0.0;
  bool inverse_rescale = false;
};

struct RunConfig {
  std::string problem_type = "ising";
  IsingConfig ising;
  MoleculeConfig molecule;
  SurrogateConfig surrogate;
  HighLevelConfig highlevel;
  NoiseConfig noise;
  LineSearchConfig linesearch;
  PowellConfig powell;
  ShotsConfig shots;
  std::uint64_t seed = 1;
  std::string output = "vqsls_out";
  std::filesystem::path base_dir;  ///< directory of the config file; relative paths resolve here
};

namespace detail {

// Typed access to one JSON object that rejects keys never read.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  template <class T>
  T get(const std::string& key, T fallback) {
    used_.insert(key);
    if (!has(key)) return fallback;
    return convert<T>(key);
  }

  template <class T>
  T required(const std::string& key) {
    used_.insert(key);
    if (!has(key)) throw ConfigError(path_ + "." + key + ": required");
    return convert<T>(key);
  }

  template <class T>
  std::optional<T> optional(const std::string& key) {
    used_.insert(key);
    if (!has(key)) return std::nullopt;
    return convert<T>(key);
  }

  Section sub(const std::string& key) {
    used_.insert(key);
    if (!has(key)) return Section(empty(), path_ + "." + key);
    return Section(j_.at(key), path_ + "." + key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!used_.count(k)) throw ConfigError(path_ + "." + k + ": unknown key");
  }

 private:
  static const json& empty() {
    static const json e = json::object();
    return e;
  }

  template <class T>
  T convert(const std::string& key) const {
    const json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError("");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError("");
      }
      return v.get<T>();
    } catch (const std::exception&) {
      throw ConfigError(path_ + "." + key + ": wrong type");
    }
  }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

inline std::size_t size_or_unbounded(Section& s, const std::string& key) {
  const auto v = s.optional<long long>(key);
  if (!v) return kUnbounded;
  require(*v > 0, key + ": must be positive");
  return static_cast<std::size_t>(*v);
}

inline json size_json(std::size_t v) { return v == kUnbounded ? json(nullptr) : json(v); }

}  // namespace detail

/// Parses and validates a configuration document. Unknown keys, wrong types
/// and inconsistent choices raise ConfigError.
inline RunConfig parse_config(const json& doc, const std::filesystem::path& base_dir = {}) {
  RunConfig c;
  c.base_dir = base_dir;
  detail::Section root(doc, "config");

  auto problem = root.sub("problem");
  c.problem_type = problem.required<std::string>("type");
  if (c.problem_type == "ising") {
    c.ising.n_sites = problem.required<int>("n_sites");
    c.ising.j1 = problem.get("j1", c.ising.j1);
    c.ising.j2 = problem.get("j2", c.ising.j2);
    c.ising.ht = problem.get("ht", c.ising.ht);
    const auto sign = problem.get<std::string>("sign", "minus");
    detail::require(sign == "minus" || sign == "plus", "problem.sign: expected minus or plus");
    c.ising.sign = sign == "minus" ? GeneratorSign::minus : GeneratorSign::plus;
    c.ising.periodic = problem.get("periodic", true);
    detail::require(c.ising.n_sites >= 2 && c.ising.n_sites % 2 == 0 && c.ising.n_sites <= 64,
                    "problem.n_sites: must be even and in [2, 64]");
  } else if (c.problem_type == "molecule") {
    c.molecule.fcidump = problem.required<std::string>("fcidump");
    c.molecule.n_doubles = problem.get("n_doubles", -1);
    c.molecule.n_cut = detail::size_or_unbounded(problem, "n_cut");
    c.molecule.n_max = detail::size_or_unbounded(problem, "n_max");
  } else {
    throw ConfigError("problem.type: expected ising or molecule");
  }
  problem.finish();

  auto sur = root.sub("surrogate");
  c.surrogate.type = sur.get<std::string>("type", c.problem_type == "ising" ? "mps" : "sws");
  c.surrogate.chi = sur.get("chi", c.surrogate.chi);
  c.surrogate.n_cut = detail::size_or_unbounded(sur, "n_cut");
  c.surrogate.n_max = detail::size_or_unbounded(sur, "n_max");
  if (c.surrogate.n_cut == kUnbounded) c.surrogate.n_cut = c.molecule.n_cut;
  if (c.surrogate.n_max == kUnbounded) c.surrogate.n_max = c.molecule.n_max;
  c.surrogate.initial_params = sur.get("initial_params", std::vector<double>{});
  c.surrogate.grad_tol = sur.get("grad_tol", c.surrogate.grad_tol);
  c.surrogate.max_iter = sur.get("max_iter", 0);
  sur.finish();
  const bool ising = c.problem_type == "ising";
  if (ising)
    detail::require(c.surrogate.type == "mps" || c.surrogate.type == "exact", "surrogate.type: ising allows mps or exact");
  else
    detail::require(c.surrogate.type == "sws" || c.surrogate.type == "exact", "surrogate.type: molecule allows sws or exact");
  detail::require(c.surrogate.chi >= 1, "surrogate.chi: must be positive");
  detail::require(c.surrogate.n_cut <= c.surrogate.n_max, "surrogate: n_cut must not exceed n_max");
  detail::require(c.surrogate.grad_tol > 0.0, "surrogate.grad_tol: must be positive");
  if (ising && c.surrogate.type == "exact")
    detail::require(c.ising.n_sites <= StateVector::kMaxQubits, "surrogate.type exact: too many sites for a statevector");
  if (ising && !c.surrogate.initial_params.empty())
    detail::require(c.surrogate.initial_params.size() == EntanglerAnsatz::kParams,
                    "surrogate.initial_params: the spin ansatz has 4 parameters");

  auto hl = root.sub("highlevel");
  c.highlevel.type = hl.get<std::string>("type", "exact");
  c.highlevel.chi = hl.get("chi", c.highlevel.chi);
  hl.finish();
  if (ising) {
    detail::require(c.highlevel.type == "exact" || c.highlevel.type == "statevector" || c.highlevel.type == "mps",
                    "highlevel.type: ising allows exact, statevector or mps");
    if (c.highlevel.type != "mps")
      detail::require(c.ising.n_sites <= StateVector::kMaxQubits, "highlevel: too many sites for a statevector; use mps");
  } else {
    detail::require(c.highlevel.type == "exact" || c.highlevel.type == "statevector" || c.highlevel.type == "sws-untruncated",
                    "highlevel.type: molecule allows exact, statevector or sws-untruncated");
  }
  detail::require(c.highlevel.chi >= 1, "highlevel.chi: must be positive");

  auto nz = root.sub("noise");
  c.noise.type = nz.get<std::string>("type", "none");
  c.noise.sigma = nz.get("sigma", 0.0);
  c.noise.n_shots = nz.optional<long long>("n_shots");
  c.noise.epsilon = nz.optional<double>("epsilon");
  c.noise.covariances = nz.get("covariances", false);
  c.noise.p = nz.get("p", 0.0);
  c.noise.inverse_rescale = nz.get("inverse_rescale", false);
  nz.finish();
  if (c.noise.type == "gaussian") {
    detail::require(c.noise.sigma >= 0.0, "noise.sigma: must be >= 0");
  } else if (c.noise.type == "shots") {
    detail::require(c.noise.n_shots.has_value() != c.noise.epsilon.has_value(), "noise: give exactly one of n_shots and epsilon");
    if (c.noise.n_shots) detail::require(*c.noise.n_shots >= 1, "noise.n_shots: must be >= 1");
    if (c.noise.epsilon) detail::require(*c.noise.epsilon > 0.0, "noise.epsilon: must be positive");
  } else if (c.noise.type == "depolarizing") {
    detail::require(c.noise.p >= 0.0 && c.noise.p < 1.0, "noise.p: must be in [0, 1)");
  } else {
    detail::require(c.noise.type == "none", "noise.type: expected none, gaussian, shots or depolarizing");
  }

  auto ls = root.sub("linesearch");
  auto& l = c.linesearch;
  l.M = ls.get("M", l.M);
  l.degree = ls.get("degree", l.degree);
  l.drop_tol = ls.get("drop_tol", l.drop_tol);
  l.keep_top = ls.optional<int>("keep_top");
  l.max_iters = ls.get("max_iters", l.max_iters);
  l.fd_step = ls.optional<double>("fd_step");
  if (ls.has("target")) {
    auto t = ls.sub("target");
    const auto de = t.optional<double>("energy_error");
    const auto dt = t.optional<double>("param_error");
    t.finish();
    detail::require(de.has_value() != dt.has_value(), "linesearch.target: give exactly one of energy_error and param_error");
    l.target_kind = de ? "energy_error" : "param_error";
    l.target = de ? de : dt;
    detail::require(*l.target > 0.0, "linesearch.target: must be positive");
  } else {
    ls.sub("target");
    if (c.noise.type == "gaussian" && c.noise.sigma > 0.0) l.target = c.noise.sigma;
    else if (c.noise.type == "none" || c.noise.type == "depolarizing" || c.noise.type == "gaussian") l.target = l.de_min;
    else throw ConfigError("linesearch.target: required for shot noise");
  }
  l.sequential = ls.get("sequential", l.sequential);
  l.bootstrap = ls.get("bootstrap", l.bootstrap);
  l.energy_tol = ls.get("energy_tol", l.energy_tol);
  l.w_min = ls.get("w_min", l.w_min);
  l.w_max = ls.get("w_max", l.w_max);
  l.n_widths = ls.get("n_widths", l.n_widths);
  l.de_min = ls.get("de_min", l.de_min);
  l.de_max = ls.get("de_max", l.de_max);
  l.n_noise = ls.get("n_noise", l.n_noise);
  l.resamples = ls.get("resamples", l.resamples);
  ls.finish();
  detail::require(l.max_iters >= 1, "linesearch.max_iters: must be >= 1");
  detail::require(l.drop_tol >= 0.0, "linesearch.drop_tol: must be >= 0");
  detail::require(!l.keep_top || *l.keep_top >= 1, "linesearch.keep_top: must be positive");
  detail::require(!l.fd_step || *l.fd_step > 0.0, "linesearch.fd_step: must be positive");
  detail::require(l.bootstrap >= 2, "linesearch.bootstrap: must be >= 2");
  detail::require(l.energy_tol >= 0.0, "linesearch.energy_tol: must be >= 0");
  try {
    WindowOptions{l.M, l.degree, l.w_min, l.w_max, l.n_widths, l.de_min, l.de_max, l.n_noise, l.resamples}.validate();
  } catch (const DomainError& e) {
    throw ConfigError(std::string("linesearch: ") + e.what());
  }

  auto pw = root.sub("powell");
  c.powell.enabled = pw.get("enabled", true);
  c.powell.ftol = pw.optional<double>("ftol");
  c.powell.xtol = pw.optional<double>("xtol");
  c.powell.max_cycles = pw.get("max_cycles", c.powell.max_cycles);
  pw.finish();
  detail::require(c.powell.max_cycles >= 1, "powell.max_cycles: must be >= 1");
  detail::require(!c.powell.ftol || *c.powell.ftol >= 0.0, "powell.ftol: must be >= 0");
  detail::require(!c.powell.xtol || *c.powell.xtol > 0.0, "powell.xtol: must be positive");

  auto sh = root.sub("shots");
  c.shots.epsilons = sh.get("epsilons", c.shots.epsilons);
  c.shots.variance = sh.get<std::string>("variance", "exact");
  sh.finish();
  detail::require(!c.shots.epsilons.empty(), "shots.epsilons: must not be empty");
  for (double e : c.shots.epsilons) detail::require(e > 0.0, "shots.epsilons: must be positive");
  detail::require(c.shots.variance == "exact" || c.shots.variance == "linear", "shots.variance: expected exact or linear");

  const auto seed = root.get<long long>("seed", 1);
  detail::require(seed >= 0, "seed: must be >= 0");
  c.seed = static_cast<std::uint64_t>(seed);
  c.output = root.get<std::string>("output", c.output);
  root.finish();
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(doc, path.parent_path());
}

/// Every setting with defaults filled in.
inline json resolved_config(const RunConfig& c) {
  json j;
  if (c.problem_type == "ising") {
    j["problem"] = {{"type", "ising"},       {"n_sites", c.ising.n_sites},
                    {"j1", c.ising.j1},      {"j2", c.ising.j2},
                    {"ht", c.ising.ht},      {"sign", c.ising.sign == GeneratorSign::minus ? "minus" : "plus"},
                    {"periodic", c.ising.periodic}};
  } else {
    j["problem"] = {{"type", "molecule"},
                    {"fcidump", c.molecule.fcidump},
                    {"n_doubles", c.molecule.n_doubles},
                    {"n_cut", detail::size_json(c.molecule.n_cut)},
                    {"n_max", detail::size_json(c.molecule.n_max)}};
  }
  j["surrogate"] = {{"type", c.surrogate.type},
                    {"chi", c.surrogate.chi},
                    {"n_cut", detail::size_json(c.surrogate.n_cut)},
                    {"n_max", detail::size_json(c.surrogate.n_max)},
                    {"initial_params", c.surrogate.initial_params},
                    {"grad_tol", c.surrogate.grad_tol},
                    {"max_iter", c.surrogate.max_iter}};
  j["highlevel"] = {{"type", c.highlevel.type}, {"chi", c.highlevel.chi}};
  j["noise"] = {{"type", c.noise.type},
                {"sigma", c.noise.sigma},
                {"n_shots", c.noise.n_shots ? json(*c.noise.n_shots) : json(nullptr)},
                {"epsilon", c.noise.epsilon ? json(*c.noise.epsilon) : json(nullptr)},
                {"covariances", c.noise.covariances},
                {"p", c.noise.p},
                {"inverse_rescale", c.noise.inverse_rescale}};
  const auto& l = c.linesearch;
  j["linesearch"] = {{"M", l.M},
                     {"degree", l.degree},
                     {"drop_tol", l.drop_tol},
                     {"keep_top", l.keep_top ? json(*l.keep_top) : json(nullptr)},
                     {"max_iters", l.max_iters},
                     {"fd_step", l.fd_step ? json(*l.fd_step) : json(nullptr)},
                     {"target", {{l.target_kind, *l.target}}},
                     {"sequential", l.sequential},
                     {"bootstrap", l.bootstrap},
                     {"energy_tol", l.energy_tol},
                     {"w_min", l.w_min},
                     {"w_max", l.w_max},
                     {"n_widths", l.n_widths},
                     {"de_min", l.de_min},
                     {"de_max", l.de_max},
                     {"n_noise", l.n_noise},
                     {"resamples", l.resamples}};
  j["powell"] = {{"enabled", c.powell.enabled},
                 {"ftol", c.powell.ftol ? json(*c.powell.ftol) : json(nullptr)},
                 {"xtol", c.powell.xtol ? json(*c.powell.xtol) : json(nullptr)},
                 {"max_cycles", c.powell.max_cycles}};
  j["shots"] = {{"epsilons", c.shots.epsilons}, {"variance", c.shots.variance}};
  j["seed"] = c.seed;
  j["output"] = c.output;
  return j;
}

/// FNV-1a of the resolved configuration minus the output location; stored in
/// every checkpoint so stale files from another setup are not reused.
inline std::string config_hash(const RunConfig& c) {
  json j = resolved_config(c);
  j.erase("output");
  const std::string s = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---- problem and models -----------------------------------------------------

struct Problem {
  bool ising = true;
  EntanglerAnsatz spin_ansatz;
  MolecularIntegrals integrals;
  UccAnsatz ucc;  ///< untruncated
  PauliHamiltonian hamiltonian;
  Vector initial_params;
};

inline Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

/// Spin ansatz start when none is configured: all angles 0.1 (the all-zero
/// point is a stationary point of the ansatz).
inline constexpr double kSpinInitialAngle = 0.1;

inline Problem build_problem(const RunConfig& c) {
  Problem p;
  if (c.problem_type == "ising") {
    p.ising = true;
    p.spin_ansatz = {c.ising.n_sites, c.ising.sign, c.ising.periodic};
    p.hamiltonian = build_ising_hamiltonian(c.ising.n_sites, c.ising.j1, c.ising.j2, c.ising.ht);
    p.initial_params = c.surrogate.initial_params.empty() ? Vector::Constant(EntanglerAnsatz::kParams, kSpinInitialAngle)
                                                           : to_vector(c.surrogate.initial_params);
    return p;
  }
  p.ising = false;
  std::filesystem::path path(c.molecule.fcidump);
  if (path.is_relative() && !c.base_dir.empty()) path = c.base_dir / path;
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open FCIDUMP " + path.string());
  try {
    p.integrals = parse_fcidump(in);
    p.ucc = build_ucc_ansatz(p.integrals, c.molecule.n_doubles);
  } catch (const ParseError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  p.hamiltonian = qubit_hamiltonian(p.integrals);
  if (!c.surrogate.initial_params.empty()) {
    if (c.surrogate.initial_params.size() != p.ucc.n_params())
      throw ConfigError("surrogate.initial_params: expected " + std::to_string(p.ucc.n_params()) + " values");
    p.initial_params = to_vector(c.surrogate.initial_params);
  } else {
    p.initial_params = to_vector(p.ucc.params);
  }
  return p;
}

/// Dense qubit statevector of a sparse wavefunction; qubit order matches the
/// Jordan-Wigner Hamiltonian.
inline StateVector to_statevector(const SparseWavefunction& psi) {
  StateVector v(2 * psi.n_orb());
  auto& a = v.amplitudes();
  a[0] = 0.0;
  for (const auto& [d, c] : psi.amplitudes()) a[d.bits(psi.n_orb())] = c;
  return v;
}

inline Cost surrogate_cost(const RunConfig& c, const Problem& p) {
  if (p.ising) {
    const auto a = p.spin_ansatz;
    const auto h = p.hamiltonian;
    if (c.surrogate.type == "mps") {
      const int chi = c.surrogate.chi;
      return [a, h, chi](const Vector& x) { return mps_ansatz_energy(a, x, chi, h); };
    }
    return [a, h](const Vector& x) { return expectation(prepare_ansatz_state(a, x), h); };
  }
  UccAnsatz a = p.ucc;
  if (c.surrogate.type == "sws") {
    a.n_cut = c.surrogate.n_cut;
    a.n_max = c.surrogate.n_max;
  }
  const auto m = p.integrals;
  return [a, m](const Vector& x) { return energy(prepare_state(a, x), m); };
}

inline EnergyModel highlevel_model(const RunConfig& c, const Problem& p) {
  EnergyModel model;
  model.hamiltonian = p.hamiltonian;
  auto pauli_values = [](const auto& state, const std::vector<PauliString>& ps) {
    std::vector<std::complex<double>> out;
    out.reserve(ps.size());
    for (const auto& s : ps) out.push_back(state.pauli_expectation(s));
    return out;
  };
  if (p.ising) {
    const auto a = p.spin_ansatz;
    const auto h = p.hamiltonian;
    if (c.highlevel.type == "mps") {
      const int chi = c.highlevel.chi;
      model.energy = [a, h, chi](const Vector& x) { return mps_ansatz_energy(a, x, chi, h); };
      model.expectations = [a, chi, pauli_values](const Vector& x, const std::vector<PauliString>& ps) {
        return pauli_values(prepare_mps_ansatz_state(a, x, chi), ps);
      };
    } else {
      model.energy = [a, h](const Vector& x) { return expectation(prepare_ansatz_state(a, x), h); };
      model.expectations = [a, pauli_values](const Vector& x, const std::vector<PauliString>& ps) {
        return pauli_values(prepare_ansatz_state(a, x), ps);
      };
    }
    return model;
  }
  const auto a = p.ucc;
  const auto m = p.integrals;
  model.energy = [a, m](const Vector& x) { return energy(prepare_state(a, x), m); };
  model.expectations = [a, pauli_values](const Vector& x, const std::vector<PauliString>& ps) {
    return pauli_values(to_statevector(prepare_state(a, x)), ps);
  };
  return model;
}

/// Exact reference: FCI for molecules, the dense ground energy for spin
/// chains up to 16 sites.
inline std::optional<double> oracle_energy(const Problem& p) {
  try {
    if (p.ising) {
      if (p.spin_ansatz.n_sites > 16) return std::nullopt;
      return exact_ground_energy(p.hamiltonian);
    }
    return fci_energy(p.integrals);
  } catch (const ResourceError&) {
    return std::nullopt;
  }
}

// ---- checkpoints ----------------------------------------------------------------

inline constexpr int kSchemaVersion = 1;

inline json vec_json(const Vector& v) { return to_std(v); }
inline Vector json_vec(const json& j) { return to_vector(j.get<std::vector<double>>()); }

inline json mat_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(to_std(m.row(r).transpose()));
  return rows;
}

inline Matrix json_mat(const json& j, Eigen::Index cols) {
  Matrix m(static_cast<Eigen::Index>(j.size()), cols);
  for (std::size_t r = 0; r < j.size(); ++r) m.row(static_cast<Eigen::Index>(r)) = json_vec(j[r]).transpose();
  return m;
}

inline json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

struct SurrogateCheckpoint {
  Vector initial;
  Vector params;
  double energy = 0.0;
  double gradient_norm = 0.0;
  int iterations = 0;  ///< -1 when the minimizer stopped short of the gradient tolerance
  bool converged = true;
};

inline json to_json(const SurrogateCheckpoint& s) {
  return {{"initial_params", vec_json(s.initial)},
          {"params", vec_json(s.params)},
          {"energy", s.energy},
          {"gradient_norm", s.gradient_norm},
          {"iterations", s.iterations},
          {"converged", s.converged}};
}

inline SurrogateCheckpoint surrogate_from_json(const json& j) {
  return {json_vec(j.at("initial_params")), json_vec(j.at("params")), j.at("energy").get<double>(),
          j.at("gradient_norm").get<double>(), j.at("iterations").get<int>(), j.value("converged", true)};
}

inline json to_json(const HessianResult& h, const ConjugateDirections& d) {
  json dropped = json::array();
  for (const auto& x : d.dropped)
    dropped.push_back({{"index", x.index}, {"eigenvalue", x.eigenvalue}, {"reason", to_string(x.reason)}});
  return {{"matrix", mat_json(h.matrix)},
          {"eigenvalues", vec_json(h.eigenvalues)},
          {"eigenvectors", mat_json(h.eigenvectors)},
          {"fd_step", h.fd_step},
          {"directions",
           {{"kept_indices", d.kept_indices},
            {"kept_eigenvalues", vec_json(d.kept_eigenvalues)},
            {"vectors", mat_json(d.directions)},
            {"dropped", dropped}}}};
}

inline std::pair<HessianResult, ConjugateDirections> hessian_from_json(const json& j) {
  HessianResult h;
  h.eigenvalues = json_vec(j.at("eigenvalues"));
  const auto n = h.eigenvalues.size();
  h.matrix = json_mat(j.at("matrix"), n);
  h.eigenvectors = json_mat(j.at("eigenvectors"), n);
  h.fd_step = j.at("fd_step").get<double>();
  ConjugateDirections d;
  const auto& dj = j.at("directions");
  d.kept_indices = dj.at("kept_indices").get<std::vector<int>>();
  d.kept_eigenvalues = json_vec(dj.at("kept_eigenvalues"));
  d.directions = json_mat(dj.at("vectors"), static_cast<Eigen::Index>(d.kept_indices.size()));
  for (const auto& x : dj.at("dropped")) {
    const auto r = x.at("reason").get<std::string>();
    d.dropped.push_back({x.at("index").get<int>(), x.at("eigenvalue").get<double>(),
                         r == "negative"            ? DropReason::negative
                         : r == "truncated-by-rank" ? DropReason::truncated_by_rank
                                                    : DropReason::near_zero});
  }
  return {h, d};
}

inline json to_json(const SearchWindow& w) {
  return {{"half_widths", w.half_widths},
          {"M", w.M},
          {"degree", w.degree},
          {"delta_e", w.delta_e},
          {"delta_theta", w.delta_theta}};
}

inline SearchWindow window_from_json(const json& j) {
  SearchWindow w;
  w.half_widths = j.at("half_widths").get<std::vector<double>>();
  w.M = j.at("M").get<int>();
  w.degree = j.at("degree").get<int>();
  w.delta_e = j.at("delta_e").get<double>();
  w.delta_theta = j.at("delta_theta").get<std::vector<double>>();
  return w;
}

inline json to_json(const IterationRecord& r) {
  json fits = json::array();
  for (const auto& f : r.fits)
    fits.push_back({{"offsets", f.offsets},
                    {"energies", f.energies},
                    {"sigmas", f.sigmas},
                    {"x_min", f.x_min},
                    {"sigma_xmin", f.sigma_xmin},
                    {"e_min", f.e_min},
                    {"sigma_emin", f.sigma_emin},
                    {"e_center", f.e_center},
                    {"edge", f.edge}});
  return {{"center", vec_json(r.center)},
          {"new_center", vec_json(r.new_center)},
          {"fits", fits},
          {"center_energy", r.center_energy},
          {"center_sigma", r.center_sigma},
          {"energy", r.energy},
          {"sigma", r.sigma},
          {"calls_before", r.calls_before},
          {"calls_after", r.calls_after},
          {"reference_energy", opt_json(r.reference_energy)}};
}

inline IterationRecord iteration_from_json(const json& j) {
  IterationRecord r;
  r.center = json_vec(j.at("center"));
  r.new_center = json_vec(j.at("new_center"));
  for (const auto& f : j.at("fits")) {
    DirectionFit d;
    d.offsets = f.at("offsets").get<std::vector<double>>();
    d.energies = f.at("energies").get<std::vector<double>>();
    d.sigmas = f.at("sigmas").get<std::vector<double>>();
    d.x_min = f.at("x_min").get<double>();
    d.sigma_xmin = f.at("sigma_xmin").get<double>();
    d.e_min = f.at("e_min").get<double>();
    d.sigma_emin = f.at("sigma_emin").get<double>();
    d.e_center = f.at("e_center").get<double>();
    d.edge = f.at("edge").get<bool>();
    r.fits.push_back(std::move(d));
  }
  r.center_energy = j.at("center_energy").get<double>();
  r.center_sigma = j.at("center_sigma").get<double>();
  r.energy = j.at("energy").get<double>();
  r.sigma = j.at("sigma").get<double>();
  r.calls_before = j.at("calls_before").get<std::uint64_t>();
  r.calls_after = j.at("calls_after").get<std::uint64_t>();
  if (!j.at("reference_energy").is_null()) r.reference_energy = j.at("reference_energy").get<double>();
  return r;
}

inline json to_json(const LineSearchRun& run) {
  json its = json::array();
  for (const auto& r : run.iterations) its.push_back(to_json(r));
  return {{"iterations", its}, {"converged", run.converged}};
}

inline LineSearchRun run_from_json(const json& j) {
  LineSearchRun run;
  for (const auto& r : j.at("iterations")) run.iterations.push_back(iteration_from_json(r));
  run.converged = j.at("converged").get<bool>();
  return run;
}

// ---- output files -------------------------------------------------------------------

inline std::string csv_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Writes through a temporary file and a rename so readers never see a
/// half-written file.
inline void write_file(const std::filesystem::path& path, const std::string& content) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw ResourceError("cannot write " + tmp);
    out << content;
    if (!out) throw ResourceError("cannot write " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Workspace {
 public:
  Workspace(RunConfig config, std::filesystem::path out_dir, int jobs)
      : config_(std::move(config)), dir_(std::move(out_dir)), jobs_(jobs), hash_(config_hash(config_)) {
    std::filesystem::create_directories(dir_);
  }

  const RunConfig& config() const noexcept { return config_; }
  const std::filesystem::path& dir() const noexcept { return dir_; }
  int jobs() const noexcept { return jobs_; }
  const std::string& hash() const noexcept { return hash_; }

  const Problem& problem() {
    if (!problem_) problem_ = build_problem(config_);
    return *problem_;
  }

  void write_json(const std::string& name, const std::string& stage, json body) const {
    body["schema_version"] = kSchemaVersion;
    body["stage"] = stage;
    body["config_hash"] = hash_;
    write_file(dir_ / name, body.dump(2) + "\n");
  }

  void write_text(const std::string& name, const std::string& content) const { write_file(dir_ / name, content); }

  bool has(const std::string& name) const { return std::filesystem::exists(dir_ / name); }

  /// Loads a checkpoint written by `stage`; absent or stale files raise
  /// PrerequisiteError naming the stage.
  json read_json(const std::string& name, const std::string& stage) const {
    const auto path = dir_ / name;
    if (!std::filesystem::exists(path))
      throw PrerequisiteError(stage, "missing " + name + "; run the '" + stage + "' stage first");
    json j;
    try {
      j = json::parse(read_file(path));
    } catch (const json::parse_error&) {
      throw PrerequisiteError(stage, name + " is not valid JSON; rerun the '" + stage + "' stage");
    }
    if (j.value("schema_version", 0) != kSchemaVersion)
      throw PrerequisiteError(stage, name + " has an unsupported schema version");
    if (j.value("config_hash", std::string()) != hash_)
      throw PrerequisiteError(stage, name + " was produced by a different configuration; rerun the '" + stage + "' stage");
    return j;
  }

  std::optional<json> try_read_json(const std::string& name, const std::string& stage) const {
    if (!has(name)) return std::nullopt;
    try {
      return read_json(name, stage);
    } catch (const PrerequisiteError&) {
      return std::nullopt;
    }
  }

 private:
  RunConfig config_;
  std::filesystem::path dir_;
  int jobs_;
  std::string hash_;
  std::optional<Problem> problem_;
};

// ---- stages -------------------------------------------------------------------------

inline std::uint64_t stage_seed(const RunConfig& c, std::uint64_t stage) { return stream_seed(c.seed, stage); }

inline NoiseSpec make_noise(const RunConfig& c, const Problem& p, const Vector& reference_params) {
  const auto& n = c.noise;
  if (n.type == "gaussian") return GaussianNoise{n.sigma};
  if (n.type == "depolarizing") return DepolarizingNoise{n.p, n.inverse_rescale};
  if (n.type == "shots") {
    const auto grouping = sorted_insertion(p.hamiltonian);
    long long shots = 0;
    if (n.n_shots) {
      shots = *n.n_shots;
    } else {
      const auto model = highlevel_model(c, p);
      const auto values = model.expectations(reference_params, [&] {
        std::vector<PauliString> s;
        for (const auto& t : p.hamiltonian.terms()) s.push_back(t.string);
        return s;
      }());
      std::vector<double> re;
      for (const auto& v : values) re.push_back(v.real());
      const auto est = estimate_required_shots(p.hamiltonian, re, *n.epsilon);
      shots = std::max(1LL, std::llround(est.n_shots));
    }
    return ShotNoise{shots, grouping, n.covariances};
  }
  return NoNoise{};
}

inline SurrogateCheckpoint stage_surrogate(Workspace& ws) {
  const auto& c = ws.config();
  const auto& p = ws.problem();
  const auto cost = surrogate_cost(c, p);
  const MinimizeOptions opts{c.surrogate.grad_tol, c.surrogate.max_iter, 1e-6};
  MinimizeResult r;
  bool converged = true;
  try {
    r = surrogate_minimize(cost, p.initial_params, opts);
  } catch (const NonConvergenceError& e) {
    // truncated surrogates can have kinks; the best point is still a usable start
    log_message(LogLevel::warn, std::string(e.what()) + "; continuing from the best point");
    r = {e.best_point(), e.best_value(), detail::fd_gradient(cost, e.best_point(), opts.fd_step).lpNorm<Eigen::Infinity>(), -1};
    converged = false;
  }
  const Vector x = p.ising ? EntanglerAnsatz::canonical(r.x) : r.x;
  SurrogateCheckpoint s{p.initial_params, x, r.value, r.gradient_norm, r.iterations, converged};
  ws.write_json("surrogate.json", "surrogate", to_json(s));
  return s;
}

inline std::pair<HessianResult, ConjugateDirections> stage_hessian(Workspace& ws) {
  const auto& c = ws.config();
  const auto s = surrogate_from_json(ws.read_json("surrogate.json", "surrogate"));
  const double step = c.linesearch.fd_step ? *c.linesearch.fd_step : default_fd_step(s.params);
  const auto h = finite_difference_hessian(surrogate_cost(c, ws.problem()), s.params, step, ws.jobs());
  const auto d = select_directions(h, c.linesearch.drop_tol, c.linesearch.keep_top);
  ws.write_json("hessian.json", "hessian", to_json(h, d));
  return {h, d};
}

inline SearchWindow stage_windows(Workspace& ws) {
  const auto& c = ws.config();
  const auto s = surrogate_from_json(ws.read_json("surrogate.json", "surrogate"));
  const auto [h, d] = hessian_from_json(ws.read_json("hessian.json", "hessian"));
  const auto& l = c.linesearch;
  WindowOptions o{l.M, l.degree, l.w_min, l.w_max, l.n_widths, l.de_min, l.de_max, l.n_noise, l.resamples,
                  stage_seed(c, 3), ws.jobs()};
  const WindowTarget target{l.target_kind == "energy_error" ? WindowTarget::Kind::energy_error : WindowTarget::Kind::param_error,
                            *l.target};
  const auto w = optimize_windows(surrogate_cost(c, ws.problem()), s.params, d, target, o);
  ws.write_json("windows.json", "windows", to_json(w));
  return w;
}

inline std::string history_csv(const LineSearchRun& run) {
  std::string out = "iteration,n_calls,energy,sigma\n";
  for (std::size_t k = 0; k < run.iterations.size(); ++k) {
    const auto& r = run.iterations[k];
    out += std::to_string(k + 1) + "," + std::to_string(r.calls_after) + "," + csv_number(r.energy) + "," +
           csv_number(r.sigma) + "\n";
  }
  return out;
}

// Keeps the rows of an existing evaluation log below `first_call`, then
// appends the new entries.
inline std::string merged_log(const Workspace& ws, const std::string& name, std::uint64_t first_call,
                              const CountedEvaluator& ev) {
  std::ostringstream fresh;
  ev.write_log_csv(fresh);
  if (first_call == 0 || !ws.has(name)) return fresh.str();
  std::istringstream old(read_file(ws.dir() / name));
  std::string line, out;
  std::getline(old, line);
  out = line + "\n";
  while (std::getline(old, line)) {
    if (line.empty()) continue;
    if (std::stoull(line.substr(0, line.find(','))) < first_call) out += line + "\n";
  }
  const std::string f = fresh.str();
  return out + f.substr(f.find('\n') + 1);
}

inline LineSearchRun stage_linesearch(Workspace& ws) {
  const auto& c = ws.config();
  const auto& p = ws.problem();
  const auto s = surrogate_from_json(ws.read_json("surrogate.json", "surrogate"));
  const auto [h, d] = hessian_from_json(ws.read_json("hessian.json", "hessian"));
  const auto w = window_from_json(ws.read_json("windows.json", "windows"));
  LineSearchRun resume;
  if (auto j = ws.try_read_json("linesearch.json", "linesearch")) resume = run_from_json(*j);
  if (resume.converged || static_cast<int>(resume.iterations.size()) >= c.linesearch.max_iters) return resume;
  const std::uint64_t first = resume.iterations.empty() ? 0 : resume.iterations.back().calls_after;

  const auto model = highlevel_model(c, p);
  CountedEvaluator ev(model, make_noise(c, p, s.params), stage_seed(c, 4), first);
  ev.set_logging(true);
  LineSearchOptions o;
  o.jobs = ws.jobs();
  o.sequential = c.linesearch.sequential;
  o.bootstrap = c.linesearch.bootstrap;
  o.seed = stage_seed(c, 5);
  o.max_iters = c.linesearch.max_iters;
  o.energy_tol = c.linesearch.energy_tol;
  const auto noiseless = model.energy;
  auto on_iteration = [&](IterationRecord& rec, const LineSearchRun& run) {
    rec.reference_energy = noiseless(rec.new_center);
    ws.write_json("linesearch.json", "linesearch", to_json(run));
    ws.write_text("history.csv", history_csv(run));
    ws.write_text("evaluations.csv", merged_log(ws, "evaluations.csv", first, ev));
    log_message(LogLevel::info, "line search iteration " + std::to_string(run.iterations.size()) + ": energy " +
                                    csv_number(rec.energy) + " +/- " + csv_number(rec.sigma));
  };
  auto run = run_line_search(ev, s.params, d, w, o, on_iteration, resume);
  ws.write_json("linesearch.json", "linesearch", to_json(run));
  ws.write_text("history.csv", history_csv(run));
  return run;
}

struct PowellStageResult {
  PowellResult result;
  bool converged = true;
};

inline PowellStageResult stage_powell(Workspace& ws) {
  const auto& c = ws.config();
  const auto& p = ws.problem();
  const auto s = surrogate_from_json(ws.read_json("surrogate.json", "surrogate"));
  const auto [h, d] = hessian_from_json(ws.read_json("hessian.json", "hessian"));
  const auto w = window_from_json(ws.read_json("windows.json", "windows"));
  CountedEvaluator ev(highlevel_model(c, p), make_noise(c, p, s.params), stage_seed(c, 6));
  ev.set_logging(true);
  PowellOptions o;
  o.initial_steps = w.half_widths;
  o.ftol = c.powell.ftol ? *c.powell.ftol : 2.0 * w.delta_e;
  o.xtol = c.powell.xtol ? *c.powell.xtol
                         : (w.delta_theta.empty() ? 1e-4 : *std::min_element(w.delta_theta.begin(), w.delta_theta.end()));
  o.max_cycles = c.powell.max_cycles;
  PowellStageResult out;
  try {
    out.result = powell_minimize(ev, s.params, d.directions, o);
  } catch (const NonConvergenceError& e) {
    out.converged = false;
    out.result.x = e.best_point();
    out.result.value = e.best_value();
    out.result.calls = ev.calls();
    log_message(LogLevel::warn, e.what());
  }
  const auto noiseless = highlevel_model(c, p).energy;
  std::string hist = "iteration,n_calls,energy,sigma\n";
  json traj = json::array();
  for (std::size_t k = 0; k < out.result.trajectory.size(); ++k) {
    const auto& pt = out.result.trajectory[k];
    hist += std::to_string(k) + "," + std::to_string(pt.calls) + "," + csv_number(pt.value) + "," + csv_number(pt.sigma) + "\n";
    traj.push_back({{"calls", pt.calls}, {"params", vec_json(pt.x)}, {"energy", pt.value}, {"sigma", pt.sigma}});
  }
  ws.write_text("powell_history.csv", hist);
  std::ostringstream log;
  ev.write_log_csv(log);
  ws.write_text("powell_evaluations.csv", log.str());
  ws.write_json("powell.json", "powell",
                {{"params", vec_json(out.result.x)},
                 {"energy", out.result.value},
                 {"reference_energy", noiseless(out.result.x)},
                 {"calls", out.result.calls},
                 {"cycles", out.result.cycles},
                 {"converged", out.converged},
                 {"trajectory", traj}});
  return out;
}

/// Shot estimates at the best available parameters: the last line-search
/// center, else the surrogate minimum, else the initial parameters.
inline json stage_shots(Workspace& ws) {
  const auto& c = ws.config();
  const auto& p = ws.problem();
  Vector x = p.initial_params;
  std::string source = "initial";
  if (auto j = ws.try_read_json("linesearch.json", "linesearch"); j && !(*j)["iterations"].empty()) {
    x = json_vec((*j)["iterations"].back()["new_center"]);
    source = "linesearch";
  } else if (auto s = ws.try_read_json("surrogate.json", "surrogate")) {
    x = json_vec((*s)["params"]);
    source = "surrogate";
  }
  const auto model = highlevel_model(c, p);
  std::vector<PauliString> strings;
  for (const auto& t : p.hamiltonian.terms()) strings.push_back(t.string);
  const auto values = model.expectations(x, strings);
  std::vector<double> re;
  for (const auto& v : values) re.push_back(v.real());
  const auto formula = c.shots.variance == "exact" ? VarianceFormula::exact : VarianceFormula::linear;
  json rows = json::array();
  std::string csv = "epsilon,n_ungrouped,r_hat,n_shots\n";
  for (double eps : c.shots.epsilons) {
    const auto e = estimate_required_shots(p.hamiltonian, re, eps, formula);
    rows.push_back({{"epsilon", eps}, {"n_ungrouped", e.n_ungrouped}, {"r_hat", e.r_hat}, {"n_shots", e.n_shots}});
    csv += csv_number(eps) + "," + csv_number(e.n_ungrouped) + "," + csv_number(e.r_hat) + "," + csv_number(e.n_shots) + "\n";
  }
  json body{{"params_source", source},
            {"params", vec_json(x)},
            {"n_terms", p.hamiltonian.size()},
            {"n_groups", sorted_insertion(p.hamiltonian).groups.size()},
            {"estimates", rows}};
  ws.write_json("shots.json", "shots", body);
  ws.write_text("shots.csv", csv);
  return body;
}

struct RunAllResult {
  json summary;
  bool converged = false;
};

/// All stages in order, reusing checkpoints that match the configuration.
inline RunAllResult run_all(Workspace& ws) {
  const auto& c = ws.config();
  if (!ws.try_read_json("surrogate.json", "surrogate")) stage_surrogate(ws);
  if (!ws.try_read_json("hessian.json", "hessian")) stage_hessian(ws);
  if (!ws.try_read_json("windows.json", "windows")) stage_windows(ws);
  const auto run = stage_linesearch(ws);
  json powell = nullptr;
  if (c.powell.enabled) {
    if (auto j = ws.try_read_json("powell.json", "powell")) {
      powell = *j;
    } else {
      stage_powell(ws);
      powell = ws.read_json("powell.json", "powell");
    }
  }
  stage_shots(ws);

  const auto& p = ws.problem();
  const auto& last = run.iterations.back();
  std::uint64_t total = last.calls_after;
  json s{{"final_energy", last.energy},
         {"final_sigma", last.sigma},
         {"final_reference_energy", opt_json(last.reference_energy)},
         {"final_params", vec_json(last.new_center)},
         {"oracle_energy", opt_json(oracle_energy(p))},
         {"iterations", run.iterations.size()},
         {"linesearch_calls", last.calls_after},
         {"converged", run.converged}};
  if (!powell.is_null()) {
    s["powell_energy"] = powell["energy"];
    s["powell_reference_energy"] = powell["reference_energy"];
    s["powell_calls"] = powell["calls"];
    s["powell_converged"] = powell["converged"];
    total += powell["calls"].get<std::uint64_t>();
  }
  s["total_calls"] = total;
  ws.write_json("summary.json", "run-all", s);
  return {s, run.converged};
}

}  // namespace vqsls
