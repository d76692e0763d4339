#pragma once

// Noisy, call-counted energy evaluators and the grouped shot-count estimate.

#include <atomic>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <mutex>
#include <ostream>
#include <random>
#include <string>
#include <tuple>
#include <variant>
#include <vector>

#include "vqsls/common.hpp"
#include "vqsls/pauli.hpp"

namespace vqsls {

struct NoNoise {};
struct GaussianNoise {
  double sigma = 0.0;
};
/// Per-group central-limit sampling. The group variance is the sum of the
/// per-term variances a^2 (1 - <P>^2); with `covariances` set, the
/// covariances between commuting terms of a group are added.
struct ShotNoise {
  long long n_shots = 1;
  MeasurementGrouping grouping;
  bool covariances = false;
};
struct DepolarizingNoise {
  double p = 0.0;
  bool inverse_rescale = false;
};

using NoiseSpec = std::variant<NoNoise, GaussianNoise, ShotNoise, DepolarizingNoise>;

inline void validate(const NoiseSpec& spec) {
  if (const auto* g = std::get_if<GaussianNoise>(&spec); g && !(g->sigma >= 0.0))
    throw DomainError("gaussian noise: sigma must be >= 0");
  if (const auto* s = std::get_if<ShotNoise>(&spec)) {
    if (s->n_shots < 1) throw DomainError("shot noise: n_shots must be >= 1");
    if (s->grouping.groups.empty()) throw DomainError("shot noise: empty grouping");
  }
  if (const auto* d = std::get_if<DepolarizingNoise>(&spec); d && !(d->p >= 0.0 && d->p < 1.0))
    throw DomainError("depolarizing noise: p must be in [0, 1)");
}

/// Noiseless model behind an evaluator. `energy` is always required. Shot
/// and depolarizing modes also need the Hamiltonian and a provider of
/// Pauli expectation values for the prepared state.
struct EnergyModel {
  std::function<double(const Vector&)> energy;
  PauliHamiltonian hamiltonian;
  std::function<std::vector<std::complex<double>>(const Vector&, const std::vector<PauliString>&)> expectations;
};

struct Evaluation {
  double energy = 0.0;
  double sigma = 0.0;
};

/// FNV-1a over the raw bytes of the parameter vector, as 16 hex digits.
inline std::string params_hash(const Vector& x) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double v = x(k);
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &v, sizeof v);
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 0x100000001b3ULL;
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

struct EvaluationLogEntry {
  std::uint64_t call_index = 0;
  std::string params_hash;
  Evaluation value;
};

/// Wraps a model with a noise process and an exact call counter. Randomness
/// for call k comes from a generator seeded by (seed, k), so results do not
/// depend on the order in which concurrent calls run.
class CountedEvaluator {
 public:
  CountedEvaluator(EnergyModel model, NoiseSpec noise, std::uint64_t seed, std::uint64_t first_call = 0)
      : model_(std::move(model)), noise_(std::move(noise)), seed_(seed), counter_(first_call) {
    if (!model_.energy) throw DomainError("CountedEvaluator: model has no energy function");
    validate(noise_);
    if (const auto* s = std::get_if<ShotNoise>(&noise_)) prepare_shots(*s);
    if (std::holds_alternative<DepolarizingNoise>(noise_) && model_.hamiltonian.empty())
      throw DomainError("depolarizing noise needs the Hamiltonian");
  }

  /// Total evaluations so far (including first_call offset).
  std::uint64_t calls() const noexcept { return counter_.load(); }
  std::uint64_t seed() const noexcept { return seed_; }
  const NoiseSpec& noise() const noexcept { return noise_; }
  const EnergyModel& model() const noexcept { return model_; }

  /// Number of shot groups that were floored to one shot.
  std::size_t floored_groups() const noexcept { return floored_; }
  const std::vector<long long>& shot_allocation() const noexcept { return shots_per_group_; }

  Evaluation evaluate(const Vector& x) { return evaluate_at(counter_.fetch_add(1), x); }

  /// Reserves a contiguous block of call indices and evaluates the points on
  /// up to `jobs` threads; element k uses call index first + k.
  std::vector<Evaluation> evaluate_batch(const std::vector<Vector>& xs, int jobs = 1) {
    const std::uint64_t first = counter_.fetch_add(xs.size());
    return parallel_map<Evaluation>(
        xs.size(), [&](std::size_t k) { return evaluate_at(first + k, xs[k]); }, jobs);
  }

  void set_logging(bool on) { logging_ = on; }
  std::vector<EvaluationLogEntry> log() const {
    std::lock_guard lock(log_mu_);
    std::vector<EvaluationLogEntry> out;
    for (const auto& [k, e] : log_) out.push_back(e);
    return out;
  }

  /// CSV `call_index,params_hash,energy,sigma`, ordered by call index.
  void write_log_csv(std::ostream& os) const {
    os << "call_index,params_hash,energy,sigma\n";
    char buf[128];
    for (const auto& e : log()) {
      std::snprintf(buf, sizeof buf, "%llu,%s,%.17g,%.17g\n", static_cast<unsigned long long>(e.call_index),
                    e.params_hash.c_str(), e.value.energy, e.value.sigma);
      os << buf;
    }
  }

 private:
  struct Group {
    std::vector<std::size_t> terms;
    std::vector<std::tuple<std::size_t, std::size_t, std::size_t, double>> pairs;  // (l, l', product id, phase)
  };

  void prepare_shots(const ShotNoise& s) {
    if (model_.hamiltonian.empty() || !model_.expectations)
      throw DomainError("shot noise needs the Hamiltonian and an expectation provider");
    const auto& terms = model_.hamiltonian.terms();
    std::map<std::pair<std::uint64_t, std::uint64_t>, std::size_t> ids;
    auto id_of = [&](const PauliString& p) {
      auto [it, inserted] = ids.emplace(std::make_pair(p.x_mask(), p.z_mask()), strings_.size());
      if (inserted) strings_.push_back(p);
      return it->second;
    };
    for (const auto& t : terms) term_ids_.push_back(id_of(t.string));
    std::vector<double> weight;
    for (const auto& g : s.grouping.groups) {
      Group grp;
      double w2 = 0.0;
      for (auto l : g) {
        if (l >= terms.size()) throw DimensionError("shot noise: grouping index out of range");
        grp.terms.push_back(l);
        w2 += terms[l].coefficient * terms[l].coefficient;
      }
      for (auto l : g)
        for (auto m : g) {
          if (!commutes(terms[l].string, terms[m].string))
            throw DomainError("shot noise: group contains non-commuting terms");
          if (s.covariances) {
            const auto [phase, r] = multiply(terms[l].string, terms[m].string);
            grp.pairs.emplace_back(l, m, id_of(r), phase.real());
          }
        }
      groups_.push_back(std::move(grp));
      weight.push_back(std::sqrt(w2));
    }
    double total = 0.0;
    for (double w : weight) total += w;
    for (double w : weight) {
      long long n = total > 0.0 ? std::llround(static_cast<double>(s.n_shots) * w / total) : 0;
      if (n < 1) {
        n = 1;
        ++floored_;
      }
      shots_per_group_.push_back(n);
    }
    if (floored_ > 0)
      log_message(LogLevel::warn, std::to_string(floored_) + " measurement group(s) allocated zero shots; using 1");
  }

  Evaluation evaluate_at(std::uint64_t index, const Vector& x) {
    Evaluation out = compute(index, x);
    if (!std::isfinite(out.energy)) throw EvaluationError("cost function returned a non-finite value");
    if (logging_) {
      std::lock_guard lock(log_mu_);
      log_[index] = {index, params_hash(x), out};
    }
    return out;
  }

  Evaluation compute(std::uint64_t index, const Vector& x) const {
    if (std::holds_alternative<NoNoise>(noise_)) return {model_.energy(x), 0.0};
    std::mt19937_64 rng(stream_seed(seed_, index));
    if (const auto* g = std::get_if<GaussianNoise>(&noise_)) {
      const double e = model_.energy(x);
      if (g->sigma == 0.0) return {e, 0.0};
      std::normal_distribution<double> n(0.0, g->sigma);
      return {e + n(rng), g->sigma};
    }
    if (const auto* d = std::get_if<DepolarizingNoise>(&noise_)) {
      const double e = model_.energy(x);
      const double id = model_.hamiltonian.identity_coefficient();
      const double scaled = (1.0 - d->p) * (e - id);
      return {(d->inverse_rescale ? scaled / (1.0 - d->p) : scaled) + id, 0.0};
    }
    // shots: per-group CLT draw around the exact group mean
    const auto exp = model_.expectations(x, strings_);
    if (exp.size() != strings_.size()) throw DimensionError("expectation provider returned wrong length");
    const auto& terms = model_.hamiltonian.terms();
    double energy = model_.hamiltonian.identity_coefficient(), var_total = 0.0;
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t k = 0; k < groups_.size(); ++k) {
      const auto& g = groups_[k];
      double mu = 0.0, group_var = 0.0;
      for (auto l : g.terms) {
        const double a = terms[l].coefficient, e = exp[term_ids_[l]].real();
        mu += a * e;
        group_var += a * a * (1.0 - e * e);
      }
      if (!g.pairs.empty()) {
        double second = 0.0;
        for (const auto& [l, m, id, phase] : g.pairs)
          second += terms[l].coefficient * terms[m].coefficient * phase * exp[id].real();
        group_var = second - mu * mu;
      }
      const double var = std::max(0.0, group_var) / static_cast<double>(shots_per_group_[k]);
      energy += mu + std::sqrt(var) * normal(rng);
      var_total += var;
    }
    return {energy, std::sqrt(var_total)};
  }

  EnergyModel model_;
  NoiseSpec noise_;
  std::uint64_t seed_;
  std::atomic<std::uint64_t> counter_;
  std::vector<PauliString> strings_;
  std::vector<std::size_t> term_ids_;
  std::vector<Group> groups_;
  std::vector<long long> shots_per_group_;
  std::size_t floored_ = 0;
  bool logging_ = false;
  mutable std::mutex log_mu_;
  std::map<std::uint64_t, EvaluationLogEntry> log_;
};

struct ShotEstimate {
  double n_ungrouped = 0.0;
  double r_hat = 1.0;
  double n_shots = 0.0;
  MeasurementGrouping grouping;
};

/// Shots needed for energy error epsilon from per-term expectation values
/// (indexed like h.terms()): n_ungrouped / r_hat under SortedInsertion.
inline ShotEstimate estimate_required_shots(const PauliHamiltonian& h, const std::vector<double>& expectations,
                                            double epsilon, VarianceFormula formula = VarianceFormula::exact) {
  if (expectations.size() != h.size()) throw DimensionError("estimate_required_shots: expectation count mismatch");
  std::vector<double> var(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) var[i] = pauli_variance(expectations[i], formula);
  ShotEstimate out;
  out.grouping = sorted_insertion(h);
  out.r_hat = out.grouping.r_hat;
  out.n_ungrouped = shots_ungrouped(h, var, epsilon);
  out.n_shots = out.n_ungrouped / out.r_hat;
  return out;
}

}  // namespace vqsls
