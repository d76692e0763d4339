#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "oracles.hpp"
#include "vqsls/noise.hpp"
#include "vqsls/spin.hpp"

using namespace vqsls;

namespace {

double quadratic(const Vector& x) { return 0.5 * x.squaredNorm() - 1.0; }

EnergyModel quadratic_model() { return {quadratic, {}, {}}; }

EnergyModel ising_model(int n) {
  EnergyModel m;
  m.hamiltonian = build_ising_hamiltonian(n, 1.0, 0.75, 0.25);
  const EntanglerAnsatz a{n};
  const auto h = m.hamiltonian;
  m.energy = [a, h](const Vector& x) { return expectation(prepare_ansatz_state(a, x), h); };
  m.expectations = [a](const Vector& x, const std::vector<PauliString>& ps) {
    const auto psi = prepare_ansatz_state(a, x);
    std::vector<std::complex<double>> out;
    for (const auto& p : ps) out.push_back(psi.pauli_expectation(p));
    return out;
  };
  return m;
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return {mean, std::sqrt(s / static_cast<double>(v.size() - 1))};
}

// Variance of the grouped estimator from dense operators, per group either
// (<G^2> - <G>^2) / n_k with G the group's partial Hamiltonian, or the sum of
// the per-term variances a^2 (<P^2> - <P>^2) / n_k.
double dense_grouped_variance(const PauliHamiltonian& h, const MeasurementGrouping& g, const std::vector<long long>& shots,
                              const Eigen::VectorXcd& v, bool covariances) {
  const auto dim = v.size();
  auto variance = [&](const oracle::CMat& op) {
    const double mu = v.dot(op * v).real();
    return v.dot(op * (op * v)).real() - mu * mu;
  };
  double total = 0.0;
  for (std::size_t k = 0; k < g.groups.size(); ++k) {
    oracle::CMat gm = oracle::CMat::Zero(dim, dim);
    double per_term = 0.0;
    for (auto l : g.groups[k]) {
      const oracle::CMat p = h.terms()[l].coefficient * oracle::pauli_string(h.terms()[l].string.str());
      gm += p;
      per_term += variance(p);
    }
    total += (covariances ? variance(gm) : per_term) / static_cast<double>(shots[k]);
  }
  return total;
}

}  // namespace

TEST(Evaluator, NoiselessCountsExactly) {
  CountedEvaluator ev(quadratic_model(), NoNoise{}, 1);
  const Vector x = Vector::Constant(3, 0.5);
  EXPECT_EQ(ev.evaluate(x).energy, quadratic(x));
  EXPECT_EQ(ev.evaluate(x).sigma, 0.0);
  ev.evaluate_batch(std::vector<Vector>(7, x), 3);
  EXPECT_EQ(ev.calls(), 9u);
  CountedEvaluator offset(quadratic_model(), NoNoise{}, 1, 40);
  offset.evaluate(x);
  EXPECT_EQ(offset.calls(), 41u);
}

TEST(Evaluator, GaussianNoiseStatistics) {
  const double sigma = 0.03;
  CountedEvaluator ev(quadratic_model(), GaussianNoise{sigma}, 99);
  const Vector x = Vector::Constant(2, 0.25);
  std::vector<double> e;
  for (int k = 0; k < 10000; ++k) e.push_back(ev.evaluate(x).energy);
  const auto [mean, sd] = mean_std(e);
  EXPECT_NEAR(sd, sigma, 0.05 * sigma);
  EXPECT_NEAR(mean, quadratic(x), 4.0 * sigma / std::sqrt(1e4));
}

TEST(Evaluator, BatchMatchesSequentialForAnyJobs) {
  std::vector<Vector> xs;
  for (int k = 0; k < 25; ++k) xs.push_back(Vector::Constant(2, 0.1 * k));
  CountedEvaluator seq(quadratic_model(), GaussianNoise{0.1}, 7);
  std::vector<double> expected;
  for (const auto& x : xs) expected.push_back(seq.evaluate(x).energy);
  for (int jobs : {1, 2, 4, 8}) {
    CountedEvaluator ev(quadratic_model(), GaussianNoise{0.1}, 7);
    const auto got = ev.evaluate_batch(xs, jobs);
    for (std::size_t k = 0; k < xs.size(); ++k) EXPECT_EQ(got[k].energy, expected[k]) << jobs;
    EXPECT_EQ(ev.calls(), xs.size());
  }
}

TEST(Evaluator, ResumeOffsetReproducesDraws) {
  const Vector x = Vector::Constant(2, 0.3);
  CountedEvaluator full(quadratic_model(), GaussianNoise{0.2}, 5);
  std::vector<double> all;
  for (int k = 0; k < 10; ++k) all.push_back(full.evaluate(x).energy);
  CountedEvaluator resumed(quadratic_model(), GaussianNoise{0.2}, 5, 6);
  for (int k = 6; k < 10; ++k) EXPECT_EQ(resumed.evaluate(x).energy, all[static_cast<std::size_t>(k)]);
}

TEST(Evaluator, NonFiniteEnergyRaises) {
  CountedEvaluator ev({[](const Vector&) { return std::nan(""); }, {}, {}}, NoNoise{}, 0);
  EXPECT_THROW(ev.evaluate(Vector::Zero(1)), EvaluationError);
}

TEST(Evaluator, ValidationErrors) {
  EXPECT_THROW(CountedEvaluator(quadratic_model(), GaussianNoise{-1.0}, 0), DomainError);
  EXPECT_THROW(CountedEvaluator(quadratic_model(), DepolarizingNoise{0.1, false}, 0), DomainError);
  EXPECT_THROW(CountedEvaluator(ising_model(4), DepolarizingNoise{1.0, false}, 0), DomainError);
  EXPECT_THROW(CountedEvaluator(quadratic_model(), ShotNoise{100, {{{0}}, 1.0}}, 0), DomainError);
}

TEST(Evaluator, DepolarizingScalesTracelessPart) {
  auto model = ising_model(4);
  const Vector x = (Vector(4) << 0.3, -0.2, 0.5, 0.1).finished();
  const double e = model.energy(x), id = model.hamiltonian.identity_coefficient();
  CountedEvaluator damp(model, DepolarizingNoise{0.2, false}, 0);
  EXPECT_NEAR(damp.evaluate(x).energy, 0.8 * (e - id) + id, 1e-14);
  CountedEvaluator undo(model, DepolarizingNoise{0.2, true}, 0);
  EXPECT_NEAR(undo.evaluate(x).energy, e, 1e-14);
}

TEST(Evaluator, ShotNoiseVarianceMatchesDenseGroupVariance) {
  auto model = ising_model(4);
  const auto grouping = sorted_insertion(model.hamiltonian);
  const Vector x = (Vector(4) << 0.3, -0.2, 0.5, 0.1).finished();
  const auto psi = prepare_ansatz_state(EntanglerAnsatz{4}, x);
  const Eigen::VectorXcd v = Eigen::Map<const Eigen::VectorXcd>(psi.amplitudes().data(), 16);
  for (bool cov : {false, true})
    for (long long n : {100LL, 10000LL}) {
      CountedEvaluator ev(model, ShotNoise{n, grouping, cov}, 3);
      const double expected = dense_grouped_variance(model.hamiltonian, grouping, ev.shot_allocation(), v, cov);
      const auto r = ev.evaluate(x);
      EXPECT_NEAR(r.sigma * r.sigma, expected, 1e-12 * (1.0 + expected)) << cov;
    }
}

TEST(Evaluator, ShotNoiseEmpiricalSpreadAndScaling) {
  auto model = ising_model(4);
  const auto grouping = sorted_insertion(model.hamiltonian);
  const Vector x = (Vector(4) << 0.3, -0.2, 0.5, 0.1).finished();
  const double exact = model.energy(x);
  double sd_small = 0.0, sd_large = 0.0;
  for (long long n : {1000LL, 100000LL}) {
    CountedEvaluator ev(model, ShotNoise{n, grouping}, 11);
    std::vector<double> e;
    double sigma = 0.0;
    for (int k = 0; k < 4000; ++k) {
      const auto r = ev.evaluate(x);
      e.push_back(r.energy);
      sigma = r.sigma;
    }
    const auto [mean, sd] = mean_std(e);
    EXPECT_NEAR(sd, sigma, 0.05 * sigma);
    EXPECT_NEAR(mean, exact, 4.0 * sigma / std::sqrt(4000.0));
    (n == 1000 ? sd_small : sd_large) = sd;
  }
  EXPECT_NEAR(sd_small / sd_large, 10.0, 1.0);
}

TEST(Evaluator, EigenstateHasNoShotNoise) {
  // |0000> is an eigenstate of the ZZ part; drop the field so it is exact
  EnergyModel m;
  m.hamiltonian = build_ising_hamiltonian(4, 1.0, 0.5, 0.0);
  m.energy = [](const Vector&) { return 0.0; };
  m.expectations = [](const Vector&, const std::vector<PauliString>& ps) {
    const StateVector psi(4);
    std::vector<std::complex<double>> out;
    for (const auto& p : ps) out.push_back(psi.pauli_expectation(p));
    return out;
  };
  CountedEvaluator ev(m, ShotNoise{10, sorted_insertion(m.hamiltonian)}, 1);
  const auto r = ev.evaluate(Vector::Zero(1));
  EXPECT_EQ(r.sigma, 0.0);
  EXPECT_NEAR(r.energy, 4.0 * 1.0 + 4.0 * 0.5, 1e-12);
}

TEST(Evaluator, SmallBudgetFloorsGroupsToOneShot) {
  auto model = ising_model(4);
  CountedEvaluator ev(model, ShotNoise{1, sorted_insertion(model.hamiltonian)}, 0);
  EXPECT_GE(ev.floored_groups(), 1u);
  for (auto n : ev.shot_allocation()) EXPECT_GE(n, 1);
}

TEST(Evaluator, LogCsvOrderedByCallIndex) {
  CountedEvaluator ev(quadratic_model(), NoNoise{}, 0);
  ev.set_logging(true);
  ev.evaluate_batch({Vector::Zero(1), Vector::Ones(1)}, 2);
  std::ostringstream os;
  ev.write_log_csv(os);
  EXPECT_EQ(os.str(), "call_index,params_hash,energy,sigma\n0," + params_hash(Vector::Zero(1)) + ",-1,0\n1," +
                          params_hash(Vector::Ones(1)) + ",-0.5,0\n");
  EXPECT_EQ(params_hash(Vector::Zero(1)).size(), 16u);
  EXPECT_NE(params_hash(Vector::Zero(1)), params_hash(Vector::Ones(1)));
}

TEST(ShotEstimate, RatiosFollowInverseSquareEpsilon) {
  const auto h = build_ising_hamiltonian(6, 1.0, 0.75, 0.25);
  const std::vector<double> expect(h.size(), 0.2);
  const auto a = estimate_required_shots(h, expect, 1e-3);
  const auto b = estimate_required_shots(h, expect, 1e-4);
  EXPECT_NEAR(b.n_shots / a.n_shots, 100.0, 1e-9);
  EXPECT_GE(a.r_hat, 1.0);
  EXPECT_NEAR(a.n_shots * a.r_hat, a.n_ungrouped, 1e-6 * a.n_ungrouped);
  EXPECT_THROW(estimate_required_shots(h, std::vector<double>(2, 0.0), 1e-3), DimensionError);
}
