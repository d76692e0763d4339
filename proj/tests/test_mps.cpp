#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "vqsls/mps.hpp"

using namespace vqsls;

namespace {

double max_diff(const std::vector<Complex>& a, const std::vector<Complex>& b) {
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a[k] - b[k]));
  return m;
}

}  // namespace

TEST(Mps, ProductStateInitialization) {
  MpsState mps(5, 4);
  const auto v = mps.to_statevector();
  EXPECT_EQ(v[0], Complex(1.0));
  EXPECT_NEAR(mps.norm(), 1.0, 1e-15);
  EXPECT_EQ(mps.max_bond_dimension(), 1);
  EXPECT_THROW(MpsState(1, 4), DimensionError);
  EXPECT_THROW(MpsState(4, 0), DomainError);
}

TEST(Mps, RandomGatesMatchStatevector) {
  std::mt19937_64 rng(17);
  for (int n : {4, 6, 7}) {
    MpsState mps(n, 1 << (n / 2 + 1));
    StateVector psi(n);
    for (int g = 0; g < 30; ++g) {
      const int i = static_cast<int>(rng() % static_cast<unsigned>(n));
      int j = static_cast<int>(rng() % static_cast<unsigned>(n));
      if (j == i) j = (i + 1) % n;
      const Gate4 u = oracle::random_unitary4(rng);
      mps.apply_gate(i, j, u);
      psi.apply_two_qubit(i, j, u);
    }
    EXPECT_LT(max_diff(mps.to_statevector(), psi.amplitudes()), 1e-10) << n;
    EXPECT_NEAR(mps.total_discarded_weight(), 0.0, 1e-20);
  }
}

TEST(Mps, CenterMovesPreserveState) {
  std::mt19937_64 rng(4);
  MpsState mps(6, 8);
  for (int g = 0; g < 10; ++g) mps.apply_gate(g % 5, g % 5 + 1, oracle::random_unitary4(rng));
  const auto before = mps.to_statevector();
  for (int c : {0, 5, 2, 3}) {
    mps.move_center(c);
    EXPECT_EQ(mps.center(), c);
    EXPECT_LT(max_diff(before, mps.to_statevector()), 1e-12);
  }
}

TEST(Mps, PauliExpectationsMatchStatevector) {
  std::mt19937_64 rng(8);
  const int n = 6;
  MpsState mps(n, 8);
  StateVector psi(n);
  for (int g = 0; g < 20; ++g) {
    const int i = static_cast<int>(rng() % n), j = (i + 1 + static_cast<int>(rng() % (n - 1))) % n;
    const Gate4 u = oracle::random_unitary4(rng);
    mps.apply_gate(i, j, u);
    psi.apply_two_qubit(i, j, u);
  }
  std::uniform_int_distribution<int> axis(0, 3);
  for (int t = 0; t < 50; ++t) {
    std::string s;
    for (int k = 0; k < n; ++k) s += "IXYZ"[axis(rng)];
    const auto p = PauliString::from_string(s);
    EXPECT_LT(std::abs(mps.pauli_expectation(p) - psi.pauli_expectation(p)), 1e-11) << s;
  }
}

TEST(Mps, TruncationRecordsDiscardedWeightAndRenormalizes) {
  MpsState mps(4, 1);
  mps.apply_two_site_gate(1, entangler_gate(0.6, GeneratorSign::minus));
  mps.apply_two_site_gate(0, entangler_gate(0.4, GeneratorSign::minus));
  EXPECT_GT(mps.total_discarded_weight(), 0.0);
  EXPECT_EQ(mps.max_bond_dimension(), 1);
  EXPECT_NEAR(mps.norm(), 1.0, 1e-12);
}

TEST(Mps, DegenerateMultipletAtCapIsDroppedWhole) {
  // exp(-i t X(x)Y) maps |00> to cos t |00> + sin t |11>
  Eigen::Matrix2cd x, y;
  x << 0, 1, 1, 0;
  y << 0, Complex(0, -1), Complex(0, 1), 0;
  Gate4 xy;
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c) xy.block<2, 2>(2 * r, 2 * c) = x(r, c) * y;
  const double t = 0.5;
  const Gate4 u = std::cos(t) * Gate4::Identity() - Complex(0, std::sin(t)) * xy;

  // pairs (0,3) and (1,2) with equal angles: the middle bond spectrum is
  // {c^2, cs, cs, s^2}, so a cap of 2 would split the degenerate pair
  MpsState mps(4, 2);
  mps.apply_gate(0, 3, u);
  mps.apply_two_site_gate(1, u);
  EXPECT_EQ(mps.bond_dimension(1), 1);
  const double c2 = std::cos(t) * std::cos(t);
  EXPECT_NEAR(mps.last_discarded_weight(), 1.0 - c2 * c2, 1e-12);
  EXPECT_NEAR(mps.norm(), 1.0, 1e-12);

  MpsState wide(4, 3);
  wide.apply_gate(0, 3, u);
  wide.apply_two_site_gate(1, u);
  EXPECT_EQ(wide.bond_dimension(1), 3);
}

TEST(Mps, BondCapRespected) {
  std::mt19937_64 rng(2);
  MpsState mps(8, 3);
  for (int g = 0; g < 40; ++g) mps.apply_gate(static_cast<int>(g % 7), static_cast<int>(g % 7) + 1, oracle::random_unitary4(rng));
  EXPECT_LE(mps.max_bond_dimension(), 3);
  EXPECT_NEAR(mps.norm(), 1.0, 1e-12);
}

TEST(Mps, AdjacencyChecks) {
  MpsState mps(4, 2);
  EXPECT_THROW(mps.apply_two_site_gate(3, Gate4::Identity()), DomainError);
  EXPECT_THROW(mps.apply_gate(1, 1, Gate4::Identity()), DomainError);
  EXPECT_THROW(mps.apply_gate(0, 4, Gate4::Identity()), DimensionError);
}

TEST(Mps, AnsatzEnergyMatchesStatevector) {
  const int n = 8;
  const auto h = build_ising_hamiltonian(n, 1.0, 0.75, 0.25);
  const EntanglerAnsatz a{n};
  for (const std::vector<double>& p : {std::vector<double>{0.3, -0.2, 0.8, 0.1}, std::vector<double>{1.1, 0.4, -0.6, 0.9}}) {
    const double exact = expectation(prepare_ansatz_state(a, p), h);
    EXPECT_NEAR(mps_ansatz_energy(a, p, 16, h), exact, 1e-10);
  }
}

TEST(Mps, SmallBondEnergyIsVariational) {
  const int n = 8;
  const auto h = build_ising_hamiltonian(n, 1.0, 0.75, 0.25);
  const EntanglerAnsatz a{n};
  const std::vector<double> p{0.7, -0.5, 0.6, 0.4};
  const double exact = expectation(prepare_ansatz_state(a, p), h);
  const auto mps = prepare_mps_ansatz_state(a, p, 2);
  EXPECT_GT(mps.total_discarded_weight(), 0.0);
  EXPECT_GT(std::abs(mps_energy(mps, h) - exact), 1e-6);
  EXPECT_GE(mps_energy(mps, h), exact_ground_energy(h) - 1e-9);
}
