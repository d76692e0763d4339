#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "oracles.hpp"
#include "vqsls/spin.hpp"

using namespace vqsls;

namespace {

oracle::CMat dense_generator(int n, int i, int j, GeneratorSign sign) {
  std::string yz(n, 'I'), zy(n, 'I');
  yz[i] = 'Y';
  yz[j] = 'Z';
  zy[i] = 'Z';
  zy[j] = 'Y';
  const double s = sign == GeneratorSign::minus ? -1.0 : 1.0;
  return oracle::pauli_string(yz) + s * oracle::pauli_string(zy);
}

Eigen::VectorXcd dense_ansatz_state(const EntanglerAnsatz& a, const std::vector<double>& params) {
  const int n = a.n_sites;
  Eigen::VectorXcd v = Eigen::VectorXcd::Zero(Eigen::Index{1} << n);
  v(0) = 1.0;
  for (int layer = 0; layer < 4; ++layer)
    for (auto [i, j] : a.bonds(layer)) {
      const oracle::CMat g = dense_generator(n, i, j, a.sign);
      const oracle::CMat u = (oracle::cplx(0, -params[static_cast<std::size_t>(layer)]) * g).exp();
      v = u * v;
    }
  return v;
}

oracle::CMat dense_hamiltonian(const PauliHamiltonian& h) {
  const auto dim = Eigen::Index{1} << h.n_qubits();
  oracle::CMat m = oracle::CMat::Zero(dim, dim);
  for (const auto& t : h.terms()) m += t.coefficient * oracle::pauli_string(t.string.str());
  return m;
}

Eigen::MatrixXd real_ising_matrix(int n, double j1, double j2, double ht) {
  // Z diagonal and X flips written out directly
  const auto dim = Eigen::Index{1} << n;
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(dim, dim);
  for (Eigen::Index b = 0; b < dim; ++b) {
    auto z = [&](int k) { return ((b >> (k % n)) & 1) ? -1.0 : 1.0; };
    double d = 0.0;
    for (int k = 0; k < n; ++k) d += j1 * z(k) * z(k + 1) + j2 * z(k) * z(k + 2);
    m(b, b) = d;
    for (int k = 0; k < n; ++k) m(b ^ (Eigen::Index{1} << k), b) += ht;
  }
  return m;
}

}  // namespace

TEST(EntanglerGate, MatchesMatrixExponential) {
  for (auto sign : {GeneratorSign::minus, GeneratorSign::plus})
    for (double theta : {-1.3, -0.2, 0.0, 0.4, 2.9}) {
      const oracle::CMat g = dense_generator(2, 1, 0, sign);  // qubit i is the high bit of the 4x4 index
      const oracle::CMat expected = (oracle::cplx(0, -theta) * g).exp();
      const Gate4 u = entangler_gate(theta, sign);
      EXPECT_LT((oracle::CMat(u) - expected).norm(), 1e-13);
      EXPECT_LT((u * u.adjoint() - Gate4::Identity()).norm(), 1e-13);
    }
}

TEST(EntanglerGate, MinusGeneratorGivesRealRotation) {
  const Gate4 u = entangler_gate(0.73, GeneratorSign::minus);
  EXPECT_LT(u.imag().norm(), 1e-14);
}

TEST(StateVector, TwoQubitGateMatchesDenseOperator) {
  std::mt19937_64 rng(9);
  const int n = 4;
  for (int trial = 0; trial < 12; ++trial) {
    const int i = static_cast<int>(rng() % n);
    int j = static_cast<int>(rng() % n);
    if (j == i) j = (i + 1) % n;
    const double theta = 0.1 * trial - 0.5;
    StateVector psi(n);
    apply_entangler(psi, 0, 1, 0.3);
    apply_entangler(psi, 2, 3, -0.7);
    apply_entangler(psi, 1, 2, 0.9);
    Eigen::VectorXcd v = Eigen::Map<const Eigen::VectorXcd>(psi.amplitudes().data(), 16);
    apply_entangler(psi, i, j, theta);
    v = (oracle::cplx(0, -theta) * dense_generator(n, i, j, GeneratorSign::minus)).exp() * v;
    for (Eigen::Index b = 0; b < 16; ++b) ASSERT_LT(std::abs(psi[static_cast<std::size_t>(b)] - v(b)), 1e-13);
  }
}

TEST(StateVector, Limits) {
  EXPECT_THROW(StateVector(27), ResourceError);
  EXPECT_THROW(StateVector(0), ResourceError);
  StateVector psi(3);
  EXPECT_THROW(psi.apply_two_qubit(1, 1, Gate4::Identity()), DomainError);
  EXPECT_THROW(psi.apply_two_qubit(0, 3, Gate4::Identity()), DimensionError);
}

TEST(StateVector, BinaryDumpLayout) {
  StateVector psi(2);
  std::ostringstream os;
  psi.dump_binary(os);
  const std::string bytes = os.str();
  ASSERT_EQ(bytes.size(), 4u * 8u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[2]), 0x80u);  // 1.0f = 0x3F800000 little-endian
  EXPECT_EQ(static_cast<unsigned char>(bytes[3]), 0x3Fu);
  EXPECT_EQ(bytes.substr(4), std::string(28, '\0'));
}

TEST(Ansatz, BondLayout) {
  EntanglerAnsatz a{6};
  EXPECT_EQ(a.bonds(0), (std::vector<std::pair<int, int>>{{0, 1}, {2, 3}, {4, 5}}));
  EXPECT_EQ(a.bonds(1), (std::vector<std::pair<int, int>>{{1, 2}, {3, 4}, {5, 0}}));
  EXPECT_THROW((EntanglerAnsatz{5}.validate()), DomainError);
}

TEST(Ansatz, StateMatchesGateByGateDenseEvolution) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (int n : {4, 6}) {
    for (auto sign : {GeneratorSign::minus, GeneratorSign::plus}) {
      const EntanglerAnsatz a{n, sign};
      const std::vector<double> p{u(rng), u(rng), u(rng), u(rng)};
      const auto psi = prepare_ansatz_state(a, p);
      const auto v = dense_ansatz_state(a, p);
      for (Eigen::Index b = 0; b < v.size(); ++b) ASSERT_LT(std::abs(psi[static_cast<std::size_t>(b)] - v(b)), 1e-12);
    }
  }
}

TEST(Ansatz, AnglesArePeriodicInPi) {
  const auto h = build_ising_hamiltonian(6, 1.0, 0.9, 0.4);
  for (auto sign : {GeneratorSign::minus, GeneratorSign::plus}) {
    const EntanglerAnsatz a{6, sign};
    const std::vector<double> p{5.2, -0.99, 0.96, 124.7};
    const auto c = EntanglerAnsatz::canonical(p);
    for (double t : c) {
      EXPECT_GE(t, -EntanglerAnsatz::kPeriod / 2);
      EXPECT_LT(t, EntanglerAnsatz::kPeriod / 2);
    }
    // dense oracle at the raw angles against the fast path at the reduced ones
    const auto v = dense_ansatz_state(a, p);
    const oracle::CMat hm = dense_hamiltonian(h);
    EXPECT_NEAR(expectation(prepare_ansatz_state(a, c), h), v.dot(hm * v).real(), 1e-10);
  }
}

TEST(Ansatz, EnergyMatchesDenseExpectation) {
  const auto h = build_ising_hamiltonian(6, 1.0, 0.75, 0.25);
  const oracle::CMat hm = dense_hamiltonian(h);
  const EntanglerAnsatz a{6};
  const std::vector<double> p{0.3, -0.2, 0.8, 0.1};
  const auto v = dense_ansatz_state(a, p);
  EXPECT_NEAR(expectation(prepare_ansatz_state(a, p), h), v.dot(hm * v).real(), 1e-12);
  EXPECT_THROW(prepare_ansatz_state(a, std::vector<double>{0.1, 0.2}), DimensionError);
}

TEST(ExactGround, DenseRangeMatchesEigenSolver) {
  const auto h = build_ising_hamiltonian(6, 1.0, 0.75, 0.25);
  EXPECT_NEAR(exact_ground_energy(h), oracle::lowest_eigenvalue(dense_hamiltonian(h)), 1e-10);
}

TEST(ExactGround, MatchesPowerIterationAtEightSites) {
  const auto h = build_ising_hamiltonian(8, 1.0, 0.75, 0.25);
  EXPECT_NEAR(exact_ground_energy(h), oracle::power_iteration_ground(dense_hamiltonian(h)), 1e-8);
}

TEST(ExactGround, LanczosRangeMatchesDirectMatrix) {
  const int n = 11;
  const auto h = build_ising_hamiltonian(n, 1.0, 0.75, 0.25);
  const Eigen::MatrixXd m = real_ising_matrix(n, 1.0, 0.75, 0.25);
  const double expected = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(m, Eigen::EigenvaluesOnly).eigenvalues()(0);
  EXPECT_NEAR(exact_ground_energy(h), expected, 1e-9);
}

TEST(ExactGround, TooLarge) {
  EXPECT_THROW(exact_ground_energy(build_ising_hamiltonian(17, 1.0, 0.0, 1.0)), ResourceError);
}
