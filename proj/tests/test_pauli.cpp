#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "oracles.hpp"
#include "vqsls/pauli.hpp"

using namespace vqsls;

namespace {

std::string axes_of(int code, int n) {
  std::string s;
  for (int k = 0; k < n; ++k, code /= 4) s += "IXYZ"[code % 4];
  return s;
}

PauliHamiltonian random_hamiltonian(std::mt19937_64& rng, int n, int n_terms) {
  std::uniform_int_distribution<int> axis(0, 3);
  std::uniform_real_distribution<double> coef(-1.0, 1.0);
  std::vector<PauliTerm> terms;
  for (int t = 0; t < n_terms; ++t) {
    std::string s;
    for (int k = 0; k < n; ++k) s += "IXYZ"[axis(rng)];
    terms.push_back({coef(rng), PauliString::from_string(s)});
  }
  return PauliHamiltonian(n, terms);
}

}  // namespace

TEST(PauliString, ParsesAndPrints) {
  const auto p = PauliString::from_string("XIZY");
  EXPECT_EQ(p.n_qubits(), 4);
  EXPECT_EQ(p.str(), "XIZY");
  EXPECT_EQ(p.weight(), 3);
  EXPECT_EQ(p.axis(3), PauliAxis::Y);
  EXPECT_THROW(PauliString::from_string("XQ"), DomainError);
  EXPECT_THROW(PauliString(65), DimensionError);
  EXPECT_THROW(PauliString(0), DimensionError);
}

TEST(PauliString, CommutationExamples) {
  EXPECT_TRUE(commutes(PauliString::from_string("XX"), PauliString::from_string("ZZ")));
  EXPECT_FALSE(commutes(PauliString::from_string("XI"), PauliString::from_string("ZI")));
  EXPECT_TRUE(commutes(PauliString::from_string("XYZ"), PauliString::from_string("XYZ")));
  EXPECT_THROW(commutes(PauliString(2), PauliString(3)), DimensionError);
}

TEST(PauliString, CommutationMatchesDenseCommutator) {
  for (int n = 1; n <= 3; ++n) {
    const int count = 1 << (2 * n);
    for (int a = 0; a < count; ++a)
      for (int b = 0; b < count; ++b) {
        const auto sa = axes_of(a, n), sb = axes_of(b, n);
        const auto ma = oracle::pauli_string(sa), mb = oracle::pauli_string(sb);
        const bool dense = (ma * mb - mb * ma).norm() < 1e-12;
        ASSERT_EQ(commutes(PauliString::from_string(sa), PauliString::from_string(sb)), dense) << sa << " " << sb;
      }
  }
}

TEST(PauliString, ProductMatchesDenseProduct) {
  const int n = 3;
  for (int a = 0; a < 64; ++a)
    for (int b = 0; b < 64; ++b) {
      const auto sa = axes_of(a, n), sb = axes_of(b, n);
      const auto [phase, r] = multiply(PauliString::from_string(sa), PauliString::from_string(sb));
      const oracle::CMat expected = oracle::pauli_string(sa) * oracle::pauli_string(sb);
      ASSERT_LT((phase * oracle::pauli_string(r.str()) - expected).norm(), 1e-12) << sa << " " << sb;
    }
}

TEST(PauliString, BasisActionMatchesDenseMatrix) {
  for (int code = 0; code < 64; ++code) {
    const auto s = axes_of(code, 3);
    const auto p = PauliString::from_string(s);
    const auto m = oracle::pauli_string(s);
    for (std::uint64_t b = 0; b < 8; ++b) {
      const auto [target, phase] = p.apply(b);
      ASSERT_LT(std::abs(m(static_cast<Eigen::Index>(target), static_cast<Eigen::Index>(b)) - phase), 1e-14);
    }
  }
}

TEST(PauliHamiltonian, MergesAndPrunes) {
  PauliHamiltonian h(2, {{0.5, PauliString::from_string("XX")},
                         {0.25, PauliString::from_string("XX")},
                         {1e-14, PauliString::from_string("ZI")},
                         {-2.0, PauliString::from_string("II")}},
                     1e-12);
  ASSERT_EQ(h.size(), 2u);
  EXPECT_DOUBLE_EQ(h.terms()[0].coefficient, 0.75);
  EXPECT_DOUBLE_EQ(h.identity_coefficient(), -2.0);
  EXPECT_DOUBLE_EQ(h.one_norm(), 0.75);
  EXPECT_THROW(PauliHamiltonian(3, {{1.0, PauliString(2)}}), DimensionError);
}

TEST(IsingModel, TermCountAndCoefficients) {
  const auto h = build_ising_hamiltonian(40, 1.0, 0.75, 0.25);
  EXPECT_EQ(h.size(), 120u);
  int zz1 = 0, zz2 = 0, x = 0;
  for (const auto& t : h.terms()) {
    if (t.string.weight() == 1) {
      ++x;
      EXPECT_EQ(t.coefficient, 0.25);
    } else if (t.coefficient == 1.0) {
      ++zz1;
    } else if (t.coefficient == 0.75) {
      ++zz2;
    }
  }
  EXPECT_EQ(zz1, 40);
  EXPECT_EQ(zz2, 40);
  EXPECT_EQ(x, 40);
  EXPECT_EQ(build_ising_hamiltonian(4, 1.0, 0.0, 0.0).size(), 4u);
  EXPECT_THROW(build_ising_hamiltonian(3, 1.0, 0.0, 0.0), DomainError);
}

TEST(IsingModel, DenseMatrixMatchesKroneckerConstruction) {
  const int n = 6;
  const double j1 = 1.0, j2 = 0.75, ht = 0.25;
  const auto h = build_ising_hamiltonian(n, j1, j2, ht);
  oracle::CMat dense = oracle::CMat::Zero(64, 64);
  for (int i = 0; i < n; ++i) {
    std::string zz1(n, 'I'), zz2(n, 'I'), xi(n, 'I');
    zz1[i] = zz1[(i + 1) % n] = 'Z';
    zz2[i] = zz2[(i + 2) % n] = 'Z';
    xi[i] = 'X';
    dense += j1 * oracle::pauli_string(zz1) + j2 * oracle::pauli_string(zz2) + ht * oracle::pauli_string(xi);
  }
  oracle::CMat from_terms = oracle::CMat::Zero(64, 64);
  for (const auto& t : h.terms()) from_terms += t.coefficient * oracle::pauli_string(t.string.str());
  EXPECT_LT((dense - from_terms).norm(), 1e-12);
}

TEST(SortedInsertion, SmallExample) {
  PauliHamiltonian h(2, {{1.0, PauliString::from_string("ZZ")},
                         {0.5, PauliString::from_string("XX")},
                         {0.3, PauliString::from_string("XI")}});
  const auto g = sorted_insertion(h);
  ASSERT_EQ(g.groups.size(), 2u);
  EXPECT_EQ(g.groups[0], (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(g.groups[1], (std::vector<std::size_t>{2}));
  const double expected = std::pow(1.8 / (std::sqrt(1.25) + 0.3), 2);
  EXPECT_NEAR(g.r_hat, expected, 1e-14);
}

TEST(SortedInsertion, SingleTermAndIdentityOnly) {
  PauliHamiltonian one(2, {{0.7, PauliString::from_string("XZ")}, {3.0, PauliString::from_string("II")}});
  const auto g = sorted_insertion(one);
  ASSERT_EQ(g.groups.size(), 1u);
  EXPECT_DOUBLE_EQ(g.r_hat, 1.0);
  PauliHamiltonian id(2, {{3.0, PauliString::from_string("II")}});
  EXPECT_THROW(sorted_insertion(id), DomainError);
}

TEST(SortedInsertion, GroupsArePartitionOfCommutingSets) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 40; ++trial) {
    const auto h = random_hamiltonian(rng, 5, 30);
    const auto g = sorted_insertion(h);
    std::vector<int> seen(h.size(), 0);
    for (const auto& grp : g.groups)
      for (auto i : grp) {
        ++seen[i];
        for (auto j : grp) ASSERT_TRUE(commutes(h.terms()[i].string, h.terms()[j].string));
      }
    for (std::size_t i = 0; i < h.size(); ++i) EXPECT_EQ(seen[i], h.terms()[i].string.is_identity() ? 0 : 1);
    EXPECT_GE(g.r_hat, 1.0 - 1e-12);
  }
}

TEST(SortedInsertion, RHatForSingletonGroupingIsOne) {
  std::mt19937_64 rng(11);
  const auto h = random_hamiltonian(rng, 4, 12);
  MeasurementGrouping singles;
  for (std::size_t i = 0; i < h.size(); ++i)
    if (!h.terms()[i].string.is_identity()) singles.groups.push_back({i});
  EXPECT_NEAR(r_hat(singles, h), 1.0, 1e-14);
}

TEST(ShotEstimate, Examples) {
  PauliHamiltonian h(1, {{1.0, PauliString::from_string("Z")}});
  EXPECT_NEAR(shots_ungrouped(h, {1.0}, 1e-2), 1e4, 1e-6);
  EXPECT_DOUBLE_EQ(shots_ungrouped(h, {0.0}, 1e-2), 0.0);
  EXPECT_THROW(shots_ungrouped(h, {1.0}, 0.0), DomainError);
  EXPECT_THROW(shots_ungrouped(h, {-1.0}, 1e-2), DomainError);
  EXPECT_THROW(shots_ungrouped(h, {1.0, 1.0}, 1e-2), DimensionError);
}

TEST(ShotEstimate, ScalesAsInverseSquareOfEpsilon) {
  std::mt19937_64 rng(3);
  const auto h = random_hamiltonian(rng, 4, 15);
  std::vector<double> var(h.size());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& v : var) v = u(rng);
  const double base = shots_ungrouped(h, var, 1e-3);
  EXPECT_NEAR(shots_ungrouped(h, var, 1e-4) / base, 1e2, 1e-9);
  EXPECT_NEAR(shots_ungrouped(h, var, 1e-5) / base, 1e4, 1e-7);
}

TEST(ShotEstimate, VarianceFormulas) {
  EXPECT_DOUBLE_EQ(pauli_variance(0.5), 0.75);
  EXPECT_DOUBLE_EQ(pauli_variance(0.5, VarianceFormula::linear), 0.5);
  EXPECT_DOUBLE_EQ(pauli_variance(1.0), 0.0);
  EXPECT_DOUBLE_EQ(pauli_variance(-1.0, VarianceFormula::linear), 2.0);
}

TEST(HamiltonianText, RoundTrip) {
  std::mt19937_64 rng(5);
  const auto h = random_hamiltonian(rng, 6, 20);
  std::stringstream ss;
  write_hamiltonian(ss, h);
  const auto back = read_hamiltonian(ss);
  ASSERT_EQ(back.size(), h.size());
  for (std::size_t i = 0; i < h.size(); ++i) {
    EXPECT_EQ(back.terms()[i].string, h.terms()[i].string);
    EXPECT_EQ(back.terms()[i].coefficient, h.terms()[i].coefficient);
  }
}

TEST(HamiltonianText, ReportsLineOfBadInput) {
  std::istringstream bad("# comment\n1.0\tXZ\n0.5\tXQ\n");
  try {
    read_hamiltonian(bad);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  std::istringstream ragged("1.0\tXZ\n0.5\tXZI\n");
  EXPECT_THROW(read_hamiltonian(ragged), ParseError);
}
