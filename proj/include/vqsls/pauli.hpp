#pragma once

// Pauli-string algebra, qubit Hamiltonians, SortedInsertion measurement
// grouping and shot-count estimates.

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <limits>
#include <locale>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "vqsls/common.hpp"

namespace vqsls {

enum class PauliAxis : std::uint8_t { I = 0, X = 1, Y = 2, Z = 3 };

inline char to_char(PauliAxis a) { return "IXYZ"[static_cast<int>(a)]; }

/// Tensor product of single-qubit Paulis on up to 64 qubits, stored in the
/// symplectic (x, z) bit representation. Qubit k is bit k; Y has both bits set.
class PauliString {
 public:
  static constexpr int kMaxQubits = 64;

  PauliString() = default;

  explicit PauliString(int n_qubits) : n_(n_qubits) { check_size(n_qubits); }

  PauliString(int n_qubits, std::uint64_t x, std::uint64_t z) : n_(n_qubits), x_(x), z_(z) {
    check_size(n_qubits);
    if (n_qubits < kMaxQubits && ((x | z) >> n_qubits) != 0)
      throw DimensionError("PauliString: mask bits beyond n_qubits");
  }

  /// Parses an axis string such as "XIZY"; character k acts on qubit k.
  static PauliString from_string(std::string_view axes) {
    PauliString p(static_cast<int>(axes.size()));
    for (std::size_t k = 0; k < axes.size(); ++k) {
      switch (axes[k]) {
        case 'I': break;
        case 'X': p.set(static_cast<int>(k), PauliAxis::X); break;
        case 'Y': p.set(static_cast<int>(k), PauliAxis::Y); break;
        case 'Z': p.set(static_cast<int>(k), PauliAxis::Z); break;
        default: throw DomainError(std::string("invalid Pauli axis '") + axes[k] + "'");
      }
    }
    return p;
  }

  int n_qubits() const noexcept { return n_; }
  std::uint64_t x_mask() const noexcept { return x_; }
  std::uint64_t z_mask() const noexcept { return z_; }

  PauliAxis axis(int q) const {
    const auto bx = (x_ >> q) & 1U, bz = (z_ >> q) & 1U;
    if (bx && bz) return PauliAxis::Y;
    if (bx) return PauliAxis::X;
    if (bz) return PauliAxis::Z;
    return PauliAxis::I;
  }

  void set(int q, PauliAxis a) {
    if (q < 0 || q >= n_) throw DimensionError("PauliString::set: qubit out of range");
    const std::uint64_t bit = std::uint64_t{1} << q;
    x_ &= ~bit;
    z_ &= ~bit;
    if (a == PauliAxis::X || a == PauliAxis::Y) x_ |= bit;
    if (a == PauliAxis::Z || a == PauliAxis::Y) z_ |= bit;
  }

  std::vector<PauliAxis> axes() const {
    std::vector<PauliAxis> out(static_cast<std::size_t>(n_));
    for (int q = 0; q < n_; ++q) out[static_cast<std::size_t>(q)] = axis(q);
    return out;
  }

  std::string str() const {
    std::string s(static_cast<std::size_t>(n_), 'I');
    for (int q = 0; q < n_; ++q) s[static_cast<std::size_t>(q)] = to_char(axis(q));
    return s;
  }

  /// Number of non-identity positions.
  int weight() const noexcept { return std::popcount(x_ | z_); }
  bool is_identity() const noexcept { return (x_ | z_) == 0; }

  /// Action on a computational basis state: P|b> = phase * |b ^ x>.
  std::pair<std::uint64_t, std::complex<double>> apply(std::uint64_t basis) const noexcept {
    static constexpr std::complex<double> kIPow[4] = {{1, 0}, {0, 1}, {-1, 0}, {0, -1}};
    int e = std::popcount(x_ & z_) + 2 * std::popcount(basis & z_);
    return {basis ^ x_, kIPow[e & 3]};
  }

  /// Lexicographic order over the axis sequence, qubit 0 most significant,
  /// with I < X < Y < Z.
  friend bool operator<(const PauliString& a, const PauliString& b) {
    if (a.n_ != b.n_) return a.n_ < b.n_;
    for (int q = 0; q < a.n_; ++q) {
      const auto pa = a.axis(q), pb = b.axis(q);
      if (pa != pb) return pa < pb;
    }
    return false;
  }
  friend bool operator==(const PauliString& a, const PauliString& b) {
    return a.n_ == b.n_ && a.x_ == b.x_ && a.z_ == b.z_;
  }

 private:
  static void check_size(int n) {
    if (n <= 0 || n > kMaxQubits) throw DimensionError("PauliString: n_qubits must be in [1, 64]");
  }

  int n_ = 0;
  std::uint64_t x_ = 0;
  std::uint64_t z_ = 0;
};

/// Full commutation test: P and Q commute iff they anticommute on an even
/// number of qubits.
inline bool commutes(const PauliString& p, const PauliString& q) {
  if (p.n_qubits() != q.n_qubits()) throw DimensionError("commutes: qubit counts differ");
  const auto anti = (p.x_mask() & q.z_mask()) ^ (p.z_mask() & q.x_mask());
  return std::popcount(anti) % 2 == 0;
}

/// Product p*q = phase * r with phase in {1, i, -1, -i}.
inline std::pair<std::complex<double>, PauliString> multiply(const PauliString& p, const PauliString& q) {
  if (p.n_qubits() != q.n_qubits()) throw DimensionError("multiply: qubit counts differ");
  int e = 0;
  for (int k = 0; k < p.n_qubits(); ++k) {
    const int x1 = (p.x_mask() >> k) & 1, z1 = (p.z_mask() >> k) & 1;
    const int x2 = (q.x_mask() >> k) & 1, z2 = (q.z_mask() >> k) & 1;
    if (x1 && z1) e += z2 - x2;
    else if (x1) e += z2 * (2 * x2 - 1);
    else if (z1) e += x2 * (1 - 2 * z2);
  }
  static constexpr std::complex<double> kIPow[4] = {{1, 0}, {0, 1}, {-1, 0}, {0, -1}};
  return {kIPow[((e % 4) + 4) % 4],
          PauliString(p.n_qubits(), p.x_mask() ^ q.x_mask(), p.z_mask() ^ q.z_mask())};
}

struct PauliTerm {
  double coefficient = 0.0;
  PauliString string;
};

/// Real-weighted sum of Pauli strings. Terms with identical strings are
/// merged and terms whose merged magnitude is <= prune_tol are dropped.
/// Terms are kept in first-appearance order.
class PauliHamiltonian {
 public:
  PauliHamiltonian() = default;

  PauliHamiltonian(int n_qubits, const std::vector<PauliTerm>& terms, double prune_tol = 0.0)
      : n_(n_qubits) {
    if (n_qubits <= 0 || n_qubits > PauliString::kMaxQubits)
      throw DimensionError("PauliHamiltonian: n_qubits must be in [1, 64]");
    std::map<std::pair<std::uint64_t, std::uint64_t>, std::size_t> index;
    for (const auto& t : terms) {
      if (t.string.n_qubits() != n_qubits) throw DimensionError("PauliHamiltonian: term qubit count mismatch");
      if (!std::isfinite(t.coefficient)) throw DomainError("PauliHamiltonian: non-finite coefficient");
      const auto key = std::make_pair(t.string.x_mask(), t.string.z_mask());
      if (auto it = index.find(key); it != index.end()) {
        terms_[it->second].coefficient += t.coefficient;
      } else {
        index.emplace(key, terms_.size());
        terms_.push_back(t);
      }
    }
    std::erase_if(terms_, [&](const PauliTerm& t) { return std::abs(t.coefficient) <= prune_tol; });
  }

  int n_qubits() const noexcept { return n_; }
  const std::vector<PauliTerm>& terms() const noexcept { return terms_; }
  std::size_t size() const noexcept { return terms_.size(); }
  bool empty() const noexcept { return terms_.empty(); }

  /// Coefficient of the all-identity term (0 if absent).
  double identity_coefficient() const {
    for (const auto& t : terms_)
      if (t.string.is_identity()) return t.coefficient;
    return 0.0;
  }

  /// Sum of |a_i| over the non-identity terms.
  double one_norm() const {
    double s = 0.0;
    for (const auto& t : terms_)
      if (!t.string.is_identity()) s += std::abs(t.coefficient);
    return s;
  }

 private:
  int n_ = 0;
  std::vector<PauliTerm> terms_;
};

/// J1 sum Z_i Z_{i+1} + J2 sum Z_i Z_{i+2} + ht sum X_i on a periodic ring.
inline PauliHamiltonian build_ising_hamiltonian(int n_sites, double j1, double j2, double ht) {
  if (n_sites < 4) throw DomainError("build_ising_hamiltonian: n_sites must be >= 4");
  std::vector<PauliTerm> terms;
  auto zz = [&](int a, int b) {
    PauliString p(n_sites);
    p.set(a, PauliAxis::Z);
    p.set(b, PauliAxis::Z);
    return p;
  };
  for (int i = 0; i < n_sites; ++i) terms.push_back({j1, zz(i, (i + 1) % n_sites)});
  for (int i = 0; i < n_sites; ++i) terms.push_back({j2, zz(i, (i + 2) % n_sites)});
  for (int i = 0; i < n_sites; ++i) {
    PauliString p(n_sites);
    p.set(i, PauliAxis::X);
    terms.push_back({ht, p});
  }
  return PauliHamiltonian(n_sites, terms);
}

struct MeasurementGrouping {
  /// Each group lists indices into PauliHamiltonian::terms().
  std::vector<std::vector<std::size_t>> groups;
  double r_hat = 1.0;
};

/// Ratio of the ungrouped one-norm to the sum of per-group two-norms,
/// squared. The shot estimate under a grouping is shots_ungrouped / r_hat.
inline double r_hat(const MeasurementGrouping& grouping, const PauliHamiltonian& h) {
  if (grouping.groups.empty()) throw DomainError("r_hat: empty grouping");
  double num = 0.0, den = 0.0;
  for (const auto& g : grouping.groups) {
    double sq = 0.0;
    for (auto idx : g) {
      if (idx >= h.size()) throw DimensionError("r_hat: term index out of range");
      const double a = h.terms()[idx].coefficient;
      num += std::abs(a);
      sq += a * a;
    }
    den += std::sqrt(sq);
  }
  if (den == 0.0) throw DomainError("r_hat: all grouped coefficients are zero");
  return (num / den) * (num / den);
}

/// Greedy SortedInsertion: terms by descending |a| (ties broken by
/// lexicographic string order) go into the first group they fully commute
/// with. The identity term is excluded.
inline MeasurementGrouping sorted_insertion(const PauliHamiltonian& h) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < h.size(); ++i)
    if (!h.terms()[i].string.is_identity()) order.push_back(i);
  if (order.empty()) throw DomainError("sorted_insertion: no non-identity terms");
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double ca = std::abs(h.terms()[a].coefficient), cb = std::abs(h.terms()[b].coefficient);
    if (ca != cb) return ca > cb;
    return h.terms()[a].string < h.terms()[b].string;
  });

  MeasurementGrouping out;
  for (auto idx : order) {
    const auto& p = h.terms()[idx].string;
    bool placed = false;
    for (auto& g : out.groups) {
      const bool ok = std::all_of(g.begin(), g.end(),
                                  [&](std::size_t j) { return commutes(p, h.terms()[j].string); });
      if (ok) {
        g.push_back(idx);
        placed = true;
        break;
      }
    }
    if (!placed) out.groups.push_back({idx});
  }
  out.r_hat = r_hat(out, h);
  return out;
}

enum class VarianceFormula {
  exact,  ///< 1 - <P>^2
  linear,  ///< 1 - <P>; exceeds 1 for negative <P>
};

inline double pauli_variance(double expectation, VarianceFormula f = VarianceFormula::exact) {
  const double e = std::clamp(expectation, -1.0, 1.0);
  return f == VarianceFormula::exact ? 1.0 - e * e : 1.0 - e;
}

/// Worst-case shots when every term is measured separately:
/// (sum_i |a_i| sqrt(var_i))^2 / eps^2. `var` is indexed like h.terms();
/// the identity term contributes nothing.
inline double shots_ungrouped(const PauliHamiltonian& h, const std::vector<double>& var, double epsilon) {
  if (!(epsilon > 0.0)) throw DomainError("shots_ungrouped: epsilon must be positive");
  if (var.size() != h.size()) throw DimensionError("shots_ungrouped: variance vector length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    if (h.terms()[i].string.is_identity()) continue;
    if (!(var[i] >= 0.0) || !std::isfinite(var[i])) throw DomainError("shots_ungrouped: invalid variance");
    s += std::abs(h.terms()[i].coefficient) * std::sqrt(var[i]);
  }
  return s * s / (epsilon * epsilon);
}

// Text format: one `coefficient<TAB>axes` per line, '#' starts a comment.

inline void write_hamiltonian(std::ostream& os, const PauliHamiltonian& h) {
  std::ostringstream line;
  line.imbue(std::locale::classic());
  line << std::setprecision(17);
  for (const auto& t : h.terms()) line << t.coefficient << '\t' << t.string.str() << '\n';
  os << line.str();
}

inline PauliHamiltonian read_hamiltonian(std::istream& is) {
  std::vector<PauliTerm> terms;
  int n = -1;
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(is, raw)) {
    ++lineno;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    std::istringstream ls(raw);
    ls.imbue(std::locale::classic());
    double c;
    std::string axes;
    if (!(ls >> c)) {
      if (raw.find_first_not_of(" \t\r") == std::string::npos) continue;
      throw ParseError("expected numeric coefficient", lineno);
    }
    if (!(ls >> axes)) throw ParseError("missing axes string", lineno);
    if (n < 0) n = static_cast<int>(axes.size());
    if (static_cast<int>(axes.size()) != n) throw ParseError("inconsistent qubit count", lineno);
    try {
      terms.push_back({c, PauliString::from_string(axes)});
    } catch (const Error& e) {
      throw ParseError(e.what(), lineno);
    }
  }
  if (n < 0) throw ParseError("no terms", lineno);
  return PauliHamiltonian(n, terms);
}

}  // namespace vqsls
