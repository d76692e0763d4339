#pragma once

// Sparse wavefunction simulator: factorized UCCSD over Slater determinants
// with N_CUT / N_MAX truncation and Slater-Condon energies.
//
// Spin orbitals are ordered alpha block first, then beta block, each in
// ascending spatial index: (p, alpha) -> p, (p, beta) -> n_orb + p. All
// fermionic signs follow from that ordering.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>

#include "vqsls/chem.hpp"
#include "vqsls/common.hpp"

namespace vqsls {

enum class Spin : std::uint8_t { alpha = 0, beta = 1 };

struct Determinant {
  std::uint64_t alpha = 0;
  std::uint64_t beta = 0;

  /// Qubit bitstring: alpha bits low, beta bits shifted by n_orb.
  std::uint64_t bits(int n_orb) const noexcept { return alpha | (beta << n_orb); }
  static Determinant from_bits(std::uint64_t b, int n_orb) noexcept {
    const std::uint64_t mask = (std::uint64_t{1} << n_orb) - 1;
    return {b & mask, b >> n_orb};
  }
  int n_electrons() const noexcept { return std::popcount(alpha) + std::popcount(beta); }

  /// Ascending bit-pattern order (beta block is more significant).
  friend bool operator<(const Determinant& a, const Determinant& b) noexcept {
    return std::tie(a.beta, a.alpha) < std::tie(b.beta, b.alpha);
  }
  friend bool operator==(const Determinant& a, const Determinant& b) noexcept = default;
};

/// Closed-shell aufbau determinant.
inline Determinant reference_determinant(int n_elec) {
  const std::uint64_t occ = (std::uint64_t{1} << (n_elec / 2)) - 1;
  return {occ, occ};
}

class SparseWavefunction {
 public:
  using Map = std::map<Determinant, double>;

  SparseWavefunction() = default;
  SparseWavefunction(int n_orb, int n_elec) : n_orb_(n_orb), n_elec_(n_elec) {}
  SparseWavefunction(int n_orb, int n_elec, Determinant d) : n_orb_(n_orb), n_elec_(n_elec) { amps_[d] = 1.0; }

  int n_orb() const noexcept { return n_orb_; }
  int n_elec() const noexcept { return n_elec_; }
  std::size_t size() const noexcept { return amps_.size(); }
  const Map& amplitudes() const noexcept { return amps_; }

  double amplitude(const Determinant& d) const {
    auto it = amps_.find(d);
    return it == amps_.end() ? 0.0 : it->second;
  }
  void set(const Determinant& d, double v) {
    if (v == 0.0) amps_.erase(d);
    else amps_[d] = v;
  }

  double norm() const {
    double s = 0.0;
    for (const auto& [d, c] : amps_) s += c * c;
    return std::sqrt(s);
  }
  void scale(double f) {
    for (auto& [d, c] : amps_) c *= f;
  }

  /// `bitstring amplitude` lines; character k of the bitstring is qubit k.
  void dump(std::ostream& os) const {
    char buf[64];
    for (const auto& [d, c] : amps_) {
      const auto b = d.bits(n_orb_);
      std::string s(static_cast<std::size_t>(2 * n_orb_), '0');
      for (int k = 0; k < 2 * n_orb_; ++k)
        if ((b >> k) & 1U) s[static_cast<std::size_t>(k)] = '1';
      std::snprintf(buf, sizeof buf, " %.17g\n", c);
      os << s << buf;
    }
  }

 private:
  int n_orb_ = 0;
  int n_elec_ = 0;
  Map amps_;
};

struct SpinOrbital {
  int orb = 0;
  Spin spin = Spin::alpha;
  int index(int n_orb) const noexcept { return orb + (spin == Spin::beta ? n_orb : 0); }
  friend bool operator==(const SpinOrbital&, const SpinOrbital&) = default;
};

enum class ExcitationKind : std::uint8_t { single, double_ };

/// exp[theta (T - T^dagger)] with T = a+_a a_i (single) or
/// a+_a a+_b a_j a_i (double).
struct UccFactor {
  ExcitationKind kind = ExcitationKind::single;
  std::vector<SpinOrbital> occ;   ///< (i) or (i, j)
  std::vector<SpinOrbital> virt;  ///< (a) or (a, b)
  int param_index = 0;
  double guess = 0.0;  ///< initial value from the MP2 guess

  void validate(int n_orb) const {
    const std::size_t rank = kind == ExcitationKind::single ? 1 : 2;
    if (occ.size() != rank || virt.size() != rank) throw DomainError("UccFactor: wrong index count");
    std::vector<int> all;
    for (const auto* set : {&occ, &virt})
      for (const auto& so : *set) {
        if (so.orb < 0 || so.orb >= n_orb) throw DomainError("UccFactor: orbital index out of range");
        all.push_back(so.index(n_orb));
      }
    std::sort(all.begin(), all.end());
    if (std::adjacent_find(all.begin(), all.end()) != all.end())
      throw DomainError("UccFactor: repeated spin orbital");
    int spin_balance = 0;
    for (const auto& so : occ) spin_balance += so.spin == Spin::alpha ? 1 : -1;
    for (const auto& so : virt) spin_balance -= so.spin == Spin::alpha ? 1 : -1;
    if (spin_balance != 0) throw DomainError("UccFactor: excitation does not conserve spin");
  }
};

namespace detail {

// Applies the operator string (rightmost first) to a bitstring; returns the
// result and its fermionic sign, or nothing if the string annihilates it.
struct LadderOp {
  int so;
  bool create;
};

inline std::optional<std::pair<std::uint64_t, int>> apply_ops(std::uint64_t key, std::initializer_list<LadderOp> ops) {
  int sign = 1;
  const LadderOp* begin = ops.begin();
  for (const LadderOp* op = ops.end(); op != begin;) {
    --op;
    const std::uint64_t bit = std::uint64_t{1} << op->so;
    const bool occupied = (key & bit) != 0;
    if (occupied == op->create) return std::nullopt;
    if (std::popcount(key & (bit - 1)) & 1) sign = -sign;
    key ^= bit;
  }
  return std::make_pair(key, sign);
}

inline std::optional<std::pair<std::uint64_t, int>> excite(std::uint64_t key, const UccFactor& f, int n_orb) {
  const int i = f.occ[0].index(n_orb), a = f.virt[0].index(n_orb);
  if (f.kind == ExcitationKind::single) return apply_ops(key, {{a, true}, {i, false}});
  const int j = f.occ[1].index(n_orb), b = f.virt[1].index(n_orb);
  return apply_ops(key, {{a, true}, {b, true}, {j, false}, {i, false}});
}

inline std::optional<std::pair<std::uint64_t, int>> deexcite(std::uint64_t key, const UccFactor& f, int n_orb) {
  const int i = f.occ[0].index(n_orb), a = f.virt[0].index(n_orb);
  if (f.kind == ExcitationKind::single) return apply_ops(key, {{i, true}, {a, false}});
  const int j = f.occ[1].index(n_orb), b = f.virt[1].index(n_orb);
  return apply_ops(key, {{i, true}, {j, true}, {b, false}, {a, false}});
}

}  // namespace detail

/// Applies one UCC factor exactly: every connected determinant pair
/// (D, D' = T D) is rotated by the 2x2 Givens rotation
///   c_D  <- cos(t) c_D - s sin(t) c_D'
///   c_D' <- s sin(t) c_D + cos(t) c_D'
/// where s is the fermionic sign of T on D.
inline SparseWavefunction apply_factor(const SparseWavefunction& psi, const UccFactor& f, double theta) {
  f.validate(psi.n_orb());
  if (theta == 0.0) return psi;
  const int n = psi.n_orb();
  const double c = std::cos(theta), s = std::sin(theta);
  SparseWavefunction out = psi;
  for (const auto& [d, amp] : psi.amplitudes()) {
    const auto key = d.bits(n);
    if (auto fwd = detail::excite(key, f, n)) {
      const auto target = Determinant::from_bits(fwd->first, n);
      const double sign = fwd->second;
      const double ct = psi.amplitude(target);
      out.set(d, c * amp - sign * s * ct);
      out.set(target, sign * s * amp + c * ct);
    } else if (auto back = detail::deexcite(key, f, n)) {
      const auto source = Determinant::from_bits(back->first, n);
      if (psi.amplitudes().count(source)) continue;  // handled from the source side
      const double sign = back->second;
      out.set(d, c * amp);
      out.set(source, -sign * s * amp);
    }
  }
  return out;
}

inline constexpr std::size_t kUnbounded = std::numeric_limits<std::size_t>::max();

/// If more than n_max determinants are stored, keep the n_cut with largest
/// |amplitude| (ties: ascending bit pattern) and renormalize.
inline SparseWavefunction truncate(const SparseWavefunction& psi, std::size_t n_cut, std::size_t n_max) {
  if (n_cut > n_max) throw DomainError("truncate: n_cut must not exceed n_max");
  if (psi.size() <= n_max) return psi;
  std::vector<std::pair<Determinant, double>> entries(psi.amplitudes().begin(), psi.amplitudes().end());
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& x, const auto& y) { return std::abs(x.second) > std::abs(y.second); });
  entries.resize(n_cut);
  SparseWavefunction out(psi.n_orb(), psi.n_elec());
  double norm2 = 0.0;
  for (const auto& [d, c] : entries) {
    out.set(d, c);
    norm2 += c * c;
  }
  if (norm2 > 0.0) out.scale(1.0 / std::sqrt(norm2));
  return out;
}

struct UccAnsatz {
  int n_orb = 0;
  int n_elec = 0;
  std::vector<UccFactor> factors;
  std::vector<double> params;
  std::size_t n_cut = kUnbounded;
  std::size_t n_max = kUnbounded;
  Determinant reference;

  std::size_t n_params() const noexcept { return params.size(); }

  void validate() const {
    if (n_cut > n_max) throw DomainError("UccAnsatz: n_cut must not exceed n_max");
    if (n_cut == 0) throw DomainError("UccAnsatz: n_cut must be positive");
    std::vector<bool> seen(params.size(), false);
    for (const auto& f : factors) {
      f.validate(n_orb);
      if (f.param_index < 0 || static_cast<std::size_t>(f.param_index) >= params.size())
        throw DimensionError("UccAnsatz: param_index out of range");
      seen[static_cast<std::size_t>(f.param_index)] = true;
    }
    if (std::find(seen.begin(), seen.end(), false) != seen.end())
      throw DimensionError("UccAnsatz: parameters not covered by factors");
  }
};

/// Reference determinant, then each factor in order with truncation after
/// every application.
template <class Params>
SparseWavefunction prepare_state(const UccAnsatz& ansatz, const Params& params) {
  if (static_cast<std::size_t>(params.size()) != ansatz.n_params())
    throw DimensionError("prepare_state: parameter vector length mismatch");
  SparseWavefunction psi(ansatz.n_orb, ansatz.n_elec, ansatz.reference);
  for (const auto& f : ansatz.factors) {
    psi = apply_factor(psi, f, params[static_cast<std::size_t>(f.param_index)]);
    psi = truncate(psi, ansatz.n_cut, ansatz.n_max);
  }
  return psi;
}

namespace detail {

inline int spin_of(int so, int n_orb) { return so >= n_orb ? 1 : 0; }
inline int orb_of(int so, int n_orb) { return so >= n_orb ? so - n_orb : so; }

// Antisymmetrized <pq||rs> over spin orbitals from chemist-notation (pr|qs).
inline double antisym(const MolecularIntegrals& m, int p, int q, int r, int s) {
  const int n = m.n_orb();
  const int sp = spin_of(p, n), sq = spin_of(q, n), sr = spin_of(r, n), ss = spin_of(s, n);
  const int P = orb_of(p, n), Q = orb_of(q, n), R = orb_of(r, n), S = orb_of(s, n);
  double v = 0.0;
  if (sp == sr && sq == ss) v += m.eri(P, R, Q, S);
  if (sp == ss && sq == sr) v -= m.eri(P, S, Q, R);
  return v;
}

inline double one_body(const MolecularIntegrals& m, int p, int q) {
  const int n = m.n_orb();
  return spin_of(p, n) == spin_of(q, n) ? m.h1(orb_of(p, n), orb_of(q, n)) : 0.0;
}

inline std::vector<int> occupied(std::uint64_t key) {
  std::vector<int> out;
  while (key) {
    out.push_back(std::countr_zero(key));
    key &= key - 1;
  }
  return out;
}

}  // namespace detail

/// <D'|H|D> by the Slater-Condon rules (electronic part, no core energy).
inline double hamiltonian_element(const MolecularIntegrals& m, std::uint64_t bra, std::uint64_t ket) {
  const std::uint64_t removed = ket & ~bra, added = bra & ~ket;
  const int rank = std::popcount(removed);
  if (rank != std::popcount(added) || rank > 2) return 0.0;
  if (rank == 0) {
    const auto occ = detail::occupied(ket);
    double e = 0.0;
    for (std::size_t x = 0; x < occ.size(); ++x) {
      e += detail::one_body(m, occ[x], occ[x]);
      for (std::size_t y = 0; y < x; ++y) e += detail::antisym(m, occ[x], occ[y], occ[x], occ[y]);
    }
    return e;
  }
  if (rank == 1) {
    const int i = std::countr_zero(removed), a = std::countr_zero(added);
    const auto r = detail::apply_ops(ket, {{a, true}, {i, false}});
    double v = detail::one_body(m, a, i);
    for (int k : detail::occupied(ket))
      if (k != i) v += detail::antisym(m, a, k, i, k);
    return r->second * v;
  }
  const int i = std::countr_zero(removed), j = 63 - std::countl_zero(removed);
  const int a = std::countr_zero(added), b = 63 - std::countl_zero(added);
  const auto r = detail::apply_ops(ket, {{a, true}, {b, true}, {j, false}, {i, false}});
  return r->second * detail::antisym(m, a, b, i, j);
}

/// <psi|H|psi> + e_core, summing over determinant pairs in sorted order.
inline double energy(const SparseWavefunction& psi, const MolecularIntegrals& m) {
  if (psi.n_orb() != m.n_orb()) throw DimensionError("energy: orbital count mismatch with integrals");
  std::vector<std::pair<std::uint64_t, double>> dets;
  dets.reserve(psi.size());
  double norm2 = 0.0;
  for (const auto& [d, c] : psi.amplitudes()) {
    dets.emplace_back(d.bits(m.n_orb()), c);
    norm2 += c * c;
  }
  double e = 0.0;
  for (std::size_t x = 0; x < dets.size(); ++x) {
    const auto [kx, cx] = dets[x];
    e += cx * cx * hamiltonian_element(m, kx, kx);
    for (std::size_t y = 0; y < x; ++y) {
      const auto [ky, cy] = dets[y];
      if (std::popcount(kx ^ ky) > 4) continue;
      e += 2.0 * cx * cy * hamiltonian_element(m, kx, ky);
    }
  }
  return e + m.e_core() * norm2;
}

namespace detail {
// Irrep labels on a 0-based XOR scale. Files using 1-based (Molpro) labels
// have no zero entry and are shifted down.
inline std::vector<int> irreps(const std::vector<int>& orbsym) {
  std::vector<int> out(orbsym);
  if (!out.empty() && *std::min_element(out.begin(), out.end()) >= 1)
    for (auto& s : out) s -= 1;
  return out;
}
}  // namespace detail

/// Spin-orbital UCC factors from an MP2 guess: doubles by descending
/// |t2| (at most n_doubles; negative means all), then every singles
/// excitation ordered by (i, a, spin). Excitations whose irrep product is
/// not totally symmetric are removed. param_index follows list order.
inline std::vector<UccFactor> select_operators(const Mp2Guess& guess, int n_doubles, const std::vector<int>& orbsym) {
  const int nocc = guess.n_occ, norb = guess.n_orb;
  if (static_cast<int>(orbsym.size()) != norb) throw DimensionError("select_operators: orbsym length mismatch");
  const auto irr = detail::irreps(orbsym);
  auto sym = [&](int p) { return irr[static_cast<std::size_t>(p)]; };

  std::vector<UccFactor> doubles;
  auto add_double = [&](SpinOrbital i, SpinOrbital j, SpinOrbital a, SpinOrbital b, double t) {
    if ((sym(i.orb) ^ sym(j.orb) ^ sym(a.orb) ^ sym(b.orb)) != 0) return;
    doubles.push_back({ExcitationKind::double_, {i, j}, {a, b}, 0, t});
  };
  for (int i = 0; i < nocc; ++i)
    for (int j = 0; j < nocc; ++j)
      for (int a = nocc; a < norb; ++a)
        for (int b = nocc; b < norb; ++b)
          add_double({i, Spin::alpha}, {j, Spin::beta}, {a, Spin::alpha}, {b, Spin::beta},
                     guess.amplitude(i, j, a, b));
  for (Spin s : {Spin::alpha, Spin::beta})
    for (int i = 0; i < nocc; ++i)
      for (int j = i + 1; j < nocc; ++j)
        for (int a = nocc; a < norb; ++a)
          for (int b = a + 1; b < norb; ++b)
            add_double({i, s}, {j, s}, {a, s}, {b, s}, guess.amplitude(i, j, a, b) - guess.amplitude(i, j, b, a));

  // stable: ties keep enumeration order
  std::stable_sort(doubles.begin(), doubles.end(),
                   [](const UccFactor& x, const UccFactor& y) { return std::abs(x.guess) > std::abs(y.guess); });
  if (n_doubles >= 0 && static_cast<std::size_t>(n_doubles) < doubles.size())
    doubles.resize(static_cast<std::size_t>(n_doubles));

  std::vector<UccFactor> out = std::move(doubles);
  for (int i = 0; i < nocc; ++i)
    for (int a = nocc; a < norb; ++a)
      for (Spin s : {Spin::alpha, Spin::beta})
        if ((sym(i) ^ sym(a)) == 0) out.push_back({ExcitationKind::single, {{i, s}}, {{a, s}}, 0, 0.0});
  for (std::size_t k = 0; k < out.size(); ++k) out[k].param_index = static_cast<int>(k);
  return out;
}

/// Ansatz with the MP2 guess as initial parameters (singles start at zero).
inline UccAnsatz build_ucc_ansatz(const MolecularIntegrals& m, int n_doubles, std::size_t n_cut = kUnbounded,
                                  std::size_t n_max = kUnbounded) {
  const auto guess = mp2_amplitudes(m);
  UccAnsatz a;
  a.n_orb = m.n_orb();
  a.n_elec = m.n_elec();
  a.factors = select_operators(guess, n_doubles, m.orbsym());
  for (const auto& f : a.factors) a.params.push_back(f.guess);
  a.n_cut = n_cut;
  a.n_max = n_max;
  a.reference = reference_determinant(m.n_elec());
  a.validate();
  return a;
}

/// Lowest eigenvalue of H in the closed-shell particle-number sector
/// (n_elec/2 electrons of each spin), including the core energy.
inline double fci_energy(const MolecularIntegrals& m, std::size_t max_dim = 20000) {
  const int n = m.n_orb(), half = m.n_elec() / 2;
  if (n > 30) throw ResourceError("fci_energy: too many orbitals");
  std::vector<std::uint64_t> spin_strings;
  for (std::uint64_t b = 0; b < (std::uint64_t{1} << n); ++b)
    if (std::popcount(b) == half) spin_strings.push_back(b);
  const std::size_t dim = spin_strings.size() * spin_strings.size();
  if (dim > max_dim) throw ResourceError("fci_energy: sector dimension " + std::to_string(dim) + " exceeds limit");
  std::vector<std::uint64_t> keys;
  for (auto beta : spin_strings)
    for (auto alpha : spin_strings) keys.push_back(Determinant{alpha, beta}.bits(n));
  Matrix h(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  for (std::size_t x = 0; x < dim; ++x)
    for (std::size_t y = 0; y <= x; ++y) {
      const double v = std::popcount(keys[x] ^ keys[y]) > 4 ? 0.0 : hamiltonian_element(m, keys[x], keys[y]);
      h(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(y)) = v;
      h(static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(x)) = v;
    }
  return Eigen::SelfAdjointEigenSolver<Matrix>(h, Eigen::EigenvaluesOnly).eigenvalues()(0) + m.e_core();
}

}  // namespace vqsls
