#pragma once

// Molecular integrals: FCIDUMP reading/writing, closed-shell reference
// quantities (Fock diagonal, MP2 doubles) and the Jordan-Wigner qubit
// Hamiltonian.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <complex>
#include <cstdio>
#include <istream>
#include <locale>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "vqsls/common.hpp"
#include "vqsls/pauli.hpp"

namespace vqsls {

/// One- and two-electron integrals over spatial orbitals. Two-electron
/// integrals are chemist-notation (pq|rs), stored once per 8-fold
/// permutation class and expanded on access.
class MolecularIntegrals {
 public:
  MolecularIntegrals() = default;

  MolecularIntegrals(int n_orb, int n_elec, int ms2) : n_orb_(n_orb), n_elec_(n_elec), ms2_(ms2) {
    if (n_orb <= 0 || n_orb > 32) throw DomainError("MolecularIntegrals: n_orb must be in [1, 32]");
    if (n_elec < 0 || n_elec > 2 * n_orb) throw DomainError("MolecularIntegrals: n_elec must be in [0, 2*n_orb]");
    h1_ = Matrix::Zero(n_orb, n_orb);
    const auto npair = pair_index(n_orb - 1, n_orb - 1) + 1;
    eri_.assign(pair_index(npair - 1, npair - 1) + 1, 0.0);
    orbsym_.assign(static_cast<std::size_t>(n_orb), 1);
  }

  int n_orb() const noexcept { return n_orb_; }
  int n_elec() const noexcept { return n_elec_; }
  int ms2() const noexcept { return ms2_; }
  int isym() const noexcept { return isym_; }
  void set_isym(int s) noexcept { isym_ = s; }
  double e_core() const noexcept { return e_core_; }
  void set_e_core(double e) noexcept { e_core_ = e; }

  const std::vector<int>& orbsym() const noexcept { return orbsym_; }
  void set_orbsym(std::vector<int> s) {
    if (static_cast<int>(s.size()) != n_orb_) throw DimensionError("ORBSYM length must equal NORB");
    orbsym_ = std::move(s);
  }

  double h1(int p, int q) const { return h1_(p, q); }
  void set_h1(int p, int q, double v) {
    h1_(p, q) = v;
    h1_(q, p) = v;
  }
  const Matrix& h1_matrix() const noexcept { return h1_; }

  double eri(int p, int q, int r, int s) const { return eri_[eri_index(p, q, r, s)]; }
  void set_eri(int p, int q, int r, int s, double v) { eri_[eri_index(p, q, r, s)] = v; }

  /// Visits each stored (pq|rs) once with p >= q, r >= s, pq >= rs.
  template <class F>
  void for_each_unique_eri(F&& f) const {
    for (int p = 0; p < n_orb_; ++p)
      for (int q = 0; q <= p; ++q)
        for (int r = 0; r <= p; ++r)
          for (int s = 0; s <= (r == p ? q : r); ++s) f(p, q, r, s, eri(p, q, r, s));
  }

 private:
  static std::size_t pair_index(std::size_t a, std::size_t b) {
    if (a < b) std::swap(a, b);
    return a * (a + 1) / 2 + b;
  }
  std::size_t eri_index(int p, int q, int r, int s) const {
    if (p < 0 || q < 0 || r < 0 || s < 0 || p >= n_orb_ || q >= n_orb_ || r >= n_orb_ || s >= n_orb_)
      throw DimensionError("eri index out of range");
    return pair_index(pair_index(static_cast<std::size_t>(p), static_cast<std::size_t>(q)),
                      pair_index(static_cast<std::size_t>(r), static_cast<std::size_t>(s)));
  }

  int n_orb_ = 0;
  int n_elec_ = 0;
  int ms2_ = 0;
  int isym_ = 1;
  double e_core_ = 0.0;
  std::vector<int> orbsym_;
  Matrix h1_;
  std::vector<double> eri_;
};

namespace detail {

inline std::string upper(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

inline bool parse_double(std::string tok, double& out) {
  for (auto& c : tok)
    if (c == 'D' || c == 'd') c = 'E';
  std::istringstream is(tok);
  is.imbue(std::locale::classic());
  is >> out;
  return !is.fail() && is.peek() == std::char_traits<char>::eof();
}

// Parses the `&FCI ... &END` namelist into key -> list of integer values.
inline std::map<std::string, std::vector<long>> parse_namelist(const std::string& text, std::size_t line) {
  std::map<std::string, std::vector<long>> out;
  std::string key;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t j = i;
      while (j < text.size() && (std::isalnum(static_cast<unsigned char>(text[j])) || text[j] == '_')) ++j;
      std::size_t k = j;
      while (k < text.size() && std::isspace(static_cast<unsigned char>(text[k]))) ++k;
      if (k < text.size() && text[k] == '=') {
        key = upper(text.substr(i, j - i));
        out[key];
        i = k + 1;
      } else {
        throw ParseError("unexpected token '" + text.substr(i, j - i) + "' in namelist", line);
      }
    } else if (std::isdigit(static_cast<unsigned char>(c)) || c == '-' || c == '+') {
      std::size_t j = i + 1;
      while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
      if (key.empty()) throw ParseError("value without key in namelist", line);
      out[key].push_back(std::stol(text.substr(i, j - i)));
      i = j;
    } else {
      ++i;  // separators: whitespace and commas
    }
  }
  return out;
}

}  // namespace detail

/// Reads an FCIDUMP: a `&FCI ... &END` (or `/`) namelist followed by
/// `value i j k l` lines with 1-based orbital indices.
inline MolecularIntegrals parse_fcidump(std::istream& is) {
  std::string raw;
  std::size_t lineno = 0;
  std::string header;
  bool started = false, ended = false;
  while (!ended && std::getline(is, raw)) {
    ++lineno;
    std::string u = detail::upper(raw);
    if (!started) {
      auto pos = u.find("&FCI");
      if (pos == std::string::npos) {
        if (u.find_first_not_of(" \t\r") == std::string::npos) continue;
        throw ParseError("expected &FCI namelist", lineno);
      }
      started = true;
      u = u.substr(pos + 4);
    }
    for (const char* term : {"&END", "/"}) {
      if (auto pos = u.find(term); pos != std::string::npos) {
        u = u.substr(0, pos);
        ended = true;
        break;
      }
    }
    header += u + ' ';
  }
  if (!ended) throw ParseError("unterminated &FCI namelist", lineno);

  auto nml = detail::parse_namelist(header, lineno);
  auto scalar = [&](const char* key, bool required, long fallback) -> long {
    auto it = nml.find(key);
    if (it == nml.end() || it->second.empty()) {
      if (required) throw ParseError(std::string("missing ") + key + " in namelist", lineno);
      return fallback;
    }
    return it->second.front();
  };
  const long norb = scalar("NORB", true, 0);
  const long nelec = scalar("NELEC", true, 0);
  const long ms2 = scalar("MS2", false, 0);
  if (norb <= 0 || norb > 32) throw ParseError("NORB must be in [1, 32]", lineno);
  if (nelec < 0 || nelec > 2 * norb) throw ParseError("NELEC out of range", lineno);

  MolecularIntegrals m(static_cast<int>(norb), static_cast<int>(nelec), static_cast<int>(ms2));
  m.set_isym(static_cast<int>(scalar("ISYM", false, 1)));
  if (auto it = nml.find("ORBSYM"); it != nml.end()) {
    if (static_cast<long>(it->second.size()) != norb) throw ParseError("ORBSYM length must equal NORB", lineno);
    m.set_orbsym(std::vector<int>(it->second.begin(), it->second.end()));
  }

  while (std::getline(is, raw)) {
    ++lineno;
    std::istringstream ls(raw);
    std::string vtok;
    if (!(ls >> vtok)) continue;
    double value;
    if (!detail::parse_double(vtok, value)) throw ParseError("non-numeric integral value '" + vtok + "'", lineno);
    long idx[4];
    for (auto& x : idx) {
      std::string t;
      if (!(ls >> t)) throw ParseError("expected four indices", lineno);
      try {
        std::size_t used = 0;
        x = std::stol(t, &used);
        if (used != t.size()) throw std::invalid_argument(t);
      } catch (const std::exception&) {
        throw ParseError("non-integer index '" + t + "'", lineno);
      }
      if (x < 0 || x > norb) throw ParseError("orbital index out of range", lineno);
    }
    std::string extra;
    if (ls >> extra) throw ParseError("trailing token '" + extra + "'", lineno);
    const auto [i, j, k, l] = std::tuple{idx[0], idx[1], idx[2], idx[3]};
    const int nz = (i > 0) + (j > 0) + (k > 0) + (l > 0);
    if (nz == 0) {
      m.set_e_core(value);
    } else if (nz == 4) {
      m.set_eri(static_cast<int>(i - 1), static_cast<int>(j - 1), static_cast<int>(k - 1), static_cast<int>(l - 1),
                value);
    } else if (nz == 2 && i > 0 && j > 0) {
      m.set_h1(static_cast<int>(i - 1), static_cast<int>(j - 1), value);
    } else if (nz == 1 && i > 0) {
      // orbital energy line `e i 0 0 0`; not needed
    } else {
      throw ParseError("unrecognised index pattern", lineno);
    }
  }
  return m;
}

inline MolecularIntegrals parse_fcidump(const std::string& text) {
  std::istringstream is(text);
  return parse_fcidump(is);
}

/// Writes the FCIDUMP format with `%.16E` values; entries whose value is
/// exactly zero are omitted.
inline void write_fcidump(std::ostream& os, const MolecularIntegrals& m) {
  os << " &FCI NORB=" << m.n_orb() << ",NELEC=" << m.n_elec() << ",MS2=" << m.ms2() << ",\n  ORBSYM=";
  for (int s : m.orbsym()) os << s << ',';
  os << "\n  ISYM=" << m.isym() << ",\n &END\n";
  char buf[96];
  auto line = [&](double v, int i, int j, int k, int l) {
    std::snprintf(buf, sizeof buf, " %.16E %4d %4d %4d %4d\n", v, i, j, k, l);
    os << buf;
  };
  m.for_each_unique_eri([&](int p, int q, int r, int s, double v) {
    if (v != 0.0) line(v, p + 1, q + 1, r + 1, s + 1);
  });
  for (int p = 0; p < m.n_orb(); ++p)
    for (int q = 0; q <= p; ++q)
      if (m.h1(p, q) != 0.0) line(m.h1(p, q), p + 1, q + 1, 0, 0);
  line(m.e_core(), 0, 0, 0, 0);
}

namespace detail {
inline void require_closed_shell(const MolecularIntegrals& m) {
  if (m.n_elec() % 2 != 0 || m.ms2() != 0)
    throw UnsupportedReferenceError("only closed-shell restricted references are supported");
}
}  // namespace detail

/// Orbital energies of the closed-shell reference (lowest n_elec/2 orbitals
/// doubly occupied): e_p = h_pp + sum_i [2 (pp|ii) - (pi|ip)].
inline std::vector<double> fock_diagonal(const MolecularIntegrals& m) {
  detail::require_closed_shell(m);
  const int nocc = m.n_elec() / 2;
  std::vector<double> eps(static_cast<std::size_t>(m.n_orb()));
  for (int p = 0; p < m.n_orb(); ++p) {
    double e = m.h1(p, p);
    for (int i = 0; i < nocc; ++i) e += 2.0 * m.eri(p, p, i, i) - m.eri(p, i, i, p);
    eps[static_cast<std::size_t>(p)] = e;
  }
  return eps;
}

struct Mp2Guess {
  /// Spatial-orbital amplitudes t(i,j,a,b) = (ia|jb) / (e_i + e_j - e_a - e_b).
  std::map<std::tuple<int, int, int, int>, double> t2;
  bool t1_zero = true;
  std::vector<double> fock_diag;
  /// (i,j,a,b) quadruples skipped because the denominator was degenerate.
  std::vector<std::tuple<int, int, int, int>> skipped;
  int n_occ = 0;
  int n_orb = 0;

  double amplitude(int i, int j, int a, int b) const {
    auto it = t2.find({i, j, a, b});
    return it == t2.end() ? 0.0 : it->second;
  }
};

inline constexpr double kMp2DegeneracyThreshold = 1e-8;

inline Mp2Guess mp2_amplitudes(const MolecularIntegrals& m) {
  Mp2Guess g;
  g.fock_diag = fock_diagonal(m);
  g.n_occ = m.n_elec() / 2;
  g.n_orb = m.n_orb();
  const auto& e = g.fock_diag;
  for (int i = 0; i < g.n_occ; ++i)
    for (int j = 0; j < g.n_occ; ++j)
      for (int a = g.n_occ; a < g.n_orb; ++a)
        for (int b = g.n_occ; b < g.n_orb; ++b) {
          const double den = e[static_cast<std::size_t>(i)] + e[static_cast<std::size_t>(j)] -
                             e[static_cast<std::size_t>(a)] - e[static_cast<std::size_t>(b)];
          if (std::abs(den) < kMp2DegeneracyThreshold) {
            g.skipped.emplace_back(i, j, a, b);
            continue;
          }
          g.t2[{i, j, a, b}] = m.eri(i, a, j, b) / den;
        }
  return g;
}

/// Closed-shell MP2 correlation energy sum t(ijab) [2 (ia|jb) - (ib|ja)].
inline double mp2_energy(const MolecularIntegrals& m, const Mp2Guess& g) {
  double e = 0.0;
  for (const auto& [key, t] : g.t2) {
    const auto [i, j, a, b] = key;
    e += t * (2.0 * m.eri(i, a, j, b) - m.eri(i, b, j, a));
  }
  return e;
}

/// Jordan-Wigner qubit Hamiltonian. Spin orbital (p, alpha) is qubit p and
/// (p, beta) is qubit n_orb + p.
inline PauliHamiltonian qubit_hamiltonian(const MolecularIntegrals& m, double prune_tol = 1e-12) {
  using cplx = std::complex<double>;
  const int nq = 2 * m.n_orb();
  using Sum = std::map<std::pair<std::uint64_t, std::uint64_t>, cplx>;

  // a_k^dagger = Z_<k (X_k - iY_k)/2, a_k = Z_<k (X_k + iY_k)/2
  auto ladder = [&](int k, bool create) {
    const std::uint64_t zlow = (std::uint64_t{1} << k) - 1;
    const std::uint64_t bit = std::uint64_t{1} << k;
    Sum s;
    s[{bit, zlow}] = 0.5;
    s[{bit, zlow | bit}] = create ? cplx(0, -0.5) : cplx(0, 0.5);
    return s;
  };
  auto product = [&](const Sum& a, const Sum& b) {
    Sum out;
    for (const auto& [ka, ca] : a)
      for (const auto& [kb, cb] : b) {
        auto [phase, r] =
            multiply(PauliString(nq, ka.first, ka.second), PauliString(nq, kb.first, kb.second));
        out[{r.x_mask(), r.z_mask()}] += phase * ca * cb;
      }
    return out;
  };

  std::vector<Sum> cre(static_cast<std::size_t>(nq)), ann(static_cast<std::size_t>(nq));
  for (int k = 0; k < nq; ++k) {
    cre[static_cast<std::size_t>(k)] = ladder(k, true);
    ann[static_cast<std::size_t>(k)] = ladder(k, false);
  }
  const int n = m.n_orb();
  Sum total;
  total[{0, 0}] += m.e_core();
  auto accumulate = [&](const Sum& s, double c) {
    for (const auto& [k, v] : s) total[k] += c * v;
  };
  std::map<std::pair<int, int>, Sum> one_body;
  auto cre_ann = [&](int p, int q) -> const Sum& {
    auto it = one_body.find({p, q});
    if (it == one_body.end())
      it = one_body.emplace(std::make_pair(p, q), product(cre[static_cast<std::size_t>(p)], ann[static_cast<std::size_t>(q)])).first;
    return it->second;
  };
  for (int sigma = 0; sigma < 2; ++sigma)
    for (int p = 0; p < n; ++p)
      for (int q = 0; q < n; ++q)
        if (m.h1(p, q) != 0.0) accumulate(cre_ann(p + sigma * n, q + sigma * n), m.h1(p, q));
  // 1/2 sum (pq|rs) a+_p a+_r a_s a_q over same-spin pairs (p,q) and (r,s)
  for (int s1 = 0; s1 < 2; ++s1)
    for (int s2 = 0; s2 < 2; ++s2)
      for (int p = 0; p < n; ++p)
        for (int q = 0; q < n; ++q)
          for (int r = 0; r < n; ++r)
            for (int s = 0; s < n; ++s) {
              const double v = m.eri(p, q, r, s);
              if (v == 0.0) continue;
              const int P = p + s1 * n, Q = q + s1 * n, R = r + s2 * n, S = s + s2 * n;
              if (P == R || Q == S) continue;
              auto left = product(cre[static_cast<std::size_t>(P)], cre[static_cast<std::size_t>(R)]);
              auto right = product(ann[static_cast<std::size_t>(S)], ann[static_cast<std::size_t>(Q)]);
              accumulate(product(left, right), 0.5 * v);
            }

  std::vector<PauliTerm> terms;
  terms.reserve(total.size());
  for (const auto& [k, c] : total) {
    if (std::abs(c.imag()) > 1e-9) throw Error("qubit_hamiltonian: non-Hermitian residue");
    terms.push_back({c.real(), PauliString(nq, k.first, k.second)});
  }
  return PauliHamiltonian(nq, terms, prune_tol);
}

}  // namespace vqsls
