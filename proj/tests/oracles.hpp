#pragma once

// Independent reference implementations used only by tests. Nothing here
// calls into the code paths it is used to check: Pauli operators are built
// as Kronecker products, fermion operators as dense Jordan-Wigner matrices,
// and exponentials through Eigen's MatrixFunctions module.

#include <cmath>
#include <complex>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/Sparse>
#include <unsupported/Eigen/KroneckerProduct>
#include <unsupported/Eigen/MatrixFunctions>

namespace oracle {

using cplx = std::complex<double>;
using CMat = Eigen::MatrixXcd;
using RMat = Eigen::MatrixXd;

inline std::string data_path(const std::string& name) { return std::string(VQSLS_DATA_DIR) + "/" + name; }

inline std::string read_file(const std::string& path) {
  std::ifstream f(path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline CMat pauli(char c) {
  CMat m(2, 2);
  switch (c) {
    case 'X': m << 0, 1, 1, 0; break;
    case 'Y': m << 0, cplx(0, -1), cplx(0, 1), 0; break;
    case 'Z': m << 1, 0, 0, -1; break;
    default: m << 1, 0, 0, 1; break;
  }
  return m;
}

inline CMat kron(const CMat& a, const CMat& b) {
  CMat out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r)
    for (Eigen::Index c = 0; c < a.cols(); ++c) out.block(r * b.rows(), c * b.cols(), b.rows(), b.cols()) = a(r, c) * b;
  return out;
}

/// Dense matrix of a list of single-qubit operators; ops[k] acts on qubit
/// k, which is bit k of the basis index (so qubit 0 is the rightmost factor).
inline CMat on_qubits(const std::vector<CMat>& ops) {
  CMat out = CMat::Identity(1, 1);
  for (auto it = ops.rbegin(); it != ops.rend(); ++it) out = kron(out, *it);
  return out;
}

/// Axis string, character k on qubit k.
inline CMat pauli_string(const std::string& axes) {
  std::vector<CMat> ops;
  for (char c : axes) ops.push_back(pauli(c));
  return on_qubits(ops);
}

inline double lowest_eigenvalue(const CMat& h) {
  Eigen::SelfAdjointEigenSolver<CMat> es(h, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

/// Ground energy by power iteration on (shift - H).
inline double power_iteration_ground(const CMat& h, int iters = 200000, double tol = 1e-13) {
  const double shift = h.cwiseAbs().rowwise().sum().maxCoeff();
  const CMat a = shift * CMat::Identity(h.rows(), h.cols()) - h;
  Eigen::VectorXcd v = Eigen::VectorXcd::Ones(h.rows());
  for (Eigen::Index k = 0; k < v.size(); ++k) v(k) += 0.01 * std::cos(0.37 * static_cast<double>(k));
  v.normalize();
  double lambda = 0.0;
  for (int it = 0; it < iters; ++it) {
    Eigen::VectorXcd w = a * v;
    const double next = v.dot(w).real();
    v = w.normalized();
    if (std::abs(next - lambda) < tol) {
      lambda = next;
      break;
    }
    lambda = next;
  }
  return shift - lambda;
}

// ---- fermions -----------------------------------------------------------

using SMat = Eigen::SparseMatrix<cplx>;

inline SMat sparse(const CMat& m) { return m.sparseView(); }

/// Annihilation operator for spin orbital k out of n (Jordan-Wigner, Z string
/// on lower-indexed modes), as a Kronecker product.
inline SMat annihilator(int k, int n) {
  CMat lower(2, 2);
  lower << 0, 1, 0, 0;
  SMat out(1, 1);
  out.insert(0, 0) = 1.0;
  for (int q = n - 1; q >= 0; --q) {
    const CMat f = q < k ? pauli('Z') : (q == k ? lower : pauli('I'));
    SMat next = Eigen::kroneckerProduct(out, sparse(f));
    out = next;
  }
  return out;
}

struct Integrals {
  int norb = 0, nelec = 0;
  double ecore = 0.0;
  RMat h1;
  std::vector<double> eri;  // full n^4, (pq|rs) at ((p*n+q)*n+r)*n+s
  double g(int p, int q, int r, int s) const { return eri[static_cast<std::size_t>(((p * norb + q) * norb + r) * norb + s)]; }
};

/// Independent FCIDUMP reader: fills the full n^4 tensor by explicit
/// permutation expansion.
inline Integrals read_fcidump(const std::string& path) {
  std::ifstream f(path);
  std::string all((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Integrals out;
  auto grab = [&](const std::string& key) {
    auto pos = all.find(key + "=");
    return std::stoi(all.substr(pos + key.size() + 1));
  };
  out.norb = grab("NORB");
  out.nelec = grab("NELEC");
  const int n = out.norb;
  out.h1 = RMat::Zero(n, n);
  out.eri.assign(static_cast<std::size_t>(n * n * n * n), 0.0);
  auto end = all.find("&END");
  std::istringstream body(all.substr(end + 4));
  double v;
  int i, j, k, l;
  while (body >> v >> i >> j >> k >> l) {
    if (i == 0 && j == 0 && k == 0 && l == 0) {
      out.ecore = v;
    } else if (k == 0 && l == 0) {
      out.h1(i - 1, j - 1) = out.h1(j - 1, i - 1) = v;
    } else {
      const int p = i - 1, q = j - 1, r = k - 1, s = l - 1;
      const int perms[8][4] = {{p, q, r, s}, {q, p, r, s}, {p, q, s, r}, {q, p, s, r},
                               {r, s, p, q}, {s, r, p, q}, {r, s, q, p}, {s, r, q, p}};
      for (auto& x : perms) out.eri[static_cast<std::size_t>(((x[0] * n + x[1]) * n + x[2]) * n + x[3])] = v;
    }
  }
  return out;
}

/// Full Fock-space Hamiltonian over 2*norb spin orbitals, alpha block first.
inline SMat fock_space_hamiltonian(const Integrals& m) {
  const int n = m.norb, nso = 2 * n;
  std::vector<SMat> a, ad;
  for (int k = 0; k < nso; ++k) {
    a.push_back(annihilator(k, nso));
    ad.push_back(SMat(a.back().adjoint()));
  }
  const auto dim = a[0].rows();
  SMat id(dim, dim);
  id.setIdentity();
  SMat h = m.ecore * id;
  auto sp = [&](int k) { return k / n; };
  auto orb = [&](int k) { return k % n; };
  auto at = [](const std::vector<SMat>& v, int k) -> const SMat& { return v[static_cast<std::size_t>(k)]; };
  for (int p = 0; p < nso; ++p)
    for (int q = 0; q < nso; ++q)
      if (sp(p) == sp(q) && m.h1(orb(p), orb(q)) != 0.0) h += m.h1(orb(p), orb(q)) * SMat(at(ad, p) * at(a, q));
  for (int p = 0; p < nso; ++p)
    for (int r = 0; r < nso; ++r) {
      const SMat left = at(ad, p) * at(ad, r);
      for (int q = 0; q < nso; ++q)
        for (int s = 0; s < nso; ++s) {
          if (sp(p) != sp(q) || sp(r) != sp(s)) continue;
          const double v = m.g(orb(p), orb(q), orb(r), orb(s));
          if (v == 0.0) continue;
          h += 0.5 * v * SMat(left * SMat(at(a, s) * at(a, q)));
        }
    }
  return h;
}

/// Lowest eigenvalue in the sector with nelec/2 alpha and nelec/2 beta.
inline double fci_ground_energy(const Integrals& m) {
  const CMat h = CMat(fock_space_hamiltonian(m));
  const int n = m.norb;
  std::vector<Eigen::Index> sector;
  for (Eigen::Index b = 0; b < h.rows(); ++b) {
    const auto bits = static_cast<unsigned>(b);
    const int na = __builtin_popcount(bits & ((1U << n) - 1)), nb = __builtin_popcount(bits >> n);
    if (na == m.nelec / 2 && nb == m.nelec / 2) sector.push_back(b);
  }
  CMat sub(static_cast<Eigen::Index>(sector.size()), static_cast<Eigen::Index>(sector.size()));
  for (std::size_t x = 0; x < sector.size(); ++x)
    for (std::size_t y = 0; y < sector.size(); ++y)
      sub(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(y)) = h(sector[x], sector[y]);
  return lowest_eigenvalue(sub);
}

/// Fock matrix of the closed-shell reference built from the full tensor.
inline RMat fock_matrix(const Integrals& m) {
  const int n = m.norb, nocc = m.nelec / 2;
  RMat f = m.h1;
  for (int p = 0; p < n; ++p)
    for (int q = 0; q < n; ++q)
      for (int i = 0; i < nocc; ++i) f(p, q) += 2.0 * m.g(p, q, i, i) - m.g(p, i, i, q);
  return f;
}

inline double rhf_energy(const Integrals& m) {
  const int nocc = m.nelec / 2;
  double e = m.ecore;
  for (int i = 0; i < nocc; ++i) {
    e += 2.0 * m.h1(i, i);
    for (int j = 0; j < nocc; ++j) e += 2.0 * m.g(i, i, j, j) - m.g(i, j, j, i);
  }
  return e;
}

/// Spin-orbital MP2 energy, 1/4 sum |<ij||ab>|^2 / D, from the Fock diagonal.
inline double mp2_energy_spin_orbital(const Integrals& m) {
  const RMat f = fock_matrix(m);
  const int n = m.norb, nso = 2 * n, nocc = m.nelec / 2;
  auto sp = [&](int k) { return k % 2; };
  auto orb = [&](int k) { return k / 2; };
  auto occ = [&](int k) { return orb(k) < nocc; };
  auto phys = [&](int p, int q, int r, int s) {  // <pq|rs>
    if (sp(p) != sp(r) || sp(q) != sp(s)) return 0.0;
    return m.g(orb(p), orb(r), orb(q), orb(s));
  };
  double e = 0.0;
  for (int i = 0; i < nso; ++i)
    for (int j = 0; j < nso; ++j)
      for (int a = 0; a < nso; ++a)
        for (int b = 0; b < nso; ++b) {
          if (!occ(i) || !occ(j) || occ(a) || occ(b)) continue;
          const double v = phys(i, j, a, b) - phys(i, j, b, a);
          const double d = f(orb(i), orb(i)) + f(orb(j), orb(j)) - f(orb(a), orb(a)) - f(orb(b), orb(b));
          e += 0.25 * v * v / d;
        }
  return e;
}

/// Reference state for n_elec electrons (lowest orbitals of both spins).
inline Eigen::VectorXcd reference_vector(int norb, int nelec) {
  Eigen::VectorXcd v = Eigen::VectorXcd::Zero(Eigen::Index{1} << (2 * norb));
  const unsigned occ = (1U << (nelec / 2)) - 1;
  v(static_cast<Eigen::Index>(occ | (occ << norb))) = 1.0;
  return v;
}

/// exp(theta (T - T^dagger)) as a dense matrix for a list of (create...,
/// annihilate...) spin-orbital indices: T = a+_c0 a+_c1 ... a_x1 a_x0.
inline CMat ucc_factor_matrix(const std::vector<int>& create, const std::vector<int>& annihilate, int nso, double theta) {
  const auto dim = Eigen::Index{1} << nso;
  SMat t(dim, dim);
  t.setIdentity();
  for (int c : create) t = SMat(t * SMat(annihilator(c, nso).adjoint()));
  for (auto it = annihilate.rbegin(); it != annihilate.rend(); ++it) t = SMat(t * annihilator(*it, nso));
  const CMat g = theta * CMat(t - SMat(t.adjoint()));
  return g.exp();
}

inline CMat random_unitary4(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  CMat a(4, 4);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) a(r, c) = cplx(n(rng), n(rng));
  Eigen::HouseholderQR<CMat> qr(a);
  return qr.householderQ() * CMat::Identity(4, 4);
}

}  // namespace oracle
