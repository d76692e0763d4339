#pragma once

// Open-boundary matrix product state with a capped bond dimension. Gates
// on non-adjacent sites are routed through SWAP gates.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <vector>

#include <Eigen/QR>
#include <Eigen/SVD>

#include "vqsls/common.hpp"
#include "vqsls/pauli.hpp"
#include "vqsls/spin.hpp"

namespace vqsls {

using CMatrix = Eigen::MatrixXcd;

class MpsState {
 public:
  /// Relative gap below which neighbouring singular values count as degenerate.
  static constexpr double kDegeneracyTol = 1e-9;

  /// Product state |0...0> on n sites, bond cap chi.
  MpsState(int n_sites, int max_bond, double truncation_threshold = 1e-12)
      : n_(n_sites), chi_(max_bond), threshold_(truncation_threshold) {
    if (n_sites < 2 || n_sites > 64) throw DimensionError("MpsState: n_sites must be in [2, 64]");
    if (max_bond < 1) throw DomainError("MpsState: max_bond must be positive");
    if (truncation_threshold < 0.0) throw DomainError("MpsState: negative truncation threshold");
    tensors_.resize(static_cast<std::size_t>(n_sites));
    for (auto& t : tensors_) {
      t[0] = CMatrix::Ones(1, 1);
      t[1] = CMatrix::Zero(1, 1);
    }
  }

  int n_sites() const noexcept { return n_; }
  int max_bond() const noexcept { return chi_; }
  int center() const noexcept { return center_; }
  double truncation_threshold() const noexcept { return threshold_; }
  /// Discarded singular-value weight of the most recent split and in total.
  double last_discarded_weight() const noexcept { return last_discarded_; }
  double total_discarded_weight() const noexcept { return total_discarded_; }

  /// A^s for site k; shape (left bond) x (right bond).
  const CMatrix& tensor(int site, int s) const { return tensors_[static_cast<std::size_t>(site)][static_cast<std::size_t>(s)]; }

  int bond_dimension(int bond) const { return static_cast<int>(tensor(bond, 0).cols()); }
  int max_bond_dimension() const {
    int m = 1;
    for (int k = 0; k + 1 < n_; ++k) m = std::max(m, bond_dimension(k));
    return m;
  }

  /// Moves the orthogonality center by QR sweeps (no truncation).
  void move_center(int site) {
    if (site < 0 || site >= n_) throw DimensionError("move_center: site out of range");
    while (center_ < site) shift_right(center_++);
    while (center_ > site) shift_left(center_--);
  }

  /// Two-site gate on (i, i+1); u is indexed 2*s_i + s_{i+1}. The joint
  /// tensor is split by SVD keeping at most chi singular values above the
  /// threshold, and the kept spectrum is renormalized.
  void apply_two_site_gate(int i, const Gate4& u) {
    if (i < 0 || i + 1 >= n_) throw DomainError("apply_two_site_gate: sites must be adjacent and in range");
    move_center(i);
    auto& a = tensors_[static_cast<std::size_t>(i)];
    auto& b = tensors_[static_cast<std::size_t>(i + 1)];
    const auto dl = a[0].rows(), dr = b[0].cols();
    std::array<CMatrix, 4> theta;
    for (int s1 = 0; s1 < 2; ++s1)
      for (int s2 = 0; s2 < 2; ++s2) theta[static_cast<std::size_t>(2 * s1 + s2)] = a[static_cast<std::size_t>(s1)] * b[static_cast<std::size_t>(s2)];
    CMatrix t(2 * dl, 2 * dr);
    for (int s1 = 0; s1 < 2; ++s1)
      for (int s2 = 0; s2 < 2; ++s2) {
        CMatrix block = CMatrix::Zero(dl, dr);
        for (int k = 0; k < 4; ++k) block += u(2 * s1 + s2, k) * theta[static_cast<std::size_t>(k)];
        t.block(s1 * dl, s2 * dr, dl, dr) = block;
      }
    Eigen::BDCSVD<CMatrix> svd(t, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    const double total = sv.squaredNorm();
    Eigen::Index keep = 0;
    const double cutoff = threshold_ * std::sqrt(total);
    while (keep < sv.size() && keep < chi_ && sv(keep) > cutoff) ++keep;
    // A degenerate multiplet split by the cap would keep an arbitrary,
    // rounding-dependent subspace; drop the whole multiplet instead.
    if (keep == chi_ && keep < sv.size() && sv(keep) > cutoff)
      while (keep > 1 && sv(keep - 1) - sv(keep) <= kDegeneracyTol * sv(keep - 1)) --keep;
    keep = std::max<Eigen::Index>(keep, 1);
    const double kept = sv.head(keep).squaredNorm();
    last_discarded_ = total > 0.0 ? (total - kept) / total : 0.0;
    total_discarded_ += last_discarded_;
    const Eigen::VectorXd s = sv.head(keep) / std::sqrt(kept);
    const CMatrix left = svd.matrixU().leftCols(keep);
    const CMatrix right = s.cast<Complex>().asDiagonal() * svd.matrixV().leftCols(keep).adjoint();
    for (int s1 = 0; s1 < 2; ++s1) a[static_cast<std::size_t>(s1)] = left.middleRows(s1 * dl, dl);
    for (int s2 = 0; s2 < 2; ++s2) b[static_cast<std::size_t>(s2)] = right.middleCols(s2 * dr, dr);
    center_ = i + 1;
  }

  /// Gate on arbitrary sites (i, j) with u indexed 2*s_i + s_j. Site j is
  /// carried next to i by SWAP gates, the gate applied, and j carried back.
  void apply_gate(int i, int j, const Gate4& u) {
    if (i == j) throw DomainError("apply_gate: sites must differ");
    if (i < 0 || j < 0 || i >= n_ || j >= n_) throw DimensionError("apply_gate: site out of range");
    if (j == i + 1) return apply_two_site_gate(i, u);
    if (j == i - 1) return apply_two_site_gate(j, swapped(u));
    const Gate4 sw = swap_gate();
    if (j < i) {
      for (int p = j; p < i - 1; ++p) apply_two_site_gate(p, sw);
      apply_two_site_gate(i - 1, swapped(u));
      for (int p = i - 2; p >= j; --p) apply_two_site_gate(p, sw);
    } else {
      for (int p = j - 1; p > i; --p) apply_two_site_gate(p, sw);
      apply_two_site_gate(i, u);
      for (int p = i + 1; p < j; ++p) apply_two_site_gate(p, sw);
    }
  }

  /// <psi|P|psi> by contraction over the support of P only.
  Complex pauli_expectation(const PauliString& p) const {
    if (p.n_qubits() != n_) throw DimensionError("pauli_expectation: site count mismatch");
    ensure_environments();
    if (p.is_identity()) return envs_.left.back()(0, 0);
    int first = n_, last = -1;
    for (int k = 0; k < n_; ++k)
      if (p.axis(k) != PauliAxis::I) {
        first = std::min(first, k);
        last = k;
      }
    CMatrix e = envs_.left[static_cast<std::size_t>(first)];
    for (int k = first; k <= last; ++k) e = transfer(e, k, pauli_matrix(p.axis(k)));
    return (e * envs_.right[static_cast<std::size_t>(last + 1)]).trace();
  }

  double norm() const {
    ensure_environments();
    return std::sqrt(envs_.left.back()(0, 0).real());
  }

  /// Dense amplitudes (qubit k = bit k); for testing on small chains.
  std::vector<Complex> to_statevector() const {
    if (n_ > 24) throw ResourceError("to_statevector: too many sites");
    std::vector<Complex> out(std::size_t{1} << n_);
    for (std::size_t b = 0; b < out.size(); ++b) {
      CMatrix m = tensor(0, static_cast<int>(b & 1U));
      for (int k = 1; k < n_; ++k) m = m * tensor(k, static_cast<int>((b >> k) & 1U));
      out[b] = m(0, 0);
    }
    return out;
  }

  static Gate4 swap_gate() {
    Gate4 s = Gate4::Zero();
    s(0, 0) = s(1, 2) = s(2, 1) = s(3, 3) = 1.0;
    return s;
  }

 private:
  // Exchanges the roles of the two qubits in a gate matrix.
  static Gate4 swapped(const Gate4& u) {
    const Gate4 s = swap_gate();
    return s * u * s;
  }

  static Eigen::Matrix2cd pauli_matrix(PauliAxis a) {
    Eigen::Matrix2cd m;
    switch (a) {
      case PauliAxis::I: m << 1, 0, 0, 1; break;
      case PauliAxis::X: m << 0, 1, 1, 0; break;
      case PauliAxis::Y: m << 0, Complex(0, -1), Complex(0, 1), 0; break;
      case PauliAxis::Z: m << 1, 0, 0, -1; break;
    }
    return m;
  }

  // E' = sum_{s', s} op(s', s) A^{s'}^dagger E A^s
  CMatrix transfer(const CMatrix& e, int site, const Eigen::Matrix2cd& op) const {
    const auto& t = tensors_[static_cast<std::size_t>(site)];
    const auto dr = t[0].cols();
    CMatrix out = CMatrix::Zero(dr, dr);
    for (int s = 0; s < 2; ++s) {
      const CMatrix ea = e * t[static_cast<std::size_t>(s)];
      for (int sp = 0; sp < 2; ++sp)
        if (op(sp, s) != Complex{}) out += op(sp, s) * (t[static_cast<std::size_t>(sp)].adjoint() * ea);
    }
    return out;
  }

  void shift_right(int k) {
    auto& a = tensors_[static_cast<std::size_t>(k)];
    auto& b = tensors_[static_cast<std::size_t>(k + 1)];
    const auto dl = a[0].rows(), dr = a[0].cols();
    CMatrix stacked(2 * dl, dr);
    stacked << a[0], a[1];
    Eigen::HouseholderQR<CMatrix> qr(stacked);
    const auto r = std::min(2 * dl, dr);
    const CMatrix q = qr.householderQ() * CMatrix::Identity(2 * dl, r);
    const CMatrix rmat = qr.matrixQR().topRows(r).template triangularView<Eigen::Upper>();
    a[0] = q.topRows(dl);
    a[1] = q.bottomRows(dl);
    b[0] = rmat * b[0];
    b[1] = rmat * b[1];
    invalidate();
  }

  void shift_left(int k) {
    auto& a = tensors_[static_cast<std::size_t>(k)];
    auto& b = tensors_[static_cast<std::size_t>(k - 1)];
    const auto dl = a[0].rows(), dr = a[0].cols();
    CMatrix wide(dl, 2 * dr);
    wide << a[0], a[1];
    const CMatrix wt = wide.adjoint();
    Eigen::HouseholderQR<CMatrix> qr(wt);
    const auto r = std::min(2 * dr, dl);
    const CMatrix q = qr.householderQ() * CMatrix::Identity(2 * dr, r);
    const CMatrix rmat = qr.matrixQR().topRows(r).template triangularView<Eigen::Upper>();
    const CMatrix qa = q.adjoint();
    a[0] = qa.leftCols(dr);
    a[1] = qa.rightCols(dr);
    const CMatrix rd = rmat.adjoint();
    b[0] = b[0] * rd;
    b[1] = b[1] * rd;
    invalidate();
  }

  struct Environments {
    bool valid = false;
    std::vector<CMatrix> left;   // left[k]: sites < k contracted
    std::vector<CMatrix> right;  // right[k]: sites >= k contracted
  };

  void invalidate() { envs_.valid = false; }

  void ensure_environments() const {
    if (envs_.valid) return;
    const auto id = pauli_matrix(PauliAxis::I);
    envs_.left.assign(static_cast<std::size_t>(n_ + 1), CMatrix());
    envs_.right.assign(static_cast<std::size_t>(n_ + 1), CMatrix());
    envs_.left[0] = CMatrix::Ones(1, 1);
    for (int k = 0; k < n_; ++k)
      envs_.left[static_cast<std::size_t>(k + 1)] = transfer(envs_.left[static_cast<std::size_t>(k)], k, id);
    envs_.right[static_cast<std::size_t>(n_)] = CMatrix::Ones(1, 1);
    for (int k = n_ - 1; k >= 0; --k) {
      const auto& t = tensors_[static_cast<std::size_t>(k)];
      const auto& r = envs_.right[static_cast<std::size_t>(k + 1)];
      envs_.right[static_cast<std::size_t>(k)] = t[0] * r * t[0].adjoint() + t[1] * r * t[1].adjoint();
    }
    envs_.valid = true;
  }

  int n_;
  int chi_;
  double threshold_;
  int center_ = 0;
  double last_discarded_ = 0.0;
  double total_discarded_ = 0.0;
  std::vector<std::array<CMatrix, 2>> tensors_;
  mutable Environments envs_;
};

inline double mps_energy(const MpsState& mps, const PauliHamiltonian& h) {
  if (mps.n_sites() != h.n_qubits()) throw DimensionError("mps_energy: site count mismatch");
  Complex e = 0.0;
  for (const auto& t : h.terms()) e += t.coefficient * mps.pauli_expectation(t.string);
  return e.real();
}

template <class Params>
MpsState prepare_mps_ansatz_state(const EntanglerAnsatz& a, const Params& params, int chi) {
  a.validate();
  if (static_cast<int>(params.size()) != EntanglerAnsatz::kParams)
    throw DimensionError("prepare_mps_ansatz_state: expected 4 parameters");
  MpsState mps(a.n_sites, chi);
  for (int layer = 0; layer < EntanglerAnsatz::kParams; ++layer) {
    const auto u = entangler_gate(params[static_cast<std::size_t>(layer)], a.sign);
    for (auto [i, j] : a.bonds(layer)) mps.apply_gate(i, j, u);
  }
  return mps;
}

template <class Params>
double mps_ansatz_energy(const EntanglerAnsatz& a, const Params& params, int chi, const PauliHamiltonian& h) {
  return mps_energy(prepare_mps_ansatz_state(a, params, chi), h);
}

}  // namespace vqsls
