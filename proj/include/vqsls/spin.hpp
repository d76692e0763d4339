#pragma once

// Dense statevector simulation of the periodic entangler ansatz, Pauli
// expectation values and exact ground energies.

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <ostream>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>

#include "vqsls/common.hpp"
#include "vqsls/pauli.hpp"

namespace vqsls {

using Complex = std::complex<double>;
using Gate4 = Eigen::Matrix4cd;

class StateVector {
 public:
  static constexpr int kMaxQubits = 26;

  /// |0...0> on n qubits. Qubit k is bit k of the amplitude index.
  explicit StateVector(int n_qubits) : n_(n_qubits) {
    if (n_qubits <= 0 || n_qubits > kMaxQubits) throw ResourceError("StateVector: n_qubits must be in [1, 26]");
    amps_.assign(std::size_t{1} << n_qubits, Complex{0.0, 0.0});
    amps_[0] = 1.0;
  }

  int n_qubits() const noexcept { return n_; }
  std::size_t dim() const noexcept { return amps_.size(); }
  const std::vector<Complex>& amplitudes() const noexcept { return amps_; }
  std::vector<Complex>& amplitudes() noexcept { return amps_; }
  Complex operator[](std::size_t i) const { return amps_[i]; }

  double norm() const {
    double s = 0.0;
    for (const auto& a : amps_) s += std::norm(a);
    return std::sqrt(s);
  }

  /// Applies a 4x4 unitary to qubits (i, j); the matrix index is 2*b_i + b_j.
  void apply_two_qubit(int i, int j, const Gate4& u) {
    if (i == j) throw DomainError("apply_two_qubit: qubits must differ");
    if (i < 0 || j < 0 || i >= n_ || j >= n_) throw DimensionError("apply_two_qubit: qubit out of range");
    const std::size_t bi = std::size_t{1} << i, bj = std::size_t{1} << j;
    for (std::size_t base = 0; base < amps_.size(); ++base) {
      if (base & (bi | bj)) continue;
      const std::size_t idx[4] = {base, base | bj, base | bi, base | bi | bj};
      Complex in[4], out[4];
      for (int k = 0; k < 4; ++k) in[k] = amps_[idx[k]];
      for (int r = 0; r < 4; ++r) {
        out[r] = 0.0;
        for (int c = 0; c < 4; ++c) out[r] += u(r, c) * in[c];
      }
      for (int k = 0; k < 4; ++k) amps_[idx[k]] = out[k];
    }
  }

  /// <psi|P|psi>
  Complex pauli_expectation(const PauliString& p) const {
    if (p.n_qubits() != n_) throw DimensionError("pauli_expectation: qubit count mismatch");
    Complex s = 0.0;
    for (std::size_t b = 0; b < amps_.size(); ++b) {
      if (amps_[b] == Complex{}) continue;
      const auto [target, phase] = p.apply(b);
      s += std::conj(amps_[target]) * phase * amps_[b];
    }
    return s;
  }

  /// Little-endian complex64 (float32 real, float32 imag) per amplitude.
  void dump_binary(std::ostream& os) const {
    for (const auto& a : amps_) {
      const float parts[2] = {static_cast<float>(a.real()), static_cast<float>(a.imag())};
      for (float f : parts) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, sizeof bits);
        const char bytes[4] = {static_cast<char>(bits & 0xFF), static_cast<char>((bits >> 8) & 0xFF),
                               static_cast<char>((bits >> 16) & 0xFF), static_cast<char>((bits >> 24) & 0xFF)};
        os.write(bytes, 4);
      }
    }
  }

 private:
  int n_;
  std::vector<Complex> amps_;
};

/// Sign between the two generator terms: Y_i Z_j - Z_i Y_j (minus) or
/// Y_i Z_j + Z_i Y_j (plus).
enum class GeneratorSign { minus, plus };

inline Gate4 entangler_generator(GeneratorSign sign) {
  Eigen::Matrix2cd y, z;
  y << 0, Complex(0, -1), Complex(0, 1), 0;
  z << 1, 0, 0, -1;
  auto kron = [](const Eigen::Matrix2cd& a, const Eigen::Matrix2cd& b) {
    Gate4 out;
    for (int r = 0; r < 2; ++r)
      for (int c = 0; c < 2; ++c) out.block<2, 2>(2 * r, 2 * c) = a(r, c) * b;
    return out;
  };
  const Gate4 yz = kron(y, z), zy = kron(z, y);
  return sign == GeneratorSign::minus ? Gate4(yz - zy) : Gate4(yz + zy);
}

/// exp(-i theta G) from the eigen-decomposition of the Hermitian generator.
inline Gate4 entangler_gate(double theta, GeneratorSign sign) {
  static const auto decomp = [] {
    std::array<Eigen::SelfAdjointEigenSolver<Gate4>, 2> d;
    d[0].compute(entangler_generator(GeneratorSign::minus));
    d[1].compute(entangler_generator(GeneratorSign::plus));
    return d;
  }();
  const auto& es = decomp[sign == GeneratorSign::minus ? 0 : 1];
  Eigen::Vector4cd phases;
  for (int k = 0; k < 4; ++k) phases(k) = std::exp(Complex(0.0, -theta * es.eigenvalues()(k)));
  return es.eigenvectors() * phases.asDiagonal() * es.eigenvectors().adjoint();
}

inline void apply_entangler(StateVector& state, int i, int j, double theta, GeneratorSign sign = GeneratorSign::minus) {
  if (i == j) throw DomainError("apply_entangler: i == j");
  state.apply_two_qubit(i, j, entangler_gate(theta, sign));
}

/// Four layers sharing one angle each: even bonds (theta1), odd bonds with
/// the periodic wrap (theta2), even (theta3), odd (theta4). Within a layer
/// gates act in ascending bond order; the wrap bond (n-1, 0) is last.
struct EntanglerAnsatz {
  int n_sites = 0;
  GeneratorSign sign = GeneratorSign::minus;
  bool periodic = true;

  static constexpr int kParams = 4;
  /// Generators of either sign have spectrum {0, +-2}, so each angle has period pi.
  static constexpr double kPeriod = 3.14159265358979323846;

  /// Each angle reduced into [-pi/2, pi/2); the state is unchanged.
  template <class Params>
  static Params canonical(Params p) {
    for (auto& t : p) t -= kPeriod * std::floor(t / kPeriod + 0.5);
    return p;
  }

  void validate() const {
    if (n_sites < 2 || n_sites % 2 != 0) throw DomainError("EntanglerAnsatz: n_sites must be even and >= 2");
  }

  std::vector<std::pair<int, int>> bonds(int layer) const {
    std::vector<std::pair<int, int>> out;
    if (layer % 2 == 0) {
      for (int i = 0; i + 1 < n_sites; i += 2) out.emplace_back(i, i + 1);
    } else {
      for (int i = 1; i + 1 < n_sites; i += 2) out.emplace_back(i, i + 1);
      if (periodic && n_sites > 2) out.emplace_back(n_sites - 1, 0);
    }
    return out;
  }
};

template <class Params>
StateVector prepare_ansatz_state(const EntanglerAnsatz& a, const Params& params) {
  a.validate();
  if (static_cast<int>(params.size()) != EntanglerAnsatz::kParams)
    throw DimensionError("prepare_ansatz_state: expected 4 parameters");
  StateVector psi(a.n_sites);
  for (int layer = 0; layer < EntanglerAnsatz::kParams; ++layer) {
    const auto u = entangler_gate(params[static_cast<std::size_t>(layer)], a.sign);
    for (auto [i, j] : a.bonds(layer)) psi.apply_two_qubit(i, j, u);
  }
  return psi;
}

inline double expectation(const StateVector& state, const PauliHamiltonian& h) {
  if (state.n_qubits() != h.n_qubits()) throw DimensionError("expectation: qubit count mismatch");
  Complex e = 0.0;
  for (const auto& t : h.terms()) e += t.coefficient * state.pauli_expectation(t.string);
  if (std::abs(e.imag()) > 1e-9) throw Error("expectation: non-negligible imaginary part");
  return e.real();
}

namespace detail {

inline std::vector<Complex> apply_hamiltonian(const PauliHamiltonian& h, const std::vector<Complex>& v) {
  std::vector<Complex> out(v.size(), Complex{});
  for (const auto& t : h.terms())
    for (std::size_t b = 0; b < v.size(); ++b) {
      const auto [target, phase] = t.string.apply(b);
      out[target] += t.coefficient * phase * v[b];
    }
  return out;
}

// Lanczos with full reorthogonalization on a deterministic start vector.
inline double lanczos_ground_energy(const PauliHamiltonian& h, int max_iter = 400, double tol = 1e-12) {
  const std::size_t dim = std::size_t{1} << h.n_qubits();
  using CVec = Eigen::VectorXcd;
  std::vector<CVec> basis;
  CVec v(static_cast<Eigen::Index>(dim));
  for (std::size_t b = 0; b < dim; ++b)
    v(static_cast<Eigen::Index>(b)) = 1.0 + 0.1 * std::sin(static_cast<double>(b) * 0.7 + 0.3);
  v.normalize();
  std::vector<double> alpha, beta;
  double previous = std::numeric_limits<double>::infinity();
  for (int it = 0; it < max_iter && static_cast<std::size_t>(it) < dim; ++it) {
    basis.push_back(v);
    std::vector<Complex> in(v.data(), v.data() + v.size());
    auto hv = apply_hamiltonian(h, in);
    CVec w = Eigen::Map<CVec>(hv.data(), static_cast<Eigen::Index>(dim));
    const double a = v.dot(w).real();
    alpha.push_back(a);
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& q : basis) w -= q.dot(w) * q;
    const double b = w.norm();

    const auto k = static_cast<Eigen::Index>(alpha.size());
    Matrix t = Matrix::Zero(k, k);
    for (Eigen::Index x = 0; x < k; ++x) {
      t(x, x) = alpha[static_cast<std::size_t>(x)];
      if (x + 1 < k) t(x, x + 1) = t(x + 1, x) = beta[static_cast<std::size_t>(x)];
    }
    const double lowest = Eigen::SelfAdjointEigenSolver<Matrix>(t, Eigen::EigenvaluesOnly).eigenvalues()(0);
    if (b < 1e-12 || std::abs(lowest - previous) < tol * std::max(1.0, std::abs(lowest))) return lowest;
    previous = lowest;
    beta.push_back(b);
    v = w / b;
  }
  return previous;
}

}  // namespace detail

/// Lowest eigenvalue of the Hamiltonian (up to 16 qubits). Dense
/// diagonalization through 10 qubits, Lanczos beyond.
inline double exact_ground_energy(const PauliHamiltonian& h) {
  if (h.n_qubits() > 16) throw ResourceError("exact_ground_energy: more than 16 qubits");
  const std::size_t dim = std::size_t{1} << h.n_qubits();
  if (h.n_qubits() > 10) return detail::lanczos_ground_energy(h);
  Eigen::MatrixXcd m = Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  for (const auto& t : h.terms())
    for (std::size_t b = 0; b < dim; ++b) {
      const auto [target, phase] = t.string.apply(b);
      m(static_cast<Eigen::Index>(target), static_cast<Eigen::Index>(b)) += t.coefficient * phase;
    }
  return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd>(m, Eigen::EigenvaluesOnly).eigenvalues()(0);
}

}  // namespace vqsls
