#pragma once

// Surrogate Hessian line search: surrogate minimization, finite-difference
// Hessian, conjugate-direction selection, window optimization, noisy
// parallel line searches with polynomial fits, and a Powell baseline.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>

#include "vqsls/common.hpp"
#include "vqsls/noise.hpp"

namespace vqsls {

using Cost = std::function<double(const Vector&)>;

namespace detail {

inline double checked_value(const Cost& f, const Vector& x) {
  const double v = f(x);
  if (!std::isfinite(v)) throw EvaluationError("cost function returned a non-finite value");
  return v;
}

inline Vector fd_gradient(const Cost& f, const Vector& x, double rel_step) {
  Vector g(x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double h = rel_step * std::max(1.0, std::abs(x(k)));
    Vector xp = x, xm = x;
    xp(k) += h;
    xm(k) -= h;
    g(k) = (checked_value(f, xp) - checked_value(f, xm)) / (2.0 * h);
  }
  return g;
}

inline double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace detail

// ---- surrogate minimization ---------------------------------------------

struct MinimizeOptions {
  double grad_tol = 1e-6;
  int max_iter = 0;  ///< 0 means 500 * N_PAR
  double fd_step = 1e-6;
};

struct MinimizeResult {
  Vector x;
  double value = 0.0;
  double gradient_norm = 0.0;  ///< infinity norm at x
  int iterations = 0;
};

/// BFGS with central finite-difference gradients and a backtracking Armijo
/// line search. Returns once the gradient infinity norm is <= grad_tol;
/// stops early (throwing, with the best point) when steps stop decreasing the
/// cost, as at a kink of a truncated surrogate.
inline MinimizeResult surrogate_minimize(const Cost& cost, const Vector& x0, const MinimizeOptions& opts = {}) {
  const auto n = x0.size();
  if (n == 0) throw DimensionError("surrogate_minimize: empty parameter vector");
  const int cap = opts.max_iter > 0 ? opts.max_iter : static_cast<int>(500 * n);
  Vector x = x0;
  double fx = detail::checked_value(cost, x);
  Vector g = detail::fd_gradient(cost, x, opts.fd_step);
  Matrix hinv = Matrix::Identity(n, n);
  bool scaled = false;
  int stalled = 0;  // consecutive accepted steps with no measurable decrease
  for (int it = 0; it < cap && stalled < 10; ++it) {
    if (g.lpNorm<Eigen::Infinity>() <= opts.grad_tol) return {x, fx, g.lpNorm<Eigen::Infinity>(), it};
    Vector p = -hinv * g;
    if (g.dot(p) >= 0.0) {
      hinv.setIdentity();
      p = -g;
    }
    double alpha = 1.0, fnew = fx;
    Vector xnew = x;
    bool accepted = false;
    for (int k = 0; k < 60; ++k) {
      xnew = x + alpha * p;
      fnew = detail::checked_value(cost, xnew);
      if (fnew <= fx + 1e-4 * alpha * g.dot(p)) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      if (hinv.isIdentity()) break;  // steepest descent made no progress either
      hinv.setIdentity();
      continue;
    }
    const Vector gnew = detail::fd_gradient(cost, xnew, opts.fd_step);
    const Vector s = xnew - x, y = gnew - g;
    const double sy = s.dot(y);
    if (sy > 0.0) {
      if (!scaled) {
        hinv *= sy / y.dot(y);
        scaled = true;
      }
      const double rho = 1.0 / sy;
      const Matrix id = Matrix::Identity(n, n);
      hinv = (id - rho * s * y.transpose()) * hinv * (id - rho * y * s.transpose()) + rho * s * s.transpose();
    }
    stalled = fx - fnew <= 1e-14 * std::max(1.0, std::abs(fx)) ? stalled + 1 : 0;
    x = xnew;
    fx = fnew;
    g = gnew;
  }
  if (g.lpNorm<Eigen::Infinity>() <= opts.grad_tol) return {x, fx, g.lpNorm<Eigen::Infinity>(), cap};
  throw NonConvergenceError("surrogate_minimize: gradient tolerance not reached", x, fx);
}

// ---- Hessian and directions ---------------------------------------------

struct HessianResult {
  Matrix matrix;
  Vector eigenvalues;   ///< descending
  Matrix eigenvectors;  ///< columns, matching eigenvalues
  double fd_step = 0.0;
};

inline double default_fd_step(const Vector& x) {
  return 1e-3 * std::max(1.0, x.size() ? x.lpNorm<Eigen::Infinity>() : 0.0);
}

/// Eigen-decomposition of a symmetric matrix, descending, with each
/// eigenvector's largest-magnitude component made positive.
inline HessianResult decompose_hessian(const Matrix& m, double step) {
  HessianResult r;
  r.matrix = 0.5 * (m + m.transpose());
  r.fd_step = step;
  Eigen::SelfAdjointEigenSolver<Matrix> es(r.matrix);
  const auto n = r.matrix.rows();
  r.eigenvalues = es.eigenvalues().reverse();
  r.eigenvectors = es.eigenvectors().rowwise().reverse();
  for (Eigen::Index k = 0; k < n; ++k) {
    Eigen::Index imax = 0;
    r.eigenvectors.col(k).cwiseAbs().maxCoeff(&imax);
    if (r.eigenvectors(imax, k) < 0.0) r.eigenvectors.col(k) *= -1.0;
  }
  return r;
}

/// Central second differences with step h along each axis:
/// H_kl = [f(x+h_k+h_l) - f(x+h_k-h_l) - f(x-h_k+h_l) + f(x-h_k-h_l)] / (4 h^2).
inline HessianResult finite_difference_hessian(const Cost& cost, const Vector& x, double step, int jobs = 1) {
  if (!(step > 0.0)) throw DomainError("finite_difference_hessian: step must be positive");
  const auto n = x.size();
  std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs;
  for (Eigen::Index k = 0; k < n; ++k)
    for (Eigen::Index l = 0; l <= k; ++l) pairs.emplace_back(k, l);
  const auto values = parallel_map<double>(
      pairs.size(),
      [&](std::size_t idx) {
        const auto [k, l] = pairs[idx];
        auto at = [&](double sk, double sl) {
          Vector y = x;
          y(k) += sk * step;
          y(l) += sl * step;
          return detail::checked_value(cost, y);
        };
        return (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0 * step * step);
      },
      jobs);
  Matrix h(n, n);
  for (std::size_t idx = 0; idx < pairs.size(); ++idx) {
    const auto [k, l] = pairs[idx];
    h(k, l) = h(l, k) = values[idx];
  }
  return decompose_hessian(h, step);
}

enum class DropReason { near_zero, negative, truncated_by_rank };

inline const char* to_string(DropReason r) {
  switch (r) {
    case DropReason::near_zero: return "near-zero";
    case DropReason::negative: return "negative";
    case DropReason::truncated_by_rank: return "truncated-by-rank";
  }
  return "?";
}

struct DroppedDirection {
  int index = 0;
  double eigenvalue = 0.0;
  DropReason reason = DropReason::near_zero;
};

struct ConjugateDirections {
  Matrix directions;  ///< kept eigenvectors as columns
  Vector kept_eigenvalues;
  std::vector<int> kept_indices;
  std::vector<DroppedDirection> dropped;

  int size() const noexcept { return static_cast<int>(kept_indices.size()); }
  Vector direction(int d) const { return directions.col(d); }
};

/// Keeps eigenvalues >= drop_tol, optionally only the keep_top largest.
/// Eigenvalues below -drop_tol are dropped as negative, the rest of the
/// small ones as near-zero.
inline ConjugateDirections select_directions(const HessianResult& h, double drop_tol = 1e-3,
                                             std::optional<int> keep_top = std::nullopt) {
  if (!(drop_tol >= 0.0)) throw DomainError("select_directions: drop_tol must be >= 0");
  if (keep_top && *keep_top < 1) throw DomainError("select_directions: keep_top must be positive");
  ConjugateDirections out;
  std::vector<int> kept;
  for (Eigen::Index k = 0; k < h.eigenvalues.size(); ++k) {
    const double lam = h.eigenvalues(k);
    const int idx = static_cast<int>(k);
    if (lam >= drop_tol && lam > 0.0) {
      if (keep_top && static_cast<int>(kept.size()) >= *keep_top)
        out.dropped.push_back({idx, lam, DropReason::truncated_by_rank});
      else
        kept.push_back(idx);
    } else {
      out.dropped.push_back({idx, lam, lam <= -drop_tol ? DropReason::negative : DropReason::near_zero});
    }
  }
  if (kept.empty()) throw DomainError("select_directions: every direction was dropped");
  out.kept_indices = kept;
  out.directions.resize(h.eigenvectors.rows(), static_cast<Eigen::Index>(kept.size()));
  out.kept_eigenvalues.resize(static_cast<Eigen::Index>(kept.size()));
  for (std::size_t d = 0; d < kept.size(); ++d) {
    out.directions.col(static_cast<Eigen::Index>(d)) = h.eigenvectors.col(kept[d]);
    out.kept_eigenvalues(static_cast<Eigen::Index>(d)) = h.eigenvalues(kept[d]);
  }
  return out;
}

// ---- polynomial fits ------------------------------------------------------

/// The fitted polynomial has no interior minimum; `edge` is the window edge
/// with the lower fitted energy.
class WindowEdgeError : public Error {
 public:
  WindowEdgeError(double edge, double energy)
      : Error("no interior minimum in fit window"), edge_(edge), energy_(energy) {}
  double edge() const noexcept { return edge_; }
  double energy() const noexcept { return energy_; }

 private:
  double edge_, energy_;
};

struct Polynomial {
  std::vector<double> c;  ///< coefficients in u = x / scale, lowest first
  double scale = 1.0;

  double operator()(double x) const {
    const double u = x / scale;
    double v = 0.0;
    for (auto it = c.rbegin(); it != c.rend(); ++it) v = v * u + *it;
    return v;
  }
  double second_derivative(double x) const {
    const double u = x / scale;
    double v = 0.0;
    for (std::size_t k = c.size(); k-- > 2;) v = v * u + static_cast<double>(k * (k - 1)) * c[k];
    return v / (scale * scale);
  }
};

namespace detail {

inline Polynomial weighted_fit(const std::vector<double>& xs, const std::vector<double>& ys,
                               const std::vector<double>& w, int degree) {
  Polynomial p;
  double scale = 0.0;
  for (double x : xs) scale = std::max(scale, std::abs(x));
  p.scale = scale > 0.0 ? scale : 1.0;
  const auto m = static_cast<Eigen::Index>(xs.size());
  Matrix a(m, degree + 1);
  Vector b(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const double u = xs[static_cast<std::size_t>(i)] / p.scale;
    double pw = 1.0;
    for (int k = 0; k <= degree; ++k, pw *= u) a(i, k) = w[static_cast<std::size_t>(i)] * pw;
    b(i) = w[static_cast<std::size_t>(i)] * ys[static_cast<std::size_t>(i)];
  }
  const Vector c = a.colPivHouseholderQr().solve(b);
  p.c.assign(c.data(), c.data() + c.size());
  return p;
}

// Real roots of sum d_k u^k.
inline std::vector<double> real_roots(std::vector<double> d) {
  double big = 0.0;
  for (double v : d) big = std::max(big, std::abs(v));
  while (!d.empty() && std::abs(d.back()) <= 1e-13 * big) d.pop_back();
  const auto deg = static_cast<Eigen::Index>(d.size()) - 1;
  if (deg < 1) return {};
  if (deg == 1) return {-d[0] / d[1]};
  Matrix comp = Matrix::Zero(deg, deg);
  for (Eigen::Index k = 1; k < deg; ++k) comp(k, k - 1) = 1.0;
  for (Eigen::Index k = 0; k < deg; ++k) comp(k, deg - 1) = -d[static_cast<std::size_t>(k)] / d.back();
  const Eigen::VectorXcd ev = Eigen::EigenSolver<Matrix>(comp, false).eigenvalues();
  std::vector<double> out;
  for (Eigen::Index k = 0; k < ev.size(); ++k)
    if (std::abs(ev(k).imag()) <= 1e-9 * (1.0 + std::abs(ev(k).real()))) out.push_back(ev(k).real());
  std::sort(out.begin(), out.end());
  return out;
}

// Interior local minimum nearest `center`, or nullopt.
inline std::optional<double> interior_minimum(const Polynomial& p, double lo, double hi, double center) {
  std::vector<double> d;
  for (std::size_t k = 1; k < p.c.size(); ++k) d.push_back(static_cast<double>(k) * p.c[k]);
  std::optional<double> best;
  for (double u : real_roots(d)) {
    const double x = u * p.scale;
    if (x < lo || x > hi) continue;
    if (!(p.second_derivative(x) > 0.0)) continue;
    if (!best || std::abs(x - center) < std::abs(*best - center)) best = x;
  }
  return best;
}

inline std::pair<double, double> edge_argmin(const Polynomial& p, double lo, double hi) {
  const double flo = p(lo), fhi = p(hi);
  return flo <= fhi ? std::make_pair(lo, flo) : std::make_pair(hi, fhi);
}

inline std::vector<double> fit_weights(const std::vector<double>& sigma) {
  const bool all_positive = std::all_of(sigma.begin(), sigma.end(), [](double s) { return s > 0.0; });
  std::vector<double> w(sigma.size(), 1.0);
  if (all_positive)
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = 1.0 / sigma[i];
  return w;
}

// Minimum of a fit (interior, else edge); the flag tells which.
inline std::tuple<double, double, bool> fit_argmin(const std::vector<double>& xs, const std::vector<double>& ys,
                                                   const std::vector<double>& w, int degree) {
  const auto p = weighted_fit(xs, ys, w, degree);
  const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
  const double center = 0.5 * (*lo + *hi);
  if (auto x = interior_minimum(p, *lo, *hi, center)) return {*x, p(*x), false};
  const auto [ex, ey] = edge_argmin(p, *lo, *hi);
  return {ex, ey, true};
}

}  // namespace detail

struct FitOptions {
  int bootstrap = 200;
  std::uint64_t seed = 0x5eed;
};

struct FitResult {
  double x_min = 0.0;
  double e_min = 0.0;
  double sigma_xmin = 0.0;
  double sigma_emin = 0.0;
  double e_center = 0.0;  ///< fitted value at the window center
  Polynomial polynomial;
};

/// Weighted least-squares polynomial fit and its minimum. Uncertainties come
/// from refitting data perturbed by Gaussian noise of the given sigma.
inline FitResult fit_polynomial_minimum(const std::vector<double>& xs, const std::vector<double>& ys,
                                        const std::vector<double>& sigma, int degree, const FitOptions& opts = {}) {
  if (degree < 2 || degree > 4) throw DomainError("fit_polynomial_minimum: degree must be 2, 3 or 4");
  if (xs.size() != ys.size() || xs.size() != sigma.size())
    throw DimensionError("fit_polynomial_minimum: xs, ys and sigma lengths differ");
  if (static_cast<int>(xs.size()) < degree + 2)
    throw DomainError("fit_polynomial_minimum: need at least degree + 2 points");
  for (double s : sigma)
    if (!(s >= 0.0)) throw DomainError("fit_polynomial_minimum: sigma must be >= 0");
  const auto w = detail::fit_weights(sigma);
  FitResult r;
  r.polynomial = detail::weighted_fit(xs, ys, w, degree);
  const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
  const double center = 0.5 * (*lo + *hi);
  r.e_center = r.polynomial(center);
  const auto x = detail::interior_minimum(r.polynomial, *lo, *hi, center);
  if (!x) {
    const auto [ex, ey] = detail::edge_argmin(r.polynomial, *lo, *hi);
    throw WindowEdgeError(ex, ey);
  }
  r.x_min = *x;
  r.e_min = r.polynomial(*x);
  const bool noisy = std::any_of(sigma.begin(), sigma.end(), [](double s) { return s > 0.0; });
  if (noisy && opts.bootstrap >= 2) {
    std::mt19937_64 rng(opts.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> xb, eb;
    std::vector<double> yb(ys.size());
    for (int b = 0; b < opts.bootstrap; ++b) {
      for (std::size_t i = 0; i < ys.size(); ++i) yb[i] = ys[i] + sigma[i] * normal(rng);
      const auto [bx, be, edge] = detail::fit_argmin(xs, yb, w, degree);
      (void)edge;
      xb.push_back(bx);
      eb.push_back(be);
    }
    r.sigma_xmin = detail::sample_std(xb);
    r.sigma_emin = detail::sample_std(eb);
  }
  return r;
}

// ---- window optimization ----------------------------------------------------

struct WindowTarget {
  enum class Kind { param_error, energy_error };
  Kind kind = Kind::energy_error;
  double value = 1e-4;
};

struct WindowOptions {
  int M = 7;
  int degree = 4;
  double w_min = 1e-3, w_max = 1.0;
  int n_widths = 12;
  double de_min = 1e-6, de_max = 1e-1;
  int n_noise = 10;
  int resamples = 200;
  std::uint64_t seed = 0x77696e64;
  int jobs = 1;

  void validate() const {
    if (M < 3 || M % 2 == 0) throw DomainError("window options: M must be odd and >= 3");
    if (degree < 2 || degree > 4) throw DomainError("window options: degree must be 2, 3 or 4");
    if (M < degree + 2) throw DomainError("window options: M must be >= degree + 2");
    if (!(w_min > 0.0 && w_max >= w_min) || n_widths < 1) throw DomainError("window options: bad width grid");
    if (!(de_min > 0.0 && de_max >= de_min) || n_noise < 1) throw DomainError("window options: bad noise grid");
    if (resamples < 2) throw DomainError("window options: resamples must be >= 2");
  }
};

struct SearchWindow {
  std::vector<double> half_widths;  ///< W_d per kept direction
  int M = 7;
  int degree = 4;
  double delta_e = 0.0;              ///< admissible (or targeted) energy noise
  std::vector<double> delta_theta;   ///< estimated parameter error per direction

  void validate(int n_dirs) const {
    if (static_cast<int>(half_widths.size()) != n_dirs) throw DimensionError("window: one width per direction");
    for (double w : half_widths)
      if (!(w > 0.0)) throw DomainError("window: widths must be positive");
    if (M < degree + 2 || M % 2 == 0) throw DomainError("window: M must be odd and >= degree + 2");
  }
};

class InfeasibleWindowError : public Error {
 public:
  InfeasibleWindowError(const std::string& what, std::vector<double> frontier)
      : Error(what), frontier_(std::move(frontier)) {}
  /// Smallest attainable parameter error per direction over the grid.
  const std::vector<double>& frontier() const noexcept { return frontier_; }

 private:
  std::vector<double> frontier_;
};

inline std::vector<double> log_grid(double lo, double hi, int n) {
  std::vector<double> g(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k)
    g[static_cast<std::size_t>(k)] = n == 1 ? lo : lo * std::pow(hi / lo, static_cast<double>(k) / (n - 1));
  return g;
}

inline std::vector<double> window_offsets(double w, int m) {
  std::vector<double> t(static_cast<std::size_t>(m));
  for (int j = 0; j < m; ++j) t[static_cast<std::size_t>(j)] = -w + 2.0 * w * j / (m - 1);
  t[static_cast<std::size_t>(m / 2)] = 0.0;
  return t;
}

/// Monte Carlo parameter error |bias| + std of the fitted minimum when the
/// values f are observed with Gaussian noise delta_e; the true minimum is at
/// offset 0. Minima are not clipped to the window, and a resample without
/// any local minimum makes the error infinite.
inline double monte_carlo_param_error(const std::vector<double>& t, const std::vector<double>& f, double delta_e,
                                      int degree, int resamples, std::uint64_t seed) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, delta_e);
  const std::vector<double> w(t.size(), 1.0);
  std::vector<double> xs;
  std::vector<double> y(f.size());
  xs.reserve(static_cast<std::size_t>(resamples));
  for (int k = 0; k < resamples; ++k) {
    for (std::size_t i = 0; i < f.size(); ++i) y[i] = f[i] + normal(rng);
    const auto p = detail::weighted_fit(t, y, w, degree);
    const auto x = detail::interior_minimum(p, -inf, inf, 0.0);
    if (!x) return inf;
    xs.push_back(*x);
  }
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  return std::abs(mean) + detail::sample_std(xs);
}

/// Chooses per-direction half-widths from Monte Carlo fits on the surrogate.
/// Parameter-error target: each direction's largest admissible noise over
/// the width grid, overall noise = the smallest of those, then each width
/// minimizing the parameter error at that noise. Energy-error target: each
/// width minimizing the parameter error at the given noise.
inline SearchWindow optimize_windows(const Cost& surrogate, const Vector& x_star, const ConjugateDirections& dirs,
                                     const WindowTarget& target, const WindowOptions& opts = {}) {
  opts.validate();
  if (!(target.value > 0.0)) throw DomainError("optimize_windows: target must be positive");
  const auto widths = log_grid(opts.w_min, opts.w_max, opts.n_widths);
  const auto noises = target.kind == WindowTarget::Kind::energy_error ? std::vector<double>{target.value}
                                                                      : log_grid(opts.de_min, opts.de_max, opts.n_noise);
  const int nd = dirs.size();
  const auto nw = widths.size(), nn = noises.size();

  // surrogate profiles along each direction, one per width
  std::vector<std::vector<double>> profile(static_cast<std::size_t>(nd) * nw);
  const auto profiles = parallel_map<std::vector<double>>(
      profile.size(),
      [&](std::size_t idx) {
        const auto d = static_cast<int>(idx / nw);
        const auto t = window_offsets(widths[idx % nw], opts.M);
        std::vector<double> f;
        for (double tj : t) f.push_back(detail::checked_value(surrogate, x_star + tj * dirs.direction(d)));
        return f;
      },
      opts.jobs);

  // err[(d * nw + w) * nn + e]
  const auto err = parallel_map<double>(
      static_cast<std::size_t>(nd) * nw * nn,
      [&](std::size_t idx) {
        const auto pe = idx % nn, pw = (idx / nn) % nw;
        const auto t = window_offsets(widths[pw], opts.M);
        return monte_carlo_param_error(t, profiles[idx / nn], noises[pe], opts.degree, opts.resamples,
                                       stream_seed(opts.seed, idx));
      },
      opts.jobs);
  auto at = [&](int d, std::size_t w, std::size_t e) { return err[(static_cast<std::size_t>(d) * nw + w) * nn + e]; };

  SearchWindow out;
  out.M = opts.M;
  out.degree = opts.degree;
  std::size_t noise_index = 0;
  if (target.kind == WindowTarget::Kind::param_error) {
    std::optional<std::size_t> overall;
    std::vector<double> frontier;
    bool feasible = true;
    for (int d = 0; d < nd; ++d) {
      std::optional<std::size_t> best;
      double best_err = std::numeric_limits<double>::infinity();
      for (std::size_t w = 0; w < nw; ++w)
        for (std::size_t e = 0; e < nn; ++e) {
          best_err = std::min(best_err, at(d, w, e));
          if (at(d, w, e) <= target.value && (!best || e > *best)) best = e;
        }
      frontier.push_back(best_err);
      if (!best) {
        feasible = false;
        continue;
      }
      overall = overall ? std::min(*overall, *best) : *best;
    }
    if (!feasible) {
      std::ostringstream msg;
      msg << "optimize_windows: parameter error " << target.value << " unreachable; best per direction:";
      for (double f : frontier) msg << ' ' << f;
      throw InfeasibleWindowError(msg.str(), frontier);
    }
    noise_index = *overall;
  }
  out.delta_e = noises[noise_index];
  for (int d = 0; d < nd; ++d) {
    std::size_t best = 0;
    for (std::size_t w = 1; w < nw; ++w)
      if (at(d, w, noise_index) < at(d, best, noise_index)) best = w;
    out.half_widths.push_back(widths[best]);
    out.delta_theta.push_back(at(d, best, noise_index));
  }
  return out;
}

// ---- noisy line search ------------------------------------------------------

struct DirectionFit {
  std::vector<double> offsets;
  std::vector<double> energies;
  std::vector<double> sigmas;
  double x_min = 0.0;
  double sigma_xmin = 0.0;
  double e_min = 0.0;
  double sigma_emin = 0.0;
  double e_center = 0.0;
  bool edge = false;
};

struct IterationRecord {
  Vector center;
  Vector new_center;
  std::vector<DirectionFit> fits;
  double center_energy = 0.0;  ///< measured at the center
  double center_sigma = 0.0;
  double energy = 0.0;  ///< predicted from the fits at new_center
  double sigma = 0.0;
  std::uint64_t calls_before = 0;
  std::uint64_t calls_after = 0;
  std::optional<double> reference_energy;  ///< noiseless energy at new_center, when supplied
};

struct LineSearchRun {
  std::vector<IterationRecord> iterations;
  bool converged = false;
};

struct LineSearchOptions {
  int jobs = 1;
  bool sequential = false;
  int bootstrap = 200;
  std::uint64_t seed = 0x6c696e65;
  int max_iters = 10;
  double energy_tol = 1e-10;  ///< floor on the convergence threshold
};

namespace detail {

inline DirectionFit fit_direction(std::vector<double> offsets, std::vector<Evaluation> evals, int degree,
                                  const FitOptions& fo) {
  DirectionFit df;
  df.offsets = std::move(offsets);
  for (const auto& e : evals) {
    df.energies.push_back(e.energy);
    df.sigmas.push_back(e.sigma);
  }
  try {
    const auto r = fit_polynomial_minimum(df.offsets, df.energies, df.sigmas, degree, fo);
    df.x_min = r.x_min;
    df.e_min = r.e_min;
    df.sigma_xmin = r.sigma_xmin;
    df.sigma_emin = r.sigma_emin;
    df.e_center = r.e_center;
  } catch (const WindowEdgeError& e) {
    df.edge = true;
    df.x_min = e.edge();
    df.e_min = e.energy();
    const auto w = fit_weights(df.sigmas);
    df.e_center = weighted_fit(df.offsets, df.energies, w, degree)(0.0);
    df.sigma_emin = *std::max_element(df.sigmas.begin(), df.sigmas.end());
    log_message(LogLevel::info, "line search: fit minimum at window edge, re-centering");
  }
  return df;
}

}  // namespace detail

/// One iteration: the shared center plus M-1 offsets per direction on a
/// uniform grid over [-W_d, W_d], a polynomial fit per direction, and the
/// simultaneous update center + sum_d x_min,d v_d. In sequential mode each
/// direction is searched from the center updated by the previous ones.
inline IterationRecord line_search_iteration(CountedEvaluator& ev, const Vector& center, const ConjugateDirections& dirs,
                                             const SearchWindow& window, const LineSearchOptions& opts = {}) {
  window.validate(dirs.size());
  if (center.size() != dirs.directions.rows()) throw DimensionError("line_search_iteration: center size mismatch");
  IterationRecord rec;
  rec.center = center;
  rec.calls_before = ev.calls();
  const int nd = dirs.size(), m = window.M;
  auto fit_options = [&](int d) { return FitOptions{opts.bootstrap, stream_seed(opts.seed, rec.calls_before * 131 + static_cast<std::uint64_t>(d))}; };

  if (!opts.sequential) {
    std::vector<Vector> points{center};
    std::vector<std::vector<double>> offsets(static_cast<std::size_t>(nd));
    for (int d = 0; d < nd; ++d) {
      offsets[static_cast<std::size_t>(d)] = window_offsets(window.half_widths[static_cast<std::size_t>(d)], m);
      for (int j = 0; j < m; ++j)
        if (j != m / 2) points.push_back(center + offsets[static_cast<std::size_t>(d)][static_cast<std::size_t>(j)] * dirs.direction(d));
    }
    const auto evals = ev.evaluate_batch(points, opts.jobs);
    rec.center_energy = evals[0].energy;
    rec.center_sigma = evals[0].sigma;
    Vector next = center;
    double predicted = rec.center_energy, var = 0.0;
    std::size_t cursor = 1;
    for (int d = 0; d < nd; ++d) {
      std::vector<Evaluation> line;
      for (int j = 0; j < m; ++j) line.push_back(j == m / 2 ? evals[0] : evals[cursor++]);
      auto df = detail::fit_direction(offsets[static_cast<std::size_t>(d)], line, window.degree, fit_options(d));
      next += df.x_min * dirs.direction(d);
      predicted += df.e_min - df.e_center;
      var += df.sigma_emin * df.sigma_emin;
      rec.fits.push_back(std::move(df));
    }
    rec.new_center = next;
    rec.energy = predicted;
    rec.sigma = std::sqrt(var);
  } else {
    Vector c = center;
    for (int d = 0; d < nd; ++d) {
      const auto offs = window_offsets(window.half_widths[static_cast<std::size_t>(d)], m);
      std::vector<Vector> points;
      for (double t : offs) points.push_back(c + t * dirs.direction(d));
      const auto evals = ev.evaluate_batch(points, opts.jobs);
      if (d == 0) {
        rec.center_energy = evals[static_cast<std::size_t>(m / 2)].energy;
        rec.center_sigma = evals[static_cast<std::size_t>(m / 2)].sigma;
      }
      auto df = detail::fit_direction(offs, evals, window.degree, fit_options(d));
      c += df.x_min * dirs.direction(d);
      rec.energy = df.e_min;
      rec.sigma = df.sigma_emin;
      rec.fits.push_back(std::move(df));
    }
    rec.new_center = c;
  }
  rec.calls_after = ev.calls();
  return rec;
}

/// |E_k - E_(k-1)| < max(2 sigma, energy_tol) with sigma the combined
/// uncertainty of the two energies; the first iteration compares against
/// its measured center energy.
inline bool iteration_converged(const LineSearchRun& run, double energy_tol) {
  if (run.iterations.empty()) return false;
  const auto& cur = run.iterations.back();
  double prev, prev_sigma;
  if (run.iterations.size() == 1) {
    prev = cur.center_energy;
    prev_sigma = cur.center_sigma;
  } else {
    prev = run.iterations[run.iterations.size() - 2].energy;
    prev_sigma = run.iterations[run.iterations.size() - 2].sigma;
  }
  const double sigma = std::sqrt(cur.sigma * cur.sigma + prev_sigma * prev_sigma);
  return std::abs(cur.energy - prev) < std::max(2.0 * sigma, energy_tol);
}

/// Repeated iterations with fixed directions and windows. `resume` continues
/// an earlier run; `on_iteration` sees each new record (and may fill its
/// reference energy) before the convergence test.
inline LineSearchRun run_line_search(CountedEvaluator& ev, const Vector& x0, const ConjugateDirections& dirs,
                                     const SearchWindow& window, const LineSearchOptions& opts = {},
                                     const std::function<void(IterationRecord&, const LineSearchRun&)>& on_iteration = {},
                                     LineSearchRun resume = {}) {
  LineSearchRun run = std::move(resume);
  if (run.converged) return run;
  Vector center = run.iterations.empty() ? x0 : run.iterations.back().new_center;
  while (static_cast<int>(run.iterations.size()) < opts.max_iters) {
    auto rec = line_search_iteration(ev, center, dirs, window, opts);
    center = rec.new_center;
    run.iterations.push_back(std::move(rec));
    run.converged = iteration_converged(run, opts.energy_tol);
    if (on_iteration) on_iteration(run.iterations.back(), run);
    if (run.converged) break;
  }
  return run;
}

/// Per-iteration energy spread from resampling each fitted minimum within
/// its uncertainty and evaluating `cost` at the recombined center.
inline std::vector<double> bootstrap_energy_uncertainty(const LineSearchRun& run, const ConjugateDirections& dirs,
                                                        const Cost& cost, int resamples = 200,
                                                        std::uint64_t seed = 0x626f6f74) {
  if (resamples < 2) throw DomainError("bootstrap_energy_uncertainty: need at least 2 resamples");
  std::vector<double> out;
  for (std::size_t k = 0; k < run.iterations.size(); ++k) {
    const auto& it = run.iterations[k];
    std::mt19937_64 rng(stream_seed(seed, k));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> energies;
    const bool any = std::any_of(it.fits.begin(), it.fits.end(), [](const DirectionFit& f) { return f.sigma_xmin > 0.0; });
    if (!any) {
      out.push_back(0.0);
      continue;
    }
    for (int b = 0; b < resamples; ++b) {
      Vector x = it.center;
      for (std::size_t d = 0; d < it.fits.size(); ++d)
        x += (it.fits[d].x_min + it.fits[d].sigma_xmin * normal(rng)) * dirs.direction(static_cast<int>(d));
      energies.push_back(detail::checked_value(cost, x));
    }
    out.push_back(detail::sample_std(energies));
  }
  return out;
}

// ---- Powell -------------------------------------------------------------------

struct PowellOptions {
  double ftol = 1e-8;    ///< absolute decrease per cycle below which the search stops
  double xtol = 1e-4;    ///< line-minimization tolerance along a direction
  int max_cycles = 200;
  int max_line_evals = 100;
  std::vector<double> initial_steps;  ///< bracketing step per initial direction (default 0.1)
};

struct PowellPoint {
  std::uint64_t calls = 0;
  Vector x;
  double value = 0.0;
  double sigma = 0.0;  ///< reported uncertainty of the evaluation that produced value
};

struct PowellResult {
  Vector x;
  double value = 0.0;
  std::uint64_t calls = 0;
  int cycles = 0;
  std::vector<PowellPoint> trajectory;  ///< after each line minimization
};

namespace detail {

// Bracket then Brent along x + t d, starting from f(x) = fx.
inline std::pair<double, double> powell_line(const std::function<double(double)>& f, double fx, double step,
                                             double xtol, int max_evals) {
  constexpr double gold = 1.618033988749895, cgold = 0.3819660112501051, tiny = 1e-20;
  int evals = 0;
  auto g = [&](double t) {
    ++evals;
    return f(t);
  };
  double a = 0.0, b = step, fa = fx, fb = g(b);
  if (fb > fa) {
    std::swap(a, b);
    std::swap(fa, fb);
  }
  double c = b + gold * (b - a), fc = g(c);
  while (fb > fc && evals < max_evals) {
    const double r = (b - a) * (fb - fc), q = (b - c) * (fb - fa);
    double u = b - ((b - c) * q - (b - a) * r) / (2.0 * std::copysign(std::max(std::abs(q - r), tiny), q - r));
    const double ulim = b + 100.0 * (c - b);
    double fu;
    if ((b - u) * (u - c) > 0.0) {
      fu = g(u);
      if (fu < fc) {
        a = b; fa = fb; b = u; fb = fu;
        break;
      }
      if (fu > fb) {
        c = u; fc = fu;
        break;
      }
      u = c + gold * (c - b);
      fu = g(u);
    } else if ((c - u) * (u - ulim) > 0.0) {
      fu = g(u);
      if (fu < fc) {
        b = c; c = u; u = c + gold * (c - b);
        fb = fc; fc = fu; fu = g(u);
      }
    } else {
      u = c + gold * (c - b);
      fu = g(u);
    }
    a = b; b = c; c = u;
    fa = fb; fb = fc; fc = fu;
  }
  // Brent on [a, c] around b
  double lo = std::min(a, c), hi = std::max(a, c);
  double x = b, w = b, v = b, fxb = fb, fw = fb, fv = fb, d = 0.0, e = 0.0;
  while (evals < max_evals) {
    const double xm = 0.5 * (lo + hi), tol1 = xtol * std::abs(x) + 1e-12 + xtol, tol2 = 2.0 * tol1;
    if (std::abs(x - xm) <= tol2 - 0.5 * (hi - lo)) break;
    if (std::abs(e) > tol1) {
      const double r = (x - w) * (fxb - fv);
      double q = (x - v) * (fxb - fw);
      double p = (x - v) * q - (x - w) * r;
      q = 2.0 * (q - r);
      if (q > 0.0) p = -p;
      q = std::abs(q);
      const double etemp = e;
      e = d;
      if (std::abs(p) >= std::abs(0.5 * q * etemp) || p <= q * (lo - x) || p >= q * (hi - x)) {
        e = x >= xm ? lo - x : hi - x;
        d = cgold * e;
      } else {
        d = p / q;
        const double u = x + d;
        if (u - lo < tol2 || hi - u < tol2) d = std::copysign(tol1, xm - x);
      }
    } else {
      e = x >= xm ? lo - x : hi - x;
      d = cgold * e;
    }
    const double u = std::abs(d) >= tol1 ? x + d : x + std::copysign(tol1, d);
    const double fu = g(u);
    if (fu <= fxb) {
      (u >= x ? lo : hi) = x;
      v = w; w = x; x = u;
      fv = fw; fw = fxb; fxb = fu;
    } else {
      (u < x ? lo : hi) = u;
      if (fu <= fw || w == x) {
        v = w; w = u;
        fv = fw; fw = fu;
      } else if (fu <= fv || v == x || v == w) {
        v = u; fv = fu;
      }
    }
  }
  return {x, fxb};
}

}  // namespace detail

/// Direction-set method with bracketed Brent line minimizations; the
/// direction of largest decrease is replaced by the net displacement of
/// each cycle. Every evaluation goes through (and is counted by) ev.
inline PowellResult powell_minimize(CountedEvaluator& ev, const Vector& x0, const Matrix& initial_dirs,
                                    const PowellOptions& opts = {}) {
  if (initial_dirs.rows() != x0.size() || initial_dirs.cols() == 0)
    throw DimensionError("powell_minimize: direction matrix shape mismatch");
  const auto nd = initial_dirs.cols();
  std::vector<Vector> dirs;
  std::vector<double> steps;
  for (Eigen::Index d = 0; d < nd; ++d) {
    dirs.push_back(initial_dirs.col(d));
    steps.push_back(static_cast<std::size_t>(d) < opts.initial_steps.size() ? opts.initial_steps[static_cast<std::size_t>(d)]
                                                                          : 0.1);
  }
  PowellResult res;
  const std::uint64_t start = ev.calls();
  std::map<double, double> sigma_of;
  auto f = [&](const Vector& x) {
    const auto r = ev.evaluate(x);
    sigma_of[r.energy] = r.sigma;
    return r.energy;
  };
  Vector p = x0;
  double fret = f(p);
  Vector pt = p;
  res.trajectory.push_back({ev.calls() - start, p, fret, sigma_of[fret]});
  auto line_min = [&](std::size_t d) {
    const Vector dir = dirs[d];
    const Vector base = p;
    const auto [t, ft] = detail::powell_line([&](double s) { return f(base + s * dir); }, fret, steps[d], opts.xtol,
                                             opts.max_line_evals);
    p = base + t * dir;
    fret = ft;
    if (t != 0.0) steps[d] = std::abs(t);
    res.trajectory.push_back({ev.calls() - start, p, fret, sigma_of[fret]});
  };
  for (int cycle = 1; cycle <= opts.max_cycles; ++cycle) {
    res.cycles = cycle;
    const double fp = fret;
    std::size_t ibig = 0;
    double del = 0.0;
    for (std::size_t d = 0; d < dirs.size(); ++d) {
      const double before = fret;
      line_min(d);
      if (before - fret > del) {
        del = before - fret;
        ibig = d;
      }
    }
    if (fp - fret <= opts.ftol) {
      res.x = p;
      res.value = fret;
      res.calls = ev.calls() - start;
      return res;
    }
    const Vector xit = p - pt;
    const Vector ptt = 2.0 * p - pt;
    pt = p;
    const double fptt = f(ptt);
    if (fptt < fp) {
      const double t = 2.0 * (fp - 2.0 * fret + fptt) * std::pow(fp - fret - del, 2) - del * std::pow(fp - fptt, 2);
      if (t < 0.0 && xit.norm() > 0.0) {
        dirs[ibig] = dirs.back();
        steps[ibig] = steps.back();
        dirs.back() = xit.normalized();
        steps.back() = xit.norm();
        line_min(dirs.size() - 1);
      }
    }
  }
  throw NonConvergenceError("powell_minimize: cycle cap reached", p, fret);
}

}  // namespace vqsls
