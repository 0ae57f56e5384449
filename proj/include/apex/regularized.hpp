#pragma once

// Regularized variant of the scaled assignment program. A barrier term
// -sum_ij beta / x_ij is added to the linear objective, which pushes the
// optimum strictly inside the bistochastic polytope, makes the allocation a
// smooth function of the bids, and turns the externality payment rule into a
// strictly truthful one. Utilities must arrive row-normalized (min 0, max 1)
// and bids must respect the cap lambda_bar.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <utility>
#include <vector>

#include "apex/matrix.hpp"

namespace apex {

struct RegularizerParams {
  double beta;
  double lambda_bar;
  double tol = 1e-10;     // largest tolerated row/column sum deviation
  int max_sweeps = 100000;
};

// beta = 1 / (lambda_bar^3 n^4), the weight used throughout unless a caller
// overrides it.
inline double canonical_beta(double lambda_bar, int n) {
  const double n2 = static_cast<double>(n) * n;
  return 1.0 / (lambda_bar * lambda_bar * lambda_bar * n2 * n2);
}

struct RegularizedOptimum {
  Matrix x;                   // strictly interior bistochastic allocation
  Vec a;                      // per-player duals
  Vec b;                      // per-item duals
  double value_reg = 0.0;     // barrier-inclusive optimum value
  double value_linear = 0.0;  // sum_ij lambda_i u_ij x_ij at the optimum
  int sweeps = 0;
  double residual = 0.0;
};

struct EtaBound {
  double eta;
  double m;
};

namespace reg_detail {

inline void validate(const Matrix& u, const Vec& lambda, const RegularizerParams& p) {
  if (!(p.beta > 0.0) || !std::isfinite(p.beta))
    throw std::invalid_argument("regularizer weight must be positive and finite");
  if (!(p.lambda_bar > 1.0) || !std::isfinite(p.lambda_bar))
    throw std::invalid_argument("bid cap must exceed 1");
  const int n = u.rows();
  if (n < 2 || u.cols() != n)
    throw std::invalid_argument("utilities must be square with at least two players");
  for (int i = 0; i < n; ++i) {
    double lo = u(i, 0), hi = u(i, 0);
    for (int j = 0; j < n; ++j) {
      if (!std::isfinite(u(i, j))) throw std::invalid_argument("utilities must be finite");
      lo = std::min(lo, u(i, j));
      hi = std::max(hi, u(i, j));
    }
    if (std::fabs(lo) > 1e-9 || std::fabs(hi - 1.0) > 1e-9)
      throw std::invalid_argument("each utility row must be normalized to min 0, max 1");
  }
  if (static_cast<int>(lambda.size()) != n)
    throw std::invalid_argument("one bid per player required");
  for (double l : lambda)
    if (!std::isfinite(l) || l < 0.0 || l > p.lambda_bar + 1e-9)
      throw std::invalid_argument("bids must lie in [0, lambda_bar]");
}

// Solves the augmented system t = [A | rhs] in place by Gaussian elimination
// with partial pivoting; returns the solution vector.
inline Vec solve_augmented(std::vector<Vec>& t) {
  const int m = static_cast<int>(t.size());
  for (int c = 0; c < m; ++c) {
    int piv = c;
    for (int r = c + 1; r < m; ++r)
      if (std::fabs(t[r][c]) > std::fabs(t[piv][c])) piv = r;
    std::swap(t[c], t[piv]);
    if (t[c][c] == 0.0) throw std::runtime_error("singular linear system");
    for (int r = c + 1; r < m; ++r) {
      const double f = t[r][c] / t[c][c];
      if (f == 0.0) continue;
      for (int c2 = c; c2 <= m; ++c2) t[r][c2] -= f * t[c][c2];
    }
  }
  Vec out(m);
  for (int r = m - 1; r >= 0; --r) {
    double v = t[r][m];
    for (int c2 = r + 1; c2 < m; ++c2) v -= t[r][c2] * out[c2];
    out[r] = v / t[r][r];
  }
  return out;
}

// Root of sum_j sqrt(beta / (gap_j + t)) = 1 over t in (0, 4 beta n^2]. The
// smallest gap is exactly zero, so the left side falls from +inf, and at the
// right endpoint every term is at most 1/(2n).
inline double line_root(const Vec& gap, double beta) {
  const int n = static_cast<int>(gap.size());
  double lo = 0.0, hi = 4.0 * beta * n * n;
  for (int it = 0; it < 200 && hi - lo > 1e-13 * beta; ++it) {
    const double mid = 0.5 * (lo + hi);
    double g = 0.0;
    for (double q : gap) g += std::sqrt(beta / (q + mid));
    (g > 1.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// Dual solver. The state is the slack matrix d_ij = a_i + b_j - w_ij, stored
// directly rather than recomputed from the duals: slacks at the favorite
// items shrink to the order of beta, far below rounding noise of the
// O(lambda_bar) duals, and every update below touches d at its own scale.
// Coordinate sweeps rebalance one row or column sum of x_ij = sqrt(beta /
// d_ij) exactly and make globally safe progress, but their contraction factor
// degrades like beta^{3/2} once the allocation approaches a vertex, which for
// the canonical beta would need billions of sweeps. Newton steps on the same
// stationarity system close the remaining digits; a step that fails to
// improve the residual is rolled back in favor of another sweep, so the
// fixed point and every reported quantity are those of the sweep iteration.
inline RegularizedOptimum solve(const Matrix& u, const Vec& lambda,
                                const RegularizerParams& p,
                                const RegularizedOptimum* warm) {
  validate(u, lambda, p);
  const int n = u.rows();
  const Matrix w = scale_rows(u, lambda);

  Matrix d(n, n);
  Vec a(n, 0.0), b(n, 0.0);
  auto init_from = [&](const RegularizedOptimum* seed) {
    const bool use = seed != nullptr && static_cast<int>(seed->a.size()) == n;
    b = use ? seed->b : Vec(n, 0.0);
    for (int i = 0; i < n; ++i) {
      double m = w(i, 0) - b[0];
      for (int j = 1; j < n; ++j) m = std::max(m, w(i, j) - b[j]);
      double s = p.beta * n * n;
      if (use) s = std::max(seed->a[i] - m, p.beta);
      for (int j = 0; j < n; ++j) d(i, j) = (m - (w(i, j) - b[j])) + s;
      a[i] = m + s;
    }
  };
  init_from(warm);

  auto compute_residual = [&]() {
    double res = 0.0;
    for (int i = 0; i < n; ++i) {
      double rs = 0.0, cs = 0.0;
      for (int j = 0; j < n; ++j) {
        rs += std::sqrt(p.beta / d(i, j));
        cs += std::sqrt(p.beta / d(j, i));
      }
      res = std::max({res, std::fabs(rs - 1.0), std::fabs(cs - 1.0)});
    }
    return res;
  };

  Vec gap(n);
  auto sweep = [&]() {
    for (int i = 0; i < n; ++i) {
      double mn = d(i, 0);
      for (int j = 1; j < n; ++j) mn = std::min(mn, d(i, j));
      for (int j = 0; j < n; ++j) gap[j] = d(i, j) - mn;
      const double t = line_root(gap, p.beta);
      for (int j = 0; j < n; ++j) d(i, j) = gap[j] + t;
      a[i] += t - mn;
    }
    for (int j = 0; j < n; ++j) {
      double mn = d(0, j);
      for (int i = 1; i < n; ++i) mn = std::min(mn, d(i, j));
      for (int i = 0; i < n; ++i) gap[i] = d(i, j) - mn;
      const double t = line_root(gap, p.beta);
      for (int i = 0; i < n; ++i) d(i, j) = gap[i] + t;
      b[j] += t - mn;
    }
  };

  // One Newton step on the sum deviations, with the last column's multiplier
  // pinned (the 2n equations are dependent: row deviations and column
  // deviations share their total). Steps are damped to keep d positive.
  auto newton_step = [&]() {
    const int m = 2 * n - 1;
    std::vector<Vec> sys(m, Vec(m + 1, 0.0));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double x = std::sqrt(p.beta / d(i, j));
        const double q = x / (2.0 * d(i, j));
        sys[i][i] += q;
        sys[i][m] += x;
        if (j < n - 1) {
          sys[i][n + j] = q;
          sys[n + j][i] = q;
          sys[n + j][n + j] += q;
          sys[n + j][m] += x;
        }
      }
    for (int i = 0; i < n; ++i) sys[i][m] -= 1.0;
    for (int j = 0; j < n - 1; ++j) sys[n + j][m] -= 1.0;
    const Vec delta = solve_augmented(sys);
    double tau = 1.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double dd = delta[i] + (j < n - 1 ? delta[n + j] : 0.0);
        if (dd < 0.0) tau = std::min(tau, -0.9 * d(i, j) / dd);
      }
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        d(i, j) += tau * (delta[i] + (j < n - 1 ? delta[n + j] : 0.0));
    for (int i = 0; i < n; ++i) a[i] += tau * delta[i];
    for (int j = 0; j < n - 1; ++j) b[j] += tau * delta[n + j];
  };

  int used = 0;
  int sweeps_owed = (warm != nullptr) ? 1 : 3;
  bool warm_basin = warm != nullptr;
  double residual = compute_residual();
  // A poor warm start can pin the iteration in a basin where Newton steps are
  // always rejected and sweeps stop contracting; the residual then freezes far
  // above tol. Residuals never increase across iterations, so a window that
  // closes less than ten percent of the gap marks a stall: reinitialize from
  // scratch once and keep going. Cold runs are left alone; their slow phases
  // are genuine and end when Newton engages.
  constexpr int kStallWindow = 4096;
  double checkpoint = residual;
  int next_check = kStallWindow;
  while (residual > p.tol) {
    if (used >= p.max_sweeps) {
      std::ostringstream msg;
      msg << "dual solver stalled after " << p.max_sweeps
          << " iterations, residual " << residual << " above tolerance " << p.tol;
      throw std::runtime_error(msg.str());
    }
    if (used == next_check) {
      if (warm_basin && residual > 0.9 * checkpoint) {
        init_from(nullptr);
        warm_basin = false;
        sweeps_owed = 3;
        residual = compute_residual();
      }
      checkpoint = residual;
      next_check = used + kStallWindow;
    }
    ++used;
    if (sweeps_owed > 0) {
      --sweeps_owed;
      sweep();
      residual = compute_residual();
    } else {
      const Matrix d_saved = d;
      const Vec a_saved = a, b_saved = b;
      const double before = residual;
      newton_step();
      residual = compute_residual();
      if (residual >= before) {
        d = d_saved;
        a = a_saved;
        b = b_saved;
        residual = before;
        sweeps_owed = 1;
      } else if (residual > 0.5 * before) {
        sweeps_owed = 1;
      }
    }
  }
  const int sweeps = used;

  RegularizedOptimum r;
  r.x = Matrix(n, n);
  r.a = std::move(a);
  r.b = std::move(b);
  double barrier = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      r.x(i, j) = std::sqrt(p.beta / d(i, j));
      r.value_linear += w(i, j) * r.x(i, j);
      barrier += std::sqrt(p.beta * d(i, j));
    }
  r.value_reg = r.value_linear - barrier;
  r.sweeps = sweeps;
  r.residual = residual;
  return r;
}

inline void check_player(const Matrix& u, int i) {
  if (i < 0 || i >= u.rows()) throw std::invalid_argument("player index out of range");
}

inline double value_won(const Matrix& u, const Vec& lambda, const Matrix& x, int i) {
  double won = 0.0;
  for (int j = 0; j < u.cols(); ++j) won += lambda[i] * u(i, j) * x(i, j);
  return won;
}

inline double payment_from(const RegularizedOptimum& full, double rest_value,
                           const Matrix& u, const Vec& lambda, int i) {
  const double pay = rest_value - (full.value_reg - value_won(u, lambda, full.x, i));
  if (pay < -1e-9) throw std::logic_error("negative payment from regularized solve");
  return pay;
}

}  // namespace reg_detail

inline RegularizedOptimum regularized_optimum(const Matrix& u, const Vec& lambda,
                                              const RegularizerParams& p) {
  return reg_detail::solve(u, lambda, p, nullptr);
}

// Externality payment: what the optimum of everyone else loses to player i's
// participation. A zero bid leaves the two solves identical, so it pays zero.
inline double regularized_payment(const Matrix& u, const Vec& lambda,
                                  const RegularizerParams& p, int i) {
  reg_detail::validate(u, lambda, p);
  reg_detail::check_player(u, i);
  if (lambda[i] == 0.0) return 0.0;
  const RegularizedOptimum full = reg_detail::solve(u, lambda, p, nullptr);
  Vec rest = lambda;
  rest[i] = 0.0;
  const RegularizedOptimum without = reg_detail::solve(u, rest, p, &full);
  return reg_detail::payment_from(full, without.value_reg, u, lambda, i);
}

// Largest bid player i can sustain across the given rounds without spending
// more than the budget; per-round charges are monotone in the bid, so the
// total spend is bisected. Entry i of each round's profile is ignored.
inline double best_response(const std::vector<Vec>& round_bids, const Matrix& u, int i,
                            const RegularizerParams& p, double budget) {
  const int n = u.rows();
  reg_detail::check_player(u, i);
  if (round_bids.empty())
    throw std::invalid_argument("at least one round of opposing bids required");
  if (!(budget > 0.0) || !std::isfinite(budget))
    throw std::invalid_argument("budget must be positive");

  std::map<Vec, int> counts;
  for (const Vec& bids : round_bids) {
    if (static_cast<int>(bids.size()) != n)
      throw std::invalid_argument("each round needs one bid per player");
    Vec key = bids;
    key[i] = 0.0;
    ++counts[key];
  }

  struct Entry {
    Vec base;
    int count;
    double rest_value;
    RegularizedOptimum warm;
  };
  std::vector<Entry> entries;
  entries.reserve(counts.size());
  for (const auto& [key, c] : counts) {
    RegularizedOptimum rest = reg_detail::solve(u, key, p, nullptr);
    const double rest_value = rest.value_reg;
    entries.push_back(Entry{key, c, rest_value, std::move(rest)});
  }

  auto spend = [&](double lam) {
    double s = 0.0;
    for (Entry& e : entries) {
      Vec l = e.base;
      l[i] = lam;
      RegularizedOptimum full = reg_detail::solve(u, l, p, &e.warm);
      s += e.count * reg_detail::payment_from(full, e.rest_value, u, l, i);
      e.warm = std::move(full);
    }
    return s;
  };

  if (spend(p.lambda_bar) <= budget) return p.lambda_bar;
  double lo = 0.0, hi = 1.0;
  while (hi < p.lambda_bar && spend(hi) <= budget) {
    lo = hi;
    hi = std::min(2.0 * hi, p.lambda_bar);
  }
  while (hi - lo > 1e-10) {
    const double mid = 0.5 * (lo + hi);
    (spend(mid) <= budget ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// Second-order price approximation (lambda_i^2 / 4) grad_f' Hinv grad_f. H is
// the curvature form of the objective written as F(X + x) = F(X) - x' H x +
// o(|x|^2), i.e. half the raw second derivative of the barrier, so H =
// diag(beta / x^3); its inverse is taken on the subspace of row/column-sum-
// preserving perturbations of the base allocation. Expanding the payment in
// the bid reproduces this form to second order.
inline double quadratic_price_at(const Matrix& x, const Matrix& u, double lambda_i,
                                 int i, double beta) {
  const int n = x.rows();
  if (n < 2 || x.cols() != n || u.rows() != n || u.cols() != n)
    throw std::invalid_argument("allocation and utilities must be square and match");
  reg_detail::check_player(u, i);
  if (!(beta > 0.0) || !std::isfinite(beta))
    throw std::invalid_argument("regularizer weight must be positive and finite");
  for (double v : x.flat())
    if (!(v > 0.0) || !std::isfinite(v))
      throw std::invalid_argument("base allocation must be strictly positive");
  if (lambda_i == 0.0) return 0.0;

  Matrix hinv(n, n);
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j) hinv(k, j) = x(k, j) * x(k, j) * x(k, j) / beta;

  // Schur system over the n row-sum and first n-1 column-sum multipliers (the
  // last column constraint is the sum of the others minus the row ones).
  const int m = 2 * n - 1;
  std::vector<Vec> s(m, Vec(m + 1, 0.0));
  for (int k = 0; k < n; ++k) {
    for (int j = 0; j < n; ++j) {
      s[k][k] += hinv(k, j);
      if (j < n - 1) {
        s[k][n + j] = hinv(k, j);
        s[n + j][k] = hinv(k, j);
        s[n + j][n + j] += hinv(k, j);
      }
    }
  }
  Vec rhs(m, 0.0);
  for (int j = 0; j < n; ++j) {
    rhs[i] += hinv(i, j) * u(i, j);
    if (j < n - 1) rhs[n + j] = hinv(i, j) * u(i, j);
  }

  // The allocation spans several orders of magnitude, so equilibrate to unit
  // diagonal before factoring; one refinement pass, then a residual check
  // against the backward-stable magnitude of the scaled system.
  Vec dscale(m);
  for (int k = 0; k < m; ++k) dscale[k] = std::sqrt(s[k][k]);
  std::vector<Vec> base(m, Vec(m + 1));
  for (int k = 0; k < m; ++k) {
    for (int c = 0; c < m; ++c) base[k][c] = s[k][c] / (dscale[k] * dscale[c]);
    base[k][m] = rhs[k] / dscale[k];
  }
  std::vector<Vec> lhs = base;
  Vec y = reg_detail::solve_augmented(lhs);
  std::vector<Vec> refine = base;
  for (int k = 0; k < m; ++k) {
    double rk = base[k][m];
    for (int c = 0; c < m; ++c) rk -= base[k][c] * y[c];
    refine[k][m] = rk;
  }
  const Vec delta = reg_detail::solve_augmented(refine);
  for (int k = 0; k < m; ++k) y[k] += delta[k];
  double worst = 0.0, scale = 1.0;
  for (int k = 0; k < m; ++k) {
    double rk = base[k][m];
    double mag = std::fabs(base[k][m]);
    for (int c = 0; c < m; ++c) {
      rk -= base[k][c] * y[c];
      mag += std::fabs(base[k][c] * y[c]);
    }
    worst = std::max(worst, std::fabs(rk));
    scale = std::max(scale, mag);
  }
  if (worst > 1e-10 * scale)
    throw std::runtime_error("projected curvature solve exceeded tolerance");
  Vec mu(m);
  for (int k = 0; k < m; ++k) mu[k] = y[k] / dscale[k];

  double val = 0.0;
  for (int j = 0; j < n; ++j) {
    const double mu_col = (j < n - 1) ? mu[n + j] : 0.0;
    val += hinv(i, j) * (u(i, j) - mu[i] - mu_col) * u(i, j);
  }
  return 0.25 * lambda_i * lambda_i * val;
}

inline double quadratic_price(const Matrix& u, const Vec& lambda,
                              const RegularizerParams& p, int i) {
  reg_detail::check_player(u, i);
  const RegularizedOptimum r = reg_detail::solve(u, lambda, p, nullptr);
  return quadratic_price_at(r.x, u, lambda[i], i, p.beta);
}

// Efficiency loss of the barrier: blending the exact optimum with the uniform
// allocation at weight 1/M costs at most sum(lambda)/M in value and bounds the
// barrier by beta n^3 M, for any M > 1.
inline EtaBound eta_bound(const Vec& lambda, int n, const RegularizerParams& p, double m) {
  if (!(m > 1.0) || !std::isfinite(m))
    throw std::invalid_argument("blend weight must exceed 1");
  if (n < 1) throw std::invalid_argument("need at least one player");
  for (double l : lambda)
    if (!std::isfinite(l) || l < 0.0)
      throw std::invalid_argument("bids must be nonnegative and finite");
  const double n3 = static_cast<double>(n) * n * n;
  return EtaBound{sum(lambda) / m + p.beta * n3 * m, m};
}

inline EtaBound eta_min(const Vec& lambda, int n, const RegularizerParams& p) {
  const double n3 = static_cast<double>(n) * n * n;
  const double ideal = std::sqrt(sum(lambda) / (p.beta * n3));
  return eta_bound(lambda, n, p, std::max(ideal, 1.0 + 1e-9));
}

}  // namespace apex
