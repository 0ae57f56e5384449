#pragma once

// Smoothed fixed-point search for competitive equilibria of the unit-demand
// market, plus certificate checks for candidate equilibria. Payments are
// averaged over a small box of perturbed weights, which turns the jumpy
// exact mechanism into a continuous map whose fixed points clear budgets.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "apex/assignment.hpp"
#include "apex/matrix.hpp"
#include "apex/regularized.hpp"
#include "apex/rng.hpp"

namespace apex {

struct LambdaMaxResult {
  double value = 1.0;
  bool degenerate = false;  // no row holds two distinct utilities
};

// Cap for the weight box: 1 + n over the smallest utility gap within any
// row. A player pushed to the cap can only be allocated favorite items,
// which is what the fixed-point argument needs. Instances whose rows are
// all constant have no usable gap; they get cap 1 and a degeneracy flag.
inline LambdaMaxResult lambda_max(const Matrix& u) {
  detail::validate_instance(u, Vec(u.rows(), 0.0));
  const int n = u.rows();
  double gap = std::numeric_limits<double>::infinity();
  Vec row(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) row[j] = u(i, j);
    std::sort(row.begin(), row.end());
    for (int j = 0; j + 1 < n; ++j) {
      double d = row[j + 1] - row[j];
      if (d > 0.0) gap = std::min(gap, d);
    }
  }
  if (!std::isfinite(gap)) return {1.0, true};
  return {1.0 + n / gap, false};
}

struct SmoothedEvaluation {
  Vec phi;       // mean payment per player
  Matrix x_eps;  // mean allocation
  Vec c_eps;     // mean second-copy price per item
  int samples = 0;
  std::uint64_t seed = 0;
};

// Monte-Carlo average of the exact mechanism over the box
// [lambda_i, lambda_i + eps] per player. Draws are keyed by (seed, sample,
// player), so a fixed seed gives one deterministic map of lambda.
inline SmoothedEvaluation expected_vcg_payments(const Matrix& u, const Vec& lambda,
                                                double eps, int samples,
                                                std::uint64_t seed) {
  detail::validate_instance(u, lambda);
  if (!(eps > 0.0) || !std::isfinite(eps))
    throw std::invalid_argument("smoothing width must be positive");
  if (samples < 1) throw std::invalid_argument("sample count must be positive");
  const int n = u.rows();
  SmoothedEvaluation ev{Vec(n, 0.0), Matrix(n, n), Vec(n, 0.0), samples, seed};
  Vec draw(n);
  for (int s = 0; s < samples; ++s) {
    for (int i = 0; i < n; ++i)
      draw[i] = lambda[i] + eps * uniform01(seed, static_cast<std::uint64_t>(s),
                                            static_cast<std::uint64_t>(i));
    VcgOutcome out = vcg_outcome(u, draw);
    for (int i = 0; i < n; ++i) {
      ev.phi[i] += out.payments[i];
      ev.c_eps[i] += out.prices[i];
      ev.x_eps(i, out.assignment.pi[i]) += 1.0;
    }
  }
  const double inv = 1.0 / samples;
  for (double& v : ev.phi) v *= inv;
  for (double& v : ev.c_eps) v *= inv;
  for (double& v : ev.x_eps.flat()) v *= inv;
  return ev;
}

namespace hz_detail {

inline Vec psi_from_phi(const Vec& lambda, const Vec& phi, double lambda_bar) {
  Vec psi(lambda.size());
  for (std::size_t i = 0; i < lambda.size(); ++i)
    psi[i] = std::clamp(lambda[i] + 1.0 - phi[i], 0.0, lambda_bar);
  return psi;
}

// One random stratum order per player: sample s lands in stratum
// rank[i][s] of player i's coordinate. Rank keys are drawn on dimensions
// n..2n-1 so they never collide with the jitter dimensions.
inline std::vector<std::vector<int>> stratum_ranks(int n, int samples,
                                                   std::uint64_t seed) {
  std::vector<std::vector<int>> rank(n, std::vector<int>(samples));
  std::vector<std::pair<double, int>> keyed(samples);
  for (int i = 0; i < n; ++i) {
    for (int s = 0; s < samples; ++s)
      keyed[s] = {uniform01(seed, static_cast<std::uint64_t>(s),
                            static_cast<std::uint64_t>(n + i)),
                  s};
    std::sort(keyed.begin(), keyed.end());
    for (int s = 0; s < samples; ++s) rank[i][keyed[s].second] = s;
  }
  return rank;
}

// Mean payments over the same perturbation box as expected_vcg_payments,
// but with each player's own coordinate integrated exactly instead of
// sampled. Conditional on the other players' draws, a player's payment is a
// step function of her own weight: giving her item j displaces the others
// onto the remaining items, so item j contributes the line
// (own weight) * u_ij + (others' value without item j) and on each segment
// of the upper envelope the payment is the others' unconstrained optimum
// minus that segment's intercept. Summing exact segment integrals removes
// the own-coordinate sampling noise, which is what makes this map
// continuous in lambda; a plain per-sample draw leaves payment-sized jumps
// that no tolerance below (price / samples) can get under. The cross-player
// draws are jittered strata (one per sample), which suppresses the
// remaining noise of the mean without touching continuity.
//
// When x_out is given it receives the matching allocation estimate: each
// envelope segment adds its length share to the owner's row, so rows are
// exact conditional probabilities and only columns carry sampling noise.
inline Vec smooth_phi(const Matrix& u, const Vec& lambda, double eps, int samples,
                      std::uint64_t seed, Matrix* x_out = nullptr) {
  const int n = u.rows();
  Vec phi(n, 0.0);
  if (x_out) *x_out = Matrix(n, n);
  if (n == 1) {
    if (x_out) (*x_out)(0, 0) = 1.0;
    return phi;
  }
  const std::vector<std::vector<int>> rank = stratum_ranks(n, samples, seed);
  Vec wgt(n), wl(n), slope(n), icept(n);
  Matrix others(n, n, 0.0);
  Matrix sub(n - 1, n - 1, 0.0);
  std::vector<double> cuts;
  for (int s = 0; s < samples; ++s) {
    for (int k = 0; k < n; ++k) {
      const double jitter = uniform01(seed, static_cast<std::uint64_t>(s),
                                      static_cast<std::uint64_t>(k));
      wgt[k] = lambda[k] + eps * (rank[k][s] + jitter) / samples;
    }
    for (int i = 0; i < n; ++i) {
      int r = 0;
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        for (int c = 0; c < n; ++c) others(r, c) = wgt[j] * u(j, c);
        ++r;
      }
      for (int c = 0; c < n; ++c) others(n - 1, c) = 0.0;
      const double others_all = detail::max_weight_value(others);
      for (int j = 0; j < n; ++j) {
        for (int rr = 0; rr + 1 < n; ++rr) {
          int cc = 0;
          for (int c = 0; c < n; ++c) {
            if (c == j) continue;
            sub(rr, cc++) = others(rr, c);
          }
        }
        slope[j] = u(i, j);
        icept[j] = detail::max_weight_value(sub);
      }
      const double lo = lambda[i];
      const double hi = lo + eps;
      cuts.clear();
      cuts.push_back(lo);
      cuts.push_back(hi);
      for (int p = 0; p < n; ++p) {
        for (int q = p + 1; q < n; ++q) {
          const double ds = slope[p] - slope[q];
          if (ds == 0.0) continue;
          const double x = (icept[q] - icept[p]) / ds;
          if (x > lo && x < hi) cuts.push_back(x);
        }
      }
      std::sort(cuts.begin(), cuts.end());
      double displaced = 0.0;
      for (std::size_t t = 0; t + 1 < cuts.size(); ++t) {
        const double x0 = cuts[t];
        const double x1 = cuts[t + 1];
        if (!(x1 > x0)) continue;
        const double mid = 0.5 * (x0 + x1);
        int best = 0;
        double bv = slope[0] * mid + icept[0];
        for (int j = 1; j < n; ++j) {
          const double v = slope[j] * mid + icept[j];
          if (v > bv) {
            bv = v;
            best = j;
          }
        }
        displaced += icept[best] * (x1 - x0);
        if (x_out) {
          // The optimal permutation set is constant between breakpoints, so
          // one exact solve at the midpoint gives the mechanism's tie-broken
          // item for the whole segment. Reusing `best` here instead would
          // double-count items wherever two lines coincide over a whole
          // segment (zero-utility items, typically), and payments do not
          // distinguish tied items, so only the allocation needs the solve.
          wl = wgt;
          wl[i] = mid;
          (*x_out)(i, solve_assignment(u, wl).assignment.pi[i]) += (x1 - x0) / eps;
        }
      }
      phi[i] += others_all - displaced / eps;
    }
  }
  const double inv = 1.0 / samples;
  for (double& v : phi) v *= inv;
  if (x_out)
    for (double& v : x_out->flat()) v *= inv;
  return phi;
}

// Alternating row and column scaling toward exact double stochasticity.
// Zeros stay zeros, so the support is untouched; the adjustment is on the
// order of the column noise it removes. Gives up quietly after the sweep
// budget (the certificate checks would then report the deviation).
inline void rebalance_doubly_stochastic(Matrix& x) {
  const int n = x.rows();
  for (int sweep = 0; sweep < 500; ++sweep) {
    double dev = 0.0;
    for (int j = 0; j < n; ++j) {
      double cs = 0.0;
      for (int i = 0; i < n; ++i) cs += x(i, j);
      dev = std::max(dev, std::abs(cs - 1.0));
      if (cs > 0.0)
        for (int i = 0; i < n; ++i) x(i, j) /= cs;
    }
    for (int i = 0; i < n; ++i) {
      double rs = 0.0;
      for (int j = 0; j < n; ++j) rs += x(i, j);
      dev = std::max(dev, std::abs(rs - 1.0));
      if (rs > 0.0)
        for (int j = 0; j < n; ++j) x(i, j) /= rs;
    }
    if (dev < 1e-12) return;
  }
}

}  // namespace hz_detail

// One step of the budget-clearing map: raise weights of players paying
// under a unit, lower those paying over, and keep the result in the box.
inline Vec psi_step(const Matrix& u, const Vec& lambda, double eps, double lambda_bar,
                    int samples, std::uint64_t seed) {
  if (!(lambda_bar > 0.0) || !std::isfinite(lambda_bar))
    throw std::invalid_argument("weight cap must be positive");
  SmoothedEvaluation ev = expected_vcg_payments(u, lambda, eps, samples, seed);
  return hz_detail::psi_from_phi(lambda, ev.phi, lambda_bar);
}

struct HzOptions {
  double eps = 0.01;   // smoothing width
  double alpha = 0.3;  // damping of the fixed-point update
  double tol = 1e-3;
  int max_iter = 5000;
  int samples = 512;
  std::uint64_t seed = 1;
};

struct HzSolution {
  Vec lambda_star;
  Matrix allocation;      // mean allocation over the box at lambda_star
  Vec prices;             // second-copy prices of the lambda_star market
  double residual = 0.0;  // sup norm of the last fixed-point step
  int iterations = 0;
  bool converged = false;
};

// Damped fixed-point iteration from the zero weight vector, with a Newton
// phase near the target. The iteration runs on the own-coordinate-integrated
// map (hz_detail::smooth_phi), which is continuous in lambda; the reported
// allocation is that map's own mean allocation at the final weights,
// rebalanced to exact double stochasticity, and the reported prices are the
// exact second-copy prices of the final scaled market. Every evaluation
// reuses the same seed, so the whole run follows
// one deterministic map; exhausting the iteration budget is reported through
// `converged`, never thrown.
//
// The damping is adaptive per player, with `alpha` as its starting and
// maximum value. A constant step cannot settle: near a fixed point the map
// is steep (a weight shift of order eps moves whole payments), so any fixed
// step overshoots and the iterate falls into a two-cycle around the target.
// Halving a player's step whenever her update changes direction, and
// growing it again on steady drift, keeps travel fast and lets the
// oscillation amplitude collapse once the iterate brackets the target.
//
// Once the residual is small, a finite-difference Jacobian of the residual
// map (probe shorter than the spacing between the map's kinks) feeds
// trust-clipped Newton moves that aim straight at the fixed point. Each
// move is judged at the next evaluation and rolled back if the residual
// grew, with a short cooldown before the next attempt, so a misfired move
// costs little and the damped iteration resumes from where it left off.
inline HzSolution find_hz_equilibrium(const Matrix& u, const HzOptions& opt = {}) {
  if (!(opt.alpha > 0.0) || opt.alpha > 1.0)
    throw std::invalid_argument("damping must lie in (0, 1]");
  if (!(opt.tol > 0.0)) throw std::invalid_argument("tolerance must be positive");
  if (opt.max_iter < 1) throw std::invalid_argument("iteration budget must be positive");
  if (!(opt.eps > 0.0) || !std::isfinite(opt.eps))
    throw std::invalid_argument("smoothing width must be positive");
  if (opt.samples < 1) throw std::invalid_argument("sample count must be positive");
  const double cap = lambda_max(u).value;
  const int n = u.rows();
  detail::validate_instance(u, Vec(n, 0.0));
  Vec lam(n, 0.0);
  Vec step(n, opt.alpha);
  std::vector<int> prev_dir(n, 0);
  Vec saved_lam, saved_psi;
  double saved_r = 0.0;
  bool pending = false;
  int cooldown = 0;
  for (int it = 1;; ++it) {
    Vec phi = hz_detail::smooth_phi(u, lam, opt.eps, opt.samples, opt.seed);
    Vec psi = hz_detail::psi_from_phi(lam, phi, cap);
    double r = 0.0;
    for (int i = 0; i < n; ++i) r = std::max(r, std::abs(psi[i] - lam[i]));
    if (r < opt.tol || it == opt.max_iter) {
      Matrix x;
      hz_detail::smooth_phi(u, lam, opt.eps, opt.samples, opt.seed, &x);
      hz_detail::rebalance_doubly_stochastic(x);
      Vec prices = vcg_prices(scale_rows(u, lam));
      return {std::move(lam), std::move(x), std::move(prices), r, it, r < opt.tol};
    }

    if (pending) {
      pending = false;
      if (r >= saved_r) {
        lam = saved_lam;
        psi = saved_psi;
        r = saved_r;
        cooldown = 6;
      }
    }

    if (cooldown == 0 && r < 0.05) {
      std::vector<int> free;
      for (int i = 0; i < n; ++i) {
        bool lo = lam[i] == 0.0 && psi[i] == 0.0;
        bool hi = lam[i] == cap && psi[i] == cap;
        if (!lo && !hi) free.push_back(i);
      }
      if (!free.empty()) {
        const int m = static_cast<int>(free.size());
        const double h = std::max(0.25 * opt.eps / opt.samples, 1e-9);
        std::vector<Vec> sys(m, Vec(m + 1, 0.0));
        for (int c = 0; c < m; ++c) {
          Vec probe = lam;
          probe[free[c]] += h;
          Vec pphi = hz_detail::smooth_phi(u, probe, opt.eps, opt.samples, opt.seed);
          Vec ppsi = hz_detail::psi_from_phi(probe, pphi, cap);
          for (int q = 0; q < m; ++q) {
            double g0 = psi[free[q]] - lam[free[q]];
            double g1 = ppsi[free[q]] - probe[free[q]];
            sys[q][c] = (g1 - g0) / h;
          }
        }
        for (int q = 0; q < m; ++q) sys[q][m] = lam[free[q]] - psi[free[q]];
        bool solved = true;
        Vec delta;
        try {
          delta = reg_detail::solve_augmented(sys);
        } catch (const std::runtime_error&) {
          solved = false;
        }
        if (solved) {
          double span = 0.0;
          for (double d : delta) span = std::max(span, std::abs(d));
          double clip = 0.5 * r + 1e-4;
          double scale = span > clip ? clip / span : 1.0;
          saved_lam = lam;
          saved_psi = psi;
          saved_r = r;
          for (int c = 0; c < m; ++c)
            lam[free[c]] = std::clamp(lam[free[c]] + scale * delta[c], 0.0, cap);
          pending = true;
          continue;
        }
        cooldown = 6;
      }
    }
    if (cooldown > 0) --cooldown;

    for (int i = 0; i < n; ++i) {
      double d = psi[i] - lam[i];
      int dir = (d > 0.0) - (d < 0.0);
      if (dir != 0 && prev_dir[i] != 0) {
        if (dir != prev_dir[i]) {
          step[i] *= 0.5;
          // A fully collapsed step would freeze the iterate short of the
          // target. Kicking it back up keeps the orbit moving until the
          // Newton phase can land.
          if (step[i] < 1e-3 * opt.alpha) step[i] = 3e-2 * opt.alpha;
        } else {
          step[i] = std::min(step[i] * 1.3, opt.alpha);
        }
      }
      if (dir != 0) prev_dir[i] = dir;
      lam[i] = (1.0 - step[i]) * lam[i] + step[i] * psi[i];
    }
  }
}

struct BundleResult {
  Vec bundle;
  double value = 0.0;
};

// Best unit lottery under a budget. An optimum needs at most two items in
// its support, so affordable singletons plus budget-binding pairs cover
// every candidate. Value ties keep the lexicographically smallest support.
// Throws std::domain_error when not even the cheapest item is affordable.
inline BundleResult best_affordable_bundle(const Vec& u_row, const Vec& prices,
                                           double budget) {
  const std::size_t n = u_row.size();
  if (n == 0 || prices.size() != n)
    throw std::invalid_argument("utility row and price vector sizes must match");
  for (double v : u_row)
    if (!std::isfinite(v)) throw std::invalid_argument("utilities must be finite");
  for (double c : prices)
    if (!(c >= 0.0) || !std::isfinite(c))
      throw std::invalid_argument("prices must be nonnegative and finite");
  if (!(budget >= 0.0) || !std::isfinite(budget))
    throw std::invalid_argument("budget must be nonnegative and finite");
  if (*std::min_element(prices.begin(), prices.end()) > budget)
    throw std::domain_error("no unit bundle is affordable at these prices");

  BundleResult best{Vec(n, 0.0), -std::numeric_limits<double>::infinity()};
  auto consider = [&](std::size_t j, std::size_t k, double yj) {
    double value = yj * u_row[j] + (1.0 - yj) * u_row[k];
    double margin =
        std::isfinite(best.value) ? 1e-12 * std::max(1.0, std::abs(best.value)) : 0.0;
    if (value > best.value + margin) {
      std::fill(best.bundle.begin(), best.bundle.end(), 0.0);
      best.bundle[j] = yj;
      best.bundle[k] += 1.0 - yj;  // k == j for singletons
      best.value = value;
    }
  };
  for (std::size_t j = 0; j < n; ++j) {
    if (prices[j] <= budget) consider(j, j, 1.0);
    for (std::size_t k = j + 1; k < n; ++k) {
      if (prices[j] == prices[k]) continue;  // endpoints dominate such mixes
      double yj = (budget - prices[k]) / (prices[j] - prices[k]);
      if (yj < 0.0 || yj > 1.0) continue;
      consider(j, k, yj);
    }
  }
  return best;
}

struct EquilibriumCertificate {
  Vec budget_spent;
  Vec best_bundle_value;  // in the units of the bundle check
  Vec realized_value;
  Vec gap;      // best minus realized, same units
  Vec raw_gap;  // the same quantity in unweighted utilities
  bool bistochastic = false;
  bool prices_match = true;     // checked only when weights are supplied
  bool support_optimal = true;  // checked only when weights are supplied
  bool budgets_ok = false;
  bool bundles_ok = false;
  bool pass = false;
  double delta = 0.0;
};

// Checks whether (x, prices) clears the market within delta: x is a unit
// lottery for everyone, nobody overspends, and nobody can afford a better
// bundle. With weights supplied, the bundle check runs in weighted units
// and the prices and the support of x are additionally checked against the
// exact mechanism. Failed checks are reported, not thrown.
inline EquilibriumCertificate verify_ce(const Matrix& u, const std::optional<Vec>& lambda,
                                        const Matrix& x, const Vec& prices,
                                        const Vec& budgets, double delta) {
  const int n = u.rows();
  detail::validate_instance(u, lambda ? *lambda : Vec(n, 0.0));
  if (x.rows() != n || x.cols() != n)
    throw std::invalid_argument("allocation shape must match the instance");
  if (static_cast<int>(prices.size()) != n || static_cast<int>(budgets.size()) != n)
    throw std::invalid_argument("price and budget vector sizes must match");
  if (!(delta >= 0.0) || !std::isfinite(delta))
    throw std::invalid_argument("tolerance must be nonnegative");
  for (double v : x.flat())
    if (!std::isfinite(v)) throw std::invalid_argument("allocation entries must be finite");
  for (double c : prices)
    if (!(c >= 0.0) || !std::isfinite(c))
      throw std::invalid_argument("prices must be nonnegative and finite");
  for (double b : budgets)
    if (!(b >= 0.0) || !std::isfinite(b))
      throw std::invalid_argument("budgets must be nonnegative and finite");

  EquilibriumCertificate cert;
  cert.delta = delta;

  cert.bistochastic = true;
  for (int i = 0; i < n; ++i) {
    double rs = 0.0, cs = 0.0;
    for (int j = 0; j < n; ++j) {
      rs += x(i, j);
      cs += x(j, i);
      if (x(i, j) < -delta) cert.bistochastic = false;
    }
    if (std::abs(rs - 1.0) > delta || std::abs(cs - 1.0) > delta)
      cert.bistochastic = false;
  }

  cert.budget_spent.assign(n, 0.0);
  cert.budgets_ok = true;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) cert.budget_spent[i] += prices[j] * x(i, j);
    if (cert.budget_spent[i] > budgets[i] + delta) cert.budgets_ok = false;
  }

  cert.best_bundle_value.assign(n, 0.0);
  cert.realized_value.assign(n, 0.0);
  cert.gap.assign(n, 0.0);
  cert.raw_gap.assign(n, 0.0);
  cert.bundles_ok = true;
  Vec row(n);
  for (int i = 0; i < n; ++i) {
    const double scale = lambda ? (*lambda)[i] : 1.0;
    double realized = 0.0, raw_realized = 0.0;
    for (int j = 0; j < n; ++j) {
      raw_realized += u(i, j) * x(i, j);
      realized += scale * u(i, j) * x(i, j);
    }
    cert.realized_value[i] = realized;
    // An empty feasible set can only arise past a budget violation, which
    // the budget check reports; the bundle check then has nothing to add.
    double best = realized, raw_best = raw_realized;
    for (int j = 0; j < n; ++j) row[j] = scale * u(i, j);
    try {
      best = best_affordable_bundle(row, prices, budgets[i]).value;
      for (int j = 0; j < n; ++j) row[j] = u(i, j);
      raw_best = best_affordable_bundle(row, prices, budgets[i]).value;
    } catch (const std::domain_error&) {
    }
    cert.best_bundle_value[i] = best;
    cert.gap[i] = best - realized;
    cert.raw_gap[i] = raw_best - raw_realized;
    if (realized < best - delta) cert.bundles_ok = false;
  }

  if (lambda) {
    Vec exact = vcg_prices(u, *lambda);
    cert.prices_match = true;
    for (int j = 0; j < n; ++j)
      if (std::abs(exact[j] - prices[j]) > delta) cert.prices_match = false;

    cert.support_optimal = true;
    Matrix w = scale_rows(u, *lambda);
    double opt = detail::max_weight_value(w);
    try {
      for (const WeightedPermutation& term : birkhoff_decompose(x)) {
        double v = 0.0;
        for (int i = 0; i < n; ++i) v += w(i, term.pi[i]);
        if (v < opt - delta) cert.support_optimal = false;
      }
    } catch (const std::invalid_argument&) {
      cert.support_optimal = false;  // x too far from bi-stochastic to decompose
    }
  }

  cert.pass = cert.bistochastic && cert.budgets_ok && cert.bundles_ok &&
              cert.prices_match && cert.support_optimal;
  return cert;
}

inline EquilibriumCertificate verify_ce(const Matrix& u, const std::optional<Vec>& lambda,
                                        const Matrix& x, const Vec& prices, double delta) {
  return verify_ce(u, lambda, x, prices, Vec(u.rows(), 1.0), delta);
}

struct EnvyReport {
  std::vector<std::pair<int, int>> pairs;  // (envious player, envied player)
  bool envy_free = true;
};

// Lists every pair (i, k) where player i strictly prefers player k's row
// of the allocation to her own.
inline EnvyReport envy_check(const Matrix& u, const Matrix& x) {
  const int n = u.rows();
  detail::validate_instance(u, Vec(n, 0.0));
  if (x.rows() != n || x.cols() != n)
    throw std::invalid_argument("allocation shape must match the instance");
  for (double v : x.flat())
    if (!std::isfinite(v)) throw std::invalid_argument("allocation entries must be finite");
  EnvyReport rep;
  for (int i = 0; i < n; ++i) {
    double own = 0.0;
    for (int j = 0; j < n; ++j) own += u(i, j) * x(i, j);
    for (int k = 0; k < n; ++k) {
      if (k == i) continue;
      double other = 0.0;
      for (int j = 0; j < n; ++j) other += u(i, j) * x(k, j);
      if (other > own + 1e-9) {
        rep.pairs.emplace_back(i, k);
        rep.envy_free = false;
      }
    }
  }
  return rep;
}

}  // namespace apex
