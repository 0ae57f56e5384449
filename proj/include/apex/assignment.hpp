#pragma once

// Exact unit-demand assignment layer.
//
// Maximum-weight perfect matching with dual certificates, second-copy item
// prices (the benefit of duplicating one item), the externality form of the
// payments, fractional capacity augmentation, and Birkhoff-von Neumann
// decomposition of bi-stochastic allocations into lotteries over assignments.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "apex/matrix.hpp"

namespace apex {

struct Assignment {
  std::vector<int> pi;  // player i receives item pi[i]
  double value = 0.0;   // sum_i lambda_i u_{i,pi(i)}
};

// Feasible duals for the assignment LP: w_ij <= a_i + b_j, with equality at
// matched pairs and sum(a) + sum(b) equal to the optimal value.
struct DualCertificate {
  Vec a;  // player duals
  Vec b;  // item duals
};

struct SolveResult {
  Assignment assignment;
  DualCertificate duals;
};

struct VcgOutcome {
  Assignment assignment;
  Vec prices;    // second-copy price per item
  DualCertificate duals;
  Vec payments;  // payments[i] = prices[pi[i]]
};

struct WeightedPermutation {
  double weight = 0.0;
  std::vector<int> pi;
};

namespace detail {

constexpr double kValueTol = 1e-9;    // golden values, certificates
constexpr double kTieTol = 1e-12;     // exact comparisons between candidate optima
constexpr double kSupportTol = 1e-10; // Birkhoff support threshold

inline void validate_instance(const Matrix& u, const Vec& lambda) {
  if (u.rows() != u.cols() || u.rows() == 0)
    throw std::invalid_argument("utility matrix must be square and nonempty");
  for (double v : u.flat())
    if (!(v >= 0.0) || !std::isfinite(v))
      throw std::invalid_argument("utilities must be nonnegative and finite");
  if (static_cast<int>(lambda.size()) != u.rows())
    throw std::invalid_argument("weight vector size must match the matrix");
  for (double l : lambda)
    if (!(l >= 0.0) || !std::isfinite(l))
      throw std::invalid_argument("weights must be nonnegative and finite");
}

inline Vec ones_if_empty(Vec lambda, int n) {
  if (lambda.empty()) lambda.assign(n, 1.0);
  return lambda;
}

// Minimum-cost perfect matching on a square matrix, shortest augmenting
// paths with potentials. On return pu[i] + pv[j] <= cost(i,j) for all i,j
// with equality at matched pairs. Column n is a virtual root column.
inline void min_cost_matching(const Matrix& cost, std::vector<int>& row_to_col,
                              Vec& pu, Vec& pv) {
  const int n = cost.rows();
  const double inf = std::numeric_limits<double>::infinity();
  pu.assign(n, 0.0);
  pv.assign(n + 1, 0.0);
  std::vector<int> col_to_row(n + 1, -1);
  for (int i = 0; i < n; ++i) {
    col_to_row[n] = i;
    int j0 = n;
    Vec minv(n, inf);
    std::vector<int> way(n, n);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = col_to_row[j0];
      int j1 = -1;
      double delta = inf;
      for (int j = 0; j < n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0, j) - pu[i0] - pv[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          pu[col_to_row[j]] += delta;
          pv[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (col_to_row[j0] != -1);
    // Unroll the augmenting path.
    while (j0 != n) {
      const int j1 = way[j0];
      col_to_row[j0] = col_to_row[j1];
      j0 = j1;
    }
  }
  row_to_col.assign(n, -1);
  for (int j = 0; j < n; ++j) row_to_col[col_to_row[j]] = j;
}

// Max-weight perfect matching plus duals (a_i + b_j >= w_ij, tight at
// matched pairs). Negates the matrix and reuses the min-cost routine.
inline double max_weight_matching(const Matrix& w, std::vector<int>& row_to_col,
                                  Vec& a, Vec& b) {
  const int n = w.rows();
  Matrix cost(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) cost(i, j) = -w(i, j);
  Vec pu, pv;
  min_cost_matching(cost, row_to_col, pu, pv);
  a.resize(n);
  b.resize(n);
  for (int i = 0; i < n; ++i) a[i] = -pu[i];
  for (int j = 0; j < n; ++j) b[j] = -pv[j];
  double value = 0.0;
  for (int i = 0; i < n; ++i) value += w(i, row_to_col[i]);
  return value;
}

inline double max_weight_value(const Matrix& w) {
  std::vector<int> pi;
  Vec a, b;
  return max_weight_matching(w, pi, a, b);
}

// Optimal value with item dup duplicated: one extra column copying column
// dup plus a zero dummy row keeps the problem square.
inline double opt_with_duplicate(const Matrix& w, int dup) {
  const int n = w.rows();
  Matrix aug(n + 1, n + 1, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) aug(i, j) = w(i, j);
    aug(i, n) = w(i, dup);
  }
  return max_weight_value(aug);
}

// Same, but also reports the induced allocation over the n original items
// (the duplicate column folds back onto item dup; the dummy row is dropped).
inline Matrix allocation_with_duplicate(const Matrix& w, int dup, double* value) {
  const int n = w.rows();
  Matrix aug(n + 1, n + 1, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) aug(i, j) = w(i, j);
    aug(i, n) = w(i, dup);
  }
  std::vector<int> pi;
  Vec a, b;
  const double v = max_weight_matching(aug, pi, a, b);
  if (value) *value = v;
  Matrix x(n, n, 0.0);
  for (int i = 0; i < n; ++i) x(i, pi[i] == n ? dup : pi[i]) += 1.0;
  return x;
}

// Lexicographically smallest permutation among those attaining opt within
// kTieTol: fix players in order, each to the smallest item whose best
// completion still reaches the optimum.
inline std::vector<int> lexicographic_argmax(const Matrix& w, double opt) {
  const int n = w.rows();
  std::vector<int> pi(n, -1);
  std::vector<char> used(n, 0);
  double fixed_value = 0.0;
  std::vector<int> free_cols;
  for (int i = 0; i < n; ++i) {
    int chosen = -1;
    double chosen_total = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j) {
      if (used[j]) continue;
      free_cols.clear();
      for (int k = 0; k < n; ++k)
        if (!used[k] && k != j) free_cols.push_back(k);
      const int m = n - i - 1;
      Matrix sub(m > 0 ? m : 1, m > 0 ? m : 1, 0.0);
      double completion = 0.0;
      if (m > 0) {
        for (int r = 0; r < m; ++r)
          for (int c = 0; c < m; ++c) sub(r, c) = w(i + 1 + r, free_cols[c]);
        completion = max_weight_value(sub);
      }
      const double total = fixed_value + w(i, j) + completion;
      if (total >= opt - kTieTol) {
        chosen = j;
        break;
      }
      if (total > chosen_total) {
        chosen_total = total;
        chosen = j;  // numerical fallback, keeps the best seen so far
      }
    }
    pi[i] = chosen;
    used[chosen] = 1;
    fixed_value += w(i, chosen);
  }
  return pi;
}

}  // namespace detail

// Max-weight assignment of items to players under per-player weights
// lambda (default all ones). Ties are broken toward the lexicographically
// smallest optimal permutation.
inline SolveResult solve_assignment(const Matrix& u, Vec lambda = {}) {
  lambda = detail::ones_if_empty(std::move(lambda), u.rows());
  detail::validate_instance(u, lambda);
  const Matrix w = scale_rows(u, lambda);
  std::vector<int> pi;
  Vec a, b;
  const double opt = detail::max_weight_matching(w, pi, a, b);
  std::vector<int> lex = detail::lexicographic_argmax(w, opt);
  double value = 0.0;
  for (int i = 0; i < w.rows(); ++i) value += w(i, lex[i]);
  return SolveResult{Assignment{std::move(lex), value}, DualCertificate{a, b}};
}

// Second-copy prices: C_j is the gain from duplicating item j. Well defined
// across co-optimal assignments.
inline Vec vcg_prices(const Matrix& u, Vec lambda = {}) {
  lambda = detail::ones_if_empty(std::move(lambda), u.rows());
  detail::validate_instance(u, lambda);
  const Matrix w = scale_rows(u, lambda);
  const int n = w.rows();
  const double opt = detail::max_weight_value(w);
  Vec c(n);
  for (int j = 0; j < n; ++j) {
    c[j] = detail::opt_with_duplicate(w, j) - opt;
    if (c[j] < -detail::kValueTol)
      throw std::logic_error("negative second-copy price");
    c[j] = std::max(c[j], 0.0);
  }
  return c;
}

// Full pseudo-auction outcome: assignment, item prices, payments, and an
// envy-freeness dual certificate (b_j = C_j, a_i = winner surplus). Payments
// are cross-checked against the externality each player imposes.
inline VcgOutcome vcg_outcome(const Matrix& u, Vec lambda = {}) {
  lambda = detail::ones_if_empty(std::move(lambda), u.rows());
  detail::validate_instance(u, lambda);
  const Matrix w = scale_rows(u, lambda);
  const int n = w.rows();

  SolveResult base = solve_assignment(u, lambda);
  const Vec c = vcg_prices(u, lambda);
  const auto& pi = base.assignment.pi;

  Vec payments(n);
  for (int i = 0; i < n; ++i) payments[i] = c[pi[i]];

  // Externality form: what the others lose from player i's presence.
  for (int i = 0; i < n; ++i) {
    Matrix wz = w;
    for (int j = 0; j < n; ++j) wz(i, j) = 0.0;
    const double others_best = detail::max_weight_value(wz);
    const double others_here = base.assignment.value - w(i, pi[i]);
    if (std::fabs(payments[i] - (others_best - others_here)) > detail::kValueTol)
      throw std::logic_error("externality payment check failed");
  }

  // Surplus duals double as the envy-freeness certificate.
  DualCertificate duals;
  duals.b = c;
  duals.a.resize(n);
  for (int i = 0; i < n; ++i) duals.a[i] = w(i, pi[i]) - c[pi[i]];
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (w(i, j) > duals.a[i] + duals.b[j] + detail::kValueTol)
        throw std::logic_error("price vector is not envy-free");

  return VcgOutcome{std::move(base.assignment), c, std::move(duals), std::move(payments)};
}

// Optimal value when item capacities are relaxed to 1 + y_j, for y >= 0 with
// sum(y) <= 1. Equals OPT + sum_j y_j C_j in that regime; computed as the
// value of the explicit mixture of matchings and verified against the dual
// upper bound. Rejects sum(y) > 1, where the identity may fail.
inline double opt_with_capacities(const Matrix& u, Vec lambda, const Vec& y) {
  lambda = detail::ones_if_empty(std::move(lambda), u.rows());
  detail::validate_instance(u, lambda);
  const int n = u.rows();
  if (static_cast<int>(y.size()) != n)
    throw std::invalid_argument("capacity vector size must match the matrix");
  double ysum = 0.0;
  for (double v : y) {
    if (!(v >= 0.0) || !std::isfinite(v))
      throw std::invalid_argument("capacities must be nonnegative and finite");
    ysum += v;
  }
  if (ysum > 1.0 + 1e-12)
    throw std::invalid_argument("total extra capacity above 1 is not supported");

  const Matrix w = scale_rows(u, lambda);
  std::vector<int> pi;
  Vec da, db;
  const double opt = detail::max_weight_matching(w, pi, da, db);

  // Mixture from the augmentation argument: with probability y_j play the
  // best assignment that uses a second copy of item j, otherwise the base
  // assignment. Its value is computed entrywise, not via the identity.
  Matrix mix(n, n, 0.0);
  for (int i = 0; i < n; ++i) mix(i, pi[i]) = 1.0 - ysum;
  Vec c(n);
  for (int j = 0; j < n; ++j) {
    double vplus = 0.0;
    const Matrix xj = detail::allocation_with_duplicate(w, j, &vplus);
    c[j] = std::max(vplus - opt, 0.0);
    if (y[j] > 0.0)
      for (int r = 0; r < n; ++r)
        for (int s = 0; s < n; ++s) mix(r, s) += y[j] * xj(r, s);
  }
  const double constructive = frob_dot(w, mix);

  // Dual side: b_j = C_j with surplus player duals bounds the relaxation by
  // sum(a) + sum((1 + y_j) b_j).
  double bound = 0.0;
  for (int i = 0; i < n; ++i) {
    const double ai = w(i, pi[i]) - c[pi[i]];
    if (ai < -detail::kValueTol) throw std::logic_error("negative surplus dual");
    bound += ai;
  }
  for (int j = 0; j < n; ++j) bound += (1.0 + y[j]) * c[j];
  if (std::fabs(constructive - bound) > 1e-8)
    throw std::logic_error("augmentation mixture and dual bound disagree");
  return constructive;
}

// Birkhoff-von Neumann: write a bi-stochastic matrix as a convex combination
// of permutation matrices. At most n^2 - 2n + 2 terms; weights renormalized
// to sum to one before returning.
inline std::vector<WeightedPermutation> birkhoff_decompose(const Matrix& x) {
  const int n = x.rows();
  if (n != x.cols() || n == 0)
    throw std::invalid_argument("allocation must be square and nonempty");
  for (double v : x.flat())
    if (!(v >= -1e-8) || !std::isfinite(v))
      throw std::invalid_argument("allocation entries must be nonnegative");
  for (int i = 0; i < n; ++i) {
    double rs = 0.0, cs = 0.0;
    for (int j = 0; j < n; ++j) {
      rs += x(i, j);
      cs += x(j, i);
    }
    if (std::fabs(rs - 1.0) > 1e-8 || std::fabs(cs - 1.0) > 1e-8)
      throw std::invalid_argument("allocation is not bi-stochastic");
  }

  Matrix r = x;
  std::vector<WeightedPermutation> terms;
  const int max_terms = n * n - 2 * n + 2;
  for (int step = 0; step < max_terms + 1; ++step) {
    double maxv = 0.0;
    for (double v : r.flat()) maxv = std::max(maxv, v);
    if (maxv <= detail::kSupportTol) break;
    if (step == max_terms)
      throw std::invalid_argument("decomposition did not terminate; input too far from bi-stochastic");

    // Perfect matching on the support via augmenting paths.
    std::vector<int> match_col(n, -1);
    std::vector<char> visited(n, 0);
    std::function<bool(int)> try_row = [&](int i) -> bool {
      for (int j = 0; j < n; ++j) {
        if (r(i, j) <= detail::kSupportTol || visited[j]) continue;
        visited[j] = 1;
        if (match_col[j] < 0 || try_row(match_col[j])) {
          match_col[j] = i;
          return true;
        }
      }
      return false;
    };
    for (int i = 0; i < n; ++i) {
      std::fill(visited.begin(), visited.end(), 0);
      if (!try_row(i))
        throw std::invalid_argument("support admits no perfect matching");
    }
    std::vector<int> pi(n);
    for (int j = 0; j < n; ++j) pi[match_col[j]] = j;

    double theta = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) theta = std::min(theta, r(i, pi[i]));
    for (int i = 0; i < n; ++i) r(i, pi[i]) -= theta;
    terms.push_back(WeightedPermutation{theta, std::move(pi)});
  }
  if (terms.empty()) throw std::invalid_argument("empty decomposition");

  double total = 0.0;
  for (const auto& t : terms) total += t.weight;
  for (auto& t : terms) t.weight /= total;
  return terms;
}

}  // namespace apex
