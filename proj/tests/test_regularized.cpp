// Strictly concave regularized mechanism: interior optimum, payments,
// best-response bids, quadratic price approximation, efficiency-loss bound.

#include "apex/regularized.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include <gtest/gtest.h>

#include "apex/assignment.hpp"
#include "apex/matrix.hpp"
#include "apex/rng.hpp"
#include "oracles.hpp"

using apex::Matrix;
using apex::RegularizerParams;
using apex::Vec;

namespace {

// Random utilities with each row rescaled to min 0, max 1.
Matrix random_normalized(apex::SplitMix64& g, int n) {
  Matrix u(n, n);
  for (int i = 0; i < n; ++i) {
    int lo = 0, hi = 0;
    for (int j = 0; j < n; ++j) {
      u(i, j) = g.next_uniform();
      if (u(i, j) < u(i, lo)) lo = j;
      if (u(i, j) > u(i, hi)) hi = j;
    }
    const double base = u(i, lo), span = u(i, hi) - u(i, lo);
    for (int j = 0; j < n; ++j) u(i, j) = (u(i, j) - base) / span;
  }
  return u;
}

Vec random_bids(apex::SplitMix64& g, int n, double lambda_bar) {
  Vec l(n);
  for (int i = 0; i < n; ++i) l[i] = 0.2 + (lambda_bar - 0.2) * g.next_uniform();
  return l;
}

double objective(const Matrix& u, const Vec& lambda, double beta, const Matrix& x) {
  double v = 0.0;
  for (int i = 0; i < x.rows(); ++i)
    for (int j = 0; j < x.cols(); ++j)
      v += lambda[i] * u(i, j) * x(i, j) - beta / x(i, j);
  return v;
}

TEST(RegularizedOptimum, IdenticalPlayersShareUniformly) {
  Matrix u = Matrix::from_rows({{1, 0.4, 0}, {1, 0.4, 0}, {1, 0.4, 0}});
  RegularizerParams p{apex::canonical_beta(5.0, 3), 5.0};
  auto r = apex::regularized_optimum(u, Vec{2, 2, 2}, p);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(r.x(i, j), 1.0 / 3.0, 1e-8);
}

TEST(RegularizedOptimum, Symmetric2x2MatchesScalarReduction) {
  // By symmetry x = [[p, 1-p], [1-p, p]] and the stationarity system
  // collapses to 1 + beta/p^2 = beta/(1-p)^2 on (1/2, 1).
  const double beta = 0.01;
  const double p_ref = oracle::bisect_decreasing(
      [beta](double p) { return 1.0 + beta / (p * p) - beta / ((1 - p) * (1 - p)); },
      0.5 + 1e-9, 1.0 - 1e-9);
  EXPECT_NEAR(p_ref, 0.90, 0.01);  // sanity on the hand value

  RegularizerParams prm{beta, 2.0};
  auto r = apex::regularized_optimum(Matrix::from_rows({{1, 0}, {0, 1}}), Vec{1, 1}, prm);
  EXPECT_NEAR(r.x(0, 0), p_ref, 1e-7);
  EXPECT_NEAR(r.x(0, 1), 1.0 - p_ref, 1e-7);
  EXPECT_NEAR(r.x(1, 1), p_ref, 1e-7);
}

TEST(RegularizedOptimum, FeasibleInteriorStationary) {
  apex::SplitMix64 g(111);
  for (int rep = 0; rep < 30; ++rep) {
    const int n = 2 + static_cast<int>(g.next_below(3));
    const double lambda_bar = (rep % 2 == 0) ? 5.0 : 20.0;
    RegularizerParams p{apex::canonical_beta(lambda_bar, n), lambda_bar};
    Matrix u = random_normalized(g, n);
    Vec l = random_bids(g, n, lambda_bar);
    auto r = apex::regularized_optimum(u, l, p);

    const double interior = std::sqrt(p.beta / (std::pow(n, 4) * lambda_bar)) / 3.0;
    for (int i = 0; i < n; ++i) {
      double rs = 0.0, cs = 0.0;
      for (int j = 0; j < n; ++j) {
        EXPECT_GT(r.x(i, j), interior);
        rs += r.x(i, j);
        cs += r.x(j, i);
      }
      EXPECT_NEAR(rs, 1.0, 1e-10);
      EXPECT_NEAR(cs, 1.0, 1e-10);
    }
    double worst = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        worst = std::max(worst, std::fabs(l[i] * u(i, j) + p.beta / (r.x(i, j) * r.x(i, j)) -
                                          r.a[i] - r.b[j]));
    EXPECT_LT(worst, 1e-8);
  }
}

TEST(RegularizedOptimum, EfficiencySandwich) {
  apex::SplitMix64 g(222);
  for (int rep = 0; rep < 20; ++rep) {
    const int n = 2 + static_cast<int>(g.next_below(3));
    const double lambda_bar = 5.0;
    RegularizerParams p{apex::canonical_beta(lambda_bar, n), lambda_bar};
    Matrix u = random_normalized(g, n);
    Vec l = random_bids(g, n, lambda_bar);
    auto r = apex::regularized_optimum(u, l, p);
    const double opt = apex::solve_assignment(u, l).assignment.value;

    EXPECT_LE(r.value_reg, r.value_linear);
    EXPECT_LE(r.value_reg, opt + 1e-9);
    const double m_thm = std::sqrt(lambda_bar / p.beta) / n;
    for (double m : {2.0, 10.0, m_thm}) {
      const double eta = apex::eta_bound(l, n, p, m).eta;
      EXPECT_GE(r.value_reg, opt - eta - 1e-9);
      EXPECT_GE(r.value_linear, opt - eta - 1e-9);
    }
  }
}

TEST(RegularizedOptimum, StationaryAgainstFiniteDifferences) {
  apex::SplitMix64 g(333);
  RegularizerParams p{0.01, 2.0};
  Matrix u = random_normalized(g, 3);
  Vec l = {1.0, 1.5, 0.8};
  auto r = apex::regularized_optimum(u, l, p);
  for (int rep = 0; rep < 20; ++rep) {
    // Random direction with zero row and column sums.
    Matrix d(3, 3);
    for (auto& v : d.flat()) v = g.next_uniform() - 0.5;
    Vec rm(3, 0.0), cm(3, 0.0);
    double tm = 0.0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        rm[i] += d(i, j) / 3.0;
        cm[j] += d(i, j) / 3.0;
        tm += d(i, j) / 9.0;
      }
    double dmax = 0.0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        d(i, j) += tm - rm[i] - cm[j];
        dmax = std::max(dmax, std::fabs(d(i, j)));
      }
    double xmin = 1.0;
    for (double v : r.x.flat()) xmin = std::min(xmin, v);
    const double h = 1e-5 * xmin / dmax;
    Matrix xp = r.x, xm = r.x;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        xp(i, j) += h * d(i, j);
        xm(i, j) -= h * d(i, j);
      }
    const double deriv =
        (objective(u, l, p.beta, xp) - objective(u, l, p.beta, xm)) / (2 * h);
    EXPECT_LT(std::fabs(deriv), 1e-6);
  }
}

TEST(RegularizedOptimum, RejectsBadInputs) {
  RegularizerParams p{0.01, 2.0};
  // Row not normalized to max 1.
  EXPECT_THROW(apex::regularized_optimum(Matrix::from_rows({{2, 0}, {0, 1}}), Vec{1, 1}, p),
               std::invalid_argument);
  // Bid above the cap.
  EXPECT_THROW(apex::regularized_optimum(Matrix::from_rows({{1, 0}, {0, 1}}), Vec{3, 1}, p),
               std::invalid_argument);
  // Unreachable tolerance within the sweep cap.
  RegularizerParams tight{0.01, 2.0, 0.0, 1};
  EXPECT_THROW(apex::regularized_optimum(Matrix::from_rows({{1, 0}, {0, 1}}), Vec{1, 1}, tight),
               std::runtime_error);
}

TEST(RegularizedOptimum, WarmStartEscapesAStalledBasin) {
  // Chaining warm starts along a bid sweep used to freeze on this instance:
  // from the 28th grid point the iteration sat at residual 1.6e-3 with every
  // Newton step rejected until the sweep budget ran out, while a cold start
  // converged. The solver now restarts from scratch when a warm run stops
  // making progress, so the chained solve below must reach tolerance.
  apex::SplitMix64 g(7047);
  const double lambda_bar = 20.0;
  RegularizerParams p{apex::canonical_beta(lambda_bar, 4), lambda_bar};
  Matrix u = random_normalized(g, 4);
  Vec l = random_bids(g, 4, lambda_bar);
  auto warm = apex::regularized_optimum(u, l, p);
  for (int k = 1; k <= 29; ++k) {
    Vec lk = l;
    lk[0] = lambda_bar * k / 49.0;
    warm = apex::reg_detail::solve(u, lk, p, &warm);
    EXPECT_LE(warm.residual, p.tol) << "grid point " << k;
  }
}

TEST(RegularizedPayment, ZeroBidPaysExactlyZero) {
  RegularizerParams p{0.01, 2.0};
  Matrix u = Matrix::from_rows({{1, 0}, {0, 1}});
  EXPECT_EQ(apex::regularized_payment(u, Vec{0.0, 1.0}, p, 0), 0.0);
}

TEST(RegularizedPayment, UncontestedPaymentsStaySmall) {
  RegularizerParams p{0.01, 2.0};
  Matrix u = Matrix::from_rows({{1, 0}, {0, 1}});
  const double pay = apex::regularized_payment(u, Vec{1, 1}, p, 0);
  EXPECT_GE(pay, -1e-9);
  EXPECT_LE(pay, apex::eta_bound(Vec{1, 1}, 2, p, 10.0).eta);
}

TEST(RegularizedPayment, ContestedItemTracksVcgPriceShare) {
  RegularizerParams p{0.01, 5.0};
  Matrix u = Matrix::from_rows({{1, 0}, {1, 0}});
  Vec l = {3.0, 1.5};
  auto r = apex::regularized_optimum(u, l, p);
  const double pay = apex::regularized_payment(u, l, p, 0);
  const double eta = apex::eta_min(l, 2, p).eta;
  EXPECT_LE(std::fabs(pay - 1.5 * r.x(0, 0)), eta + 1e-8);
}

TEST(RegularizedPayment, CloseToVcgPricesOnRandomInstances) {
  apex::SplitMix64 g(444);
  for (int rep = 0; rep < 12; ++rep) {
    const int n = 2 + static_cast<int>(g.next_below(2));
    const double lambda_bar = 5.0;
    RegularizerParams p{apex::canonical_beta(lambda_bar, n), lambda_bar};
    Matrix u = random_normalized(g, n);
    Vec l = random_bids(g, n, lambda_bar);
    auto r = apex::regularized_optimum(u, l, p);
    Vec c = apex::vcg_prices(u, l);
    const double m_thm = std::sqrt(lambda_bar / p.beta) / n;
    for (int i = 0; i < n; ++i) {
      const double pay = apex::regularized_payment(u, l, p, i);
      EXPECT_GE(pay, -1e-9);
      double share = 0.0;
      for (int j = 0; j < n; ++j) share += r.x(i, j) * c[j];
      for (double m : {2.0, 10.0, m_thm})
        EXPECT_LE(std::fabs(pay - share), apex::eta_bound(l, n, p, m).eta + 1e-8);
    }
  }
}

TEST(RegularizedPayment, AllocationNearCompetitiveEquilibrium) {
  apex::SplitMix64 g(555);
  for (int rep = 0; rep < 10; ++rep) {
    const int n = 3;
    const double lambda_bar = 5.0;
    RegularizerParams p{apex::canonical_beta(lambda_bar, n), lambda_bar};
    Matrix u = random_normalized(g, n);
    Vec l = random_bids(g, n, lambda_bar);
    auto r = apex::regularized_optimum(u, l, p);
    Vec c = apex::vcg_prices(u, l);
    const double eta = apex::eta_min(l, n, p).eta;
    for (int i = 0; i < n; ++i) {
      const double pay = apex::regularized_payment(u, l, p, i);
      for (int draw = 0; draw < 5; ++draw) {
        Vec y(n, 0.0);  // random point of the simplex
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += y[j] = -std::log(1.0 - g.next_uniform());
        for (int j = 0; j < n; ++j) y[j] /= s;
        double lhs = 0.0, xval = 0.0, ycost = 0.0;
        for (int j = 0; j < n; ++j) {
          lhs += y[j] * l[i] * u(i, j);
          xval += r.x(i, j) * l[i] * u(i, j);
          ycost += y[j] * c[j];
        }
        EXPECT_LE(lhs, xval + ycost - pay + eta + 1e-8);
      }
    }
  }
}

TEST(RegularizedPayment, DeviationsLoseQuadratically) {
  apex::SplitMix64 g(666);
  for (int rep = 0; rep < 10; ++rep) {
    const int n = 2 + static_cast<int>(g.next_below(2));
    const double lambda_bar = 5.0;
    RegularizerParams p{apex::canonical_beta(lambda_bar, n), lambda_bar};
    Matrix u = random_normalized(g, n);
    Vec l = random_bids(g, n, lambda_bar);
    const int i = static_cast<int>(g.next_below(n));

    auto truthful = apex::regularized_optimum(u, l, p);
    const double pay = apex::regularized_payment(u, l, p, i);
    Vec ldev = l;
    ldev[i] = lambda_bar * g.next_uniform();
    auto deviated = apex::regularized_optimum(u, ldev, p);
    const double pay_dev = apex::regularized_payment(u, ldev, p, i);

    double udiff = 0.0, sq = 0.0;
    for (int j = 0; j < n; ++j)
      udiff += l[i] * u(i, j) * (truthful.x(i, j) - deviated.x(i, j));
    for (int k = 0; k < n; ++k)
      for (int j = 0; j < n; ++j) {
        const double d = truthful.x(k, j) - deviated.x(k, j);
        sq += d * d;
      }
    EXPECT_GE(udiff - (pay - pay_dev), p.beta * sq - 1e-8);
  }
}

TEST(RegularizedPayment, PaymentAndWonValueMonotoneInOwnBid) {
  RegularizerParams p{apex::canonical_beta(5.0, 3), 5.0};
  apex::SplitMix64 g(777);
  Matrix u = random_normalized(g, 3);
  Vec l = random_bids(g, 3, 5.0);
  double prev_pay = -1.0, prev_won = -1.0;
  for (int k = 0; k <= 20; ++k) {
    Vec lk = l;
    lk[1] = 5.0 * k / 20.0;
    const double pay = apex::regularized_payment(u, lk, p, 1);
    auto r = apex::regularized_optimum(u, lk, p);
    double won = 0.0;
    for (int j = 0; j < 3; ++j) won += u(1, j) * r.x(1, j);
    if (k == 0) EXPECT_EQ(pay, 0.0);
    EXPECT_GE(pay, prev_pay - 1e-9);
    EXPECT_GE(won, prev_won - 1e-9);
    prev_pay = pay;
    prev_won = won;
  }
}

TEST(BestResponse, SymmetricPlayersRespondIdentically) {
  RegularizerParams p{apex::canonical_beta(5.0, 3), 5.0};
  Matrix u = Matrix::from_rows({{1, 0.5, 0}, {1, 0.5, 0}, {1, 0.5, 0}});
  std::vector<Vec> rounds(4, Vec{1.2, 1.2, 1.2});
  const double b0 = apex::best_response(rounds, u, 0, p, 4.0);
  const double b1 = apex::best_response(rounds, u, 1, p, 4.0);
  const double b2 = apex::best_response(rounds, u, 2, p, 4.0);
  EXPECT_NEAR(b0, b1, 1e-9);
  EXPECT_NEAR(b1, b2, 1e-9);
}

TEST(BestResponse, FullBudgetPushesAboveOne) {
  apex::SplitMix64 g(888);
  for (int rep = 0; rep < 5; ++rep) {
    const int n = 3;
    RegularizerParams p{apex::canonical_beta(5.0, n), 5.0};
    Matrix u = random_normalized(g, n);
    const int t_rounds = 3;
    std::vector<Vec> rounds;
    for (int t = 0; t < t_rounds; ++t) rounds.push_back(random_bids(g, n, 5.0));
    const double lam = apex::best_response(rounds, u, 0, p, static_cast<double>(t_rounds));
    if (lam < p.lambda_bar - 1e-9) EXPECT_GT(lam, 1.0);
  }
}

TEST(BestResponse, MonotoneInBudgetAndCapped) {
  RegularizerParams p{apex::canonical_beta(5.0, 2), 5.0};
  Matrix u = Matrix::from_rows({{1, 0}, {1, 0}});
  std::vector<Vec> rounds(3, Vec{0.0, 2.0});
  double prev = 0.0;
  for (double b : {0.5, 1.0, 2.0, 4.0}) {
    const double lam = apex::best_response(rounds, u, 0, p, b);
    EXPECT_GE(lam, prev - 1e-9);
    prev = lam;
  }
  // A budget no opposing spend can absorb hits the cap.
  EXPECT_NEAR(apex::best_response(rounds, u, 0, p, 1000.0), p.lambda_bar, 1e-12);
}

TEST(BestResponse, RejectsBadInputs) {
  RegularizerParams p{0.01, 2.0};
  Matrix u = Matrix::from_rows({{1, 0}, {0, 1}});
  EXPECT_THROW(apex::best_response({}, u, 0, p, 1.0), std::invalid_argument);
  EXPECT_THROW(apex::best_response({Vec{1, 1}}, u, 0, p, 0.0), std::invalid_argument);
}

TEST(QuadraticPrice, ZeroBidCostsNothing) {
  RegularizerParams p{0.01, 2.0};
  Matrix u = Matrix::from_rows({{1, 0}, {0, 1}});
  EXPECT_EQ(apex::quadratic_price(u, Vec{0.0, 1.0}, p, 0), 0.0);
}

TEST(QuadraticPrice, QuadruplesWhenBidDoublesAtFixedBase) {
  RegularizerParams p{0.01, 3.0};
  apex::SplitMix64 g(999);
  Matrix u = random_normalized(g, 3);
  Vec l = {0.4, 1.0, 1.3};
  auto r = apex::regularized_optimum(u, l, p);
  const double c1 = apex::quadratic_price_at(r.x, u, l[0], 0, p.beta);
  const double c2 = apex::quadratic_price_at(r.x, u, 2 * l[0], 0, p.beta);
  EXPECT_NEAR(c2, 4.0 * c1, 1e-9 * std::max(1.0, std::fabs(c2)));
}

TEST(QuadraticPrice, TracksExactChargeForSmallBids) {
  // The band holds once the bid is small against the curvature scale; by one
  // percent of the cap every sampled instance sits inside it with margin,
  // while larger bids leave the quadratic regime on some instances.
  apex::SplitMix64 g(1010);
  for (int rep = 0; rep < 8; ++rep) {
    const int n = 3;
    const double lambda_bar = 5.0;
    RegularizerParams p{apex::canonical_beta(lambda_bar, n), lambda_bar};
    Matrix u = random_normalized(g, n);
    Vec l = random_bids(g, n, lambda_bar);
    l[0] = 0.01 * lambda_bar * (0.1 + 0.9 * g.next_uniform());
    const double approx = apex::quadratic_price(u, l, p, 0);
    const double exact = apex::regularized_payment(u, l, p, 0);
    ASSERT_GT(exact, 0.0);
    const double ratio = approx / exact;
    EXPECT_GE(ratio, 0.8) << "rep " << rep;
    EXPECT_LE(ratio, 1.25) << "rep " << rep;
  }
}

TEST(EtaBound, ClosedFormAndTheoremValue) {
  RegularizerParams p{0.25, 2.0};
  auto e = apex::eta_bound(Vec{0, 0, 0}, 3, p, 2.0);
  EXPECT_NEAR(e.eta, 0.25 * 27 * 2.0, 1e-12);  // beta n^3 M
  EXPECT_THROW(apex::eta_bound(Vec{1}, 1, p, 1.0), std::invalid_argument);

  // lambda_bar = 10, n = 3, canonical beta, M = sqrt(lambda_bar/beta)/n.
  const double lambda_bar = 10.0;
  RegularizerParams pc{apex::canonical_beta(lambda_bar, 3), lambda_bar};
  const double m = std::sqrt(lambda_bar / pc.beta) / 3.0;
  auto et = apex::eta_bound(Vec(3, lambda_bar), 3, pc, m);
  EXPECT_LE(et.eta, 2.0 / lambda_bar + 1e-12);
  // Closed form 2 sqrt(lambda_bar) n^2 sqrt(beta) from the theorem.
  EXPECT_NEAR(et.eta, 2 * std::sqrt(lambda_bar) * 9 * std::sqrt(pc.beta), 1e-12);
}

TEST(EtaBound, MinimizerNeverWorseThanSamples) {
  RegularizerParams p{1e-4, 5.0};
  Vec l = {1.0, 2.0, 3.0};
  auto best = apex::eta_min(l, 3, p);
  for (double m : {1.5, 2.0, 5.0, 20.0, 100.0})
    EXPECT_LE(best.eta, apex::eta_bound(l, 3, p, m).eta + 1e-12);
}

}  // namespace
