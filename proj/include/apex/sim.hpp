// Repeated allocation rounds on top of the one-shot mechanisms. Players
// submit scalar bids each round, a backend prices the profile into an
// allocation and token charges, and budgets carry across rounds. Three
// read-only probes sit on the recorded trace: counterfactual menus for a
// single round, a hindsight audit against constant-bid distributions, and
// an aggregate certificate checking the time-averaged allocation against
// market-clearing prices.
//
// Design notes.
//  - Bids live in [0, lambda_cap]. A zero cap in the config derives one:
//    the regularized backend uses its own bid ceiling, the exact backend
//    the largest weight the menu analysis supports (lambda_max). Flat
//    utility rows leave nothing to derive and require an explicit cap.
//  - Budget clamping is per round and minimal. While some player's charge
//    exceeds their remaining tokens, the lowest-indexed violator's bid is
//    replaced by zero and the round repriced. A zero bid never pays: the
//    others' optimum leaves that player a leftover item whose duplicate is
//    worthless, so each player is clamped at most once and the loop ends.
//    Records keep the effective bids; the clamped flags mark substitutions.
//  - The regularized backend warm-starts each round from the previous
//    round's duals and the without-i charge solves from the round's own
//    state. Records carry the final duals so counterfactuals can restart
//    from them and land on the recorded solution.
//  - The audit holds everyone else's effective bids fixed and optimizes a
//    budget-feasible distribution over constant bids. Under exact pricing
//    the received item is piecewise constant in the own bid and moves one
//    way along the upper envelope of weight lines, so bisecting on the
//    item finds every piece; the audit prices one bid per piece plus the
//    endpoints, then mixes an affordable level with a more expensive one
//    to spend the budget exactly. The value it reports is attainable, a
//    certified lower bound on the hindsight optimum. The regularized menu
//    is smooth with utility monotone in the bid, so there the largest
//    sustainable constant bid is optimal and the audit reuses
//    best_response.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "apex/assignment.hpp"
#include "apex/hz.hpp"
#include "apex/matrix.hpp"
#include "apex/regularized.hpp"

namespace apex {

enum class BackendKind { exact_vcg, regularized };

struct BackendSpec {
  BackendKind kind = BackendKind::exact_vcg;
  RegularizerParams params{0.0, 0.0};  // regularized backend only
};

inline BackendSpec exact_backend() { return {}; }

inline BackendSpec regularized_backend(const RegularizerParams& p) {
  return BackendSpec{BackendKind::regularized, p};
}

struct StrategySpec {
  enum class Kind { constant, replay, pacer };
  Kind kind = Kind::constant;
  double bid = 0.0;          // constant: submitted every round
  Vec script;                // replay: one bid per round
  double target_rate = 0.0;  // pacer: tokens per round to aim for; 0 derives budget / T
  double step = 1.05;        // pacer: multiplicative bid adjustment, > 1
};

inline StrategySpec constant_bid(double bid) {
  StrategySpec s;
  s.bid = bid;
  return s;
}

inline StrategySpec replay_script(Vec script) {
  StrategySpec s;
  s.kind = StrategySpec::Kind::replay;
  s.script = std::move(script);
  return s;
}

// Pacing controller: shades the bid down whenever cumulative spend runs
// ahead of target_rate * t and back up otherwise.
inline StrategySpec bwk_pacer(double target_rate = 0.0, double step = 1.05) {
  StrategySpec s;
  s.kind = StrategySpec::Kind::pacer;
  s.target_rate = target_rate;
  s.step = step;
  return s;
}

struct ScenarioConfig {
  Matrix u;
  int T = 1;
  Vec budgets;  // positive, one per player
  BackendSpec backend;
  std::vector<StrategySpec> strategies;  // one per player
  std::uint64_t seed = 1;  // carried for derived runs; the loop itself is deterministic
  double lambda_cap = 0.0;  // bid ceiling; 0 derives it from the backend
};

struct RoundRecord {
  int t = 0;  // 1-based
  Vec bids;   // effective bids after clamping
  Matrix allocation;
  Vec charges;
  Vec utilities;  // true value of the received (fractional) item
  Vec budget_remaining;
  std::vector<bool> clamped;
  Vec dual_a, dual_b;  // regularized solver state; empty under exact pricing
};

struct SimulationTrace {
  ScenarioConfig config;  // echo with derived fields resolved
  std::vector<RoundRecord> rounds;
  Matrix mean_allocation;
  Vec mean_payments;
  Vec mean_utilities;
};

struct CounterfactualResult {
  Matrix allocation;
  double charge = 0.0;
  double utility = 0.0;  // valued by the player's original utility row
};

struct RegretReport {
  int player = 0;
  double realized_utility = 0.0;
  double best_response_lambda = 0.0;  // spending component of the best distribution
  double best_response_utility = 0.0;
  double strong_regret = 0.0;  // best_response_utility - realized_utility
  double normalized = 0.0;     // strong_regret / T
};

struct AggregateReport {
  EquilibriumCertificate certificate;
  Vec best_response_lambda;  // hindsight constant bid per player
  Vec prices;                // shaded prices the certificate was checked against
  double concentration = 0.0;  // mean absolute bid deviation from best response
};

namespace sim_detail {

struct RoundOutcome {
  Matrix x;
  Vec charges;
  Vec utilities;
  RegularizedOptimum state;  // regularized backend only
  bool has_state = false;
};

inline RoundOutcome exact_round(const Matrix& u, const Vec& bids) {
  const int n = u.rows();
  const VcgOutcome o = vcg_outcome(u, bids);
  RoundOutcome r;
  r.x = permutation_matrix(o.assignment.pi);
  r.charges = o.payments;
  r.utilities.assign(n, 0.0);
  for (int i = 0; i < n; ++i) r.utilities[i] = u(i, o.assignment.pi[i]);
  return r;
}

inline RoundOutcome regularized_round(const Matrix& u, const Vec& bids,
                                      const RegularizerParams& p,
                                      const RegularizedOptimum* warm) {
  const int n = u.rows();
  RoundOutcome r;
  r.state = reg_detail::solve(u, bids, p, warm);
  r.has_state = true;
  r.x = r.state.x;
  r.charges.assign(n, 0.0);
  r.utilities.assign(n, 0.0);
  for (int i = 0; i < n; ++i) {
    double v = 0.0;
    for (int j = 0; j < n; ++j) v += u(i, j) * r.x(i, j);
    r.utilities[i] = v;
  }
  for (int i = 0; i < n; ++i) {
    if (!(bids[i] > 0.0)) continue;
    Vec rest = bids;
    rest[i] = 0.0;
    const RegularizedOptimum without = reg_detail::solve(u, rest, p, &r.state);
    r.charges[i] = reg_detail::payment_from(r.state, without.value_reg, u, bids, i);
  }
  return r;
}

inline RoundOutcome run_round(const Matrix& u, const Vec& bids,
                              const BackendSpec& backend,
                              const RegularizedOptimum* warm) {
  if (backend.kind == BackendKind::exact_vcg) return exact_round(u, bids);
  return regularized_round(u, bids, backend.params, warm);
}

inline double resolve_cap(const ScenarioConfig& config) {
  double cap = config.lambda_cap;
  if (cap == 0.0) {
    if (config.backend.kind == BackendKind::regularized) {
      cap = config.backend.params.lambda_bar;
    } else {
      const LambdaMaxResult lm = lambda_max(config.u);
      if (lm.degenerate)
        throw std::invalid_argument(
            "bid cap cannot be derived from flat utility rows; set lambda_cap");
      cap = lm.value;
    }
  }
  if (!(cap > 0.0) || !std::isfinite(cap))
    throw std::invalid_argument("lambda_cap must be positive and finite");
  return cap;
}

inline ScenarioConfig resolve_config(const ScenarioConfig& config) {
  const int n = config.u.rows();
  detail::validate_instance(config.u, Vec(n > 0 ? n : 0, 0.0));
  if (config.T < 1) throw std::invalid_argument("horizon must be at least one round");
  if (static_cast<int>(config.budgets.size()) != n)
    throw std::invalid_argument("one budget per player required");
  for (double b : config.budgets)
    if (!(b > 0.0) || !std::isfinite(b))
      throw std::invalid_argument("budgets must be positive and finite");
  if (static_cast<int>(config.strategies.size()) != n)
    throw std::invalid_argument("one strategy per player required");

  ScenarioConfig r = config;
  r.lambda_cap = resolve_cap(config);
  if (config.backend.kind == BackendKind::regularized) {
    reg_detail::validate(config.u, Vec(n, 0.0), config.backend.params);
    if (r.lambda_cap > config.backend.params.lambda_bar)
      throw std::invalid_argument("lambda_cap cannot exceed the regularizer bid cap");
  }

  for (int i = 0; i < n; ++i) {
    StrategySpec& s = r.strategies[i];
    const auto check_bid = [&](double v) {
      if (!std::isfinite(v) || v < 0.0 || v > r.lambda_cap)
        throw std::invalid_argument("bids must lie in [0, lambda_cap]");
    };
    switch (s.kind) {
      case StrategySpec::Kind::constant:
        check_bid(s.bid);
        break;
      case StrategySpec::Kind::replay:
        if (static_cast<int>(s.script.size()) < config.T)
          throw std::invalid_argument("replay script shorter than the horizon");
        for (double v : s.script) check_bid(v);
        break;
      case StrategySpec::Kind::pacer:
        if (!(s.step > 1.0) || !std::isfinite(s.step))
          throw std::invalid_argument("pacer step must exceed 1");
        if (s.target_rate < 0.0 || !std::isfinite(s.target_rate))
          throw std::invalid_argument("pacer target rate must be nonnegative and finite");
        if (s.target_rate == 0.0) s.target_rate = config.budgets[i] / config.T;
        break;
    }
  }
  return r;
}

}  // namespace sim_detail

inline SimulationTrace run_simulation(const ScenarioConfig& config) {
  const ScenarioConfig resolved = sim_detail::resolve_config(config);
  const Matrix& u = resolved.u;
  const int n = u.rows();
  const int T = resolved.T;

  SimulationTrace trace;
  trace.config = resolved;
  trace.rounds.reserve(T);
  trace.mean_allocation = Matrix(n, n);
  trace.mean_payments.assign(n, 0.0);
  trace.mean_utilities.assign(n, 0.0);

  Vec remaining = resolved.budgets;
  Vec spent(n, 0.0), pacer_bid(n, 0.0);
  for (int i = 0; i < n; ++i)
    if (resolved.strategies[i].kind == StrategySpec::Kind::pacer)
      pacer_bid[i] = std::min(1.0, resolved.lambda_cap);

  RegularizedOptimum carry;
  const RegularizedOptimum* warm = nullptr;

  for (int t = 1; t <= T; ++t) {
    Vec bids(n);
    for (int i = 0; i < n; ++i) {
      const StrategySpec& s = resolved.strategies[i];
      if (s.kind == StrategySpec::Kind::constant) bids[i] = s.bid;
      else if (s.kind == StrategySpec::Kind::replay) bids[i] = s.script[t - 1];
      else bids[i] = pacer_bid[i];
    }

    std::vector<bool> clamped(n, false);
    sim_detail::RoundOutcome out = sim_detail::run_round(u, bids, resolved.backend, warm);
    for (;;) {
      int victim = -1;
      for (int i = 0; i < n && victim < 0; ++i)
        if (!clamped[i] && out.charges[i] > remaining[i]) victim = i;
      if (victim < 0) break;
      clamped[victim] = true;
      bids[victim] = 0.0;
      out = sim_detail::run_round(u, bids, resolved.backend, warm);
    }

    RoundRecord rec;
    rec.t = t;
    rec.bids = bids;
    rec.allocation = out.x;
    rec.charges = out.charges;
    rec.utilities = out.utilities;
    rec.clamped = std::move(clamped);
    for (int i = 0; i < n; ++i) {
      remaining[i] -= out.charges[i];
      spent[i] += out.charges[i];
      trace.mean_payments[i] += out.charges[i];
      trace.mean_utilities[i] += out.utilities[i];
      for (int j = 0; j < n; ++j) trace.mean_allocation(i, j) += out.x(i, j);
    }
    rec.budget_remaining = remaining;
    if (out.has_state) {
      rec.dual_a = out.state.a;
      rec.dual_b = out.state.b;
      carry = out.state;
      warm = &carry;
    }
    trace.rounds.push_back(std::move(rec));

    for (int i = 0; i < n; ++i) {
      const StrategySpec& s = resolved.strategies[i];
      if (s.kind != StrategySpec::Kind::pacer) continue;
      if (spent[i] > s.target_rate * t) pacer_bid[i] /= s.step;
      else pacer_bid[i] *= s.step;
      pacer_bid[i] = std::min(pacer_bid[i], resolved.lambda_cap);
    }
  }

  for (int i = 0; i < n; ++i) {
    trace.mean_payments[i] /= T;
    trace.mean_utilities[i] /= T;
    for (int j = 0; j < n; ++j) trace.mean_allocation(i, j) /= T;
  }
  return trace;
}

// Replays round t with player's bid (and optionally their reported utility
// row) replaced, holding everyone else's effective bids fixed. Returns the
// player's charge and their true-value utility at the new allocation.
inline CounterfactualResult counterfactual_round(
    const SimulationTrace& trace, int t, int player, double bid,
    const std::optional<Vec>& utility_row = std::nullopt) {
  const Matrix& u = trace.config.u;
  const int n = u.rows();
  if (t < 1 || t > static_cast<int>(trace.rounds.size()))
    throw std::out_of_range("round index out of range");
  if (player < 0 || player >= n)
    throw std::out_of_range("player index out of range");
  if (!std::isfinite(bid) || bid < 0.0 || bid > trace.config.lambda_cap)
    throw std::invalid_argument("bid must lie in [0, lambda_cap]");

  Matrix u_cf = u;
  if (utility_row.has_value()) {
    if (static_cast<int>(utility_row->size()) != n)
      throw std::invalid_argument("utility row size must match the instance");
    for (double v : *utility_row)
      if (!(v >= 0.0) || !std::isfinite(v))
        throw std::invalid_argument("utility row must be nonnegative and finite");
    for (int j = 0; j < n; ++j) u_cf(player, j) = (*utility_row)[j];
  }

  const RoundRecord& rec = trace.rounds[t - 1];
  Vec bids = rec.bids;
  bids[player] = bid;

  sim_detail::RoundOutcome out;
  if (trace.config.backend.kind == BackendKind::exact_vcg) {
    out = sim_detail::exact_round(u_cf, bids);
  } else {
    RegularizedOptimum warm;
    const RegularizedOptimum* wp = nullptr;
    if (static_cast<int>(rec.dual_a.size()) == n &&
        static_cast<int>(rec.dual_b.size()) == n) {
      warm.a = rec.dual_a;
      warm.b = rec.dual_b;
      wp = &warm;
    }
    out = sim_detail::regularized_round(u_cf, bids, trace.config.backend.params, wp);
  }

  CounterfactualResult res;
  res.allocation = out.x;
  res.charge = out.charges[player];
  double v = 0.0;
  for (int j = 0; j < n; ++j) v += u(player, j) * out.x(player, j);
  res.utility = v;
  return res;
}

// Hindsight audit: the best budget-feasible distribution over constant bids
// against the others' recorded play, reported as total utility and regret.
// By default the player's configured budget applies; an explicit budget
// tightens or relaxes the constraint (the nonnegative-regret floor is only
// guaranteed at the configured budget).
inline RegretReport audit_strong_regret(const SimulationTrace& trace, int player,
                                        std::optional<double> budget = std::nullopt) {
  const Matrix& u = trace.config.u;
  const int n = u.rows();
  if (player < 0 || player >= n)
    throw std::out_of_range("player index out of range");
  if (trace.rounds.empty()) throw std::invalid_argument("trace has no rounds");
  const int T = static_cast<int>(trace.rounds.size());
  const double cap = trace.config.lambda_cap;
  if (!(cap > 0.0) || !std::isfinite(cap))
    throw std::invalid_argument("trace carries no resolved lambda_cap");
  const double B = budget.has_value() ? *budget : trace.config.budgets[player];
  if (!(B > 0.0) || !std::isfinite(B))
    throw std::invalid_argument("audit budget must be positive and finite");

  RegretReport rep;
  rep.player = player;
  for (const RoundRecord& rec : trace.rounds)
    rep.realized_utility += rec.utilities[player];

  if (trace.config.backend.kind == BackendKind::regularized) {
    const RegularizerParams& p = trace.config.backend.params;
    std::vector<Vec> rounds;
    rounds.reserve(T);
    for (const RoundRecord& rec : trace.rounds) rounds.push_back(rec.bids);
    const double lam = best_response(rounds, u, player, p, B);

    std::map<Vec, int> profiles;
    for (const RoundRecord& rec : trace.rounds) {
      Vec key = rec.bids;
      key[player] = 0.0;
      ++profiles[key];
    }
    double util = 0.0;
    for (const auto& kv : profiles) {
      Vec bids = kv.first;
      bids[player] = lam;
      const RegularizedOptimum opt = reg_detail::solve(u, bids, p, nullptr);
      double v = 0.0;
      for (int j = 0; j < n; ++j) v += u(player, j) * opt.x(player, j);
      util += kv.second * v;
    }
    rep.best_response_lambda = lam;
    rep.best_response_utility = util;
  } else {
    std::map<Vec, int> profiles;
    for (const RoundRecord& rec : trace.rounds) {
      Vec key = rec.bids;
      key[player] = 0.0;
      ++profiles[key];
    }

    // The received item is piecewise constant in the own bid; bisection on
    // it recovers the piece boundaries of every profile.
    std::vector<double> cuts{0.0, cap};
    const double cut_tol = 1e-9 * std::max(1.0, cap);
    for (const auto& kv : profiles) {
      const Vec& profile = kv.first;
      const auto item_at = [&](double w) {
        Vec bids = profile;
        bids[player] = w;
        return solve_assignment(u, bids).assignment.pi[player];
      };
      struct Seg {
        double lo, hi;
        int ilo, ihi;
      };
      std::vector<Seg> stack;
      stack.push_back(Seg{0.0, cap, item_at(0.0), item_at(cap)});
      while (!stack.empty()) {
        const Seg s = stack.back();
        stack.pop_back();
        if (s.ilo == s.ihi) continue;
        if (s.hi - s.lo <= cut_tol) {
          cuts.push_back(0.5 * (s.lo + s.hi));
          continue;
        }
        const double mid = 0.5 * (s.lo + s.hi);
        const int im = item_at(mid);
        stack.push_back(Seg{s.lo, mid, s.ilo, im});
        stack.push_back(Seg{mid, s.hi, im, s.ihi});
      }
    }
    std::sort(cuts.begin(), cuts.end());

    // One representative bid per piece plus the pure endpoints.
    std::vector<double> points;
    points.push_back(0.0);
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k)
      points.push_back(0.5 * (cuts[k] + cuts[k + 1]));
    points.push_back(cap);

    struct Level {
      double lam, spend, util;
    };
    std::vector<Level> levels;
    levels.reserve(points.size());
    for (double w : points) {
      Level lv{w, 0.0, 0.0};
      for (const auto& kv : profiles) {
        Vec bids = kv.first;
        bids[player] = w;
        const VcgOutcome o = vcg_outcome(u, bids);
        lv.spend += kv.second * o.payments[player];
        lv.util += kv.second * u(player, o.assignment.pi[player]);
      }
      levels.push_back(lv);
    }

    double best_val = -1.0, best_lam = 0.0;
    for (const Level& lv : levels) {
      if (lv.spend <= B + 1e-9 && lv.util > best_val) {
        best_val = lv.util;
        best_lam = lv.lam;
      }
    }
    // Exhaust the leftover budget on a pricier level with the mixing
    // weight that lands total spend exactly on B.
    for (const Level& lo : levels) {
      if (lo.spend > B + 1e-9) continue;
      for (const Level& hi : levels) {
        if (hi.spend <= B || hi.spend <= lo.spend) continue;
        const double mu = (B - lo.spend) / (hi.spend - lo.spend);
        const double val = lo.util + mu * (hi.util - lo.util);
        if (val > best_val) {
          best_val = val;
          best_lam = hi.lam;
        }
      }
    }
    rep.best_response_lambda = best_lam;
    rep.best_response_utility = best_val;
  }

  rep.strong_regret = rep.best_response_utility - rep.realized_utility;
  rep.normalized = rep.strong_regret / T;
  return rep;
}

// Fits a constant bid per player to the recorded play, prices the market at
// those bids, and checks the time-averaged allocation against the shaded
// prices. The concentration statistic is the mean absolute gap between the
// recorded bids and their fitted constants; it is the certificate's
// domain-of-validity gauge, near zero only when play actually settled.
inline AggregateReport aggregate_and_verify(const SimulationTrace& trace, double delta) {
  if (trace.config.backend.kind != BackendKind::regularized)
    throw std::invalid_argument(
        "aggregate verification needs a regularized trace: an unregularized run "
        "can show zero regret without clearing any market");
  if (trace.rounds.empty()) throw std::invalid_argument("trace has no rounds");
  if (!(delta > 0.0) || !std::isfinite(delta))
    throw std::invalid_argument("delta must be positive and finite");

  const Matrix& u = trace.config.u;
  const int n = u.rows();
  const int T = static_cast<int>(trace.rounds.size());
  const RegularizerParams& p = trace.config.backend.params;

  std::vector<Vec> rounds;
  rounds.reserve(T);
  for (const RoundRecord& rec : trace.rounds) rounds.push_back(rec.bids);

  AggregateReport rep;
  rep.best_response_lambda.assign(n, 0.0);
  for (int i = 0; i < n; ++i)
    rep.best_response_lambda[i] =
        best_response(rounds, u, i, p, trace.config.budgets[i]);

  const Vec exact = vcg_prices(u, rep.best_response_lambda);
  rep.prices.assign(n, 0.0);
  for (int j = 0; j < n; ++j) rep.prices[j] = (1.0 - delta / 3.0) * exact[j];

  Vec round_budgets(n);
  for (int i = 0; i < n; ++i) round_budgets[i] = trace.config.budgets[i] / T;

  rep.certificate = verify_ce(u, std::nullopt, trace.mean_allocation, rep.prices,
                              round_budgets, delta);

  double s = 0.0;
  for (const RoundRecord& rec : trace.rounds)
    for (int i = 0; i < n; ++i)
      s += std::fabs(rec.bids[i] - rep.best_response_lambda[i]);
  rep.concentration = s / T;
  return rep;
}

}  // namespace apex
