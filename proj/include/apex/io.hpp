// Documents and traces. Instances, scenario configurations, and simulation
// traces travel as JSON text: one object per document, and for traces one
// object per line (a header echoing the resolved configuration, one record
// per round, a footer with the aggregates). Numbers are printed in the
// shortest form that parses back to the identical double, so every emitted
// document re-parses to an equal in-memory value.
#pragma once

#include <json.hpp>

#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "apex/sim.hpp"

namespace apex {

namespace io_detail {

// Insertion-ordered objects keep the record tag first on every trace line.
using ojson = nlohmann::ordered_json;

[[noreturn]] inline void fail_field(const std::string& field, const std::string& what) {
  throw std::runtime_error("field \"" + field + "\" " + what);
}

inline ojson parse_text(const std::string& text) {
  try {
    return ojson::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    // The library message carries the line and column of the defect.
    throw std::runtime_error(e.what());
  }
}

inline const ojson& require(const ojson& doc, const std::string& field) {
  if (!doc.is_object() || !doc.contains(field)) fail_field(field, "is required");
  return doc.at(field);
}

inline double number_in(const ojson& v, const std::string& field) {
  if (!v.is_number()) fail_field(field, "must be numeric");
  return v.get<double>();
}

inline Vec parse_vec(const ojson& v, const std::string& field) {
  if (!v.is_array()) fail_field(field, "must be an array of numbers");
  Vec out;
  out.reserve(v.size());
  for (const auto& e : v) out.push_back(number_in(e, field));
  return out;
}

inline Matrix parse_matrix(const ojson& v, const std::string& field) {
  if (!v.is_array() || v.empty() || !v.front().is_array())
    fail_field(field, "must be an array of equal-length numeric rows");
  const int rows = static_cast<int>(v.size());
  const int cols = static_cast<int>(v.front().size());
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    const auto& row = v.at(i);
    if (!row.is_array() || static_cast<int>(row.size()) != cols)
      fail_field(field, "must be an array of equal-length numeric rows");
    for (int j = 0; j < cols; ++j) m(i, j) = number_in(row.at(j), field);
  }
  return m;
}

inline ojson matrix_json(const Matrix& m) {
  ojson rows = ojson::array();
  for (int i = 0; i < m.rows(); ++i) {
    ojson row = ojson::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline ojson backend_json(const BackendSpec& b) {
  if (b.kind == BackendKind::exact_vcg) return ojson{{"kind", "exact"}};
  return ojson{{"kind", "regularized"},
               {"beta", b.params.beta},
               {"lambda_bar", b.params.lambda_bar},
               {"tol", b.params.tol},
               {"max_sweeps", b.params.max_sweeps}};
}

inline BackendSpec parse_backend(const ojson& v) {
  const std::string kind = require(v, "kind").is_string()
                               ? require(v, "kind").get<std::string>()
                               : std::string();
  if (kind == "exact") return exact_backend();
  if (kind == "regularized") {
    RegularizerParams p{number_in(require(v, "beta"), "beta"),
                        number_in(require(v, "lambda_bar"), "lambda_bar")};
    if (v.contains("tol")) p.tol = number_in(v.at("tol"), "tol");
    if (v.contains("max_sweeps")) p.max_sweeps = v.at("max_sweeps").get<int>();
    return regularized_backend(p);
  }
  fail_field("backend", "names an unknown pricing backend");
}

inline ojson strategy_json(const StrategySpec& s) {
  switch (s.kind) {
    case StrategySpec::Kind::constant:
      return ojson{{"kind", "constant"}, {"bid", s.bid}};
    case StrategySpec::Kind::replay:
      return ojson{{"kind", "replay"}, {"script", s.script}};
    case StrategySpec::Kind::pacer:
      break;
  }
  return ojson{{"kind", "pacer"}, {"target_rate", s.target_rate}, {"step", s.step}};
}

inline StrategySpec parse_strategy(const ojson& v) {
  const std::string kind = require(v, "kind").is_string()
                               ? require(v, "kind").get<std::string>()
                               : std::string();
  if (kind == "constant") return constant_bid(number_in(require(v, "bid"), "bid"));
  if (kind == "replay") return replay_script(parse_vec(require(v, "script"), "script"));
  if (kind == "pacer") {
    StrategySpec s = bwk_pacer();
    if (v.contains("target_rate"))
      s.target_rate = number_in(v.at("target_rate"), "target_rate");
    if (v.contains("step")) s.step = number_in(v.at("step"), "step");
    return s;
  }
  fail_field("strategies", "names an unknown strategy kind");
}

inline ojson scenario_json(const ScenarioConfig& cfg) {
  ojson strategies = ojson::array();
  for (const StrategySpec& s : cfg.strategies) strategies.push_back(strategy_json(s));
  return ojson{{"u", matrix_json(cfg.u)},
               {"rounds", cfg.T},
               {"budgets", cfg.budgets},
               {"backend", backend_json(cfg.backend)},
               {"strategies", std::move(strategies)},
               {"seed", cfg.seed},
               {"lambda_cap", cfg.lambda_cap}};
}

inline ScenarioConfig scenario_from_json(const ojson& doc) {
  ScenarioConfig cfg;
  cfg.u = parse_matrix(require(doc, "u"), "u");
  if (!require(doc, "rounds").is_number_integer()) fail_field("rounds", "must be an integer");
  cfg.T = doc.at("rounds").get<int>();
  cfg.budgets = parse_vec(require(doc, "budgets"), "budgets");
  cfg.backend = parse_backend(require(doc, "backend"));
  const ojson& strategies = require(doc, "strategies");
  if (!strategies.is_array()) fail_field("strategies", "must be an array");
  for (const auto& s : strategies) cfg.strategies.push_back(parse_strategy(s));
  if (doc.contains("seed")) cfg.seed = doc.at("seed").get<std::uint64_t>();
  if (doc.contains("lambda_cap"))
    cfg.lambda_cap = number_in(doc.at("lambda_cap"), "lambda_cap");
  return cfg;
}

}  // namespace io_detail

// --- instance documents ------------------------------------------------

// A one-shot problem: the utility matrix plus whatever the consuming
// command needs (bids, an allocation and prices to check, budgets).
struct InstanceDoc {
  Matrix u;
  std::optional<Vec> lambda;
  std::optional<Matrix> allocation;
  std::optional<Vec> prices;
  std::optional<Vec> budgets;
};

inline InstanceDoc parse_instance(const std::string& text) {
  using io_detail::ojson;
  const ojson doc = io_detail::parse_text(text);
  InstanceDoc out;
  out.u = io_detail::parse_matrix(io_detail::require(doc, "u"), "u");
  if (doc.contains("lambda")) out.lambda = io_detail::parse_vec(doc.at("lambda"), "lambda");
  if (doc.contains("allocation"))
    out.allocation = io_detail::parse_matrix(doc.at("allocation"), "allocation");
  if (doc.contains("prices")) out.prices = io_detail::parse_vec(doc.at("prices"), "prices");
  if (doc.contains("budgets")) out.budgets = io_detail::parse_vec(doc.at("budgets"), "budgets");
  return out;
}

// --- scenario documents --------------------------------------------------

inline ScenarioConfig parse_scenario(const std::string& text) {
  return io_detail::scenario_from_json(io_detail::parse_text(text));
}

inline std::string serialize_scenario(const ScenarioConfig& cfg) {
  return io_detail::scenario_json(cfg).dump(2) + "\n";
}

// --- traces ---------------------------------------------------------------

inline void write_trace(std::ostream& out, const SimulationTrace& trace) {
  using io_detail::ojson;
  out << ojson{{"record", "header"}, {"config", io_detail::scenario_json(trace.config)}}
             .dump()
      << '\n';
  for (const RoundRecord& r : trace.rounds) {
    ojson line{{"record", "round"},
               {"t", r.t},
               {"bids", r.bids},
               {"allocation", io_detail::matrix_json(r.allocation)},
               {"charges", r.charges},
               {"utilities", r.utilities},
               {"budget_remaining", r.budget_remaining},
               {"clamped", r.clamped}};
    if (!r.dual_a.empty()) {
      line["dual_a"] = r.dual_a;
      line["dual_b"] = r.dual_b;
    }
    out << line.dump() << '\n';
  }
  out << ojson{{"record", "footer"},
               {"mean_allocation", io_detail::matrix_json(trace.mean_allocation)},
               {"mean_payments", trace.mean_payments},
               {"mean_utilities", trace.mean_utilities}}
             .dump()
      << '\n';
}

inline SimulationTrace parse_trace(std::istream& in) {
  using io_detail::ojson;
  std::string line;
  auto next_record = [&](ojson& doc) {
    while (std::getline(in, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      doc = io_detail::parse_text(line);
      return true;
    }
    return false;
  };

  ojson doc;
  if (!next_record(doc)) throw std::runtime_error("trace is empty");
  if (io_detail::require(doc, "record") != "header")
    throw std::runtime_error("trace must start with a header record");
  SimulationTrace trace;
  trace.config = io_detail::scenario_from_json(io_detail::require(doc, "config"));
  const int n = trace.config.u.rows();

  auto sized_vec = [&](const ojson& rec, const std::string& field) {
    Vec v = io_detail::parse_vec(io_detail::require(rec, field), field);
    if (static_cast<int>(v.size()) != n)
      io_detail::fail_field(field, "must hold one entry per player");
    return v;
  };

  bool footer_seen = false;
  while (next_record(doc)) {
    const std::string record = io_detail::require(doc, "record").is_string()
                                   ? doc.at("record").get<std::string>()
                                   : std::string();
    if (footer_seen) throw std::runtime_error("records found after the footer");
    if (record == "round") {
      RoundRecord r;
      r.t = io_detail::require(doc, "t").get<int>();
      r.bids = sized_vec(doc, "bids");
      r.allocation = io_detail::parse_matrix(io_detail::require(doc, "allocation"),
                                             "allocation");
      if (r.allocation.rows() != n || r.allocation.cols() != n)
        io_detail::fail_field("allocation", "must be square and match the instance");
      r.charges = sized_vec(doc, "charges");
      r.utilities = sized_vec(doc, "utilities");
      r.budget_remaining = sized_vec(doc, "budget_remaining");
      const ojson& clamped = io_detail::require(doc, "clamped");
      if (!clamped.is_array() || static_cast<int>(clamped.size()) != n)
        io_detail::fail_field("clamped", "must hold one flag per player");
      for (const auto& c : clamped) r.clamped.push_back(c.get<bool>());
      if (doc.contains("dual_a")) {
        r.dual_a = sized_vec(doc, "dual_a");
        r.dual_b = sized_vec(doc, "dual_b");
      }
      trace.rounds.push_back(std::move(r));
    } else if (record == "footer") {
      trace.mean_allocation =
          io_detail::parse_matrix(io_detail::require(doc, "mean_allocation"),
                                  "mean_allocation");
      trace.mean_payments = sized_vec(doc, "mean_payments");
      trace.mean_utilities = sized_vec(doc, "mean_utilities");
      footer_seen = true;
    } else {
      throw std::runtime_error("unknown trace record type \"" + record + "\"");
    }
  }
  if (!footer_seen) throw std::runtime_error("trace ended before the footer record");
  if (static_cast<int>(trace.rounds.size()) != trace.config.T)
    throw std::runtime_error("trace holds " + std::to_string(trace.rounds.size()) +
                             " rounds but the header announces " +
                             std::to_string(trace.config.T));
  return trace;
}

// --- result documents -----------------------------------------------------

inline io_detail::ojson vcg_document(const VcgOutcome& o) {
  using io_detail::ojson;
  return ojson{{"assignment", o.assignment.pi},
               {"value", o.assignment.value},
               {"prices", o.prices},
               {"dual_a", o.duals.a},
               {"dual_b", o.duals.b},
               {"payments", o.payments}};
}

inline io_detail::ojson regularized_document(const RegularizedOptimum& o,
                                             const Vec& payments) {
  using io_detail::ojson;
  return ojson{{"allocation", io_detail::matrix_json(o.x)},
               {"dual_a", o.a},
               {"dual_b", o.b},
               {"value_reg", o.value_reg},
               {"value_linear", o.value_linear},
               {"sweeps", o.sweeps},
               {"residual", o.residual},
               {"payments", payments}};
}

inline io_detail::ojson hz_document(const HzSolution& s) {
  using io_detail::ojson;
  return ojson{{"lambda_star", s.lambda_star},
               {"allocation", io_detail::matrix_json(s.allocation)},
               {"prices", s.prices},
               {"residual", s.residual},
               {"iterations", s.iterations},
               {"converged", s.converged}};
}

inline io_detail::ojson certificate_document(const EquilibriumCertificate& c) {
  using io_detail::ojson;
  return ojson{{"budget_spent", c.budget_spent},
               {"best_bundle_value", c.best_bundle_value},
               {"realized_value", c.realized_value},
               {"gap", c.gap},
               {"raw_gap", c.raw_gap},
               {"bistochastic", c.bistochastic},
               {"prices_match", c.prices_match},
               {"support_optimal", c.support_optimal},
               {"budgets_ok", c.budgets_ok},
               {"bundles_ok", c.bundles_ok},
               {"pass", c.pass},
               {"delta", c.delta}};
}

inline io_detail::ojson regret_document(const RegretReport& r) {
  using io_detail::ojson;
  return ojson{{"player", r.player},
               {"realized_utility", r.realized_utility},
               {"best_response_lambda", r.best_response_lambda},
               {"best_response_utility", r.best_response_utility},
               {"strong_regret", r.strong_regret},
               {"normalized", r.normalized}};
}

inline io_detail::ojson aggregate_document(const AggregateReport& a) {
  using io_detail::ojson;
  return ojson{{"certificate", certificate_document(a.certificate)},
               {"best_response_lambda", a.best_response_lambda},
               {"prices", a.prices},
               {"concentration", a.concentration}};
}

}  // namespace apex
