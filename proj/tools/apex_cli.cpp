// Command-line front end. Scenario and instance documents in, traces,
// solution documents, certificates, and flat summaries out.
//
// Exit codes are a stable contract:
//   0  success, verification passed, solver converged
//   1  verification failed or the solver gave up
//   2  usage or configuration errors (bad flags, unreadable or malformed
//      documents, infeasible configurations)
// Nothing is written to --out unless the computation finished, so a failed
// run never leaves a partial output file behind.
#include <CLI11.hpp>

#include <atomic>
#include <cstdint>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "apex/io.hpp"

namespace {

using apex::Vec;
using ojson = apex::io_detail::ojson;

constexpr std::uint64_t kDefaultSeed = 1;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open for reading");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Output is gathered in memory and written in one piece once the work is
// done; failures therefore never leave an output file behind.
void emit(const std::string& out_path, const std::string& payload) {
  if (out_path.empty()) {
    std::cout << payload;
    return;
  }
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw std::runtime_error(out_path + ": cannot open for writing");
  out << payload;
}

void reject_csv(const std::string& format) {
  if (format == "csv")
    throw std::invalid_argument(
        "csv output is reserved for flat summaries; this subcommand emits a "
        "structured document");
}

// Shortest text that parses back to the identical number.
std::string num(double v) { return ojson(v).dump(); }

struct CommonFlags {
  std::string in;
  std::string out;
  std::string format = "lines";
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--in", f.in, "input document")->required();
  cmd->add_option("--out", f.out, "output path (default: stdout)");
  cmd->add_option("--format", f.format, "output format")
      ->check(CLI::IsMember({"lines", "csv"}))
      ->capture_default_str();
}

int run_vcg(const CommonFlags& f) {
  reject_csv(f.format);
  apex::InstanceDoc doc = apex::parse_instance(read_file(f.in));
  apex::VcgOutcome outcome =
      apex::vcg_outcome(doc.u, doc.lambda ? *doc.lambda : Vec{});
  emit(f.out, apex::vcg_document(outcome).dump(2) + "\n");
  return 0;
}

int run_regularized(const CommonFlags& f, double beta, double lambda_bar, double tol) {
  reject_csv(f.format);
  apex::InstanceDoc doc = apex::parse_instance(read_file(f.in));
  if (!doc.lambda)
    throw std::runtime_error("field \"lambda\" is required: the regularized "
                             "optimum is taken at a bid profile");
  const int n = doc.u.rows();
  apex::RegularizerParams p{beta > 0.0 ? beta : apex::canonical_beta(lambda_bar, n),
                            lambda_bar};
  p.tol = tol;
  apex::RegularizedOptimum opt = apex::regularized_optimum(doc.u, *doc.lambda, p);
  Vec payments(n, 0.0);
  for (int i = 0; i < n; ++i)
    payments[i] = apex::regularized_payment(doc.u, *doc.lambda, p, i);
  emit(f.out, apex::regularized_document(opt, payments).dump(2) + "\n");
  return opt.residual <= p.tol ? 0 : 1;
}

int run_hz_find(const CommonFlags& f, const apex::HzOptions& opt) {
  reject_csv(f.format);
  apex::InstanceDoc doc = apex::parse_instance(read_file(f.in));
  apex::HzSolution sol = apex::find_hz_equilibrium(doc.u, opt);
  emit(f.out, apex::hz_document(sol).dump(2) + "\n");
  return sol.converged ? 0 : 1;
}

int run_hz_verify(const CommonFlags& f, double delta) {
  reject_csv(f.format);
  apex::InstanceDoc doc = apex::parse_instance(read_file(f.in));
  if (!doc.allocation || !doc.prices)
    throw std::runtime_error(
        "fields \"allocation\" and \"prices\" are required for verification");
  const Vec budgets = doc.budgets ? *doc.budgets : Vec(doc.u.rows(), 1.0);
  apex::EquilibriumCertificate cert =
      apex::verify_ce(doc.u, doc.lambda, *doc.allocation, *doc.prices, budgets, delta);
  emit(f.out, apex::certificate_document(cert).dump(2) + "\n");
  return cert.pass ? 0 : 1;
}

int run_simulate(const CommonFlags& f, int rounds, bool seed_given,
                 std::uint64_t seed) {
  reject_csv(f.format);
  apex::ScenarioConfig cfg = apex::parse_scenario(read_file(f.in));
  if (rounds > 0) cfg.T = rounds;
  if (seed_given) cfg.seed = seed;
  apex::SimulationTrace trace = apex::run_simulation(cfg);
  std::ostringstream sink;
  apex::write_trace(sink, trace);
  emit(f.out, sink.str());
  return 0;
}

int run_audit(const CommonFlags& f, bool delta_given, double delta) {
  std::istringstream in(read_file(f.in));
  apex::SimulationTrace trace = apex::parse_trace(in);
  const int n = trace.config.u.rows();
  const bool regularized =
      trace.config.backend.kind == apex::BackendKind::regularized;

  std::vector<apex::RegretReport> reports;
  for (int i = 0; i < n; ++i) reports.push_back(apex::audit_strong_regret(trace, i));

  std::optional<apex::AggregateReport> aggregate;
  if (regularized || delta_given)
    // On an exact trace this throws the explanation; configuration error.
    aggregate = apex::aggregate_and_verify(trace, delta);

  std::string payload;
  if (f.format == "csv") {
    std::ostringstream csv;
    csv << "player,realized_utility,best_response_lambda,best_response_utility,"
           "strong_regret,normalized\n";
    for (const apex::RegretReport& r : reports)
      csv << r.player << ',' << num(r.realized_utility) << ','
          << num(r.best_response_lambda) << ',' << num(r.best_response_utility)
          << ',' << num(r.strong_regret) << ',' << num(r.normalized) << '\n';
    payload = csv.str();
  } else {
    ojson doc;
    doc["reports"] = ojson::array();
    for (const apex::RegretReport& r : reports)
      doc["reports"].push_back(apex::regret_document(r));
    if (aggregate) doc["aggregate"] = apex::aggregate_document(*aggregate);
    payload = doc.dump(2) + "\n";
  }
  emit(f.out, payload);
  return (aggregate && !aggregate->certificate.pass) ? 1 : 0;
}

int run_sweep(const CommonFlags& f, int runs, std::uint64_t seed,
              apex::HzOptions opt) {
  apex::InstanceDoc doc = apex::parse_instance(read_file(f.in));
  if (runs < 1) throw std::invalid_argument("run count must be positive");

  std::vector<apex::HzSolution> sols(runs);
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex error_lock;
  auto worker = [&] {
    for (;;) {
      const int k = next.fetch_add(1);
      if (k >= runs) return;
      try {
        apex::HzOptions o = opt;
        o.seed = seed + static_cast<std::uint64_t>(k);
        sols[k] = apex::find_hz_equilibrium(doc.u, o);
      } catch (...) {
        std::lock_guard<std::mutex> hold(error_lock);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  unsigned hw = std::thread::hardware_concurrency();
  const int workers = std::max(1, std::min<int>(runs, hw ? static_cast<int>(hw) : 1));
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);

  const int n = doc.u.rows();
  std::ostringstream sink;
  bool all_converged = true;
  if (f.format == "csv") {
    sink << "run,seed,converged,iterations,residual";
    for (int j = 0; j < n; ++j) sink << ",lambda_star_" << j;
    for (int j = 0; j < n; ++j) sink << ",price_" << j;
    sink << '\n';
    for (int k = 0; k < runs; ++k) {
      const apex::HzSolution& s = sols[k];
      sink << k << ',' << seed + static_cast<std::uint64_t>(k) << ','
           << (s.converged ? 1 : 0) << ',' << s.iterations << ','
           << num(s.residual);
      for (int j = 0; j < n; ++j) sink << ',' << num(s.lambda_star[j]);
      for (int j = 0; j < n; ++j) sink << ',' << num(s.prices[j]);
      sink << '\n';
      all_converged = all_converged && s.converged;
    }
  } else {
    for (int k = 0; k < runs; ++k) {
      ojson line = apex::hz_document(sols[k]);
      ojson row{{"run", k}, {"seed", seed + static_cast<std::uint64_t>(k)}};
      row.update(line);
      sink << row.dump() << '\n';
      all_converged = all_converged && sols[k].converged;
    }
  }
  emit(f.out, sink.str());
  return all_converged ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "assignment pseudo-markets: exact and regularized pricing, equilibrium "
      "search and verification, repeated budgeted rounds and their audit"};
  app.require_subcommand(1);

  CommonFlags vcg_f, reg_f, find_f, verify_f, sim_f, audit_f, sweep_f;

  CLI::App* vcg = app.add_subcommand(
      "vcg", "assignment, item prices, duals, and payments for one instance");
  add_common(vcg, vcg_f);

  CLI::App* reg = app.add_subcommand(
      "regularized", "interior optimum and externality payments at a bid profile");
  add_common(reg, reg_f);
  double reg_beta = 0.0, reg_lambda_bar = 20.0, reg_tol = 1e-10;
  reg->add_option("--beta", reg_beta,
                  "barrier weight (default: the canonical value for the instance)");
  reg->add_option("--lambda-bar", reg_lambda_bar, "bid ceiling")
      ->capture_default_str();
  reg->add_option("--tol", reg_tol, "stationarity tolerance")->capture_default_str();

  CLI::App* find = app.add_subcommand(
      "hz-find", "search for equilibrium weights supporting a unit-budget market");
  add_common(find, find_f);
  apex::HzOptions find_opt;
  find_opt.seed = kDefaultSeed;
  find->add_option("--eps", find_opt.eps, "smoothing width")->capture_default_str();
  find->add_option("--alpha", find_opt.alpha, "initial damping")->capture_default_str();
  find->add_option("--tol", find_opt.tol, "residual target")->capture_default_str();
  find->add_option("--samples", find_opt.samples, "Monte Carlo samples per evaluation")
      ->capture_default_str();
  find->add_option("--seed", find_opt.seed, "sampling seed (default 1)")
      ->envname("APEX_SEED");

  CLI::App* verify = app.add_subcommand(
      "hz-verify", "check an allocation and prices against the market conditions");
  add_common(verify, verify_f);
  double verify_delta = 1e-9;
  verify->add_option("--delta", verify_delta, "certificate tolerance")
      ->capture_default_str();

  CLI::App* sim = app.add_subcommand(
      "simulate", "run a scenario and write its round-by-round trace");
  add_common(sim, sim_f);
  int sim_rounds = 0;
  std::uint64_t sim_seed = kDefaultSeed;
  sim->add_option("--rounds", sim_rounds, "override the scenario's round count");
  CLI::Option* sim_seed_opt =
      sim->add_option("--seed", sim_seed, "override the scenario's seed (default 1)")
          ->envname("APEX_SEED");

  CLI::App* audit = app.add_subcommand(
      "audit", "hindsight regret per player, plus the market certificate for "
               "regularized traces");
  add_common(audit, audit_f);
  double audit_delta = 0.1;
  CLI::Option* audit_delta_opt =
      audit->add_option("--delta", audit_delta,
                        "aggregate certificate tolerance (regularized traces)")
          ->capture_default_str();

  CLI::App* sweep = app.add_subcommand(
      "sweep", "fan independent equilibrium searches across derived seeds");
  add_common(sweep, sweep_f);
  int sweep_runs = 8;
  std::uint64_t sweep_seed = kDefaultSeed;
  apex::HzOptions sweep_opt;
  sweep->add_option("--rounds", sweep_runs, "number of runs")->capture_default_str();
  sweep->add_option("--seed", sweep_seed, "base seed; run k uses seed + k (default 1)")
      ->envname("APEX_SEED");
  sweep->add_option("--eps", sweep_opt.eps, "smoothing width")->capture_default_str();
  sweep->add_option("--alpha", sweep_opt.alpha, "initial damping")
      ->capture_default_str();
  sweep->add_option("--tol", sweep_opt.tol, "residual target")->capture_default_str();
  sweep->add_option("--samples", sweep_opt.samples,
                    "Monte Carlo samples per evaluation")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (vcg->parsed()) return run_vcg(vcg_f);
    if (reg->parsed()) return run_regularized(reg_f, reg_beta, reg_lambda_bar, reg_tol);
    if (find->parsed()) return run_hz_find(find_f, find_opt);
    if (verify->parsed()) return run_hz_verify(verify_f, verify_delta);
    if (sim->parsed())
      return run_simulate(sim_f, sim_rounds, sim_seed_opt->count() > 0, sim_seed);
    if (audit->parsed())
      return run_audit(audit_f, audit_delta_opt->count() > 0, audit_delta);
    if (sweep->parsed()) return run_sweep(sweep_f, sweep_runs, sweep_seed, sweep_opt);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
