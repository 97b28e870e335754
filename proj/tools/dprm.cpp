// dprm: experiment driver for the directed-polymer library.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dprm/dprm.hpp"

namespace {

using namespace dprm;
using nlohmann::json;

constexpr int kExitError = 1;
constexpr int kExitConfig = 2;
constexpr int kExitInterrupted = 3;

std::string fmt(double v) { return fmt17(v); }

std::string short_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

struct Run {
  std::string subcommand;
  ExperimentConfig cfg;
  OutputPaths paths;
  const Checkpoint* resume = nullptr;
};

DisorderLaw law_of(const ExperimentConfig& cfg) {
  try {
    return DisorderLaw::parse(cfg.str("law", "gaussian"));
  } catch (const std::exception& e) {
    throw ConfigError(std::string("--law: ") + e.what());
  }
}

std::vector<double> betas_of(const ExperimentConfig& cfg, double def) {
  if (!cfg.has("beta-grid")) return {cfg.number("beta", def)};
  const auto g = cfg.str("beta-grid");
  std::vector<double> parts;
  std::stringstream ss(g);
  std::string tok;
  while (std::getline(ss, tok, ':')) {
    try {
      std::size_t pos = 0;
      parts.push_back(std::stod(tok, &pos));
      if (pos != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ConfigError("--beta-grid: expected start:stop:step, got '" + g + "'");
    }
  }
  if (parts.size() != 3 || !(parts[2] > 0) || parts[1] < parts[0])
    throw ConfigError("--beta-grid: expected start:stop:step with step > 0 and stop >= start, got '" + g + "'");
  std::vector<double> out;
  for (long k = 0;; ++k) {
    const double b = parts[0] + static_cast<double>(k) * parts[2];
    if (b > parts[1] + 1e-9 * parts[2]) break;
    out.push_back(b);
  }
  return out;
}

int positive_int(const ExperimentConfig& cfg, const std::string& key, long def, long lo = 1) {
  const long v = cfg.integer(key, def);
  if (v < lo || v > 1'000'000'000) throw ConfigError("--" + key + " must lie in [" + std::to_string(lo) + ", 1e9], got " + std::to_string(v));
  return static_cast<int>(v);
}

long sample_count(const ExperimentConfig& cfg, long def) {
  const long s = cfg.integer("samples", def);
  if (s < 1) throw ConfigError("--samples must be >= 1");
  return s;
}

double check_beta_option(double beta) {
  if (!(beta >= 0) || !std::isfinite(beta)) throw ConfigError("--beta must be a finite number >= 0");
  return beta;
}

CoarseGrainPlan plan_of(const ExperimentConfig& cfg, int def_ell) {
  const int ell = positive_int(cfg, "ell", def_ell);
  const double eps = cfg.number("eps", 0.05);
  const int R = positive_int(cfg, "R", 1);
  const double K = cfg.number("K", 2.0);
  const int m = positive_int(cfg, "m", 1);
  const std::string mode = cfg.str("mode", cfg.has("q") || cfg.has("u") ? "manual" : "formula");
  if (mode == "formula") return CoarseGrainPlan::formula(ell, eps, R, K, m);
  if (mode != "manual") throw ConfigError("--mode must be 'formula' or 'manual', got '" + mode + "'");
  return CoarseGrainPlan::manual(ell, positive_int(cfg, "q", 1), positive_int(cfg, "u", 1), R, eps, K, m);
}

std::vector<Site<2>> labels_of(const ExperimentConfig& cfg, int m) {
  if (!cfg.has("labels")) return std::vector<Site<2>>(static_cast<std::size_t>(m));
  std::vector<Site<2>> out;
  std::stringstream ss(cfg.str("labels"));
  std::string tok;
  while (std::getline(ss, tok, ';')) {
    int a = 0, b = 0;
    char comma = 0;
    std::stringstream ts(tok);
    if (!(ts >> a >> comma >> b) || comma != ',')
      throw ConfigError("--labels: expected 'y1,y2;y1,y2;...', got '" + cfg.str("labels") + "'");
    out.push_back({a, b});
  }
  if (static_cast<int>(out.size()) != m)
    throw ConfigError("--labels: " + std::to_string(out.size()) + " labels given for m = " + std::to_string(m));
  return out;
}

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  std::string text;
  for (std::size_t i = 0; i < header.size(); ++i) text += (i ? "," : "") + header[i];
  text += "\n";
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) text += (i ? "," : "") + r[i];
    text += "\n";
  }
  write_atomically(path, text);
}

void write_json(const std::filesystem::path& path, const json& j) { write_atomically(path, j.dump(2) + "\n"); }

/// Runs the job and reports whether the caller should emit summaries.
bool sample(const Run& run, const SampleJob& job, RunOutcome& out) {
  out = run_samples(job, run.cfg, run.paths, run.resume);
  if (out.status == RunStatus::interrupted) {
    std::cerr << "stopped after " << run.cfg.str("stop-after") << " samples; resume with: dprm resume "
              << run.paths.checkpoint.string() << "\n";
    return false;
  }
  return true;
}

std::vector<std::string> stat_row(const std::string& name, std::uint64_t plan_hash, const RunningStats& s) {
  char h[17];
  std::snprintf(h, sizeof h, "%016llx", static_cast<unsigned long long>(plan_hash));
  return {name, h, std::to_string(s.n), fmt(s.mean), fmt(s.variance()), fmt(s.stderr_of_mean())};
}

std::vector<std::string> exact_row(const std::string& name, std::uint64_t plan_hash, double v) {
  char h[17];
  std::snprintf(h, sizeof h, "%016llx", static_cast<unsigned long long>(plan_hash));
  return {name, h, "0", fmt(v), "0", "0"};
}

const std::vector<std::string> kStatHeader{"statistic", "plan_hash", "sample_count", "mean", "variance", "stderr"};

json plan_json(const CoarseGrainPlan& plan) {
  return {{"config_block", plan.config_block()}, {"warnings", plan.warnings()}};
}

// ---------------------------------------------------------------------------

int kernel_table(const Run& run) {
  const auto& cfg = run.cfg;
  const int dim = positive_int(cfg, "dim", 2);
  const int N = positive_int(cfg, "N", 1000);
  std::vector<double> D(static_cast<std::size_t>(N)), Dhat(static_cast<std::size_t>(N));
  if (dim == 2) {
    const auto ret = planar_return_probabilities(N);
    const auto deficit = planar_local_time_deficit(N);
    double acc = 0.0;
    for (int n = 1; n <= N; ++n) {
      acc += ret[static_cast<std::size_t>(n)];
      D[static_cast<std::size_t>(n - 1)] = acc;
      Dhat[static_cast<std::size_t>(n - 1)] = acc - deficit[static_cast<std::size_t>(n - 1)];
    }
  } else {
    auto restricted = [&](auto table) {
      for (int n = 1; n <= N; ++n) Dhat[static_cast<std::size_t>(n - 1)] = restricted_local_time(table, n);
    };
    if (dim == 1) {
      D = mean_local_time_series<1>(N).via_return;
      restricted(KernelTable<1>(N));
    } else if (dim == 3) {
      D = mean_local_time_series<3>(N).via_return;
      restricted(KernelTable<3>(N));
    } else {
      throw ConfigError("--dim must be 1, 2 or 3 for kernel-table");
    }
  }
  std::vector<std::vector<std::string>> rows;
  for (int n = 1; n <= N; ++n) {
    const double d = D[static_cast<std::size_t>(n - 1)];
    rows.push_back({std::to_string(n), fmt(d), fmt(Dhat[static_cast<std::size_t>(n - 1)]),
                    n > 1 ? fmt(std::numbers::pi * d / std::log(static_cast<double>(n))) : "nan"});
  }
  write_csv(run.paths.summary_csv, {"N", "D", "Dhat", "pi_D_over_logN"}, rows);
  auto j = summary_header(run.subcommand, cfg, 0.0);
  j["statistics"].push_back(exact_json("D(N)", D.back()));
  j["statistics"].push_back(exact_json("Dhat(N)", Dhat.back()));
  if (N > 1) j["statistics"].push_back(exact_json("pi_D_over_logN", std::numbers::pi * D.back() / std::log(static_cast<double>(N))));
  write_json(run.paths.summary_json, j);
  return 0;
}

PartitionOptions truncation_of(const ExperimentConfig& cfg, int N, int& field_radius) {
  field_radius = N;
  if (!cfg.has("truncation")) return {};
  const double c = cfg.number("truncation", 3.0);
  if (!(c >= 3.0)) throw ConfigError("--truncation c must be >= 3 (radius c sqrt(N) >= 3 sqrt(N))");
  auto opt = PartitionOptions::truncated(N, c);
  field_radius = std::min(N, *opt.truncation_radius);
  opt.truncation_radius = field_radius;
  return opt;
}

int free_energy(const Run& run) {
  const auto& cfg = run.cfg;
  const auto law = law_of(cfg);
  const auto betas = betas_of(cfg, 1.0);
  for (double b : betas) check_beta(law, check_beta_option(b));
  const int N = positive_int(cfg, "N", 256);
  int radius = N;
  const auto opt = truncation_of(cfg, N, radius);
  SampleJob job;
  job.key_columns = {"beta", "N"};
  job.value_columns = {"logZhat", "logZhat_over_N", "overlap_mean", "overlap_gap_estimate"};
  job.groups = static_cast<long>(betas.size());
  job.samples = sample_count(cfg, 200);
  job.master_seed = cfg.unsigned64("seed", 1);
  job.group_keys = [&](long g) { return std::vector<std::string>{short_num(betas[static_cast<std::size_t>(g)]), std::to_string(N)}; };
  job.compute = [&](long g, long, std::uint64_t seed) {
    EnvironmentField<2> f(law, seed, N, radius);
    const auto o = overlap_series(f, betas[static_cast<std::size_t>(g)], N, opt);
    return std::vector<double>{o.log_zhat, o.log_zhat / N, o.mean, o.gap_estimate};
  };
  RunOutcome res;
  if (!sample(run, job, res)) return kExitInterrupted;
  std::vector<std::vector<std::string>> rows;
  auto j = summary_header(run.subcommand, cfg, res.wall_seconds);
  for (std::size_t g = 0; g < betas.size(); ++g) {
    const auto& s = res.stats[g];
    rows.push_back({short_num(betas[g]), std::to_string(N), std::to_string(s[1].n), fmt(s[1].mean),
                    fmt(s[1].stderr_of_mean()), fmt(-s[1].mean), fmt(s[1].stderr_of_mean()), fmt(s[3].mean),
                    fmt(s[3].stderr_of_mean())});
    for (std::size_t c = 0; c < job.value_columns.size(); ++c) {
      auto st = statistic_json(job.value_columns[c], s[c]);
      st["beta"] = betas[g];
      j["statistics"].push_back(st);
    }
  }
  write_csv(run.paths.summary_csv,
            {"beta", "N", "samples", "mean_logZhat_over_N", "stderr", "gap_upper_bound", "gap_upper_bound_stderr",
             "overlap_gap_estimate", "overlap_gap_estimate_stderr"},
            rows);
  write_json(run.paths.summary_json, j);
  return 0;
}

int overlap(const Run& run) {
  const auto& cfg = run.cfg;
  const auto law = law_of(cfg);
  const double beta = check_beta_option(cfg.number("beta", 1.0));
  check_beta(law, beta);
  const int N = positive_int(cfg, "N", 64);
  int radius = N;
  const auto opt = truncation_of(cfg, N, radius);
  SampleJob job;
  job.key_columns = {"beta"};
  for (int k = 1; k <= N; ++k) job.value_columns.push_back("o_" + std::to_string(k));
  job.value_columns.push_back("logZhat");
  job.samples = sample_count(cfg, 100);
  job.master_seed = cfg.unsigned64("seed", 1);
  job.group_keys = [&](long) { return std::vector<std::string>{short_num(beta)}; };
  job.compute = [&](long, long, std::uint64_t seed) {
    EnvironmentField<2> f(law, seed, N, radius);
    auto o = overlap_series(f, beta, N, opt);
    o.overlaps.push_back(o.log_zhat);
    return o.overlaps;
  };
  RunOutcome res;
  if (!sample(run, job, res)) return kExitInterrupted;
  std::vector<std::vector<std::string>> rows;
  const auto& s = res.stats[0];
  for (int k = 1; k <= N; ++k) {
    const auto& st = s[static_cast<std::size_t>(k - 1)];
    rows.push_back({std::to_string(k), fmt(st.mean), fmt(st.stderr_of_mean()), std::to_string(st.n)});
  }
  write_csv(run.paths.summary_csv, {"k", "o_k", "stderr", "samples"}, rows);
  auto j = summary_header(run.subcommand, cfg, res.wall_seconds);
  j["statistics"].push_back(statistic_json("logZhat", s.back()));
  j["statistics"].push_back(statistic_json("o_N", s[static_cast<std::size_t>(N - 1)]));
  write_json(run.paths.summary_json, j);
  return 0;
}

int second_moment_cmd(const Run& run) {
  const auto& cfg = run.cfg;
  const auto law = law_of(cfg);
  const double beta = check_beta_option(cfg.number("beta", 0.5));
  check_beta(law, beta);
  const double cap = cfg.number("cap", kDefaultReplicaCap);
  const bool has_eps = cfg.has("eps");
  const double eps = cfg.number("eps", std::nan(""));
  int N = 0;
  if (cfg.has("N")) {
    N = positive_int(cfg, "N", 16);
  } else if (has_eps) {
    N = static_cast<int>(choose_scale_N(beta, eps, static_cast<double>(replica_max_N<2>(cap))));
  } else {
    N = 16;
  }
  const double exact = second_moment<2>(law, beta, N, cap);
  SampleJob job;
  job.key_columns = {"beta", "N"};
  job.value_columns = {"zhat", "zhat_sq", "zhat_ge_half"};
  job.samples = sample_count(cfg, 20000);
  job.master_seed = cfg.unsigned64("seed", 1);
  job.group_keys = [&](long) { return std::vector<std::string>{short_num(beta), std::to_string(N)}; };
  job.compute = [&](long, long, std::uint64_t seed) {
    EnvironmentField<2> f(law, seed, N, N);
    const double z = std::exp(log_partition(f, beta, N).log_zhat);
    return std::vector<double>{z, z * z, z >= 0.5 ? 1.0 : 0.0};
  };
  RunOutcome res;
  if (!sample(run, job, res)) return kExitInterrupted;
  const auto& s = res.stats[0];
  const double bound = has_eps ? 10.0 / eps : std::nan("");
  write_csv(run.paths.summary_csv,
            {"beta", "eps", "N", "second_moment", "bound_10_over_eps", "pz_lower", "mc_frequency", "mc_frequency_stderr",
             "mc_second_moment", "mc_second_moment_stderr", "mc_mean_zhat", "mc_mean_zhat_stderr"},
            {{short_num(beta), has_eps ? short_num(eps) : "nan", std::to_string(N), fmt(exact), fmt(bound),
              fmt(1.0 / (4.0 * exact)), fmt(s[2].mean), fmt(s[2].stderr_of_mean()), fmt(s[1].mean),
              fmt(s[1].stderr_of_mean()), fmt(s[0].mean), fmt(s[0].stderr_of_mean())}});
  auto j = summary_header(run.subcommand, cfg, res.wall_seconds);
  j["statistics"].push_back(exact_json("second_moment", exact));
  j["statistics"].push_back(exact_json("pz_lower", 1.0 / (4.0 * exact)));
  for (std::size_t c = 0; c < job.value_columns.size(); ++c) j["statistics"].push_back(statistic_json(job.value_columns[c], s[c]));
  j["mc_within_3se_of_exact"] = std::abs(s[1].mean - exact) <= 3.0 * s[1].stderr_of_mean();
  write_json(run.paths.summary_json, j);
  return 0;
}

int fractional_moment(const Run& run) {
  const auto& cfg = run.cfg;
  const auto law = law_of(cfg);
  const double beta = check_beta_option(cfg.number("beta", 0.5));
  check_beta(law, beta);
  const auto plan = plan_of(cfg, 4);
  const CoarseTrajectory<2> Y{plan.ell, labels_of(cfg, plan.m)};
  const bool aggregate = !cfg.has("aggregate") || cfg.flag("aggregate");
  const BlockStatistics<2> bs(plan);
  SampleJob job;
  job.key_columns = {"beta"};
  job.value_columns = {"sqrt_zy", "g_inv", "g_zy", "tail_fraction", "sqrt_zy_g_inv", "sqrt_zy_g_zy", "g_inv_g_zy"};
  if (aggregate) job.value_columns.insert(job.value_columns.end(), {"sum_sqrt_terms", "sqrt_zhat"});
  job.samples = sample_count(cfg, 10000);
  job.master_seed = cfg.unsigned64("seed", 1);
  job.group_keys = [&](long) { return std::vector<std::string>{short_num(beta)}; };
  job.compute = [&](long, long, std::uint64_t seed) {
    const auto s = fractional_moment_sample(law, beta, bs, Y, seed, aggregate);
    std::vector<double> row{s.sqrt_zy, s.g_inv, s.g_zy, static_cast<double>(s.tail_hits) / Y.blocks(),
                            s.sqrt_zy * s.g_inv, s.sqrt_zy * s.g_zy, s.g_inv * s.g_zy};
    if (aggregate) row.insert(row.end(), {s.sum_sqrt_terms, s.sqrt_zhat});
    return row;
  };
  RunOutcome res;
  if (!sample(run, job, res)) return kExitInterrupted;
  const auto& s = res.stats[0];
  std::vector<std::vector<std::string>> rows;
  for (std::size_t c = 0; c < job.value_columns.size(); ++c) rows.push_back(stat_row(job.value_columns[c], plan.hash(), s[c]));
  rows.push_back(exact_row("two_pow_minus_m", plan.hash(), std::pow(2.0, -plan.m)));
  write_csv(run.paths.summary_csv, kStatHeader, rows);

  const double n = static_cast<double>(s[0].n);
  const double ma = s[0].mean, mc = s[1].mean, mg = s[2].mean;
  auto pop_var = [&](const RunningStats& r) { return r.n > 0 ? r.m2 / static_cast<double>(r.n) : 0.0; };
  const double se = cauchy_schwarz_slack_se(n, ma, mc, mg, pop_var(s[0]), pop_var(s[1]), pop_var(s[2]),
                                            s[4].mean - ma * mc, s[5].mean - ma * mg, s[6].mean - mc * mg);
  auto j = summary_header(run.subcommand, cfg, res.wall_seconds);
  j["plan"] = plan_json(plan);
  j["compar_warning"] = plan.compar_warning(beta, bs.D_u());
  for (std::size_t c = 0; c < job.value_columns.size(); ++c) j["statistics"].push_back(statistic_json(job.value_columns[c], s[c]));
  j["cauchy_schwarz"] = {{"lhs", ma * ma}, {"rhs", mc * mg}, {"slack_stderr", se}, {"holds_within_3se", ma * ma <= mc * mg + 3 * se}};
  j["two_pow_minus_m"] = std::pow(2.0, -plan.m);
  write_json(run.paths.summary_json, j);
  return 0;
}

int x_statistic_cmd(const Run& run) {
  const auto& cfg = run.cfg;
  const auto law = law_of(cfg);
  const auto plan = plan_of(cfg, 4);
  const BlockStatistics<2> bs(plan);
  const int radius = plan.enlarged_radius() + plan.ell;
  SampleJob job;
  job.value_columns = {"x", "x_sq"};
  job.samples = sample_count(cfg, 10000);
  job.master_seed = cfg.unsigned64("seed", 1);
  job.compute = [&](long, long, std::uint64_t seed) {
    EnvironmentField<2> f(law, seed, plan.ell, radius);
    const double x = bs.x_statistic(f);
    return std::vector<double>{x, x * x};
  };
  RunOutcome res;
  if (!sample(run, job, res)) return kExitInterrupted;
  const auto& s = res.stats[0];
  const double exact = bs.x_second_moment_exact();
  std::vector<std::vector<std::string>> rows{stat_row("x", plan.hash(), s[0]), stat_row("x_sq", plan.hash(), s[1]),
                                             exact_row("x_second_moment_exact", plan.hash(), exact)};
  auto j = summary_header(run.subcommand, cfg, res.wall_seconds);
  j["plan"] = plan_json(plan);
  j["statistics"].push_back(statistic_json("x", s[0]));
  j["statistics"].push_back(statistic_json("x_sq", s[1]));
  j["statistics"].push_back(exact_json("x_second_moment_exact", exact));
  if (cfg.flag("oracle")) {
    const TupleOracle oracle(plan);
    const double e = oracle.x_second_moment();
    rows.push_back(exact_row("x_second_moment_enumerated", plan.hash(), e));
    j["statistics"].push_back(exact_json("x_second_moment_enumerated", e));
  }
  write_csv(run.paths.summary_csv, kStatHeader, rows);
  write_json(run.paths.summary_json, j);
  return 0;
}

int w_statistic_cmd(const Run& run) {
  const auto& cfg = run.cfg;
  const auto plan = CoarseGrainPlan::path_statistics(positive_int(cfg, "ell", 64), positive_int(cfg, "q", 2),
                                                     positive_int(cfg, "u", 8));
  const BlockStatistics<2> bs(plan);
  bs.require_jprime();
  const bool with_y = cfg.has("j1") || cfg.has("j2");
  const int j1 = positive_int(cfg, "j1", 1), j2 = positive_int(cfg, "j2", 1);
  SampleJob job;
  job.value_columns = {"w"};
  if (with_y) job.value_columns.insert(job.value_columns.end(), {"y_j1", "y_j2", "y_j1_y_j2"});
  job.samples = sample_count(cfg, 10000);
  job.master_seed = cfg.unsigned64("seed", 1);
  job.compute = [&](long, long, std::uint64_t seed) {
    const auto S = sample_walk<2>(seed, plan.ell);
    std::vector<double> row{bs.w_statistic(S)};
    if (with_y) {
      const double a = bs.y_statistic(S, j1), b = bs.y_statistic(S, j2);
      row.insert(row.end(), {a, b, a * b});
    }
    return row;
  };
  RunOutcome res;
  if (!sample(run, job, res)) return kExitInterrupted;
  const auto& s = res.stats[0];
  std::vector<std::vector<std::string>> rows;
  auto j = summary_header(run.subcommand, cfg, res.wall_seconds);
  j["plan"] = plan_json(plan);
  for (std::size_t c = 0; c < job.value_columns.size(); ++c) {
    rows.push_back(stat_row(job.value_columns[c], plan.hash(), s[c]));
    j["statistics"].push_back(statistic_json(job.value_columns[c], s[c]));
  }
  rows.push_back(exact_row("w_expectation", plan.hash(), bs.w_expectation()));
  j["statistics"].push_back(exact_json("w_expectation", bs.w_expectation()));
  write_csv(run.paths.summary_csv, kStatHeader, rows);
  write_json(run.paths.summary_json, j);
  return 0;
}

std::vector<double> grid_list(const std::string& text, const std::string& key) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      out.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw ConfigError("--" + key + ": expected comma-separated numbers, got '" + text + "'");
    }
  }
  return out;
}

int lemma_scan(const Run& run) {
  const auto& cfg = run.cfg;
  const auto t0 = std::chrono::steady_clock::now();
  const int T = positive_int(cfg, "T", 60);
  const int T_rot = positive_int(cfg, "rotation-T", 50);
  const int T_clt = positive_int(cfg, "clt-T", 2000);
  std::vector<std::pair<std::string, ScanReport>> scans;
  scans.emplace_back("binomial_ratio", binomial_ratio_scan(T));
  scans.emplace_back("rotation_factorization", reduction_to_1d_check(T_rot));
  for (int t_min : {0, 1}) {
    const auto c = local_clt_constant<2>(T_clt, t_min);
    ScanReport r;
    r.grid = "t in [" + std::to_string(t_min) + "," + std::to_string(T_clt) + "], all x";
    r.extremum = c.constant;
    r.location = {static_cast<double>(c.t_at), static_cast<double>(c.x_at[0]), static_cast<double>(c.x_at[1])};
    r.violations = c.violations;
    r.points = c.points;
    r.extra = {{"planar_factorized_constant", planar_local_clt_constant(T_clt, t_min).constant}};
    scans.emplace_back("local_clt_t_ge_" + std::to_string(t_min), r);
  }
  const auto law = law_of(cfg);
  if (law.bounded()) {
    const double beta = check_beta_option(cfg.number("beta", 1.0));
    check_beta(law, beta);
    scans.emplace_back("desperate_tail",
                       desperate_tail_check(law, beta, positive_int(cfg, "N", 16),
                                            grid_list(cfg.str("v-grid", "0.5,1,2,3,4"), "v-grid"),
                                            sample_count(cfg, 2000), cfg.unsigned64("seed", 1)));
  } else {
    std::cerr << "desperate-tail check skipped: law " << law.name() << " has no finite tail rate\n";
  }
  std::vector<std::vector<std::string>> rows;
  auto j = summary_header(run.subcommand, cfg, 0.0);
  j["scans"] = json::object();
  for (const auto& [name, r] : scans) {
    std::string loc;
    for (std::size_t i = 0; i < r.location.size(); ++i) loc += (i ? " " : "") + short_num(r.location[i]);
    rows.push_back({name, fmt(r.extremum), loc, std::to_string(r.violations), std::to_string(r.points)});
    j["scans"][name] = r.to_json();
  }
  j["wall_time_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_csv(run.paths.summary_csv, {"scan", "extremum", "location", "violations", "points"}, rows);
  write_json(run.paths.summary_json, j);
  return 0;
}

int scale_table(const Run& run) {
  const auto& cfg = run.cfg;
  const auto law = law_of(cfg);
  const double eps = cfg.number("eps", 0.1);
  const double cap = cfg.number("cap", kDefaultReplicaCap);
  const long n_cap = replica_max_N<2>(cap);
  std::vector<std::vector<std::string>> rows;
  auto j = summary_header(run.subcommand, cfg, 0.0);
  j["N_cap"] = n_cap;
  j["rows"] = json::array();
  ExperimentConfig grid = cfg;
  if (!cfg.has("beta-grid") && !cfg.has("beta")) grid.set("beta-grid", "0.3:1.8:0.1");
  for (double beta : betas_of(grid, 1.0)) {
    check_beta(law, check_beta_option(beta));
    if (!(eps >= 0 && eps < 1)) throw ConfigError("--eps must lie in [0, 1) for scale-table");
    const double required = std::ceil(std::exp((1.0 - eps) * std::numbers::pi / (beta * beta)));
    try {
      const long N = choose_scale_N(beta, eps, static_cast<double>(n_cap));
      const double m2 = second_moment<2>(law, beta, static_cast<int>(N), cap);
      rows.push_back({short_num(beta), short_num(eps), fmt(required), "1", std::to_string(N), fmt(m2), fmt(10.0 / eps),
                      fmt(1.0 / (4.0 * m2)), ""});
    } catch (const UnreachableScaleError& e) {
      rows.push_back({short_num(beta), short_num(eps), fmt(required), "0", "", "", fmt(10.0 / eps), "", "unreachable"});
      j["rows"].push_back({{"beta", beta}, {"message", e.what()}});
    }
  }
  write_csv(run.paths.summary_csv,
            {"beta", "eps", "N_required", "reachable", "N", "second_moment", "bound_10_over_eps", "pz_lower", "flag"},
            rows);
  write_json(run.paths.summary_json, j);
  return 0;
}

int dispatch(const Run& run) {
  static const std::map<std::string, int (*)(const Run&)> table{
      {"kernel-table", kernel_table},        {"free-energy", free_energy},
      {"overlap", overlap},                  {"second-moment", second_moment_cmd},
      {"fractional-moment", fractional_moment}, {"x-statistic", x_statistic_cmd},
      {"w-statistic", w_statistic_cmd},      {"lemma-scan", lemma_scan},
      {"scale-table", scale_table}};
  auto it = table.find(run.subcommand);
  if (it == table.end()) throw ConfigError("unknown subcommand '" + run.subcommand + "'");
  if (run.subcommand != "kernel-table" && run.cfg.integer("dim", 2) != 2)
    throw ConfigError("--dim: only the plane (dim = 2) is supported by " + run.subcommand);
  return it->second(run);
}

const std::vector<std::pair<std::string, std::string>> kOptions{
    {"law", "disorder law: gaussian, rademacher, bernoulli:p"},
    {"beta", "inverse temperature"},
    {"beta-grid", "beta sweep start:stop:step"},
    {"dim", "lattice dimension (kernel-table only accepts 1, 2, 3; others use 2)"},
    {"N", "polymer length"},
    {"samples", "number of disorder samples"},
    {"seed", "master seed"},
    {"workers", "worker threads (0 = hardware concurrency; DPRM_WORKERS overrides)"},
    {"out", "output prefix (writes <out>.csv, <out>.samples.csv, <out>.json, <out>.ckpt.json)"},
    {"checkpoint-interval", "samples between checkpoints"},
    {"stop-after", "stop (exit 3) after this many samples, leaving a checkpoint"},
    {"eps", "epsilon of the scale or plan"},
    {"ell", "coarse-graining block length"},
    {"q", "tuple order"},
    {"u", "time window"},
    {"R", "cell enlargement factor"},
    {"K", "penalty parameter"},
    {"m", "number of blocks"},
    {"mode", "plan mode: formula or manual"},
    {"labels", "coarse trajectory y1,y2;y1,y2;..."},
    {"aggregate", "fractional-moment: also sum over all reachable trajectories (true/false)"},
    {"j1", "w-statistic: first Y index"},
    {"j2", "w-statistic: second Y index"},
    {"T", "binomial-ratio scan horizon"},
    {"rotation-T", "rotation factorization horizon"},
    {"clt-T", "local CLT scan horizon"},
    {"v-grid", "desperate-tail grid, comma separated"},
    {"truncation", "spatial truncation radius c sqrt(N), c >= 3"},
    {"cap", "two-replica lattice-time budget"},
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dprm: directed polymer experiments"};
  app.fallthrough();
  app.require_subcommand(1);
  app.set_config("--config", "", "flat key=value config file");
  app.allow_config_extras(CLI::config_extras_mode::error);
  std::map<std::string, std::string> raw;
  for (const auto& [name, help] : kOptions) app.add_option("--" + name, raw[name], help);
  bool oracle = false;
  app.add_flag("--oracle", oracle, "also run the enumeration oracle where available");

  const std::vector<std::pair<std::string, std::string>> subs{
      {"kernel-table", "D(N), Dhat(N) and pi D(N) / log N"},
      {"free-energy", "sampled log Z_hat / N and overlap gap estimate per beta"},
      {"overlap", "mean overlap series o_k"},
      {"second-moment", "exact E[Z_hat^2] against Monte Carlo"},
      {"fractional-moment", "change-of-measure chain for one coarse trajectory"},
      {"x-statistic", "sampled X against its exact second moment"},
      {"w-statistic", "sampled W (and Y) over random walk paths"},
      {"lemma-scan", "binomial, rotation, local CLT and tail scans"},
      {"scale-table", "N_{beta,eps} per beta with reachability"}};
  for (const auto& [name, help] : subs) app.add_subcommand(name, help);
  auto* resume = app.add_subcommand("resume", "continue an interrupted run from its checkpoint");
  std::string ckpt;
  resume->add_option("checkpoint", ckpt, "checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    Run run;
    Checkpoint ck;
    if (resume->parsed()) {
      ck = Checkpoint::load(ckpt);
      run.cfg = ExperimentConfig(ck.config);
      run.subcommand = run.cfg.str("subcommand");
      if (ck.complete) {
        std::cout << "run already complete (" << ck.completed << " samples); nothing to do\n";
        return 0;
      }
      if (!raw["workers"].empty() && app.count("--workers")) run.cfg.set("workers", raw["workers"]);
      run.paths = OutputPaths::from_prefix(run.cfg.str("out", "dprm_out"));
      run.resume = &ck;
      std::filesystem::path expected = run.paths.checkpoint;
      if (std::filesystem::weakly_canonical(expected) != std::filesystem::weakly_canonical(ckpt))
        throw CheckpointError("checkpoint " + ckpt + " belongs to output prefix " + run.cfg.str("out", "dprm_out") +
                              " (expected at " + expected.string() + ")");
    } else {
      run.subcommand = app.get_subcommands().front()->get_name();
      run.cfg.set("subcommand", run.subcommand);
      for (const auto& [name, help] : kOptions)
        if (app.count("--" + name)) run.cfg.set(name, raw[name]);
      if (oracle) run.cfg.set("oracle", "true");
      run.paths = OutputPaths::from_prefix(run.cfg.str("out", "dprm_out"));
    }
    const int rc = dispatch(run);
    if (rc == 0) std::cout << "wrote " << run.paths.summary_csv.string() << " and " << run.paths.summary_json.string() << "\n";
    return rc;
  } catch (const UnreachableScaleError& e) {
    std::cerr << "refused: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ResourceError& e) {
    std::cerr << "refused: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const CheckpointError& e) {
    std::cerr << "cannot resume: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
}
