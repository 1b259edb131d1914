// Command-line runner: trains surrogates, sweeps estimator diagnostics,
// evaluates quadrature references, and runs the posterior sampler, emitting
// CSV artifacts plus a JSON manifest per run.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "mcpinn/abc.hpp"
#include "mcpinn/config.hpp"
#include "mcpinn/io.hpp"
#include "mcpinn/oracle.hpp"
#include "mcpinn/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mcpinn;

namespace {

constexpr const char* kToolVersion = "mcpinn 0.1.0";

constexpr int kExitOk = 0;
constexpr int kExitNumerical = 1;
constexpr int kExitUsage = 2;

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string checkpoint;
};

struct RunContext {
  ConfigFile cfg;
  fs::path out;
  std::uint64_t seed = 0;
  int workers = 1;
  std::string checkpoint;
  std::string started;
};

// Flags take precedence over the optional [run] section; the seed must come
// from one of them, never from the clock.
RunContext make_context(const CommonFlags& flags) {
  RunContext ctx{ConfigFile::parse(read_text_file(flags.config_path),
                                   fs::path(flags.config_path).filename().string()),
                 {}, 0, 1, flags.checkpoint, iso8601_utc_now()};
  ctx.cfg.require_known("run", {"seed", "workers", "out", "checkpoint"});

  if (flags.seed) {
    ctx.seed = *flags.seed;
  } else if (ctx.cfg.has("run", "seed")) {
    ctx.seed = static_cast<std::uint64_t>(ctx.cfg.get_int("run", "seed"));
  } else {
    throw ConfigError(ctx.cfg.name() + ": a seed is required (--seed or [run] seed)");
  }

  ctx.workers = flags.workers ? *flags.workers
                              : static_cast<int>(ctx.cfg.get_int("run", "workers", 1));
  if (ctx.workers < 1) throw ConfigError(ctx.cfg.name() + ": workers must be >= 1");

  std::string out = flags.out_dir;
  if (out.empty()) out = ctx.cfg.get_string("run", "out", ".");
  ctx.out = out;
  fs::create_directories(ctx.out);

  if (ctx.checkpoint.empty()) ctx.checkpoint = ctx.cfg.get_string("run", "checkpoint", "");
  return ctx;
}

json manifest_base(const RunContext& ctx, const std::string& subcommand) {
  json m;
  m["tool"] = kToolVersion;
  m["subcommand"] = subcommand;
  m["seed"] = ctx.seed;
  m["workers"] = ctx.workers;
  m["started"] = ctx.started;
  m["config"]["name"] = ctx.cfg.name();
  m["config"]["sha1_git_blob"] = git_blob_sha1(ctx.cfg.raw());
  m["config"]["text"] = ctx.cfg.raw();
  return m;
}

void write_manifest(const RunContext& ctx, json m) {
  m["finished"] = iso8601_utc_now();
  atomic_write_text(ctx.out / "manifest.json", m.dump(2) + "\n");
}

std::vector<std::string> pde_column_names(const ProblemSpec& prob) {
  std::vector<std::string> names;
  const TrainableFlags f = trainable_flags(prob);
  if (f.alpha) names.push_back("alpha");
  if (f.gamma_ord) names.push_back("gamma");
  if (f.c) names.push_back("c");
  for (int k = 0; k < f.v_dim; ++k) names.push_back("v" + std::to_string(k + 1));
  return names;
}

void write_loss_csv(const RunContext& ctx, const ProblemSpec& prob, const TrainState& st) {
  CsvBuilder csv;
  csv.field("epoch").field("total").field("equ").field("g").field("u").field("lr");
  for (const std::string& name : pde_column_names(prob)) csv.field(name);
  csv.end_row();
  for (const LossTraceRow& row : st.loss_trace) {
    csv.field(row.epoch).field(row.total).field(row.equation).field(row.initial);
    csv.field(row.data).field(row.lr);
    for (double v : row.pde) csv.field(v);
    csv.end_row();
  }
  atomic_write_text(ctx.out / "loss.csv", csv.str());
}

void write_param_csv(const RunContext& ctx, const ProblemSpec& prob, const TrainState& st) {
  CsvBuilder csv;
  csv.field("epoch");
  for (const std::string& name : pde_column_names(prob)) csv.field(name);
  csv.end_row();
  for (const ParamTraceRow& row : st.param_trace) {
    csv.field(row.epoch);
    for (double v : row.pde) csv.field(v);
    csv.end_row();
  }
  atomic_write_text(ctx.out / "params.csv", csv.str());
}

// Solution slice for external plotting: the first two input coordinates on a
// 101x101 grid (a single 101-point line for a stationary 1-D problem), all
// remaining spatial and time coordinates at 0, parametric slots at the
// reference slice (alpha_ref, 0).
void write_grid_csv(const RunContext& ctx, const ProblemSpec& prob, const ParamVector& p) {
  if (prob.d > 3) return;  // slices of higher-dimensional runs are not plotted
  const int n = 101;
  std::vector<double> coords(static_cast<std::size_t>(prob.input_dim()), 0.0);
  if (prob.family == Family::kParametricDiffusion) {
    coords[static_cast<std::size_t>(prob.d)] = prob.alpha_ref;
    coords[static_cast<std::size_t>(prob.d) + 1] = 0.0;
  }

  CsvBuilder csv;
  const bool xt_slice = prob.d == 1 && prob.time_dependent();
  const bool line = prob.d == 1 && !prob.time_dependent();
  if (line) {
    csv.field("x0").field("u").end_row();
    for (int i = 0; i < n; ++i) {
      coords[0] = -1.0 + 2.0 * i / (n - 1);
      csv.field(coords[0]).field(surrogate_value(prob, p, coords)).end_row();
    }
  } else if (xt_slice) {
    csv.field("x0").field("t").field("u").end_row();
    for (int i = 0; i < n; ++i) {
      coords[0] = -1.0 + 2.0 * i / (n - 1);
      for (int j = 0; j < n; ++j) {
        coords[1] = prob.t_final * j / (n - 1);
        csv.field(coords[0]).field(coords[1]).field(surrogate_value(prob, p, coords)).end_row();
      }
    }
  } else {
    csv.field("x0").field("x1").field("u").end_row();
    for (int i = 0; i < n; ++i) {
      coords[0] = -1.0 + 2.0 * i / (n - 1);
      for (int j = 0; j < n; ++j) {
        coords[1] = -1.0 + 2.0 * j / (n - 1);
        csv.field(coords[0]).field(coords[1]).field(surrogate_value(prob, p, coords)).end_row();
      }
    }
  }
  atomic_write_text(ctx.out / "grid.csv", csv.str());
}

void save_train_checkpoint(const RunContext& ctx, const ProblemSpec& prob,
                           const ParamVector& p) {
  const TrainableFlags f = trainable_flags(prob);
  save_checkpoint(ctx.out / "checkpoint.txt", prob.network(), f.alpha, f.gamma_ord, f.c,
                  f.v_dim, p.values);
}

int cmd_train(const CommonFlags& flags) {
  RunContext ctx = make_context(flags);
  const ProblemSpec prob = problem_from_config(ctx.cfg);
  TrainConfig tc = train_from_config(ctx.cfg, prob);
  tc.seed = ctx.seed;
  tc.workers = ctx.workers;

  json m = manifest_base(ctx, "train");
  TrainState st = init_train_state(prob, tc);

  TrainReport report;
  try {
    report = train(prob, tc, st);
  } catch (const TrainingError& err) {
    // The state holds the last finite epoch; keep it inspectable.
    write_loss_csv(ctx, prob, st);
    if (!st.param_trace.empty()) write_param_csv(ctx, prob, st);
    save_train_checkpoint(ctx, prob, st.params);
    m["error"] = err.what();
    m["counters"]["residual_evals"] = st.residual_evals;
    m["counters"]["residual_points"] = st.residual_points;
    write_manifest(ctx, m);
    std::fprintf(stderr, "training aborted: %s\n", err.what());
    return kExitNumerical;
  }

  write_loss_csv(ctx, prob, st);
  if (prob.family == Family::kInverseAde) write_param_csv(ctx, prob, st);
  save_train_checkpoint(ctx, prob, st.params);
  write_grid_csv(ctx, prob, st.params);

  m["counters"]["residual_evals"] = report.residual_evals;
  m["counters"]["residual_points"] = report.residual_points;
  if (report.residual_points > 0) {
    m["counters"]["evals_per_residual_point"] =
        static_cast<double>(report.residual_evals) / static_cast<double>(report.residual_points);
  }
  m["metrics"]["relative_l2"] = report.rel_l2;
  m["metrics"]["final_loss"] = report.final_loss;
  if (prob.family == Family::kInverseAde && !st.param_trace.empty()) {
    const std::vector<std::string> names = pde_column_names(prob);
    const std::vector<double>& last = st.param_trace.back().pde;
    for (std::size_t i = 0; i < names.size() && i < last.size(); ++i) {
      m["metrics"]["identified"][names[i]] = last[i];
    }
  }
  write_manifest(ctx, m);

  std::printf("relative L2 over %d test points: %s\n", tc.n_test,
              format_double(report.rel_l2).c_str());
  std::printf("artifacts written to %s\n", ctx.out.string().c_str());
  return kExitOk;
}

int cmd_estimate(const CommonFlags& flags) {
  RunContext ctx = make_context(flags);
  const EstimateConfig est = estimate_from_config(ctx.cfg);

  const bool constant = est.field == "constant";
  auto field_fn = [&](std::span<const double> y) {
    return constant ? 1.0 : exact_solution_laplacian(y, est.alpha);
  };
  const double reference =
      constant ? 0.0 : forcing_laplacian(est.x, est.d, est.alpha);

  CsvBuilder csv;
  csv.field("m").field("r0").field("n_groups").field("mean").field("se");
  csv.field("oracle").field("z").field("evals_per_estimate").end_row();

  const RngKey root = RngKey(ctx.seed).child(kEstimatePurpose);
  std::uint64_t cell = 0;
  for (int m_groups : est.m_list) {
    for (double r0 : est.r0_list) {
      EstimatorConfig ecfg = est.estimator;
      ecfg.m = m_groups;
      ecfg.r0 = r0;
      ecfg.validate();

      const RngKey cell_key = root.child(cell++);
      std::vector<double> values(static_cast<std::size_t>(est.n_groups), 0.0);
      detail::run_on_workers(est.n_groups, ctx.workers, [&](int i, int) {
        RngStream s = cell_key.child(static_cast<std::uint64_t>(i)).stream();
        const SampleGroup g = make_sample_group(ecfg.m, est.d, s);
        CallableField probe(field_fn);
        values[static_cast<std::size_t>(i)] = mc_frac_laplacian(probe, est.x, g, est.alpha, ecfg);
      });

      double mean = 0.0, m2 = 0.0;
      for (int i = 0; i < est.n_groups; ++i) {
        const double delta = values[static_cast<std::size_t>(i)] - mean;
        mean += delta / (i + 1);
        m2 += delta * (values[static_cast<std::size_t>(i)] - mean);
      }
      const double se = std::sqrt(m2 / (est.n_groups - 1) / est.n_groups);
      const double z = se > 0.0 ? (mean - reference) / se : (mean == reference ? 0.0 : INFINITY);

      csv.field(m_groups).field(r0).field(est.n_groups).field(mean).field(se);
      csv.field(reference).field(z).field(std::int64_t(4) * m_groups + 1).end_row();
    }
  }
  atomic_write_text(ctx.out / "estimate.csv", csv.str());

  json m = manifest_base(ctx, "estimate");
  m["estimate"]["d"] = est.d;
  m["estimate"]["alpha"] = est.alpha;
  m["estimate"]["field"] = est.field;
  m["estimate"]["point"] = est.x;
  m["estimate"]["n_groups"] = est.n_groups;
  write_manifest(ctx, m);

  std::printf("estimate sweep written to %s\n", (ctx.out / "estimate.csv").string().c_str());
  return kExitOk;
}

int cmd_abc(const CommonFlags& flags) {
  RunContext ctx = make_context(flags);

  ProblemSpec prob;
  prob.family = Family::kParametricDiffusion;
  prob.d = 2;
  if (ctx.cfg.has_section("problem")) {
    prob = problem_from_config(ctx.cfg);
    if (prob.family != Family::kParametricDiffusion) {
      throw ConfigError(ctx.cfg.name() + ": the abc subcommand requires family = parametric");
    }
  }
  const AbcConfig abc = abc_from_config(ctx.cfg, prob);

  // Posterior machinery runs against either a trained surrogate or the
  // analytic stand-in family when no checkpoint is given.
  std::optional<ParamVector> params;
  if (!ctx.checkpoint.empty()) {
    const CheckpointData ck = load_checkpoint(ctx.checkpoint);
    if (ck.spec.input_dim != prob.input_dim()) {
      throw ConfigError("checkpoint input dimension " + std::to_string(ck.spec.input_dim) +
                        " does not match the parametric problem (" +
                        std::to_string(prob.input_dim()) + ")");
    }
    ParamVector p;
    p.layout = make_layout(ck.spec, ck.train_alpha, ck.train_gamma, ck.train_c, ck.train_v_dim);
    p.values = ck.values;
    params = std::move(p);
  }
  auto surrogate = [&](std::span<const double> x, double a, double mu) {
    if (params) {
      std::vector<double> coords(x.begin(), x.end());
      coords.push_back(a);
      coords.push_back(mu);
      return surrogate_value(prob, *params, coords);
    }
    return abc_standin_solution(x, prob.d, a, mu, prob.alpha_ref);
  };

  const PosteriorSample post = abc_rejection(surrogate, abc, RngKey(ctx.seed));

  json m = manifest_base(ctx, "abc");
  m["abc"]["n_draws"] = post.n_draws;
  m["abc"]["accepted"] = post.alpha.size();
  m["abc"]["acceptance_rate"] = post.acceptance_rate();
  m["abc"]["surrogate"] = params ? "checkpoint" : "standin";

  if (post.alpha.size() < 2) {
    m["error"] = post.alpha.empty() ? post.diagnostic
                                    : "a single accepted draw cannot support a density";
    write_manifest(ctx, m);
    std::fprintf(stderr, "abc: %s\n", std::string(m["error"]).c_str());
    return kExitNumerical;
  }

  CsvBuilder posterior;
  posterior.field("alpha").field("mu").end_row();
  double mean_a = 0.0, mean_mu = 0.0;
  for (std::size_t i = 0; i < post.alpha.size(); ++i) {
    posterior.field(post.alpha[i]).field(post.mu[i]).end_row();
    mean_a += post.alpha[i];
    mean_mu += post.mu[i];
  }
  mean_a /= static_cast<double>(post.alpha.size());
  mean_mu /= static_cast<double>(post.mu.size());
  atomic_write_text(ctx.out / "posterior.csv", posterior.str());

  const DensityEstimate da = posterior_density(post.alpha, abc.alpha_lo, abc.alpha_hi);
  const DensityEstimate dm = posterior_density(post.mu, abc.mu_lo, abc.mu_hi);
  for (const auto& [name, est] : {std::pair<const char*, const DensityEstimate&>("density_alpha.csv", da),
                                  std::pair<const char*, const DensityEstimate&>("density_mu.csv", dm)}) {
    CsvBuilder csv;
    csv.field("value").field("density").end_row();
    for (std::size_t i = 0; i < est.grid.size(); ++i) {
      csv.field(est.grid[i]).field(est.density[i]).end_row();
    }
    atomic_write_text(ctx.out / name, csv.str());
  }

  m["abc"]["posterior_mean"]["alpha"] = mean_a;
  m["abc"]["posterior_mean"]["mu"] = mean_mu;
  m["abc"]["kde_bandwidth"]["alpha"] = da.bandwidth;
  m["abc"]["kde_bandwidth"]["mu"] = dm.bandwidth;
  write_manifest(ctx, m);

  std::printf("accepted %zu of %lld draws (rate %s); posterior means alpha=%s mu=%s\n",
              post.alpha.size(), static_cast<long long>(post.n_draws),
              format_double(post.acceptance_rate()).c_str(), format_double(mean_a).c_str(),
              format_double(mean_mu).c_str());
  return kExitOk;
}

int cmd_oracle(const CommonFlags& flags) {
  RunContext ctx = make_context(flags);
  const OracleConfig oc = oracle_from_config(ctx.cfg);

  // Interior/positivity requirements, named by row for usable diagnostics.
  for (std::size_t k = 0; k < oc.points.size(); ++k) {
    if (oc.op == "caputo") {
      if (!(oc.points[k][0] > 0.0)) {
        throw ConfigError(ctx.cfg.name() + ": [oracle] points row " + std::to_string(k + 1) +
                          ": t must be positive");
      }
    } else {
      double n2 = 0.0;
      for (double c : oc.points[k]) n2 += c * c;
      const bool interior_needed = oc.op == "laplacian";
      if (interior_needed ? !(n2 < 1.0) : !(n2 <= 1.0)) {
        throw ConfigError(ctx.cfg.name() + ": [oracle] points row " + std::to_string(k + 1) +
                          ": point must lie inside the unit ball");
      }
    }
  }

  QuadSpec spec;
  spec.abs_tol = oc.abs_tol;

  CsvBuilder csv;
  if (oc.op == "caputo") {
    csv.field("t");
  } else {
    for (int k = 0; k < oc.d; ++k) csv.field("x" + std::to_string(k));
  }
  csv.field("value").field("tol").end_row();

  for (const std::vector<double>& pt : oc.points) {
    double value = 0.0;
    double tol = oc.abs_tol;
    if (oc.op == "laplacian") {
      auto u = [&](std::span<const double> y) { return exact_solution_laplacian(y, oc.alpha); };
      value = quad_frac_laplacian(u, pt, oc.alpha, spec);
    } else if (oc.op == "caputo") {
      auto uprime = [](double s) { return -std::exp(-s); };
      value = quad_caputo(uprime, pt[0], oc.gamma_ord, spec);
    } else {
      value = forcing_laplacian(pt, oc.d, oc.alpha);
      tol = 0.0;  // closed form
    }
    for (double c : pt) csv.field(c);
    csv.field(value).field(tol).end_row();
  }
  atomic_write_text(ctx.out / "oracle.csv", csv.str());

  json m = manifest_base(ctx, "oracle");
  m["oracle"]["op"] = oc.op;
  m["oracle"]["points"] = oc.points.size();
  write_manifest(ctx, m);

  std::printf("%zu reference values written to %s\n", oc.points.size(),
              (ctx.out / "oracle.csv").string().c_str());
  return kExitOk;
}

void add_common_flags(CLI::App* sub, CommonFlags& flags) {
  sub->add_option("--config", flags.config_path, "path to the run configuration file")
      ->required();
  sub->add_option("--out", flags.out_dir, "output directory (default: [run] out or '.')");
  sub->add_option("--seed", flags.seed, "root seed (required here or as [run] seed)");
  sub->add_option("--workers", flags.workers, "worker thread count");
  sub->add_option("--checkpoint", flags.checkpoint, "parameter checkpoint to load");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Monte Carlo physics-informed neural networks for fractional PDEs"};
  app.require_subcommand(1);

  CommonFlags flags;
  CLI::App* train_cmd = app.add_subcommand("train", "train a surrogate and write artifacts");
  CLI::App* estimate_cmd =
      app.add_subcommand("estimate", "sweep the stochastic estimator against the oracle");
  CLI::App* abc_cmd = app.add_subcommand("abc", "sample the (alpha, mu) posterior");
  CLI::App* oracle_cmd = app.add_subcommand("oracle", "evaluate quadrature reference values");
  for (CLI::App* sub : {train_cmd, estimate_cmd, abc_cmd, oracle_cmd}) {
    add_common_flags(sub, flags);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(flags);
    if (estimate_cmd->parsed()) return cmd_estimate(flags);
    if (abc_cmd->parsed()) return cmd_abc(flags);
    return cmd_oracle(flags);
  } catch (const ConfigError& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kExitUsage;
  } catch (const std::invalid_argument& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kExitUsage;
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kExitNumerical;
  }
}
