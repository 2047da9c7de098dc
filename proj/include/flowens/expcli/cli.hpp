#pragma once

// Experiment command line. Needs OpenSSL (libcrypto) for the manifest hashes.

#include "flowens/activelearn.hpp"
#include "flowens/ensembles.hpp"
#include "flowens/environments.hpp"
#include "flowens/evalmetrics.hpp"
#include "flowens/uncertainty.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace flowens::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitRuntime = 2;

/// SHA-1 of the git blob object for `bytes` ("blob <len>\0" + bytes), hex.
inline std::string git_blob_sha1(const std::string& bytes) {
  const std::string obj = "blob " + std::to_string(bytes.size()) + std::string(1, '\0') + bytes;
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(obj.data(), obj.size(), md, &len, EVP_sha1(), nullptr) != 1) throw IoError("SHA-1 failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Flat key=value file; '#' starts a comment. Keys may use '_' or '-'.
inline std::vector<std::pair<std::string, std::string>> parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return std::string();
    return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
    std::string key = trim(line.substr(0, eq));
    std::replace(key.begin(), key.end(), '_', '-');
    if (key.empty()) throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
    out.emplace_back(key, trim(line.substr(eq + 1)));
  }
  return out;
}

/// String-valued options for one subcommand, converted and range-checked on use.
class Options {
public:
  explicit Options(CLI::App* app) : app_(app) {}

  void add(const std::string& key, std::string def, const std::string& help) {
    vals_[key] = std::move(def);
    order_.push_back(key);
    app_->add_option("--" + key, vals_[key], help)->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  }

  const std::string& str(const std::string& key) const { return vals_.at(key); }
  void set(const std::string& key, const std::string& v) { vals_[key] = v; }
  bool given(const std::string& key) const { return app_->get_option("--" + key)->count() > 0; }

  std::string required(const std::string& key) const {
    if (str(key).empty()) throw ConfigError("--" + key + " is required");
    return str(key);
  }

  std::uint64_t u64(const std::string& key, std::uint64_t lo = 0,
                    std::uint64_t hi = std::numeric_limits<std::uint64_t>::max()) const {
    return parse_u64(key, str(key), lo, hi);
  }
  std::size_t size(const std::string& key, std::size_t lo = 0,
                   std::size_t hi = std::numeric_limits<std::size_t>::max()) const {
    return static_cast<std::size_t>(u64(key, lo, hi));
  }

  double real(const std::string& key, double lo, double hi) const {
    const std::string& s = str(key);
    double v = 0.0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v))
      throw ConfigError("--" + key + " expects a number, got '" + s + "'");
    if (v < lo || v > hi)
      throw ConfigError("--" + key + " must lie in [" + fmt_double(lo) + ", " + fmt_double(hi) + "]");
    return v;
  }

  bool flag(const std::string& key) const {
    const std::string& s = str(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError("--" + key + " expects true or false, got '" + s + "'");
  }

  std::vector<std::uint64_t> u64_list(const std::string& key, std::uint64_t lo = 0,
                                      std::uint64_t hi = std::numeric_limits<std::uint64_t>::max()) const {
    std::vector<std::uint64_t> out;
    std::stringstream ss(str(key));
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_u64(key, item, lo, hi));
    if (out.empty()) throw ConfigError("--" + key + " needs at least one value");
    return out;
  }

  nlohmann::ordered_json resolved() const {
    nlohmann::ordered_json j;
    for (const auto& k : order_) j[k] = vals_.at(k);
    return j;
  }

private:
  static std::uint64_t parse_u64(const std::string& key, const std::string& s, std::uint64_t lo, std::uint64_t hi) {
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || s.empty())
      throw ConfigError("--" + key + " expects a non-negative integer, got '" + s + "'");
    if (v < lo || v > hi)
      throw ConfigError("--" + key + " must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    return v;
  }

  CLI::App* app_;
  std::map<std::string, std::string> vals_;
  std::vector<std::string> order_;
};

/// Output directory plus the manifest that records every file written.
class Run {
public:
  Run(std::string subcommand, std::vector<std::string> argv, const Options& opts)
      : sub_(std::move(subcommand)), argv_(std::move(argv)), opts_(opts) {
    out_ = opts.str("out");
    std::error_code ec;
    fs::create_directories(out_, ec);
    if (ec || !fs::is_directory(out_)) throw IoError("cannot create output directory " + out_.string());
    const auto probe = out_ / ".flowens_write_probe";
    std::ofstream t(probe);
    if (!t) throw IoError("output directory " + out_.string() + " is not writable");
    t.close();
    fs::remove(probe, ec);
  }

  fs::path path(const std::string& name) const { return out_ / name; }

  std::ofstream open(const std::string& name) {
    std::ofstream f(path(name), std::ios::binary);
    if (!f) throw IoError("cannot write " + path(name).string());
    record(name);
    return f;
  }

  void record(const std::string& name) { files_.push_back(name); }

  void note(const std::string& key, nlohmann::ordered_json v) { extra_[key] = std::move(v); }

  void write_manifest() {
    nlohmann::ordered_json m;
    m["tool"] = "flowens";
    m["subcommand"] = sub_;
    m["argv"] = argv_;
    m["config"] = opts_.resolved();
    for (auto& [k, v] : extra_.items()) m[k] = v;
    auto& outs = m["outputs"];
    outs = nlohmann::ordered_json::array();
    for (const auto& f : files_) {
      const std::string bytes = read_file(path(f));
      outs.push_back({{"file", f}, {"bytes", bytes.size()}, {"git_sha1", git_blob_sha1(bytes)}});
    }
    std::ofstream mf(path("manifest.json"), std::ios::binary);
    if (!mf) throw IoError("cannot write " + path("manifest.json").string());
    mf << m.dump(2) << '\n';
  }

private:
  std::string sub_;
  std::vector<std::string> argv_;
  const Options& opts_;
  fs::path out_;
  std::vector<std::string> files_;
  nlohmann::ordered_json extra_ = nlohmann::ordered_json::object();
};

namespace detail {

inline void add_common(Options& o) {
  o.add("seed", "0", "base random seed");
  o.add("out", "out", "output directory");
  o.add("threads", "0", "worker threads (0: FLOWENS_THREADS or hardware)");
}

inline void add_model_options(Options& o) {
  o.add("model", "", "nflows | nflows_out | nflows_base | pne | mc_dropout | gp");
  o.add("components", "", "ensemble size M");
  o.add("keep-prob", "", "mask keep probability");
  o.add("hidden-layers", "", "hidden layers");
  o.add("hidden-units", "", "units per hidden layer");
  o.add("transforms", "", "spline transforms");
  o.add("bins", "", "spline bins");
  o.add("tail-bound", "", "spline tail bound");
  o.add("test-masks", "", "MC dropout masks sampled at test time");
  o.add("gp-iterations", "", "GP hyper-parameter steps per fit");
  o.add("gp-lr", "", "GP hyper-parameter step size");
}

/// Per-model defaults for (kind, env), overridden by any option given; the
/// resolved values are written back so the manifest shows them.
inline ensembles::ModelConfig model_config(Options& o, const envs::Environment& env) {
  const auto kind = ensembles::parse_model_kind(o.required("model"));
  auto c = ensembles::default_config(kind, env.tag(), env.x_dim(), env.y_dim());
  auto sz = [&](const char* key, std::size_t& field, std::size_t lo, std::size_t hi) {
    if (!o.str(key).empty()) field = o.size(key, lo, hi);
    o.set(key, std::to_string(field));
  };
  auto re = [&](const char* key, double& field, double lo, double hi) {
    if (!o.str(key).empty()) field = o.real(key, lo, hi);
    o.set(key, fmt_double(field));
  };
  sz("components", c.components, 1, 256);
  re("keep-prob", c.keep_prob, 1e-3, 1.0);
  sz("hidden-layers", c.hidden_layers, 1, 16);
  sz("hidden-units", c.hidden_units, 1, 4096);
  sz("transforms", c.transforms, 1, 16);
  sz("bins", c.spline_bins, 2, 64);
  re("tail-bound", c.tail_bound, 0.5, 100.0);
  sz("test-masks", c.test_masks, 1, 10000);
  sz("gp-iterations", c.gp_iterations, 0, 100000);
  re("gp-lr", c.gp_lr, 1e-6, 10.0);
  return c;
}

inline std::unique_ptr<envs::Environment> environment(const Options& o) {
  return envs::make_environment(o.required("env"));
}

inline void write_train_loss(std::ostream& os, const std::vector<double>& loss) {
  os << "step,loss\n";
  for (std::size_t i = 0; i < loss.size(); ++i) os << i << ',' << fmt_double(loss[i]) << '\n';
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Subcommands

inline void cmd_gen_data(Options& o, Run& run) {
  const auto env = detail::environment(o);
  const auto n = o.size("n", 1, 100000000);
  const auto policy = envs::parse_policy(o.str("policy"));
  const auto seed = o.u64("seed");
  Rng rng(seed);
  const auto d = collect_transitions(*env, policy, n, rng);
  const std::string name = env->tag() + "_" + to_string(policy) + "_n" + std::to_string(n) + "_s" + std::to_string(seed) + ".csv";
  envs::write_dataset(run.path(name).string(), d, seed);
  run.record(name);
  run.record(name + ".json");
  std::cout << "wrote " << run.path(name).string() << " (" << d.size() << " rows)\n";
}

inline void cmd_train(Options& o, Run& run) {
  const auto env = detail::environment(o);
  auto mc = detail::model_config(o, *env);
  const auto seed = o.u64("seed");
  mc.init_seed = derive_seed(seed, 0);
  Dataset data;
  if (!o.str("data").empty()) {
    data = envs::read_dataset(o.str("data"));
    require_shape(data.x_dim() == env->x_dim() && data.y_dim() == env->y_dim(), "dataset does not match --env");
  } else {
    Rng rng(derive_seed(seed, 1));
    data = collect_transitions(*env, envs::Policy::random, o.size("n", 1, 100000000), rng);
  }
  ensembles::TrainConfig tc;
  tc.steps = o.size("steps", 0, 100000000);
  tc.batch = o.size("batch", 1, 1000000);
  tc.lr = o.real("lr", 1e-8, 1.0);
  tc.clip_norm = o.real("clip", 0.0, 1e6);
  auto model = ensembles::make_model(mc);
  Rng trng(derive_seed(seed, 3));
  const auto log = model->train(data, tc, trng);
  model->save(run.path("model.ckpt").string());
  run.record("model.ckpt");
  run.record("model.ckpt.manifest");
  auto lf = run.open("train_loss.csv");
  detail::write_train_loss(lf, log.loss);
  lf.close();
  if (!log.loss.empty()) std::cout << "final loss " << fmt_double(log.loss.back()) << '\n';
}

inline void cmd_active_learn(Options& o, Run& run) {
  const auto env = detail::environment(o);
  const auto mc = detail::model_config(o, *env);
  const auto criterion = al::parse_criterion(o.str("criterion"));
  al::check_criterion(criterion, mc.kind);
  const auto seeds = o.u64_list("seeds");
  al::ALConfig cfg;
  cfg.initial_n = o.size("initial-n", 0, 10000000);
  cfg.candidates = o.size("candidates", 1, 10000000);
  cfg.acquire = o.size("acquire", 1, cfg.candidates);
  cfg.epochs = o.size("epochs", 0, 100000);
  cfg.eval_every = o.size("eval-every", 1, 100000);
  cfg.eval_initial = o.flag("eval-initial");
  cfg.initial_train.steps = o.size("init-steps", 0, 100000000);
  cfg.retrain.steps = o.size("retrain-steps", 0, 100000000);
  cfg.initial_train.batch = cfg.retrain.batch = o.size("batch", 1, 1000000);
  cfg.initial_train.lr = cfg.retrain.lr = o.real("lr", 1e-8, 1.0);
  cfg.test_n = o.size("test-n", 1, 10000000);
  cfg.eval_inputs = o.size("eval-inputs", 1, 100000);
  cfg.kl_samples = o.size("kl-samples", uncertainty::kDefaultKnnK + 1, 10000000);
  cfg.score_samples = o.size("score-samples", 0, 100000000);
  cfg.rmse_draws = o.size("rmse-draws", 1, 1000000);
  const bool save_models = o.flag("save-models");
  const std::size_t threads = o.size("threads", 0, 1024);
  cfg.validate();

  // Independent runs go to the pool; each run is sequential inside.
  std::vector<al::ALResult> results(seeds.size());
  const std::size_t pool = threads ? threads : thread_count();
  cfg.threads = seeds.size() > 1 ? 1 : pool;
  parallel_for(
      seeds.size(), [&](std::size_t i) { results[i] = al::run_active_learning(*env, mc, criterion, cfg, seeds[i]); },
      seeds.size() > 1 ? pool : 1);

  auto mf = run.open("metrics.csv");
  eval::write_metrics_header(mf);
  auto af = run.open("acquisitions.csv");
  af << "seed,epoch,rank";
  for (std::size_t k = 0; k < env->x_dim(); ++k) af << ",x" << k;
  af << ",score,failed\n";
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    for (const auto& r : results[i].rows) eval::write_metrics_row(mf, r);
    for (const auto& rec : results[i].log)
      for (Eigen::Index r = 0; r < rec.chosen.rows(); ++r) {
        af << seeds[i] << ',' << rec.epoch << ',' << r;
        for (Eigen::Index k = 0; k < rec.chosen.cols(); ++k) af << ',' << fmt_double(rec.chosen(r, k));
        const double s = rec.scores[static_cast<std::size_t>(r)];
        af << ',' << (std::isfinite(s) ? fmt_double(s) : std::string("nan")) << ',' << (rec.failed ? 1 : 0) << '\n';
      }
    if (save_models) {
      const std::string name = "model_s" + std::to_string(seeds[i]) + ".ckpt";
      results[i].model->save(run.path(name).string());
      run.record(name);
      run.record(name + ".manifest");
    }
    if (!results[i].rows.empty()) {
      const auto& last = results[i].rows.back();
      std::cout << "seed " << seeds[i] << ": epoch " << last.epoch << " n_train " << last.n_train << " kl "
                << fmt_double(last.kl) << " failed_epochs " << results[i].failed_epochs << '\n';
    }
  }
}

inline void cmd_evaluate(Options& o, Run& run) {
  const auto env = detail::environment(o);
  const auto model = ensembles::load_model(o.required("checkpoint"));
  require_shape(model->x_dim() == env->x_dim() && model->y_dim() == env->y_dim(), "checkpoint does not match --env");
  const auto seed = o.u64("seed");
  const std::size_t threads = o.size("threads", 0, 1024);
  Rng test_rng(derive_seed(seed, 2)), rmse_rng(derive_seed(seed, 7));
  const auto test_all = collect_transitions(*env, env->test_policy(), o.size("test-n", 1, 10000000), test_rng);
  std::vector<std::size_t> pick(test_all.size());
  std::iota(pick.begin(), pick.end(), std::size_t{0});
  const std::size_t n_eval = std::min(o.size("eval-inputs", 1, 100000), pick.size());
  for (std::size_t i = 0; i < n_eval; ++i) std::swap(pick[i], pick[i + uniform_index(test_rng, pick.size() - i)]);
  pick.resize(n_eval);
  const auto test = test_all.subset(pick);

  const auto t0 = std::chrono::steady_clock::now();
  eval::MetricsRow row;
  row.seed = seed;
  row.env = env->tag();
  row.model = to_string(model->kind());
  row.criterion = "none";
  const auto kl = eval::eval_kl(*model, *env, test.X, o.size("kl-samples", uncertainty::kDefaultKnnK + 1, 10000000),
                                derive_seed(seed, 1000), threads);
  row.kl = kl.mean;
  row.kl_stderr = kl.std_err;
  row.rmse = eval::eval_rmse(*model, test, rmse_rng, o.size("rmse-draws", 1, 1000000));
  row.loglik = eval::eval_loglik(*model, test).mean;
  row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  auto mf = run.open("metrics.csv");
  eval::write_metrics_header(mf);
  eval::write_metrics_row(mf, row);

  uncertainty::SamplingConfig sc;
  sc.n_samples = o.size("n-samples", 0, 100000000);
  const std::string space = o.str("space");
  if (space == "output")
    sc.space = uncertainty::Space::output;
  else if (space == "base")
    sc.space = uncertainty::Space::base;
  else if (space != "automatic")
    throw ConfigError("--space must be automatic, output or base");
  const auto reps = uncertainty::uncertainty_grid(*model, test.X, sc, derive_seed(seed, 3000), threads);
  auto uf = run.open("uncertainty.csv");
  uncertainty::write_report_csv_header(uf);
  for (std::size_t i = 0; i < reps.size(); ++i) uncertainty::write_report_csv_row(uf, i, reps[i]);
  std::cout << "kl " << fmt_double(row.kl) << " +- " << fmt_double(row.kl_stderr) << ", rmse " << fmt_double(row.rmse)
            << ", loglik " << fmt_double(row.loglik) << '\n';
}

inline void cmd_dim_study(Options& o, Run& run) {
  uncertainty::DimStudyConfig cfg;
  for (auto d : o.u64_list("dims", 1, 64)) cfg.dims.push_back(static_cast<std::size_t>(d));
  cfg.n_samples = o.size("n", 2, 100000000);
  cfg.seeds = o.size("seeds", 1, 1000000);
  cfg.random_scaling = o.flag("random-scaling");
  cfg.seed = o.u64("seed");
  const auto res = uncertainty::mc_dimension_study(cfg);
  auto f = run.open("dim_study.csv");
  uncertainty::write_dim_study_csv(f, res);
  for (const auto& r : res.rows)
    std::cout << "d=" << r.d << " mean |error| " << fmt_double(r.mc_entropy_err) << '\n';
}

inline void cmd_mi_check(Options& o, Run& run) {
  const auto seed = o.u64("seed");
  std::unique_ptr<ensembles::DensityModel> model;
  std::unique_ptr<envs::Environment> env = detail::environment(o);
  if (!o.str("checkpoint").empty()) {
    model = ensembles::load_model(o.str("checkpoint"));
  } else {
    auto mc = ensembles::default_config(ensembles::ModelKind::nflows_base, env->tag(), env->x_dim(), env->y_dim());
    mc.init_seed = derive_seed(seed, 0);
    model = ensembles::make_model(mc);
    Rng rng(derive_seed(seed, 1)), trng(derive_seed(seed, 3));
    const auto data = collect_transitions(*env, envs::Policy::random, o.size("n", 1, 100000000), rng);
    model->train(data, {o.size("steps", 0, 100000000), 64, o.real("lr", 1e-8, 1.0)}, trng);
  }
  if (model->kind() != ensembles::ModelKind::nflows_base) throw ConfigError("mi-check needs an nflows_base model");
  require_shape(model->x_dim() == env->x_dim(), "checkpoint does not match --env");
  const auto N = o.size("n-samples", 100, 100000000);
  Rng xr(derive_seed(seed, 2));
  const auto X = env->propose(o.size("inputs", 1, 100000), xr);
  auto f = run.open("mi_check.csv");
  f << "x_index";
  for (std::size_t k = 0; k < env->x_dim(); ++k) f << ",x" << k;
  f << ",mi_base,mi_output,base_err,output_err,abs_diff,tolerance,pass\n";
  std::size_t passed = 0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const auto cd = model->condition(std::span<const double>(X.row(i).data(), env->x_dim()));
    Rng r(derive_seed(seed, 100 + static_cast<std::uint64_t>(i)));
    const auto mi = uncertainty::epistemic_base_vs_output_check(*cd, N, r);
    const double diff = std::abs(mi.mi_base - mi.mi_output);
    const double tol = std::max(0.05, 0.1 * std::abs(mi.mi_base));
    passed += diff < tol;
    f << i;
    for (Eigen::Index k = 0; k < X.cols(); ++k) f << ',' << fmt_double(X(i, k));
    f << ',' << fmt_double(mi.mi_base) << ',' << fmt_double(mi.mi_output) << ',' << fmt_double(mi.base_err) << ','
      << fmt_double(mi.output_err) << ',' << fmt_double(diff) << ',' << fmt_double(tol) << ',' << (diff < tol) << '\n';
  }
  std::cout << passed << " of " << X.rows() << " inputs within tolerance\n";
}

inline void cmd_budget_report(Options& o, Run& run) {
  const auto nxs = o.u64_list("nx", 1, 1000000);
  const auto nws = o.u64_list("nw", 1, 100000000);
  const auto ms = o.u64_list("components", 1, 256);
  const bool measure = o.flag("measure");
  const auto seed = o.u64("seed");
  const std::size_t threads = o.size("threads", 0, 1024);
  std::unique_ptr<envs::Environment> env;
  if (measure) env = detail::environment(o);
  auto f = run.open("budget.csv");
  f << "n_x,n_w,m,out_samples,base_samples,ratio";
  if (measure) f << ",out_draws,base_draws,out_ms,base_ms";
  f << '\n';
  using uncertainty::BudgetMode;
  for (auto M : ms)
    for (auto nx : nxs)
      for (auto nw : nws) {
        const auto out = uncertainty::sample_budget(BudgetMode::output_space, nx, nw, M);
        const auto base = uncertainty::sample_budget(BudgetMode::base_space, nx, nw, M);
        f << nx << ',' << nw << ',' << M << ',' << out << ',' << base << ','
          << fmt_double(static_cast<double>(out) / static_cast<double>(base));
        if (measure) {
          // Matched identity-init models on the same inputs.
          Rng xr(derive_seed(seed, 2));
          const auto X = env->propose(nx, xr);
          std::uint64_t draws[2] = {0, 0};
          double ms_taken[2] = {0, 0};
          int slot = 0;
          for (auto kind : {ensembles::ModelKind::nflows_out, ensembles::ModelKind::nflows_base}) {
            auto mc = ensembles::default_config(kind, env->tag(), env->x_dim(), env->y_dim());
            mc.components = M;
            mc.init_seed = seed;
            const auto model = ensembles::make_model(mc);
            uncertainty::SamplingConfig sc;
            sc.n_samples = kind == ensembles::ModelKind::nflows_out ? nw * M : nw;
            sc.space = kind == ensembles::ModelKind::nflows_out ? uncertainty::Space::automatic : uncertainty::Space::base;
            const auto t0 = std::chrono::steady_clock::now();
            const auto reps = uncertainty::uncertainty_grid(*model, X, sc, derive_seed(seed, 5), threads);
            ms_taken[slot] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
            for (const auto& r : reps) draws[slot] += r.draws;
            ++slot;
          }
          f << ',' << draws[0] << ',' << draws[1] << ',' << fmt_double(ms_taken[0]) << ',' << fmt_double(ms_taken[1]);
        }
        f << '\n';
      }
  std::cout << "wrote " << run.path("budget.csv").string() << '\n';
}

// ---------------------------------------------------------------------------

struct Subcommand {
  std::string name;
  std::string help;
  std::function<void(Options&)> define;
  std::function<void(Options&, Run&)> run;
};

inline std::vector<Subcommand> subcommands() {
  using detail::add_common;
  using detail::add_model_options;
  return {
      {"gen-data", "collect a dataset from an environment",
       [](Options& o) {
         add_common(o);
         o.add("env", "", "hetero | bimodal | wetchicken | pendulum");
         o.add("n", "1000", "rows");
         o.add("policy", "random", "random | heuristic | uniform");
       },
       cmd_gen_data},
      {"train", "train a model and write a checkpoint",
       [](Options& o) {
         add_common(o);
         o.add("env", "", "environment");
         add_model_options(o);
         o.add("data", "", "dataset CSV (default: collect --n rows with the random policy)");
         o.add("n", "1000", "rows to collect when --data is not given");
         o.add("steps", "2000", "gradient steps");
         o.add("batch", "64", "batch size");
         o.add("lr", "0.0005", "Adam step size");
         o.add("clip", "10", "gradient norm clip (0 disables)");
       },
       cmd_train},
      {"active-learn", "run pool-based active learning",
       [](Options& o) {
         add_common(o);
         o.add("env", "", "environment");
         add_model_options(o);
         o.add("criterion", "epistemic", "epistemic | aleatoric | total | random | epistemic_base");
         o.add("seeds", "0", "comma-separated run seeds");
         o.add("initial-n", "0", "initial training rows (0: 100 for 1D, 200 otherwise)");
         o.add("candidates", "1000", "candidates per epoch");
         o.add("acquire", "10", "acquisitions per epoch");
         o.add("epochs", "10", "acquisition epochs");
         o.add("eval-every", "1", "evaluate every this many epochs");
         o.add("eval-initial", "false", "also evaluate before the first acquisition");
         o.add("init-steps", std::to_string(al::ALConfig{}.initial_train.steps), "initial gradient steps");
         o.add("retrain-steps", std::to_string(al::ALConfig{}.retrain.steps), "gradient steps per epoch");
         o.add("batch", "64", "batch size");
         o.add("lr", fmt_double(al::ALConfig{}.retrain.lr), "Adam step size");
         o.add("test-n", "1000", "held-out rows collected with the test policy");
         o.add("eval-inputs", "50", "test inputs per evaluation");
         o.add("kl-samples", "2000", "samples per side for kNN KL");
         o.add("score-samples", "0", "samples per candidate (0: per-model default)");
         o.add("rmse-draws", "1", "model draws per RMSE pair");
         o.add("save-models", "true", "write the final checkpoint of each seed");
       },
       cmd_active_learn},
      {"evaluate", "score a checkpoint on held-out data",
       [](Options& o) {
         add_common(o);
         o.add("env", "", "environment");
         o.add("checkpoint", "", "model checkpoint");
         o.add("test-n", "1000", "held-out rows");
         o.add("eval-inputs", "50", "test inputs");
         o.add("kl-samples", "2000", "samples per side for kNN KL");
         o.add("rmse-draws", "1", "model draws per RMSE pair");
         o.add("n-samples", "0", "uncertainty samples per input (0: per-model default)");
         o.add("space", "automatic", "automatic | output | base");
       },
       cmd_evaluate},
      {"dim-study", "Monte Carlo entropy error against dimension",
       [](Options& o) {
         add_common(o);
         o.add("dims", "1,2,4,8,16", "comma-separated dimensions");
         o.add("n", "1000", "samples per estimate");
         o.add("seeds", "100", "repetitions per dimension");
         o.add("random-scaling", "true", "draw per-dimension scales from U(0.5, 2)");
       },
       cmd_dim_study},
      {"mi-check", "compare base-space and output-space mutual information",
       [](Options& o) {
         add_common(o);
         o.add("env", "bimodal", "environment");
         o.add("checkpoint", "", "nflows_base checkpoint (default: train one)");
         o.add("n", "1000", "training rows when training");
         o.add("steps", "2000", "training steps when training");
         o.add("lr", "0.001", "training step size");
         o.add("inputs", "10", "query inputs");
         o.add("n-samples", "20000", "samples per estimate");
       },
       cmd_mi_check},
      {"budget-report", "sample budgets of output-space vs base-space estimation",
       [](Options& o) {
         add_common(o);
         o.add("nx", "1,10,100", "comma-separated query counts");
         o.add("nw", "1000", "comma-separated per-component sample counts");
         o.add("components", "5", "comma-separated ensemble sizes");
         o.add("measure", "false", "also time identity-init models and count their draws");
         o.add("env", "hetero", "environment for --measure");
       },
       cmd_budget_report},
  };
}

inline std::string usage() {
  std::string s = "usage: flowens <subcommand> [--config FILE] [--key value ...]\nsubcommands:\n";
  for (const auto& c : subcommands()) s += "  " + c.name + std::string(16 - c.name.size(), ' ') + c.help + '\n';
  return s;
}

/// Returns 0 on success, 1 on a configuration error, 2 on a runtime failure.
inline int cli_main(int argc, const char* const* argv, std::ostream& err = std::cerr) {
  std::vector<std::string> args(argv + 1, argv + argc);
  if (args.empty() || args[0] == "--help" || args[0] == "-h") {
    (args.empty() ? err : std::cout) << usage();
    return args.empty() ? kExitConfig : kExitOk;
  }
  const auto cmds = subcommands();
  const auto it = std::find_if(cmds.begin(), cmds.end(), [&](const Subcommand& c) { return c.name == args[0]; });
  if (it == cmds.end()) {
    err << "unknown subcommand '" << args[0] << "'\n" << usage();
    return kExitConfig;
  }

  CLI::App app{it->help, "flowens " + it->name};
  Options opts(&app);
  it->define(opts);
  std::string config_path;
  app.add_option("--config", config_path, "flat key=value file; flags override it");

  try {
    // Config file entries go first so later flags win.
    std::vector<std::string> tail(args.begin() + 1, args.end());
    for (std::size_t i = 0; i < tail.size(); ++i) {
      if (tail[i] == "--config" && i + 1 < tail.size()) config_path = tail[i + 1];
      if (tail[i].rfind("--config=", 0) == 0) config_path = tail[i].substr(9);
    }
    std::vector<std::string> merged;
    if (!config_path.empty())
      for (const auto& [k, v] : parse_config_file(config_path)) {
        if (k == "config") throw ConfigError("config files cannot include other config files");
        merged.push_back("--" + k + "=" + v);
      }
    merged.insert(merged.end(), tail.begin(), tail.end());
    std::reverse(merged.begin(), merged.end());  // CLI11 consumes from the back
    app.parse(merged);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "flowens " << it->name << ": " << e.what() << "\n\n" << app.help();
    return kExitConfig;
  } catch (const ConfigError& e) {
    err << "flowens " << it->name << ": " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    std::optional<Run> run;
    // Option conversion errors surface before any output is written.
    try {
      run.emplace(it->name, args, opts);
    } catch (const IoError& e) {
      err << "flowens " << it->name << ": " << e.what() << '\n';
      return kExitRuntime;
    }
    it->run(opts, *run);
    run->write_manifest();
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "flowens " << it->name << ": configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "flowens " << it->name << ": " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace flowens::cli
