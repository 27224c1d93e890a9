#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "mibench/augment.hpp"
#include "mibench/critic.hpp"
#include "mibench/errors.hpp"
#include "mibench/estimators.hpp"
#include "mibench/gaussian_mixture.hpp"
#include "mibench/hybrid.hpp"
#include "mibench/langevin.hpp"
#include "mibench/proposals.hpp"
#include "mibench/quantizer.hpp"
#include "mibench/rng.hpp"

namespace mibench {

// Flat experiment configuration. Every field round-trips through JSON and
// unknown keys are rejected.
struct ExperimentConfig {
  std::string task = "gaussian-mixture";  // gaussian-mixture | particles | independent
  int n_stacks = 5;
  double eps_mix = 1.0;
  double delta_mix = 2.0;
  double rho = 0.95;
  long long dataset_size = 100000;

  int n_particles = 5;
  long long trajectory_length = 100000;
  long long burn_in = 100000;
  double step_size = 0.05;
  double beta = 0.3;
  int noise_dims = 10;
  int constant_dims = 10;
  std::uint64_t flow_seed = 7;
  std::string landscape = "four-wells";  // four-wells | quadratic

  std::string estimator = "smile";
  double tau = 5.0;
  double alpha = 0.5;
  double ema_decay = 0.99;
  bool appendix_b_literal = false;

  std::string proposal = "pq";        // none | cond-gaussian | pq
  std::string gaussian_ir = "doe";    // doe | ba
  std::string quantizer = "auto";     // auto | sign | kmeans-tica
  int n_clusters = 16;                // 0: no generative component
  int tica_components = 10;

  std::string critic = "separable";   // separable | joint
  std::vector<int> critic_hidden{256, 128};
  int embed_dim = 32;
  std::vector<int> proposal_hidden{256, 128};
  std::vector<int> classifier_hidden{128};

  int batch_size = 64;
  int negatives = 0;  // 0: B - 1 shuffled rows
  bool negatives_with_replacement = false;
  long long iterations = 100000;
  double learning_rate = 5e-4;
  int log_every = 100;
  int window_epochs = 0;  // 0: 1 for mixtures, 10 for particles

  std::vector<std::uint64_t> seeds{0};
  std::uint64_t oracle_seed = 20240601;
  long long oracle_samples = 1000000;
  long long particle_oracle_samples = 2000000;
  bool fast = false;
  std::string output = "out";
  nlohmann::json grid = nlohmann::json::object();

  template <class F>
  void visit(F&& f) {
    f("task", task);
    f("n_stacks", n_stacks);
    f("eps_mix", eps_mix);
    f("delta_mix", delta_mix);
    f("rho", rho);
    f("dataset_size", dataset_size);
    f("n_particles", n_particles);
    f("trajectory_length", trajectory_length);
    f("burn_in", burn_in);
    f("step_size", step_size);
    f("beta", beta);
    f("noise_dims", noise_dims);
    f("constant_dims", constant_dims);
    f("flow_seed", flow_seed);
    f("landscape", landscape);
    f("estimator", estimator);
    f("tau", tau);
    f("alpha", alpha);
    f("ema_decay", ema_decay);
    f("appendix_b_literal", appendix_b_literal);
    f("proposal", proposal);
    f("gaussian_ir", gaussian_ir);
    f("quantizer", quantizer);
    f("n_clusters", n_clusters);
    f("tica_components", tica_components);
    f("critic", critic);
    f("critic_hidden", critic_hidden);
    f("embed_dim", embed_dim);
    f("proposal_hidden", proposal_hidden);
    f("classifier_hidden", classifier_hidden);
    f("batch_size", batch_size);
    f("negatives", negatives);
    f("negatives_with_replacement", negatives_with_replacement);
    f("iterations", iterations);
    f("learning_rate", learning_rate);
    f("log_every", log_every);
    f("window_epochs", window_epochs);
    f("seeds", seeds);
    f("oracle_seed", oracle_seed);
    f("oracle_samples", oracle_samples);
    f("particle_oracle_samples", particle_oracle_samples);
    f("fast", fast);
    f("output", output);
    f("grid", grid);
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    const_cast<ExperimentConfig*>(this)->visit([&](const char* key, auto& v) { j[key] = v; });
    return j;
  }

  // Overlays the keys of `j` onto this configuration.
  void merge(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
      bool known = false;
      visit([&](const char* key, auto& v) {
        if (it.key() != key) return;
        known = true;
        try {
          v = it.value().get<std::decay_t<decltype(v)>>();
        } catch (const nlohmann::json::exception&) {
          throw ConfigError("config field '" + it.key() + "': wrong type (" + it.value().dump() + ")");
        }
      });
      if (!known) throw ConfigError("config: unknown key '" + it.key() + "'");
    }
  }

  static ExperimentConfig from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    c.merge(j);
    c.validate();
    return c;
  }

  // Applies the desk-scale profile.
  ExperimentConfig resolved() const {
    ExperimentConfig c = *this;
    if (c.fast) {
      c.iterations = std::min(c.iterations, 20000LL);
      c.dataset_size = std::min(c.dataset_size, 20000LL);
      c.trajectory_length = std::min(c.trajectory_length, 20000LL);
    }
    return c;
  }

  int effective_window_epochs() const { return window_epochs > 0 ? window_epochs : (task == "particles" ? 10 : 1); }

  long long rows() const { return task == "particles" ? trajectory_length - 1 : dataset_size; }

  void validate() const {
    auto field = [](bool ok, const std::string& name, const std::string& what) {
      if (!ok) throw ConfigError("config field '" + name + "': " + what);
    };
    field(task == "gaussian-mixture" || task == "particles" || task == "independent", "task",
          "must be gaussian-mixture, particles or independent");
    field(n_stacks >= 1, "n_stacks", "must be >= 1");
    field(rho > -1.0 && rho < 1.0, "rho", "must lie in (-1, 1)");
    field(dataset_size >= 2, "dataset_size", "must be >= 2");
    field(n_particles >= 1, "n_particles", "must be >= 1");
    field(trajectory_length >= 3, "trajectory_length", "must be >= 3");
    field(burn_in >= 0, "burn_in", "must be >= 0");
    field(step_size > 0.0, "step_size", "must be positive");
    field(beta > 0.0, "beta", "must be positive");
    field(noise_dims >= 0, "noise_dims", "must be >= 0");
    field(constant_dims >= 0, "constant_dims", "must be >= 0");
    field(landscape == "four-wells" || landscape == "quadratic", "landscape", "must be four-wells or quadratic");
    try {
      estimator_from_string(estimator);
      proposal_from_string(proposal);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("config field 'estimator'/'proposal': ") + e.what());
    }
    field(tau > 0.0, "tau", "must be positive");
    field(alpha >= 0.0 && alpha <= 1.0, "alpha", "must lie in [0, 1]");
    field(ema_decay >= 0.0 && ema_decay < 1.0, "ema_decay", "must lie in [0, 1)");
    field(gaussian_ir == "doe" || gaussian_ir == "ba", "gaussian_ir", "must be doe or ba");
    field(quantizer == "auto" || quantizer == "sign" || quantizer == "kmeans-tica", "quantizer",
          "must be auto, sign or kmeans-tica");
    field(n_clusters >= 0, "n_clusters", "must be >= 0");
    field(tica_components >= 1, "tica_components", "must be >= 1");
    field(critic == "separable" || critic == "joint", "critic", "must be separable or joint");
    field(embed_dim >= 1, "embed_dim", "must be >= 1");
    for (int w : critic_hidden) field(w >= 1, "critic_hidden", "widths must be positive");
    for (int w : proposal_hidden) field(w >= 1, "proposal_hidden", "widths must be positive");
    for (int w : classifier_hidden) field(w >= 1, "classifier_hidden", "widths must be positive");
    field(batch_size >= 2, "batch_size", "must be >= 2");
    field(negatives >= 0, "negatives", "must be >= 0");
    field(iterations >= 1, "iterations", "must be >= 1");
    field(learning_rate > 0.0, "learning_rate", "must be positive");
    field(log_every >= 1, "log_every", "must be >= 1");
    field(window_epochs >= 0, "window_epochs", "must be >= 0");
    field(!seeds.empty(), "seeds", "must list at least one seed");
    field(oracle_samples >= 10000, "oracle_samples", "must be >= 10000");
    field(particle_oracle_samples >= 1000, "particle_oracle_samples", "must be >= 1000");
    field(!output.empty(), "output", "must not be empty");
    field(grid.is_object(), "grid", "must be an object of axis -> list");
    for (auto it = grid.begin(); it != grid.end(); ++it) {
      static const std::vector<std::string> axes{"batch_size", "negatives", "n_clusters", "estimator", "proposal",
                                                 "seeds"};
      field(std::find(axes.begin(), axes.end(), it.key()) != axes.end(), "grid",
            "unknown axis '" + it.key() + "' (batch_size, negatives, n_clusters, estimator, proposal, seeds)");
      field(it.value().is_array() && !it.value().empty(), "grid." + it.key(), "must be a non-empty list");
    }
    if (proposal == "cond-gaussian" && gaussian_ir == "ba")
      field(task != "particles", "gaussian_ir", "ba needs H(y), which the augmented particle data does not have");
  }
};

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Identifies a cell: hash of the resolved configuration without seeds,
// output location and grid.
inline std::string config_hash(const ExperimentConfig& cfg) {
  nlohmann::json j = cfg.resolved().to_json();
  j.erase("seeds");
  j.erase("output");
  j.erase("grid");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

inline GaussianMixtureTask mixture_task(const ExperimentConfig& c) {
  GaussianMixtureTask t;
  t.n_stacks = c.n_stacks;
  t.eps_mix = c.eps_mix;
  t.delta_mix = c.delta_mix;
  t.rho = c.rho;
  t.dataset_size = c.dataset_size;
  t.validate();
  return t;
}

inline ParticleTask particle_task(const ExperimentConfig& c) {
  ParticleTask t;
  if (c.landscape == "quadratic") t.landscape = EnergyLandscape::quadratic_well();
  t.step_size = c.step_size;
  t.beta = c.beta;
  t.n_particles = c.n_particles;
  t.trajectory_length = c.trajectory_length;
  t.burn_in = c.burn_in;
  t.noise_dims = c.noise_dims;
  t.constant_dims = c.constant_dims;
  t.flow_seed = c.flow_seed;
  t.validate();
  return t;
}

struct OracleReport {
  double mi = 0.0;
  double mi_std_error = 0.0;
  std::optional<double> h_x;
  std::optional<double> h_y;
  std::optional<double> conditional_entropy;  // particles, per particle
  std::optional<double> per_particle_mi;
};

inline OracleReport compute_oracle(const ExperimentConfig& raw) {
  const ExperimentConfig c = raw.resolved();
  OracleReport o;
  Rng rng(c.oracle_seed);
  if (c.task == "gaussian-mixture") {
    const GaussianMixtureTask t = mixture_task(c);
    const OracleValue v = gm_true_mi(t, c.oracle_samples, rng);
    o.mi = v.estimate;
    o.mi_std_error = v.std_error;
    o.h_x = gm_marginal_entropy(t, 0);
    o.h_y = gm_marginal_entropy(t, 1);
  } else if (c.task == "independent") {
    o.h_x = o.h_y = c.n_stacks * 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e);
  } else {
    const ParticleTask t = particle_task(c);
    const ParticleOracle p = particle_ground_truth_mi(t, rng, c.particle_oracle_samples);
    o.mi = p.total;
    o.mi_std_error = p.std_error;
    o.conditional_entropy = p.conditional_entropy;
    o.per_particle_mi = p.particle_mi.empty() ? 0.0 : p.particle_mi.front();
  }
  return o;
}

struct TaskData {
  Dataset data;
  Matrix series;  // particles: the augmented time series the pairs come from
};

inline TaskData generate_task_data(const ExperimentConfig& raw, std::uint64_t seed) {
  const ExperimentConfig c = raw.resolved();
  Rng rng = Rng(seed).split(0xda7a);
  TaskData td;
  if (c.task == "gaussian-mixture") {
    td.data = gm_sample(mixture_task(c), c.dataset_size, rng);
  } else if (c.task == "independent") {
    td.data.x.resize(c.dataset_size, c.n_stacks);
    td.data.y.resize(c.dataset_size, c.n_stacks);
    for (Eigen::Index i = 0; i < td.data.x.size(); ++i) td.data.x.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < td.data.y.size(); ++i) td.data.y.data()[i] = rng.normal();
  } else {
    const ParticleTask t = particle_task(c);
    Rng sim = rng.split(1);
    Rng aug = rng.split(2);
    const Matrix traj = langevin_simulate(t, sim);
    td.series = augment_trajectory(traj, t, aug);
    const Eigen::Index n = td.series.rows() - 1;
    td.data.x = td.series.topRows(n);
    td.data.y = td.series.bottomRows(n);
  }
  return td;
}

// One logged training step.
struct RunRecord {
  std::string config_hash;
  std::uint64_t seed = 0;
  long long step = 0;
  std::string estimator;
  std::string proposal;
  int b = 0;
  int k = 0;
  int n_clusters = 0;
  double i_r = 0.0;
  double l_f = 0.0;
  double total = 0.0;
  double true_mi = 0.0;
  bool window = false;
  double wall_time = 0.0;
};

struct RunResult {
  std::vector<RunRecord> records;
  std::vector<CurvePoint> curve;
  double true_mi = 0.0;
  double true_mi_std_error = 0.0;
  double wall_time = 0.0;
  long long clamped_scores = 0;
};

inline std::string proposal_label(const ExperimentConfig& c) {
  return c.n_clusters == 0 ? std::string("none") : to_string(proposal_from_string(c.proposal));
}

inline int k_label(const ExperimentConfig& c) {
  if (uses_in_batch_negatives(estimator_from_string(c.estimator))) {
    if (proposal_label(c) != "cond-gaussian") return c.batch_size;
  }
  if (c.negatives > 0) return c.negatives;
  return proposal_label(c) == "cond-gaussian" ? 16 : c.batch_size - 1;
}

// Builds the proposal and critic for a run. PQ fits its quantizer here, once,
// and attaches codes to the dataset.
inline HybridEstimator build_estimator(const ExperimentConfig& c, TaskData& td, const OracleReport& oracle,
                                       std::uint64_t seed, std::optional<CodeIndex>& index) {
  const int dx = static_cast<int>(td.data.x_dim());
  const int dy = static_cast<int>(td.data.y_dim());
  const std::uint64_t model_seed = splitmix64(seed ^ 0x5eedc0de);
  CriticModel critic = c.critic == "joint" ? CriticModel::joint(dx, dy, c.critic_hidden, model_seed)
                                           : CriticModel::separable(dx, dy, c.critic_hidden, c.embed_dim, model_seed);
  ProposalModel proposal = ProposalModel::marginal_product();
  const std::string pk = proposal_label(c);
  if (pk == "cond-gaussian") {
    auto cg = ConditionalGaussian::make(dx, dy, c.proposal_hidden, splitmix64(model_seed + 1));
    const GaussianIr ir = c.gaussian_ir == "ba" ? GaussianIr::ba : GaussianIr::doe;
    proposal = ProposalModel::conditional_gaussian(std::move(cg), td.data.y, ir, oracle.h_y);
  } else if (pk == "pq") {
    std::string qk = c.quantizer;
    if (qk == "auto") qk = c.task == "particles" ? "kmeans-tica" : "sign";
    Quantizer q;
    if (qk == "sign") {
      if (dx > 20) throw ConfigError("config field 'quantizer': sign codes need x_dim <= 20");
      q = fit_sign_quantizer(td.data.x);
    } else {
      Rng krng = Rng(seed).split(0xc1a5);
      const Matrix& series = td.series.rows() > 0 ? td.series : td.data.x;
      q = fit_kmeans_tica_quantizer(series, c.n_clusters, krng, c.tica_components);
      q.set_frequencies(q.quantize_rows(td.data.x));
    }
    td.data.codes = q.quantize_rows(td.data.x);
    index = CodeIndex::build(td.data.codes, q.n_codes);
    proposal = ProposalModel::predictive_quantization(
        PqModel::make(std::move(q), dy, splitmix64(model_seed + 2), c.classifier_hidden));
  }
  EstimatorParams ep;
  ep.tau = c.tau;
  ep.alpha = c.alpha;
  ep.ema_decay = c.ema_decay;
  ep.appendix_b_literal = c.appendix_b_literal;
  HybridEstimator est(std::move(proposal), std::move(critic), estimator_from_string(c.estimator), ep,
                      c.learning_rate);
  est.negatives = c.negatives;
  est.negatives_with_replacement = c.negatives_with_replacement;
  return est;
}

inline long long window_steps(const ExperimentConfig& c) {
  const long long epoch = std::max(1LL, c.rows() / c.batch_size);
  return std::min(c.iterations, epoch * c.effective_window_epochs());
}

// Trains one seed. Records every log_every-th step and every step of the
// reporting window.
inline RunResult run_experiment(const ExperimentConfig& raw, std::uint64_t seed,
                                const std::optional<OracleReport>& precomputed = std::nullopt) {
  const ExperimentConfig c = raw.resolved();
  c.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const OracleReport oracle = precomputed ? *precomputed : compute_oracle(c);
  TaskData td = generate_task_data(c, seed);
  std::optional<CodeIndex> index;
  HybridEstimator est = build_estimator(c, td, oracle, seed, index);

  RunResult out;
  out.true_mi = oracle.mi;
  out.true_mi_std_error = oracle.mi_std_error;
  const std::string hash = config_hash(c);
  const std::string est_name = to_string(est.estimator);
  const std::string prop_name = proposal_label(c);
  const long long window_start = c.iterations - window_steps(c);
  const int k = k_label(c);

  FitConfig fit;
  fit.iterations = c.iterations;
  fit.batch_size = c.batch_size;
  fit.log_every = c.log_every;
  Rng rng = Rng(seed).split(0x7a1);
  out.curve = two_step_fit(est, td.data, index ? &*index : nullptr, fit, rng, [&](long long step, const MIEstimate& e) {
    const bool in_window = step >= window_start;
    if (!in_window && step % c.log_every != 0 && step + 1 != c.iterations) return;
    RunRecord r;
    r.config_hash = hash;
    r.seed = seed;
    r.step = step;
    r.estimator = est_name;
    r.proposal = prop_name;
    r.b = c.batch_size;
    r.k = k;
    r.n_clusters = c.n_clusters;
    r.i_r = e.generative;
    r.l_f = e.discriminative;
    r.total = e.total;
    r.true_mi = oracle.mi;
    r.window = in_window;
    r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.records.push_back(std::move(r));
  });
  out.clamped_scores = est.diagnostics.clamped_scores;
  out.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

// Bias, variance and MSE of window totals against the oracle.
struct Stats {
  double mean = 0.0;
  double bias = 0.0;
  double variance = 0.0;
  double mse = 0.0;
  long long n = 0;
};

inline Stats window_stats(const std::vector<RunRecord>& records) {
  Stats s;
  double true_mi = 0.0;
  for (const auto& r : records) {
    if (!r.window) continue;
    s.mean += r.total;
    true_mi = r.true_mi;
    ++s.n;
  }
  if (s.n == 0) return s;
  s.mean /= static_cast<double>(s.n);
  for (const auto& r : records) {
    if (!r.window) continue;
    s.variance += (r.total - s.mean) * (r.total - s.mean);
    s.mse += (r.total - r.true_mi) * (r.total - r.true_mi);
  }
  s.variance = s.n > 1 ? s.variance / static_cast<double>(s.n - 1) : 0.0;
  s.mse /= static_cast<double>(s.n);
  s.bias = s.mean - true_mi;
  return s;
}

struct CellSummary {
  std::string config_hash;
  std::string estimator;
  std::string proposal;
  int b = 0;
  int k = 0;
  int n_clusters = 0;
  double true_mi = 0.0;
  Stats stats;
  int n_seeds = 0;
  int n_failed = 0;
};

struct SeedRow {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string estimator;
  std::string proposal;
  int b = 0;
  int k = 0;
  int n_clusters = 0;
  Stats stats;
  std::string status = "ok";
  double wall_time = 0.0;
};

// Groups records by config hash (first-seen order) and summarizes each cell.
inline std::vector<CellSummary> summarize(const std::vector<RunRecord>& records) {
  std::vector<CellSummary> cells;
  std::map<std::string, std::size_t> slot;
  std::vector<std::vector<RunRecord>> groups;
  std::vector<std::vector<std::uint64_t>> seeds;
  for (const auto& r : records) {
    auto [it, fresh] = slot.emplace(r.config_hash, cells.size());
    if (fresh) {
      CellSummary c;
      c.config_hash = r.config_hash;
      c.estimator = r.estimator;
      c.proposal = r.proposal;
      c.b = r.b;
      c.k = r.k;
      c.n_clusters = r.n_clusters;
      c.true_mi = r.true_mi;
      cells.push_back(c);
      groups.emplace_back();
      seeds.emplace_back();
    }
    groups[it->second].push_back(r);
    auto& s = seeds[it->second];
    if (std::find(s.begin(), s.end(), r.seed) == s.end()) s.push_back(r.seed);
  }
  for (std::size_t i = 0; i < cells.size(); ++i) {
    cells[i].stats = window_stats(groups[i]);
    cells[i].n_seeds = static_cast<int>(seeds[i].size());
  }
  return cells;
}

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline const char* kRunsHeader = "config_hash,seed,step,estimator,proposal,b,k,n_clusters,i_r,l_f,total,true_mi,window";

inline void write_runs_csv(std::ostream& out, const std::vector<RunRecord>& records, bool header = true) {
  if (header) out << kRunsHeader << '\n';
  for (const auto& r : records) {
    out << r.config_hash << ',' << r.seed << ',' << r.step << ',' << r.estimator << ',' << r.proposal << ',' << r.b
        << ',' << r.k << ',' << r.n_clusters << ',' << fmt_double(r.i_r) << ',' << fmt_double(r.l_f) << ','
        << fmt_double(r.total) << ',' << fmt_double(r.true_mi) << ',' << (r.window ? 1 : 0) << '\n';
  }
}

inline std::vector<RunRecord> read_runs_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kRunsHeader) throw std::runtime_error("runs.csv: unexpected header");
  std::vector<RunRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 13) throw std::runtime_error("runs.csv: malformed row '" + line + "'");
    RunRecord r;
    r.config_hash = f[0];
    r.seed = std::stoull(f[1]);
    r.step = std::stoll(f[2]);
    r.estimator = f[3];
    r.proposal = f[4];
    r.b = std::stoi(f[5]);
    r.k = std::stoi(f[6]);
    r.n_clusters = std::stoi(f[7]);
    r.i_r = std::strtod(f[8].c_str(), nullptr);
    r.l_f = std::strtod(f[9].c_str(), nullptr);
    r.total = std::strtod(f[10].c_str(), nullptr);
    r.true_mi = std::strtod(f[11].c_str(), nullptr);
    r.window = f[12] == "1";
    out.push_back(std::move(r));
  }
  return out;
}

inline void write_summary_csv(std::ostream& out, const std::vector<CellSummary>& cells) {
  out << "config_hash,estimator,proposal,b,k,n_clusters,true_mi,mean,bias,variance,mse,n,n_seeds,n_failed\n";
  for (const auto& c : cells) {
    out << c.config_hash << ',' << c.estimator << ',' << c.proposal << ',' << c.b << ',' << c.k << ',' << c.n_clusters
        << ',' << fmt_double(c.true_mi) << ',' << fmt_double(c.stats.mean) << ',' << fmt_double(c.stats.bias) << ','
        << fmt_double(c.stats.variance) << ',' << fmt_double(c.stats.mse) << ',' << c.stats.n << ',' << c.n_seeds
        << ',' << c.n_failed << '\n';
  }
}

inline void write_sweep_csv(std::ostream& out, const std::vector<SeedRow>& rows) {
  out << "config_hash,seed,estimator,proposal,b,k,n_clusters,mean,bias,variance,mse,n,status,wall_time\n";
  for (const auto& r : rows) {
    out << r.config_hash << ',' << r.seed << ',' << r.estimator << ',' << r.proposal << ',' << r.b << ',' << r.k << ','
        << r.n_clusters << ',' << fmt_double(r.stats.mean) << ',' << fmt_double(r.stats.bias) << ','
        << fmt_double(r.stats.variance) << ',' << fmt_double(r.stats.mse) << ',' << r.stats.n << ',' << r.status
        << ',' << fmt_double(r.wall_time) << '\n';
  }
}

inline std::string report_table(const std::vector<CellSummary>& cells) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-16s %-11s %-13s %5s %5s %4s %9s %9s %10s %10s %10s %6s\n", "config", "estimator",
                "proposal", "B", "K", "Q", "true_mi", "mean", "bias", "variance", "mse", "n");
  out += buf;
  for (const auto& c : cells) {
    std::snprintf(buf, sizeof buf, "%-16s %-11s %-13s %5d %5d %4d %9.4f %9.4f %10.4f %10.4g %10.4g %6lld\n",
                  c.config_hash.c_str(), c.estimator.c_str(), c.proposal.c_str(), c.b, c.k, c.n_clusters, c.true_mi,
                  c.stats.mean, c.stats.bias, c.stats.variance, c.stats.mse, c.stats.n);
    out += buf;
  }
  return out;
}

inline unsigned worker_count(std::size_t jobs) {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("MIBENCH_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1) n = std::min(n, static_cast<unsigned>(cap));
  }
  return static_cast<unsigned>(std::min<std::size_t>(n, std::max<std::size_t>(jobs, 1)));
}

// Expands the grid into one configuration per cell (seeds excluded).
inline std::vector<ExperimentConfig> expand_grid(const ExperimentConfig& base) {
  std::vector<ExperimentConfig> cells{base};
  for (auto it = base.grid.begin(); it != base.grid.end(); ++it) {
    if (it.key() == "seeds") continue;
    std::vector<ExperimentConfig> next;
    for (const auto& c : cells) {
      for (const auto& v : it.value()) {
        ExperimentConfig n = c;
        n.merge(nlohmann::json{{it.key(), v}});
        next.push_back(std::move(n));
      }
    }
    cells = std::move(next);
  }
  for (auto& c : cells) {
    if (base.grid.contains("seeds")) c.seeds = base.grid.at("seeds").get<std::vector<std::uint64_t>>();
    c.grid = nlohmann::json::object();
    c.validate();
  }
  return cells;
}

struct SweepResult {
  std::vector<RunRecord> records;
  std::vector<SeedRow> seed_rows;
  std::vector<CellSummary> cells;
  std::vector<std::string> failures;
};

// Runs every (cell, seed) job on a worker pool. A failed job is recorded and
// the sweep continues; results merge in job order.
inline SweepResult sweep(const ExperimentConfig& base) {
  const std::vector<ExperimentConfig> cells = expand_grid(base);
  struct Job {
    std::size_t cell;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (std::size_t i = 0; i < cells.size(); ++i)
    for (auto s : cells[i].seeds) jobs.push_back({i, s});

  // Oracles depend only on the task, so compute each once.
  std::vector<std::optional<OracleReport>> cell_oracle(cells.size());
  {
    std::map<std::string, std::size_t> seen;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      nlohmann::json tj = cells[i].resolved().to_json();
      for (const char* k : {"estimator", "tau", "alpha", "ema_decay", "appendix_b_literal", "proposal", "gaussian_ir",
                            "quantizer", "n_clusters", "tica_components", "critic", "critic_hidden", "embed_dim",
                            "proposal_hidden", "classifier_hidden", "batch_size", "negatives",
                            "negatives_with_replacement", "iterations", "learning_rate", "log_every", "window_epochs",
                            "seeds", "output", "grid", "fast"})
        tj.erase(k);
      const std::string key = tj.dump();
      if (auto it = seen.find(key); it != seen.end()) {
        cell_oracle[i] = cell_oracle[it->second];
        continue;
      }
      seen.emplace(key, i);
      cell_oracle[i] = compute_oracle(cells[i]);
    }
  }

  std::vector<RunResult> results(jobs.size());
  std::vector<std::string> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t j; (j = next.fetch_add(1)) < jobs.size();) {
      try {
        results[j] = run_experiment(cells[jobs[j].cell], jobs[j].seed, cell_oracle[jobs[j].cell]);
      } catch (const std::exception& e) {
        errors[j] = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  const unsigned n_workers = worker_count(jobs.size());
  for (unsigned t = 1; t < n_workers; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  SweepResult out;
  std::vector<int> failed(cells.size(), 0);
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    const ExperimentConfig& c = cells[jobs[j].cell];
    SeedRow row;
    row.config_hash = config_hash(c);
    row.seed = jobs[j].seed;
    row.estimator = to_string(estimator_from_string(c.estimator));
    row.proposal = proposal_label(c);
    row.b = c.batch_size;
    row.k = k_label(c);
    row.n_clusters = c.n_clusters;
    if (!errors[j].empty()) {
      row.status = "failed";
      ++failed[jobs[j].cell];
      out.failures.push_back(row.config_hash + " seed " + std::to_string(row.seed) + ": " + errors[j]);
    } else {
      row.stats = window_stats(results[j].records);
      row.wall_time = results[j].wall_time;
      out.records.insert(out.records.end(), results[j].records.begin(), results[j].records.end());
    }
    out.seed_rows.push_back(row);
  }
  out.cells = summarize(out.records);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const std::string h = config_hash(cells[i]);
    auto it = std::find_if(out.cells.begin(), out.cells.end(), [&](const CellSummary& s) { return s.config_hash == h; });
    if (it != out.cells.end()) {
      it->n_failed = failed[i];
    } else {
      CellSummary s;
      s.config_hash = h;
      s.estimator = to_string(estimator_from_string(cells[i].estimator));
      s.proposal = proposal_label(cells[i]);
      s.b = cells[i].batch_size;
      s.k = k_label(cells[i]);
      s.n_clusters = cells[i].n_clusters;
      s.n_failed = failed[i];
      out.cells.push_back(s);
    }
  }
  return out;
}

}  // namespace mibench
