#pragma once

#include "blur/analysis.hpp"
#include "blur/config.hpp"

#include <iostream>

namespace blur {

enum class AnalyzeMode { Jacobian, Metric };

namespace detail {

// Every command owns one output directory with the resolved config and a
// small manifest. Nothing here carries timestamps: reruns must be
// byte-identical.
inline void prepare_run_dir(const ExperimentConfig& config, const std::string& command) {
  std::filesystem::create_directories(config.output_dir);
  save_config(std::filesystem::path(config.output_dir) / "config.json", config);
  Json manifest;
  manifest["tool"] = "blur";
  manifest["command"] = command;
  manifest["config_version"] = config.version;
  manifest["seed"] = config.seed;
  manifest["threads"] = config.threads;
  std::ofstream out(std::filesystem::path(config.output_dir) / "manifest.json",
                    std::ios::binary);
  out << manifest.dump(2) << "\n";
}

inline std::string task_file_tag(const std::vector<TaskSpec>& tasks, std::size_t index) {
  return std::to_string(index) + "_" + tasks[index].display_name();
}

inline void write_matrix_csv(const std::filesystem::path& path, const Matrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write matrix CSV: " + path.string());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c) out << ',';
      out << format_double(m(r, c));
    }
    out << '\n';
  }
}

inline std::vector<int> all_steps(int n) {
  std::vector<int> steps(static_cast<std::size_t>(n) + 1);
  std::iota(steps.begin(), steps.end(), 0);
  return steps;
}

// Anchor synapse state for the analyses: the genome trains on the fixed batch
// for a number of steps.
inline SynapseSet trained_synapses(const Genome& genome, const Architecture& arch,
                                   const TaskBatch& batch, int steps, std::uint64_t seed) {
  SynapseSet synapses = init_synapses(arch, genome.num_states, seed);
  for (int s = 0; s < steps; ++s) {
    NetworkState state = make_state(arch, genome.num_states, batch.size());
    inject_input(state, batch.inputs);
    forward_pass(state, synapses, genome, arch);
    inject_feedback(state, batch.labels);
    backward_pass(state, synapses, genome, arch);
    update_synapses(state, synapses, genome, arch);
  }
  return synapses;
}

}  // namespace detail

// One inner-loop episode per configured task; per-step train accuracy, eval
// accuracy and synapse norms land in train_<task>.csv.
inline int cmd_train(const ExperimentConfig& config) {
  if (config.tasks.empty()) throw ConfigError("train: no tasks configured");
  detail::prepare_run_dir(config, "train");
  auto [genome, layout] = materialize_genome(config.genome);
  for (std::size_t t = 0; t < config.tasks.size(); ++t) {
    auto train_stream = make_stream(config.tasks[t], mix_seed(config.unroll.data_seed, t));
    auto eval_stream =
        make_stream(config.tasks[t], mix_seed(config.unroll.data_seed, t, 0xe7a1));
    TracedEpisode episode =
        run_traced_episode(genome, config.arch, *train_stream, *eval_stream, config.unroll,
                           detail::all_steps(config.unroll.unroll_steps));
    CsvWriter csv(std::filesystem::path(config.output_dir) /
                      ("train_" + detail::task_file_tag(config.tasks, t) + ".csv"),
                  {"step", "train_acc", "eval_acc", "max_norm"});
    auto eval_at = [&](int step) -> std::string {
      for (const auto& [s, acc] : episode.evals)
        if (s == step) return format_double(acc);
      return "";
    };
    csv.row(0, "", eval_at(0), "");
    for (std::size_t s = 0; s < episode.report.train_accuracy.size(); ++s) {
      const int step = static_cast<int>(s) + 1;
      const auto& norms = episode.report.column_norms[s];
      csv.row(step, format_double(episode.report.train_accuracy[s]), eval_at(step),
              format_double(*std::max_element(norms.begin(), norms.end())));
    }
  }
  return 0;
}

// Accuracy-vs-unroll table for a saved genome across the task list.
inline int cmd_eval(const ExperimentConfig& config) {
  if (config.tasks.empty()) throw ConfigError("eval: no tasks configured");
  detail::prepare_run_dir(config, "eval");
  auto [genome, layout] = materialize_genome(config.genome);
  CsvWriter csv(std::filesystem::path(config.output_dir) / "eval.csv",
                {"task", "unroll", "eval_acc"});
  for (std::size_t t = 0; t < config.tasks.size(); ++t) {
    UnrollConfig cfg = config.unroll;
    cfg.unroll_steps = *std::max_element(config.eval.unrolls.begin(), config.eval.unrolls.end());
    auto train_stream = make_stream(config.tasks[t], mix_seed(config.unroll.data_seed, t));
    auto eval_stream =
        make_stream(config.tasks[t], mix_seed(config.unroll.data_seed, t, 0xe7a1));
    TracedEpisode episode = run_traced_episode(genome, config.arch, *train_stream, *eval_stream,
                                               cfg, config.eval.unrolls);
    for (const auto& [step, acc] : episode.evals)
      csv.row(config.tasks[t].display_name(), step, format_double(acc));
  }
  return 0;
}

// Meta-training with CMA-ES; writes history.csv plus genome snapshots.
inline int cmd_meta_train(const ExperimentConfig& config) {
  if (config.tasks.empty()) throw ConfigError("meta-train: no tasks configured");
  detail::prepare_run_dir(config, "meta-train");
  auto [genome, layout] = materialize_genome(config.genome);

  FitnessSpec fitness;
  fitness.tasks = config.tasks;
  fitness.arch = config.arch;
  fitness.unroll = config.unroll;
  fitness.metric = config.es.metric;

  MetaEsConfig meta;
  meta.cma.lambda = config.es.population;
  meta.cma.mu = config.es.parents;
  meta.cma.sigma0 = config.es.sigma0;
  meta.cma.max_generations = config.es.generations;
  meta.cma.target_fitness = config.es.target_fitness;
  meta.cma.seed = mix_seed(config.seed, config.es.seed);
  meta.curriculum = config.es.curriculum;
  meta.threads = config.threads;
  meta.elite_reeval_period = config.es.elite_reeval_period;
  meta.snapshot_every = config.es.snapshot_every;
  meta.out_dir = config.output_dir;
  meta.seed = mix_seed(config.seed, 0xc84);

  std::optional<nlohmann::json> resume;
  if (!config.es.resume_from.empty()) {
    std::ifstream in(config.es.resume_from, std::ios::binary);
    if (!in) throw ConfigError("cannot read ES state: " + config.es.resume_from);
    nlohmann::json j;
    in >> j;
    resume = j;
  }

  MetaResult result = meta_train(layout, encode(genome, layout), fitness, meta, resume);
  std::cout << "meta-train: best fitness " << format_double(result.best_fitness) << " after "
            << result.history.records.size() << " generations ("
            << result.history.total_evaluations << " evaluations)\n";
  return 0;
}

// Learning-rate sweep of the plain SGD reference on each task.
inline int cmd_baseline_sgd(const ExperimentConfig& config) {
  if (config.tasks.empty()) throw ConfigError("baseline-sgd: no tasks configured");
  detail::prepare_run_dir(config, "baseline-sgd");
  CsvWriter csv(std::filesystem::path(config.output_dir) / "baseline_sgd.csv",
                {"task", "lr", "step", "eval_acc"});
  std::vector<int> eval_steps = config.sgd.eval_steps.empty()
                                    ? detail::all_steps(config.sgd.steps)
                                    : config.sgd.eval_steps;
  for (std::size_t t = 0; t < config.tasks.size(); ++t) {
    Architecture arch = config.arch;
    for (double lr : config.sgd.learning_rates) {
      auto train_stream = make_stream(config.tasks[t], mix_seed(config.unroll.data_seed, t));
      auto eval_stream =
          make_stream(config.tasks[t], mix_seed(config.unroll.data_seed, t, 0xe7a1));
      SgdRunResult run = sgd_reference(arch, *train_stream, *eval_stream, lr,
                                       config.sgd.momentum, config.sgd.steps,
                                       config.unroll.batch_size, config.unroll.eval_batches,
                                       config.unroll.synapse_seed, config.sgd.activation,
                                       config.sgd.loss, eval_steps);
      for (const auto& [step, acc] : run.eval_trace)
        csv.row(config.tasks[t].display_name(), format_double(lr), step, format_double(acc));
    }
  }
  return 0;
}

// Numerical analyses of the update rule at a trained synapse state.
inline int cmd_analyze(const ExperimentConfig& config, AnalyzeMode mode) {
  if (config.tasks.empty()) throw ConfigError("analyze: no tasks configured");
  detail::prepare_run_dir(config, mode == AnalyzeMode::Jacobian ? "analyze-jacobian"
                                                                : "analyze-metric");
  auto [genome, layout] = materialize_genome(config.genome);
  const auto& analysis = config.analysis;

  // The analyses differentiate a deterministic full-batch update, so the
  // first task provides one fixed batch.
  auto stream = make_stream(config.tasks[0], mix_seed(config.unroll.data_seed, 0));
  TaskBatch batch = stream->next_batch(config.unroll.batch_size);
  SynapseSet anchor = detail::trained_synapses(genome, config.arch, batch,
                                               analysis.train_steps, config.unroll.synapse_seed);
  const std::filesystem::path out(config.output_dir);

  if (mode == AnalyzeMode::Jacobian) {
    UpdateJacobian jac = update_jacobian(genome, config.arch, anchor, batch, analysis.fd_step);
    UpdateJacobian jac_half =
        update_jacobian(genome, config.arch, anchor, batch, analysis.fd_step / 2.0);
    SymmetryGap gap = symmetry_gap(jac.q);
    const double fd_noise = (jac.q - jac_half.q).cwiseAbs().maxCoeff();

    detail::write_matrix_csv(out / "jacobian.csv", jac.q);
    detail::write_matrix_csv(out / "symmetry_gap.csv", gap.gap);
    detail::write_matrix_csv(
        out / "symmetry_gap_log.csv",
        gap.gap.unaryExpr([](double v) { return std::log(std::max(v, 1e-300)); }));
    std::ofstream summary(out / "summary.txt", std::ios::binary);
    summary << "weights " << jac.coords.size() << "\n"
            << "fd_step " << format_double(jac.step) << "\n"
            << "max_symmetry_gap " << format_double(gap.max_gap) << "\n"
            << "fd_noise_estimate " << format_double(fd_noise) << "\n";
    std::cout << "analyze: max symmetry gap " << format_double(gap.max_gap)
              << ", fd noise " << format_double(fd_noise) << "\n";
  } else {
    std::vector<SynapseSet> states{anchor};
    for (int i = 0; i < analysis.probe_states; ++i)
      states.push_back(init_synapses(config.arch, genome.num_states,
                                     mix_seed(config.seed, 0x9e0be, i)));
    MetricProbeOptions opts;
    opts.fd_step = analysis.fd_step;
    opts.svd_tol = analysis.svd_tol;
    opts.check_tol = analysis.check_tol;
    opts.pd_tol = analysis.pd_tol;
    opts.max_weights = analysis.max_weights;
    MetricProbeResult probe = constant_metric_probe(genome, config.arch, batch, states, opts);

    CsvWriter csv(out / "metric_candidates.csv", {"candidate", "eigen_min", "eigen_max"});
    for (std::size_t i = 0; i < probe.eigen_min.size(); ++i)
      csv.row(static_cast<int>(i), format_double(probe.eigen_min[i]),
              format_double(probe.eigen_max[i]));
    std::ofstream summary(out / "summary.txt", std::ios::binary);
    summary << "weights " << probe.weight_dim << "\n"
            << "null_space_dim " << probe.null_space_dim << "\n"
            << "survivors " << probe.survivors << "\n"
            << "positive_definite " << probe.positive_definite << "\n";
    std::cout << "analyze: " << probe.null_space_dim << " null-space candidates, "
              << probe.survivors << " survive all states, " << probe.positive_definite
              << " positive definite\n";
  }
  return 0;
}

}  // namespace blur
