#pragma once

#include "blur/cma_es.hpp"
#include "blur/csv.hpp"
#include "blur/inner_loop.hpp"

#include <atomic>
#include <filesystem>
#include <functional>
#include <optional>
#include <thread>

namespace blur {

enum class FitnessMetric { TrainMean, TrainFinal, Eval };

inline std::string to_string(FitnessMetric m) {
  switch (m) {
    case FitnessMetric::TrainMean: return "train_mean";
    case FitnessMetric::TrainFinal: return "train_final";
    case FitnessMetric::Eval: return "eval";
  }
  return "train_mean";
}

inline FitnessMetric fitness_metric_from_string(const std::string& s) {
  if (s == "train_mean") return FitnessMetric::TrainMean;
  if (s == "train_final") return FitnessMetric::TrainFinal;
  if (s == "eval") return FitnessMetric::Eval;
  throw ValidationError("unknown fitness metric: " + s);
}

// Unroll schedule: every `period` generations the unroll count grows by
// `increment`. A non-positive period keeps it constant.
struct CurriculumSpec {
  int increment = 5;
  long period = 0;
};

inline int curriculum_unrolls(int base, const CurriculumSpec& spec, long generation) {
  if (spec.period <= 0) return base;
  return base + spec.increment * static_cast<int>(generation / spec.period);
}

// What one fitness evaluation runs: every task once, scored by the chosen
// accuracy metric, averaged over tasks.
struct FitnessSpec {
  std::vector<TaskSpec> tasks;
  Architecture arch;
  UnrollConfig unroll;
  FitnessMetric metric = FitnessMetric::TrainMean;
};

inline double report_metric(const FitnessReport& report, FitnessMetric metric, int classes) {
  switch (metric) {
    case FitnessMetric::TrainMean: {
      if (report.train_accuracy.empty()) return chance_level(classes);
      double sum = 0.0;
      for (double a : report.train_accuracy) sum += a;
      return sum / static_cast<double>(report.train_accuracy.size());
    }
    case FitnessMetric::TrainFinal:
      return report.train_accuracy.empty() ? chance_level(classes)
                                           : report.train_accuracy.back();
    case FitnessMetric::Eval:
      return report.eval_accuracy;
  }
  return 0.0;
}

// Datasets are loaded once and shared across every candidate episode.
struct PreparedTasks {
  std::vector<TaskSpec> specs;
  std::vector<std::shared_ptr<const Dataset>> datasets;  // null for generated tasks
};

inline PreparedTasks prepare_tasks(const std::vector<TaskSpec>& specs) {
  PreparedTasks prepared;
  prepared.specs = specs;
  for (const auto& spec : specs)
    prepared.datasets.push_back(spec.kind == TaskSpec::Kind::Idx ? load_idx_dataset(spec)
                                                                 : nullptr);
  return prepared;
}

// Mean accuracy of one genome across the prepared tasks. `crn_seed` pins the
// synapse and data seeds, so every candidate of a generation sees identical
// randomness (common random numbers keep the fitness comparison low-variance).
inline double accuracy_fitness(const Genome& genome, const PreparedTasks& tasks,
                               const Architecture& arch, const UnrollConfig& base,
                               FitnessMetric metric, std::uint64_t crn_seed) {
  double sum = 0.0;
  for (std::size_t t = 0; t < tasks.specs.size(); ++t) {
    UnrollConfig cfg = base;
    cfg.synapse_seed = mix_seed(crn_seed, 0x5eed, t);
    auto stream = make_stream(tasks.specs[t], mix_seed(crn_seed, t), tasks.datasets[t]);
    auto [synapses, report] = run_episode(genome, arch, *stream, cfg);
    sum += report_metric(report, metric, stream->num_classes());
  }
  return sum / static_cast<double>(tasks.specs.size());
}

struct GenerationRecord {
  int generation = 0;
  long evaluations = 0;  // cumulative candidate evaluations
  double best = 0.0;     // best fitness within the generation
  double best_ever = 0.0;
  double mean = 0.0;
  double sigma = 0.0;
  int unroll_steps = 0;
};

struct EsHistory {
  std::vector<GenerationRecord> records;
  long total_evaluations = 0;
};

struct MetaEsConfig {
  CmaOptions cma;
  CurriculumSpec curriculum;
  int threads = 1;
  int elite_reeval_period = 10;  // re-score the elite on fresh seeds
  int snapshot_every = 0;        // genome snapshots; 0 disables
  std::filesystem::path out_dir; // empty: keep everything in memory
  std::uint64_t seed = 0;        // master seed for common random numbers
};

struct MetaResult {
  Genome best;
  Vector best_vector;
  double best_fitness = 0.0;
  EsHistory history;
};

namespace detail {

// Evaluates candidates in parallel; results land by candidate index, so the
// outcome does not depend on the thread count.
inline std::vector<double> evaluate_population(
    const std::vector<Vector>& population, int threads,
    const std::function<double(const Vector&)>& fitness) {
  std::vector<double> out(population.size());
  if (threads <= 1) {
    for (std::size_t i = 0; i < population.size(); ++i) out[i] = fitness(population[i]);
    return out;
  }
  std::vector<std::thread> workers;
  std::atomic<std::size_t> next{0};
  for (int t = 0; t < threads; ++t) {
    workers.emplace_back([&]() {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= population.size()) break;
        out[i] = fitness(population[i]);
      }
    });
  }
  for (auto& w : workers) w.join();
  return out;
}

}  // namespace detail

// Gradient-free outer loop: CMA-ES over the flat genome vector. The layout
// decides which genome fields the optimizer sees; candidates that decode to an
// invalid genome score NaN and are clamped by the optimizer.
inline MetaResult meta_train(const GenomeLayout& layout, const Vector& x0,
                             const FitnessSpec& fitness, const MetaEsConfig& cfg,
                             const std::optional<nlohmann::json>& resume_state = {}) {
  PreparedTasks prepared = prepare_tasks(fitness.tasks);
  CmaEs es(x0, cfg.cma);
  if (resume_state) es.state_from_json(*resume_state);

  const bool writing = !cfg.out_dir.empty();
  std::optional<CsvWriter> history_csv;
  if (writing) {
    std::filesystem::create_directories(cfg.out_dir);
    history_csv.emplace(cfg.out_dir / "history.csv",
                        std::vector<std::string>{"generation", "evaluations", "best",
                                                 "best_ever", "mean", "sigma", "unroll_steps"});
  }

  MetaResult result;
  long evaluations = es.generation() * static_cast<long>(es.lambda());
  double best_ever = -std::numeric_limits<double>::infinity();
  Vector elite_vector;
  double elite_fitness = -std::numeric_limits<double>::infinity();

  while (es.generation() < cfg.cma.max_generations) {
    const int generation = es.generation();
    const std::uint64_t crn = mix_seed(cfg.seed, static_cast<std::uint64_t>(generation));
    UnrollConfig unroll = fitness.unroll;
    unroll.unroll_steps = curriculum_unrolls(fitness.unroll.unroll_steps, cfg.curriculum,
                                             generation);

    auto candidate_fitness = [&](const Vector& x) -> double {
      try {
        Genome genome = decode(x, layout);
        return accuracy_fitness(genome, prepared, fitness.arch, unroll, fitness.metric, crn);
      } catch (const Error&) {
        return std::numeric_limits<double>::quiet_NaN();
      }
    };

    const auto& population = es.sample_population();
    std::vector<double> scores =
        detail::evaluate_population(population, cfg.threads, candidate_fitness);
    evaluations += static_cast<long>(population.size());

    double gen_best = -std::numeric_limits<double>::infinity();
    std::size_t gen_best_idx = 0;
    double mean = 0.0;
    int finite = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (std::isfinite(scores[i])) {
        if (scores[i] > gen_best) {
          gen_best = scores[i];
          gen_best_idx = i;
        }
        mean += scores[i];
        ++finite;
      }
    }
    mean = finite ? mean / finite : 0.0;
    best_ever = std::max(best_ever, gen_best);

    // Elite bookkeeping: candidates compete against the elite's (periodically
    // refreshed) fitness estimate, which avoids locking in a lucky seed.
    if (gen_best > elite_fitness) {
      elite_fitness = gen_best;
      elite_vector = population[gen_best_idx];
    }
    if (cfg.elite_reeval_period > 0 && generation > 0 &&
        generation % cfg.elite_reeval_period == 0 && elite_vector.size() > 0) {
      const double refreshed = candidate_fitness(elite_vector);
      if (std::isfinite(refreshed)) elite_fitness = refreshed;
    }

    es.update(std::move(scores));

    GenerationRecord record{generation, evaluations, gen_best, best_ever,
                            mean,       es.sigma(),  unroll.unroll_steps};
    result.history.records.push_back(record);
    if (history_csv) {
      history_csv->row(record.generation, record.evaluations, record.best, record.best_ever,
                       record.mean, record.sigma, record.unroll_steps);
    }

    if (writing && cfg.snapshot_every > 0 && (generation + 1) % cfg.snapshot_every == 0) {
      char name[64];
      std::snprintf(name, sizeof(name), "genome_gen%06d.json", generation + 1);
      Genome snapshot = decode(elite_vector, layout);
      save_genome(cfg.out_dir / name, snapshot, layout);
      std::ofstream state(cfg.out_dir / "es_state.json", std::ios::binary);
      state << es.state_to_json().dump(2) << "\n";
    }
    if (es.reached_target()) break;
  }

  result.history.total_evaluations = evaluations;
  result.best_vector = elite_vector.size() ? elite_vector : es.best_ever();
  result.best = decode(result.best_vector, layout);
  result.best_fitness = elite_fitness;
  if (writing) {
    save_genome(cfg.out_dir / "genome_best.json", result.best, layout);
    std::ofstream state(cfg.out_dir / "es_state.json", std::ios::binary);
    state << es.state_to_json().dump(2) << "\n";
  }
  return result;
}

}  // namespace blur
