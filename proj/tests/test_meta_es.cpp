#include "blur/meta_es.hpp"

#include <catch_amalgamated.hpp>

using namespace blur;

namespace {

Architecture toy_arch() {
  Architecture arch;
  arch.layer_sizes = {2, 10, 2};
  arch.symmetric_synapses = true;
  arch.multistate_synapses = true;
  arch.backward_mode = BackwardMode::Additive;
  arch.normalize_activations = true;
  arch.stabilizer = Stabilizer::None;
  return arch;
}

TaskSpec xor_task(std::uint64_t seed) {
  TaskSpec spec;
  spec.kind = TaskSpec::Kind::Boolean;
  spec.op = BoolOp::Xor;
  spec.noise = 0.1;
  spec.seed = seed;
  return spec;
}

}  // namespace

TEST_CASE("curriculum grows unrolls by floor arithmetic", "[meta_es]") {
  CurriculumSpec spec;
  spec.increment = 5;
  spec.period = 50;
  CHECK(curriculum_unrolls(10, spec, 0) == 10);
  CHECK(curriculum_unrolls(10, spec, 49) == 10);
  CHECK(curriculum_unrolls(10, spec, 50) == 15);
  CHECK(curriculum_unrolls(10, spec, 149) == 20);

  CurriculumSpec constant;  // non-positive period: constant unrolls
  constant.period = 0;
  CHECK(curriculum_unrolls(10, constant, 100000) == 10);
}

TEST_CASE("zero-update genome scores chance fitness", "[meta_es]") {
  Genome genome = random_init(2, 9, 0.2);
  genome.activation = Activation::Tanh;
  genome.neuron_update = 0.0;
  genome.neuron_forget = 1.0;
  genome.synapse_update = 0.0;
  genome.synapse_forget = 1.0;

  Architecture arch = toy_arch();
  arch.layer_sizes = {2, 10, 5};
  arch.normalize_activations = false;

  TaskSpec blobs;
  blobs.kind = TaskSpec::Kind::Blobs;
  blobs.blob_classes = 5;
  blobs.seed = 4;
  PreparedTasks tasks = prepare_tasks({blobs});

  UnrollConfig cfg;
  cfg.unroll_steps = 5;
  cfg.eval_batches = 8;
  cfg.batch_size = 128;

  double mean = 0.0;
  for (int i = 0; i < 10; ++i)
    mean += accuracy_fitness(genome, tasks, arch, cfg, FitnessMetric::Eval,
                             static_cast<std::uint64_t>(i));
  CHECK(mean / 10.0 == Catch::Approx(0.2).margin(0.03));
}

TEST_CASE("backprop genome with the learning sign reaches high xor fitness", "[meta_es]") {
  // Target-direction sign, as in the inner-loop learning test.
  Genome genome = backprop_init(2, BackpropVariant::ChainRule, 0.5, Activation::Sigmoid);
  genome.synapse_update = -genome.synapse_update;
  Architecture arch;
  arch.layer_sizes = {2, 20, 2};
  arch.symmetric_synapses = true;
  arch.multistate_synapses = false;
  arch.backward_mode = BackwardMode::MultSecondStateOnly;
  arch.normalize_activations = false;
  arch.second_state_derivative = true;

  PreparedTasks tasks = prepare_tasks({xor_task(3)});
  UnrollConfig cfg;
  cfg.unroll_steps = 40;
  cfg.eval_batches = 4;
  cfg.batch_size = 128;
  CHECK(accuracy_fitness(genome, tasks, arch, cfg, FitnessMetric::Eval, 123) > 0.9);
}

TEST_CASE("fitness averages over tasks", "[meta_es]") {
  // Frozen genome: xor gives chance 0.5, five-class blobs chance 0.2, so the
  // two-task fitness sits near 0.35.
  Genome genome = random_init(2, 9, 0.2);
  genome.activation = Activation::Tanh;
  genome.neuron_update = 0.0;
  genome.neuron_forget = 1.0;
  genome.synapse_update = 0.0;
  genome.synapse_forget = 1.0;

  Architecture arch = toy_arch();
  arch.normalize_activations = false;

  TaskSpec blobs;
  blobs.kind = TaskSpec::Kind::Blobs;
  blobs.blob_classes = 2;
  blobs.seed = 4;

  PreparedTasks both = prepare_tasks({xor_task(1), blobs});
  UnrollConfig cfg;
  cfg.unroll_steps = 3;
  cfg.eval_batches = 6;
  cfg.batch_size = 128;

  PreparedTasks only_xor = prepare_tasks({xor_task(1)});
  PreparedTasks only_blobs = prepare_tasks({blobs});
  const double fx = accuracy_fitness(genome, only_xor, arch, cfg, FitnessMetric::Eval, 7);
  const double fb = accuracy_fitness(genome, only_blobs, arch, cfg, FitnessMetric::Eval, 7);
  const double fboth = accuracy_fitness(genome, both, arch, cfg, FitnessMetric::Eval, 7);
  CHECK(fboth == Catch::Approx((fx + fb) / 2.0).margin(1e-12));
}

TEST_CASE("report metrics summarize the trace as configured", "[meta_es]") {
  FitnessReport report;
  report.train_accuracy = {0.2, 0.4, 0.9};
  report.eval_accuracy = 0.7;
  CHECK(report_metric(report, FitnessMetric::TrainMean, 2) == Catch::Approx(0.5));
  CHECK(report_metric(report, FitnessMetric::TrainFinal, 2) == 0.9);
  CHECK(report_metric(report, FitnessMetric::Eval, 2) == 0.7);

  FitnessReport empty;
  CHECK(report_metric(empty, FitnessMetric::TrainMean, 4) == 0.25);  // chance
}

TEST_CASE("meta-training improves over the initial genome and reproduces", "[meta_es]") {
  Genome init = random_init(2, 2, 0.1);
  init.activation = Activation::Tanh;
  GenomeLayout layout = GenomeLayout::full(init);

  FitnessSpec fitness;
  fitness.tasks = {xor_task(11)};
  fitness.arch = toy_arch();
  fitness.unroll.unroll_steps = 5;
  fitness.unroll.eval_batches = 2;
  fitness.unroll.batch_size = 64;
  fitness.metric = FitnessMetric::TrainMean;

  MetaEsConfig cfg;
  cfg.cma.lambda = 8;
  cfg.cma.sigma0 = 0.1;
  cfg.cma.max_generations = 25;
  cfg.cma.seed = 5;
  cfg.seed = 5;
  cfg.threads = 2;

  MetaResult a = meta_train(layout, encode(init, layout), fitness, cfg);
  CHECK(a.history.records.size() == 25);
  CHECK(a.history.total_evaluations == 25 * 8);
  // best-ever trace is monotone.
  for (std::size_t i = 1; i < a.history.records.size(); ++i)
    CHECK(a.history.records[i].best_ever >= a.history.records[i - 1].best_ever);
  CHECK(a.best_fitness >= 0.4);  // sanity: no collapse below chance

  // Bit-identical reruns, independent of the thread count.
  MetaEsConfig serial = cfg;
  serial.threads = 1;
  MetaResult b = meta_train(layout, encode(init, layout), fitness, serial);
  CHECK(a.best_vector == b.best_vector);
  REQUIRE(a.history.records.size() == b.history.records.size());
  for (std::size_t i = 0; i < a.history.records.size(); ++i) {
    CHECK(a.history.records[i].best == b.history.records[i].best);
    CHECK(a.history.records[i].mean == b.history.records[i].mean);
    CHECK(a.history.records[i].sigma == b.history.records[i].sigma);
  }
}

TEST_CASE("invalid candidates are clamped instead of crashing", "[meta_es]") {
  // A layout whose norm_std can go negative: decode throws, fitness is NaN,
  // the optimizer clamps and keeps going.
  Genome init = random_init(1, 3, 0.1);
  init.activation = Activation::Tanh;
  init.norm_std[0] = 0.05;  // one sigma step from invalid
  GenomeLayout layout = GenomeLayout::full(init);

  FitnessSpec fitness;
  fitness.tasks = {xor_task(13)};
  fitness.arch = toy_arch();
  fitness.arch.backward_mode = BackwardMode::Additive;
  fitness.unroll.unroll_steps = 2;
  fitness.unroll.eval_batches = 1;
  fitness.unroll.batch_size = 32;

  MetaEsConfig cfg;
  cfg.cma.lambda = 8;
  cfg.cma.sigma0 = 0.2;
  cfg.cma.max_generations = 10;
  cfg.cma.seed = 7;

  MetaResult result = meta_train(layout, encode(init, layout), fitness, cfg);
  CHECK(result.history.records.size() == 10);
  CHECK(std::isfinite(result.best_fitness));
}
