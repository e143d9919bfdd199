#include "blur/inner_loop.hpp"

#include <catch_amalgamated.hpp>

using namespace blur;

namespace {

// The exact configuration under which the learned-rule kernels reduce to
// gradient descent.
Architecture oracle_arch(std::vector<int> sizes) {
  Architecture arch;
  arch.layer_sizes = std::move(sizes);
  arch.symmetric_synapses = true;
  arch.multistate_synapses = false;
  arch.backward_mode = BackwardMode::MultSecondStateOnly;
  arch.normalize_activations = false;
  arch.stabilizer = Stabilizer::None;
  arch.second_state_derivative = true;
  return arch;
}

Architecture general_arch(std::vector<int> sizes) {
  Architecture arch;
  arch.layer_sizes = std::move(sizes);
  arch.symmetric_synapses = true;
  arch.multistate_synapses = true;
  arch.backward_mode = BackwardMode::Additive;
  arch.normalize_activations = true;
  arch.stabilizer = Stabilizer::None;
  return arch;
}

TaskSpec xor_spec(std::uint64_t seed, bool fixed = false, int fixed_size = 256) {
  TaskSpec spec;
  spec.kind = TaskSpec::Kind::Boolean;
  spec.op = BoolOp::Xor;
  spec.noise = 0.1;
  spec.seed = seed;
  spec.fixed_batch = fixed;
  spec.fixed_batch_size = fixed_size;
  return spec;
}

double max_relative_error(const Matrix& a, const Matrix& b) {
  return ((a - b).cwiseAbs().array() / (1.0 + b.cwiseAbs().array())).maxCoeff();
}

}  // namespace

TEST_CASE("zero unroll steps leave the synapses at their initialization", "[inner_loop]") {
  Genome genome = random_init(2, 3, 0.1);
  genome.activation = Activation::Tanh;
  Architecture arch = general_arch({2, 8, 2});
  UnrollConfig cfg;
  cfg.unroll_steps = 0;
  cfg.eval_batches = 4;
  cfg.batch_size = 64;
  cfg.synapse_seed = 5;
  auto stream = make_stream(xor_spec(1), 0);
  auto [synapses, report] = run_episode(genome, arch, *stream, cfg);

  SynapseSet fresh = init_synapses(arch, 2, 5);
  for (int l = 0; l < synapses.num_pairs(); ++l)
    for (int c = 0; c < synapses.channels; ++c)
      CHECK(synapses.forward[l][c] == fresh.forward[l][c]);
  CHECK(report.train_accuracy.empty());

  // The evaluation equals a direct forward-only measurement on the same
  // stream position.
  auto stream2 = make_stream(xor_spec(1), 0);
  double untrained = evaluate_accuracy(genome, arch, fresh, *stream2, 4, 64);
  CHECK(report.eval_accuracy == untrained);
}

TEST_CASE("learned-rule trajectory matches full-batch SGD for 20 steps", "[inner_loop]") {
  // Gradient-descent genome, symmetric single-state synapses, multiplicative
  // second-state backward, sigmoid: weight-for-weight equality with the
  // hand-coded reference at every step.
  const double lr = 0.1;
  Genome genome = backprop_init(2, BackpropVariant::ChainRule, lr, Activation::Sigmoid);
  Architecture arch = oracle_arch({2, 20, 2});

  auto stream = make_stream(xor_spec(7, /*fixed=*/true), 0);
  TaskBatch batch = stream->next_batch(256);

  SynapseSet synapses = init_synapses(arch, 2, 11);
  ReferenceMlp mlp = ReferenceMlp::from_synapses(synapses, Activation::Sigmoid,
                                                 SgdLoss::TargetFeedback);
  for (int step = 0; step < 20; ++step) {
    NetworkState state = make_state(arch, 2, batch.size());
    inject_input(state, batch.inputs);
    forward_pass(state, synapses, genome, arch);
    inject_feedback(state, batch.labels);
    backward_pass(state, synapses, genome, arch);
    update_synapses(state, synapses, genome, arch);
    mlp.step(batch, lr);
    CHECK(max_relative_error(synapses.forward[0][0], mlp.weights()[0]) < 1e-5);
    CHECK(max_relative_error(synapses.forward[1][0], mlp.weights()[1]) < 1e-5);
  }
}

TEST_CASE("backprop genome with the target-direction sign learns xor", "[inner_loop]") {
  // With feedback +1 at the true class, descending toward the target needs
  // the opposite sign of the gradient-descent gate; see the update-gate sign
  // convention in backprop_init.
  Genome genome = backprop_init(2, BackpropVariant::ChainRule, 0.5, Activation::Sigmoid);
  genome.synapse_update = -genome.synapse_update;
  Architecture arch = oracle_arch({2, 20, 2});
  UnrollConfig cfg;
  cfg.unroll_steps = 50;
  cfg.eval_batches = 4;
  cfg.batch_size = 128;
  cfg.synapse_seed = 3;
  auto stream = make_stream(xor_spec(5), 0);
  auto [synapses, report] = run_episode(genome, arch, *stream, cfg);
  CHECK_FALSE(report.diverged);
  CHECK(report.eval_accuracy == 1.0);
}

TEST_CASE("divergent episodes flag and fall back to chance fitness", "[inner_loop]") {
  Genome genome = backprop_init(2, BackpropVariant::ChainRule, 0.1, Activation::Identity);
  genome.synapse_update = 1e200;  // explodes within two steps without a bound
  Architecture arch = oracle_arch({2, 8, 2});
  arch.second_state_derivative = true;
  UnrollConfig cfg;
  cfg.unroll_steps = 6;
  cfg.eval_batches = 2;
  cfg.batch_size = 32;
  auto stream = make_stream(xor_spec(9), 0);
  auto [synapses, report] = run_episode(genome, arch, *stream, cfg);
  CHECK(report.diverged);
  CHECK(report.eval_accuracy == 0.5);  // chance for two classes
  CHECK(report.train_accuracy.size() == 6);  // trace padded to full length
}

TEST_CASE("report invariants: accuracies bounded, trace lengths match", "[inner_loop]") {
  Genome genome = random_init(2, 13, 0.2);
  genome.activation = Activation::Tanh;
  Architecture arch = general_arch({2, 6, 2});
  UnrollConfig cfg;
  cfg.unroll_steps = 7;
  cfg.eval_batches = 3;
  cfg.batch_size = 32;
  auto stream = make_stream(xor_spec(2), 0);
  auto [synapses, report] = run_episode(genome, arch, *stream, cfg);
  CHECK(report.train_accuracy.size() == 7);
  CHECK(report.column_norms.size() == 7);
  for (double a : report.train_accuracy) {
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);
  }
  CHECK(report.eval_accuracy >= 0.0);
  CHECK(report.eval_accuracy <= 1.0);
}

TEST_CASE("episodes are deterministic given seeds", "[inner_loop]") {
  Genome genome = random_init(2, 17, 0.15);
  genome.activation = Activation::Tanh;
  Architecture arch = general_arch({2, 10, 2});
  UnrollConfig cfg;
  cfg.unroll_steps = 5;
  cfg.eval_batches = 2;
  cfg.batch_size = 48;
  cfg.synapse_seed = 21;
  auto s1 = make_stream(xor_spec(4), 9);
  auto s2 = make_stream(xor_spec(4), 9);
  auto [syn1, r1] = run_episode(genome, arch, *s1, cfg);
  auto [syn2, r2] = run_episode(genome, arch, *s2, cfg);
  CHECK(r1.train_accuracy == r2.train_accuracy);
  CHECK(r1.eval_accuracy == r2.eval_accuracy);
  for (int l = 0; l < syn1.num_pairs(); ++l)
    for (int c = 0; c < syn1.channels; ++c)
      CHECK(syn1.forward[l][c] == syn2.forward[l][c]);  // bit-identical
}

TEST_CASE("random synapses score at chance on balanced ten-class data", "[inner_loop]") {
  // Chance-level Monte Carlo: average over many random networks.
  Architecture arch = general_arch({2, 16, 10});
  arch.normalize_activations = false;
  TaskSpec spec;
  spec.kind = TaskSpec::Kind::Blobs;
  spec.blob_classes = 10;
  spec.seed = 31;
  double total = 0.0;
  const int repeats = 30;
  for (int i = 0; i < repeats; ++i) {
    Genome genome = random_init(2, 100 + static_cast<std::uint64_t>(i), 0.5);
    genome.activation = Activation::Tanh;
    SynapseSet synapses = init_synapses(arch, 2, 200 + static_cast<std::uint64_t>(i));
    auto stream = make_stream(spec, static_cast<std::uint64_t>(i));
    total += evaluate_accuracy(genome, arch, synapses, *stream, 4, 128);
  }
  CHECK(total / repeats == Catch::Approx(0.1).margin(0.03));
}

TEST_CASE("nearest-center logits evaluate to perfect accuracy", "[inner_loop]") {
  // Construct the linear readout logit_c = x . mu_c - |mu_c|^2 / 2, the exact
  // nearest-center classifier for isotropic clusters.
  const int d = 5;
  BlobCenters centers(d, 77);
  Architecture arch = general_arch({2, d});
  arch.normalize_activations = false;
  arch.multistate_synapses = false;
  Genome genome = random_init(2, 1, 0.1);
  genome.forward_mix = Matrix::Identity(2, 2);
  genome.neuron_forget = 0.0;
  genome.neuron_update = 1.0;
  genome.activation = Activation::Tanh;  // monotone: argmax unchanged

  SynapseSet synapses = init_synapses(arch, 2, 2);
  for (int c = 0; c < d; ++c) {
    const auto [cx, cy] = centers.centers[static_cast<std::size_t>(c)];
    synapses.forward[0][0](0, c) = cx;
    synapses.forward[0][0](1, c) = cy;
    synapses.forward[0][0](2, c) = -(cx * cx + cy * cy) / 2.0;
  }
  TaskSpec spec;
  spec.kind = TaskSpec::Kind::Blobs;
  spec.blob_classes = d;
  spec.cluster_std = 0.05;
  spec.seed = 77;  // same seed as the centers above
  auto stream = make_stream(spec, 3);
  CHECK(evaluate_accuracy(genome, arch, synapses, *stream, 4, 128) == 1.0);

  // Identical synapses and stream position give identical accuracy.
  auto stream2 = make_stream(spec, 3);
  CHECK(evaluate_accuracy(genome, arch, synapses, *stream2, 4, 128) ==
        evaluate_accuracy(genome, arch, synapses, *stream, 4, 128));
}

TEST_CASE("sgd reference: zero learning rate freezes the weights", "[inner_loop]") {
  Architecture arch = general_arch({2, 5, 2});
  SynapseSet init = init_synapses(oracle_arch({2, 5, 2}), 1, 5);
  ReferenceMlp mlp = ReferenceMlp::from_synapses(init, Activation::Sigmoid,
                                                 SgdLoss::SoftmaxXent);
  auto before = mlp.weights();
  auto stream = make_stream(xor_spec(6), 0);
  for (int i = 0; i < 5; ++i) mlp.step(stream->next_batch(32), 0.0);
  for (std::size_t l = 0; l < before.size(); ++l) CHECK(mlp.weights()[l] == before[l]);
}

TEST_CASE("sgd reference gradients match central finite differences", "[inner_loop]") {
  // Finite-difference oracle on a five-neuron net (hidden 3 + output 2).
  SynapseSet init = init_synapses(oracle_arch({2, 3, 2}), 1, 8);
  for (SgdLoss loss : {SgdLoss::SoftmaxXent, SgdLoss::TargetFeedback}) {
    ReferenceMlp mlp = ReferenceMlp::from_synapses(init, Activation::Sigmoid, loss);
    Rng rng(12);
    TaskBatch batch;
    batch.inputs = rng.normal_matrix(16, 2, 1.0);
    batch.labels.resize(16);
    for (int s = 0; s < 16; ++s) batch.labels[static_cast<std::size_t>(s)] = s % 2;

    auto grads = mlp.gradients(batch);
    const double h = 1e-5;
    for (std::size_t l = 0; l < mlp.weights().size(); ++l) {
      for (Eigen::Index r = 0; r < mlp.weights()[l].rows(); ++r)
        for (Eigen::Index c = 0; c < mlp.weights()[l].cols(); ++c) {
          double& w = mlp.weights()[l](r, c);
          const double saved = w;
          w = saved + h;
          const double up = mlp.loss_value(batch);
          w = saved - h;
          const double down = mlp.loss_value(batch);
          w = saved;
          const double fd = (up - down) / (2.0 * h);
          CHECK(std::abs(grads[l](r, c) - fd) <= 1e-6 * (1.0 + std::abs(fd)));
        }
    }
  }
}

TEST_CASE("sgd reference learns xor", "[inner_loop]") {
  Architecture arch = general_arch({2, 20, 2});
  auto train = make_stream(xor_spec(14), 0);
  auto eval = make_stream(xor_spec(14), 1);
  SgdRunResult run = sgd_reference(arch, *train, *eval, 0.5, 0.0, 2000, 64, 4, 15,
                                   Activation::Sigmoid, SgdLoss::SoftmaxXent, {2000});
  REQUIRE(run.eval_trace.size() == 1);
  CHECK(run.eval_trace[0].second == 1.0);
}

TEST_CASE("stabilizers bound synapse growth that otherwise escalates", "[inner_loop]") {
  // Hand-built genome with a forget gate slightly above one: unbounded weight
  // growth without a stabilizer, bounded with the Oja term active.
  Genome genome = random_init(2, 55, 0.2);
  genome.activation = Activation::Tanh;
  genome.neuron_forget = 0.0;
  genome.neuron_update = 1.0;
  genome.synapse_forget = 1.05;
  genome.synapse_update = 0.05;
  genome.oja_multiplier = 1.0;

  UnrollConfig cfg;
  cfg.unroll_steps = 300;
  cfg.eval_batches = 1;
  cfg.batch_size = 64;
  cfg.synapse_seed = 7;

  Architecture arch = general_arch({2, 10, 2});
  auto stream_raw = make_stream(xor_spec(21), 0);
  auto [syn_raw, raw] = run_episode(genome, arch, *stream_raw, cfg);

  arch.stabilizer = Stabilizer::Oja;
  auto stream_oja = make_stream(xor_spec(21), 0);
  auto [syn_oja, oja] = run_episode(genome, arch, *stream_oja, cfg);

  auto max_norm = [](const std::vector<std::vector<double>>& norms, std::size_t step) {
    double best = 0;
    for (double v : norms[step]) best = std::max(best, v);
    return best;
  };
  // Without the stabilizer the norm keeps climbing well past 10x; with Oja it
  // levels off.
  const double raw_mid = max_norm(raw.column_norms, 49);
  const double raw_end = max_norm(raw.column_norms, 299);
  CHECK((raw.diverged || raw_end > 10.0 * raw_mid));
  CHECK_FALSE(oja.diverged);
  const double oja_mid = max_norm(oja.column_norms, 49);
  const double oja_end = max_norm(oja.column_norms, 299);
  CHECK(oja_end <= 10.0 * oja_mid);
}
