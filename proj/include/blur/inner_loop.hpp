#pragma once

#include "blur/network.hpp"
#include "blur/tasks.hpp"

#include <utility>
#include <vector>

namespace blur {

struct UnrollConfig {
  int unroll_steps = 10;
  int eval_batches = 20;
  int batch_size = 128;
  std::uint64_t synapse_seed = 0;
  std::uint64_t data_seed = 0;

  void validate() const {
    if (unroll_steps < 0) throw ValidationError("unroll_steps must be >= 0");
    if (eval_batches < 1) throw ValidationError("eval_batches must be >= 1");
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  }
};

struct FitnessReport {
  std::vector<double> train_accuracy;             // one entry per unroll step
  double eval_accuracy = 0.0;
  std::vector<std::vector<double>> column_norms;  // [step][layer pair], max norm
  bool diverged = false;
};

inline double chance_level(int num_classes) { return 1.0 / num_classes; }

namespace detail {

inline void check_episode_config(const Genome& genome, const Architecture& arch,
                                 const TaskStream& stream) {
  arch.validate(genome.num_states);
  genome.validate();
  if (stream.input_dim() != arch.input_dim())
    throw ConfigError("task input dim " + std::to_string(stream.input_dim()) +
                      " does not match architecture input " +
                      std::to_string(arch.input_dim()));
  if (stream.num_classes() != arch.output_dim())
    throw ConfigError("task classes " + std::to_string(stream.num_classes()) +
                      " do not match architecture output " +
                      std::to_string(arch.output_dim()));
}

}  // namespace detail

// Forward-only accuracy over a number of fresh batches.
inline double evaluate_accuracy(const Genome& genome, const Architecture& arch,
                                const SynapseSet& synapses, TaskStream& stream,
                                int eval_batches, int batch_size) {
  double acc = 0.0;
  for (int b = 0; b < eval_batches; ++b) {
    TaskBatch batch = stream.next_batch(batch_size);
    NetworkState state = make_state(arch, genome.num_states, batch.size());
    inject_input(state, batch.inputs);
    forward_pass(state, synapses, genome, arch);
    acc += accuracy(state, batch.labels);
  }
  return acc / eval_batches;
}

// One unrolled training episode: per step, draw a batch, run the forward pass
// from zeroed neuron states, record train accuracy, inject the class feedback,
// run the backward pass and update the synapses. Afterwards the same stream
// supplies unseen batches for forward-only evaluation. A non-finite value
// anywhere aborts the episode at chance-level fitness instead of erroring, so
// population searches can keep going.
inline std::pair<SynapseSet, FitnessReport> run_episode(const Genome& genome,
                                                        const Architecture& arch,
                                                        TaskStream& stream,
                                                        const UnrollConfig& cfg) {
  cfg.validate();
  detail::check_episode_config(genome, arch, stream);
  SynapseSet synapses = init_synapses(arch, genome.num_states, cfg.synapse_seed);
  FitnessReport report;
  report.train_accuracy.reserve(static_cast<std::size_t>(cfg.unroll_steps));

  const double chance = chance_level(stream.num_classes());
  try {
    for (int step = 0; step < cfg.unroll_steps; ++step) {
      TaskBatch batch = stream.next_batch(cfg.batch_size);
      NetworkState state = make_state(arch, genome.num_states, batch.size());
      inject_input(state, batch.inputs);
      forward_pass(state, synapses, genome, arch);
      report.train_accuracy.push_back(accuracy(state, batch.labels));
      inject_feedback(state, batch.labels);
      backward_pass(state, synapses, genome, arch);
      update_synapses(state, synapses, genome, arch);
      report.column_norms.push_back(max_column_norms(synapses));
    }
    report.eval_accuracy =
        evaluate_accuracy(genome, arch, synapses, stream, cfg.eval_batches, cfg.batch_size);
  } catch (const NumericError&) {
    report.diverged = true;
    report.train_accuracy.resize(static_cast<std::size_t>(cfg.unroll_steps), chance);
    report.column_norms.resize(static_cast<std::size_t>(cfg.unroll_steps),
                               report.column_norms.empty()
                                   ? std::vector<double>(synapses.num_pairs(), 0.0)
                                   : report.column_norms.back());
    report.eval_accuracy = chance;
  }
  return {std::move(synapses), report};
}

// Episode variant that also evaluates after selected steps (step 0 means the
// untrained network). Used by the CLI for accuracy-vs-unroll curves; the
// training trajectory is identical to run_episode with the same seeds because
// evaluation batches come from an independent stream.
struct TracedEpisode {
  FitnessReport report;                       // train trace and norms
  std::vector<std::pair<int, double>> evals;  // (step, eval accuracy)
  SynapseSet synapses;
};

inline TracedEpisode run_traced_episode(const Genome& genome, const Architecture& arch,
                                        TaskStream& train_stream, TaskStream& eval_stream,
                                        const UnrollConfig& cfg,
                                        const std::vector<int>& eval_steps) {
  cfg.validate();
  detail::check_episode_config(genome, arch, train_stream);
  TracedEpisode out;
  out.synapses = init_synapses(arch, genome.num_states, cfg.synapse_seed);
  auto want_eval = [&](int step) {
    return std::find(eval_steps.begin(), eval_steps.end(), step) != eval_steps.end();
  };
  const double chance = chance_level(train_stream.num_classes());
  try {
    if (want_eval(0))
      out.evals.emplace_back(0, evaluate_accuracy(genome, arch, out.synapses, eval_stream,
                                                  cfg.eval_batches, cfg.batch_size));
    for (int step = 1; step <= cfg.unroll_steps; ++step) {
      TaskBatch batch = train_stream.next_batch(cfg.batch_size);
      NetworkState state = make_state(arch, genome.num_states, batch.size());
      inject_input(state, batch.inputs);
      forward_pass(state, out.synapses, genome, arch);
      out.report.train_accuracy.push_back(accuracy(state, batch.labels));
      inject_feedback(state, batch.labels);
      backward_pass(state, out.synapses, genome, arch);
      update_synapses(state, out.synapses, genome, arch);
      out.report.column_norms.push_back(max_column_norms(out.synapses));
      if (want_eval(step))
        out.evals.emplace_back(step, evaluate_accuracy(genome, arch, out.synapses, eval_stream,
                                                       cfg.eval_batches, cfg.batch_size));
    }
  } catch (const NumericError&) {
    out.report.diverged = true;
    out.report.train_accuracy.resize(static_cast<std::size_t>(cfg.unroll_steps), chance);
  }
  return out;
}

// --- hand-coded SGD reference ------------------------------------------------
//
// A plain MLP with analytic backpropagation. Two output conventions:
//   SoftmaxXent:    linear logits at the top, softmax cross-entropy loss
//                   (the baseline optimizer for learning-rate sweeps).
//   TargetFeedback: the activation is applied at every layer and
//                   backpropagation is seeded directly with the +-1 class
//                   targets, mirroring how ground truth enters the learned
//                   rule; this is the oracle for the gradient-descent
//                   equivalence checks.

enum class SgdLoss { SoftmaxXent, TargetFeedback };

class ReferenceMlp {
 public:
  ReferenceMlp(std::vector<Matrix> weights, Activation activation, SgdLoss loss)
      : weights_(std::move(weights)), activation_(activation), loss_(loss) {
    velocity_.reserve(weights_.size());
    for (const auto& w : weights_) velocity_.push_back(Matrix::Zero(w.rows(), w.cols()));
  }

  // Mirrors the channel-0 forward tensors of a synapse set, so trajectories
  // can be compared weight-for-weight.
  static ReferenceMlp from_synapses(const SynapseSet& synapses, Activation activation,
                                    SgdLoss loss) {
    std::vector<Matrix> weights;
    for (const auto& tensors : synapses.forward) weights.push_back(tensors[0]);
    return ReferenceMlp(std::move(weights), activation, loss);
  }

  const std::vector<Matrix>& weights() const { return weights_; }
  std::vector<Matrix>& weights() { return weights_; }

  // Activations per layer (inputs first); output per the loss convention.
  std::vector<Matrix> forward(const Matrix& inputs) const {
    std::vector<Matrix> acts{inputs};
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      Matrix z = affine(acts.back(), weights_[l]);
      const bool last = l + 1 == weights_.size();
      if (last && loss_ == SgdLoss::SoftmaxXent)
        acts.push_back(std::move(z));  // logits
      else
        acts.push_back(activate(z, activation_));
    }
    return acts;
  }

  double accuracy(const TaskBatch& batch) const {
    Matrix out = forward(batch.inputs).back();
    std::size_t hits = 0;
    for (Eigen::Index s = 0; s < out.rows(); ++s) {
      Eigen::Index best = 0;
      out.row(s).maxCoeff(&best);
      hits += static_cast<int>(best) == batch.labels[static_cast<std::size_t>(s)];
    }
    return static_cast<double>(hits) / static_cast<double>(out.rows());
  }

  // Mean loss over the batch (softmax cross-entropy, or the linear
  // target-alignment form whose gradient seeds are the raw +-1 targets).
  double loss_value(const TaskBatch& batch) const {
    const Eigen::Index b = batch.size();
    std::vector<Matrix> acts = forward(batch.inputs);
    const Matrix& out = acts.back();
    double total = 0.0;
    if (loss_ == SgdLoss::SoftmaxXent) {
      for (Eigen::Index s = 0; s < b; ++s) {
        const double zmax = out.row(s).maxCoeff();
        const double lse = std::log((out.row(s).array() - zmax).exp().sum()) + zmax;
        total += lse - out(s, batch.labels[static_cast<std::size_t>(s)]);
      }
    } else {
      Matrix targets = Matrix::Constant(b, out.cols(), -1.0);
      for (Eigen::Index s = 0; s < b; ++s)
        targets(s, batch.labels[static_cast<std::size_t>(s)]) = 1.0;
      // Pre-activations of the last layer are the differentiated quantity.
      Matrix z = affine(acts[acts.size() - 2], weights_.back());
      total = (targets.array() * z.array()).sum();
    }
    return total / static_cast<double>(b);
  }

  // Analytic batch-mean gradients for every weight matrix.
  std::vector<Matrix> gradients(const TaskBatch& batch) const {
    const Eigen::Index b = batch.size();
    std::vector<Matrix> acts = forward(batch.inputs);
    std::vector<Matrix> pre(weights_.size());
    for (std::size_t l = 0; l < weights_.size(); ++l) pre[l] = affine(acts[l], weights_[l]);

    Matrix delta;  // d loss / d pre-activation of the current layer
    if (loss_ == SgdLoss::SoftmaxXent) {
      const Matrix& logits = pre.back();
      delta.resize(b, logits.cols());
      for (Eigen::Index s = 0; s < b; ++s) {
        const double zmax = logits.row(s).maxCoeff();
        Eigen::ArrayXd p = (logits.row(s).array() - zmax).exp();
        p /= p.sum();
        delta.row(s) = p.matrix().transpose();
        delta(s, batch.labels[static_cast<std::size_t>(s)]) -= 1.0;
      }
    } else {
      delta = Matrix::Constant(b, weights_.back().cols(), -1.0);
      for (Eigen::Index s = 0; s < b; ++s)
        delta(s, batch.labels[static_cast<std::size_t>(s)]) = 1.0;
    }

    std::vector<Matrix> grads(weights_.size());
    const double inv_b = 1.0 / static_cast<double>(b);
    for (int l = static_cast<int>(weights_.size()) - 1; l >= 0; --l) {
      const Matrix& below = acts[static_cast<std::size_t>(l)];
      Matrix g(below.cols() + 1, delta.cols());
      g.topRows(below.cols()).noalias() = below.transpose() * delta * inv_b;
      g.row(below.cols()) = delta.colwise().sum() * inv_b;
      grads[static_cast<std::size_t>(l)] = std::move(g);
      if (l > 0) {
        Matrix back = delta * weights_[static_cast<std::size_t>(l)]
                                  .topRows(below.cols())
                                  .transpose();
        delta = back.cwiseProduct(
            activate_derivative(pre[static_cast<std::size_t>(l - 1)], activation_));
      }
    }
    return grads;
  }

  // One SGD step (optional heavy-ball momentum); returns the pre-update train
  // accuracy on the batch.
  double step(const TaskBatch& batch, double lr, double momentum = 0.0) {
    const double acc = accuracy(batch);
    std::vector<Matrix> grads = gradients(batch);
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      velocity_[l] = momentum * velocity_[l] - lr * grads[l];
      weights_[l] += velocity_[l];
    }
    return acc;
  }

 private:
  static Matrix affine(const Matrix& in, const Matrix& w) {
    Matrix z = in * w.topRows(in.cols());
    z.rowwise() += w.row(in.cols());
    return z;
  }

  std::vector<Matrix> weights_;
  std::vector<Matrix> velocity_;
  Activation activation_;
  SgdLoss loss_;
};

struct SgdRunResult {
  std::vector<Matrix> weights;
  std::vector<double> train_accuracy;              // per step, pre-update
  std::vector<std::pair<int, double>> eval_trace;  // (step, eval accuracy)
};

// Trains a reference MLP on a task stream; evaluates at the requested steps.
inline SgdRunResult sgd_reference(const Architecture& arch, TaskStream& train_stream,
                                  TaskStream& eval_stream, double lr, double momentum,
                                  int steps, int batch_size, int eval_batches,
                                  std::uint64_t weight_seed, Activation activation,
                                  SgdLoss loss, const std::vector<int>& eval_steps) {
  Architecture plain = arch;
  plain.symmetric_synapses = true;
  plain.multistate_synapses = false;
  ReferenceMlp mlp =
      ReferenceMlp::from_synapses(init_synapses(plain, 1, weight_seed), activation, loss);

  SgdRunResult result;
  auto eval_now = [&](int step) {
    double acc = 0.0;
    for (int b = 0; b < eval_batches; ++b) acc += mlp.accuracy(eval_stream.next_batch(batch_size));
    result.eval_trace.emplace_back(step, acc / eval_batches);
  };
  auto want_eval = [&](int step) {
    return std::find(eval_steps.begin(), eval_steps.end(), step) != eval_steps.end();
  };
  if (want_eval(0)) eval_now(0);
  for (int step = 1; step <= steps; ++step) {
    result.train_accuracy.push_back(mlp.step(train_stream.next_batch(batch_size), lr, momentum));
    if (want_eval(step)) eval_now(step);
  }
  result.weights = mlp.weights();
  return result;
}

}  // namespace blur
