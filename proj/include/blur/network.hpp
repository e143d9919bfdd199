#pragma once

#include "blur/genome.hpp"

#include <string>
#include <vector>

namespace blur {

enum class BackwardMode { Additive, Multiplicative, MultSecondStateOnly };
enum class Stabilizer { None, Oja, SynapseNorm, Saturation };

inline std::string to_string(BackwardMode m) {
  switch (m) {
    case BackwardMode::Additive: return "additive";
    case BackwardMode::Multiplicative: return "multiplicative";
    case BackwardMode::MultSecondStateOnly: return "mult_second_state_only";
  }
  return "additive";
}

inline BackwardMode backward_mode_from_string(const std::string& s) {
  if (s == "additive") return BackwardMode::Additive;
  if (s == "multiplicative") return BackwardMode::Multiplicative;
  if (s == "mult_second_state_only") return BackwardMode::MultSecondStateOnly;
  throw ValidationError("unknown backward mode: " + s);
}

inline std::string to_string(Stabilizer s) {
  switch (s) {
    case Stabilizer::None: return "none";
    case Stabilizer::Oja: return "oja";
    case Stabilizer::SynapseNorm: return "synapse_norm";
    case Stabilizer::Saturation: return "saturation";
  }
  return "none";
}

inline Stabilizer stabilizer_from_string(const std::string& s) {
  if (s == "none") return Stabilizer::None;
  if (s == "oja") return Stabilizer::Oja;
  if (s == "synapse_norm") return Stabilizer::SynapseNorm;
  if (s == "saturation") return Stabilizer::Saturation;
  throw ValidationError("unknown stabilizer: " + s);
}

// Stack of fully connected layers plus the rule-variant switches.
struct Architecture {
  std::vector<int> layer_sizes;  // input, hidden..., output
  bool symmetric_synapses = true;
  bool multistate_synapses = true;
  BackwardMode backward_mode = BackwardMode::Additive;
  bool normalize_activations = true;
  Stabilizer stabilizer = Stabilizer::None;
  // Forward activation writes the derivative into the second state instead of
  // applying the same nonlinearity to every state. This is the kernel under
  // which the chain-rule genome reproduces gradient descent exactly; the
  // general rule family keeps it off.
  bool second_state_derivative = false;

  int num_layers() const { return static_cast<int>(layer_sizes.size()); }
  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }

  void validate(int num_states) const {
    if (layer_sizes.size() < 2)
      throw ValidationError("architecture: need at least input and output layers");
    for (int s : layer_sizes)
      if (s < 1) throw ValidationError("architecture: layer sizes must be >= 1");
    if (backward_mode == BackwardMode::MultSecondStateOnly && num_states < 2)
      throw ValidationError(
          "architecture: mult_second_state_only needs at least two states");
    if (second_state_derivative && num_states != 2)
      throw ValidationError("architecture: second_state_derivative needs exactly two states");
  }
};

// Per layer pair: forward tensor w[c](i, j) with i over upstream neurons plus
// a trailing bias row, j over downstream neurons, c over synapse channels
// (1 channel when single-state). The backward tensor has the same shape and is
// only materialized for asymmetric synapses; when symmetric the forward tensor
// plays both roles.
struct SynapseSet {
  std::vector<std::vector<Matrix>> forward;   // [layer_pair][channel]
  std::vector<std::vector<Matrix>> backward;  // empty when symmetric
  bool symmetric = true;
  int channels = 1;

  int num_pairs() const { return static_cast<int>(forward.size()); }

  const std::vector<Matrix>& backward_tensors(int pair) const {
    return symmetric ? forward[pair] : backward[pair];
  }
};

// Per layer: one batch x width matrix per state.
struct NetworkState {
  std::vector<std::vector<Matrix>> layers;  // [layer][state]

  int num_layers() const { return static_cast<int>(layers.size()); }
  int num_states() const { return layers.empty() ? 0 : static_cast<int>(layers[0].size()); }
  Eigen::Index batch() const { return layers.empty() ? 0 : layers[0][0].rows(); }
};

inline NetworkState make_state(const Architecture& arch, int num_states, Eigen::Index batch) {
  NetworkState state;
  state.layers.resize(arch.layer_sizes.size());
  for (std::size_t l = 0; l < arch.layer_sizes.size(); ++l) {
    state.layers[l].assign(static_cast<std::size_t>(num_states),
                           Matrix::Zero(batch, arch.layer_sizes[l]));
  }
  return state;
}

// Seeded synapse init: zero-mean entries with deviation 1/sqrt(fan_in); the
// backward tensors (if any) are drawn independently.
inline SynapseSet init_synapses(const Architecture& arch, int num_states, std::uint64_t seed) {
  arch.validate(num_states);
  SynapseSet syn;
  syn.symmetric = arch.symmetric_synapses;
  syn.channels = arch.multistate_synapses ? num_states : 1;
  Rng rng(seed);
  const int pairs = arch.num_layers() - 1;
  syn.forward.resize(pairs);
  if (!syn.symmetric) syn.backward.resize(pairs);
  for (int l = 0; l < pairs; ++l) {
    const int fan_in = arch.layer_sizes[l];
    const int fan_out = arch.layer_sizes[l + 1];
    const double dev = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (int c = 0; c < syn.channels; ++c)
      syn.forward[l].push_back(rng.normal_matrix(fan_in + 1, fan_out, dev));
    if (!syn.symmetric)
      for (int c = 0; c < syn.channels; ++c)
        syn.backward[l].push_back(rng.normal_matrix(fan_in + 1, fan_out, dev));
  }
  return syn;
}

// Weights as used during message passing. Synapse normalization rescales each
// output column to unit norm on the fly; stored values are never touched.
inline Matrix effective_weights(const Matrix& w, Stabilizer stabilizer) {
  if (stabilizer != Stabilizer::SynapseNorm) return w;
  Matrix out = w;
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    double norm = out.col(j).norm();
    if (norm > 0.0) out.col(j) /= norm;
  }
  return out;
}

// Writes the input batch into the first state of the input layer; everything
// else is zeroed.
inline void inject_input(NetworkState& state, const Matrix& inputs) {
  if (state.num_layers() == 0) throw ValidationError("inject_input: empty state");
  if (inputs.cols() != state.layers[0][0].cols())
    throw ConfigError("inject_input: input dim " + std::to_string(inputs.cols()) +
                      " does not match layer 0 width " +
                      std::to_string(state.layers[0][0].cols()));
  const Eigen::Index batch = inputs.rows();
  for (int l = 0; l < state.num_layers(); ++l)
    for (auto& a : state.layers[l]) a = Matrix::Zero(batch, a.cols());
  state.layers[0][0] = inputs;
}

// Standardizes a pre-activation block over its batch x neuron entries, then
// maps it onto the genome's per-state affine target.
inline Matrix normalize_preactivation(const Matrix& pre, const Genome& genome, int state) {
  if (pre.rows() < 2)
    throw ConfigError("normalization needs batch size >= 2");
  const double n = static_cast<double>(pre.size());
  const double mean = pre.sum() / n;
  const double var = (pre.array() - mean).square().sum() / n;
  const double inv = 1.0 / std::sqrt(var + 1e-8);
  return (((pre.array() - mean) * inv) * genome.norm_std[state] + genome.norm_mean[state])
      .matrix();
}

namespace detail {

// Per-state mix of a layer's states: out[c] = sum_d mix(c, d) * states[d].
inline std::vector<Matrix> mix_states(const std::vector<Matrix>& states, const Matrix& mix) {
  const int k = static_cast<int>(states.size());
  std::vector<Matrix> out(k);
  for (int c = 0; c < k; ++c) {
    Matrix acc = Matrix::Zero(states[0].rows(), states[0].cols());
    for (int d = 0; d < k; ++d) {
      const double w = mix(c, d);
      if (w != 0.0) acc.noalias() += w * states[d];
    }
    out[c] = std::move(acc);
  }
  return out;
}

inline const Matrix& channel(const std::vector<Matrix>& tensors, int c) {
  return tensors.size() == 1 ? tensors[0] : tensors[static_cast<std::size_t>(c)];
}

inline void check_finite(const Matrix& m, const char* kernel, int layer) {
  if (!m.allFinite())
    throw NumericError(std::string(kernel) + " produced non-finite values at layer " +
                       std::to_string(layer));
}

}  // namespace detail

// One forward hop: updates layer `layer` from layer `layer - 1`.
// The bias row acts as an extra upstream unit with constant transformed
// activation 1. Its contribution joins after the (optional) normalization of
// the neuron message, which keeps the normalized pass exactly invariant to
// rescaling of the input batch.
inline void forward_step(NetworkState& state, const SynapseSet& synapses, const Genome& genome,
                         const Architecture& arch, int layer) {
  const int k = genome.num_states;
  const int fan_in = arch.layer_sizes[layer - 1];
  auto upstream = detail::mix_states(state.layers[layer - 1], genome.forward_mix);
  for (int c = 0; c < k; ++c) {
    const Matrix w = effective_weights(detail::channel(synapses.forward[layer - 1], c),
                                       arch.stabilizer);
    Matrix pre = genome.neuron_forget * state.layers[layer][c] +
                 genome.neuron_update * (upstream[c] * w.topRows(fan_in));
    if (arch.normalize_activations) pre = normalize_preactivation(pre, genome, c);
    pre.rowwise() += genome.neuron_update * w.row(fan_in);
    if (arch.second_state_derivative && c == 1)
      state.layers[layer][c] = activate_derivative(pre, genome.activation);
    else
      state.layers[layer][c] = activate(pre, genome.activation);
    detail::check_finite(state.layers[layer][c], "forward pass", layer);
  }
}

inline void forward_pass(NetworkState& state, const SynapseSet& synapses, const Genome& genome,
                         const Architecture& arch) {
  for (int l = 1; l < arch.num_layers(); ++l) forward_step(state, synapses, genome, arch, l);
}

// Argmax over the first state of the output layer.
inline std::vector<int> predictions(const NetworkState& state) {
  const Matrix& out = state.layers.back()[0];
  std::vector<int> pred(static_cast<std::size_t>(out.rows()));
  for (Eigen::Index s = 0; s < out.rows(); ++s) {
    Eigen::Index best = 0;
    out.row(s).maxCoeff(&best);
    pred[static_cast<std::size_t>(s)] = static_cast<int>(best);
  }
  return pred;
}

inline double accuracy(const NetworkState& state, const std::vector<int>& labels) {
  auto pred = predictions(state);
  if (pred.size() != labels.size())
    throw ConfigError("accuracy: label count does not match batch size");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
  return pred.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(pred.size());
}

// Ground truth enters the network directly: the second state of the output
// layer becomes +1 at the true class and -1 elsewhere, states beyond the
// second are zeroed, and the first (prediction) state is left alone.
inline void inject_feedback(NetworkState& state, const std::vector<int>& labels) {
  if (state.num_states() < 2)
    throw ConfigError("inject_feedback: needs at least two states");
  auto& last = state.layers.back();
  const Eigen::Index d = last[0].cols();
  if (static_cast<Eigen::Index>(labels.size()) != last[0].rows())
    throw ConfigError("inject_feedback: label count does not match batch size");
  for (int label : labels)
    if (label < 0 || label >= d)
      throw ValidationError("inject_feedback: label " + std::to_string(label) +
                            " outside [0, " + std::to_string(d) + ")");
  last[1] = Matrix::Constant(last[0].rows(), d, -1.0);
  for (Eigen::Index s = 0; s < last[0].rows(); ++s)
    last[1](s, labels[static_cast<std::size_t>(s)]) = 1.0;
  for (int c = 2; c < state.num_states(); ++c)
    last[c] = Matrix::Zero(last[0].rows(), d);
}

// One backward hop: updates layer `upstream` from layer `upstream + 1`.
// Messages travel through the backward tensors (the forward tensor read in
// transpose when synapses are symmetric); the bias row never participates.
inline void backward_step(NetworkState& state, const SynapseSet& synapses, const Genome& genome,
                          const Architecture& arch, int upstream) {
  const int k = genome.num_states;
  const int fan_in = arch.layer_sizes[upstream];
  auto downstream = detail::mix_states(state.layers[upstream + 1], genome.backward_mix);
  const auto& tensors = synapses.backward_tensors(upstream);

  if (arch.backward_mode == BackwardMode::MultSecondStateOnly) {
    const Matrix w = effective_weights(detail::channel(tensors, 1), arch.stabilizer);
    Matrix message = downstream[1] * w.topRows(fan_in).transpose();
    state.layers[upstream][1] = state.layers[upstream][1].cwiseProduct(message);
    detail::check_finite(state.layers[upstream][1], "backward pass", upstream);
    return;
  }

  for (int c = 0; c < k; ++c) {
    const Matrix w = effective_weights(detail::channel(tensors, c), arch.stabilizer);
    Matrix message = downstream[c] * w.topRows(fan_in).transpose();
    if (arch.backward_mode == BackwardMode::Additive) {
      Matrix pre =
          genome.neuron_forget * state.layers[upstream][c] + genome.neuron_update * message;
      if (arch.normalize_activations) pre = normalize_preactivation(pre, genome, c);
      state.layers[upstream][c] = activate(pre, genome.activation);
    } else {  // Multiplicative
      Matrix pre = genome.neuron_update * message;
      if (arch.normalize_activations) pre = normalize_preactivation(pre, genome, c);
      state.layers[upstream][c] =
          state.layers[upstream][c].cwiseProduct(activate(pre, genome.activation));
    }
    detail::check_finite(state.layers[upstream][c], "backward pass", upstream);
  }
}

inline void backward_pass(NetworkState& state, const SynapseSet& synapses, const Genome& genome,
                          const Architecture& arch) {
  for (int l = arch.num_layers() - 2; l >= 0; --l)
    backward_step(state, synapses, genome, arch, l);
}

namespace detail {

// Batch-averaged Hebbian outer products for one layer pair, in the stored
// (fan_in + 1) x fan_out orientation. `up_mix`/`down_mix` decide which synapse
// transform each side receives, which is how the same helper serves both the
// forward tensor and the role-swapped backward tensor. The trailing bias row
// pairs a constant unit activation on the upstream side with the transformed
// downstream states.
inline std::vector<Matrix> hebbian_terms(const std::vector<Matrix>& up_states,
                                         const std::vector<Matrix>& down_states,
                                         const Matrix& up_mix, const Matrix& down_mix) {
  const int k = static_cast<int>(up_states.size());
  const Eigen::Index batch = up_states[0].rows();
  std::vector<Matrix> up = mix_states(up_states, up_mix);
  std::vector<Matrix> down = mix_states(down_states, down_mix);
  std::vector<Matrix> terms(static_cast<std::size_t>(k));
  const double inv_batch = 1.0 / static_cast<double>(batch);
  for (int c = 0; c < k; ++c) {
    Matrix h(up[c].cols() + 1, down[c].cols());
    h.topRows(up[c].cols()).noalias() = up[c].transpose() * down[c] * inv_batch;
    h.row(up[c].cols()) = down[c].colwise().sum() * inv_batch;
    terms[static_cast<std::size_t>(c)] = std::move(h);
  }
  return terms;
}

// Applies forget gate + Hebbian term (+ optional Oja inhibition, saturation).
// `oja_over_rows` selects the summation axis of the Oja term: columns for the
// forward tensor (inputs of one output unit), rows for the role-swapped
// backward tensor.
inline void apply_weight_update(std::vector<Matrix>& tensors,
                                const std::vector<Matrix>& hebb, const Genome& genome,
                                const Architecture& arch, bool oja_over_rows, int layer) {
  const bool single = tensors.size() == 1;
  const std::size_t channels = tensors.size();
  for (std::size_t c = 0; c < channels; ++c) {
    Matrix delta;
    if (single) {
      // Single-state synapses accumulate every channel's Hebbian term.
      delta = hebb[0];
      for (std::size_t d = 1; d < hebb.size(); ++d) delta += hebb[d];
    } else {
      delta = hebb[c];
    }
    Matrix updated = genome.synapse_forget * tensors[c] + genome.synapse_update * delta;
    if (arch.stabilizer == Stabilizer::Oja) {
      const Matrix& w = tensors[c];
      const double gate = -(genome.synapse_forget - 1.0) * genome.oja_multiplier;
      if (oja_over_rows) {
        Vector row_sq = w.rowwise().squaredNorm();
        updated += gate * (w.array().colwise() * row_sq.array()).matrix();
      } else {
        Vector col_sq = w.colwise().squaredNorm();
        updated += gate * (w.array().rowwise() * col_sq.transpose().array()).matrix();
      }
    }
    if (arch.stabilizer == Stabilizer::Saturation) {
      if (!genome.saturation_scale)
        throw ConfigError("saturation stabilizer needs genome.saturation_scale");
      const double alpha = *genome.saturation_scale;
      updated = (alpha * (updated / alpha).array().tanh()).matrix();
    }
    check_finite(updated, "synapse update", layer);
    tensors[c] = std::move(updated);
  }
}

}  // namespace detail

// Hebbian weight update for every layer pair, using the post-backward states.
// The forward tensor reads the upstream side through the pre-synaptic
// transform; asymmetric backward tensors are updated by the same rule with the
// pre- and post-synaptic roles swapped (the downstream layer acts as the
// sender), bias slot included.
inline void update_synapses(const NetworkState& state, SynapseSet& synapses,
                            const Genome& genome, const Architecture& arch) {
  for (int l = 0; l < synapses.num_pairs(); ++l) {
    auto hebb = detail::hebbian_terms(state.layers[l], state.layers[l + 1],
                                      genome.pre_synaptic_mix.transpose(),
                                      genome.post_synaptic_mix);
    detail::apply_weight_update(synapses.forward[l], hebb, genome, arch,
                                /*oja_over_rows=*/false, l);
    if (!synapses.symmetric) {
      auto hebb_back = detail::hebbian_terms(state.layers[l], state.layers[l + 1],
                                             genome.post_synaptic_mix,
                                             genome.pre_synaptic_mix.transpose());
      detail::apply_weight_update(synapses.backward[l], hebb_back, genome, arch,
                                  /*oja_over_rows=*/true, l);
    }
  }
}

// Max column norm per layer pair (over channels), a divergence diagnostic.
inline std::vector<double> max_column_norms(const SynapseSet& synapses) {
  std::vector<double> norms;
  norms.reserve(static_cast<std::size_t>(synapses.num_pairs()));
  for (const auto& tensors : synapses.forward) {
    double best = 0.0;
    for (const auto& w : tensors)
      best = std::max(best, w.colwise().norm().maxCoeff());
    norms.push_back(best);
  }
  return norms;
}

}  // namespace blur
