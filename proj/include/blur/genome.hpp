#pragma once

#include "blur/common.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <utility>

namespace blur {

// The genome is the complete set of meta-parameters describing one learning
// rule. It is defined per neuron/synapse and shared across layers and tasks,
// so a single small object drives networks of any width or depth.
struct Genome {
  int num_states = 2;  // k: states per neuron (and channels per synapse)

  double neuron_forget = 0.0;   // gate on a neuron's previous state
  double neuron_update = 1.0;   // gate on the incoming message
  double synapse_forget = 1.0;  // gate on the previous weight
  double synapse_update = 0.0;  // gate on the Hebbian term (sign included)

  Matrix forward_mix;       // k x k state mixing on the forward pass
  Matrix backward_mix;      // k x k state mixing on the backward pass
  Matrix pre_synaptic_mix;  // k x k transform of the upstream states in the weight update
  Matrix post_synaptic_mix; // k x k transform of the downstream states in the weight update

  Vector norm_mean;  // per-state affine target mean for activation normalization
  Vector norm_std;   // per-state affine target deviation (strictly positive)

  double oja_multiplier = 0.0;            // learnable weight on the inhibitory Oja term
  std::optional<double> saturation_scale; // alpha in alpha*tanh(w/alpha), if enabled

  Activation activation = Activation::Tanh;  // configuration, not meta-learned

  void validate() const {
    if (num_states < 1) throw ValidationError("genome: num_states must be >= 1");
    auto check_mix = [&](const Matrix& m, const char* name) {
      if (m.rows() != num_states || m.cols() != num_states)
        throw ValidationError(std::string("genome: ") + name + " must be k x k");
      if (!m.allFinite())
        throw ValidationError(std::string("genome: ") + name + " has non-finite entries");
    };
    check_mix(forward_mix, "forward_mix");
    check_mix(backward_mix, "backward_mix");
    check_mix(pre_synaptic_mix, "pre_synaptic_mix");
    check_mix(post_synaptic_mix, "post_synaptic_mix");
    if (norm_mean.size() != num_states || norm_std.size() != num_states)
      throw ValidationError("genome: normalization affine parameters must have length k");
    if (!norm_mean.allFinite() || !norm_std.allFinite())
      throw ValidationError("genome: normalization affine parameters must be finite");
    if ((norm_std.array() <= 0.0).any())
      throw ValidationError("genome: norm_std entries must be strictly positive");
    for (double v : {neuron_forget, neuron_update, synapse_forget, synapse_update,
                     oja_multiplier})
      if (!std::isfinite(v)) throw ValidationError("genome: gate values must be finite");
    if (saturation_scale) {
      if (!std::isfinite(*saturation_scale) || *saturation_scale <= 0.0)
        throw ValidationError("genome: saturation_scale must be a positive finite value");
    }
  }
};

// Two ways to pin the genome to exact chain-rule gradient descent.
//   ChainRule:   the two-state reduction with selector matrices; together with
//                single-state symmetric synapses and the multiplicative
//                second-state backward mode it reproduces SGD exactly.
//   Symmetrized: identity/swap transform matrices; the usual starting point
//                for meta-training ablations "close to backpropagation".
enum class BackpropVariant { ChainRule, Symmetrized };

inline std::string to_string(BackpropVariant v) {
  return v == BackpropVariant::ChainRule ? "chain_rule" : "symmetrized";
}

inline BackpropVariant backprop_variant_from_string(const std::string& s) {
  if (s == "chain_rule") return BackpropVariant::ChainRule;
  if (s == "symmetrized") return BackpropVariant::Symmetrized;
  throw ValidationError("unknown backprop variant: " + s);
}

// Genome that makes the update rule equal to gradient descent with rate lr.
// Only defined for two states: one carries activations, the other the
// backpropagated signal.
inline Genome backprop_init(int k, BackpropVariant variant, double lr,
                            Activation activation = Activation::Sigmoid) {
  if (k != 2)
    throw ValidationError("backprop_init: the gradient-descent genome needs exactly 2 states");
  if (!(lr > 0.0)) throw ValidationError("backprop_init: lr must be positive");

  Genome g;
  g.num_states = 2;
  g.neuron_forget = 0.0;
  g.neuron_update = 1.0;
  g.synapse_forget = 1.0;
  // The weight update is written with a plus sign, so the descent direction
  // lives in the gate itself.
  g.synapse_update = -lr;
  g.forward_mix = Matrix{{1.0, 0.0}, {1.0, 0.0}};
  if (variant == BackpropVariant::ChainRule) {
    g.backward_mix = Matrix{{0.0, 0.0}, {0.0, 1.0}};       // second state reads second state
    g.pre_synaptic_mix = Matrix{{1.0, 0.0}, {0.0, 0.0}};   // channel 1 reads pre state 1
    g.post_synaptic_mix = Matrix{{0.0, 1.0}, {0.0, 0.0}};  // channel 1 reads post state 2
  } else {
    g.backward_mix = Matrix{{1.0, 0.0}, {0.0, 1.0}};
    g.pre_synaptic_mix = Matrix{{1.0, 0.0}, {0.0, 1.0}};
    g.post_synaptic_mix = Matrix{{0.0, 1.0}, {1.0, 0.0}};
  }
  g.norm_mean = Vector::Zero(2);
  g.norm_std = Vector::Ones(2);
  g.oja_multiplier = 0.0;
  g.activation = activation;
  g.validate();
  return g;
}

// Seeded random genome. Transform matrices are zero-mean with deviation
// `scale`; gates start at the stable point (forget ~0 for neurons, ~1 for
// synapses) with jitter of the same scale.
inline Genome random_init(int k, std::uint64_t seed, double scale) {
  if (k < 1) throw ValidationError("random_init: k must be >= 1");
  if (!(scale > 0.0)) throw ValidationError("random_init: scale must be positive");

  Rng rng(seed);
  Genome g;
  g.num_states = k;
  g.forward_mix = rng.normal_matrix(k, k, scale);
  g.backward_mix = rng.normal_matrix(k, k, scale);
  g.pre_synaptic_mix = rng.normal_matrix(k, k, scale);
  g.post_synaptic_mix = rng.normal_matrix(k, k, scale);
  g.neuron_forget = rng.normal(0.0, scale);
  g.neuron_update = rng.normal(1.0, scale);
  g.synapse_forget = rng.normal(1.0, scale);
  g.synapse_update = rng.normal(0.0, scale);
  g.norm_mean = Vector(k);
  g.norm_std = Vector(k);
  for (int c = 0; c < k; ++c) g.norm_mean[c] = rng.normal(0.0, scale);
  // Deviations must stay positive for the genome to be valid at any scale.
  for (int c = 0; c < k; ++c) g.norm_std[c] = std::max(0.01, rng.normal(1.0, scale));
  g.oja_multiplier = rng.normal(0.0, scale);
  g.validate();
  return g;
}

// Which genome fields the meta-optimizer is allowed to vary.
struct OptimizeFlags {
  bool neuron_forget = true;
  bool neuron_update = true;
  bool synapse_forget = true;
  bool synapse_update = true;
  bool forward_mix = true;
  bool backward_mix = true;
  bool pre_synaptic_mix = true;
  bool post_synaptic_mix = true;
  bool norm_mean = true;
  bool norm_std = true;
  bool oja_multiplier = true;
  bool saturation_scale = true;  // ignored unless the layout has saturation
};

// Fixed flat ordering of the optimized parameters. Frozen fields are omitted
// from the vector and come from `defaults` on decode.
//
// Order (stable across versions):
//   neuron_forget, neuron_update, synapse_forget, synapse_update,
//   forward_mix, backward_mix, pre_synaptic_mix, post_synaptic_mix
//     (each row-major),
//   norm_mean, norm_std, oja_multiplier, saturation_scale (when enabled).
struct GenomeLayout {
  int num_states = 2;
  bool has_saturation = false;
  OptimizeFlags optimize;
  Genome defaults;

  static GenomeLayout full(const Genome& g) {
    GenomeLayout layout;
    layout.num_states = g.num_states;
    layout.has_saturation = g.saturation_scale.has_value();
    layout.defaults = g;
    return layout;
  }

  int flat_size() const {
    const int k = num_states;
    int n = 0;
    n += optimize.neuron_forget + optimize.neuron_update + optimize.synapse_forget +
         optimize.synapse_update;
    n += (optimize.forward_mix + optimize.backward_mix + optimize.pre_synaptic_mix +
          optimize.post_synaptic_mix) *
         k * k;
    n += (optimize.norm_mean + optimize.norm_std) * k;
    n += optimize.oja_multiplier ? 1 : 0;
    if (has_saturation && optimize.saturation_scale) n += 1;
    return n;
  }
};

inline Vector encode(const Genome& g, const GenomeLayout& layout) {
  if (g.num_states != layout.num_states)
    throw LayoutError("encode: genome and layout disagree on the state count");
  if (layout.has_saturation != g.saturation_scale.has_value())
    throw LayoutError("encode: genome and layout disagree on saturation");
  Vector v(layout.flat_size());
  Eigen::Index p = 0;
  auto put = [&](double x) { v[p++] = x; };
  auto put_matrix = [&](const Matrix& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) put(m(r, c));
  };
  const auto& f = layout.optimize;
  if (f.neuron_forget) put(g.neuron_forget);
  if (f.neuron_update) put(g.neuron_update);
  if (f.synapse_forget) put(g.synapse_forget);
  if (f.synapse_update) put(g.synapse_update);
  if (f.forward_mix) put_matrix(g.forward_mix);
  if (f.backward_mix) put_matrix(g.backward_mix);
  if (f.pre_synaptic_mix) put_matrix(g.pre_synaptic_mix);
  if (f.post_synaptic_mix) put_matrix(g.post_synaptic_mix);
  if (f.norm_mean)
    for (int c = 0; c < layout.num_states; ++c) put(g.norm_mean[c]);
  if (f.norm_std)
    for (int c = 0; c < layout.num_states; ++c) put(g.norm_std[c]);
  if (f.oja_multiplier) put(g.oja_multiplier);
  if (layout.has_saturation && f.saturation_scale) put(*g.saturation_scale);
  return v;
}

inline Genome decode(const Vector& v, const GenomeLayout& layout) {
  if (v.size() != layout.flat_size())
    throw LayoutError("decode: vector length " + std::to_string(v.size()) +
                      " does not match layout size " + std::to_string(layout.flat_size()));
  if (!v.allFinite()) throw ValidationError("decode: flat vector has non-finite entries");

  Genome g = layout.defaults;
  g.num_states = layout.num_states;
  Eigen::Index p = 0;
  auto take = [&]() { return v[p++]; };
  auto take_matrix = [&](Matrix& m) {
    m.resize(layout.num_states, layout.num_states);
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = take();
  };
  const auto& f = layout.optimize;
  if (f.neuron_forget) g.neuron_forget = take();
  if (f.neuron_update) g.neuron_update = take();
  if (f.synapse_forget) g.synapse_forget = take();
  if (f.synapse_update) g.synapse_update = take();
  if (f.forward_mix) take_matrix(g.forward_mix);
  if (f.backward_mix) take_matrix(g.backward_mix);
  if (f.pre_synaptic_mix) take_matrix(g.pre_synaptic_mix);
  if (f.post_synaptic_mix) take_matrix(g.post_synaptic_mix);
  if (f.norm_mean) {
    g.norm_mean.resize(layout.num_states);
    for (int c = 0; c < layout.num_states; ++c) g.norm_mean[c] = take();
  }
  if (f.norm_std) {
    g.norm_std.resize(layout.num_states);
    for (int c = 0; c < layout.num_states; ++c) g.norm_std[c] = take();
  }
  if (f.oja_multiplier) g.oja_multiplier = take();
  if (layout.has_saturation) {
    if (f.saturation_scale)
      g.saturation_scale = take();
    else
      g.saturation_scale = layout.defaults.saturation_scale;
  } else {
    g.saturation_scale.reset();
  }
  g.validate();
  return g;
}

// --- persistence ------------------------------------------------------------
//
// Genome files are JSON with layout metadata plus the complete parameter set
// as a flat vector (all fields, canonical order). Doubles are serialized with
// shortest round-trip precision, so save/load is exact.

namespace detail {

inline nlohmann::ordered_json flags_to_json(const OptimizeFlags& f) {
  return nlohmann::ordered_json{{"neuron_forget", f.neuron_forget},
                                {"neuron_update", f.neuron_update},
                                {"synapse_forget", f.synapse_forget},
                                {"synapse_update", f.synapse_update},
                                {"forward_mix", f.forward_mix},
                                {"backward_mix", f.backward_mix},
                                {"pre_synaptic_mix", f.pre_synaptic_mix},
                                {"post_synaptic_mix", f.post_synaptic_mix},
                                {"norm_mean", f.norm_mean},
                                {"norm_std", f.norm_std},
                                {"oja_multiplier", f.oja_multiplier},
                                {"saturation_scale", f.saturation_scale}};
}

inline OptimizeFlags flags_from_json(const nlohmann::json& j) {
  OptimizeFlags f;
  f.neuron_forget = j.at("neuron_forget").get<bool>();
  f.neuron_update = j.at("neuron_update").get<bool>();
  f.synapse_forget = j.at("synapse_forget").get<bool>();
  f.synapse_update = j.at("synapse_update").get<bool>();
  f.forward_mix = j.at("forward_mix").get<bool>();
  f.backward_mix = j.at("backward_mix").get<bool>();
  f.pre_synaptic_mix = j.at("pre_synaptic_mix").get<bool>();
  f.post_synaptic_mix = j.at("post_synaptic_mix").get<bool>();
  f.norm_mean = j.at("norm_mean").get<bool>();
  f.norm_std = j.at("norm_std").get<bool>();
  f.oja_multiplier = j.at("oja_multiplier").get<bool>();
  f.saturation_scale = j.at("saturation_scale").get<bool>();
  return f;
}

}  // namespace detail

inline void save_genome(const std::filesystem::path& path, const Genome& genome,
                        const GenomeLayout& layout) {
  genome.validate();
  GenomeLayout full = GenomeLayout::full(genome);
  Vector flat = encode(genome, full);

  nlohmann::ordered_json j;
  j["format"] = "blur-genome";
  j["version"] = 1;
  j["num_states"] = genome.num_states;
  j["activation"] = to_string(genome.activation);
  j["has_saturation"] = genome.saturation_scale.has_value();
  j["optimize"] = detail::flags_to_json(layout.optimize);
  j["flat"] = std::vector<double>(flat.data(), flat.data() + flat.size());

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write genome file: " + path.string());
  out << j.dump(2) << "\n";
}

inline std::pair<Genome, GenomeLayout> load_genome(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read genome file: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("genome file " + path.string() + ": " + e.what());
  }
  if (j.value("format", "") != std::string("blur-genome"))
    throw DataError("genome file " + path.string() + ": unexpected format tag");
  if (j.value("version", 0) != 1)
    throw DataError("genome file " + path.string() + ": unsupported version");

  GenomeLayout full;
  full.num_states = j.at("num_states").get<int>();
  full.has_saturation = j.at("has_saturation").get<bool>();
  full.defaults.num_states = full.num_states;
  full.defaults.activation = activation_from_string(j.at("activation").get<std::string>());
  if (full.has_saturation) full.defaults.saturation_scale = 1.0;  // placeholder, overwritten

  auto values = j.at("flat").get<std::vector<double>>();
  Vector flat = Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
  Genome genome = decode(flat, full);

  GenomeLayout layout = GenomeLayout::full(genome);
  layout.optimize = detail::flags_from_json(j.at("optimize"));
  return {genome, layout};
}

}  // namespace blur
