#pragma once

#include "blur/meta_es.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace blur {

using Json = nlohmann::ordered_json;

// Where the genome under test comes from.
struct GenomeSource {
  enum class Type { File, Random, Backprop };
  Type type = Type::Random;
  std::string path;  // File

  int num_states = 2;          // Random / Backprop
  std::uint64_t seed = 0;      // Random
  double scale = 0.1;          // Random
  BackpropVariant variant = BackpropVariant::ChainRule;  // Backprop
  double lr = 0.1;                                       // Backprop

  Activation activation = Activation::Tanh;
  std::optional<double> saturation_scale;  // attach saturation to the genome
};

struct EsSection {
  int population = 0;  // 0: dimension-dependent default
  int parents = 0;
  double sigma0 = 0.1;
  int generations = 100;
  double target_fitness = std::numeric_limits<double>::infinity();
  FitnessMetric metric = FitnessMetric::TrainMean;
  int elite_reeval_period = 10;
  int snapshot_every = 50;
  CurriculumSpec curriculum;
  std::uint64_t seed = 0;
  std::string resume_from;  // optional es_state.json to continue from
};

struct SgdSection {
  std::vector<double> learning_rates{0.001, 0.01, 0.1, 1.0};
  double momentum = 0.0;
  int steps = 50;
  SgdLoss loss = SgdLoss::SoftmaxXent;
  Activation activation = Activation::Sigmoid;
  std::vector<int> eval_steps;  // empty: every step
};

struct AnalysisSection {
  double fd_step = 1e-5;
  int train_steps = 20;    // inner-loop steps before the anchor state
  int probe_states = 100;  // extra random states for the metric probe
  double svd_tol = 1e-8;
  double check_tol = 1e-6;
  double pd_tol = 1e-8;
  int max_weights = 60;
};

struct EvalSection {
  std::vector<int> unrolls{1, 5, 10};
};

struct ExperimentConfig {
  int version = 1;
  std::uint64_t seed = 0;
  int threads = 1;
  std::string output_dir = "out";

  GenomeSource genome;
  Architecture arch;
  std::vector<TaskSpec> tasks;
  UnrollConfig unroll;
  EsSection es;
  SgdSection sgd;
  AnalysisSection analysis;
  EvalSection eval;
};

// --- JSON (de)serialization -----------------------------------------------------

namespace detail {

inline Json task_to_json(const TaskSpec& t) {
  Json j;
  switch (t.kind) {
    case TaskSpec::Kind::Boolean:
      j["kind"] = "boolean";
      j["op"] = to_string(t.op);
      j["noise"] = t.noise;
      break;
    case TaskSpec::Kind::Moons:
      j["kind"] = "moons";
      j["noise"] = t.noise;
      break;
    case TaskSpec::Kind::Blobs:
      j["kind"] = "blobs";
      j["classes"] = t.blob_classes;
      j["cluster_std"] = t.cluster_std;
      break;
    case TaskSpec::Kind::Idx:
      j["kind"] = "idx";
      j["images"] = t.images_path;
      j["labels"] = t.labels_path;
      j["crop"] = t.crop;
      j["resize"] = t.resize;
      j["pixel_lo"] = t.pixel_lo;
      j["pixel_hi"] = t.pixel_hi;
      if (!t.classes.empty()) j["class_subset"] = t.classes;
      break;
  }
  if (!t.name.empty()) j["name"] = t.name;
  if (t.input_scale != 1.0) j["input_scale"] = t.input_scale;
  if (t.fixed_batch) {
    j["fixed_batch"] = true;
    j["fixed_batch_size"] = t.fixed_batch_size;
  }
  j["seed"] = t.seed;
  return j;
}

inline TaskSpec task_from_json(const Json& j) {
  TaskSpec t;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "boolean") {
    t.kind = TaskSpec::Kind::Boolean;
    t.op = bool_op_from_string(j.at("op").get<std::string>());
    t.noise = j.value("noise", 0.1);
  } else if (kind == "moons") {
    t.kind = TaskSpec::Kind::Moons;
    t.noise = j.value("noise", 0.1);
  } else if (kind == "blobs") {
    t.kind = TaskSpec::Kind::Blobs;
    t.blob_classes = j.value("classes", 5);
    t.cluster_std = j.value("cluster_std", 0.15);
  } else if (kind == "idx") {
    t.kind = TaskSpec::Kind::Idx;
    t.images_path = j.at("images").get<std::string>();
    t.labels_path = j.at("labels").get<std::string>();
    t.crop = j.value("crop", 0);
    t.resize = j.value("resize", 0);
    t.pixel_lo = j.value("pixel_lo", -1.0);
    t.pixel_hi = j.value("pixel_hi", 1.0);
    if (j.contains("class_subset")) t.classes = j.at("class_subset").get<std::vector<int>>();
  } else {
    throw ConfigError("unknown task kind: " + kind);
  }
  t.name = j.value("name", std::string());
  t.input_scale = j.value("input_scale", 1.0);
  t.fixed_batch = j.value("fixed_batch", false);
  t.fixed_batch_size = j.value("fixed_batch_size", 256);
  t.seed = j.value("seed", std::uint64_t{0});
  return t;
}

inline Json arch_to_json(const Architecture& a) {
  Json j;
  j["layer_sizes"] = a.layer_sizes;
  j["symmetric_synapses"] = a.symmetric_synapses;
  j["multistate_synapses"] = a.multistate_synapses;
  j["backward_mode"] = to_string(a.backward_mode);
  j["normalize_activations"] = a.normalize_activations;
  j["stabilizer"] = to_string(a.stabilizer);
  j["second_state_derivative"] = a.second_state_derivative;
  return j;
}

inline Architecture arch_from_json(const Json& j) {
  Architecture a;
  a.layer_sizes = j.at("layer_sizes").get<std::vector<int>>();
  a.symmetric_synapses = j.value("symmetric_synapses", true);
  a.multistate_synapses = j.value("multistate_synapses", true);
  a.backward_mode = backward_mode_from_string(j.value("backward_mode", "additive"));
  a.normalize_activations = j.value("normalize_activations", true);
  a.stabilizer = stabilizer_from_string(j.value("stabilizer", "none"));
  a.second_state_derivative = j.value("second_state_derivative", false);
  return a;
}

inline Json genome_source_to_json(const GenomeSource& g) {
  Json j;
  switch (g.type) {
    case GenomeSource::Type::File:
      j["source"] = "file";
      j["path"] = g.path;
      break;
    case GenomeSource::Type::Random:
      j["source"] = "random";
      j["num_states"] = g.num_states;
      j["seed"] = g.seed;
      j["scale"] = g.scale;
      break;
    case GenomeSource::Type::Backprop:
      j["source"] = "backprop";
      j["variant"] = to_string(g.variant);
      j["lr"] = g.lr;
      break;
  }
  j["activation"] = to_string(g.activation);
  if (g.saturation_scale) j["saturation_scale"] = *g.saturation_scale;
  return j;
}

inline GenomeSource genome_source_from_json(const Json& j) {
  GenomeSource g;
  const std::string source = j.at("source").get<std::string>();
  if (source == "file") {
    g.type = GenomeSource::Type::File;
    g.path = j.at("path").get<std::string>();
  } else if (source == "random") {
    g.type = GenomeSource::Type::Random;
    g.num_states = j.value("num_states", 2);
    g.seed = j.value("seed", std::uint64_t{0});
    g.scale = j.value("scale", 0.1);
  } else if (source == "backprop") {
    g.type = GenomeSource::Type::Backprop;
    g.variant = backprop_variant_from_string(j.value("variant", "chain_rule"));
    g.lr = j.value("lr", 0.1);
    g.num_states = 2;
  } else {
    throw ConfigError("unknown genome source: " + source);
  }
  g.activation = activation_from_string(j.value("activation", "tanh"));
  if (j.contains("saturation_scale")) g.saturation_scale = j.at("saturation_scale").get<double>();
  return g;
}

}  // namespace detail

inline Json config_to_json(const ExperimentConfig& c) {
  Json j;
  j["version"] = c.version;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["output_dir"] = c.output_dir;
  j["genome"] = detail::genome_source_to_json(c.genome);
  j["architecture"] = detail::arch_to_json(c.arch);
  Json tasks = Json::array();
  for (const auto& t : c.tasks) tasks.push_back(detail::task_to_json(t));
  j["tasks"] = tasks;
  j["unroll"] = Json{{"steps", c.unroll.unroll_steps},
                     {"eval_batches", c.unroll.eval_batches},
                     {"batch_size", c.unroll.batch_size},
                     {"synapse_seed", c.unroll.synapse_seed},
                     {"data_seed", c.unroll.data_seed}};
  j["es"] = Json{{"population", c.es.population},
                 {"parents", c.es.parents},
                 {"sigma0", c.es.sigma0},
                 {"generations", c.es.generations},
                 {"metric", to_string(c.es.metric)},
                 {"elite_reeval_period", c.es.elite_reeval_period},
                 {"snapshot_every", c.es.snapshot_every},
                 {"curriculum",
                  Json{{"increment", c.es.curriculum.increment}, {"period", c.es.curriculum.period}}},
                 {"seed", c.es.seed}};
  if (std::isfinite(c.es.target_fitness)) j["es"]["target_fitness"] = c.es.target_fitness;
  if (!c.es.resume_from.empty()) j["es"]["resume_from"] = c.es.resume_from;
  j["sgd"] = Json{{"learning_rates", c.sgd.learning_rates},
                  {"momentum", c.sgd.momentum},
                  {"steps", c.sgd.steps},
                  {"loss", c.sgd.loss == SgdLoss::SoftmaxXent ? "softmax_xent" : "target_feedback"},
                  {"activation", to_string(c.sgd.activation)},
                  {"eval_steps", c.sgd.eval_steps}};
  j["analysis"] = Json{{"fd_step", c.analysis.fd_step},
                       {"train_steps", c.analysis.train_steps},
                       {"probe_states", c.analysis.probe_states},
                       {"svd_tol", c.analysis.svd_tol},
                       {"check_tol", c.analysis.check_tol},
                       {"pd_tol", c.analysis.pd_tol},
                       {"max_weights", c.analysis.max_weights}};
  j["eval"] = Json{{"unrolls", c.eval.unrolls}};
  return j;
}

inline ExperimentConfig config_from_json(const Json& j) {
  ExperimentConfig c;
  c.version = j.value("version", 1);
  if (c.version != 1) throw ConfigError("unsupported config version");
  c.seed = j.value("seed", std::uint64_t{0});
  c.threads = j.value("threads", 1);
  c.output_dir = j.value("output_dir", std::string("out"));
  if (j.contains("genome")) c.genome = detail::genome_source_from_json(j.at("genome"));
  if (j.contains("architecture")) c.arch = detail::arch_from_json(j.at("architecture"));
  if (j.contains("tasks"))
    for (const auto& t : j.at("tasks")) c.tasks.push_back(detail::task_from_json(t));
  if (j.contains("unroll")) {
    const auto& u = j.at("unroll");
    c.unroll.unroll_steps = u.value("steps", 10);
    c.unroll.eval_batches = u.value("eval_batches", 20);
    c.unroll.batch_size = u.value("batch_size", 128);
    c.unroll.synapse_seed = u.value("synapse_seed", std::uint64_t{0});
    c.unroll.data_seed = u.value("data_seed", std::uint64_t{0});
  }
  if (j.contains("es")) {
    const auto& e = j.at("es");
    c.es.population = e.value("population", 0);
    c.es.parents = e.value("parents", 0);
    c.es.sigma0 = e.value("sigma0", 0.1);
    c.es.generations = e.value("generations", 100);
    c.es.target_fitness =
        e.value("target_fitness", std::numeric_limits<double>::infinity());
    c.es.metric = fitness_metric_from_string(e.value("metric", "train_mean"));
    c.es.elite_reeval_period = e.value("elite_reeval_period", 10);
    c.es.snapshot_every = e.value("snapshot_every", 50);
    if (e.contains("curriculum")) {
      c.es.curriculum.increment = e.at("curriculum").value("increment", 5);
      c.es.curriculum.period = e.at("curriculum").value("period", 0L);
    }
    c.es.seed = e.value("seed", std::uint64_t{0});
    c.es.resume_from = e.value("resume_from", std::string());
  }
  if (j.contains("sgd")) {
    const auto& s = j.at("sgd");
    if (s.contains("learning_rates"))
      c.sgd.learning_rates = s.at("learning_rates").get<std::vector<double>>();
    c.sgd.momentum = s.value("momentum", 0.0);
    c.sgd.steps = s.value("steps", 50);
    const std::string loss = s.value("loss", "softmax_xent");
    if (loss == "softmax_xent")
      c.sgd.loss = SgdLoss::SoftmaxXent;
    else if (loss == "target_feedback")
      c.sgd.loss = SgdLoss::TargetFeedback;
    else
      throw ConfigError("unknown sgd loss: " + loss);
    c.sgd.activation = activation_from_string(s.value("activation", "sigmoid"));
    if (s.contains("eval_steps")) c.sgd.eval_steps = s.at("eval_steps").get<std::vector<int>>();
  }
  if (j.contains("analysis")) {
    const auto& a = j.at("analysis");
    c.analysis.fd_step = a.value("fd_step", 1e-5);
    c.analysis.train_steps = a.value("train_steps", 20);
    c.analysis.probe_states = a.value("probe_states", 100);
    c.analysis.svd_tol = a.value("svd_tol", 1e-8);
    c.analysis.check_tol = a.value("check_tol", 1e-6);
    c.analysis.pd_tol = a.value("pd_tol", 1e-8);
    c.analysis.max_weights = a.value("max_weights", 60);
  }
  if (j.contains("eval") && j.at("eval").contains("unrolls"))
    c.eval.unrolls = j.at("eval").at("unrolls").get<std::vector<int>>();
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file: " + path.string());
  Json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

inline void save_config(const std::filesystem::path& path, const ExperimentConfig& c) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write config file: " + path.string());
  out << config_to_json(c).dump(2) << "\n";
}

// Builds the genome (and the layout the meta-optimizer will use) from the
// configured source.
inline std::pair<Genome, GenomeLayout> materialize_genome(const GenomeSource& src) {
  Genome genome;
  GenomeLayout layout;
  switch (src.type) {
    case GenomeSource::Type::File: {
      auto [g, l] = load_genome(src.path);
      return {g, l};
    }
    case GenomeSource::Type::Random:
      genome = random_init(src.num_states, src.seed, src.scale);
      genome.activation = src.activation;
      break;
    case GenomeSource::Type::Backprop:
      genome = backprop_init(2, src.variant, src.lr, src.activation);
      break;
  }
  if (src.saturation_scale) genome.saturation_scale = src.saturation_scale;
  layout = GenomeLayout::full(genome);
  return {genome, layout};
}

}  // namespace blur
