#pragma once

#include "blur/common.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

namespace blur {

// --- toy 2-D classification tasks -------------------------------------------

enum class BoolOp { And, Or, Xor, Nand, Nor, Xnor };

inline std::string to_string(BoolOp op) {
  switch (op) {
    case BoolOp::And: return "and";
    case BoolOp::Or: return "or";
    case BoolOp::Xor: return "xor";
    case BoolOp::Nand: return "nand";
    case BoolOp::Nor: return "nor";
    case BoolOp::Xnor: return "xnor";
  }
  return "xor";
}

inline BoolOp bool_op_from_string(const std::string& s) {
  if (s == "and") return BoolOp::And;
  if (s == "or") return BoolOp::Or;
  if (s == "xor") return BoolOp::Xor;
  if (s == "nand") return BoolOp::Nand;
  if (s == "nor") return BoolOp::Nor;
  if (s == "xnor") return BoolOp::Xnor;
  throw ValidationError("unknown boolean op: " + s);
}

inline int apply_bool_op(BoolOp op, bool a, bool b) {
  switch (op) {
    case BoolOp::And: return a && b;
    case BoolOp::Or: return a || b;
    case BoolOp::Xor: return a != b;
    case BoolOp::Nand: return !(a && b);
    case BoolOp::Nor: return !(a || b);
    case BoolOp::Xnor: return a == b;
  }
  return 0;
}

// Samples around the four corners of {-1, +1}^2 with Gaussian jitter.
// Classes are balanced: the label is drawn first, then a corner of that class.
inline TaskBatch gen_boolean(BoolOp op, int n, double noise, Rng& rng) {
  std::vector<std::pair<double, double>> corners_true, corners_false;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) {
      auto corner = std::make_pair(a ? 1.0 : -1.0, b ? 1.0 : -1.0);
      (apply_bool_op(op, a, b) ? corners_true : corners_false).push_back(corner);
    }
  TaskBatch batch;
  batch.inputs.resize(n, 2);
  batch.labels.resize(static_cast<std::size_t>(n));
  for (int s = 0; s < n; ++s) {
    const int label = s % 2;  // alternate classes for exact balance
    const auto& pool = label ? corners_true : corners_false;
    const auto& corner = pool[rng.integer(pool.size())];
    batch.inputs(s, 0) = corner.first + noise * rng.normal();
    batch.inputs(s, 1) = corner.second + noise * rng.normal();
    batch.labels[static_cast<std::size_t>(s)] = label;
  }
  return batch;
}

// Two interleaved half-circles, rescaled into [-1, 1]^2 by the fixed affine
// map of the noiseless arcs' bounding box.
inline TaskBatch gen_moons(int n, double noise, Rng& rng) {
  TaskBatch batch;
  batch.inputs.resize(n, 2);
  batch.labels.resize(static_cast<std::size_t>(n));
  for (int s = 0; s < n; ++s) {
    const int label = s % 2;
    const double t = M_PI * rng.uniform();
    double x, y;
    if (label == 0) {
      x = std::cos(t);
      y = std::sin(t);
    } else {
      x = 1.0 - std::cos(t);
      y = 0.5 - std::sin(t);
    }
    x += noise * rng.normal();
    y += noise * rng.normal();
    // Noiseless bounds: x in [-1, 2], y in [-0.5, 1].
    batch.inputs(s, 0) = (x - 0.5) * (2.0 / 3.0);
    batch.inputs(s, 1) = (y - 0.25) * (2.0 / 1.5);
    batch.labels[static_cast<std::size_t>(s)] = label;
  }
  return batch;
}

// Isotropic Gaussian clusters with centers equally spaced on a circle of
// radius 0.7 (rotation drawn from the center seed), so classes stay separated
// for any reasonable class count.
struct BlobCenters {
  std::vector<std::pair<double, double>> centers;

  BlobCenters(int num_classes, std::uint64_t seed) {
    Rng rng(seed);
    const double rotation = 2.0 * M_PI * rng.uniform();
    for (int c = 0; c < num_classes; ++c) {
      const double angle = rotation + 2.0 * M_PI * c / num_classes;
      centers.emplace_back(0.7 * std::cos(angle), 0.7 * std::sin(angle));
    }
  }
};

inline TaskBatch gen_blobs(int n, const BlobCenters& centers, double cluster_std, Rng& rng) {
  const int d = static_cast<int>(centers.centers.size());
  TaskBatch batch;
  batch.inputs.resize(n, 2);
  batch.labels.resize(static_cast<std::size_t>(n));
  for (int s = 0; s < n; ++s) {
    const int label = s % d;
    batch.inputs(s, 0) = centers.centers[label].first + cluster_std * rng.normal();
    batch.inputs(s, 1) = centers.centers[label].second + cluster_std * rng.normal();
    batch.labels[static_cast<std::size_t>(s)] = label;
  }
  return batch;
}

// --- IDX image datasets ------------------------------------------------------

struct RawIdxDataset {
  int count = 0;
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> images;  // count * rows * cols bytes
  std::vector<std::uint8_t> labels;  // count bytes
};

namespace detail {

inline std::uint32_t read_be32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw IdxTruncatedError("truncated IDX header in " + path);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

}  // namespace detail

// Reads one images file (magic 2051) plus its labels file (magic 2049).
inline RawIdxDataset idx_load(const std::filesystem::path& images_path,
                              const std::filesystem::path& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw DataError("cannot open IDX images file: " + images_path.string());
  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw DataError("cannot open IDX labels file: " + labels_path.string());

  const std::uint32_t img_magic = detail::read_be32(img, images_path.string());
  if (img_magic != 0x00000803u)
    throw IdxMagicError("bad magic " + std::to_string(img_magic) + " in images file " +
                        images_path.string());
  RawIdxDataset ds;
  const std::uint32_t n = detail::read_be32(img, images_path.string());
  ds.rows = static_cast<int>(detail::read_be32(img, images_path.string()));
  ds.cols = static_cast<int>(detail::read_be32(img, images_path.string()));
  ds.count = static_cast<int>(n);
  ds.images.resize(static_cast<std::size_t>(ds.count) * ds.rows * ds.cols);
  img.read(reinterpret_cast<char*>(ds.images.data()),
           static_cast<std::streamsize>(ds.images.size()));
  if (img.gcount() != static_cast<std::streamsize>(ds.images.size()))
    throw IdxTruncatedError("images file " + images_path.string() + " is truncated");

  const std::uint32_t lab_magic = detail::read_be32(lab, labels_path.string());
  if (lab_magic != 0x00000801u)
    throw IdxMagicError("bad magic " + std::to_string(lab_magic) + " in labels file " +
                        labels_path.string());
  const std::uint32_t label_count = detail::read_be32(lab, labels_path.string());
  if (label_count != n)
    throw IdxCountError("IDX pair mismatch: " + std::to_string(n) + " images vs " +
                        std::to_string(label_count) + " labels");
  ds.labels.resize(label_count);
  lab.read(reinterpret_cast<char*>(ds.labels.data()),
           static_cast<std::streamsize>(ds.labels.size()));
  if (lab.gcount() != static_cast<std::streamsize>(ds.labels.size()))
    throw IdxTruncatedError("labels file " + labels_path.string() + " is truncated");
  return ds;
}

// Flattened, preprocessed image data ready for batching.
struct Dataset {
  Matrix inputs;  // count x (resize * resize)
  std::vector<int> labels;
  int num_classes = 0;
};

// Center-crop then box-average down to resize x resize (exact fractional-area
// weighting when the sizes do not divide), map pixels to [0, 1], then affinely
// onto [range_lo, range_hi]. Rows are flattened row-major.
inline Dataset preprocess(const RawIdxDataset& raw, int crop, int resize, double range_lo,
                          double range_hi) {
  if (crop < 1 || crop > std::min(raw.rows, raw.cols))
    throw ValidationError("preprocess: crop must be in [1, image size]");
  if (resize < 1 || resize > crop)
    throw ValidationError("preprocess: resize must be in [1, crop]");

  const int row0 = (raw.rows - crop) / 2;
  const int col0 = (raw.cols - crop) / 2;
  const double box = static_cast<double>(crop) / resize;

  Dataset ds;
  ds.inputs.resize(raw.count, resize * resize);
  ds.labels.resize(static_cast<std::size_t>(raw.count));
  int max_label = 0;
  for (int s = 0; s < raw.count; ++s) {
    const std::uint8_t* img =
        raw.images.data() + static_cast<std::size_t>(s) * raw.rows * raw.cols;
    for (int oy = 0; oy < resize; ++oy) {
      for (int ox = 0; ox < resize; ++ox) {
        const double y_lo = oy * box, y_hi = (oy + 1) * box;
        const double x_lo = ox * box, x_hi = (ox + 1) * box;
        double acc = 0.0;
        for (int y = static_cast<int>(y_lo); y < static_cast<int>(std::ceil(y_hi)); ++y) {
          const double wy = std::min<double>(y + 1, y_hi) - std::max<double>(y, y_lo);
          for (int x = static_cast<int>(x_lo); x < static_cast<int>(std::ceil(x_hi)); ++x) {
            const double wx = std::min<double>(x + 1, x_hi) - std::max<double>(x, x_lo);
            acc += wy * wx * img[(row0 + y) * raw.cols + (col0 + x)];
          }
        }
        const double mean = acc / (box * box) / 255.0;
        ds.inputs(s, oy * resize + ox) = range_lo + mean * (range_hi - range_lo);
      }
    }
    ds.labels[static_cast<std::size_t>(s)] = raw.labels[static_cast<std::size_t>(s)];
    max_label = std::max(max_label, ds.labels[static_cast<std::size_t>(s)]);
  }
  ds.num_classes = max_label + 1;
  return ds;
}

// Keeps only the listed classes, relabeled to 0..m-1 in list order.
inline Dataset class_subset(const Dataset& ds, const std::vector<int>& classes) {
  if (classes.empty()) throw ValidationError("class_subset: class list is empty");
  std::vector<int> remap(static_cast<std::size_t>(ds.num_classes), -1);
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i] < 0 || classes[i] >= ds.num_classes)
      throw ValidationError("class_subset: class " + std::to_string(classes[i]) +
                            " outside the dataset");
    remap[static_cast<std::size_t>(classes[i])] = static_cast<int>(i);
  }
  std::vector<Eigen::Index> keep;
  for (std::size_t s = 0; s < ds.labels.size(); ++s)
    if (remap[static_cast<std::size_t>(ds.labels[s])] >= 0)
      keep.push_back(static_cast<Eigen::Index>(s));

  Dataset out;
  out.inputs.resize(static_cast<Eigen::Index>(keep.size()), ds.inputs.cols());
  out.labels.resize(keep.size());
  for (std::size_t i = 0; i < keep.size(); ++i) {
    out.inputs.row(static_cast<Eigen::Index>(i)) = ds.inputs.row(keep[i]);
    out.labels[i] = remap[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(keep[i])])];
  }
  out.num_classes = static_cast<int>(classes.size());
  return out;
}

// --- batch streams -----------------------------------------------------------

// A seeded, reproducible source of batches for one consumer.
class TaskStream {
 public:
  virtual ~TaskStream() = default;
  virtual TaskBatch next_batch(int batch_size) = 0;
  virtual int input_dim() const = 0;
  virtual int num_classes() const = 0;
};

class BooleanStream final : public TaskStream {
 public:
  BooleanStream(BoolOp op, double noise, std::uint64_t seed)
      : op_(op), noise_(noise), rng_(seed) {}
  TaskBatch next_batch(int batch_size) override {
    return gen_boolean(op_, batch_size, noise_, rng_);
  }
  int input_dim() const override { return 2; }
  int num_classes() const override { return 2; }

 private:
  BoolOp op_;
  double noise_;
  Rng rng_;
};

class MoonsStream final : public TaskStream {
 public:
  MoonsStream(double noise, std::uint64_t seed) : noise_(noise), rng_(seed) {}
  TaskBatch next_batch(int batch_size) override { return gen_moons(batch_size, noise_, rng_); }
  int input_dim() const override { return 2; }
  int num_classes() const override { return 2; }

 private:
  double noise_;
  Rng rng_;
};

class BlobsStream final : public TaskStream {
 public:
  BlobsStream(int classes, double cluster_std, std::uint64_t seed)
      : centers_(classes, mix_seed(seed, 0xb10b5)), cluster_std_(cluster_std), rng_(seed) {}
  TaskBatch next_batch(int batch_size) override {
    return gen_blobs(batch_size, centers_, cluster_std_, rng_);
  }
  int input_dim() const override { return 2; }
  int num_classes() const override { return static_cast<int>(centers_.centers.size()); }

 private:
  BlobCenters centers_;
  double cluster_std_;
  Rng rng_;
};

// Shuffled epochs over a fixed dataset. Every batch has exactly the requested
// size; an epoch's tail spills into the next shuffled epoch, so each epoch
// still covers every sample exactly once.
class DatasetStream final : public TaskStream {
 public:
  DatasetStream(std::shared_ptr<const Dataset> ds, std::uint64_t seed)
      : ds_(std::move(ds)), rng_(seed) {
    if (ds_->labels.empty()) throw ValidationError("batch_stream: dataset is empty");
  }

  TaskBatch next_batch(int batch_size) override {
    TaskBatch batch;
    batch.inputs.resize(batch_size, ds_->inputs.cols());
    batch.labels.resize(static_cast<std::size_t>(batch_size));
    for (int i = 0; i < batch_size; ++i) {
      if (cursor_ >= order_.size()) reshuffle();
      const Eigen::Index s = order_[cursor_++];
      batch.inputs.row(i) = ds_->inputs.row(s);
      batch.labels[static_cast<std::size_t>(i)] = ds_->labels[static_cast<std::size_t>(s)];
    }
    return batch;
  }

  int input_dim() const override { return static_cast<int>(ds_->inputs.cols()); }
  int num_classes() const override { return ds_->num_classes; }

 private:
  void reshuffle() {
    order_.resize(ds_->labels.size());
    std::iota(order_.begin(), order_.end(), 0);
    rng_.shuffle(order_);
    cursor_ = 0;
  }

  std::shared_ptr<const Dataset> ds_;
  Rng rng_;
  std::vector<Eigen::Index> order_;
  std::size_t cursor_ = 0;
};

inline std::unique_ptr<TaskStream> batch_stream(std::shared_ptr<const Dataset> ds,
                                                std::uint64_t seed) {
  return std::make_unique<DatasetStream>(std::move(ds), seed);
}

// Generates one batch up front and replays it forever (full-batch training).
class FixedBatchStream final : public TaskStream {
 public:
  FixedBatchStream(TaskBatch batch, int classes)
      : batch_(std::move(batch)), classes_(classes) {}
  TaskBatch next_batch(int batch_size) override {
    if (batch_size != batch_.size())
      throw ConfigError("fixed-batch stream holds " + std::to_string(batch_.size()) +
                        " samples, asked for " + std::to_string(batch_size));
    return batch_;
  }
  int input_dim() const override { return static_cast<int>(batch_.inputs.cols()); }
  int num_classes() const override { return classes_; }

 private:
  TaskBatch batch_;
  int classes_;
};

// Wraps another stream, multiplying every input by a constant (input-scaling
// ablations).
class ScaledStream final : public TaskStream {
 public:
  ScaledStream(std::unique_ptr<TaskStream> inner, double scale)
      : inner_(std::move(inner)), scale_(scale) {}
  TaskBatch next_batch(int batch_size) override {
    TaskBatch b = inner_->next_batch(batch_size);
    b.inputs *= scale_;
    return b;
  }
  int input_dim() const override { return inner_->input_dim(); }
  int num_classes() const override { return inner_->num_classes(); }

 private:
  std::unique_ptr<TaskStream> inner_;
  double scale_;
};

// --- task specification -------------------------------------------------------

struct TaskSpec {
  enum class Kind { Boolean, Moons, Blobs, Idx };
  Kind kind = Kind::Boolean;
  std::string name;  // label used in CSV output; defaults from the kind

  BoolOp op = BoolOp::Xor;
  double noise = 0.1;

  int blob_classes = 5;
  double cluster_std = 0.15;

  std::string images_path, labels_path;
  int crop = 0;    // 0: full image
  int resize = 0;  // 0: keep crop size
  double pixel_lo = -1.0, pixel_hi = 1.0;
  std::vector<int> classes;  // empty: all

  double input_scale = 1.0;
  bool fixed_batch = false;  // replay a single batch forever
  int fixed_batch_size = 256;

  std::uint64_t seed = 0;

  std::string display_name() const {
    if (!name.empty()) return name;
    switch (kind) {
      case Kind::Boolean: return to_string(op);
      case Kind::Moons: return "moons";
      case Kind::Blobs: return "blobs";
      case Kind::Idx: return "idx";
    }
    return "task";
  }
};

// Loads (and caches per call-site) the dataset behind an IDX task spec.
inline std::shared_ptr<const Dataset> load_idx_dataset(const TaskSpec& spec) {
  RawIdxDataset raw = idx_load(spec.images_path, spec.labels_path);
  const int crop = spec.crop > 0 ? spec.crop : std::min(raw.rows, raw.cols);
  const int resize = spec.resize > 0 ? spec.resize : crop;
  Dataset ds = preprocess(raw, crop, resize, spec.pixel_lo, spec.pixel_hi);
  if (!spec.classes.empty()) ds = class_subset(ds, spec.classes);
  return std::make_shared<Dataset>(std::move(ds));
}

// Builds a stream for a task spec. `stream_seed` mixes the spec's own seed so
// distinct consumers (train vs eval, ES candidates) can diverge on purpose.
// Dataset-backed specs accept a preloaded dataset to avoid re-reading files.
inline std::unique_ptr<TaskStream> make_stream(const TaskSpec& spec, std::uint64_t stream_seed,
                                               std::shared_ptr<const Dataset> preloaded = {}) {
  const std::uint64_t seed = mix_seed(spec.seed, stream_seed);
  std::unique_ptr<TaskStream> stream;
  switch (spec.kind) {
    case TaskSpec::Kind::Boolean:
      stream = std::make_unique<BooleanStream>(spec.op, spec.noise, seed);
      break;
    case TaskSpec::Kind::Moons:
      stream = std::make_unique<MoonsStream>(spec.noise, seed);
      break;
    case TaskSpec::Kind::Blobs:
      stream = std::make_unique<BlobsStream>(spec.blob_classes, spec.cluster_std, seed);
      break;
    case TaskSpec::Kind::Idx: {
      auto ds = preloaded ? std::move(preloaded) : load_idx_dataset(spec);
      stream = std::make_unique<DatasetStream>(std::move(ds), seed);
      break;
    }
  }
  if (spec.fixed_batch) {
    const int classes = stream->num_classes();
    stream = std::make_unique<FixedBatchStream>(stream->next_batch(spec.fixed_batch_size),
                                                classes);
  }
  if (spec.input_scale != 1.0)
    stream = std::make_unique<ScaledStream>(std::move(stream), spec.input_scale);
  return stream;
}

}  // namespace blur
