#pragma once

// Shared helpers for the test suites: synthetic IDX files and small
// dataset builders.

#include "blur/common.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

namespace blur_test {

inline void write_be32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<char*>(b), 4);
}

inline void write_idx_images(const std::filesystem::path& path,
                             const std::vector<std::vector<std::uint8_t>>& images, int rows,
                             int cols, std::uint32_t magic = 0x00000803u) {
  std::ofstream out(path, std::ios::binary);
  write_be32(out, magic);
  write_be32(out, static_cast<std::uint32_t>(images.size()));
  write_be32(out, static_cast<std::uint32_t>(rows));
  write_be32(out, static_cast<std::uint32_t>(cols));
  for (const auto& img : images)
    out.write(reinterpret_cast<const char*>(img.data()),
              static_cast<std::streamsize>(img.size()));
}

inline void write_idx_labels(const std::filesystem::path& path,
                             const std::vector<std::uint8_t>& labels,
                             std::uint32_t magic = 0x00000801u) {
  std::ofstream out(path, std::ios::binary);
  write_be32(out, magic);
  write_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()),
            static_cast<std::streamsize>(labels.size()));
}

// Synthetic image classification set: class c is a bright horizontal band at
// row c (plus noise), which a linear readout separates easily. Returns the
// pair of file paths (images, labels).
inline std::pair<std::filesystem::path, std::filesystem::path> make_band_idx(
    const std::filesystem::path& dir, int num_classes, int per_class, int side,
    std::uint64_t seed) {
  blur::Rng rng(seed);
  std::vector<std::vector<std::uint8_t>> images;
  std::vector<std::uint8_t> labels;
  const int band = side / num_classes;
  for (int i = 0; i < per_class * num_classes; ++i) {
    const int label = i % num_classes;
    std::vector<std::uint8_t> img(static_cast<std::size_t>(side) * side, 0);
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) {
        const bool in_band = y >= label * band && y < (label + 1) * band;
        double v = in_band ? 200.0 : 30.0;
        v += 25.0 * rng.normal();
        img[static_cast<std::size_t>(y) * side + x] =
            static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
    images.push_back(std::move(img));
    labels.push_back(static_cast<std::uint8_t>(label));
  }
  std::filesystem::create_directories(dir);
  auto img_path = dir / "bands-images-idx3-ubyte";
  auto lab_path = dir / "bands-labels-idx1-ubyte";
  write_idx_images(img_path, images, side, side);
  write_idx_labels(lab_path, labels);
  return {img_path, lab_path};
}

}  // namespace blur_test
