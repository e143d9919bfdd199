#pragma once

#include "blur/common.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace blur {

// Shortest decimal representation that parses back to the same double;
// output is deterministic, so reruns produce byte-identical files.
inline std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

// Minimal writer for the experiment CSVs: fixed header, one row per call,
// LF endings, no timestamps.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header)
      : out_(path, std::ios::binary) {
    if (!out_) throw DataError("cannot write CSV file: " + path.string());
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (i) out_ << ',';
      out_ << header[i];
    }
    out_ << '\n';
  }

  template <typename... Cells>
  void row(const Cells&... cells) {
    bool first = true;
    ((write_cell(cells, first), first = false), ...);
    out_ << '\n';
  }

 private:
  void write_cell(double v, bool first) {
    if (!first) out_ << ',';
    out_ << format_double(v);
  }
  void write_cell(int v, bool first) {
    if (!first) out_ << ',';
    out_ << v;
  }
  void write_cell(long v, bool first) {
    if (!first) out_ << ',';
    out_ << v;
  }
  void write_cell(const std::string& v, bool first) {
    if (!first) out_ << ',';
    out_ << v;
  }
  void write_cell(const char* v, bool first) {
    if (!first) out_ << ',';
    out_ << v;
  }

  std::ofstream out_;
};

}  // namespace blur
