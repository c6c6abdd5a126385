#pragma once

// Run outputs: metrics CSV, JSON summary, build identification.
//
// Numbers are formatted through one fixed snprintf recipe, so a rerun with
// identical config and seed produces byte-identical CSV files.

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dab/errors.hpp"

namespace dab {

inline std::string fmt_num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::string build_id() {
#ifdef DAB_BUILD_ID
  return DAB_BUILD_ID;
#else
  return "unversioned";
#endif
}

class CsvWriter {
 public:
  CsvWriter(const std::string& path, std::vector<std::string> header)
      : out_(path), width_(header.size()), path_(path) {
    if (!out_) throw Error("cannot write CSV: " + path);
    write_cells(header);
  }

  void row(const std::vector<std::string>& cells) {
    if (cells.size() != width_) {
      throw Error("CSV row width " + std::to_string(cells.size()) + " does not match header (" +
                  std::to_string(width_) + ") in " + path_);
    }
    write_cells(cells);
  }

  void flush() { out_.flush(); }

 private:
  void write_cells(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ",";
      out_ << cells[i];
    }
    out_ << "\n";
  }

  std::ofstream out_;
  std::size_t width_;
  std::string path_;
};

inline void write_json(const std::string& path, const nlohmann::ordered_json& doc) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write JSON: " + path);
  out << doc.dump(2) << "\n";
}

}  // namespace dab
