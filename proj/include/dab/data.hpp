#pragma once

// Dataset generators and the IDX image format.
//
// Generators draw from caller-supplied Rng streams. The synthetic shapes set
// is a 16x16 four-class corpus (horizontal bar, vertical bar, square,
// diagonal) with jittered placement, balanced across classes; it stands in
// for a real image corpus at desk scale. IDX files (big-endian magic
// 0x803/0x801) load with >=128 binarization for real corpora dropped into a
// directory.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "dab/hard.hpp"
#include "dab/rng.hpp"
#include "dab/tensor.hpp"

namespace dab {

inline Tensor gen_uniform(Rng& rng, Shape shape, double lo, double hi) {
  if (!(lo < hi)) throw ConfigError("gen_uniform: need lo < hi");
  std::vector<double> vals(numel(shape));
  for (auto& v : vals) v = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(vals));
}

namespace detail {

// Minibatch plumbing shared by the training loops.

inline Tensor gather_rows(const Tensor& src, const std::vector<std::size_t>& idx, std::size_t lo,
                          std::size_t hi) {
  const std::size_t c = src.shape()[1];
  std::vector<double> vals((hi - lo) * c);
  for (std::size_t i = lo; i < hi; ++i) {
    std::copy_n(src.data() + idx[i] * c, c, vals.data() + (i - lo) * c);
  }
  return Tensor(Shape{hi - lo, c}, std::move(vals));
}

inline Tensor take_rows(const Tensor& src, std::size_t lo, std::size_t hi) {
  const std::size_t c = src.shape()[1];
  return Tensor(Shape{hi - lo, c},
                std::vector<double>(src.data() + lo * c, src.data() + hi * c));
}

inline void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    std::swap(idx[i - 1], idx[rng.below(i)]);
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Sorting task
// ---------------------------------------------------------------------------

// x: [n, t] uniform draws. y: [n, t*t] one-hot blocks; block j encodes which
// input position holds the j-th smallest value, so a model must output a
// permutation, one softmax per output slot.
struct SortDataset {
  Tensor x;
  Tensor y;
  std::size_t t = 0;
  std::size_t n = 0;
};

inline SortDataset make_sort_dataset(Rng& rng, std::size_t n, std::size_t t, double lo = -1.0,
                                     double hi = 1.0) {
  if (n == 0 || t == 0) throw ConfigError("make_sort_dataset: need n > 0 and t > 0");
  SortDataset d;
  d.t = t;
  d.n = n;
  d.x = gen_uniform(rng, {n, t}, lo, hi);
  std::vector<double> y(n * t * t, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::vector<std::size_t> order = stable_argsort({d.x.data() + i * t, t});
    for (std::size_t j = 0; j < t; ++j) y[i * t * t + j * t + order[j]] = 1.0;
  }
  d.y = Tensor(Shape{n, t * t}, std::move(y));
  return d;
}

// ---------------------------------------------------------------------------
// Labeled images
// ---------------------------------------------------------------------------

struct LabeledImages {
  Tensor images;  // [n, dim], values in [0, 1]
  std::vector<int> labels;
  int num_classes = 0;

  std::size_t count() const { return images.rank() == 2 ? images.shape()[0] : 0; }
  std::size_t dim() const { return images.rank() == 2 ? images.shape()[1] : 0; }
};

// Four 16x16 shape classes with jittered placement, assigned round-robin so
// class counts differ by at most one.
inline LabeledImages gen_shapes(Rng& rng, std::size_t n) {
  constexpr std::size_t side = 16;
  constexpr std::size_t dim = side * side;
  if (n < 4) throw ConfigError("gen_shapes: need at least one image per class");
  std::vector<double> pixels(n * dim, 0.0);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int cls = static_cast<int>(i % 4);
    labels[i] = cls;
    double* img = pixels.data() + i * dim;
    auto set = [img](std::size_t r, std::size_t c) {
      if (r < side && c < side) img[r * side + c] = 1.0;
    };
    switch (cls) {
      case 0: {  // horizontal bar, thickness 2
        const std::size_t r0 = 1 + rng.below(side - 3);
        for (std::size_t c = 0; c < side; ++c) {
          set(r0, c);
          set(r0 + 1, c);
        }
        break;
      }
      case 1: {  // vertical bar, thickness 2
        const std::size_t c0 = 1 + rng.below(side - 3);
        for (std::size_t r = 0; r < side; ++r) {
          set(r, c0);
          set(r, c0 + 1);
        }
        break;
      }
      case 2: {  // filled 6x6 square
        const std::size_t r0 = 1 + rng.below(side - 7);
        const std::size_t c0 = 1 + rng.below(side - 7);
        for (std::size_t r = r0; r < r0 + 6; ++r)
          for (std::size_t c = c0; c < c0 + 6; ++c) set(r, c);
        break;
      }
      default: {  // diagonal band, thickness 2
        const int off = static_cast<int>(rng.below(9)) - 4;
        for (std::size_t r = 0; r < side; ++r) {
          const int c = static_cast<int>(r) + off;
          if (c >= 0) {
            set(r, static_cast<std::size_t>(c));
            set(r, static_cast<std::size_t>(c) + 1);
          }
        }
        break;
      }
    }
  }
  LabeledImages out;
  out.images = Tensor(Shape{n, dim}, std::move(pixels));
  out.labels = std::move(labels);
  out.num_classes = 4;
  return out;
}

// ---------------------------------------------------------------------------
// IDX format
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open file: " + path);
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in),
                                    std::istreambuf_iterator<char>());
}

inline std::uint32_t read_be32(const unsigned char* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
         std::uint32_t(p[3]);
}

inline void write_be32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

// Images file (magic 0x00000803): pixels binarized with byte >= 128 -> 1.
inline Tensor load_idx_images(const std::string& path) {
  const auto bytes = detail::read_file_bytes(path);
  if (bytes.size() < 16) {
    throw ParseError("IDX images file too short (" + std::to_string(bytes.size()) +
                     " bytes, need at least a 16-byte header): " + path);
  }
  const std::uint32_t magic = detail::read_be32(bytes.data());
  if (magic != 0x803u) {
    throw ParseError("bad IDX images magic in " + path + ": expected 0x00000803");
  }
  const std::size_t n = detail::read_be32(bytes.data() + 4);
  const std::size_t rows = detail::read_be32(bytes.data() + 8);
  const std::size_t cols = detail::read_be32(bytes.data() + 12);
  const std::size_t expected = 16 + n * rows * cols;
  if (bytes.size() != expected) {
    throw ParseError("IDX images size mismatch in " + path + ": header implies " +
                     std::to_string(expected) + " bytes, file has " +
                     std::to_string(bytes.size()));
  }
  std::vector<double> vals(n * rows * cols);
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = bytes[16 + i] >= 128 ? 1.0 : 0.0;
  return Tensor(Shape{n, rows * cols}, std::move(vals));
}

// Labels file (magic 0x00000801).
inline std::vector<int> load_idx_labels(const std::string& path) {
  const auto bytes = detail::read_file_bytes(path);
  if (bytes.size() < 8) {
    throw ParseError("IDX labels file too short (" + std::to_string(bytes.size()) +
                     " bytes, need at least an 8-byte header): " + path);
  }
  const std::uint32_t magic = detail::read_be32(bytes.data());
  if (magic != 0x801u) {
    throw ParseError("bad IDX labels magic in " + path + ": expected 0x00000801");
  }
  const std::size_t n = detail::read_be32(bytes.data() + 4);
  if (bytes.size() != 8 + n) {
    throw ParseError("IDX labels size mismatch in " + path + ": header implies " +
                     std::to_string(8 + n) + " bytes, file has " + std::to_string(bytes.size()));
  }
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = bytes[8 + i];
  return labels;
}

inline LabeledImages load_idx_pair(const std::string& images_path,
                                   const std::string& labels_path) {
  LabeledImages out;
  out.images = load_idx_images(images_path);
  out.labels = load_idx_labels(labels_path);
  if (out.images.shape()[0] != out.labels.size()) {
    throw ParseError("IDX pair mismatch: " + std::to_string(out.images.shape()[0]) +
                     " images vs " + std::to_string(out.labels.size()) + " labels");
  }
  int max_label = 0;
  for (int l : out.labels) max_label = std::max(max_label, l);
  out.num_classes = max_label + 1;
  return out;
}

// Fixture writers (round-trip testing and tiny corpora).
inline void write_idx_images(const std::string& path, const std::vector<unsigned char>& pixels,
                             std::size_t n, std::size_t rows, std::size_t cols) {
  if (pixels.size() != n * rows * cols) {
    throw ConfigError("write_idx_images: pixel count does not match dimensions");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write file: " + path);
  detail::write_be32(out, 0x803u);
  detail::write_be32(out, static_cast<std::uint32_t>(n));
  detail::write_be32(out, static_cast<std::uint32_t>(rows));
  detail::write_be32(out, static_cast<std::uint32_t>(cols));
  out.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
}

inline void write_idx_labels(const std::string& path, const std::vector<unsigned char>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write file: " + path);
  detail::write_be32(out, 0x801u);
  detail::write_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()),
            static_cast<std::streamsize>(labels.size()));
}

}  // namespace dab
