// Datasets, the IDX loader, checkpoints, CSV output, and the metric set.

#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dab/checkpoint.hpp"
#include "dab/data.hpp"
#include "dab/hard.hpp"
#include "dab/metrics.hpp"
#include "dab/report.hpp"

using Catch::Approx;
using namespace dab;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("sort datasets are reproducible and label valid permutations", "[data]") {
  Rng a = Rng::stream(17, "data");
  Rng b = Rng::stream(17, "data");
  SortDataset da = make_sort_dataset(a, 32, 5);
  SortDataset db = make_sort_dataset(b, 32, 5);
  REQUIRE(da.x.to_vector() == db.x.to_vector());
  REQUIRE(da.y.to_vector() == db.y.to_vector());
  REQUIRE((da.y.shape() == Shape{32, 25}));

  for (std::size_t i = 0; i < 32; ++i) {
    std::vector<int> used(5, 0);
    std::vector<double> picked(5);
    for (std::size_t j = 0; j < 5; ++j) {
      const double* block = da.y.data() + i * 25 + j * 5;
      double s = 0.0;
      std::size_t arg = 0;
      for (std::size_t p = 0; p < 5; ++p) {
        s += block[p];
        if (block[p] == 1.0) arg = p;
      }
      REQUIRE(s == 1.0);  // one-hot
      ++used[arg];
      picked[j] = da.x.at(i, arg);
    }
    for (int u : used) REQUIRE(u == 1);  // a permutation uses each slot once
    REQUIRE(std::is_sorted(picked.begin(), picked.end()));  // ascending readout
  }
}

TEST_CASE("gen_uniform hits its first moment", "[data]") {
  Rng rng = Rng::stream(19, "data");
  Tensor u = gen_uniform(rng, Shape{1000000}, 0.0, 1.0);
  double mean = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) mean += u[i];
  mean /= static_cast<double>(u.size());
  REQUIRE(mean == Approx(0.5).margin(0.001));
}

TEST_CASE("gen_shapes emits balanced, binary, linearly separable images", "[data]") {
  Rng rng = Rng::stream(23, "data");
  LabeledImages train = gen_shapes(rng, 400);
  LabeledImages test = gen_shapes(rng, 200);
  REQUIRE(train.num_classes == 4);
  REQUIRE(train.dim() == 256);

  std::vector<int> counts(4, 0);
  for (int l : train.labels) ++counts[l];
  for (int c : counts) REQUIRE(c == 100);  // round-robin assignment

  std::size_t off_binary = 0;
  for (std::size_t i = 0; i < train.images.size(); ++i) {
    const double v = train.images[i];
    if (v != 0.0 && v != 1.0) ++off_binary;
  }
  REQUIRE(off_binary == 0);

  const double acc = linear_probe_accuracy(train.images, train.labels, test.images, test.labels,
                                           train.num_classes);
  REQUIRE(acc >= 0.9);  // raw pixels are nearly separable by construction
}

TEST_CASE("IDX files round-trip through the fixture writers", "[data]") {
  const std::string img_path = temp_path("dabtest-images-idx3-ubyte");
  const std::string lbl_path = temp_path("dabtest-labels-idx1-ubyte");
  // 3 images of 2x2: bytes below 128 binarize to 0, the rest to 1.
  const std::vector<unsigned char> pixels = {0,   127, 128, 255,  //
                                             5,   200, 13,  140,  //
                                             255, 0,   0,   129};
  const std::vector<unsigned char> labels = {0, 2, 1};
  write_idx_images(img_path, pixels, 3, 2, 2);
  write_idx_labels(lbl_path, labels);

  LabeledImages got = load_idx_pair(img_path, lbl_path);
  REQUIRE(got.count() == 3);
  REQUIRE(got.dim() == 4);
  REQUIRE(got.images.to_vector() ==
          std::vector<double>{0, 0, 1, 1, 0, 1, 0, 1, 1, 0, 0, 1});
  REQUIRE(got.labels == std::vector<int>{0, 2, 1});
  REQUIRE(got.num_classes == 3);  // max label + 1

  std::filesystem::remove(img_path);
  std::filesystem::remove(lbl_path);
}

TEST_CASE("IDX loader rejects truncated and mislabeled files", "[data]") {
  const std::string img_path = temp_path("dabtest-broken-idx3-ubyte");
  write_idx_images(img_path, std::vector<unsigned char>(4, 255), 1, 2, 2);

  // Truncate one byte off the end.
  std::filesystem::resize_file(img_path, std::filesystem::file_size(img_path) - 1);
  REQUIRE_THROWS_AS(load_idx_images(img_path), ParseError);

  // Images magic on a labels read.
  write_idx_images(img_path, std::vector<unsigned char>(4, 255), 1, 2, 2);
  REQUIRE_THROWS_AS(load_idx_labels(img_path), ParseError);

  // Shorter than any header.
  {
    std::ofstream out(img_path, std::ios::binary | std::ios::trunc);
    out << "xy";
  }
  REQUIRE_THROWS_AS(load_idx_images(img_path), ParseError);
  REQUIRE_THROWS_AS(load_idx_labels(img_path), ParseError);
  REQUIRE_THROWS_AS(load_idx_images(temp_path("dabtest-missing")), ParseError);

  std::filesystem::remove(img_path);
}

TEST_CASE("IDX pair loader rejects count mismatches", "[data]") {
  const std::string img_path = temp_path("dabtest-pair-images");
  const std::string lbl_path = temp_path("dabtest-pair-labels");
  write_idx_images(img_path, std::vector<unsigned char>(8, 0), 2, 2, 2);
  write_idx_labels(lbl_path, {1, 0, 3});
  REQUIRE_THROWS_AS(load_idx_pair(img_path, lbl_path), ParseError);
  std::filesystem::remove(img_path);
  std::filesystem::remove(lbl_path);
}

TEST_CASE("checkpoints restore parameters exactly", "[checkpoint]") {
  const std::string path = temp_path("dabtest-checkpoint.json");
  ParamSet params;
  Rng rng = Rng::stream(29, "init");
  params.declare("net/l0/w", glorot_uniform(rng, 3, 4), ParamGroup::model);
  params.declare("dab/l0/w", glorot_uniform(rng, 4, 2), ParamGroup::approximator);
  const std::vector<double> w0 = params.value("net/l0/w").to_vector();
  const std::vector<double> w1 = params.value("dab/l0/w").to_vector();
  save_checkpoint(params, path);

  // Perturb, then restore.
  params.value("net/l0/w")[0] += 1.0;
  params.value("dab/l0/w")[3] -= 2.0;
  load_checkpoint(params, path);
  REQUIRE(params.value("net/l0/w").to_vector() == w0);  // bitwise round-trip
  REQUIRE(params.value("dab/l0/w").to_vector() == w1);

  // A checkpoint naming a parameter the model lacks is rejected.
  ParamSet smaller;
  smaller.declare("net/l0/w", Tensor::zeros({3, 4}));
  REQUIRE_THROWS_AS(load_checkpoint(smaller, path), ParseError);

  // Same names, different shape.
  ParamSet reshaped;
  reshaped.declare("net/l0/w", Tensor::zeros({4, 3}));
  reshaped.declare("dab/l0/w", Tensor::zeros({4, 2}));
  REQUIRE_THROWS_AS(load_checkpoint(reshaped, path), ShapeError);

  // Missing and malformed files.
  REQUIRE_THROWS_AS(load_checkpoint(params, temp_path("dabtest-nope.json")), ParseError);
  {
    std::ofstream out(path, std::ios::trunc);
    out << "not json";
  }
  REQUIRE_THROWS_AS(load_checkpoint(params, path), ParseError);
  std::filesystem::remove(path);
}

TEST_CASE("1-d earth mover's distance on frozen examples", "[metrics]") {
  REQUIRE(emd_1d(Tensor(Shape{3}, {1, 2, 3}), Tensor(Shape{3}, {1, 2, 3})) == 0.0);
  REQUIRE(emd_1d(Tensor(Shape{2}, {0, 1}), Tensor(Shape{2}, {1, 0})) == 0.0);  // same multiset
  REQUIRE(emd_1d(Tensor(Shape{2}, {0, 0}), Tensor(Shape{2}, {1, 1})) == Approx(1.0));
  REQUIRE(emd_1d(Tensor(Shape{2}, {0, 0}), Tensor(Shape{2}, {0, 1})) == Approx(0.5));
  REQUIRE_THROWS_AS(emd_1d(Tensor(Shape{2}, {0, 1}), Tensor(Shape{3}, {0, 1, 2})), ShapeError);
}

TEST_CASE("per-position emd sees drift that pooled emd cannot", "[metrics]") {
  Rng rng = Rng::stream(31, "emd");
  Tensor x = gen_uniform(rng, Shape{64, 6}, -1.0, 1.0);
  Tensor sorted = sort_rows(x);
  // Sorting permutes within rows: the pooled sample is unchanged...
  REQUIRE(emd_1d(x, sorted) == Approx(0.0).margin(1e-15));
  // ...but column marginals move, which is exactly what the probe measures.
  REQUIRE(per_position_emd(x.values(), sorted.values(), 6) > 0.1);
  REQUIRE(per_position_emd(x.values(), x.values(), 6) == 0.0);
  REQUIRE_THROWS_AS(per_position_emd(x.values(), sorted.values(), 5), ShapeError);
}

TEST_CASE("all-or-none accuracy zeroes samples with any wrong slot", "[metrics]") {
  // t = 2 slots of 2 classes. Targets pick (0, 1) for both samples.
  Tensor targets(Shape{2, 4}, {1, 0, 0, 1, 1, 0, 0, 1});
  Tensor perfect(Shape{2, 4}, {4, 0, 0, 4, 9, 1, 2, 3});
  REQUIRE(all_or_none_accuracy(perfect, targets, 2) == Approx(1.0));
  // Second sample gets slot 2 wrong: half the samples survive.
  Tensor half(Shape{2, 4}, {4, 0, 0, 4, 9, 1, 3, 2});
  REQUIRE(all_or_none_accuracy(half, targets, 2) == Approx(0.5));
  REQUIRE_THROWS_AS(all_or_none_accuracy(perfect, targets, 3), ShapeError);
}

TEST_CASE("linear probe separates what is separable and nothing else", "[metrics]") {
  Rng rng = Rng::stream(37, "probe");
  // Separable: class is the sign of the first coordinate.
  const std::size_t n = 200;
  std::vector<double> ztr(n * 3), zte(n * 3);
  std::vector<int> ytr(n), yte(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      ztr[i * 3 + j] = rng.uniform(-1, 1);
      zte[i * 3 + j] = rng.uniform(-1, 1);
    }
    ytr[i] = ztr[i * 3] > 0 ? 1 : 0;
    yte[i] = zte[i * 3] > 0 ? 1 : 0;
  }
  const Tensor train_z(Shape{n, 3}, ztr);
  const Tensor test_z(Shape{n, 3}, zte);
  REQUIRE(linear_probe_accuracy(train_z, ytr, test_z, yte, 2) >= 0.95);

  // Random labels: held-out accuracy stays near chance.
  std::vector<int> random_ytr(n), random_yte(n);
  for (std::size_t i = 0; i < n; ++i) {
    random_ytr[i] = static_cast<int>(rng.below(2));
    random_yte[i] = static_cast<int>(rng.below(2));
  }
  const double chance = linear_probe_accuracy(train_z, random_ytr, test_z, random_yte, 2);
  REQUIRE(chance > 0.3);
  REQUIRE(chance < 0.7);
}

TEST_CASE("csv writer produces exact rows and rejects ragged ones", "[report]") {
  const std::string path = temp_path("dabtest.csv");
  {
    CsvWriter csv(path, {"epoch", "loss"});
    csv.row({"1", fmt_num(0.5)});
    csv.row({"2", fmt_num(1.0 / 3.0)});
    REQUIRE_THROWS_AS(csv.row({"3"}), Error);
  }
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  REQUIRE(line == "epoch,loss");
  std::getline(in, line);
  REQUIRE(line == "1,0.5");
  std::getline(in, line);
  REQUIRE(line == "2,0.3333333333");
  std::filesystem::remove(path);
}

TEST_CASE("number formatting is stable and round-trippable", "[report]") {
  REQUIRE(fmt_num(1.0) == "1");
  REQUIRE(fmt_num(-0.25) == "-0.25");
  REQUIRE(fmt_num(0.1) == "0.1");
  REQUIRE(fmt_num(12345678.9) == "12345678.9");
}
