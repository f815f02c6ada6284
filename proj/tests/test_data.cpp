// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "helpers.hpp"
#include "relearn/data.hpp"
#include "relearn/errors.hpp"
#include "relearn/trainer.hpp"

using namespace relearn;

namespace {

// Exhaustive 1-NN leave-one-out accuracy.
double one_nn_accuracy(const Dataset& d) {
  const std::size_t n = d.size(), w = d.samples.row_size();
  std::size_t hit = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double best = INFINITY;
    int label = -1;
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      double s = 0.0;
      for (std::size_t k = 0; k < w; ++k) {
        const double diff = d.samples[i * w + k] - d.samples[j * w + k];
        s += diff * diff;
      }
      if (s < best) {
        best = s;
        label = d.labels[j];
      }
    }
    hit += label == d.labels[i];
  }
  return static_cast<double>(hit) / static_cast<double>(n);
}

// Full-batch logistic regression on 2-d points, plain gradient descent.
double logistic_accuracy(const Dataset& d) {
  double w0 = 0, w1 = 0, b = 0;
  const std::size_t n = d.size();
  for (int it = 0; it < 2000; ++it) {
    double g0 = 0, g1 = 0, gb = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double x0 = d.samples.at(i, 0), x1 = d.samples.at(i, 1);
      const double p = 1.0 / (1.0 + std::exp(-(w0 * x0 + w1 * x1 + b)));
      const double r = p - d.labels[i];
      g0 += r * x0;
      g1 += r * x1;
      gb += r;
    }
    w0 -= 0.5 * g0 / n;
    w1 -= 0.5 * g1 / n;
    b -= 0.5 * gb / n;
  }
  std::size_t hit = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int pred = w0 * d.samples.at(i, 0) + w1 * d.samples.at(i, 1) + b > 0 ? 1 : 0;
    hit += pred == d.labels[i];
  }
  return static_cast<double>(hit) / static_cast<double>(n);
}

Dataset tiny(std::size_t per_class, std::size_t classes) {
  Dataset d;
  d.classes = classes;
  d.samples = Tensor(Shape{per_class * classes, 2});
  for (std::size_t i = 0; i < per_class * classes; ++i) {
    d.labels.push_back(static_cast<int>(i % classes));
    d.samples.at(i, 0) = static_cast<double>(i);
    d.samples.at(i, 1) = -static_cast<double>(i);
  }
  return d;
}

}  // namespace

TEST_CASE("blobs far apart are 1-NN separable") {
  SyntheticParams p;
  p.classes = 4;
  p.per_class = 30;
  p.dim = 5;
  p.separation = 100.0;
  const Dataset d = gen_synthetic(SyntheticKind::kGaussianBlobs, p, 3);
  CHECK(d.size() == 120);
  CHECK(one_nn_accuracy(d) == 1.0);
}

TEST_CASE("generators are deterministic and balanced") {
  for (auto kind : {SyntheticKind::kGaussianBlobs, SyntheticKind::kConcentricSpirals, SyntheticKind::kTeacherNetwork}) {
    SyntheticParams p;
    p.classes = 3;
    p.per_class = 40;
    p.dim = 6;
    const Dataset a = gen_synthetic(kind, p, 11), b = gen_synthetic(kind, p, 11), c = gen_synthetic(kind, p, 12);
    CHECK(a.samples == b.samples);
    CHECK(a.labels == b.labels);
    CHECK_FALSE(a.samples == c.samples);
    CHECK(a.class_counts() == std::vector<std::size_t>{40, 40, 40});
    CHECK(a.provenance.source == synthetic_kind_name(kind));
    a.validate();
  }
}

TEST_CASE("image-shaped synthetic data") {
  SyntheticParams p;
  p.classes = 3;
  p.per_class = 5;
  p.image = {2, 4, 4};
  const Dataset d = gen_synthetic(SyntheticKind::kTeacherNetwork, p, 1);
  CHECK(d.is_image());
  CHECK(d.sample_shape() == Shape{2, 4, 4});
}

TEST_CASE("generator parameter guards") {
  SyntheticParams p;
  p.classes = 1;
  CHECK_THROWS_AS(gen_synthetic(SyntheticKind::kGaussianBlobs, p, 0), ConfigError);
  p.classes = 2;
  p.per_class = 0;
  CHECK_THROWS_AS(gen_synthetic(SyntheticKind::kGaussianBlobs, p, 0), ConfigError);
  CHECK_THROWS_AS(parse_synthetic_kind("moons"), ConfigError);
}

TEST_CASE("spirals defeat a linear model but not a small MLP") {
  SyntheticParams p;
  p.classes = 2;
  p.per_class = 500;
  const Dataset d = gen_synthetic(SyntheticKind::kConcentricSpirals, p, 7);
  CHECK(logistic_accuracy(d) <= 0.60);

  ScheduleConfig cfg;
  cfg.strategy = Strategy::kNormal;
  cfg.epochs = 100;
  cfg.lr = 0.1;
  cfg.smoothing = 0.0;
  cfg.weight_decay = 0.0;
  cfg.seed = 7;
  const std::vector<std::size_t> hidden = {32, 32};
  LayeredModel m = make_mlp(2, hidden, 2);
  Rng init(7);
  m.initialize(init);
  IterativeTrainer trainer(m, cfg);
  trainer.run(d, nullptr);
  CHECK(evaluate_accuracy(trainer.model(), d) >= 0.95);
}

TEST_CASE("idx truncation reports the byte offset") {
  testing::TempDir dir("idx");
  IdxArray a;
  a.dims = {10, 2, 2};
  a.bytes.assign(40, 7);
  write_idx(dir / "full.idx", a);
  std::string bytes = testing::slurp(dir / "full.idx");
  CHECK(bytes.size() == 16 + 40);
  testing::spit(dir / "cut.idx", bytes.substr(0, 16 + 36));
  try {
    read_idx(dir / "cut.idx");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.position() == 52);
  }
  testing::spit(dir / "bad.idx", "\x01\x00\x08\x01" + bytes.substr(4));
  CHECK_THROWS_AS(read_idx(dir / "bad.idx"), ParseError);
  testing::spit(dir / "long.idx", bytes + "x");
  CHECK_THROWS_AS(read_idx(dir / "long.idx"), ParseError);
  const IdxArray back = read_idx(dir / "full.idx");
  CHECK(back.dims == a.dims);
  CHECK(back.bytes == a.bytes);
}

TEST_CASE("idx dataset round trip") {
  testing::TempDir dir("idxds");
  Dataset d;
  d.classes = 3;
  d.samples = Tensor(Shape{4, 1, 2, 3});
  for (std::size_t i = 0; i < d.samples.size(); ++i) d.samples[i] = static_cast<double>((i * 37) % 256) / 255.0;
  d.labels = {0, 2, 1, 2};
  save_idx(d, dir / "img", dir / "lab");
  const Dataset back = load_idx(dir / "img", dir / "lab");
  CHECK(back.samples == d.samples);
  CHECK(back.labels == d.labels);
  CHECK(back.provenance.checksum == file_checksum(dir / "img") + "," + file_checksum(dir / "lab"));
  save_idx(back, dir / "img2", dir / "lab2");
  CHECK(testing::slurp(dir / "img") == testing::slurp(dir / "img2"));
}

TEST_CASE("csv loading") {
  testing::TempDir dir("csv");
  testing::spit(dir / "ok.csv", "1,0.5,2\n0,-1,3e2\n2,4,5\n");
  const Dataset d = load_csv(dir / "ok.csv");
  CHECK(d.samples.shape() == Shape{3, 2});
  CHECK(d.labels == std::vector<int>{1, 0, 2});
  CHECK(d.classes == 3);
  CHECK(d.samples.at(1, 1) == 300.0);

  testing::spit(dir / "bad.csv", "1,0.5,2\n0,-1,abc\n");
  try {
    load_csv(dir / "bad.csv");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.position() == 2);
  }
  testing::spit(dir / "ragged.csv", "1,0.5,2\n0,1\n");
  CHECK_THROWS_AS(load_csv(dir / "ragged.csv"), ParseError);

  testing::spit(dir / "hdr.csv", "a,label,b\n0.25,1,3\n");
  const Dataset h = load_csv(dir / "hdr.csv", {1, true});
  CHECK(h.labels == std::vector<int>{1});
  CHECK(h.samples == Tensor::matrix({{0.25, 3}}));
}

TEST_CASE("csv round trip is bitwise") {
  testing::TempDir dir("csvrt");
  Dataset d;
  d.classes = 2;
  d.samples = testing::random_tensor(Shape{5, 3}, 8);
  d.labels = {0, 1, 1, 0, 1};
  save_csv(d, dir / "d.csv");
  const Dataset back = load_csv(dir / "d.csv");
  CHECK(back.samples == d.samples);
  CHECK(back.labels == d.labels);
}

TEST_CASE("crc32 of a known string") {
  const std::string s = "123456789";
  CHECK(crc32_hex({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()}) == "cbf43926");
}

TEST_CASE("augmentation identities") {
  const Tensor x = testing::random_tensor(Shape{3, 2, 5, 5}, 4);
  Rng rng(1);
  CHECK(augment(x, false, 0, rng) == x);
  CHECK(hflip(hflip(x)) == x);

  Tensor sym(Shape{1, 1, 2, 4});
  const double row[] = {1, 2, 2, 1};
  for (std::size_t i = 0; i < 8; ++i) sym[i] = row[i % 4];
  CHECK(hflip(sym) == sym);

  Tensor ones(Shape{1, 1, 6, 6}, 1.0);
  const Tensor shifted = pad_crop(ones, 4, 0, 0);
  for (std::size_t r = 0; r < 6; ++r) {
    for (std::size_t c = 0; c < 6; ++c) CHECK(shifted[r * 6 + c] == ((r >= 4 && c >= 4) ? 1.0 : 0.0));
  }
  CHECK(pad_crop(x, 2, 2, 2) == x);
  CHECK_THROWS_AS(pad_crop(x, 2, 5, 0), ContractError);
  CHECK_THROWS_AS(augment(Tensor(Shape{2, 3}), true, 0, rng), ConfigError);
}

TEST_CASE("augmentation preserves shape and range") {
  Tensor x = testing::random_tensor(Shape{16, 3, 8, 8}, 5);
  for (double& v : x.data()) v = std::abs(std::tanh(v));
  Rng a(3), b(3);
  const Tensor y = augment(x, true, 4, a);
  CHECK(y.shape() == x.shape());
  CHECK(y == augment(x, true, 4, b));
  for (double v : y.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("stratified split") {
  const Dataset d = tiny(10, 3);
  const std::vector<double> whole = {1.0};
  const auto same = split_dataset(d, whole, 1);
  REQUIRE(same.size() == 1);
  CHECK(same[0].samples == d.samples);
  CHECK(same[0].labels == d.labels);

  const std::vector<double> halves = {0.5, 0.5};
  const auto parts = split_dataset(d, halves, 2);
  for (const auto& part : parts) CHECK(part.class_counts() == std::vector<std::size_t>{5, 5, 5});
  std::multiset<std::pair<double, int>> all, joined;
  for (std::size_t i = 0; i < d.size(); ++i) all.insert({d.samples.at(i, 0), d.labels[i]});
  for (const auto& part : parts) {
    for (std::size_t i = 0; i < part.size(); ++i) joined.insert({part.samples.at(i, 0), part.labels[i]});
  }
  CHECK(all == joined);
  const auto again = split_dataset(d, halves, 2);
  CHECK(again[0].samples == parts[0].samples);

  const std::vector<double> three = {0.4, 0.3, 0.3};
  CHECK_THROWS_AS(split_dataset(tiny(2, 2), three, 1), StratificationError);
  const std::vector<double> bad = {0.5, 0.6};
  CHECK_THROWS_AS(split_dataset(d, bad, 1), ConfigError);
}

TEST_CASE("class selection relabels in list order") {
  const Dataset d = tiny(3, 4);
  const std::vector<int> keep = {3, 1};
  const Dataset s = select_classes(d, keep);
  CHECK(s.classes == 2);
  CHECK(s.size() == 6);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const int original = static_cast<int>(static_cast<std::size_t>(s.samples.at(i, 0)) % 4);
    CHECK(s.labels[i] == (original == 3 ? 0 : 1));
  }
}

TEST_CASE("domain shifts") {
  Dataset d;
  d.classes = 2;
  d.samples = testing::random_tensor(Shape{2, 3, 4, 4}, 6);
  for (double& v : d.samples.data()) v = 0.5 + 0.1 * v;
  d.labels = {0, 1};
  CHECK(shift_domain(d, DomainShift::kNone, 1).samples == d.samples);

  const Dataset p = shift_domain(d, DomainShift::kChannelPermute, 1);
  for (std::size_t c = 0; c < 3; ++c) {
    const Tensor plane = d.samples.rows(0, 1);
    bool moved_elsewhere = false;
    for (std::size_t c2 = 0; c2 < 3; ++c2) {
      bool eq = true;
      for (std::size_t k = 0; k < 16; ++k) eq = eq && p.samples[c2 * 16 + k] == plane[c * 16 + k];
      if (eq) moved_elsewhere = c2 != c;
    }
    CHECK(moved_elsewhere);
  }

  const Dataset px = shift_domain(d, DomainShift::kPixelate, 1);
  CHECK(px.samples[0] == px.samples[1]);
  CHECK(px.samples[0] == px.samples[4]);
  CHECK(std::abs(px.samples[0] - (d.samples[0] + d.samples[1] + d.samples[4] + d.samples[5]) / 4) <= 1e-15);

  const Dataset inv = shift_domain(d, DomainShift::kInvert, 1);
  CHECK(shift_domain(inv, DomainShift::kInvert, 1).samples.abs_max() > 0.0);
  CHECK(inv.labels == d.labels);
}
