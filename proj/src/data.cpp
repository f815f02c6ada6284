// SPDX-License-Identifier: Apache-2.0
#include "relearn/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>

#include "relearn/errors.hpp"

namespace relearn {

// --- Dataset ------------------------------------------------------------------

Shape Dataset::sample_shape() const {
  const Shape& s = samples.shape();
  return Shape(s.begin() + 1, s.end());
}

void Dataset::validate() const {
  if (samples.rank() < 2) throw ContractError("dataset samples must be [N, ...]");
  if (samples.dim(0) != labels.size()) {
    throw ContractError("dataset has " + std::to_string(samples.dim(0)) + " samples but " +
                        std::to_string(labels.size()) + " labels");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw ContractError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset d;
  d.samples = samples.gather_rows(indices);
  d.labels.reserve(indices.size());
  for (auto i : indices) d.labels.push_back(labels.at(i));
  d.classes = classes;
  d.split = split;
  d.provenance = provenance;
  return d;
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(classes, 0);
  for (int y : labels) ++counts.at(static_cast<std::size_t>(y));
  return counts;
}

// --- synthetic generators ---------------------------------------------------------

const char* synthetic_kind_name(SyntheticKind kind) {
  switch (kind) {
    case SyntheticKind::kGaussianBlobs: return "gaussian-blobs";
    case SyntheticKind::kConcentricSpirals: return "concentric-spirals";
    case SyntheticKind::kTeacherNetwork: return "teacher-network";
  }
  return "unknown";
}

SyntheticKind parse_synthetic_kind(const std::string& name) {
  if (name == "gaussian-blobs" || name == "blobs") return SyntheticKind::kGaussianBlobs;
  if (name == "concentric-spirals" || name == "spirals") return SyntheticKind::kConcentricSpirals;
  if (name == "teacher-network" || name == "teacher") return SyntheticKind::kTeacherNetwork;
  throw ConfigError("unknown dataset generator '" + name + "'", "dataset");
}

std::string SyntheticParams::describe() const {
  std::ostringstream os;
  os.precision(17);
  os << "classes=" << classes << ";per_class=" << per_class << ";dim=" << dim << ";separation=" << separation
     << ";noise=" << noise << ";turns=" << turns << ";teacher_width=" << teacher_width
     << ";teacher_depth=" << teacher_depth << ";image=";
  for (std::size_t i = 0; i < image.size(); ++i) os << (i ? "x" : "") << image[i];
  return os.str();
}

namespace {

std::vector<double> blob_center(const SyntheticParams& p, std::size_t dim, Rng& rng) {
  std::vector<double> c(dim);
  if (p.image.size() == 3 && p.image[1] % 2 == 0 && p.image[2] % 2 == 0) {
    // Piecewise-constant 2x2 blocks give the images some spatial structure.
    const std::size_t C = p.image[0], H = p.image[1], W = p.image[2];
    for (std::size_t ch = 0; ch < C; ++ch) {
      for (std::size_t y = 0; y < H / 2; ++y) {
        for (std::size_t x = 0; x < W / 2; ++x) {
          const double v = p.separation * rng.normal();
          for (std::size_t dy = 0; dy < 2; ++dy) {
            for (std::size_t dx = 0; dx < 2; ++dx) c[(ch * H + 2 * y + dy) * W + 2 * x + dx] = v;
          }
        }
      }
    }
  } else {
    for (auto& v : c) v = p.separation * rng.normal();
  }
  return c;
}

struct Teacher {
  std::vector<std::vector<double>> weights;  // [in x out] row-major
  std::vector<std::vector<double>> biases;
  std::vector<std::size_t> widths;           // input, hidden..., classes

  std::vector<double> logits(const double* x) const {
    std::vector<double> h(x, x + widths[0]);
    for (std::size_t l = 0; l < weights.size(); ++l) {
      const std::size_t in = widths[l], out = widths[l + 1];
      std::vector<double> o(biases[l]);
      for (std::size_t i = 0; i < in; ++i) {
        for (std::size_t j = 0; j < out; ++j) o[j] += h[i] * weights[l][i * out + j];
      }
      if (l + 1 < weights.size()) {
        for (auto& v : o) v = v > 0.0 ? v : 0.0;
      }
      h = std::move(o);
    }
    return h;
  }
};

Dataset generate_teacher(const SyntheticParams& p, std::uint64_t seed) {
  Rng wrng = stream_rng(seed, Stream::kData, 0);
  Teacher t;
  t.widths.push_back(p.dim);
  for (std::size_t i = 0; i < p.teacher_depth; ++i) t.widths.push_back(p.teacher_width);
  t.widths.push_back(p.classes);
  for (std::size_t l = 0; l + 1 < t.widths.size(); ++l) {
    const std::size_t in = t.widths[l], out = t.widths[l + 1];
    const double sd = std::sqrt((l + 2 < t.widths.size() ? 2.0 : 1.0) / static_cast<double>(in));
    std::vector<double> w(in * out);
    for (auto& v : w) v = sd * wrng.normal();
    t.weights.push_back(std::move(w));
    t.biases.emplace_back(out, 0.0);
  }

  // Calibrate output biases on a pilot sample so the argmax is near balanced.
  Rng prng = stream_rng(seed, Stream::kData, 1);
  const std::size_t pilot = 4096;
  std::vector<std::vector<double>> pilot_logits;
  std::vector<double> x(p.dim);
  for (std::size_t i = 0; i < pilot; ++i) {
    for (auto& v : x) v = prng.normal();
    pilot_logits.push_back(t.logits(x.data()));
  }
  double spread = 0.0;
  for (const auto& z : pilot_logits) {
    for (double v : z) spread += v * v;
  }
  spread = std::sqrt(spread / static_cast<double>(pilot * p.classes));
  std::vector<double> shift(p.classes, 0.0);
  const double expected = static_cast<double>(pilot) / static_cast<double>(p.classes);
  for (int iter = 0; iter < 60; ++iter) {
    std::vector<double> counts(p.classes, 0.0);
    for (const auto& z : pilot_logits) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < p.classes; ++c) {
        if (z[c] + shift[c] > z[best] + shift[best]) best = c;
      }
      counts[best] += 1.0;
    }
    for (std::size_t c = 0; c < p.classes; ++c) {
      shift[c] -= 0.25 * spread * std::log((counts[c] + 0.5) / expected);
    }
  }
  for (std::size_t c = 0; c < p.classes; ++c) t.biases.back()[c] += shift[c];

  Rng srng = stream_rng(seed, Stream::kData, 2);
  const std::size_t total = p.classes * p.per_class;
  std::vector<std::size_t> filled(p.classes, 0);
  std::vector<double> data;
  std::vector<int> labels;
  data.reserve(total * p.dim);
  std::size_t attempts = 0;
  const std::size_t max_attempts = 500 * total;
  while (labels.size() < total) {
    if (++attempts > max_attempts) {
      throw ConfigError("teacher network cannot fill every class; lower per_class or teacher_depth", "dataset");
    }
    for (auto& v : x) v = srng.normal();
    const auto z = t.logits(x.data());
    std::size_t best = 0;
    for (std::size_t c = 1; c < p.classes; ++c) {
      if (z[c] > z[best]) best = c;
    }
    if (filled[best] == p.per_class) continue;
    ++filled[best];
    data.insert(data.end(), x.begin(), x.end());
    labels.push_back(static_cast<int>(best));
  }
  Dataset d;
  d.samples = Tensor(Shape{total, p.dim}, std::move(data));
  d.labels = std::move(labels);
  return d;
}

}  // namespace

Dataset gen_synthetic(SyntheticKind kind, const SyntheticParams& p, std::uint64_t seed) {
  if (p.classes < 2) throw ConfigError("synthetic dataset needs at least 2 classes", "classes");
  if (p.per_class < 1) throw ConfigError("synthetic dataset needs at least 1 sample per class", "per_class");
  std::size_t dim = p.dim;
  if (!p.image.empty()) {
    if (p.image.size() != 3 || shape_size(p.image) == 0) throw ConfigError("image shape must be C,H,W", "image");
    dim = shape_size(p.image);
  }
  if (dim == 0) throw ConfigError("dimension must be positive", "dim");

  Dataset d;
  switch (kind) {
    case SyntheticKind::kGaussianBlobs: {
      Rng crng = stream_rng(seed, Stream::kData, 0);
      std::vector<std::vector<double>> centers;
      for (std::size_t c = 0; c < p.classes; ++c) centers.push_back(blob_center(p, dim, crng));
      Rng srng = stream_rng(seed, Stream::kData, 2);
      std::vector<double> data;
      data.reserve(p.classes * p.per_class * dim);
      for (std::size_t c = 0; c < p.classes; ++c) {
        for (std::size_t i = 0; i < p.per_class; ++i) {
          for (std::size_t k = 0; k < dim; ++k) data.push_back(centers[c][k] + srng.normal());
          d.labels.push_back(static_cast<int>(c));
        }
      }
      d.samples = Tensor(Shape{p.classes * p.per_class, dim}, std::move(data));
      break;
    }
    case SyntheticKind::kConcentricSpirals: {
      if (!p.image.empty()) throw ConfigError("spirals are two-dimensional", "image");
      Rng srng = stream_rng(seed, Stream::kData, 2);
      std::vector<double> data;
      for (std::size_t c = 0; c < p.classes; ++c) {
        const double phase = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(p.classes);
        for (std::size_t i = 0; i < p.per_class; ++i) {
          const double t = srng.uniform();
          const double r = 0.1 + t;
          const double theta = 2.0 * std::numbers::pi * p.turns * t + phase;
          data.push_back(r * std::cos(theta) + p.noise * srng.normal());
          data.push_back(r * std::sin(theta) + p.noise * srng.normal());
          d.labels.push_back(static_cast<int>(c));
        }
      }
      d.samples = Tensor(Shape{p.classes * p.per_class, 2}, std::move(data));
      break;
    }
    case SyntheticKind::kTeacherNetwork: {
      SyntheticParams q = p;
      q.dim = dim;
      d = generate_teacher(q, seed);
      break;
    }
  }
  if (!p.image.empty()) {
    Shape s{d.labels.size(), p.image[0], p.image[1], p.image[2]};
    d.samples = d.samples.reshaped(s);
  }
  d.classes = p.classes;
  d.provenance.source = synthetic_kind_name(kind);
  d.provenance.params = p.describe();
  d.provenance.seed = seed;
  return d;
}

// --- checksums ------------------------------------------------------------------

std::string crc32_hex(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  while (off < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - off, 1u << 30);
    crc = crc32(crc, bytes.data() + off, static_cast<uInt>(n));
    off += n;
  }
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08lx", static_cast<unsigned long>(crc));
  return buf;
}

namespace {

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string(), 0);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace

std::string file_checksum(const std::filesystem::path& path) { return crc32_hex(read_bytes(path)); }

// --- IDX ------------------------------------------------------------------------

IdxArray read_idx(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  const std::string name = path.filename().string();
  if (bytes.size() < 4) throw ParseError(name + ": truncated IDX magic", bytes.size());
  if (bytes[0] != 0 || bytes[1] != 0) throw ParseError(name + ": bad IDX magic", 0);
  if (bytes[2] != 0x08) throw ParseError(name + ": only unsigned-byte IDX payloads are supported", 2);
  const std::size_t ndim = bytes[3];
  if (ndim < 1 || ndim > 4) throw ParseError(name + ": unsupported IDX rank " + std::to_string(ndim), 3);
  const std::size_t header = 4 + 4 * ndim;
  if (bytes.size() < header) throw ParseError(name + ": truncated IDX dimension header", bytes.size());
  IdxArray a;
  a.type = bytes[2];
  std::size_t total = 1;
  for (std::size_t i = 0; i < ndim; ++i) {
    const std::size_t o = 4 + 4 * i;
    const std::size_t d = (std::size_t{bytes[o]} << 24) | (std::size_t{bytes[o + 1]} << 16) |
                          (std::size_t{bytes[o + 2]} << 8) | std::size_t{bytes[o + 3]};
    if (d == 0) throw ParseError(name + ": zero IDX extent", o);
    a.dims.push_back(d);
    total *= d;
  }
  if (bytes.size() < header + total) {
    const std::size_t item = total / a.dims[0];
    throw ParseError(name + ": declared " + std::to_string(a.dims[0]) + " items but payload holds " +
                         std::to_string((bytes.size() - header) / item) + "; truncated at byte " +
                         std::to_string(bytes.size()),
                     bytes.size());
  }
  if (bytes.size() > header + total) throw ParseError(name + ": trailing bytes after IDX payload", header + total);
  a.bytes.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
  return a;
}

void write_idx(const std::filesystem::path& path, const IdxArray& array) {
  std::vector<std::uint8_t> out = {0, 0, array.type, static_cast<std::uint8_t>(array.dims.size())};
  for (auto d : array.dims) {
    out.push_back(static_cast<std::uint8_t>(d >> 24));
    out.push_back(static_cast<std::uint8_t>(d >> 16));
    out.push_back(static_cast<std::uint8_t>(d >> 8));
    out.push_back(static_cast<std::uint8_t>(d));
  }
  out.insert(out.end(), array.bytes.begin(), array.bytes.end());
  write_bytes(path, out);
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const IdxArray img = read_idx(images);
  const IdxArray lab = read_idx(labels);
  if (img.dims.size() != 3) throw ParseError(images.filename().string() + ": expected a rank-3 image array", 3);
  if (lab.dims.size() != 1) throw ParseError(labels.filename().string() + ": expected a rank-1 label array", 3);
  if (img.dims[0] != lab.dims[0]) {
    throw ParseError("image count " + std::to_string(img.dims[0]) + " != label count " +
                         std::to_string(lab.dims[0]),
                     4);
  }
  Dataset d;
  std::vector<double> px(img.bytes.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<double>(img.bytes[i]) / 255.0;
  d.samples = Tensor(Shape{img.dims[0], 1, img.dims[1], img.dims[2]}, std::move(px));
  int mx = 0;
  for (auto b : lab.bytes) {
    d.labels.push_back(b);
    mx = std::max<int>(mx, b);
  }
  d.classes = std::max(2, mx + 1);
  d.provenance.source = "file";
  d.provenance.path = images.string() + "," + labels.string();
  d.provenance.checksum = file_checksum(images) + "," + file_checksum(labels);
  return d;
}

void save_idx(const Dataset& dataset, const std::filesystem::path& images, const std::filesystem::path& labels) {
  const Shape& s = dataset.samples.shape();
  if (s.size() != 4 || s[1] != 1) throw ContractError("save_idx needs single-channel [N,1,H,W] images");
  IdxArray img;
  img.dims = {s[0], s[2], s[3]};
  img.bytes.reserve(dataset.samples.size());
  for (double v : dataset.samples.data()) {
    const double q = std::round(v * 255.0);
    if (q < 0.0 || q > 255.0) throw ContractError("save_idx: pixel value outside [0, 1]");
    img.bytes.push_back(static_cast<std::uint8_t>(q));
  }
  IdxArray lab;
  lab.dims = {dataset.labels.size()};
  for (int y : dataset.labels) {
    if (y < 0 || y > 255) throw ContractError("save_idx: label outside a byte");
    lab.bytes.push_back(static_cast<std::uint8_t>(y));
  }
  write_idx(images, img);
  write_idx(labels, lab);
}

// --- CSV ------------------------------------------------------------------------

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string(), 0);
  std::string line;
  std::size_t lineno = 0;
  std::size_t features = 0;
  std::vector<double> data;
  std::vector<int> labels;
  while (std::getline(in, line)) {
    ++lineno;
    if (schema.header && lineno == 1) continue;
    if (trim(line).empty()) continue;
    std::vector<std::string_view> cells;
    std::string_view rest(line);
    while (true) {
      const auto comma = rest.find(',');
      cells.push_back(trim(rest.substr(0, comma)));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (schema.label_column >= cells.size()) {
      throw ParseError(path.filename().string() + ":" + std::to_string(lineno) + ": missing label column", lineno);
    }
    if (features == 0) {
      features = cells.size() - 1;
      if (features == 0) throw ParseError("line " + std::to_string(lineno) + ": no feature columns", lineno);
    } else if (cells.size() - 1 != features) {
      throw ParseError(path.filename().string() + ":" + std::to_string(lineno) + ": expected " +
                           std::to_string(features + 1) + " columns, got " + std::to_string(cells.size()),
                       lineno);
    }
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const auto cell = cells[c];
      if (c == schema.label_column) {
        int y = 0;
        auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), y);
        if (ec != std::errc() || p != cell.data() + cell.size() || y < 0) {
          throw ParseError(path.filename().string() + ":" + std::to_string(lineno) + ": bad label '" +
                               std::string(cell) + "'",
                           lineno);
        }
        labels.push_back(y);
      } else {
        double v = 0.0;
        auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
        if (ec != std::errc() || p != cell.data() + cell.size() || !std::isfinite(v)) {
          throw ParseError(path.filename().string() + ":" + std::to_string(lineno) + ": bad number '" +
                               std::string(cell) + "'",
                           lineno);
        }
        data.push_back(v);
      }
    }
  }
  if (labels.empty()) throw ParseError(path.filename().string() + ": no data rows", lineno);
  Dataset d;
  d.samples = Tensor(Shape{labels.size(), features}, std::move(data));
  d.classes = std::max<std::size_t>(2, static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end())) + 1);
  d.labels = std::move(labels);
  d.provenance.source = "file";
  d.provenance.path = path.string();
  d.provenance.checksum = file_checksum(path);
  return d;
}

void save_csv(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  const std::size_t F = dataset.samples.row_size();
  char buf[64];
  for (std::size_t n = 0; n < dataset.size(); ++n) {
    out << dataset.labels[n];
    for (std::size_t f = 0; f < F; ++f) {
      auto [p, ec] = std::to_chars(buf, buf + sizeof buf, dataset.samples[n * F + f]);
      out << ',' << std::string_view(buf, static_cast<std::size_t>(p - buf));
    }
    out << '\n';
  }
}

// --- augmentation -----------------------------------------------------------------

namespace {

void require_images(const Tensor& t, const char* what) {
  if (t.rank() != 4) throw ConfigError(std::string(what) + " needs [N,C,H,W] images, got " + shape_string(t.shape()), "augment");
}

void flip_one(double* img, std::size_t C, std::size_t H, std::size_t W) {
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t y = 0; y < H; ++y) std::reverse(img + (c * H + y) * W, img + (c * H + y + 1) * W);
  }
}

// dst[y][x] = src[y + oy - pad][x + ox - pad], zero outside.
void crop_one(const double* src, double* dst, std::size_t C, std::size_t H, std::size_t W, std::size_t pad,
              std::size_t oy, std::size_t ox) {
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t y = 0; y < H; ++y) {
      const long sy = static_cast<long>(y + oy) - static_cast<long>(pad);
      for (std::size_t x = 0; x < W; ++x) {
        const long sx = static_cast<long>(x + ox) - static_cast<long>(pad);
        const bool inside = sy >= 0 && sy < static_cast<long>(H) && sx >= 0 && sx < static_cast<long>(W);
        dst[(c * H + y) * W + x] = inside ? src[(c * H + static_cast<std::size_t>(sy)) * W + static_cast<std::size_t>(sx)] : 0.0;
      }
    }
  }
}

}  // namespace

Tensor hflip(const Tensor& images) {
  require_images(images, "hflip");
  Tensor out = images;
  const std::size_t C = images.dim(1), H = images.dim(2), W = images.dim(3);
  for (std::size_t n = 0; n < images.dim(0); ++n) flip_one(out.data().data() + n * C * H * W, C, H, W);
  return out;
}

Tensor pad_crop(const Tensor& images, std::size_t pad, std::size_t oy, std::size_t ox) {
  require_images(images, "pad_crop");
  if (oy > 2 * pad || ox > 2 * pad) throw ContractError("crop offset outside the padded frame");
  Tensor out(images.shape());
  const std::size_t C = images.dim(1), H = images.dim(2), W = images.dim(3), S = C * H * W;
  for (std::size_t n = 0; n < images.dim(0); ++n) {
    crop_one(images.data().data() + n * S, out.data().data() + n * S, C, H, W, pad, oy, ox);
  }
  return out;
}

Tensor augment(const Tensor& batch, bool flip, std::size_t crop_pad, Rng& rng) {
  require_images(batch, "augment");
  Tensor out = batch;
  const std::size_t C = batch.dim(1), H = batch.dim(2), W = batch.dim(3), S = C * H * W;
  std::vector<double> tmp(S);
  for (std::size_t n = 0; n < batch.dim(0); ++n) {
    double* img = out.data().data() + n * S;
    if (flip && rng.bernoulli(0.5)) flip_one(img, C, H, W);
    if (crop_pad > 0) {
      const std::size_t oy = rng.below(2 * crop_pad + 1);
      const std::size_t ox = rng.below(2 * crop_pad + 1);
      std::copy(img, img + S, tmp.begin());
      crop_one(tmp.data(), img, C, H, W, crop_pad, oy, ox);
    }
  }
  return out;
}

// --- splitting --------------------------------------------------------------------

std::vector<Dataset> split_dataset(const Dataset& dataset, std::span<const double> fractions, std::uint64_t seed) {
  dataset.validate();
  if (fractions.empty()) throw ConfigError("split needs at least one fraction", "fractions");
  double total = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) throw ConfigError("split fractions must be positive", "fractions");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1", "fractions");
  const std::size_t parts = fractions.size();

  std::vector<std::vector<std::size_t>> by_class(dataset.classes);
  for (std::size_t i = 0; i < dataset.size(); ++i) by_class[static_cast<std::size_t>(dataset.labels[i])].push_back(i);

  std::vector<std::vector<std::size_t>> assigned(parts);
  for (std::size_t c = 0; c < dataset.classes; ++c) {
    auto& idx = by_class[c];
    if (idx.empty()) continue;
    if (idx.size() < parts) {
      throw StratificationError("class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                                " samples, fewer than the " + std::to_string(parts) + " parts");
    }
    Rng rng = stream_rng(seed, Stream::kSplit, c);
    rng.shuffle(idx);
    // Largest-remainder allocation, at least one sample per part.
    std::vector<std::size_t> count(parts);
    std::vector<std::pair<double, std::size_t>> rem;
    std::size_t used = 0;
    for (std::size_t p = 0; p < parts; ++p) {
      const double exact = fractions[p] * static_cast<double>(idx.size());
      count[p] = static_cast<std::size_t>(std::floor(exact));
      rem.emplace_back(exact - static_cast<double>(count[p]), p);
      used += count[p];
    }
    std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; used < idx.size(); ++r, ++used) ++count[rem[r % parts].second];
    for (std::size_t p = 0; p < parts; ++p) {
      while (count[p] == 0) {
        auto donor = std::max_element(count.begin(), count.end()) - count.begin();
        --count[static_cast<std::size_t>(donor)];
        ++count[p];
      }
    }
    std::size_t o = 0;
    for (std::size_t p = 0; p < parts; ++p) {
      assigned[p].insert(assigned[p].end(), idx.begin() + static_cast<std::ptrdiff_t>(o),
                         idx.begin() + static_cast<std::ptrdiff_t>(o + count[p]));
      o += count[p];
    }
  }

  std::vector<Dataset> out;
  for (std::size_t p = 0; p < parts; ++p) {
    std::sort(assigned[p].begin(), assigned[p].end());
    Dataset d = dataset.subset(assigned[p]);
    d.split = parts == 1 ? dataset.split : dataset.split + "/part" + std::to_string(p);
    out.push_back(std::move(d));
  }
  return out;
}

Dataset select_classes(const Dataset& dataset, std::span<const int> classes) {
  if (classes.size() < 2) throw ConfigError("class selection needs at least 2 classes", "classes");
  std::vector<int> relabel(dataset.classes, -1);
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const int c = classes[i];
    if (c < 0 || static_cast<std::size_t>(c) >= dataset.classes) throw IndexError("class " + std::to_string(c) + " out of range");
    relabel[static_cast<std::size_t>(c)] = static_cast<int>(i);
  }
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (relabel[static_cast<std::size_t>(dataset.labels[i])] >= 0) keep.push_back(i);
  }
  if (keep.empty()) throw SamplingError("class selection is empty");
  Dataset d = dataset.subset(keep);
  for (auto& y : d.labels) y = relabel[static_cast<std::size_t>(y)];
  d.classes = classes.size();
  return d;
}

// --- domain shifts ------------------------------------------------------------------

const char* domain_shift_name(DomainShift shift) {
  switch (shift) {
    case DomainShift::kNone: return "none";
    case DomainShift::kChannelPermute: return "channel-permute";
    case DomainShift::kPixelate: return "pixelate";
    case DomainShift::kInvert: return "invert";
  }
  return "unknown";
}

DomainShift parse_domain_shift(const std::string& name) {
  if (name == "none") return DomainShift::kNone;
  if (name == "channel-permute") return DomainShift::kChannelPermute;
  if (name == "pixelate") return DomainShift::kPixelate;
  if (name == "invert") return DomainShift::kInvert;
  throw ConfigError("unknown domain shift '" + name + "'", "domain_shift");
}

Dataset shift_domain(const Dataset& dataset, DomainShift shift, std::uint64_t seed) {
  if (shift == DomainShift::kNone) return dataset;
  require_images(dataset.samples, "domain shift");
  Dataset d = dataset;
  Tensor& x = d.samples;
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  switch (shift) {
    case DomainShift::kChannelPermute: {
      if (C < 2) throw ConfigError("channel permutation needs at least 2 channels", "domain_shift");
      std::vector<std::size_t> perm(C);
      for (std::size_t c = 0; c < C; ++c) perm[c] = c;
      Rng rng = stream_rng(seed, Stream::kData, 17);
      // A derangement: every channel moves.
      bool moved = false;
      while (!moved) {
        rng.shuffle(perm);
        moved = true;
        for (std::size_t c = 0; c < C; ++c) moved = moved && perm[c] != c;
      }
      const Tensor src = x;
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t c = 0; c < C; ++c) {
          std::copy_n(src.data().data() + (n * C + perm[c]) * H * W, H * W, x.data().data() + (n * C + c) * H * W);
        }
      }
      break;
    }
    case DomainShift::kPixelate: {
      for (std::size_t nc = 0; nc < N * C; ++nc) {
        double* img = x.data().data() + nc * H * W;
        for (std::size_t y = 0; y < H; y += 2) {
          for (std::size_t xx = 0; xx < W; xx += 2) {
            const std::size_t y1 = std::min(H, y + 2), x1 = std::min(W, xx + 2);
            double s = 0.0;
            for (std::size_t a = y; a < y1; ++a) {
              for (std::size_t b = xx; b < x1; ++b) s += img[a * W + b];
            }
            s /= static_cast<double>((y1 - y) * (x1 - xx));
            for (std::size_t a = y; a < y1; ++a) {
              for (std::size_t b = xx; b < x1; ++b) img[a * W + b] = s;
            }
          }
        }
      }
      break;
    }
    case DomainShift::kInvert: {
      double lo = x[0], hi = x[0];
      for (double v : x.data()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      for (double& v : x.data()) v = hi + lo - v;
      break;
    }
    case DomainShift::kNone:
      break;
  }
  d.provenance.params += std::string(";shift=") + domain_shift_name(shift);
  return d;
}

}  // namespace relearn
