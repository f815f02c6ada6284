// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "relearn/rng.hpp"
#include "relearn/tensor.hpp"

namespace relearn {

/// Where a dataset came from: a generator with its parameters and seed, or a
/// file with its checksum.
struct Provenance {
  std::string source;  // generator kind or "file"
  std::string params;  // canonical "key=value;..." description
  std::uint64_t seed = 0;
  std::string path;
  std::string checksum;  // crc32, lowercase hex
};

/// Samples are [N, D] vectors or [N, C, H, W] images.
struct Dataset {
  Tensor samples;
  std::vector<int> labels;
  std::size_t classes = 0;
  std::string split = "all";
  Provenance provenance;

  std::size_t size() const { return labels.size(); }
  bool is_image() const { return samples.rank() == 4; }
  Shape sample_shape() const;
  /// Throws ContractError unless sizes agree and labels are in range.
  void validate() const;
  /// Rows in the given order, same class count.
  Dataset subset(std::span<const std::size_t> indices) const;
  std::vector<std::size_t> class_counts() const;
};

enum class SyntheticKind { kGaussianBlobs, kConcentricSpirals, kTeacherNetwork };

const char* synthetic_kind_name(SyntheticKind kind);
SyntheticKind parse_synthetic_kind(const std::string& name);

struct SyntheticParams {
  std::size_t classes = 8;
  std::size_t per_class = 250;
  std::size_t dim = 16;          // blobs and teacher input dimension
  double separation = 3.0;       // blobs: std of class centres (noise std is 1)
  double noise = 0.1;            // spirals: additive noise std
  double turns = 1.0;            // spirals: revolutions per arm
  std::size_t teacher_width = 32;
  std::size_t teacher_depth = 3;  // hidden layers of the teacher
  std::vector<std::size_t> image;  // optional {C, H, W}; reshapes samples

  std::string describe() const;
};

/// Deterministic synthetic dataset. Every class gets exactly `per_class`
/// samples; the teacher network's labels are the argmax of a frozen random
/// relu MLP, with biases calibrated so that all classes are reachable.
Dataset gen_synthetic(SyntheticKind kind, const SyntheticParams& params, std::uint64_t seed);

// --- files ------------------------------------------------------------------

struct IdxArray {
  std::uint8_t type = 0x08;
  std::vector<std::size_t> dims;
  std::vector<std::uint8_t> bytes;
};

/// Parses an unsigned-byte IDX file. ParseError carries the byte offset.
IdxArray read_idx(const std::filesystem::path& path);
void write_idx(const std::filesystem::path& path, const IdxArray& array);

/// Image file (magic 0x00000803) plus label file (0x00000801). Pixels are
/// scaled to [0, 1] and images get a singleton channel axis.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);
/// Inverse of load_idx; pixel values are quantized to multiples of 1/255.
void save_idx(const Dataset& dataset, const std::filesystem::path& images, const std::filesystem::path& labels);

struct CsvSchema {
  std::size_t label_column = 0;
  bool header = false;
};

/// Label column plus numeric features per row. ParseError carries the
/// 1-based line number.
Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema = {});
/// Writes `label,f1,f2,...` rows with round-trip precision.
void save_csv(const Dataset& dataset, const std::filesystem::path& path);

std::string crc32_hex(std::span<const std::uint8_t> bytes);
std::string file_checksum(const std::filesystem::path& path);

// --- augmentation and splitting ------------------------------------------------

/// Horizontal mirror of every image in [N, C, H, W].
Tensor hflip(const Tensor& images);
/// Zero-pads by `pad` and crops the original size at offset (oy, ox) of the
/// padded frame; offset (0, 0) shifts content by (+pad, +pad).
Tensor pad_crop(const Tensor& images, std::size_t pad, std::size_t oy, std::size_t ox);

/// Per-sample flip with probability 0.5 and a random crop at a uniform offset
/// in [0, 2*pad]^2. ConfigError on vector data.
Tensor augment(const Tensor& batch, bool flip, std::size_t crop_pad, Rng& rng);

/// Stratified partition; each class is shuffled with the seed and split by
/// largest remainder. Parts keep the original sample order.
std::vector<Dataset> split_dataset(const Dataset& dataset, std::span<const double> fractions, std::uint64_t seed);

/// Keeps only the listed classes and relabels them to 0..k-1 in list order.
Dataset select_classes(const Dataset& dataset, std::span<const int> classes);

enum class DomainShift { kNone, kChannelPermute, kPixelate, kInvert };

const char* domain_shift_name(DomainShift shift);
DomainShift parse_domain_shift(const std::string& name);

/// Synthetic domain shift of an image dataset, labels unchanged.
Dataset shift_domain(const Dataset& dataset, DomainShift shift, std::uint64_t seed);

}  // namespace relearn
