#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "abe/tensor.hpp"

namespace abe {

struct DatasetMeta {
  std::string name;
  double range_lo = 0.0;
  double range_hi = 1.0;
  std::size_t num_classes = 0;
};

/// Labeled samples of uniform shape. Synthetic generators also fill `support`
/// with a 0/1 mask of the pixels that carry the class pattern.
struct Dataset {
  std::vector<Tensor> inputs;
  std::vector<std::size_t> labels;
  std::vector<Tensor> support;
  DatasetMeta meta;

  std::size_t size() const { return inputs.size(); }
  const Shape& input_shape() const;
  double range() const { return meta.range_hi - meta.range_lo; }

  /// Throws DataError when counts, shapes, labels or value range disagree with meta.
  void validate() const;
  Dataset slice(std::size_t begin, std::size_t count) const;
};

/// Two Gaussian blobs in 2-D centered at (-1,-1) and (+1,+1), sigma 0.35,
/// clamped to [-3, 3]. Labels alternate 0,1,0,1...
Dataset make_blobs(std::size_t n, std::uint64_t seed);

/// 8x8x1 images in [0,1]: horizontal bar, vertical bar, plus, diagonal cross.
/// Bar and plus positions vary per sample; Gaussian pixel noise of `noise`.
Dataset make_bars_crosses(std::size_t n, std::uint64_t seed, double noise = 0.1);

/// Noise-free template for (class, row, col); used by the nearest-template oracle.
Tensor bars_crosses_template(std::size_t label, std::size_t row, std::size_t col);

/// CSV: header row, then rows of d reals followed by an integer label.
Dataset load_csv(const std::filesystem::path& path, std::size_t num_classes = 0);

/// IDX image file (magic 0x0000TTNN) paired with an IDX label file (0x00000801).
/// Unsigned-byte images are scaled to [0,1]; inputs have shape (H, W, 1).
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::size_t num_classes = 0);

void write_idx_images(const std::filesystem::path& path, const Dataset& data);
void write_idx_labels(const std::filesystem::path& path, const Dataset& data);
void write_csv(const std::filesystem::path& path, const Dataset& data);

/// Resolves "csv:<path>", "idx:<images>,<labels>", "synthetic:blobs-2class" or
/// "synthetic:bars-crosses-4class-8x8". `n` and `seed` apply to synthetic sets.
Dataset load_dataset(const std::string& spec, std::size_t n, std::uint64_t seed);

}  // namespace abe
