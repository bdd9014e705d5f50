#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "abe/tensor.hpp"

namespace abe {

enum class Colormap { Gray, Heat };

Colormap parse_colormap(const std::string& name);

/// Normalization record written next to every heatmap.
struct HeatmapBounds {
  double min = 0.0;
  double max = 0.0;
  bool constant = false;
  std::size_t width = 0;
  std::size_t height = 0;
};

/// (H, W) unchanged, (H, W, C) summed over channels, (d) as a 1 x d row.
Tensor heatmap_plane(const Tensor& attribution);

/// Min-max normalized 8-bit pixels, row-major; a constant map is all 128.
std::vector<std::uint8_t> quantize(const Tensor& plane, HeatmapBounds* bounds);

/// Writes `<stem>.pgm` (P5) and `<stem>.pgm.json` (bounds), plus `<stem>.png`
/// when `png` is set. Throws DataError on an unwritable path.
HeatmapBounds emit_heatmap(const Tensor& attribution, const std::filesystem::path& stem, Colormap colormap = Colormap::Gray,
                           bool png = false);

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
};

GrayImage read_pgm(const std::filesystem::path& path);
HeatmapBounds read_heatmap_bounds(const std::filesystem::path& sidecar);

/// Inverse of quantize: min + p/255 (max - min), or min for a constant map.
Tensor dequantize(const GrayImage& image, const HeatmapBounds& bounds);

}  // namespace abe
