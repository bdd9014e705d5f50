#include "abe/heatmap.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <memory>

#include "abe/errors.hpp"

namespace abe {

Colormap parse_colormap(const std::string& name) {
  if (name == "gray") return Colormap::Gray;
  if (name == "heat") return Colormap::Heat;
  throw UsageError("unknown colormap '" + name + "' (available: gray, heat)");
}

Tensor heatmap_plane(const Tensor& a) {
  switch (a.rank()) {
    case 1: return a.reshaped({1, a.size()});
    case 2: return a;
    case 3: {
      const std::size_t h = a.shape()[0], w = a.shape()[1], c = a.shape()[2];
      Tensor plane({h, w}, 0.0);
      for (std::size_t i = 0; i < h * w; ++i)
        for (std::size_t k = 0; k < c; ++k) plane[i] += a[i * c + k];
      return plane;
    }
    default: throw ShapeError("heatmap needs a rank 1-3 attribution, got " + shape_string(a.shape()));
  }
}

std::vector<std::uint8_t> quantize(const Tensor& plane, HeatmapBounds* bounds) {
  require_finite(plane, "heatmap");
  if (plane.rank() != 2) throw ShapeError("quantize needs a 2-D plane");
  HeatmapBounds b;
  b.height = plane.shape()[0];
  b.width = plane.shape()[1];
  const auto [lo, hi] = std::minmax_element(plane.values().begin(), plane.values().end());
  b.min = plane.empty() ? 0.0 : *lo;
  b.max = plane.empty() ? 0.0 : *hi;
  b.constant = b.min == b.max;
  std::vector<std::uint8_t> px(plane.size(), 128);
  if (!b.constant) {
    for (std::size_t i = 0; i < plane.size(); ++i) {
      px[i] = static_cast<std::uint8_t>(std::lround(255.0 * (plane[i] - b.min) / (b.max - b.min)));
    }
  }
  if (bounds) *bounds = b;
  return px;
}

namespace {

// Plain-C body so that longjmp from libpng crosses no C++ destructors.
bool encode_png(FILE* fp, const std::uint8_t* rows, png_uint_32 w, png_uint_32 h, int color_type, std::size_t stride) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, w, h, 8, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (png_uint_32 r = 0; r < h; ++r) png_write_row(png, rows + r * stride);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

void write_png(const std::filesystem::path& path, const std::vector<std::uint8_t>& px, std::size_t w, std::size_t h,
               Colormap cmap) {
  const std::size_t channels = cmap == Colormap::Gray ? 1 : 3;
  std::vector<std::uint8_t> rows(px.size() * channels);
  for (std::size_t i = 0; i < px.size(); ++i) {
    if (channels == 1) {
      rows[i] = px[i];
      continue;
    }
    // black -> red -> yellow -> white
    const double t = px[i] / 255.0;
    rows[3 * i] = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(3.0 * t, 0.0, 1.0)));
    rows[3 * i + 1] = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(3.0 * t - 1.0, 0.0, 1.0)));
    rows[3 * i + 2] = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(3.0 * t - 2.0, 0.0, 1.0)));
  }
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw DataError("cannot write " + path.string());
  if (!encode_png(fp.get(), rows.data(), static_cast<png_uint_32>(w), static_cast<png_uint_32>(h),
                  channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, w * channels)) {
    throw DataError("libpng failed writing " + path.string());
  }
}

}  // namespace

HeatmapBounds emit_heatmap(const Tensor& attribution, const std::filesystem::path& stem, Colormap colormap,
                           bool png) {
  const Tensor plane = heatmap_plane(attribution);
  HeatmapBounds b;
  const std::vector<std::uint8_t> px = quantize(plane, &b);

  const std::filesystem::path pgm = stem.string() + ".pgm";
  std::ofstream out(pgm, std::ios::binary);
  if (!out) throw DataError("cannot write " + pgm.string());
  out << "P5\n" << b.width << ' ' << b.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!out) throw DataError("write failed: " + pgm.string());

  nlohmann::ordered_json side;
  side["schema"] = "abe.heatmap/1";
  side["width"] = b.width;
  side["height"] = b.height;
  side["min"] = b.min;
  side["max"] = b.max;
  side["constant"] = b.constant;
  side["channel_reduction"] = attribution.rank() == 3 ? "sum" : "none";
  std::ofstream js(pgm.string() + ".json");
  if (!js) throw DataError("cannot write " + pgm.string() + ".json");
  js << side.dump(2) << '\n';

  if (png) write_png(stem.string() + ".png", px, b.width, b.height, colormap);
  return b;
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::string magic;
  std::size_t maxval = 0;
  GrayImage img;
  in >> magic >> img.width >> img.height >> maxval;
  if (!in || magic != "P5" || maxval != 255) throw DataError(path.string() + ": not an 8-bit P5 image");
  in.get();
  img.pixels.resize(img.width * img.height);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
    throw DataError(path.string() + ": truncated at byte " + std::to_string(in.gcount()));
  }
  return img;
}

HeatmapBounds read_heatmap_bounds(const std::filesystem::path& sidecar) {
  std::ifstream in(sidecar);
  if (!in) throw DataError("cannot read " + sidecar.string());
  try {
    const auto j = nlohmann::json::parse(in);
    HeatmapBounds b;
    b.min = j.at("min").get<double>();
    b.max = j.at("max").get<double>();
    b.constant = j.at("constant").get<bool>();
    b.width = j.at("width").get<std::size_t>();
    b.height = j.at("height").get<std::size_t>();
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(sidecar.string() + ": " + e.what());
  }
}

Tensor dequantize(const GrayImage& image, const HeatmapBounds& bounds) {
  if (image.width != bounds.width || image.height != bounds.height) {
    throw DataError("heatmap bounds do not match the image size");
  }
  Tensor plane({image.height, image.width}, bounds.min);
  if (bounds.constant) return plane;
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    plane[i] = bounds.min + image.pixels[i] / 255.0 * (bounds.max - bounds.min);
  }
  return plane;
}

}  // namespace abe
