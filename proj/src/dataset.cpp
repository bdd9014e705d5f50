#include "abe/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "abe/errors.hpp"
#include "abe/random.hpp"

namespace abe {

const Shape& Dataset::input_shape() const {
  if (inputs.empty()) throw DataError("dataset '" + meta.name + "' is empty");
  return inputs.front().shape();
}

void Dataset::validate() const {
  if (inputs.size() != labels.size()) {
    throw DataError("dataset '" + meta.name + "': " + std::to_string(inputs.size()) + " inputs but " +
                    std::to_string(labels.size()) + " labels");
  }
  if (!(meta.range_lo < meta.range_hi)) throw DataError("dataset '" + meta.name + "': empty value range");
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].shape() != inputs[0].shape()) {
      throw DataError("dataset '" + meta.name + "': sample " + std::to_string(i) + " has shape " +
                      shape_string(inputs[i].shape()) + ", expected " + shape_string(inputs[0].shape()));
    }
    if (labels[i] >= meta.num_classes) {
      throw DataError("dataset '" + meta.name + "': label " + std::to_string(labels[i]) + " at sample " +
                      std::to_string(i) + " is outside [0, " + std::to_string(meta.num_classes) + ")");
    }
    for (double v : inputs[i].data()) {
      if (!std::isfinite(v) || v < meta.range_lo || v > meta.range_hi) {
        throw DataError("dataset '" + meta.name + "': sample " + std::to_string(i) + " has value " +
                        std::to_string(v) + " outside the declared range");
      }
    }
  }
}

Dataset Dataset::slice(std::size_t begin, std::size_t count) const {
  Dataset out;
  out.meta = meta;
  const std::size_t end = std::min(size(), begin + count);
  for (std::size_t i = begin; i < end; ++i) {
    out.inputs.push_back(inputs[i]);
    out.labels.push_back(labels[i]);
    if (!support.empty()) out.support.push_back(support[i]);
  }
  return out;
}

// --- synthetic -------------------------------------------------------------

Dataset make_blobs(std::size_t n, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0xB10B);
  std::normal_distribution<double> noise(0.0, 0.35);
  Dataset ds;
  ds.meta = {"blobs-2class", -3.0, 3.0, 2};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % 2;
    const double c = label == 0 ? -1.0 : 1.0;
    Tensor x({2}, 0.0);
    for (auto& v : x.data()) v = std::clamp(c + noise(rng), -3.0, 3.0);
    ds.inputs.push_back(std::move(x));
    ds.labels.push_back(label);
  }
  return ds;
}

Tensor bars_crosses_template(std::size_t label, std::size_t row, std::size_t col) {
  constexpr std::size_t N = 8;
  Tensor t({N, N, 1}, 0.0);
  auto set = [&](std::size_t r, std::size_t c) { t[r * N + c] = 1.0; };
  switch (label) {
    case 0:  // horizontal bar, two rows thick
      for (std::size_t c = 0; c < N; ++c) {
        set(row, c);
        set(row + 1, c);
      }
      break;
    case 1:  // vertical bar, two columns thick
      for (std::size_t r = 0; r < N; ++r) {
        set(r, col);
        set(r, col + 1);
      }
      break;
    case 2:  // plus
      for (std::size_t i = 0; i < N; ++i) {
        set(row, i);
        set(i, col);
      }
      break;
    case 3:  // diagonal cross
      for (std::size_t i = 0; i < N; ++i) {
        set(i, i);
        set(i, N - 1 - i);
      }
      break;
    default: throw DataError("bars-crosses has 4 classes, got label " + std::to_string(label));
  }
  return t;
}

Dataset make_bars_crosses(std::size_t n, std::uint64_t seed, double noise) {
  Rng rng = make_rng(seed, 0xBA25);
  std::uniform_int_distribution<std::size_t> bar_pos(0, 6);
  std::uniform_int_distribution<std::size_t> plus_pos(2, 5);
  std::normal_distribution<double> jitter(0.0, noise > 0.0 ? noise : 1.0);
  Dataset ds;
  ds.meta = {"bars-crosses-4class-8x8", 0.0, 1.0, 4};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % 4;
    std::size_t row = 0, col = 0;
    if (label == 0) row = bar_pos(rng);
    if (label == 1) col = bar_pos(rng);
    if (label == 2) {
      row = plus_pos(rng);
      col = plus_pos(rng);
    }
    Tensor mask = bars_crosses_template(label, row, col);
    Tensor x = mask;
    if (noise > 0.0)
      for (auto& v : x.data()) v = std::clamp(v + jitter(rng), 0.0, 1.0);
    ds.inputs.push_back(std::move(x));
    ds.labels.push_back(label);
    ds.support.push_back(std::move(mask));
  }
  return ds;
}

// --- CSV -------------------------------------------------------------------

namespace {

void finish_meta(Dataset& ds, std::size_t num_classes) {
  std::size_t max_label = 0;
  double lo = 0.0, hi = 0.0;
  bool first = true;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    max_label = std::max(max_label, ds.labels[i]);
    for (double v : ds.inputs[i].data()) {
      lo = first ? v : std::min(lo, v);
      hi = first ? v : std::max(hi, v);
      first = false;
    }
  }
  if (num_classes == 0) num_classes = max_label + 1;
  ds.meta.num_classes = num_classes;
  if (!(ds.meta.range_lo < ds.meta.range_hi)) {
    ds.meta.range_lo = lo;
    ds.meta.range_hi = hi > lo ? hi : lo + 1.0;
  }
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path, std::size_t num_classes) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open CSV file " + path.string());
  Dataset ds;
  ds.meta.name = path.filename().string();
  ds.meta.range_lo = ds.meta.range_hi = 0.0;
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": missing header row");
  std::size_t columns = 1 + static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
  if (columns < 2) throw DataError(path.string() + ": header must name at least one feature and the label");
  const std::size_t d = columns - 1;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != columns) {
      throw DataError(path.string() + ": row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                      " fields, expected " + std::to_string(columns) + " (" + std::to_string(d) +
                      " features + label)");
    }
    Tensor x({d}, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
      try {
        std::size_t used = 0;
        x[j] = std::stod(cells[j], &used);
        if (used != cells[j].size() || !std::isfinite(x[j])) throw std::invalid_argument(cells[j]);
      } catch (const std::exception&) {
        throw DataError(path.string() + ": row " + std::to_string(row) + " column " + std::to_string(j + 1) +
                        ": not a finite number '" + cells[j] + "'");
      }
    }
    long long label = -1;
    try {
      std::size_t used = 0;
      label = std::stoll(cells[d], &used);
      if (used != cells[d].size()) label = -1;
    } catch (const std::exception&) {
      label = -1;
    }
    if (label < 0 || (num_classes > 0 && static_cast<std::size_t>(label) >= num_classes)) {
      throw DataError(path.string() + ": row " + std::to_string(row) + ": label '" + cells[d] +
                      "' out of range");
    }
    ds.inputs.push_back(std::move(x));
    ds.labels.push_back(static_cast<std::size_t>(label));
  }
  if (ds.size() == 0) throw DataError(path.string() + ": no data rows");
  finish_meta(ds, num_classes);
  ds.validate();
  return ds;
}

void write_csv(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(17);
  const std::size_t d = shape_size(data.input_shape());
  for (std::size_t j = 0; j < d; ++j) out << 'x' << j << ',';
  out << "label\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (double v : data.inputs[i].data()) out << v << ',';
    out << data.labels[i] << '\n';
  }
}

// --- IDX -------------------------------------------------------------------

namespace {

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open IDX file " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::uint32_t be32(const std::string& buf, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(buf[at + i]);
  return v;
}

struct IdxArray {
  std::vector<std::size_t> dims;
  std::vector<double> values;
};

std::size_t idx_elem_size(unsigned type) {
  switch (type) {
    case 0x08: case 0x09: return 1;
    case 0x0B: return 2;
    case 0x0C: case 0x0D: return 4;
    case 0x0E: return 8;
    default: return 0;
  }
}

IdxArray parse_idx(const std::filesystem::path& path) {
  const std::string buf = read_all(path);
  const std::string name = path.string();
  if (buf.size() < 4) throw DataError(name + ": truncated IDX header at byte 0");
  if (buf[0] != 0 || buf[1] != 0) throw DataError(name + ": bad IDX magic at byte 0");
  const unsigned type = static_cast<unsigned char>(buf[2]);
  const unsigned ndims = static_cast<unsigned char>(buf[3]);
  const std::size_t esize = idx_elem_size(type);
  if (esize == 0) throw DataError(name + ": unsupported IDX element type at byte 2");
  if (ndims == 0) throw DataError(name + ": IDX file with zero dimensions at byte 3");
  const std::size_t header = 4 + 4 * static_cast<std::size_t>(ndims);
  if (buf.size() < header) throw DataError(name + ": truncated IDX dimension list at byte 4");
  IdxArray arr;
  std::size_t total = 1;
  for (unsigned i = 0; i < ndims; ++i) {
    const std::size_t dim = be32(buf, 4 + 4 * i);
    if (dim == 0) throw DataError(name + ": zero-sized dimension at byte " + std::to_string(4 + 4 * i));
    arr.dims.push_back(dim);
    total *= dim;
  }
  if (buf.size() != header + total * esize) {
    throw DataError(name + ": payload is " + std::to_string(buf.size() - header) + " bytes starting at byte " +
                    std::to_string(header) + ", expected " + std::to_string(total * esize));
  }
  arr.values.resize(total);
  for (std::size_t i = 0; i < total; ++i) {
    const std::size_t at = header + i * esize;
    switch (type) {
      case 0x08: arr.values[i] = static_cast<unsigned char>(buf[at]); break;
      case 0x09: arr.values[i] = static_cast<signed char>(buf[at]); break;
      case 0x0B: arr.values[i] = static_cast<std::int16_t>((static_cast<unsigned char>(buf[at]) << 8) |
                                                          static_cast<unsigned char>(buf[at + 1]));
        break;
      case 0x0C: arr.values[i] = static_cast<std::int32_t>(be32(buf, at)); break;
      case 0x0D: {
        const std::uint32_t bits = be32(buf, at);
        float f;
        std::memcpy(&f, &bits, 4);
        arr.values[i] = f;
        break;
      }
      case 0x0E: {
        std::uint64_t bits = (static_cast<std::uint64_t>(be32(buf, at)) << 32) | be32(buf, at + 4);
        double d;
        std::memcpy(&d, &bits, 8);
        arr.values[i] = d;
        break;
      }
    }
  }
  if (type == 0x08) {
    for (auto& v : arr.values) v /= 255.0;
  }
  return arr;
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::size_t num_classes) {
  const IdxArray img = parse_idx(images);
  const std::string lab_buf = read_all(labels);
  if (lab_buf.size() < 8 || be32(lab_buf, 0) != 0x00000801) {
    throw DataError(labels.string() + ": label file must have magic 0x00000801 at byte 0");
  }
  const std::size_t n = be32(lab_buf, 4);
  if (lab_buf.size() != 8 + n) {
    throw DataError(labels.string() + ": expected " + std::to_string(n) + " label bytes starting at byte 8, got " +
                    std::to_string(lab_buf.size() - 8));
  }
  if (img.dims[0] != n) {
    throw DataError(images.string() + ": " + std::to_string(img.dims[0]) + " images but " + std::to_string(n) +
                    " labels");
  }
  Shape shape(img.dims.begin() + 1, img.dims.end());
  if (shape.size() == 2) shape.push_back(1);
  if (shape.empty()) shape = {1};
  const std::size_t per = shape_size(shape);
  Dataset ds;
  ds.meta.name = images.filename().string();
  ds.meta.range_lo = 0.0;
  ds.meta.range_hi = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> v(img.values.begin() + static_cast<std::ptrdiff_t>(i * per),
                          img.values.begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
    ds.inputs.emplace_back(shape, std::move(v));
    const std::size_t label = static_cast<unsigned char>(lab_buf[8 + i]);
    if (num_classes > 0 && label >= num_classes) {
      throw DataError(labels.string() + ": label " + std::to_string(label) + " at byte " + std::to_string(8 + i) +
                      " out of range");
    }
    ds.labels.push_back(label);
  }
  const bool unit_range = std::all_of(img.values.begin(), img.values.end(),
                                      [](double v) { return v >= 0.0 && v <= 1.0; });
  if (!unit_range) ds.meta.range_lo = ds.meta.range_hi = 0.0;
  finish_meta(ds, num_classes);
  ds.validate();
  return ds;
}

void write_idx_images(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  const Shape& s = data.input_shape();
  Shape dims{data.size()};
  dims.insert(dims.end(), s.begin(), s.end());
  if (dims.size() == 4 && dims[3] == 1) dims.pop_back();
  auto put = [&](std::uint32_t v) {
    const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                       static_cast<char>(v)};
    out.write(b, 4);
  };
  put(0x00000800u | static_cast<std::uint32_t>(dims.size()));
  for (auto d : dims) put(static_cast<std::uint32_t>(d));
  for (const auto& x : data.inputs) {
    for (double v : x.data()) {
      const double scaled = std::round((v - data.meta.range_lo) / data.range() * 255.0);
      out.put(static_cast<char>(static_cast<unsigned char>(std::clamp(scaled, 0.0, 255.0))));
    }
  }
}

void write_idx_labels(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  const char magic[4] = {0, 0, 8, 1};
  out.write(magic, 4);
  const auto n = static_cast<std::uint32_t>(data.size());
  const char b[4] = {static_cast<char>(n >> 24), static_cast<char>(n >> 16), static_cast<char>(n >> 8),
                     static_cast<char>(n)};
  out.write(b, 4);
  for (auto l : data.labels) out.put(static_cast<char>(l));
}

// --- dispatch --------------------------------------------------------------

Dataset load_dataset(const std::string& spec, std::size_t n, std::uint64_t seed) {
  const auto colon = spec.find(':');
  if (colon == std::string::npos) {
    throw UsageError("dataset '" + spec + "' must be csv:<path>, idx:<images>,<labels> or synthetic:<name>");
  }
  const std::string format = spec.substr(0, colon);
  const std::string rest = spec.substr(colon + 1);
  if (format == "csv") return load_csv(rest);
  if (format == "idx") {
    const auto comma = rest.find(',');
    if (comma == std::string::npos) throw UsageError("idx dataset needs '<images>,<labels>'");
    return load_idx(rest.substr(0, comma), rest.substr(comma + 1));
  }
  if (format == "synthetic") {
    if (rest == "blobs-2class" || rest == "blobs") return make_blobs(n, seed);
    if (rest == "bars-crosses-4class-8x8" || rest == "bars") return make_bars_crosses(n, seed);
    throw UsageError("unknown synthetic dataset '" + rest +
                     "' (available: blobs-2class, bars-crosses-4class-8x8)");
  }
  throw UsageError("unknown dataset format '" + format + "' (available: csv, idx, synthetic)");
}

}  // namespace abe
