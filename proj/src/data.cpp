#include "inrn/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "inrn/error.hpp"

namespace inrn {

Tensor Image::to_tensor() const { return Tensor(Shape{height, width, channels}, pixels); }

Image Image::from_tensor(const Tensor& t) {
  if (t.rank() != 3) throw DimensionError("image tensor must be [H,W,C], got " + shape_string(t.shape()));
  Image img{t.dim(0), t.dim(1), t.dim(2), {}};
  img.pixels.reserve(t.size());
  for (double v : t.data()) img.pixels.push_back(std::clamp(v, 0.0, 1.0));
  return img;
}

LabeledDataset LabeledDataset::head(std::size_t n) const {
  LabeledDataset out;
  out.num_classes = num_classes;
  out.split = split;
  n = std::min(n, size());
  out.images.assign(images.begin(), images.begin() + static_cast<std::ptrdiff_t>(n));
  out.labels.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n));
  return out;
}

Tensor LabeledDataset::batch(std::span<const std::size_t> indices) const {
  if (images.empty()) throw ContractError("batch of an empty dataset");
  const Image& first = images.front();
  const std::size_t h = first.height, w = first.width, c = first.channels;
  Tensor out(Shape{indices.size(), c, h, w});
  auto o = out.mutable_data();
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const Image& img = images.at(indices[b]);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          o[((b * c + ch) * h + y) * w + x] = img.pixels[(y * w + x) * c + ch];
  }
  return out;
}

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class PpmReader {
 public:
  PpmReader(const std::vector<unsigned char>& bytes, const std::filesystem::path& path)
      : bytes_(bytes), path_(path) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(path_.string() + ": " + what + " at byte offset " + std::to_string(pos_));
  }

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const unsigned char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(c)) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number() {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) fail("expected a decimal number");
    std::size_t v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_] - '0');
      if (v > (1u << 24)) fail("header value too large");
      ++pos_;
    }
    return v;
  }

  std::size_t pos_ = 0;

 private:
  const std::vector<unsigned char>& bytes_;
  const std::filesystem::path& path_;
};

std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t offset) {
  return (std::uint32_t{b[offset]} << 24) | (std::uint32_t{b[offset + 1]} << 16) |
         (std::uint32_t{b[offset + 2]} << 8) | std::uint32_t{b[offset + 3]};
}

void write_be32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

unsigned char quantize(double v) {
  return static_cast<unsigned char>(std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5));
}

}  // namespace

Image load_ppm(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  PpmReader r(bytes, path);
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') r.fail("missing P6 magic");
  r.pos_ = 2;
  const std::size_t width = r.number();
  const std::size_t height = r.number();
  const std::size_t maxval = r.number();
  if (width == 0 || height == 0) r.fail("zero image dimension");
  if (maxval != 255) r.fail("unsupported maxval " + std::to_string(maxval) + " (only 255)");
  if (r.pos_ >= bytes.size() || !std::isspace(bytes[r.pos_])) r.fail("expected whitespace after maxval");
  ++r.pos_;
  const std::size_t need = width * height * 3;
  if (bytes.size() - r.pos_ < need) {
    r.fail("truncated payload, need " + std::to_string(need) + " bytes, have " +
           std::to_string(bytes.size() - r.pos_));
  }
  Image img{height, width, 3, std::vector<double>(need)};
  for (std::size_t i = 0; i < need; ++i) img.pixels[i] = bytes[r.pos_ + i] / 255.0;
  return img;
}

void save_ppm(const Image& image, const std::filesystem::path& path) {
  if (image.channels != 3 && image.channels != 1) {
    throw DimensionError("save_ppm: unsupported channel count " + std::to_string(image.channels));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write " + path.string());
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  std::vector<unsigned char> payload;
  payload.reserve(image.height * image.width * 3);
  for (std::size_t p = 0; p < image.height * image.width; ++p) {
    for (std::size_t c = 0; c < 3; ++c) {
      payload.push_back(quantize(image.pixels[p * image.channels + (image.channels == 1 ? 0 : c)]));
    }
  }
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
}

LabeledDataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                        Split split) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);
  if (img.size() < 16) throw ParseError(images_path.string() + ": truncated header at byte offset 0");
  if (lab.size() < 8) throw ParseError(labels_path.string() + ": truncated header at byte offset 0");
  if (read_be32(img, 0) != 0x00000803) {
    throw ParseError(images_path.string() + ": bad image magic at byte offset 0");
  }
  if (read_be32(lab, 0) != 0x00000801) {
    throw ParseError(labels_path.string() + ": bad label magic at byte offset 0");
  }
  const std::size_t n = read_be32(img, 4), rows = read_be32(img, 8), cols = read_be32(img, 12);
  const std::size_t n_labels = read_be32(lab, 4);
  if (n != n_labels) {
    throw ParseError("count mismatch: " + std::to_string(n) + " images vs " + std::to_string(n_labels) +
                     " labels");
  }
  if (img.size() - 16 < n * rows * cols) {
    throw ParseError(images_path.string() + ": truncated payload at byte offset " + std::to_string(img.size()));
  }
  if (lab.size() - 8 < n) {
    throw ParseError(labels_path.string() + ": truncated payload at byte offset " + std::to_string(lab.size()));
  }
  LabeledDataset data;
  data.split = split;
  data.images.reserve(n);
  std::size_t max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    Image im{rows, cols, 1, std::vector<double>(rows * cols)};
    const std::size_t base = 16 + i * rows * cols;
    for (std::size_t p = 0; p < rows * cols; ++p) im.pixels[p] = img[base + p] / 255.0;
    data.images.push_back(std::move(im));
    data.labels.push_back(lab[8 + i]);
    max_label = std::max<std::size_t>(max_label, lab[8 + i]);
  }
  data.num_classes = std::max<std::size_t>(10, max_label + 1);
  return data;
}

void save_idx(const LabeledDataset& data, const std::filesystem::path& images_path,
              const std::filesystem::path& labels_path) {
  if (data.images.empty()) throw ContractError("save_idx: empty dataset");
  const std::size_t rows = data.images[0].height, cols = data.images[0].width;
  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lab(labels_path, std::ios::binary);
  if (!img || !lab) throw ParseError("cannot write IDX files");
  write_be32(img, 0x00000803);
  write_be32(img, static_cast<std::uint32_t>(data.size()));
  write_be32(img, static_cast<std::uint32_t>(rows));
  write_be32(img, static_cast<std::uint32_t>(cols));
  write_be32(lab, 0x00000801);
  write_be32(lab, static_cast<std::uint32_t>(data.size()));
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Image& im = data.images[i];
    if (im.height != rows || im.width != cols || im.channels != 1) {
      throw DimensionError("save_idx: images must be uniform single-channel");
    }
    for (double v : im.pixels) img.put(static_cast<char>(quantize(v)));
    lab.put(static_cast<char>(data.labels[i]));
  }
}

double normalized_coord(std::size_t i, std::size_t n) {
  if (n <= 1) return 0.0;
  return 2.0 * static_cast<double>(i) / static_cast<double>(n - 1) - 1.0;
}

Tensor coord_grid(std::size_t height, std::size_t width) {
  Tensor out(Shape{height * width, 2});
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < height; ++i)
    for (std::size_t j = 0; j < width; ++j) {
      o[(i * width + j) * 2] = normalized_coord(i, height);
      o[(i * width + j) * 2 + 1] = normalized_coord(j, width);
    }
  return out;
}

Tensor time_coord(std::size_t t_index, std::size_t frames) {
  return Tensor(Shape{1, 1}, std::vector<double>{normalized_coord(t_index, frames)});
}

Tensor time_coords(std::size_t frames) {
  Tensor out(Shape{frames, 1});
  for (std::size_t t = 0; t < frames; ++t) out.mutable_data()[t] = normalized_coord(t, frames);
  return out;
}

}  // namespace inrn
