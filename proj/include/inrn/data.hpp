#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "inrn/tensor.hpp"

namespace inrn {

/// Row-major, channel-last pixels in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 3;
  std::vector<double> pixels;

  /// [H, W, C] view of the pixels.
  Tensor to_tensor() const;
  /// Takes [H, W, C]; values are clamped into [0, 1].
  static Image from_tensor(const Tensor& t);
};

enum class Split { train, test };

struct LabeledDataset {
  std::vector<Image> images;
  std::vector<std::size_t> labels;
  std::size_t num_classes = 10;
  Split split = Split::train;

  std::size_t size() const noexcept { return images.size(); }
  /// First `n` items (all when n >= size()).
  LabeledDataset head(std::size_t n) const;
  /// [count, C, H, W] batch of the items at `indices`.
  Tensor batch(std::span<const std::size_t> indices) const;
};

/// Binary P6 PPM with maxval 255. Errors carry the byte offset.
Image load_ppm(const std::filesystem::path& path);
/// Quantizes with round-half-up of v * 255.
void save_ppm(const Image& image, const std::filesystem::path& path);

/// IDX pair: images magic 0x00000803 (u8, [n, rows, cols]) and labels magic
/// 0x00000801 (u8, [n]).
LabeledDataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                        Split split = Split::train);
void save_idx(const LabeledDataset& data, const std::filesystem::path& images_path,
              const std::filesystem::path& labels_path);

/// Normalized coordinate 2i/(n-1) - 1; 0 when n == 1.
double normalized_coord(std::size_t i, std::size_t n);
/// [H*W, 2] of (row, column) coordinates in row-major pixel order.
Tensor coord_grid(std::size_t height, std::size_t width);
/// [1, 1] holding the normalized time of frame t_index out of T.
Tensor time_coord(std::size_t t_index, std::size_t frames);
/// [T, 1] of every frame's time.
Tensor time_coords(std::size_t frames);

}  // namespace inrn
