#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "clear/numerics/tensor.hpp"

namespace clear::expcli {

using nn::Tensor;

/// checkerboard: unit cells alternating 0/1 starting with 0 at the top-left.
/// gradient: ramp between two colors along a random direction.
/// noise: i.i.d. uniform pixels.
/// mixed: randomized checkerboards, gradients and filled shapes on a gradient.
enum class SyntheticKind { checkerboard, gradient, noise, mixed };

SyntheticKind parse_synthetic(std::string_view name);
std::string synthetic_name(SyntheticKind kind);

/// (count, 3, height, width) in [0, 1]; deterministic in seed.
Tensor synthetic_images(SyntheticKind kind, int count, int height, int width, std::uint64_t seed);

/// 8-bit interleaved RGB.
struct Image8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;
};

/// Binary PPM (P6, maxval 255). Throws std::runtime_error naming the path.
Image8 read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Image8& img);
/// PNG through libpng, converted to 8-bit RGB.
Image8 read_png(const std::filesystem::path& path);
/// Dispatches on the file signature.
Image8 read_image(const std::filesystem::path& path);

struct CropWindow {
  int top = 0;
  int left = 0;
  int height = 0;
  int width = 0;
};
/// Centered window; rejects a window larger than the image.
CropWindow center_window(int image_height, int image_width, int crop_height, int crop_width);
Image8 center_crop(const Image8& img, int crop_height, int crop_width);

/// Pixels scaled to [0, 1] as a (1, 3, H, W) tensor, and back (rounded, clamped).
Tensor to_tensor(const Image8& img);
Image8 to_image8(const Tensor& batch, int index);

struct DatasetSpec {
  std::string path;  // directory of PNG/PPM files; empty selects the synthetic generator
  SyntheticKind synthetic = SyntheticKind::mixed;
  int count = 256;   // images to keep (0 = all files)
  int height = 16;
  int width = 16;
  bool crop = true;  // center-crop larger images; otherwise sizes must match exactly
  std::uint64_t seed = 1;
};

struct Dataset {
  Tensor images;
  int skipped = 0;
  std::vector<std::string> files;  // in iteration order; empty for synthetic data
};

/// Reads a directory (unreadable or undersized files are skipped with a
/// warning on `log` and counted) or generates synthetic images. File order is
/// a seeded shuffle of the sorted listing. Throws when nothing remains.
Dataset load_dataset(const DatasetSpec& spec, std::ostream* log = nullptr);

}  // namespace clear::expcli
