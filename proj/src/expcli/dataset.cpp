#include "clear/expcli/dataset.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <ostream>
#include <stdexcept>

#include "clear/numerics/rng.hpp"

namespace clear::expcli {

namespace fs = std::filesystem;

SyntheticKind parse_synthetic(std::string_view name) {
  if (name == "checkerboard") return SyntheticKind::checkerboard;
  if (name == "gradient") return SyntheticKind::gradient;
  if (name == "noise") return SyntheticKind::noise;
  if (name == "mixed") return SyntheticKind::mixed;
  throw std::invalid_argument("unknown synthetic kind '" + std::string(name) +
                              "' (expected checkerboard, gradient, noise or mixed)");
}

std::string synthetic_name(SyntheticKind kind) {
  switch (kind) {
    case SyntheticKind::checkerboard: return "checkerboard";
    case SyntheticKind::gradient: return "gradient";
    case SyntheticKind::noise: return "noise";
    case SyntheticKind::mixed: return "mixed";
  }
  return "mixed";
}

namespace {

using Color = std::array<double, 3>;

Color random_color(Rng& rng) { return {rng.uniform(), rng.uniform(), rng.uniform()}; }

void paint_gradient(Tensor& x, int n, Rng& rng) {
  const int h = x.dim(2), w = x.dim(3);
  const Color a = random_color(rng), b = random_color(rng);
  const double theta = rng.uniform(0.0, 2.0 * M_PI);
  const double dx = std::cos(theta), dy = std::sin(theta);
  // Project pixel centres on the direction and stretch to [0, 1].
  const double span = std::abs(dx) * (w - 1) + std::abs(dy) * (h - 1);
  const double lo = std::min(0.0, dx * (w - 1)) + std::min(0.0, dy * (h - 1));
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const double u = span > 0.0 ? (dx * j + dy * i - lo) / span : 0.0;
      for (int c = 0; c < 3; ++c) x.at(n, c, i, j) = (1.0 - u) * a[c] + u * b[c];
    }
}

void paint_checkerboard(Tensor& x, int n, int cell, const Color& a, const Color& b, int shift_i, int shift_j) {
  for (int i = 0; i < x.dim(2); ++i)
    for (int j = 0; j < x.dim(3); ++j) {
      const bool odd = (((i + shift_i) / cell) + ((j + shift_j) / cell)) % 2;
      for (int c = 0; c < 3; ++c) x.at(n, c, i, j) = odd ? b[c] : a[c];
    }
}

void paint_shapes(Tensor& x, int n, Rng& rng) {
  paint_gradient(x, n, rng);
  const int h = x.dim(2), w = x.dim(3);
  const int shapes = rng.uniform_int(1, 3);
  for (int s = 0; s < shapes; ++s) {
    const Color col = random_color(rng);
    const double ci = rng.uniform(0.0, h), cj = rng.uniform(0.0, w);
    const double ri = rng.uniform(0.15, 0.4) * h, rj = rng.uniform(0.15, 0.4) * w;
    const bool disc = rng.uniform() < 0.5;
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        const double di = (i + 0.5 - ci) / ri, dj = (j + 0.5 - cj) / rj;
        const bool inside = disc ? di * di + dj * dj <= 1.0 : std::abs(di) <= 1.0 && std::abs(dj) <= 1.0;
        if (inside)
          for (int c = 0; c < 3; ++c) x.at(n, c, i, j) = col[c];
      }
  }
}

}  // namespace

Tensor synthetic_images(SyntheticKind kind, int count, int height, int width, std::uint64_t seed) {
  if (count < 1 || height < 1 || width < 1) throw std::invalid_argument("synthetic_images: extents must be positive");
  Tensor x({count, 3, height, width});
  for (int n = 0; n < count; ++n) {
    Rng rng(derive_seed(seed, "synthetic", static_cast<std::uint64_t>(n)));
    switch (kind) {
      case SyntheticKind::checkerboard: paint_checkerboard(x, n, 1, {0, 0, 0}, {1, 1, 1}, 0, 0); break;
      case SyntheticKind::gradient: paint_gradient(x, n, rng); break;
      case SyntheticKind::noise:
        for (int c = 0; c < 3; ++c)
          for (int i = 0; i < height; ++i)
            for (int j = 0; j < width; ++j) x.at(n, c, i, j) = rng.uniform();
        break;
      case SyntheticKind::mixed: {
        const double pick = rng.uniform();
        if (pick < 0.25) {
          const int cell = rng.uniform_int(1, std::max(1, std::min(height, width) / 4));
          paint_checkerboard(x, n, cell, random_color(rng), random_color(rng), rng.uniform_int(0, cell - 1),
                             rng.uniform_int(0, cell - 1));
        } else if (pick < 0.5) {
          paint_gradient(x, n, rng);
        } else {
          paint_shapes(x, n, rng);
        }
        break;
      }
    }
  }
  return x;
}

namespace {

// Skips whitespace and '#' comments between PPM header tokens.
int ppm_token(std::istream& in, const fs::path& path) {
  for (;;) {
    const int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  int v = -1;
  if (!(in >> v) || v < 0) throw std::runtime_error("read_ppm: malformed header in " + path.string());
  return v;
}

}  // namespace

Image8 read_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_ppm: cannot open " + path.string());
  char magic[2] = {};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || magic[1] != '6') throw std::runtime_error("read_ppm: not a binary PPM: " + path.string());
  Image8 img;
  img.width = ppm_token(in, path);
  img.height = ppm_token(in, path);
  const int maxval = ppm_token(in, path);
  if (maxval != 255 || img.width == 0 || img.height == 0)
    throw std::runtime_error("read_ppm: only non-empty 8-bit images are supported: " + path.string());
  in.get();  // single whitespace before the raster
  img.rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.rgb.size()))
    throw std::runtime_error("read_ppm: truncated raster in " + path.string());
  return img;
}

void write_ppm(const fs::path& path, const Image8& img) {
  if (img.rgb.size() != static_cast<std::size_t>(img.width) * img.height * 3)
    throw std::invalid_argument("write_ppm: raster size does not match extents");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_ppm: cannot open " + path.string());
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (!out) throw std::runtime_error("write_ppm: write failed for " + path.string());
}

Image8 read_png(const fs::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str()))
    throw std::runtime_error("read_png: " + path.string() + ": " + png.message);
  png.format = PNG_FORMAT_RGB;
  Image8 img;
  img.width = static_cast<int>(png.width);
  img.height = static_cast<int>(png.height);
  img.rgb.resize(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, img.rgb.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw std::runtime_error("read_png: " + path.string() + ": " + msg);
  }
  return img;
}

Image8 read_image(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_image: cannot open " + path.string());
  unsigned char sig[8] = {};
  in.read(reinterpret_cast<char*>(sig), 8);
  if (in.gcount() >= 2 && sig[0] == 'P' && sig[1] == '6') return read_ppm(path);
  if (in.gcount() == 8 && png_sig_cmp(sig, 0, 8) == 0) return read_png(path);
  throw std::runtime_error("read_image: unrecognized format: " + path.string());
}

CropWindow center_window(int image_height, int image_width, int crop_height, int crop_width) {
  if (crop_height < 1 || crop_width < 1 || crop_height > image_height || crop_width > image_width)
    throw std::invalid_argument("center_window: " + std::to_string(crop_height) + "x" + std::to_string(crop_width) +
                                " does not fit in " + std::to_string(image_height) + "x" +
                                std::to_string(image_width));
  return {(image_height - crop_height) / 2, (image_width - crop_width) / 2, crop_height, crop_width};
}

Image8 center_crop(const Image8& img, int crop_height, int crop_width) {
  const CropWindow win = center_window(img.height, img.width, crop_height, crop_width);
  Image8 out;
  out.width = crop_width;
  out.height = crop_height;
  out.rgb.resize(static_cast<std::size_t>(crop_width) * crop_height * 3);
  for (int i = 0; i < crop_height; ++i) {
    const auto src = img.rgb.begin() + (static_cast<std::size_t>(win.top + i) * img.width + win.left) * 3;
    std::copy_n(src, crop_width * 3, out.rgb.begin() + static_cast<std::size_t>(i) * crop_width * 3);
  }
  return out;
}

Tensor to_tensor(const Image8& img) {
  Tensor x({1, 3, img.height, img.width});
  for (int i = 0; i < img.height; ++i)
    for (int j = 0; j < img.width; ++j)
      for (int c = 0; c < 3; ++c)
        x.at(0, c, i, j) = img.rgb[(static_cast<std::size_t>(i) * img.width + j) * 3 + c] / 255.0;
  return x;
}

Image8 to_image8(const Tensor& batch, int index) {
  Image8 img;
  img.height = batch.dim(2);
  img.width = batch.dim(3);
  img.rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  for (int i = 0; i < img.height; ++i)
    for (int j = 0; j < img.width; ++j)
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(batch.at(index, c, i, j), 0.0, 1.0);
        img.rgb[(static_cast<std::size_t>(i) * img.width + j) * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
  return img;
}

Dataset load_dataset(const DatasetSpec& spec, std::ostream* log) {
  Dataset ds;
  if (spec.path.empty()) {
    if (spec.count < 1) throw std::invalid_argument("load_dataset: synthetic data needs count >= 1");
    ds.images = synthetic_images(spec.synthetic, spec.count, spec.height, spec.width, spec.seed);
    return ds;
  }
  if (!fs::is_directory(spec.path)) throw std::invalid_argument("load_dataset: not a directory: " + spec.path);

  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(spec.path)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png" || ext == ".ppm") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  Rng rng(derive_seed(spec.seed, "dataset.order"));
  std::shuffle(files.begin(), files.end(), rng.engine());

  std::vector<Tensor> kept;
  for (const auto& f : files) {
    if (spec.count > 0 && static_cast<int>(kept.size()) >= spec.count) break;
    try {
      Image8 img = read_image(f);
      if (img.height != spec.height || img.width != spec.width) {
        if (!spec.crop || img.height < spec.height || img.width < spec.width)
          throw std::runtime_error(std::to_string(img.width) + "x" + std::to_string(img.height) + " does not match " +
                                   std::to_string(spec.width) + "x" + std::to_string(spec.height));
        img = center_crop(img, spec.height, spec.width);
      }
      kept.push_back(to_tensor(img));
      ds.files.push_back(f.filename().string());
    } catch (const std::exception& e) {
      ++ds.skipped;
      if (log) *log << "warning: skipping " << f.string() << ": " << e.what() << '\n';
    }
  }
  if (kept.empty()) throw std::runtime_error("load_dataset: no usable images in " + spec.path);
  ds.images = Tensor({static_cast<int>(kept.size()), 3, spec.height, spec.width});
  const std::size_t per = kept.front().numel();
  for (std::size_t k = 0; k < kept.size(); ++k) std::copy_n(kept[k].vec().begin(), per, ds.images.vec().begin() + k * per);
  return ds;
}

}  // namespace clear::expcli
