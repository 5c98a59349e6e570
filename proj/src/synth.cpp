#include "occ/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "occ/image_io.hpp"

namespace occ {

namespace {

constexpr int kCoverageRetries = 32;

void require_mask_extent(int height, int width, const char* who) {
  if (height < 16 || width < 16) {
    throw ShapeError(std::string(who) + ": size must be at least 16x16, got " +
                     std::to_string(height) + "x" + std::to_string(width));
  }
}

double positive_mod(double a, double m) { return a - m * std::floor(a / m); }

Tensor rasterize_fence(const FenceParams& p, double spacing, double phase_a, double phase_b,
                       double extra_deg, int height, int width) {
  const double deg = std::numbers::pi / 180.0;
  const double ta = p.angle_deg * deg;
  const double tb = (p.angle_deg + 90.0 + extra_deg) * deg;
  const double ca = std::cos(ta), sa = std::sin(ta), cb = std::cos(tb), sb = std::sin(tb);
  Tensor mask({1, height, width});
  double* m = mask.data();
  for (int i = 0; i < height; ++i) {
    for (int j = 0; j < width; ++j) {
      const double y = i + 0.5;
      const double x = j + 0.5 + p.shear * y;
      const bool a = positive_mod(x * ca + y * sa - phase_a, spacing) < p.thickness;
      const bool b = positive_mod(x * cb + y * sb - phase_b, spacing) < p.thickness;
      m[static_cast<std::ptrdiff_t>(i) * width + j] = (a || b) ? 1.0 : 0.0;
    }
  }
  return mask;
}

// Sets every pixel covered by a width x width disc anchored at (y, x).
void stamp(double* m, int height, int width, int y, int x, int brush) {
  const double centre = (brush - 1) / 2.0;
  const double r2 = brush * brush / 4.0;
  const int origin = (brush - 1) / 2;
  for (int a = 0; a < brush; ++a) {
    for (int b = 0; b < brush; ++b) {
      const double dy = a - centre, dx = b - centre;
      if (dy * dy + dx * dx > r2) continue;
      const int yy = y + a - origin, xx = x + b - origin;
      if (yy >= 0 && yy < height && xx >= 0 && xx < width) {
        m[static_cast<std::ptrdiff_t>(yy) * width + xx] = 1.0;
      }
    }
  }
}

Tensor draw_strokes(const StrokeParams& p, int height, int width, Rng& rng) {
  Tensor mask({1, height, width});
  double* m = mask.data();
  for (int s = 0; s < p.strokes; ++s) {
    const int brush = rng.uniform_int(p.width_min, p.width_max);
    int y = rng.uniform_int(0, height - 1);
    int x = rng.uniform_int(0, width - 1);
    stamp(m, height, width, y, x, brush);
    for (int v = 0; v < p.vertices; ++v) {
      const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double length = rng.uniform(p.step_min, p.step_max);
      const int ty = std::clamp(static_cast<int>(std::lround(y + length * std::sin(angle))), 0, height - 1);
      const int tx = std::clamp(static_cast<int>(std::lround(x + length * std::cos(angle))), 0, width - 1);
      // 4-connected walk: one axis step at a time, following the segment.
      const int ny = std::abs(ty - y), nx = std::abs(tx - x);
      const int sy = ty > y ? 1 : -1, sx = tx > x ? 1 : -1;
      int iy = 0, ix = 0;
      while (ix < nx || iy < ny) {
        const bool step_x = iy == ny || (ix < nx && (1 + 2 * ix) * ny < (1 + 2 * iy) * nx);
        if (step_x) {
          x += sx;
          ++ix;
        } else {
          y += sy;
          ++iy;
        }
        stamp(m, height, width, y, x, brush);
      }
    }
  }
  return mask;
}

}  // namespace

void FenceParams::validate() const {
  if (thickness < 1) throw ConfigError("fence thickness must be >= 1");
  if (!(spacing > 0.0) || !std::isfinite(spacing)) throw ConfigError("fence spacing must be > 0");
  if (!(jitter >= 0.0)) throw ConfigError("fence jitter must be >= 0");
  if (!(coverage_lo >= 0.0 && coverage_lo < coverage_hi && coverage_hi <= 0.5)) {
    throw ConfigError("fence coverage band must satisfy 0 <= lo < hi <= 0.5");
  }
}

void StrokeParams::validate() const {
  if (strokes < 1 || vertices < 1 || width_min < 1) {
    throw ConfigError("stroke count, vertex count and brush width must be >= 1");
  }
  if (width_max < width_min) throw ConfigError("stroke width range is empty");
  if (!(step_min >= 1.0 && step_max >= step_min)) throw ConfigError("stroke step range is invalid");
  if (!(coverage_lo >= 0.0 && coverage_lo < coverage_hi && coverage_hi <= 1.0)) {
    throw ConfigError("stroke coverage band must satisfy 0 <= lo < hi <= 1");
  }
}

BackgroundKind parse_background_kind(const std::string& name) {
  if (name == "gradient") return BackgroundKind::gradient;
  if (name == "checker") return BackgroundKind::checker;
  if (name == "sinusoid") return BackgroundKind::sinusoid;
  if (name == "blob-noise") return BackgroundKind::blob_noise;
  throw ConfigError("unknown background kind '" + name + "'");
}

const char* background_kind_name(BackgroundKind kind) {
  switch (kind) {
    case BackgroundKind::gradient: return "gradient";
    case BackgroundKind::checker: return "checker";
    case BackgroundKind::sinusoid: return "sinusoid";
    case BackgroundKind::blob_noise: return "blob-noise";
  }
  throw ConfigError("unknown background kind");
}

double coverage(const Tensor& mask) {
  return (mask.values().array() != 0.0).count() / static_cast<double>(mask.size());
}

Tensor gen_fence_mask(const FenceParams& params, int height, int width, Rng& rng) {
  params.validate();
  require_mask_extent(height, width, "gen_fence_mask");
  double spacing = params.spacing;
  double last = 0.0;
  for (int attempt = 0; attempt <= kCoverageRetries; ++attempt) {
    double phase_a = 0.0, phase_b = 0.0, extra = 0.0;
    if (params.jitter > 0.0) {
      phase_a = rng.uniform(0.0, params.jitter);
      phase_b = rng.uniform(0.0, params.jitter);
      extra = rng.uniform(-params.jitter, params.jitter);
    }
    Tensor mask = rasterize_fence(params, spacing, phase_a, phase_b, extra, height, width);
    last = coverage(mask);
    if (last >= params.coverage_lo && last <= params.coverage_hi) return mask;
    const double factor = rng.uniform(1.05, 1.35);
    spacing = last > params.coverage_hi ? spacing * factor : spacing / factor;
  }
  throw Error("gen_fence_mask: coverage band [" + format_double(params.coverage_lo) + ", " +
              format_double(params.coverage_hi) + "] not reached after " +
              std::to_string(kCoverageRetries) + " retries (last " + format_double(last) + ")");
}

Tensor gen_freeform_mask(const StrokeParams& params, int height, int width, Rng& rng) {
  params.validate();
  require_mask_extent(height, width, "gen_freeform_mask");
  double last = 0.0;
  for (int attempt = 0; attempt <= kCoverageRetries; ++attempt) {
    Tensor mask = draw_strokes(params, height, width, rng);
    last = coverage(mask);
    if (last >= params.coverage_lo && last <= params.coverage_hi) return mask;
  }
  throw Error("gen_freeform_mask: coverage band not reached after " +
              std::to_string(kCoverageRetries) + " retries (last " + format_double(last) + ")");
}

Tensor gen_background(BackgroundKind kind, int height, int width, Rng& rng) {
  if (height < 1 || width < 1) throw ShapeError("gen_background: empty size");
  Tensor image({3, height, width});
  double* px = image.data();
  const std::ptrdiff_t plane = static_cast<std::ptrdiff_t>(height) * width;
  const double fy = height > 1 ? 1.0 / (height - 1) : 0.0;
  const double fx = width > 1 ? 1.0 / (width - 1) : 0.0;
  switch (kind) {
    case BackgroundKind::gradient:
      for (int c = 0; c < 3; ++c) {
        const double a = rng.uniform(0.05, 0.95), ey = rng.uniform(), ex = rng.uniform();
        for (int i = 0; i < height; ++i) {
          for (int j = 0; j < width; ++j) {
            px[c * plane + i * width + j] = a + 0.5 * (ey - a) * i * fy + 0.5 * (ex - a) * j * fx;
          }
        }
      }
      break;
    case BackgroundKind::checker: {
      const int period = rng.uniform_int(4, 16);
      for (int c = 0; c < 3; ++c) {
        const double lo = rng.uniform(0.0, 0.45), hi = rng.uniform(0.55, 1.0);
        for (int i = 0; i < height; ++i) {
          for (int j = 0; j < width; ++j) {
            px[c * plane + i * width + j] = ((i / period + j / period) % 2) ? hi : lo;
          }
        }
      }
      break;
    }
    case BackgroundKind::sinusoid: {
      const double cy = rng.uniform(0.5, 4.0), cx = rng.uniform(0.5, 4.0);
      for (int c = 0; c < 3; ++c) {
        const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi), amp = rng.uniform(0.2, 0.45);
        for (int i = 0; i < height; ++i) {
          for (int j = 0; j < width; ++j) {
            const double t = 2.0 * std::numbers::pi * (cx * j / width + cy * i / height) + phase;
            px[c * plane + i * width + j] = 0.5 + amp * std::sin(t);
          }
        }
      }
      break;
    }
    case BackgroundKind::blob_noise: {
      const int blobs = 6;
      const double extent = std::max(height, width);
      std::vector<double> cy(blobs), cx(blobs), sigma(blobs), amp(3 * blobs);
      for (int k = 0; k < blobs; ++k) {
        cy[k] = rng.uniform(0.0, height);
        cx[k] = rng.uniform(0.0, width);
        sigma[k] = rng.uniform(extent / 16.0, extent / 4.0);
        for (int c = 0; c < 3; ++c) amp[c * blobs + k] = rng.uniform(-1.0, 1.0);
      }
      for (int c = 0; c < 3; ++c) {
        double* ch = px + c * plane;
        for (int i = 0; i < height; ++i) {
          for (int j = 0; j < width; ++j) {
            double v = 0.0;
            for (int k = 0; k < blobs; ++k) {
              const double dy = i - cy[k], dx = j - cx[k];
              v += amp[c * blobs + k] * std::exp(-(dy * dy + dx * dx) / (2.0 * sigma[k] * sigma[k]));
            }
            ch[i * width + j] = v;
          }
        }
        const auto view = image.values().segment(c * plane, plane);
        const double lo = view.minCoeff(), span = view.maxCoeff() - lo;
        for (std::ptrdiff_t p = 0; p < plane; ++p) ch[p] = span > 1e-12 ? (ch[p] - lo) / span : 0.5;
      }
      break;
    }
  }
  return image;
}

Tensor occlude(const Tensor& image, const Tensor& mask, const MeanPixel& fill) {
  if (!fill.computed) throw Error("occlude: mean pixel has not been computed");
  const int r = image.rank();
  if ((r != 3 && r != 4) || mask.rank() != r) {
    throw ShapeError("occlude: expected C x H x W or N x C x H x W with a matching mask, got " +
                     to_string(image.shape()) + " and " + to_string(mask.shape()));
  }
  const int n = r == 4 ? image.dim(0) : 1;
  const int c = image.dim(-3), h = image.dim(-2), w = image.dim(-1);
  if (mask.dim(-3) != 1 || mask.dim(-2) != h || mask.dim(-1) != w || (r == 4 && mask.dim(0) != n)) {
    throw ShapeError("occlude: mask " + to_string(mask.shape()) + " does not fit " +
                     to_string(image.shape()));
  }
  if (c != 3) throw ShapeError("occlude: image must have 3 channels");
  Tensor out = image.clone();
  const std::ptrdiff_t plane = static_cast<std::ptrdiff_t>(h) * w;
  for (int s = 0; s < n; ++s) {
    const double* m = mask.data() + s * plane;
    double* dst = out.data() + s * c * plane;
    for (std::ptrdiff_t p = 0; p < plane; ++p) {
      if (m[p] == 0.0) continue;
      if (m[p] != 1.0) throw Error("occlude: mask must be binary");
      for (int k = 0; k < c; ++k) dst[k * plane + p] = fill.rgb[static_cast<std::size_t>(k)];
    }
  }
  return out;
}

MeanPixel compute_mean_pixel(const std::vector<Tensor>& images) {
  if (images.empty()) throw Error("compute_mean_pixel: no images");
  MeanPixel mp;
  double count = 0.0;
  for (const Tensor& img : images) {
    if (img.rank() != 3 || img.dim(0) != 3) {
      throw ShapeError("compute_mean_pixel expects 3 x H x W, got " + to_string(img.shape()));
    }
    const Eigen::Index plane = img.size() / 3;
    for (int k = 0; k < 3; ++k) mp.rgb[static_cast<std::size_t>(k)] += img.values().segment(k * plane, plane).sum();
    count += static_cast<double>(plane);
  }
  for (double& v : mp.rgb) v /= count;
  mp.computed = true;
  return mp;
}

MeanPixel compute_mean_pixel(const Manifest& manifest) {
  std::vector<Tensor> images;
  for (const Sample& s : manifest.split("train")) images.push_back(load_image(manifest.resolve(s.background)));
  if (images.empty()) throw Error("compute_mean_pixel: manifest has no train samples");
  return compute_mean_pixel(images);
}

void DataConfig::validate() const {
  if (count < 1) throw ConfigError("dataset count must be >= 1");
  if (size < 16) throw ConfigError("dataset image size must be >= 16");
  if (mask_kind != "fence" && mask_kind != "freeform") {
    throw ConfigError("mask kind must be 'fence' or 'freeform', got '" + mask_kind + "'");
  }
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw ConfigError("train fraction must be in (0, 1]");
  if (!(spacing_min > 0.0 && spacing_max >= spacing_min)) throw ConfigError("fence spacing range is invalid");
  if (thickness_min < 1 || thickness_max < thickness_min) throw ConfigError("fence thickness range is invalid");
  strokes.validate();
}

Manifest build_dataset(const DataConfig& config, const std::filesystem::path& dir, std::uint64_t seed) {
  config.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  const int train = std::max(1, static_cast<int>(std::lround(config.count * config.train_fraction)));
  Rng master(seed, "dataset");
  static constexpr BackgroundKind kinds[] = {BackgroundKind::gradient, BackgroundKind::checker,
                                             BackgroundKind::sinusoid, BackgroundKind::blob_noise};
  std::vector<Tensor> backgrounds, masks;
  Manifest manifest;
  manifest.base = dir;
  for (int i = 0; i < config.count; ++i) {
    Sample s;
    s.split = i < train ? "train" : "eval";
    s.seed = master.next_u64();
    Rng rng(s.seed, "sample");
    Rng bg_rng = rng.split("background");
    Tensor bg = gen_background(kinds[i % 4], config.size, config.size, bg_rng);
    // Stored on disk at 8 bits, so keep exactly what a reader will see.
    for (Eigen::Index k = 0; k < bg.size(); ++k) bg.data()[k] = quantize8(bg.data()[k]) / 255.0;

    Rng mask_rng = rng.split("mask");
    Tensor mask;
    if (config.mask_kind == "fence") {
      FenceParams fp;
      fp.spacing = mask_rng.uniform(config.spacing_min, config.spacing_max);
      fp.thickness = mask_rng.uniform_int(config.thickness_min, config.thickness_max);
      fp.angle_deg = mask_rng.uniform(-config.angle_range, config.angle_range);
      fp.shear = mask_rng.uniform(-config.shear_range, config.shear_range);
      fp.jitter = config.jitter;
      fp.coverage_lo = config.coverage_lo;
      fp.coverage_hi = config.coverage_hi;
      mask = gen_fence_mask(fp, config.size, config.size, mask_rng);
    } else {
      mask = gen_freeform_mask(config.strokes, config.size, config.size, mask_rng);
    }

    char stem[32];
    std::snprintf(stem, sizeof stem, "%04d", i);
    s.background = std::string("bg_") + stem + ".ppm";
    s.mask = std::string("mask_") + stem + ".pgm";
    s.observation = std::string("obs_") + stem + ".ppm";
    manifest.samples.push_back(s);
    backgrounds.push_back(bg);
    masks.push_back(mask);
  }
  manifest.mean_pixel =
      compute_mean_pixel(std::vector<Tensor>(backgrounds.begin(), backgrounds.begin() + train));
  for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
    const Sample& s = manifest.samples[i];
    save_image(dir / s.background, backgrounds[i]);
    save_image(dir / s.mask, masks[i]);
    save_image(dir / s.observation, occlude(backgrounds[i], masks[i], manifest.mean_pixel));
  }
  save_manifest(dir / "manifest.tsv", manifest);
  return manifest;
}

}  // namespace occ
