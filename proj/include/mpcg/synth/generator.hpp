#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mpcg/core/errors.hpp"
#include "mpcg/core/rng.hpp"
#include "mpcg/core/tensor.hpp"
#include "mpcg/synth/pnm_io.hpp"

namespace mpcg::synth {

enum class Regime { small_target, blurred_boundary, uneven_light, mixed };

inline std::string regime_name(Regime r) {
  switch (r) {
    case Regime::small_target: return "small-target";
    case Regime::blurred_boundary: return "blurred-boundary";
    case Regime::uneven_light: return "uneven-light";
    case Regime::mixed: return "mixed";
  }
  return "?";
}

inline Regime regime_from_name(const std::string& s) {
  if (s == "small-target") return Regime::small_target;
  if (s == "blurred-boundary") return Regime::blurred_boundary;
  if (s == "uneven-light") return Regime::uneven_light;
  if (s == "mixed") return Regime::mixed;
  throw UsageError("unknown regime '" + s + "'");
}

/// Deterministic scene description: everything the generator needs to
/// reproduce one sample bitwise.
struct SceneSpec {
  std::uint64_t seed = 0;
  int height = 64;
  int width = 64;
  Regime regime = Regime::mixed;
  int blob_count = 1;           // 0 allowed (negative sample)
  double radius_lo = 6.0;       // semi-axis range in pixels at 64x64 scale
  double radius_hi = 14.0;
  double edge_softness = 1.0;   // boundary ramp half-width in pixels
  double light_amplitude = 0.0; // multiplicative ramp+vignette strength
  double noise_std = 0.02;      // per-pixel speckle
  double contrast = 0.35;       // blob/background color separation

  /// Fills regime-dependent fields from the regime and a scene RNG. The
  /// small-target radius window is [3,8] px at 64x64 and scales linearly.
  static SceneSpec for_regime(Regime regime, std::uint64_t seed, int h, int w,
                              int blob_count) {
    SceneSpec s;
    s.seed = seed;
    s.height = h;
    s.width = w;
    s.regime = regime;
    s.blob_count = blob_count;
    const double scale = std::min(h, w) / 64.0;
    switch (regime) {
      case Regime::small_target:
        s.radius_lo = 3.0 * scale;
        s.radius_hi = 8.0 * scale;
        s.edge_softness = 1.0 * scale;
        s.light_amplitude = 0.0;
        s.contrast = 0.35;
        break;
      case Regime::blurred_boundary:
        s.radius_lo = 6.0 * scale;
        s.radius_hi = 14.0 * scale;
        s.edge_softness = 6.0 * scale;
        s.light_amplitude = 0.0;
        s.contrast = 0.10;
        break;
      case Regime::uneven_light:
        s.radius_lo = 6.0 * scale;
        s.radius_hi = 14.0 * scale;
        s.edge_softness = 1.0 * scale;
        s.light_amplitude = 0.55;
        s.contrast = 0.35;
        break;
      case Regime::mixed:
        s.radius_lo = 4.0 * scale;
        s.radius_hi = 12.0 * scale;
        s.edge_softness = 1.5 * scale;
        s.light_amplitude = 0.3;
        s.contrast = 0.35;
        break;
    }
    return s;
  }
};

/// One generated (image, mask) pair; image channels in [0,1], mask binary.
struct SegSample {
  Tensor image;  // (1,3,H,W)
  Tensor mask;   // (1,1,H,W)
  SceneSpec spec;
};

namespace detail {

/// Low-frequency colored background: a coarse random grid, bilinearly
/// interpolated to full resolution.
inline void fill_background(Tensor& image, Rng& rng) {
  const int H = image.h(), W = image.w();
  constexpr int kGrid = 5;
  std::array<std::array<std::array<double, kGrid>, kGrid>, 3> grid{};
  for (int c = 0; c < 3; ++c) {
    const double base = rng.uniform(0.35, 0.65);
    for (int gy = 0; gy < kGrid; ++gy) {
      for (int gx = 0; gx < kGrid; ++gx) {
        grid[static_cast<size_t>(c)][static_cast<size_t>(gy)][static_cast<size_t>(gx)] =
            base + rng.uniform(-0.12, 0.12);
      }
    }
  }
  for (int y = 0; y < H; ++y) {
    const double fy = static_cast<double>(y) / (H - 1) * (kGrid - 1);
    const int y0 = std::min(static_cast<int>(fy), kGrid - 2);
    const double ty = fy - y0;
    for (int x = 0; x < W; ++x) {
      const double fx = static_cast<double>(x) / (W - 1) * (kGrid - 1);
      const int x0 = std::min(static_cast<int>(fx), kGrid - 2);
      const double tx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const auto& g = grid[static_cast<size_t>(c)];
        const double top = (1 - tx) * g[static_cast<size_t>(y0)][static_cast<size_t>(x0)] +
                           tx * g[static_cast<size_t>(y0)][static_cast<size_t>(x0) + 1];
        const double bot =
            (1 - tx) * g[static_cast<size_t>(y0) + 1][static_cast<size_t>(x0)] +
            tx * g[static_cast<size_t>(y0) + 1][static_cast<size_t>(x0) + 1];
        image.at(0, c, y, x) = static_cast<float>((1 - ty) * top + ty * bot);
      }
    }
  }
}

struct Blob {
  double cy, cx, a, b, angle;
};

/// Normalized elliptical coordinate: 1 on the boundary, < 1 inside.
inline double ellipse_coord(const Blob& blob, double y, double x) {
  const double dy = y - blob.cy, dx = x - blob.cx;
  const double ca = std::cos(blob.angle), sa = std::sin(blob.angle);
  const double u = ca * dx + sa * dy;
  const double v = -sa * dx + ca * dy;
  return std::sqrt((u / blob.a) * (u / blob.a) + (v / blob.b) * (v / blob.b));
}

}  // namespace detail

/// Deterministic scene synthesis. Identical specs give bitwise-identical
/// samples. The mask is the hard (softness-free) union of the blob supports.
inline SegSample generate(const SceneSpec& spec) {
  if (spec.height < 32 || spec.width < 32 || spec.height % 32 != 0 ||
      spec.width % 32 != 0) {
    throw DataError("generate: size must be >= 32 and divisible by 32, got " +
                    std::to_string(spec.height) + "x" + std::to_string(spec.width));
  }
  const int H = spec.height, W = spec.width;
  Rng rng(mix_seed(spec.seed, 0x5ce7e));

  SegSample sample;
  sample.spec = spec;
  sample.image = Tensor(Shape{1, 3, H, W});
  sample.mask = Tensor(Shape{1, 1, H, W});
  detail::fill_background(sample.image, rng);

  for (int bi = 0; bi < spec.blob_count; ++bi) {
    detail::Blob blob;
    blob.a = rng.uniform(spec.radius_lo, spec.radius_hi);
    blob.b = rng.uniform(spec.radius_lo, spec.radius_hi);
    const double margin = std::max(blob.a, blob.b) + 1.0;
    blob.cy = rng.uniform(margin, H - margin);
    blob.cx = rng.uniform(margin, W - margin);
    blob.angle = rng.uniform(0.0, 3.14159265358979323846);

    // blob color: background shifted by the contrast along a random
    // direction, clamped later with the rest of the image
    std::array<double, 3> shift{};
    double norm = 0.0;
    for (auto& s : shift) {
      s = rng.normal();
      norm += s * s;
    }
    norm = std::sqrt(norm) + 1e-9;
    for (auto& s : shift) s = s / norm * spec.contrast;

    const double soft = std::max(spec.edge_softness, 0.25);
    const double rbar = 0.5 * (blob.a + blob.b);
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const double e = detail::ellipse_coord(blob, y, x);
        if (e <= 1.0) sample.mask.at(0, 0, y, x) = 1.0f;
        // signed distance approximation in pixels, positive inside
        const double sd = (1.0 - e) * rbar;
        const double alpha = std::clamp(0.5 + sd / (2.0 * soft), 0.0, 1.0);
        if (alpha > 0.0) {
          for (int c = 0; c < 3; ++c) {
            const double v = sample.image.at(0, c, y, x) +
                             alpha * shift[static_cast<size_t>(c)];
            sample.image.at(0, c, y, x) = static_cast<float>(v);
          }
        }
      }
    }
  }

  if (spec.light_amplitude > 0.0) {
    const double gx = rng.uniform(-1.0, 1.0), gy = rng.uniform(-1.0, 1.0);
    const double vig = rng.uniform(0.3, 1.0);
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const double ny = static_cast<double>(y) / H - 0.5;
        const double nx = static_cast<double>(x) / W - 0.5;
        const double ramp = gx * nx + gy * ny;
        const double vignette = -vig * 2.0 * (nx * nx + ny * ny);
        const double field = 1.0 + spec.light_amplitude * (ramp + vignette);
        for (int c = 0; c < 3; ++c) {
          sample.image.at(0, c, y, x) =
              static_cast<float>(sample.image.at(0, c, y, x) * field);
        }
      }
    }
  }

  for (std::int64_t i = 0; i < sample.image.numel(); ++i) {
    double v = sample.image.data()[i];
    if (spec.noise_std > 0.0) v += rng.normal() * spec.noise_std;
    sample.image.data()[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return sample;
}

// ---- augmentation -----------------------------------------------------------

/// Deterministically derived augmentation: right-angle rotation, flips, and
/// color jitter (image only). Jitter factors come from a 9-level log-spaced
/// table whose middle entry is exactly 1, so identity transforms exist.
struct AugmentParams {
  int rot_quarters = 0;  // 0..3 counter-clockwise
  bool flip_h = false;
  bool flip_v = false;
  float brightness = 1.0f;
  float contrast = 1.0f;

  bool is_identity() const {
    return rot_quarters == 0 && !flip_h && !flip_v && brightness == 1.0f &&
           contrast == 1.0f;
  }

  static float jitter_level(int i) {
    static const std::array<float, 9> table = [] {
      std::array<float, 9> t{};
      const double lo = std::log(0.8), hi = std::log(1.25);
      for (int k = 0; k < 9; ++k) {
        t[static_cast<size_t>(k)] =
            static_cast<float>(std::exp(lo + (hi - lo) * k / 8.0));
      }
      t[4] = 1.0f;  // exact identity at the middle level
      return t;
    }();
    return table[static_cast<size_t>(i)];
  }

  static AugmentParams from_seed(std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0xa06));
    AugmentParams p;
    p.rot_quarters = rng.uniform_int(0, 3);
    p.flip_h = rng.bernoulli(0.5);
    p.flip_v = rng.bernoulli(0.5);
    p.brightness = jitter_level(rng.uniform_int(0, 8));
    p.contrast = jitter_level(rng.uniform_int(0, 8));
    return p;
  }
};

namespace detail {

inline Tensor rigid_transform(const Tensor& t, int rot_quarters, bool flip_h,
                              bool flip_v) {
  const int H = t.h(), W = t.w();
  const bool swap = rot_quarters % 2 == 1;
  const int OH = swap ? W : H, OW = swap ? H : W;
  Tensor out(Shape{t.n(), t.c(), OH, OW});
  for (int n = 0; n < t.n(); ++n) {
    for (int c = 0; c < t.c(); ++c) {
      for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
          int oy = y, ox = x;
          // counter-clockwise quarter turns
          switch (rot_quarters) {
            case 0: break;
            case 1: oy = W - 1 - x; ox = y; break;
            case 2: oy = H - 1 - y; ox = W - 1 - x; break;
            case 3: oy = x; ox = H - 1 - y; break;
            default: break;
          }
          if (flip_h) ox = OW - 1 - ox;
          if (flip_v) oy = OH - 1 - oy;
          out.at(n, c, oy, ox) = t.at(n, c, y, x);
        }
      }
    }
  }
  return out;
}

}  // namespace detail

inline SegSample apply_augment(const SegSample& sample, const AugmentParams& p) {
  SegSample out;
  out.spec = sample.spec;
  out.image = detail::rigid_transform(sample.image, p.rot_quarters, p.flip_h,
                                      p.flip_v);
  out.mask = detail::rigid_transform(sample.mask, p.rot_quarters, p.flip_h,
                                     p.flip_v);
  if (p.brightness != 1.0f || p.contrast != 1.0f) {
    for (std::int64_t i = 0; i < out.image.numel(); ++i) {
      const float v =
          ((out.image.data()[i] - 0.5f) * p.contrast + 0.5f) * p.brightness;
      out.image.data()[i] = std::clamp(v, 0.0f, 1.0f);
    }
  }
  return out;
}

inline SegSample augment(const SegSample& sample, std::uint64_t seed) {
  return apply_augment(sample, AugmentParams::from_seed(seed));
}

// ---- dataset directory -------------------------------------------------------

/// Manifest row for `<root>/manifest.tsv` (columns: id, regime, seed,
/// blob_count). Files live at images/NNNNN.ppm and masks/NNNNN.pgm.
struct ManifestRow {
  std::string id;
  std::string regime;
  std::uint64_t seed = 0;
  int blob_count = 0;
};

inline std::string sample_id(int index) {
  std::ostringstream os;
  os.width(5);
  os.fill('0');
  os << index;
  return os.str();
}

inline int blob_count_for(Regime regime, Rng& rng) {
  if (regime == Regime::mixed) {
    // mixed allows empty-mask negatives
    return rng.bernoulli(0.125) ? 0 : rng.uniform_int(1, 3);
  }
  return rng.uniform_int(1, 3);
}

/// Generates `count` samples into `root`. The manifest is written last, so
/// its presence marks a complete dataset.
inline void write_dataset(const std::string& root, int count, Regime regime,
                          std::uint64_t seed, int height, int width) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(root) / "images");
  fs::create_directories(fs::path(root) / "masks");
  std::vector<ManifestRow> rows;
  for (int i = 0; i < count; ++i) {
    const std::uint64_t sample_seed = mix_seed(seed, static_cast<std::uint64_t>(i));
    Rng meta(mix_seed(sample_seed, 0xb10b));
    const int blobs = blob_count_for(regime, meta);
    SceneSpec spec = SceneSpec::for_regime(regime, sample_seed, height, width, blobs);
    SegSample s = generate(spec);
    const std::string id = sample_id(i);
    write_ppm((fs::path(root) / "images" / (id + ".ppm")).string(), s.image);
    write_pgm((fs::path(root) / "masks" / (id + ".pgm")).string(), s.mask);
    rows.push_back({id, regime_name(regime), sample_seed, blobs});
  }
  std::ofstream os(fs::path(root) / "manifest.tsv");
  if (!os) throw DataError("write_dataset: cannot write manifest in " + root);
  os << "id\tregime\tseed\tblob_count\n";
  for (const auto& r : rows) {
    os << r.id << '\t' << r.regime << '\t' << r.seed << '\t' << r.blob_count << '\n';
  }
}

inline std::vector<ManifestRow> read_manifest(const std::string& root) {
  namespace fs = std::filesystem;
  const auto path = fs::path(root) / "manifest.tsv";
  std::ifstream is(path);
  if (!is) throw DataError("read_manifest: cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != "id\tregime\tseed\tblob_count") {
    throw DataError("read_manifest: bad header in " + path.string());
  }
  std::vector<ManifestRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    ManifestRow r;
    std::string seed_s, blobs_s;
    if (!std::getline(ls, r.id, '\t') || !std::getline(ls, r.regime, '\t') ||
        !std::getline(ls, seed_s, '\t') || !std::getline(ls, blobs_s, '\t')) {
      throw DataError("read_manifest: bad row '" + line + "'");
    }
    r.seed = std::stoull(seed_s);
    r.blob_count = std::stoi(blobs_s);
    rows.push_back(std::move(r));
  }
  return rows;
}

/// Loads one sample of a written dataset by manifest row.
inline SegSample read_sample(const std::string& root, const ManifestRow& row) {
  namespace fs = std::filesystem;
  SegSample s;
  s.image = read_ppm((fs::path(root) / "images" / (row.id + ".ppm")).string());
  s.mask = read_pgm((fs::path(root) / "masks" / (row.id + ".pgm")).string());
  s.spec.seed = row.seed;
  s.spec.regime = regime_from_name(row.regime);
  s.spec.blob_count = row.blob_count;
  s.spec.height = s.image.h();
  s.spec.width = s.image.w();
  return s;
}

}  // namespace mpcg::synth
