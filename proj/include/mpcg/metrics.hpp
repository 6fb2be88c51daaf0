#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "mpcg/core/errors.hpp"
#include "mpcg/core/tensor.hpp"

namespace mpcg::metrics {

/// Fixed evaluation constants. Overlap measures binarize at tau; the
/// weighted F-measure smooths the error map with a 7x7 sigma=5 Gaussian and
/// weighs background errors by 2 - exp(ln(0.5)/5 * d) with d the Euclidean
/// distance to the foreground.
struct MetricsConfig {
  double tau = 0.5;
  double beta2 = 1.0;
  double alpha = 0.5;
  double eps = 1e-8;
  double fbw_sigma = 5.0;
  int fbw_kernel = 7;
};

namespace detail {

inline void check_pair(const Tensor& pred, const Tensor& gt) {
  if (pred.shape() != gt.shape()) {
    throw ShapeError("metrics: prediction " + pred.shape().str() +
                     " and ground truth " + gt.shape().str() + " differ");
  }
  if (pred.n() != 1 || pred.c() != 1) {
    throw ShapeError("metrics: expected single-channel single-item maps, got " +
                     pred.shape().str());
  }
}

inline bool fg(const Tensor& gt, std::int64_t i) { return gt.data()[i] > 0.5f; }

inline std::int64_t fg_count(const Tensor& gt) {
  std::int64_t n = 0;
  for (std::int64_t i = 0; i < gt.numel(); ++i) n += fg(gt, i) ? 1 : 0;
  return n;
}

inline double mean_of(const Tensor& t) {
  double s = 0.0;
  for (std::int64_t i = 0; i < t.numel(); ++i) s += t.data()[i];
  return s / static_cast<double>(t.numel());
}

/// Nearest foreground pixel per pixel: exact Euclidean metric, ties broken
/// toward the smaller row-major index. Returns linear indices (the pixel
/// itself on foreground) and writes distances if `dist` is non-null.
inline std::vector<std::int64_t> nearest_foreground(const Tensor& gt,
                                                    std::vector<double>* dist) {
  const int H = gt.h(), W = gt.w();
  std::vector<std::int64_t> fg_list;
  for (std::int64_t i = 0; i < gt.numel(); ++i) {
    if (fg(gt, i)) fg_list.push_back(i);
  }
  std::vector<std::int64_t> nearest(static_cast<size_t>(gt.numel()));
  if (dist != nullptr) dist->assign(static_cast<size_t>(gt.numel()), 0.0);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const std::int64_t i = static_cast<std::int64_t>(y) * W + x;
      if (fg(gt, i)) {
        nearest[static_cast<size_t>(i)] = i;
        continue;
      }
      std::int64_t best = -1;
      std::int64_t best_d2 = std::numeric_limits<std::int64_t>::max();
      for (const std::int64_t f : fg_list) {
        const std::int64_t fy = f / W, fx = f % W;
        const std::int64_t d2 = (fy - y) * (fy - y) + (fx - x) * (fx - x);
        if (d2 < best_d2) {
          best_d2 = d2;
          best = f;
        }
      }
      nearest[static_cast<size_t>(i)] = best;
      if (dist != nullptr) {
        (*dist)[static_cast<size_t>(i)] = std::sqrt(static_cast<double>(best_d2));
      }
    }
  }
  return nearest;
}

/// Normalized 1-D Gaussian taps for the separable smoothing filter.
inline std::vector<double> gaussian_taps(int k, double sigma) {
  std::vector<double> taps(static_cast<size_t>(k));
  const int r = k / 2;
  double sum = 0.0;
  for (int i = 0; i < k; ++i) {
    const double d = i - r;
    taps[static_cast<size_t>(i)] = std::exp(-(d * d) / (2.0 * sigma * sigma));
    sum += taps[static_cast<size_t>(i)];
  }
  for (auto& t : taps) t /= sum;
  return taps;
}

/// Zero-padded separable Gaussian filtering of an H x W plane.
inline std::vector<double> gaussian_filter(const std::vector<double>& src,
                                           int H, int W, int k, double sigma) {
  const auto taps = gaussian_taps(k, sigma);
  const int r = k / 2;
  std::vector<double> tmp(static_cast<size_t>(H) * W, 0.0);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      double acc = 0.0;
      for (int t = 0; t < k; ++t) {
        const int sx = x + t - r;
        if (sx < 0 || sx >= W) continue;
        acc += taps[static_cast<size_t>(t)] *
               src[static_cast<size_t>(y) * W + sx];
      }
      tmp[static_cast<size_t>(y) * W + x] = acc;
    }
  }
  std::vector<double> out(static_cast<size_t>(H) * W, 0.0);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      double acc = 0.0;
      for (int t = 0; t < k; ++t) {
        const int sy = y + t - r;
        if (sy < 0 || sy >= H) continue;
        acc += taps[static_cast<size_t>(t)] *
               tmp[static_cast<size_t>(sy) * W + x];
      }
      out[static_cast<size_t>(y) * W + x] = acc;
    }
  }
  return out;
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample std (n-1), 0 when fewer than two values
  std::int64_t n = 0;
};

template <typename Pick>
MeanStd masked_stats(const Tensor& t, const Pick& pick) {
  MeanStd m;
  double sum = 0.0;
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    if (!pick(i)) continue;
    sum += t.data()[i];
    ++m.n;
  }
  if (m.n == 0) return m;
  m.mean = sum / static_cast<double>(m.n);
  if (m.n >= 2) {
    double ss = 0.0;
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      if (!pick(i)) continue;
      const double d = t.data()[i] - m.mean;
      ss += d * d;
    }
    m.std = std::sqrt(ss / static_cast<double>(m.n - 1));
  }
  return m;
}

}  // namespace detail

/// Overlap ratios on the tau-binarized prediction (foreground iff p > tau).
inline std::pair<double, double> dice_iou(const Tensor& pred, const Tensor& gt,
                                          const MetricsConfig& cfg = {}) {
  detail::check_pair(pred, gt);
  std::int64_t tp = 0, fp = 0, fn = 0;
  for (std::int64_t i = 0; i < pred.numel(); ++i) {
    const bool p = pred.data()[i] > cfg.tau;
    const bool g = detail::fg(gt, i);
    tp += (p && g) ? 1 : 0;
    fp += (p && !g) ? 1 : 0;
    fn += (!p && g) ? 1 : 0;
  }
  const double dice = (2.0 * tp + cfg.eps) / (2.0 * tp + fp + fn + cfg.eps);
  const double iou = (tp + cfg.eps) / (tp + fp + fn + cfg.eps);
  return {dice, iou};
}

/// Mean absolute error on the continuous prediction.
inline double mae(const Tensor& pred, const Tensor& gt,
                  const MetricsConfig& = {}) {
  detail::check_pair(pred, gt);
  double s = 0.0;
  for (std::int64_t i = 0; i < pred.numel(); ++i) {
    s += std::abs(static_cast<double>(pred.data()[i]) -
                  (detail::fg(gt, i) ? 1.0 : 0.0));
  }
  return s / static_cast<double>(pred.numel());
}

/// Weighted F-measure: continuous error map, dependency-corrected via
/// distance-guided Gaussian smoothing, distance-decayed background weights,
/// combined as (1+b2)PR / (b2 P + R). Empty ground truth scores 1 against an
/// identically-zero prediction and 0 otherwise.
inline double weighted_fmeasure(const Tensor& pred, const Tensor& gt,
                                const MetricsConfig& cfg = {}) {
  detail::check_pair(pred, gt);
  const std::int64_t nfg = detail::fg_count(gt);
  if (nfg == 0) {
    double s = 0.0;
    for (std::int64_t i = 0; i < pred.numel(); ++i) s += pred.data()[i];
    return s == 0.0 ? 1.0 : 0.0;
  }
  const int H = gt.h(), W = gt.w();
  const std::int64_t count = gt.numel();

  std::vector<double> dist;
  const auto nearest = detail::nearest_foreground(gt, &dist);

  std::vector<double> err(static_cast<size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) {
    err[static_cast<size_t>(i)] =
        std::abs((detail::fg(gt, i) ? 1.0 : 0.0) - pred.data()[i]);
  }
  // background errors inherit the error at their nearest foreground pixel
  std::vector<double> err_t = err;
  for (std::int64_t i = 0; i < count; ++i) {
    if (!detail::fg(gt, i)) {
      err_t[static_cast<size_t>(i)] =
          err[static_cast<size_t>(nearest[static_cast<size_t>(i)])];
    }
  }
  const auto smoothed =
      detail::gaussian_filter(err_t, H, W, cfg.fbw_kernel, cfg.fbw_sigma);

  const double decay = std::log(0.5) / 5.0;
  double sum_fg_ew = 0.0, sum_bg_ew = 0.0;
  for (std::int64_t i = 0; i < count; ++i) {
    double e = err[static_cast<size_t>(i)];
    double b = 1.0;
    if (detail::fg(gt, i)) {
      e = std::min(e, smoothed[static_cast<size_t>(i)]);
      sum_fg_ew += e;  // b = 1 on foreground
    } else {
      b = 2.0 - std::exp(decay * dist[static_cast<size_t>(i)]);
      sum_bg_ew += e * b;
    }
  }
  const double tpw = static_cast<double>(nfg) - sum_fg_ew;
  const double fpw = sum_bg_ew;
  const double recall = 1.0 - sum_fg_ew / static_cast<double>(nfg);
  const double precision = tpw / (cfg.eps + tpw + fpw);
  return (1.0 + cfg.beta2) * recall * precision /
         (cfg.eps + recall + cfg.beta2 * precision);
}

namespace detail {

inline double object_score(const MeanStd& s, double eps) {
  return 2.0 * s.mean / (s.mean * s.mean + 1.0 + s.std + eps);
}

/// Region-level structural similarity of a prediction block against a
/// binary ground-truth block.
inline double region_ssim(const Tensor& pred, const Tensor& gt, int y0, int y1,
                          int x0, int x1, double eps) {
  const std::int64_t n =
      static_cast<std::int64_t>(y1 - y0) * static_cast<std::int64_t>(x1 - x0);
  if (n <= 0) return 0.0;  // weight is zero for an empty region
  double mp = 0.0, mg = 0.0;
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      mp += pred.at(0, 0, y, x);
      mg += fg(gt, static_cast<std::int64_t>(y) * gt.w() + x) ? 1.0 : 0.0;
    }
  }
  mp /= static_cast<double>(n);
  mg /= static_cast<double>(n);
  double vp = 0.0, vg = 0.0, cov = 0.0;
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      const double dp = pred.at(0, 0, y, x) - mp;
      const double dg =
          (fg(gt, static_cast<std::int64_t>(y) * gt.w() + x) ? 1.0 : 0.0) - mg;
      vp += dp * dp;
      vg += dg * dg;
      cov += dp * dg;
    }
  }
  const double denom_n = static_cast<double>(n) - 1.0 + eps;
  vp /= denom_n;
  vg /= denom_n;
  cov /= denom_n;
  const double num = 4.0 * mp * mg * cov;
  const double den = (mp * mp + mg * mg) * (vp + vg);
  if (num != 0.0) return num / (den + eps);
  return den == 0.0 ? 1.0 : 0.0;
}

}  // namespace detail

/// Structure measure: alpha-blend of object-level similarity (foreground and
/// background mean/spread statistics) and region-level similarity over a
/// 4-way centroid split. Degenerate ground truths follow the reference
/// conventions: empty -> 1 - mean(pred), full -> mean(pred).
inline double s_measure(const Tensor& pred, const Tensor& gt,
                        const MetricsConfig& cfg = {}) {
  detail::check_pair(pred, gt);
  const std::int64_t nfg = detail::fg_count(gt);
  const std::int64_t count = gt.numel();
  if (nfg == 0) return 1.0 - detail::mean_of(pred);
  if (nfg == count) return detail::mean_of(pred);

  // object term
  const auto fg_stats =
      detail::masked_stats(pred, [&](std::int64_t i) { return detail::fg(gt, i); });
  Tensor inv(pred.shape());
  for (std::int64_t i = 0; i < count; ++i) {
    inv.data()[i] = 1.0f - pred.data()[i];
  }
  const auto bg_stats = detail::masked_stats(
      inv, [&](std::int64_t i) { return !detail::fg(gt, i); });
  const double u = static_cast<double>(nfg) / static_cast<double>(count);
  const double s_object = u * detail::object_score(fg_stats, cfg.eps) +
                          (1.0 - u) * detail::object_score(bg_stats, cfg.eps);

  // region term: centroid split with 1-based rounding as in the reference
  const int H = gt.h(), W = gt.w();
  double cx = 0.0, cy = 0.0;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      if (detail::fg(gt, static_cast<std::int64_t>(y) * W + x)) {
        cx += x + 1;
        cy += y + 1;
      }
    }
  }
  const int X = static_cast<int>(std::floor(cx / static_cast<double>(nfg) + 0.5));
  const int Y = static_cast<int>(std::floor(cy / static_cast<double>(nfg) + 0.5));
  const double area = static_cast<double>(count);
  const double w1 = static_cast<double>(X) * Y / area;
  const double w2 = static_cast<double>(W - X) * Y / area;
  const double w3 = static_cast<double>(X) * (H - Y) / area;
  const double w4 = 1.0 - w1 - w2 - w3;
  const double s_region =
      w1 * detail::region_ssim(pred, gt, 0, Y, 0, X, cfg.eps) +
      w2 * detail::region_ssim(pred, gt, 0, Y, X, W, cfg.eps) +
      w3 * detail::region_ssim(pred, gt, Y, H, 0, X, cfg.eps) +
      w4 * detail::region_ssim(pred, gt, Y, H, X, W, cfg.eps);

  return std::max(0.0, cfg.alpha * s_object + (1.0 - cfg.alpha) * s_region);
}

/// Enhanced-alignment measure, adaptive-threshold single-value variant.
/// The prediction binarizes at min(2*mean(pred), 1) with >=, except that an
/// identically-zero prediction binarizes to the empty mask (otherwise an
/// all-background prediction could never score 1 against an empty ground
/// truth). Degenerate ground truths: empty -> 1 - mean(bin), full -> mean(bin).
inline double e_measure(const Tensor& pred, const Tensor& gt,
                        const MetricsConfig& cfg = {}) {
  detail::check_pair(pred, gt);
  const std::int64_t count = gt.numel();
  const double pmean = detail::mean_of(pred);
  std::vector<double> bin(static_cast<size_t>(count), 0.0);
  if (pmean > 0.0) {
    const double thr = std::min(2.0 * pmean, 1.0);
    for (std::int64_t i = 0; i < count; ++i) {
      bin[static_cast<size_t>(i)] = pred.data()[i] >= thr ? 1.0 : 0.0;
    }
  }
  double bin_mean = 0.0;
  for (double b : bin) bin_mean += b;
  bin_mean /= static_cast<double>(count);

  const std::int64_t nfg = detail::fg_count(gt);
  if (nfg == 0) return 1.0 - bin_mean;
  if (nfg == count) return bin_mean;

  const double gmean = static_cast<double>(nfg) / static_cast<double>(count);
  double sum = 0.0;
  for (std::int64_t i = 0; i < count; ++i) {
    const double pg = (detail::fg(gt, i) ? 1.0 : 0.0) - gmean;
    const double pf = bin[static_cast<size_t>(i)] - bin_mean;
    const double xi = 2.0 * pg * pf / (pg * pg + pf * pf + cfg.eps);
    sum += (1.0 + xi) * (1.0 + xi) / 4.0;
  }
  return sum / static_cast<double>(count);
}

/// Per-image values and dataset means of the six measures.
struct MetricsReport {
  std::vector<std::string> ids;
  std::vector<double> dice, iou, fbw, smeasure, emeasure, mae_v;
  double mean_dice = 0.0, mean_iou = 0.0, mean_fbw = 0.0;
  double mean_smeasure = 0.0, mean_emeasure = 0.0, mean_mae = 0.0;

  size_t size() const { return dice.size(); }
};

inline MetricsReport evaluate_dataset(const std::vector<Tensor>& preds,
                                      const std::vector<Tensor>& gts,
                                      const MetricsConfig& cfg = {},
                                      const std::vector<std::string>& ids = {}) {
  if (preds.size() != gts.size()) {
    throw ShapeError("evaluate_dataset: " + std::to_string(preds.size()) +
                     " predictions vs " + std::to_string(gts.size()) +
                     " ground truths");
  }
  if (preds.empty()) throw DataError("evaluate_dataset: empty dataset");
  MetricsReport r;
  for (size_t i = 0; i < preds.size(); ++i) {
    const auto [d, j] = dice_iou(preds[i], gts[i], cfg);
    r.dice.push_back(d);
    r.iou.push_back(j);
    r.fbw.push_back(weighted_fmeasure(preds[i], gts[i], cfg));
    r.smeasure.push_back(s_measure(preds[i], gts[i], cfg));
    r.emeasure.push_back(e_measure(preds[i], gts[i], cfg));
    r.mae_v.push_back(mae(preds[i], gts[i], cfg));
    r.ids.push_back(i < ids.size() ? ids[i] : std::to_string(i));
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;  // summed in image-index order
    return s / static_cast<double>(v.size());
  };
  r.mean_dice = mean(r.dice);
  r.mean_iou = mean(r.iou);
  r.mean_fbw = mean(r.fbw);
  r.mean_smeasure = mean(r.smeasure);
  r.mean_emeasure = mean(r.emeasure);
  r.mean_mae = mean(r.mae_v);
  return r;
}

/// CSV export: one row per image plus a final MEAN row, 6-decimal values.
inline void write_csv(std::ostream& os, const MetricsReport& r) {
  os << "image,dice,iou,fbw,smeasure,emeasure,mae\n";
  os << std::fixed << std::setprecision(6);
  for (size_t i = 0; i < r.size(); ++i) {
    os << r.ids[i] << ',' << r.dice[i] << ',' << r.iou[i] << ',' << r.fbw[i]
       << ',' << r.smeasure[i] << ',' << r.emeasure[i] << ',' << r.mae_v[i]
       << '\n';
  }
  os << "MEAN," << r.mean_dice << ',' << r.mean_iou << ',' << r.mean_fbw << ','
     << r.mean_smeasure << ',' << r.mean_emeasure << ',' << r.mean_mae << '\n';
}

inline void write_csv(const std::string& path, const MetricsReport& r) {
  std::ofstream os(path);
  if (!os) throw DataError("metrics: cannot open CSV for writing: " + path);
  write_csv(os, r);
}

}  // namespace mpcg::metrics
