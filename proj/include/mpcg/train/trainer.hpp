#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "mpcg/metrics.hpp"
#include "mpcg/nn/checkpoint.hpp"
#include "mpcg/nn/mpcgnet.hpp"
#include "mpcg/synth/generator.hpp"
#include "mpcg/train/adamw.hpp"
#include "mpcg/train/loss.hpp"

namespace mpcg::train {

struct TrainConfig {
  int epochs = 150;
  int batch = 8;
  double lr0 = 1e-4;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::uint64_t seed = 1;
  double val_fraction = 0.2;  // deterministic last slice of the manifest
  int checkpoint_every = 0;   // 0: final checkpoint only
  bool augment = true;
};

/// Per-step deep-supervision loss values; the total is the equal-weight sum
/// of the per-head terms.
struct LossReport {
  std::vector<double> heads;
  double total = 0.0;
};

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_mdice = 0.0;
  std::vector<double> head_losses;  // per-head means over the epoch
  std::vector<std::string> gate_bits;
};

struct TrainResult {
  std::vector<EpochLog> logs;
  std::string checkpoint_path;
  std::string log_path;
};

namespace detail {

struct LoadedDataset {
  std::vector<synth::SegSample> samples;
  std::vector<std::string> ids;
};

inline LoadedDataset load_dataset(const std::string& root) {
  LoadedDataset ds;
  for (const auto& row : synth::read_manifest(root)) {
    ds.samples.push_back(synth::read_sample(root, row));
    ds.ids.push_back(row.id);
  }
  if (ds.samples.empty()) throw DataError("dataset at " + root + " is empty");
  const Shape ishape = ds.samples[0].image.shape();
  for (const auto& s : ds.samples) {
    if (s.image.shape() != ishape) {
      throw DataError("dataset at " + root + " mixes image sizes");
    }
  }
  return ds;
}

inline Tensor batch_images(const std::vector<synth::SegSample>& samples,
                           const std::vector<size_t>& idx) {
  const Shape s = samples[idx[0]].image.shape();
  Tensor out(Shape{static_cast<int>(idx.size()), s.c, s.h, s.w});
  const std::int64_t item = samples[idx[0]].image.numel();
  for (size_t b = 0; b < idx.size(); ++b) {
    std::copy(samples[idx[b]].image.data(),
              samples[idx[b]].image.data() + item,
              out.data() + static_cast<std::int64_t>(b) * item);
  }
  return out;
}

inline Tensor batch_masks(const std::vector<synth::SegSample>& samples,
                          const std::vector<size_t>& idx) {
  const Shape s = samples[idx[0]].mask.shape();
  Tensor out(Shape{static_cast<int>(idx.size()), 1, s.h, s.w});
  const std::int64_t item = samples[idx[0]].mask.numel();
  for (size_t b = 0; b < idx.size(); ++b) {
    std::copy(samples[idx[b]].mask.data(),
              samples[idx[b]].mask.data() + item,
              out.data() + static_cast<std::int64_t>(b) * item);
  }
  return out;
}

/// mDice of inference-mode predictions over the given samples.
inline double mean_dice(nn::MPCGNet& net,
                        const std::vector<synth::SegSample>& samples,
                        const std::vector<size_t>& idx) {
  if (idx.empty()) return 0.0;
  double total = 0.0;
  for (size_t i : idx) {
    auto out = net.forward(nullptr, samples[i].image, /*train_mode=*/false);
    Tensor pred = ops::sigmoid(nullptr, out[0]);
    total += metrics::dice_iou(pred, samples[i].mask).first;
  }
  return total / static_cast<double>(idx.size());
}

inline std::string tsv_header() {
  return "epoch\tlr\ttrain_loss\tval_mdice\tgates_cgmfe_s1\tgates_cgmfe_s2\t"
         "gates_cgmfe_s3\tgates_cgmfe_s4\tgates_dfa_1\tgates_dfa_2\tgates_dfa_3";
}

inline std::string tsv_row(const EpochLog& log) {
  std::ostringstream os;
  os << log.epoch << '\t' << std::setprecision(10) << log.lr << '\t'
     << std::fixed << std::setprecision(6) << log.train_loss << '\t'
     << log.val_mdice;
  for (const auto& bits : log.gate_bits) os << '\t' << bits;
  return os.str();
}

}  // namespace detail

/// Deterministic training loop with 4-head deep supervision and equal head
/// weights. The held-out split is the last val_fraction of the manifest;
/// with val_fraction = 0 the per-epoch mDice is measured on the training
/// set itself. Aborts with the step index and offending head if a loss goes
/// non-finite.
inline TrainResult train(nn::MPCGNet& net, const std::string& data_root,
                         const std::string& out_dir, const TrainConfig& cfg) {
  namespace fs = std::filesystem;
  if (cfg.epochs < 1 || cfg.batch < 1) {
    throw UsageError("train: epochs and batch must be positive");
  }
  auto ds = detail::load_dataset(data_root);
  const size_t n = ds.samples.size();
  const auto n_val = static_cast<size_t>(std::floor(n * cfg.val_fraction));
  std::vector<size_t> train_idx, val_idx;
  for (size_t i = 0; i < n - n_val; ++i) train_idx.push_back(i);
  for (size_t i = n - n_val; i < n; ++i) val_idx.push_back(i);
  if (train_idx.empty()) throw DataError("train: empty training split");

  fs::create_directories(out_dir);
  const std::string log_path = (fs::path(out_dir) / "train_log.tsv").string();
  std::ofstream log_os(log_path, std::ios::trunc);
  if (!log_os) throw DataError("train: cannot write log at " + log_path);
  log_os << detail::tsv_header() << '\n';

  AdamWConfig ocfg;
  ocfg.lr = cfg.lr0;
  ocfg.weight_decay = cfg.weight_decay;
  ocfg.beta1 = cfg.beta1;
  ocfg.beta2 = cfg.beta2;
  AdamW opt(net.params(), ocfg);

  TrainResult result;
  result.log_path = log_path;
  std::int64_t step_index = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg.lr0, epoch);

    // deterministic shuffle of the training slice
    std::vector<size_t> order = train_idx;
    Rng shuffle_rng(mix_seed(cfg.seed, 0x5f0000 + static_cast<std::uint64_t>(epoch)));
    for (size_t i = order.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(
          shuffle_rng.uniform_int(0, static_cast<int>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }

    double loss_sum = 0.0;
    std::vector<double> head_sums;
    int batches = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch));
      std::vector<size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                              order.begin() + static_cast<std::ptrdiff_t>(end));

      Tensor images, masks;
      if (cfg.augment) {
        std::vector<synth::SegSample> augmented;
        augmented.reserve(idx.size());
        for (size_t i : idx) {
          const std::uint64_t aseed =
              mix_seed(cfg.seed, 0xa70000 + static_cast<std::uint64_t>(epoch) * 131071 +
                                     static_cast<std::uint64_t>(i));
          augmented.push_back(synth::augment(ds.samples[i], aseed));
        }
        std::vector<size_t> all(augmented.size());
        for (size_t i = 0; i < all.size(); ++i) all[i] = i;
        images = detail::batch_images(augmented, all);
        masks = detail::batch_masks(augmented, all);
      } else {
        images = detail::batch_images(ds.samples, idx);
        masks = detail::batch_masks(ds.samples, idx);
      }

      Tape tape;
      std::vector<Tensor> heads;
      try {
        heads = net.forward(&tape, images, /*train_mode=*/true);
      } catch (const NumericError& e) {
        throw NumericError("training aborted at step " + std::to_string(step_index) +
                           ": " + e.what());
      }
      std::vector<Tensor> losses;
      for (size_t h = 0; h < heads.size(); ++h) {
        try {
          losses.push_back(seg_loss(&tape, heads[h], masks));
        } catch (const NumericError& e) {
          throw NumericError("training aborted at step " + std::to_string(step_index) +
                             " (head " + std::to_string(h + 1) + "): " + e.what());
        }
      }
      Tensor loss = losses[0];
      for (size_t h = 1; h < losses.size(); ++h) {
        loss = ops::add(&tape, loss, losses[h]);
      }
      LossReport step_loss;
      for (const auto& l : losses) {
        step_loss.heads.push_back(l.data()[0]);
        step_loss.total += l.data()[0];
      }
      if (!std::isfinite(step_loss.total)) {
        throw NumericError("training aborted at step " + std::to_string(step_index) +
                           ": non-finite total loss");
      }

      net.zero_grads();
      backward(tape, loss);
      opt.step(lr);
      loss_sum += step_loss.total;
      if (head_sums.size() < step_loss.heads.size()) {
        head_sums.resize(step_loss.heads.size(), 0.0);
      }
      for (size_t h = 0; h < step_loss.heads.size(); ++h) {
        head_sums[h] += step_loss.heads[h];
      }
      ++batches;
      ++step_index;
    }

    EpochLog log;
    log.epoch = epoch;
    log.lr = lr;
    log.train_loss = loss_sum / std::max(1, batches);
    for (double s : head_sums) {
      log.head_losses.push_back(s / std::max(1, batches));
    }
    log.val_mdice = detail::mean_dice(
        net, ds.samples, val_idx.empty() ? train_idx : val_idx);
    log.gate_bits = net.gate_bits();
    log_os << detail::tsv_row(log) << '\n';
    log_os.flush();
    result.logs.push_back(log);

    if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
      std::ostringstream name;
      name << "epoch_" << std::setw(4) << std::setfill('0') << epoch + 1 << ".ckpt";
      nn::save_checkpoint((fs::path(out_dir) / name.str()).string(), net.params());
    }
  }

  result.checkpoint_path = (fs::path(out_dir) / "model.ckpt").string();
  nn::save_checkpoint(result.checkpoint_path, net.params());
  return result;
}

/// Inference-mode evaluation over a dataset directory: sigmoid probabilities
/// against the stored masks through the six-measure suite.
inline metrics::MetricsReport evaluate(nn::MPCGNet& net,
                                       const std::string& data_root,
                                       const metrics::MetricsConfig& mcfg = {}) {
  auto ds = detail::load_dataset(data_root);
  std::vector<Tensor> preds, gts;
  for (const auto& s : ds.samples) {
    auto out = net.forward(nullptr, s.image, /*train_mode=*/false);
    preds.push_back(ops::sigmoid(nullptr, out[0]));
    gts.push_back(s.mask);
  }
  return metrics::evaluate_dataset(preds, gts, mcfg, ds.ids);
}

}  // namespace mpcg::train
