// Command-line front end: synthetic dataset generation, training with
// optional module ablations, six-metric evaluation, gradient checking, and
// checkpoint inspection.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mpcg/metrics.hpp"
#include "mpcg/nn/checkpoint.hpp"
#include "mpcg/nn/gradcheck_suite.hpp"
#include "mpcg/nn/mpcgnet.hpp"
#include "mpcg/synth/generator.hpp"
#include "mpcg/train/trainer.hpp"

namespace {

using mpcg::DataError;
using mpcg::NumericError;
using mpcg::PnmError;
using mpcg::ShapeError;
using mpcg::UsageError;

struct Option {
  std::string key;
  bool is_switch = false;  // present/absent, no value
  std::string value;       // default, and resolved value after parsing
  bool set = false;
};

/// Tiny fixed-schema argument parser with `key = value` config-file support.
/// Command-line flags win over config entries; unknown keys are rejected.
class OptionSet {
 public:
  explicit OptionSet(std::vector<Option> options) : options_(std::move(options)) {
    options_.push_back({"config", false, "", false});
  }

  void parse(const std::vector<std::string>& args) {
    for (size_t i = 0; i < args.size(); ++i) {
      const std::string& a = args[i];
      if (a.rfind("--", 0) != 0) {
        throw UsageError("expected a --flag, got '" + a + "'");
      }
      Option& opt = find(a.substr(2));
      if (opt.is_switch) {
        opt.value = "1";
      } else {
        if (i + 1 >= args.size()) {
          throw UsageError("flag --" + opt.key + " needs a value");
        }
        opt.value = args[++i];
      }
      opt.set = true;
    }
    if (find("config").set) apply_config_file(find("config").value);
  }

  const std::string& get(const std::string& key) const {
    return const_cast<OptionSet*>(this)->find(key).value;
  }
  bool has(const std::string& key) const {
    const Option& o = const_cast<OptionSet*>(this)->find(key);
    return o.is_switch ? o.value == "1" : o.set;
  }
  bool was_set(const std::string& key) const {
    return const_cast<OptionSet*>(this)->find(key).set;
  }

  int get_int(const std::string& key) const {
    try {
      return std::stoi(get(key));
    } catch (const std::exception&) {
      throw UsageError("flag --" + key + ": expected an integer, got '" +
                       get(key) + "'");
    }
  }
  double get_double(const std::string& key) const {
    try {
      return std::stod(get(key));
    } catch (const std::exception&) {
      throw UsageError("flag --" + key + ": expected a number, got '" +
                       get(key) + "'");
    }
  }
  std::uint64_t get_u64(const std::string& key) const {
    try {
      return std::stoull(get(key));
    } catch (const std::exception&) {
      throw UsageError("flag --" + key + ": expected a seed, got '" +
                       get(key) + "'");
    }
  }

  void require(const std::string& key) const {
    if (get(key).empty()) throw UsageError("missing required flag --" + key);
  }

  /// Echo of the fully resolved configuration, printed for every run.
  void print_resolved(const std::string& subcommand) const {
    std::cout << "mpcg " << subcommand << ": resolved configuration\n";
    for (const auto& o : options_) {
      if (o.key == "config" && o.value.empty()) continue;
      std::cout << "  " << o.key << " = "
                << (o.is_switch ? (o.value == "1" ? "true" : "false") : o.value)
                << "\n";
    }
  }

 private:
  Option& find(const std::string& key) {
    for (auto& o : options_) {
      if (o.key == key) return o;
    }
    throw UsageError("unknown flag --" + key);
  }

  void apply_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open config file " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw UsageError("config line " + std::to_string(lineno) +
                         ": expected key = value");
      }
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      Option* opt = nullptr;
      for (auto& o : options_) {
        if (o.key == key) opt = &o;
      }
      if (opt == nullptr || key == "config") {
        throw UsageError("config line " + std::to_string(lineno) +
                         ": unknown key '" + key + "'");
      }
      if (!opt->set) {  // command line wins
        opt->value = opt->is_switch ? (value == "true" || value == "1" ? "1" : "")
                                    : value;
        opt->set = true;
      }
    }
  }

  std::vector<Option> options_;
};

std::pair<int, int> parse_size(const std::string& s) {
  const auto x = s.find('x');
  if (x == std::string::npos) {
    throw UsageError("--size: expected HxW, got '" + s + "'");
  }
  try {
    const int h = std::stoi(s.substr(0, x));
    const int w = std::stoi(s.substr(x + 1));
    if (h < 32 || w < 32 || h % 32 != 0 || w % 32 != 0) {
      throw UsageError("--size: extents must be >= 32 and divisible by 32, got " + s);
    }
    return {h, w};
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception&) {
    throw UsageError("--size: expected HxW, got '" + s + "'");
  }
}

// ---- subcommands -------------------------------------------------------------

int cmd_synth(const std::vector<std::string>& args) {
  OptionSet opts({{"out", false, ""},
                  {"count", false, "16"},
                  {"regime", false, "mixed"},
                  {"seed", false, "1"},
                  {"size", false, "64x64"}});
  opts.parse(args);
  opts.print_resolved("synth");
  opts.require("out");
  const auto [h, w] = parse_size(opts.get("size"));
  const int count = opts.get_int("count");
  if (count < 1) throw UsageError("--count must be positive");
  mpcg::synth::write_dataset(opts.get("out"), count,
                             mpcg::synth::regime_from_name(opts.get("regime")),
                             opts.get_u64("seed"), h, w);
  std::cout << "wrote " << count << " samples to " << opts.get("out") << "\n";
  return mpcg::kExitOk;
}

int cmd_train(const std::vector<std::string>& args) {
  OptionSet opts({{"data", false, ""},
                  {"out", false, ""},
                  {"epochs", false, "150"},
                  {"batch", false, "8"},
                  {"lr", false, "1e-4"},
                  {"size", false, "64x64"},
                  {"seed", false, "1"},
                  {"no-cgmfe", true, ""},
                  {"no-wcad", true, ""},
                  {"no-dfa", true, ""},
                  {"no-gates", true, ""}});
  opts.parse(args);
  opts.print_resolved("train");
  opts.require("data");
  opts.require("out");
  const auto [h, w] = parse_size(opts.get("size"));

  // size conflicts must surface before any compute
  const auto manifest = mpcg::synth::read_manifest(opts.get("data"));
  if (manifest.empty()) throw DataError("dataset is empty");
  {
    const auto probe = mpcg::synth::read_sample(opts.get("data"), manifest[0]);
    if (probe.image.h() != h || probe.image.w() != w) {
      throw UsageError("--size " + opts.get("size") + " conflicts with dataset images of " +
                       std::to_string(probe.image.h()) + "x" +
                       std::to_string(probe.image.w()));
    }
  }

  mpcg::nn::NetConfig net_cfg;
  net_cfg.ablation.no_cgmfe = opts.has("no-cgmfe");
  net_cfg.ablation.no_wcad = opts.has("no-wcad");
  net_cfg.ablation.no_dfa = opts.has("no-dfa");
  net_cfg.ablation.no_gates = opts.has("no-gates");
  mpcg::nn::MPCGNet net(net_cfg, opts.get_u64("seed"));

  mpcg::train::TrainConfig cfg;
  cfg.epochs = opts.get_int("epochs");
  cfg.batch = opts.get_int("batch");
  cfg.lr0 = opts.get_double("lr");
  cfg.seed = opts.get_u64("seed");
  auto result = mpcg::train::train(net, opts.get("data"), opts.get("out"), cfg);
  std::cout << "trained " << cfg.epochs << " epochs; checkpoint at "
            << result.checkpoint_path << "\n";
  if (!result.logs.empty()) {
    std::cout << "final val_mdice " << result.logs.back().val_mdice << "\n";
  }
  return mpcg::kExitOk;
}

int cmd_eval(const std::vector<std::string>& args) {
  OptionSet opts({{"data", false, ""}, {"ckpt", false, ""}, {"csv", false, ""}});
  opts.parse(args);
  opts.print_resolved("eval");
  opts.require("data");
  opts.require("ckpt");
  opts.require("csv");

  const auto records = mpcg::nn::load_checkpoint(opts.get("ckpt"));
  mpcg::nn::NetConfig cfg = mpcg::nn::infer_config(records);
  mpcg::nn::MPCGNet net(cfg, 0);
  mpcg::nn::apply_checkpoint(records, net.params());

  auto report = mpcg::train::evaluate(net, opts.get("data"));
  mpcg::metrics::write_csv(opts.get("csv"), report);
  std::cout << "images " << report.size() << "\n";
  std::cout << "mDice " << report.mean_dice << "  mIoU " << report.mean_iou
            << "  Fbw " << report.mean_fbw << "  S " << report.mean_smeasure
            << "  E " << report.mean_emeasure << "  MAE " << report.mean_mae
            << "\n";
  std::cout << "csv written to " << opts.get("csv") << "\n";
  return mpcg::kExitOk;
}

int cmd_gradcheck(const std::vector<std::string>& args) {
  OptionSet opts({{"module", false, ""}, {"seed", false, "1"}});
  opts.parse(args);
  opts.print_resolved("gradcheck");
  opts.require("module");
  const auto result =
      mpcg::nn::gradcheck_module(opts.get("module"), opts.get_u64("seed"));
  std::printf("%s: worst relative error %.3g (tolerance %.3g) -> %s\n",
              result.module.c_str(), result.err, result.tol,
              result.pass ? "PASS" : "FAIL");
  return result.pass ? mpcg::kExitOk : mpcg::kExitNumeric;
}

int cmd_info(const std::vector<std::string>& args) {
  OptionSet opts({{"ckpt", false, ""}, {"size", false, "64x64"}});
  opts.parse(args);
  opts.print_resolved("info");
  opts.require("ckpt");
  const auto [h, w] = parse_size(opts.get("size"));

  const auto records = mpcg::nn::load_checkpoint(opts.get("ckpt"));
  mpcg::nn::NetConfig cfg = mpcg::nn::infer_config(records);
  mpcg::nn::MPCGNet net(cfg, 0);
  mpcg::nn::apply_checkpoint(records, net.params());

  const auto params = net.param_count();
  const auto flops = net.flop_count(h, w);
  std::printf("encoder widths: %d/%d/%d/%d, decoder width %d\n",
              cfg.encoder.widths[0], cfg.encoder.widths[1],
              cfg.encoder.widths[2], cfg.encoder.widths[3], cfg.decoder_width);
  std::printf("ablations: cgmfe=%s wcad=%s dfa=%s gates=%s\n",
              cfg.ablation.no_cgmfe ? "off" : "on",
              cfg.ablation.no_wcad ? "off" : "on",
              cfg.ablation.no_dfa ? "off" : "on",
              cfg.ablation.no_gates ? "forced-open" : "on");
  std::printf("parameters: %lld (%.4f M)\n", static_cast<long long>(params),
              static_cast<double>(params) / 1e6);
  std::printf("flops at %dx%d: %lld (%.4f G)\n", h, w,
              static_cast<long long>(flops), static_cast<double>(flops) / 1e9);
  std::printf("gate matrices (row-major bits, diagonal 0):\n");
  const auto bits = net.gate_bits();
  const char* names[] = {"cgmfe1", "cgmfe2", "cgmfe3", "cgmfe4",
                         "dfa1",   "dfa2",   "dfa3"};
  for (int i = 0; i < 7; ++i) {
    std::printf("  %-7s %s\n", names[i], bits[static_cast<size_t>(i)].c_str());
  }
  return mpcg::kExitOk;
}

void print_usage() {
  std::cout <<
      "usage: mpcg <subcommand> [--flags]\n"
      "  synth     --out DIR [--count N] [--regime R] [--seed S] [--size HxW]\n"
      "  train     --data DIR --out DIR [--epochs E] [--batch B] [--lr LR]\n"
      "            [--size HxW] [--seed S] [--no-cgmfe] [--no-wcad] [--no-dfa]\n"
      "            [--no-gates]\n"
      "  eval      --data DIR --ckpt FILE --csv FILE\n"
      "  gradcheck --module NAME [--seed S]   (is, cgmfe, wcad, dfa, chatt,\n"
      "            spatt, encoder-interaction, net)\n"
      "  info      --ckpt FILE [--size HxW]\n"
      "Any subcommand accepts --config FILE with `key = value` lines\n"
      "(# comments); command-line flags override config entries.\n";
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    if (args.empty() || args[0] == "--help" || args[0] == "help") {
      print_usage();
      return args.empty() ? mpcg::kExitUsage : mpcg::kExitOk;
    }
    const std::string sub = args[0];
    const std::vector<std::string> rest(args.begin() + 1, args.end());
    if (sub == "synth") return cmd_synth(rest);
    if (sub == "train") return cmd_train(rest);
    if (sub == "eval") return cmd_eval(rest);
    if (sub == "gradcheck") return cmd_gradcheck(rest);
    if (sub == "info") return cmd_info(rest);
    throw UsageError("unknown subcommand '" + sub + "'");
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return mpcg::kExitUsage;
  } catch (const ShapeError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return mpcg::kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return mpcg::kExitNumeric;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return mpcg::kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return mpcg::kExitData;
  }
}
