#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "spnet/architecture.hpp"
#include "spnet/dataset.hpp"
#include "spnet/pruning.hpp"
#include "spnet/training.hpp"

namespace spnet {

struct BenchConfig {
  int batch = 64;
  int reps = 30;   // total iterations per mode, warm-up included
  int warmup = 10;

  void validate() const;
};

/// Everything a CLI run needs. Every field has a default.
///
///   model = micro_vgg
///   width_list = 0.25,0.5,1.0
///   seed = 1
///   output_dir = out
///
///   [data]      source (synthetic | idx | csv), classes, samples, separation,
///               noise, seed, images, labels, channels, height, width
///   [train]     base and S-Net training: epochs, batch_size, lr, milestones,
///               factors, momentum, nesterov, weight_decay, sparsity,
///               stop_at_train_accuracy
///   [train_sp]  the same keys plus mode, kd, kd_temperature, kd_alpha
///   [prune]     method, join_policy, tolerance, concurrent
///   [bench]     batch, reps, warmup
struct RunConfig {
  std::string model = "micro_vgg";
  WidthList widths{{0.25, 0.5, 1.0}};
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  DatasetSource data;
  TrainingConfig base;
  TrainingConfig sp;
  ScoringMethod method = ScoringMethod::bn_gamma;
  JoinPolicy policy = JoinPolicy::zpm;
  double tolerance = 0.05;
  bool concurrent = true;
  BenchConfig bench;
  /// FNV-1a hash of the parsed source text (0 for defaults).
  std::uint64_t digest = 0;

  RunConfig();
  /// Copies widths and seed into both training configs and validates.
  void finalize();
};

/// Parses `key = value` lines with optional [section] headers; '#' starts a
/// comment. Unknown keys, duplicates and malformed values raise FormatError
/// with "name:line:column".
RunConfig parse_config_text(std::string_view text, const std::string& name = "<config>");
RunConfig parse_config(const std::string& path);

std::uint64_t fnv1a(std::string_view bytes);

}  // namespace spnet
