#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "spnet/ops.hpp"

namespace spnet {

enum class LayerKind { conv, depthwise_conv, bn, activation, pool, linear };
enum class BlockKind { plain, residual_bottleneck, inverted_residual, depthwise_separable };

struct LayerSpec {
  LayerKind kind = LayerKind::conv;
  int out_channels = 0;  // conv, depthwise_conv, linear
  int kernel = 1;        // conv kernel or pool window
  int stride = 1;
  int padding = 0;
  bool bias = false;
  bool follows_join = false;  // executed after the block's residual join
  Activation activation = Activation::relu;
  PoolKind pool = PoolKind::max;

  static LayerSpec conv(int out, int kernel, int stride = 1, int padding = 0, bool bias = false);
  static LayerSpec depthwise(int channels, int kernel, int stride = 1, int padding = 0);
  static LayerSpec bn();
  static LayerSpec act(Activation kind);
  static LayerSpec max_pool(int window, int stride, int padding = 0);
  static LayerSpec global_avg_pool();
  static LayerSpec linear(int out, bool bias = true);

  bool operator==(const LayerSpec&) const = default;
};

struct BlockSpec {
  BlockKind kind = BlockKind::plain;
  std::vector<LayerSpec> layers;
  /// Projection layers on the shortcut path; empty means identity.
  std::vector<LayerSpec> shortcut;
  bool has_join = false;

  bool operator==(const BlockSpec&) const = default;
};

struct ModelSpec {
  std::string name;
  int in_channels = 3;
  int in_h = 32;
  int in_w = 32;
  int num_classes = 10;
  std::vector<BlockSpec> blocks;

  /// Structural checks that do not need shape propagation (kernel >= 1,
  /// channels >= 1, residual kinds carry exactly one join).
  void validate() const;
  bool operator==(const ModelSpec&) const = default;
};

const char* to_string(LayerKind kind);
const char* to_string(BlockKind kind);

/// Uniform width multiplier: every conv / depthwise channel count becomes
/// max(1, floor(w * N)). Linear layers keep their sizes.
ModelSpec scale_width(const ModelSpec& spec, double width);

/// floor(w * n) clamped to >= 1. A 1e-9 slack absorbs binary representation
/// error of decimal widths (0.7 * 10 must give 7).
int scaled_channels(int n, double width);

std::string to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(std::string_view text);

/// Model zoo. Full-size models (224x224, 1000 classes) are used for counting;
/// micro_* models run on 32x32 inputs. num_classes <= 0 keeps the default.
ModelSpec zoo(std::string_view name, int num_classes = 0);
std::vector<std::string> zoo_names();

}  // namespace spnet
