#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "spnet/tensor.hpp"

namespace spnet {

/// In-memory labelled image set, (N, C, H, W) floats.
struct Dataset {
  Tensor<float> images;
  std::vector<int> labels;
  int num_classes = 0;

  std::size_t size() const { return labels.size(); }
  Shape sample_shape() const { return {1, images.shape().c, images.shape().h, images.shape().w}; }

  /// Stacks the given samples into one batch.
  template <typename T>
  Tensor<T> batch(std::span<const std::size_t> indices) const;
  std::vector<int> batch_labels(std::span<const std::size_t> indices) const;
  /// Rows of the image tensor as raw bytes, for determinism checks.
  std::vector<std::uint8_t> bytes() const;
};

/// Gaussian class clusters. Each class owns a mean image built from a
/// per-channel offset plus a low-frequency pattern; samples add white noise.
struct SyntheticSpec {
  int classes = 2;
  int samples = 512;
  int channels = 3;
  int height = 32;
  int width = 32;
  double separation = 1.0;
  double noise = 1.0;
  std::uint64_t seed = 7;
};

Dataset make_synthetic(const SyntheticSpec& spec);

/// Big-endian IDX files: images with magic 0x00000803 (N, H, W) or rank 4
/// (N, C, H, W) unsigned bytes, labels with magic 0x00000801. Pixels are
/// scaled to [0, 1].
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

/// One sample per line: label followed by channels*height*width pixel values.
Dataset load_csv(const std::string& path, int channels, int height, int width);

struct DatasetSource {
  enum class Kind { synthetic, idx, csv };
  Kind kind = Kind::synthetic;
  SyntheticSpec synthetic;
  std::string images_path;  // idx images or csv file
  std::string labels_path;  // idx labels
};

Dataset load_dataset(const DatasetSource& source);

}  // namespace spnet
