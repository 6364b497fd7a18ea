#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "spnet/architecture.hpp"
#include "spnet/dataset.hpp"
#include "spnet/network.hpp"
#include "spnet/optim.hpp"
#include "spnet/slimmable.hpp"

namespace spnet {

enum class TrainMode { scratch, finetune };

const char* to_string(TrainMode mode);
TrainMode train_mode_from_string(std::string_view s);

struct KdConfig {
  bool enabled = true;
  double temperature = 1.0;
  double alpha = 0.9;
};

struct TrainingConfig {
  WidthList widths{{0.25, 0.5, 1.0}};
  int epochs = 10;
  int batch_size = 64;
  double lr = 0.1;
  std::vector<int> milestones;   // epochs, strictly increasing
  std::vector<double> factors;   // one per milestone, or a single shared factor
  double momentum = 0.9;
  bool nesterov = true;
  double weight_decay = 1e-4;
  double sparsity = 0.0;         // lambda of the |gamma| penalty
  KdConfig kd;
  std::uint64_t seed = 1;
  TrainMode mode = TrainMode::scratch;
  /// Stop once every width reaches this eval-mode train accuracy (0 = off).
  double stop_at_train_accuracy = 0.0;

  void validate() const;
};

/// Piecewise-constant schedule: lr times every factor whose milestone is <= epoch.
double lr_at(int epoch, const TrainingConfig& config);

struct TrainRecord {
  int epoch = 0;
  int width_index = 0;
  double width = 1.0;
  double loss = 0.0;
  double error = 0.0;  // running top-1 error over the epoch's training batches
  double lr = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<TrainRecord> records;
  double wall_seconds = 0.0;
  int epochs_run = 0;
  std::vector<PrunedArchitecture> archs;

  /// Tab-separated, header line first, one row per (epoch, width).
  std::string to_tsv() const;
  void write(const std::string& path) const;
  /// Records of the last epoch run.
  std::vector<TrainRecord> last_epoch() const;
};

/// lambda * sum |gamma| over the BN layers that score prunable spaces, in
/// `bank`. Adds lambda * sign(gamma) (0 at 0) into the gamma gradients.
template <typename T>
double sparsity_loss(Network<T>& net, double lambda, int bank, bool accumulate_grad = true);

/// alpha * T^2 * KL(softmax(teacher/T) || softmax(student/T))
///   + (1 - alpha) * cross_entropy(student, labels), averaged over the batch.
/// The teacher is treated as a constant; grad receives dL/dstudent.
template <typename T>
double inplace_kd_loss(const T* student, const T* teacher, int batch, int classes,
                       std::span<const int> labels, double temperature, double alpha, T* grad);

/// Trains a standalone network with floor(w * N) channels per layer.
template <typename T>
std::pair<Network<T>, TrainReport> train_individual(const ModelSpec& spec, double width,
                                                    const TrainingConfig& config,
                                                    const Dataset& data);

/// One forward/backward per width per batch with gradients summed, then a
/// single optimizer step. Sizes the switchable BN banks to |W| when the
/// network has a single bank.
template <typename T>
TrainReport train_slimmable(Network<T>& net, const TrainingConfig& config, const Dataset& data);

/// Same loop over the embedded architectures. The widest width learns from
/// labels; narrower widths use inplace KD against its detached logits when
/// enabled. Scratch mode re-initializes every parameter first.
template <typename T>
TrainReport train_spnet(Network<T>& net, const TrainingConfig& config, const Dataset& data);

/// Top-1 error of a view in eval mode.
template <typename T>
double evaluate(Network<T>& net, const SubNetworkView& view, const Dataset& data,
                int batch_size = 256);

/// Cross-entropy of a training-mode forward; when `backward` is set the
/// gradients are zeroed first and then filled.
template <typename T>
double loss_and_grad(Network<T>& net, const SubNetworkView& view, const Tensor<T>& input,
                     std::span<const int> labels, bool backward = true);

/// Central difference of loss_and_grad with respect to one element of
/// net.parameters()[param_index].
double finite_difference_grad(Network<double>& net, const SubNetworkView& view,
                              std::size_t param_index, std::size_t element,
                              const Tensor<double>& input, std::span<const int> labels,
                              double epsilon);

}  // namespace spnet
