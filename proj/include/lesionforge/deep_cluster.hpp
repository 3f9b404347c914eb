#pragma once

#include <cstdint>
#include <vector>

#include "lesionforge/image.hpp"
#include "lesionforge/nn/network.hpp"
#include "lesionforge/superpixel.hpp"

namespace lf {

struct EpochRecord {
  int epoch = 0;
  int distinct_count = 0;
  double loss = 0.0;
};

/// Per-pixel cluster ids in [0, channels).
struct ClusterLabeling {
  LabelMap labels;
  int distinct_count = 0;
  std::vector<EpochRecord> epoch_history;
  bool converged = true;
};

struct ClusterTrainConfig {
  int channels = 100;
  int target_clusters = 25;
  double learning_rate = 0.1;
  double momentum = 0.9;
  int max_epochs = 500;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ClusterResult {
  ClusterLabeling labeling;
  nn::Network<float> network;
  int stop_epoch = 0;
};

/// Three 3x3 convolutions (stride 1, zero padding 1) of width `channels`,
/// each followed by batch normalization, with ReLU between blocks.
template <typename T = float>
nn::Network<T> build_cluster_cnn(int channels, int in_channels = 3);

/// Per-pixel index of the largest channel of a single-item batch; ties go to
/// the lowest channel.
ClusterLabeling argmax_labels(const nn::Tensor4<float>& features);

/// Replaces every pixel's label with the modal label of its superpixel
/// (smallest id on ties).
LabelMap make_target(const LabelMap& labels, const SuperpixelMap& superpixels);

/// Trains a fresh clustering network on one image until the target labeling
/// has at most `target_clusters` distinct ids, or `max_epochs` is reached
/// (then `converged` is false).
ClusterResult train_clustering(const RgbImage& image, const SuperpixelMap& superpixels,
                               const ClusterTrainConfig& config);

}  // namespace lf
