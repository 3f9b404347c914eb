#include "lesionforge/deep_cluster.hpp"

#include <cmath>
#include <stdexcept>

#include "lesionforge/nn/optimizer.hpp"

namespace lf {

void ClusterTrainConfig::validate() const {
  if (channels < 2) throw std::invalid_argument("cluster channels must be at least 2");
  if (target_clusters < 1 || target_clusters > channels) {
    throw std::invalid_argument("target_clusters must lie in [1, channels]");
  }
  if (max_epochs < 1) throw std::invalid_argument("max_epochs must be positive");
}

template <typename T>
nn::Network<T> build_cluster_cnn(int channels, int in_channels) {
  if (channels < 2) throw std::invalid_argument("build_cluster_cnn: channels must be at least 2");
  const auto c = static_cast<std::size_t>(channels);
  nn::Network<T> net;
  net.add(nn::LayerSpec::conv(static_cast<std::size_t>(in_channels), c, 3, 1, 1));
  net.add(nn::LayerSpec::batchnorm(c));
  net.add(nn::LayerSpec::relu());
  net.add(nn::LayerSpec::conv(c, c, 3, 1, 1));
  net.add(nn::LayerSpec::batchnorm(c));
  net.add(nn::LayerSpec::relu());
  net.add(nn::LayerSpec::conv(c, c, 3, 1, 1));
  net.add(nn::LayerSpec::batchnorm(c));
  return net;
}

template nn::Network<float> build_cluster_cnn<float>(int, int);
template nn::Network<double> build_cluster_cnn<double>(int, int);

ClusterLabeling argmax_labels(const nn::Tensor4<float>& features) {
  const nn::Shape4 s = features.shape();
  if (s.n != 1) throw nn::ShapeError("argmax_labels expects a single-item batch, got " + s.str());
  ClusterLabeling out;
  out.labels = LabelMap(s.w, s.h);
  const std::size_t plane = s.plane();
  for (std::size_t p = 0; p < plane; ++p) {
    std::size_t best = 0;
    float best_v = features[p];
    for (std::size_t c = 1; c < s.c; ++c) {
      const float v = features[c * plane + p];
      if (v > best_v) {
        best_v = v;
        best = c;
      }
    }
    out.labels.labels[p] = static_cast<std::int32_t>(best);
  }
  out.distinct_count = static_cast<int>(out.labels.distinct_count());
  return out;
}

LabelMap make_target(const LabelMap& labels, const SuperpixelMap& superpixels) {
  require_same_extents(labels.width, labels.height, superpixels.width(), superpixels.height(), "make_target");
  std::int32_t max_label = 0;
  for (auto v : labels.labels) {
    if (v < 0) throw std::invalid_argument("make_target: negative label");
    max_label = std::max(max_label, v);
  }
  const std::size_t classes = static_cast<std::size_t>(max_label) + 1;
  const auto regions = static_cast<std::size_t>(superpixels.count);
  std::vector<std::uint32_t> histogram(regions * classes, 0);
  for (std::size_t p = 0; p < labels.labels.size(); ++p) {
    const auto sp = superpixels.labels.labels[p];
    if (sp < 0 || static_cast<std::size_t>(sp) >= regions) throw std::invalid_argument("make_target: bad superpixel id");
    ++histogram[static_cast<std::size_t>(sp) * classes + static_cast<std::size_t>(labels.labels[p])];
  }
  std::vector<std::int32_t> mode(regions, 0);
  for (std::size_t r = 0; r < regions; ++r) {
    const std::uint32_t* row = &histogram[r * classes];
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c) {
      if (row[c] > row[best]) best = c;
    }
    mode[r] = static_cast<std::int32_t>(best);
  }
  LabelMap out(labels.width, labels.height);
  for (std::size_t p = 0; p < out.labels.size(); ++p) {
    out.labels[p] = mode[static_cast<std::size_t>(superpixels.labels.labels[p])];
  }
  return out;
}

ClusterResult train_clustering(const RgbImage& image, const SuperpixelMap& superpixels,
                               const ClusterTrainConfig& config) {
  config.validate();
  require_same_extents(image.width, image.height, superpixels.width(), superpixels.height(), "train_clustering");

  ClusterResult result;
  result.network = build_cluster_cnn<float>(config.channels);
  result.network.initialize(config.seed);
  nn::OptimizerState<float> optimizer(nn::OptimizerConfig::sgd(config.learning_rate, config.momentum));
  const nn::Tensor4<float> input = to_tensor(image);

  std::vector<EpochRecord> history;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const nn::Tensor4<float> output = result.network.forward(input);
    const ClusterLabeling predicted = argmax_labels(output);
    LabelMap target = make_target(predicted.labels, superpixels);
    const int distinct = static_cast<int>(target.distinct_count());
    const nn::LossResult<float> loss = nn::softmax_cross_entropy<float>(output, target.labels);
    if (!std::isfinite(loss.loss)) {
      throw std::runtime_error("train_clustering: non-finite loss at epoch " + std::to_string(epoch));
    }
    history.push_back({epoch, distinct, loss.loss});

    const bool done = distinct <= config.target_clusters;
    if (done || epoch == config.max_epochs) {
      result.labeling.labels = std::move(target);
      result.labeling.distinct_count = distinct;
      result.labeling.converged = done;
      result.stop_epoch = epoch;
      break;
    }
    result.network.backward(loss.grad);
    auto params = result.network.params();
    optimizer.step(params);
  }
  result.network.clear_cache();
  result.labeling.epoch_history = std::move(history);
  return result;
}

}  // namespace lf
