#include "lesionforge/rl_env.hpp"

#include <stdexcept>

namespace lf {

void EnvConfig::validate() const {
  if (horizon < 1) throw std::invalid_argument("horizon must be at least 1");
  if (!(tint_alpha > 0.0 && tint_alpha <= 1.0)) throw std::invalid_argument("tint_alpha must lie in (0, 1]");
}

nn::Tensor4<float> render_state(const RgbImage& image, const BinaryMask& mask, TintColor tint, double alpha) {
  require_same_extents(image.width, image.height, mask.width, mask.height, "render_state");
  nn::Tensor4<float> t = to_tensor(image);
  const std::size_t channel = tint == TintColor::Red ? 0 : 1;
  const float a = static_cast<float>(alpha);
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      if (!mask.at(x, y)) continue;
      float& v = t(0, channel, y, x);
      v = a * 1.0f + (1.0f - a) * v;
    }
  }
  return t;
}

double reward(Action action, const MaskPair& pair) {
  const bool inside = pair.mask.contains(pair.fiducial);
  const bool claims_inside = action == Action::Mask;
  return inside == claims_inside ? 1.0 : -1.0;
}

const BinaryMask& predicted_mask(Action action, const MaskPair& pair) {
  return action == Action::Mask ? pair.mask : pair.complement;
}

MaskSelectionEnv::MaskSelectionEnv(const RgbImage& image, MaskPair pair, EnvConfig config)
    : pair_(std::move(pair)), config_(config) {
  config_.validate();
  require_same_extents(image.width, image.height, pair_.mask.width, pair_.mask.height, "MaskSelectionEnv");
  red_ = std::make_shared<const nn::Tensor4<float>>(render_state(image, pair_.mask, TintColor::Red, config_.tint_alpha));
  green_ =
      std::make_shared<const nn::Tensor4<float>>(render_state(image, pair_.mask, TintColor::Green, config_.tint_alpha));
}

EnvState MaskSelectionEnv::reset() const { return {pair_.image_id, red_, TintColor::Red, 1}; }

StepResult MaskSelectionEnv::step(const EnvState& state, Action action) const {
  if (action != Action::Mask && action != Action::Complement) throw std::invalid_argument("step: unknown action");
  if (state.step_index > config_.horizon) {
    throw std::out_of_range("step: episode already reached its horizon of " + std::to_string(config_.horizon));
  }
  const TintColor tint = action == Action::Mask ? TintColor::Red : TintColor::Green;
  StepResult r;
  r.reward = reward(action, pair_);
  r.next = {pair_.image_id, rendering(tint), tint, state.step_index + 1};
  return r;
}

}  // namespace lf
