#pragma once

#include <memory>
#include <string>

#include "lesionforge/image.hpp"
#include "lesionforge/mask_candidates.hpp"
#include "lesionforge/nn/tensor.hpp"

namespace lf {

/// Action 1 claims p_f lies in M; action 2 claims it lies in the complement.
enum class Action : int { Mask = 1, Complement = 2 };

enum class TintColor { Red, Green };

struct EnvConfig {
  int horizon = 5;
  double tint_alpha = 0.5;

  void validate() const;
};

using StateTensor = std::shared_ptr<const nn::Tensor4<float>>;

/// Rendered observation: the image in [0, 1] with M tinted red (initial state
/// or after action 1) or green (after action 2).
struct EnvState {
  std::string image_id;
  StateTensor tensor;
  TintColor tint = TintColor::Red;
  int step_index = 1;
};

struct StepResult {
  EnvState next;
  double reward = 0.0;
};

/// Blends `alpha` of full intensity into one channel of the pixels in `mask`;
/// other channels and pixels keep their scaled image values.
nn::Tensor4<float> render_state(const RgbImage& image, const BinaryMask& mask, TintColor tint, double alpha);

/// +1 when the action's claim about p_f matches membership in M, else -1.
double reward(Action action, const MaskPair& pair);

/// Action 1 selects M, action 2 selects the complement.
const BinaryMask& predicted_mask(Action action, const MaskPair& pair);

/// Two-region mask-selection environment for one image. Both renderings are
/// computed once and shared by every state this environment hands out.
class MaskSelectionEnv {
 public:
  MaskSelectionEnv(const RgbImage& image, MaskPair pair, EnvConfig config = {});

  EnvState reset() const;
  StepResult step(const EnvState& state, Action action) const;

  const MaskPair& pair() const { return pair_; }
  const EnvConfig& config() const { return config_; }
  const StateTensor& rendering(TintColor tint) const { return tint == TintColor::Red ? red_ : green_; }

 private:
  MaskPair pair_;
  EnvConfig config_;
  StateTensor red_;
  StateTensor green_;
};

}  // namespace lf
