#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lesionforge/dqn_agent.hpp"
#include "lesionforge/image.hpp"
#include "lesionforge/rl_env.hpp"

namespace lf {

/// 2|A n B| / (|A| + |B|), and 1 when both masks are empty.
double dice(const BinaryMask& a, const BinaryMask& b);

struct DiceRow {
  std::string image_id;
  double dice = 0.0;
  Action action = Action::Mask;
};

struct DiceReport {
  std::vector<DiceRow> rows;
  std::vector<std::string> skipped;
  double mean = 0.0;
  /// Sample standard deviation (n - 1); 0 for fewer than two rows.
  double sd = 0.0;

  static DiceReport from_rows(std::vector<DiceRow> rows, std::vector<std::string> skipped = {});
};

struct EvalRecord {
  MaskSelectionEnv env;
  std::optional<BinaryMask> ground_truth;
};

/// Predicts on each record's initial state and scores the selected region
/// against ground truth. Records without ground truth are skipped and passed
/// to `warn`. A forced action replaces the prediction (baselines, ablations).
DiceReport evaluate_testset(nn::Network<float>& network, std::span<const EvalRecord> records,
                            std::optional<Action> forced = std::nullopt,
                            const std::function<void(const std::string&)>& warn = {});

struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;
};

/// Unequal-variance two-sample t-test with Welch-Satterthwaite degrees of
/// freedom and a two-sided p-value.
WelchResult welch_t_test(std::span<const double> a, std::span<const double> b);

/// Regularized incomplete beta I_x(a, b) by continued fraction.
double incomplete_beta(double a, double b, double x);

struct ComparisonReport {
  double mean_a = 0.0;
  double sd_a = 0.0;
  double mean_b = 0.0;
  double sd_b = 0.0;
  WelchResult welch;
};

ComparisonReport compare(const DiceReport& a, const DiceReport& b);

struct CurvePoint {
  double episode = 0.0;
  double accuracy = 0.0;
};

/// f(x) = L / (1 + exp(-k (x - x0))).
struct SigmoidFit {
  double L = 0.0;
  double k = 0.0;
  double x0 = 0.0;
  double rss = 0.0;
  int iterations = 0;
  bool converged = false;
  /// False when the data do not pin down all three parameters (flat curves).
  bool identified = false;

  double operator()(double x) const;
};

/// Grid search over (k, x0) with the optimal L clamped to [0, 1], then
/// Gauss-Newton refinement for at most 200 iterations. When refinement does
/// not converge the grid optimum is returned with `converged` false.
SigmoidFit fit_sigmoid(std::span<const CurvePoint> points);

}  // namespace lf
