#include "lesionforge/evaluation.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace lf {

double dice(const BinaryMask& a, const BinaryMask& b) {
  require_same_extents(a.width, a.height, b.width, b.height, "dice");
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    const bool x = a.bits[i] != 0;
    const bool y = b.bits[i] != 0;
    na += x;
    nb += y;
    both += x && y;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

namespace {

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_variance(std::span<const double> v, double mean) {
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return s / static_cast<double>(v.size() - 1);
}

}  // namespace

DiceReport DiceReport::from_rows(std::vector<DiceRow> rows, std::vector<std::string> skipped) {
  DiceReport r;
  r.rows = std::move(rows);
  r.skipped = std::move(skipped);
  if (r.rows.empty()) return r;
  std::vector<double> values;
  for (const auto& row : r.rows) values.push_back(row.dice);
  r.mean = mean_of(values);
  r.sd = values.size() > 1 ? std::sqrt(sample_variance(values, r.mean)) : 0.0;
  return r;
}

DiceReport evaluate_testset(nn::Network<float>& network, std::span<const EvalRecord> records,
                            std::optional<Action> forced, const std::function<void(const std::string&)>& warn) {
  std::vector<DiceRow> rows;
  std::vector<std::string> skipped;
  for (const auto& rec : records) {
    const MaskPair& pair = rec.env.pair();
    if (!rec.ground_truth) {
      skipped.push_back(pair.image_id);
      if (warn) warn("no ground truth for " + pair.image_id + "; excluded from the aggregate");
      continue;
    }
    const Action action = forced ? *forced : predict(network, *rec.env.reset().tensor).action;
    rows.push_back({pair.image_id, dice(predicted_mask(action, pair), *rec.ground_truth), action});
  }
  return DiceReport::from_rows(std::move(rows), std::move(skipped));
}

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) throw std::invalid_argument("incomplete_beta: shape parameters must be positive");
  if (!(x >= 0.0 && x <= 1.0)) throw std::invalid_argument("incomplete_beta: x outside [0, 1]");
  if (x == 0.0 || x == 1.0) return x;
  // Continued fraction converges fast for x < (a + 1) / (a + b + 2); use the
  // symmetry I_x(a, b) = 1 - I_{1-x}(b, a) otherwise.
  if (x > (a + 1.0) / (a + b + 2.0)) return 1.0 - incomplete_beta(b, a, 1.0 - x);

  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                           b * std::log1p(-x) - std::log(a);
  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-15;
  double c = 1.0;
  double d = 1.0 - (a + b) * x / (a + 1.0);
  if (std::fabs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double f = d;
  for (int m = 1; m <= 10000; ++m) {
    const double dm = static_cast<double>(m);
    double num = dm * (b - dm) * x / ((a + 2 * dm - 1.0) * (a + 2 * dm));
    for (int half = 0; half < 2; ++half) {
      d = 1.0 + num * d;
      if (std::fabs(d) < tiny) d = tiny;
      c = 1.0 + num / c;
      if (std::fabs(c) < tiny) c = tiny;
      d = 1.0 / d;
      const double delta = c * d;
      f *= delta;
      if (half == 1 && std::fabs(delta - 1.0) < eps) return std::exp(log_front) * f;
      num = -(a + dm) * (a + b + dm) * x / ((a + 2 * dm) * (a + 2 * dm + 1.0));
    }
  }
  throw std::runtime_error("incomplete_beta: continued fraction did not converge");
}

WelchResult welch_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("welch_t_test: each sample needs at least two values");
  const double ma = mean_of(a);
  const double mb = mean_of(b);
  const double va = sample_variance(a, ma) / static_cast<double>(a.size());
  const double vb = sample_variance(b, mb) / static_cast<double>(b.size());
  const double se2 = va + vb;
  if (!(se2 > 0.0)) throw std::invalid_argument("welch_t_test: both samples have zero variance");
  WelchResult r;
  r.t = (ma - mb) / std::sqrt(se2);
  r.df = se2 * se2 /
         (va * va / static_cast<double>(a.size() - 1) + vb * vb / static_cast<double>(b.size() - 1));
  r.p = incomplete_beta(r.df / 2.0, 0.5, r.df / (r.df + r.t * r.t));
  r.p = std::min(r.p, 1.0);
  return r;
}

ComparisonReport compare(const DiceReport& a, const DiceReport& b) {
  std::vector<double> va, vb;
  for (const auto& r : a.rows) va.push_back(r.dice);
  for (const auto& r : b.rows) vb.push_back(r.dice);
  ComparisonReport c;
  c.mean_a = a.mean;
  c.sd_a = a.sd;
  c.mean_b = b.mean;
  c.sd_b = b.sd;
  c.welch = welch_t_test(va, vb);
  return c;
}

double SigmoidFit::operator()(double x) const { return L / (1.0 + std::exp(-k * (x - x0))); }

namespace {

double logistic(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

struct Eval {
  double L = 0.0;
  double rss = 0.0;
};

// Least-squares L for fixed (k, x0), clamped to [0, 1].
Eval best_amplitude(std::span<const CurvePoint> pts, double k, double x0) {
  double gy = 0.0, gg = 0.0;
  for (const auto& p : pts) {
    const double g = logistic(k * (p.episode - x0));
    gy += g * p.accuracy;
    gg += g * g;
  }
  Eval e;
  e.L = gg > 0.0 ? std::clamp(gy / gg, 0.0, 1.0) : 0.0;
  for (const auto& p : pts) {
    const double r = p.accuracy - e.L * logistic(k * (p.episode - x0));
    e.rss += r * r;
  }
  return e;
}

double rss_of(std::span<const CurvePoint> pts, double L, double k, double x0) {
  double s = 0.0;
  for (const auto& p : pts) {
    const double r = p.accuracy - L * logistic(k * (p.episode - x0));
    s += r * r;
  }
  return s;
}

Eigen::MatrixXd jacobian(std::span<const CurvePoint> pts, double L, double k, double x0) {
  Eigen::MatrixXd J(static_cast<Eigen::Index>(pts.size()), 3);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double u = pts[i].episode - x0;
    const double g = logistic(k * u);
    const double dg = g * (1.0 - g);
    const auto r = static_cast<Eigen::Index>(i);
    J(r, 0) = g;
    J(r, 1) = L * dg * u;
    J(r, 2) = -L * dg * k;
  }
  return J;
}

}  // namespace

SigmoidFit fit_sigmoid(std::span<const CurvePoint> points) {
  if (points.size() < 4) throw std::invalid_argument("fit_sigmoid: at least four points are required");
  double xmin = points.front().episode, xmax = xmin;
  for (const auto& p : points) {
    if (!std::isfinite(p.episode) || !std::isfinite(p.accuracy)) {
      throw std::invalid_argument("fit_sigmoid: non-finite point");
    }
    xmin = std::min(xmin, p.episode);
    xmax = std::max(xmax, p.episode);
  }
  const double span_x = std::max(xmax - xmin, 1.0);

  SigmoidFit best;
  best.rss = std::numeric_limits<double>::infinity();
  constexpr int kSteps = 41;
  constexpr int xSteps = 121;
  for (int i = 0; i < kSteps; ++i) {
    // |k| from 0.1 / span to 100 / span, both signs.
    const double mag = std::pow(10.0, -1.0 + 3.0 * i / (kSteps - 1)) / span_x;
    for (double k : {mag, -mag}) {
      for (int j = 0; j < xSteps; ++j) {
        const double x0 = xmin - 0.5 * span_x + 2.0 * span_x * j / (xSteps - 1);
        const Eval e = best_amplitude(points, k, x0);
        if (e.rss < best.rss) {
          best.L = e.L;
          best.k = k;
          best.x0 = x0;
          best.rss = e.rss;
        }
      }
    }
  }

  SigmoidFit fit = best;
  double lambda = 1e-3;
  bool converged = false;
  int it = 0;
  for (; it < 200 && !converged; ++it) {
    const Eigen::MatrixXd J = jacobian(points, fit.L, fit.k, fit.x0);
    Eigen::VectorXd res(static_cast<Eigen::Index>(points.size()));
    for (std::size_t i = 0; i < points.size(); ++i) {
      res(static_cast<Eigen::Index>(i)) = points[i].accuracy - fit(points[i].episode);
    }
    const Eigen::Matrix3d JtJ = J.transpose() * J;
    const Eigen::Vector3d Jtr = J.transpose() * res;
    if (Jtr.norm() < 1e-14) {
      converged = true;
      break;
    }
    bool improved = false;
    for (int attempt = 0; attempt < 30; ++attempt) {
      Eigen::Matrix3d A = JtJ;
      A.diagonal() += lambda * JtJ.diagonal().cwiseMax(1e-12);
      const Eigen::Vector3d delta = A.ldlt().solve(Jtr);
      if (!delta.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      const double L = std::clamp(fit.L + delta(0), 0.0, 1.0);
      const double k = fit.k + delta(1);
      const double x0 = fit.x0 + delta(2);
      const double rss = rss_of(points, L, k, x0);
      if (rss <= fit.rss) {
        const double step = std::fabs(L - fit.L) + std::fabs(k - fit.k) / (1.0 + std::fabs(fit.k)) +
                            std::fabs(x0 - fit.x0) / (1.0 + std::fabs(fit.x0));
        const double drop = fit.rss - rss;
        fit.L = L;
        fit.k = k;
        fit.x0 = x0;
        fit.rss = rss;
        lambda = std::max(lambda / 10.0, 1e-12);
        improved = true;
        if (step < 1e-12 || drop <= 1e-15 * (1.0 + rss)) converged = true;
        break;
      }
      lambda *= 10.0;
    }
    if (!improved) converged = true;  // no descent direction left: stationary point
  }

  if (!converged) {
    best.converged = false;
    best.iterations = it;
    fit = best;
  } else {
    fit.converged = true;
    fit.iterations = it;
  }
  const Eigen::MatrixXd J = jacobian(points, fit.L, fit.k, fit.x0);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(J);
  const auto& sv = svd.singularValues();
  fit.identified = sv(0) > 0.0 && sv(2) / sv(0) > 1e-6;
  return fit;
}

}  // namespace lf
