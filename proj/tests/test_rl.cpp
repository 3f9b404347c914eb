#include <cmath>
#include <cstring>
#include <map>
#include <random>
#include <set>

#include "doctest.h"
#include "lesionforge/dqn_agent.hpp"
#include "lesionforge/evaluation.hpp"
#include "lesionforge/mask_candidates.hpp"
#include "lesionforge/rl_env.hpp"

using namespace lf;
using nn::Shape4;
using nn::Tensor4;

namespace {

RgbImage gray(std::size_t w, std::size_t h, std::uint8_t v) { return RgbImage(w, h, v); }

// Image with a bright square lesion whose cluster is M; the fiducial is the
// square's centre.
struct Case {
  RgbImage image;
  MaskPair pair;
};

Case square_case(std::size_t size, std::size_t x0, std::size_t y0, std::size_t side, std::uint64_t seed,
                 std::string id = "img") {
  std::mt19937_64 rng(seed);
  RgbImage img(size, size);
  LabelMap labels(size, size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const bool in = x >= x0 && x < x0 + side && y >= y0 && y < y0 + side;
      labels.at(x, y) = in ? 1 : 0;
      const int base = in ? 200 : 40;
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = static_cast<std::uint8_t>(base + rng() % 30);
    }
  return {img, build_mask_pair(labels, 1, std::nullopt, std::move(id))};
}

std::vector<MaskSelectionEnv> square_envs(std::size_t count, std::uint64_t seed, std::size_t size = 16) {
  std::mt19937_64 rng(seed);
  std::vector<MaskSelectionEnv> envs;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t side = 4 + rng() % 5;
    const std::size_t x0 = rng() % (size - side), y0 = rng() % (size - side);
    auto c = square_case(size, x0, y0, side, rng(), "sq" + std::to_string(i));
    envs.emplace_back(c.image, c.pair);
  }
  return envs;
}

const DqnArchitecture kTiny{{4, 4, 4, 4}, 8};

Transition make_transition(const StateTensor& s, Action a, double r, const StateTensor& next) {
  Transition t;
  t.state = s;
  t.action = a;
  t.reward = r;
  t.next_state = next;
  return t;
}

StateTensor random_state(std::uint64_t seed, std::size_t size = 16) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(0.0f, 1.0f);
  Tensor4<float> t({1, 3, size, size});
  for (auto& v : t.values()) v = d(rng);
  return std::make_shared<const Tensor4<float>>(std::move(t));
}

}  // namespace

TEST_SUITE("rl_env") {
  TEST_CASE("reset tints exactly M in red") {
    auto c = square_case(12, 2, 3, 5, 1);
    MaskSelectionEnv env(c.image, c.pair);
    auto s = env.reset();
    CHECK(s.tint == TintColor::Red);
    CHECK(s.step_index == 1);
    const auto plain = to_tensor(c.image);
    for (std::size_t y = 0; y < 12; ++y)
      for (std::size_t x = 0; x < 12; ++x) {
        const bool changed = (*s.tensor)(0, 0, y, x) != plain(0, 0, y, x);
        CHECK(changed == c.pair.mask.at(x, y));
        CHECK((*s.tensor)(0, 1, y, x) == plain(0, 1, y, x));
        CHECK((*s.tensor)(0, 2, y, x) == plain(0, 2, y, x));
      }
  }

  TEST_CASE("alpha 1 saturates the red channel") {
    auto c = square_case(10, 1, 1, 4, 2);
    MaskSelectionEnv env(c.image, c.pair, {5, 1.0});
    auto s = env.reset();
    for (std::size_t y = 0; y < 10; ++y)
      for (std::size_t x = 0; x < 10; ++x)
        if (c.pair.mask.at(x, y)) CHECK((*s.tensor)(0, 0, y, x) == 1.0f);
  }

  TEST_CASE("gray image at alpha 0.5 follows the blend formula") {
    auto img = gray(8, 8, 90);
    LabelMap l(8, 8);
    for (std::size_t x = 0; x < 8; ++x) l.at(x, 2) = 1;
    MaskSelectionEnv env(img, build_mask_pair(l, 1));
    auto s = env.reset();
    const float g = 90.0f / 255.0f;
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 0; x < 8; ++x) {
        const float expect = y == 2 ? 0.5f * 1.0f + 0.5f * g : g;
        CHECK((*s.tensor)(0, 0, y, x) == doctest::Approx(expect).epsilon(1e-6));
      }
  }

  TEST_CASE("step rewards and tints") {
    auto c = square_case(12, 2, 2, 6, 3);
    MaskSelectionEnv env(c.image, c.pair);
    auto s = env.reset();
    auto r1 = env.step(s, Action::Mask);
    CHECK(r1.reward == 1.0);
    CHECK(r1.next.tint == TintColor::Red);
    CHECK(r1.next.step_index == 2);
    auto r2 = env.step(r1.next, Action::Complement);
    CHECK(r2.reward == -1.0);
    CHECK(r2.next.tint == TintColor::Green);
    const auto& green = *r2.next.tensor;
    for (std::size_t y = 0; y < 12; ++y)
      for (std::size_t x = 0; x < 12; ++x) {
        if (!c.pair.mask.at(x, y)) continue;
        CHECK(green(0, 1, y, x) > to_tensor(c.image)(0, 1, y, x));
        CHECK(green(0, 0, y, x) == to_tensor(c.image)(0, 0, y, x));
      }
  }

  TEST_CASE("tint depends only on the action; reward on membership") {
    auto c = square_case(12, 2, 2, 6, 4);
    MaskPair outside = c.pair;
    outside.fiducial = {11, 11};
    for (const MaskPair* pair : {&c.pair, &outside}) {
      MaskSelectionEnv env(c.image, *pair);
      auto s = env.reset();
      for (int i = 0; i < 5; ++i) {
        const Action a = i % 2 ? Action::Complement : Action::Mask;
        auto r = env.step(s, a);
        CHECK(r.next.tint == (a == Action::Mask ? TintColor::Red : TintColor::Green));
        const bool inside = pair->mask.contains(pair->fiducial);
        CHECK(r.reward == ((a == Action::Mask) == inside ? 1.0 : -1.0));
        s = r.next;
      }
    }
  }

  TEST_CASE("stepping past the horizon fails") {
    auto c = square_case(10, 2, 2, 4, 5);
    MaskSelectionEnv env(c.image, c.pair, {3, 0.5});
    auto s = env.reset();
    for (int i = 0; i < 3; ++i) s = env.step(s, Action::Mask).next;
    CHECK(s.step_index == 4);
    CHECK_THROWS_AS(env.step(s, Action::Mask), std::out_of_range);
  }

  TEST_CASE("extent mismatch and bad configs are rejected") {
    auto c = square_case(10, 2, 2, 4, 6);
    CHECK_THROWS(MaskSelectionEnv(gray(11, 10, 0), c.pair));
    CHECK_THROWS(MaskSelectionEnv(c.image, c.pair, {0, 0.5}));
    CHECK_THROWS(MaskSelectionEnv(c.image, c.pair, {5, 0.0}));
  }

  TEST_CASE("predicted masks") {
    auto c = square_case(10, 2, 2, 4, 7);
    CHECK(predicted_mask(Action::Mask, c.pair) == c.pair.mask);
    CHECK(predicted_mask(Action::Complement, c.pair) == c.pair.complement);
    CHECK(dice(predicted_mask(Action::Mask, c.pair), c.pair.mask) == 1.0);
  }

  TEST_CASE("renders are bit-identical across instances") {
    auto c = square_case(14, 3, 4, 5, 8);
    MaskSelectionEnv a(c.image, c.pair), b(c.image, c.pair);
    for (TintColor t : {TintColor::Red, TintColor::Green}) {
      const auto& x = *a.rendering(t);
      const auto& y = *b.rendering(t);
      REQUIRE(x.size() == y.size());
      CHECK(std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) == 0);
    }
  }
}

TEST_SUITE("dqn") {
  TEST_CASE("spatial trajectory 240 -> 15 and a two-node output") {
    auto net = build_dqn<float>(3, 240, 240);
    Shape4 s{1, 3, 240, 240};
    std::vector<std::size_t> extents;
    for (const auto& spec : net.specs()) {
      s = [&] {
        nn::Network<float> one;
        one.add(spec);
        return one.output_shape(s);
      }();
      if (spec.kind == nn::LayerKind::Conv2d) extents.push_back(s.h);
    }
    CHECK(extents == std::vector<std::size_t>{120, 60, 30, 15});
    CHECK(net.output_shape({1, 3, 240, 240}) == Shape4{1, 2, 1, 1});
    const std::size_t convs = (16 * 27 + 16) + (32 * 16 * 9 + 32) + 2 * (32 * 32 * 9 + 32);
    const std::size_t fcs = (32 * 15 * 15 * 256 + 256) + (256 * 2 + 2);
    CHECK(net.parameter_count() == convs + fcs);
    CHECK(build_dqn<float>(3, 240, 240).parameter_count() == net.parameter_count());
  }

  TEST_CASE("zero input gives equal Q values") {
    auto net = build_dqn<float>(3, 32, 32, kTiny);
    net.initialize(5);
    auto q = predict(net, Tensor4<float>({1, 3, 32, 32}));
    CHECK(q.q[0] == q.q[1]);
    CHECK(q.action == Action::Mask);
  }

  TEST_CASE("bellman target examples") {
    CHECK(bellman_target(1.0, {0.0, 0.0}, 0.99) == 1.0);
    CHECK(bellman_target(-1.0, {2.0, 1.0}, 0.99) == doctest::Approx(0.98).epsilon(1e-15));
    CHECK(bellman_target(-1.0, {5.0, 7.0}, 0.0) == -1.0);
  }

  TEST_CASE("bellman target on random triples") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> d(-10.0, 10.0), g(0.0, 1.0);
    for (int i = 0; i < 1000; ++i) {
      const double r = d(rng), a = d(rng), b = d(rng), gamma = g(rng);
      const double expect = r + gamma * (a > b ? a : b);
      CHECK(std::abs(bellman_target(r, {a, b}, gamma) - expect) <= 1e-12);
      // Monotone in each component and additive in r.
      CHECK(bellman_target(r, {a + 0.5, b}, gamma) >= bellman_target(r, {a, b}, gamma));
      CHECK(bellman_target(r, {a, b + 0.5}, gamma) >= bellman_target(r, {a, b}, gamma));
      CHECK(std::abs(bellman_target(r + 1.0, {a, b}, gamma) - bellman_target(r, {a, b}, gamma) - 1.0) < 1e-12);
    }
  }

  TEST_CASE("epsilon schedule") {
    AgentConfig cfg;
    CHECK(epsilon_at(0, cfg) == 0.7);
    CHECK(epsilon_at(300, cfg) == std::max(0.7 - 300 * 1e-4, 1e-4));
    CHECK(epsilon_at(300, cfg) == doctest::Approx(0.67).epsilon(1e-12));
    CHECK(epsilon_at(10'000'000, cfg) == 1e-4);
    double prev = 1.0;
    for (int k = 0; k < 20000; k += 37) {
      const double e = epsilon_at(k, cfg);
      CHECK(e <= prev);
      CHECK(e >= cfg.epsilon_min);
      CHECK(e > 0.0);
      prev = e;
    }
    CHECK_THROWS(epsilon_at(-1, cfg));
  }

  TEST_CASE("select_action examples") {
    Rng rng(3);
    for (int i = 0; i < 1000; ++i) CHECK(select_action({0.2f, 0.7f}, 0.0, rng) == Action::Complement);
    CHECK(select_action({0.5f, 0.5f}, 0.0, rng) == Action::Mask);
    CHECK(greedy_action({3.1f, -0.2f}) == Action::Mask);
    CHECK(greedy_action({-0.2f, 3.1f}) == Action::Complement);
    CHECK_THROWS(select_action({0.0f, 0.0f}, 1.5, rng));
  }

  TEST_CASE("select_action frequencies") {
    Rng rng(4);
    const int n = 100000;
    int ones = 0;
    for (int i = 0; i < n; ++i) ones += select_action({0.9f, 0.1f}, 1.0, rng) == Action::Mask;
    CHECK(std::abs(ones / double(n) - 0.5) < 0.01);

    // Greedy action 2; exploring with probability 0.3 picks action 1 half the time.
    ones = 0;
    for (int i = 0; i < n; ++i) ones += select_action({0.2f, 0.7f}, 0.3, rng) == Action::Mask;
    CHECK(std::abs(ones / double(n) - 0.15) < 0.01);

    // Flipped reading: epsilon is the greedy probability.
    ones = 0;
    for (int i = 0; i < n; ++i) ones += select_action({0.2f, 0.7f}, 0.7, rng, false) == Action::Mask;
    CHECK(std::abs(ones / double(n) - 0.15) < 0.01);
  }

  TEST_CASE("replay buffer is FIFO") {
    ReplayBuffer buf(3);
    auto s = random_state(1);
    for (int i = 1; i <= 4; ++i) buf.push(make_transition(s, Action::Mask, i, s));
    REQUIRE(buf.size() == 3);
    CHECK(buf.rows()[0].reward == 2.0);
    CHECK(buf.rows()[1].reward == 3.0);
    CHECK(buf.rows()[2].reward == 4.0);
    CHECK(buf.pushed() == 4);
    for (std::size_t i = 0; i < 3; ++i) CHECK(buf.rows()[i].sequence == i + 1);
  }

  TEST_CASE("replay buffer never exceeds capacity and evicts in insertion order") {
    ReplayBuffer buf(50);
    auto s = random_state(2);
    for (int i = 0; i < 500; ++i) {
      buf.push(make_transition(s, Action::Mask, 0.0, s));
      CHECK(buf.size() <= 50);
      const auto first = buf.rows().front().sequence;
      for (std::size_t k = 0; k < buf.size(); ++k) CHECK(buf.rows()[k].sequence == first + k);
      CHECK(buf.rows().back().sequence == static_cast<std::uint64_t>(i));
    }
  }

  TEST_CASE("sampling") {
    ReplayBuffer buf(10);
    auto s = random_state(3);
    Rng rng(5);
    for (int i = 0; i < 5; ++i) buf.push(make_transition(s, Action::Mask, i, s));
    CHECK_FALSE(buf.sample(6, rng).has_value());
    auto all = buf.sample(5, rng);
    REQUIRE(all.has_value());
    std::set<std::uint64_t> seqs;
    for (const auto& t : *all) seqs.insert(t.sequence);
    CHECK(seqs == std::set<std::uint64_t>{0, 1, 2, 3, 4});

    for (int i = 5; i < 10; ++i) buf.push(make_transition(s, Action::Mask, i, s));
    std::map<std::uint64_t, int> freq;
    const int n = 100000;
    for (int i = 0; i < n; ++i) ++freq[buf.sample(1, rng)->front().sequence];
    REQUIRE(freq.size() == 10);
    for (const auto& [seq, count] : freq) CHECK(std::abs(count / double(n) - 0.1) < 0.01);
  }

  TEST_CASE("td_update matches a direct masked-MSE step") {
    auto net = build_dqn<float>(3, 16, 16, kTiny);
    net.initialize(7);
    auto ref = net.clone();
    std::vector<StateTensor> states;
    for (int i = 0; i < 5; ++i) states.push_back(random_state(100 + i));
    Rng rng(8);
    std::vector<Transition> batch;
    for (int i = 0; i < 16; ++i) {
      const auto a = rng() % 2 ? Action::Mask : Action::Complement;
      batch.push_back(make_transition(states[rng() % 5], a, rng() % 2 ? 1.0 : -1.0, states[rng() % 5]));
    }
    const double gamma = 0.99;

    nn::OptimizerState<float> opt(nn::OptimizerConfig::adam(1e-3));
    const double loss = td_update(net, opt, batch, gamma);

    // Reference: one forward per transition, no sharing.
    std::vector<const Tensor4<float>*> rows;
    Tensor4<float> target({16, 2, 1, 1});
    std::vector<std::uint8_t> sel(32, 0);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto qn = ref.infer(*batch[i].next_state);
      const double y = bellman_target(batch[i].reward, {double(qn[0]), double(qn[1])}, gamma);
      const std::size_t col = batch[i].action == Action::Mask ? 0 : 1;
      target(i, col, 0, 0) = static_cast<float>(y);
      sel[i * 2 + col] = 1;
      rows.push_back(batch[i].state.get());
    }
    const auto x = nn::stack_batch<float>(rows);
    const auto r = nn::mse_loss<float>(ref.forward(x), target, std::span<const std::uint8_t>(sel));
    ref.backward(r.grad);
    nn::OptimizerState<float> ref_opt(nn::OptimizerConfig::adam(1e-3));
    ref_opt.step(ref.params());

    CHECK(loss == doctest::Approx(r.loss).epsilon(1e-5));
    const auto a = net.params();
    const auto b = ref.params();
    for (std::size_t p = 0; p < a.size(); ++p)
      for (std::size_t j = 0; j < a[p]->value.size(); ++j)
        CHECK(std::abs(a[p]->value[j] - b[p]->value[j]) <= 1e-6f + 1e-5f * std::abs(b[p]->value[j]));
  }

  TEST_CASE("the untaken action's output gets exactly zero gradient") {
    auto net = build_dqn<float>(3, 16, 16, kTiny);
    net.initialize(9);
    const std::vector<float> before(net.params().back()->value.values().begin(),
                                    net.params().back()->value.values().end());
    std::vector<Transition> batch;
    for (int i = 0; i < 8; ++i) batch.push_back(make_transition(random_state(200 + i), Action::Mask, 1.0, random_state(300 + i)));
    nn::OptimizerState<float> opt(nn::OptimizerConfig::adam(1e-3));
    td_update(net, opt, batch, 0.99);
    const auto* out_bias = net.params().back();
    REQUIRE(out_bias->name == "linear10.bias");
    CHECK(out_bias->grad[1] == 0.0f);
    CHECK(out_bias->grad[0] != 0.0f);
    CHECK(out_bias->value[1] == before[1]);

    Tensor4<float> p({1, 2, 1, 1}, std::vector<float>{1.0f, 2.0f});
    Tensor4<float> t({1, 2, 1, 1});
    std::vector<std::uint8_t> sel{1, 0};
    CHECK(nn::mse_loss<float>(p, t, std::span<const std::uint8_t>(sel)).grad[1] == 0.0f);
  }

  TEST_CASE("training: buffer rows, determinism, logging") {
    auto envs = square_envs(1, 11);
    AgentConfig cfg;
    cfg.episodes = 50;
    cfg.architecture = kTiny;
    cfg.seed = 3;
    auto a = train_agent(envs, cfg);
    CHECK(a.buffer_rows == 250);
    REQUIRE(a.log.episodes.size() == 50);
    CHECK(a.log.episodes[0].epsilon == 0.7);
    for (const auto& e : a.log.episodes) {
      CHECK(std::isfinite(e.loss));
      CHECK(e.mean_reward >= -1.0);
      CHECK(e.mean_reward <= 1.0);
      CHECK(!e.test_accuracy.has_value());
    }
    CHECK(a.log.episodes[0].gradient_steps == 0);
    CHECK(a.log.episodes[3].gradient_steps == 5);
    auto b = train_agent(envs, cfg);
    CHECK(a.log == b.log);
    for (std::size_t p = 0; p < a.network.params().size(); ++p) {
      const auto x = a.network.params()[p]->value.values();
      const auto y = b.network.params()[p]->value.values();
      CHECK(std::equal(x.begin(), x.end(), y.begin(), y.end()));
    }
    cfg.seed = 4;
    CHECK_FALSE(train_agent(envs, cfg).log == a.log);
  }

  TEST_CASE("training on small square phantoms learns action 1") {
    auto train = square_envs(6, 21);
    auto test = square_envs(6, 22);
    AgentConfig cfg;
    cfg.episodes = 150;
    cfg.architecture = {{8, 8, 8, 8}, 32};
    cfg.learning_rate = 1e-3;
    cfg.seed = 1;
    auto r = train_agent(train, cfg, test);
    CHECK(r.log.episodes.back().train_accuracy == 1.0);
    CHECK(r.log.episodes.back().test_accuracy.value() == 1.0);
    CHECK(greedy_accuracy(r.network, test) == 1.0);
  }

  TEST_CASE("invalid inputs") {
    AgentConfig cfg;
    cfg.architecture = kTiny;
    CHECK_THROWS(train_agent({}, cfg));
    auto envs = square_envs(1, 5);
    envs.emplace_back(square_case(20, 2, 2, 5, 1).image, square_case(20, 2, 2, 5, 1).pair);
    CHECK_THROWS_AS(train_agent(envs, cfg), nn::ShapeError);
    cfg = {};
    cfg.gamma = 1.5;
    CHECK_THROWS(cfg.validate());
    cfg = {};
    cfg.epsilon_min = 0.8;
    CHECK_THROWS(cfg.validate());
    cfg = {};
    cfg.buffer_capacity = 4;
    CHECK_THROWS(cfg.validate());
    auto longer = square_envs(1, 6);
    AgentConfig h;
    h.horizon = 6;
    h.architecture = kTiny;
    CHECK_THROWS(train_agent(longer, h));
  }

  TEST_CASE("a diverging run aborts with diagnostics") {
    auto envs = square_envs(2, 31);
    AgentConfig cfg;
    cfg.episodes = 40;
    cfg.architecture = kTiny;
    cfg.optimizer = nn::OptimizerKind::SgdMomentum;
    cfg.learning_rate = 1e30;
    try {
      train_agent(envs, cfg);
      FAIL("expected divergence to abort training");
    } catch (const std::runtime_error& e) {
      const std::string msg = e.what();
      CHECK(msg.find("non-finite") != std::string::npos);
    }
  }
}
