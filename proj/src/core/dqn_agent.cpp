#include "lesionforge/dqn_agent.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace lf {

void AgentConfig::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must lie in [0, 1]");
  if (!(epsilon_min >= 0.0 && epsilon_min <= epsilon_initial && epsilon_initial <= 1.0)) {
    throw std::invalid_argument("epsilon bounds must satisfy 0 <= epsilon_min <= epsilon_initial <= 1");
  }
  if (epsilon_decrement < 0.0) throw std::invalid_argument("epsilon_decrement must be non-negative");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  if (buffer_capacity < batch_size) throw std::invalid_argument("buffer capacity must hold at least one batch");
  if (episodes < 0) throw std::invalid_argument("episodes must be non-negative");
  if (horizon < 1) throw std::invalid_argument("horizon must be at least 1");
}

template <typename T>
nn::Network<T> build_dqn(std::size_t in_channels, std::size_t height, std::size_t width,
                         const DqnArchitecture& architecture) {
  nn::Network<T> net;
  std::size_t channels = in_channels;
  std::size_t h = height;
  std::size_t w = width;
  for (std::size_t out : architecture.conv_channels) {
    net.add(nn::LayerSpec::conv(channels, out, 3, 2, 1));
    net.add(nn::LayerSpec::elu());
    channels = out;
    h = nn::conv_output_extent(h, 3, 2, 1);
    w = nn::conv_output_extent(w, 3, 2, 1);
  }
  net.add(nn::LayerSpec::linear(channels * h * w, architecture.hidden));
  net.add(nn::LayerSpec::elu());
  net.add(nn::LayerSpec::linear(architecture.hidden, 2));
  return net;
}

template nn::Network<float> build_dqn<float>(std::size_t, std::size_t, std::size_t, const DqnArchitecture&);
template nn::Network<double> build_dqn<double>(std::size_t, std::size_t, std::size_t, const DqnArchitecture&);

double bellman_target(double reward, std::array<double, 2> q_next, double gamma) {
  return reward + gamma * std::max(q_next[0], q_next[1]);
}

double epsilon_at(int episode, const AgentConfig& config) {
  if (episode < 0) throw std::invalid_argument("epsilon_at: negative episode");
  return std::max(config.epsilon_initial - static_cast<double>(episode) * config.epsilon_decrement,
                  config.epsilon_min);
}

Action greedy_action(const QPair& q) { return q[1] > q[0] ? Action::Complement : Action::Mask; }

Action select_action(const QPair& q, double epsilon, Rng& rng, bool epsilon_is_exploration) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw std::invalid_argument("select_action: epsilon outside [0, 1]");
  const double explore_probability = epsilon_is_exploration ? epsilon : 1.0 - epsilon;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (unit(rng) < explore_probability) {
    std::uniform_int_distribution<int> coin(1, 2);
    return static_cast<Action>(coin(rng));
  }
  return greedy_action(q);
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
}

void ReplayBuffer::push(Transition t) {
  t.sequence = next_sequence_++;
  if (rows_.size() == capacity_) rows_.pop_front();
  rows_.push_back(std::move(t));
}

std::optional<std::vector<Transition>> ReplayBuffer::sample(std::size_t n, Rng& rng) const {
  if (n == 0 || rows_.size() < n) return std::nullopt;
  std::vector<std::size_t> index(rows_.size());
  std::iota(index.begin(), index.end(), std::size_t{0});
  std::vector<Transition> out;
  out.reserve(n);
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, index.size() - 1);
    std::swap(index[i], index[pick(rng)]);
    out.push_back(rows_[index[i]]);
  }
  return out;
}

Prediction predict(const nn::Network<float>& network, const nn::Tensor4<float>& state) {
  if (state.shape().n != 1) throw nn::ShapeError("predict expects a single state, got " + state.shape().str());
  const nn::Tensor4<float> q = network.infer(state);
  if (q.size() != 2) throw nn::ShapeError("predict: network must produce two Q values, got " + q.shape().str());
  Prediction p;
  p.q = {q[0], q[1]};
  p.action = greedy_action(p.q);
  return p;
}

bool TrainLog::operator==(const TrainLog& other) const {
  if (episodes.size() != other.episodes.size()) return false;
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    const auto& a = episodes[i];
    const auto& b = other.episodes[i];
    if (a.episode != b.episode || a.epsilon != b.epsilon || a.mean_reward != b.mean_reward ||
        a.train_accuracy != b.train_accuracy || a.test_accuracy != b.test_accuracy || a.loss != b.loss ||
        a.gradient_steps != b.gradient_steps) {
      return false;
    }
  }
  return true;
}

namespace {

Action correct_action(const MaskPair& pair) {
  return pair.mask.contains(pair.fiducial) ? Action::Mask : Action::Complement;
}

std::size_t slot(Action a) { return a == Action::Mask ? 0 : 1; }

// Distinct tensors in first-appearance order, and each transition's index
// into them.
struct Unique {
  std::vector<const nn::Tensor4<float>*> tensors;
  std::vector<std::size_t> index;
};

Unique unique_states(const std::vector<Transition>& batch, bool next) {
  Unique u;
  for (const auto& t : batch) {
    const nn::Tensor4<float>* p = next ? t.next_state.get() : t.state.get();
    if (p == nullptr) throw std::invalid_argument("td_update: transition without a state tensor");
    auto it = std::find(u.tensors.begin(), u.tensors.end(), p);
    u.index.push_back(static_cast<std::size_t>(it - u.tensors.begin()));
    if (it == u.tensors.end()) u.tensors.push_back(p);
  }
  return u;
}

}  // namespace

double td_update(nn::Network<float>& network, nn::OptimizerState<float>& optimizer,
                 const std::vector<Transition>& batch, double gamma) {
  if (batch.empty()) throw std::invalid_argument("td_update: empty batch");
  const Unique next = unique_states(batch, true);
  const nn::Tensor4<float> q_next = network.infer(nn::stack_batch<float>(next.tensors));
  const Unique now = unique_states(batch, false);
  const nn::Tensor4<float> q_now = network.forward(nn::stack_batch<float>(now.tensors));

  nn::Tensor4<float> grad(q_now.shape());
  const double scale = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const std::size_t j = next.index[i];
    const double y = bellman_target(batch[i].reward, {q_next[j * 2], q_next[j * 2 + 1]}, gamma);
    const std::size_t idx = now.index[i] * 2 + slot(batch[i].action);
    const double r = static_cast<double>(q_now[idx]) - y;
    loss += r * r;
    grad[idx] += static_cast<float>(2.0 * r * scale);
  }
  loss *= scale;
  if (!std::isfinite(loss)) return loss;
  network.backward(grad, false);
  auto params = network.params();
  optimizer.step(params);
  return loss;
}

double greedy_accuracy(const nn::Network<float>& network, std::span<const MaskSelectionEnv> envs) {
  if (envs.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& env : envs) {
    const Prediction p = predict(network, *env.reset().tensor);
    if (p.action == correct_action(env.pair())) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(envs.size());
}

TrainResult train_agent(std::span<const MaskSelectionEnv> train_envs, const AgentConfig& config,
                        std::span<const MaskSelectionEnv> test_envs,
                        const std::function<void(const EpisodeLog&)>& on_episode) {
  config.validate();
  if (train_envs.empty()) throw std::invalid_argument("train_agent: at least one training pair is required");
  const nn::Shape4 state_shape = train_envs.front().reset().tensor->shape();
  for (const auto& env : train_envs) {
    if (env.reset().tensor->shape() != state_shape) throw nn::ShapeError("train_agent: training states differ in shape");
    if (env.config().horizon < config.horizon) {
      throw std::invalid_argument("train_agent: environment horizon is shorter than the agent horizon");
    }
  }

  TrainResult result;
  result.network = build_dqn<float>(state_shape.c, state_shape.h, state_shape.w, config.architecture);
  result.network.initialize(config.seed ^ 0x9E3779B97F4A7C15ull);
  const nn::OptimizerConfig opt_config = config.optimizer == nn::OptimizerKind::Adam
                                             ? nn::OptimizerConfig::adam(config.learning_rate)
                                             : nn::OptimizerConfig::sgd(config.learning_rate, config.momentum);
  nn::OptimizerState<float> optimizer(opt_config);
  ReplayBuffer buffer(config.buffer_capacity);
  Rng rng(config.seed);
  std::uniform_int_distribution<std::size_t> pick_env(0, train_envs.size() - 1);

  for (int episode = 0; episode < config.episodes; ++episode) {
    const double epsilon = epsilon_at(episode, config);
    const MaskSelectionEnv& env = train_envs[pick_env(rng)];
    EnvState state = env.reset();
    double reward_sum = 0.0;
    double loss_sum = 0.0;
    int steps_taken = 0;

    for (int t = 0; t < config.horizon; ++t) {
      const Prediction p = predict(result.network, *state.tensor);
      const Action action = select_action(p.q, epsilon, rng, config.epsilon_is_exploration);
      StepResult step = env.step(state, action);
      reward_sum += step.reward;
      buffer.push({state.tensor, action, step.reward, step.next.tensor, 0});
      state = std::move(step.next);

      auto batch = buffer.sample(config.batch_size, rng);
      if (!batch) continue;
      const double loss = td_update(result.network, optimizer, *batch, config.gamma);
      if (!std::isfinite(loss)) {
        std::ostringstream os;
        os << "train_agent: non-finite loss at episode " << episode << ", step " << t << " (buffer rows "
           << buffer.size() << ")";
        throw std::runtime_error(os.str());
      }
      loss_sum += loss;
      ++steps_taken;
    }

    EpisodeLog log;
    log.episode = episode;
    log.epsilon = epsilon;
    log.mean_reward = reward_sum / config.horizon;
    log.loss = steps_taken > 0 ? loss_sum / steps_taken : 0.0;
    log.gradient_steps = steps_taken;
    log.train_accuracy = greedy_accuracy(result.network, train_envs);
    if (!test_envs.empty()) log.test_accuracy = greedy_accuracy(result.network, test_envs);
    result.log.episodes.push_back(log);
    if (on_episode) on_episode(log);
  }
  result.network.clear_cache();
  result.buffer_rows = buffer.size();
  return result;
}

}  // namespace lf
