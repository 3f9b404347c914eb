#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "lesionforge/nn/network.hpp"
#include "lesionforge/nn/optimizer.hpp"
#include "lesionforge/rl_env.hpp"

namespace lf {

using Rng = std::mt19937_64;
using QPair = std::array<float, 2>;

/// Convolution widths and hidden width of the Q-network.
struct DqnArchitecture {
  std::array<std::size_t, 4> conv_channels{16, 32, 32, 32};
  std::size_t hidden = 256;
  bool operator==(const DqnArchitecture&) const = default;
};

struct AgentConfig {
  double gamma = 0.99;
  double epsilon_initial = 0.7;
  double epsilon_decrement = 1e-4;
  double epsilon_min = 1e-4;
  /// When false, epsilon is read as the greedy probability instead.
  bool epsilon_is_exploration = true;
  std::size_t batch_size = 16;
  std::size_t buffer_capacity = 1800;
  double learning_rate = 1e-4;
  nn::OptimizerKind optimizer = nn::OptimizerKind::Adam;
  double momentum = 0.9;
  int episodes = 300;
  int horizon = 5;
  DqnArchitecture architecture;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Four 3x3 stride-2 padding-1 convolutions with ELU, then a hidden fully
/// connected ELU layer and a two-node output (Q for actions 1 and 2).
template <typename T = float>
nn::Network<T> build_dqn(std::size_t in_channels, std::size_t height, std::size_t width,
                         const DqnArchitecture& architecture = {});

/// r + gamma * max(q_next).
double bellman_target(double reward, std::array<double, 2> q_next, double gamma);

/// max(epsilon_initial - episode * epsilon_decrement, epsilon_min).
double epsilon_at(int episode, const AgentConfig& config);

/// Argmax of the Q pair, action 1 on ties.
Action greedy_action(const QPair& q);

/// Epsilon-greedy: with probability epsilon a uniformly random action,
/// otherwise greedy. With `epsilon_is_exploration` false the roles swap.
Action select_action(const QPair& q, double epsilon, Rng& rng, bool epsilon_is_exploration = true);

struct Transition {
  StateTensor state;
  Action action = Action::Mask;
  double reward = 0.0;
  StateTensor next_state;
  std::uint64_t sequence = 0;
};

/// Bounded FIFO of transitions; pushing into a full buffer evicts the oldest.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 1800);

  void push(Transition t);
  /// n distinct rows drawn uniformly without replacement, or nullopt while
  /// fewer than n rows are stored.
  std::optional<std::vector<Transition>> sample(std::size_t n, Rng& rng) const;

  std::size_t size() const { return rows_.size(); }
  std::size_t capacity() const { return capacity_; }
  const std::deque<Transition>& rows() const { return rows_; }
  std::uint64_t pushed() const { return next_sequence_; }

 private:
  std::size_t capacity_;
  std::deque<Transition> rows_;
  std::uint64_t next_sequence_ = 0;
};

struct Prediction {
  Action action = Action::Mask;
  QPair q{};
};

Prediction predict(const nn::Network<float>& network, const nn::Tensor4<float>& state);

/// One TD(0) step on a sampled batch: regresses Q(s_i)[a_i] onto
/// r_i + gamma * max_a Q(s'_i, a) with the network as it is before the step
/// (squared error averaged over the batch, the other action's error zero).
/// Transitions sharing a state tensor are evaluated once. Returns the loss.
double td_update(nn::Network<float>& network, nn::OptimizerState<float>& optimizer,
                 const std::vector<Transition>& batch, double gamma);

struct EpisodeLog {
  int episode = 0;
  double epsilon = 0.0;
  double mean_reward = 0.0;
  double train_accuracy = 0.0;
  std::optional<double> test_accuracy;
  /// Mean loss of this episode's gradient steps (0 when none were taken).
  double loss = 0.0;
  int gradient_steps = 0;
};

struct TrainLog {
  std::vector<EpisodeLog> episodes;
  bool operator==(const TrainLog& other) const;
};

struct TrainResult {
  nn::Network<float> network;
  TrainLog log;
  std::size_t buffer_rows = 0;
};

/// Fraction of environments whose greedy action on the initial state is the
/// correct one (action 1 iff p_f lies in M).
double greedy_accuracy(const nn::Network<float>& network, std::span<const MaskSelectionEnv> envs);

/// TD(0) Q-learning with replay. Each episode picks a training environment
/// uniformly, acts epsilon-greedily for `horizon` steps, and after every step
/// (once the buffer holds a batch) regresses Q(s_t)[a_t] onto
/// r_t + gamma * max_a Q(s_{t+1}, a) computed with the current network.
TrainResult train_agent(std::span<const MaskSelectionEnv> train_envs, const AgentConfig& config,
                        std::span<const MaskSelectionEnv> test_envs = {},
                        const std::function<void(const EpisodeLog&)>& on_episode = {});

}  // namespace lf
