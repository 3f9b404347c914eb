#include "lesionforge/pipeline/config.hpp"

#include <fstream>
#include <set>

namespace lf::pipeline {

using nlohmann::json;

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& known, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : obj.items()) {
    if (!known.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const json& doc) {
  reject_unknown(doc, {"run_id", "seed", "data", "out", "image_size", "slic", "cluster", "candidates", "env", "agent"},
                 "config");
  PipelineConfig c;
  read(doc, "run_id", c.run_id, "config");
  std::uint64_t seed = 0;
  read(doc, "seed", seed, "config");
  std::string path;
  if (doc.contains("data")) {
    read(doc, "data", path, "config");
    c.data_dir = path;
  }
  if (doc.contains("out")) {
    read(doc, "out", path, "config");
    c.out_dir = path;
  }
  read(doc, "image_size", c.image_size, "config");

  if (auto it = doc.find("slic"); it != doc.end()) {
    reject_unknown(*it, {"target_count", "compactness", "iterations"}, "slic");
    read(*it, "target_count", c.slic.target_count, "slic");
    read(*it, "compactness", c.slic.compactness, "slic");
    read(*it, "iterations", c.slic.iterations, "slic");
  }
  if (auto it = doc.find("cluster"); it != doc.end()) {
    reject_unknown(*it, {"channels", "target_clusters", "learning_rate", "momentum", "max_epochs"}, "cluster");
    read(*it, "channels", c.cluster.channels, "cluster");
    read(*it, "target_clusters", c.cluster.target_clusters, "cluster");
    read(*it, "learning_rate", c.cluster.learning_rate, "cluster");
    read(*it, "momentum", c.cluster.momentum, "cluster");
    read(*it, "max_epochs", c.cluster.max_epochs, "cluster");
  }
  if (auto it = doc.find("candidates"); it != doc.end()) {
    reject_unknown(*it, {"margin"}, "candidates");
    read(*it, "margin", c.candidates.margin, "candidates");
  }
  if (auto it = doc.find("env"); it != doc.end()) {
    reject_unknown(*it, {"tint_alpha"}, "env");
    read(*it, "tint_alpha", c.env.tint_alpha, "env");
  }
  if (auto it = doc.find("agent"); it != doc.end()) {
    reject_unknown(*it,
                   {"gamma", "epsilon_initial", "epsilon_decrement", "epsilon_min", "epsilon_is_exploration",
                    "batch_size", "buffer_capacity", "learning_rate", "optimizer", "momentum", "episodes", "horizon",
                    "conv_channels", "hidden"},
                   "agent");
    const json& a = *it;
    read(a, "gamma", c.agent.gamma, "agent");
    read(a, "epsilon_initial", c.agent.epsilon_initial, "agent");
    read(a, "epsilon_decrement", c.agent.epsilon_decrement, "agent");
    read(a, "epsilon_min", c.agent.epsilon_min, "agent");
    read(a, "epsilon_is_exploration", c.agent.epsilon_is_exploration, "agent");
    read(a, "batch_size", c.agent.batch_size, "agent");
    read(a, "buffer_capacity", c.agent.buffer_capacity, "agent");
    read(a, "learning_rate", c.agent.learning_rate, "agent");
    read(a, "momentum", c.agent.momentum, "agent");
    read(a, "episodes", c.agent.episodes, "agent");
    read(a, "horizon", c.agent.horizon, "agent");
    read(a, "conv_channels", c.agent.architecture.conv_channels, "agent");
    read(a, "hidden", c.agent.architecture.hidden, "agent");
    std::string opt;
    read(a, "optimizer", opt, "agent");
    if (opt == "adam") {
      c.agent.optimizer = nn::OptimizerKind::Adam;
    } else if (opt == "sgd") {
      c.agent.optimizer = nn::OptimizerKind::SgdMomentum;
    } else if (!opt.empty()) {
      throw ConfigError("agent.optimizer must be \"adam\" or \"sgd\", got \"" + opt + "\"");
    }
  }
  c.set_seed(seed);
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(doc);
}

json PipelineConfig::to_json() const {
  json j;
  j["run_id"] = run_id;
  j["seed"] = seed;
  j["data"] = data_dir.generic_string();
  j["out"] = out_dir.generic_string();
  j["image_size"] = image_size;
  j["slic"] = {{"target_count", slic.target_count}, {"compactness", slic.compactness}, {"iterations", slic.iterations}};
  j["cluster"] = {{"channels", cluster.channels},
                  {"target_clusters", cluster.target_clusters},
                  {"learning_rate", cluster.learning_rate},
                  {"momentum", cluster.momentum},
                  {"max_epochs", cluster.max_epochs}};
  j["candidates"] = {{"margin", candidates.margin}};
  j["env"] = {{"tint_alpha", env.tint_alpha}};
  j["agent"] = {{"gamma", agent.gamma},
                {"epsilon_initial", agent.epsilon_initial},
                {"epsilon_decrement", agent.epsilon_decrement},
                {"epsilon_min", agent.epsilon_min},
                {"epsilon_is_exploration", agent.epsilon_is_exploration},
                {"batch_size", agent.batch_size},
                {"buffer_capacity", agent.buffer_capacity},
                {"learning_rate", agent.learning_rate},
                {"optimizer", agent.optimizer == nn::OptimizerKind::Adam ? "adam" : "sgd"},
                {"momentum", agent.momentum},
                {"episodes", agent.episodes},
                {"horizon", agent.horizon},
                {"conv_channels", agent.architecture.conv_channels},
                {"hidden", agent.architecture.hidden}};
  return j;
}

void PipelineConfig::set_seed(std::uint64_t s) {
  seed = s;
  slic.seed = s;
  cluster.seed = s;
  agent.seed = s;
  env.horizon = agent.horizon;
}

void PipelineConfig::validate() const {
  if (run_id.empty() || run_id.find_first_of("/\\") != std::string::npos || run_id == "." || run_id == "..") {
    throw ConfigError("run_id must be a plain directory name");
  }
  if (image_size < 16) throw ConfigError("image_size must be at least 16");
  try {
    cluster.validate();
    env.validate();
    agent.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (slic.target_count < 1 || slic.iterations < 0 || !(slic.compactness > 0.0)) {
    throw ConfigError("slic: target_count >= 1, iterations >= 0 and compactness > 0 are required");
  }
  if (env.horizon != agent.horizon) throw ConfigError("env horizon must equal agent horizon");
}

std::uint64_t image_seed(std::uint64_t seed, const std::string& image_id) {
  // FNV-1a over the id, mixed with the global seed by splitmix64.
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : image_id) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  std::uint64_t z = seed + h + 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace lf::pipeline
