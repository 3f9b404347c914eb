#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "lesionforge/deep_cluster.hpp"
#include "lesionforge/dqn_agent.hpp"
#include "lesionforge/mask_candidates.hpp"
#include "lesionforge/rl_env.hpp"
#include "lesionforge/superpixel.hpp"

namespace lf::pipeline {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PipelineConfig {
  std::string run_id = "default";
  std::uint64_t seed = 0;
  std::filesystem::path data_dir = "data";
  std::filesystem::path out_dir = "out";
  std::size_t image_size = 240;
  SlicConfig slic;
  ClusterTrainConfig cluster;
  CandidateFilter candidates;
  EnvConfig env;
  AgentConfig agent;

  /// Unknown keys anywhere in the document are rejected.
  static PipelineConfig from_json(const nlohmann::json& doc);
  static PipelineConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  /// Propagates the global seed and shared settings into module configs.
  void set_seed(std::uint64_t s);
  void validate() const;

  std::filesystem::path run_dir() const { return out_dir / run_id; }
  std::filesystem::path stage_dir(const std::string& stage) const { return run_dir() / stage; }
};

/// Per-image seed derived from the global seed and the image id, so results
/// do not depend on which other images are present.
std::uint64_t image_seed(std::uint64_t seed, const std::string& image_id);

}  // namespace lf::pipeline
