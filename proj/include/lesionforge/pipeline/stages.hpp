#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lesionforge/evaluation.hpp"
#include "lesionforge/pipeline/config.hpp"
#include "lesionforge/pipeline/dataset.hpp"

namespace lf::pipeline {

struct StageOptions {
  /// Selections file for train-rl; defaults to <run>/serve/selections.json.
  std::optional<std::filesystem::path> selections;
  /// Progress and warnings. Defaults to stderr.
  Warn log;
};

/// One human (or headless) choice: the cluster that is the lesion and a
/// click inside it.
struct Selection {
  std::string image_id;
  int cluster_id = 0;
  PixelCoord click;
  bool operator==(const Selection&) const = default;
};

/// Serialized sorted by image id, without timestamps, so equal selections
/// produce identical files.
nlohmann::json selections_to_json(const std::string& run_id, std::vector<Selection> selections);
std::vector<Selection> selections_from_json(const nlohmann::json& doc);

/// Worker count for per-image stages: LESIONFORGE_THREADS if set, else the
/// hardware concurrency.
std::size_t fanout_threads();

/// Runs fn(i) for i in [0, n) on up to `threads` workers. The first exception
/// is rethrown after all workers stop.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

Dataset load_dataset(const PipelineConfig& config, const Warn& warn = {});

/// Cluster label map written by the cluster stage.
LabelMap load_cluster_labels(const PipelineConfig& config, const std::string& image_id);

/// Test-time pairs: p_f is the ground-truth centroid when a mask exists,
/// otherwise the image's click; M is the cluster containing p_f. Images with
/// neither are skipped with a warning.
std::vector<EvalRecord> test_records(const PipelineConfig& config, const Dataset& dataset, const Warn& warn = {});

void run_superpixels(const PipelineConfig& config, const StageOptions& options = {});
void run_cluster(const PipelineConfig& config, const StageOptions& options = {});
void run_candidates(const PipelineConfig& config, const StageOptions& options = {});
void run_train_rl(const PipelineConfig& config, const StageOptions& options = {});
void run_predict(const PipelineConfig& config, const StageOptions& options = {});
void run_evaluate(const PipelineConfig& config, const StageOptions& options = {});
nlohmann::json run_report(const PipelineConfig& config, const StageOptions& options = {});

/// Every stage in order, training on the headless selections unless
/// `options.selections` names another file. Returns the report.
nlohmann::json run_all(const PipelineConfig& config, const StageOptions& options = {});

void run_synth(const std::filesystem::path& dir, std::size_t count, std::uint64_t seed);

}  // namespace lf::pipeline
