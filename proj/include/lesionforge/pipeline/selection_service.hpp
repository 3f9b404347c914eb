#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "json.hpp"
#include "lesionforge/image.hpp"
#include "lesionforge/pipeline/config.hpp"
#include "lesionforge/pipeline/dataset.hpp"
#include "lesionforge/pipeline/stages.hpp"

namespace lf::pipeline {

struct CandidateInfo {
  int cluster_id = 0;
  std::size_t size = 0;
  Point2 center_of_mass;
  PixelCoord fiducial;
};

struct SessionImage {
  std::string id;
  RgbImage image;
  LabelMap labels;
  std::vector<CandidateInfo> candidates;
};

/// HTTP-independent state of one selection session. Reads may run
/// concurrently; writes are serialized and journaled before they are
/// acknowledged.
class SelectionSession {
 public:
  struct Outcome {
    int status = 200;
    nlohmann::json body;
  };

  /// Replays `journal` (if it exists) on top of an empty selection map.
  SelectionSession(std::string run_id, std::vector<SessionImage> images, std::filesystem::path journal,
                   std::filesystem::path selections_file, const Warn& warn = {});

  /// Training images of a run, with candidates and cluster maps from the
  /// candidates and cluster stages. Journal and output live in <run>/serve.
  static std::unique_ptr<SelectionSession> open(const PipelineConfig& config, const Warn& warn = {});

  nlohmann::json images() const;
  std::optional<nlohmann::json> candidates(const std::string& image_id) const;
  std::optional<std::vector<std::uint8_t>> base_png(const std::string& image_id) const;
  std::optional<std::vector<std::uint8_t>> overlay_png(const std::string& image_id, int cluster_id) const;
  nlohmann::json progress() const;

  /// Body {cluster_id, x, y}. 404 for an unknown image, 400 for a malformed
  /// body, 422 when the cluster is not a current candidate or the click lies
  /// outside it.
  Outcome select(const std::string& image_id, const nlohmann::json& body);
  /// 409 listing the unselected images until every image has a selection;
  /// then writes the selections file (identical bytes for identical state).
  Outcome finalize();

  std::vector<Selection> selections() const;
  const std::filesystem::path& selections_file() const { return selections_file_; }

 private:
  const SessionImage* find(const std::string& id) const;
  std::optional<std::string> check(const SessionImage& image, int cluster_id, PixelCoord click) const;
  std::vector<std::string> unselected() const;

  std::string run_id_;
  std::vector<SessionImage> images_;
  std::filesystem::path journal_;
  std::filesystem::path selections_file_;
  std::map<std::string, Selection> selected_;
  mutable std::shared_mutex state_mutex_;
  std::mutex writer_mutex_;
};

/// REST front end for a SelectionSession.
class SelectionServer {
 public:
  SelectionServer(SelectionSession& session, std::optional<std::filesystem::path> static_dir = std::nullopt);
  ~SelectionServer();
  SelectionServer(const SelectionServer&) = delete;
  SelectionServer& operator=(const SelectionServer&) = delete;

  /// Binds the port (0 picks a free one) and returns it. Throws when the
  /// port is unavailable.
  int bind(const std::string& host, int port);
  /// Serves until stop(); requires bind().
  void listen();
  /// listen() on a background thread; returns once the server accepts.
  void start();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace lf::pipeline
