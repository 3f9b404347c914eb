#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace lf::pipeline {

/// An upstream artifact is absent; the message names the producing stage.
class MissingArtifact : public std::runtime_error {
 public:
  MissingArtifact(const std::filesystem::path& path, const std::string& stage);
};

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_file(const std::filesystem::path& path);

void require_artifact(const std::filesystem::path& path, const std::string& producing_stage);

/// Writes through a temporary sibling and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text(const std::filesystem::path& path, const std::string& text);
void write_json(const std::filesystem::path& path, const nlohmann::json& doc);
nlohmann::json read_json(const std::filesystem::path& path, const std::string& producing_stage);

/// manifest.json listing every file under `stage_dir` (relative path, size,
/// SHA-256) except the manifest itself and names in `exclude`.
nlohmann::json write_manifest(const std::filesystem::path& stage_dir, const std::string& stage,
                              const std::vector<std::string>& exclude = {});

}  // namespace lf::pipeline
