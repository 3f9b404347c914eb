#include "lesionforge/pipeline/artifacts.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <fstream>
#include <memory>

namespace lf::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

MissingArtifact::MissingArtifact(const fs::path& path, const std::string& stage)
    : std::runtime_error("missing " + path.string() + "; run `lesionforge " + stage + "` first to produce it") {}

namespace {

struct Sha256 {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx{EVP_MD_CTX_new(), &EVP_MD_CTX_free};
  Sha256() {
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw std::runtime_error("SHA-256 init");
  }
  void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx.get(), data, n); }
  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), md.data(), &len);
    static const char* digits = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
      out.push_back(digits[md[i] >> 4]);
      out.push_back(digits[md[i] & 15]);
    }
    return out;
  }
};

}  // namespace

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  Sha256 h;
  h.update(bytes.data(), bytes.size());
  return h.hex();
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  Sha256 h;
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

void require_artifact(const fs::path& path, const std::string& producing_stage) {
  if (!fs::exists(path)) throw MissingArtifact(path, producing_stage);
}

void write_file_atomic(const fs::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

void write_text(const fs::path& path, const std::string& text) {
  write_file_atomic(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

void write_json(const fs::path& path, const json& doc) { write_text(path, doc.dump(2) + "\n"); }

json read_json(const fs::path& path, const std::string& producing_stage) {
  require_artifact(path, producing_stage);
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

json write_manifest(const fs::path& stage_dir, const std::string& stage, const std::vector<std::string>& exclude) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(stage_dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string rel = fs::relative(entry.path(), stage_dir).generic_string();
    if (rel == "manifest.json" || std::find(exclude.begin(), exclude.end(), rel) != exclude.end()) continue;
    files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  json list = json::array();
  for (const auto& f : files) {
    list.push_back({{"path", fs::relative(f, stage_dir).generic_string()},
                    {"bytes", fs::file_size(f)},
                    {"sha256", sha256_file(f)}});
  }
  json manifest = {{"stage", stage}, {"files", list}};
  write_json(stage_dir / "manifest.json", manifest);
  return manifest;
}

}  // namespace lf::pipeline
