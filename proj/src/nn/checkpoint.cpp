#include "lesionforge/nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace lf::nn {

namespace {

template <typename U>
void put(std::ostream& os, U v) {
  unsigned char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFFu);
  os.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <typename U>
U get(std::istream& is, const std::filesystem::path& path) {
  unsigned char buf[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(U))) {
    throw CheckpointError("truncated checkpoint: " + path.string());
  }
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointRecord>& records) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open checkpoint for writing: " + path.string());
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    if (r.values.size() != r.shape.size()) throw CheckpointError("record '" + r.name + "' has inconsistent size");
    put<std::uint32_t>(os, static_cast<std::uint32_t>(r.name.size()));
    os.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    put<std::uint32_t>(os, 4);
    for (std::size_t e : {r.shape.n, r.shape.c, r.shape.h, r.shape.w}) put<std::uint64_t>(os, e);
    for (float v : r.values) put<std::uint32_t>(os, std::bit_cast<std::uint32_t>(v));
  }
  if (!os) throw CheckpointError("failed writing checkpoint: " + path.string());
}

std::vector<CheckpointRecord> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint: " + path.string());
  char magic[sizeof(kCheckpointMagic)];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw CheckpointError("not a checkpoint file (bad magic): " + path.string());
  }
  const auto version = get<std::uint32_t>(is, path);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = get<std::uint32_t>(is, path);
  std::vector<CheckpointRecord> records;
  records.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointRecord r;
    const auto len = get<std::uint32_t>(is, path);
    r.name.resize(len);
    if (!is.read(r.name.data(), len)) throw CheckpointError("truncated checkpoint: " + path.string());
    const auto rank = get<std::uint32_t>(is, path);
    if (rank != 4) throw CheckpointError("record '" + r.name + "' has rank " + std::to_string(rank));
    r.shape.n = get<std::uint64_t>(is, path);
    r.shape.c = get<std::uint64_t>(is, path);
    r.shape.h = get<std::uint64_t>(is, path);
    r.shape.w = get<std::uint64_t>(is, path);
    r.values.resize(r.shape.size());
    for (auto& v : r.values) v = std::bit_cast<float>(get<std::uint32_t>(is, path));
    records.push_back(std::move(r));
  }
  return records;
}

void save_network(const std::filesystem::path& path, const Network<float>& network) {
  std::vector<CheckpointRecord> records;
  for (const auto* p : network.params()) {
    records.push_back({p->name, p->value.shape(), {p->value.values().begin(), p->value.values().end()}});
  }
  write_checkpoint(path, records);
}

void load_network(const std::filesystem::path& path, Network<float>& network) {
  auto records = read_checkpoint(path);
  auto params = network.params();
  if (records.size() != params.size()) {
    throw CheckpointError("checkpoint has " + std::to_string(records.size()) + " parameters, network " +
                          std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (records[i].name != params[i]->name || records[i].shape != params[i]->value.shape()) {
      throw CheckpointError("checkpoint record '" + records[i].name + "' (" + records[i].shape.str() +
                            ") does not match parameter '" + params[i]->name + "' (" +
                            params[i]->value.shape().str() + ")");
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i]->value = Tensor4<float>(records[i].shape, std::move(records[i].values));
  }
}

}  // namespace lf::nn
