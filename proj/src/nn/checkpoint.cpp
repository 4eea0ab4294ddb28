#include "balign/nn/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace balign::nn {

namespace {

constexpr char kMagic[8] = {'B', 'A', 'L', 'I', 'G', 'N', 'C', 'K'};
constexpr int kFormatVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

}  // namespace

const CheckpointTensor& Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  throw std::runtime_error("checkpoint has no tensor '" + name + "'");
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["format_version"] = kFormatVersion;
  header["config"] = ckpt.config;
  header["tensors"] = nlohmann::json::array();
  std::vector<float> payload;
  for (const auto& t : ckpt.tensors) {
    if (shape_numel(t.shape) != t.values.size())
      throw std::invalid_argument("checkpoint tensor '" + t.name + "' has mismatched shape");
    header["tensors"].push_back({{"name", t.name}, {"shape", t.shape}, {"offset", payload.size()}, {"count", t.values.size()}});
    for (double v : t.values) payload.push_back(static_cast<float>(v));
  }
  const std::string text = header.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const std::uint64_t len = text.size();
  out.write(kMagic, sizeof kMagic);
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw std::runtime_error(path.string() + " is not a checkpoint file");
  if (len > (1u << 30)) throw std::runtime_error(path.string() + ": implausible header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error(path.string() + ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path.string() + ": bad header: " + e.what());
  }
  if (header.value("format_version", 0) != kFormatVersion)
    throw std::runtime_error(path.string() + ": unsupported checkpoint version");
  Checkpoint ck;
  ck.config = header.at("config");
  std::size_t total = 0;
  for (const auto& t : header.at("tensors")) total = std::max(total, t.at("offset").get<std::size_t>() + t.at("count").get<std::size_t>());
  std::vector<float> payload(total);
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(total * sizeof(float)));
  if (!in) throw std::runtime_error(path.string() + ": truncated payload");
  for (const auto& t : header.at("tensors")) {
    CheckpointTensor ct;
    ct.name = t.at("name").get<std::string>();
    ct.shape = t.at("shape").get<Shape>();
    const auto off = t.at("offset").get<std::size_t>();
    const auto count = t.at("count").get<std::size_t>();
    if (shape_numel(ct.shape) != count) throw std::runtime_error(path.string() + ": inconsistent tensor " + ct.name);
    ct.values.assign(payload.begin() + static_cast<std::ptrdiff_t>(off), payload.begin() + static_cast<std::ptrdiff_t>(off + count));
    ck.tensors.push_back(std::move(ct));
  }
  return ck;
}

}  // namespace balign::nn
