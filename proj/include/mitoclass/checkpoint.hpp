#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <type_traits>

#include <json.hpp>

#include "mitoclass/error.hpp"
#include "mitoclass/netcore.hpp"
#include "mitoclass/tensor.hpp"

namespace mitoclass {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

// Layout (all integers little-endian):
//   "MCKP" | u32 version | u32 len | JSON {"arch":..., "meta":...}
//   u32 tensor count, then per tensor:
//   u32 name len | name | u8 dtype (0 = f32, 1 = f64) | u32 rank | u64 dims[rank] | raw data
inline constexpr char kCheckpointMagic[4] = {'M', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename S>
struct Checkpoint {
  ParamSet<S> params;
  ArchConfig arch;
  nlohmann::json meta;
};

namespace ckpt_detail {

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

  template <typename T>
  T get() {
    T v;
    need(sizeof(T));
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void read_into(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  bool at_end() const noexcept { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw Error(ErrorCode::TruncatedFile, "checkpoint ends unexpectedly");
  }
  std::string bytes_;
  std::size_t pos_ = 0;
};

template <typename S>
constexpr std::uint8_t dtype_tag() {
  return std::is_same_v<S, float> ? 0 : 1;
}

}  // namespace ckpt_detail

template <typename S>
std::string serialize_checkpoint(const ParamSet<S>& params, const ArchConfig& arch, const nlohmann::json& meta) {
  using namespace ckpt_detail;
  std::string out(kCheckpointMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string desc = nlohmann::json{{"arch", to_json(arch)}, {"meta", meta}}.dump();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(desc.size()));
  out += desc;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& e : params.entries()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    put<std::uint8_t>(out, dtype_tag<S>());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.tensor.shape.size()));
    for (auto d : e.tensor.shape) put<std::uint64_t>(out, d);
    out.append(reinterpret_cast<const char*>(e.tensor.data.data()), e.tensor.data.size() * sizeof(S));
  }
  return out;
}

template <typename S>
void save_checkpoint(const std::filesystem::path& path, const ParamSet<S>& params, const ArchConfig& arch,
                     const nlohmann::json& meta = nlohmann::json::object()) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  const std::string bytes = serialize_checkpoint(params, arch, meta);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

template <typename S>
Checkpoint<S> deserialize_checkpoint(std::string bytes) {
  using namespace ckpt_detail;
  Reader r(std::move(bytes));
  if (r.get_bytes(4) != std::string(kCheckpointMagic, 4)) throw Error(ErrorCode::BadMagic, "not a checkpoint file");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw Error(ErrorCode::VersionUnsupported, "checkpoint version " + std::to_string(version));
  Checkpoint<S> ck;
  const auto desc_len = r.get<std::uint32_t>();
  nlohmann::json desc;
  try {
    desc = nlohmann::json::parse(r.get_bytes(desc_len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BadMagic, std::string("corrupt checkpoint descriptor: ") + e.what());
  }
  ck.arch = arch_from_json(desc.at("arch"));
  ck.meta = desc.value("meta", nlohmann::json::object());
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name = r.get_bytes(r.get<std::uint32_t>());
    const auto dtype = r.get<std::uint8_t>();
    if (dtype > 1) throw Error(ErrorCode::VersionUnsupported, "unknown dtype tag for " + name);
    const auto rank = r.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.get<std::uint64_t>());
    auto& t = ck.params.add(name, shape);
    if (dtype == dtype_tag<S>()) {
      r.read_into(t.data.data(), t.data.size() * sizeof(S));
    } else if (dtype == 0) {
      std::vector<float> tmp(t.size());
      r.read_into(tmp.data(), tmp.size() * sizeof(float));
      for (std::size_t j = 0; j < tmp.size(); ++j) t.data[j] = static_cast<S>(tmp[j]);
    } else {
      std::vector<double> tmp(t.size());
      r.read_into(tmp.data(), tmp.size() * sizeof(double));
      for (std::size_t j = 0; j < tmp.size(); ++j) t.data[j] = static_cast<S>(tmp[j]);
    }
  }
  if (!r.at_end()) throw Error(ErrorCode::TruncatedFile, "trailing bytes after last tensor");
  return ck;
}

template <typename S>
Checkpoint<S> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint<S>(ss.str());
}

/// Loads and checks every tensor against the layout `expected` implies.
template <typename S>
Checkpoint<S> load_checkpoint(const std::filesystem::path& path, const Model<S>& expected) {
  auto ck = load_checkpoint<S>(path);
  expected.check_layout(ck.params);
  return ck;
}

}  // namespace mitoclass
