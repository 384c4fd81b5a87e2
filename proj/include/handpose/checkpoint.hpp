#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "handpose/network.hpp"

namespace handpose::net {

// Checkpoint container, version 1. Layout (all integers little-endian,
// parameter data IEEE-754 doubles):
//
//   "HPCK"  u32 version
//   u32 config_len, config text (model config, key = value)
//   u32 meta_len, meta text (free-form provenance echo)
//   u64 entry_count
//   per entry: u16 name_len, name, u8 ndim, u32 dims[ndim], f64 data[]
//   u64 fnv1a checksum of all preceding bytes
namespace ckpt_detail {

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw std::runtime_error("checkpoint: truncated file");
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace ckpt_detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(Model& model, const std::string& path, const std::string& meta = "") {
  using namespace ckpt_detail;
  cfg::KeyValues kv;
  model.config().to_kv(kv);
  const std::string config_text = kv.to_text();

  std::string out;
  out += "HPCK";
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(config_text.size()));
  out += config_text;
  put_u32(out, static_cast<std::uint32_t>(meta.size()));
  out += meta;

  const auto& entries = model.params().entries();
  put_u64(out, entries.size());
  for (const auto& e : entries) {
    put_u16(out, static_cast<std::uint16_t>(e.name.size()));
    out += e.name;
    const auto& t = e.var.value();
    out.push_back(static_cast<char>(t.rank()));
    for (int d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    static_assert(sizeof(double) == 8);
    const std::size_t nbytes = static_cast<std::size_t>(t.numel()) * 8;
    const std::size_t off = out.size();
    out.resize(off + nbytes);
    std::memcpy(out.data() + off, t.data(), nbytes);
  }
  put_u64(out, cfg::fnv1a(out.data(), out.size()));

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot write " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

struct LoadedCheckpoint {
  std::unique_ptr<Model> model;
  std::string meta;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  using namespace ckpt_detail;
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (buf.size() < 16 || buf.compare(0, 4, "HPCK") != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const std::uint64_t stored = [&] {
    Reader r{buf, buf.size() - 8};
    return r.u64();
  }();
  if (stored != cfg::fnv1a(buf.data(), buf.size() - 8))
    throw std::runtime_error("checkpoint: checksum mismatch (corrupted file)");

  Reader r{buf, 4};
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  const std::string config_text = r.bytes(r.u32());
  const std::string meta = r.bytes(r.u32());

  ModelConfig cfg = model_config_from_kv(cfg::KeyValues::from_text(config_text));
  auto model = std::make_unique<Model>(cfg, 0);

  const std::uint64_t n = r.u64();
  auto& store = model->params();
  if (n != store.entries().size())
    throw std::runtime_error("checkpoint: parameter count mismatch");
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::string name = r.bytes(r.u16());
    r.need(1);
    const int ndim = static_cast<unsigned char>(buf[r.pos++]);
    std::vector<int> dims(static_cast<std::size_t>(ndim));
    for (auto& d : dims) d = static_cast<int>(r.u32());
    Var* v = store.find(name);
    if (!v) throw std::runtime_error("checkpoint: unknown parameter '" + name + "'");
    if (v->value().shape() != dims)
      throw std::runtime_error("checkpoint: shape mismatch for '" + name + "'");
    const std::size_t nbytes = static_cast<std::size_t>(v->value().numel()) * 8;
    r.need(nbytes);
    std::memcpy(v->value().data(), buf.data() + r.pos, nbytes);
    r.pos += nbytes;
  }
  return {std::move(model), meta};
}

}  // namespace handpose::net
