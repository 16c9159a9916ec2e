#pragma once

// Versioned binary checkpoints. Layout (all integers little-endian):
//
//   "UCMN" | u32 version | u8 dtype (1=f32, 2=f64)
//   model config: 5 x i32, f64 bank momentum
//   adam config:  4 x f64, i64 total_steps | i64 opt step | i64 trainer step
//   u32 n_params  { u32 name_len, name, u8 rank, i64 dims..., scalars }
//   u32 n_banks   { u32 name_len, name, f64 momentum, i64 tokens, i64 ch, scalars }
//   per param: u64 count, m scalars, u64 count, v scalars
//   u32 rng_len, rng text | "NMCU"
//
// Save -> load -> save is byte-identical; every parse failure reports the
// byte offset it tripped on.

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "ucmnet/adam.hpp"
#include "ucmnet/network.hpp"

namespace ucmnet {

namespace ckptdetail {

constexpr uint32_t kVersion = 1;

template <typename T>
constexpr uint8_t dtype_code() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                "checkpoints support float and double tensors only");
  return std::is_same_v<T, float> ? 1 : 2;
}

struct Writer {
  std::vector<uint8_t> buf;

  void u8(uint8_t v) { buf.push_back(v); }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void i64(int64_t v) { u64(static_cast<uint64_t>(v)); }
  void f64(double v) { u64(std::bit_cast<uint64_t>(v)); }
  void text(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    buf.insert(buf.end(), s.begin(), s.end());
  }
  void raw_tag(const char* four) { buf.insert(buf.end(), four, four + 4); }
  template <typename T>
  void scalars(const TensorT<T>& t) {
    for (T v : t.data) {
      if constexpr (sizeof(T) == 4)
        u32(std::bit_cast<uint32_t>(v));
      else
        u64(std::bit_cast<uint64_t>(v));
    }
  }
};

struct Reader {
  std::vector<uint8_t> buf;
  size_t off = 0;

  explicit Reader(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    buf.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }

  void need(size_t n, const char* what) {
    if (off + n > buf.size())
      throw ParseError("checkpoint truncated reading " + std::string(what) + " at offset " +
                       std::to_string(off));
  }
  uint8_t u8(const char* what) {
    need(1, what);
    return buf[off++];
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf[off + static_cast<size_t>(i)]) << (8 * i);
    off += 4;
    return v;
  }
  uint64_t u64(const char* what) {
    need(8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[off + static_cast<size_t>(i)]) << (8 * i);
    off += 8;
    return v;
  }
  int64_t i64(const char* what) { return static_cast<int64_t>(u64(what)); }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  std::string text(const char* what) {
    const uint32_t n = u32(what);
    need(n, what);
    std::string s(buf.begin() + static_cast<long>(off), buf.begin() + static_cast<long>(off + n));
    off += n;
    return s;
  }
  void expect_tag(const char* four, const char* what) {
    const size_t at = off;
    need(4, what);
    for (int i = 0; i < 4; ++i)
      if (buf[off + static_cast<size_t>(i)] != static_cast<uint8_t>(four[i]))
        throw ParseError("bad " + std::string(what) + " at offset " + std::to_string(at));
    off += 4;
  }
  template <typename T>
  void scalars(TensorT<T>& t, const char* what) {
    for (auto& v : t.data) {
      if constexpr (sizeof(T) == 4)
        v = std::bit_cast<float>(u32(what));
      else
        v = std::bit_cast<double>(u64(what));
    }
  }
};

inline void write_config(Writer& w, const ModelConfig& c) {
  w.u32(static_cast<uint32_t>(c.stages));
  w.u32(static_cast<uint32_t>(c.base_channels));
  w.u32(static_cast<uint32_t>(c.blocks_per_stage));
  w.u32(static_cast<uint32_t>(c.channel_growth));
  w.u32(static_cast<uint32_t>(c.bank_tokens));
  w.f64(c.bank_momentum);
}

inline ModelConfig read_config(Reader& r) {
  ModelConfig c;
  c.stages = static_cast<int>(r.u32("stages"));
  c.base_channels = static_cast<int>(r.u32("base_channels"));
  c.blocks_per_stage = static_cast<int>(r.u32("blocks_per_stage"));
  c.channel_growth = static_cast<int>(r.u32("channel_growth"));
  c.bank_tokens = static_cast<int>(r.u32("bank_tokens"));
  c.bank_momentum = r.f64("bank_momentum");
  return c;
}

}  // namespace ckptdetail

template <typename T>
void save_checkpoint(const std::string& path, const Model<T>& model, const AdamState<T>& opt,
                     const Rng& rng, int64_t step) {
  using namespace ckptdetail;
  UCM_CHECK_SHAPE(opt.m.size() == model.store.entries.size(),
                  "optimizer tracks " << opt.m.size() << " params, model has "
                                      << model.store.entries.size());
  Writer w;
  w.raw_tag("UCMN");
  w.u32(kVersion);
  w.u8(dtype_code<T>());
  write_config(w, model.cfg);
  w.f64(static_cast<double>(opt.cfg.beta1));
  w.f64(static_cast<double>(opt.cfg.beta2));
  w.f64(static_cast<double>(opt.cfg.eps));
  w.f64(static_cast<double>(opt.cfg.base_lr));
  w.i64(opt.cfg.total_steps);
  w.i64(opt.step);
  w.i64(step);

  w.u32(static_cast<uint32_t>(model.store.entries.size()));
  for (const auto& e : model.store.entries) {
    w.text(e.name);
    w.u8(static_cast<uint8_t>(e.value.rank()));
    for (int d : e.value.shape) w.i64(d);
    w.scalars(e.value);
  }

  // memory banks live outside the parameter store; walk decode stages directly
  w.u32(static_cast<uint32_t>(model.dec.size()));
  for (const auto& d : model.dec) {
    const auto& bank = d.upt.bank;
    w.text(bank.name);
    w.f64(static_cast<double>(bank.momentum));
    w.i64(bank.memory.shape[0]);
    w.i64(bank.memory.shape[1]);
    w.scalars(bank.memory);
  }

  for (size_t i = 0; i < opt.m.size(); ++i) {
    w.u64(opt.m[i].data.size());
    w.scalars(opt.m[i]);
    w.u64(opt.v[i].data.size());
    w.scalars(opt.v[i]);
  }

  w.text(rng.serialize());
  w.raw_tag("NMCU");

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out.write(reinterpret_cast<const char*>(w.buf.data()), static_cast<std::streamsize>(w.buf.size()));
  if (!out) throw IoError("checkpoint write failed: " + path);
}

struct CheckpointHeader {
  uint32_t version = 0;
  uint8_t dtype = 0;  // 1 = f32, 2 = f64
  ModelConfig model;
};

// Reads just enough header to construct a matching model.
inline CheckpointHeader peek_checkpoint_header(const std::string& path) {
  using namespace ckptdetail;
  Reader r(path);
  r.expect_tag("UCMN", "magic");
  CheckpointHeader h;
  h.version = r.u32("version");
  if (h.version != kVersion)
    throw ParseError("unsupported checkpoint version " + std::to_string(h.version) + " at offset 4");
  h.dtype = r.u8("dtype");
  h.model = read_config(r);
  return h;
}

inline ModelConfig peek_checkpoint_config(const std::string& path) {
  return peek_checkpoint_header(path).model;
}

// Fills an already-constructed model (same config) plus optimizer and RNG.
// Returns the stored trainer step.
template <typename T>
int64_t load_checkpoint(const std::string& path, Model<T>& model, AdamState<T>& opt, Rng& rng) {
  using namespace ckptdetail;
  Reader r(path);
  r.expect_tag("UCMN", "magic");
  const uint32_t version = r.u32("version");
  if (version != kVersion)
    throw ParseError("unsupported checkpoint version " + std::to_string(version) + " at offset 4");
  const size_t dtype_at = r.off;
  const uint8_t dtype = r.u8("dtype");
  if (dtype != dtype_code<T>())
    throw ParseError("checkpoint dtype tag " + std::to_string(dtype) + " does not match this build at offset " +
                     std::to_string(dtype_at));

  const ModelConfig stored = read_config(r);
  UCM_CHECK_SHAPE(stored.stages == model.cfg.stages && stored.base_channels == model.cfg.base_channels &&
                      stored.blocks_per_stage == model.cfg.blocks_per_stage &&
                      stored.channel_growth == model.cfg.channel_growth &&
                      stored.bank_tokens == model.cfg.bank_tokens,
                  "checkpoint was written for a different model configuration");

  AdamConfig<T> acfg;
  acfg.beta1 = static_cast<T>(r.f64("beta1"));
  acfg.beta2 = static_cast<T>(r.f64("beta2"));
  acfg.eps = static_cast<T>(r.f64("eps"));
  acfg.base_lr = static_cast<T>(r.f64("base_lr"));
  acfg.total_steps = r.i64("total_steps");
  const int64_t opt_step = r.i64("opt_step");
  const int64_t step = r.i64("trainer_step");

  const uint32_t n_params = r.u32("param_count");
  if (n_params != model.store.entries.size())
    throw ParseError("checkpoint holds " + std::to_string(n_params) + " params, model expects " +
                     std::to_string(model.store.entries.size()));
  for (auto& e : model.store.entries) {
    const size_t name_at = r.off;
    const std::string name = r.text("param_name");
    if (name != e.name)
      throw ParseError("param '" + name + "' at offset " + std::to_string(name_at) + ", expected '" + e.name +
                       "'");
    const int rank = r.u8("param_rank");
    Shape shp(static_cast<size_t>(rank));
    for (auto& d : shp) d = static_cast<int>(r.i64("param_dim"));
    if (shp != e.value.shape)
      throw ParseError("param '" + name + "' shape mismatch at offset " + std::to_string(name_at));
    r.scalars(e.value, "param_data");
  }

  const uint32_t n_banks = r.u32("bank_count");
  if (n_banks != model.dec.size())
    throw ParseError("checkpoint holds " + std::to_string(n_banks) + " banks, model expects " +
                     std::to_string(model.dec.size()));
  for (auto& d : model.dec) {
    auto& bank = d.upt.bank;
    const size_t name_at = r.off;
    const std::string name = r.text("bank_name");
    if (name != bank.name)
      throw ParseError("bank '" + name + "' at offset " + std::to_string(name_at) + ", expected '" + bank.name +
                       "'");
    bank.momentum = static_cast<T>(r.f64("bank_momentum"));
    const int64_t n = r.i64("bank_tokens"), c = r.i64("bank_channels");
    if (n != bank.memory.shape[0] || c != bank.memory.shape[1])
      throw ParseError("bank '" + name + "' shape mismatch at offset " + std::to_string(name_at));
    r.scalars(bank.memory, "bank_data");
  }

  opt = AdamState<T>(model.store, acfg);
  opt.step = opt_step;
  for (size_t i = 0; i < opt.m.size(); ++i) {
    const size_t at = r.off;
    if (r.u64("moment_m_count") != opt.m[i].data.size())
      throw ParseError("first-moment size mismatch at offset " + std::to_string(at));
    r.scalars(opt.m[i], "moment_m");
    const size_t at2 = r.off;
    if (r.u64("moment_v_count") != opt.v[i].data.size())
      throw ParseError("second-moment size mismatch at offset " + std::to_string(at2));
    r.scalars(opt.v[i], "moment_v");
  }

  rng.deserialize(r.text("rng_state"));
  r.expect_tag("NMCU", "trailer");
  if (r.off != r.buf.size())
    throw ParseError("trailing bytes after checkpoint at offset " + std::to_string(r.off));
  return step;
}

}  // namespace ucmnet
