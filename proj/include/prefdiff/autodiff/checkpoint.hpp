#pragma once

// Versioned binary checkpoint container.
//
//   "PDCK" | u32 version | u32 n_meta  { u32 len, key, f64 value }*
//          | u32 n_tensors { u32 len, name, u32 rank, u64 dim* }*
//          | f64 payload for each tensor in table order (row-major)
//          | u64 FNV-1a checksum of every preceding byte
//
// All integers and floats are little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "prefdiff/autodiff/tape.hpp"

namespace prefdiff {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  std::map<std::string, double> meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  bool has(const std::string& name) const {
    for (const auto& [n, _] : tensors)
      if (n == name) return true;
    return false;
  }
  const Tensor& tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return t;
    throw CheckpointError("checkpoint has no tensor '" + name + "'");
  }
  void put(const std::string& name, Tensor t) {
    for (auto& [n, existing] : tensors) {
      if (n == name) {
        existing = std::move(t);
        return;
      }
    }
    tensors.emplace_back(name, std::move(t));
  }
  double meta_value(const std::string& key) const {
    auto it = meta.find(key);
    if (it == meta.end()) throw CheckpointError("checkpoint has no meta key '" + key + "'");
    return it->second;
  }
};

inline std::uint64_t fnv1a(const unsigned char* bytes, std::size_t n, std::uint64_t h = 1469598103934665603ull) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 1099511628211ull;
  }
  return h;
}

namespace detail {

class ByteWriter {
 public:
  template <class T>
  void pod(T v) {
    const auto* p = reinterpret_cast<const unsigned char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  std::vector<unsigned char>& bytes() { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<unsigned char>& b, std::size_t end) : buf_(b), end_(end) {}
  template <class T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw CheckpointError("checkpoint truncated or corrupt");
  }
  const std::vector<unsigned char>& buf_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<unsigned char> encode_checkpoint(const Checkpoint& ck) {
  detail::ByteWriter w;
  w.bytes().insert(w.bytes().end(), {'P', 'D', 'C', 'K'});
  w.pod(kCheckpointVersion);
  w.pod(static_cast<std::uint32_t>(ck.meta.size()));
  for (const auto& [k, v] : ck.meta) {
    w.str(k);
    w.pod(v);
  }
  w.pod(static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& [name, t] : ck.tensors) {
    w.str(name);
    w.pod(static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t d : t.shape) w.pod(static_cast<std::uint64_t>(d));
  }
  for (const auto& [_, t] : ck.tensors)
    for (double v : t.data) w.pod(v);
  const std::uint64_t sum = fnv1a(w.bytes().data(), w.bytes().size());
  w.pod(sum);
  return std::move(w.bytes());
}

inline Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 4 + 4 + 8 || std::memcmp(bytes.data(), "PDCK", 4) != 0) {
    throw CheckpointError("not a checkpoint file (bad magic)");
  }
  const std::size_t body = bytes.size() - sizeof(std::uint64_t);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, sizeof stored);
  detail::ByteReader r(bytes, body);
  r.pod<std::uint32_t>();  // magic
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint format version " + std::to_string(version) + " unsupported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  if (fnv1a(bytes.data(), body) != stored) throw CheckpointError("checkpoint checksum mismatch (corrupt file)");

  Checkpoint ck;
  const auto n_meta = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = r.str();
    ck.meta[k] = r.pod<double>();
  }
  const auto n_tensors = r.pod<std::uint32_t>();
  std::vector<std::pair<std::string, std::vector<std::size_t>>> table;
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    std::string name = r.str();
    const auto rank = r.pod<std::uint32_t>();
    std::vector<std::size_t> shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<std::size_t>(r.pod<std::uint64_t>()));
    table.emplace_back(std::move(name), std::move(shape));
  }
  for (auto& [name, shape] : table) {
    std::vector<double> data(Tensor::element_count(shape));
    for (double& v : data) v = r.pod<double>();
    ck.tensors.emplace_back(name, Tensor(shape, std::move(data)));
  }
  if (r.pos() != body) throw CheckpointError("checkpoint has trailing bytes before checksum");
  return ck;
}

inline void write_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ck);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open '" + tmp + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("write failed for '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

/// Stores parameter values under "param/<name>"; with `with_optimizer`, Adam
/// moments go to "adam.m/<name>" and "adam.v/<name>" and the step count to
/// meta "adam.step".
inline void store_params(Checkpoint& ck, const ParamSet& params, bool with_optimizer, const std::string& prefix = "") {
  for (const auto& [name, p] : params.entries()) {
    ck.put(prefix + "param/" + name, p.value);
    if (with_optimizer) {
      ck.put(prefix + "adam.m/" + name, p.first_moment);
      ck.put(prefix + "adam.v/" + name, p.second_moment);
    }
  }
  if (with_optimizer) ck.meta[prefix + "adam.step"] = static_cast<double>(params.step());
}

/// Rebuilds a ParamSet from every "param/" entry under `prefix`.
inline ParamSet restore_params(const Checkpoint& ck, const std::string& prefix = "") {
  ParamSet params;
  const std::string tag = prefix + "param/";
  for (const auto& [name, t] : ck.tensors) {
    if (name.rfind(tag, 0) == 0) params.add(name.substr(tag.size()), t);
  }
  if (params.size() == 0) throw CheckpointError("checkpoint holds no parameters under '" + prefix + "'");
  for (const auto& [name, _] : params.entries()) {
    if (ck.has(prefix + "adam.m/" + name)) {
      Parameter& p = params.mutable_entry(name);
      p.first_moment = ck.tensor(prefix + "adam.m/" + name);
      p.second_moment = ck.tensor(prefix + "adam.v/" + name);
    }
  }
  auto it = ck.meta.find(prefix + "adam.step");
  if (it != ck.meta.end()) params.set_step(static_cast<std::int64_t>(it->second));
  return params;
}

/// Loads values into an existing ParamSet, validating the name/shape table.
inline void load_params_into(ParamSet& params, const Checkpoint& ck, const std::string& prefix = "") {
  for (const auto& [name, p] : params.entries()) {
    const std::string key = prefix + "param/" + name;
    if (!ck.has(key)) throw CheckpointError("checkpoint is missing parameter '" + name + "'");
    if (ck.tensor(key).shape != p.value.shape) {
      throw CheckpointError("checkpoint parameter '" + name + "' has shape " + ck.tensor(key).shape_string() +
                            ", expected " + p.value.shape_string());
    }
  }
  ParamSet loaded = restore_params(ck, prefix);
  if (loaded.size() != params.size()) throw CheckpointError("checkpoint parameter table size differs");
  params = std::move(loaded);
}

/// Content hash of parameter values (names, shapes, raw bytes).
inline std::uint64_t hash_params(const ParamSet& params) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& [name, p] : params.entries()) {
    h = fnv1a(reinterpret_cast<const unsigned char*>(name.data()), name.size(), h);
    for (std::size_t d : p.value.shape) {
      const auto d64 = static_cast<std::uint64_t>(d);
      h = fnv1a(reinterpret_cast<const unsigned char*>(&d64), sizeof d64, h);
    }
    h = fnv1a(reinterpret_cast<const unsigned char*>(p.value.data.data()), p.value.size() * sizeof(double), h);
  }
  return h;
}

}  // namespace prefdiff
