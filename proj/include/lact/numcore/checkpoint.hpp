#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "lact/numcore/param.hpp"

namespace lact::nc {

// Versioned binary parameter container.
//
//   bytes 0..7   magic "LACTCKP\x01"
//   u32          format version (1)
//   u32          record count
//   per record:  u16 name_len | name | u8 dtype | u8 ndim | i32 dims... | raw LE values
//   manifest:    u32 name count | (u16 len | name)... | u64 fnv1a hash of all record bytes
//
// Round-trips are bit-exact; the hash is verified on load.

enum class Dtype : uint8_t { F32 = 0, F64 = 1, I64 = 2 };

struct CkptRecord {
  std::string name;
  Dtype dtype = Dtype::F32;
  Shape shape;
  std::vector<char> bytes;

  int64_t as_i64() const {
    int64_t v = 0;
    std::memcpy(&v, bytes.data(), sizeof(v));
    return v;
  }
};

class Checkpoint {
 public:
  static constexpr char kMagic[8] = {'L', 'A', 'C', 'T', 'C', 'K', 'P', '\x01'};

  void put(CkptRecord rec) {
    index_[rec.name] = records_.size();
    records_.push_back(std::move(rec));
  }

  void put_i64(const std::string& name, int64_t v) {
    CkptRecord r;
    r.name = name;
    r.dtype = Dtype::I64;
    r.shape = {1};
    r.bytes.resize(sizeof(int64_t));
    std::memcpy(r.bytes.data(), &v, sizeof(v));
    put(std::move(r));
  }

  template <class T>
  void put_store(const ParamStore<T>& store, const std::string& prefix = "") {
    for (auto& p : store.all()) {
      CkptRecord r;
      r.name = prefix + p->name;
      r.dtype = sizeof(T) == 4 ? Dtype::F32 : Dtype::F64;
      r.shape = p->value.shape();
      r.bytes.resize(p->numel() * sizeof(T));
      std::memcpy(r.bytes.data(), p->value.data(), r.bytes.size());
      put(std::move(r));
    }
  }

  const CkptRecord* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &records_[it->second];
  }

  const std::vector<CkptRecord>& records() const { return records_; }

  // Loads values by name into an already-constructed store. Every store
  // parameter must be present with a matching shape.
  template <class T>
  void load_store(ParamStore<T>& store, const std::string& prefix = "") const {
    for (auto& p : store.all()) {
      const CkptRecord* r = find(prefix + p->name);
      if (!r) throw std::runtime_error("checkpoint: missing parameter " + prefix + p->name);
      if (r->shape != p->value.shape())
        throw std::runtime_error("checkpoint: shape mismatch for " + p->name + ": file " +
                                 shape_str(r->shape) + " vs model " + shape_str(p->value.shape()));
      if (r->bytes.size() != p->numel() * sizeof(T))
        throw std::runtime_error("checkpoint: dtype mismatch for " + p->name);
      std::memcpy(p->value.data(), r->bytes.data(), r->bytes.size());
    }
  }

  uint64_t content_hash() const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (auto& r : records_) {
      h = fnv1a(r.name, h);
      h = fnv1a(r.bytes.data(), r.bytes.size(), h);
    }
    return h;
  }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("checkpoint: cannot open for write: " + path);
    f.write(kMagic, 8);
    write_u32(f, 1);
    write_u32(f, static_cast<uint32_t>(records_.size()));
    for (auto& r : records_) {
      write_u16(f, static_cast<uint16_t>(r.name.size()));
      f.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
      const uint8_t dt = static_cast<uint8_t>(r.dtype);
      f.write(reinterpret_cast<const char*>(&dt), 1);
      const uint8_t nd = static_cast<uint8_t>(r.shape.size());
      f.write(reinterpret_cast<const char*>(&nd), 1);
      for (int d : r.shape) write_i32(f, d);
      f.write(r.bytes.data(), static_cast<std::streamsize>(r.bytes.size()));
    }
    write_u32(f, static_cast<uint32_t>(records_.size()));
    for (auto& r : records_) {
      write_u16(f, static_cast<uint16_t>(r.name.size()));
      f.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    }
    const uint64_t h = content_hash();
    f.write(reinterpret_cast<const char*>(&h), sizeof(h));
    if (!f) throw std::runtime_error("checkpoint: write failed: " + path);
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open: " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kMagic, 8) != 0)
      throw std::runtime_error("checkpoint: bad magic in " + path);
    const uint32_t version = read_u32(f);
    if (version != 1) throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    const uint32_t count = read_u32(f);
    Checkpoint ck;
    for (uint32_t i = 0; i < count; ++i) {
      CkptRecord r;
      const uint16_t nl = read_u16(f);
      r.name.resize(nl);
      f.read(r.name.data(), nl);
      uint8_t dt = 0, nd = 0;
      f.read(reinterpret_cast<char*>(&dt), 1);
      f.read(reinterpret_cast<char*>(&nd), 1);
      r.dtype = static_cast<Dtype>(dt);
      r.shape.resize(nd);
      for (auto& d : r.shape) d = read_i32(f);
      const size_t elem = r.dtype == Dtype::F32 ? 4 : 8;
      r.bytes.resize(shape_numel(r.shape) * elem);
      f.read(r.bytes.data(), static_cast<std::streamsize>(r.bytes.size()));
      if (!f) throw std::runtime_error("checkpoint: truncated file " + path);
      ck.put(std::move(r));
    }
    const uint32_t mcount = read_u32(f);
    for (uint32_t i = 0; i < mcount; ++i) {
      const uint16_t nl = read_u16(f);
      std::string name(nl, '\0');
      f.read(name.data(), nl);
    }
    uint64_t h = 0;
    f.read(reinterpret_cast<char*>(&h), sizeof(h));
    if (!f || h != ck.content_hash()) throw std::runtime_error("checkpoint: content hash mismatch in " + path);
    return ck;
  }

 private:
  static void write_u16(std::ofstream& f, uint16_t v) { f.write(reinterpret_cast<const char*>(&v), 2); }
  static void write_u32(std::ofstream& f, uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }
  static void write_i32(std::ofstream& f, int32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }
  static uint16_t read_u16(std::ifstream& f) {
    uint16_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 2);
    return v;
  }
  static uint32_t read_u32(std::ifstream& f) {
    uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    return v;
  }
  static int32_t read_i32(std::ifstream& f) {
    int32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    return v;
  }

  std::vector<CkptRecord> records_;
  std::map<std::string, size_t> index_;
};

}  // namespace lact::nc
