#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace tracecal {

enum class DType { kF32, kF64, kI32 };

std::string_view dtype_name(DType d);
std::size_t dtype_size(DType d);

struct ArrayInfo {
  DType dtype = DType::kF32;
  std::vector<std::size_t> shape;
  std::uint64_t offset = 0;  // bytes into the blob
  std::size_t count() const;
};

// A directory holding one binary blob of fixed-width little-endian arrays
// and a JSON sidecar describing them:
//
//   <dir>/index.json   {"format": "tracecal-array-store", "version": 1,
//                       "byte_order": "little", "blob": "data.bin",
//                       "arrays": {name: {"dtype": "f32"|"f64"|"i32",
//                                         "shape": [...], "offset": bytes}},
//                       "meta": {...}}
//   <dir>/data.bin     arrays back to back, each 8-byte aligned
class ArrayStoreWriter {
 public:
  explicit ArrayStoreWriter(std::filesystem::path dir);
  ~ArrayStoreWriter();
  ArrayStoreWriter(const ArrayStoreWriter&) = delete;
  ArrayStoreWriter& operator=(const ArrayStoreWriter&) = delete;

  void add(const std::string& name, std::vector<std::size_t> shape, std::span<const float> data);
  void add(const std::string& name, std::vector<std::size_t> shape, std::span<const double> data);
  void add(const std::string& name, std::vector<std::size_t> shape,
           std::span<const std::int32_t> data);
  void set_meta(nlohmann::json meta) { meta_ = std::move(meta); }

  // Writes index.json. Called by the destructor if not called explicitly,
  // but only an explicit call reports errors.
  void finish();

 private:
  void add_raw(const std::string& name, DType dtype, std::vector<std::size_t> shape,
               const void* data, std::size_t count);

  std::filesystem::path dir_;
  std::ofstream blob_;
  std::uint64_t offset_ = 0;
  std::map<std::string, ArrayInfo> arrays_;
  nlohmann::json meta_ = nlohmann::json::object();
  bool finished_ = false;
};

class ArrayStoreReader {
 public:
  explicit ArrayStoreReader(std::filesystem::path dir);

  bool has(const std::string& name) const { return arrays_.contains(name); }
  const ArrayInfo& info(const std::string& name) const;
  const nlohmann::json& meta() const { return meta_; }
  std::vector<std::string> names() const;

  std::vector<float> read_f32(const std::string& name) const;
  std::vector<double> read_f64(const std::string& name) const;
  std::vector<std::int32_t> read_i32(const std::string& name) const;

 private:
  void read_raw(const std::string& name, DType expected, void* out) const;

  std::filesystem::path dir_;
  std::filesystem::path blob_path_;
  std::map<std::string, ArrayInfo> arrays_;
  nlohmann::json meta_;
};

}  // namespace tracecal
