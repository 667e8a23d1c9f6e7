#include "tracecal/array_store.hpp"

#include <bit>
#include <cstring>
#include <numeric>

#include "tracecal/error.hpp"

namespace tracecal {

namespace {

constexpr const char* kFormat = "tracecal-array-store";
constexpr int kVersion = 1;

DType dtype_from_name(const std::string& s) {
  if (s == "f32") return DType::kF32;
  if (s == "f64") return DType::kF64;
  if (s == "i32") return DType::kI32;
  throw SchemaError("array store: unknown dtype '" + s + "'");
}

// Byte-swaps a buffer of fixed-width elements in place on big-endian hosts.
void to_little_endian(unsigned char* data, std::size_t count, std::size_t width) {
  if constexpr (std::endian::native == std::endian::little) {
    (void)data;
    (void)count;
    (void)width;
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      unsigned char* p = data + i * width;
      for (std::size_t a = 0, b = width - 1; a < b; ++a, --b) std::swap(p[a], p[b]);
    }
  }
}

}  // namespace

std::string_view dtype_name(DType d) {
  switch (d) {
    case DType::kF32: return "f32";
    case DType::kF64: return "f64";
    case DType::kI32: return "i32";
  }
  return "f32";
}

std::size_t dtype_size(DType d) { return d == DType::kF64 ? 8 : 4; }

std::size_t ArrayInfo::count() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

ArrayStoreWriter::ArrayStoreWriter(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
  blob_.open(dir_ / "data.bin", std::ios::binary | std::ios::trunc);
  if (!blob_) throw IoError("cannot write " + (dir_ / "data.bin").string());
}

ArrayStoreWriter::~ArrayStoreWriter() {
  if (!finished_) {
    try {
      finish();
    } catch (...) {
    }
  }
}

void ArrayStoreWriter::add_raw(const std::string& name, DType dtype,
                               std::vector<std::size_t> shape, const void* data,
                               std::size_t count) {
  if (finished_) throw IoError("array store already finished");
  if (arrays_.contains(name)) throw InvalidInput("array store: duplicate array '" + name + "'");
  ArrayInfo info{dtype, std::move(shape), offset_};
  if (info.count() != count) {
    throw InvalidInput("array store: shape of '" + name + "' does not match element count");
  }
  const std::size_t width = dtype_size(dtype);
  std::vector<unsigned char> bytes(count * width);
  if (count > 0) std::memcpy(bytes.data(), data, bytes.size());
  to_little_endian(bytes.data(), count, width);
  blob_.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
  offset_ += bytes.size();
  const std::uint64_t pad = (8 - offset_ % 8) % 8;
  for (std::uint64_t i = 0; i < pad; ++i) blob_.put('\0');
  offset_ += pad;
  if (!blob_) throw IoError("write failed for " + (dir_ / "data.bin").string());
  arrays_.emplace(name, std::move(info));
}

void ArrayStoreWriter::add(const std::string& name, std::vector<std::size_t> shape,
                           std::span<const float> data) {
  add_raw(name, DType::kF32, std::move(shape), data.data(), data.size());
}
void ArrayStoreWriter::add(const std::string& name, std::vector<std::size_t> shape,
                           std::span<const double> data) {
  add_raw(name, DType::kF64, std::move(shape), data.data(), data.size());
}
void ArrayStoreWriter::add(const std::string& name, std::vector<std::size_t> shape,
                           std::span<const std::int32_t> data) {
  add_raw(name, DType::kI32, std::move(shape), data.data(), data.size());
}

void ArrayStoreWriter::finish() {
  if (finished_) return;
  finished_ = true;
  blob_.close();
  nlohmann::json arrays = nlohmann::json::object();
  for (const auto& [name, info] : arrays_) {
    arrays[name] = {{"dtype", std::string(dtype_name(info.dtype))},
                    {"shape", info.shape},
                    {"offset", info.offset}};
  }
  nlohmann::json index = {{"format", kFormat}, {"version", kVersion},
                          {"byte_order", "little"}, {"blob", "data.bin"},
                          {"arrays", arrays},     {"meta", meta_}};
  std::ofstream out(dir_ / "index.json", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir_ / "index.json").string());
  out << index.dump(1) << '\n';
  if (!out) throw IoError("write failed for " + (dir_ / "index.json").string());
}

ArrayStoreReader::ArrayStoreReader(std::filesystem::path dir) : dir_(std::move(dir)) {
  const auto index_path = dir_ / "index.json";
  std::ifstream in(index_path);
  if (!in) throw IoError("cannot open " + index_path.string());
  nlohmann::json index;
  try {
    index = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(index_path.string() + ": " + e.what());
  }
  try {
    if (index.at("format") != kFormat) throw SchemaError("not a tracecal array store");
    if (index.at("version").get<int>() != kVersion) throw SchemaError("unsupported store version");
    if (index.at("byte_order") != "little") throw SchemaError("unsupported byte order");
    blob_path_ = dir_ / index.at("blob").get<std::string>();
    for (const auto& [name, a] : index.at("arrays").items()) {
      ArrayInfo info;
      info.dtype = dtype_from_name(a.at("dtype").get<std::string>());
      info.shape = a.at("shape").get<std::vector<std::size_t>>();
      info.offset = a.at("offset").get<std::uint64_t>();
      arrays_.emplace(name, std::move(info));
    }
    meta_ = index.value("meta", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(index_path.string() + ": " + e.what());
  }
}

const ArrayInfo& ArrayStoreReader::info(const std::string& name) const {
  auto it = arrays_.find(name);
  if (it == arrays_.end()) throw SchemaError("array store: no array named '" + name + "'");
  return it->second;
}

std::vector<std::string> ArrayStoreReader::names() const {
  std::vector<std::string> out;
  for (const auto& [n, _] : arrays_) out.push_back(n);
  return out;
}

void ArrayStoreReader::read_raw(const std::string& name, DType expected, void* out) const {
  const ArrayInfo& a = info(name);
  if (a.dtype != expected) {
    throw SchemaError("array '" + name + "' has dtype " + std::string(dtype_name(a.dtype)));
  }
  const std::size_t width = dtype_size(a.dtype);
  const std::size_t n = a.count();
  std::ifstream in(blob_path_, std::ios::binary);
  if (!in) throw IoError("cannot open " + blob_path_.string());
  in.seekg(static_cast<std::streamoff>(a.offset));
  std::vector<unsigned char> bytes(n * width);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!in && n > 0) throw IoError("truncated blob while reading '" + name + "'");
  to_little_endian(bytes.data(), n, width);
  if (n > 0) std::memcpy(out, bytes.data(), bytes.size());
}

std::vector<float> ArrayStoreReader::read_f32(const std::string& name) const {
  std::vector<float> v(info(name).count());
  read_raw(name, DType::kF32, v.data());
  return v;
}
std::vector<double> ArrayStoreReader::read_f64(const std::string& name) const {
  std::vector<double> v(info(name).count());
  read_raw(name, DType::kF64, v.data());
  return v;
}
std::vector<std::int32_t> ArrayStoreReader::read_i32(const std::string& name) const {
  std::vector<std::int32_t> v(info(name).count());
  read_raw(name, DType::kI32, v.data());
  return v;
}

}  // namespace tracecal
