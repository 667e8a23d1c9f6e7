#include "tracecal/hash.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <memory>

#include <openssl/evp.h>

#include "tracecal/error.hpp"

namespace tracecal {

namespace {

std::string to_hex(const unsigned char* data, unsigned int n) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(2 * n, '0');
  for (unsigned int i = 0; i < n; ++i) {
    out[2 * i] = kDigits[data[i] >> 4];
    out[2 * i + 1] = kDigits[data[i] & 0xf];
  }
  return out;
}

void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(),
                                                              &EVP_MD_CTX_free);
  if (!ctx) throw Error("hash_error", "EVP_MD_CTX_new failed");
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest.data(), &len) != 1) {
    throw Error("hash_error", "SHA-256 computation failed");
  }
  return to_hex(digest.data(), len);
}

std::string sha256_hex(std::span<const double> values) {
  std::string buf;
  buf.reserve(values.size() * 8);
  for (double v : values) put_u64_le(buf, std::bit_cast<std::uint64_t>(v));
  return sha256_hex(buf);
}

std::uint64_t stable_hash64(std::string_view bytes) {
  const std::string hex = sha256_hex(bytes);
  return std::stoull(hex.substr(0, 16), nullptr, 16);
}

void append_length_prefixed(std::string& out, std::string_view field) {
  put_u64_le(out, static_cast<std::uint64_t>(field.size()));
  out.append(field);
}

}  // namespace tracecal
