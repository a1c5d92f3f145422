#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>

#include <openssl/evp.h>

#include "aide/errors.hpp"

namespace aide {

namespace detail {

inline std::string to_hex(const unsigned char* data, std::size_t len) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(len * 2, '0');
  for (std::size_t i = 0; i < len; ++i) {
    out[2 * i] = digits[data[i] >> 4];
    out[2 * i + 1] = digits[data[i] & 0xf];
  }
  return out;
}

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1)
      throw Error("sha256 init failed");
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, std::size_t len) {
    if (EVP_DigestUpdate(ctx_, data, len) != 1) throw Error("sha256 update failed");
  }

  std::array<unsigned char, 32> finish() {
    std::array<unsigned char, 32> digest{};
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_, digest.data(), &len) != 1 || len != 32)
      throw Error("sha256 final failed");
    return digest;
  }

 private:
  EVP_MD_CTX* ctx_;
};

}  // namespace detail

inline std::array<unsigned char, 32> sha256(std::string_view data) {
  detail::Sha256 h;
  h.update(data.data(), data.size());
  return h.finish();
}

inline std::string sha256_hex(std::string_view data) {
  auto digest = sha256(data);
  return detail::to_hex(digest.data(), digest.size());
}

// Streams a file through sha256 without loading it whole.
inline std::string sha256_hex_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFile(path.string());
  detail::Sha256 h;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
    h.update(buf, static_cast<std::size_t>(in.gcount()));
  auto digest = h.finish();
  return detail::to_hex(digest.data(), digest.size());
}

// Compact 128-bit digest used for duplicate-id tracking: keeps the id set
// small when streaming multi-million-instance manifests.
struct IdDigest {
  std::uint64_t hi = 0;
  std::uint64_t lo = 0;
  bool operator==(const IdDigest&) const = default;
};

struct IdDigestHash {
  std::size_t operator()(const IdDigest& d) const noexcept {
    return static_cast<std::size_t>(d.hi ^ (d.lo * 0x9e3779b97f4a7c15ULL));
  }
};

inline IdDigest id_digest(std::string_view id) {
  auto digest = sha256(id);
  IdDigest out;
  for (int i = 0; i < 8; ++i) {
    out.hi = (out.hi << 8) | digest[static_cast<std::size_t>(i)];
    out.lo = (out.lo << 8) | digest[static_cast<std::size_t>(i + 8)];
  }
  return out;
}

}  // namespace aide
