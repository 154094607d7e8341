#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>

#include <httplib.h>

#include "parley/base64.hpp"
#include "parley/digest.hpp"
#include "parley/error.hpp"
#include "parley/text.hpp"

namespace parley {

// Inline image payload ready to attach to a model message. Encoding is
// deterministic: identical input bytes produce identical payloads.
struct ImagePayload {
  std::string bytes;
  std::string media_type;
  std::string base64;
  std::string digest;  // sha256 hex of bytes
  int width = 0;
  int height = 0;

  std::string data_url() const { return "data:" + media_type + ";base64," + base64; }
};

struct SniffResult {
  std::string media_type;
  int width = 0;
  int height = 0;
};

namespace detail {

inline uint32_t be32(const unsigned char* p) {
  return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}
inline uint16_t be16(const unsigned char* p) { return static_cast<uint16_t>((p[0] << 8) | p[1]); }
inline uint32_t le32(const unsigned char* p) {
  return uint32_t(p[0]) | (uint32_t(p[1]) << 8) | (uint32_t(p[2]) << 16) | (uint32_t(p[3]) << 24);
}
inline uint16_t le16(const unsigned char* p) { return static_cast<uint16_t>(p[0] | (p[1] << 8)); }

}  // namespace detail

// Container-level decode check: recognizes the format from magic bytes and
// extracts pixel dimensions from the header. Anything unrecognized (or with a
// mangled header) is rejected as undecodable.
inline Result<SniffResult> sniff_image(std::string_view bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const size_t n = bytes.size();

  if (n >= 24 && p[0] == 0x89 && p[1] == 'P' && p[2] == 'N' && p[3] == 'G' &&
      p[4] == 0x0D && p[5] == 0x0A && p[6] == 0x1A && p[7] == 0x0A) {
    if (std::string_view(bytes.data() + 12, 4) != "IHDR")
      return make_error(ErrorKind::unsupported, "PNG without IHDR chunk");
    return SniffResult{"image/png", static_cast<int>(detail::be32(p + 16)),
                       static_cast<int>(detail::be32(p + 20))};
  }

  if (n >= 4 && p[0] == 0xFF && p[1] == 0xD8 && p[2] == 0xFF) {
    // Walk JPEG segments looking for a start-of-frame marker.
    size_t i = 2;
    while (i + 9 < n) {
      if (p[i] != 0xFF) return make_error(ErrorKind::unsupported, "malformed JPEG segment stream");
      uint8_t marker = p[i + 1];
      if (marker == 0xD8 || (marker >= 0xD0 && marker <= 0xD7) || marker == 0x01) {
        i += 2;
        continue;
      }
      uint16_t len = detail::be16(p + i + 2);
      if (len < 2 || i + 2 + len > n) return make_error(ErrorKind::unsupported, "truncated JPEG");
      bool is_sof = (marker >= 0xC0 && marker <= 0xCF) && marker != 0xC4 && marker != 0xC8 && marker != 0xCC;
      if (is_sof) {
        int h = detail::be16(p + i + 5);
        int w = detail::be16(p + i + 7);
        return SniffResult{"image/jpeg", w, h};
      }
      i += 2 + len;
    }
    return make_error(ErrorKind::unsupported, "JPEG without frame header");
  }

  if (n >= 10 && (starts_with(bytes, "GIF87a") || starts_with(bytes, "GIF89a"))) {
    return SniffResult{"image/gif", detail::le16(p + 6), detail::le16(p + 8)};
  }

  if (n >= 26 && p[0] == 'B' && p[1] == 'M') {
    return SniffResult{"image/bmp", static_cast<int>(detail::le32(p + 18)),
                       static_cast<int>(detail::le32(p + 22))};
  }

  if (n >= 16 && starts_with(bytes, "RIFF") && std::string_view(bytes.data() + 8, 4) == "WEBP") {
    return SniffResult{"image/webp", 0, 0};
  }

  return make_error(ErrorKind::unsupported, "unrecognized image format");
}

struct ImageFetchOptions {
  size_t max_bytes = 20ull * 1024 * 1024;  // reject anything larger
  int http_timeout_s = 30;
};

namespace detail {

inline Result<std::string> read_file_bytes(const std::filesystem::path& path, size_t max_bytes) {
  std::error_code ec;
  if (!std::filesystem::exists(path, ec) || ec)
    return make_error(ErrorKind::io, "image file not found: " + path.string());
  auto size = std::filesystem::file_size(path, ec);
  if (ec) return make_error(ErrorKind::io, "cannot stat image file: " + path.string());
  if (size > max_bytes)
    return make_error(ErrorKind::argument,
                      "image exceeds size limit (" + std::to_string(size) + " > " + std::to_string(max_bytes) + ")");
  std::ifstream in(path, std::ios::binary);
  if (!in) return make_error(ErrorKind::io, "cannot open image file: " + path.string());
  std::string bytes(static_cast<size_t>(size), '\0');
  in.read(bytes.data(), static_cast<std::streamsize>(size));
  if (!in) return make_error(ErrorKind::io, "short read on image file: " + path.string());
  return bytes;
}

inline Result<std::string> fetch_url_bytes(const std::string& url, const ImageFetchOptions& opts) {
  size_t scheme_end = url.find("://");
  if (scheme_end == std::string::npos) return make_error(ErrorKind::argument, "malformed URL: " + url);
  size_t path_start = url.find('/', scheme_end + 3);
  std::string base = path_start == std::string::npos ? url : url.substr(0, path_start);
  std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);

  httplib::Client client(base);
  client.set_connection_timeout(opts.http_timeout_s, 0);
  client.set_read_timeout(opts.http_timeout_s, 0);
  client.set_follow_location(true);
  auto res = client.Get(path);
  if (!res) return make_error(ErrorKind::network, "fetch failed for " + url + ": " + httplib::to_string(res.error()));
  if (res->status != 200)
    return make_error(ErrorKind::network, "fetch failed for " + url + ": HTTP " + std::to_string(res->status));
  if (res->body.size() > opts.max_bytes)
    return make_error(ErrorKind::argument, "fetched image exceeds size limit: " + url);
  return res->body;
}

}  // namespace detail

inline bool is_url(std::string_view location) {
  return starts_with(location, "http://") || starts_with(location, "https://");
}

// Fetch + sniff + encode. `base_dir` anchors relative local paths.
inline Result<ImagePayload> encode_image(const std::string& location,
                                         const std::filesystem::path& base_dir = {},
                                         const ImageFetchOptions& opts = {}) {
  Result<std::string> bytes = is_url(location)
                                  ? detail::fetch_url_bytes(location, opts)
                                  : detail::read_file_bytes(
                                        std::filesystem::path(location).is_absolute() || base_dir.empty()
                                            ? std::filesystem::path(location)
                                            : base_dir / location,
                                        opts.max_bytes);
  if (!bytes.ok()) return bytes.error();

  auto sniffed = sniff_image(*bytes);
  if (!sniffed.ok()) return sniffed.error();

  ImagePayload payload;
  payload.bytes = std::move(*bytes);
  payload.media_type = sniffed->media_type;
  payload.width = sniffed->width;
  payload.height = sniffed->height;
  payload.base64 = base64_encode(payload.bytes);
  payload.digest = sha256_hex(payload.bytes);
  return payload;
}

// Process-wide image resolution with an optional on-disk cache keyed by
// content digest. Reads are lock-free once populated; writes serialize per
// key so repeated debates can share one fetch.
class ImageStore {
 public:
  explicit ImageStore(std::filesystem::path base_dir = {}, std::filesystem::path cache_dir = {},
                      ImageFetchOptions opts = {})
      : base_dir_(std::move(base_dir)), cache_dir_(std::move(cache_dir)), opts_(opts) {}

  Result<std::shared_ptr<const ImagePayload>> get(const std::string& location) {
    {
      std::lock_guard lock(mu_);
      auto it = memory_.find(location);
      if (it != memory_.end()) return it->second;
    }
    std::mutex& key_mu = key_mutex(location);
    std::lock_guard key_lock(key_mu);
    {
      std::lock_guard lock(mu_);
      auto it = memory_.find(location);
      if (it != memory_.end()) return it->second;
    }
    auto encoded = encode_image(location, base_dir_, opts_);
    if (!encoded.ok()) return encoded.error();
    auto payload = std::make_shared<const ImagePayload>(std::move(*encoded));
    persist_to_disk(*payload);
    std::lock_guard lock(mu_);
    memory_[location] = payload;
    return payload;
  }

  const std::filesystem::path& base_dir() const { return base_dir_; }

 private:
  std::mutex& key_mutex(const std::string& key) {
    std::lock_guard lock(mu_);
    return key_mutexes_[key];
  }

  void persist_to_disk(const ImagePayload& payload) {
    if (cache_dir_.empty()) return;
    std::error_code ec;
    std::filesystem::create_directories(cache_dir_, ec);
    auto target = cache_dir_ / (payload.digest + ".bin");
    if (std::filesystem::exists(target, ec)) return;
    auto tmp = cache_dir_ / (payload.digest + ".tmp");
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(payload.bytes.data(), static_cast<std::streamsize>(payload.bytes.size()));
    out.close();
    std::filesystem::rename(tmp, target, ec);
  }

  std::filesystem::path base_dir_;
  std::filesystem::path cache_dir_;
  ImageFetchOptions opts_;
  std::mutex mu_;
  std::map<std::string, std::shared_ptr<const ImagePayload>> memory_;
  std::map<std::string, std::mutex> key_mutexes_;
};

}  // namespace parley
