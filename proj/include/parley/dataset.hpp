#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "parley/error.hpp"
#include "parley/image.hpp"
#include "parley/text.hpp"

namespace parley {

// One evaluation item: a product image + text, an attribute question, a fixed
// option list, and the gold value.
struct Sample {
  std::string id;
  std::string domain;
  std::string category;
  std::string title;
  std::string attribute;
  std::vector<std::string> options;  // dataset order is preserved everywhere
  std::string gold;
  std::string image;       // local path (relative to the dataset file) or URL
  std::string media_type;  // optional; sniffed when empty

  bool operator==(const Sample&) const = default;
};

struct AttributeStats {
  size_t samples = 0;
  std::set<std::string> values;  // distinct canonical option values
};

struct DomainStats {
  size_t samples = 0;
  std::map<std::string, AttributeStats> attributes;

  size_t value_count() const {
    size_t n = 0;
    for (const auto& [_, a] : attributes) n += a.values.size();
    return n;
  }
};

struct DatasetManifest {
  size_t total = 0;
  std::map<std::string, DomainStats> domains;
  std::string source_digest;  // sha256 of the dataset file bytes

  bool operator==(const DatasetManifest& other) const {
    if (total != other.total || source_digest != other.source_digest) return false;
    if (domains.size() != other.domains.size()) return false;
    for (const auto& [name, stats] : domains) {
      auto it = other.domains.find(name);
      if (it == other.domains.end() || it->second.samples != stats.samples) return false;
      if (it->second.attributes.size() != stats.attributes.size()) return false;
      for (const auto& [attr, a] : stats.attributes) {
        auto jt = it->second.attributes.find(attr);
        if (jt == it->second.attributes.end() || jt->second.samples != a.samples ||
            jt->second.values != a.values)
          return false;
      }
    }
    return true;
  }
};

struct Rejection {
  size_t line = 0;  // 1-based line number in the input file
  std::string id;   // record id when parseable
  std::string reason;
};

struct LoadResult {
  std::vector<Sample> samples;
  DatasetManifest manifest;
  std::vector<Rejection> rejections;
  size_t record_count = 0;  // accepted + rejected + filtered
  size_t filtered = 0;      // valid records excluded by domain filter or limit
};

struct LoadOptions {
  std::optional<size_t> limit;                       // keep at most N accepted samples
  std::optional<std::set<std::string>> domains;      // keep only these domains
  bool validate_images = true;                       // sniff every referenced image
  ImageFetchOptions image;                           // size limit, timeouts
  std::filesystem::path image_cache_dir;             // optional disk cache for URL fetches
};

namespace detail {

inline std::optional<std::string> get_string(const nlohmann::json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string()) return std::nullopt;
  return it->get<std::string>();
}

// Schema + invariant checks for one record. Returns the failure reason, or
// nullopt and fills `out`.
inline std::optional<std::string> parse_record(const nlohmann::json& j, Sample& out) {
  if (!j.is_object()) return "record is not an object";
  for (const char* key : {"id", "domain", "attribute", "gold", "image"}) {
    if (!get_string(j, key)) return std::string("missing or non-string field '") + key + "'";
  }
  out.id = *get_string(j, "id");
  out.domain = *get_string(j, "domain");
  out.category = get_string(j, "category").value_or("");
  out.title = get_string(j, "title").value_or("");
  out.attribute = *get_string(j, "attribute");
  out.gold = *get_string(j, "gold");
  out.image = *get_string(j, "image");
  out.media_type = get_string(j, "media_type").value_or("");

  auto opts_it = j.find("options");
  if (opts_it == j.end() || !opts_it->is_array()) return "missing or non-array field 'options'";
  out.options.clear();
  for (const auto& o : *opts_it) {
    if (!o.is_string()) return "options must be strings";
    out.options.push_back(o.get<std::string>());
  }
  if (out.options.size() < 2) return "fewer than 2 options";

  std::set<std::string> canon;
  for (const auto& o : out.options) {
    if (!canon.insert(canonicalize(o)).second) return "duplicate option after canonicalization: '" + o + "'";
  }
  if (out.id.empty()) return "empty id";
  if (out.domain.empty()) return "empty domain";
  if (out.attribute.empty()) return "empty attribute";
  if (canon.find(canonicalize(out.gold)) == canon.end()) return "gold not in options";
  return std::nullopt;
}

}  // namespace detail

inline void manifest_add(DatasetManifest& m, const Sample& s) {
  ++m.total;
  auto& dom = m.domains[s.domain];
  ++dom.samples;
  auto& attr = dom.attributes[s.attribute];
  ++attr.samples;
  for (const auto& o : s.options) attr.values.insert(canonicalize(o));
}

inline DatasetManifest build_manifest(const std::vector<Sample>& samples, std::string digest = {}) {
  DatasetManifest m;
  m.source_digest = std::move(digest);
  for (const auto& s : samples) manifest_add(m, s);
  return m;
}

// Loads line-delimited records (one JSON object per line; blank lines are
// ignored). Invalid records never abort the load and are never silently
// dropped: each lands in `rejections` with its line number and reason.
inline Result<LoadResult> load_dataset(const std::filesystem::path& path, const LoadOptions& opts = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return make_error(ErrorKind::io, "cannot open dataset file: " + path.string());
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) return make_error(ErrorKind::io, "read failure on dataset file: " + path.string());

  LoadResult result;
  result.manifest.source_digest = sha256_hex(content);

  ImageStore images(path.parent_path(), opts.image_cache_dir, opts.image);
  size_t line_no = 0;
  size_t pos = 0;
  while (pos <= content.size()) {
    size_t nl = content.find('\n', pos);
    std::string_view line(content.data() + pos, (nl == std::string::npos ? content.size() : nl) - pos);
    pos = nl == std::string::npos ? content.size() + 1 : nl + 1;
    ++line_no;
    if (trim_view(line).empty()) continue;

    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      result.rejections.push_back({line_no, "", "invalid JSON"});
      ++result.record_count;
      continue;
    }
    Sample sample;
    if (auto reason = detail::parse_record(j, sample)) {
      result.rejections.push_back({line_no, detail::get_string(j, "id").value_or(""), *reason});
      ++result.record_count;
      continue;
    }
    ++result.record_count;
    if ((opts.domains && !opts.domains->count(sample.domain)) ||
        (opts.limit && result.samples.size() >= *opts.limit)) {
      ++result.filtered;
      continue;
    }
    if (opts.validate_images) {
      auto payload = images.get(sample.image);
      if (!payload.ok()) {
        result.rejections.push_back({line_no, sample.id, "undecodable image: " + payload.error().message});
        continue;
      }
      if (sample.media_type.empty()) sample.media_type = (*payload)->media_type;
    }
    manifest_add(result.manifest, sample);
    result.samples.push_back(std::move(sample));
  }
  return result;
}

}  // namespace parley
