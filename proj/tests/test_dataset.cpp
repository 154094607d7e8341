#include <catch_amalgamated.hpp>

#include "parley/dataset.hpp"

#include "support.hpp"

using namespace parley;
using testsupport::fixture_path;

TEST_CASE("clean fixture loads 12 samples with the expected manifest") {
  auto loaded = load_dataset(fixture_path("dataset_clean.jsonl"));
  REQUIRE(loaded.ok());
  CHECK(loaded->samples.size() == 12);
  CHECK(loaded->rejections.empty());
  CHECK(loaded->record_count == 12);

  const DatasetManifest& m = loaded->manifest;
  CHECK(m.total == 12);
  REQUIRE(m.domains.size() == 5);
  CHECK(m.domains.at("Clothing").samples == 2);
  CHECK(m.domains.at("Footwear").samples == 3);
  CHECK(m.domains.at("Jewelry&GA").samples == 2);
  CHECK(m.domains.at("Home").samples == 3);
  CHECK(m.domains.at("Food").samples == 2);

  // attribute lists per domain, hand-enumerated from the fixture
  CHECK(m.domains.at("Clothing").attributes.size() == 2);
  CHECK(m.domains.at("Footwear").attributes.size() == 3);
  CHECK(m.domains.at("Home").attributes.count("Location") == 1);
  CHECK(m.domains.at("Home").attributes.at("Location").values.size() == 2);
  // distinct canonical option values, summed over attributes
  CHECK(m.domains.at("Clothing").value_count() == 5);   // 3 necklines + 2 sleeves
  CHECK(m.domains.at("Footwear").value_count() == 7);   // 2 + 3 + 2
  CHECK(m.domains.at("Home").value_count() == 7);       // 2 + 3 + 2
}

TEST_CASE("empty input file yields an empty result") {
  testsupport::TempDir dir;
  testsupport::write_file(dir / "empty.jsonl", "");
  auto loaded = load_dataset(dir / "empty.jsonl");
  REQUIRE(loaded.ok());
  CHECK(loaded->samples.empty());
  CHECK(loaded->manifest.total == 0);
  CHECK(loaded->record_count == 0);
}

TEST_CASE("fixture with one bad gold yields 11 samples and 1 rejection") {
  auto loaded = load_dataset(fixture_path("dataset_one_bad.jsonl"));
  REQUIRE(loaded.ok());
  CHECK(loaded->samples.size() == 11);
  REQUIRE(loaded->rejections.size() == 1);
  CHECK(loaded->rejections[0].reason == "gold not in options");
  CHECK(loaded->rejections[0].id == "fd-002");
  CHECK(loaded->record_count == 12);
  CHECK(loaded->samples.size() + loaded->rejections.size() == loaded->record_count);
}

TEST_CASE("per-record schema violations are rejected with reasons, never dropped") {
  testsupport::TempDir dir;
  std::filesystem::create_directories(dir / "images");
  testsupport::write_file(dir / "images" / "p.png", testsupport::tiny_png());
  std::string lines =
      R"({"id":"ok-1","domain":"Home","category":"c","title":"t","attribute":"Shape","options":["A","B"],"gold":"A","image":"images/p.png"})"
      "\n"
      "this is not json\n"
      R"({"id":"dup-opt","domain":"Home","attribute":"Shape","options":["A","a "],"gold":"A","image":"images/p.png"})"
      "\n"
      R"({"id":"one-opt","domain":"Home","attribute":"Shape","options":["A"],"gold":"A","image":"images/p.png"})"
      "\n"
      R"({"domain":"Home","attribute":"Shape","options":["A","B"],"gold":"A","image":"images/p.png"})"
      "\n"
      R"({"id":"no-img","domain":"Home","attribute":"Shape","options":["A","B"],"gold":"A","image":"images/nope.png"})"
      "\n";
  testsupport::write_file(dir / "mixed.jsonl", lines);
  auto loaded = load_dataset(dir / "mixed.jsonl");
  REQUIRE(loaded.ok());
  CHECK(loaded->samples.size() == 1);
  REQUIRE(loaded->rejections.size() == 5);
  CHECK(loaded->record_count == 6);
  CHECK(loaded->rejections[0].reason == "invalid JSON");
  CHECK(loaded->rejections[1].reason.find("duplicate option") != std::string::npos);
  CHECK(loaded->rejections[2].reason == "fewer than 2 options");
  CHECK(loaded->rejections[3].reason.find("'id'") != std::string::npos);
  CHECK(loaded->rejections[4].reason.find("undecodable image") != std::string::npos);
}

TEST_CASE("undecodable image bytes reject the record") {
  testsupport::TempDir dir;
  std::filesystem::create_directories(dir / "images");
  testsupport::write_file(dir / "images" / "fake.png", "not image bytes at all");
  testsupport::write_file(
      dir / "d.jsonl",
      R"({"id":"x","domain":"Home","attribute":"Shape","options":["A","B"],"gold":"A","image":"images/fake.png"})"
      "\n");
  auto loaded = load_dataset(dir / "d.jsonl");
  REQUIRE(loaded.ok());
  CHECK(loaded->samples.empty());
  REQUIRE(loaded->rejections.size() == 1);
  CHECK(loaded->rejections[0].reason.find("undecodable image") != std::string::npos);
}

TEST_CASE("missing category and title are permitted and render empty") {
  testsupport::TempDir dir;
  std::filesystem::create_directories(dir / "images");
  testsupport::write_file(dir / "images" / "p.png", testsupport::tiny_png());
  testsupport::write_file(
      dir / "d.jsonl",
      R"({"id":"x","domain":"Home","attribute":"Shape","options":["A","B"],"gold":"A","image":"images/p.png"})"
      "\n");
  auto loaded = load_dataset(dir / "d.jsonl");
  REQUIRE(loaded.ok());
  REQUIRE(loaded->samples.size() == 1);
  CHECK(loaded->samples[0].category.empty());
  CHECK(loaded->samples[0].title.empty());
  CHECK(loaded->samples[0].media_type == "image/png");  // sniffed
}

TEST_CASE("load is idempotent") {
  auto a = load_dataset(fixture_path("dataset_clean.jsonl"));
  auto b = load_dataset(fixture_path("dataset_clean.jsonl"));
  REQUIRE(a.ok());
  REQUIRE(b.ok());
  CHECK(a->samples == b->samples);
  CHECK(a->manifest == b->manifest);
}

TEST_CASE("domain filtering commutes with loading") {
  LoadOptions filter;
  filter.domains = {{"Footwear", "Food"}};
  auto filtered = load_dataset(fixture_path("dataset_clean.jsonl"), filter);
  REQUIRE(filtered.ok());

  auto full = load_dataset(fixture_path("dataset_clean.jsonl"));
  REQUIRE(full.ok());
  std::vector<Sample> post_filtered;
  for (const auto& s : full->samples) {
    if (s.domain == "Footwear" || s.domain == "Food") post_filtered.push_back(s);
  }
  CHECK(filtered->samples == post_filtered);
  CHECK(filtered->manifest.total == 5);
  CHECK(filtered->manifest.domains.size() == 2);
  // manifest arithmetic: total = sum of domain counts
  size_t sum = 0;
  for (const auto& [_, d] : filtered->manifest.domains) sum += d.samples;
  CHECK(filtered->manifest.total == sum);
  // accepted + rejected + filtered covers every input record
  CHECK(filtered->samples.size() + filtered->rejections.size() + filtered->filtered ==
        filtered->record_count);
}

TEST_CASE("limit caps accepted samples but keeps scanning for rejections") {
  LoadOptions opts;
  opts.limit = 3;
  auto loaded = load_dataset(fixture_path("dataset_one_bad.jsonl"), opts);
  REQUIRE(loaded.ok());
  CHECK(loaded->samples.size() == 3);
  CHECK(loaded->rejections.size() == 1);  // the bad record is after the limit
  CHECK(loaded->manifest.total == 3);
}

TEST_CASE("unreadable file is an io error") {
  auto loaded = load_dataset("/definitely/not/here.jsonl");
  REQUIRE_FALSE(loaded.ok());
  CHECK(loaded.error().kind == ErrorKind::io);
}

TEST_CASE("synthetic full-size dataset reproduces the benchmark counts") {
  testsupport::TempDir dir;
  auto path = testsupport::write_synthetic_dataset(
      dir.path(),
      {{"Clothing", 226}, {"Footwear", 317}, {"Jewelry&GA", 220}, {"Home", 457}, {"Food", 390}});
  auto loaded = load_dataset(path);
  REQUIRE(loaded.ok());
  CHECK(loaded->manifest.total == 1610);
  CHECK(loaded->manifest.domains.at("Clothing").samples == 226);
  CHECK(loaded->manifest.domains.at("Footwear").samples == 317);
  CHECK(loaded->manifest.domains.at("Jewelry&GA").samples == 220);
  CHECK(loaded->manifest.domains.at("Home").samples == 457);
  CHECK(loaded->manifest.domains.at("Food").samples == 390);
}
