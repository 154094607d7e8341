#include <catch_amalgamated.hpp>

#include "parley/base64.hpp"
#include "parley/digest.hpp"
#include "parley/image.hpp"
#include "parley/rng.hpp"
#include "parley/text.hpp"

#include "support.hpp"

using namespace parley;

TEST_CASE("canonicalize trims and case-folds") {
  CHECK(canonicalize("  Ankle Boot  ") == "ankle boot");
  CHECK(canonicalize("BEDROOM") == "bedroom");
  CHECK(canonicalize("Café") == "café");
  CHECK(canonicalize("CAFÉ") == "café");  // Latin-1 É folds
  CHECK(canonicalize("") == "");
  CHECK(canonicalize("\t Round\r\n") == "round");
}

TEST_CASE("fold_case preserves byte length") {
  for (std::string s : {"Ankle Boot", "CAFÉ", "ÀÈÌÒÙ mixed", "×÷", "plain"}) {
    CHECK(fold_case(s).size() == s.size());
  }
}

TEST_CASE("split_lines handles CRLF and trailing newline") {
  auto lines = split_lines("a\r\nb\nc");
  REQUIRE(lines.size() == 3);
  CHECK(lines[0] == "a");
  CHECK(lines[1] == "b");
  CHECK(lines[2] == "c");
}

TEST_CASE("count_words") {
  CHECK(count_words("") == 0);
  CHECK(count_words("one") == 1);
  CHECK(count_words("  two  words \n") == 2);
}

TEST_CASE("sha256 matches FIPS test vectors") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq") ==
        "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
  // long-input path
  std::string million(1000000, 'a');
  CHECK(sha256_hex(million) == "cdc76e5c9914fb9281a1c7e284d73e67f1809a48a497200e046d39ccc7112cd0");
}

TEST_CASE("base64 round trip") {
  CHECK(base64_encode("") == "");
  CHECK(base64_encode("f") == "Zg==");
  CHECK(base64_encode("fo") == "Zm8=");
  CHECK(base64_encode("foo") == "Zm9v");
  CHECK(base64_encode("foobar") == "Zm9vYmFy");
  std::mt19937_64 gen(7);
  for (int i = 0; i < 50; ++i) {
    std::string data;
    size_t len = gen() % 200;
    for (size_t k = 0; k < len; ++k) data += static_cast<char>(gen() & 0xFF);
    CHECK(base64_decode(base64_encode(data)) == data);
  }
}

TEST_CASE("seed derivation is stable and sensitive to every component") {
  uint64_t base = derive_cell_seed(1, "s1", 0, 1);
  CHECK(base == derive_cell_seed(1, "s1", 0, 1));
  CHECK(base != derive_cell_seed(2, "s1", 0, 1));
  CHECK(base != derive_cell_seed(1, "s2", 0, 1));
  CHECK(base != derive_cell_seed(1, "s1", 1, 1));
  CHECK(base != derive_cell_seed(1, "s1", 0, 2));
}

TEST_CASE("DetRng draws are deterministic") {
  DetRng a(42), b(42);
  for (int i = 0; i < 100; ++i) {
    double x = a.next_double();
    CHECK(x == b.next_double());
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
  }
  DetRng c(42);
  CHECK(c.next_below(10) == DetRng(42).next_below(10));
}

TEST_CASE("image sniffing recognizes fixture formats") {
  auto png = sniff_image(testsupport::read_file(testsupport::fixture_path("images/tee.png")));
  REQUIRE(png.ok());
  CHECK(png->media_type == "image/png");
  CHECK(png->width == 2);
  CHECK(png->height == 2);

  auto jpg = sniff_image(testsupport::read_file(testsupport::fixture_path("images/pendant.jpg")));
  REQUIRE(jpg.ok());
  CHECK(jpg->media_type == "image/jpeg");
  CHECK(jpg->width == 4);
  CHECK(jpg->height == 4);

  auto bad = sniff_image("definitely not an image");
  CHECK_FALSE(bad.ok());
}

TEST_CASE("encode_image round-trips bytes and enforces the size limit") {
  auto payload = encode_image(testsupport::fixture_path("images/tee.png").string());
  REQUIRE(payload.ok());
  CHECK(base64_decode(payload->base64) == payload->bytes);
  CHECK(payload->media_type == "image/png");
  CHECK(payload->digest == sha256_hex(payload->bytes));

  ImageFetchOptions tight;
  tight.max_bytes = 10;
  auto oversize = encode_image(testsupport::fixture_path("images/tee.png").string(), {}, tight);
  REQUIRE_FALSE(oversize.ok());
  CHECK(oversize.error().kind == ErrorKind::argument);
}

TEST_CASE("encode_image of three distinct fixtures yields three distinct digests") {
  // Expected digests computed independently (python hashlib over the files).
  auto a = encode_image(testsupport::fixture_path("images/tee.png").string());
  auto b = encode_image(testsupport::fixture_path("images/blouse.png").string());
  auto c = encode_image(testsupport::fixture_path("images/boot.png").string());
  REQUIRE(a.ok());
  REQUIRE(b.ok());
  REQUIRE(c.ok());
  CHECK(a->digest == "62a58589fb74ddca750bdebc0609009ba2ca2d219cb92eec4d88f2714fdf407e");
  CHECK(b->digest == "0f024f8939ebdd642991de75ee977a704000dae7e0d841d873620013d437c477");
  CHECK(c->digest == "3d7d5150a4be002df273f3ca15c62af75d2ef86004083722423f73e2894bcfde");
  CHECK(a->digest != b->digest);
  CHECK(b->digest != c->digest);
}

TEST_CASE("encode_image URL fetch and 404 error path") {
  testsupport::StubChatServer server;
  auto ok = encode_image(server.image_url("ok.png"));
  REQUIRE(ok.ok());
  CHECK(ok->media_type == "image/png");
  CHECK(ok->bytes == testsupport::tiny_png());

  auto missing = encode_image(server.image_url("missing.png"));
  REQUIRE_FALSE(missing.ok());
  CHECK(missing.error().kind == ErrorKind::network);
}

TEST_CASE("ImageStore caches by location and serializes writers") {
  testsupport::TempDir dir;
  testsupport::write_file(dir / "img.png", testsupport::tiny_png());
  ImageStore store(dir.path(), dir / "cache");
  auto first = store.get("img.png");
  REQUIRE(first.ok());
  auto second = store.get("img.png");
  REQUIRE(second.ok());
  CHECK(first->get() == second->get());  // same cached object
  CHECK(std::filesystem::exists(dir / "cache" / ((*first)->digest + ".bin")));
}
