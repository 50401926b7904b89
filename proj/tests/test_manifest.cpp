#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include "psdn/errors.hpp"
#include "psdn/manifest.hpp"
#include "psdn/synthgen.hpp"
#include "psdn/tensor_io.hpp"
#include "test_util.hpp"

using namespace psdn;

namespace {

// Writes a minimal pair of tensor files and returns a manifest line.
std::string make_entry(const std::filesystem::path& root, const std::string& id,
                       const std::string& speaker, int accent,
                       const std::string& split) {
  std::filesystem::create_directories(root / "mel");
  std::filesystem::create_directories(root / "bnf");
  write_tensor(root / "mel" / (id + ".psdn"), MatF::Zero(4, 80));
  write_tensor(root / "bnf" / (id + ".psdn"), MatF::Zero(4, 16));
  return R"({"id":")" + id + R"(","speaker_id":")" + speaker +
         R"(","accent_label":)" + std::to_string(accent) +
         R"(,"mel_path":"mel/)" + id + R"(.psdn","bnf_path":"bnf/)" + id +
         R"(.psdn","split":")" + split + R"("})";
}

void write_manifest(const std::filesystem::path& path,
                    const std::vector<std::string>& lines) {
  std::ofstream out(path);
  for (const auto& l : lines) out << l << "\n";
}

}  // namespace

TEST_CASE("a two-line manifest with both accent groups loads") {
  testutil::TempDir tmp("man");
  write_manifest(tmp / "manifest.jsonl",
                 {make_entry(tmp.path(), "u0", "spk0", 0, "train"),
                  make_entry(tmp.path(), "u1", "spk1", 2, "train")});
  const DatasetManifest m = load_manifest(tmp / "manifest.jsonl");
  REQUIRE(m.entries.size() == 2);
  CHECK(m.entries[0].accent_label == 0);
  CHECK(m.entries[1].accent_label == 2);
  CHECK(m.generator_config_digest.empty());
}

TEST_CASE("violations are reported with line numbers") {
  testutil::TempDir tmp("man");
  const std::string a = make_entry(tmp.path(), "u0", "s", 0, "train");
  const std::string b = make_entry(tmp.path(), "u1", "s", 1, "train");

  SUBCASE("duplicate id") {
    write_manifest(tmp / "m.jsonl", {a, b, a});
    CHECK_THROWS_WITH_AS(load_manifest(tmp / "m.jsonl"),
                         doctest::Contains("line 3"), DataError);
  }
  SUBCASE("missing file") {
    std::string broken = b;
    const auto pos = broken.find("bnf/u1");
    broken.replace(pos, 6, "bnf/ux");
    write_manifest(tmp / "m.jsonl", {a, broken});
    CHECK_THROWS_WITH_AS(load_manifest(tmp / "m.jsonl"),
                         doctest::Contains("missing file"), DataError);
  }
  SUBCASE("unknown accent label") {
    write_manifest(tmp / "m.jsonl",
                   {a, make_entry(tmp.path(), "u2", "s", -1, "train")});
    CHECK_THROWS_WITH_AS(load_manifest(tmp / "m.jsonl"),
                         doctest::Contains("unknown accent label"), DataError);
  }
  SUBCASE("unknown field") {
    write_manifest(tmp / "m.jsonl",
                   {a, R"({"id":"x","speaker_id":"s","accent_label":1,)"
                       R"("mel_path":"mel/u1.psdn","bnf_path":"bnf/u1.psdn",)"
                       R"("split":"train","extra":1})"});
    CHECK_THROWS_WITH_AS(load_manifest(tmp / "m.jsonl"),
                         doctest::Contains("unknown field"), DataError);
  }
  SUBCASE("missing field") {
    write_manifest(tmp / "m.jsonl",
                   {a, R"({"id":"x","speaker_id":"s","accent_label":1})"});
    CHECK_THROWS_WITH_AS(load_manifest(tmp / "m.jsonl"),
                         doctest::Contains("missing field"), DataError);
  }
  SUBCASE("invalid json names the line") {
    write_manifest(tmp / "m.jsonl", {a, "{not json"});
    CHECK_THROWS_WITH_AS(load_manifest(tmp / "m.jsonl"),
                         doctest::Contains("line 2"), DataError);
  }
}

TEST_CASE("train split must contain both accent groups") {
  testutil::TempDir tmp("man");
  SUBCASE("no target-accent training data") {
    write_manifest(tmp / "m.jsonl",
                   {make_entry(tmp.path(), "u0", "s", 1, "train"),
                    make_entry(tmp.path(), "u1", "s", 2, "train")});
    CHECK_THROWS_WITH_AS(load_manifest(tmp / "m.jsonl"),
                         doctest::Contains("no target-accent training data"),
                         DataError);
  }
  SUBCASE("no other-accent training data") {
    write_manifest(tmp / "m.jsonl",
                   {make_entry(tmp.path(), "u0", "s", 0, "train"),
                    make_entry(tmp.path(), "u1", "s", 0, "valid")});
    CHECK_THROWS_AS(load_manifest(tmp / "m.jsonl"), DataError);
  }
}

TEST_CASE("loading is deterministic") {
  testutil::TempDir tmp("man");
  write_manifest(tmp / "m.jsonl",
                 {make_entry(tmp.path(), "u0", "s0", 0, "train"),
                  make_entry(tmp.path(), "u1", "s1", 1, "train"),
                  make_entry(tmp.path(), "u2", "s2", 1, "test")});
  const DatasetManifest m1 = load_manifest(tmp / "m.jsonl");
  const DatasetManifest m2 = load_manifest(tmp / "m.jsonl");
  REQUIRE(m1.entries.size() == m2.entries.size());
  for (std::size_t i = 0; i < m1.entries.size(); ++i) {
    CHECK(m1.entries[i].id == m2.entries[i].id);
    CHECK(m1.entries[i].speaker_id == m2.entries[i].speaker_id);
    CHECK(m1.entries[i].accent_label == m2.entries[i].accent_label);
    CHECK(m1.entries[i].split == m2.entries[i].split);
  }
}

TEST_CASE("generated dataset manifest matches the configured counts") {
  testutil::TempDir tmp("man");
  GeneratorConfig cfg;
  cfg.master_seed = 7;
  cfg.utterance_frames = {40, 60};
  DatasetCounts counts;
  counts.train = {8, 8};
  counts.test = {0, 4};
  Generator gen(cfg);
  const DatasetManifest m = gen.generate_dataset(counts, tmp / "ds");
  CHECK(m.entries.size() == 20);
  CHECK(!m.generator_config_digest.empty());
  CHECK(m.generator_config_digest == gen_config_digest(cfg, counts));

  int train_target = 0, train_other = 0, test = 0;
  for (const auto& e : m.entries) {
    if (e.split == Split::kTrain)
      (e.accent_label == 0 ? train_target : train_other)++;
    else if (e.split == Split::kTest)
      ++test;
  }
  CHECK(train_target == 8);
  CHECK(train_other == 8);
  CHECK(test == 4);
}

TEST_CASE("corrupted sibling config digest is rejected") {
  testutil::TempDir tmp("man");
  GeneratorConfig cfg;
  cfg.utterance_frames = {40, 50};
  Generator gen(cfg);
  DatasetCounts counts;
  counts.train = {2, 2};
  counts.test = {0, 0};
  gen.generate_dataset(counts, tmp / "ds");

  auto doc_path = tmp / "ds" / "gen_config.json";
  std::string text = testutil::read_bytes(doc_path);
  const auto pos = text.find("\"vocab_size\": 32");
  REQUIRE(pos != std::string::npos);
  text.replace(pos, 16, "\"vocab_size\": 16");
  testutil::write_bytes(doc_path, text);
  CHECK_THROWS_WITH_AS(load_manifest(tmp / "ds" / "manifest.jsonl"),
                       doctest::Contains("digest mismatch"), DataError);
}
