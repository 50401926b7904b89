#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <bit>
#include <cstring>

#include "psdn/errors.hpp"
#include "psdn/rng.hpp"
#include "psdn/synthgen.hpp"
#include "psdn/tensor_io.hpp"
#include "test_util.hpp"

using namespace psdn;

namespace {

std::string le32(std::uint32_t v) {
  std::string s(4, '\0');
  s[0] = static_cast<char>(v & 0xff);
  s[1] = static_cast<char>((v >> 8) & 0xff);
  s[2] = static_cast<char>((v >> 16) & 0xff);
  s[3] = static_cast<char>((v >> 24) & 0xff);
  return s;
}

}  // namespace

TEST_CASE("2x3 zero matrix serializes to the 39-byte layout") {
  testutil::TempDir tmp("tio");
  const auto path = tmp / "z.psdn";
  write_tensor(path, MatF::Zero(2, 3));
  const std::string bytes = testutil::read_bytes(path);
  REQUIRE(bytes.size() == 39);  // 4+1+1+1 header, 2*4 dims, 6*4 payload
  CHECK(bytes.substr(0, 4) == "PSDN");
  CHECK(bytes[4] == 1);  // version
  CHECK(bytes[5] == 1);  // float32
  CHECK(bytes[6] == 2);  // ndim
  CHECK(bytes.substr(7, 4) == le32(2));
  CHECK(bytes.substr(11, 4) == le32(3));
  for (std::size_t i = 15; i < 39; ++i) CHECK(bytes[i] == 0);
}

TEST_CASE("hand-built little-endian file parses to exact floats") {
  testutil::TempDir tmp("tio");
  Rng rng(1234);
  std::vector<float> payload(5 * 80);
  for (auto& v : payload) v = static_cast<float>(rng.gaussian());

  std::string bytes = "PSDN";
  bytes += '\x01';
  bytes += '\x01';
  bytes += '\x02';
  bytes += le32(5) + le32(80);
  for (float f : payload) bytes += le32(std::bit_cast<std::uint32_t>(f));
  const auto path = tmp / "ref.psdn";
  testutil::write_bytes(path, bytes);

  const Tensor t = read_tensor(path);
  REQUIRE(t.dims == std::vector<std::uint32_t>{5, 80});
  REQUIRE(t.data.size() == payload.size());
  for (std::size_t i = 0; i < payload.size(); ++i)
    CHECK(std::bit_cast<std::uint32_t>(t.data[i]) ==
          std::bit_cast<std::uint32_t>(payload[i]));

  // write_tensor of the same data reproduces the reference bytes.
  Tensor again;
  again.dims = {5, 80};
  again.data = payload;
  const auto path2 = tmp / "ref2.psdn";
  write_tensor(path2, again);
  CHECK(testutil::read_bytes(path2) == bytes);
}

TEST_CASE("round trip is bit-exact for random arrays") {
  testutil::TempDir tmp("tio");
  Rng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    const int rows = 1 + static_cast<int>(rng.uniform_int(0, 40));
    const int cols = 1 + static_cast<int>(rng.uniform_int(0, 40));
    MatF m(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        m(r, c) = static_cast<float>(rng.gaussian() * 1e3);
    const auto path = tmp / ("rt" + std::to_string(trial) + ".psdn");
    write_tensor(path, m);
    const MatF back = read_matrix(path);
    REQUIRE(back.rows() == rows);
    REQUIRE(back.cols() == cols);
    CHECK(std::memcmp(m.data(), back.data(), sizeof(float) * m.size()) == 0);
  }
}

TEST_CASE("1-d and 3-d tensors round trip") {
  testutil::TempDir tmp("tio");
  Tensor t;
  t.dims = {3, 2, 2};
  t.data = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
  write_tensor(tmp / "t3.psdn", t);
  const Tensor back = read_tensor(tmp / "t3.psdn");
  CHECK(back.dims == t.dims);
  CHECK(back.data == t.data);

  Tensor v;
  v.dims = {4};
  v.data = {-1.f, 0.f, 2.5f, 1e-20f};
  write_tensor(tmp / "v.psdn", v);
  CHECK(read_tensor(tmp / "v.psdn").data == v.data);
}

TEST_CASE("malformed files are rejected with diagnostics") {
  testutil::TempDir tmp("tio");
  const auto good = tmp / "good.psdn";
  write_tensor(good, MatF::Ones(2, 2));
  std::string bytes = testutil::read_bytes(good);

  SUBCASE("bad magic") {
    bytes[0] = 'X';
    testutil::write_bytes(tmp / "bad.psdn", bytes);
    CHECK_THROWS_WITH_AS(read_tensor(tmp / "bad.psdn"),
                         doctest::Contains("bad magic"), DataError);
  }
  SUBCASE("unsupported version") {
    bytes[4] = 2;
    testutil::write_bytes(tmp / "bad.psdn", bytes);
    CHECK_THROWS_WITH_AS(read_tensor(tmp / "bad.psdn"),
                         doctest::Contains("version"), DataError);
  }
  SUBCASE("unknown dtype") {
    bytes[5] = 7;
    testutil::write_bytes(tmp / "bad.psdn", bytes);
    CHECK_THROWS_WITH_AS(read_tensor(tmp / "bad.psdn"),
                         doctest::Contains("unknown dtype"), DataError);
  }
  SUBCASE("truncated payload") {
    bytes.pop_back();
    testutil::write_bytes(tmp / "bad.psdn", bytes);
    CHECK_THROWS_WITH_AS(read_tensor(tmp / "bad.psdn"),
                         doctest::Contains("truncated"), DataError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(read_tensor(tmp / "nope.psdn"), IoError);
  }
}

TEST_CASE("non-finite values are rejected on write") {
  testutil::TempDir tmp("tio");
  MatF m = MatF::Ones(2, 2);
  m(1, 1) = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_WITH_AS(write_tensor(tmp / "nan.psdn", m),
                       doctest::Contains("non-finite"), DataError);
  m(1, 1) = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(write_tensor(tmp / "inf.psdn", m), DataError);
  CHECK(!std::filesystem::exists(tmp / "nan.psdn"));
}

TEST_CASE("ndim bounds are enforced") {
  testutil::TempDir tmp("tio");
  Tensor t;
  t.dims = {1, 1, 1, 1, 1};
  t.data = {0.f};
  CHECK_THROWS_AS(write_tensor(tmp / "nd.psdn", t), DataError);
}

TEST_CASE("a generated 64-frame mel has a 20480-byte payload") {
  Generator gen(GeneratorConfig{});
  SynthFactors f;
  f.accent_id = 0;
  f.content_seq.assign(64, 1);
  f.timbre.gain.assign(kMelDim, 1.0);
  f.timbre.bias.assign(kMelDim, 0.0);
  const MatF mel = gen.render_mel(f, false);
  REQUIRE(mel.rows() == 64);
  REQUIRE(mel.cols() == 80);

  testutil::TempDir tmp("tio");
  write_tensor(tmp / "mel.psdn", mel);
  const auto bytes = testutil::read_bytes(tmp / "mel.psdn");
  CHECK(bytes.size() == 7 + 8 + 64 * 80 * 4);  // payload 20480
}
