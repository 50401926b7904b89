#include "psdn/tensor_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "psdn/errors.hpp"

namespace psdn {
namespace {

constexpr char kMagic[4] = {'P', 'S', 'D', 'N'};
constexpr std::uint8_t kVersion = 1;
constexpr std::uint8_t kDtypeF32 = 1;

void put_u32_le(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

std::uint32_t get_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

std::size_t Tensor::size() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return dims.empty() ? 0 : n;
}

Tensor tensor_from_matrix(const MatF& m) {
  Tensor t;
  t.dims = {static_cast<std::uint32_t>(m.rows()),
            static_cast<std::uint32_t>(m.cols())};
  t.data.assign(m.data(), m.data() + m.size());
  return t;
}

MatF matrix_from_tensor(const Tensor& t) {
  if (t.dims.size() != 2)
    throw DataError("expected a 2-d tensor, got ndim=" +
                    std::to_string(t.dims.size()));
  MatF m(t.dims[0], t.dims[1]);
  std::memcpy(m.data(), t.data.data(), sizeof(float) * t.data.size());
  return m;
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  if (t.dims.empty() || t.dims.size() > 4)
    throw DataError("tensor ndim must be in [1, 4], got " +
                    std::to_string(t.dims.size()));
  if (t.data.size() != t.size())
    throw DataError("tensor payload size does not match dims");
  for (std::size_t i = 0; i < t.data.size(); ++i) {
    if (!std::isfinite(t.data[i]))
      throw DataError("non-finite value at flat index " + std::to_string(i) +
                      " while writing " + path.string());
  }

  std::string buf;
  buf.reserve(7 + 4 * t.dims.size() + 4 * t.data.size());
  buf.append(kMagic, 4);
  buf.push_back(static_cast<char>(kVersion));
  buf.push_back(static_cast<char>(kDtypeF32));
  buf.push_back(static_cast<char>(t.dims.size()));
  for (auto d : t.dims) put_u32_le(buf, d);
  for (float f : t.data) put_u32_le(buf, std::bit_cast<std::uint32_t>(f));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());

  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
  if (buf.size() < 7) throw DataError("truncated header: " + path.string());
  if (std::memcmp(p, kMagic, 4) != 0)
    throw DataError("bad magic: " + path.string());
  if (p[4] != kVersion)
    throw DataError("unsupported version " + std::to_string(p[4]) + ": " +
                    path.string());
  if (p[5] != kDtypeF32)
    throw DataError("unknown dtype " + std::to_string(p[5]) + ": " +
                    path.string());
  const std::size_t ndim = p[6];
  if (ndim < 1 || ndim > 4)
    throw DataError("invalid ndim " + std::to_string(ndim) + ": " +
                    path.string());
  if (buf.size() < 7 + 4 * ndim)
    throw DataError("truncated dims: " + path.string());

  Tensor t;
  t.dims.resize(ndim);
  std::size_t n = 1;
  for (std::size_t i = 0; i < ndim; ++i) {
    t.dims[i] = get_u32_le(p + 7 + 4 * i);
    n *= t.dims[i];
  }
  const std::size_t expect = 7 + 4 * ndim + 4 * n;
  if (buf.size() != expect)
    throw DataError("truncated payload (" + std::to_string(buf.size()) +
                    " bytes, expected " + std::to_string(expect) +
                    "): " + path.string());

  t.data.resize(n);
  const unsigned char* q = p + 7 + 4 * ndim;
  for (std::size_t i = 0; i < n; ++i)
    t.data[i] = std::bit_cast<float>(get_u32_le(q + 4 * i));
  return t;
}

}  // namespace psdn
