#include "cohft/io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace cohft::io {

namespace {

constexpr std::array<char, 4> kTensorMagic{'C', 'H', 'F', 'T'};
constexpr std::array<char, 4> kNamedMagic{'C', 'H', 'F', 'N'};
constexpr std::uint16_t kVersion = 1;

template <class U>
void put_le(std::ostream& os, U v) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(bytes.data(), bytes.size());
}

template <class U>
U get_le(std::istream& is) {
  std::array<unsigned char, sizeof(U)> bytes{};
  is.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!is) throw FormatError("CHFT: unexpected end of stream");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[i]) << (8 * i);
  return v;
}

void expect_magic(std::istream& is, const std::array<char, 4>& magic) {
  std::array<char, 4> got{};
  is.read(got.data(), got.size());
  if (!is || got != magic) {
    throw FormatError(std::string("bad magic, expected \"") + std::string(magic.data(), 4) + "\"");
  }
}

void expect_version(std::istream& is) {
  const auto v = get_le<std::uint16_t>(is);
  if (v != kVersion) throw FormatError("unsupported CHFT version " + std::to_string(v));
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  return os;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return is;
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t, DType dtype) {
  if (!t.defined()) throw FormatError("cannot serialize an undefined tensor");
  if (t.rank() > 255) throw FormatError("tensor rank exceeds 255");
  os.write(kTensorMagic.data(), 4);
  put_le<std::uint16_t>(os, kVersion);
  put_le<std::uint8_t>(os, static_cast<std::uint8_t>(dtype));
  put_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
  for (auto e : t.shape()) {
    if (e > 0xFFFFFFFFu) throw FormatError("extent exceeds u32");
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(e));
  }
  for (Real v : t.data()) {
    if (dtype == DType::F64) {
      put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(static_cast<double>(v)));
    } else {
      put_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
  if (!os) throw std::runtime_error("write failed");
}

Tensor read_tensor(std::istream& is) {
  expect_magic(is, kTensorMagic);
  expect_version(is);
  const auto dtype = get_le<std::uint8_t>(is);
  if (dtype > 1) throw FormatError("unknown CHFT dtype " + std::to_string(dtype));
  const auto ndim = get_le<std::uint8_t>(is);
  Shape shape(ndim);
  for (auto& e : shape) {
    e = get_le<std::uint32_t>(is);
    if (e == 0) throw FormatError("CHFT extent of zero");
  }
  std::vector<Real> data(numel(shape));
  for (auto& v : data) {
    if (dtype == static_cast<std::uint8_t>(DType::F64)) {
      v = std::bit_cast<double>(get_le<std::uint64_t>(is));
    } else {
      v = std::bit_cast<float>(get_le<std::uint32_t>(is));
    }
  }
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t, DType dtype) {
  auto os = open_out(path);
  write_tensor(os, t, dtype);
}

Tensor load_tensor(const std::filesystem::path& path) {
  auto is = open_in(path);
  return read_tensor(is);
}

void write_named(std::ostream& os, const NamedTensors& entries, DType dtype) {
  os.write(kNamedMagic.data(), 4);
  put_le<std::uint16_t>(os, kVersion);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    if (name.size() > 0xFFFF) throw FormatError("entry name too long: " + name.substr(0, 32));
    put_le<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(os, t, dtype);
  }
}

NamedTensors read_named(std::istream& is) {
  expect_magic(is, kNamedMagic);
  expect_version(is);
  const auto count = get_le<std::uint32_t>(is);
  NamedTensors out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get_le<std::uint16_t>(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    if (!is) throw FormatError("CHFN: truncated entry name");
    out.emplace_back(std::move(name), read_tensor(is));
  }
  return out;
}

void save_named(const std::filesystem::path& path, const NamedTensors& entries, DType dtype) {
  auto os = open_out(path);
  write_named(os, entries, dtype);
}

NamedTensors load_named(const std::filesystem::path& path) {
  auto is = open_in(path);
  return read_named(is);
}

}  // namespace cohft::io
