// SPDX-License-Identifier: Apache-2.0
#include "fedlab/io.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <vector>

namespace fedlab {

namespace {

constexpr char kMagic[4] = {'F', 'D', 'R', 'A'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kMaxNameLen = 1u << 20;

void put_bytes(std::ostream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  put_bytes(out, b, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  put_bytes(out, b, 8);
}

void put_f64(std::ostream& out, double d) {
  put_u64(out, std::bit_cast<std::uint64_t>(d));
}

[[noreturn]] void truncated(std::uint64_t offset, const char* what) {
  std::ostringstream os;
  os << "tensor stream truncated at byte " << offset << " while reading "
     << what;
  throw DataError(os.str());
}

void take_bytes(std::istream& in, void* p, std::size_t n, std::uint64_t& off,
                const char* what) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) truncated(off, what);
  off += n;
}

std::uint32_t take_u32(std::istream& in, std::uint64_t& off, const char* what) {
  unsigned char b[4];
  take_bytes(in, b, 4, off, what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t take_u64(std::istream& in, std::uint64_t& off, const char* what) {
  unsigned char b[8];
  take_bytes(in, b, 8, off, what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double take_f64(std::istream& in, std::uint64_t& off, const char* what) {
  return std::bit_cast<double>(take_u64(in, off, what));
}

}  // namespace

void write_tensors(std::ostream& out, const TensorMap& tensors) {
  put_bytes(out, kMagic, 4);
  put_u32(out, kVersion);
  for (const auto& [name, t] : tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    put_bytes(out, name.data(), name.size());
    if (t.cols() == 1) {
      put_u32(out, 1);
      put_u64(out, static_cast<std::uint64_t>(t.rows()));
    } else {
      put_u32(out, 2);
      put_u64(out, static_cast<std::uint64_t>(t.rows()));
      put_u64(out, static_cast<std::uint64_t>(t.cols()));
    }
    for (Index i = 0; i < t.rows(); ++i)
      for (Index j = 0; j < t.cols(); ++j) put_f64(out, t(i, j));
  }
  if (!out) throw DataError("tensor stream write failed");
}

TensorMap read_tensors(std::istream& in) {
  std::uint64_t off = 0;
  char magic[4];
  take_bytes(in, magic, 4, off, "magic");
  if (!std::equal(magic, magic + 4, kMagic))
    throw DataError("bad magic at byte 0, not a tensor container");
  const std::uint32_t version = take_u32(in, off, "version");
  if (version != kVersion) {
    std::ostringstream os;
    os << "unsupported container version " << version << " at byte 4";
    throw DataError(os.str());
  }

  TensorMap tensors;
  while (in.peek() != std::char_traits<char>::eof()) {
    const std::uint32_t name_len = take_u32(in, off, "name length");
    if (name_len > kMaxNameLen) {
      std::ostringstream os;
      os << "implausible name length " << name_len << " at byte " << off - 4;
      throw DataError(os.str());
    }
    std::string name(name_len, '\0');
    take_bytes(in, name.data(), name_len, off, "name");
    const std::uint32_t rank = take_u32(in, off, "rank");
    if (rank != 1 && rank != 2) {
      std::ostringstream os;
      os << "unsupported rank " << rank << " for tensor '" << name
         << "' at byte " << off - 4;
      throw DataError(os.str());
    }
    std::uint64_t rows = take_u64(in, off, "dims");
    std::uint64_t cols = 1;
    if (rank == 2) cols = take_u64(in, off, "dims");
    if (rows > (1u << 24) || cols > (1u << 24)) {
      std::ostringstream os;
      os << "implausible shape " << rows << "x" << cols << " for tensor '"
         << name << "'";
      throw DataError(os.str());
    }
    Matrix t(static_cast<Index>(rows), static_cast<Index>(cols));
    for (Index i = 0; i < t.rows(); ++i)
      for (Index j = 0; j < t.cols(); ++j)
        t(i, j) = take_f64(in, off, "payload");
    if (!tensors.emplace(std::move(name), std::move(t)).second)
      throw DataError("duplicate tensor name in container");
  }
  return tensors;
}

void save_tensors(const std::string& path, const TensorMap& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  write_tensors(out, tensors);
  if (!out) throw DataError("write failed: " + path);
}

TensorMap load_tensors(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  return read_tensors(in);
}

std::string format_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace fedlab
