#include "prosynth/tensor_io.hpp"

#include <cstring>
#include <fstream>

namespace ps {

namespace {

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw ParseError("tensor_io: truncated stream");
  return v;
}

}  // namespace

void write_tensor(std::ostream& os, const Mat& m, std::uint16_t rank) {
  if (rank > 2) throw ArgumentError("tensor_io: rank must be <= 2");
  os.write(kTensorMagic, 4);
  put<std::uint16_t>(os, kDtypeFloat64);
  put<std::uint16_t>(os, rank);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(m.rows()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(m.cols()));
  os.write(reinterpret_cast<const char*>(m.data()),
           static_cast<std::streamsize>(sizeof(double) * m.size()));
}

Mat read_tensor(std::istream& is, std::uint16_t* rank_out) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kTensorMagic, 4) != 0)
    throw ParseError("tensor_io: bad magic");
  auto dtype = get<std::uint16_t>(is);
  if (dtype != kDtypeFloat64) throw ParseError("tensor_io: unsupported dtype");
  auto rank = get<std::uint16_t>(is);
  if (rank > 2) throw ParseError("tensor_io: unsupported rank");
  auto rows = get<std::uint32_t>(is);
  auto cols = get<std::uint32_t>(is);
  Mat m(rows, cols);
  is.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(sizeof(double) * m.size()));
  if (!is) throw ParseError("tensor_io: truncated payload");
  if (rank_out) *rank_out = rank;
  return m;
}

void save_tensor(const std::string& path, const Mat& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ArgumentError("tensor_io: cannot open for write: " + path);
  write_tensor(os, m, 2);
}

void save_tensor(const std::string& path, const Vec& v) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ArgumentError("tensor_io: cannot open for write: " + path);
  write_tensor(os, v, 1);
}

Mat load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ArgumentError("tensor_io: cannot open for read: " + path);
  return read_tensor(is);
}

Vec load_vector(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ArgumentError("tensor_io: cannot open for read: " + path);
  std::uint16_t rank = 0;
  Mat m = read_tensor(is, &rank);
  if (m.cols() != 1)
    throw ParseError("tensor_io: expected a rank-1 tensor in " + path);
  return m.col(0);
}

}  // namespace ps
