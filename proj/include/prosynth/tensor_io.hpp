#pragma once

#include <iosfwd>
#include <string>

#include "prosynth/common.hpp"

namespace ps {

// Dimensioned binary tensor container.
//
// 16-byte header: magic "PSTN" (4 bytes), dtype code (u16, 1 = float64),
// rank (u16, 0..2), dim0 (u32), dim1 (u32); little-endian throughout.
// Payload is the raw scalar data, column-major for rank 2. Round-trips are
// bit-exact.

inline constexpr char kTensorMagic[4] = {'P', 'S', 'T', 'N'};
inline constexpr std::uint16_t kDtypeFloat64 = 1;

void write_tensor(std::ostream& os, const Mat& m, std::uint16_t rank = 2);
Mat read_tensor(std::istream& is, std::uint16_t* rank_out = nullptr);

void save_tensor(const std::string& path, const Mat& m);
void save_tensor(const std::string& path, const Vec& v);
Mat load_tensor(const std::string& path);
Vec load_vector(const std::string& path);

}  // namespace ps
