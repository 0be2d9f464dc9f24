#pragma once

#include <cstdint>
#include <cstdio>
#include <span>
#include <string>

#include <boost/crc.hpp>

namespace sparsebeam {

/// CRC-64/XZ.
using Crc64 = boost::crc_optimal<64, 0x42F0E1EBA9EA3693ULL, 0xFFFFFFFFFFFFFFFFULL, 0xFFFFFFFFFFFFFFFFULL, true, true>;

[[nodiscard]] inline std::uint64_t crc64(std::span<const std::byte> bytes) {
  Crc64 crc;
  crc.process_bytes(bytes.data(), bytes.size());
  return crc.checksum();
}

template <typename T>
[[nodiscard]] std::uint64_t crc64_of(std::span<const T> values) {
  return crc64(std::as_bytes(values));
}

[[nodiscard]] inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Checksum string used in manifests and file sidecars.
template <typename T>
[[nodiscard]] std::string checksum_string(std::span<const T> values) {
  return "crc64:" + hex64(crc64_of(values));
}

}  // namespace sparsebeam
