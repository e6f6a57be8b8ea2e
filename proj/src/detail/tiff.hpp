#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace cysgan::tiff {

enum class SampleKind : std::uint16_t { unsigned_int = 1, signed_int = 2, floating = 3 };

struct PageInfo {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint16_t bits = 0;
  SampleKind kind = SampleKind::unsigned_int;
  std::string description;
  std::vector<std::uint64_t> strip_offsets;
  std::vector<std::uint64_t> strip_bytes;
};

/// Baseline, uncompressed, single-sample TIFF pages of a (possibly multi-page) file.
std::vector<PageInfo> read_headers(const std::filesystem::path& path);

/// Decodes one page into `out` (width * height values, row-major).
void read_page(const std::filesystem::path& path, const PageInfo& page, double* out);

/// Writes `depth` pages of height x width samples taken from `data`
/// (raw little-endian samples, page-major).
void write_pages(const std::filesystem::path& path, std::uint32_t depth, std::uint32_t height,
                 std::uint32_t width, std::uint16_t bits, SampleKind kind, const void* data,
                 const std::string& description);

}  // namespace cysgan::tiff
