#include "detail/tiff.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include "cysgan/error.hpp"

namespace cysgan::tiff {
namespace {

enum Tag : std::uint16_t {
  kImageWidth = 256,
  kImageLength = 257,
  kBitsPerSample = 258,
  kCompression = 259,
  kPhotometric = 262,
  kImageDescription = 270,
  kStripOffsets = 273,
  kSamplesPerPixel = 277,
  kRowsPerStrip = 278,
  kStripByteCounts = 279,
  kPlanarConfig = 284,
  kSampleFormat = 339,
};

enum FieldType : std::uint16_t { kByte = 1, kAscii = 2, kShort = 3, kLong = 4 };

class ByteReader {
 public:
  explicit ByteReader(const std::filesystem::path& path) : in_(path, std::ios::binary) {
    if (!in_) throw IoError("cannot open TIFF file " + path.string());
    char order[2];
    in_.read(order, 2);
    if (order[0] == 'I' && order[1] == 'I') {
      big_ = false;
    } else if (order[0] == 'M' && order[1] == 'M') {
      big_ = true;
    } else {
      throw IoError("not a TIFF file: " + path.string());
    }
    if (u16_at(2) != 42) throw IoError("unsupported TIFF variant (BigTIFF?) in " + path.string());
  }

  bool big_endian() const { return big_; }

  std::uint16_t u16_at(std::uint64_t off) {
    unsigned char b[2];
    read_at(off, b, 2);
    return big_ ? static_cast<std::uint16_t>(b[0] << 8 | b[1]) : static_cast<std::uint16_t>(b[1] << 8 | b[0]);
  }
  std::uint32_t u32_at(std::uint64_t off) {
    unsigned char b[4];
    read_at(off, b, 4);
    if (big_) return std::uint32_t(b[0]) << 24 | std::uint32_t(b[1]) << 16 | std::uint32_t(b[2]) << 8 | b[3];
    return std::uint32_t(b[3]) << 24 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[1]) << 8 | b[0];
  }
  void read_at(std::uint64_t off, void* dst, std::size_t n) {
    in_.seekg(static_cast<std::streamoff>(off));
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (!in_) throw IoError("truncated TIFF file");
  }

 private:
  std::ifstream in_;
  bool big_ = false;
};

std::vector<std::uint64_t> read_values(ByteReader& r, std::uint64_t entry, std::uint16_t type, std::uint32_t count) {
  const std::size_t width = type == kShort ? 2 : (type == kLong ? 4 : 1);
  std::uint64_t base = entry + 8;
  if (width * count > 4) base = r.u32_at(entry + 8);
  std::vector<std::uint64_t> out(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint64_t at = base + i * width;
    if (type == kShort) {
      out[i] = r.u16_at(at);
    } else if (type == kLong) {
      out[i] = r.u32_at(at);
    } else {
      unsigned char b;
      r.read_at(at, &b, 1);
      out[i] = b;
    }
  }
  return out;
}

template <typename T>
T load_sample(const unsigned char* p, bool big_endian) {
  unsigned char tmp[sizeof(T)];
  std::memcpy(tmp, p, sizeof(T));
  if (big_endian != (std::endian::native == std::endian::big)) std::reverse(tmp, tmp + sizeof(T));
  T v;
  std::memcpy(&v, tmp, sizeof(T));
  return v;
}

void put16(std::vector<unsigned char>& b, std::uint16_t v) {
  b.push_back(static_cast<unsigned char>(v & 0xff));
  b.push_back(static_cast<unsigned char>(v >> 8));
}
void put32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

}  // namespace

std::vector<PageInfo> read_headers(const std::filesystem::path& path) {
  ByteReader r(path);
  std::vector<PageInfo> pages;
  std::uint64_t ifd = r.u32_at(4);
  while (ifd != 0) {
    const std::uint16_t n = r.u16_at(ifd);
    PageInfo page;
    std::uint16_t compression = 1;
    std::uint16_t spp = 1;
    for (std::uint16_t e = 0; e < n; ++e) {
      const std::uint64_t entry = ifd + 2 + 12ull * e;
      const std::uint16_t tag = r.u16_at(entry);
      const std::uint16_t type = r.u16_at(entry + 2);
      const std::uint32_t count = r.u32_at(entry + 4);
      if (type == kAscii) {
        std::string s(count, '\0');
        const std::uint64_t at = count > 4 ? r.u32_at(entry + 8) : entry + 8;
        r.read_at(at, s.data(), count);
        while (!s.empty() && s.back() == '\0') s.pop_back();
        if (tag == kImageDescription) page.description = s;
        continue;
      }
      if (type != kShort && type != kLong && type != kByte) continue;
      const auto v = read_values(r, entry, type, count);
      switch (tag) {
        case kImageWidth: page.width = static_cast<std::uint32_t>(v.at(0)); break;
        case kImageLength: page.height = static_cast<std::uint32_t>(v.at(0)); break;
        case kBitsPerSample: page.bits = static_cast<std::uint16_t>(v.at(0)); break;
        case kCompression: compression = static_cast<std::uint16_t>(v.at(0)); break;
        case kSamplesPerPixel: spp = static_cast<std::uint16_t>(v.at(0)); break;
        case kStripOffsets: page.strip_offsets = v; break;
        case kStripByteCounts: page.strip_bytes = v; break;
        case kSampleFormat: page.kind = static_cast<SampleKind>(v.at(0)); break;
        default: break;
      }
    }
    if (compression != 1) throw IoError("compressed TIFF is not supported: " + path.string());
    if (spp != 1) throw IoError("multi-sample TIFF is not supported: " + path.string());
    if (page.bits != 8 && page.bits != 16 && page.bits != 32 && page.bits != 64)
      throw IoError("unsupported TIFF bit depth in " + path.string());
    if (page.strip_offsets.size() != page.strip_bytes.size() || page.strip_offsets.empty())
      throw IoError("malformed TIFF strips in " + path.string());
    pages.push_back(std::move(page));
    ifd = r.u32_at(ifd + 2 + 12ull * n);
  }
  return pages;
}

void read_page(const std::filesystem::path& path, const PageInfo& page, double* out) {
  ByteReader r(path);
  const std::size_t bytes_per = page.bits / 8;
  const std::size_t total = std::size_t(page.width) * page.height * bytes_per;
  std::vector<unsigned char> buf;
  buf.reserve(total);
  for (std::size_t s = 0; s < page.strip_offsets.size(); ++s) {
    const std::size_t n = page.strip_bytes[s];
    const std::size_t old = buf.size();
    buf.resize(old + n);
    r.read_at(page.strip_offsets[s], buf.data() + old, n);
  }
  if (buf.size() < total) throw IoError("TIFF page shorter than its dimensions in " + path.string());
  const bool be = r.big_endian();
  const std::size_t count = std::size_t(page.width) * page.height;
  for (std::size_t i = 0; i < count; ++i) {
    const unsigned char* p = buf.data() + i * bytes_per;
    double v = 0;
    switch (page.kind) {
      case SampleKind::unsigned_int:
        if (page.bits == 8) v = *p;
        else if (page.bits == 16) v = load_sample<std::uint16_t>(p, be);
        else if (page.bits == 32) v = load_sample<std::uint32_t>(p, be);
        else v = static_cast<double>(load_sample<std::uint64_t>(p, be));
        break;
      case SampleKind::signed_int:
        if (page.bits == 8) v = static_cast<std::int8_t>(*p);
        else if (page.bits == 16) v = load_sample<std::int16_t>(p, be);
        else if (page.bits == 32) v = load_sample<std::int32_t>(p, be);
        else v = static_cast<double>(load_sample<std::int64_t>(p, be));
        break;
      case SampleKind::floating:
        if (page.bits == 32) v = load_sample<float>(p, be);
        else if (page.bits == 64) v = load_sample<double>(p, be);
        else throw IoError("unsupported float width in TIFF " + path.string());
        break;
    }
    out[i] = v;
  }
}

void write_pages(const std::filesystem::path& path, std::uint32_t depth, std::uint32_t height,
                 std::uint32_t width, std::uint16_t bits, SampleKind kind, const void* data,
                 const std::string& description) {
  static_assert(std::endian::native == std::endian::little, "TIFF writer assumes a little-endian host");
  const std::uint64_t page_bytes = std::uint64_t(width) * height * (bits / 8);
  const std::uint64_t desc_bytes = description.empty() ? 0 : description.size() + 1;
  const std::uint64_t total = 8 + depth * (page_bytes + desc_bytes + 2 + 13 * 12 + 4 + 1);
  if (total > std::numeric_limits<std::uint32_t>::max()) throw IoError("volume too large for classic TIFF");

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write TIFF file " + path.string());
  // Each page is laid out as [samples][description][pad][IFD].
  const std::uint64_t n_entries = desc_bytes ? 12 : 11;
  const std::uint64_t pad = (page_bytes + desc_bytes) % 2;
  const std::uint64_t ifd_bytes = 2 + 12 * n_entries + 4;
  const std::uint64_t block = page_bytes + desc_bytes + pad + ifd_bytes;
  const auto ifd_offset = [&](std::uint64_t page) { return 8 + page * block + page_bytes + desc_bytes + pad; };

  std::vector<unsigned char> head{'I', 'I'};
  put16(head, 42);
  put32(head, static_cast<std::uint32_t>(depth ? ifd_offset(0) : 0));
  out.write(reinterpret_cast<const char*>(head.data()), static_cast<std::streamsize>(head.size()));

  std::uint64_t pos = 8;
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::uint32_t z = 0; z < depth; ++z) {
    const std::uint64_t data_at = pos;
    out.write(reinterpret_cast<const char*>(bytes + z * page_bytes), static_cast<std::streamsize>(page_bytes));
    pos += page_bytes;
    std::uint64_t desc_at = 0;
    if (desc_bytes) {
      desc_at = pos;
      out.write(description.c_str(), static_cast<std::streamsize>(desc_bytes));
      pos += desc_bytes;
    }
    if (pos % 2) {
      out.put('\0');
      ++pos;
    }
    struct Entry {
      std::uint16_t tag, type;
      std::uint32_t count, value;
    };
    std::vector<Entry> entries{
        {kImageWidth, kLong, 1, width},
        {kImageLength, kLong, 1, height},
        {kBitsPerSample, kShort, 1, bits},
        {kCompression, kShort, 1, 1},
        {kPhotometric, kShort, 1, 1},
    };
    if (desc_bytes) entries.push_back({kImageDescription, kAscii, static_cast<std::uint32_t>(desc_bytes), static_cast<std::uint32_t>(desc_at)});
    entries.push_back({kStripOffsets, kLong, 1, static_cast<std::uint32_t>(data_at)});
    entries.push_back({kSamplesPerPixel, kShort, 1, 1});
    entries.push_back({kRowsPerStrip, kLong, 1, height});
    entries.push_back({kStripByteCounts, kLong, 1, static_cast<std::uint32_t>(page_bytes)});
    entries.push_back({kPlanarConfig, kShort, 1, 1});
    entries.push_back({kSampleFormat, kShort, 1, static_cast<std::uint16_t>(kind)});

    std::vector<unsigned char> ifd;
    put16(ifd, static_cast<std::uint16_t>(entries.size()));
    for (const auto& e : entries) {
      put16(ifd, e.tag);
      put16(ifd, e.type);
      put32(ifd, e.count);
      if (e.type == kShort) {
        put16(ifd, static_cast<std::uint16_t>(e.value));
        put16(ifd, 0);
      } else {
        put32(ifd, e.value);
      }
    }
    const std::uint64_t next = z + 1 < depth ? ifd_offset(z + 1) : 0;
    put32(ifd, static_cast<std::uint32_t>(next));
    out.write(reinterpret_cast<const char*>(ifd.data()), static_cast<std::streamsize>(ifd.size()));
    pos += ifd.size();
  }
  if (!out) throw IoError("failed writing TIFF file " + path.string());
}

}  // namespace cysgan::tiff
