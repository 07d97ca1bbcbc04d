#pragma once

// Reader/writer for the .npy v1.0 container, restricted to little-endian
// float32/float64 arrays in C order. Written headers are byte-identical to
// the ones numpy itself produces (sorted keys, growth padding, 64-byte
// alignment).

#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "irdrop/error.hpp"
#include "irdrop/grid.hpp"

static_assert(std::endian::native == std::endian::little, "npy I/O assumes a little-endian host");

namespace irdrop::npy {

enum class DType { kF4, kF8 };

constexpr std::size_t item_size(DType d) { return d == DType::kF4 ? 4 : 8; }
constexpr const char* descr(DType d) { return d == DType::kF4 ? "<f4" : "<f8"; }

struct NpyHeader {
  DType dtype = DType::kF8;
  bool fortran_order = false;
  std::vector<std::size_t> shape;

  std::size_t element_count() const {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }
};

struct ArrayRecord {
  NpyHeader header;
  std::vector<double> data;
};

inline constexpr unsigned char kMagic[6] = {0x93, 'N', 'U', 'M', 'P', 'Y'};
inline constexpr std::size_t kAlign = 64;
inline constexpr std::size_t kPrefixLen = 10;  // magic + version + u16 header length
inline constexpr std::size_t kGrowthDigits = 21;

// Header text exactly as numpy 1.x/2.x writes it, including the trailing
// space padding and newline.
inline std::string header_text(const NpyHeader& h) {
  std::string shape = "(";
  for (std::size_t i = 0; i < h.shape.size(); ++i) {
    if (i > 0) shape += ", ";
    shape += std::to_string(h.shape[i]);
  }
  if (h.shape.size() == 1) shape += ",";
  shape += ")";

  std::string text = std::string("{'descr': '") + descr(h.dtype) + "', 'fortran_order': " +
                     (h.fortran_order ? "True" : "False") + ", 'shape': " + shape + ", }";
  if (!h.shape.empty()) {
    const auto lead = std::to_string(h.fortran_order ? h.shape.back() : h.shape.front());
    text.append(kGrowthDigits - lead.size(), ' ');
  }
  const std::size_t used = kPrefixLen + text.size() + 1;
  text.append(kAlign - used % kAlign, ' ');
  text += '\n';
  return text;
}

inline std::vector<std::uint8_t> write_npy(const ArrayRecord& rec, DType dtype) {
  if (rec.header.fortran_order) {
    detail::fail(ErrorKind::kUnsupported, "npy: only C-order arrays can be written");
  }
  if (rec.data.size() != rec.header.element_count()) {
    detail::fail(ErrorKind::kInvalidInput, "npy: data length " + std::to_string(rec.data.size()) +
                                               " does not match shape product " +
                                               std::to_string(rec.header.element_count()));
  }
  NpyHeader h = rec.header;
  h.dtype = dtype;
  const std::string text = header_text(h);

  std::vector<std::uint8_t> out;
  out.reserve(kPrefixLen + text.size() + rec.data.size() * item_size(dtype));
  out.assign(std::begin(kMagic), std::end(kMagic));
  out.push_back(1);
  out.push_back(0);
  const auto len = static_cast<std::uint16_t>(text.size());
  out.push_back(static_cast<std::uint8_t>(len & 0xff));
  out.push_back(static_cast<std::uint8_t>(len >> 8));
  out.insert(out.end(), text.begin(), text.end());

  const std::size_t offset = out.size();
  out.resize(offset + rec.data.size() * item_size(dtype));
  std::uint8_t* dst = out.data() + offset;
  if (dtype == DType::kF8) {
    std::memcpy(dst, rec.data.data(), rec.data.size() * sizeof(double));
  } else {
    for (std::size_t i = 0; i < rec.data.size(); ++i) {
      const auto f = static_cast<float>(rec.data[i]);
      std::memcpy(dst + 4 * i, &f, 4);
    }
  }
  return out;
}

namespace detail {

// Minimal cursor over the python-literal dictionary in a v1.0 header.
class HeaderParser {
 public:
  explicit HeaderParser(std::string_view text) : text_(text) {}

  NpyHeader parse() {
    NpyHeader h;
    bool have_descr = false, have_order = false, have_shape = false;
    expect('{');
    while (true) {
      skip_ws();
      if (peek() == '}') {
        ++pos_;
        break;
      }
      const std::string key = parse_string();
      expect(':');
      if (key == "descr") {
        const std::string d = parse_string();
        if (d == "<f4") {
          h.dtype = DType::kF4;
        } else if (d == "<f8") {
          h.dtype = DType::kF8;
        } else {
          irdrop::detail::fail(ErrorKind::kUnsupported, "npy: unsupported dtype '" + d + "'");
        }
        have_descr = true;
      } else if (key == "fortran_order") {
        h.fortran_order = parse_bool();
        have_order = true;
      } else if (key == "shape") {
        h.shape = parse_shape();
        have_shape = true;
      } else {
        irdrop::detail::fail(ErrorKind::kFormat, "npy: unexpected header key '" + key + "'");
      }
      skip_ws();
      if (peek() == ',') ++pos_;
    }
    if (!have_descr || !have_order || !have_shape) {
      irdrop::detail::fail(ErrorKind::kFormat, "npy: header missing descr, fortran_order or shape");
    }
    skip_ws();
    if (pos_ != text_.size()) irdrop::detail::fail(ErrorKind::kFormat, "npy: trailing header text");
    return h;
  }

 private:
  char peek() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  void expect(char c) {
    skip_ws();
    if (peek() != c) {
      irdrop::detail::fail(ErrorKind::kFormat, std::string("npy: expected '") + c + "' in header");
    }
    ++pos_;
  }

  std::string parse_string() {
    skip_ws();
    const char quote = peek();
    if (quote != '\'' && quote != '"') irdrop::detail::fail(ErrorKind::kFormat, "npy: expected string");
    ++pos_;
    const auto end = text_.find(quote, pos_);
    if (end == std::string_view::npos) irdrop::detail::fail(ErrorKind::kFormat, "npy: unterminated string");
    std::string s(text_.substr(pos_, end - pos_));
    pos_ = end + 1;
    return s;
  }

  bool parse_bool() {
    skip_ws();
    if (text_.substr(pos_, 4) == "True") {
      pos_ += 4;
      return true;
    }
    if (text_.substr(pos_, 5) == "False") {
      pos_ += 5;
      return false;
    }
    irdrop::detail::fail(ErrorKind::kFormat, "npy: expected True or False");
  }

  std::vector<std::size_t> parse_shape() {
    expect('(');
    std::vector<std::size_t> dims;
    while (true) {
      skip_ws();
      if (peek() == ')') {
        ++pos_;
        return dims;
      }
      if (!std::isdigit(static_cast<unsigned char>(peek()))) {
        irdrop::detail::fail(ErrorKind::kFormat, "npy: malformed shape tuple");
      }
      std::size_t v = 0;
      while (std::isdigit(static_cast<unsigned char>(peek()))) {
        v = v * 10 + static_cast<std::size_t>(text_[pos_] - '0');
        ++pos_;
      }
      dims.push_back(v);
      skip_ws();
      if (peek() == ',') ++pos_;
    }
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline ArrayRecord read_npy(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    irdrop::detail::fail(ErrorKind::kFormat, "npy: bad magic string");
  }
  if (bytes[6] != 1 || bytes[7] != 0) {
    irdrop::detail::fail(ErrorKind::kUnsupported, "npy: unsupported format version " +
                                                      std::to_string(bytes[6]) + "." +
                                                      std::to_string(bytes[7]));
  }
  if (bytes.size() < kPrefixLen) irdrop::detail::fail(ErrorKind::kLength, "npy: truncated header");
  const std::size_t header_len = bytes[8] | (static_cast<std::size_t>(bytes[9]) << 8);
  if (bytes.size() < kPrefixLen + header_len) {
    irdrop::detail::fail(ErrorKind::kLength, "npy: truncated header");
  }
  const std::string_view text(reinterpret_cast<const char*>(bytes.data()) + kPrefixLen, header_len);

  ArrayRecord rec;
  rec.header = detail::HeaderParser(text).parse();
  if (rec.header.fortran_order) {
    irdrop::detail::fail(ErrorKind::kUnsupported, "npy: fortran_order arrays are not supported");
  }
  const std::size_t count = rec.header.element_count();
  const std::size_t payload = count * item_size(rec.header.dtype);
  const std::size_t offset = kPrefixLen + header_len;
  if (bytes.size() - offset != payload) {
    irdrop::detail::fail(ErrorKind::kLength, "npy: payload is " + std::to_string(bytes.size() - offset) +
                                                 " bytes, expected " + std::to_string(payload));
  }
  rec.data.resize(count);
  const std::uint8_t* src = bytes.data() + offset;
  if (rec.header.dtype == DType::kF8) {
    std::memcpy(rec.data.data(), src, payload);
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      float f;
      std::memcpy(&f, src + 4 * i, 4);
      rec.data[i] = f;
    }
  }
  return rec;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) irdrop::detail::fail(ErrorKind::kIo, "cannot open '" + path.string() + "' for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) irdrop::detail::fail(ErrorKind::kIo, "cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) irdrop::detail::fail(ErrorKind::kIo, "write failed for '" + path.string() + "'");
}

inline ArrayRecord load(const std::filesystem::path& path) {
  try {
    return read_npy(read_file(path));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kIo) throw;
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

inline void save(const std::filesystem::path& path, const ArrayRecord& rec, DType dtype) {
  write_file(path, write_npy(rec, dtype));
}

inline ArrayRecord from_grid(const Grid2D& g) {
  ArrayRecord rec;
  rec.header.shape = {g.height(), g.width()};
  rec.data.assign(g.values().begin(), g.values().end());
  return rec;
}

inline Grid2D to_grid(const ArrayRecord& rec) {
  if (rec.header.shape.size() != 2) {
    irdrop::detail::fail(ErrorKind::kShape, "expected a 2-D array, got " +
                                                std::to_string(rec.header.shape.size()) + " dims");
  }
  return Grid2D(rec.header.shape[0], rec.header.shape[1], rec.data);
}

// (N, H, W) stack of maps, one per sample.
inline ArrayRecord from_grids(std::span<const Grid2D> grids) {
  ArrayRecord rec;
  const std::size_t h = grids.empty() ? 0 : grids.front().height();
  const std::size_t w = grids.empty() ? 0 : grids.front().width();
  rec.header.shape = {grids.size(), h, w};
  rec.data.reserve(grids.size() * h * w);
  for (const auto& g : grids) {
    if (g.height() != h || g.width() != w) {
      irdrop::detail::fail(ErrorKind::kShape, "all maps in a stack must share one shape");
    }
    rec.data.insert(rec.data.end(), g.values().begin(), g.values().end());
  }
  return rec;
}

inline std::vector<Grid2D> to_grids(const ArrayRecord& rec) {
  const auto& s = rec.header.shape;
  if (s.size() == 2) return {to_grid(rec)};
  if (s.size() != 3) irdrop::detail::fail(ErrorKind::kShape, "expected an (N, H, W) array");
  std::vector<Grid2D> out;
  out.reserve(s[0]);
  const std::size_t plane = s[1] * s[2];
  for (std::size_t n = 0; n < s[0]; ++n) {
    auto first = rec.data.begin() + static_cast<std::ptrdiff_t>(n * plane);
    out.emplace_back(s[1], s[2], std::vector<double>(first, first + static_cast<std::ptrdiff_t>(plane)));
  }
  return out;
}

}  // namespace irdrop::npy
