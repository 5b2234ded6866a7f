#include "b2w/raster_io.hpp"

#include <fcntl.h>
#include <png.h>
#include <sodium.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

#include "b2w/error.hpp"

namespace b2w {
namespace {

constexpr const char* kModule = "raster_io";
constexpr char kDepthMagic[4] = {'B', '2', 'W', 'D'};
constexpr std::size_t kDepthHeader = 16;

[[noreturn]] void fail(Errc code, const std::string& message) { throw Error(kModule, code, message); }

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(std::string_view in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

// libpng reports errors through longjmp; the state lives on the heap so that
// nothing the handler touches is an automatic variable modified after setjmp.
struct PngState {
  std::string_view input;
  std::size_t cursor = 0;
  std::string* output = nullptr;
  std::string error;
  std::jmp_buf jump;
};

void png_error_fn(png_structp png, png_const_charp msg) {
  auto* st = static_cast<PngState*>(png_get_error_ptr(png));
  st->error = msg;
  std::longjmp(st->jump, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

void png_read_fn(png_structp png, png_bytep data, png_size_t length) {
  auto* st = static_cast<PngState*>(png_get_io_ptr(png));
  if (st->cursor + length > st->input.size()) png_error(png, "unexpected end of PNG data");
  std::memcpy(data, st->input.data() + st->cursor, length);
  st->cursor += length;
}

void png_write_fn(png_structp png, png_bytep data, png_size_t length) {
  auto* st = static_cast<PngState*>(png_get_io_ptr(png));
  st->output->append(reinterpret_cast<const char*>(data), length);
}

void png_flush_fn(png_structp) {}

// Writes rows of `row_bytes` each; `rows` points at height contiguous rows.
std::string write_png(int width, int height, int bit_depth, int color_type, const std::uint8_t* rows,
                      std::size_t row_bytes, bool swap16) {
  std::string out;
  auto st = std::make_unique<PngState>();
  st->output = &out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, st.get(), png_error_fn, png_warning_fn);
  if (!png) fail(Errc::io_error, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(st->jump)) {
    png_destroy_write_struct(&png, &info);
    fail(Errc::io_error, "PNG encode failed: " + st->error);
  }
  png_set_write_fn(png, st.get(), png_write_fn, png_flush_fn);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (swap16 && std::endian::native == std::endian::little) png_set_swap(png);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(rows + static_cast<std::size_t>(y) * row_bytes));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

struct DecodedPng {
  int width = 0;
  int height = 0;
  int channels = 0;
  int bit_depth = 0;
  int color_type = 0;
  std::vector<std::uint8_t> pixels;  // native-endian samples after transforms
};

enum class PngTarget { gray16, rgb8, gray8 };

void read_png_into(DecodedPng* out, std::string_view bytes, PngTarget target) {
  if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0) {
    fail(Errc::parse_error, "not a PNG stream");
  }
  auto st = std::make_unique<PngState>();
  st->input = bytes;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, st.get(), png_error_fn, png_warning_fn);
  if (!png) fail(Errc::io_error, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(st->jump)) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(Errc::parse_error, "PNG decode failed: " + st->error);
  }
  png_set_read_fn(png, st.get(), png_read_fn);
  png_read_info(png, info);
  out->width = static_cast<int>(png_get_image_width(png, info));
  out->height = static_cast<int>(png_get_image_height(png, info));
  out->bit_depth = png_get_bit_depth(png, info);
  out->color_type = png_get_color_type(png, info);
  if (target == PngTarget::gray16) {
    if (out->color_type != PNG_COLOR_TYPE_GRAY || out->bit_depth != 16) {
      png_error(png, "expected a 16-bit grayscale PNG");
    }
    if (std::endian::native == std::endian::little) png_set_swap(png);
  } else {
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    if (target == PngTarget::rgb8) {
      png_set_gray_to_rgb(png);
    } else if (out->color_type & PNG_COLOR_MASK_COLOR) {
      png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    }
  }
  png_read_update_info(png, info);
  out->channels = png_get_channels(png, info);
  const std::size_t row_bytes = png_get_rowbytes(png, info);
  out->pixels.assign(row_bytes * static_cast<std::size_t>(out->height), 0);
  for (int y = 0; y < out->height; ++y) png_read_row(png, out->pixels.data() + row_bytes * static_cast<std::size_t>(y), nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
}

}  // namespace

void validate_depth(const DepthMap& depth) {
  if (depth.size() != static_cast<std::size_t>(depth.width) * static_cast<std::size_t>(depth.height)) {
    fail(Errc::dimension_mismatch, "depth raster size does not match its dimensions");
  }
  for (double d : depth.data) {
    if (!(d > 0.0)) fail(Errc::invalid_argument, "depth values must be positive or +inf");
  }
}

std::size_t count_set(const Mask& mask) {
  return static_cast<std::size_t>(std::count_if(mask.data.begin(), mask.data.end(), [](std::uint8_t m) { return m != 0; }));
}

Mask mask_union(const Mask& a, const Mask& b) {
  if (!a.same_shape(b)) fail(Errc::dimension_mismatch, "mask union of differently sized masks");
  Mask out(a.width, a.height);
  for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = (a.data[i] || b.data[i]) ? 1 : 0;
  return out;
}

Mask dilate(const Mask& mask, int margin) {
  if (margin < 0) fail(Errc::invalid_argument, "dilation margin must be non-negative");
  if (margin == 0) return mask;
  Mask rows(mask.width, mask.height);
  for (int v = 0; v < mask.height; ++v) {
    for (int u = 0; u < mask.width; ++u) {
      if (!mask.at(u, v)) continue;
      for (int du = std::max(0, u - margin); du <= std::min(mask.width - 1, u + margin); ++du) rows.at(du, v) = 1;
    }
  }
  Mask out(mask.width, mask.height);
  for (int v = 0; v < mask.height; ++v) {
    for (int u = 0; u < mask.width; ++u) {
      if (!rows.at(u, v)) continue;
      for (int dv = std::max(0, v - margin); dv <= std::min(mask.height - 1, v + margin); ++dv) out.at(u, dv) = 1;
    }
  }
  return out;
}

std::string encode_depth_binary(const DepthMap& depth) {
  std::string out;
  out.reserve(kDepthHeader + depth.size() * 4);
  out.append(kDepthMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(depth.width));
  put_u32(out, static_cast<std::uint32_t>(depth.height));
  put_u32(out, 0);
  for (double d : depth.data) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(d)));
  return out;
}

DepthMap decode_depth_binary(std::string_view bytes) {
  if (bytes.size() < kDepthHeader) fail(Errc::truncated, "depth raster shorter than its 16-byte header");
  if (std::memcmp(bytes.data(), kDepthMagic, 4) != 0) fail(Errc::parse_error, "depth raster has bad magic (expected B2WD)");
  const std::uint32_t w = get_u32(bytes, 4);
  const std::uint32_t h = get_u32(bytes, 8);
  if (w == 0 || h == 0 || w > 65535 || h > 65535) {
    fail(Errc::dimension_mismatch, "depth raster header fields width/height are invalid: " + std::to_string(w) + "x" +
                                       std::to_string(h));
  }
  if (get_u32(bytes, 12) != 0) fail(Errc::parse_error, "depth raster header field reserved must be 0");
  const std::size_t expected = kDepthHeader + static_cast<std::size_t>(w) * h * 4;
  if (bytes.size() < expected) {
    fail(Errc::truncated, "depth raster payload has " + std::to_string(bytes.size()) + " bytes; header fields width/height (" +
                              std::to_string(w) + "x" + std::to_string(h) + ") declare " + std::to_string(expected));
  }
  if (bytes.size() > expected) {
    fail(Errc::dimension_mismatch, "depth raster payload has " + std::to_string(bytes.size()) +
                                       " bytes; header fields width/height (" + std::to_string(w) + "x" +
                                       std::to_string(h) + ") declare " + std::to_string(expected));
  }
  DepthMap depth(static_cast<int>(w), static_cast<int>(h));
  for (std::size_t i = 0; i < depth.size(); ++i) {
    depth.data[i] = static_cast<double>(std::bit_cast<float>(get_u32(bytes, kDepthHeader + 4 * i)));
  }
  validate_depth(depth);
  return depth;
}

Gray16 depth_to_millimeters(const DepthMap& depth) {
  Gray16 out(depth.width, depth.height);
  for (std::size_t i = 0; i < depth.size(); ++i) {
    const double d = depth.data[i];
    if (!std::isfinite(d)) continue;
    out.data[i] = static_cast<std::uint16_t>(std::clamp(std::round(d * 1000.0), 0.0, 65535.0));
  }
  return out;
}

DepthMap depth_from_millimeters(const Gray16& mm) {
  DepthMap out(mm.width, mm.height, kNoHit);
  for (std::size_t i = 0; i < mm.size(); ++i) {
    if (mm.data[i] != 0) out.data[i] = mm.data[i] / 1000.0;
  }
  return out;
}

Gray16 ids_to_gray16(const IdBuffer& ids) {
  Gray16 out(ids.width, ids.height);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids.data[i] != kNoPrimitive) out.data[i] = static_cast<std::uint16_t>(ids.data[i] + 1);
  }
  return out;
}

std::string encode_png_gray16(const Gray16& raster) {
  return write_png(raster.width, raster.height, 16, PNG_COLOR_TYPE_GRAY,
                   reinterpret_cast<const std::uint8_t*>(raster.data.data()), static_cast<std::size_t>(raster.width) * 2,
                   true);
}

Gray16 decode_png_gray16(std::string_view bytes) {
  DecodedPng png;
  read_png_into(&png, bytes, PngTarget::gray16);
  Gray16 out(png.width, png.height);
  std::memcpy(out.data.data(), png.pixels.data(), out.size() * 2);
  return out;
}

std::string encode_png_rgb(const Image& image) {
  return write_png(image.width, image.height, 8, PNG_COLOR_TYPE_RGB, image.rgb.data(),
                   static_cast<std::size_t>(image.width) * 3, false);
}

Image decode_png_rgb(std::string_view bytes) {
  DecodedPng png;
  read_png_into(&png, bytes, PngTarget::rgb8);
  if (png.channels != 3) fail(Errc::parse_error, "PNG did not decode to RGB");
  Image out(png.width, png.height);
  out.rgb = std::move(png.pixels);
  return out;
}

std::string encode_png_mask(const Mask& mask) {
  const std::size_t row_bytes = (static_cast<std::size_t>(mask.width) + 7) / 8;
  std::vector<std::uint8_t> packed(row_bytes * static_cast<std::size_t>(mask.height), 0);
  for (int v = 0; v < mask.height; ++v) {
    for (int u = 0; u < mask.width; ++u) {
      if (mask.at(u, v)) packed[static_cast<std::size_t>(v) * row_bytes + u / 8] |= static_cast<std::uint8_t>(0x80u >> (u % 8));
    }
  }
  return write_png(mask.width, mask.height, 1, PNG_COLOR_TYPE_GRAY, packed.data(), row_bytes, false);
}

Mask decode_png_mask(std::string_view bytes) {
  DecodedPng png;
  read_png_into(&png, bytes, PngTarget::gray8);
  Mask out(png.width, png.height);
  const std::size_t stride = static_cast<std::size_t>(png.channels);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = png.pixels[i * stride] != 0 ? 1 : 0;
  return out;
}

std::string base64_encode(std::string_view bytes) {
  const std::size_t len = sodium_base64_encoded_len(bytes.size(), sodium_base64_VARIANT_ORIGINAL);
  std::string out(len, '\0');
  sodium_bin2base64(out.data(), len, reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(),
                    sodium_base64_VARIANT_ORIGINAL);
  out.resize(len - 1);  // drop the terminating NUL
  return out;
}

std::string base64_decode(std::string_view text) {
  std::string out(text.size() / 4 * 3 + 3, '\0');
  std::size_t written = 0;
  const char* end = nullptr;
  if (sodium_base642bin(reinterpret_cast<unsigned char*>(out.data()), out.size(), text.data(), text.size(), nullptr,
                        &written, &end, sodium_base64_VARIANT_ORIGINAL) != 0 ||
      end != text.data() + text.size()) {
    fail(Errc::parse_error, "invalid base64 payload");
  }
  out.resize(written);
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io_error, "cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::io_error, "cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(Errc::io_error, "short write to '" + path.string() + "'");
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  static std::atomic<unsigned> counter{0};
  const std::filesystem::path tmp =
      path.string() + ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter.fetch_add(1));
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) fail(Errc::io_error, "cannot create '" + tmp.string() + "': " + std::strerror(errno));
  std::size_t done = 0;
  while (done < bytes.size()) {
    const ssize_t n = ::write(fd, bytes.data() + done, bytes.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      ::close(fd);
      fail(Errc::io_error, "write to '" + tmp.string() + "' failed: " + std::strerror(errno));
    }
    done += static_cast<std::size_t>(n);
  }
  if (::fsync(fd) != 0 || ::close(fd) != 0) fail(Errc::io_error, "fsync of '" + tmp.string() + "' failed");
  if (::rename(tmp.c_str(), path.c_str()) != 0) {
    fail(Errc::io_error, "rename to '" + path.string() + "' failed: " + std::strerror(errno));
  }
  const std::filesystem::path dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  const int dfd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY | O_CLOEXEC);
  if (dfd >= 0) {
    ::fsync(dfd);
    ::close(dfd);
  }
}

DepthMap read_depth_file(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() >= 8 && png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) == 0) {
    return depth_from_millimeters(decode_png_gray16(bytes));
  }
  return decode_depth_binary(bytes);
}

}  // namespace b2w
