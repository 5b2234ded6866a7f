#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "b2w/raster.hpp"

namespace b2w {

using Gray16 = Raster<std::uint16_t>;

// "B2WD" depth raster: magic, u32 width, u32 height, u32 reserved (0), then
// width*height little-endian float32 values, row-major. +inf marks no hit.
std::string encode_depth_binary(const DepthMap& depth);
DepthMap decode_depth_binary(std::string_view bytes);

// Millimetres, rounded, saturating at 65535; +inf maps to 0 and back.
Gray16 depth_to_millimeters(const DepthMap& depth);
DepthMap depth_from_millimeters(const Gray16& mm);
// 0 = none, index + 1 otherwise.
Gray16 ids_to_gray16(const IdBuffer& ids);

std::string encode_png_gray16(const Gray16& raster);
Gray16 decode_png_gray16(std::string_view bytes);
std::string encode_png_rgb(const Image& image);
// Accepts gray/RGB/RGBA at 8 or 16 bits; alpha is dropped.
Image decode_png_rgb(std::string_view bytes);
// 1-bit grayscale PNG.
std::string encode_png_mask(const Mask& mask);
// Any nonzero sample is set.
Mask decode_png_mask(std::string_view bytes);

std::string base64_encode(std::string_view bytes);
// Strict standard alphabet with padding; throws Errc::parse_error otherwise.
std::string base64_decode(std::string_view text);

std::string read_file(const std::filesystem::path& path);
// Writes to a sibling temporary, fsyncs, renames over `path`, fsyncs the directory.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
void write_file(const std::filesystem::path& path, std::string_view bytes);

// Loads a depth raster from a B2WD file or a 16-bit millimetre PNG.
DepthMap read_depth_file(const std::filesystem::path& path);

}  // namespace b2w
