#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "foamfed/raster.hpp"

namespace foamfed {

// Decodes PNG or JPEG bytes (sniffed by signature). Gray and RGB are kept;
// palette/alpha/16-bit PNG inputs are normalized to 8-bit gray or RGB.
// Throws std::runtime_error on undecodable input.
Image decode_image(const std::vector<uint8_t>& bytes);

Image load_image(const std::string& path);

// PNG encodings are byte-deterministic: fixed compression level, no ancillary
// chunks, so identical pixels yield identical files.
std::vector<uint8_t> encode_png(const Image& img);

// Written atomically (temp file + rename).
void save_png(const Image& img, const std::string& path);

// Masks are persisted as 8-bit gray PNG with values {0,255}.
void save_mask_png(const BinaryMask& mask, const std::string& path);

// Loads a gray/RGB image and binarizes at >127 (so {0,255} files become {0,1}).
BinaryMask load_mask_png(const std::string& path);

std::vector<uint8_t> read_file_bytes(const std::string& path);

// Single write + rename; readers never observe a partial file.
void write_file_atomic(const std::string& path, const void* data, size_t size);

}  // namespace foamfed
