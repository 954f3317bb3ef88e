#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace lact::harness {

// Minimal RGB8 PNG writer (zlib-compressed, filter 0).
void write_png(const std::string& path, const std::vector<uint8_t>& rgb, int width, int height);

}  // namespace lact::harness
