// Copyright 2026 The SeMask-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "semask/tensor.hpp"

namespace semask {

/// Row-major, channel-last float image. Values are in [0, 1] unless noted.
struct Image {
  Index height = 0;
  Index width = 0;
  Index channels = 3;
  std::vector<float> pixels;

  static Image zeros(Index height, Index width, Index channels = 3);
  float& at(Index h, Index w, Index c) { return pixels[static_cast<std::size_t>((h * width + w) * channels + c)]; }
  float at(Index h, Index w, Index c) const {
    return pixels[static_cast<std::size_t>((h * width + w) * channels + c)];
  }
  bool operator==(const Image&) const = default;
};

struct LabelMap {
  Index height = 0;
  Index width = 0;
  std::vector<std::int32_t> labels;

  static LabelMap filled(Index height, Index width, std::int32_t value);
  std::int32_t& at(Index h, Index w) { return labels[static_cast<std::size_t>(h * width + w)]; }
  std::int32_t at(Index h, Index w) const { return labels[static_cast<std::size_t>(h * width + w)]; }
  bool operator==(const LabelMap&) const = default;
};

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 8-bit RGB (grey and palette files are expanded).
Image read_png_rgb(const std::string& path);
/// 8-bit single-channel indices; colour files are rejected.
LabelMap read_png_labels(const std::string& path);

/// Values are clamped to [0, 1] and rounded to 8 bits.
void write_png_rgb(const std::string& path, const Image& image);
void write_png_gray(const std::string& path, Index height, Index width,
                    const std::vector<std::uint8_t>& values);
void write_png_labels(const std::string& path, const LabelMap& labels);

}  // namespace semask
