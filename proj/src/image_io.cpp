// Copyright 2026 The SeMask-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "semask/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace semask {

namespace {

struct PngReader {
  png_image image;
  explicit PngReader(const std::string& path) {
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) {
      throw ImageIoError("cannot decode '" + path + "': " + image.message);
    }
  }
  ~PngReader() { png_image_free(&image); }
  PngReader(const PngReader&) = delete;
  PngReader& operator=(const PngReader&) = delete;

  std::vector<std::uint8_t> finish(const std::string& path, png_uint_32 format) {
    image.format = format;
    std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
      throw ImageIoError("cannot decode '" + path + "': " + image.message);
    }
    return buffer;
  }
};

void write_png(const std::string& path, Index height, Index width, png_uint_32 format,
               const std::vector<std::uint8_t>& buffer) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;
  if (!png_image_write_to_file(&image, path.c_str(), 0, buffer.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw ImageIoError("cannot write '" + path + "': " + msg);
  }
  png_image_free(&image);
}

}  // namespace

Image Image::zeros(Index height, Index width, Index channels) {
  Image out;
  out.height = height;
  out.width = width;
  out.channels = channels;
  out.pixels.assign(static_cast<std::size_t>(height * width * channels), 0.0f);
  return out;
}

LabelMap LabelMap::filled(Index height, Index width, std::int32_t value) {
  LabelMap out;
  out.height = height;
  out.width = width;
  out.labels.assign(static_cast<std::size_t>(height * width), value);
  return out;
}

Image read_png_rgb(const std::string& path) {
  PngReader reader(path);
  const std::vector<std::uint8_t> raw = reader.finish(path, PNG_FORMAT_RGB);
  Image out = Image::zeros(reader.image.height, reader.image.width, 3);
  for (std::size_t i = 0; i < raw.size(); ++i) out.pixels[i] = static_cast<float>(raw[i]) / 255.0f;
  return out;
}

LabelMap read_png_labels(const std::string& path) {
  PngReader reader(path);
  if (reader.image.format & (PNG_FORMAT_FLAG_COLOR | PNG_FORMAT_FLAG_COLORMAP)) {
    throw ImageIoError("mask '" + path + "' is not a single-channel image");
  }
  const std::vector<std::uint8_t> raw = reader.finish(path, PNG_FORMAT_GRAY);
  LabelMap out = LabelMap::filled(reader.image.height, reader.image.width, 0);
  std::copy(raw.begin(), raw.end(), out.labels.begin());
  return out;
}

void write_png_rgb(const std::string& path, const Image& image) {
  if (image.channels != 3) throw ImageIoError("write_png_rgb: image has " +
                                              std::to_string(image.channels) + " channels");
  std::vector<std::uint8_t> buffer(image.pixels.size());
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    const float v = std::clamp(image.pixels[i], 0.0f, 1.0f);
    buffer[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  write_png(path, image.height, image.width, PNG_FORMAT_RGB, buffer);
}

void write_png_gray(const std::string& path, Index height, Index width,
                    const std::vector<std::uint8_t>& values) {
  if (static_cast<Index>(values.size()) != height * width) {
    throw ImageIoError("write_png_gray: " + std::to_string(values.size()) + " values for " +
                       std::to_string(height) + "x" + std::to_string(width));
  }
  write_png(path, height, width, PNG_FORMAT_GRAY, values);
}

void write_png_labels(const std::string& path, const LabelMap& labels) {
  std::vector<std::uint8_t> buffer(labels.labels.size());
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    const std::int32_t v = labels.labels[i];
    if (v < 0 || v > 255) throw ImageIoError("write_png_labels: label " + std::to_string(v) +
                                             " does not fit in 8 bits");
    buffer[i] = static_cast<std::uint8_t>(v);
  }
  write_png(path, labels.height, labels.width, PNG_FORMAT_GRAY, buffer);
}

}  // namespace semask
