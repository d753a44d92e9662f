#pragma once

#include <filesystem>
#include <vector>

#include "vilsum/tensor.hpp"

namespace vilsum {

/// Single-channel image, pixels row-major in [0,1].
struct ImageGrid {
  int h = 0;
  int w = 0;
  std::vector<float> pixels;

  ImageGrid() = default;
  ImageGrid(int h_, int w_) : h(h_), w(w_), pixels(static_cast<size_t>(h_) * w_, 0.0f) {}

  float& at(int r, int c) { return pixels[static_cast<size_t>(r) * w + c]; }
  float at(int r, int c) const { return pixels[static_cast<size_t>(r) * w + c]; }
};

/// Binary PGM (P5, maxval 255); pixel = byte/255.
ImageGrid read_pgm(const std::filesystem::path& path);
void write_pgm(const ImageGrid& img, const std::filesystem::path& path);

/// Splits the image into P x P patches, row-major over the patch grid; each
/// output row is the row-major flattening of one patch. Result: [HW/P², P²].
Tensor patchify(const ImageGrid& img, int patch);

/// Inverse of patchify for an h x w target; used to verify losslessness.
ImageGrid unpatchify(const Tensor& patches, int h, int w, int patch);

}  // namespace vilsum
