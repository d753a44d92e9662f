#include "vilsum/image.hpp"

#include <cmath>
#include <fstream>

#include "vilsum/errors.hpp"

namespace vilsum {

namespace {

// Reads one PGM header field, skipping whitespace and '#' comment lines.
int read_header_int(std::istream& in, const std::filesystem::path& path) {
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
    } else if (!std::isspace(c)) {
      break;
    }
  }
  if (c == EOF) throw IoError("truncated PGM header: " + path.string());
  int value = 0;
  bool any = false;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    any = true;
    c = in.get();
  }
  if (!any) throw IoError("malformed PGM header: " + path.string());
  return value;
}

}  // namespace

ImageGrid read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image file: " + path.string());
  char magic[2];
  if (!in.read(magic, 2) || magic[0] != 'P' || magic[1] != '5') {
    throw IoError("not a binary PGM (P5) file: " + path.string());
  }
  int w = read_header_int(in, path);
  int h = read_header_int(in, path);
  int maxval = read_header_int(in, path);
  if (w <= 0 || h <= 0) throw IoError("bad PGM dimensions in " + path.string());
  if (maxval != 255) throw IoError("PGM maxval must be 255 in " + path.string());
  // read_header_int consumed the single whitespace after maxval.
  std::vector<unsigned char> bytes(static_cast<size_t>(w) * h);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw IoError("truncated PGM pixel data: " + path.string());
  }
  ImageGrid img(h, w);
  for (size_t i = 0; i < bytes.size(); ++i) img.pixels[i] = bytes[i] / 255.0f;
  return img;
}

void write_pgm(const ImageGrid& img, const std::filesystem::path& path) {
  if (img.h <= 0 || img.w <= 0 || img.pixels.size() != static_cast<size_t>(img.h) * img.w) {
    throw ContractError("write_pgm: inconsistent image dimensions");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image file: " + path.string());
  out << "P5\n" << img.w << " " << img.h << "\n255\n";
  std::vector<unsigned char> bytes(img.pixels.size());
  for (size_t i = 0; i < bytes.size(); ++i) {
    float v = std::min(1.0f, std::max(0.0f, img.pixels[i]));
    bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing image file: " + path.string());
}

Tensor patchify(const ImageGrid& img, int patch) {
  if (patch <= 0) throw ShapeError("patchify: patch size must be positive");
  if (img.h % patch != 0 || img.w % patch != 0) {
    throw ShapeError("patchify: image " + std::to_string(img.h) + "x" + std::to_string(img.w) +
                     " not divisible by patch size " + std::to_string(patch));
  }
  int rows = img.h / patch;
  int cols = img.w / patch;
  Tensor out({rows * cols, patch * patch});
  int n = 0;
  for (int pr = 0; pr < rows; ++pr) {
    for (int pc = 0; pc < cols; ++pc, ++n) {
      int k = 0;
      for (int r = 0; r < patch; ++r) {
        for (int c = 0; c < patch; ++c, ++k) {
          out.at(n, k) = img.at(pr * patch + r, pc * patch + c);
        }
      }
    }
  }
  return out;
}

ImageGrid unpatchify(const Tensor& patches, int h, int w, int patch) {
  if (patch <= 0 || h % patch != 0 || w % patch != 0) {
    throw ShapeError("unpatchify: dimensions not divisible by patch size");
  }
  int rows = h / patch;
  int cols = w / patch;
  if (patches.rank() != 2 || patches.rows() != rows * cols || patches.cols() != patch * patch) {
    throw ShapeError("unpatchify: patch tensor " + patches.shape_str() + " does not match " +
                     std::to_string(h) + "x" + std::to_string(w) + " with patch " +
                     std::to_string(patch));
  }
  ImageGrid img(h, w);
  int n = 0;
  for (int pr = 0; pr < rows; ++pr) {
    for (int pc = 0; pc < cols; ++pc, ++n) {
      int k = 0;
      for (int r = 0; r < patch; ++r) {
        for (int c = 0; c < patch; ++c, ++k) {
          img.at(pr * patch + r, pc * patch + c) = patches.at(n, k);
        }
      }
    }
  }
  return img;
}

}  // namespace vilsum
