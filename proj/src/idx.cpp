#include <array>
#include <cstdint>
#include <fstream>
#include <iterator>

#include "fedpac/data.hpp"

namespace fedpac::data {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError("cannot open IDX file " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& bytes, std::size_t offset, const std::filesystem::path& path) {
  if (bytes.size() < offset + 4) throw IdxLengthError("IDX header truncated in " + path.string());
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

}  // namespace

std::vector<Sample> read_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto img = slurp(images);
  const auto lab = slurp(labels);

  if (be32(img, 0, images) != kImageMagic) throw IdxFormatError("bad image magic in " + images.string());
  if (be32(lab, 0, labels) != kLabelMagic) throw IdxFormatError("bad label magic in " + labels.string());

  const std::size_t n_images = be32(img, 4, images);
  const std::size_t rows = be32(img, 8, images);
  const std::size_t cols = be32(img, 12, images);
  const std::size_t n_labels = be32(lab, 4, labels);
  if (n_images != n_labels) {
    throw IdxConsistencyError("image count " + std::to_string(n_images) + " does not match label count " +
                              std::to_string(n_labels));
  }

  const std::size_t pixels = rows * cols;
  if (img.size() < 16 + n_images * pixels) throw IdxLengthError("image payload truncated in " + images.string());
  if (lab.size() < 8 + n_labels) throw IdxLengthError("label payload truncated in " + labels.string());

  std::vector<Sample> out(n_images);
  for (std::size_t i = 0; i < n_images; ++i) {
    out[i].x.resize(pixels);
    const unsigned char* src = img.data() + 16 + i * pixels;
    for (std::size_t p = 0; p < pixels; ++p) out[i].x[p] = static_cast<double>(src[p]) / 255.0;
    out[i].y = lab[8 + i];
  }
  return out;
}

}  // namespace fedpac::data
