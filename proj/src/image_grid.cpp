#include "jointdiff/image_grid.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

namespace jointdiff {

std::uint8_t to_byte(float v) {
  const double b = std::round((static_cast<double>(v) + 1.0) * 127.5);
  return static_cast<std::uint8_t>(std::clamp(b, 0.0, 255.0));
}

std::vector<std::uint8_t> encode_image_grid(const Tensor& images, int columns) {
  if (images.rank() != 4) throw ContractViolation("image grid expects [N, C, H, W]");
  const int n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  if (c != 1 && c != 3) throw ContractViolation("image grid supports 1 or 3 channels");
  if (columns < 1) throw ContractViolation("image grid needs at least one column");
  const int cols = std::min(columns, n);
  const int rows = (n + cols - 1) / cols;
  const int gw = cols * w + (cols - 1);
  const int gh = rows * h + (rows - 1);
  constexpr std::uint8_t kSeparator = 128;

  const std::string header =
      std::string(c == 1 ? "P5" : "P6") + "\n" + std::to_string(gw) + " " + std::to_string(gh) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  const std::size_t body = header.size();
  out.resize(body + static_cast<std::size_t>(gw) * gh * c, kSeparator);

  auto v = images.data();
  for (int i = 0; i < n; ++i) {
    const int ox = (i % cols) * (w + 1);
    const int oy = (i / cols) * (h + 1);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int ch = 0; ch < c; ++ch) {
          const float val = v[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x];
          out[body + (static_cast<std::size_t>(oy + y) * gw + (ox + x)) * c + ch] = to_byte(val);
        }
  }
  return out;
}

void write_image_grid(const Tensor& images, int columns, const std::filesystem::path& path) {
  const auto bytes = encode_image_grid(images, columns);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace jointdiff
