#include "lttr/array_io.hpp"

#include <cstdint>
#include <fstream>

namespace lttr {

void save_array(const std::string& path, const Shape& shape,
                const std::vector<double>& data) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    throw ShapeError("save_array: data length does not match " +
                     shape_str(shape));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  static_assert(sizeof(double) == 8);
  const uint64_t rank = shape.size();
  out.write(reinterpret_cast<const char*>(&rank), 8);
  for (int64_t d : shape) {
    const uint64_t ud = static_cast<uint64_t>(d);
    out.write(reinterpret_cast<const char*>(&ud), 8);
  }
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * 8));
  if (!out) throw IoError("write failed for " + path);
}

std::pair<Shape, std::vector<double>> load_array(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  uint64_t rank = 0;
  in.read(reinterpret_cast<char*>(&rank), 8);
  if (!in || rank > 16) throw IoError("bad array header in " + path);
  Shape shape(rank);
  for (uint64_t i = 0; i < rank; ++i) {
    uint64_t d = 0;
    in.read(reinterpret_cast<char*>(&d), 8);
    shape[i] = static_cast<int64_t>(d);
  }
  const int64_t n = shape_numel(shape);
  std::vector<double> data(n);
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(n * 8));
  if (!in) throw IoError("short read from " + path);
  return {std::move(shape), std::move(data)};
}

}  // namespace lttr
