#pragma once

#include <string>
#include <utility>
#include <vector>

#include "lttr/tensor.hpp"

namespace lttr {

// Layout: u64 rank, u64 extents[rank], little-endian doubles row-major.
void save_array(const std::string& path, const Shape& shape,
                const std::vector<double>& data);
std::pair<Shape, std::vector<double>> load_array(const std::string& path);

}  // namespace lttr
