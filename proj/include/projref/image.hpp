// Dense row-major scalar grids used for intensity images and phase maps.
#pragma once

#include <cassert>
#include <cstdint>
#include <vector>

namespace projref {

template <typename T>
struct Grid {
  int width = 0;
  int height = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(int w, int h, T fill = T{}) : width(w), height(h), data(size_t(w) * h, fill) {}

  T& at(int x, int y) {
    assert(x >= 0 && x < width && y >= 0 && y < height);
    return data[size_t(y) * width + x];
  }
  const T& at(int x, int y) const {
    assert(x >= 0 && x < width && y >= 0 && y < height);
    return data[size_t(y) * width + x];
  }
  bool in_bounds(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
  size_t size() const { return data.size(); }
  bool same_shape(int w, int h) const { return width == w && height == h; }
};

using ImageF = Grid<double>;     // intensity in [0,1] or phase in radians
using GridI = Grid<int32_t>;     // fringe orders
using GridU8 = Grid<uint8_t>;    // flags / reason codes

}  // namespace projref
