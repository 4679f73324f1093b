#pragma once

#include <cstddef>
#include <vector>

#include "driftcomp/model.hpp"

namespace driftcomp {

// Dense C x H x W activation, channel-planar and row-major.
template <typename T>
struct FeatureMap {
  Shape shape;
  std::vector<T> data;

  FeatureMap() = default;
  explicit FeatureMap(Shape s) : shape(s), data(s.size(), T(0)) {}
  FeatureMap(Shape s, std::vector<T> values) : shape(s), data(std::move(values)) {}

  void reset(Shape s) {
    shape = s;
    data.assign(s.size(), T(0));
  }
  T& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * shape.h + y) * shape.w + x]; }
  const T& at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * shape.h + y) * shape.w + x];
  }
};

}  // namespace driftcomp
