#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace arcflow {

/// A batch of points in R^D stored row-major.
struct Points {
  std::size_t dim = 0;
  std::vector<double> data;

  Points() = default;
  Points(std::size_t count, std::size_t dim) : dim(dim), data(count * dim, 0.0) {}

  std::size_t size() const { return dim == 0 ? 0 : data.size() / dim; }
  std::span<double> row(std::size_t i) { return std::span<double>(data).subspan(i * dim, dim); }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(data).subspan(i * dim, dim);
  }
};

} // namespace arcflow
