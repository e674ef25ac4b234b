#pragma once

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <stdexcept>

namespace sbmre {

/// Periodic box [-L/2, L/2)^d split into `cells` cells per axis. Cell i on an
/// axis is represented by the point -L/2 + i*h, so the origin is a grid point
/// when `cells` is even. Linear indices run with axis 0 fastest.
struct Grid {
  int dim = 1;
  Eigen::Index cells = 0;
  double extent = 1.0;

  Grid() = default;
  Grid(int d, Eigen::Index n, double L) : dim(d), cells(n), extent(L) {
    if (d < 1 || d > 3) throw std::invalid_argument("Grid: dimension must be 1, 2 or 3");
    if (n < 2) throw std::invalid_argument("Grid: need at least 2 cells per axis");
    if (!(L > 0.0)) throw std::invalid_argument("Grid: extent must be positive");
  }

  double spacing() const { return extent / static_cast<double>(cells); }
  double cell_volume() const { return std::pow(spacing(), dim); }
  double volume() const { return std::pow(extent, dim); }

  Eigen::Index size() const {
    Eigen::Index s = 1;
    for (int k = 0; k < dim; ++k) s *= cells;
    return s;
  }

  double coordinate(Eigen::Index i) const { return -0.5 * extent + static_cast<double>(i) * spacing(); }

  Eigen::VectorXd point(Eigen::Index linear) const {
    Eigen::VectorXd x(dim);
    for (int k = 0; k < dim; ++k) {
      x[k] = coordinate(linear % cells);
      linear /= cells;
    }
    return x;
  }

  /// Cell whose representative point is nearest to x (periodic wrap).
  Eigen::Index nearest(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    if (x.size() != dim) throw std::invalid_argument("Grid::nearest: dimension mismatch");
    Eigen::Index linear = 0, stride = 1;
    for (int k = 0; k < dim; ++k) {
      auto i = static_cast<Eigen::Index>(std::llround((x[k] + 0.5 * extent) / spacing()));
      i = ((i % cells) + cells) % cells;
      linear += i * stride;
      stride *= cells;
    }
    return linear;
  }

  /// Matrix of representative points, one column per cell.
  Eigen::MatrixXd points() const {
    Eigen::MatrixXd pts(dim, size());
    for (Eigen::Index j = 0; j < size(); ++j) pts.col(j) = point(j);
    return pts;
  }

  friend bool operator==(const Grid& a, const Grid& b) {
    return a.dim == b.dim && a.cells == b.cells && a.extent == b.extent;
  }
};

/// Real values on a periodic grid. Values are an Eigen array, so the usual
/// coefficient-wise expressions apply through values().
template <typename Scalar = double>
class GridFunction {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  GridFunction() = default;
  explicit GridFunction(const Grid& grid, Scalar fill = Scalar(0))
      : grid_(grid), values_(Array::Constant(grid.size(), fill)) {}
  GridFunction(const Grid& grid, Array values) : grid_(grid), values_(std::move(values)) {
    if (values_.size() != grid_.size()) throw std::invalid_argument("GridFunction: value count does not match grid");
  }

  static GridFunction from_function(const Grid& grid, const std::function<Scalar(const Eigen::VectorXd&)>& fn) {
    GridFunction g(grid);
    for (Eigen::Index j = 0; j < grid.size(); ++j) g.values_[j] = fn(grid.point(j));
    return g;
  }

  const Grid& grid() const { return grid_; }
  Array& values() { return values_; }
  const Array& values() const { return values_; }
  Eigen::Index size() const { return values_.size(); }
  Scalar& operator[](Eigen::Index i) { return values_[i]; }
  Scalar operator[](Eigen::Index i) const { return values_[i]; }

  GridFunction& operator+=(const GridFunction& o) { check_shape(o); values_ += o.values_; return *this; }
  GridFunction& operator-=(const GridFunction& o) { check_shape(o); values_ -= o.values_; return *this; }
  GridFunction& operator*=(Scalar s) { values_ *= s; return *this; }

  friend GridFunction operator+(GridFunction a, const GridFunction& b) { return a += b; }
  friend GridFunction operator-(GridFunction a, const GridFunction& b) { return a -= b; }
  friend GridFunction operator*(GridFunction a, Scalar s) { return a *= s; }
  friend GridFunction operator*(Scalar s, GridFunction a) { return a *= s; }

  void check_shape(const GridFunction& o) const {
    if (!(grid_ == o.grid_) || values_.size() != o.values_.size())
      throw std::invalid_argument("GridFunction: operand shapes differ");
  }

 private:
  Grid grid_;
  Array values_;
};

/// h^d * sum of values.
template <typename Scalar>
Scalar integral(const GridFunction<Scalar>& f) {
  return static_cast<Scalar>(f.grid().cell_volume()) * f.values().sum();
}

template <typename Scalar>
Scalar sup_norm(const GridFunction<Scalar>& f) {
  return f.values().abs().maxCoeff();
}

template <typename Scalar>
Scalar l2_norm(const GridFunction<Scalar>& f) {
  return std::sqrt(static_cast<Scalar>(f.grid().cell_volume()) * f.values().square().sum());
}

}  // namespace sbmre
