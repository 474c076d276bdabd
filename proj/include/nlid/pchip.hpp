#pragma once

#include <Eigen/Dense>

#include <span>
#include <vector>

namespace nlid {

/// Shape-preserving piecewise cubic Hermite interpolant (Fritsch-Carlson
/// slopes with the three-point end conditions used by MATLAB's pchip).
///
/// Matches the knot values exactly, is C1, and is monotone on every
/// interval where the data are monotone. Queries outside the knot range
/// are refused.
class Pchip {
 public:
  Pchip(std::vector<double> t, std::vector<double> v);

  double operator()(double t) const;
  double derivative(double t) const;

  double lower() const { return t_.front(); }
  double upper() const { return t_.back(); }
  const std::vector<double>& slopes() const { return d_; }

 private:
  std::size_t interval(double t) const;

  std::vector<double> t_;
  std::vector<double> v_;
  std::vector<double> d_;
};

double pchip_interpolate(std::span<const double> t, std::span<const double> v, double query);

}  // namespace nlid
