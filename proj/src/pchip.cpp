#include "nlid/pchip.hpp"

#include "nlid/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace nlid {

namespace {

double sign(double x) { return (x > 0.0) - (x < 0.0); }

// Non-centered three-point end slope, clipped to preserve shape.
double end_slope(double h0, double h1, double del0, double del1) {
  double d = ((2.0 * h0 + h1) * del0 - h0 * del1) / (h0 + h1);
  if (sign(d) != sign(del0)) {
    d = 0.0;
  } else if (sign(del0) != sign(del1) && std::abs(d) > std::abs(3.0 * del0)) {
    d = 3.0 * del0;
  }
  return d;
}

}  // namespace

Pchip::Pchip(std::vector<double> t, std::vector<double> v) : t_(std::move(t)), v_(std::move(v)) {
  const auto n = t_.size();
  if (n < 2 || v_.size() != n) throw DataError("pchip needs at least 2 knots with matching values");
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(t_[i]) || !std::isfinite(v_[i])) throw DataError("pchip: non-finite knot");
    if (i > 0 && !(t_[i] > t_[i - 1])) {
      throw DataError("pchip: knot times must be strictly increasing");
    }
  }
  std::vector<double> h(n - 1), del(n - 1);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    h[i] = t_[i + 1] - t_[i];
    del[i] = (v_[i + 1] - v_[i]) / h[i];
  }
  d_.assign(n, 0.0);
  if (n == 2) {
    d_[0] = d_[1] = del[0];
    return;
  }
  for (std::size_t k = 1; k + 1 < n; ++k) {
    if (sign(del[k - 1]) * sign(del[k]) > 0.0) {
      const double w1 = 2.0 * h[k] + h[k - 1];
      const double w2 = h[k] + 2.0 * h[k - 1];
      d_[k] = (w1 + w2) / (w1 / del[k - 1] + w2 / del[k]);
    }
  }
  d_[0] = end_slope(h[0], h[1], del[0], del[1]);
  d_[n - 1] = end_slope(h[n - 2], h[n - 3], del[n - 2], del[n - 3]);
}

std::size_t Pchip::interval(double t) const {
  if (!(t >= t_.front() && t <= t_.back())) {
    throw DataError("pchip: query " + std::to_string(t) + " outside knot range [" +
                    std::to_string(t_.front()) + ", " + std::to_string(t_.back()) + "]");
  }
  const auto it = std::upper_bound(t_.begin(), t_.end(), t);
  auto k = static_cast<std::size_t>(it - t_.begin());
  if (k == 0) k = 1;
  if (k >= t_.size()) k = t_.size() - 1;
  return k - 1;
}

double Pchip::operator()(double t) const {
  const auto k = interval(t);
  if (t == t_[k]) return v_[k];
  if (t == t_[k + 1]) return v_[k + 1];
  // local power form; exact on flat intervals
  const double h = t_[k + 1] - t_[k];
  const double del = (v_[k + 1] - v_[k]) / h;
  const double c = (3.0 * del - 2.0 * d_[k] - d_[k + 1]) / h;
  const double b = (d_[k] - 2.0 * del + d_[k + 1]) / (h * h);
  const double x = t - t_[k];
  return v_[k] + x * (d_[k] + x * (c + x * b));
}

double Pchip::derivative(double t) const {
  const auto k = interval(t);
  const double h = t_[k + 1] - t_[k];
  const double s = (t - t_[k]) / h;
  const double s2 = s * s;
  const double dh00 = (6.0 * s2 - 6.0 * s) / h;
  const double dh10 = 3.0 * s2 - 4.0 * s + 1.0;
  const double dh01 = (-6.0 * s2 + 6.0 * s) / h;
  const double dh11 = 3.0 * s2 - 2.0 * s;
  return dh00 * v_[k] + dh10 * d_[k] + dh01 * v_[k + 1] + dh11 * d_[k + 1];
}

double pchip_interpolate(std::span<const double> t, std::span<const double> v, double query) {
  return Pchip(std::vector<double>(t.begin(), t.end()), std::vector<double>(v.begin(), v.end()))(
      query);
}

}  // namespace nlid
