#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace itevar {

/// Dense row-major feature matrix.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  FeatureMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), values_(rows * cols) {}
  FeatureMatrix(std::size_t rows, std::size_t cols, std::vector<double> values)
      : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != rows_ * cols_) throw std::invalid_argument("FeatureMatrix: size mismatch");
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  double operator()(std::size_t i, std::size_t j) const noexcept { return values_[i * cols_ + j]; }
  double& operator()(std::size_t i, std::size_t j) noexcept { return values_[i * cols_ + j]; }

  std::span<const double> row(std::size_t i) const noexcept {
    return {values_.data() + i * cols_, cols_};
  }

  const std::vector<double>& values() const noexcept { return values_; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

/// What an estimator is allowed to see: features, binary treatment and outcome.
struct ObservedData {
  FeatureMatrix x;
  std::vector<double> a;
  std::vector<double> y;

  std::size_t size() const noexcept { return y.size(); }

  void check() const {
    if (x.rows() != y.size() || a.size() != y.size())
      throw std::invalid_argument("ObservedData: column lengths differ");
  }

  /// Rows selected by index (with repetition allowed), e.g. a bootstrap resample.
  ObservedData subset(std::span<const std::size_t> rows) const {
    ObservedData out;
    std::vector<double> values;
    values.reserve(rows.size() * x.cols());
    out.a.reserve(rows.size());
    out.y.reserve(rows.size());
    for (std::size_t r : rows) {
      const auto xr = x.row(r);
      values.insert(values.end(), xr.begin(), xr.end());
      out.a.push_back(a[r]);
      out.y.push_back(y[r]);
    }
    out.x = FeatureMatrix(rows.size(), x.cols(), std::move(values));
    return out;
  }
};

}  // namespace itevar
