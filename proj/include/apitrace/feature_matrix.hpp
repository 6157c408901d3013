#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace apitrace {

/// Dense row-major matrix of feature counts. Counts are stored as float; every
/// integer below 2^24 is exact, far above any per-sample call count.
class feature_matrix {
public:
  feature_matrix() = default;
  feature_matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0f) {}

  [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
  [[nodiscard]] std::size_t cols() const noexcept { return cols_; }

  [[nodiscard]] std::span<float> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  [[nodiscard]] std::span<const float> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  [[nodiscard]] float operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }
  float& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

} // namespace apitrace
