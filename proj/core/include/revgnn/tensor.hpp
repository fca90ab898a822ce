#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <initializer_list>
#include <type_traits>
#include <utility>
#include <vector>

#include "revgnn/common.hpp"
#include "revgnn/meter.hpp"

namespace revgnn {

// Dense row-major matrix. Allocation and deallocation report to the
// thread-local MemoryMeter when one is attached, so the byte ledger tracks
// real buffer lifetimes without manual bookkeeping.
template <class T>
class Mat {
 public:
  Mat() = default;

  Mat(index_t rows, index_t cols) : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows * cols)) {
    track();
  }

  Mat(index_t rows, index_t cols, std::initializer_list<T> vals)
      : rows_(rows), cols_(cols), data_(vals) {
    require(static_cast<index_t>(data_.size()) == rows * cols, "Mat: initializer size mismatch");
    track();
  }

  ~Mat() { untrack(); }

  Mat(const Mat& other) : rows_(other.rows_), cols_(other.cols_), data_(other.data_) { track(); }

  Mat& operator=(const Mat& other) {
    if (this != &other) {
      untrack();
      rows_ = other.rows_;
      cols_ = other.cols_;
      data_ = other.data_;
      track();
    }
    return *this;
  }

  Mat(Mat&& other) noexcept
      : rows_(other.rows_), cols_(other.cols_), data_(std::move(other.data_)),
        meter_(other.meter_), meter_id_(other.meter_id_) {
    other.meter_ = nullptr;
    other.meter_id_ = 0;
    other.rows_ = other.cols_ = 0;
  }

  Mat& operator=(Mat&& other) noexcept {
    if (this != &other) {
      untrack();
      rows_ = other.rows_;
      cols_ = other.cols_;
      data_ = std::move(other.data_);
      meter_ = other.meter_;
      meter_id_ = other.meter_id_;
      other.meter_ = nullptr;
      other.meter_id_ = 0;
      other.rows_ = other.cols_ = 0;
    }
    return *this;
  }

  index_t rows() const { return rows_; }
  index_t cols() const { return cols_; }
  index_t size() const { return rows_ * cols_; }
  bool empty() const { return data_.empty(); }
  std::int64_t bytes() const { return static_cast<std::int64_t>(data_.size() * sizeof(T)); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  T* row(index_t r) { return data_.data() + r * cols_; }
  const T* row(index_t r) const { return data_.data() + r * cols_; }

  T& operator()(index_t r, index_t c) { return data_[static_cast<std::size_t>(r * cols_ + c)]; }
  const T& operator()(index_t r, index_t c) const { return data_[static_cast<std::size_t>(r * cols_ + c)]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(T{}); }

  // Frees the storage early (and releases the meter registration).
  void release() {
    untrack();
    rows_ = cols_ = 0;
    std::vector<T>().swap(data_);
  }

  bool same_shape(const Mat& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  bool all_finite() const {
    if constexpr (std::is_floating_point_v<T>) {
      for (const T& v : data_)
        if (!std::isfinite(v)) return false;
    }
    return true;
  }

 private:
  void track() {
    if (data_.empty()) return;
    MemoryMeter* m = active_meter();
    if (m != nullptr) {
      meter_ = m;
      meter_id_ = m->register_buffer(bytes(), current_tag());
    }
  }

  void untrack() {
    if (meter_ != nullptr && meter_id_ != 0) {
      meter_->release_buffer(meter_id_);
      meter_ = nullptr;
      meter_id_ = 0;
    }
  }

  index_t rows_ = 0;
  index_t cols_ = 0;
  std::vector<T> data_;
  MemoryMeter* meter_ = nullptr;
  std::uint64_t meter_id_ = 0;
};

template <class T>
Mat<T> zeros_like(const Mat<T>& m) {
  return Mat<T>(m.rows(), m.cols());
}

template <class T>
T max_abs_diff(const Mat<T>& a, const Mat<T>& b) {
  require(a.same_shape(b), "max_abs_diff: shape mismatch");
  T worst = 0;
  for (index_t i = 0; i < a.size(); ++i) {
    T d = std::abs(a.data()[i] - b.data()[i]);
    if (d > worst) worst = d;
  }
  return worst;
}

}  // namespace revgnn
