#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "fedpt/errors.hpp"

namespace fedpt {

template <typename S>
using ArrayX = Eigen::Array<S, Eigen::Dynamic, 1>;
template <typename S>
using VectorX = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using MatrixRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using VectorXf = VectorX<float>;
using VectorXd = VectorX<double>;

// Process-wide live-byte counter for simulation-level memory accounting.
// Every Tensor (and every explicitly tracked side buffer) reports its storage
// here; the high-water mark is what the metrics CSV calls
// peak_alloc_bytes. This is a simulation counter, not an OS-level profile.
class MemoryGauge {
 public:
  static void add(int64_t bytes) {
    const int64_t now = current_.fetch_add(bytes, std::memory_order_relaxed) + bytes;
    int64_t peak = peak_.load(std::memory_order_relaxed);
    while (now > peak && !peak_.compare_exchange_weak(peak, now, std::memory_order_relaxed)) {
    }
  }

  static void sub(int64_t bytes) { current_.fetch_sub(bytes, std::memory_order_relaxed); }

  static int64_t current_bytes() { return current_.load(std::memory_order_relaxed); }
  static int64_t peak_bytes() { return peak_.load(std::memory_order_relaxed); }

  // Restarts peak tracking from the current live count.
  static void reset_peak() { peak_.store(current_.load(std::memory_order_relaxed)); }

 private:
  static inline std::atomic<int64_t> current_{0};
  static inline std::atomic<int64_t> peak_{0};
};

// RAII registration of a non-Tensor buffer with the gauge.
class ScopedAlloc {
 public:
  ScopedAlloc() = default;
  explicit ScopedAlloc(int64_t bytes) : bytes_(bytes) { MemoryGauge::add(bytes_); }
  ScopedAlloc(const ScopedAlloc& o) : bytes_(o.bytes_) { MemoryGauge::add(bytes_); }
  ScopedAlloc(ScopedAlloc&& o) noexcept : bytes_(o.bytes_) { o.bytes_ = 0; }
  ScopedAlloc& operator=(ScopedAlloc o) noexcept {
    std::swap(bytes_, o.bytes_);
    return *this;
  }
  ~ScopedAlloc() { MemoryGauge::sub(bytes_); }

 private:
  int64_t bytes_ = 0;
};

// Dense n-dimensional array, row-major, scalar-generic (float for training,
// double for gradient checks). Shapes are immutable after construction; data
// lives in one contiguous Eigen array.
template <typename S>
class Tensor {
 public:
  using Scalar = S;
  using Storage = ArrayX<S>;

  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    validate_shape();
    data_ = Storage::Zero(static_cast<Eigen::Index>(count_shape()));
    track();
  }

  Tensor(std::vector<int> shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (static_cast<int64_t>(data_.size()) != count_shape()) {
      throw DimensionError("Tensor: data length does not match shape product");
    }
    track();
  }

  Tensor(const Tensor& o) : shape_(o.shape_), data_(o.data_) { track(); }

  Tensor(Tensor&& o) noexcept
      : shape_(std::move(o.shape_)), data_(std::move(o.data_)), tracked_(o.tracked_) {
    o.tracked_ = 0;
    o.shape_.clear();
  }

  Tensor& operator=(const Tensor& o) {
    if (this != &o) {
      untrack();
      shape_ = o.shape_;
      data_ = o.data_;
      track();
    }
    return *this;
  }

  Tensor& operator=(Tensor&& o) noexcept {
    if (this != &o) {
      untrack();
      shape_ = std::move(o.shape_);
      data_ = std::move(o.data_);
      tracked_ = o.tracked_;
      o.tracked_ = 0;
      o.shape_.clear();
    }
    return *this;
  }

  ~Tensor() { untrack(); }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  static Tensor constant(std::vector<int> shape, S value) {
    Tensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }

  static Tensor from(std::vector<int> shape, std::initializer_list<S> values) {
    Tensor t(std::move(shape));
    if (static_cast<int64_t>(values.size()) != t.size()) {
      throw DimensionError("Tensor::from: value count does not match shape");
    }
    Eigen::Index i = 0;
    for (S v : values) t.data_[i++] = v;
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.size() == 0; }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  Storage& array() { return data_; }
  const Storage& array() const { return data_; }

  S& operator[](int64_t i) { return data_[static_cast<Eigen::Index>(i)]; }
  S operator[](int64_t i) const { return data_[static_cast<Eigen::Index>(i)]; }

  // Row-major matrix views over the flat storage.
  Eigen::Map<MatrixRM<S>> matrix(int64_t rows, int64_t cols) {
    if (rows * cols != size()) throw DimensionError("Tensor::matrix: bad view extent");
    return Eigen::Map<MatrixRM<S>>(data_.data(), rows, cols);
  }
  Eigen::Map<const MatrixRM<S>> matrix(int64_t rows, int64_t cols) const {
    if (rows * cols != size()) throw DimensionError("Tensor::matrix: bad view extent");
    return Eigen::Map<const MatrixRM<S>>(data_.data(), rows, cols);
  }

  bool all_finite() const { return data_.isFinite().all(); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  template <typename T>
  Tensor<T> cast() const {
    return Tensor<T>(shape_, data_.template cast<T>());
  }

  // Copy with a new shape over identical contents.
  Tensor reshaped(std::vector<int> shape) const {
    Tensor t(std::move(shape), data_);
    return t;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << ']';
    return os.str();
  }

 private:
  int64_t count_shape() const {
    return std::accumulate(shape_.begin(), shape_.end(), int64_t{1},
                           [](int64_t a, int d) { return a * d; });
  }

  void validate_shape() const {
    for (int d : shape_) {
      if (d <= 0) throw DimensionError("Tensor: shape dimensions must be positive");
    }
  }

  void track() {
    tracked_ = static_cast<int64_t>(data_.size()) * static_cast<int64_t>(sizeof(S));
    if (tracked_) MemoryGauge::add(tracked_);
  }

  void untrack() {
    if (tracked_) MemoryGauge::sub(tracked_);
    tracked_ = 0;
  }

  std::vector<int> shape_;
  Storage data_;
  int64_t tracked_ = 0;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

}  // namespace fedpt
