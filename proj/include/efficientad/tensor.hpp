#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace ead {

// Dense row-major float tensor of rank 1..4.
//
// Canonical layouts are C x H x W for feature maps and O x I x Kh x Kw for
// convolution weights. Every extent is >= 1 and the element count always
// equals the product of the extents.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> dims, float fill = 0.0f);
  Tensor(std::vector<std::int64_t> dims, std::vector<float> values);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.dims_); }

  const std::vector<std::int64_t>& dims() const { return dims_; }
  int rank() const { return static_cast<int>(dims_.size()); }
  std::int64_t dim(int axis) const;
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  // Shorthand for rank-3 C x H x W tensors.
  std::int64_t channels() const { return dim(0); }
  std::int64_t height() const { return dim(1); }
  std::int64_t width() const { return dim(2); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }
  std::vector<float>& storage() { return data_; }
  const std::vector<float>& storage() const { return data_; }

  float& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  float operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  float& at(std::int64_t c, std::int64_t h, std::int64_t w) {
    return data_[static_cast<std::size_t>((c * dims_[1] + h) * dims_[2] + w)];
  }
  float at(std::int64_t c, std::int64_t h, std::int64_t w) const {
    return data_[static_cast<std::size_t>((c * dims_[1] + h) * dims_[2] + w)];
  }

  // Contiguous view of channel c of a C x H x W tensor.
  std::span<float> channel(std::int64_t c);
  std::span<const float> channel(std::int64_t c) const;

  // Channels [first, first + count) of a C x H x W tensor, copied.
  Tensor slice_channels(std::int64_t first, std::int64_t count) const;

  void fill(float v);
  Tensor reshaped(std::vector<std::int64_t> dims) const;

  bool same_shape(const Tensor& other) const { return dims_ == other.dims_; }
  std::string shape_string() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.dims_ == b.dims_ && a.data_ == b.data_;
  }

 private:
  std::vector<std::int64_t> dims_;
  std::vector<float> data_;
};

// Throws ShapeError unless t has rank 3.
void require_chw(const Tensor& t, const char* what);

// Stacks C x H x W tensors along channels (used to assemble test fixtures and
// split/merge student halves).
Tensor concat_channels(const Tensor& a, const Tensor& b);

}  // namespace ead
