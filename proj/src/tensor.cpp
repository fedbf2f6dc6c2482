#include "efficientad/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <sstream>

#include "efficientad/error.hpp"

namespace ead {
namespace {

std::int64_t element_count(const std::vector<std::int64_t>& dims) {
  if (dims.empty() || dims.size() > 4) {
    throw ShapeError("tensor rank must be 1..4, got " + std::to_string(dims.size()));
  }
  std::int64_t n = 1;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (dims[i] < 1) {
      throw ShapeError("tensor extent " + std::to_string(i) + " must be >= 1, got " +
                       std::to_string(dims[i]));
    }
    n *= dims[i];
  }
  return n;
}

}  // namespace

Tensor::Tensor(std::vector<std::int64_t> dims, float fill)
    : dims_(std::move(dims)), data_(static_cast<std::size_t>(element_count(dims_)), fill) {}

Tensor::Tensor(std::vector<std::int64_t> dims, std::vector<float> values)
    : dims_(std::move(dims)), data_(std::move(values)) {
  if (element_count(dims_) != static_cast<std::int64_t>(data_.size())) {
    throw ShapeError("tensor " + shape_string() + " needs " +
                     std::to_string(element_count(dims_)) + " values, got " +
                     std::to_string(data_.size()));
  }
}

std::int64_t Tensor::dim(int axis) const {
  if (axis < 0 || axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for tensor " +
                     shape_string());
  }
  return dims_[static_cast<std::size_t>(axis)];
}

std::span<float> Tensor::channel(std::int64_t c) {
  const std::int64_t plane = dims_[1] * dims_[2];
  return std::span<float>(data_).subspan(static_cast<std::size_t>(c * plane),
                                         static_cast<std::size_t>(plane));
}

std::span<const float> Tensor::channel(std::int64_t c) const {
  const std::int64_t plane = dims_[1] * dims_[2];
  return std::span<const float>(data_).subspan(static_cast<std::size_t>(c * plane),
                                               static_cast<std::size_t>(plane));
}

Tensor Tensor::slice_channels(std::int64_t first, std::int64_t count) const {
  require_chw(*this, "slice_channels");
  if (first < 0 || count < 1 || first + count > dims_[0]) {
    throw ShapeError("channel slice [" + std::to_string(first) + ", " +
                     std::to_string(first + count) + ") outside " + shape_string());
  }
  const std::int64_t plane = dims_[1] * dims_[2];
  Tensor out({count, dims_[1], dims_[2]});
  std::copy_n(data_.begin() + first * plane, count * plane, out.data_.begin());
  return out;
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(std::vector<std::int64_t> dims) const {
  return Tensor(std::move(dims), data_);
}

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) os << 'x';
    os << dims_[i];
  }
  os << ']';
  return os.str();
}

void require_chw(const Tensor& t, const char* what) {
  if (t.rank() != 3) {
    throw ShapeError(std::string(what) + ": expected C x H x W tensor, got " +
                     t.shape_string());
  }
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_chw(a, "concat_channels");
  require_chw(b, "concat_channels");
  if (a.height() != b.height() || a.width() != b.width()) {
    throw ShapeError("concat_channels: spatial extents differ, " + a.shape_string() +
                     " vs " + b.shape_string());
  }
  std::vector<float> values;
  values.reserve(static_cast<std::size_t>(a.size() + b.size()));
  values.insert(values.end(), a.storage().begin(), a.storage().end());
  values.insert(values.end(), b.storage().begin(), b.storage().end());
  return Tensor({a.channels() + b.channels(), a.height(), a.width()}, std::move(values));
}

}  // namespace ead
