#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/SpecialFunctions>

#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctxc {

using Index = Eigen::Index;

// Dense row-major tensor of rank 1..3. Rank-2 tensors expose an Eigen matrix
// view; rank-3 tensors expose per-slice matrix views along dim 0 (used for
// per-head attention maps). Scalars are represented as shape {1}.
template <typename Scalar>
class TensorT {
 public:
  using Storage = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Map = Eigen::Map<Matrix>;
  using ConstMap = Eigen::Map<const Matrix>;

  TensorT() = default;

  explicit TensorT(std::vector<Index> shape) : shape_(std::move(shape)) {
    data_ = Storage::Zero(checked_numel(shape_));
  }

  static TensorT zeros(std::vector<Index> shape) { return TensorT(std::move(shape)); }

  // Allocation without the zero fill, for buffers that are fully overwritten.
  static TensorT raw(std::vector<Index> shape) {
    TensorT t;
    t.shape_ = std::move(shape);
    t.data_.resize(checked_numel(t.shape_));
    return t;
  }

  static TensorT scalar(Scalar v) {
    TensorT t({1});
    t.data_[0] = v;
    return t;
  }

  static TensorT from_matrix(const Eigen::Ref<const Matrix>& m) {
    TensorT t({m.rows(), m.cols()});
    t.mat() = m;
    return t;
  }

  static TensorT from_vector(const std::vector<Scalar>& v) {
    TensorT t({static_cast<Index>(v.size())});
    for (Index i = 0; i < t.numel(); ++i) t.data_[i] = v[static_cast<size_t>(i)];
    return t;
  }

  const std::vector<Index>& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  Index numel() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  Storage& flat() { return data_; }
  const Storage& flat() const { return data_; }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  // Rank-2 view.
  Map mat() {
    require_rank(2);
    return Map(data_.data(), shape_[0], shape_[1]);
  }
  ConstMap mat() const {
    require_rank(2);
    return ConstMap(data_.data(), shape_[0], shape_[1]);
  }

  // Rank-3: matrix view of slice i along dim 0.
  Map slice(Index i) {
    require_rank(3);
    return Map(data_.data() + i * shape_[1] * shape_[2], shape_[1], shape_[2]);
  }
  ConstMap slice(Index i) const {
    require_rank(3);
    return ConstMap(data_.data() + i * shape_[1] * shape_[2], shape_[1], shape_[2]);
  }

  bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

  bool all_finite() const { return data_.allFinite(); }

  std::string shape_str() const {
    std::string s = "(";
    for (size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape_[i]);
    }
    return s + ")";
  }

 private:
  void require_rank(Index r) const {
    if (rank() != r)
      throw std::invalid_argument("tensor rank " + std::to_string(rank()) +
                                  " where rank " + std::to_string(r) + " required");
  }

  static Index checked_numel(const std::vector<Index>& shape) {
    if (shape.empty()) throw std::invalid_argument("tensor shape must be non-empty");
    Index n = 1;
    for (Index d : shape) {
      if (d <= 0) throw std::invalid_argument("tensor dimensions must be positive");
      n *= d;
    }
    return n;
  }

  std::vector<Index> shape_;
  Storage data_;
};

using Tensor = TensorT<double>;
using Matrix = Tensor::Matrix;
using Vector = Eigen::VectorXd;

// Numerically stable softmax of a vector (max-subtracted).
inline Vector softmax(const Eigen::Ref<const Vector>& x) {
  if (x.size() == 0) throw std::invalid_argument("softmax: empty input");
  if (!x.allFinite()) throw std::invalid_argument("softmax: non-finite input");
  Vector e = (x.array() - x.maxCoeff()).exp();
  return e / e.sum();
}

// Central-difference gradient of f with respect to every coordinate of
// `param`. Perturbs in place and restores; f must be deterministic.
template <typename Scalar>
TensorT<Scalar> fd_gradient(const std::function<Scalar()>& f, TensorT<Scalar>& param,
                            Scalar step) {
  if (!(step > Scalar(0))) throw std::invalid_argument("fd_gradient: step must be > 0");
  TensorT<Scalar> grad(param.shape());
  for (Index i = 0; i < param.numel(); ++i) {
    const Scalar saved = param[i];
    param[i] = saved + step;
    const Scalar fp = f();
    param[i] = saved - step;
    const Scalar fm = f();
    param[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::runtime_error("fd_gradient: non-finite function evaluation");
    grad[i] = (fp - fm) / (Scalar(2) * step);
  }
  return grad;
}

}  // namespace ctxc
