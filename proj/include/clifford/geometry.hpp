#pragma once

// Sparse rolling Clifford interaction between a state field h and a context
// field c, plus the dense D x D reference product it samples from.
//
// For a shift s the rolling operators pair channel c with channel
// (c + s) mod D:
//
//   dot_s(h, c)[i]   = silu(h[i] * c[(i+s)%D])
//   wedge_s(h, c)[i] = h[i] * c[(i+s)%D] - c[i] * h[(i+s)%D]
//
// wedge_s(h, c)[i] is the bivector coefficient of e_i ^ e_{(i+s)%D}; when the
// index wraps (i + s >= D) the pair is in reverse canonical order and the
// coefficient carries the opposite sign of the canonical one.

#include "clifford/tensor.hpp"

#include <Eigen/Core>

#include <string_view>
#include <vector>

namespace clifford {

enum class CliMode { inner, wedge, full };

std::string_view to_string(CliMode mode);
CliMode parse_cli_mode(std::string_view name);

/// Ordered channel offsets. Strictly increasing, every entry >= 1.
class ShiftSet {
 public:
  ShiftSet() = default;
  explicit ShiftSet(std::vector<int> offsets);

  /// Throws ConfigError unless every offset is < dim.
  void validate_for(Index dim) const;

  const std::vector<int>& offsets() const { return offsets_; }
  std::size_t size() const { return offsets_.size(); }
  bool empty() const { return offsets_.empty(); }
  int max() const { return offsets_.empty() ? 0 : offsets_.back(); }
  auto begin() const { return offsets_.begin(); }
  auto end() const { return offsets_.end(); }
  bool operator==(const ShiftSet&) const = default;

  /// Parses "1,2,4".
  static ShiftSet parse(std::string_view text);
  std::string to_string() const;

 private:
  std::vector<int> offsets_;
};

/// Number of channels clifford_interact emits for a given mode.
Index interaction_channels(CliMode mode, const ShiftSet& shifts, Index dim);

template <typename Scalar>
Tensor<Scalar> shifted_dot(const Tensor<Scalar>& h, const Tensor<Scalar>& c, Index s);

template <typename Scalar>
Tensor<Scalar> shifted_wedge(const Tensor<Scalar>& h, const Tensor<Scalar>& c, Index s);

/// Concatenation over shifts (in ShiftSet order) of [wedge | dot] for
/// CliMode::full, or of the single selected stream otherwise.
template <typename Scalar>
Tensor<Scalar> clifford_interact(const Tensor<Scalar>& h, const Tensor<Scalar>& c, const ShiftSet& shifts,
                                 CliMode mode);

// Dense reference product ---------------------------------------------------
//
// Quadratic in D; used by tests and the verify command to check the
// rolling operators against explicit wrapped diagonals.

template <typename Scalar>
struct DenseProduct {
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> dot;    // u_i v_j
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> wedge;  // u_i v_j - v_i u_j
};

template <typename DerivedU, typename DerivedV>
DenseProduct<typename DerivedU::Scalar> dense_product_oracle(const Eigen::MatrixBase<DerivedU>& u,
                                                             const Eigen::MatrixBase<DerivedV>& v) {
  DenseProduct<typename DerivedU::Scalar> out;
  out.dot = u * v.transpose();
  out.wedge = out.dot - v * u.transpose();
  return out;
}

/// Wrapped diagonal at offset s: out[c] = m(c, (c + s) mod D).
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> extract_slice(const Eigen::MatrixBase<Derived>& m,
                                                                         Index s) {
  const Index d = m.rows();
  Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> out(d);
  const Index shift = ((s % d) + d) % d;
  for (Index c = 0; c < d; ++c) out[c] = m(c, (c + shift) % d);
  return out;
}

}  // namespace clifford
