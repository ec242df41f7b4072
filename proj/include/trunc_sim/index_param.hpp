#pragma once

#include <cstddef>

#include <Eigen/Dense>

namespace trunc_sim {

// Unit d-vector whose first nonzero coordinate is strictly positive.
class IndexParam {
 public:
  IndexParam() = default;

  const Eigen::VectorXd& coords() const { return coords_; }
  std::size_t dim() const { return static_cast<std::size_t>(coords_.size()); }
  double operator[](std::size_t k) const { return coords_[static_cast<Eigen::Index>(k)]; }

  friend IndexParam normalize(const Eigen::VectorXd& raw);
  friend bool operator==(const IndexParam& a, const IndexParam& b) { return a.coords_ == b.coords_; }

 private:
  explicit IndexParam(Eigen::VectorXd c) : coords_(std::move(c)) {}
  Eigen::VectorXd coords_;
};

// ±raw/|raw| with the sign fixed by the first nonzero coordinate. Throws ZeroVector.
IndexParam normalize(const Eigen::VectorXd& raw);

}  // namespace trunc_sim
