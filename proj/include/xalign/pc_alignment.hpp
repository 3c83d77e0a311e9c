#pragma once

#include "xalign/aligner.hpp"
#include "xalign/types.hpp"

#include <filesystem>
#include <vector>

namespace xalign {

inline constexpr Index kDefaultPcCount = 40;
inline constexpr Index kDefaultDiagWindow = 5;

// Top-k principal directions of one representation space.
struct PCAModel {
  Vector mean;        // d
  Matrix components;  // k x d, orthonormal rows, decreasing eigenvalue
  Vector eigenvalues; // k, sample covariance eigenvalues, nonincreasing
  // tied[i] is set when eigenvalue i is within 1e-9 (relative to the largest)
  // of a neighbour; the direction of such a component is not identifiable.
  std::vector<bool> tied;

  Index k() const { return components.rows(); }
  Index dim() const { return components.cols(); }
};

// Sign convention: the largest-magnitude entry of each component is positive.
PCAModel fit_pca(const Eigen::Ref<const Matrix>& matrix, Index k = kDefaultPcCount);

// Row i of the result is components * (row_i - mean).
Matrix project(const PCAModel& pca, const Eigen::Ref<const Matrix>& matrix);

// Rows of W^T are normalized, then diag_i sums their squared entries inside
// the band |i - j| <= p.
Vector diag_profile(const Eigen::Ref<const Matrix>& weight, Index p = kDefaultDiagWindow);

struct PcAlignment {
  PCAModel source;
  PCAModel target;
  LinearAligner aligner;  // k x k, fit in projected coordinates
  Vector diag;
};

// Fits PCA on each side, aligns the projections in closed form and reports
// the diagonal profile of the resulting map.
PcAlignment align_principal_components(const Eigen::Ref<const Matrix>& src, const Eigen::Ref<const Matrix>& tgt,
                                       Index k = kDefaultPcCount, Index p = kDefaultDiagWindow,
                                       double ridge = 0.0);

void save_pca(const PCAModel& pca, const std::filesystem::path& path);
PCAModel load_pca(const std::filesystem::path& path);

}  // namespace xalign
