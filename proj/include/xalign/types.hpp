#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace xalign {

using Index = Eigen::Index;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Storage precision of embeddings on disk. Computation happens in double;
// callers cast with `.cast<double>()` after reading.
using EmbeddingMatrix = RowMatrix<float>;

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

using Labels = std::vector<std::int64_t>;

}  // namespace xalign
