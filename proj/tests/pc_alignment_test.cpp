#include "xalign/pc_alignment.hpp"

#include "test_util.hpp"

#include <Eigen/Eigenvalues>

namespace xalign {
namespace {

using testing::gaussian;

// Rows drawn with per-axis standard deviations `scales` in a random rotation.
Matrix spectrum_sample(Index n, const Vector& scales, std::uint64_t seed) {
  const Index d = scales.size();
  const Matrix q = Eigen::HouseholderQR<Matrix>(gaussian(d, d, seed + 1)).householderQ();
  return gaussian(n, d, seed) * scales.asDiagonal() * q.transpose();
}

TEST(Pca, LineInThreeDimensions) {
  Vector dir(3);
  dir << 1, 2, -2;
  dir /= 3.0;
  Matrix m(5, 3);
  const double t[] = {-2, -1, 0, 1, 2};
  for (Index i = 0; i < 5; ++i) m.row(i) = t[i] * dir.transpose() + Eigen::RowVector3d(1, 1, 1);
  const PCAModel pca = fit_pca(m, 1);
  EXPECT_NEAR(std::abs(pca.components.row(0).dot(dir.transpose())), 1.0, 1e-12);
  EXPECT_NEAR(pca.eigenvalues[0], 10.0 / 4.0, 1e-12);  // sample variance of t
  // Largest-magnitude entries are +-2/3; the first of them is made positive.
  EXPECT_GT(pca.components(0, 1), 0.0);
}

TEST(Pca, FullRankReconstruction) {
  const Matrix m = gaussian(200, 2, 1);
  const PCAModel pca = fit_pca(m, 2);
  const Matrix q = project(pca, m);
  const Matrix back = (q * pca.components).rowwise() + pca.mean.transpose();
  EXPECT_LT((back - m).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Pca, MatchesCovarianceEigendecomposition) {
  const Matrix m = gaussian(500, 20, 2) * gaussian(20, 20, 3);
  const PCAModel pca = fit_pca(m, 5);
  const Matrix centered = m.rowwise() - m.colwise().mean();
  const Matrix cov = centered.transpose() * centered / 499.0;
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  for (Index i = 0; i < 5; ++i) {
    const double expected = eig.eigenvalues()[19 - i];
    EXPECT_NEAR(pca.eigenvalues[i], expected, 1e-8 * expected);
    EXPECT_NEAR(std::abs(pca.components.row(i).dot(eig.eigenvectors().col(19 - i))), 1.0, 1e-8);
  }
}

TEST(Pca, OrthonormalSortedAndSigned) {
  const Matrix m = gaussian(300, 12, 4) * gaussian(12, 12, 5);
  const PCAModel pca = fit_pca(m, 12);
  EXPECT_TRUE((pca.components * pca.components.transpose()).isApprox(Matrix::Identity(12, 12), 1e-6));
  for (Index i = 1; i < 12; ++i) EXPECT_GE(pca.eigenvalues[i - 1], pca.eigenvalues[i]);
  for (Index i = 0; i < 12; ++i) {
    Index arg = 0;
    pca.components.row(i).cwiseAbs().maxCoeff(&arg);
    EXPECT_GT(pca.components(i, arg), 0.0);
  }
}

TEST(Pca, RejectsBadK) {
  const Matrix m = gaussian(10, 4, 6);
  EXPECT_THROW(fit_pca(m, 0), ConfigError);
  EXPECT_THROW(fit_pca(m, 5), ConfigError);
  EXPECT_THROW(fit_pca(gaussian(4, 8, 7), 4), ConfigError);
  EXPECT_NO_THROW(fit_pca(gaussian(4, 8, 7), 3));
}

TEST(Pca, FlagsTiedEigenvalues) {
  // Exactly isotropic in the first two directions, distinct in the third.
  Matrix m(4, 3);
  m << 1, 0, 0.3, -1, 0, 0.3, 0, 1, -0.3, 0, -1, -0.3;
  const PCAModel pca = fit_pca(m, 3);
  EXPECT_TRUE(pca.tied[0]);
  EXPECT_TRUE(pca.tied[1]);
  EXPECT_FALSE(pca.tied[2]);
}

TEST(Project, MeanToZeroIsometryAndLoopOracle) {
  const Matrix m = gaussian(100, 6, 8);
  const PCAModel full = fit_pca(m, 6);
  EXPECT_LT(project(full, full.mean.transpose()).norm(), 1e-12);
  const Matrix q = project(full, m);
  for (Index i = 0; i < m.rows(); ++i)
    EXPECT_NEAR(q.row(i).norm(), (m.row(i) - full.mean.transpose()).norm(), 1e-6);

  const PCAModel part = fit_pca(m, 3);
  const Matrix x = gaussian(10, 6, 9);
  const Matrix p = project(part, x);
  for (Index i = 0; i < 10; ++i)
    for (Index c = 0; c < 3; ++c) {
      double dot = 0.0;
      for (Index j = 0; j < 6; ++j) dot += part.components(c, j) * (x(i, j) - part.mean[j]);
      EXPECT_NEAR(p(i, c), dot, 1e-12);
    }
  EXPECT_THROW(project(part, gaussian(2, 5, 10)), ShapeError);
}

TEST(Diag, IdentityAndUniform) {
  const Vector id = diag_profile(Matrix::Identity(40, 40), 5);
  for (Index i = 0; i < 40; ++i) EXPECT_DOUBLE_EQ(id[i], 1.0);
  const Vector uniform = diag_profile(Matrix::Ones(40, 40), 5);
  EXPECT_NEAR(uniform[20], 11.0 / 40.0, 1e-15);
  EXPECT_NEAR(uniform[0], 6.0 / 40.0, 1e-15);
  EXPECT_NEAR(uniform[39], 6.0 / 40.0, 1e-15);
}

TEST(Diag, MatchesDoubleLoopAndBounds) {
  const Matrix w = gaussian(15, 15, 11);
  const Vector d = diag_profile(w, 2);
  for (Index i = 0; i < 15; ++i) {
    // Row i of W^T is column i of W.
    double total = 0.0, band = 0.0;
    for (Index j = 0; j < 15; ++j) total += w(j, i) * w(j, i);
    for (Index j = std::max<Index>(0, i - 2); j <= std::min<Index>(14, i + 2); ++j) band += w(j, i) * w(j, i);
    EXPECT_NEAR(d[i], band / total, 1e-12);
    EXPECT_GE(d[i], 0.0);
    EXPECT_LE(d[i], 1.0);
  }
  Matrix banded = Matrix::Zero(10, 10);
  for (Index i = 0; i < 10; ++i)
    for (Index j = std::max<Index>(0, i - 1); j <= std::min<Index>(9, i + 1); ++j) banded(i, j) = 1.0 + i + j;
  EXPECT_TRUE(diag_profile(banded, 1).isApprox(Vector::Ones(10), 1e-15));
}

TEST(Diag, Errors) {
  Matrix w = Matrix::Identity(4, 4);
  w(2, 2) = 0.0;
  EXPECT_THROW(diag_profile(w, 1), DegenerateInputError);
  EXPECT_THROW(diag_profile(Matrix::Ones(3, 4), 1), ShapeError);
}

TEST(PcAlign, SelfAlignmentIsDiagonal) {
  Vector scales = Vector::LinSpaced(48, 6.0, 0.5);
  const Matrix m = spectrum_sample(3000, scales, 12);
  const PcAlignment r = align_principal_components(m, m, 40, 5);
  for (Index i = 0; i < 40; ++i) EXPECT_GE(r.diag[i], 0.999);
}

TEST(PcAlign, ScaledCopyKeepsCorrespondence) {
  Vector scales(64);
  for (Index i = 0; i < 64; ++i) scales[i] = 10.0 * std::pow(0.93, static_cast<double>(i));
  const Matrix src = spectrum_sample(5000, scales, 13);
  const Matrix tgt = 3.0 * src + 0.05 * gaussian(5000, 64, 14);
  const PcAlignment r = align_principal_components(src, tgt);
  EXPECT_EQ(r.aligner.weight.rows(), 40);
  EXPECT_GE(r.diag.mean(), 0.95);
}

TEST(PcaIo, RoundTrip) {
  testing::TempDir dir;
  const PCAModel pca = fit_pca(gaussian(50, 5, 15), 3);
  save_pca(pca, dir / "p.emb");
  const PCAModel back = load_pca(dir / "p.emb");
  EXPECT_TRUE(back.components.isApprox(pca.components, 1e-6));
  EXPECT_TRUE(back.mean.isApprox(pca.mean, 1e-12));
  EXPECT_TRUE(back.eigenvalues.isApprox(pca.eigenvalues, 1e-12));
  EXPECT_EQ(back.tied, pca.tied);
}

}  // namespace
}  // namespace xalign
