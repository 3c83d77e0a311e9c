#include "xalign/pc_alignment.hpp"

#include "xalign/embedding_store.hpp"

#include <Eigen/SVD>

#include <cmath>

namespace xalign {

PCAModel fit_pca(const Eigen::Ref<const Matrix>& matrix, Index k) {
  const Index n = matrix.rows();
  const Index d = matrix.cols();
  if (k < 1 || k > std::min(n - 1, d))
    throw ConfigError("k must lie in [1, min(n - 1, d)]; got " + std::to_string(k));
  if (!matrix.allFinite()) throw DataError("matrix contains non-finite values");

  PCAModel pca;
  pca.mean = matrix.colwise().mean().transpose();
  const Matrix centered = matrix.rowwise() - pca.mean.transpose();
  const Eigen::BDCSVD<Matrix> svd(centered, Eigen::ComputeThinV);

  pca.components = svd.matrixV().leftCols(k).transpose();
  pca.eigenvalues = svd.singularValues().head(k).array().square() / static_cast<double>(n - 1);
  for (Index i = 0; i < k; ++i) {
    Index pivot = 0;
    pca.components.row(i).cwiseAbs().maxCoeff(&pivot);
    if (pca.components(i, pivot) < 0.0) pca.components.row(i) *= -1.0;
  }

  const double tol = 1e-9 * std::max(1.0, pca.eigenvalues[0]);
  pca.tied.assign(static_cast<std::size_t>(k), false);
  // The (k+1)-th value matters for the last kept component.
  const Index available = svd.singularValues().size();
  for (Index i = 0; i < k; ++i) {
    const double here = pca.eigenvalues[i];
    const bool below = i + 1 < available &&
                       std::abs(here - svd.singularValues()[i + 1] * svd.singularValues()[i + 1] /
                                           static_cast<double>(n - 1)) < tol;
    const bool above = i > 0 && std::abs(here - pca.eigenvalues[i - 1]) < tol;
    pca.tied[static_cast<std::size_t>(i)] = below || above;
  }
  return pca;
}

Matrix project(const PCAModel& pca, const Eigen::Ref<const Matrix>& matrix) {
  if (matrix.cols() != pca.mean.size()) throw ShapeError("matrix dimension does not match PCA model");
  return (matrix.rowwise() - pca.mean.transpose()) * pca.components.transpose();
}

Vector diag_profile(const Eigen::Ref<const Matrix>& weight, Index p) {
  if (weight.rows() != weight.cols()) throw ShapeError("diag profile needs a square matrix");
  if (p < 0) throw ConfigError("window half-width must be non-negative");
  const Index k = weight.rows();
  // Row i of W^T is column i of W.
  Vector diag(k);
  for (Index i = 0; i < k; ++i) {
    const double norm_sq = weight.col(i).squaredNorm();
    if (!(norm_sq > 0.0)) throw DegenerateInputError("row " + std::to_string(i) + " of W^T is zero");
    const Index lo = std::max<Index>(0, i - p);
    const Index hi = std::min<Index>(k - 1, i + p);
    diag[i] = weight.col(i).segment(lo, hi - lo + 1).squaredNorm() / norm_sq;
  }
  return diag;
}

PcAlignment align_principal_components(const Eigen::Ref<const Matrix>& src, const Eigen::Ref<const Matrix>& tgt,
                                       Index k, Index p, double ridge) {
  if (src.rows() != tgt.rows()) throw ShapeError("source and target row counts differ");
  PcAlignment out;
  out.source = fit_pca(src, k);
  out.target = fit_pca(tgt, k);
  out.aligner = fit_closed_form(project(out.source, src), project(out.target, tgt), ridge);
  out.diag = diag_profile(out.aligner.weight, p);
  return out;
}

void save_pca(const PCAModel& pca, const std::filesystem::path& path) {
  DatasetMeta meta;
  meta.extra["mean"] = std::vector<double>(pca.mean.data(), pca.mean.data() + pca.mean.size());
  meta.extra["eigenvalues"] =
      std::vector<double>(pca.eigenvalues.data(), pca.eigenvalues.data() + pca.eigenvalues.size());
  meta.extra["tied"] = pca.tied;
  write_embeddings(pca.components, meta, path);
}

PCAModel load_pca(const std::filesystem::path& path) {
  const Embeddings emb = read_embeddings(path);
  PCAModel pca;
  try {
    const auto mean = emb.meta.extra.at("mean").get<std::vector<double>>();
    const auto eig = emb.meta.extra.at("eigenvalues").get<std::vector<double>>();
    pca.mean = Eigen::Map<const Vector>(mean.data(), static_cast<Index>(mean.size()));
    pca.eigenvalues = Eigen::Map<const Vector>(eig.data(), static_cast<Index>(eig.size()));
    if (emb.meta.extra.contains("tied")) pca.tied = emb.meta.extra.at("tied").get<std::vector<bool>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("PCA sidecar " + path.string() + ": " + e.what());
  }
  pca.components = emb.data.cast<double>();
  if (pca.mean.size() != pca.components.cols() || pca.eigenvalues.size() != pca.components.rows())
    throw FormatError("PCA sidecar shape disagrees with components");
  if (pca.tied.size() != static_cast<std::size_t>(pca.k())) pca.tied.assign(static_cast<std::size_t>(pca.k()), false);
  return pca;
}

}  // namespace xalign
