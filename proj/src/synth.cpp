#include "xalign/synth.hpp"

#include "xalign/embedding_store.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace xalign {

namespace {

Matrix gaussian(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  // Fill row by row so the draw order does not depend on storage order.
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
  return m;
}

// rows x cols with orthonormal columns (rows >= cols).
Matrix random_orthonormal(Index rows, Index cols, std::mt19937_64& rng) {
  const Eigen::HouseholderQR<Matrix> qr(gaussian(rows, cols, rng));
  return qr.householderQ() * Matrix::Identity(rows, cols);
}

template <typename T>
T get_or(const nlohmann::json& j, const char* snake, const char* kebab, T fallback) {
  if (j.contains(snake)) return j.at(snake).get<T>();
  if (j.contains(kebab)) return j.at(kebab).get<T>();
  return fallback;
}

}  // namespace

void SynthConfig::validate() const {
  if (n_samples < 2) throw ConfigError("n_samples must be at least 2");
  if (n_classes < 2) throw ConfigError("n_classes must be at least 2");
  if (latent_dim < 1) throw ConfigError("latent_dim must be positive");
  if (latent_dim > std::min(d_source, d_target)) throw ConfigError("latent_dim must not exceed d_source or d_target");
  if (n_classes > latent_dim + 1) throw ConfigError("n_classes must not exceed latent_dim + 1");
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be non-negative");
  if (!(cluster_separation > 0.0)) throw ConfigError("cluster_separation must be positive");
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
  SynthConfig c;
  try {
    c.n_samples = get_or(j, "n_samples", "n-samples", c.n_samples);
    c.n_classes = get_or(j, "n_classes", "n-classes", c.n_classes);
    c.latent_dim = get_or(j, "latent_dim", "latent-dim", c.latent_dim);
    c.d_source = get_or(j, "d_source", "d-source", c.d_source);
    c.d_target = get_or(j, "d_target", "d-target", c.d_target);
    c.noise_sigma = get_or(j, "noise_sigma", "noise-sigma", c.noise_sigma);
    c.cluster_separation = get_or(j, "cluster_separation", "cluster-separation", c.cluster_separation);
    c.seed = get_or(j, "seed", "seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synth config: ") + e.what());
  }
  return c;
}

nlohmann::json SynthConfig::to_json() const {
  return {{"n_samples", n_samples},   {"n_classes", n_classes},     {"latent_dim", latent_dim},
          {"d_source", d_source},     {"d_target", d_target},       {"noise_sigma", noise_sigma},
          {"cluster_separation", cluster_separation}, {"seed", seed}};
}

double SynthTruth::analytic_r_squared() const {
  return 1.0 - noise_sigma * noise_sigma / target_element_variance;
}

nlohmann::json SynthTruth::to_json() const {
  auto rows = [](const Matrix& m) {
    std::vector<std::vector<double>> out(static_cast<std::size_t>(m.rows()));
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) out[i].push_back(m(i, j));
    return out;
  };
  return {{"source_map", rows(source_map)},
          {"target_map", rows(target_map)},
          {"centroids", rows(centroids)},
          {"noise_sigma", noise_sigma},
          {"target_element_variance", target_element_variance},
          {"analytic_r_squared", analytic_r_squared()}};
}

SynthData gen_paired_spaces(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  const Index L = cfg.latent_dim;
  const Index C = cfg.n_classes;

  SynthData out;
  out.truth.noise_sigma = cfg.noise_sigma;

  // Rows of I - 11^T/C form a centered simplex with pairwise distance sqrt(2);
  // express it in C-1 coordinates, then rotate into the latent space.
  const Matrix simplex = Matrix::Identity(C, C) - Matrix::Constant(C, C, 1.0 / static_cast<double>(C));
  const Eigen::JacobiSVD<Matrix> svd(simplex, Eigen::ComputeFullV);
  const Matrix coords = simplex * svd.matrixV().leftCols(C - 1);
  const Matrix rotation = random_orthonormal(L, C - 1, rng).transpose();
  out.truth.centroids = cfg.cluster_separation * coords * rotation;

  out.truth.source_map =
      random_orthonormal(cfg.d_source, L, rng) * std::sqrt(static_cast<double>(cfg.d_source) / static_cast<double>(L));
  out.truth.target_map =
      random_orthonormal(cfg.d_target, L, rng) * std::sqrt(static_cast<double>(cfg.d_target) / static_cast<double>(L));

  out.labels.resize(static_cast<std::size_t>(cfg.n_samples));
  for (Index i = 0; i < cfg.n_samples; ++i) out.labels[static_cast<std::size_t>(i)] = i % C;
  std::shuffle(out.labels.begin(), out.labels.end(), rng);

  Matrix latent = gaussian(cfg.n_samples, L, rng);
  for (Index i = 0; i < cfg.n_samples; ++i) latent.row(i) += out.truth.centroids.row(out.labels[static_cast<std::size_t>(i)]);

  out.src = latent * out.truth.source_map.transpose() + cfg.noise_sigma * gaussian(cfg.n_samples, cfg.d_source, rng);
  out.tgt = latent * out.truth.target_map.transpose() + cfg.noise_sigma * gaussian(cfg.n_samples, cfg.d_target, rng);
  out.truth.target_element_variance = element_variance(out.tgt);
  return out;
}

ConceptBank gen_concept_bank(const SynthTruth& truth) {
  ConceptBank bank(truth.target_map.rows());
  for (Index c = 0; c < truth.centroids.rows(); ++c)
    bank.add("class_" + std::to_string(c), truth.target_map * truth.centroids.row(c).transpose());
  return bank;
}

LinearAligner true_aligner(const SynthTruth& truth) {
  const Matrix& as = truth.source_map;
  const Matrix pinv = (as.transpose() * as).ldlt().solve(as.transpose());  // L x d_source
  LinearAligner a;
  a.weight = pinv.transpose() * truth.target_map.transpose();
  a.bias = Vector::Zero(truth.target_map.rows());
  a.source_scale = 1.0;
  a.provenance = FitMethod::closed_form;
  return a;
}

void AttributeConfig::validate() const {
  if (n_samples < 2) throw ConfigError("n_samples must be at least 2");
  if (n_classes < 2) throw ConfigError("n_classes must be at least 2");
  if (n_concepts < n_classes) throw ConfigError("need at least one concept per class");
  if (n_concepts > dim) throw ConfigError("n_concepts must not exceed dim");
  if (!(background_rate >= 0.0 && background_rate <= 1.0)) throw ConfigError("background_rate must lie in [0, 1]");
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be non-negative");
}

AttributeData gen_attribute_data(const AttributeConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::bernoulli_distribution background(cfg.background_rate);
  std::normal_distribution<double> normal(0.0, 1.0);

  const Matrix basis = random_orthonormal(cfg.dim, cfg.n_concepts, rng).transpose();  // n_concepts x dim
  AttributeData out;
  std::vector<std::string> names;
  for (Index j = 0; j < cfg.n_concepts; ++j) names.push_back("attr_" + std::to_string(j));
  out.bank = ConceptBank(std::move(names), basis);
  out.planted.resize(static_cast<std::size_t>(cfg.n_classes));
  std::iota(out.planted.begin(), out.planted.end(), Index{0});

  out.labels.resize(static_cast<std::size_t>(cfg.n_samples));
  for (Index i = 0; i < cfg.n_samples; ++i) out.labels[static_cast<std::size_t>(i)] = i % cfg.n_classes;
  std::shuffle(out.labels.begin(), out.labels.end(), rng);

  out.rows = Matrix::Zero(cfg.n_samples, cfg.dim);
  out.present = RowMatrix<int>::Zero(cfg.n_samples, cfg.n_concepts);
  for (Index i = 0; i < cfg.n_samples; ++i) {
    const Index plant = out.planted[static_cast<std::size_t>(out.labels[static_cast<std::size_t>(i)])];
    for (Index j = 0; j < cfg.n_concepts; ++j) {
      if (j == plant) {
        out.rows.row(i) += cfg.planted_strength * basis.row(j);
        out.present(i, j) = 1;
      } else if (background(rng)) {
        out.rows.row(i) += cfg.background_strength * basis.row(j);
        out.present(i, j) = 1;
      }
    }
    for (Index k = 0; k < cfg.dim; ++k) out.rows(i, k) += cfg.noise_sigma * normal(rng);
  }
  return out;
}

}  // namespace xalign
