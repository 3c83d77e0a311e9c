#pragma once

#include "xalign/concept_space.hpp"
#include "xalign/sgd.hpp"
#include "xalign/types.hpp"

#include <json.hpp>

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace xalign {

// Linear classifier over concept similarities: logits = sims * weights + bias.
struct CBMHead {
  Matrix weights;  // n_concepts x n_classes
  Vector bias;     // n_classes
  std::vector<std::string> concept_names;
  std::vector<std::string> class_names;
  std::vector<double> loss_trace;  // training diagnostics, not serialized

  Index n_concepts() const { return weights.rows(); }
  Index n_classes() const { return weights.cols(); }

  Eigen::RowVectorXd logits(const Eigen::Ref<const Eigen::RowVectorXd>& sims_row) const;
  Labels predict(const Eigen::Ref<const Matrix>& sims) const;
};

struct ConceptShare {
  Index concept_index = 0;
  std::string name;
  double share = 0.0;
};

struct Explanation {
  Index predicted = 0;
  Index runner_up = 0;
  std::string predicted_class;
  std::string runner_up_class;
  Vector shares;       // per concept, predicted logit
  Vector diff_shares;  // shares(predicted) - shares(runner_up)
  std::vector<ConceptShare> top_shares;
  std::vector<ConceptShare> top_diff_shares;
  double predicted_bias = 0.0;
  double runner_up_bias = 0.0;
};

Similarities concept_similarities(const Eigen::Ref<const Matrix>& aligned, const ConceptBank& bank);

// Multinomial logistic regression trained with the aligner's SGD mechanics.
CBMHead train_cbm_head(const Eigen::Ref<const Matrix>& sims, const Labels& labels,
                       const SgdConfig& cfg = cbm_default_config());

// share_i = w_i c_i / sum_j |w_j c_j|, bias excluded.
template <typename DerivedW, typename DerivedC>
Vector logit_shares(const Eigen::MatrixBase<DerivedW>& weights_column, const Eigen::MatrixBase<DerivedC>& sims_row) {
  if (weights_column.size() != sims_row.size()) throw ShapeError("weights and similarities differ in length");
  const Eigen::ArrayXd contrib = weights_column.derived().reshaped().array().template cast<double>() *
                                 sims_row.derived().reshaped().array().template cast<double>();
  const double denom = contrib.abs().sum();
  if (!(denom > 0.0)) throw DegenerateInputError("no concept contributes to this logit");
  return (contrib / denom).matrix();
}

Explanation explain(const CBMHead& head, const Eigen::Ref<const Eigen::RowVectorXd>& sims_row, Index top_k = 3);

nlohmann::json to_json(const Explanation& explanation);

// Mann-Whitney AUROC with midranks for ties.
double attribute_auroc(std::span<const double> scores, std::span<const int> binary_labels);

void save_cbm_head(const CBMHead& head, const std::filesystem::path& path);
CBMHead load_cbm_head(const std::filesystem::path& path);

}  // namespace xalign
