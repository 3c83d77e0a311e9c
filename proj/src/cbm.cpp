#include "xalign/cbm.hpp"

#include "xalign/embedding_store.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace xalign {

Eigen::RowVectorXd CBMHead::logits(const Eigen::Ref<const Eigen::RowVectorXd>& sims_row) const {
  if (sims_row.size() != n_concepts()) throw ShapeError("similarity row length does not match head");
  return sims_row * weights + bias.transpose();
}

Labels CBMHead::predict(const Eigen::Ref<const Matrix>& sims) const {
  if (sims.cols() != n_concepts()) throw ShapeError("similarity width does not match head");
  const Matrix all = (sims * weights).rowwise() + bias.transpose();
  Labels out(static_cast<std::size_t>(sims.rows()));
  for (Index i = 0; i < sims.rows(); ++i) out[i] = argmax_lowest(all.row(i));
  return out;
}

Similarities concept_similarities(const Eigen::Ref<const Matrix>& aligned, const ConceptBank& bank) {
  return cosine_similarities(aligned, bank);
}

CBMHead train_cbm_head(const Eigen::Ref<const Matrix>& sims, const Labels& labels, const SgdConfig& cfg) {
  cfg.validate();
  if (static_cast<Index>(labels.size()) != sims.rows()) throw ShapeError("labels length does not match rows");
  if (!sims.allFinite()) throw DataError("similarities contain non-finite values");
  std::set<std::int64_t> distinct;
  for (auto y : labels) {
    if (y < 0) throw DataError("labels must be non-negative");
    distinct.insert(y);
  }
  if (distinct.size() < 2) throw DataError("a concept-bottleneck head needs at least two classes");
  const Index n_classes = *distinct.rbegin() + 1;

  CBMHead head;
  head.weights = Matrix::Zero(sims.cols(), n_classes);
  head.bias = Vector::Zero(n_classes);
  for (Index j = 0; j < sims.cols(); ++j) head.concept_names.push_back("concept_" + std::to_string(j));
  for (Index c = 0; c < n_classes; ++c) head.class_names.push_back("class_" + std::to_string(c));

  const RowMatrix<double> x = sims;
  MomentumSgd opt(cfg.momentum, cfg.weight_decay);
  run_minibatches(cfg, x.rows(), [&](std::span<const Index> rows, double lr) {
    const double len = static_cast<double>(rows.size());
    RowMatrix<double> xb(static_cast<Index>(rows.size()), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) xb.row(static_cast<Index>(i)) = x.row(rows[i]);
    Matrix probs = (xb * head.weights).rowwise() + head.bias.transpose();
    double loss = 0.0;
    for (Index i = 0; i < probs.rows(); ++i) {
      const double top = probs.row(i).maxCoeff();
      probs.row(i) = (probs.row(i).array() - top).exp().matrix();
      probs.row(i) /= probs.row(i).sum();
      const auto y = labels[static_cast<std::size_t>(rows[i])];
      loss -= std::log(probs(i, y));
      probs(i, y) -= 1.0;
    }
    if (!std::isfinite(loss)) throw DataError("CBM training diverged");
    head.loss_trace.push_back(loss / len);
    probs /= len;
    const Matrix grad_w = xb.transpose() * probs;
    const Vector grad_b = probs.colwise().sum().transpose();
    opt.step(0, head.weights, grad_w, lr, true);
    opt.step(1, head.bias, grad_b, lr, false);
  });
  return head;
}

namespace {

// Top-k entries by value, descending, lowest index first among equals.
std::vector<ConceptShare> top_entries(const Vector& values, const std::vector<std::string>& names, Index k) {
  std::vector<Index> order(static_cast<std::size_t>(values.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return values[a] > values[b]; });
  const auto keep = static_cast<std::size_t>(std::clamp<Index>(k, 0, values.size()));
  std::vector<ConceptShare> out;
  out.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) {
    const Index c = order[i];
    out.push_back({c, c < static_cast<Index>(names.size()) ? names[c] : "concept_" + std::to_string(c), values[c]});
  }
  return out;
}

Vector shares_or_zero(const Eigen::Ref<const Vector>& w, const Eigen::Ref<const Eigen::RowVectorXd>& c) {
  const double denom = (w.array() * c.transpose().array()).abs().sum();
  if (!(denom > 0.0)) return Vector::Zero(w.size());
  return logit_shares(w, c);
}

std::string name_or_index(const std::vector<std::string>& names, Index i, const char* prefix) {
  return i < static_cast<Index>(names.size()) ? names[i] : prefix + std::to_string(i);
}

}  // namespace

Explanation explain(const CBMHead& head, const Eigen::Ref<const Eigen::RowVectorXd>& sims_row, Index top_k) {
  if (head.n_classes() < 2) throw DataError("explanations need at least two classes");
  const Eigen::RowVectorXd z = head.logits(sims_row);

  Explanation e;
  e.predicted = argmax_lowest(z);
  e.runner_up = e.predicted == 0 ? 1 : 0;
  for (Index c = 0; c < z.size(); ++c)
    if (c != e.predicted && z[c] > z[e.runner_up]) e.runner_up = c;

  e.predicted_class = name_or_index(head.class_names, e.predicted, "class_");
  e.runner_up_class = name_or_index(head.class_names, e.runner_up, "class_");
  e.predicted_bias = head.bias[e.predicted];
  e.runner_up_bias = head.bias[e.runner_up];
  e.shares = shares_or_zero(head.weights.col(e.predicted), sims_row);
  e.diff_shares = e.shares - shares_or_zero(head.weights.col(e.runner_up), sims_row);
  e.top_shares = top_entries(e.shares, head.concept_names, top_k);
  e.top_diff_shares = top_entries(e.diff_shares, head.concept_names, top_k);
  return e;
}

nlohmann::json to_json(const Explanation& e) {
  auto list = [](const std::vector<ConceptShare>& shares) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : shares) arr.push_back({{"concept", s.name}, {"index", s.concept_index}, {"share", s.share}});
    return arr;
  };
  return {{"predicted_class", e.predicted_class},
          {"predicted_index", e.predicted},
          {"runner_up", e.runner_up_class},
          {"runner_up_index", e.runner_up},
          {"predicted_bias", e.predicted_bias},
          {"runner_up_bias", e.runner_up_bias},
          {"top_shares", list(e.top_shares)},
          {"top_diff_shares", list(e.top_diff_shares)}};
}

double attribute_auroc(std::span<const double> scores, std::span<const int> binary_labels) {
  if (scores.size() != binary_labels.size()) throw ShapeError("scores and labels differ in length");
  std::size_t n_pos = 0;
  for (int y : binary_labels) {
    if (y != 0 && y != 1) throw DataError("attribute labels must be 0 or 1");
    n_pos += static_cast<std::size_t>(y);
  }
  const std::size_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw DataError("AUROC needs both positive and negative samples");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t)
      if (binary_labels[order[t]] == 1) pos_rank_sum += midrank;
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos);
  const double nn = static_cast<double>(n_neg);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

void save_cbm_head(const CBMHead& head, const std::filesystem::path& path) {
  DatasetMeta meta;
  meta.extra["bias"] = std::vector<double>(head.bias.data(), head.bias.data() + head.bias.size());
  meta.extra["concept_names"] = head.concept_names;
  meta.class_names = head.class_names;
  write_embeddings(head.weights, meta, path);
}

CBMHead load_cbm_head(const std::filesystem::path& path) {
  const Embeddings emb = read_embeddings(path);
  CBMHead head;
  head.weights = emb.data.cast<double>();
  try {
    const auto bias = emb.meta.extra.at("bias").get<std::vector<double>>();
    head.bias = Eigen::Map<const Vector>(bias.data(), static_cast<Index>(bias.size()));
    head.concept_names = emb.meta.extra.at("concept_names").get<std::vector<std::string>>();
    if (!emb.meta.class_names) throw FormatError("CBM sidecar lacks class_names");
    head.class_names = *emb.meta.class_names;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("CBM sidecar " + path.string() + ": " + e.what());
  }
  if (head.bias.size() != head.n_classes() || static_cast<Index>(head.concept_names.size()) != head.n_concepts())
    throw FormatError("CBM sidecar shape disagrees with weights");
  return head;
}

}  // namespace xalign
