#pragma once

#include "xalign/embedding_store.hpp"
#include "xalign/sgd.hpp"
#include "xalign/types.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace xalign {

class ConceptBank;

enum class FitMethod { closed_form, sgd, crossentropy };

std::string_view to_string(FitMethod method);
FitMethod fit_method_from_string(std::string_view name);

// Diagnostics collected while fitting; not serialized.
struct FitInfo {
  std::vector<double> loss_trace;  // minibatch loss before each update
  double initial_loss = 0.0;       // full training objective before the first update
  double final_loss = 0.0;         // full training objective after the last update
  Index schedule_period = 0;
  Index total_updates = 0;
  bool degenerate = false;         // e.g. a single class for cross-entropy
};

// Affine map z -> W^T (source_scale * z) + b from a d_s space to a d_t space.
struct LinearAligner {
  Matrix weight;  // d_s x d_t
  Vector bias;    // d_t
  double source_scale = 1.0;
  FitMethod provenance = FitMethod::closed_form;
  FitInfo info;

  Index source_dim() const { return weight.rows(); }
  Index target_dim() const { return weight.cols(); }

  static LinearAligner identity(Index dim);
};

// Minimizes (1/n) sum_i |W^T z_i + b - y_i|^2 + ridge |W|_F^2 exactly. When
// `rescale_variance` is set the source is first rescaled to that element
// variance and the factor is stored as source_scale; otherwise scale is 1.
LinearAligner fit_closed_form(const Eigen::Ref<const Matrix>& src, const Eigen::Ref<const Matrix>& tgt,
                              double ridge, std::optional<double> rescale_variance = std::nullopt);

LinearAligner fit_sgd(const Eigen::Ref<const Matrix>& src, const Eigen::Ref<const Matrix>& tgt,
                      const SgdConfig& cfg = {});

// Trains the aligner through a frozen cosine-similarity head whose rows are
// the class vectors.
LinearAligner fit_crossentropy(const Eigen::Ref<const Matrix>& src, const Labels& labels,
                               const ConceptBank& class_vectors, const SgdConfig& cfg = {});

Matrix apply(const LinearAligner& aligner, const Eigen::Ref<const Matrix>& src);
Vector apply_row(const LinearAligner& aligner, const Eigen::Ref<const Vector>& row);

// Pooled over every output coordinate.
double r_squared(const LinearAligner& aligner, const Eigen::Ref<const Matrix>& src,
                 const Eigen::Ref<const Matrix>& tgt);
double r_squared(const Eigen::Ref<const Matrix>& predicted, const Eigen::Ref<const Matrix>& tgt);

// Mean over rows of the squared residual norm, plus ridge |W|^2.
double training_objective(const LinearAligner& aligner, const Eigen::Ref<const Matrix>& src,
                          const Eigen::Ref<const Matrix>& tgt, double ridge = 0.0);

// Maps every row of a target-space matrix to a class index.
using TargetHead = std::function<std::vector<Index>(const Matrix&)>;

TargetHead linear_head(Matrix weights, Vector bias);  // argmax of x W + b
TargetHead nearest_concept_head(const ConceptBank& bank);

struct AlignmentReport {
  double r_squared = 0.0;
  double aligned_accuracy = 0.0;
  double target_accuracy = 0.0;
  double retained_accuracy = 0.0;
  bool target_accuracy_zero = false;
  Index n_eval = 0;
};

AlignmentReport evaluate_alignment(const LinearAligner& aligner, const Eigen::Ref<const Matrix>& src_test,
                                   const Eigen::Ref<const Matrix>& tgt_test, const Labels& labels,
                                   const TargetHead& target_head);

nlohmann::json to_json(const AlignmentReport& report);

enum class SweepMode { rows, classes };

struct SweepPoint {
  double fraction = 0.0;
  Index n_train = 0;
  Index n_classes = 0;  // distinct training classes used
  AlignmentReport report;
};

struct SweepOptions {
  std::vector<double> fractions = {0.05, 0.1, 0.2, 0.5, 1.0};
  SweepMode mode = SweepMode::rows;
  FitMethod method = FitMethod::closed_form;
  double ridge = 1e-6;
  SgdConfig sgd;  // used when method == sgd; sgd.seed also fixes the subset order
};

// Refits on nested subsets (a seeded row or class order, truncated at each
// fraction) and evaluates every fit on the same held-out set.
std::vector<SweepPoint> sweep_alignment(const Eigen::Ref<const Matrix>& src, const Eigen::Ref<const Matrix>& tgt,
                                        const Labels& train_labels, const Eigen::Ref<const Matrix>& src_test,
                                        const Eigen::Ref<const Matrix>& tgt_test, const Labels& test_labels,
                                        const TargetHead& head, const SweepOptions& options);

// EMB1 holding [W; b^T] with a sidecar carrying scale, provenance and dims.
void save_aligner(const LinearAligner& aligner, const std::filesystem::path& path);
LinearAligner load_aligner(const std::filesystem::path& path);

}  // namespace xalign
