#pragma once

#include "xalign/concept_space.hpp"
#include "xalign/types.hpp"

#include <json.hpp>

#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace xalign {

inline constexpr double kDefaultDriftAlpha = 0.01;

struct KSResult {
  double statistic = 0.0;
  double p_value = 1.0;
  Index n_ref = 0;
  Index n_new = 0;
};

// Two-sample Kolmogorov-Smirnov test. D is exact; the p-value uses the
// asymptotic Kolmogorov series at lambda = (sqrt(ne) + 0.12 + 0.11 / sqrt(ne)) D.
KSResult ks_test(std::span<const double> sample_a, std::span<const double> sample_b);

// Q_KS(lambda) = 2 sum_{k>=1} (-1)^(k-1) exp(-2 k^2 lambda^2), clamped to [0, 1].
double kolmogorov_survival(double lambda);

struct ConceptDrift {
  std::string name;
  KSResult ks;
  double mean_shift = 0.0;  // mean(new) - mean(ref)
  bool flagged = false;
};

struct DriftReport {
  double alpha = kDefaultDriftAlpha;
  Index zero_rows_ref = 0;
  Index zero_rows_new = 0;
  // Ascending p-value, then descending |mean_shift|, then name.
  std::vector<ConceptDrift> concepts;
};

DriftReport scan_concept_bank(const Eigen::Ref<const Matrix>& ref_aligned, const Eigen::Ref<const Matrix>& new_aligned,
                              const ConceptBank& bank, double alpha = kDefaultDriftAlpha);

nlohmann::json to_json(const DriftReport& report);

// CSV: concept,bin_lo,bin_hi,ref_count,new_count. Bins span the pooled range
// of each concept's similarities.
void write_drift_histograms(std::ostream& out, const Eigen::Ref<const Matrix>& ref_aligned,
                            const Eigen::Ref<const Matrix>& new_aligned, const ConceptBank& bank, Index bins = 20);

}  // namespace xalign
