#pragma once

#include "xalign/concept_space.hpp"
#include "xalign/types.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace xalign {

// Keep rows whose similarity to `concept_name` lies `scale` standard
// deviations above (sign +1) or below (sign -1) the corpus mean.
struct ConceptConstraint {
  std::string concept_name;
  double scale = 0.0;
  int sign = 1;

  void validate() const;
};

enum class Direction { above, below };

struct Threshold {
  double value = 0.0;
  Direction direction = Direction::above;

  bool admits(double similarity) const {
    return direction == Direction::above ? similarity >= value : similarity <= value;
  }
};

// Mean and population standard deviation of `sims`; mu + k sigma (above) for
// sign +1, mu - k sigma (below) for sign -1.
Threshold constraint_threshold(std::span<const double> sims, const ConceptConstraint& constraint);

// Sorted row indices satisfying every constraint.
std::vector<Index> filter(const Eigen::Ref<const Matrix>& aligned, const ConceptBank& bank,
                          const std::vector<ConceptConstraint>& constraints);

// Same rule over precomputed similarities; column j belongs to names[j].
std::vector<Index> filter_similarities(const Eigen::Ref<const Matrix>& sims, const std::vector<std::string>& names,
                                       const std::vector<ConceptConstraint>& constraints);

// JSON array of {"concept": s, "scale": k, "sign": +-1}.
std::vector<ConceptConstraint> load_constraints(const std::filesystem::path& path);

}  // namespace xalign
