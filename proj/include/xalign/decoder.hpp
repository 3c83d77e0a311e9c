#pragma once

#include "xalign/aligner.hpp"
#include "xalign/concept_space.hpp"
#include "xalign/types.hpp"

#include <string>
#include <vector>

namespace xalign {

struct RescaledHead {
  Matrix head;
  double scale = 1.0;
};

// One constant for the whole head, chosen so the head's element variance
// equals that of the representations the aligner was trained on.
RescaledHead rescale_head(const Eigen::Ref<const Matrix>& head, const Eigen::Ref<const Matrix>& train_reps);

struct DecodedCandidate {
  std::string name;
  Index index = 0;
  double similarity = 0.0;
};

// Aligns a source-space vector and ranks the vocabulary by cosine
// similarity, descending, lower index first among ties.
std::vector<DecodedCandidate> decode_vector(const Eigen::Ref<const Vector>& vector, const LinearAligner& aligner,
                                            const ConceptBank& vocab, Index top_m = 5);

}  // namespace xalign
