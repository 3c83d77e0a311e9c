#include "xalign/decoder.hpp"

#include "xalign/embedding_store.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace xalign {

RescaledHead rescale_head(const Eigen::Ref<const Matrix>& head, const Eigen::Ref<const Matrix>& train_reps) {
  if (head.cols() != train_reps.cols()) throw ShapeError("head and representations differ in dimension");
  const double head_var = element_variance(head);
  const double reps_var = element_variance(train_reps);
  if (!(head_var > 0.0) || !(reps_var > 0.0)) throw DegenerateInputError("rescaling needs nonzero variance");
  RescaledHead out;
  out.scale = std::sqrt(reps_var / head_var);
  out.head = out.scale * head;
  return out;
}

std::vector<DecodedCandidate> decode_vector(const Eigen::Ref<const Vector>& vector, const LinearAligner& aligner,
                                            const ConceptBank& vocab, Index top_m) {
  if (top_m < 1) throw ConfigError("top_m must be at least 1");
  if (vocab.empty()) throw ConfigError("vocabulary is empty");
  const Vector aligned = apply_row(aligner, vector);
  if (aligned.size() != vocab.dim()) throw ShapeError("aligner output does not match vocabulary dimension");
  const double norm = aligned.norm();
  if (!(norm > 0.0)) throw DegenerateInputError("aligned vector is zero");
  const Vector sims = vocab.vectors() * (aligned / norm);

  std::vector<Index> order(static_cast<std::size_t>(sims.size()));
  std::iota(order.begin(), order.end(), Index{0});
  const auto keep = static_cast<std::size_t>(std::min<Index>(top_m, sims.size()));
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                    [&](Index a, Index b) { return sims[a] > sims[b] || (sims[a] == sims[b] && a < b); });
  std::vector<DecodedCandidate> out;
  out.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) out.push_back({vocab.name(order[i]), order[i], sims[order[i]]});
  return out;
}

}  // namespace xalign
