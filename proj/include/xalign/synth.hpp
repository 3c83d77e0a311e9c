#pragma once

#include "xalign/aligner.hpp"
#include "xalign/concept_space.hpp"
#include "xalign/types.hpp"

#include <json.hpp>

#include <cstdint>

namespace xalign {

struct SynthConfig {
  Index n_samples = 2000;
  Index n_classes = 10;
  Index latent_dim = 10;
  Index d_source = 64;
  Index d_target = 64;
  double noise_sigma = 0.1;
  double cluster_separation = 5.0;
  std::uint64_t seed = 0;

  void validate() const;

  static SynthConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

// Ground truth behind a paired-space sample. Rows are generated as
// src = A_s z + eps_s, tgt = A_t z + eps_t with z = centroid + N(0, I).
struct SynthTruth {
  Matrix source_map;  // A_s, d_source x latent_dim, orthogonal columns of norm sqrt(d_source / latent_dim)
  Matrix target_map;  // A_t, d_target x latent_dim
  Matrix centroids;   // n_classes x latent_dim; centered regular simplex, pairwise sqrt(2) * separation
  double noise_sigma = 0.0;
  double target_element_variance = 0.0;

  // 1 - sigma^2 / var_elem(tgt): the R^2 ceiling set by target noise.
  double analytic_r_squared() const;
  nlohmann::json to_json() const;
};

struct SynthData {
  Matrix src;
  Matrix tgt;
  Labels labels;
  SynthTruth truth;
};

SynthData gen_paired_spaces(const SynthConfig& cfg);

// One concept per class: normalized A_t * centroid, named "class_<c>".
ConceptBank gen_concept_bank(const SynthTruth& truth);

// The noiseless source-to-target map pinv(A_s)^T A_t^T with zero bias.
LinearAligner true_aligner(const SynthTruth& truth);

struct AttributeConfig {
  Index n_samples = 5000;
  Index n_classes = 10;
  Index n_concepts = 20;
  Index dim = 64;
  double planted_strength = 1.0;
  double background_rate = 0.15;
  double background_strength = 0.4;
  double noise_sigma = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

// Target-space rows where every class carries one dominant planted concept
// (class c -> concept c) plus sparse weaker background concepts.
struct AttributeData {
  Matrix rows;
  Labels labels;
  ConceptBank bank;                    // orthonormal concepts "attr_<j>"
  std::vector<Index> planted;          // per class
  RowMatrix<int> present;              // n_samples x n_concepts, 1 where a concept was added
};

AttributeData gen_attribute_data(const AttributeConfig& cfg);

}  // namespace xalign
