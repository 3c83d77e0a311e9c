#pragma once

#include "xalign/errors.hpp"
#include "xalign/types.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace xalign {

// EMB1 layout: "EMB1" | u32le n | u32le d | u8 dtype | 3 reserved zero bytes |
// n*d float32le payload, row-major.
inline constexpr std::size_t kEmb1HeaderSize = 16;
inline constexpr std::uint8_t kDtypeFloat32 = 0x01;
inline constexpr double kDefaultTargetVariance = 4.5;

struct DatasetMeta {
  std::optional<std::string> model_id;
  std::optional<std::string> dataset_id;
  std::optional<Labels> labels;
  std::optional<std::vector<std::string>> class_names;
  std::optional<bool> normalized;
  // Keys other than the five above are preserved verbatim. Aligner, PCA and
  // CBM sidecars keep their own fields here.
  nlohmann::json extra = nlohmann::json::object();

  bool empty() const;
  nlohmann::json to_json() const;
  static DatasetMeta from_json(const nlohmann::json& j);

  friend bool operator==(const DatasetMeta&, const DatasetMeta&) = default;
};

struct Embeddings {
  EmbeddingMatrix data;
  DatasetMeta meta;
};

std::filesystem::path sidecar_path(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_emb1(const EmbeddingMatrix& matrix);
EmbeddingMatrix decode_emb1(std::span<const std::uint8_t> bytes);

// Throws DataError on non-finite values, labels of the wrong length or labels
// outside class_names.
void validate(const EmbeddingMatrix& matrix, const DatasetMeta& meta);

Embeddings read_embeddings(const std::filesystem::path& path);

void write_embeddings(const EmbeddingMatrix& matrix, const DatasetMeta& meta,
                      const std::filesystem::path& path);

template <typename Derived>
void write_embeddings(const Eigen::MatrixBase<Derived>& matrix, const DatasetMeta& meta,
                      const std::filesystem::path& path) {
  const EmbeddingMatrix stored = matrix.template cast<float>();
  write_embeddings(stored, meta, path);
}

// Population variance over all n*d elements.
template <typename Derived>
double element_variance(const Eigen::MatrixBase<Derived>& matrix) {
  const Index count = matrix.size();
  if (count < 2) throw DataError("element_variance needs at least two elements");
  const auto values = matrix.template cast<double>().eval();
  const double mean = values.mean();
  return (values.array() - mean).square().sum() / static_cast<double>(count);
}

struct Rescaled {
  Matrix data;
  double scale = 1.0;
};

template <typename Derived>
Rescaled rescale_to_variance(const Eigen::MatrixBase<Derived>& matrix,
                             double target_var = kDefaultTargetVariance) {
  if (!(target_var > 0.0)) throw ConfigError("target variance must be positive");
  const double current = element_variance(matrix);
  if (!(current > 0.0)) throw DegenerateInputError("cannot rescale a zero-variance matrix");
  Rescaled out;
  out.scale = std::sqrt(target_var / current);
  out.data = out.scale * matrix.template cast<double>();
  return out;
}

struct NormalizedRows {
  Matrix data;
  Index zero_rows = 0;
};

// Zero rows stay zero and are counted.
template <typename Derived>
NormalizedRows l2_normalize_rows(const Eigen::MatrixBase<Derived>& matrix) {
  NormalizedRows out{matrix.template cast<double>(), 0};
  for (Index i = 0; i < out.data.rows(); ++i) {
    const double norm = out.data.row(i).norm();
    if (norm > 0.0) {
      out.data.row(i) /= norm;
    } else {
      ++out.zero_rows;
    }
  }
  return out;
}

}  // namespace xalign
