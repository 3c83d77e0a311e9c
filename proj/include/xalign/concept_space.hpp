#pragma once

#include "xalign/errors.hpp"
#include "xalign/types.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace xalign {

// Named unit-norm vectors in the target space, kept in insertion order.
class ConceptBank {
 public:
  ConceptBank() = default;
  explicit ConceptBank(Index dim) : dim_(dim), vectors_(0, dim) {}
  // Rows of `vectors` are normalized on the way in.
  ConceptBank(std::vector<std::string> names, const Eigen::Ref<const Matrix>& vectors);

  void add(std::string name, const Eigen::Ref<const Vector>& vector);

  Index dim() const { return dim_; }
  Index size() const { return static_cast<Index>(names_.size()); }
  bool empty() const { return names_.empty(); }

  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(Index i) const { return names_.at(static_cast<std::size_t>(i)); }
  const Matrix& vectors() const { return vectors_; }  // size() x dim()

  std::optional<Index> find(std::string_view name) const;

 private:
  Index dim_ = 0;
  std::vector<std::string> names_;
  Matrix vectors_;
};

struct PromptSpec {
  std::vector<std::string> templates;
  std::optional<std::vector<std::string>> class_names;
  std::optional<std::string> concept_suffix;
};

// The seven ImageNet zero-shot templates from CLIP.
const std::vector<std::string>& default_templates();

// Template-major cross product of templates and class names ("object" when
// no names are given), with the suffix appended after a space.
std::vector<std::string> expand_prompts(const PromptSpec& spec);

// Normalize rows, average, renormalize.
Vector build_concept_vector(const Eigen::Ref<const Matrix>& embeddings);

struct Similarities {
  Matrix values;  // n x bank.size(), cosine similarity
  Index zero_rows = 0;
};

Similarities cosine_similarities(const Eigen::Ref<const Matrix>& rows, const ConceptBank& bank);

struct Classification {
  Labels labels;
  Index degenerate_rows = 0;  // zero-norm rows, assigned index 0
};

// Index of the first maximum; lowest index wins ties.
Index argmax_lowest(const Eigen::Ref<const Eigen::RowVectorXd>& row);

Classification zero_shot_classify(const Eigen::Ref<const Matrix>& aligned, const ConceptBank& bank);

double zero_shot_accuracy(const Eigen::Ref<const Matrix>& aligned, const ConceptBank& bank,
                          const Labels& labels);

// JSON {"dim": d, "concepts": [{"name": s, "vector": [...]}]}.
void save_concept_bank(const ConceptBank& bank, const std::filesystem::path& path);
// EMB1 with a "names" array in the sidecar.
void save_concept_bank_emb1(const ConceptBank& bank, const std::filesystem::path& path);
// Accepts either layout; EMB1 is detected by its magic.
ConceptBank load_concept_bank(const std::filesystem::path& path);

// One prompt per line, blank lines skipped.
std::vector<std::string> read_prompt_list(const std::filesystem::path& path);

}  // namespace xalign
