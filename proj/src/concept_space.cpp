#include "xalign/concept_space.hpp"

#include "xalign/embedding_store.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <fstream>

namespace xalign {

ConceptBank::ConceptBank(std::vector<std::string> names, const Eigen::Ref<const Matrix>& vectors)
    : dim_(vectors.cols()), vectors_(0, vectors.cols()) {
  if (static_cast<Index>(names.size()) != vectors.rows())
    throw ShapeError("concept names and vectors disagree in count");
  names_.reserve(names.size());
  vectors_.resize(vectors.rows(), vectors.cols());
  for (Index i = 0; i < vectors.rows(); ++i) {
    if (find(names[static_cast<std::size_t>(i)])) throw ConfigError("duplicate concept name: " + names[i]);
    const double norm = vectors.row(i).norm();
    if (!(norm > 0.0) || !std::isfinite(norm))
      throw DegenerateConceptError("concept '" + names[i] + "' has no direction");
    vectors_.row(i) = vectors.row(i) / norm;
    names_.push_back(std::move(names[static_cast<std::size_t>(i)]));
  }
}

void ConceptBank::add(std::string name, const Eigen::Ref<const Vector>& vector) {
  if (dim_ == 0 && names_.empty()) {
    dim_ = vector.size();
    vectors_.resize(0, dim_);
  }
  if (vector.size() != dim_) throw ShapeError("concept dimension mismatch");
  if (find(name)) throw ConfigError("duplicate concept name: " + name);
  const double norm = vector.norm();
  if (!(norm > 0.0) || !std::isfinite(norm))
    throw DegenerateConceptError("concept '" + name + "' has no direction");
  vectors_.conservativeResize(vectors_.rows() + 1, dim_);
  vectors_.row(vectors_.rows() - 1) = vector.transpose() / norm;
  names_.push_back(std::move(name));
}

std::optional<Index> ConceptBank::find(std::string_view name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) return std::nullopt;
  return static_cast<Index>(it - names_.begin());
}

const std::vector<std::string>& default_templates() {
  static const std::vector<std::string> templates = {
      "itap of a {}",       "a bad photo of the {}",  "a origami {}",         "a photo of the large {}",
      "a {} in a video game", "art of the {}", "a photo of the small {}",
  };
  return templates;
}

namespace {

std::size_t count_slots(const std::string& s) {
  std::size_t count = 0;
  for (auto pos = s.find("{}"); pos != std::string::npos; pos = s.find("{}", pos + 2)) ++count;
  return count;
}

}  // namespace

std::vector<std::string> expand_prompts(const PromptSpec& spec) {
  if (spec.templates.empty()) throw ConfigError("no prompt templates");
  for (const auto& t : spec.templates)
    if (count_slots(t) != 1) throw ConfigError("template must contain exactly one {}: " + t);

  static const std::vector<std::string> kObject = {"object"};
  const auto& names = spec.class_names && !spec.class_names->empty() ? *spec.class_names : kObject;

  std::vector<std::string> out;
  out.reserve(spec.templates.size() * names.size());
  for (const auto& t : spec.templates) {
    const auto slot = t.find("{}");
    for (const auto& name : names) {
      std::string prompt = t.substr(0, slot) + name + t.substr(slot + 2);
      if (spec.concept_suffix && !spec.concept_suffix->empty()) prompt += " " + *spec.concept_suffix;
      out.push_back(std::move(prompt));
    }
  }
  return out;
}

Vector build_concept_vector(const Eigen::Ref<const Matrix>& embeddings) {
  if (embeddings.rows() < 1 || embeddings.cols() < 1) throw DataError("no text embeddings");
  Vector sum = Vector::Zero(embeddings.cols());
  for (Index i = 0; i < embeddings.rows(); ++i) {
    const double norm = embeddings.row(i).norm();
    if (!(norm > 0.0)) throw DegenerateConceptError("text embedding row " + std::to_string(i) + " is zero");
    sum += embeddings.row(i).transpose() / norm;
  }
  const Vector mean = sum / static_cast<double>(embeddings.rows());
  const double norm = mean.norm();
  if (norm < 1e-9) throw DegenerateConceptError("text embeddings cancel out");
  return mean / norm;
}

Similarities cosine_similarities(const Eigen::Ref<const Matrix>& rows, const ConceptBank& bank) {
  if (rows.cols() != bank.dim()) throw ShapeError("row dimension does not match concept bank");
  Similarities out;
  out.values = rows * bank.vectors().transpose();
  for (Index i = 0; i < rows.rows(); ++i) {
    const double norm = rows.row(i).norm();
    if (norm > 0.0) {
      out.values.row(i) /= norm;
    } else {
      out.values.row(i).setZero();
      ++out.zero_rows;
    }
  }
  return out;
}

Index argmax_lowest(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  Index best = 0;
  for (Index j = 1; j < row.size(); ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

Classification zero_shot_classify(const Eigen::Ref<const Matrix>& aligned, const ConceptBank& bank) {
  if (bank.empty()) throw ConfigError("concept bank is empty");
  const Similarities sims = cosine_similarities(aligned, bank);
  Classification out;
  out.degenerate_rows = sims.zero_rows;
  out.labels.resize(static_cast<std::size_t>(aligned.rows()));
  for (Index i = 0; i < aligned.rows(); ++i) out.labels[i] = argmax_lowest(sims.values.row(i));
  return out;
}

double zero_shot_accuracy(const Eigen::Ref<const Matrix>& aligned, const ConceptBank& bank,
                          const Labels& labels) {
  if (static_cast<Index>(labels.size()) != aligned.rows())
    throw DataError("labels length does not match row count");
  for (auto y : labels)
    if (y < 0 || y >= bank.size()) throw DataError("label outside concept bank");
  const Classification pred = zero_shot_classify(aligned, bank);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += pred.labels[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

void save_concept_bank(const ConceptBank& bank, const std::filesystem::path& path) {
  nlohmann::json concepts = nlohmann::json::array();
  for (Index i = 0; i < bank.size(); ++i) {
    const Eigen::RowVectorXd v = bank.vectors().row(i);
    concepts.push_back({{"name", bank.name(i)}, {"vector", std::vector<double>(v.data(), v.data() + v.size())}});
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << nlohmann::json{{"dim", bank.dim()}, {"concepts", concepts}}.dump() << '\n';
}

void save_concept_bank_emb1(const ConceptBank& bank, const std::filesystem::path& path) {
  DatasetMeta meta;
  meta.extra["names"] = bank.names();
  meta.normalized = true;
  write_embeddings(bank.vectors(), meta, path);
}

ConceptBank load_concept_bank(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  const bool is_emb1 = in.gcount() == 4 && std::memcmp(magic.data(), "EMB1", 4) == 0;
  in.close();

  if (is_emb1) {
    const Embeddings emb = read_embeddings(path);
    if (!emb.meta.extra.contains("names")) throw FormatError("concept bank sidecar lacks \"names\"");
    auto names = emb.meta.extra.at("names").get<std::vector<std::string>>();
    return ConceptBank(std::move(names), emb.data.cast<double>());
  }

  std::ifstream json_in(path);
  nlohmann::json j;
  try {
    json_in >> j;
    const Index dim = j.at("dim").get<Index>();
    ConceptBank bank(dim);
    for (const auto& c : j.at("concepts")) {
      const auto values = c.at("vector").get<std::vector<double>>();
      bank.add(c.at("name").get<std::string>(), Eigen::Map<const Vector>(values.data(), static_cast<Index>(values.size())));
    }
    return bank;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("concept bank " + path.string() + ": " + e.what());
  }
}

std::vector<std::string> read_prompt_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::string> prompts;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) prompts.push_back(line);
  }
  return prompts;
}

}  // namespace xalign
