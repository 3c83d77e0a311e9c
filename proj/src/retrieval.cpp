#include "xalign/retrieval.hpp"

#include "xalign/cbm.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace xalign {

void ConceptConstraint::validate() const {
  if (sign != 1 && sign != -1) throw ConfigError("constraint sign must be +1 or -1");
  if (!(scale >= 0.0) || !std::isfinite(scale)) throw ConfigError("constraint scale must be a non-negative number");
}

Threshold constraint_threshold(std::span<const double> sims, const ConceptConstraint& constraint) {
  constraint.validate();
  if (sims.size() < 2) throw DegenerateInputError("threshold needs at least two similarities");
  const Eigen::Map<const Eigen::ArrayXd> values(sims.data(), static_cast<Index>(sims.size()));
  const double mean = values.mean();
  const double sd = std::sqrt((values - mean).square().mean());
  if (!(sd > 0.0)) throw DegenerateInputError("similarities have zero variance");
  if (constraint.sign > 0) return {mean + constraint.scale * sd, Direction::above};
  return {mean - constraint.scale * sd, Direction::below};
}

std::vector<Index> filter_similarities(const Eigen::Ref<const Matrix>& sims, const std::vector<std::string>& names,
                                       const std::vector<ConceptConstraint>& constraints) {
  if (constraints.empty()) throw ConfigError("no retrieval constraints");
  if (static_cast<Index>(names.size()) != sims.cols()) throw ShapeError("one concept name per similarity column");
  std::vector<Index> columns;
  columns.reserve(constraints.size());
  for (const auto& c : constraints) {
    c.validate();
    const auto it = std::find(names.begin(), names.end(), c.concept_name);
    if (it == names.end()) throw ConfigError("unknown concept in constraint: " + c.concept_name);
    columns.push_back(static_cast<Index>(it - names.begin()));
  }

  std::vector<bool> keep(static_cast<std::size_t>(sims.rows()), true);
  for (std::size_t c = 0; c < constraints.size(); ++c) {
    const Vector column = sims.col(columns[c]);
    const Threshold t =
        constraint_threshold({column.data(), static_cast<std::size_t>(column.size())}, constraints[c]);
    for (Index i = 0; i < column.size(); ++i)
      if (!t.admits(column[i])) keep[static_cast<std::size_t>(i)] = false;
  }
  std::vector<Index> out;
  for (std::size_t i = 0; i < keep.size(); ++i)
    if (keep[i]) out.push_back(static_cast<Index>(i));
  return out;
}

std::vector<Index> filter(const Eigen::Ref<const Matrix>& aligned, const ConceptBank& bank,
                          const std::vector<ConceptConstraint>& constraints) {
  if (constraints.empty()) throw ConfigError("no retrieval constraints");
  for (const auto& c : constraints)
    if (!bank.find(c.concept_name)) throw ConfigError("unknown concept in constraint: " + c.concept_name);
  return filter_similarities(concept_similarities(aligned, bank).values, bank.names(), constraints);
}

std::vector<ConceptConstraint> load_constraints(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<ConceptConstraint> out;
  try {
    nlohmann::json j;
    in >> j;
    if (!j.is_array()) throw FormatError("constraint file must hold a JSON array");
    for (const auto& item : j) {
      ConceptConstraint c{item.at("concept").get<std::string>(), item.at("scale").get<double>(),
                          item.at("sign").get<int>()};
      c.validate();
      out.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("constraint file " + path.string() + ": " + e.what());
  }
  return out;
}

}  // namespace xalign
