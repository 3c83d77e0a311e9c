#include "xalign/drift.hpp"

#include "xalign/cbm.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace xalign {

double kolmogorov_survival(double lambda) {
  if (!(lambda > 0.0)) return 1.0;
  if (lambda < 1.18) {
    // Dual (Jacobi theta) form of the same series; the alternating form cancels badly here.
    const double pi = std::numbers::pi;
    double cdf = 0.0;
    for (int k = 1; k <= 8; ++k) {
      const double odd = 2.0 * k - 1.0;
      cdf += std::exp(-odd * odd * pi * pi / (8.0 * lambda * lambda));
    }
    return std::clamp(1.0 - std::sqrt(2.0 * pi) / lambda * cdf, 0.0, 1.0);
  }
  // Terms decay monotonically, so truncation error is below the first dropped term.
  double sum = 0.0;
  double sign = 1.0;
  for (int k = 1; k < 100; ++k) {
    const double kd = static_cast<double>(k);
    const double term = std::exp(-2.0 * kd * kd * lambda * lambda);
    sum += sign * term;
    if (term < 1e-17) break;
    sign = -sign;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

KSResult ks_test(std::span<const double> sample_a, std::span<const double> sample_b) {
  if (sample_a.size() < 2 || sample_b.size() < 2) throw DataError("KS test needs at least two points per sample");
  std::vector<double> a(sample_a.begin(), sample_a.end());
  std::vector<double> b(sample_b.begin(), sample_b.end());
  for (double v : a)
    if (!std::isfinite(v)) throw DataError("KS sample contains non-finite values");
  for (double v : b)
    if (!std::isfinite(v)) throw DataError("KS sample contains non-finite values");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());

  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  std::uint64_t gap = 0;  // max |i * nb - j * na|, exact in integers
  // Step both ECDFs past every copy of the next smallest value before
  // comparing, so ties across samples never open a spurious gap.
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == x) ++i;
    while (j < b.size() && b[j] == x) ++j;
    const std::uint64_t lhs = i * b.size(), rhs = j * a.size();
    gap = std::max(gap, lhs > rhs ? lhs - rhs : rhs - lhs);
  }
  const double d = static_cast<double>(gap) / (na * nb);

  KSResult r;
  r.statistic = d;
  r.n_ref = static_cast<Index>(a.size());
  r.n_new = static_cast<Index>(b.size());
  if (d == 0.0) {
    r.p_value = 1.0;
    return r;
  }
  const double ne = na * nb / (na + nb);
  const double root = std::sqrt(ne);
  r.p_value = kolmogorov_survival((root + 0.12 + 0.11 / root) * d);
  return r;
}

DriftReport scan_concept_bank(const Eigen::Ref<const Matrix>& ref_aligned, const Eigen::Ref<const Matrix>& new_aligned,
                              const ConceptBank& bank, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
  const Similarities ref = concept_similarities(ref_aligned, bank);
  const Similarities cur = concept_similarities(new_aligned, bank);

  DriftReport report;
  report.alpha = alpha;
  report.zero_rows_ref = ref.zero_rows;
  report.zero_rows_new = cur.zero_rows;
  report.concepts.reserve(static_cast<std::size_t>(bank.size()));
  for (Index c = 0; c < bank.size(); ++c) {
    const Vector ref_col = ref.values.col(c);
    const Vector new_col = cur.values.col(c);
    ConceptDrift entry;
    entry.name = bank.name(c);
    entry.ks = ks_test({ref_col.data(), static_cast<std::size_t>(ref_col.size())},
                       {new_col.data(), static_cast<std::size_t>(new_col.size())});
    entry.mean_shift = new_col.mean() - ref_col.mean();
    entry.flagged = entry.ks.p_value < alpha;
    report.concepts.push_back(std::move(entry));
  }
  std::sort(report.concepts.begin(), report.concepts.end(), [](const ConceptDrift& x, const ConceptDrift& y) {
    if (x.ks.p_value != y.ks.p_value) return x.ks.p_value < y.ks.p_value;
    if (std::abs(x.mean_shift) != std::abs(y.mean_shift)) return std::abs(x.mean_shift) > std::abs(y.mean_shift);
    return x.name < y.name;
  });
  return report;
}

nlohmann::json to_json(const DriftReport& report) {
  nlohmann::json concepts = nlohmann::json::array();
  for (const auto& c : report.concepts) {
    concepts.push_back({{"name", c.name},
                        {"statistic", c.ks.statistic},
                        {"p_value", c.ks.p_value},
                        {"n_ref", c.ks.n_ref},
                        {"n_new", c.ks.n_new},
                        {"mean_shift", c.mean_shift},
                        {"flagged", c.flagged}});
  }
  return {{"alpha", report.alpha},
          {"note", "raw per-concept p-values; no multiple-comparison correction applied"},
          {"zero_rows_ref", report.zero_rows_ref},
          {"zero_rows_new", report.zero_rows_new},
          {"concepts", concepts}};
}

void write_drift_histograms(std::ostream& out, const Eigen::Ref<const Matrix>& ref_aligned,
                            const Eigen::Ref<const Matrix>& new_aligned, const ConceptBank& bank, Index bins) {
  if (bins < 1) throw ConfigError("histogram needs at least one bin");
  const Similarities ref = concept_similarities(ref_aligned, bank);
  const Similarities cur = concept_similarities(new_aligned, bank);
  out << "concept,bin_lo,bin_hi,ref_count,new_count\n";
  out.precision(9);
  for (Index c = 0; c < bank.size(); ++c) {
    const double lo = std::min(ref.values.col(c).minCoeff(), cur.values.col(c).minCoeff());
    double hi = std::max(ref.values.col(c).maxCoeff(), cur.values.col(c).maxCoeff());
    if (!(hi > lo)) hi = lo + 1e-9;
    const double width = (hi - lo) / static_cast<double>(bins);
    std::vector<long> ref_counts(static_cast<std::size_t>(bins)), new_counts(static_cast<std::size_t>(bins));
    auto bin_of = [&](double v) {
      return static_cast<std::size_t>(std::clamp<Index>(static_cast<Index>((v - lo) / width), 0, bins - 1));
    };
    for (Index i = 0; i < ref.values.rows(); ++i) ++ref_counts[bin_of(ref.values(i, c))];
    for (Index i = 0; i < cur.values.rows(); ++i) ++new_counts[bin_of(cur.values(i, c))];
    for (Index b = 0; b < bins; ++b) {
      out << bank.name(c) << ',' << lo + width * static_cast<double>(b) << ','
          << lo + width * static_cast<double>(b + 1) << ',' << ref_counts[b] << ',' << new_counts[b] << '\n';
    }
  }
}

}  // namespace xalign
