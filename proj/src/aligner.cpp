#include "xalign/aligner.hpp"

#include "xalign/concept_space.hpp"

#include <cmath>
#include <algorithm>
#include <numeric>
#include <random>
#include <set>

namespace xalign {

void SgdConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (schedule_period < 1) throw ConfigError("schedule_period must be at least 1");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (!(target_variance > 0.0)) throw ConfigError("target_variance must be positive");
}

SgdConfig cbm_default_config() {
  SgdConfig cfg;
  cfg.epochs = 40;
  return cfg;
}

CosineSchedule::CosineSchedule(const SgdConfig& cfg, Index n_rows)
    : base_(cfg.learning_rate),
      step_(cfg.schedule_step),
      updates_per_epoch_((n_rows + cfg.batch_size - 1) / cfg.batch_size),
      total_updates_(updates_per_epoch_ * cfg.epochs),
      period_(cfg.schedule_step == ScheduleStep::per_update
                  ? std::max<Index>(1, std::min(cfg.schedule_period, total_updates_))
                  : cfg.schedule_period) {}

double CosineSchedule::learning_rate(Index update, int epoch) const {
  const double t = step_ == ScheduleStep::per_update ? static_cast<double>(update) : static_cast<double>(epoch);
  return base_ * 0.5 * (1.0 + std::cos(std::numbers::pi * t / static_cast<double>(period_)));
}

std::string_view to_string(FitMethod method) {
  switch (method) {
    case FitMethod::closed_form: return "closed_form";
    case FitMethod::sgd: return "sgd";
    case FitMethod::crossentropy: return "crossentropy";
  }
  return "closed_form";
}

FitMethod fit_method_from_string(std::string_view name) {
  if (name == "closed_form" || name == "closed") return FitMethod::closed_form;
  if (name == "sgd") return FitMethod::sgd;
  if (name == "crossentropy" || name == "ce") return FitMethod::crossentropy;
  throw ConfigError("unknown fit method: " + std::string(name));
}

LinearAligner LinearAligner::identity(Index dim) {
  LinearAligner a;
  a.weight = Matrix::Identity(dim, dim);
  a.bias = Vector::Zero(dim);
  return a;
}

namespace {

void check_paired(const Eigen::Ref<const Matrix>& src, Index tgt_rows) {
  if (src.rows() != tgt_rows) throw ShapeError("source and target row counts differ");
  if (src.rows() < 2) throw DataError("need at least two training rows");
  if (!src.allFinite()) throw DataError("source contains non-finite values");
}

RowMatrix<double> gather_rows(const RowMatrix<double>& m, std::span<const Index> rows) {
  RowMatrix<double> out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
  return out;
}

}  // namespace

LinearAligner fit_closed_form(const Eigen::Ref<const Matrix>& src, const Eigen::Ref<const Matrix>& tgt,
                              double ridge, std::optional<double> rescale_variance) {
  check_paired(src, tgt.rows());
  if (!(ridge >= 0.0)) throw ConfigError("ridge must be non-negative");

  LinearAligner out;
  out.provenance = FitMethod::closed_form;
  Matrix z;
  if (rescale_variance) {
    Rescaled r = rescale_to_variance(src, *rescale_variance);
    z = std::move(r.data);
    out.source_scale = r.scale;
  } else {
    z = src;
  }

  const double n = static_cast<double>(z.rows());
  const Eigen::RowVectorXd z_mean = z.colwise().mean();
  const Eigen::RowVectorXd y_mean = tgt.colwise().mean();
  const Matrix zc = z.rowwise() - z_mean;
  const Matrix yc = tgt.rowwise() - y_mean;

  // The bias is unpenalized, so centering eliminates it exactly.
  if (ridge == 0.0) {
    const Eigen::ColPivHouseholderQR<Matrix> qr(zc);
    if (qr.rank() < zc.cols())
      throw SingularSystemError("source design is rank deficient; retry with ridge > 0");
    out.weight = qr.solve(yc);
  } else {
    Matrix gram = zc.transpose() * zc / n;
    gram.diagonal().array() += ridge;
    const Eigen::LLT<Matrix> llt(gram);
    if (llt.info() != Eigen::Success) throw SingularSystemError("ridge system is not positive definite");
    out.weight = llt.solve(zc.transpose() * yc / n);
  }
  out.bias = (y_mean - z_mean * out.weight).transpose();
  if (!out.weight.allFinite() || !out.bias.allFinite())
    throw SingularSystemError("closed-form solution is not finite");
  return out;
}

LinearAligner fit_sgd(const Eigen::Ref<const Matrix>& src, const Eigen::Ref<const Matrix>& tgt,
                      const SgdConfig& cfg) {
  cfg.validate();
  check_paired(src, tgt.rows());

  const Rescaled r = rescale_to_variance(src, cfg.target_variance);
  const RowMatrix<double> z = r.data;
  const RowMatrix<double> y = tgt;

  LinearAligner out;
  out.provenance = FitMethod::sgd;
  out.source_scale = r.scale;
  out.weight = Matrix::Zero(z.cols(), y.cols());
  out.bias = Vector::Zero(y.cols());

  const CosineSchedule schedule(cfg, z.rows());
  out.info.schedule_period = schedule.period();
  out.info.total_updates = schedule.total_updates();
  out.info.loss_trace.reserve(static_cast<std::size_t>(schedule.total_updates()));
  {
    LinearAligner unscaled = out;
    unscaled.source_scale = 1.0;
    out.info.initial_loss = training_objective(unscaled, r.data, tgt);
  }

  MomentumSgd opt(cfg.momentum, cfg.weight_decay);
  run_minibatches(cfg, z.rows(), [&](std::span<const Index> rows, double lr) {
    const RowMatrix<double> zb = gather_rows(z, rows);
    const RowMatrix<double> yb = gather_rows(y, rows);
    const double len = static_cast<double>(rows.size());
    const Matrix residual = (zb * out.weight).rowwise() + out.bias.transpose() - yb;
    const double loss = residual.squaredNorm() / len;
    if (!std::isfinite(loss)) throw DataError("SGD diverged; lower the learning rate");
    out.info.loss_trace.push_back(loss);
    const Matrix grad_w = (2.0 / len) * zb.transpose() * residual;
    const Vector grad_b = (2.0 / len) * residual.colwise().sum().transpose();
    opt.step(0, out.weight, grad_w, lr, true);
    opt.step(1, out.bias, grad_b, lr, false);
  });

  LinearAligner unscaled = out;
  unscaled.source_scale = 1.0;
  out.info.final_loss = training_objective(unscaled, r.data, tgt);
  return out;
}

LinearAligner fit_crossentropy(const Eigen::Ref<const Matrix>& src, const Labels& labels,
                               const ConceptBank& class_vectors, const SgdConfig& cfg) {
  cfg.validate();
  if (static_cast<Index>(labels.size()) != src.rows()) throw ShapeError("labels length does not match rows");
  if (src.rows() < 2) throw DataError("need at least two training rows");
  if (class_vectors.empty()) throw ConfigError("no class vectors");
  const Index n_classes = class_vectors.size();
  for (auto y : labels)
    if (y < 0 || y >= n_classes) throw DataError("label outside the class-vector bank");

  const Rescaled r = rescale_to_variance(src, cfg.target_variance);
  const RowMatrix<double> z = r.data;
  const Matrix& classes = class_vectors.vectors();  // C x d_t, unit rows
  const Index d_t = class_vectors.dim();

  LinearAligner out;
  out.provenance = FitMethod::crossentropy;
  out.source_scale = r.scale;
  out.info.degenerate = n_classes < 2 || std::set<std::int64_t>(labels.begin(), labels.end()).size() < 2;

  // Cosine logits have no gradient at the origin, so start from the default
  // torch.nn.Linear range instead of zero.
  std::mt19937_64 init_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  const double bound = 1.0 / std::sqrt(static_cast<double>(z.cols()));
  std::uniform_real_distribution<double> init(-bound, bound);
  out.weight = Matrix::NullaryExpr(z.cols(), d_t, [&]() { return init(init_rng); });
  out.bias = Vector::NullaryExpr(d_t, [&]() { return init(init_rng); });

  // Returns the mean loss; fills gradients when requested.
  auto evaluate = [&](const RowMatrix<double>& zb, std::span<const Index> rows, Matrix* grad_w, Vector* grad_b) {
    const double len = static_cast<double>(rows.size());
    Matrix u = (zb * out.weight).rowwise() + out.bias.transpose();
    const Vector norms = u.rowwise().norm();
    for (Index i = 0; i < u.rows(); ++i)
      if (norms[i] > 0.0) u.row(i) /= norms[i];
    Matrix probs = u * classes.transpose();
    double loss = 0.0;
    for (Index i = 0; i < probs.rows(); ++i) {
      const double top = probs.row(i).maxCoeff();
      probs.row(i) = (probs.row(i).array() - top).exp().matrix();
      const double total = probs.row(i).sum();
      probs.row(i) /= total;
      loss -= std::log(probs(i, labels[static_cast<std::size_t>(rows[i])]));
    }
    if (grad_w) {
      Matrix g_logits = probs;
      for (Index i = 0; i < g_logits.rows(); ++i) g_logits(i, labels[static_cast<std::size_t>(rows[i])]) -= 1.0;
      g_logits /= len;
      Matrix g_unit = g_logits * classes;  // d loss / d u_hat
      for (Index i = 0; i < g_unit.rows(); ++i) {
        if (!(norms[i] > 1e-12)) {
          g_unit.row(i).setZero();
          continue;
        }
        const double radial = g_unit.row(i).dot(u.row(i));
        g_unit.row(i) = (g_unit.row(i) - radial * u.row(i)) / norms[i];
      }
      *grad_w = zb.transpose() * g_unit;
      *grad_b = g_unit.colwise().sum().transpose();
    }
    return loss / len;
  };

  const CosineSchedule schedule(cfg, z.rows());
  out.info.schedule_period = schedule.period();
  out.info.total_updates = schedule.total_updates();
  std::vector<Index> all(static_cast<std::size_t>(z.rows()));
  std::iota(all.begin(), all.end(), Index{0});
  out.info.initial_loss = evaluate(z, all, nullptr, nullptr);

  MomentumSgd opt(cfg.momentum, cfg.weight_decay);
  Matrix grad_w;
  Vector grad_b;
  run_minibatches(cfg, z.rows(), [&](std::span<const Index> rows, double lr) {
    const RowMatrix<double> zb = gather_rows(z, rows);
    const double loss = evaluate(zb, rows, &grad_w, &grad_b);
    if (!std::isfinite(loss)) throw DataError("cross-entropy alignment diverged");
    out.info.loss_trace.push_back(loss);
    opt.step(0, out.weight, grad_w, lr, true);
    opt.step(1, out.bias, grad_b, lr, false);
  });
  out.info.final_loss = evaluate(z, all, nullptr, nullptr);
  return out;
}

Matrix apply(const LinearAligner& aligner, const Eigen::Ref<const Matrix>& src) {
  if (src.cols() != aligner.source_dim()) throw ShapeError("source dimension does not match aligner");
  Matrix out = aligner.source_scale * (src * aligner.weight);
  out.rowwise() += aligner.bias.transpose();
  return out;
}

Vector apply_row(const LinearAligner& aligner, const Eigen::Ref<const Vector>& row) {
  if (row.size() != aligner.source_dim()) throw ShapeError("source dimension does not match aligner");
  return aligner.source_scale * (aligner.weight.transpose() * row) + aligner.bias;
}

double r_squared(const Eigen::Ref<const Matrix>& predicted, const Eigen::Ref<const Matrix>& tgt) {
  if (predicted.rows() != tgt.rows() || predicted.cols() != tgt.cols())
    throw ShapeError("prediction and target shapes differ");
  const double total = (tgt.rowwise() - tgt.colwise().mean()).squaredNorm();
  if (!(total > 0.0)) throw DegenerateInputError("target has zero variance");
  return 1.0 - (predicted - tgt).squaredNorm() / total;
}

double r_squared(const LinearAligner& aligner, const Eigen::Ref<const Matrix>& src,
                 const Eigen::Ref<const Matrix>& tgt) {
  if (src.rows() != tgt.rows()) throw ShapeError("source and target row counts differ");
  return r_squared(apply(aligner, src), tgt);
}

double training_objective(const LinearAligner& aligner, const Eigen::Ref<const Matrix>& src,
                          const Eigen::Ref<const Matrix>& tgt, double ridge) {
  if (src.rows() != tgt.rows()) throw ShapeError("source and target row counts differ");
  const double residual = (apply(aligner, src) - tgt).squaredNorm() / static_cast<double>(src.rows());
  return residual + ridge * aligner.weight.squaredNorm();
}

TargetHead linear_head(Matrix weights, Vector bias) {
  if (bias.size() != weights.cols()) throw ShapeError("head bias length does not match classes");
  return [w = std::move(weights), b = std::move(bias)](const Matrix& x) {
    if (x.cols() != w.rows()) throw ShapeError("head input dimension mismatch");
    const Matrix logits = (x * w).rowwise() + b.transpose();
    std::vector<Index> out(static_cast<std::size_t>(x.rows()));
    for (Index i = 0; i < x.rows(); ++i) out[i] = argmax_lowest(logits.row(i));
    return out;
  };
}

TargetHead nearest_concept_head(const ConceptBank& bank) {
  return [bank](const Matrix& x) {
    const Classification c = zero_shot_classify(x, bank);
    return std::vector<Index>(c.labels.begin(), c.labels.end());
  };
}

AlignmentReport evaluate_alignment(const LinearAligner& aligner, const Eigen::Ref<const Matrix>& src_test,
                                   const Eigen::Ref<const Matrix>& tgt_test, const Labels& labels,
                                   const TargetHead& target_head) {
  if (src_test.rows() != tgt_test.rows() || static_cast<Index>(labels.size()) != src_test.rows())
    throw ShapeError("test matrices and labels disagree in length");
  if (src_test.rows() == 0) throw DataError("empty test set");

  const Matrix aligned = apply(aligner, src_test);
  const Matrix target = tgt_test;
  AlignmentReport report;
  report.n_eval = src_test.rows();
  report.r_squared = r_squared(aligned, target);

  const auto aligned_pred = target_head(aligned);
  const auto target_pred = target_head(target);
  std::size_t aligned_hits = 0, target_hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    aligned_hits += aligned_pred[i] == labels[i];
    target_hits += target_pred[i] == labels[i];
  }
  const double n = static_cast<double>(labels.size());
  report.aligned_accuracy = static_cast<double>(aligned_hits) / n;
  report.target_accuracy = static_cast<double>(target_hits) / n;
  if (report.target_accuracy > 0.0) {
    report.retained_accuracy = report.aligned_accuracy / report.target_accuracy;
  } else {
    report.retained_accuracy = 0.0;
    report.target_accuracy_zero = true;
  }
  return report;
}

nlohmann::json to_json(const AlignmentReport& report) {
  return {{"r_squared", report.r_squared},
          {"aligned_accuracy", report.aligned_accuracy},
          {"target_accuracy", report.target_accuracy},
          {"retained_accuracy", report.retained_accuracy},
          {"target_accuracy_zero", report.target_accuracy_zero},
          {"n_eval", report.n_eval}};
}

std::vector<SweepPoint> sweep_alignment(const Eigen::Ref<const Matrix>& src, const Eigen::Ref<const Matrix>& tgt,
                                        const Labels& train_labels, const Eigen::Ref<const Matrix>& src_test,
                                        const Eigen::Ref<const Matrix>& tgt_test, const Labels& test_labels,
                                        const TargetHead& head, const SweepOptions& options) {
  if (src.rows() != tgt.rows() || static_cast<Index>(train_labels.size()) != src.rows())
    throw ShapeError("training matrices and labels disagree in length");
  if (options.fractions.empty()) throw ConfigError("no sweep fractions");
  for (double f : options.fractions)
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("sweep fractions must lie in (0, 1]");

  std::mt19937_64 rng(options.sgd.seed);
  std::vector<Index> order(static_cast<std::size_t>(src.rows()));
  std::iota(order.begin(), order.end(), Index{0});
  std::vector<std::int64_t> classes;
  if (options.mode == SweepMode::rows) {
    std::shuffle(order.begin(), order.end(), rng);
  } else {
    std::set<std::int64_t> distinct(train_labels.begin(), train_labels.end());
    classes.assign(distinct.begin(), distinct.end());
    std::shuffle(classes.begin(), classes.end(), rng);
  }

  std::vector<SweepPoint> out;
  for (double f : options.fractions) {
    std::vector<Index> rows;
    if (options.mode == SweepMode::rows) {
      const auto take = std::max<Index>(2, static_cast<Index>(std::ceil(f * static_cast<double>(src.rows()))));
      rows.assign(order.begin(), order.begin() + std::min<Index>(take, src.rows()));
    } else {
      const auto take = std::max<Index>(1, static_cast<Index>(std::ceil(f * static_cast<double>(classes.size()))));
      const std::set<std::int64_t> chosen(classes.begin(), classes.begin() + std::min<Index>(take, classes.size()));
      for (Index i = 0; i < src.rows(); ++i)
        if (chosen.count(train_labels[static_cast<std::size_t>(i)])) rows.push_back(i);
    }
    const Matrix sub_src = src(rows, Eigen::all);
    const Matrix sub_tgt = tgt(rows, Eigen::all);
    SweepPoint point;
    point.fraction = f;
    point.n_train = static_cast<Index>(rows.size());
    std::set<std::int64_t> used;
    for (Index r : rows) used.insert(train_labels[static_cast<std::size_t>(r)]);
    point.n_classes = static_cast<Index>(used.size());
    const LinearAligner fit = options.method == FitMethod::sgd ? fit_sgd(sub_src, sub_tgt, options.sgd)
                                                               : fit_closed_form(sub_src, sub_tgt, options.ridge);
    point.report = evaluate_alignment(fit, src_test, tgt_test, test_labels, head);
    out.push_back(point);
  }
  return out;
}

void save_aligner(const LinearAligner& aligner, const std::filesystem::path& path) {
  Matrix stacked(aligner.source_dim() + 1, aligner.target_dim());
  stacked.topRows(aligner.source_dim()) = aligner.weight;
  stacked.bottomRows(1) = aligner.bias.transpose();
  DatasetMeta meta;
  meta.extra = {{"source_scale", aligner.source_scale},
                {"provenance", std::string(to_string(aligner.provenance))},
                {"source_dim", aligner.source_dim()},
                {"target_dim", aligner.target_dim()}};
  write_embeddings(stacked, meta, path);
}

LinearAligner load_aligner(const std::filesystem::path& path) {
  const Embeddings emb = read_embeddings(path);
  const auto& extra = emb.meta.extra;
  LinearAligner out;
  try {
    const auto source_dim = extra.at("source_dim").get<Index>();
    const auto target_dim = extra.at("target_dim").get<Index>();
    if (emb.data.rows() != source_dim + 1 || emb.data.cols() != target_dim)
      throw FormatError("aligner matrix shape disagrees with its sidecar");
    out.source_scale = extra.at("source_scale").get<double>();
    out.provenance = fit_method_from_string(extra.at("provenance").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("aligner sidecar " + path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(e.what());
  }
  if (!(out.source_scale > 0.0)) throw FormatError("aligner source_scale must be positive");
  const Matrix stacked = emb.data.cast<double>();
  out.weight = stacked.topRows(stacked.rows() - 1);
  out.bias = stacked.bottomRows(1).transpose();
  return out;
}

}  // namespace xalign
