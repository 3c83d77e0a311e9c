#include "xalign/aligner.hpp"
#include "xalign/concept_space.hpp"
#include "xalign/synth.hpp"

#include "test_util.hpp"

#include <cmath>

namespace xalign {
namespace {

using testing::gaussian;

// Solves the augmented normal equations ([Z 1]^T [Z 1] / n + R) x = [Z 1]^T Y / n
// by Gaussian elimination with partial pivoting, R = ridge on the W block only.
std::pair<Matrix, Vector> normal_equations_oracle(const Matrix& z, const Matrix& y, double ridge) {
  const Index n = z.rows(), d = z.cols(), m = d + 1, t = y.cols();
  std::vector<std::vector<double>> a(m, std::vector<double>(m + t, 0.0));
  for (Index r = 0; r < n; ++r) {
    for (Index i = 0; i < m; ++i) {
      const double zi = i < d ? z(r, i) : 1.0;
      for (Index j = 0; j < m; ++j) a[i][j] += zi * (j < d ? z(r, j) : 1.0) / n;
      for (Index c = 0; c < t; ++c) a[i][m + c] += zi * y(r, c) / n;
    }
  }
  for (Index i = 0; i < d; ++i) a[i][i] += ridge;
  for (Index col = 0; col < m; ++col) {
    Index pivot = col;
    for (Index r = col + 1; r < m; ++r)
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    std::swap(a[col], a[pivot]);
    for (Index r = 0; r < m; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / a[col][col];
      for (Index c = col; c < m + t; ++c) a[r][c] -= f * a[col][c];
    }
  }
  Matrix w(d, t);
  Vector b(t);
  for (Index c = 0; c < t; ++c) {
    for (Index i = 0; i < d; ++i) w(i, c) = a[i][m + c] / a[i][i];
    b[c] = a[d][m + c] / a[d][d];
  }
  return {w, b};
}

TEST(ClosedForm, ExactLine) {
  Matrix src(3, 1), tgt(3, 1);
  src << 1, 2, 3;
  tgt << 3, 5, 7;
  const LinearAligner a = fit_closed_form(src, tgt, 0.0);
  EXPECT_NEAR(a.weight(0, 0), 2.0, 1e-12);
  EXPECT_NEAR(a.bias[0], 1.0, 1e-12);
  EXPECT_EQ(a.source_scale, 1.0);
  EXPECT_EQ(a.provenance, FitMethod::closed_form);
}

TEST(ClosedForm, ZeroSourceBiasAbsorbsMean) {
  const Matrix src = Matrix::Zero(50, 4);
  const Matrix tgt = gaussian(50, 3, 1).array() + 2.0;
  const LinearAligner a = fit_closed_form(src, tgt, 1e-6);
  EXPECT_LT(a.weight.cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_TRUE(a.bias.isApprox(tgt.colwise().mean().transpose(), 1e-12));
}

TEST(ClosedForm, MatchesNormalEquationsOracle) {
  const Matrix src = gaussian(2000, 64, 2);
  const Matrix tgt = src * gaussian(64, 32, 3) + 0.5 * gaussian(2000, 32, 4);
  for (double ridge : {0.0, 0.1}) {
    const LinearAligner a = fit_closed_form(src, tgt, ridge);
    const auto [w, b] = normal_equations_oracle(src, tgt, ridge);
    LinearAligner oracle;
    oracle.weight = w;
    oracle.bias = b;
    const double fit_res = training_objective(a, src, tgt);
    const double oracle_res = training_objective(oracle, src, tgt);
    EXPECT_NEAR(fit_res, oracle_res, 1e-6 * oracle_res) << "ridge " << ridge;
    EXPECT_TRUE(a.weight.isApprox(w, 1e-8));
  }
}

TEST(ClosedForm, Errors) {
  EXPECT_THROW(fit_closed_form(Matrix::Ones(3, 2), Matrix::Ones(4, 2), 0.0), ShapeError);
  EXPECT_THROW(fit_closed_form(Matrix::Ones(3, 2), Matrix::Ones(3, 2), 0.0), SingularSystemError);
  EXPECT_THROW(fit_closed_form(Matrix::Ones(1, 2), Matrix::Ones(1, 2), 0.0), DataError);
  EXPECT_THROW(fit_closed_form(gaussian(5, 2, 1), gaussian(5, 2, 2), -1.0), ConfigError);
}

TEST(ClosedForm, RescaleVarianceIsCompensated) {
  const Matrix src = gaussian(200, 6, 5);
  const Matrix tgt = gaussian(200, 3, 6);
  const LinearAligner plain = fit_closed_form(src, tgt, 0.0);
  const LinearAligner scaled = fit_closed_form(src, tgt, 0.0, 4.5);
  EXPECT_NEAR(scaled.source_scale, std::sqrt(4.5 / element_variance(src)), 1e-12);
  EXPECT_TRUE(apply(plain, src).isApprox(apply(scaled, src), 1e-10));
}

TEST(ClosedForm, FirstOrderOptimality) {
  const Matrix src = gaussian(300, 8, 7);
  const Matrix tgt = src * gaussian(8, 5, 8) + gaussian(300, 5, 9);
  const double ridge = 0.05;
  const LinearAligner fit = fit_closed_form(src, tgt, ridge);
  const double base = training_objective(fit, src, tgt, ridge);
  for (int trial = 0; trial < 50; ++trial) {
    LinearAligner p = fit;
    Matrix dw = gaussian(8, 5, 100 + trial);
    Vector db = gaussian(5, 1, 200 + trial);
    const double norm = std::sqrt(dw.squaredNorm() + db.squaredNorm());
    p.weight += 1e-3 * dw / norm;
    p.bias += 1e-3 * db / norm;
    EXPECT_GE(training_objective(p, src, tgt, ridge), base - 1e-9);
  }
}

TEST(ClosedForm, ResidualNondecreasingInRidge) {
  const Matrix src = gaussian(400, 10, 10);
  const Matrix tgt = src * gaussian(10, 4, 11) + gaussian(400, 4, 12);
  double previous = -1.0;
  for (double ridge : {0.0, 1e-4, 1e-2, 0.1, 1.0, 10.0}) {
    const double residual = training_objective(fit_closed_form(src, tgt, ridge), src, tgt);
    EXPECT_GE(residual, previous - 1e-12) << "ridge " << ridge;
    previous = residual;
  }
}

TEST(ClosedForm, PositiveSourceScalingLeavesPredictionsUnchanged) {
  const Matrix src = gaussian(500, 12, 13);
  const Matrix tgt = src * gaussian(12, 6, 14) + 0.3 * gaussian(500, 6, 15);
  const Matrix pred = apply(fit_closed_form(src, tgt, 0.0), src);
  for (double c : {0.01, 3.7, 250.0}) {
    const Matrix scaled = c * src;
    EXPECT_LT((apply(fit_closed_form(scaled, tgt, 0.0), scaled) - pred).cwiseAbs().maxCoeff(), 1e-5);
  }
}

TEST(Sgd, TracksClosedFormOnNoiselessProblem) {
  const Matrix src = gaussian(10000, 64, 16);
  const Matrix w = gaussian(64, 32, 17) / 8.0;
  const Matrix tgt = src * w;
  const Matrix src_test = gaussian(1000, 64, 18);
  const Matrix tgt_test = src_test * w;
  const double closed = r_squared(fit_closed_form(src, tgt, 1e-6), src_test, tgt_test);
  const LinearAligner sgd = fit_sgd(src, tgt);
  EXPECT_EQ(sgd.provenance, FitMethod::sgd);
  EXPECT_NEAR(r_squared(sgd, src_test, tgt_test), closed, 0.02);
}

TEST(Sgd, RejectsBadConfig) {
  SgdConfig cfg;
  cfg.epochs = 0;
  EXPECT_THROW(fit_sgd(gaussian(10, 2, 1), gaussian(10, 2, 2), cfg), ConfigError);
  cfg = {};
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.learning_rate = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_THROW(fit_sgd(gaussian(10, 2, 1), gaussian(9, 2, 2)), ShapeError);
}

TEST(Sgd, SameSeedIsBitIdentical) {
  const Matrix src = gaussian(700, 9, 19);
  const Matrix tgt = gaussian(700, 4, 20);
  SgdConfig cfg;
  cfg.seed = 42;
  const LinearAligner a = fit_sgd(src, tgt, cfg);
  const LinearAligner b = fit_sgd(src, tgt, cfg);
  EXPECT_EQ(a.weight, b.weight);
  EXPECT_EQ(a.bias, b.bias);
  cfg.seed = 43;
  EXPECT_NE(fit_sgd(src, tgt, cfg).weight, a.weight);
}

TEST(Sgd, LossTraceFiniteAndDecreasing) {
  const Matrix src = gaussian(1500, 16, 21);
  const Matrix tgt = src * gaussian(16, 8, 22) + 0.1 * gaussian(1500, 8, 23);
  const LinearAligner a = fit_sgd(src, tgt);
  ASSERT_EQ(static_cast<Index>(a.info.loss_trace.size()), a.info.total_updates);
  for (double l : a.info.loss_trace) EXPECT_TRUE(std::isfinite(l));
  EXPECT_LE(a.info.final_loss, a.info.initial_loss);
  EXPECT_EQ(a.info.total_updates, 3 * 6);
  EXPECT_EQ(a.info.schedule_period, 18);
  EXPECT_NEAR(a.source_scale, std::sqrt(4.5 / element_variance(src)), 1e-12);
}

TEST(Schedule, CosineShapeAndStepping) {
  SgdConfig cfg;
  const CosineSchedule per_update(cfg, 10000);
  EXPECT_EQ(per_update.updates_per_epoch(), 20);
  EXPECT_EQ(per_update.total_updates(), 120);
  EXPECT_EQ(per_update.period(), 120);
  EXPECT_DOUBLE_EQ(per_update.learning_rate(0, 0), 0.01);
  EXPECT_NEAR(per_update.learning_rate(60, 3), 0.005, 1e-15);
  cfg.schedule_step = ScheduleStep::per_epoch;
  const CosineSchedule per_epoch(cfg, 10000);
  EXPECT_EQ(per_epoch.period(), 200);
  EXPECT_DOUBLE_EQ(per_epoch.learning_rate(19, 0), 0.01);
  EXPECT_NEAR(per_epoch.learning_rate(100, 5), 0.01 * 0.5 * (1 + std::cos(std::numbers::pi * 5 / 200)), 1e-15);
}

TEST(Schedule, MinibatchesCoverEveryRowOncePerEpoch) {
  SgdConfig cfg;
  cfg.batch_size = 7;
  cfg.epochs = 3;
  std::vector<int> seen(50, 0);
  Index batches = 0;
  run_minibatches(cfg, 50, [&](std::span<const Index> rows, double) {
    for (Index r : rows) ++seen[static_cast<std::size_t>(r)];
    ++batches;
  });
  EXPECT_EQ(batches, 8 * 3);
  for (int s : seen) EXPECT_EQ(s, 3);
}

TEST(MomentumSgd, MatchesTorchUpdateRule) {
  MomentumSgd opt(0.9, 0.1);
  Matrix p = Matrix::Constant(1, 1, 1.0);
  const Matrix g = Matrix::Constant(1, 1, 0.5);
  opt.step(0, p, g, 0.1, true);  // v = 0.5 + 0.1 = 0.6; p = 1 - 0.06
  EXPECT_NEAR(p(0, 0), 0.94, 1e-15);
  opt.step(0, p, g, 0.1, true);  // v = 0.54 + 0.5 + 0.094 = 1.134
  EXPECT_NEAR(p(0, 0), 0.94 - 0.1134, 1e-15);
}

TEST(CrossEntropy, SeparatesSyntheticClusters) {
  SynthConfig cfg;
  cfg.n_samples = 2000;
  cfg.n_classes = 2;
  cfg.latent_dim = 4;
  cfg.d_source = 16;
  cfg.d_target = 12;
  cfg.seed = 5;
  const SynthData data = gen_paired_spaces(cfg);
  const ConceptBank bank = gen_concept_bank(data.truth);
  SgdConfig sgd;
  sgd.seed = 1;
  const LinearAligner a = fit_crossentropy(data.src, data.labels, bank, sgd);
  EXPECT_EQ(a.provenance, FitMethod::crossentropy);
  EXPECT_FALSE(a.info.degenerate);
  EXPECT_GE(zero_shot_accuracy(apply(a, data.src), bank, data.labels), 0.99);
  EXPECT_LT(a.info.final_loss, a.info.initial_loss);
}

TEST(CrossEntropy, SingleClassIsFlaggedDegenerate) {
  ConceptBank bank(3);
  bank.add("only", Vector::Unit(3, 0));
  const Labels labels(40, 0);
  const LinearAligner a = fit_crossentropy(gaussian(40, 5, 30), labels, bank);
  EXPECT_TRUE(a.info.degenerate);
  EXPECT_NEAR(a.info.final_loss, 0.0, 1e-12);
}

TEST(CrossEntropy, DeterministicAndValidatesLabels) {
  ConceptBank bank(3);
  bank.add("a", Vector::Unit(3, 0));
  bank.add("b", Vector::Unit(3, 1));
  const Matrix src = gaussian(60, 4, 31);
  Labels labels(60);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = src(static_cast<Index>(i), 0) > 0;
  SgdConfig cfg;
  cfg.seed = 9;
  const LinearAligner a = fit_crossentropy(src, labels, bank, cfg);
  const LinearAligner b = fit_crossentropy(src, labels, bank, cfg);
  EXPECT_EQ(a.weight, b.weight);
  EXPECT_EQ(a.bias, b.bias);
  labels[3] = 2;
  EXPECT_THROW(fit_crossentropy(src, labels, bank, cfg), DataError);
}

TEST(Apply, IdentityConstantAndLoopOracle) {
  const Matrix x = gaussian(20, 5, 40);
  EXPECT_EQ(apply(LinearAligner::identity(5), x), x);

  LinearAligner constant;
  constant.weight = Matrix::Zero(5, 3);
  constant.bias = Vector::LinSpaced(3, 1.0, 3.0);
  const Matrix c = apply(constant, x);
  for (Index i = 0; i < c.rows(); ++i) EXPECT_EQ(Vector(c.row(i).transpose()), constant.bias);

  LinearAligner random;
  random.weight = gaussian(5, 4, 41);
  random.bias = gaussian(4, 1, 42);
  random.source_scale = 1.7;
  const Matrix out = apply(random, x);
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index j = 0; j < 4; ++j) {
      double dot = random.bias[j];
      for (Index k = 0; k < 5; ++k) dot += random.weight(k, j) * 1.7 * x(i, k);
      EXPECT_NEAR(out(i, j), dot, 1e-6);
    }
    EXPECT_TRUE(apply_row(random, x.row(i).transpose()).isApprox(out.row(i).transpose(), 1e-12));
  }
  EXPECT_THROW(apply(random, gaussian(2, 6, 43)), ShapeError);
}

TEST(RSquared, PerfectMeanAndDegenerate) {
  const Matrix y = gaussian(30, 4, 50);
  EXPECT_DOUBLE_EQ(r_squared(y, y), 1.0);
  const Matrix mean = y.colwise().mean().replicate(30, 1);
  EXPECT_NEAR(r_squared(mean, y), 0.0, 1e-12);
  EXPECT_THROW(r_squared(y, Matrix(Matrix::Ones(30, 4))), DegenerateInputError);
  EXPECT_DOUBLE_EQ(r_squared(LinearAligner::identity(4), y, y), 1.0);
}

TEST(RSquared, NoiseFloor) {
  const Matrix src = gaussian(20000, 16, 51);
  const Matrix clean = src * gaussian(16, 16, 52) / 4.0;
  const double sigma = 0.5;
  const Matrix tgt = clean + sigma * gaussian(20000, 16, 53);
  const Matrix src_test = gaussian(5000, 16, 54);
  const Matrix tgt_test = src_test * gaussian(16, 16, 52) / 4.0 + sigma * gaussian(5000, 16, 55);
  const double analytic = 1.0 - sigma * sigma / element_variance(tgt);
  EXPECT_NEAR(r_squared(fit_closed_form(src, tgt, 0.0), src_test, tgt_test), analytic, 0.03);
}

TEST(Evaluate, IdentityRetainsEverything) {
  const Matrix x = gaussian(100, 3, 60);
  ConceptBank bank(3);
  for (Index i = 0; i < 3; ++i) bank.add("e" + std::to_string(i), Vector::Unit(3, i));
  Labels labels(100);
  for (Index i = 0; i < 100; ++i) labels[i] = i % 3;
  const AlignmentReport r = evaluate_alignment(LinearAligner::identity(3), x, x, labels, nearest_concept_head(bank));
  EXPECT_DOUBLE_EQ(r.retained_accuracy, 1.0);
  EXPECT_DOUBLE_EQ(r.r_squared, 1.0);
  EXPECT_EQ(r.n_eval, 100);
}

TEST(Evaluate, ConstantHead) {
  const Matrix x = gaussian(10, 2, 61);
  const TargetHead constant = [](const Matrix& m) { return std::vector<Index>(m.rows(), 1); };
  const AlignmentReport r = evaluate_alignment(LinearAligner::identity(2), x, x, Labels(10, 1), constant);
  EXPECT_EQ(r.aligned_accuracy, 1.0);
  EXPECT_EQ(r.target_accuracy, 1.0);
  EXPECT_EQ(r.retained_accuracy, 1.0);
  const AlignmentReport zero = evaluate_alignment(LinearAligner::identity(2), x, x, Labels(10, 0), constant);
  EXPECT_TRUE(zero.target_accuracy_zero);
  EXPECT_EQ(zero.retained_accuracy, 0.0);
  EXPECT_THROW(evaluate_alignment(LinearAligner::identity(2), x, x, Labels(9, 0), constant), ShapeError);
}

TEST(Evaluate, MatchesReclassificationLoop) {
  SynthConfig cfg;
  cfg.n_samples = 1500;
  cfg.noise_sigma = 0.8;
  cfg.cluster_separation = 2.0;
  cfg.seed = 3;
  const SynthData data = gen_paired_spaces(cfg);
  const Matrix head_w = gaussian(64, 10, 62);
  const Vector head_b = gaussian(10, 1, 63);
  const LinearAligner a = fit_closed_form(data.src.topRows(1000), data.tgt.topRows(1000), 1e-6);
  const Matrix src_test = data.src.bottomRows(500), tgt_test = data.tgt.bottomRows(500);
  const Labels labels(data.labels.end() - 500, data.labels.end());
  const AlignmentReport r = evaluate_alignment(a, src_test, tgt_test, labels, linear_head(head_w, head_b));

  auto classify = [&](const Vector& v) {
    Index best = 0;
    double best_logit = -1e300;
    for (Index c = 0; c < 10; ++c) {
      double logit = head_b[c];
      for (Index k = 0; k < 64; ++k) logit += v[k] * head_w(k, c);
      if (logit > best_logit) best_logit = logit, best = c;
    }
    return best;
  };
  int aligned_hits = 0, target_hits = 0;
  for (Index i = 0; i < 500; ++i) {
    aligned_hits += classify(apply_row(a, src_test.row(i).transpose())) == labels[i];
    target_hits += classify(tgt_test.row(i).transpose()) == labels[i];
  }
  EXPECT_DOUBLE_EQ(r.aligned_accuracy, aligned_hits / 500.0);
  EXPECT_DOUBLE_EQ(r.target_accuracy, target_hits / 500.0);
  if (target_hits > 0) EXPECT_DOUBLE_EQ(r.retained_accuracy, r.aligned_accuracy / r.target_accuracy);
}

TEST(Sweep, NestedSubsetsAndRefitOracle) {
  SynthConfig cfg;
  cfg.n_samples = 3000;
  cfg.noise_sigma = 0.2;
  cfg.seed = 8;
  const SynthData data = gen_paired_spaces(cfg);
  const Matrix src = data.src.topRows(2000), tgt = data.tgt.topRows(2000);
  const Matrix src_test = data.src.bottomRows(1000), tgt_test = data.tgt.bottomRows(1000);
  const Labels train(data.labels.begin(), data.labels.begin() + 2000);
  const Labels test(data.labels.begin() + 2000, data.labels.end());
  const TargetHead head = nearest_concept_head(gen_concept_bank(data.truth));

  SweepOptions options;
  const auto points = sweep_alignment(src, tgt, train, src_test, tgt_test, test, head, options);
  ASSERT_EQ(points.size(), 5u);
  EXPECT_EQ(points[0].n_train, 100);
  EXPECT_EQ(points[4].n_train, 2000);
  const AlignmentReport full = evaluate_alignment(fit_closed_form(src, tgt, 1e-6), src_test, tgt_test, test, head);
  EXPECT_NEAR(points[4].report.r_squared, full.r_squared, 1e-12);
  EXPECT_DOUBLE_EQ(points[4].report.aligned_accuracy, full.aligned_accuracy);

  options.mode = SweepMode::classes;
  options.fractions = {0.2, 1.0};
  const auto by_class = sweep_alignment(src, tgt, train, src_test, tgt_test, test, head, options);
  EXPECT_EQ(by_class[0].n_classes, 2);
  EXPECT_EQ(by_class[1].n_classes, 10);

  options.fractions = {0.0};
  EXPECT_THROW(sweep_alignment(src, tgt, train, src_test, tgt_test, test, head, options), ConfigError);
}

TEST(AlignerIo, RoundTrip) {
  testing::TempDir dir;
  LinearAligner a;
  a.weight = gaussian(6, 3, 70).cast<float>().cast<double>();
  a.bias = gaussian(3, 1, 71).cast<float>().cast<double>();
  a.source_scale = 0.37;
  a.provenance = FitMethod::sgd;
  save_aligner(a, dir / "a.emb");
  const LinearAligner b = load_aligner(dir / "a.emb");
  EXPECT_EQ(b.weight, a.weight);
  EXPECT_EQ(b.bias, a.bias);
  EXPECT_EQ(b.source_scale, 0.37);
  EXPECT_EQ(b.provenance, FitMethod::sgd);

  write_embeddings(Matrix::Ones(3, 3), {}, dir / "plain.emb");
  EXPECT_THROW(load_aligner(dir / "plain.emb"), FormatError);
}

TEST(FitMethod, NamesRoundTrip) {
  for (FitMethod m : {FitMethod::closed_form, FitMethod::sgd, FitMethod::crossentropy})
    EXPECT_EQ(fit_method_from_string(to_string(m)), m);
  EXPECT_EQ(fit_method_from_string("closed"), FitMethod::closed_form);
  EXPECT_THROW(fit_method_from_string("newton"), ConfigError);
}

}  // namespace
}  // namespace xalign
