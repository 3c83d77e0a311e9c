#include "xalign/cli.hpp"

#include "xalign/aligner.hpp"
#include "xalign/cbm.hpp"
#include "xalign/concept_space.hpp"
#include "xalign/decoder.hpp"
#include "xalign/drift.hpp"
#include "xalign/embedding_store.hpp"
#include "xalign/pc_alignment.hpp"
#include "xalign/retrieval.hpp"
#include "xalign/synth.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace xalign::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Writes `text` to `path`, or to `out` when no path was given.
void emit(const std::string& text, const std::string& path, std::ostream& out) {
  if (path.empty()) {
    out << text;
    return;
  }
  std::ofstream file(path, std::ios::trunc);
  if (!file) throw IoError("cannot write " + path);
  file << text;
  if (!file) throw IoError("short write to " + path);
}

Matrix load_matrix(const std::string& path, DatasetMeta* meta = nullptr) {
  Embeddings emb = read_embeddings(path);
  if (meta) *meta = std::move(emb.meta);
  return emb.data.cast<double>();
}

// Maps rows into the target space when an aligner is supplied.
Matrix maybe_align(const Matrix& rows, const std::string& aligner_path) {
  if (aligner_path.empty()) return rows;
  return apply(load_aligner(aligner_path), rows);
}

Labels require_labels(const DatasetMeta& meta, const std::string& what) {
  if (!meta.labels) throw DataError(what + " has no labels in its sidecar");
  return *meta.labels;
}

struct SgdFlags {
  SgdConfig cfg;
  std::string schedule_step = "update";

  void attach(CLI::App* app) {
    app->add_option("--lr", cfg.learning_rate, "SGD learning rate")->capture_default_str();
    app->add_option("--momentum", cfg.momentum)->capture_default_str();
    app->add_option("--weight-decay", cfg.weight_decay)->capture_default_str();
    app->add_option("--epochs", cfg.epochs)->capture_default_str();
    app->add_option("--batch-size", cfg.batch_size)->capture_default_str();
    app->add_option("--schedule-period", cfg.schedule_period)->capture_default_str();
    app->add_option("--schedule-step", schedule_step, "Cosine schedule steps per 'update' or per 'epoch'")
        ->check(CLI::IsMember({"update", "epoch"}))
        ->capture_default_str();
    app->add_option("--target-variance", cfg.target_variance, "Source element variance before fitting")
        ->capture_default_str();
    app->add_option("--seed", cfg.seed)->capture_default_str();
  }

  SgdConfig resolve() const {
    SgdConfig c = cfg;
    c.schedule_step = schedule_step == "epoch" ? ScheduleStep::per_epoch : ScheduleStep::per_update;
    c.validate();
    return c;
  }
};

std::string format_double(double v) {
  std::ostringstream s;
  s.precision(10);
  s << v;
  return s.str();
}

// Turns keys of a JSON config file into flags for options the command line
// did not set. Keys may use snake_case or kebab-case.
void inject_config(std::vector<std::string>& args, CLI::App& app) {
  std::string config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
  }
  if (config_path.empty()) return;

  CLI::App* active = &app;
  for (const auto& a : args) {
    if (a.empty() || a[0] == '-') continue;
    CLI::App* sub = nullptr;
    try {
      sub = active->get_subcommand(a);
    } catch (const CLI::OptionNotFound&) {
      sub = nullptr;
    }
    if (sub) active = sub;
  }

  std::ifstream in(config_path);
  if (!in) throw IoError("cannot open config " + config_path);
  json cfg;
  try {
    in >> cfg;
  } catch (const json::exception& e) {
    throw FormatError("config " + config_path + ": " + e.what());
  }
  if (!cfg.is_object()) throw FormatError("config file must hold a JSON object");

  for (const auto& [raw_key, value] : cfg.items()) {
    std::string key = raw_key;
    std::replace(key.begin(), key.end(), '_', '-');
    const std::string flag = "--" + key;
    if (key == "config") continue;
    const bool given = std::any_of(args.begin(), args.end(), [&](const std::string& a) {
      return a == flag || a.rfind(flag + "=", 0) == 0;
    });
    if (given) continue;
    const CLI::Option* opt = active->get_option_no_throw(flag);
    if (!opt) continue;  // keys that belong to other commands are ignored

    std::string text;
    if (value.is_string()) {
      text = value.get<std::string>();
    } else if (value.is_boolean()) {
      if (opt->get_expected_min() == 0) {
        if (value.get<bool>()) args.push_back(flag);
        continue;
      }
      text = value.get<bool>() ? "true" : "false";
    } else if (value.is_array()) {
      for (std::size_t i = 0; i < value.size(); ++i) {
        if (i) text += ',';
        text += value[i].is_string() ? value[i].get<std::string>() : value[i].dump();
      }
    } else if (value.is_number_float()) {
      text = format_double(value.get<double>());
    } else {
      text = value.dump();
    }
    args.push_back(flag + "=" + text);
  }
}

}  // namespace

int dispatch(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  if (const char* threads = std::getenv("XALIGN_THREADS")) {
    const int n = std::atoi(threads);
    if (n > 0) Eigen::setNbThreads(n);
  }

  CLI::App app{"Affine alignment of representation spaces and concept tooling", "xalign"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "JSON file whose keys mirror flag names")->trigger_on_parse();
  std::function<void()> action;

  // ---- synth gen
  auto* synth = app.add_subcommand("synth", "Synthetic paired spaces")->require_subcommand(1);
  auto* synth_gen = synth->add_subcommand("gen", "Generate paired EMB1 files with ground truth");
  SynthConfig synth_cfg;
  std::string synth_dir;
  double test_fraction = 0.2;
  synth_gen->add_option("--config", config_path);
  synth_gen->add_option("--out-dir", synth_dir)->required();
  synth_gen->add_option("--n-samples", synth_cfg.n_samples)->capture_default_str();
  synth_gen->add_option("--n-classes", synth_cfg.n_classes)->capture_default_str();
  synth_gen->add_option("--latent-dim", synth_cfg.latent_dim)->capture_default_str();
  synth_gen->add_option("--d-source", synth_cfg.d_source)->capture_default_str();
  synth_gen->add_option("--d-target", synth_cfg.d_target)->capture_default_str();
  synth_gen->add_option("--noise-sigma", synth_cfg.noise_sigma)->capture_default_str();
  synth_gen->add_option("--cluster-separation", synth_cfg.cluster_separation)->capture_default_str();
  synth_gen->add_option("--test-fraction", test_fraction, "Trailing fraction written as the test split")
      ->check(CLI::Range(0.0, 0.95))
      ->capture_default_str();
  synth_gen->add_option("--seed", synth_cfg.seed)->capture_default_str();
  synth_gen->callback([&] {
    action = [&] {
      const SynthData data = gen_paired_spaces(synth_cfg);
      fs::create_directories(synth_dir);
      const fs::path dir(synth_dir);
      const Index n = data.src.rows();
      const Index n_test = static_cast<Index>(std::floor(test_fraction * static_cast<double>(n)));
      const Index n_train = n - n_test;
      if (n_train < 2) throw ConfigError("test fraction leaves fewer than two training rows");
      std::vector<std::string> class_names;
      for (Index c = 0; c < synth_cfg.n_classes; ++c) class_names.push_back("class_" + std::to_string(c));

      auto write_split = [&](const Matrix& m, const std::string& model, const std::string& split, Index start,
                             Index count, const std::string& file) {
        DatasetMeta meta;
        meta.model_id = model;
        meta.dataset_id = "synth_" + split;
        meta.labels = Labels(data.labels.begin() + start, data.labels.begin() + start + count);
        meta.class_names = class_names;
        write_embeddings(m.middleRows(start, count), meta, dir / file);
      };
      write_split(data.src, "synth_source", "train", 0, n_train, "src.emb");
      write_split(data.tgt, "synth_target", "train", 0, n_train, "tgt.emb");
      if (n_test > 0) {
        write_split(data.src, "synth_source", "test", n_train, n_test, "src_test.emb");
        write_split(data.tgt, "synth_target", "test", n_train, n_test, "tgt_test.emb");
      }
      save_concept_bank(gen_concept_bank(data.truth), dir / "bank.json");
      save_aligner(true_aligner(data.truth), dir / "true_aligner.emb");
      json truth = data.truth.to_json();
      truth["config"] = synth_cfg.to_json();
      emit(truth.dump() + "\n", (dir / "truth.json").string(), out);
      out << json{{"out_dir", synth_dir}, {"n_train", n_train}, {"n_test", n_test},
                  {"analytic_r_squared", data.truth.analytic_r_squared()}}
                 .dump()
          << '\n';
    };
  });

  // ---- align
  auto* align = app.add_subcommand("align", "Fit and evaluate affine aligners")->require_subcommand(1);

  auto* align_fit = align->add_subcommand("fit", "Fit an aligner from paired embeddings");
  std::string fit_src, fit_tgt, fit_out, fit_method = "closed", fit_bank;
  double fit_ridge = 1e-6;
  std::optional<double> fit_rescale;
  SgdFlags fit_sgd_flags;
  align_fit->add_option("--config", config_path);
  align_fit->add_option("--src", fit_src)->required();
  align_fit->add_option("--tgt", fit_tgt, "Target embeddings (closed, sgd)");
  align_fit->add_option("--bank", fit_bank, "Class vectors (crossentropy)");
  align_fit->add_option("--method", fit_method)
      ->check(CLI::IsMember({"closed", "closed_form", "sgd", "crossentropy"}))
      ->capture_default_str();
  align_fit->add_option("--ridge", fit_ridge)->capture_default_str();
  align_fit->add_option("--rescale-variance", fit_rescale, "Closed form: rescale the source to this variance first");
  align_fit->add_option("--out", fit_out)->required();
  fit_sgd_flags.attach(align_fit);
  align_fit->callback([&] {
    action = [&] {
      DatasetMeta src_meta;
      const Matrix src = load_matrix(fit_src, &src_meta);
      const FitMethod method = fit_method_from_string(fit_method);
      LinearAligner aligner;
      json summary;
      if (method == FitMethod::crossentropy) {
        if (fit_bank.empty()) throw ConfigError("--bank is required for --method crossentropy");
        const ConceptBank bank = load_concept_bank(fit_bank);
        aligner = fit_crossentropy(src, require_labels(src_meta, fit_src), bank, fit_sgd_flags.resolve());
      } else {
        if (fit_tgt.empty()) throw ConfigError("--tgt is required for this method");
        const Matrix tgt = load_matrix(fit_tgt);
        aligner = method == FitMethod::sgd ? fit_sgd(src, tgt, fit_sgd_flags.resolve())
                                           : fit_closed_form(src, tgt, fit_ridge, fit_rescale);
        summary["train_r_squared"] = r_squared(aligner, src, tgt);
      }
      save_aligner(aligner, fit_out);
      summary["method"] = std::string(to_string(aligner.provenance));
      summary["source_dim"] = aligner.source_dim();
      summary["target_dim"] = aligner.target_dim();
      summary["source_scale"] = aligner.source_scale;
      if (method != FitMethod::closed_form) {
        summary["initial_loss"] = aligner.info.initial_loss;
        summary["final_loss"] = aligner.info.final_loss;
        summary["schedule_period"] = aligner.info.schedule_period;
        summary["total_updates"] = aligner.info.total_updates;
        summary["degenerate"] = aligner.info.degenerate;
      }
      out << summary.dump() << '\n';
    };
  });

  auto* align_eval = align->add_subcommand("eval", "Report R^2 and aligned / retained accuracy");
  std::string eval_aligner, eval_src, eval_tgt, eval_bank, eval_out;
  align_eval->add_option("--config", config_path);
  align_eval->add_option("--aligner", eval_aligner)->required();
  align_eval->add_option("--src", eval_src)->required();
  align_eval->add_option("--tgt", eval_tgt)->required();
  align_eval->add_option("--bank", eval_bank, "Concept bank used as the target-space head");
  align_eval->add_option("--out", eval_out);
  align_eval->callback([&] {
    action = [&] {
      DatasetMeta src_meta, tgt_meta;
      const Matrix src = load_matrix(eval_src, &src_meta);
      const Matrix tgt = load_matrix(eval_tgt, &tgt_meta);
      const LinearAligner aligner = load_aligner(eval_aligner);
      json report;
      if (!eval_bank.empty()) {
        const Labels labels = src_meta.labels ? *src_meta.labels : require_labels(tgt_meta, eval_tgt);
        report = to_json(evaluate_alignment(aligner, src, tgt, labels, nearest_concept_head(load_concept_bank(eval_bank))));
      } else {
        report = {{"r_squared", r_squared(aligner, src, tgt)}, {"n_eval", src.rows()}};
      }
      emit(report.dump(2) + "\n", eval_out, out);
    };
  });

  auto* align_sweep = align->add_subcommand("sweep", "Accuracy versus training fraction (CSV)");
  std::string sweep_src, sweep_tgt, sweep_src_test, sweep_tgt_test, sweep_bank, sweep_out, sweep_mode = "rows",
                                                                                          sweep_method = "closed";
  std::vector<double> sweep_fractions = {0.05, 0.1, 0.2, 0.5, 1.0};
  double sweep_ridge = 1e-6;
  SgdFlags sweep_sgd_flags;
  align_sweep->add_option("--config", config_path);
  align_sweep->add_option("--src", sweep_src)->required();
  align_sweep->add_option("--tgt", sweep_tgt)->required();
  align_sweep->add_option("--src-test", sweep_src_test)->required();
  align_sweep->add_option("--tgt-test", sweep_tgt_test)->required();
  align_sweep->add_option("--bank", sweep_bank, "Concept bank used as the target-space head")->required();
  align_sweep->add_option("--fractions", sweep_fractions)->delimiter(',');
  align_sweep->add_option("--mode", sweep_mode, "Subset 'rows' or 'classes'")
      ->check(CLI::IsMember({"rows", "classes"}))
      ->capture_default_str();
  align_sweep->add_option("--method", sweep_method)->check(CLI::IsMember({"closed", "closed_form", "sgd"}));
  align_sweep->add_option("--ridge", sweep_ridge)->capture_default_str();
  align_sweep->add_option("--out", sweep_out);
  sweep_sgd_flags.attach(align_sweep);
  align_sweep->callback([&] {
    action = [&] {
      DatasetMeta train_meta, test_meta;
      const Matrix src = load_matrix(sweep_src, &train_meta);
      const Matrix tgt = load_matrix(sweep_tgt);
      const Matrix src_test = load_matrix(sweep_src_test, &test_meta);
      const Matrix tgt_test = load_matrix(sweep_tgt_test);
      SweepOptions options;
      options.fractions = sweep_fractions;
      options.mode = sweep_mode == "classes" ? SweepMode::classes : SweepMode::rows;
      options.method = fit_method_from_string(sweep_method);
      options.ridge = sweep_ridge;
      options.sgd = sweep_sgd_flags.resolve();
      const auto points = sweep_alignment(src, tgt, require_labels(train_meta, sweep_src), src_test, tgt_test,
                                          require_labels(test_meta, sweep_src_test),
                                          nearest_concept_head(load_concept_bank(sweep_bank)), options);
      std::ostringstream csv;
      csv.precision(10);
      csv << "fraction,n_train,n_classes,r_squared,aligned_accuracy,target_accuracy,retained_accuracy\n";
      for (const auto& p : points) {
        csv << p.fraction << ',' << p.n_train << ',' << p.n_classes << ',' << p.report.r_squared << ','
            << p.report.aligned_accuracy << ',' << p.report.target_accuracy << ',' << p.report.retained_accuracy
            << '\n';
      }
      emit(csv.str(), sweep_out, out);
    };
  });

  // ---- pca diag
  auto* pca = app.add_subcommand("pca", "Principal-component alignment")->require_subcommand(1);
  auto* pca_diag = pca->add_subcommand("diag", "Diagonal profile of the PC-space aligner");
  std::string pca_src, pca_tgt, pca_out, pca_save_prefix;
  Index pca_k = kDefaultPcCount, pca_p = kDefaultDiagWindow;
  double pca_ridge = 0.0;
  pca_diag->add_option("--config", config_path);
  pca_diag->add_option("--src", pca_src)->required();
  pca_diag->add_option("--tgt", pca_tgt)->required();
  pca_diag->add_option("--k", pca_k)->capture_default_str();
  pca_diag->add_option("--p", pca_p)->capture_default_str();
  pca_diag->add_option("--ridge", pca_ridge)->capture_default_str();
  pca_diag->add_option("--save-pca", pca_save_prefix, "Write <prefix>.src.pca.emb and <prefix>.tgt.pca.emb");
  pca_diag->add_option("--out", pca_out);
  pca_diag->callback([&] {
    action = [&] {
      const PcAlignment result = align_principal_components(load_matrix(pca_src), load_matrix(pca_tgt), pca_k, pca_p, pca_ridge);
      if (!pca_save_prefix.empty()) {
        save_pca(result.source, pca_save_prefix + ".src.pca.emb");
        save_pca(result.target, pca_save_prefix + ".tgt.pca.emb");
      }
      json report{{"k", pca_k},
                  {"p", pca_p},
                  {"diag", std::vector<double>(result.diag.data(), result.diag.data() + result.diag.size())},
                  {"mean_diag", result.diag.mean()},
                  {"tied_source", result.source.tied},
                  {"tied_target", result.target.tied}};
      emit(report.dump(2) + "\n", pca_out, out);
    };
  });

  // ---- zeroshot
  auto* zeroshot = app.add_subcommand("zeroshot", "Zero-shot classification against a concept bank");
  std::string zs_emb, zs_bank, zs_aligner, zs_out;
  zeroshot->add_option("--config", config_path);
  zeroshot->add_option("--emb", zs_emb)->required();
  zeroshot->add_option("--bank", zs_bank)->required();
  zeroshot->add_option("--aligner", zs_aligner, "Align source embeddings first");
  zeroshot->add_option("--out", zs_out);
  zeroshot->callback([&] {
    action = [&] {
      DatasetMeta meta;
      const Matrix aligned = maybe_align(load_matrix(zs_emb, &meta), zs_aligner);
      const ConceptBank bank = load_concept_bank(zs_bank);
      const Classification c = zero_shot_classify(aligned, bank);
      json report{{"predictions", c.labels}, {"degenerate_rows", c.degenerate_rows}};
      if (meta.labels) report["accuracy"] = zero_shot_accuracy(aligned, bank, *meta.labels);
      emit(report.dump() + "\n", zs_out, out);
    };
  });

  // ---- cbm
  auto* cbm = app.add_subcommand("cbm", "Concept-bottleneck heads")->require_subcommand(1);
  auto* cbm_train = cbm->add_subcommand("train", "Train a linear head on concept similarities");
  std::string cbm_emb, cbm_bank, cbm_aligner, cbm_out;
  SgdFlags cbm_flags;
  cbm_flags.cfg = cbm_default_config();
  cbm_train->add_option("--config", config_path);
  cbm_train->add_option("--emb", cbm_emb)->required();
  cbm_train->add_option("--bank", cbm_bank)->required();
  cbm_train->add_option("--aligner", cbm_aligner);
  cbm_train->add_option("--out", cbm_out)->required();
  cbm_flags.attach(cbm_train);
  cbm_train->callback([&] {
    action = [&] {
      DatasetMeta meta;
      const Matrix aligned = maybe_align(load_matrix(cbm_emb, &meta), cbm_aligner);
      const ConceptBank bank = load_concept_bank(cbm_bank);
      const Matrix sims = concept_similarities(aligned, bank).values;
      const Labels labels = require_labels(meta, cbm_emb);
      CBMHead head = train_cbm_head(sims, labels, cbm_flags.resolve());
      head.concept_names = bank.names();
      if (meta.class_names && static_cast<Index>(meta.class_names->size()) >= head.n_classes())
        head.class_names.assign(meta.class_names->begin(), meta.class_names->begin() + head.n_classes());
      save_cbm_head(head, cbm_out);
      const Labels pred = head.predict(sims);
      std::size_t hits = 0;
      for (std::size_t i = 0; i < labels.size(); ++i) hits += pred[i] == labels[i];
      out << json{{"train_accuracy", static_cast<double>(hits) / static_cast<double>(labels.size())},
                  {"n_concepts", head.n_concepts()},
                  {"n_classes", head.n_classes()}}
                 .dump()
          << '\n';
    };
  });

  auto* cbm_explain = cbm->add_subcommand("explain", "Logit-share explanations as JSON lines");
  std::string ex_head, ex_emb, ex_bank, ex_aligner, ex_out;
  Index ex_top_k = 3;
  cbm_explain->add_option("--config", config_path);
  cbm_explain->add_option("--head", ex_head)->required();
  cbm_explain->add_option("--emb", ex_emb)->required();
  cbm_explain->add_option("--bank", ex_bank)->required();
  cbm_explain->add_option("--aligner", ex_aligner);
  cbm_explain->add_option("--top-k", ex_top_k)->capture_default_str();
  cbm_explain->add_option("--out", ex_out);
  cbm_explain->callback([&] {
    action = [&] {
      const CBMHead head = load_cbm_head(ex_head);
      const Matrix aligned = maybe_align(load_matrix(ex_emb), ex_aligner);
      const Matrix sims = concept_similarities(aligned, load_concept_bank(ex_bank)).values;
      std::ostringstream lines;
      for (Index i = 0; i < sims.rows(); ++i) {
        json record = to_json(explain(head, sims.row(i), ex_top_k));
        record["row"] = i;
        lines << record.dump() << '\n';
      }
      emit(lines.str(), ex_out, out);
    };
  });

  // ---- drift scan
  auto* drift = app.add_subcommand("drift", "Concept-similarity shift detection")->require_subcommand(1);
  auto* drift_scan = drift->add_subcommand("scan", "KS test per concept between two corpora");
  std::string dr_ref, dr_new, dr_bank, dr_aligner, dr_out, dr_hist;
  double dr_alpha = kDefaultDriftAlpha;
  Index dr_bins = 20;
  drift_scan->add_option("--config", config_path);
  drift_scan->add_option("--ref", dr_ref)->required();
  drift_scan->add_option("--new", dr_new)->required();
  drift_scan->add_option("--bank", dr_bank)->required();
  drift_scan->add_option("--aligner", dr_aligner);
  drift_scan->add_option("--alpha", dr_alpha)->capture_default_str();
  drift_scan->add_option("--histograms", dr_hist, "Write per-concept histogram CSV");
  drift_scan->add_option("--bins", dr_bins)->capture_default_str();
  drift_scan->add_option("--out", dr_out);
  drift_scan->callback([&] {
    action = [&] {
      const Matrix ref = maybe_align(load_matrix(dr_ref), dr_aligner);
      const Matrix cur = maybe_align(load_matrix(dr_new), dr_aligner);
      const ConceptBank bank = load_concept_bank(dr_bank);
      emit(to_json(scan_concept_bank(ref, cur, bank, dr_alpha)).dump(2) + "\n", dr_out, out);
      if (!dr_hist.empty()) {
        std::ofstream hist(dr_hist, std::ios::trunc);
        if (!hist) throw IoError("cannot write " + dr_hist);
        write_drift_histograms(hist, ref, cur, bank, dr_bins);
      }
    };
  });

  // ---- retrieve
  auto* retrieve = app.add_subcommand("retrieve", "Concept-logic retrieval (CSV of matching rows)");
  std::string rt_emb, rt_bank, rt_constraints, rt_aligner, rt_out;
  retrieve->add_option("--config", config_path);
  retrieve->add_option("--emb", rt_emb)->required();
  retrieve->add_option("--bank", rt_bank)->required();
  retrieve->add_option("--constraints", rt_constraints)->required();
  retrieve->add_option("--aligner", rt_aligner);
  retrieve->add_option("--out", rt_out);
  retrieve->callback([&] {
    action = [&] {
      const Matrix aligned = maybe_align(load_matrix(rt_emb), rt_aligner);
      const ConceptBank bank = load_concept_bank(rt_bank);
      const auto constraints = load_constraints(rt_constraints);
      const auto rows = filter(aligned, bank, constraints);
      const Matrix sims = concept_similarities(aligned, bank).values;
      std::vector<Index> columns;
      std::ostringstream csv;
      csv.precision(9);
      csv << "index";
      for (const auto& c : constraints) {
        const Index col = *bank.find(c.concept_name);
        if (std::find(columns.begin(), columns.end(), col) != columns.end()) continue;
        columns.push_back(col);
        csv << ',' << c.concept_name;
      }
      csv << '\n';
      for (Index r : rows) {
        csv << r;
        for (Index col : columns) csv << ',' << sims(r, col);
        csv << '\n';
      }
      emit(csv.str(), rt_out, out);
    };
  });

  // ---- decode
  auto* decode = app.add_subcommand("decode", "Nearest-vocabulary decoding of source-space vectors");
  std::string dc_head, dc_aligner, dc_vocab, dc_train, dc_out;
  Index dc_top_m = 5;
  decode->add_option("--config", config_path);
  decode->add_option("--head", dc_head, "EMB1 of vectors in the source space, one per row")->required();
  decode->add_option("--aligner", dc_aligner)->required();
  decode->add_option("--vocab", dc_vocab)->required();
  decode->add_option("--train-reps", dc_train, "Rescale the head to the variance of these representations");
  decode->add_option("--top-m", dc_top_m)->capture_default_str();
  decode->add_option("--out", dc_out);
  decode->callback([&] {
    action = [&] {
      DatasetMeta meta;
      Matrix head = load_matrix(dc_head, &meta);
      if (!dc_train.empty()) head = rescale_head(head, load_matrix(dc_train)).head;
      const LinearAligner aligner = load_aligner(dc_aligner);
      const ConceptBank vocab = load_concept_bank(dc_vocab);
      const json ids = meta.extra.contains("ids") ? meta.extra.at("ids") : json();
      std::ostringstream lines;
      for (Index i = 0; i < head.rows(); ++i) {
        json candidates = json::array();
        for (const auto& c : decode_vector(head.row(i).transpose(), aligner, vocab, dc_top_m))
          candidates.push_back({{"name", c.name}, {"similarity", c.similarity}});
        json id = i;
        if (ids.is_array() && static_cast<Index>(ids.size()) == head.rows()) id = ids[static_cast<std::size_t>(i)];
        lines << json{{"input_id", id}, {"candidates", candidates}}.dump() << '\n';
      }
      emit(lines.str(), dc_out, out);
    };
  });

  // ---- bank build / prompts
  auto* bank_cmd = app.add_subcommand("bank", "Concept banks from text embeddings")->require_subcommand(1);
  auto* bank_build = bank_cmd->add_subcommand("build", "Average per-prompt text embeddings into concepts");
  std::vector<std::string> bk_text, bk_names;
  std::string bk_out;
  bool bk_emb1 = false;
  bank_build->add_option("--config", config_path);
  bank_build->add_option("--text", bk_text, "EMB1 of prompt embeddings for one concept (repeatable)")->required();
  bank_build->add_option("--name", bk_names, "Concept name per --text (default: sidecar 'concept' or file stem)");
  bank_build->add_flag("--emb1", bk_emb1, "Write EMB1 + names sidecar instead of JSON");
  bank_build->add_option("--out", bk_out)->required();
  bank_build->callback([&] {
    action = [&] {
      if (!bk_names.empty() && bk_names.size() != bk_text.size())
        throw ConfigError("give one --name per --text or none");
      ConceptBank bank;
      for (std::size_t i = 0; i < bk_text.size(); ++i) {
        DatasetMeta meta;
        const Matrix rows = load_matrix(bk_text[i], &meta);
        std::string name = fs::path(bk_text[i]).stem().string();
        if (!bk_names.empty()) {
          name = bk_names[i];
        } else if (meta.extra.contains("concept")) {
          name = meta.extra.at("concept").get<std::string>();
        }
        bank.add(name, build_concept_vector(rows));
      }
      if (bk_emb1) {
        save_concept_bank_emb1(bank, bk_out);
      } else {
        save_concept_bank(bank, bk_out);
      }
      out << json{{"concepts", bank.size()}, {"dim", bank.dim()}}.dump() << '\n';
    };
  });

  auto* prompts = app.add_subcommand("prompts", "Expand prompt templates (one prompt per line)");
  std::string pr_templates, pr_classes, pr_out;
  std::optional<std::string> pr_suffix;
  prompts->add_option("--config", config_path);
  prompts->add_option("--templates", pr_templates, "Template file (default: the seven CLIP templates)");
  prompts->add_option("--classes", pr_classes, "Class-name file, one per line");
  prompts->add_option("--suffix", pr_suffix);
  prompts->add_option("--out", pr_out);
  prompts->callback([&] {
    action = [&] {
      PromptSpec spec;
      spec.templates = pr_templates.empty() ? default_templates() : read_prompt_list(pr_templates);
      if (!pr_classes.empty()) spec.class_names = read_prompt_list(pr_classes);
      spec.concept_suffix = pr_suffix;
      std::ostringstream lines;
      for (const auto& p : expand_prompts(spec)) lines << p << '\n';
      emit(lines.str(), pr_out, out);
    };
  });

  std::vector<std::string> args = raw_args;
  try {
    inject_config(args, app);
    std::vector<const char*> argv{"xalign"};
    for (const auto& a : args) argv.push_back(a.c_str());
    app.failure_message(CLI::FailureMessage::help);
    try {
      app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
      const int code = app.exit(e, out, err);
      return code == 0 ? kExitOk : kExitUsage;
    }
    if (!action) {
      err << app.help();
      return kExitUsage;
    }
    action();
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "xalign: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    err << "xalign: " << e.what() << '\n';
    return kExitData;
  } catch (const json::exception& e) {
    err << "xalign: malformed JSON: " << e.what() << '\n';
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "xalign: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace xalign::cli
