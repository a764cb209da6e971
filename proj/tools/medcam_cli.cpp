// Command-line front end for the evidence-mask pipeline: corpus generation,
// classifier training, per-image explanation, Grad-CAM baseline, batch
// evaluation, and the numerical selftest.
//
// Exit codes: 0 success, 1 usage/validation, 2 I/O or file format,
// 3 numeric divergence, 4 selftest failure, 5 explanation finished but the
// masked image did not preserve the decision.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "medcam/classifier.hpp"
#include "medcam/evaluate.hpp"
#include "medcam/explainer.hpp"
#include "medcam/gradcam.hpp"
#include "medcam/metrics.hpp"
#include "medcam/netpbm.hpp"
#include "medcam/selftest.hpp"
#include "medcam/synth.hpp"

namespace fs = std::filesystem;
using namespace medcam;

namespace {

// Explainer knobs shared by the explain and evaluate subcommands. Lambda
// flags override the preset only when actually given.
struct ExplainerCli {
  std::string preset = "default";
  double l_act = 0, l_ce = 0, l_kl = 0, l_area = 0, l_bin = 0, l_tv = 0, l_rob = 0;
  int steps = 300;
  double lr = 3e-3;
  double threshold = 0.5;
  std::string background = "uniform";
  std::string distance = "mse";
  int rob_samples = 1;
  int rob_trials = 20;
  std::vector<std::string> alphas;
  CLI::Option *o_act = nullptr, *o_ce = nullptr, *o_kl = nullptr, *o_area = nullptr,
              *o_bin = nullptr, *o_tv = nullptr, *o_rob = nullptr;

  void attach(CLI::App* cmd) {
    cmd->add_option("--preset", preset, "Loss-weight preset")
        ->check(CLI::IsMember({"bach", "ham", "default"}));
    o_act = cmd->add_option("--lambda-act", l_act, "Activation matching weight");
    o_ce = cmd->add_option("--lambda-ce", l_ce, "Cross-entropy weight");
    o_kl = cmd->add_option("--lambda-kl", l_kl, "KL divergence weight");
    o_area = cmd->add_option("--lambda-area", l_area, "Mask area weight");
    o_bin = cmd->add_option("--lambda-bin", l_bin, "Mask binarization weight");
    o_tv = cmd->add_option("--lambda-tv", l_tv, "Mask total-variation weight");
    o_rob = cmd->add_option("--lambda-rob", l_rob, "Robustness weight");
    cmd->add_option("--steps", steps, "Optimization steps per image");
    cmd->add_option("--lr", lr, "Adam learning rate");
    cmd->add_option("--threshold", threshold, "Mask binarization threshold");
    cmd->add_option("--background", background, "Background randomization kind")
        ->check(CLI::IsMember({"uniform", "gaussian", "corpus"}));
    cmd->add_option("--distance", distance, "Activation distance")
        ->check(CLI::IsMember({"mse", "cosine"}));
    cmd->add_option("--rob-samples", rob_samples, "Backgrounds per step");
    cmd->add_option("--rob-trials", rob_trials, "Fresh backgrounds scored after a run");
    cmd->add_option("--alpha", alphas, "Per-tap activation weight, tap=value");
  }

  ExplainerConfig build(std::uint64_t seed) const {
    ExplainerConfig cfg = preset_by_name(preset);
    if (o_act->count()) cfg.lambda_act = l_act;
    if (o_ce->count()) cfg.lambda_ce = l_ce;
    if (o_kl->count()) cfg.lambda_kl = l_kl;
    if (o_area->count()) cfg.lambda_area = l_area;
    if (o_bin->count()) cfg.lambda_bin = l_bin;
    if (o_tv->count()) cfg.lambda_tv = l_tv;
    if (o_rob->count()) cfg.lambda_rob = l_rob;
    cfg.steps = steps;
    cfg.lr = lr;
    cfg.binarize_threshold = threshold;
    cfg.background = background_kind_from_string(background);
    cfg.distance = distance_kind_from_string(distance);
    cfg.rob_samples_per_step = rob_samples;
    cfg.rob_eval_trials = rob_trials;
    for (const auto& spec : alphas) {
      const auto eq = spec.find('=');
      if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size()) {
        throw ParameterError("--alpha expects tap=value, got '" + spec + "'");
      }
      cfg.alpha_per_layer[spec.substr(0, eq)] = std::stod(spec.substr(eq + 1));
    }
    cfg.seed = seed;
    cfg.validate();
    return cfg;
  }
};

void configure_subcommand(CLI::App* cmd) {
  cmd->set_config("--config", "", "Flat key=value config file ('#' comments)");
  cmd->allow_config_extras(false);  // unknown keys are hard errors
}

std::vector<SynthImage> pick_split(CorpusOnDisk& corpus, const std::string& split) {
  if (split == "train") return std::move(corpus.train);
  if (split == "test") return std::move(corpus.test);
  if (split == "all") {
    std::vector<SynthImage> all = std::move(corpus.train);
    for (auto& img : corpus.test) all.push_back(std::move(img));
    return all;
  }
  throw ParameterError("unknown split '" + split + "'");
}

int run_gen_data(const std::string& out_dir, int n_per_class, int size,
                 std::uint64_t seed, double test_fraction) {
  const auto corpus = generate_corpus(n_per_class, size, seed);
  write_corpus(out_dir, corpus, test_fraction);
  std::cout << "wrote " << corpus.size() << " images + " << corpus.size()
            << " truth masks to " << out_dir << " (seed " << seed << ", size " << size
            << ")\n";
  return 0;
}

int run_train(const std::string& corpus_dir, int epochs, double lr,
              std::uint64_t seed, int batch_size, const std::string& out_path) {
  CorpusOnDisk corpus = read_corpus(corpus_dir);
  if (corpus.train.empty()) throw DataError("train: corpus has no training split");
  TrainOptions opt;
  opt.epochs = epochs;
  opt.lr = lr;
  opt.seed = seed;
  opt.batch_size = batch_size;
  TrainReport report;
  const ClassifierModel model =
      train_classifier(corpus.train, corpus.test, opt, &report);
  model.save(out_path);
  std::cout << "train_accuracy=" << report.train_accuracy
            << " test_accuracy=" << report.test_accuracy << " epochs=" << epochs
            << " seed=" << seed << " model=" << out_path << "\n";
  return 0;
}

int run_explain(const std::string& model_path, const std::string& image_path,
                const ExplainerCli& ecli, std::uint64_t seed,
                const std::string& out_dir, const std::string& corpus_dir) {
  const ClassifierModel model = ClassifierModel::load(model_path);
  const Tensor pixels = read_ppm(image_path);
  const Tensor batch =
      pixels.with_shape({1, pixels.dim(0), pixels.dim(1), pixels.dim(2)});
  const ExplainerConfig cfg = ecli.build(seed);

  std::vector<Tensor> pool;
  std::vector<std::string> pool_ids;
  int exclude = -1;
  const std::string stem = fs::path(image_path).stem().string();
  if (!corpus_dir.empty()) {
    CorpusOnDisk corpus = read_corpus(corpus_dir);
    for (const auto* side : {&corpus.train, &corpus.test}) {
      for (const auto& img : *side) {
        if (img.id == stem) exclude = static_cast<int>(pool.size());
        pool.push_back(img.batch());
        pool_ids.push_back(img.id);
      }
    }
  } else if (cfg.background == BackgroundKind::corpus_shuffle) {
    throw ParameterError("--background corpus requires --corpus");
  }

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("explain: cannot create '" + out_dir + "': " + ec.message());

  const ExplainResult res = explain(batch, model, cfg, stem,
                                    pool.empty() ? nullptr : &pool, exclude);

  write_pgm(out_dir + "/" + stem + "_mask.pgm", res.mask.values, res.mask.width,
            res.mask.height);
  std::vector<double> bin(res.mask.binarized.size());
  for (std::size_t i = 0; i < bin.size(); ++i) bin[i] = res.mask.binarized[i] ? 1.0 : 0.0;
  write_pgm(out_dir + "/" + stem + "_mask_bin.pgm", bin, res.mask.width,
            res.mask.height);
  write_ppm(out_dir + "/" + stem + "_masked.ppm", res.masked_image);
  append_report_csv(out_dir + "/reports.csv", res.report);

  std::cout << "image=" << stem << " y=" << res.y << " conf_x=" << res.conf_x
            << " conf_e=" << res.report.conf_e
            << " area=" << res.report.area_fraction
            << " preserved=" << (res.report.decision_preserved ? 1 : 0)
            << " rob=" << res.report.rob_pass_rate << " seed=" << seed << "\n";
  return res.report.decision_preserved ? 0 : 5;
}

int run_gradcam(const std::string& model_path, const std::string& image_path,
                const std::string& layer, double keep_fraction, std::uint64_t seed,
                const std::string& background, int rob_trials,
                const std::string& out_dir) {
  const ClassifierModel model = ClassifierModel::load(model_path);
  const Tensor pixels = read_ppm(image_path);
  const Tensor batch =
      pixels.with_shape({1, pixels.dim(0), pixels.dim(1), pixels.dim(2)});

  const Tensor logits = model.logits(batch);
  const int y = argmax_index(logits);
  const double conf_x = softmax_probs(logits)[static_cast<std::size_t>(y)];

  const Heatmap hm = gradcam(model, batch, y, layer);
  const auto mask = threshold_heatmap(hm, keep_fraction);

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("gradcam: cannot create '" + out_dir + "': " + ec.message());
  const std::string stem = fs::path(image_path).stem().string();
  write_pgm(out_dir + "/" + stem + "_gradcam.pgm", hm.values, hm.width, hm.height);
  std::vector<double> bin(mask.size());
  for (std::size_t i = 0; i < bin.size(); ++i) bin[i] = mask[i] ? 1.0 : 0.0;
  write_pgm(out_dir + "/" + stem + "_gradcam_mask.pgm", bin, hm.width, hm.height);

  const std::vector<std::uint8_t> no_truth(mask.size(), 0);
  EvidenceReport rep = measure_mask(model, stem, batch, no_truth, mask, "gradcam", y,
                                    conf_x, background_kind_from_string(background),
                                    rob_trials, seed);
  append_report_csv(out_dir + "/reports.csv", rep);
  std::cout << "image=" << stem << " y=" << y << " conf_x=" << conf_x
            << " conf_e=" << rep.conf_e << " keep=" << keep_fraction
            << " preserved=" << (rep.decision_preserved ? 1 : 0)
            << (hm.all_zero ? " all_zero=1" : "") << "\n";
  return 0;
}

int run_evaluate(const std::string& model_path, const std::string& corpus_dir,
                 const std::string& methods_csv, int n, std::uint64_t seed,
                 int workers, const std::string& split, const ExplainerCli& ecli,
                 const std::string& out_csv) {
  const ClassifierModel model = ClassifierModel::load(model_path);
  CorpusOnDisk corpus = read_corpus(corpus_dir);
  const std::vector<SynthImage> images = pick_split(corpus, split);
  if (images.empty()) throw DataError("evaluate: split '" + split + "' is empty");

  EvaluateOptions opt;
  opt.methods.clear();
  std::size_t start = 0;
  for (std::size_t i = 0; i <= methods_csv.size(); ++i) {
    if (i == methods_csv.size() || methods_csv[i] == ',') {
      if (i > start) opt.methods.push_back(methods_csv.substr(start, i - start));
      start = i + 1;
    }
  }
  opt.n_images = n;
  opt.seed = seed;
  opt.workers = workers;
  opt.explainer = ecli.build(seed);

  const EvaluateResult result = evaluate(model, images, opt);
  write_report_csv(out_csv, result.reports);
  fs::path summary_path(out_csv);
  summary_path.replace_extension();
  const std::string summary_csv = summary_path.string() + "_summary.csv";
  write_summary_csv(summary_csv, result.summary);

  std::cout << "evaluated " << result.reports.size() << " reports -> " << out_csv
            << ", " << summary_csv << "\n";
  for (const auto& row : result.summary) {
    if (row.metric == "preservation_rate" || row.metric == "area_fraction" ||
        row.metric == "truth_iou") {
      std::cout << "  " << row.method << " " << row.metric << " mean=" << row.mean
                << " stddev=" << row.stddev << " n=" << row.count << "\n";
    }
  }
  return 0;
}

int run_selftest(int trials, std::uint64_t seed, bool inject_fault) {
  SelftestOptions opt;
  opt.trials_per_op = trials;
  opt.seed = seed;
  opt.inject_fault = inject_fault;
  const SelftestResult result = run_selftest(opt);
  int passed = 0;
  for (const auto& line : result.lines) {
    std::cout << (line.pass ? "[PASS] " : "[FAIL] ") << line.name << " — "
              << line.detail << "\n";
    if (line.pass) ++passed;
  }
  std::cout << "selftest: " << passed << "/" << result.lines.size() << " checks passed in "
            << result.seconds << " s\n";
  return result.all_pass ? 0 : 4;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Evidence-mask explanations for a frozen image classifier"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic labeled corpus");
  std::string gen_out = "corpus";
  int gen_n = 200, gen_size = 64;
  std::uint64_t gen_seed = 42;
  double gen_test_fraction = 0.2;
  gen->add_option("--out", gen_out, "Output directory");
  gen->add_option("--n-per-class", gen_n, "Images per class");
  gen->add_option("--size", gen_size, "Square image size (>= 32)");
  gen->add_option("--seed", gen_seed, "Corpus seed");
  gen->add_option("--test-fraction", gen_test_fraction, "Held-out fraction per class");
  configure_subcommand(gen);

  // train
  auto* train = app.add_subcommand("train", "Train and freeze the classifier");
  std::string train_corpus = "corpus", train_out = "model.evdx";
  int train_epochs = 20, train_batch = 16;
  double train_lr = 1e-3;
  std::uint64_t train_seed = 42;
  train->add_option("--corpus", train_corpus, "Corpus directory");
  train->add_option("--epochs", train_epochs, "Training epochs");
  train->add_option("--lr", train_lr, "Adam learning rate");
  train->add_option("--seed", train_seed, "Training seed");
  train->add_option("--batch-size", train_batch, "Minibatch size");
  train->add_option("--out", train_out, "Model output path");
  configure_subcommand(train);

  // explain
  auto* explain_cmd = app.add_subcommand("explain", "Optimize an evidence mask for one image");
  std::string ex_model = "model.evdx", ex_image, ex_out = "explanations", ex_corpus;
  std::uint64_t ex_seed = 42;
  ExplainerCli ex_cli;
  explain_cmd->add_option("--model", ex_model, "Frozen model path");
  explain_cmd->add_option("--image", ex_image, "Input PPM image")->required();
  explain_cmd->add_option("--seed", ex_seed, "Run seed");
  explain_cmd->add_option("--out", ex_out, "Output directory");
  explain_cmd->add_option("--corpus", ex_corpus,
                          "Corpus directory (pool for --background corpus)");
  ex_cli.attach(explain_cmd);
  configure_subcommand(explain_cmd);

  // gradcam
  auto* gc = app.add_subcommand("gradcam", "Grad-CAM heatmap for one image");
  std::string gc_model = "model.evdx", gc_image, gc_layer = "block3", gc_out = "explanations";
  std::string gc_background = "uniform";
  double gc_keep = 0.25;
  int gc_rob_trials = 20;
  std::uint64_t gc_seed = 42;
  gc->add_option("--model", gc_model, "Frozen model path");
  gc->add_option("--image", gc_image, "Input PPM image")->required();
  gc->add_option("--layer", gc_layer, "Tap name (block1..block3)");
  gc->add_option("--keep-fraction", gc_keep, "Fraction of pixels kept by thresholding");
  gc->add_option("--seed", gc_seed, "Seed for robustness scoring");
  gc->add_option("--background", gc_background, "Background kind for robustness scoring")
      ->check(CLI::IsMember({"uniform", "gaussian"}));
  gc->add_option("--rob-trials", gc_rob_trials, "Robustness trials");
  gc->add_option("--out", gc_out, "Output directory");
  configure_subcommand(gc);

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Batch comparison over a corpus split");
  std::string ev_model = "model.evdx", ev_corpus = "corpus";
  std::string ev_methods = "medcam,gradcam,random", ev_split = "test";
  std::string ev_out = "evaluation.csv";
  int ev_n = 100, ev_workers = 1;
  std::uint64_t ev_seed = 42;
  ExplainerCli ev_cli;
  ev->add_option("--model", ev_model, "Frozen model path");
  ev->add_option("--corpus", ev_corpus, "Corpus directory");
  ev->add_option("--methods", ev_methods, "Comma list of medcam,gradcam,random");
  ev->add_option("--n", ev_n, "Number of images");
  ev->add_option("--seed", ev_seed, "Evaluation seed");
  ev->add_option("--workers", ev_workers, "Parallel workers");
  ev->add_option("--split", ev_split, "Corpus split: train, test, all")
      ->check(CLI::IsMember({"train", "test", "all"}));
  ev->add_option("--out", ev_out, "Report CSV path");
  ev_cli.attach(ev);
  configure_subcommand(ev);

  // selftest
  auto* st = app.add_subcommand("selftest", "Gradient checks and op oracles");
  int st_trials = 50;
  std::uint64_t st_seed = 20240607;
  bool st_inject = false;
  st->add_option("--trials", st_trials, "Random trials per op");
  st->add_option("--seed", st_seed, "Selftest seed");
  st->add_flag("--inject-fault", st_inject,
               "Inject a sign error into one backward rule (must fail)");
  configure_subcommand(st);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (gen->parsed()) {
      return run_gen_data(gen_out, gen_n, gen_size, gen_seed, gen_test_fraction);
    }
    if (train->parsed()) {
      return run_train(train_corpus, train_epochs, train_lr, train_seed, train_batch,
                       train_out);
    }
    if (explain_cmd->parsed()) {
      return run_explain(ex_model, ex_image, ex_cli, ex_seed, ex_out, ex_corpus);
    }
    if (gc->parsed()) {
      return run_gradcam(gc_model, gc_image, gc_layer, gc_keep, gc_seed, gc_background,
                         gc_rob_trials, gc_out);
    }
    if (ev->parsed()) {
      return run_evaluate(ev_model, ev_corpus, ev_methods, ev_n, ev_seed, ev_workers,
                          ev_split, ev_cli, ev_out);
    }
    if (st->parsed()) {
      return run_selftest(st_trials, st_seed, st_inject);
    }
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
