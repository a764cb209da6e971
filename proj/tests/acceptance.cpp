// Acceptance suite: runs the ten release criteria end to end at full desk
// scale and prints one pass/fail line per criterion. Slow by design; run via
// ctest (test name "acceptance") or directly:
//
//   ./tests/acceptance_tests
//
// Criteria 3-7 share one 100-image evaluation over the held-out split of the
// default corpus (seed 42) with the default preset.

#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <thread>
#include <vector>

#include "medcam/evaluate.hpp"
#include "medcam/explainer.hpp"
#include "medcam/metrics.hpp"
#include "medcam/synth.hpp"

#ifndef MEDCAM_CLI_PATH
#error "MEDCAM_CLI_PATH must point at the built CLI binary"
#endif

using namespace medcam;
namespace fs = std::filesystem;

namespace {

constexpr int kEvalImages = 100;
constexpr std::uint64_t kSeed = 42;

double now_seconds() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

int hardware_workers() {
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(std::min(hc, 8u));
}

void report(int criterion, bool pass, const std::string& detail) {
  std::cout << (pass ? "[PASS]" : "[FAIL]") << " criterion " << criterion << ": "
            << detail << std::endl;
}

struct RunResult {
  int exit_code = -1;
  std::string output;
};

RunResult run_cli(const std::string& args) {
  const std::string cmd = std::string(MEDCAM_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  RunResult result;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof(buf), pipe)) {
    result.output.append(buf, n);
  }
  const int status = pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Drops the measured wall_seconds column (second to last) from a report CSV.
std::string strip_wall_column(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) {
    const auto last = line.rfind(',');
    const auto prev = line.rfind(',', last - 1);
    out += line.substr(0, prev) + line.substr(last) + "\n";
  }
  return out;
}

struct World {
  std::vector<SynthImage> train;
  std::vector<SynthImage> test;
  ClassifierModel model;
  TrainReport train_report;
  double train_seconds = 0.0;
  fs::path work;

  EvaluateResult eval;
  bool eval_done = false;

  static World& get() {
    static World* world = [] {
      auto* w = new World();
      w->work = fs::current_path() / "acceptance_work";
      fs::remove_all(w->work);
      fs::create_directories(w->work);

      std::cout << "[setup] generating corpus (250 per class, 64x64, seed " << kSeed
                << ")" << std::endl;
      const auto corpus = generate_corpus(250, 64, kSeed);
      auto [train, test] = split_corpus(corpus, 0.2);
      w->train = std::move(train);
      w->test = std::move(test);

      std::cout << "[setup] training classifier (20 epochs, lr 1e-3, seed " << kSeed
                << ") on " << w->train.size() << " train / " << w->test.size()
                << " test images" << std::endl;
      TrainOptions opt;
      opt.epochs = 20;
      opt.lr = 1e-3;
      opt.seed = kSeed;
      const double t0 = now_seconds();
      w->model = train_classifier(w->train, w->test, opt, &w->train_report);
      w->train_seconds = now_seconds() - t0;
      std::cout << "[setup] trained in " << w->train_seconds << " s, test accuracy "
                << w->train_report.test_accuracy << std::endl;
      return w;
    }();
    return *world;
  }

  const EvaluateResult& evaluation() {
    if (!eval_done) {
      EvaluateOptions opt;
      opt.n_images = kEvalImages;
      opt.seed = kSeed;
      opt.workers = hardware_workers();
      opt.explainer = preset_default();
      std::cout << "[setup] evaluating " << kEvalImages
                << " held-out images with methods medcam,gradcam,random ("
                << opt.workers << " workers)" << std::endl;
      const double t0 = now_seconds();
      eval = evaluate(model, test, opt);
      std::cout << "[setup] evaluation finished in " << now_seconds() - t0 << " s"
                << std::endl;
      eval_done = true;
    }
    return eval;
  }

  std::vector<const EvidenceReport*> method_reports(const std::string& method) {
    std::vector<const EvidenceReport*> out;
    for (const auto& r : evaluation().reports) {
      if (r.method == method) out.push_back(&r);
    }
    return out;
  }
};

}  // namespace

TEST_CASE("criterion 1: engine selftest", "[acceptance]") {
  const double t0 = now_seconds();
  const RunResult r = run_cli("selftest");
  const double seconds = now_seconds() - t0;
  const bool pass = r.exit_code == 0 && seconds < 60.0;
  std::ostringstream detail;
  detail << "cmd_selftest exit " << r.exit_code << " in " << seconds
         << " s (budget 60 s), gradient checks at rel err < 1e-4, conv oracle at 1e-12";
  report(1, pass, detail.str());
  if (!pass) std::cout << r.output << std::endl;
  REQUIRE(pass);
}

TEST_CASE("criterion 2: classifier viability", "[acceptance]") {
  World& w = World::get();
  const bool pass =
      w.train_report.test_accuracy >= 0.90 && w.train_seconds < 600.0;
  std::ostringstream detail;
  detail << "held-out accuracy " << w.train_report.test_accuracy
         << " (>= 0.90) after 20 epochs in " << w.train_seconds << " s (< 600 s)";
  report(2, pass, detail.str());
  REQUIRE(pass);
}

TEST_CASE("criterion 3: fidelity at minimality", "[acceptance]") {
  World& w = World::get();
  const auto medcam = w.method_reports("medcam");
  REQUIRE(medcam.size() == kEvalImages);
  int preserved = 0;
  int nontrivial_preserved = 0;
  double area_sum = 0.0;
  for (const auto* r : medcam) {
    area_sum += r->area_fraction;
    if (r->decision_preserved) {
      ++preserved;
      if (r->area_fraction < 1.0) ++nontrivial_preserved;
    }
  }
  const double mean_area = area_sum / static_cast<double>(medcam.size());
  const bool pass = preserved >= 90 && mean_area < 0.5 &&
                    nontrivial_preserved == preserved;
  std::ostringstream detail;
  detail << "decision preserved " << preserved << "/100 (>= 90), mean area "
         << mean_area << " (< 0.5), non-trivial masks on " << nontrivial_preserved
         << "/" << preserved << " preserved cases";
  report(3, pass, detail.str());
  REQUIRE(pass);
}

TEST_CASE("criterion 4: directional confidence", "[acceptance]") {
  World& w = World::get();
  double sum_x = 0.0, sum_e = 0.0;
  int n = 0;
  for (const auto* r : w.method_reports("medcam")) {
    if (!r->decision_preserved) continue;
    sum_x += r->conf_x;
    sum_e += r->conf_e;
    ++n;
  }
  REQUIRE(n > 0);
  const double mean_x = sum_x / n, mean_e = sum_e / n;
  const double delta = mean_e - mean_x;
  const bool pass = mean_e >= mean_x - 0.02;
  std::ostringstream detail;
  detail << "preserved subset mean confidence " << mean_x << " -> " << mean_e
         << ", delta " << delta << " (>= -0.02)";
  report(4, pass, detail.str());
  REQUIRE(pass);
}

TEST_CASE("criterion 5: crispness", "[acceptance]") {
  World& w = World::get();
  int crisp_images = 0;
  for (const auto* r : w.method_reports("medcam")) {
    if (r->bin_fraction >= 0.95) ++crisp_images;
  }
  const bool pass = crisp_images >= 90;
  std::ostringstream detail;
  detail << crisp_images << "/100 images have >= 95% of pixels with min(m,1-m) < 0.1"
         << " (need >= 90)";
  report(5, pass, detail.str());
  REQUIRE(pass);
}

TEST_CASE("criterion 6: abductive robustness", "[acceptance]") {
  World& w = World::get();
  double rate_sum = 0.0;
  int n = 0;
  for (const auto* r : w.method_reports("medcam")) {
    if (!r->decision_preserved) continue;
    rate_sum += r->rob_pass_rate;  // 20 fresh backgrounds per image
    ++n;
  }
  REQUIRE(n > 0);
  const double aggregate_rate = rate_sum / n;
  const bool pass = aggregate_rate >= 0.90;
  std::ostringstream detail;
  detail << "f(composite) = y on " << aggregate_rate * 100.0
         << "% of 20 fresh backgrounds per preserved case (need >= 90%)";
  report(6, pass, detail.str());
  REQUIRE(pass);
}

TEST_CASE("criterion 7: baseline comparison at matched area", "[acceptance]") {
  World& w = World::get();
  struct Stats {
    double iou_sum = 0.0;
    int iou_n = 0;
    int preserved = 0;
    int n = 0;
  };
  auto stats_for = [&](const std::string& method) {
    Stats s;
    for (const auto* r : w.method_reports(method)) {
      ++s.n;
      if (r->decision_preserved) ++s.preserved;
      if (r->truth_iou) {
        s.iou_sum += *r->truth_iou;
        ++s.iou_n;
      }
    }
    return s;
  };
  const Stats mc = stats_for("medcam");
  const Stats gc = stats_for("gradcam");
  const Stats rd = stats_for("random");
  REQUIRE(mc.n == kEvalImages);
  REQUIRE(gc.n == kEvalImages);
  REQUIRE(rd.n == kEvalImages);

  const double mc_iou = mc.iou_sum / mc.iou_n;
  const double gc_iou = gc.iou_sum / gc.iou_n;
  const double rd_iou = rd.iou_sum / rd.iou_n;
  const double mc_rate = static_cast<double>(mc.preserved) / mc.n;
  const double gc_rate = static_cast<double>(gc.preserved) / gc.n;
  const double rd_rate = static_cast<double>(rd.preserved) / rd.n;

  const bool pass = mc_iou > gc_iou && mc_iou > rd_iou && mc_rate > gc_rate &&
                    mc_rate > rd_rate;
  std::ostringstream detail;
  detail << "truth IoU medcam " << mc_iou << " vs gradcam " << gc_iou << " (margin "
         << mc_iou - gc_iou << ") vs random " << rd_iou << "; preservation medcam "
         << mc_rate << " vs gradcam " << gc_rate << " (margin " << mc_rate - gc_rate
         << ") vs random " << rd_rate;
  report(7, pass, detail.str());
  REQUIRE(pass);
}

TEST_CASE("criterion 8: minimality pressure", "[acceptance]") {
  World& w = World::get();
  const int runs = 20;
  std::vector<double> area_base(runs), area_heavy(runs);
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= runs) return;
      const SynthImage& img = w.test[static_cast<std::size_t>(i * 7 + 3)];
      ExplainerConfig base = preset_default();
      base.seed = Rng::mix(kSeed, 1000 + static_cast<std::uint64_t>(i));
      ExplainerConfig heavy = base;
      heavy.lambda_area *= 10.0;
      area_base[static_cast<std::size_t>(i)] =
          explain(img.batch(), w.model, base, img.id).report.area_fraction;
      area_heavy[static_cast<std::size_t>(i)] =
          explain(img.batch(), w.model, heavy, img.id).report.area_fraction;
    }
  };
  {
    std::vector<std::thread> pool;
    for (int t = 0; t < hardware_workers(); ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  int violations = 0;
  for (int i = 0; i < runs; ++i) {
    if (area_heavy[static_cast<std::size_t>(i)] >
        area_base[static_cast<std::size_t>(i)] + 1e-9) {
      ++violations;
      std::cout << "  violation on run " << i << ": area "
                << area_base[static_cast<std::size_t>(i)] << " -> "
                << area_heavy[static_cast<std::size_t>(i)] << std::endl;
    }
  }
  const bool pass = violations <= 2;
  std::ostringstream detail;
  detail << "10x lambda_area raised the final area on " << violations
         << "/20 seeded runs (allowed <= 2)";
  report(8, pass, detail.str());
  REQUIRE(pass);
}

TEST_CASE("criterion 9: per-image runtime", "[acceptance]") {
  World& w = World::get();
  ExplainerConfig cfg = preset_default();
  cfg.seed = 777;
  const SynthImage& img = w.test[11];
  const double t0 = now_seconds();
  explain(img.batch(), w.model, cfg, img.id);
  const double seconds = now_seconds() - t0;
  const bool pass = seconds <= 30.0;
  std::ostringstream detail;
  detail << "one default-preset explanation took " << seconds
         << " s single-threaded (budget 30 s)";
  report(9, pass, detail.str());
  REQUIRE(pass);
}

TEST_CASE("criterion 10: end-to-end determinism", "[acceptance]") {
  World& w = World::get();
  const fs::path dir = w.work / "determinism";
  fs::create_directories(dir);
  const fs::path corpus_dir = dir / "corpus";

  // Full default corpus on disk so the CLI sees the same data.
  {
    const auto corpus = generate_corpus(250, 64, kSeed);
    write_corpus(corpus_dir.string(), corpus, 0.2);
  }
  const fs::path model_path = dir / "model.evdx";
  w.model.save(model_path.string());

  const std::string image = (corpus_dir / "img_00260_c1.ppm").string();
  const std::string base = "explain --model \"" + model_path.string() +
                           "\" --image \"" + image + "\" --seed 4242 --out \"";
  const RunResult e1 = run_cli(base + (dir / "run1").string() + "\"");
  const RunResult e2 = run_cli(base + (dir / "run2").string() + "\"");
  const bool explain_ok =
      e1.exit_code == e2.exit_code && (e1.exit_code == 0 || e1.exit_code == 5) &&
      slurp(dir / "run1" / "img_00260_c1_mask.pgm") ==
          slurp(dir / "run2" / "img_00260_c1_mask.pgm") &&
      slurp(dir / "run1" / "img_00260_c1_mask_bin.pgm") ==
          slurp(dir / "run2" / "img_00260_c1_mask_bin.pgm") &&
      slurp(dir / "run1" / "img_00260_c1_masked.ppm") ==
          slurp(dir / "run2" / "img_00260_c1_masked.ppm");

  const std::string eval_base = "evaluate --model \"" + model_path.string() +
                                "\" --corpus \"" + corpus_dir.string() +
                                "\" --n 8 --seed 4242 --workers 1 --out \"";
  const RunResult v1 = run_cli(eval_base + (dir / "eval1.csv").string() + "\"");
  const RunResult v2 = run_cli(eval_base + (dir / "eval2.csv").string() + "\"");
  const bool eval_ok = v1.exit_code == 0 && v2.exit_code == 0 &&
                       strip_wall_column(slurp(dir / "eval1.csv")) ==
                           strip_wall_column(slurp(dir / "eval2.csv"));

  const bool pass = explain_ok && eval_ok;
  std::ostringstream detail;
  detail << "cmd_explain mask artifacts byte-identical: " << (explain_ok ? "yes" : "no")
         << "; evaluation CSV reproducible at workers=1 (wall-clock column aside): "
         << (eval_ok ? "yes" : "no");
  report(10, pass, detail.str());
  if (!explain_ok) std::cout << e1.output << "\n---\n" << e2.output << std::endl;
  if (!eval_ok) std::cout << v1.output << "\n---\n" << v2.output << std::endl;
  REQUIRE(pass);
}
