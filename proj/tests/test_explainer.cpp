#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <vector>

#include "medcam/explainer.hpp"
#include "medcam/masknet.hpp"
#include "test_fixtures.hpp"

using namespace medcam;

namespace {

ActivationSet single_tap(const std::string& name, Tensor t) {
  ActivationSet s;
  s.entries.emplace_back(name, std::move(t));
  return s;
}

ExplainerConfig quick_config(int steps, std::uint64_t seed) {
  ExplainerConfig cfg = preset_default();
  cfg.steps = steps;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("apply_mask follows the elementwise product definition", "[explainer]") {
  Tape tape;
  Tensor x = Tensor::from({1, 3, 1, 2}, {1.0, 2.0, 3.0, 4.0, 5.0, 6.0});

  Tensor ones = Tensor::full({1, 1, 1, 2}, 1.0);
  CHECK(apply_mask(tape, x, ones).values() == x.values());

  Tensor zeros = Tensor::full({1, 1, 1, 2}, 0.0);
  const Tensor masked = apply_mask(tape, x, zeros);
  for (double v : masked.values()) CHECK(v == 0.0);

  Tensor indicator = Tensor::from({1, 1, 1, 2}, {0.0, 1.0});
  CHECK(apply_mask(tape, x, indicator).values() ==
        std::vector<double>{0.0, 2.0, 0.0, 4.0, 0.0, 6.0});

  CHECK_THROWS_AS(apply_mask(tape, x, Tensor::zeros({1, 1, 2, 2})), DimensionError);
}

TEST_CASE("loss_act vanishes on identical activations", "[explainer]") {
  Tape tape;
  Tensor phi = Tensor::from({4}, {0.5, 1.5, 0.0, 2.0});
  const auto a = single_tap("block1", phi.detach());
  const auto b = single_tap("block1", phi.detach());
  CHECK(loss_act(tape, a, b, {}, DistanceKind::mse).item() == 0.0);
  CHECK(std::fabs(loss_act(tape, a, b, {}, DistanceKind::cosine).item()) < 1e-12);
}

TEST_CASE("loss_act mse matches hand arithmetic", "[explainer]") {
  Tape tape;
  const auto a = single_tap("t", Tensor::from({2}, {1.0, 2.0}));
  const auto b = single_tap("t", Tensor::from({2}, {1.0, 4.0}));
  CHECK(loss_act(tape, a, b, {}, DistanceKind::mse).item() ==
        Catch::Approx(2.0).margin(1e-15));
}

TEST_CASE("loss_act cosine distance of orthogonal activations is 1", "[explainer]") {
  Tape tape;
  const auto a = single_tap("t", Tensor::from({4}, {1.0, 0.0, 2.0, 0.0}));
  const auto b = single_tap("t", Tensor::from({4}, {0.0, -3.0, 0.0, 1.5}));
  CHECK(loss_act(tape, a, b, {}, DistanceKind::cosine).item() ==
        Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("loss_act enforces matching key sets and alphas", "[explainer]") {
  Tape tape;
  const auto a = single_tap("t1", Tensor::from({2}, {1.0, 2.0}));
  const auto b = single_tap("t2", Tensor::from({2}, {1.0, 2.0}));
  CHECK_THROWS_AS(loss_act(tape, a, b, {}, DistanceKind::mse), ContractError);
  const auto c = single_tap("t1", Tensor::from({2}, {1.0, 2.0}));
  std::map<std::string, double> alpha{{"other", 1.0}};
  CHECK_THROWS_AS(loss_act(tape, a, c, alpha, DistanceKind::mse), ContractError);
}

TEST_CASE("loss_kl is zero for identical logits and matches a hand value",
          "[explainer]") {
  Tape tape;
  Tensor z = Tensor::from({4}, {0.4, -1.0, 2.0, 0.0});
  CHECK(std::fabs(loss_kl(tape, z, z.detach()).item()) < 1e-12);

  // p_x = [0.5, 0.5], p_e = [0.9, 0.1]:
  // 0.5 ln(0.5/0.9) + 0.5 ln(0.5/0.1) = 0.51082562376599068
  Tensor zx = Tensor::from({2}, {0.0, 0.0});
  Tensor ze = Tensor::from({2}, {std::log(0.9), std::log(0.1)});
  CHECK(loss_kl(tape, zx, ze).item() ==
        Catch::Approx(0.51082562376599068).margin(1e-12));
}

TEST_CASE("loss_kl is nonnegative on random logit pairs", "[explainer]") {
  Rng rng(606);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 2 + rng.uniform_int(5);
    Tensor a = Tensor::zeros({n}), b = Tensor::zeros({n});
    for (int i = 0; i < n; ++i) {
      a.data()[i] = rng.uniform(-8.0, 8.0);
      b.data()[i] = rng.uniform(-8.0, 8.0);
    }
    Tape tape;
    REQUIRE(loss_kl(tape, a, b).item() >= -1e-12);
  }
}

TEST_CASE("loss_ce closed forms", "[explainer]") {
  Tape tape;
  // Near-certain correct class.
  Tensor sure = Tensor::from({4}, {40.0, 0.0, 0.0, 0.0});
  CHECK(loss_ce(tape, sure, 0).item() < 1e-12);
  // Two-way tie: p(y) = 0.5.
  Tensor half = Tensor::from({2}, {0.0, 0.0});
  CHECK(loss_ce(tape, half, 0).item() == Catch::Approx(std::log(2.0)).margin(1e-12));
  // Uniform over four classes.
  Tensor quarter = Tensor::from({4}, {0.0, 0.0, 0.0, 0.0});
  CHECK(loss_ce(tape, quarter, 2).item() ==
        Catch::Approx(std::log(4.0)).margin(1e-12));
  CHECK_THROWS_AS(loss_ce(tape, quarter, 4), ContractError);
}

TEST_CASE("mask prior losses on the spec grids", "[explainer]") {
  Tape tape;
  Tensor zeros = Tensor::zeros({1, 1, 2, 2});
  CHECK(loss_area(tape, zeros).item() == 0.0);
  CHECK(loss_bin(tape, zeros).item() == 0.0);
  CHECK(loss_tv(tape, zeros).item() == 0.0);

  Tensor ones = Tensor::full({1, 1, 2, 2}, 1.0);
  CHECK(loss_area(tape, ones).item() == 1.0);
  CHECK(loss_bin(tape, ones).item() == 0.0);
  CHECK(loss_tv(tape, ones).item() == 0.0);

  Tensor half = Tensor::full({1, 1, 2, 2}, 0.5);
  CHECK(loss_bin(tape, half).item() == Catch::Approx(0.25).margin(1e-15));
  CHECK(loss_tv(tape, half).item() == 0.0);

  Tensor stripes = Tensor::from({1, 1, 2, 2}, {0.0, 1.0, 0.0, 1.0});
  CHECK(loss_tv(tape, stripes).item() == Catch::Approx(0.5).margin(1e-15));
}

TEST_CASE("sample_background distributions and determinism", "[explainer]") {
  Rng rng(13);
  const Tensor u = sample_background({1, 3, 64, 64}, BackgroundKind::uniform_noise, rng);
  double mean = 0.0;
  for (long long i = 0; i < u.numel(); ++i) mean += u.data()[i];
  mean /= static_cast<double>(u.numel());
  CHECK(std::fabs(mean - 0.5) < 0.02);

  Rng g1(14), g2(14);
  const Tensor a = sample_background({1, 3, 8, 8}, BackgroundKind::gaussian_noise, g1);
  const Tensor b = sample_background({1, 3, 8, 8}, BackgroundKind::gaussian_noise, g2);
  CHECK(a.values() == b.values());
  for (double v : a.values()) {
    REQUIRE(v >= 0.0);
    REQUIRE(v <= 1.0);
  }
}

TEST_CASE("corpus_shuffle never returns the excluded image", "[explainer]") {
  std::vector<Tensor> pool = {Tensor::full({1, 1, 2, 2}, 0.1),
                              Tensor::full({1, 1, 2, 2}, 0.2),
                              Tensor::full({1, 1, 2, 2}, 0.3)};
  Rng rng(15);
  for (int i = 0; i < 100; ++i) {
    const Tensor r =
        sample_background({1, 1, 2, 2}, BackgroundKind::corpus_shuffle, rng, &pool, 1);
    REQUIRE(r.data()[0] != Catch::Approx(0.2).margin(1e-12));
  }
  std::vector<Tensor> lone = {Tensor::full({1, 1, 2, 2}, 0.5)};
  CHECK_THROWS_AS(sample_background({1, 1, 2, 2}, BackgroundKind::corpus_shuffle, rng,
                                    &lone, 0),
                  DataError);
  CHECK_THROWS_AS(sample_background({1, 1, 2, 2}, BackgroundKind::corpus_shuffle, rng,
                                    nullptr, -1),
                  DataError);
}

TEST_CASE("loss_rob collapses to loss_ce under a full mask", "[explainer]") {
  const auto& world = testfx::World::get();
  const Tensor x = world.test.front().batch();
  const Tensor logits = world.model.logits(x);
  const int y = argmax_index(logits);
  Rng rng(16);
  const Tensor r = sample_background(x.shape(), BackgroundKind::uniform_noise, rng);

  Tape tape;
  const Tensor full = Tensor::full({1, 1, 32, 32}, 1.0);
  const double rob_full = loss_rob(tape, x, full, r, world.model, y).item();
  const double ce_x = loss_ce(tape, logits, y).item();
  CHECK(rob_full == Catch::Approx(ce_x).margin(1e-12));

  // Empty mask: the composite is exactly the background.
  const Tensor empty = Tensor::zeros({1, 1, 32, 32});
  const double rob_empty = loss_rob(tape, x, empty, r, world.model, y).item();
  const double ce_r = loss_ce(tape, world.model.logits(r), y).item();
  CHECK(rob_empty == Catch::Approx(ce_r).margin(1e-12));
  CHECK(rob_empty >= 0.0);
  CHECK(rob_full >= 0.0);
}

TEST_CASE("explainer config validation", "[explainer]") {
  ExplainerConfig cfg = preset_default();
  cfg.steps = 0;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
  cfg = preset_default();
  cfg.lambda_act = cfg.lambda_ce = cfg.lambda_kl = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
  cfg = preset_default();
  cfg.binarize_threshold = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
  cfg = preset_default();
  cfg.lambda_tv = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
}

TEST_CASE("presets encode the published group ratios", "[explainer]") {
  const ExplainerConfig bach = preset_bach();
  CHECK(bach.lambda_act + bach.lambda_ce + bach.lambda_kl ==
        Catch::Approx(10.0).margin(1e-12));
  CHECK(bach.lambda_area + bach.lambda_bin + bach.lambda_tv ==
        Catch::Approx(100.0).margin(1e-12));
  CHECK(bach.lambda_rob == 10.0);
  CHECK(bach.lambda_area == Catch::Approx(2.0 * bach.lambda_bin));

  const ExplainerConfig ham = preset_ham();
  CHECK(ham.lambda_area + ham.lambda_bin + ham.lambda_tv ==
        Catch::Approx(150.0).margin(1e-12));
  CHECK(ham.lambda_rob == 20.0);
  CHECK_THROWS_AS(preset_by_name("nope"), ParameterError);
}

TEST_CASE("unconstrained fidelity run keeps the label", "[explainer]") {
  const auto& world = testfx::World::get();
  ExplainerConfig cfg = preset_default();
  cfg.lambda_area = cfg.lambda_bin = cfg.lambda_tv = cfg.lambda_rob = 0.0;
  cfg.steps = 60;
  cfg.seed = 5;
  const Tensor x = world.test.front().batch();
  const ExplainResult res = explain(x, world.model, cfg, "fidelity");
  CHECK(res.report.decision_preserved);
}

TEST_CASE("explain is bit-reproducible for a fixed seed", "[explainer]") {
  const auto& world = testfx::World::get();
  ExplainerConfig cfg = quick_config(20, 31);
  const Tensor x = world.test[1].batch();
  const ExplainResult a = explain(x, world.model, cfg, "det");
  const ExplainResult b = explain(x, world.model, cfg, "det");
  CHECK(a.mask.values == b.mask.values);
  CHECK(a.mask.binarized == b.mask.binarized);
  CHECK(a.report.conf_e == b.report.conf_e);
  CHECK(a.report.rob_pass_rate == b.report.rob_pass_rate);
}

TEST_CASE("loss decomposition holds at every step", "[explainer]") {
  const auto& world = testfx::World::get();
  ExplainerConfig cfg = quick_config(15, 8);
  const Tensor x = world.test[2].batch();
  const ExplainResult res = explain(x, world.model, cfg, "decomp");
  REQUIRE(res.trajectory.size() == 15);
  for (const auto& bd : res.trajectory) {
    REQUIRE(std::fabs(bd.total - bd.weighted_sum(cfg)) < 1e-9);
    REQUIRE(bd.act >= 0.0);
    REQUIRE(bd.kl >= -1e-12);
    REQUIRE(bd.ce >= 0.0);
    REQUIRE(bd.area >= 0.0);
    REQUIRE(bd.bin >= 0.0);
    REQUIRE(bd.tv >= 0.0);
    REQUIRE(bd.rob >= 0.0);
  }
}

TEST_CASE("classifier hash is unchanged by an explain run", "[explainer]") {
  const auto& world = testfx::World::get();
  const std::uint64_t before = world.model.weight_hash();
  explain(world.test[3].batch(), world.model, quick_config(10, 9), "hash");
  CHECK(world.model.weight_hash() == before);
}

TEST_CASE("gradients reach every MaskNet parameter and no classifier parameter",
          "[explainer]") {
  const auto& world = testfx::World::get();
  const Tensor x = world.test[4].batch();

  MaskNet net(77, 3);
  Tape tape;
  const Tensor m = net.forward(tape, x);
  const Tensor e = apply_mask(tape, x, m);
  const auto fw = world.model.forward_with_taps(tape, e);
  ActivationSet acts_x;
  Tensor logits_x;
  {
    Tape tx;
    auto fx = world.model.forward_with_taps(tx, x);
    logits_x = fx.logits.detach();
    acts_x = fx.taps.detached();
  }
  const int y = argmax_index(logits_x);
  const ExplainerConfig cfg = preset_default();
  Tensor total = Tensor::scalar(0.0);
  total = add(tape, total,
              scale(tape, loss_act(tape, acts_x, fw.taps, {}, cfg.distance),
                    cfg.lambda_act));
  total = add(tape, total, scale(tape, loss_ce(tape, fw.logits, y), cfg.lambda_ce));
  total = add(tape, total, scale(tape, loss_kl(tape, logits_x, fw.logits), cfg.lambda_kl));
  total = add(tape, total, scale(tape, loss_area(tape, m), cfg.lambda_area));
  total = add(tape, total, scale(tape, loss_bin(tape, m), cfg.lambda_bin));
  total = add(tape, total, scale(tape, loss_tv(tape, m), cfg.lambda_tv));
  backward(total, tape);

  for (const Tensor& p : net.parameters()) {
    const auto g = p.grad_or_zeros();
    bool any = false;
    for (double v : g) any = any || v != 0.0;
    CHECK(any);
  }
  for (const Tensor& p : world.model.parameters()) {
    CHECK_FALSE(p.grad_allocated());
  }
}

TEST_CASE("divergent optimization aborts with step index and last breakdown",
          "[explainer]") {
  const auto& world = testfx::World::get();
  ExplainerConfig cfg = quick_config(50, 3);
  cfg.lr = 1e300;
  try {
    explain(world.test[5].batch(), world.model, cfg, "diverge");
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(e.step >= 1);
    CHECK(std::isfinite(e.last_finite.total));
  }
}

TEST_CASE("mask helpers binarize and measure correctly", "[explainer]") {
  Mask m;
  m.width = 2;
  m.height = 2;
  m.values = {0.05, 0.95, 0.55, 0.45};
  m.binarize(0.5);
  CHECK(m.binarized == std::vector<std::uint8_t>{0, 1, 1, 0});
  CHECK(m.area_fraction() == 0.5);
  CHECK(m.crisp_fraction() == 0.5);  // 0.05 and 0.95 are crisp
}
