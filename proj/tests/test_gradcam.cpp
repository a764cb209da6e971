#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "medcam/evaluate.hpp"
#include "medcam/gradcam.hpp"
#include "test_fixtures.hpp"

using namespace medcam;

namespace {

// Occlusion-sensitivity oracle: re-classify with each 8x8 patch zeroed and
// record the confidence drop of the target class per pixel.
std::vector<double> occlusion_map(const ClassifierModel& model, const Tensor& image,
                                  int target) {
  const int s = model.image_size();
  const double base = softmax_probs(model.logits(image))[static_cast<std::size_t>(target)];
  std::vector<double> sens(static_cast<std::size_t>(s) * s, 0.0);
  for (int py = 0; py < s; py += 8) {
    for (int px = 0; px < s; px += 8) {
      Tensor patched = image.detach();
      const long long plane = static_cast<long long>(s) * s;
      for (int c = 0; c < 3; ++c) {
        for (int y = py; y < std::min(py + 8, s); ++y) {
          for (int x = px; x < std::min(px + 8, s); ++x) {
            patched.data()[c * plane + static_cast<long long>(y) * s + x] = 0.0;
          }
        }
      }
      const double conf =
          softmax_probs(model.logits(patched))[static_cast<std::size_t>(target)];
      const double drop = base - conf;
      for (int y = py; y < std::min(py + 8, s); ++y) {
        for (int x = px; x < std::min(px + 8, s); ++x) {
          sens[static_cast<std::size_t>(y) * s + x] = drop;
        }
      }
    }
  }
  return sens;
}

std::vector<std::uint8_t> top_fraction(const std::vector<double>& values,
                                       double fraction) {
  Heatmap h;
  h.values = values;
  h.width = h.height = static_cast<int>(std::lround(std::sqrt(double(values.size()))));
  return threshold_topk(h, std::llround(fraction * static_cast<double>(values.size())));
}

double mask_iou(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  long long inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += (a[i] && b[i]) ? 1 : 0;
    uni += (a[i] || b[i]) ? 1 : 0;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace

TEST_CASE("a head that ignores the taps yields the all-zero flag", "[gradcam]") {
  ClassifierModel model = ClassifierModel::random_init(3, 4, 3, 32);
  // Zero the linear head: every logit becomes constant, with zero gradient
  // into the tapped activations.
  auto params = model.parameters();
  for (Tensor p : {params[params.size() - 2], params[params.size() - 1]}) {
    std::fill(p.data(), p.data() + p.numel(), 0.0);
  }
  const Heatmap hm = gradcam(model, Tensor::full({1, 3, 32, 32}, 0.5), 0, "block3");
  CHECK(hm.all_zero);
  for (double v : hm.values) CHECK(v == 0.0);
}

TEST_CASE("heatmap extrema are 0 and 1 in the non-degenerate case", "[gradcam]") {
  const auto& world = testfx::World::get();
  const Tensor x = world.test.front().batch();
  const int y = argmax_index(world.model.logits(x));
  const Heatmap hm = gradcam(world.model, x, y, "block3");
  REQUIRE_FALSE(hm.all_zero);
  const auto [mn, mx] = std::minmax_element(hm.values.begin(), hm.values.end());
  CHECK(*mn == 0.0);
  CHECK(*mx == 1.0);
}

TEST_CASE("heatmap is invariant to positive logit rescaling", "[gradcam]") {
  // Two identically initialized models, one with the head scaled by 2.
  ClassifierModel a = ClassifierModel::random_init(9, 4, 3, 32);
  ClassifierModel b = ClassifierModel::random_init(9, 4, 3, 32);
  auto pb = b.parameters();
  for (Tensor p : {pb[pb.size() - 2], pb[pb.size() - 1]}) {
    for (long long i = 0; i < p.numel(); ++i) p.data()[i] *= 2.0;
  }
  const Tensor x = testfx::World::get().test[2].batch();
  const Heatmap ha = gradcam(a, x, 1, "block2");
  const Heatmap hb = gradcam(b, x, 1, "block2");
  REQUIRE(ha.values.size() == hb.values.size());
  for (std::size_t i = 0; i < ha.values.size(); ++i) {
    REQUIRE(std::fabs(ha.values[i] - hb.values[i]) < 1e-9);
  }
}

TEST_CASE("gradcam is deterministic and validates its inputs", "[gradcam]") {
  const auto& world = testfx::World::get();
  const Tensor x = world.test[1].batch();
  const Heatmap a = gradcam(world.model, x, 0, "block3");
  const Heatmap b = gradcam(world.model, x, 0, "block3");
  CHECK(a.values == b.values);
  CHECK_THROWS_AS(gradcam(world.model, x, 9, "block3"), ContractError);
  CHECK_THROWS_AS(gradcam(world.model, x, 0, "blockX"), ContractError);
}

TEST_CASE("threshold_heatmap keeps the requested pixel count", "[gradcam]") {
  Heatmap h;
  h.width = h.height = 2;
  h.values = {0.1, 0.9, 0.3, 0.6};

  CHECK(threshold_heatmap(h, 1.0) == std::vector<std::uint8_t>{1, 1, 1, 1});
  CHECK(threshold_heatmap(h, 0.25) == std::vector<std::uint8_t>{0, 1, 0, 0});

  // All-tied values: row-major order wins.
  Heatmap tied;
  tied.width = tied.height = 3;
  tied.values.assign(9, 0.5);
  const auto mask = threshold_heatmap(tied, 0.3);  // round(2.7) = 3
  CHECK(std::count(mask.begin(), mask.end(), 1) == 3);
  CHECK(mask == std::vector<std::uint8_t>{1, 1, 1, 0, 0, 0, 0, 0, 0});

  CHECK_THROWS_AS(threshold_heatmap(h, 0.0), ParameterError);
  CHECK_THROWS_AS(threshold_heatmap(h, 1.5), ParameterError);
}

TEST_CASE("gradcam agrees with the occlusion oracle above chance", "[gradcam]") {
  const auto& world = testfx::World::get();
  double iou_gradcam = 0.0, iou_random = 0.0;
  int used = 0;
  Rng rng(4242);
  for (std::size_t i = 0; i < world.test.size() && used < 20; ++i) {
    const SynthImage& img = world.test[i];
    if (img.label == 0) continue;  // background-only images have no hotspot
    const Tensor x = img.batch();
    const int y = argmax_index(world.model.logits(x));
    const auto occ = occlusion_map(world.model, x, y);
    const auto occ_top = top_fraction(occ, 0.1);

    const Heatmap hm = gradcam(world.model, x, y, "block3");
    const auto cam_top = top_fraction(hm.values, 0.1);
    iou_gradcam += mask_iou(cam_top, occ_top);

    const auto rand_mask = evaluate_detail::random_mask(
        static_cast<long long>(occ.size()),
        std::llround(0.1 * static_cast<double>(occ.size())), rng);
    iou_random += mask_iou(rand_mask, occ_top);
    ++used;
  }
  REQUIRE(used == 20);
  INFO("gradcam IoU " << iou_gradcam / used << " vs random " << iou_random / used);
  CHECK(iou_gradcam > iou_random);
}
