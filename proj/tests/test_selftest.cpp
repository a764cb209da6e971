#include <catch2/catch_amalgamated.hpp>

#include "medcam/selftest.hpp"

using namespace medcam;

TEST_CASE("selftest passes on a healthy engine", "[selftest]") {
  SelftestOptions opt;
  opt.trials_per_op = 6;  // the CLI default of 50 runs in the acceptance suite
  const SelftestResult result = run_selftest(opt);
  for (const auto& line : result.lines) {
    INFO(line.name << ": " << line.detail);
    CHECK(line.pass);
  }
  CHECK(result.all_pass);
}

TEST_CASE("an injected sign error in a backward rule is caught", "[selftest]") {
  SelftestOptions opt;
  opt.trials_per_op = 4;
  opt.inject_fault = true;
  const SelftestResult result = run_selftest(opt);
  CHECK_FALSE(result.all_pass);
  bool canary_failed = false;
  for (const auto& line : result.lines) {
    if (line.name.rfind("canary/", 0) == 0) canary_failed = !line.pass;
  }
  CHECK(canary_failed);
}

TEST_CASE("the naive conv reference reproduces an identity convolution",
          "[selftest]") {
  Tensor x = Tensor::from({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  Tensor k = Tensor::from({1, 1, 1, 1}, {1.0});
  const Tensor out = naive_conv2d_reference(x, k, 1, 0);
  CHECK(out.values() == x.values());
}
