#include <catch2/catch_amalgamated.hpp>

#include <mnlvql/assort.hpp>
#include <mnlvql/rng.hpp>

#include <cmath>
#include <vector>

using namespace mnlvql;

namespace {

AssortmentInstance random_instance(Rng& rng, int max_n, int max_cap) {
  AssortmentInstance inst;
  const int n = 1 + static_cast<int>(rng.uniform_below(
                        static_cast<uint64_t>(max_n)));
  inst.outside_weight = std::exp(rng.uniform_real(-3.0, 3.0));
  inst.outside_value = rng.uniform01();
  for (int i = 0; i < n; ++i) {
    inst.weights.push_back(std::exp(rng.uniform_real(-3.0, 3.0)));
    inst.values.push_back(rng.uniform01());
  }
  inst.max_items =
      1 + static_cast<int>(rng.uniform_below(static_cast<uint64_t>(max_cap)));
  return inst;
}

}  // namespace

TEST_CASE("brute force on closed-form instances", "[assort]") {
  AssortmentInstance two;
  two.outside_weight = 1.0;
  two.outside_value = 0.5;
  two.weights = {1.0, 1.0};
  two.values = {0.9, 0.1};
  two.max_items = 1;
  AssortmentSolution s = solve_bruteforce(two);
  REQUIRE(s.chosen == std::vector<int>{0});
  CHECK(s.value == Catch::Approx(0.7));

  AssortmentInstance single;
  single.outside_weight = 2.0;
  single.outside_value = 0.8;
  single.weights = {3.0};
  single.values = {0.1};
  single.max_items = 2;
  AssortmentSolution forced = solve_bruteforce(single);
  REQUIRE(forced.chosen == std::vector<int>{0});
  CHECK(forced.value == Catch::Approx((2.0 * 0.8 + 3.0 * 0.1) / 5.0));
}

TEST_CASE("brute force constant objective picks the first singleton",
          "[assort]") {
  Rng rng(211);
  AssortmentInstance inst;
  inst.outside_weight = 0.7;
  inst.outside_value = 0.37;
  for (int i = 0; i < 6; ++i) {
    inst.weights.push_back(std::exp(rng.uniform_real(-2.0, 2.0)));
    inst.values.push_back(0.37);
  }
  inst.max_items = 3;
  AssortmentSolution s = solve_bruteforce(inst);
  CHECK(s.chosen == std::vector<int>{0});
  CHECK(s.value == Catch::Approx(0.37));
}

TEST_CASE("brute force item-count guard", "[assort]") {
  AssortmentInstance inst;
  inst.outside_value = 0.0;
  inst.weights.assign(21, 1.0);
  inst.values.assign(21, 0.5);
  inst.max_items = 2;
  CHECK_THROWS_AS(solve_bruteforce(inst), TooManyItems);
}

TEST_CASE("bisection on closed-form instances", "[assort]") {
  AssortmentInstance two;
  two.outside_weight = 1.0;
  two.outside_value = 0.5;
  two.weights = {1.0, 1.0};
  two.values = {0.9, 0.1};
  two.max_items = 1;
  AssortmentSolution s = solve_bisection(two);
  REQUIRE(s.chosen == std::vector<int>{0});
  CHECK(s.value == Catch::Approx(0.7).margin(1e-10));

  // Constant objective: the optimal value is the common value itself.
  AssortmentInstance flat;
  flat.outside_weight = 1.3;
  flat.outside_value = 0.42;
  flat.weights = {0.5, 2.0, 1.1};
  flat.values = {0.42, 0.42, 0.42};
  flat.max_items = 2;
  CHECK(solve_bisection(flat).value == Catch::Approx(0.42).margin(1e-10));
}

TEST_CASE("bisection agrees with brute force on random corpora", "[assort]") {
  Rng rng(223);
  for (int trial = 0; trial < 1000; ++trial) {
    AssortmentInstance inst = random_instance(rng, 12, 3);
    AssortmentSolution brute = solve_bruteforce(inst);
    AssortmentSolution bis = solve_bisection(inst);
    REQUIRE(std::abs(brute.value - bis.value) <= tol::kAssortBisectionAgreement);
    // The chosen set genuinely attains the reported value.
    REQUIRE(std::abs(assortment_value(inst, bis.chosen) - bis.value) <=
            tol::kAssortValueRecompute);
    REQUIRE(static_cast<int>(bis.chosen.size()) <= inst.max_items);
    REQUIRE(!bis.chosen.empty());
  }
}

TEST_CASE("Charnes-Cooper on closed-form instances", "[assort]") {
  AssortmentInstance two;
  two.outside_weight = 1.0;
  two.outside_value = 0.5;
  two.weights = {1.0, 1.0};
  two.values = {0.9, 0.1};
  two.max_items = 1;
  AssortmentSolution s = solve_charnes_cooper(two);
  REQUIRE(s.chosen == std::vector<int>{0});
  CHECK(s.value == Catch::Approx(0.7).margin(1e-9));

  // Single item: the hand-solved LP has t = 1/(w0+w1), y1 = t, so the item is
  // included and the value is the two-point MNL average.
  AssortmentInstance single;
  single.outside_weight = 1.0;
  single.outside_value = 0.2;
  single.weights = {2.0};
  single.values = {0.9};
  single.max_items = 1;
  AssortmentSolution hand = solve_charnes_cooper(single);
  REQUIRE(hand.chosen == std::vector<int>{0});
  CHECK(hand.value == Catch::Approx(2.0 / 3.0).margin(1e-9));
}

TEST_CASE("Charnes-Cooper agrees with brute force on random corpora",
          "[assort]") {
  Rng rng(227);
  for (int trial = 0; trial < 500; ++trial) {
    AssortmentInstance inst = random_instance(rng, 10, 4);
    AssortmentSolution brute = solve_bruteforce(inst);
    AssortmentSolution cc = solve_charnes_cooper(inst);
    // Relaxation exactness in both directions.
    REQUIRE(std::abs(brute.value - cc.value) <= tol::kAssortSolverAgreement);
    REQUIRE(std::abs(assortment_value(inst, cc.chosen) - cc.value) <=
            tol::kAssortValueRecompute);
    REQUIRE(static_cast<int>(cc.chosen.size()) <= inst.max_items);
  }
}

TEST_CASE("removing a chosen item never helps", "[assort]") {
  Rng rng(229);
  for (int trial = 0; trial < 300; ++trial) {
    AssortmentInstance inst = random_instance(rng, 10, 5);
    AssortmentSolution brute = solve_bruteforce(inst);
    if (brute.chosen.size() <= 1) continue;
    for (std::size_t drop = 0; drop < brute.chosen.size(); ++drop) {
      std::vector<int> reduced;
      for (std::size_t i = 0; i < brute.chosen.size(); ++i)
        if (i != drop) reduced.push_back(brute.chosen[i]);
      CHECK(assortment_value(inst, reduced) <= brute.value + tol::kValueTie);
    }
  }
}

TEST_CASE("common weight scaling leaves values unchanged", "[assort]") {
  Rng rng(233);
  for (int trial = 0; trial < 100; ++trial) {
    AssortmentInstance inst = random_instance(rng, 8, 3);
    const double scale = std::exp(rng.uniform_real(-2.0, 2.0));
    AssortmentInstance scaled = inst;
    scaled.outside_weight *= scale;
    for (double& w : scaled.weights) w *= scale;
    AssortmentSolution a = solve_bisection(inst);
    AssortmentSolution b = solve_bisection(scaled);
    CHECK(std::abs(a.value - b.value) <= tol::kWeightScaleInvariance);
  }
}

TEST_CASE("Charnes-Cooper item-count guard", "[assort]") {
  AssortmentInstance inst;
  inst.weights.assign(65, 1.0);
  inst.values.assign(65, 0.5);
  inst.max_items = 3;
  CHECK_THROWS_AS(solve_charnes_cooper(inst), TooManyItems);
}
