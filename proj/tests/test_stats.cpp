#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "histcode/stats.hpp"

using namespace histcode;

namespace {

// Independent permutation oracle: enumerate every assignment of the pooled
// values into group A, recompute midranks from scratch each time.
double oracle_wilcoxon(const std::vector<double>& a,
                       const std::vector<double>& b) {
  std::vector<double> pooled = a;
  pooled.insert(pooled.end(), b.begin(), b.end());
  const std::size_t n = pooled.size(), na = a.size();
  auto u_of = [&](const std::vector<std::size_t>& subset) {
    std::vector<double> rank = midranks(pooled);
    double rs = 0;
    for (std::size_t i : subset) rs += rank[i];
    return rs - 0.5 * static_cast<double>(na) * static_cast<double>(na + 1);
  };
  std::vector<std::size_t> obs(na);
  std::iota(obs.begin(), obs.end(), std::size_t{0});
  const double mu = 0.5 * static_cast<double>(na) * static_cast<double>(n - na);
  const double dev_obs = std::abs(u_of(obs) - mu);

  std::uint64_t hits = 0, total = 0;
  std::vector<bool> pick(n, false);
  std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(na),
            true);
  std::sort(pick.begin(), pick.end());  // start from lexicographically first
  do {
    std::vector<std::size_t> subset;
    for (std::size_t i = 0; i < n; ++i)
      if (pick[i]) subset.push_back(i);
    if (std::abs(u_of(subset) - mu) >= dev_obs) ++hits;
    ++total;
  } while (std::next_permutation(pick.begin(), pick.end()));
  return static_cast<double>(hits) / static_cast<double>(total);
}

// Step-up reference: adj(i) = min over j >= i of p(j)*m/j on the sorted
// order, mirrored term by term (including the >= raw guard).
std::vector<double> oracle_bh(const std::vector<double>& p) {
  const std::size_t m = p.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
  std::vector<double> adj(m);
  for (std::size_t i = 0; i < m; ++i) {
    double best = 1.0;
    for (std::size_t j = i; j < m; ++j) {
      double v = p[order[j]] * static_cast<double>(m) /
                 static_cast<double>(j + 1);
      if (v < p[order[j]]) v = p[order[j]];
      best = std::min(best, v);
    }
    adj[order[i]] = best;
  }
  return adj;
}

}  // namespace

TEST_CASE("midranks handle ties with mean ranks") {
  CHECK(midranks({3, 1, 2}) == std::vector<double>{3, 1, 2});
  CHECK(midranks({5, 5, 1}) == std::vector<double>{2.5, 2.5, 1});
  CHECK(midranks({2, 2, 2, 2}) == std::vector<double>{2.5, 2.5, 2.5, 2.5});
}

TEST_CASE("pearson basics") {
  CHECK(pearson({1, 2, 3}, {1, 2, 3}) == 1.0);
  CHECK(pearson({1, 2, 3}, {3, 2, 1}) == -1.0);
  CHECK_THROWS_AS(pearson({1, 1, 1}, {1, 2, 3}), ConstantVector);
  CHECK_THROWS_AS(pearson({1}, {1}), TooFewValues);
  CHECK_THROWS_AS(pearson({1, 2}, {1, 2, 3}), DimensionMismatch);
}

TEST_CASE("pearson invariant under affine maps of one argument") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> d(-3, 3);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> x(30), y(30), y2(30);
    for (int i = 0; i < 30; ++i) {
      x[static_cast<std::size_t>(i)] = d(rng);
      y[static_cast<std::size_t>(i)] = d(rng);
      y2[static_cast<std::size_t>(i)] =
          2.0 * y[static_cast<std::size_t>(i)] + 3.0;
    }
    CHECK(pearson(x, y) == Catch::Approx(pearson(x, y2)).margin(1e-12));
  }
}

TEST_CASE("spearman equals pearson on midranks exactly") {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<int> d(0, 9);  // ties guaranteed
  for (int t = 0; t < 50; ++t) {
    std::vector<double> x(25), y(25);
    for (auto& v : x) v = d(rng);
    for (auto& v : y) v = d(rng);
    if (std::equal(x.begin() + 1, x.end(), x.begin()) ||
        std::equal(y.begin() + 1, y.end(), y.begin()))
      continue;
    CHECK(spearman(x, y) == pearson(midranks(x), midranks(y)));
  }
  CHECK(spearman({1, 2, 3}, {10, 20, 30}) == 1.0);
  CHECK(spearman({1, 2, 3}, {30, 20, 10}) == -1.0);
}

TEST_CASE("spearman invariant under strictly monotone transforms") {
  std::vector<double> x = {0.3, 1.7, 0.9, 2.4, 1.1, 0.2};
  std::vector<double> y = {5, 1, 4, 0, 2, 6};
  std::vector<double> y_cubed(y.size());
  std::transform(y.begin(), y.end(), y_cubed.begin(),
                 [](double v) { return v * v * v; });
  CHECK(spearman(x, y) == spearman(x, y_cubed));
}

TEST_CASE("wilcoxon identical samples give p = 1") {
  CHECK(wilcoxon_rank_sum({1, 2, 3}, {1, 2, 3}) == 1.0);
  std::vector<double> big(20, 5.0);
  CHECK(wilcoxon_rank_sum(big, big) == 1.0);  // approx branch, all tied
}

TEST_CASE("wilcoxon fully separated small samples") {
  // 2 of the C(6,3)=20 assignments reach the extreme deviation
  CHECK(wilcoxon_rank_sum({1, 2, 3}, {10, 11, 12}) == 0.1);
  CHECK(wilcoxon_rank_sum({10, 11, 12}, {1, 2, 3}) == 0.1);
}

TEST_CASE("wilcoxon exact branch matches the permutation oracle") {
  std::mt19937_64 rng(13);
  std::uniform_int_distribution<int> val(0, 6);  // heavy ties
  std::uniform_int_distribution<std::size_t> sz(1, 6);
  for (int t = 0; t < 60; ++t) {
    std::vector<double> a(sz(rng)), b(sz(rng));
    for (auto& v : a) v = val(rng);
    for (auto& v : b) v = val(rng);
    INFO("trial " << t);
    CHECK(wilcoxon_rank_sum(a, b) == oracle_wilcoxon(a, b));
  }
}

TEST_CASE("wilcoxon normal approximation tracks the exact p at n = 12") {
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> val(0, 1);
  for (int t = 0; t < 40; ++t) {
    std::vector<double> a(6), b(6);
    for (auto& v : a) v = val(rng);
    for (auto& v : b) v = val(rng);
    const double exact = wilcoxon_rank_sum(a, b);  // n = 12: exact branch

    // the approximation the implementation would use above the crossover,
    // reproduced here: tie-corrected variance, 0.5 continuity correction
    std::vector<double> pooled = a;
    pooled.insert(pooled.end(), b.begin(), b.end());
    auto rank = midranks(pooled);
    double ra = 0;
    for (int i = 0; i < 6; ++i) ra += rank[static_cast<std::size_t>(i)];
    double u = ra - 0.5 * 6 * 7, mu = 0.5 * 6 * 6;
    double var = (6.0 * 6.0 / 12.0) * 13.0;  // no ties with cont. uniforms
    double z = std::max(0.0, (std::abs(u - mu) - 0.5) / std::sqrt(var));
    double approx = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
    CHECK(std::abs(approx - exact) < 0.02);
  }
}

TEST_CASE("bh adjustment known vector and edge cases") {
  auto adj = bh_correct({0.01, 0.02, 0.03, 0.04});
  for (double v : adj) CHECK(v == Catch::Approx(0.04).margin(1e-12));
  CHECK(bh_correct({0.37}) == std::vector<double>{0.37});
  CHECK(bh_correct({}).empty());
  CHECK_THROWS_AS(bh_correct({0.5, 1.5}), Error);
  CHECK_THROWS_AS(bh_correct({-0.1}), Error);
}

TEST_CASE("bh matches the reference step-up formula exactly") {
  std::mt19937_64 rng(15);
  std::uniform_real_distribution<double> d(0, 1);
  std::uniform_int_distribution<std::size_t> sz(1, 40);
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> p(sz(rng));
    for (auto& v : p) v = d(rng);
    if (t % 5 == 0 && p.size() > 3) p[1] = p[3];  // exercise tie order
    auto got = bh_correct(p);
    auto want = oracle_bh(p);
    INFO("trial " << t);
    CHECK(got == want);
    for (std::size_t i = 0; i < p.size(); ++i) {
      CHECK(got[i] >= p[i]);
      CHECK(got[i] <= 1.0);
    }
  }
}

TEST_CASE("bh is monotone along the sorted raw order") {
  std::mt19937_64 rng(16);
  std::uniform_real_distribution<double> d(0, 1);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> p(25);
    for (auto& v : p) v = d(rng);
    auto adj = bh_correct(p);
    std::vector<std::size_t> order(p.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
    for (std::size_t i = 1; i < order.size(); ++i)
      CHECK(adj[order[i - 1]] <= adj[order[i]]);
  }
}

TEST_CASE("percentile linear interpolation") {
  CHECK(percentile({1, 2, 3, 4}, 0.5) == 2.5);
  CHECK(percentile({1, 2, 3, 4}, 0.25) == 1.75);
  CHECK(percentile({4, 3, 2, 1}, 0.0) == 1.0);
  CHECK(percentile({4, 3, 2, 1}, 1.0) == 4.0);
  CHECK(percentile({7}, 0.31) == 7.0);
  CHECK_THROWS_AS(percentile({}, 0.5), TooFewValues);
}

TEST_CASE("random baseline stays inside the percentile band") {
  std::vector<double> real(120);
  std::mt19937_64 rng(17);
  std::normal_distribution<double> d(2.0, 1.5);
  for (auto& v : real) v = d(rng);
  const double lo = percentile(real, 0.05), hi = percentile(real, 0.95);
  auto draws = random_baseline(real, 10000, 99);
  REQUIRE(draws.size() == 10000);
  for (double v : draws) {
    CHECK(v >= lo);
    CHECK(v <= hi);
  }
  CHECK(draws == random_baseline(real, 10000, 99));
  CHECK(draws != random_baseline(real, 10000, 100));
  std::vector<double> few(19, 1.0);
  CHECK_THROWS_AS(random_baseline(few, 5, 0), TooFewValues);
}

TEST_CASE("random baseline correlations center on zero") {
  std::mt19937_64 rng(18);
  std::normal_distribution<double> d(1.0, 0.8);
  double sum_r = 0;
  int neg = 0, pos = 0;
  for (int gene = 0; gene < 200; ++gene) {
    std::vector<double> real(50);
    for (auto& v : real) v = d(rng);
    auto base = random_baseline(real, real.size(),
                                1000 + static_cast<std::uint64_t>(gene));
    double r = pearson(real, base);
    sum_r += r;
    (r < 0 ? neg : pos) += 1;
  }
  CHECK(std::abs(sum_r / 200.0) < 0.05);
  // near-symmetric spread around zero
  CHECK(neg > 60);
  CHECK(pos > 60);
}

TEST_CASE("fc accuracy bins") {
  SECTION("one gene per bin collapses quartiles") {
    auto bins = fc_accuracy_bins({0.1, 0.5, 0.9}, {2.0, 3.0, 4.0},
                                 {0.0, 0.25, 0.75, 1.0});
    REQUIRE(bins.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(bins[i].count == 1);
      CHECK(bins[i].q1 == bins[i].median);
      CHECK(bins[i].median == bins[i].q3);
      CHECK(bins[i].mean == bins[i].median);
    }
    CHECK(bins[0].mean == 2.0);
    CHECK(bins[2].mean == 4.0);
  }
  SECTION("all genes in one bin") {
    auto bins = fc_accuracy_bins({0.2, 0.3, 0.4}, {1.0, 2.0, 6.0},
                                 {0.0, 1.0});
    REQUIRE(bins.size() == 1);
    CHECK(bins[0].count == 3);
    CHECK(bins[0].mean == 3.0);
    CHECK(bins[0].median == 2.0);
  }
  SECTION("constructed monotone data yields increasing bin means") {
    std::vector<double> r, fc;
    for (int g = 0; g < 30; ++g) {
      r.push_back(0.0333 * g);
      fc.push_back(1.0 + 0.5 * g);
    }
    auto bins = fc_accuracy_bins(r, fc, {0.0, 0.25, 0.5, 0.75, 1.0});
    for (std::size_t i = 1; i < bins.size(); ++i) {
      REQUIRE_FALSE(bins[i].empty);
      CHECK(bins[i].mean > bins[i - 1].mean);
    }
  }
  SECTION("empty bin flagged, out-of-range dropped") {
    auto bins = fc_accuracy_bins({0.1, 0.9, 2.0}, {1.0, 2.0, 3.0},
                                 {0.0, 0.5, 0.6, 1.0});
    REQUIRE(bins.size() == 3);
    CHECK(bins[0].count == 1);
    CHECK(bins[1].empty);
    CHECK(bins[2].count == 1);  // 2.0 dropped
    CHECK_THROWS_AS(
        fc_accuracy_bins({0.1}, {1.0, 2.0}, {0.0, 1.0}),
        DimensionMismatch);
  }
  SECTION("right edge closes the last bin") {
    auto bins = fc_accuracy_bins({1.0, 0.5}, {7.0, 3.0}, {0.0, 0.5, 1.0});
    CHECK(bins[1].count == 2);  // both 0.5 and 1.0 land in [0.5, 1.0]
  }
}
