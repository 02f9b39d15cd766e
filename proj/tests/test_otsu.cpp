#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cstdint>
#include <random>

#include <boost/multiprecision/cpp_int.hpp>

#include "histcode/otsu.hpp"

using histcode::otsu_threshold;

namespace {

using Big = boost::multiprecision::cpp_int;

// Independent exhaustive search: score(t) = (S(t)*N - S_T*C(t))^2 over
// C(t)*(N-C(t)), compared as exact fractions in arbitrary precision.
int oracle_otsu(const std::array<std::uint64_t, 256>& hist) {
  Big total = 0, total_sum = 0;
  for (int i = 0; i < 256; ++i) {
    total += hist[i];
    total_sum += Big(hist[i]) * i;
  }
  Big c = 0, s = 0;
  Big best_num = -1, best_den = 1;
  int lo = 0, hi = 0;
  for (int t = 0; t < 256; ++t) {
    c += hist[t];
    s += Big(hist[t]) * t;
    if (c == 0 || c == total) continue;
    Big d = s * total - total_sum * c;
    Big num = d * d;
    Big den = c * (total - c);
    Big cmp = num * best_den - best_num * den;  // num/den vs best
    if (best_num < 0 || cmp > 0) {
      best_num = num;
      best_den = den;
      lo = hi = t;
    } else if (cmp == 0) {
      hi = t;
    }
  }
  return (lo + hi) / 2;
}

std::array<std::uint64_t, 256> two_spikes(int a, std::uint64_t na, int b,
                                          std::uint64_t nb) {
  std::array<std::uint64_t, 256> h{};
  h[static_cast<std::size_t>(a)] += na;
  h[static_cast<std::size_t>(b)] += nb;
  return h;
}

}  // namespace

TEST_CASE("otsu two equal spikes lands on the tie-range midpoint") {
  CHECK(otsu_threshold(two_spikes(10, 100, 200, 100)) == 104);
  CHECK(oracle_otsu(two_spikes(10, 100, 200, 100)) == 104);
  CHECK(otsu_threshold(two_spikes(0, 50, 255, 50)) == 127);
  CHECK(oracle_otsu(two_spikes(0, 50, 255, 50)) == 127);
}

TEST_CASE("otsu rejects single-bin histograms") {
  std::array<std::uint64_t, 256> h{};
  h[42] = 1000;
  CHECK_THROWS_AS(otsu_threshold(h), histcode::DegenerateHistogram);
  h[42] = 0;
  CHECK_THROWS_AS(otsu_threshold(h), histcode::DegenerateHistogram);
}

TEST_CASE("otsu matches the exhaustive big-integer oracle") {
  std::mt19937_64 rng(20240817);
  for (int trial = 0; trial < 1000; ++trial) {
    std::array<std::uint64_t, 256> h{};
    // mixture of dense noise and a few heavy spikes, some adversarial
    const int kind = trial % 4;
    if (kind == 0) {
      std::uniform_int_distribution<std::uint64_t> d(0, 50);
      for (auto& v : h) v = d(rng);
    } else if (kind == 1) {
      std::uniform_int_distribution<int> pos(0, 255);
      std::uniform_int_distribution<std::uint64_t> mass(1, 1'000'000);
      for (int i = 0; i < 5; ++i) h[static_cast<std::size_t>(pos(rng))] += mass(rng);
    } else if (kind == 2) {
      // two gaussian-ish humps, the textbook case
      std::normal_distribution<double> g1(70, 12), g2(190, 9);
      for (int i = 0; i < 3000; ++i) {
        int v1 = std::clamp(static_cast<int>(g1(rng)), 0, 255);
        int v2 = std::clamp(static_cast<int>(g2(rng)), 0, 255);
        ++h[static_cast<std::size_t>(v1)];
        ++h[static_cast<std::size_t>(v2)];
      }
    } else {
      // near-tie pressure: symmetric spikes at random offsets
      std::uniform_int_distribution<int> off(1, 120);
      int o = off(rng);
      h = two_spikes(127 - o, 1000, std::min(255, 127 + o), 1000);
      std::uniform_int_distribution<std::uint64_t> d(0, 2);
      for (auto& v : h) v += d(rng);
    }
    int occupied = 0;
    for (auto v : h)
      if (v) ++occupied;
    if (occupied < 2) {
      ++h[0];
      ++h[255];
    }
    INFO("trial " << trial);
    CHECK(otsu_threshold(h) == oracle_otsu(h));
  }
}
