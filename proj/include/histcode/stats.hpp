#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "histcode/errors.hpp"
#include "histcode/rng.hpp"

namespace histcode {

/// Ranks 1..n with ties replaced by the mean rank of the tied block.
inline std::vector<double> midranks(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> rank(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
    // block [i, j] shares rank (i+1 + j+1)/2
    double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) rank[order[t]] = r;
    i = j + 1;
  }
  return rank;
}

inline double pearson(const std::vector<double>& x,
                      const std::vector<double>& y) {
  if (x.size() != y.size()) throw DimensionMismatch("pearson length mismatch");
  const std::size_t n = x.size();
  if (n < 2) throw TooFewValues("pearson needs at least 2 points");
  double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double dx = x[i] - mx, dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0 || syy == 0) throw ConstantVector("pearson on constant vector");
  double r = sxy / std::sqrt(sxx * syy);
  return std::clamp(r, -1.0, 1.0);
}

inline double spearman(const std::vector<double>& x,
                       const std::vector<double>& y) {
  if (x.size() != y.size()) throw DimensionMismatch("spearman length mismatch");
  return pearson(midranks(x), midranks(y));
}

namespace detail {

inline double normal_sf(double z) {  // P(Z > z)
  return 0.5 * std::erfc(z / std::sqrt(2.0));
}

}  // namespace detail

/// Two-sided Wilcoxon rank-sum (Mann-Whitney) test. Exact enumeration over
/// all group assignments when n_a + n_b <= 12, otherwise normal
/// approximation with tie-corrected variance and 0.5 continuity correction.
inline double wilcoxon_rank_sum(const std::vector<double>& a,
                                const std::vector<double>& b) {
  if (a.empty() || b.empty())
    throw TooFewValues("wilcoxon needs nonempty samples");
  const std::size_t na = a.size(), nb = b.size(), n = na + nb;
  std::vector<double> pooled;
  pooled.reserve(n);
  pooled.insert(pooled.end(), a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  const std::vector<double> rank = midranks(pooled);
  double ra = 0;
  for (std::size_t i = 0; i < na; ++i) ra += rank[i];
  const double mu = 0.5 * static_cast<double>(na) * static_cast<double>(nb);
  const double u_obs =
      ra - 0.5 * static_cast<double>(na) * static_cast<double>(na + 1);
  const double dev_obs = std::abs(u_obs - mu);

  if (n <= 12) {
    // enumerate all C(n, na) subsets of rank positions; midranks are
    // multiples of 1/2 so the comparison below is exact in binary FP
    std::uint64_t hits = 0, total = 0;
    std::vector<std::size_t> idx(na);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    while (true) {
      double rs = 0;
      for (std::size_t i : idx) rs += rank[i];
      double u = rs - 0.5 * static_cast<double>(na) *
                          static_cast<double>(na + 1);
      if (std::abs(u - mu) >= dev_obs) ++hits;
      ++total;
      // next combination in lexicographic order
      std::size_t k = na;
      while (k > 0 && idx[k - 1] == n - na + (k - 1)) --k;
      if (k == 0) break;
      ++idx[k - 1];
      for (std::size_t t = k; t < na; ++t) idx[t] = idx[t - 1] + 1;
    }
    return static_cast<double>(hits) / static_cast<double>(total);
  }

  // tie-corrected variance
  std::vector<double> sorted = pooled;
  std::sort(sorted.begin(), sorted.end());
  double tie_term = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && sorted[j + 1] == sorted[i]) ++j;
    double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }
  double var = (static_cast<double>(na) * nb / 12.0) *
               (static_cast<double>(n + 1) -
                tie_term / (static_cast<double>(n) * (n - 1)));
  if (var <= 0) return 1.0;  // all values tied
  double z = (dev_obs - 0.5) / std::sqrt(var);
  if (z < 0) z = 0;
  return std::min(1.0, 2.0 * detail::normal_sf(z));
}

/// Benjamini-Hochberg step-up adjustment, clamped to 1, original order kept.
inline std::vector<double> bh_correct(const std::vector<double>& p) {
  const std::size_t m = p.size();
  for (double v : p)
    if (!(v >= 0.0 && v <= 1.0))
      throw Error("p-values must lie in [0,1]");
  if (m == 0) return {};
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
  std::vector<double> adj(m);
  double running = 1.0;
  for (std::size_t r = m; r >= 1; --r) {
    double v = p[order[r - 1]] * static_cast<double>(m) /
               static_cast<double>(r);
    // p*m/r >= p holds in exact arithmetic; keep it true under rounding too
    if (v < p[order[r - 1]]) v = p[order[r - 1]];
    if (v < running) running = v;
    adj[order[r - 1]] = running;
  }
  return adj;
}

/// Linear-interpolation percentile (the common "type 7" definition) of a
/// sorted copy; q in [0,1].
inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) throw TooFewValues("percentile of empty vector");
  std::sort(v.begin(), v.end());
  if (v.size() == 1) return v[0];
  double h = q * static_cast<double>(v.size() - 1);
  std::size_t lo = static_cast<std::size_t>(std::floor(h));
  if (lo >= v.size() - 1) return v.back();
  double frac = h - static_cast<double>(lo);
  return v[lo] + frac * (v[lo + 1] - v[lo]);
}

/// Uniform draws over the 5th-95th percentile interval of the observed
/// values. Used as the chance-level reference for per-gene correlations.
inline std::vector<double> random_baseline(const std::vector<double>& real,
                                           std::size_t n_draws,
                                           std::uint64_t seed) {
  if (real.size() < 20)
    throw TooFewValues("random_baseline needs at least 20 real values");
  double lo = percentile(real, 0.05);
  double hi = percentile(real, 0.95);
  Rng rng = make_rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> out(n_draws);
  for (double& v : out) v = (lo == hi) ? lo : dist(rng);
  return out;
}

struct BinStats {
  std::size_t count = 0;
  double q1 = 0, median = 0, q3 = 0, mean = 0;
  bool empty = true;
};

/// Groups genes into bins of their correlation score and summarizes the
/// fold changes inside each bin. Bin i covers [edges[i], edges[i+1]), the
/// last bin is closed on the right. Values outside the edges are dropped.
inline std::vector<BinStats> fc_accuracy_bins(
    const std::vector<double>& per_gene_pearson,
    const std::vector<double>& per_gene_mean_fc,
    const std::vector<double>& bin_edges) {
  if (per_gene_pearson.size() != per_gene_mean_fc.size())
    throw DimensionMismatch("fc_accuracy_bins: unaligned inputs");
  if (bin_edges.size() < 2 ||
      !std::is_sorted(bin_edges.begin(), bin_edges.end()))
    throw Error("fc_accuracy_bins: need ascending bin edges");
  const std::size_t nbins = bin_edges.size() - 1;
  std::vector<std::vector<double>> bins(nbins);
  for (std::size_t g = 0; g < per_gene_pearson.size(); ++g) {
    double r = per_gene_pearson[g];
    if (r < bin_edges.front() || r > bin_edges.back()) continue;
    std::size_t bi =
        (r >= bin_edges[nbins])
            ? nbins - 1
            : static_cast<std::size_t>(
                  std::upper_bound(bin_edges.begin(), bin_edges.end(), r) -
                  bin_edges.begin()) -
                  1;
    bins[bi].push_back(per_gene_mean_fc[g]);
  }
  std::vector<BinStats> out(nbins);
  for (std::size_t i = 0; i < nbins; ++i) {
    BinStats& s = out[i];
    s.count = bins[i].size();
    if (s.count == 0) continue;  // flagged via empty, not fatal
    s.empty = false;
    s.q1 = percentile(bins[i], 0.25);
    s.median = percentile(bins[i], 0.50);
    s.q3 = percentile(bins[i], 0.75);
    s.mean = std::accumulate(bins[i].begin(), bins[i].end(), 0.0) /
             static_cast<double>(s.count);
  }
  return out;
}

}  // namespace histcode
