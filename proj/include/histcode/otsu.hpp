#pragma once

#include <array>
#include <cstdint>

#include "histcode/errors.hpp"

namespace histcode {

namespace detail {

/// Exact comparison of a1^2/b1 vs a2^2/b2 for nonnegative integers with
/// b > 0, via 128-bit quotient/remainder. Returns -1, 0, or +1.
inline int cmp_sq_ratio(unsigned __int128 a1, unsigned __int128 b1,
                        unsigned __int128 a2, unsigned __int128 b2) {
  unsigned __int128 s1 = a1 * a1, s2 = a2 * a2;
  unsigned __int128 q1 = s1 / b1, r1 = s1 % b1;
  unsigned __int128 q2 = s2 / b2, r2 = s2 % b2;
  if (q1 != q2) return q1 < q2 ? -1 : 1;
  // Remainders are < b <= 2^46 for any realistic pixel count, so the cross
  // products below stay within 128 bits.
  unsigned __int128 lhs = r1 * b2, rhs = r2 * b1;
  if (lhs != rhs) return lhs < rhs ? -1 : 1;
  return 0;
}

}  // namespace detail

/// Otsu's threshold over a 256-bin histogram.
///
/// Candidate t splits intensities into [0,t] and (t,255]; the returned t
/// maximizes the between-class variance. The comparison is done in exact
/// integer arithmetic on the equivalent fraction
///   (S(t)*N - S_T*C(t))^2 / (C(t)*(N-C(t)))
/// where C/S are cumulative count/intensity sums, so ties are exact; the
/// tie range [lo,hi] of maximizing candidates resolves to (lo+hi)/2.
inline int otsu_threshold(const std::array<std::uint64_t, 256>& hist) {
  int nonzero = 0;
  for (int i = 0; i < 256; ++i)
    if (hist[i] > 0) ++nonzero;
  if (nonzero < 2)
    throw DegenerateHistogram("otsu needs at least two occupied bins");

  std::uint64_t total = 0, total_sum = 0;
  for (int i = 0; i < 256; ++i) {
    total += hist[i];
    total_sum += hist[i] * static_cast<std::uint64_t>(i);
  }

  std::uint64_t c = 0, s = 0;
  bool have_best = false;
  unsigned __int128 best_a = 0, best_b = 1;
  int best_lo = 0, best_hi = 0;
  for (int t = 0; t < 256; ++t) {
    c += hist[t];
    s += hist[t] * static_cast<std::uint64_t>(t);
    if (c == 0 || c == total) continue;  // one class empty
    // a = |S(t)*N - S_T*C(t)|, b = C(t)*(N-C(t))
    unsigned __int128 lhs = static_cast<unsigned __int128>(s) * total;
    unsigned __int128 rhs = static_cast<unsigned __int128>(total_sum) * c;
    unsigned __int128 a = lhs > rhs ? lhs - rhs : rhs - lhs;
    unsigned __int128 b = static_cast<unsigned __int128>(c) * (total - c);
    int cmp = have_best ? detail::cmp_sq_ratio(a, b, best_a, best_b) : 1;
    if (cmp > 0) {
      have_best = true;
      best_a = a;
      best_b = b;
      best_lo = best_hi = t;
    } else if (cmp == 0) {
      best_hi = t;
    }
  }
  return (best_lo + best_hi) / 2;
}

}  // namespace histcode
