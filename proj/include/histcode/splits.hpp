#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "histcode/errors.hpp"
#include "histcode/rng.hpp"

namespace histcode {

/// One cross-validation fold. Membership is decided per patient, never per
/// slide, so matched slides of one patient can never straddle subsets.
struct SplitPlan {
  int fold_id = 0;
  std::vector<std::string> train;  // each sorted ascending
  std::vector<std::string> val;
  std::vector<std::string> test;
};

/// k-fold patient-level splits. Patients are shuffled once per seed and
/// dealt round-robin into 2k groups; fold i tests on group 2i, validates on
/// group 2i+1 and trains on the rest. For k=5 this realizes the 80/10/10
/// layout, and every patient is held out (test or val) exactly once across
/// the k folds.
inline std::vector<SplitPlan> patient_split(
    std::vector<std::string> patients, int k, std::uint64_t seed,
    std::array<double, 3> ratios = {0.8, 0.1, 0.1}) {
  if (k < 1) throw ConfigError("patient_split: k must be positive");
  {
    std::vector<std::string> sorted = patients;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw ConfigError("patient_split: duplicate patient id");
  }
  double want = 1.0 / (2.0 * k);
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9 ||
      std::abs(ratios[1] - want) > 1e-9 || std::abs(ratios[2] - want) > 1e-9)
    throw ConfigError("patient_split: ratios must be (1-1/k, 1/2k, 1/2k)");
  const std::size_t groups = 2 * static_cast<std::size_t>(k);
  if (patients.size() < groups)
    throw TooFewPatients("patient_split: need at least 2k patients");

  // canonical order first so the shuffle depends only on the seed, not on
  // caller-side ordering of the same id set
  std::sort(patients.begin(), patients.end());
  Rng rng = make_rng(seed, "patient_split");
  std::shuffle(patients.begin(), patients.end(), rng);

  std::vector<std::vector<std::string>> group(groups);
  for (std::size_t i = 0; i < patients.size(); ++i)
    group[i % groups].push_back(patients[i]);

  std::vector<SplitPlan> plans(static_cast<std::size_t>(k));
  for (int f = 0; f < k; ++f) {
    SplitPlan& plan = plans[static_cast<std::size_t>(f)];
    plan.fold_id = f;
    plan.test = group[static_cast<std::size_t>(2 * f)];
    plan.val = group[static_cast<std::size_t>(2 * f + 1)];
    for (std::size_t g = 0; g < groups; ++g) {
      if (g == static_cast<std::size_t>(2 * f) ||
          g == static_cast<std::size_t>(2 * f + 1))
        continue;
      plan.train.insert(plan.train.end(), group[g].begin(), group[g].end());
    }
    std::sort(plan.train.begin(), plan.train.end());
    std::sort(plan.val.begin(), plan.val.end());
    std::sort(plan.test.begin(), plan.test.end());
  }
  return plans;
}

}  // namespace histcode
