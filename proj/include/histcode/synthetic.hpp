#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "histcode/errors.hpp"
#include "histcode/image.hpp"
#include "histcode/labels.hpp"
#include "histcode/png_io.hpp"
#include "histcode/rng.hpp"

namespace histcode {

/// Synthetic slide corpus with ground truth. Each patient contributes one
/// normal and one tumor slide. Tumor slides carry a contiguous tumor region
/// of known pixel fraction; both classes carry "stroma" distractor patches
/// and a per-slide stain tint, which is what separates the pooling
/// strategies (a single dark patch must not be enough to call tumor).
struct SynthConfig {
  int n_patients = 5;
  int slide_px = 1024;
  int margin_px = 64;
  double tumor_frac_lo = 0.30;
  double tumor_frac_hi = 0.70;
  int distractor_lo = 0;
  int distractor_hi = 3;
  double tint = 0.06;      // per-channel multiplicative stain nuisance
  int n_fc_genes = 20;     // G_FC ramp used by the fold-change bin analysis
  double sig_noise = 0.1;  // sigma of the G_SIG target noise
  std::uint64_t seed = 0;
};

struct SynthSlideInfo {
  std::string slide_id;
  std::string patient_id;
  int label = SlideLabel::kNormal;
  double tumor_fraction = 0;  // realized, over the full slide area
};

namespace synth {

inline double pixel_noise(std::uint64_t seed, int x, int y) {
  std::uint64_t h = mix64(seed ^ mix64((static_cast<std::uint64_t>(
                                            static_cast<std::uint32_t>(x))
                                        << 32) |
                                       static_cast<std::uint32_t>(y)));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

struct Ellipse {
  double cx, cy, rx, ry, cos_a, sin_a;

  bool contains(double x, double y) const {
    double dx = x - cx, dy = y - cy;
    double u = (dx * cos_a + dy * sin_a) / rx;
    double v = (-dx * sin_a + dy * cos_a) / ry;
    return u * u + v * v <= 1.0;
  }
};

inline Ellipse random_ellipse(Rng& rng, int lo, int hi, double r_lo,
                              double r_hi) {
  std::uniform_real_distribution<double> pos(lo, hi);
  std::uniform_real_distribution<double> rad(r_lo, r_hi);
  std::uniform_real_distribution<double> ang(0.0, 3.141592653589793);
  double a = ang(rng);
  return {pos(rng), pos(rng), rad(rng), rad(rng), std::cos(a), std::sin(a)};
}

inline void paint_ellipse(std::vector<std::uint8_t>& grid, int w, int h,
                          const Ellipse& e, std::uint8_t value,
                          std::int64_t* newly_set = nullptr) {
  int x0 = std::max(0, static_cast<int>(e.cx - std::max(e.rx, e.ry)) - 1);
  int x1 = std::min(w, static_cast<int>(e.cx + std::max(e.rx, e.ry)) + 2);
  int y0 = std::max(0, static_cast<int>(e.cy - std::max(e.rx, e.ry)) - 1);
  int y1 = std::min(h, static_cast<int>(e.cy + std::max(e.rx, e.ry)) + 2);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      if (!e.contains(x + 0.5, y + 0.5)) continue;
      std::uint8_t& cell = grid[static_cast<std::size_t>(y) * w + x];
      if (cell != value) {
        if (newly_set && cell == 0) ++(*newly_set);
        cell = value;
      }
    }
}

}  // namespace synth

struct SynthSlide {
  ImageRGB image;
  ImageGray tumor_mask;  // 255 tumor, 0 elsewhere
  double tumor_fraction = 0;
};

/// Renders one slide. Region codes: 0 plain tissue, 1 distractor, 2 tumor.
inline SynthSlide make_synth_slide(const SynthConfig& cfg, bool tumor,
                                   double tumor_frac_target,
                                   std::uint64_t slide_seed) {
  const int n = cfg.slide_px;
  const int m = cfg.margin_px;
  if (n <= 2 * m) throw ConfigError("margin leaves no tissue area");
  Rng rng = make_rng(slide_seed, "synth_slide");

  std::vector<std::uint8_t> region(static_cast<std::size_t>(n) * n, 0);
  // distractor patches first; tumor paints over them
  std::uniform_int_distribution<int> nd(cfg.distractor_lo, cfg.distractor_hi);
  const int n_distract = nd(rng);
  for (int i = 0; i < n_distract; ++i)
    synth::paint_ellipse(region, n, n,
                         synth::random_ellipse(rng, m, n - m, 0.05 * n,
                                               0.11 * n),
                         1);
  std::int64_t tumor_px = 0;
  if (tumor) {
    const auto target = static_cast<std::int64_t>(
        tumor_frac_target * static_cast<double>(n) * n);
    int guard = 0;
    while (tumor_px < target && ++guard < 4096) {
      std::int64_t added = 0;
      auto e = synth::random_ellipse(rng, m, n - m, 0.06 * n, 0.14 * n);
      // count only cells flipping to tumor
      int x0 = std::max(0, static_cast<int>(e.cx - std::max(e.rx, e.ry)) - 1);
      int x1 = std::min(n, static_cast<int>(e.cx + std::max(e.rx, e.ry)) + 2);
      int y0 = std::max(0, static_cast<int>(e.cy - std::max(e.rx, e.ry)) - 1);
      int y1 = std::min(n, static_cast<int>(e.cy + std::max(e.rx, e.ry)) + 2);
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
          if (!e.contains(x + 0.5, y + 0.5)) continue;
          std::uint8_t& cell = region[static_cast<std::size_t>(y) * n + x];
          if (cell != 2) {
            cell = 2;
            ++added;
          }
        }
      tumor_px += added;
    }
  }

  // per-slide nuisances
  std::uniform_real_distribution<double> tint_d(1.0 - cfg.tint,
                                                1.0 + cfg.tint);
  const double tint[3] = {tint_d(rng), tint_d(rng), tint_d(rng)};
  std::uniform_real_distribution<double> phase(0.0, 6.283185307179586);
  const double ph1 = phase(rng), ph2 = phase(rng);
  const std::uint64_t noise_seed = derive_seed(slide_seed, "texture");

  SynthSlide out;
  out.image = ImageRGB(n, n, 255);
  out.tumor_mask = ImageGray(n, n, 0);
  out.tumor_fraction =
      static_cast<double>(tumor_px) / (static_cast<double>(n) * n);

  constexpr double kTissue[3] = {228, 184, 202};
  constexpr double kTumor[3] = {150, 70, 165};
  constexpr double kDistract[3] = {110, 120, 150};
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      if (x < m || y < m || x >= n - m || y >= n - m) continue;  // margin
      const std::uint8_t code = region[static_cast<std::size_t>(y) * n + x];
      const double* base = code == 2 ? kTumor : code == 1 ? kDistract
                                                          : kTissue;
      double smooth = 6.0 * std::sin(0.019 * x + ph1) *
                      std::cos(0.023 * y + ph2);
      double u = synth::pixel_noise(noise_seed, x, y);
      // dense dark speckle for tumor and distractor, sparse for tissue
      double speckle = 1.0;
      if (code != 0) {
        double v = synth::pixel_noise(noise_seed ^ 0x5eed5eedULL, x / 2,
                                      y / 2);
        if (v < 0.35) speckle = 0.55;
      } else if (u < 0.03) {
        speckle = 0.82;
      }
      std::uint8_t* p = out.image.px(x, y);
      for (int c = 0; c < 3; ++c) {
        double v = (base[c] + smooth + 8.0 * (u - 0.5)) * speckle * tint[c];
        p[c] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0,
                                                                255.0)));
      }
      if (code == 2) out.tumor_mask.at(x, y) = 255;
    }
  }
  return out;
}

struct SynthDataset {
  std::vector<SynthSlideInfo> slides;
  std::vector<std::string> genes;
};

/// Writes the full corpus: slides/, masks/, labels.csv, expression.tsv and
/// genes.txt under `dir`. Deterministic per seed, byte for byte.
inline SynthDataset write_synth_dataset(const SynthConfig& cfg,
                                        const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "slides");
  fs::create_directories(fs::path(dir) / "masks");

  SynthDataset ds;
  std::vector<LabelRow> labels;
  Rng rng = make_rng(cfg.seed, "synth_dataset");
  std::uniform_real_distribution<double> frac_d(cfg.tumor_frac_lo,
                                                cfg.tumor_frac_hi);

  std::string expr;
  expr += "patient_id\tgene\ttumor_fpkm_uq\tnormal_fpkm_uq\n";
  char buf[512];

  auto add_expr = [&](const std::string& patient, const std::string& gene,
                      double tumor_v, double normal_v) {
    std::snprintf(buf, sizeof(buf), "%s\t%s\t%.17g\t%.17g\n", patient.c_str(),
                  gene.c_str(), tumor_v, normal_v);
    expr += buf;
  };

  for (int p = 0; p < cfg.n_patients; ++p) {
    std::snprintf(buf, sizeof(buf), "P%04d", p);
    const std::string patient = buf;
    const double frac_target = frac_d(rng);
    std::normal_distribution<double> gauss(0.0, 1.0);

    for (int which = 0; which < 2; ++which) {
      const bool tumor = which == 1;
      const std::string slide_id = patient + (tumor ? "_T0" : "_N0");
      const std::uint64_t slide_seed =
          derive_seed(cfg.seed, "slide_" + slide_id);
      SynthSlide s = make_synth_slide(cfg, tumor, frac_target, slide_seed);
      write_png((fs::path(dir) / "slides" / (slide_id + ".png")).string(),
                s.image);
      write_png((fs::path(dir) / "masks" / (slide_id + "_mask.png")).string(),
                s.tumor_mask);
      labels.push_back({slide_id, patient,
                        tumor ? SlideLabel::kTumor : SlideLabel::kNormal});
      ds.slides.push_back({slide_id, patient,
                           tumor ? SlideLabel::kTumor : SlideLabel::kNormal,
                           s.tumor_fraction});
      if (!tumor) continue;

      // expression ground truth, all a function of the realized fraction
      const double f = s.tumor_fraction;
      add_expr(patient, "G_FRAC", 9.0 * f, 1.0);
      {
        double t = 0.2 + 2.0 * f + cfg.sig_noise * gauss(rng);
        add_expr(patient, "G_SIG", std::pow(10.0, t) - 1.0, 1.0);
      }
      {
        double t = std::abs(0.8 + 0.3 * gauss(rng));
        add_expr(patient, "G_NOISE", std::pow(10.0, t) - 1.0, 1.0);
      }
      for (int g = 0; g < cfg.n_fc_genes; ++g) {
        // signal strength and expression level both ramp with g, so
        // prediction accuracy and fold change rise together
        double strength = cfg.n_fc_genes > 1
                              ? static_cast<double>(g) / (cfg.n_fc_genes - 1)
                              : 1.0;
        double sigma = 0.02 + 0.25 * (1.0 - strength);
        double t = 0.2 + 0.12 * g + 2.0 * strength * f + sigma * gauss(rng);
        std::snprintf(buf, sizeof(buf), "G_FC%02d", g);
        add_expr(patient, buf, std::pow(10.0, t) - 1.0, 1.0);
      }
    }
  }

  write_labels_csv((fs::path(dir) / "labels.csv").string(), labels);
  {
    std::ofstream out(fs::path(dir) / "expression.tsv", std::ios::binary);
    out << expr;
    if (!out) throw IoError("failed writing expression.tsv");
  }
  {
    ds.genes = {"G_FRAC", "G_SIG", "G_NOISE"};
    for (int g = 0; g < cfg.n_fc_genes; ++g) {
      std::snprintf(buf, sizeof(buf), "G_FC%02d", g);
      ds.genes.push_back(buf);
    }
    std::ofstream out(fs::path(dir) / "genes.txt", std::ios::binary);
    for (const auto& g : ds.genes) out << g << '\n';
    if (!out) throw IoError("failed writing genes.txt");
  }
  return ds;
}

}  // namespace histcode
