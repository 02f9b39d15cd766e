#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "histcode/artifacts.hpp"
#include "histcode/checkpoint.hpp"
#include "histcode/config.hpp"
#include "histcode/contrastive.hpp"
#include "histcode/diffexpr.hpp"
#include "histcode/errors.hpp"
#include "histcode/heatmap.hpp"
#include "histcode/labels.hpp"
#include "histcode/manifest.hpp"
#include "histcode/metrics.hpp"
#include "histcode/mil.hpp"
#include "histcode/nn/encoder.hpp"
#include "histcode/parallel.hpp"
#include "histcode/png_io.hpp"
#include "histcode/pretrain.hpp"
#include "histcode/splits.hpp"
#include "histcode/stain.hpp"
#include "histcode/stats.hpp"
#include "histcode/synthetic.hpp"
#include "histcode/tiling.hpp"

namespace histcode {

/// Training scalar for the staged pipeline. Double stays available for the
/// numerics tests; the pipeline itself runs single precision.
using PipeScalar = float;

/// Resolved invocation options. Seed precedence (env over flag over config)
/// is the caller's job; stages only see the final value.
struct RunOptions {
  std::uint64_t seed = 0;
  int workers = 1;
  bool deterministic = false;
};

namespace pipe {

inline const std::set<std::string>& config_keys() {
  static const std::set<std::string> keys = {
      "paths.data", "paths.out", "paths.reference_tile",
      "seed", "workers",
      "synth.n_patients", "synth.slide_px", "synth.margin_px",
      "synth.tumor_frac_lo", "synth.tumor_frac_hi", "synth.distractor_lo",
      "synth.distractor_hi", "synth.tint", "synth.n_fc_genes",
      "synth.sig_noise",
      "tile.tile_px", "tile.tile_um", "tile.mpp", "tile.downsample",
      "tile.tissue_guard", "tile.min_tissue_px",
      "pretrain.tau", "pretrain.lr", "pretrain.momentum",
      "pretrain.weight_decay", "pretrain.bank_lr", "pretrain.bank_size",
      "pretrain.bank_fraction", "pretrain.batch", "pretrain.epochs",
      "pretrain.cache_slides",
      "augment.scale_lo", "augment.scale_hi", "augment.jitter",
      "augment.p_gray", "augment.p_blur", "augment.sigma_lo",
      "augment.sigma_hi",
      "mil.attention_dim", "mil.lr", "mil.momentum", "mil.weight_decay",
      "mil.max_epochs", "mil.patience", "mil.pools",
      "de.l", "de.strict_l", "de.mode", "de.threshold", "de.epsilon",
      "de.rcond", "de.gd_epochs",
      "eval.k", "eval.fc_bins",
      "heatmap.downsample", "heatmap.gallery_n", "heatmap.slides",
      "heatmap.genes",
  };
  return keys;
}

inline void check_config(const Config& cfg) {
  cfg.validate_keys(config_keys());
}

/// Canonical config text embedded into checkpoints as the config snapshot.
inline std::string config_text(const Config& cfg) {
  std::string out;
  for (const auto& [k, v] : cfg.entries()) out += k + " = " + v + "\n";
  return out;
}

namespace fs = std::filesystem;

inline std::string data_dir(const Config& cfg) {
  return cfg.require_string("paths.data");
}
inline std::string out_dir(const Config& cfg) {
  return cfg.require_string("paths.out");
}
inline std::string slide_png(const std::string& data,
                             const std::string& slide_id) {
  return (fs::path(data) / "slides" / (slide_id + ".png")).string();
}
inline std::string tiles_dir(const Config& cfg) {
  return (fs::path(out_dir(cfg)) / "tiles").string();
}
inline std::string manifest_file(const Config& cfg,
                                 const std::string& slide_id) {
  return (fs::path(tiles_dir(cfg)) / (slide_id + ".h5")).string();
}
inline std::string pretrain_dir(const Config& cfg) {
  return (fs::path(out_dir(cfg)) / "pretrain").string();
}
inline std::string bags_dir(const Config& cfg) {
  return (fs::path(out_dir(cfg)) / "bags").string();
}
inline std::string diag_dir(const Config& cfg) {
  return (fs::path(out_dir(cfg)) / "diag").string();
}
inline std::string de_dir(const Config& cfg) {
  return (fs::path(out_dir(cfg)) / "de").string();
}
inline std::string eval_dir(const Config& cfg) {
  return (fs::path(out_dir(cfg)) / "eval").string();
}
inline std::string heatmap_dir(const Config& cfg) {
  return (fs::path(out_dir(cfg)) / "heatmap").string();
}

inline std::map<std::string, std::string> hash_all(
    const std::vector<std::string>& files) {
  std::map<std::string, std::string> out;
  for (const auto& f : files) out[f] = hash_file(f);
  return out;
}

inline std::vector<LabelRow> sorted_labels(const std::string& data) {
  const std::string path = (fs::path(data) / "labels.csv").string();
  require_artifact(path);
  auto rows = load_labels_csv(path);
  std::sort(rows.begin(), rows.end(),
            [](const LabelRow& a, const LabelRow& b) {
              return a.slide_id < b.slide_id;
            });
  return rows;
}

inline std::vector<std::string> unique_patients(
    const std::vector<LabelRow>& rows) {
  std::set<std::string> s;
  for (const auto& r : rows) s.insert(r.patient_id);
  return {s.begin(), s.end()};
}

/// Pool modes requested for the diagnosis stage; the first one is the
/// primary model whose attention feeds the DE features and heatmaps.
inline std::vector<PoolMode> pool_list(const Config& cfg) {
  std::string text = cfg.get_string("mil.pools", "gated");
  std::vector<PoolMode> pools;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item.empty()) continue;
    if (item == "gated")
      pools.push_back(PoolMode::kGated);
    else if (item == "mean")
      pools.push_back(PoolMode::kMean);
    else if (item == "max")
      pools.push_back(PoolMode::kMax);
    else
      throw ConfigError("mil.pools: unknown pool mode '" + item + "'");
  }
  if (pools.empty()) throw ConfigError("mil.pools lists no pool mode");
  for (std::size_t i = 0; i < pools.size(); ++i)
    for (std::size_t j = i + 1; j < pools.size(); ++j)
      if (pools[i] == pools[j])
        throw ConfigError("mil.pools repeats a pool mode");
  return pools;
}

inline std::vector<std::string> split_csv_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline ChannelStats reference_stats(const Config& cfg) {
  if (cfg.has("paths.reference_tile")) {
    const std::string p = cfg.require_string("paths.reference_tile");
    require_artifact(p);
    return compute_stain_stats(read_png(p));
  }
  return default_reference_stats();
}

/// FIFO cache of decoded slides; tile loads then crop + stain-normalize.
/// Safe for concurrent use; results do not depend on thread interleaving.
class SlideCache {
 public:
  SlideCache(std::vector<std::string> paths, std::size_t cap)
      : paths_(std::move(paths)), cap_(std::max<std::size_t>(1, cap)) {}

  std::shared_ptr<const ImageRGB> get(std::size_t idx) {
    std::lock_guard<std::mutex> lock(mu_);
    for (auto& e : fifo_)
      if (e.first == idx) return e.second;
    auto img = std::make_shared<const ImageRGB>(read_png(paths_[idx]));
    fifo_.emplace_back(idx, img);
    if (fifo_.size() > cap_) fifo_.pop_front();
    return img;
  }

 private:
  std::vector<std::string> paths_;
  std::size_t cap_;
  std::mutex mu_;
  std::list<std::pair<std::size_t, std::shared_ptr<const ImageRGB>>> fifo_;
};

inline std::function<ImageRGB(std::size_t, const TileCoord&)> tile_loader(
    std::shared_ptr<SlideCache> cache, int tile_px, ChannelStats ref) {
  return [cache = std::move(cache), tile_px, ref](std::size_t s,
                                                  const TileCoord& c) {
    std::shared_ptr<const ImageRGB> slide = cache->get(s);
    return normalize_stain(crop(*slide, c.x, c.y, tile_px, tile_px), ref)
        .tile;
  };
}

/// Manifests of every labeled slide, in slide-id order.
inline std::vector<TileManifest> load_all_manifests(
    const Config& cfg, const std::vector<LabelRow>& rows) {
  std::vector<TileManifest> ms;
  ms.reserve(rows.size());
  for (const auto& r : rows) {
    const std::string p = manifest_file(cfg, r.slide_id);
    require_artifact(p);
    ms.push_back(read_manifest(p));
  }
  return ms;
}

inline void write_text_file(const std::string& path,
                            const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IoError("failed writing " + path);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void append_num(std::string& s, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  s += buf;
}

/// Attention map CSV, rows aligned with the manifest coordinate order.
inline void write_attention_csv(const std::string& path,
                                const AttentionMap<PipeScalar>& map) {
  std::string text = "x,y,attention\n";
  for (std::size_t i = 0; i < map.coords.size(); ++i) {
    text += std::to_string(map.coords[i].x) + "," +
            std::to_string(map.coords[i].y) + ",";
    append_num(text, static_cast<double>(map.attention[i]));
    text += "\n";
  }
  write_text_file(path, text);
}

inline std::vector<std::string> parse_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.push_back("");
  return cells;
}

inline double parse_num(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw SchemaMismatch("bad number '" + s + "' in " + what);
  }
}

/// Reads an attention CSV back and checks it is aligned with `coords`.
inline std::vector<double> read_attention_csv(
    const std::string& path, const std::vector<TileCoord>& coords) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open attention map: " + path);
  std::string line;
  if (!std::getline(in, line)) throw SchemaMismatch("empty file: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "x,y,attention")
    throw SchemaMismatch("bad attention header in " + path);
  std::vector<double> a;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = parse_csv_line(line);
    if (cells.size() != 3)
      throw SchemaMismatch("bad attention row in " + path);
    const std::size_t i = a.size();
    if (i >= coords.size())
      throw SchemaMismatch("attention map longer than manifest: " + path);
    if (parse_num(cells[0], path) != coords[i].x ||
        parse_num(cells[1], path) != coords[i].y)
      throw SchemaMismatch("attention map misaligned with manifest: " + path);
    a.push_back(parse_num(cells[2], path));
  }
  if (a.size() != coords.size())
    throw SchemaMismatch("attention map shorter than manifest: " + path);
  return a;
}

/// Checks that an upstream stage directory was produced by this very
/// config; refuses stale or mixed-provenance inputs.
inline void require_same_hash(const std::string& dir,
                              const std::string& want_hash) {
  Provenance p;
  if (!load_provenance(dir, &p))
    throw MissingUpstreamArtifact("no provenance record in " + dir);
  if (p.config_hash != want_hash)
    throw MissingUpstreamArtifact(
        dir + " was produced under config hash " + p.config_hash +
        ", current config hashes to " + want_hash + "; rerun that stage");
}

inline std::size_t effective_l(std::size_t l, std::size_t bag_size,
                               bool strict) {
  if (2 * l <= bag_size) return l;
  if (strict) throw BagTooSmall("bag smaller than 2l tiles");
  const std::size_t shrunk = bag_size / 2;
  if (shrunk == 0) throw BagTooSmall("bag needs at least 2 tiles");
  return shrunk;
}

}  // namespace pipe

// ---- synth ----

inline bool run_synth(const Config& cfg, const RunOptions& opt) {
  pipe::check_config(cfg);
  const std::string data = pipe::data_dir(cfg);
  std::filesystem::create_directories(data);

  Provenance want{"synth", cfg.semantic_hash(), opt.seed, {}, {}};
  if (stage_is_current(data, want)) return false;

  SynthConfig sc;
  sc.n_patients = static_cast<int>(cfg.get_int("synth.n_patients", 5));
  sc.slide_px = static_cast<int>(cfg.get_int("synth.slide_px", 1024));
  sc.margin_px = static_cast<int>(cfg.get_int("synth.margin_px", 64));
  sc.tumor_frac_lo = cfg.get_double("synth.tumor_frac_lo", 0.30);
  sc.tumor_frac_hi = cfg.get_double("synth.tumor_frac_hi", 0.70);
  sc.distractor_lo = static_cast<int>(cfg.get_int("synth.distractor_lo", 0));
  sc.distractor_hi = static_cast<int>(cfg.get_int("synth.distractor_hi", 3));
  sc.tint = cfg.get_double("synth.tint", 0.06);
  sc.n_fc_genes = static_cast<int>(cfg.get_int("synth.n_fc_genes", 20));
  sc.sig_noise = cfg.get_double("synth.sig_noise", 0.1);
  sc.seed = opt.seed;
  if (sc.n_patients < 1) throw ConfigError("synth.n_patients must be >= 1");
  if (!(sc.tumor_frac_lo > 0 && sc.tumor_frac_hi <= 1 &&
        sc.tumor_frac_lo <= sc.tumor_frac_hi))
    throw ConfigError("synth tumor fraction range must be in (0,1]");

  SynthDataset ds = write_synth_dataset(sc, data);
  want.outputs = {"labels.csv", "expression.tsv", "genes.txt"};
  for (const auto& s : ds.slides) {
    want.outputs.push_back("slides/" + s.slide_id + ".png");
    want.outputs.push_back("masks/" + s.slide_id + "_mask.png");
  }
  write_provenance(data, want);
  return true;
}

// ---- tile ----

inline bool run_tile(const Config& cfg, const RunOptions& opt) {
  pipe::check_config(cfg);
  const std::string data = pipe::data_dir(cfg);
  const auto rows = pipe::sorted_labels(data);
  if (rows.empty()) throw SchemaMismatch("labels.csv lists no slides");

  std::vector<std::string> inputs = {
      (pipe::fs::path(data) / "labels.csv").string()};
  for (const auto& r : rows) {
    const std::string p = pipe::slide_png(data, r.slide_id);
    require_artifact(p);
    inputs.push_back(p);
  }

  const std::string dir = pipe::tiles_dir(cfg);
  std::filesystem::create_directories(dir);
  Provenance want{"tile", cfg.semantic_hash(), opt.seed,
                  pipe::hash_all(inputs), {}};
  if (stage_is_current(dir, want)) return false;

  const int tile_px = static_cast<int>(cfg.get_int("tile.tile_px", 256));
  const int ds = static_cast<int>(cfg.get_int("tile.downsample", 32));
  const int guard = static_cast<int>(cfg.get_int("tile.tissue_guard", 8));
  const std::int64_t min_px = cfg.get_int("tile.min_tissue_px", 100);
  const double tile_um = cfg.get_double("tile.tile_um", 128.0);
  const double mpp = cfg.get_double("tile.mpp", 0.5);
  if (tile_px < 1) throw ConfigError("tile.tile_px must be positive");
  if (ds < 1) throw ConfigError("tile.downsample must be >= 1");

  std::vector<std::string> outs(rows.size());
  parallel_for(rows.size(), opt.workers, [&](std::size_t i) {
    const LabelRow& r = rows[i];
    ImageRGB slide = read_png(pipe::slide_png(data, r.slide_id));
    TileManifest m;
    m.slide_id = r.slide_id;
    m.patient_id = r.patient_id;
    m.label = r.label;
    m.width = slide.width;
    m.height = slide.height;
    m.tile_px = tile_px;
    m.tile_um = tile_um;
    m.mpp = mpp;
    m.coords = filter_tiles(tessellate(slide.width, slide.height, tile_px),
                            detect_tissue(slide, ds, guard), tile_px, min_px);
    m.sort_coords();
    write_manifest(m, pipe::manifest_file(cfg, r.slide_id),
                   want.config_hash);
    outs[i] = r.slide_id + ".h5";
  });
  want.outputs = outs;
  write_provenance(dir, want);
  return true;
}

// ---- pretrain ----

namespace pipe {

struct PoolSetup {
  TilePool pool;
  std::shared_ptr<SlideCache> cache;
  int tile_px = 0;
};

/// Tile pool over every slide with at least one tissue tile.
inline PoolSetup make_pool(const Config& cfg,
                           const std::vector<LabelRow>& rows,
                           const std::vector<TileManifest>& manifests) {
  const std::string data = data_dir(cfg);
  PoolSetup s;
  std::vector<std::string> paths;
  for (std::size_t i = 0; i < manifests.size(); ++i) {
    const TileManifest& m = manifests[i];
    if (m.coords.empty()) continue;
    if (s.tile_px == 0)
      s.tile_px = m.tile_px;
    else if (s.tile_px != m.tile_px)
      throw SchemaMismatch("manifests disagree on tile_px");
    s.pool.slide_ids.push_back(m.slide_id);
    s.pool.coords.push_back(m.coords);
    paths.push_back(slide_png(data, rows[i].slide_id));
  }
  if (s.pool.slide_ids.empty())
    throw InsufficientTiles("no slide has tissue tiles");
  const std::size_t cap = static_cast<std::size_t>(
      cfg.get_int("pretrain.cache_slides", 16));
  s.cache = std::make_shared<SlideCache>(std::move(paths), cap);
  s.pool.load = tile_loader(s.cache, s.tile_px, reference_stats(cfg));
  return s;
}

}  // namespace pipe

inline bool run_pretrain(const Config& cfg, const RunOptions& opt) {
  pipe::check_config(cfg);
  const std::string data = pipe::data_dir(cfg);
  const auto rows = pipe::sorted_labels(data);

  std::vector<std::string> inputs;
  for (const auto& r : rows) {
    const std::string mp = pipe::manifest_file(cfg, r.slide_id);
    require_artifact(mp);
    inputs.push_back(mp);
    inputs.push_back(pipe::slide_png(data, r.slide_id));
  }

  const std::string dir = pipe::pretrain_dir(cfg);
  std::filesystem::create_directories(dir);
  Provenance want{"pretrain", cfg.semantic_hash(), opt.seed,
                  pipe::hash_all(inputs), {}};
  if (stage_is_current(dir, want)) return false;

  auto manifests = pipe::load_all_manifests(cfg, rows);
  pipe::PoolSetup setup = pipe::make_pool(cfg, rows, manifests);

  PretrainConfig pc;
  pc.tau = cfg.get_double("pretrain.tau", 0.12);
  pc.lr = cfg.get_double("pretrain.lr", 0.03);
  pc.momentum = cfg.get_double("pretrain.momentum", 0.9);
  pc.weight_decay = cfg.get_double("pretrain.weight_decay", 1e-4);
  pc.bank_lr = cfg.get_double("pretrain.bank_lr", 3.0);
  pc.bank_size = static_cast<int>(cfg.get_int("pretrain.bank_size", 256));
  pc.bank_fraction = cfg.get_double("pretrain.bank_fraction", 0.1);
  pc.batch = static_cast<int>(cfg.get_int("pretrain.batch", 64));
  pc.epochs = static_cast<int>(cfg.get_int("pretrain.epochs", 10));
  pc.seed = opt.seed;
  pc.workers = opt.workers;
  pc.augment.scale_lo = cfg.get_double("augment.scale_lo", 0.2);
  pc.augment.scale_hi = cfg.get_double("augment.scale_hi", 1.0);
  pc.augment.jitter = cfg.get_double("augment.jitter", 0.4);
  pc.augment.p_gray = cfg.get_double("augment.p_gray", 0.2);
  pc.augment.p_blur = cfg.get_double("augment.p_blur", 0.5);
  pc.augment.sigma_lo = cfg.get_double("augment.sigma_lo", 0.1);
  pc.augment.sigma_hi = cfg.get_double("augment.sigma_hi", 2.0);
  if (pc.epochs < 1) throw ConfigError("pretrain.epochs must be >= 1");
  if (pc.batch < 1) throw ConfigError("pretrain.batch must be >= 1");
  if (pc.bank_size < 1) throw ConfigError("pretrain.bank_size must be >= 1");

  PretrainResult<PipeScalar> result = pretrain<PipeScalar>(pc, setup.pool);

  const std::int64_t final_step =
      result.trace.empty() ? 0 : result.trace.back().step + 1;
  save_encoder_checkpoint(
      (pipe::fs::path(dir) / "encoder.h5").string(), result.encoder,
      &result.bank, final_step, opt.seed, want.config_hash,
      pipe::config_text(cfg));

  std::string trace = "step,epoch,loss\n";
  for (const StepLoss& s : result.trace) {
    trace += std::to_string(s.step) + "," + std::to_string(s.epoch) + ",";
    pipe::append_num(trace, s.loss);
    trace += "\n";
  }
  pipe::write_text_file((pipe::fs::path(dir) / "loss.csv").string(), trace);

  want.outputs = {"encoder.h5", "loss.csv"};
  write_provenance(dir, want);
  return true;
}

// ---- bags + diagnosis training ----

namespace pipe {

/// Embeds every tile of every slide with the frozen encoder. Bags keep the
/// manifest coordinate order.
inline std::vector<SlideBag<PipeScalar>> compute_bags(
    const Config& cfg, const std::vector<LabelRow>& rows,
    const std::vector<TileManifest>& manifests,
    nn::Encoder<PipeScalar>& enc, int workers) {
  const std::string data = data_dir(cfg);
  PoolSetup setup = make_pool(cfg, rows, manifests);
  std::vector<SlideBag<PipeScalar>> bags(setup.pool.slide_ids.size());
  // slides are independent and inference writes no caches
  parallel_for(bags.size(), workers, [&](std::size_t s) {
    const auto& coords = setup.pool.coords[s];
    const int edge = nn::DeskEncoder<PipeScalar>::kInputEdge;
    nn::Mat<PipeScalar> x(static_cast<Eigen::Index>(coords.size()),
                          static_cast<Eigen::Index>(3) * edge * edge);
    for (std::size_t t = 0; t < coords.size(); ++t)
      nn::prep_tile(setup.pool.load(s, coords[t]),
                    x.row(static_cast<Eigen::Index>(t)).data());
    SlideBag<PipeScalar>& bag = bags[s];
    bag.slide_id = setup.pool.slide_ids[s];
    bag.coords = coords;
    bag.h = enc.encode(x, false);
  });
  std::map<std::string, const LabelRow*> by_id;
  for (const auto& r : rows) by_id[r.slide_id] = &r;
  for (auto& bag : bags) {
    const LabelRow* r = by_id.at(bag.slide_id);
    bag.patient_id = r->patient_id;
    bag.label = r->label;
  }
  return bags;
}

inline std::vector<SplitPlan> cv_plans(const Config& cfg,
                                       const std::vector<LabelRow>& rows,
                                       std::uint64_t seed) {
  const int k = static_cast<int>(cfg.get_int("eval.k", 5));
  if (k < 1) throw ConfigError("eval.k must be >= 1");
  return patient_split(unique_patients(rows), k, derive_seed(seed, "cv"));
}

inline std::string bags_file(const Config& cfg) {
  return (fs::path(bags_dir(cfg)) / "bags.h5").string();
}
inline std::string pool_dir(const Config& cfg, PoolMode pool) {
  return (fs::path(diag_dir(cfg)) / pool_mode_name(pool)).string();
}
inline std::string attention_file(const Config& cfg, PoolMode pool,
                                  const std::string& slide_id) {
  return (fs::path(pool_dir(cfg, pool)) / "attention" /
          (slide_id + ".csv"))
      .string();
}

struct DiagPrediction {
  std::string slide_id;
  std::string patient_id;
  int label = 0;
  int fold = 0;
  double score = 0;
};

inline std::vector<DiagPrediction> read_diag_predictions(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "slide_id,patient_id,label,fold,score")
    throw SchemaMismatch("bad predictions header in " + path);
  std::vector<DiagPrediction> out;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = parse_csv_line(line);
    if (cells.size() != 5)
      throw SchemaMismatch("bad predictions row in " + path);
    out.push_back({cells[0], cells[1],
                   static_cast<int>(parse_num(cells[2], path)),
                   static_cast<int>(parse_num(cells[3], path)),
                   parse_num(cells[4], path)});
  }
  return out;
}

}  // namespace pipe

inline bool run_train_diag(const Config& cfg, const RunOptions& opt) {
  pipe::check_config(cfg);
  const std::string data = pipe::data_dir(cfg);
  const auto rows = pipe::sorted_labels(data);
  const std::string hash = cfg.semantic_hash();

  const std::string enc_path =
      (pipe::fs::path(pipe::pretrain_dir(cfg)) / "encoder.h5").string();
  require_artifact(enc_path);

  // ---- bag store, its own provenance so train-de can chain off it ----
  std::vector<std::string> bag_inputs = {enc_path};
  for (const auto& r : rows) {
    const std::string mp = pipe::manifest_file(cfg, r.slide_id);
    require_artifact(mp);
    bag_inputs.push_back(mp);
    bag_inputs.push_back(pipe::slide_png(data, r.slide_id));
  }
  const std::string bdir = pipe::bags_dir(cfg);
  std::filesystem::create_directories(bdir);
  Provenance bag_want{"bags", hash, opt.seed, pipe::hash_all(bag_inputs), {}};
  bool did_work = false;
  if (!stage_is_current(bdir, bag_want)) {
    auto manifests = pipe::load_all_manifests(cfg, rows);
    EncoderCheckpoint<PipeScalar> ck =
        load_encoder_checkpoint<PipeScalar>(enc_path);
    auto bags = pipe::compute_bags(cfg, rows, manifests, ck.encoder,
                                   opt.workers);
    save_bags(pipe::bags_file(cfg), bags, ck.encoder.checksum(), hash);
    bag_want.outputs = {"bags.h5"};
    write_provenance(bdir, bag_want);
    did_work = true;
  }

  // ---- per-pool, per-fold attention training ----
  const std::string ddir = pipe::diag_dir(cfg);
  std::filesystem::create_directories(ddir);
  Provenance want{"train-diag", hash, opt.seed,
                  pipe::hash_all({pipe::bags_file(cfg),
                                  (pipe::fs::path(data) / "labels.csv")
                                      .string()}),
                  {}};
  if (stage_is_current(ddir, want)) return did_work;

  std::string stored_hash;
  auto bags = load_bags<PipeScalar>(pipe::bags_file(cfg), &stored_hash);
  if (stored_hash != hash)
    throw MissingUpstreamArtifact(
        "bag store carries config hash " + stored_hash +
        ", current config hashes to " + hash + "; rerun train-diag");
  std::map<std::string, const SlideBag<PipeScalar>*> bag_by_id;
  for (const auto& b : bags) bag_by_id[b.slide_id] = &b;

  const auto plans = pipe::cv_plans(cfg, rows, opt.seed);
  const auto pools = pipe::pool_list(cfg);

  MilConfig base;
  base.attention_dim =
      static_cast<int>(cfg.get_int("mil.attention_dim", 256));
  base.lr = cfg.get_double("mil.lr", 1e-3);
  base.momentum = cfg.get_double("mil.momentum", 0.9);
  base.weight_decay = cfg.get_double("mil.weight_decay", 1e-4);
  base.max_epochs = static_cast<int>(cfg.get_int("mil.max_epochs", 60));
  base.patience = static_cast<int>(cfg.get_int("mil.patience", 5));
  if (base.attention_dim < 1)
    throw ConfigError("mil.attention_dim must be >= 1");

  std::vector<std::string> outs;
  for (PoolMode pool : pools) {
    const std::string pdir = pipe::pool_dir(cfg, pool);
    std::filesystem::create_directories(
        (pipe::fs::path(pdir) / "attention").string());
    std::vector<pipe::DiagPrediction> preds;

    for (const SplitPlan& plan : plans) {
      auto member = [&](const std::vector<std::string>& ids,
                        const std::string& patient) {
        return std::binary_search(ids.begin(), ids.end(), patient);
      };
      std::vector<SlideBag<PipeScalar>> tr, va;
      std::vector<const SlideBag<PipeScalar>*> te;
      for (const auto& b : bags) {
        if (member(plan.train, b.patient_id))
          tr.push_back(b);
        else if (member(plan.val, b.patient_id))
          va.push_back(b);
        else if (member(plan.test, b.patient_id))
          te.push_back(&b);
      }
      MilConfig mc = base;
      mc.pool = pool;
      mc.seed = derive_seed(derive_seed(opt.seed, "train_diag_fold"),
                            (static_cast<std::uint64_t>(plan.fold_id) << 8) ^
                                static_cast<std::uint64_t>(pool));
      TrainedMil<PipeScalar> model = train_diagnosis(tr, va, mc);

      const std::string fdir =
          (pipe::fs::path(pdir) / ("fold" + std::to_string(plan.fold_id)))
              .string();
      std::filesystem::create_directories(fdir);
      save_mil_checkpoint((pipe::fs::path(fdir) / "mil.h5").string(), model,
                          0, hash, pipe::config_text(cfg));
      outs.push_back(std::string(pool_mode_name(pool)) + "/fold" +
                     std::to_string(plan.fold_id) + "/mil.h5");

      for (const SlideBag<PipeScalar>* b : te) {
        preds.push_back({b->slide_id, b->patient_id, b->label, plan.fold_id,
                         static_cast<double>(model.score(*b))});
        pipe::write_attention_csv(
            pipe::attention_file(cfg, pool, b->slide_id),
            model.attention_map(*b));
        outs.push_back(std::string(pool_mode_name(pool)) + "/attention/" +
                       b->slide_id + ".csv");
      }
    }

    std::sort(preds.begin(), preds.end(),
              [](const pipe::DiagPrediction& a,
                 const pipe::DiagPrediction& b) {
                return a.slide_id < b.slide_id;
              });
    std::string text = "slide_id,patient_id,label,fold,score\n";
    for (const auto& p : preds) {
      text += p.slide_id + "," + p.patient_id + "," +
              std::to_string(p.label) + "," + std::to_string(p.fold) + ",";
      pipe::append_num(text, p.score);
      text += "\n";
    }
    pipe::write_text_file(
        (pipe::fs::path(pdir) / "predictions.csv").string(), text);
    outs.push_back(std::string(pool_mode_name(pool)) + "/predictions.csv");
  }

  want.outputs = outs;
  write_provenance(ddir, want);
  return true;
}

// ---- differential expression training ----

namespace pipe {

struct PatientFeature {
  std::string patient_id;
  std::string tumor_slide;
  nn::Vec<double> feature;
};

struct DERow {
  std::string patient_id;
  std::string gene;
  double predicted = 0;
  double actual = 0;
  std::string mode;
};

inline std::vector<DERow> read_de_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "patient_id,gene,predicted,actual,mode")
    throw SchemaMismatch("bad DE predictions header in " + path);
  std::vector<DERow> out;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = parse_csv_line(line);
    if (cells.size() != 5)
      throw SchemaMismatch("bad DE predictions row in " + path);
    out.push_back({cells[0], cells[1], parse_num(cells[2], path),
                   parse_num(cells[3], path), cells[4]});
  }
  return out;
}

}  // namespace pipe

inline bool run_train_de(const Config& cfg, const RunOptions& opt) {
  pipe::check_config(cfg);
  const std::string data = pipe::data_dir(cfg);
  const auto rows = pipe::sorted_labels(data);
  const std::string hash = cfg.semantic_hash();
  const auto pools = pipe::pool_list(cfg);
  const PoolMode primary = pools.front();

  const std::string expr_path =
      (pipe::fs::path(data) / "expression.tsv").string();
  const std::string genes_path = (pipe::fs::path(data) / "genes.txt").string();
  require_artifact(expr_path);
  require_artifact(genes_path);
  require_artifact(pipe::bags_file(cfg));

  std::vector<std::string> inputs = {
      expr_path, genes_path, pipe::bags_file(cfg),
      (pipe::fs::path(data) / "labels.csv").string()};
  // attention of each patient's tumor slide under the primary pool model
  std::vector<const LabelRow*> tumor_rows;
  for (const auto& r : rows)
    if (r.label == SlideLabel::kTumor) {
      const std::string ap = pipe::attention_file(cfg, primary, r.slide_id);
      require_artifact(ap);
      inputs.push_back(ap);
      tumor_rows.push_back(&r);
    }
  if (tumor_rows.empty())
    throw SchemaMismatch("no tumor slide labeled; DE needs tumor bags");

  const std::string dir = pipe::de_dir(cfg);
  std::filesystem::create_directories(dir);
  Provenance want{"train-de", hash, opt.seed, pipe::hash_all(inputs), {}};
  if (stage_is_current(dir, want)) return false;

  pipe::require_same_hash(pipe::bags_dir(cfg), hash);
  pipe::require_same_hash(pipe::diag_dir(cfg), hash);

  std::string stored_hash;
  auto bags = load_bags<PipeScalar>(pipe::bags_file(cfg), &stored_hash);
  std::map<std::string, const SlideBag<PipeScalar>*> bag_by_id;
  for (const auto& b : bags) bag_by_id[b.slide_id] = &b;

  const std::size_t l =
      static_cast<std::size_t>(cfg.get_int("de.l", 100));
  const bool strict_l = cfg.get_bool("de.strict_l", false);
  if (l == 0) throw ConfigError("de.l must be positive");

  // one DE feature per patient, from the tumor slide's bag under the
  // held-out attention of the diagnosis model
  std::vector<pipe::PatientFeature> feats;
  for (const LabelRow* r : tumor_rows) {
    auto it = bag_by_id.find(r->slide_id);
    if (it == bag_by_id.end()) continue;  // slide had no tissue tiles
    const SlideBag<PipeScalar>& bag = *it->second;
    std::vector<double> a = pipe::read_attention_csv(
        pipe::attention_file(cfg, primary, r->slide_id), bag.coords);
    const std::size_t le = pipe::effective_l(
        l, static_cast<std::size_t>(bag.h.rows()), strict_l);
    feats.push_back(
        {r->patient_id, r->slide_id, build_de_feature(bag.h, a, le)});
  }
  if (feats.size() < 2)
    throw InsufficientTiles("fewer than two patients with tumor bags");
  // one tumor slide per patient is the corpus contract; duplicates would
  // make the patient-level split ill-defined
  for (std::size_t i = 1; i < feats.size(); ++i)
    if (feats[i].patient_id == feats[i - 1].patient_id)
      throw SchemaMismatch("patient " + feats[i].patient_id +
                           " has several tumor slides");

  // expression table -> per-gene targets over those patients
  const auto genes = load_gene_list(genes_path);
  const auto expr = load_expression_tsv(expr_path);
  std::map<std::pair<std::string, std::string>, std::pair<double, double>>
      expr_by_key;
  for (const auto& e : expr)
    expr_by_key[{e.patient_id, e.gene}] = {e.tumor_fpkm_uq,
                                           e.normal_fpkm_uq};

  DETrainConfig dc;
  const std::string mode_text = cfg.get_string("de.mode", "regression");
  if (mode_text == "regression")
    dc.mode = DEMode::kRegression;
  else if (mode_text == "classification")
    dc.mode = DEMode::kClassification;
  else
    throw ConfigError("de.mode must be regression or classification");
  dc.rcond = cfg.get_double("de.rcond", 1e-6);
  dc.gd_epochs = static_cast<int>(cfg.get_int("de.gd_epochs", 2000));
  dc.seed = opt.seed;
  const double eps = cfg.get_double("de.epsilon", 1e-6);
  const double threshold = cfg.get_double("de.threshold", 1.5);

  auto target_of = [&](const std::string& patient,
                       const std::string& gene) {
    auto it = expr_by_key.find({patient, gene});
    if (it == expr_by_key.end())
      throw SchemaMismatch("expression.tsv misses patient " + patient +
                           " gene " + gene);
    const double fc = fold_change(it->second.first, it->second.second, eps);
    return dc.mode == DEMode::kRegression
               ? de_target(fc)
               : static_cast<double>(binarize_de(fc, threshold));
  };

  const auto plans = pipe::cv_plans(cfg, rows, opt.seed);
  const Eigen::Index fdim = feats.front().feature.size();
  std::vector<pipe::DERow> out_rows;
  std::vector<std::string> outs;

  for (const SplitPlan& plan : plans) {
    auto member = [&](const std::vector<std::string>& ids,
                      const std::string& patient) {
      return std::binary_search(ids.begin(), ids.end(), patient);
    };
    // closed-form least squares has no early stopping, so the validation
    // patients join the training side of each fold
    std::vector<const pipe::PatientFeature*> tr, te;
    for (const auto& f : feats) {
      if (member(plan.test, f.patient_id))
        te.push_back(&f);
      else
        tr.push_back(&f);
    }
    if (tr.size() < 2)
      throw TooFewPatients("fold " + std::to_string(plan.fold_id) +
                           " trains on fewer than two patients");

    nn::Mat<double> x(static_cast<Eigen::Index>(tr.size()), fdim);
    for (std::size_t i = 0; i < tr.size(); ++i)
      x.row(static_cast<Eigen::Index>(i)) = tr[i]->feature.transpose();
    std::map<std::string, std::vector<double>> targets;
    for (const auto& g : genes) {
      auto& t = targets[g];
      t.reserve(tr.size());
      for (const auto* f : tr) t.push_back(target_of(f->patient_id, g));
    }
    auto models = train_gene_models(x, targets, dc);

    const std::string fdir =
        (pipe::fs::path(dir) / ("fold" + std::to_string(plan.fold_id)))
            .string();
    std::filesystem::create_directories(fdir);
    save_gene_models((pipe::fs::path(fdir) / "gene_models.h5").string(),
                     models, l, hash);
    outs.push_back("fold" + std::to_string(plan.fold_id) +
                   "/gene_models.h5");

    for (const auto* f : te)
      for (const auto& g : genes)
        out_rows.push_back({f->patient_id, g,
                            predict_de(f->feature, models.at(g)),
                            target_of(f->patient_id, g),
                            de_mode_name(dc.mode)});
  }

  std::sort(out_rows.begin(), out_rows.end(),
            [](const pipe::DERow& a, const pipe::DERow& b) {
              return a.gene != b.gene ? a.gene < b.gene
                                      : a.patient_id < b.patient_id;
            });
  std::string text = "patient_id,gene,predicted,actual,mode\n";
  for (const auto& r : out_rows) {
    text += r.patient_id + "," + r.gene + ",";
    pipe::append_num(text, r.predicted);
    text += ",";
    pipe::append_num(text, r.actual);
    text += "," + r.mode + "\n";
  }
  pipe::write_text_file((pipe::fs::path(dir) / "predictions.csv").string(),
                        text);
  outs.push_back("predictions.csv");

  want.outputs = outs;
  write_provenance(dir, want);
  return true;
}

// ---- evaluation ----

inline bool run_eval(const Config& cfg, const RunOptions& opt) {
  pipe::check_config(cfg);
  const std::string data = pipe::data_dir(cfg);
  const std::string hash = cfg.semantic_hash();
  const auto pools = pipe::pool_list(cfg);

  std::vector<std::string> inputs = {
      (pipe::fs::path(data) / "labels.csv").string()};
  for (PoolMode pool : pools) {
    const std::string p =
        (pipe::fs::path(pipe::pool_dir(cfg, pool)) / "predictions.csv")
            .string();
    require_artifact(p);
    inputs.push_back(p);
  }
  const std::string de_preds =
      (pipe::fs::path(pipe::de_dir(cfg)) / "predictions.csv").string();
  require_artifact(de_preds);
  inputs.push_back(de_preds);

  const std::string dir = pipe::eval_dir(cfg);
  std::filesystem::create_directories(dir);
  Provenance want{"eval", hash, opt.seed, pipe::hash_all(inputs), {}};
  if (stage_is_current(dir, want)) return false;

  // refuse mixed- or stale-hash inputs before reading anything
  pipe::require_same_hash(pipe::diag_dir(cfg), hash);
  pipe::require_same_hash(pipe::de_dir(cfg), hash);

  nlohmann::json report;
  report["config_hash"] = hash;
  report["seed"] = opt.seed;
  std::vector<std::string> outs = {"metrics.json"};

  // ---- diagnosis, per pool ----
  for (PoolMode pool : pools) {
    const std::string name = pool_mode_name(pool);
    auto preds = pipe::read_diag_predictions(
        (pipe::fs::path(pipe::pool_dir(cfg, pool)) / "predictions.csv")
            .string());
    if (preds.empty())
      throw SchemaMismatch("empty diagnosis predictions for " + name);
    std::vector<int> labels;
    std::vector<double> scores;
    std::map<int, std::pair<std::vector<int>, std::vector<double>>> by_fold;
    for (const auto& p : preds) {
      labels.push_back(p.label);
      scores.push_back(p.score);
      by_fold[p.fold].first.push_back(p.label);
      by_fold[p.fold].second.push_back(p.score);
    }
    nlohmann::json d;
    d["n_slides"] = labels.size();
    d["auc"] = roc_auc(labels, scores);
    d["accuracy"] = accuracy_from_scores(labels, scores);
    nlohmann::json folds = nlohmann::json::object();
    for (const auto& [fold, lv] : by_fold)
      folds[std::to_string(fold)] = roc_auc(lv.first, lv.second);
    d["fold_auc"] = folds;

    std::string roc_csv = "fpr,tpr\n";
    for (const CurvePoint& p : roc_points(labels, scores)) {
      pipe::append_num(roc_csv, p.x);
      roc_csv += ",";
      pipe::append_num(roc_csv, p.y);
      roc_csv += "\n";
    }
    std::string pr_csv = "recall,precision\n";
    for (const CurvePoint& p : pr_points(labels, scores)) {
      pipe::append_num(pr_csv, p.x);
      pr_csv += ",";
      pipe::append_num(pr_csv, p.y);
      pr_csv += "\n";
    }
    const std::string roc_name = "roc_" + name + ".csv";
    const std::string pr_name = "pr_" + name + ".csv";
    pipe::write_text_file((pipe::fs::path(dir) / roc_name).string(),
                          roc_csv);
    pipe::write_text_file((pipe::fs::path(dir) / pr_name).string(), pr_csv);
    outs.push_back(roc_name);
    outs.push_back(pr_name);
    d["roc_csv"] = roc_name;
    d["pr_csv"] = pr_name;
    report["diagnosis"][name] = d;
  }

  // ---- differential expression ----
  auto de_rows = pipe::read_de_predictions(de_preds);
  if (de_rows.empty()) throw SchemaMismatch("empty DE predictions");
  const std::string mode = de_rows.front().mode;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>>
      by_gene;  // gene -> (actual, predicted), patient-sorted rows
  for (const auto& r : de_rows) {
    by_gene[r.gene].first.push_back(r.actual);
    by_gene[r.gene].second.push_back(r.predicted);
  }

  std::vector<std::string> gene_names;
  std::vector<double> p_raw;
  nlohmann::json genes = nlohmann::json::object();
  std::vector<double> pearson_per_gene, mean_fc_per_gene;
  for (const auto& [gene, av] : by_gene) {
    const auto& actual = av.first;
    const auto& predicted = av.second;
    nlohmann::json g;
    g["n"] = actual.size();
    bool usable = false;
    try {
      g["pearson"] = pearson(actual, predicted);
      g["spearman"] = spearman(actual, predicted);
      usable = true;
    } catch (const ConstantVector&) {
      g["pearson"] = nullptr;
      g["spearman"] = nullptr;
      g["degenerate"] = true;
    } catch (const TooFewValues&) {
      g["pearson"] = nullptr;
      g["spearman"] = nullptr;
      g["degenerate"] = true;
    }
    // predicted distribution against matched uniform draws from the real
    // 5th-95th percentile band
    double p = 1.0;
    try {
      auto baseline = random_baseline(actual, actual.size(),
                                      derive_seed(opt.seed, "baseline_" +
                                                                 gene));
      p = wilcoxon_rank_sum(predicted, baseline);
    } catch (const TooFewValues&) {
      g["baseline_skipped"] = true;
    }
    g["wilcoxon_p"] = p;
    gene_names.push_back(gene);
    p_raw.push_back(p);

    if (mode == "regression") {
      double fc_sum = 0;
      for (double t : actual) fc_sum += std::pow(10.0, t) - 1.0;
      const double mean_fc = fc_sum / static_cast<double>(actual.size());
      g["mean_fc"] = mean_fc;
      if (usable) {
        pearson_per_gene.push_back(g["pearson"].get<double>());
        mean_fc_per_gene.push_back(mean_fc);
      }
    }
    genes[gene] = g;
  }
  const auto p_adj = bh_correct(p_raw);
  for (std::size_t i = 0; i < gene_names.size(); ++i)
    genes[gene_names[i]]["wilcoxon_p_adj"] = p_adj[i];

  nlohmann::json de;
  de["mode"] = mode;
  de["genes"] = genes;

  if (mode == "regression" && !pearson_per_gene.empty()) {
    std::vector<double> edges;
    for (const auto& e :
         pipe::split_csv_list(cfg.get_string("eval.fc_bins", "0,0.2,0.4,1")))
      edges.push_back(pipe::parse_num(e, "eval.fc_bins"));
    auto bins = fc_accuracy_bins(pearson_per_gene, mean_fc_per_gene, edges);
    nlohmann::json jbins = nlohmann::json::array();
    for (std::size_t i = 0; i < bins.size(); ++i) {
      nlohmann::json b;
      b["lo"] = edges[i];
      b["hi"] = edges[i + 1];
      b["count"] = bins[i].count;
      if (bins[i].empty) {
        b["empty"] = true;
      } else {
        b["q1"] = bins[i].q1;
        b["median"] = bins[i].median;
        b["q3"] = bins[i].q3;
        b["mean"] = bins[i].mean;
      }
      jbins.push_back(b);
    }
    de["fc_bins"] = jbins;
  }
  report["diffexpr"] = de;

  pipe::write_text_file((pipe::fs::path(dir) / "metrics.json").string(),
                        report.dump(2) + "\n");
  want.outputs = outs;
  write_provenance(dir, want);
  return true;
}

// ---- heatmaps ----

inline bool run_heatmap(const Config& cfg, const RunOptions& opt) {
  pipe::check_config(cfg);
  const std::string data = pipe::data_dir(cfg);
  const auto rows = pipe::sorted_labels(data);
  const std::string hash = cfg.semantic_hash();
  const auto pools = pipe::pool_list(cfg);
  const PoolMode primary = pools.front();

  const auto wanted_slides =
      pipe::split_csv_list(cfg.get_string("heatmap.slides", "all"));
  const bool all_slides =
      wanted_slides.size() == 1 && wanted_slides.front() == "all";
  const auto gene_list =
      pipe::split_csv_list(cfg.get_string("heatmap.genes", ""));

  require_artifact(pipe::bags_file(cfg));
  std::vector<const LabelRow*> targets;
  for (const auto& r : rows) {
    if (!all_slides &&
        std::find(wanted_slides.begin(), wanted_slides.end(), r.slide_id) ==
            wanted_slides.end())
      continue;
    targets.push_back(&r);
  }
  if (targets.empty()) throw ConfigError("heatmap.slides matches no slide");

  std::vector<std::string> inputs = {pipe::bags_file(cfg)};
  for (const LabelRow* r : targets) {
    const std::string mp = pipe::manifest_file(cfg, r->slide_id);
    require_artifact(mp);
    inputs.push_back(mp);
    inputs.push_back(pipe::slide_png(data, r->slide_id));
  }
  // only slides with tissue tiles have attention maps
  std::map<std::string, bool> has_attention;
  for (const LabelRow* r : targets) {
    const std::string ap =
        pipe::attention_file(cfg, primary, r->slide_id);
    has_attention[r->slide_id] = std::filesystem::exists(ap);
    if (has_attention[r->slide_id]) inputs.push_back(ap);
  }
  // per-slide fold mapping for gene models
  std::map<std::string, int> fold_of;
  if (!gene_list.empty()) {
    const std::string dp =
        (pipe::fs::path(pipe::pool_dir(cfg, primary)) / "predictions.csv")
            .string();
    require_artifact(dp);
    inputs.push_back(dp);
    for (const auto& p : pipe::read_diag_predictions(dp))
      fold_of[p.slide_id] = p.fold;
    std::set<int> folds;
    for (const LabelRow* r : targets)
      if (fold_of.count(r->slide_id)) folds.insert(fold_of[r->slide_id]);
    for (int f : folds) {
      const std::string gm =
          (pipe::fs::path(pipe::de_dir(cfg)) /
           ("fold" + std::to_string(f)) / "gene_models.h5")
              .string();
      require_artifact(gm);
      inputs.push_back(gm);
    }
  }

  const std::string dir = pipe::heatmap_dir(cfg);
  std::filesystem::create_directories(dir);
  Provenance want{"heatmap", hash, opt.seed, pipe::hash_all(inputs), {}};
  if (stage_is_current(dir, want)) return false;

  pipe::require_same_hash(pipe::bags_dir(cfg), hash);
  pipe::require_same_hash(pipe::diag_dir(cfg), hash);
  if (!gene_list.empty()) pipe::require_same_hash(pipe::de_dir(cfg), hash);

  const int downsample =
      static_cast<int>(cfg.get_int("heatmap.downsample", 8));
  const std::size_t gallery_n =
      static_cast<std::size_t>(cfg.get_int("heatmap.gallery_n", 4));
  if (downsample < 1) throw ConfigError("heatmap.downsample must be >= 1");
  if (gallery_n < 1) throw ConfigError("heatmap.gallery_n must be >= 1");

  auto bags = load_bags<PipeScalar>(pipe::bags_file(cfg));
  std::map<std::string, const SlideBag<PipeScalar>*> bag_by_id;
  for (const auto& b : bags) bag_by_id[b.slide_id] = &b;

  std::map<int, std::map<std::string, GeneModel>> models_by_fold;

  std::vector<std::string> outs;
  auto emit = [&](const ScoreMap& map, const TileManifest& m,
                  const ImageRGB& slide, const std::string& stem,
                  bool gallery, const char* method) {
    ImageRGB img = render_heatmap(map, static_cast<int>(m.width),
                                  static_cast<int>(m.height), m.tile_px,
                                  downsample);
    write_png((pipe::fs::path(dir) / (stem + ".png")).string(), img);
    outs.push_back(stem + ".png");

    const auto [lo, hi] = std::minmax_element(map.scores.begin(),
                                              map.scores.end());
    nlohmann::json side;
    side["slide_id"] = map.slide_id;
    side["score_kind"] = map.score_kind;
    side["downsample"] = downsample;
    side["tile_px"] = m.tile_px;
    side["score_min"] = map.scores.empty() ? 0.0 : *lo;
    side["score_max"] = map.scores.empty() ? 0.0 : *hi;
    side["config_hash"] = hash;
    if (method) side["method"] = method;
    pipe::write_text_file((pipe::fs::path(dir) / (stem + ".json")).string(),
                          side.dump(2) + "\n");
    outs.push_back(stem + ".json");

    if (gallery) {
      Gallery g = tile_gallery(slide, map, m.tile_px,
                               std::min(gallery_n, map.coords.size()));
      write_png((pipe::fs::path(dir) / (stem + "_top.png")).string(), g.top);
      write_png((pipe::fs::path(dir) / (stem + "_bottom.png")).string(),
                g.bottom);
      outs.push_back(stem + "_top.png");
      outs.push_back(stem + "_bottom.png");
    }
  };

  for (const LabelRow* r : targets) {
    if (!has_attention.at(r->slide_id)) continue;
    const TileManifest m = read_manifest(pipe::manifest_file(cfg, r->slide_id));
    if (m.coords.empty()) continue;
    const ImageRGB slide = read_png(pipe::slide_png(data, r->slide_id));
    const std::vector<double> a = pipe::read_attention_csv(
        pipe::attention_file(cfg, primary, r->slide_id), m.coords);

    ScoreMap map{r->slide_id, "diagnosis_attention", m.coords, a};
    emit(map, m, slide, r->slide_id + "_attention", true, nullptr);

    if (!gene_list.empty()) {
      auto fit = fold_of.find(r->slide_id);
      if (fit == fold_of.end())
        throw MissingUpstreamArtifact(
            "no diagnosis fold recorded for slide " + r->slide_id);
      auto& models = models_by_fold[fit->second];
      if (models.empty())
        models = load_gene_models(
            (pipe::fs::path(pipe::de_dir(cfg)) /
             ("fold" + std::to_string(fit->second)) / "gene_models.h5")
                .string());
      const SlideBag<PipeScalar>* bag = bag_by_id.at(r->slide_id);
      for (const std::string& gene : gene_list) {
        auto git = models.find(gene);
        if (git == models.end())
          throw ConfigError("heatmap.genes lists unknown gene " + gene);
        ScoreMap gm{r->slide_id, "gene_saliency:" + gene, m.coords,
                    gene_saliency(bag->h, git->second)};
        emit(gm, m, slide, r->slide_id + "_" + gene, false,
             "linear_weight_saliency");
      }
    }
  }

  want.outputs = outs;
  write_provenance(dir, want);
  return true;
}

}  // namespace histcode
