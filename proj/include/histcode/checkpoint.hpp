#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "histcode/contrastive.hpp"
#include "histcode/errors.hpp"
#include "histcode/hdf5_util.hpp"
#include "histcode/mil.hpp"
#include "histcode/diffexpr.hpp"
#include "histcode/nn/encoder.hpp"

namespace histcode {

inline constexpr std::int64_t kCheckpointFormatVersion = 1;

namespace ckpt {

template <class S>
inline void write_param(hid_t loc, const std::string& name,
                        const nn::Param<S>& p, bool with_momentum) {
  const auto rows = static_cast<hsize_t>(p.value.rows());
  const auto cols = static_cast<hsize_t>(p.value.cols());
  h5::write_dataset(loc, name, p.value.data(), {rows, cols});
  if (with_momentum)
    h5::write_dataset(loc, name + "_mom", p.mom.data(), {rows, cols});
}

template <class S>
inline void read_param(hid_t loc, const std::string& name, nn::Param<S>& p,
                       bool shape_fixed = false) {
  auto dims = h5::dataset_dims(loc, name);
  if (dims.size() != 2) throw SchemaMismatch("param " + name + " is not 2-d");
  if (shape_fixed &&
      (static_cast<Eigen::Index>(dims[0]) != p.value.rows() ||
       static_cast<Eigen::Index>(dims[1]) != p.value.cols()))
    throw SchemaMismatch("param " + name + " shape differs from architecture");
  p.resize(static_cast<Eigen::Index>(dims[0]),
           static_cast<Eigen::Index>(dims[1]));
  h5::read_dataset(loc, name, p.value.data());
  if (h5::link_exists(loc, name + "_mom"))
    h5::read_dataset(loc, name + "_mom", p.mom.data());
}

inline const std::vector<std::string>& encoder_param_names() {
  static const std::vector<std::string> names = {
      "c1_w", "c1_b", "c2_w", "c2_b", "c3_w", "c3_b", "c4_w", "c4_b",
      "fc1_w", "fc1_b", "fc2_w", "fc2_b"};
  return names;
}

inline void check_version(hid_t loc) {
  auto v = h5::read_attr<std::int64_t>(loc, "format_version");
  if (v != kCheckpointFormatVersion)
    throw SchemaMismatch("unsupported checkpoint format_version " +
                         std::to_string(v));
}

}  // namespace ckpt

/// Pretraining checkpoint: encoder weights (+ momentum), the adversarial
/// bank, step counter, seed and the producing config hash.
template <class S>
inline void save_encoder_checkpoint(const std::string& path,
                                    nn::Encoder<S>& enc,
                                    const MemoryBank<S>* bank,
                                    std::int64_t step, std::uint64_t seed,
                                    const std::string& config_hash,
                                    const std::string& config_snapshot = "") {
  h5::Handle file = h5::create_file(path);
  h5::write_attr(file, "format_version", kCheckpointFormatVersion);
  h5::write_attr(file, "kind", std::string("encoder"));
  h5::write_attr(file, "step", step);
  h5::write_attr(file, "seed", static_cast<std::uint64_t>(seed));
  h5::write_attr(file, "config_hash", config_hash);
  h5::write_attr(file, "config_snapshot", config_snapshot);
  h5::Handle grp = h5::create_group(file, "encoder");
  auto params = enc.params();
  const auto& names = ckpt::encoder_param_names();
  for (std::size_t i = 0; i < params.size(); ++i)
    ckpt::write_param(grp, names[i], *params[i], true);
  if (bank) {
    h5::Handle bg = h5::create_group(file, "bank");
    h5::write_dataset(bg, "m", bank->m.data(),
                      {static_cast<hsize_t>(bank->m.rows()),
                       static_cast<hsize_t>(bank->m.cols())});
  }
}

template <class S>
struct EncoderCheckpoint {
  nn::Encoder<S> encoder;
  MemoryBank<S> bank;  // empty matrix when the file holds none
  std::int64_t step = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
};

template <class S>
inline EncoderCheckpoint<S> load_encoder_checkpoint(const std::string& path) {
  h5::Handle file = h5::open_file(path);
  ckpt::check_version(file);
  if (h5::read_string_attr(file, "kind") != "encoder")
    throw SchemaMismatch("not an encoder checkpoint: " + path);
  EncoderCheckpoint<S> out{nn::Encoder<S>::seeded(0), {}, 0, 0, {}};
  out.step = h5::read_attr<std::int64_t>(file, "step");
  out.seed = h5::read_attr<std::uint64_t>(file, "seed");
  out.config_hash = h5::read_string_attr(file, "config_hash");
  h5::Handle grp = h5::open_group(file, "encoder");
  auto params = out.encoder.params();
  const auto& names = ckpt::encoder_param_names();
  for (std::size_t i = 0; i < params.size(); ++i)
    ckpt::read_param(grp, names[i], *params[i], true);
  if (h5::link_exists(file, "bank")) {
    h5::Handle bg = h5::open_group(file, "bank");
    auto dims = h5::dataset_dims(bg, "m");
    out.bank.m.resize(static_cast<Eigen::Index>(dims[0]),
                      static_cast<Eigen::Index>(dims[1]));
    h5::read_dataset(bg, "m", out.bank.m.data());
  }
  return out;
}

/// MIL checkpoint: attention parameters, two-node head, pool mode.
template <class S>
inline void save_mil_checkpoint(const std::string& path, TrainedMil<S>& mil,
                                std::uint64_t encoder_checksum,
                                const std::string& config_hash,
                                const std::string& config_snapshot = "") {
  h5::Handle file = h5::create_file(path);
  h5::write_attr(file, "format_version", kCheckpointFormatVersion);
  h5::write_attr(file, "kind", std::string("mil"));
  h5::write_attr(file, "config_snapshot", config_snapshot);
  h5::write_attr(file, "pool", std::string(pool_mode_name(mil.pool)));
  h5::write_attr(file, "encoder_checksum", encoder_checksum);
  h5::write_attr(file, "config_hash", config_hash);
  h5::write_attr(file, "best_epoch",
                 static_cast<std::int64_t>(mil.best_epoch));
  h5::Handle grp = h5::create_group(file, "mil");
  ckpt::write_param(grp, "att_v", mil.attention.v, false);
  ckpt::write_param(grp, "att_u", mil.attention.u, false);
  ckpt::write_param(grp, "att_w", mil.attention.w, false);
  ckpt::write_param(grp, "head_w", mil.head.w, false);
  ckpt::write_param(grp, "head_b", mil.head.b, false);
}

template <class S>
inline TrainedMil<S> load_mil_checkpoint(const std::string& path,
                                         std::string* config_hash = nullptr,
                                         std::uint64_t* encoder_checksum =
                                             nullptr) {
  h5::Handle file = h5::open_file(path);
  ckpt::check_version(file);
  if (h5::read_string_attr(file, "kind") != "mil")
    throw SchemaMismatch("not a MIL checkpoint: " + path);
  std::string pool = h5::read_string_attr(file, "pool");
  Rng rng = make_rng(0, "mil_load");
  h5::Handle grp = h5::open_group(file, "mil");
  auto vdims = h5::dataset_dims(grp, "att_v");
  TrainedMil<S> mil(static_cast<Eigen::Index>(vdims[1]),
                    static_cast<int>(vdims[0]), rng);
  ckpt::read_param(grp, "att_v", mil.attention.v);
  ckpt::read_param(grp, "att_u", mil.attention.u);
  ckpt::read_param(grp, "att_w", mil.attention.w);
  ckpt::read_param(grp, "head_w", mil.head.w);
  ckpt::read_param(grp, "head_b", mil.head.b);
  mil.best_epoch =
      static_cast<int>(h5::read_attr<std::int64_t>(file, "best_epoch"));
  if (pool == "gated")
    mil.pool = PoolMode::kGated;
  else if (pool == "mean")
    mil.pool = PoolMode::kMean;
  else if (pool == "max")
    mil.pool = PoolMode::kMax;
  else
    throw SchemaMismatch("unknown pool mode: " + pool);
  if (config_hash) *config_hash = h5::read_string_attr(file, "config_hash");
  if (encoder_checksum)
    *encoder_checksum = h5::read_attr<std::uint64_t>(file, "encoder_checksum");
  return mil;
}

/// Bag store: one group per slide with the frozen embeddings and aligned
/// coordinates. Groups are named by slide id.
template <class S>
inline void save_bags(const std::string& path,
                      const std::vector<SlideBag<S>>& bags,
                      std::uint64_t encoder_checksum,
                      const std::string& config_hash) {
  h5::Handle file = h5::create_file(path);
  h5::write_attr(file, "format_version", kCheckpointFormatVersion);
  h5::write_attr(file, "kind", std::string("bags"));
  h5::write_attr(file, "encoder_checksum", encoder_checksum);
  h5::write_attr(file, "config_hash", config_hash);
  for (const auto& bag : bags) {
    h5::Handle grp = h5::create_group(file, bag.slide_id);
    h5::write_attr(grp, "patient_id", bag.patient_id);
    h5::write_attr(grp, "label", static_cast<std::int64_t>(bag.label));
    h5::write_dataset(grp, "h", bag.h.data(),
                      {static_cast<hsize_t>(bag.h.rows()),
                       static_cast<hsize_t>(bag.h.cols())});
    std::vector<std::int32_t> xy;
    xy.reserve(bag.coords.size() * 2);
    for (const auto& c : bag.coords) {
      xy.push_back(c.x);
      xy.push_back(c.y);
    }
    h5::write_dataset(grp, "coords", xy.data(),
                      {static_cast<hsize_t>(bag.coords.size()), 2});
  }
}

template <class S>
inline std::vector<SlideBag<S>> load_bags(const std::string& path,
                                          std::string* config_hash = nullptr,
                                          std::uint64_t* encoder_checksum =
                                              nullptr) {
  h5::Handle file = h5::open_file(path);
  ckpt::check_version(file);
  if (h5::read_string_attr(file, "kind") != "bags")
    throw SchemaMismatch("not a bag store: " + path);
  if (config_hash) *config_hash = h5::read_string_attr(file, "config_hash");
  if (encoder_checksum)
    *encoder_checksum = h5::read_attr<std::uint64_t>(file, "encoder_checksum");
  std::vector<SlideBag<S>> bags;
  for (const std::string& name : h5::child_names(file)) {
    h5::Handle grp = h5::open_group(file, name);
    SlideBag<S> bag;
    bag.slide_id = name;
    bag.patient_id = h5::read_string_attr(grp, "patient_id");
    bag.label = static_cast<int>(h5::read_attr<std::int64_t>(grp, "label"));
    auto hdims = h5::dataset_dims(grp, "h");
    bag.h.resize(static_cast<Eigen::Index>(hdims[0]),
                 static_cast<Eigen::Index>(hdims[1]));
    h5::read_dataset(grp, "h", bag.h.data());
    auto cdims = h5::dataset_dims(grp, "coords");
    if (cdims.size() != 2 || cdims[1] != 2 || cdims[0] != hdims[0])
      throw SchemaMismatch("bag coords misaligned in " + name);
    std::vector<std::int32_t> xy(cdims[0] * 2);
    h5::read_dataset(grp, "coords", xy.data());
    bag.coords.resize(cdims[0]);
    for (std::size_t i = 0; i < bag.coords.size(); ++i)
      bag.coords[i] = {xy[2 * i], xy[2 * i + 1]};
    bags.push_back(std::move(bag));
  }
  return bags;
}

/// Per-gene linear models keyed by symbol.
inline void save_gene_models(const std::string& path,
                             const std::map<std::string, GeneModel>& models,
                             std::size_t l, const std::string& config_hash) {
  h5::Handle file = h5::create_file(path);
  h5::write_attr(file, "format_version", kCheckpointFormatVersion);
  h5::write_attr(file, "kind", std::string("gene_models"));
  h5::write_attr(file, "config_hash", config_hash);
  h5::write_attr(file, "l", static_cast<std::int64_t>(l));
  for (const auto& [gene, m] : models) {
    h5::Handle grp = h5::create_group(file, gene);
    h5::write_attr(grp, "mode", std::string(de_mode_name(m.mode)));
    h5::write_attr(grp, "degenerate",
                   static_cast<std::int64_t>(m.degenerate ? 1 : 0));
    h5::write_dataset(grp, "w", m.w.data(),
                      {static_cast<hsize_t>(m.w.size())});
    double biases[3] = {m.b, m.b2[0], m.b2[1]};
    h5::write_dataset(grp, "b", biases, {3});
  }
}

inline std::map<std::string, GeneModel> load_gene_models(
    const std::string& path, std::size_t* l = nullptr,
    std::string* config_hash = nullptr) {
  h5::Handle file = h5::open_file(path);
  ckpt::check_version(file);
  if (h5::read_string_attr(file, "kind") != "gene_models")
    throw SchemaMismatch("not a gene model store: " + path);
  if (l) *l = static_cast<std::size_t>(h5::read_attr<std::int64_t>(file, "l"));
  if (config_hash) *config_hash = h5::read_string_attr(file, "config_hash");
  std::map<std::string, GeneModel> models;
  for (const std::string& gene : h5::child_names(file)) {
    h5::Handle grp = h5::open_group(file, gene);
    GeneModel m;
    std::string mode = h5::read_string_attr(grp, "mode");
    m.mode =
        mode == "regression" ? DEMode::kRegression : DEMode::kClassification;
    m.degenerate = h5::read_attr<std::int64_t>(grp, "degenerate") != 0;
    auto wd = h5::dataset_dims(grp, "w");
    m.w.resize(static_cast<Eigen::Index>(wd[0]));
    h5::read_dataset(grp, "w", m.w.data());
    double biases[3];
    h5::read_dataset(grp, "b", biases);
    m.b = biases[0];
    m.b2[0] = biases[1];
    m.b2[1] = biases[2];
    models.emplace(gene, std::move(m));
  }
  return models;
}

}  // namespace histcode
