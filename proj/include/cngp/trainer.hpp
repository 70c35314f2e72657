#pragma once

// Training loop, generative replay for continual scene addition, and
// color-only style fine-tuning.

#include <chrono>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cngp/checkpoint.hpp"
#include "cngp/common.hpp"
#include "cngp/image_io.hpp"
#include "cngp/losses.hpp"
#include "cngp/metrics.hpp"
#include "cngp/optimizer.hpp"
#include "cngp/renderer.hpp"
#include "cngp/scene_data.hpp"

namespace cngp {

enum class ReplayMode { Online, Offline, None };

inline const char* to_string(ReplayMode m) {
  switch (m) {
    case ReplayMode::Online: return "online";
    case ReplayMode::Offline: return "offline";
    case ReplayMode::None: return "none";
  }
  return "?";
}

inline ReplayMode replay_mode_from_string(const std::string& s) {
  if (s == "online") return ReplayMode::Online;
  if (s == "offline") return ReplayMode::Offline;
  if (s == "none") return ReplayMode::None;
  throw ValidationError("unknown replay mode '" + s + "' (expected online, offline or none)");
}

struct TrainConfig {
  int batch_rays = 4096;
  double lr = 1e-2;
  int epochs = 10;
  int n_samples = 64;
  LossWeights loss;
  AdamConfig adam;
  std::uint64_t seed = 0;
  ReplayMode replay_mode = ReplayMode::Online;
  int replay_k = 0;  // 0: new-scene image count / previous scene count, at least 1
  double lr_decay = 0.33;
  std::vector<double> decay_at{0.5, 0.75};  // fractions of the epoch budget
  int threads = 1;
  // Gradient shards per batch. Shards are reduced in index order, so the
  // result does not depend on `threads`.
  int shards = 8;
  int render_chunk = 4096;
  Trainable trainable = Trainable::All;
};

inline void validate(const TrainConfig& c) {
  if (c.batch_rays < 1) throw ValidationError("train: batch_rays must be >= 1");
  if (!(c.lr > 0.0) || !std::isfinite(c.lr)) throw ValidationError("train: lr must be > 0");
  if (c.epochs < 0) throw ValidationError("train: epochs must be >= 0");
  if (c.n_samples < 1) throw ValidationError("train: n_samples must be >= 1");
  if (c.replay_k < 0) throw ValidationError("train: replay_k must be >= 0 (0 selects the default)");
  if (!(c.lr_decay > 0.0)) throw ValidationError("train: lr_decay must be > 0");
  if (c.shards < 1) throw ValidationError("train: shards must be >= 1");
  if (c.threads < 1) throw ValidationError("train: threads must be >= 1");
}

// Learning rate used throughout epoch `epoch` (0-based).
inline double lr_at_epoch(const TrainConfig& c, int epoch) {
  double lr = c.lr;
  for (double f : c.decay_at) {
    const int milestone = static_cast<int>(std::floor(f * c.epochs));
    if (milestone > 0 && epoch >= milestone) lr *= c.lr_decay;
  }
  return lr;
}

struct EpochLog {
  int epoch = 0;
  int scene_label = 0;
  LossBreakdown loss;  // per-ray means over the epoch
  double val_psnr = 0.0;
  double lr = 0.0;
  double wall_s = 0.0;
};

using LogSink = std::function<void(const EpochLog&)>;

inline std::string epoch_csv_header() { return "epoch,scene_label,mse,dist,ent,total,val_psnr,lr,wall_s"; }

inline std::string to_csv_row(const EpochLog& e) {
  std::ostringstream os;
  os << std::setprecision(9) << e.epoch << "," << e.scene_label << "," << e.loss.mse << "," << e.loss.dist << ","
     << e.loss.ent << "," << e.loss.total << "," << format_metric(e.val_psnr) << "," << e.lr << "," << e.wall_s;
  return os.str();
}

// One held-out or training view rendered after every epoch.
struct ValidationView {
  int label = 0;
  Camera camera;
  Image image;
  Color background{1.0f, 1.0f, 1.0f};
};

// Default validation set: the first image of the first dataset of each label.
inline std::vector<ValidationView> default_validation(std::span<const SceneDataset> datasets) {
  std::vector<ValidationView> out;
  for (const auto& ds : datasets) {
    if (ds.size() == 0) continue;
    const bool seen = std::any_of(out.begin(), out.end(), [&](const ValidationView& v) { return v.label == ds.label; });
    if (!seen) out.push_back({ds.label, ds.cameras.front(), ds.images.front(), ds.background});
  }
  return out;
}

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

struct RayRef {
  std::uint32_t dataset;
  std::uint32_t image;
  std::uint32_t pixel;
};

}  // namespace detail

// Trains on the union of every pixel of every dataset. Datasets may carry
// different labels; all of them must be registered.
template <typename Real>
void train_scene(ModelParams<Real>& p, std::span<const SceneDataset> datasets, const TrainConfig& cfg,
                 const LogSink& sink = {}, std::vector<ValidationView> validation = {},
                 OptimizerState<Real>* state = nullptr) {
  validate(cfg);
  std::vector<detail::RayRef> rays;
  for (std::size_t d = 0; d < datasets.size(); ++d) {
    validate(datasets[d]);
    require_label(p.label_registry, datasets[d].label);
    for (std::size_t i = 0; i < datasets[d].size(); ++i) {
      const std::size_t n = datasets[d].images[i].pixel_count();
      for (std::size_t px = 0; px < n; ++px) {
        rays.push_back({static_cast<std::uint32_t>(d), static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(px)});
      }
    }
  }
  if (rays.empty()) throw ValidationError("train: no training rays (empty dataset)");
  if (cfg.epochs == 0) return;
  for (ValidationView& d : default_validation(datasets)) {
    const bool covered =
        std::any_of(validation.begin(), validation.end(), [&](const ValidationView& v) { return v.label == d.label; });
    if (!covered) validation.push_back(std::move(d));
  }

  OptimizerState<Real> local_state;
  if (!state) {
    local_state = OptimizerState<Real>(p);
    state = &local_state;
  }
  const int n_shards = cfg.shards;
  std::vector<ParamGrads<Real>> shard_grads(n_shards, ParamGrads<Real>(p.cfg, p.mode, p.dims));
  std::vector<RayWorkspace<Real>> shard_ws(n_shards);
  std::vector<RayLoss<Real>> shard_loss(n_shards);
  std::vector<std::map<int, LossBreakdown>> shard_stats(n_shards);
  ParamGrads<Real> total(p.cfg, p.mode, p.dims);

  Rng order_rng(cfg.seed);
  const auto t0 = std::chrono::steady_clock::now();
  std::uint64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg, epoch);
    shuffle(rays, order_rng);
    std::map<int, LossBreakdown> epoch_stats;
    for (std::size_t begin = 0; begin < rays.size(); begin += cfg.batch_rays, ++step) {
      const std::size_t end = std::min(rays.size(), begin + static_cast<std::size_t>(cfg.batch_rays));
      const std::size_t batch = end - begin;
      const std::size_t per_shard = (batch + n_shards - 1) / n_shards;
      parallel_for(n_shards, cfg.threads, [&](int s) {
        ParamGrads<Real>& g = shard_grads[s];
        g.set_zero();
        shard_stats[s].clear();
        Rng rng(detail::splitmix64(cfg.seed ^ detail::splitmix64(step * 1315423911ull + static_cast<std::uint64_t>(s))));
        const std::size_t lo = begin + std::min(batch, per_shard * s);
        const std::size_t hi = begin + std::min(batch, per_shard * (s + 1));
        for (std::size_t k = lo; k < hi; ++k) {
          const detail::RayRef& rr = rays[k];
          const SceneDataset& ds = datasets[rr.dataset];
          const Camera& cam = ds.cameras[rr.image];
          const Image& img = ds.images[rr.image];
          const int row = static_cast<int>(rr.pixel / img.width);
          const int col = static_cast<int>(rr.pixel % img.width);
          const Rgb<Real> bg = to_rgb<Real>(ds.background);
          const float* px = img.at(row, col);
          const Rgb<Real> gt{static_cast<Real>(px[0]), static_cast<Real>(px[1]), static_cast<Real>(px[2])};
          trace_ray(p, camera_ray(cam, row, col), ds.label, cfg.n_samples, &rng, bg, shard_ws[s]);
          ray_loss(shard_ws[s].result, shard_ws[s].samples, gt, cfg.loss, batch, shard_loss[s]);
          backprop_ray(p, bg, shard_loss[s].upstream(), shard_ws[s], g, cfg.trainable);
          LossBreakdown raw = shard_loss[s].terms;
          raw.mse *= static_cast<double>(batch);
          raw.dist *= static_cast<double>(batch);
          raw.ent *= static_cast<double>(batch);
          raw.total *= static_cast<double>(batch);
          shard_stats[s][ds.label] += raw;
        }
      });
      // Deterministic reduction in shard order.
      total.set_zero();
      for (int s = 0; s < n_shards; ++s) {
        auto add = [](std::span<Real> dst, std::span<const Real> src) {
          for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
        };
        std::vector<std::span<const Real>> src;
        shard_grads[s].for_each([&](const std::string&, std::span<const Real> v, const std::vector<std::size_t>&) {
          src.push_back(v);
        });
        std::size_t idx = 0;
        total.for_each([&](const std::string&, std::span<Real> v, const std::vector<std::size_t>&) {
          add(v, src[idx++]);
        });
        for (const auto& [label, st] : shard_stats[s]) epoch_stats[label] += st;
      }
      adam_step(p, total, *state, lr, cfg.adam, cfg.trainable);
    }

    if (!sink) continue;
    std::map<int, std::vector<double>> val;
    for (const ValidationView& v : validation) {
      RenderOptions ro;
      ro.n_samples = cfg.n_samples;
      ro.threads = cfg.threads;
      ro.chunk = cfg.render_chunk;
      ro.background = v.background;
      val[v.label].push_back(psnr(render_image(p, v.camera, v.label, ro).image, v.image));
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (const auto& [label, st] : epoch_stats) {
      EpochLog e;
      e.epoch = epoch;
      e.scene_label = label;
      const double n = static_cast<double>(std::max<std::size_t>(st.rays, 1));
      e.loss.mse = st.mse / n;
      e.loss.dist = st.dist / n;
      e.loss.ent = st.ent / n;
      e.loss.total = st.total / n;
      e.loss.rays = st.rays;
      e.val_psnr = val.count(label) ? mean_of(val[label]) : std::numeric_limits<double>::quiet_NaN();
      e.lr = lr;
      e.wall_s = wall;
      sink(e);
    }
  }
}

// --- Generative replay -------------------------------------------------------

// Images of previously learned scenes rendered by the current model, one
// dataset per previous label.
struct ReplaySet {
  std::vector<SceneDataset> scenes;

  std::size_t image_count() const {
    std::size_t n = 0;
    for (const auto& s : scenes) n += s.size();
    return n;
  }
};

inline int default_replay_k(std::size_t new_images, std::size_t previous_scenes) {
  if (previous_scenes == 0) return 0;
  return std::max(1, static_cast<int>(new_images / previous_scenes));
}

// Draws k indices from a pool of n: a seeded permutation, cycled if k > n.
inline std::vector<std::size_t> draw_cameras(std::size_t n, int k, Rng& rng) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  shuffle(perm, rng);
  std::vector<std::size_t> out;
  for (int i = 0; i < k; ++i) out.push_back(perm[static_cast<std::size_t>(i) % n]);
  return out;
}

// Renders every registered label from k cameras: drawn from `new_cameras`
// (online) or from that label's stored camera set (offline). Rendered
// images are quantized to 8 bits, the precision of the on-disk cache.
inline ReplaySet build_replay_set(const Checkpoint& ck, std::span<const Camera> new_cameras, ReplayMode mode, int k,
                                  Rng& rng, const RenderOptions& base = {}) {
  ReplaySet rs;
  if (mode == ReplayMode::None || ck.params.label_registry.empty()) return rs;
  if (k < 1) throw ValidationError("replay: k must be >= 1");
  for (int label : ck.params.label_registry) {
    const auto stored = ck.scenes.find(label);
    std::span<const Camera> pool = new_cameras;
    if (mode == ReplayMode::Offline) {
      if (stored == ck.scenes.end() || stored->second.cameras.empty()) {
        throw MissingCameraError("offline replay: no stored cameras for label " + std::to_string(label));
      }
      pool = stored->second.cameras;
    }
    if (pool.empty()) throw ValidationError("online replay: the new scene has no cameras");
    SceneDataset ds;
    ds.label = label;
    if (stored != ck.scenes.end()) ds.background = stored->second.background;
    RenderOptions ro = base;
    ro.background = ds.background;
    ro.features.reset();
    for (std::size_t idx : draw_cameras(pool.size(), k, rng)) {
      Image img = render_image(ck.params, pool[idx], label, ro).image;
      quantize_8bit(img);
      ds.images.push_back(std::move(img));
      ds.cameras.push_back(pool[idx]);
    }
    rs.scenes.push_back(std::move(ds));
  }
  return rs;
}

// replay/<label>/<i>.png plus replay/<label>/cameras.json (transforms format).
inline void write_replay_cache(const std::filesystem::path& dir, const ReplaySet& rs) {
  for (const auto& ds : rs.scenes) {
    const auto sub = dir / std::to_string(ds.label);
    std::vector<std::string> paths;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      paths.push_back("./" + std::to_string(i));
      write_png(sub / (std::to_string(i) + ".png"), ds.images[i]);
    }
    write_json(sub / "cameras.json", cameras_to_manifest(ds.cameras, paths));
  }
}

struct AddSceneOptions {
  TrainConfig train;
  std::optional<std::filesystem::path> replay_cache;
  RenderOptions render;  // replay rendering (samples and threads are taken from `train`)
};

struct AddSceneResult {
  ReplaySet replay;
  int replay_k = 0;
};

// Registers the new label, replays every previous scene and trains on the
// new scene together with the replayed images. Replay images are rendered
// before the new label is registered.
inline AddSceneResult continual_add_scene(Checkpoint& ck, const SceneDataset& new_ds, const AddSceneOptions& opt,
                                          const LogSink& sink = {}, std::vector<ValidationView> validation = {}) {
  const TrainConfig& cfg = opt.train;
  validate(cfg);
  validate(new_ds);
  if (new_ds.size() == 0) throw ValidationError("add-scene: the new scene has no images");
  if (ck.params.has_label(new_ds.label)) {
    throw DuplicateLabelError("label " + std::to_string(new_ds.label) + " is already registered");
  }
  AddSceneResult res;
  const std::size_t n_prev = ck.params.label_registry.size();
  if (n_prev > 0 && cfg.replay_mode != ReplayMode::None) {
    res.replay_k = cfg.replay_k > 0 ? cfg.replay_k : default_replay_k(new_ds.size(), n_prev);
    Rng rng(detail::splitmix64(cfg.seed ^ 0x5EED5EEDull));
    RenderOptions ro = opt.render;
    ro.n_samples = cfg.n_samples;
    ro.threads = cfg.threads;
    ro.chunk = cfg.render_chunk;
    res.replay = build_replay_set(ck, new_ds.cameras, cfg.replay_mode, res.replay_k, rng, ro);
    if (opt.replay_cache) write_replay_cache(*opt.replay_cache, res.replay);
  }

  ck.params.label_registry.push_back(new_ds.label);
  std::vector<SceneDataset> data;
  data.push_back(new_ds);
  for (const auto& r : res.replay.scenes) data.push_back(r);
  train_scene(ck.params, std::span<const SceneDataset>(data), cfg, sink, std::move(validation));
  ck.scenes[new_ds.label] = StoredScene{new_ds.cameras, new_ds.background};

  std::ostringstream h;
  h << "add-scene label=" << new_ds.label << " images=" << new_ds.size() << " replay=" << to_string(cfg.replay_mode)
    << " k=" << res.replay_k << " epochs=" << cfg.epochs << " seed=" << cfg.seed;
  ck.history.push_back(h.str());
  return res;
}

// Fine-tunes only the color MLP on restyled images of an existing scene.
// Hash tables and the density MLP are left bit-identical.
template <typename Real>
void style_finetune(ModelParams<Real>& p, const SceneDataset& styled, TrainConfig cfg, const LogSink& sink = {},
                    std::vector<ValidationView> validation = {}) {
  require_label(p.label_registry, styled.label);
  cfg.trainable = Trainable::ColorOnly;
  train_scene(p, std::span<const SceneDataset>(&styled, 1), cfg, sink, std::move(validation));
}

}  // namespace cngp
