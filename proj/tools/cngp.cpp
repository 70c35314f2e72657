// cngp: command-line driver for the conditioned hash-grid radiance field.
//
// Exit codes: 0 success, 1 I/O or other failure, 2 usage, 3 validation or
// format error, 4 numerical error. Failures print one line to stderr:
//   error: kind=<Kind> code=<n> message="<text>"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cngp/checkpoint.hpp"
#include "cngp/config.hpp"
#include "cngp/metrics.hpp"
#include "cngp/renderer.hpp"
#include "cngp/scene_data.hpp"
#include "cngp/trainer.hpp"

#ifndef CNGP_VERSION
#define CNGP_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using namespace cngp;

namespace {

struct Globals {
  int threads = 1;
  std::string config;
  std::optional<std::uint64_t> seed;
};

std::string quote(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c == '\n' ? ' ' : c);
  }
  return out;
}

void fail_line(const std::string& kind, int code, const std::string& msg) {
  std::cerr << "error: kind=" << kind << " code=" << code << " message=\"" << quote(msg) << "\"" << std::endl;
}

fs::path resolve_existing(const std::string& p, const char* what) {
  const fs::path abs = fs::absolute(p);
  if (!fs::exists(abs)) throw ValidationError(std::string(what) + " does not exist: " + abs.string());
  return abs;
}

RunConfig run_config(const Globals& g) {
  std::istringstream none;
  RunConfig rc = g.config.empty() ? parse_run_config(none, "defaults") : load_run_config(resolve_existing(g.config, "config"));
  if (g.seed) rc.train.seed = *g.seed;
  rc.train.threads = g.threads;
  return rc;
}

Color parse_color(const std::vector<float>& v) {
  if (v.size() != 3) throw ValidationError("--background needs three values");
  for (float x : v) {
    if (!(x >= 0.0f && x <= 1.0f)) throw ValidationError("--background values must lie in [0,1]");
  }
  return {v[0], v[1], v[2]};
}

// "<dir>:<label>" or "<path>:<label>".
std::pair<fs::path, int> split_label_arg(const std::string& s) {
  const auto pos = s.rfind(':');
  if (pos == std::string::npos || pos == 0 || pos + 1 == s.size()) {
    throw ValidationError("expected <path>:<label>, got '" + s + "'");
  }
  int label = 0;
  try {
    std::size_t used = 0;
    label = std::stoi(s.substr(pos + 1), &used);
    if (used != s.size() - pos - 1) throw std::invalid_argument(s);
  } catch (const std::exception&) {
    throw ValidationError("label in '" + s + "' is not an integer");
  }
  return {resolve_existing(s.substr(0, pos), "path"), label};
}

LogSink csv_sink(std::ofstream& os) {
  return [&os](const EpochLog& e) {
    os << to_csv_row(e) << "\n";
    os.flush();
  };
}

LogSink make_sink(const std::string& path, std::optional<std::ofstream>& file) {
  if (path.empty()) {
    return [](const EpochLog& e) { std::cerr << "epoch " << e.epoch << " label " << e.scene_label << " loss " << e.loss.total
                                             << " val_psnr " << format_metric(e.val_psnr) << "\n"; };
  }
  file.emplace(fs::absolute(path));
  if (!*file) throw Error("cannot write log " + path);
  *file << epoch_csv_header() << "\n";
  return csv_sink(*file);
}

std::vector<ValidationView> held_out_views(const fs::path& dir, const SceneDataset& train, const RunConfig& rc) {
  std::vector<ValidationView> v;
  try {
    if (!fs::exists(dir / "transforms_test.json")) return v;
    SceneDataset test = load_dataset(dir, train.label, "test", train.background, rc.near, rc.far);
    v.push_back({test.label, test.cameras.front(), test.images.front(), test.background});
  } catch (const FormatError&) {
  }
  return v;
}

struct MakeSynthetic {
  std::string spec, out;
  std::uint64_t seed = 0;
  int label = 0;
};

int cmd_make_synthetic(const MakeSynthetic& a) {
  const SceneSpec spec = parse_scene_spec(read_json(resolve_existing(a.spec, "scene spec")));
  const DatasetSplits splits = make_procedural_scene(spec.field, spec.n_train, spec.n_test, spec.options, a.seed, a.label);
  write_dataset(fs::absolute(a.out), splits);
  std::cout << "wrote " << splits.train.size() << " train and " << splits.test.size() << " test views to "
            << fs::absolute(a.out).string() << "\n";
  return 0;
}

struct TrainArgs {
  std::string scene, out, log;
  int label = 0;
  int repeat = 1;
  std::vector<float> background{1.0f, 1.0f, 1.0f};
};

int cmd_train(const Globals& g, const TrainArgs& a) {
  const RunConfig rc = run_config(g);
  if (a.repeat < 1) throw ValidationError("--repeat must be >= 1");
  const fs::path dir = resolve_existing(a.scene, "scene directory");
  const fs::path out = fs::absolute(a.out);
  const SceneDataset ds = load_dataset(dir, a.label, "train", parse_color(a.background), rc.near, rc.far);
  std::optional<std::ofstream> logf;
  const LogSink sink = make_sink(a.log, logf);

  Checkpoint ck = make_checkpoint(init_params<float>(rc.grid, rc.mode, rc.net, rc.train.seed), rc.profile);
  ck.history.push_back("config " + fingerprint(rc));
  AddSceneOptions opt;
  opt.train = rc.train;
  const auto val = held_out_views(dir, ds, rc);
  continual_add_scene(ck, ds, opt, sink, val);
  for (int r = 1; r < a.repeat; ++r) {
    TrainConfig tc = rc.train;
    tc.seed = rc.train.seed + static_cast<std::uint64_t>(r);
    train_scene(ck.params, std::span<const SceneDataset>(&ds, 1), tc, sink, val);
    ck.history.push_back("repeat label=" + std::to_string(a.label) + " pass=" + std::to_string(r + 1));
  }
  save_checkpoint(ck, out);
  std::cout << "saved " << out.string() << " (" << ck.params.parameter_count() << " parameters)\n";
  return 0;
}

struct AddSceneArgs {
  std::string ckpt, scene, out, mode = "online", log, replay_cache;
  int label = 0;
  int k = 0;
  bool no_replay = false;
  std::vector<float> background{1.0f, 1.0f, 1.0f};
};

int cmd_add_scene(const Globals& g, const AddSceneArgs& a) {
  RunConfig rc = run_config(g);
  const fs::path ckpt = resolve_existing(a.ckpt, "checkpoint");
  const fs::path dir = resolve_existing(a.scene, "scene directory");
  const fs::path out = a.out.empty() ? ckpt : fs::absolute(a.out);
  Checkpoint ck = load_checkpoint(ckpt);
  const SceneDataset ds = load_dataset(dir, a.label, "train", parse_color(a.background), rc.near, rc.far);
  std::optional<std::ofstream> logf;
  const LogSink sink = make_sink(a.log, logf);

  AddSceneOptions opt;
  opt.train = rc.train;
  opt.train.replay_mode = a.no_replay ? ReplayMode::None : replay_mode_from_string(a.mode);
  if (a.k > 0) opt.train.replay_k = a.k;
  if (!a.replay_cache.empty()) opt.replay_cache = fs::absolute(a.replay_cache);
  const AddSceneResult res = continual_add_scene(ck, ds, opt, sink, held_out_views(dir, ds, rc));
  save_checkpoint(ck, out);
  std::cout << "added label " << a.label << " with " << res.replay.image_count() << " replay images; saved "
            << out.string() << "\n";
  return 0;
}

struct RenderArgs {
  std::string ckpt, camera_json, out, depth;
  int label = 0;
  int frame = 0;
  int width = 64, height = 64;
  std::vector<float> background{1.0f, 1.0f, 1.0f};
};

int cmd_render(const Globals& g, const RenderArgs& a) {
  const RunConfig rc = run_config(g);
  const Checkpoint ck = load_checkpoint(resolve_existing(a.ckpt, "checkpoint"));
  require_label(ck.params.label_registry, a.label);
  const auto cams = load_cameras(resolve_existing(a.camera_json, "camera manifest"), a.width, a.height, rc.near, rc.far);
  if (a.frame < 0 || a.frame >= static_cast<int>(cams.size())) {
    throw ValidationError("--frame " + std::to_string(a.frame) + " out of range (manifest has " +
                          std::to_string(cams.size()) + " frames)");
  }
  RenderOptions ro;
  ro.n_samples = rc.train.n_samples;
  ro.threads = g.threads;
  ro.chunk = rc.train.render_chunk;
  ro.background = parse_color(a.background);
  const RenderOutput r = render_image(ck.params, cams[a.frame], a.label, ro);
  write_png(fs::absolute(a.out), r.image);
  if (!a.depth.empty()) write_depth(fs::absolute(a.depth), r.depth);
  std::cout << "wrote " << fs::absolute(a.out).string() << "\n";
  return 0;
}

struct EvalArgs {
  std::string ckpt, out, csv, split = "test";
  std::vector<std::string> scenes;
  std::vector<float> background{1.0f, 1.0f, 1.0f};
};

int cmd_eval(const Globals& g, const EvalArgs& a) {
  const RunConfig rc = run_config(g);
  const Checkpoint ck = load_checkpoint(resolve_existing(a.ckpt, "checkpoint"));
  const Color bg = parse_color(a.background);
  std::vector<SceneDataset> data;
  for (const auto& s : a.scenes) {
    const auto [dir, label] = split_label_arg(s);
    require_label(ck.params.label_registry, label);
    data.push_back(load_dataset(dir, label, a.split, bg, rc.near, rc.far));
  }
  std::vector<EvalScene> es;
  for (const auto& d : data) es.push_back({d.label, &d});
  RenderOptions ro;
  ro.n_samples = rc.train.n_samples;
  ro.threads = g.threads;
  ro.chunk = rc.train.render_chunk;
  const EvalReport rep = evaluate(ck.params, es, ro, fingerprint(rc));
  const std::string json = to_json(rep).dump(2);
  if (a.out.empty()) {
    std::cout << json << "\n";
  } else {
    write_json(fs::absolute(a.out), to_json(rep));
  }
  if (!a.csv.empty()) {
    std::ofstream os(fs::absolute(a.csv));
    if (!os) throw Error("cannot write " + a.csv);
    os << to_csv(rep);
  }
  std::cerr << "mean psnr " << format_metric(rep.mean_psnr) << " dB, mean ssim " << rep.mean_ssim << "\n";
  return 0;
}

struct StyleArgs {
  std::string ckpt, styled, out, log;
  int label = 0;
  std::vector<float> background{1.0f, 1.0f, 1.0f};
};

int cmd_style(const Globals& g, const StyleArgs& a) {
  const RunConfig rc = run_config(g);
  const fs::path ckpt = resolve_existing(a.ckpt, "checkpoint");
  const fs::path dir = resolve_existing(a.styled, "styled scene directory");
  const fs::path out = a.out.empty() ? ckpt : fs::absolute(a.out);
  Checkpoint ck = load_checkpoint(ckpt);
  require_label(ck.params.label_registry, a.label);
  const SceneDataset ds = load_dataset(dir, a.label, "train", parse_color(a.background), rc.near, rc.far);
  std::optional<std::ofstream> logf;
  style_finetune(ck.params, ds, rc.train, make_sink(a.log, logf));
  ck.history.push_back("style-finetune label=" + std::to_string(a.label) + " epochs=" + std::to_string(rc.train.epochs));
  save_checkpoint(ck, out);
  std::cout << "saved " << out.string() << "\n";
  return 0;
}

struct FeatureArgs {
  std::string ckpt, out, reduction = "max";
  std::vector<std::string> views;
  int patch = 8;
  int frame = 0;
  int width = 64, height = 64;
};

int cmd_dump_features(const Globals& g, const FeatureArgs& a) {
  const RunConfig rc = run_config(g);
  const Checkpoint ck = load_checkpoint(resolve_existing(a.ckpt, "checkpoint"));
  std::vector<FeatureView> views;
  for (const auto& v : a.views) {
    const auto [path, label] = split_label_arg(v);
    require_label(ck.params.label_registry, label);
    const fs::path manifest = fs::is_directory(path) ? manifest_path_for(path, "test") : path;
    const auto cams = load_cameras(manifest, a.width, a.height, rc.near, rc.far);
    if (a.frame < 0 || a.frame >= static_cast<int>(cams.size())) throw ValidationError("--frame out of range");
    views.push_back({label, cams[a.frame]});
  }
  FeatureReduction red = FeatureReduction::MaxWeight;
  if (a.reduction == "mean") red = FeatureReduction::WeightedMean;
  else if (a.reduction != "max") throw ValidationError("--reduction must be max or mean");
  RenderOptions ro;
  ro.n_samples = rc.train.n_samples;
  ro.threads = g.threads;
  ro.chunk = rc.train.render_chunk;
  const FeatureMatrix fm = dump_features(ck.params, views, a.patch, ro, red);
  std::ofstream os(fs::absolute(a.out));
  if (!os) throw Error("cannot write " + a.out);
  os << to_csv(fm);
  const FeatureSeparation sep = feature_separation(fm);
  std::cerr << fm.size() << " patches; mean same-label distance " << sep.same_label << ", cross-label "
            << sep.cross_label << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conditioned hash-grid radiance field: continual multi-scene training and rendering"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--threads", g.threads, "Worker threads (results do not depend on this)")->check(CLI::Range(1, 1024));
  app.add_option("--config", g.config, "INI run configuration (default: built-in desk profile)");
  app.add_option("--seed", g.seed, "Override the configured seed");
  app.set_version_flag("--version",
                       std::string("cngp ") + CNGP_VERSION + " (checkpoint format " +
                           std::to_string(kCheckpointVersion) + ", depth raster " +
                           std::to_string(kDepthRasterVersion) + ")");
  app.fallthrough();

  MakeSynthetic ms;
  auto* c_ms = app.add_subcommand("make-synthetic", "Render a procedural scene description into a dataset");
  c_ms->add_option("--spec", ms.spec, "Scene description JSON")->required();
  c_ms->add_option("--out", ms.out, "Output dataset directory")->required();
  c_ms->add_option("--seed", ms.seed, "Camera placement seed");

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "Train the first scene into a new checkpoint");
  c_tr->add_option("--scene", tr.scene, "Dataset directory")->required();
  c_tr->add_option("--label", tr.label, "Scene label")->required()->check(CLI::NonNegativeNumber);
  c_tr->add_option("--out", tr.out, "Checkpoint path")->required();
  c_tr->add_option("--log", tr.log, "CSV training log");
  c_tr->add_option("--repeat", tr.repeat, "Learn the scene this many times in sequence")->check(CLI::PositiveNumber);
  c_tr->add_option("--background", tr.background, "Background color r g b")->expected(3);

  AddSceneArgs as;
  auto* c_as = app.add_subcommand("add-scene", "Learn a new scene with generative replay of the previous ones");
  c_as->add_option("--ckpt", as.ckpt, "Input checkpoint")->required();
  c_as->add_option("--scene", as.scene, "Dataset directory of the new scene")->required();
  c_as->add_option("--label", as.label, "New scene label")->required()->check(CLI::NonNegativeNumber);
  c_as->add_option("--mode", as.mode, "Replay camera source")->check(CLI::IsMember({"online", "offline"}));
  c_as->add_option("--k", as.k, "Replay images per previous scene")->check(CLI::PositiveNumber);
  c_as->add_flag("--no-replay", as.no_replay, "Disable replay (forgetting ablation)");
  c_as->add_option("--out", as.out, "Output checkpoint (default: overwrite --ckpt)");
  c_as->add_option("--log", as.log, "CSV training log");
  c_as->add_option("--replay-cache", as.replay_cache, "Directory for the rendered replay images");
  c_as->add_option("--background", as.background, "Background color r g b")->expected(3);

  RenderArgs rd;
  auto* c_rd = app.add_subcommand("render", "Render one camera of a transforms manifest");
  c_rd->add_option("--ckpt", rd.ckpt, "Checkpoint")->required();
  c_rd->add_option("--label", rd.label, "Scene label")->required();
  c_rd->add_option("--camera-json", rd.camera_json, "Transforms-format camera manifest")->required();
  c_rd->add_option("--out", rd.out, "Output PNG")->required();
  c_rd->add_option("--depth", rd.depth, "Optional depth raster output");
  c_rd->add_option("--frame", rd.frame, "Frame index in the manifest");
  c_rd->add_option("--width", rd.width, "Image width")->check(CLI::PositiveNumber);
  c_rd->add_option("--height", rd.height, "Image height")->check(CLI::PositiveNumber);
  c_rd->add_option("--background", rd.background, "Background color r g b")->expected(3);

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "PSNR/SSIM report over held-out views");
  c_ev->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
  c_ev->add_option("--scenes", ev.scenes, "Dataset directories as <dir>:<label>")->required();
  c_ev->add_option("--split", ev.split, "Dataset split to evaluate");
  c_ev->add_option("--out", ev.out, "EvalReport JSON (default: stdout)");
  c_ev->add_option("--csv", ev.csv, "Per-view CSV table");
  c_ev->add_option("--background", ev.background, "Background color r g b")->expected(3);

  StyleArgs st;
  auto* c_st = app.add_subcommand("style-finetune", "Fine-tune only the color MLP on restyled images");
  c_st->add_option("--ckpt", st.ckpt, "Checkpoint")->required();
  c_st->add_option("--label", st.label, "Existing scene label")->required();
  c_st->add_option("--styled", st.styled, "Dataset directory with restyled images")->required();
  c_st->add_option("--out", st.out, "Output checkpoint (default: overwrite --ckpt)");
  c_st->add_option("--log", st.log, "CSV training log");
  c_st->add_option("--background", st.background, "Background color r g b")->expected(3);

  FeatureArgs fa;
  auto* c_fa = app.add_subcommand("dump-features", "Per-patch scene features as CSV");
  c_fa->add_option("--ckpt", fa.ckpt, "Checkpoint")->required();
  c_fa->add_option("--views", fa.views, "Camera manifests or dataset directories as <path>:<label>")->required();
  c_fa->add_option("--out", fa.out, "Output CSV")->required();
  c_fa->add_option("--patch", fa.patch, "Patch size in pixels")->check(CLI::PositiveNumber);
  c_fa->add_option("--frame", fa.frame, "Frame index in each manifest");
  c_fa->add_option("--width", fa.width, "Image width")->check(CLI::PositiveNumber);
  c_fa->add_option("--height", fa.height, "Image height")->check(CLI::PositiveNumber);
  c_fa->add_option("--reduction", fa.reduction, "Per-pixel feature: max (highest weight sample) or mean");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail_line("UsageError", 2, e.what());
    return 2;
  }

  try {
    if (*c_ms) return cmd_make_synthetic(ms);
    if (*c_tr) return cmd_train(g, tr);
    if (*c_as) return cmd_add_scene(g, as);
    if (*c_rd) return cmd_render(g, rd);
    if (*c_ev) return cmd_eval(g, ev);
    if (*c_st) return cmd_style(g, st);
    if (*c_fa) return cmd_dump_features(g, fa);
  } catch (const NumericalError& e) {
    fail_line(e.kind(), 4, e.what());
    return 4;
  } catch (const ValidationError& e) {
    fail_line(e.kind(), 3, e.what());
    return 3;
  } catch (const FormatError& e) {
    fail_line(e.kind(), 3, e.what());
    return 3;
  } catch (const Error& e) {
    fail_line(e.kind(), 1, e.what());
    return 1;
  } catch (const std::exception& e) {
    fail_line("Error", 1, e.what());
    return 1;
  }
  return 2;
}
