#pragma once

// Run configuration: INI file -> grid, network, training and rendering
// settings. Unknown sections or keys are rejected. The environment variable
// CNGP_SEED overrides train.seed.

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <set>
#include <sstream>
#include <string>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "cngp/encoding.hpp"
#include "cngp/field_net.hpp"
#include "cngp/trainer.hpp"

namespace cngp {

struct RunConfig {
  std::string profile = "desk";
  HashGridConfig grid;
  ConditioningMode mode = ConditioningMode::CoordLabelPsiDirPsi;
  NetDims net;
  TrainConfig train;
  double near = kDefaultNear;
  double far = kDefaultFar;
};

// Desk-scale defaults.
inline RunConfig desk_profile() {
  RunConfig rc;
  rc.grid.levels = 8;
  rc.grid.log2_table_size = 14;
  rc.grid.features = 2;
  rc.grid.n_min = 16;
  rc.grid.n_max = 256;
  rc.net = NetDims{32, 7, 2};
  return rc;
}

// Full-size settings; too slow for a CPU run.
inline RunConfig paper_profile() {
  RunConfig rc;
  rc.profile = "paper";
  rc.grid.levels = 16;
  rc.grid.log2_table_size = 19;
  rc.grid.features = 4;
  rc.grid.n_min = 16;
  rc.grid.n_max = 2048;
  rc.net = NetDims{64, 15, 2};
  rc.train.batch_rays = 10000;
  rc.train.lr = 2e-3;
  rc.train.epochs = 30;
  return rc;
}

inline void validate(const RunConfig& rc) {
  validate(rc.grid);
  validate(rc.train);
  if (rc.net.width < 1 || rc.net.feature_dim < 1 || rc.net.pe_alpha < 1) {
    throw ValidationError("config: model.width, model.feature_dim and model.pe_alpha must be >= 1");
  }
  if (!(rc.near > 0.0 && rc.near < rc.far)) throw ValidationError("config: require 0 < render.near < render.far");
}

namespace detail {

inline const std::map<std::string, std::set<std::string>>& config_schema() {
  static const std::map<std::string, std::set<std::string>> schema{
      {"profile", {"name"}},
      {"grid", {"levels", "log2_table_size", "features", "n_min", "n_max"}},
      {"model", {"width", "feature_dim", "pe_alpha", "mode"}},
      {"train", {"batch_rays", "lr", "epochs", "n_samples", "lr_decay", "seed", "threads", "shards"}},
      {"loss", {"lambda_ent", "lambda_dist", "entropy_normalized", "distortion_prefactor"}},
      {"replay", {"mode", "k"}},
      {"render", {"chunk", "near", "far"}},
  };
  return schema;
}

template <typename T>
void read_key(const boost::property_tree::ptree& pt, const std::string& key, T& out) {
  const auto v = pt.get_optional<std::string>(key);
  if (!v) return;
  std::istringstream is(*v);
  T parsed{};
  if constexpr (std::is_same_v<T, bool>) {
    std::string s;
    is >> s;
    if (s == "true" || s == "1") parsed = true;
    else if (s == "false" || s == "0") parsed = false;
    else throw ValidationError("config: " + key + " must be true or false, got '" + *v + "'");
  } else {
    is >> parsed;
    if (is.fail() || !(is >> std::ws).eof()) {
      throw ValidationError("config: cannot parse " + key + " = '" + *v + "'");
    }
  }
  out = parsed;
}

}  // namespace detail

inline RunConfig parse_run_config(std::istream& in, const std::string& where = "config") {
  boost::property_tree::ptree pt;
  try {
    boost::property_tree::read_ini(in, pt);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw FormatError(where + ": " + e.what());
  }
  const auto& schema = detail::config_schema();
  for (const auto& [section, body] : pt) {
    const auto it = schema.find(section);
    if (it == schema.end()) throw ValidationError(where + ": unknown section [" + section + "]");
    if (body.empty() && !body.data().empty()) {
      throw ValidationError(where + ": key '" + section + "' must be inside a section");
    }
    for (const auto& [key, value] : body) {
      if (!it->second.count(key)) throw ValidationError(where + ": unknown key " + section + "." + key);
    }
  }

  std::string profile = pt.get<std::string>("profile.name", "desk");
  RunConfig rc;
  if (profile == "desk") rc = desk_profile();
  else if (profile == "paper") rc = paper_profile();
  else throw ValidationError(where + ": unknown profile '" + profile + "' (expected desk or paper)");

  using detail::read_key;
  read_key(pt, "grid.levels", rc.grid.levels);
  read_key(pt, "grid.log2_table_size", rc.grid.log2_table_size);
  read_key(pt, "grid.features", rc.grid.features);
  read_key(pt, "grid.n_min", rc.grid.n_min);
  read_key(pt, "grid.n_max", rc.grid.n_max);
  read_key(pt, "model.width", rc.net.width);
  read_key(pt, "model.feature_dim", rc.net.feature_dim);
  read_key(pt, "model.pe_alpha", rc.net.pe_alpha);
  if (auto m = pt.get_optional<std::string>("model.mode")) rc.mode = conditioning_mode_from_string(*m);
  read_key(pt, "train.batch_rays", rc.train.batch_rays);
  read_key(pt, "train.lr", rc.train.lr);
  read_key(pt, "train.epochs", rc.train.epochs);
  read_key(pt, "train.n_samples", rc.train.n_samples);
  read_key(pt, "train.lr_decay", rc.train.lr_decay);
  read_key(pt, "train.seed", rc.train.seed);
  read_key(pt, "train.threads", rc.train.threads);
  read_key(pt, "train.shards", rc.train.shards);
  read_key(pt, "loss.lambda_ent", rc.train.loss.lambda_ent);
  read_key(pt, "loss.lambda_dist", rc.train.loss.lambda_dist);
  read_key(pt, "loss.entropy_normalized", rc.train.loss.entropy_normalized);
  read_key(pt, "loss.distortion_prefactor", rc.train.loss.distortion_prefactor);
  if (auto m = pt.get_optional<std::string>("replay.mode")) rc.train.replay_mode = replay_mode_from_string(*m);
  read_key(pt, "replay.k", rc.train.replay_k);
  read_key(pt, "render.chunk", rc.train.render_chunk);
  read_key(pt, "render.near", rc.near);
  read_key(pt, "render.far", rc.far);

  if (const char* env = std::getenv("CNGP_SEED")) {
    try {
      std::size_t used = 0;
      rc.train.seed = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument(env);
    } catch (const std::exception&) {
      throw ValidationError(std::string("CNGP_SEED must be a non-negative integer, got '") + env + "'");
    }
  }
  validate(rc);
  return rc;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open config " + path.string());
  return parse_run_config(is, path.string());
}

// Canonical text form; the fingerprint hashes it.
inline std::string canonical(const RunConfig& rc) {
  std::ostringstream os;
  os << std::setprecision(17) << "profile=" << rc.profile << ";grid=" << rc.grid.levels << ","
     << rc.grid.log2_table_size << "," << rc.grid.features << "," << rc.grid.n_min << "," << rc.grid.n_max
     << ";mode=" << to_string(rc.mode) << ";net=" << rc.net.width << "," << rc.net.feature_dim << ","
     << rc.net.pe_alpha << ";train=" << rc.train.batch_rays << "," << rc.train.lr << "," << rc.train.epochs << ","
     << rc.train.n_samples << "," << rc.train.lr_decay << "," << rc.train.seed << "," << rc.train.shards
     << ";loss=" << rc.train.loss.lambda_ent << "," << rc.train.loss.lambda_dist << ","
     << rc.train.loss.entropy_normalized << "," << rc.train.loss.distortion_prefactor
     << ";replay=" << to_string(rc.train.replay_mode) << "," << rc.train.replay_k << ";clip=" << rc.near << ","
     << rc.far;
  return os.str();
}

inline std::string fingerprint(const RunConfig& rc) {
  std::ostringstream os;
  os << rc.profile << "-" << std::hex << std::setw(16) << std::setfill('0') << fnv1a(canonical(rc));
  return os.str();
}

}  // namespace cngp
