#pragma once

// Image-quality metrics, held-out evaluation reports and per-patch scene
// feature extraction.

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cngp/image_io.hpp"
#include "cngp/renderer.hpp"
#include "cngp/scene_data.hpp"

namespace cngp {

inline void require_same_shape(const Image& a, const Image& b, const char* what) {
  if (a.width != b.width || a.height != b.height || a.rgb.size() != b.rgb.size()) {
    throw ValidationError(std::string(what) + ": image shapes differ");
  }
}

inline double mean_squared_error(const Image& a, const Image& b) {
  require_same_shape(a, b, "mse");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.rgb.size(); ++i) {
    const double d = static_cast<double>(a.rgb[i]) - static_cast<double>(b.rgb[i]);
    acc += d * d;
  }
  return a.rgb.empty() ? 0.0 : acc / static_cast<double>(a.rgb.size());
}

// -10 log10(mse) over all channels; +inf for identical images.
inline double psnr(const Image& pred, const Image& gt) {
  require_same_shape(pred, gt, "psnr");
  const double mse = mean_squared_error(pred, gt);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(mse);
}

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

inline std::vector<double> gray(const Image& img) {
  std::vector<double> g(img.pixel_count());
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] = (static_cast<double>(img.rgb[3 * i]) + img.rgb[3 * i + 1] + img.rgb[3 * i + 2]) / 3.0;
  }
  return g;
}

// Gaussian-windowed SSIM on the channel-mean image, averaged over every
// window position that fits entirely inside the image. The separable window
// is applied as two 1-D passes.
inline double ssim(const Image& a, const Image& b, const SsimOptions& opt = {}) {
  require_same_shape(a, b, "ssim");
  const int w = opt.window;
  if (a.width < w || a.height < w) throw ValidationError("ssim: image smaller than the window");
  std::vector<double> kernel(w);
  double ksum = 0.0;
  for (int i = 0; i < w; ++i) {
    const double d = i - (w - 1) / 2.0;
    kernel[i] = std::exp(-d * d / (2.0 * opt.sigma * opt.sigma));
    ksum += kernel[i];
  }
  for (double& k : kernel) k /= ksum;

  const std::vector<double> x = gray(a), y = gray(b);
  const int W = a.width, H = a.height;
  const int ow = W - w + 1, oh = H - w + 1;
  auto filter = [&](const std::vector<double>& src) {
    std::vector<double> tmp(static_cast<std::size_t>(H) * ow, 0.0);
    for (int r = 0; r < H; ++r) {
      for (int c = 0; c < ow; ++c) {
        double acc = 0.0;
        for (int k = 0; k < w; ++k) acc += kernel[k] * src[static_cast<std::size_t>(r) * W + c + k];
        tmp[static_cast<std::size_t>(r) * ow + c] = acc;
      }
    }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow, 0.0);
    for (int r = 0; r < oh; ++r) {
      for (int c = 0; c < ow; ++c) {
        double acc = 0.0;
        for (int k = 0; k < w; ++k) acc += kernel[k] * tmp[static_cast<std::size_t>(r + k) * ow + c];
        out[static_cast<std::size_t>(r) * ow + c] = acc;
      }
    }
    return out;
  };
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mu_x = filter(x), mu_y = filter(y), e_xx = filter(xx), e_yy = filter(yy), e_xy = filter(xy);
  const double c1 = std::pow(opt.k1 * opt.dynamic_range, 2);
  const double c2 = std::pow(opt.k2 * opt.dynamic_range, 2);
  double acc = 0.0;
  for (std::size_t i = 0; i < mu_x.size(); ++i) {
    const double mx = mu_x[i], my = mu_y[i];
    const double vx = e_xx[i] - mx * mx, vy = e_yy[i] - my * my, cxy = e_xy[i] - mx * my;
    acc += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
  }
  return acc / static_cast<double>(mu_x.size());
}

struct ViewScore {
  std::string name;
  double psnr = 0.0;
  double psnr_8bit = 0.0;
  double ssim = 0.0;
};

struct SceneScore {
  int label = 0;
  std::vector<ViewScore> views;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
};

struct EvalReport {
  std::vector<SceneScore> scenes;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  std::string fingerprint;
};

inline double mean_of(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

struct EvalScene {
  int label = 0;
  const SceneDataset* views = nullptr;
};

template <typename Real>
EvalReport evaluate(const ModelParams<Real>& p, const std::vector<EvalScene>& scenes, RenderOptions opt,
                    const std::string& fingerprint = {}) {
  EvalReport rep;
  rep.fingerprint = fingerprint;
  std::vector<double> all_psnr, all_ssim;
  for (const EvalScene& s : scenes) {
    require_label(p.label_registry, s.label);
    SceneScore sc;
    sc.label = s.label;
    opt.background = s.views->background;
    std::vector<double> ps, ss;
    for (std::size_t v = 0; v < s.views->size(); ++v) {
      const RenderOutput r = render_image(p, s.views->cameras[v], s.label, opt);
      Image quantized = r.image;
      quantize_8bit(quantized);
      ViewScore vs;
      vs.name = "view_" + std::to_string(v);
      vs.psnr = psnr(r.image, s.views->images[v]);
      vs.psnr_8bit = psnr(quantized, s.views->images[v]);
      vs.ssim = ssim(r.image, s.views->images[v]);
      ps.push_back(vs.psnr);
      ss.push_back(vs.ssim);
      sc.views.push_back(vs);
    }
    sc.mean_psnr = mean_of(ps);
    sc.mean_ssim = mean_of(ss);
    all_psnr.insert(all_psnr.end(), ps.begin(), ps.end());
    all_ssim.insert(all_ssim.end(), ss.begin(), ss.end());
    rep.scenes.push_back(std::move(sc));
  }
  rep.mean_psnr = mean_of(all_psnr);
  rep.mean_ssim = mean_of(all_ssim);
  return rep;
}

// PSNR may be +inf, which JSON cannot carry; it is written as "inf".
inline nlohmann::json metric_json(double v) {
  if (std::isinf(v)) return "inf";
  return v;
}

inline nlohmann::json to_json(const EvalReport& rep) {
  nlohmann::json j;
  j["scenes"] = nlohmann::json::array();
  for (const auto& s : rep.scenes) {
    nlohmann::json views = nlohmann::json::array();
    for (const auto& v : s.views) {
      views.push_back({{"name", v.name},
                       {"psnr", metric_json(v.psnr)},
                       {"psnr_8bit", metric_json(v.psnr_8bit)},
                       {"ssim", v.ssim}});
    }
    j["scenes"].push_back({{"label", s.label},
                           {"views", views},
                           {"mean_psnr", metric_json(s.mean_psnr)},
                           {"mean_ssim", s.mean_ssim}});
  }
  j["overall"] = {{"mean_psnr", metric_json(rep.mean_psnr)}, {"mean_ssim", rep.mean_ssim}};
  j["fingerprint"] = rep.fingerprint;
  return j;
}

inline std::string format_metric(double v) {
  if (std::isinf(v)) return "inf";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline std::string to_csv(const EvalReport& rep) {
  std::ostringstream os;
  os << "scene_label,view,psnr,psnr_8bit,ssim\n";
  for (const auto& s : rep.scenes) {
    for (const auto& v : s.views) {
      os << s.label << "," << v.name << "," << format_metric(v.psnr) << "," << format_metric(v.psnr_8bit) << ","
         << format_metric(v.ssim) << "\n";
    }
  }
  return os.str();
}

// Rows: one per (label, patch); each row is the mean scene feature over a
// patch_size x patch_size tile. Partial tiles at the border are dropped.
struct FeatureMatrix {
  int feature_dim = 0;
  std::vector<int> labels;
  std::vector<int> patch_ids;
  std::vector<std::vector<float>> rows;

  std::size_t size() const { return rows.size(); }
};

struct FeatureView {
  int label = 0;
  Camera camera;
};

template <typename Real>
FeatureMatrix dump_features(const ModelParams<Real>& p, const std::vector<FeatureView>& views, int patch_size,
                            RenderOptions opt, FeatureReduction reduction = FeatureReduction::MaxWeight) {
  if (patch_size < 1) throw ValidationError("dump_features: patch size must be >= 1");
  FeatureMatrix fm;
  const int G = p.dims.feature_dim;
  fm.feature_dim = G;
  opt.features = reduction;
  for (const FeatureView& v : views) {
    const RenderOutput rendered = render_image(p, v.camera, v.label, opt);
    const int px = v.camera.width / patch_size, py = v.camera.height / patch_size;
    for (int pr = 0; pr < py; ++pr) {
      for (int pc = 0; pc < px; ++pc) {
        std::vector<double> acc(G, 0.0);
        for (int r = pr * patch_size; r < (pr + 1) * patch_size; ++r) {
          for (int c = pc * patch_size; c < (pc + 1) * patch_size; ++c) {
            const float* f = &rendered.features[(static_cast<std::size_t>(r) * v.camera.width + c) * G];
            for (int g = 0; g < G; ++g) acc[g] += f[g];
          }
        }
        std::vector<float> row(G);
        for (int g = 0; g < G; ++g) row[g] = static_cast<float>(acc[g] / (double(patch_size) * patch_size));
        fm.labels.push_back(v.label);
        fm.patch_ids.push_back(pr * px + pc);
        fm.rows.push_back(std::move(row));
      }
    }
  }
  return fm;
}

inline std::string to_csv(const FeatureMatrix& fm) {
  std::ostringstream os;
  os << "label,patch";
  for (int g = 0; g < fm.feature_dim; ++g) os << ",f" << g;
  os << "\n" << std::setprecision(9);
  for (std::size_t i = 0; i < fm.size(); ++i) {
    os << fm.labels[i] << "," << fm.patch_ids[i];
    for (float v : fm.rows[i]) os << "," << v;
    os << "\n";
  }
  return os.str();
}

// Mean pairwise L2 distance between rows with equal labels and between rows
// with different labels.
struct FeatureSeparation {
  double same_label = 0.0;
  double cross_label = 0.0;
};

inline FeatureSeparation feature_separation(const FeatureMatrix& fm) {
  double same = 0.0, cross = 0.0;
  std::size_t n_same = 0, n_cross = 0;
  for (std::size_t i = 0; i < fm.size(); ++i) {
    for (std::size_t j = i + 1; j < fm.size(); ++j) {
      double d2 = 0.0;
      for (int g = 0; g < fm.feature_dim; ++g) {
        const double d = static_cast<double>(fm.rows[i][g]) - fm.rows[j][g];
        d2 += d * d;
      }
      if (fm.labels[i] == fm.labels[j]) {
        same += std::sqrt(d2);
        ++n_same;
      } else {
        cross += std::sqrt(d2);
        ++n_cross;
      }
    }
  }
  return {n_same ? same / n_same : 0.0, n_cross ? cross / n_cross : 0.0};
}

}  // namespace cngp
