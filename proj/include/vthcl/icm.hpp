#pragma once

// Instance correspondence maps: every location of one pathway's final-tap
// activation is projected through that pathway's head (the fc layers act as
// 1x1x1 convolutions) and compared with the other pathway's pooled, projected,
// unit-normalized embedding.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "vthcl/encoder.hpp"
#include "vthcl/errors.hpp"
#include "vthcl/model.hpp"
#include "vthcl/projection_head.hpp"
#include "vthcl/synth_data.hpp"

namespace vthcl {

struct CorrespondenceMap {
  Tensor<double> values;      // [T', H', W']
  Tensor<double> normalized;  // min-max over the whole clip, in [0,1]
  int instance_id = -1;
  Pathway reference = Pathway::fast;  // pathway that supplied the reference embedding
  std::string tap;
};

// (v - min) / (max - min) over the whole tensor; all zeros when flat.
inline Tensor<double> minmax_normalize(const Tensor<double>& v) {
  Tensor<double> out(v.shape());
  if (v.empty()) return out;
  const auto [lo, hi] = std::minmax_element(v.storage().begin(), v.storage().end());
  const double mn = *lo, mx = *hi;
  if (!(mx > mn)) return out;
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - mn) / (mx - mn);
  return out;
}

// values[t,h,w] = <normalize(phi(activation[:,t,h,w])), normalize(reference)>.
// With normalize_locations off the location embedding is used as is.
template <typename T>
CorrespondenceMap compute_icm(const Tensor<T>& activation, std::span<const T> reference, const ProjectionHead<T>& head,
                              bool normalize_locations = true) {
  if (activation.rank() != 4) throw ShapeError("icm activation must be [C,T,H,W], got " + shape_str(activation.shape()));
  const std::size_t C = activation.dim(0), P = activation.size() / std::max<std::size_t>(C, 1);
  if (C != head.in_dim())
    throw ShapeError("icm: activation has " + std::to_string(C) + " channels, head expects " +
                     std::to_string(head.in_dim()));
  if (reference.size() != head.out_dim())
    throw ShapeError("icm: reference has dimension " + std::to_string(reference.size()) + ", head outputs " +
                     std::to_string(head.out_dim()));
  double ref_norm = 0;
  for (T r : reference) ref_norm += static_cast<double>(r) * r;
  ref_norm = std::sqrt(ref_norm);
  if (!(ref_norm > 0)) throw DegenerateInputError("icm: zero reference embedding");

  Tensor<T> locations({P, C});  // one row per (t,h,w)
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t p = 0; p < P; ++p) locations[p * C + c] = activation[c * P + p];
  const auto projected = head_forward(head, std::move(locations)).output;

  CorrespondenceMap m;
  m.values = Tensor<double>({activation.dim(1), activation.dim(2), activation.dim(3)});
  const std::size_t d = head.out_dim();
  for (std::size_t p = 0; p < P; ++p) {
    double dot = 0, n2 = 0;
    for (std::size_t k = 0; k < d; ++k) {
      const double z = projected[p * d + k];
      dot += z * reference[k];
      n2 += z * z;
    }
    dot /= ref_norm;
    if (normalize_locations) dot = n2 > 0 ? dot / std::sqrt(n2) : 0.0;
    m.values[p] = dot;
  }
  m.normalized = minmax_normalize(m.values);
  return m;
}

// Map on the grid of `map_pathway`, referenced by the other pathway's pooled
// embedding, for one tempo pair. Uses running statistics throughout.
template <typename T>
CorrespondenceMap icm_for_pair(const Model<T>& model, const TempoPair& pair, const std::string& tap,
                               Pathway reference, bool normalize_locations = true) {
  const Pathway on = reference == Pathway::fast ? Pathway::slow : Pathway::fast;
  const auto& clip_on = on == Pathway::slow ? pair.slow : pair.fast;
  const auto& clip_ref = reference == Pathway::slow ? pair.slow : pair.fast;
  const auto fp_on = encode(clip_on, model.encoder(on));
  const auto fp_ref = encode(clip_ref, model.encoder(reference));
  if (!fp_on.activations.count(tap) || !fp_ref.pooled.count(tap))
    throw ConfigError("icm: tap '" + tap + "' is not a tap of the checkpoint");
  const auto& head_ref = model.heads.of(reference).at(tap);
  const auto& head_on = model.heads.of(on).at(tap);
  const auto& pooled = fp_ref.pooled.at(tap);
  Tensor<T> x({1, pooled.size()}, std::vector<T>(pooled.begin(), pooled.end()));
  const auto ref = head_forward(head_ref, std::move(x)).output;
  auto m = compute_icm(fp_on.activations.at(tap), ref.span(), head_on, normalize_locations);
  m.instance_id = pair.instance_id;
  m.reference = reference;
  m.tap = tap;
  return m;
}

// Map cell i of a stride-s grid is centred on input pixel s*i: every stage is
// a stride-2, pad-1 convolution, so output o is centred on input 2o.
inline double grid_stride(std::size_t full, std::size_t cells) {
  return static_cast<double>(full) / static_cast<double>(cells);
}

// Block-coverage downsampling of a [T,H,W] mask to [T,h,w]: a cell is inside
// when at least `threshold` of the pixels in its stride-sized block, centred
// on the cell, are object pixels.
inline Tensor<double> downsample_mask(const Tensor<float>& mask, std::size_t h, std::size_t w, double threshold = 0.1) {
  if (mask.rank() != 3) throw ShapeError("mask must be [T,H,W], got " + shape_str(mask.shape()));
  const std::size_t T_ = mask.dim(0), H = mask.dim(1), W = mask.dim(2);
  if (h == 0 || w == 0 || h > H || w > W) throw ShapeError("mask cannot be downsampled to the map grid");
  const double sy = grid_stride(H, h), sx = grid_stride(W, w);
  auto span = [](std::size_t i, double s, std::size_t full) {
    const double c = s * static_cast<double>(i);
    const auto lo = static_cast<std::ptrdiff_t>(std::ceil(c - s / 2));
    const auto hi = static_cast<std::ptrdiff_t>(std::ceil(c + s / 2));
    return std::pair<std::size_t, std::size_t>(std::max<std::ptrdiff_t>(lo, 0),
                                               std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(full)));
  };
  Tensor<double> out({T_, h, w});
  for (std::size_t t = 0; t < T_; ++t)
    for (std::size_t i = 0; i < h; ++i) {
      const auto [y0, y1] = span(i, sy, H);
      for (std::size_t j = 0; j < w; ++j) {
        const auto [x0, x1] = span(j, sx, W);
        double cover = 0;
        for (std::size_t y = y0; y < y1; ++y)
          for (std::size_t x = x0; x < x1; ++x) cover += mask.at(t, y, x);
        cover /= static_cast<double>((y1 - y0) * (x1 - x0));
        out.at(t, i, j) = cover >= threshold ? 1.0 : 0.0;
      }
    }
  return out;
}

inline constexpr double kLocalizationEpsilon = 1e-6;

// mean(map | inside) / max(mean(map | outside), eps), for a binary mask on the
// map grid.
inline double localization_score(const Tensor<double>& map, const Tensor<double>& mask_on_grid) {
  require_shape(mask_on_grid.shape(), map.shape(), "localization mask");
  double in = 0, out = 0;
  std::size_t n_in = 0, n_out = 0;
  for (std::size_t i = 0; i < map.size(); ++i) {
    if (mask_on_grid[i] > 0.5) {
      in += map[i];
      ++n_in;
    } else {
      out += map[i];
      ++n_out;
    }
  }
  if (n_in == 0) throw DegenerateInputError("localization_score: object mask is empty on the map grid");
  const double mean_in = in / static_cast<double>(n_in);
  const double mean_out = n_out ? out / static_cast<double>(n_out) : 0.0;
  return mean_in / std::max(mean_out, kLocalizationEpsilon);
}

inline double localization_score(const CorrespondenceMap& m, const Tensor<float>& mask, double threshold = 0.1) {
  return localization_score(m.normalized, downsample_mask(mask, m.values.dim(1), m.values.dim(2), threshold));
}

// Bilinear upsampling of one [h,w] plane to [H,W]; cell i sits at input
// pixel (H/h) * i, edges clamp.
inline Tensor<double> upsample_bilinear(std::span<const double> plane, std::size_t h, std::size_t w, std::size_t H,
                                        std::size_t W) {
  Tensor<double> out({H, W});
  auto coord = [](std::size_t o, std::size_t in, std::size_t outn, std::size_t& i0, std::size_t& i1, double& f) {
    double s = static_cast<double>(o) / grid_stride(outn, in);
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    i0 = static_cast<std::size_t>(std::floor(s));
    i1 = std::min(i0 + 1, in - 1);
    f = s - static_cast<double>(i0);
  };
  for (std::size_t y = 0; y < H; ++y) {
    std::size_t y0, y1;
    double fy;
    coord(y, h, H, y0, y1, fy);
    for (std::size_t x = 0; x < W; ++x) {
      std::size_t x0, x1;
      double fx;
      coord(x, w, W, x0, x1, fx);
      const double top = plane[y0 * w + x0] * (1 - fx) + plane[y0 * w + x1] * fx;
      const double bot = plane[y1 * w + x0] * (1 - fx) + plane[y1 * w + x1] * fx;
      out.at(y, x) = top * (1 - fy) + bot * fy;
    }
  }
  return out;
}

struct RenderConfig {
  double blend_floor = 0.0;  // overlay weight where the map is 0
  double blend_peak = 0.6;   // overlay weight where the map is 1
};

// Overlay the normalized map in red on each source frame. Returns [H,W,3]
// frames with values in [0,1].
inline std::vector<Tensor<float>> render_icm(const CorrespondenceMap& m, const Tensor<float>& frames,
                                             const RenderConfig& cfg = {}) {
  if (frames.rank() != 4) throw ShapeError("render_icm: frames must be [T,H,W,C]");
  const std::size_t T_ = m.normalized.dim(0), h = m.normalized.dim(1), w = m.normalized.dim(2);
  if (frames.dim(0) != T_)
    throw ShapeError("render_icm: map has " + std::to_string(T_) + " frames, source has " +
                     std::to_string(frames.dim(0)));
  const std::size_t H = frames.dim(1), W = frames.dim(2), C = frames.dim(3);
  std::vector<Tensor<float>> out;
  for (std::size_t t = 0; t < T_; ++t) {
    const auto heat = upsample_bilinear(m.normalized.row(t), h, w, H, W);
    Tensor<float> img({H, W, 3});
    for (std::size_t p = 0; p < H * W; ++p) {
      const double a = cfg.blend_floor + (cfg.blend_peak - cfg.blend_floor) * heat[p];
      for (std::size_t c = 0; c < 3; ++c) {
        const double src = frames[(t * H * W + p) * C + std::min(c, C - 1)];
        const double overlay = c == 0 ? 1.0 : 0.0;
        img[p * 3 + c] = static_cast<float>((1 - a) * src + a * overlay);
      }
    }
    out.push_back(std::move(img));
  }
  return out;
}

// Binary PPM (P6), 8 bits per channel.
inline void write_ppm(const std::filesystem::path& path, const Tensor<float>& rgb) {
  if (rgb.rank() != 3 || rgb.dim(2) != 3) throw ShapeError("write_ppm expects [H,W,3]");
  std::string data = "P6\n" + std::to_string(rgb.dim(1)) + " " + std::to_string(rgb.dim(0)) + "\n255\n";
  for (float v : rgb.storage())
    data.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f))));
  std::ofstream f(path, std::ios::binary);
  if (!f.write(data.data(), static_cast<std::streamsize>(data.size())))
    throw IoError("cannot write '" + path.string() + "'");
}

inline std::vector<std::filesystem::path> write_frames(const std::filesystem::path& dir, const std::string& prefix,
                                                       const std::vector<Tensor<float>>& frames) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  std::vector<std::filesystem::path> paths;
  char name[64];
  for (std::size_t t = 0; t < frames.size(); ++t) {
    std::snprintf(name, sizeof name, "%s_%03zu.ppm", prefix.c_str(), t);
    paths.push_back(dir / name);
    write_ppm(paths.back(), frames[t]);
  }
  return paths;
}

}  // namespace vthcl
