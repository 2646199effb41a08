#pragma once

// Reference implementations used only by tests. They share no arithmetic
// with the library: direct loops, no log-sum-exp shifting, no im2col.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;

inline double dot(const Vec& a, const Vec& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

inline double cosine_over_t(const Vec& a, const Vec& b, double t) { return dot(a, b) / (norm(a) * norm(b)) / t; }

// -log softmax(logits)[0], computed from raw exponentials.
inline double softmax_xent_first(const Vec& logits) {
  double sum = 0;
  for (double l : logits) sum += std::exp(l);
  return -std::log(std::exp(logits[0]) / sum);
}

inline double info_nce(const Vec& q, const Vec& pos, const std::vector<Vec>& negs, double t) {
  Vec logits{cosine_over_t(q, pos, t)};
  for (const auto& n : negs) logits.push_back(cosine_over_t(q, n, t));
  return softmax_xent_first(logits);
}

// Bank row after k momentum updates with the same unit embedding x, no
// renormalization: m^k x0 + (1 - m^k) x.
inline Vec bank_closed_form(const Vec& x0, const Vec& x, double m, int k) {
  const double mk = std::pow(m, k);
  Vec out(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) out[i] = mk * x0[i] + (1 - mk) * x[i];
  return out;
}

// Direct 3D convolution, kernel (kt,3,3), stride (1,2,2), zero spatial pad 1,
// edge-replicated temporal pad. x[Ci][T][H][W], w[Co][Ci][kt][3][3].
inline std::vector<double> conv3d(const std::vector<double>& x, std::size_t ci, std::size_t T, std::size_t H,
                                  std::size_t W, const std::vector<double>& w, std::size_t co, std::size_t kt) {
  const std::size_t Ho = (H + 1) / 2, Wo = (W + 1) / 2;
  std::vector<double> y(co * T * Ho * Wo, 0.0);
  const long half = static_cast<long>(kt) / 2;
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t i = 0; i < Ho; ++i)
        for (std::size_t j = 0; j < Wo; ++j) {
          double s = 0;
          for (std::size_t c = 0; c < ci; ++c)
            for (std::size_t a = 0; a < kt; ++a)
              for (int b = 0; b < 3; ++b)
                for (int d = 0; d < 3; ++d) {
                  long tt = static_cast<long>(t) + static_cast<long>(a) - half;
                  tt = std::clamp(tt, 0L, static_cast<long>(T) - 1);
                  const long yy = 2 * static_cast<long>(i) + b - 1, xx = 2 * static_cast<long>(j) + d - 1;
                  if (yy < 0 || xx < 0 || yy >= static_cast<long>(H) || xx >= static_cast<long>(W)) continue;
                  s += w[(((o * ci + c) * kt + a) * 3 + b) * 3 + d] * x[((c * T + tt) * H + yy) * W + xx];
                }
          y[((o * T + t) * Ho + i) * Wo + j] = s;
        }
  return y;
}

// Central difference of f at x[i].
template <typename F>
double central_difference(F&& f, double& x, double h) {
  const double x0 = x;
  x = x0 + h;
  const double fp = f();
  x = x0 - h;
  const double fm = f();
  x = x0;
  return (fp - fm) / (2 * h);
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("vthcl_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace oracle
