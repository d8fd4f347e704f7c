#pragma once

// Cosine similarity and the cross-modal NT-Xent loss with its analytic
// gradient.
//
// A batch holds N co-located pairs. Rows 0..N-1 of the stacked batch are the
// RGB embeddings, rows N..2N-1 the DEM embeddings; the positive of row i is
// row (i + N) mod 2N. Each anchor contributes
//
//   l_i = -log( exp(s_ip / t) / sum_{k in D(i)} exp(s_ik / t) )
//
// with s the cosine similarity and D(i) the denominator set:
//   All2N          every k != i (2N - 1 terms)
//   CrossModalOnly every embedding of the other modality (N terms, the
//                  positive included)
// The loss is the mean of l_i over all 2N anchors.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "croco/common.hpp"
#include "croco/linalg.hpp"

namespace croco {

enum class NegativeSet { All2N, CrossModalOnly };

inline std::string to_string(NegativeSet n) { return n == NegativeSet::All2N ? "all_2N" : "cross_modal_only"; }

inline NegativeSet negative_set_from_string(std::string_view s) {
  if (s == "all_2N" || s == "all_2n") return NegativeSet::All2N;
  if (s == "cross_modal_only") return NegativeSet::CrossModalOnly;
  throw Error("unknown negative set '" + std::string(s) + "'");
}

struct LossConfig {
  double temperature = 0.5;
  NegativeSet negative_set = NegativeSet::All2N;

  void validate() const {
    if (!(temperature > 0.0) || !std::isfinite(temperature)) throw Error("temperature must be positive");
  }
};

/// Cosine similarity, accumulated in double.
template <class T>
double sim(std::span<const T> u, std::span<const T> v) {
  if (u.size() != v.size() || u.empty()) throw Error("sim: vectors must be non-empty and of equal length");
  // Scale by the max magnitude first so huge or tiny vectors neither overflow
  // nor underflow.
  double su = 0.0, sv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    su = std::max(su, std::abs(static_cast<double>(u[i])));
    sv = std::max(sv, std::abs(static_cast<double>(v[i])));
  }
  if (su == 0.0 || sv == 0.0) throw Error("sim: zero vector has no direction");
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double a = static_cast<double>(u[i]) / su;
    const double b = static_cast<double>(v[i]) / sv;
    dot += a * b;
    nu += a * a;
    nv += b * b;
  }
  return std::clamp(dot / std::sqrt(nu * nv), -1.0, 1.0);
}

template <class T>
double sim(const std::vector<T>& u, const std::vector<T>& v) {
  return sim(std::span<const T>(u), std::span<const T>(v));
}

struct LossValue {
  double loss = 0.0;
  std::vector<double> per_anchor;  // 2N entries: RGB anchors then DEM anchors
};

template <class T>
struct LossGradient {
  LossValue value;
  Mat<T> d_rgb;
  Mat<T> d_dem;
};

namespace detail {

struct NtXentWork {
  Mat<double> unit;    // 2N x D, rows normalized
  Vec<double> norms;   // original row norms
  Mat<double> logits;  // 2N x 2N, s_ik / t
  int n = 0;
};

template <class T>
NtXentWork prepare_nt_xent(const Mat<T>& rgb, const Mat<T>& dem, const LossConfig& cfg) {
  cfg.validate();
  if (rgb.rows() != dem.rows() || rgb.cols() != dem.cols())
    throw Error("nt_xent: RGB and DEM embedding batches differ in shape");
  if (rgb.rows() < 2) throw Error("nt_xent: need at least two pairs");
  if (rgb.cols() < 1) throw Error("nt_xent: empty embeddings");
  NtXentWork w;
  w.n = static_cast<int>(rgb.rows());
  const int two_n = 2 * w.n;
  w.unit.resize(two_n, rgb.cols());
  w.unit.topRows(w.n) = rgb.template cast<double>();
  w.unit.bottomRows(w.n) = dem.template cast<double>();
  w.norms.resize(two_n);
  for (int i = 0; i < two_n; ++i) {
    if (!w.unit.row(i).allFinite()) throw Error("nt_xent: non-finite embedding");
    const double norm = w.unit.row(i).stableNorm();
    if (!(norm > 0.0) || !std::isfinite(norm)) throw Error("nt_xent: zero embedding at row " + std::to_string(i));
    w.norms(i) = norm;
    // Pre-scale by the largest entry so squaring cannot overflow.
    const double big = w.unit.row(i).cwiseAbs().maxCoeff();
    w.unit.row(i) /= big;
    w.unit.row(i) /= w.unit.row(i).norm();
  }
  w.logits = (w.unit * w.unit.transpose()) / cfg.temperature;
  return w;
}

inline bool in_denominator(int i, int k, int n, NegativeSet mode) {
  if (k == i) return false;
  if (mode == NegativeSet::All2N) return true;
  return (i < n) != (k < n);
}

inline int positive_of(int i, int n) { return i < n ? i + n : i - n; }

}  // namespace detail

template <class T>
LossValue nt_xent(const Mat<T>& rgb, const Mat<T>& dem, const LossConfig& cfg) {
  const auto w = detail::prepare_nt_xent(rgb, dem, cfg);
  const int n = w.n, two_n = 2 * n;
  LossValue out;
  out.per_anchor.resize(two_n);
  double total = 0.0;
  for (int i = 0; i < two_n; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < two_n; ++k)
      if (detail::in_denominator(i, k, n, cfg.negative_set)) m = std::max(m, w.logits(i, k));
    double s = 0.0;
    for (int k = 0; k < two_n; ++k)
      if (detail::in_denominator(i, k, n, cfg.negative_set)) s += std::exp(w.logits(i, k) - m);
    const double li = std::max(0.0, m + std::log(s) - w.logits(i, detail::positive_of(i, n)));
    out.per_anchor[i] = li;
    total += li;
  }
  out.loss = total / two_n;
  return out;
}

/// Loss plus its gradient with respect to both (unnormalized) embedding sets.
template <class T>
LossGradient<T> nt_xent_grad(const Mat<T>& rgb, const Mat<T>& dem, const LossConfig& cfg) {
  const auto w = detail::prepare_nt_xent(rgb, dem, cfg);
  const int n = w.n, two_n = 2 * n;
  LossGradient<T> out;
  out.value.per_anchor.resize(two_n);

  // dL/dlogits
  Mat<double> g = Mat<double>::Zero(two_n, two_n);
  double total = 0.0;
  for (int i = 0; i < two_n; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < two_n; ++k)
      if (detail::in_denominator(i, k, n, cfg.negative_set)) m = std::max(m, w.logits(i, k));
    double s = 0.0;
    for (int k = 0; k < two_n; ++k)
      if (detail::in_denominator(i, k, n, cfg.negative_set)) {
        g(i, k) = std::exp(w.logits(i, k) - m);
        s += g(i, k);
      }
    const int p = detail::positive_of(i, n);
    const double li = std::max(0.0, m + std::log(s) - w.logits(i, p));
    out.value.per_anchor[i] = li;
    total += li;
    g.row(i) /= s;
    g(i, p) -= 1.0;
  }
  out.value.loss = total / two_n;
  g /= static_cast<double>(two_n);

  // logits = U U^T / t  =>  dU = (G + G^T) U / t
  const Mat<double> d_unit = ((g + g.transpose()) * w.unit) / cfg.temperature;
  // u = z / |z|  =>  dz = (du - u (u . du)) / |z|
  Mat<double> dz(two_n, w.unit.cols());
  for (int i = 0; i < two_n; ++i) {
    const double proj = w.unit.row(i).dot(d_unit.row(i));
    dz.row(i) = (d_unit.row(i) - proj * w.unit.row(i)) / w.norms(i);
  }
  out.d_rgb = dz.topRows(n).template cast<T>();
  out.d_dem = dz.bottomRows(n).template cast<T>();
  return out;
}

}  // namespace croco
