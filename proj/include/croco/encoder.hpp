#pragma once

// Encoder branches: a convolutional backbone followed by a single affine
// projection into the 128-d contrastive space. The RGB and DEM branches are
// separate objects with separate parameter storage.
//
// Activations are kept channel-major over the whole batch ("CBHW"), so every
// 3x3 convolution is one GEMM against an im2col matrix of shape
// (C*9) x (B*H*W).

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <filesystem>
#include <numeric>
#include <optional>
#include <span>

#include <json.hpp>

#include "croco/common.hpp"
#include "croco/linalg.hpp"
#include "croco/raster.hpp"
#include "croco/sampling.hpp"

namespace croco {

inline constexpr int kEmbedDim = 128;
inline constexpr int kInputChannels = 3;
inline constexpr double kRgbInputShift = 0.5;
inline constexpr std::array<int, 4> kSupportedPatchSizes = {8, 16, 32, 64};

enum class Arch { Desk, Deep };

inline std::string to_string(Arch a) { return a == Arch::Desk ? "desk" : "deep"; }

inline Arch arch_from_string(std::string_view s) {
  if (s == "desk") return Arch::Desk;
  if (s == "deep") return Arch::Deep;
  throw Error("unknown architecture '" + std::string(s) + "'");
}

inline bool supported_patch_size(int p) {
  return std::find(kSupportedPatchSizes.begin(), kSupportedPatchSizes.end(), p) != kSupportedPatchSizes.end();
}

template <class T>
struct ParamBlock {
  std::string name;
  std::vector<int> shape;
  std::vector<T> value;

  bool operator==(const ParamBlock&) const = default;
};

/// One gradient (or optimizer state) vector per parameter block.
template <class T>
using BlockVectors = std::vector<std::vector<T>>;

/// Activation tensor laid out as [channel][batch][row][col].
template <class T>
struct Activations {
  int channels = 0, batch = 0, height = 0, width = 0;
  std::vector<T> data;

  std::size_t spatial() const { return static_cast<std::size_t>(batch) * height * width; }
};

namespace detail {

template <class T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

template <class T>
T silu(T x) {
  return x * sigmoid(x);
}

template <class T>
T silu_grad(T x) {
  const T s = sigmoid(x);
  return s * (T(1) + x * (T(1) - s));
}

inline int conv_out(int extent, int stride) { return (extent + 2 - 3) / stride + 1; }

/// cols[(c*9 + ky*3 + kx)][(b*Ho + oy)*Wo + ox] = in[c][b][oy*s - 1 + ky][ox*s - 1 + kx], zero padded.
template <class T>
void im2col(const Activations<T>& in, int stride, int ho, int wo, std::vector<T>& cols) {
  const std::size_t ncols = static_cast<std::size_t>(in.batch) * ho * wo;
  cols.assign(static_cast<std::size_t>(in.channels) * 9 * ncols, T(0));
  const std::size_t in_plane = static_cast<std::size_t>(in.height) * in.width;
  for (int c = 0; c < in.channels; ++c)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        T* dst = cols.data() + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * ncols;
        for (int b = 0; b < in.batch; ++b) {
          const T* src = in.data.data() + (static_cast<std::size_t>(c) * in.batch + b) * in_plane;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride - 1 + ky;
            T* row = dst + (static_cast<std::size_t>(b) * ho + oy) * wo;
            if (iy < 0 || iy >= in.height) continue;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride - 1 + kx;
              if (ix >= 0 && ix < in.width) row[ox] = src[static_cast<std::size_t>(iy) * in.width + ix];
            }
          }
        }
      }
}

template <class T>
void col2im(const std::vector<T>& cols, int stride, int ho, int wo, Activations<T>& out) {
  const std::size_t ncols = static_cast<std::size_t>(out.batch) * ho * wo;
  const std::size_t plane = static_cast<std::size_t>(out.height) * out.width;
  std::fill(out.data.begin(), out.data.end(), T(0));
  for (int c = 0; c < out.channels; ++c)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const T* src = cols.data() + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * ncols;
        for (int b = 0; b < out.batch; ++b) {
          T* dst = out.data.data() + (static_cast<std::size_t>(c) * out.batch + b) * plane;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride - 1 + ky;
            if (iy < 0 || iy >= out.height) continue;
            const T* row = src + (static_cast<std::size_t>(b) * ho + oy) * wo;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride - 1 + kx;
              if (ix >= 0 && ix < out.width) dst[static_cast<std::size_t>(iy) * out.width + ix] += row[ox];
            }
          }
        }
      }
}

}  // namespace detail

/// One branch (phi_RGB or phi_3D).
template <class T>
class EncoderBranch {
public:
  struct Conv {
    int in_channels = 0;
    int out_channels = 0;
    int stride = 1;
    std::size_t weight = 0;  // parameter block indices
    std::size_t bias = 0;
  };

  /// A stage is a stride-2 conv + activation followed by `residual` blocks of
  /// (conv, act, conv, +skip, act).
  struct Stage {
    std::size_t down;                      // index into convs_
    std::vector<std::array<std::size_t, 2>> residual;
  };

  EncoderBranch() = default;

  EncoderBranch(Modality modality, Arch arch) : modality_(modality), arch_(arch) {
    const bool deep = arch == Arch::Deep;
    const std::array<int, 4> widths = deep ? std::array<int, 4>{64, 128, 256, 512} : std::array<int, 4>{32, 64, 128, 256};
    const int residual_blocks = deep ? 2 : 0;
    int in_c = kInputChannels;
    for (std::size_t s = 0; s < widths.size(); ++s) {
      Stage stage;
      stage.down = add_conv("stage" + std::to_string(s) + ".down", in_c, widths[s], 2);
      for (int r = 0; r < residual_blocks; ++r) {
        const std::string base = "stage" + std::to_string(s) + ".res" + std::to_string(r);
        stage.residual.push_back(
            {add_conv(base + ".conv0", widths[s], widths[s], 1), add_conv(base + ".conv1", widths[s], widths[s], 1)});
      }
      stages_.push_back(std::move(stage));
      in_c = widths[s];
    }
    feature_dim_ = in_c;
    proj_weight_ = add_block("proj.weight", {kEmbedDim, feature_dim_});
    proj_bias_ = add_block("proj.bias", {kEmbedDim});
  }

  Modality modality() const { return modality_; }
  Arch arch() const { return arch_; }
  int feature_dim() const { return feature_dim_; }

  std::vector<ParamBlock<T>>& params() { return params_; }
  const std::vector<ParamBlock<T>>& params() const { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  BlockVectors<T> zeros_like() const {
    BlockVectors<T> out;
    for (const auto& p : params_) out.emplace_back(p.value.size(), T(0));
    return out;
  }

  template <class U>
  EncoderBranch<U> cast() const {
    EncoderBranch<U> out(modality_, arch_);
    for (std::size_t i = 0; i < params_.size(); ++i)
      out.params()[i].value.assign(params_[i].value.begin(), params_[i].value.end());
    return out;
  }

  bool operator==(const EncoderBranch& o) const {
    return modality_ == o.modality_ && arch_ == o.arch_ && params_ == o.params_;
  }

  // -------------------------------------------------------------------------
  // Forward / backward

  struct Cache {
    struct ConvRecord {
      Activations<T> input;
      Activations<T> pre;  // conv output before the nonlinearity
    };
    std::vector<ConvRecord> convs;     // indexed like convs_
    std::vector<Activations<T>> sums;  // residual pre-activation sums, flattened over stages
    Activations<T> last;               // backbone output
    Mat<T> features;                   // B x feature_dim
    int batch = 0;
  };

  /// Embeds a batch of patches; one unnormalized 128-vector per row.
  Mat<T> forward(std::span<const BasicPatch<T>> patches) const {
    Cache cache;
    return forward_impl(patches, cache, false);
  }

  std::vector<T> forward(const BasicPatch<T>& patch) const {
    const Mat<T> z = forward(std::span<const BasicPatch<T>>(&patch, 1));
    return {z.data(), z.data() + z.size()};
  }

  Mat<T> forward(std::span<const BasicPatch<T>> patches, Cache& cache) const {
    return forward_impl(patches, cache, true);
  }

  /// Alias used by the retrieval code, which is generic over encoders.
  Mat<float> encode(std::span<const Patch> patches) const
    requires std::same_as<T, float>
  {
    return forward(patches);
  }

  /// Gradients of the loss w.r.t. every parameter block, given dL/dz.
  BlockVectors<T> backward(const Cache& cache, const Mat<T>& d_embed) const {
    if (d_embed.rows() != cache.batch || d_embed.cols() != kEmbedDim) throw Error("backward: gradient shape mismatch");
    BlockVectors<T> grads = zeros_like();

    // Projection head.
    {
      MatMap<T> dw(grads[proj_weight_].data(), kEmbedDim, feature_dim_);
      dw.noalias() = d_embed.transpose() * cache.features;
      Eigen::Map<Vec<T>> db(grads[proj_bias_].data(), kEmbedDim);
      db = d_embed.colwise().sum().transpose();
    }
    ConstMatMap<T> w(params_[proj_weight_].value.data(), kEmbedDim, feature_dim_);
    const Mat<T> d_features = d_embed * w;  // B x F

    // Global average pool.
    Activations<T> grad = cache.last;
    {
      const std::size_t hw = static_cast<std::size_t>(grad.height) * grad.width;
      const T inv = T(1) / static_cast<T>(hw);
      for (int c = 0; c < grad.channels; ++c)
        for (int b = 0; b < grad.batch; ++b) {
          T* dst = grad.data.data() + (static_cast<std::size_t>(c) * grad.batch + b) * hw;
          std::fill(dst, dst + hw, d_features(b, c) * inv);
        }
    }

    std::size_t sum_index = cache.sums.size();
    for (std::size_t s = stages_.size(); s-- > 0;) {
      const Stage& stage = stages_[s];
      for (std::size_t r = stage.residual.size(); r-- > 0;) {
        const auto [c0, c1] = stage.residual[r];
        const Activations<T>& sum = cache.sums[--sum_index];
        for (std::size_t i = 0; i < grad.data.size(); ++i) grad.data[i] *= detail::silu_grad(sum.data[i]);
        // grad is now d(sum): flows to the skip input and through conv1.
        Activations<T> d_mid = conv_backward(convs_[c1], cache.convs[c1], grad, grads);
        const auto& pre0 = cache.convs[c0].pre;
        for (std::size_t i = 0; i < d_mid.data.size(); ++i) d_mid.data[i] *= detail::silu_grad(pre0.data[i]);
        const Activations<T> d_in = conv_backward(convs_[c0], cache.convs[c0], d_mid, grads);
        for (std::size_t i = 0; i < grad.data.size(); ++i) grad.data[i] += d_in.data[i];
      }
      const auto& rec = cache.convs[stage.down];
      for (std::size_t i = 0; i < grad.data.size(); ++i) grad.data[i] *= detail::silu_grad(rec.pre.data[i]);
      grad = conv_backward(convs_[stage.down], rec, grad, grads, /*need_input_grad=*/s > 0);
    }
    return grads;
  }

  /// Seeded initialization: fan-in scaled uniform weights, zero biases.
  void initialize(std::uint64_t seed) {
    Rng rng(Rng::combine(seed, modality_ == Modality::RGB ? 0x52474231u : 0x44454d31u));
    for (auto& block : params_) {
      const bool is_bias = block.shape.size() == 1;
      if (is_bias) {
        std::fill(block.value.begin(), block.value.end(), T(0));
        continue;
      }
      const int fan_in = std::accumulate(block.shape.begin() + 1, block.shape.end(), 1, std::multiplies<>());
      const bool projection = block.name == "proj.weight";
      const double bound = projection ? std::sqrt(1.0 / fan_in) : std::sqrt(6.0 / fan_in);
      for (auto& v : block.value) v = static_cast<T>(rng.uniform(-bound, bound));
    }
  }

private:
  std::size_t add_block(std::string name, std::vector<int> shape) {
    const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    params_.push_back({std::move(name), std::move(shape), std::vector<T>(n, T(0))});
    return params_.size() - 1;
  }

  std::size_t add_conv(const std::string& name, int in_c, int out_c, int stride) {
    Conv c;
    c.in_channels = in_c;
    c.out_channels = out_c;
    c.stride = stride;
    c.weight = add_block(name + ".weight", {out_c, in_c, 3, 3});
    c.bias = add_block(name + ".bias", {out_c});
    convs_.push_back(c);
    return convs_.size() - 1;
  }

  Activations<T> conv_forward(const Conv& conv, const Activations<T>& in) const {
    Activations<T> out;
    out.channels = conv.out_channels;
    out.batch = in.batch;
    out.height = detail::conv_out(in.height, conv.stride);
    out.width = detail::conv_out(in.width, conv.stride);
    std::vector<T> cols;
    detail::im2col(in, conv.stride, out.height, out.width, cols);
    const auto ncols = static_cast<Eigen::Index>(out.spatial());
    out.data.resize(static_cast<std::size_t>(out.channels) * ncols);
    ConstMatMap<T> w(params_[conv.weight].value.data(), conv.out_channels, conv.in_channels * 9);
    ConstMatMap<T> x(cols.data(), conv.in_channels * 9, ncols);
    MatMap<T> y(out.data.data(), conv.out_channels, ncols);
    y.noalias() = w * x;
    Eigen::Map<const Vec<T>> bias(params_[conv.bias].value.data(), conv.out_channels);
    y.colwise() += bias;
    return out;
  }

  /// Accumulates weight/bias gradients and returns d(input).
  Activations<T> conv_backward(const Conv& conv, const typename Cache::ConvRecord& rec, const Activations<T>& d_out,
                               BlockVectors<T>& grads, bool need_input_grad = true) const {
    const auto& in = rec.input;
    const int ho = d_out.height, wo = d_out.width;
    std::vector<T> cols;
    detail::im2col(in, conv.stride, ho, wo, cols);
    const auto ncols = static_cast<Eigen::Index>(d_out.spatial());
    ConstMatMap<T> dy(d_out.data.data(), conv.out_channels, ncols);
    ConstMatMap<T> x(cols.data(), conv.in_channels * 9, ncols);
    MatMap<T> dw(grads[conv.weight].data(), conv.out_channels, conv.in_channels * 9);
    dw.noalias() += dy * x.transpose();
    // Plain loop: Eigen's vectorized reduction over a Map peels to the
    // buffer's alignment, which would make sums depend on heap addresses.
    for (int o = 0; o < conv.out_channels; ++o) {
      const T* row = d_out.data.data() + static_cast<std::size_t>(o) * ncols;
      T s = 0;
      for (Eigen::Index i = 0; i < ncols; ++i) s += row[i];
      grads[conv.bias][o] += s;
    }

    Activations<T> d_in{in.channels, in.batch, in.height, in.width, {}};
    if (!need_input_grad) return d_in;
    d_in.data.resize(in.data.size());
    ConstMatMap<T> w(params_[conv.weight].value.data(), conv.out_channels, conv.in_channels * 9);
    std::vector<T> d_cols(cols.size());
    MatMap<T> dx(d_cols.data(), conv.in_channels * 9, ncols);
    dx.noalias() = w.transpose() * dy;
    detail::col2im(d_cols, conv.stride, ho, wo, d_in);
    return d_in;
  }

  Activations<T> to_activations(std::span<const BasicPatch<T>> patches) const {
    if (patches.empty()) throw Error("forward: empty batch");
    const int p = patches.front().size;
    if (!supported_patch_size(p)) throw Error("forward: unsupported patch size " + std::to_string(p));
    Activations<T> a{kInputChannels, static_cast<int>(patches.size()), p, p, {}};
    a.data.resize(static_cast<std::size_t>(kInputChannels) * a.batch * p * p);
    const std::size_t plane = static_cast<std::size_t>(p) * p;
    // RGB arrives in [0, 1]; shifting it to [-0.5, 0.5] keeps the first layer's
    // response from being dominated by the shared mean, which otherwise makes
    // every patch embed to nearly the same direction at initialization.
    const T shift = modality_ == Modality::RGB ? T(kRgbInputShift) : T(0);
    for (int b = 0; b < a.batch; ++b) {
      const auto& patch = patches[b];
      if (patch.size != p || patch.channels != kInputChannels || patch.data.size() != patch.numel())
        throw Error("forward: inconsistent patch shapes in batch");
      for (int c = 0; c < kInputChannels; ++c) {
        const T* src = patch.data.data() + c * plane;
        T* dst = a.data.data() + (static_cast<std::size_t>(c) * a.batch + b) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          if (!std::isfinite(src[i])) throw Error("forward: non-finite input");
          dst[i] = src[i] - shift;
        }
      }
    }
    return a;
  }

  Mat<T> forward_impl(std::span<const BasicPatch<T>> patches, Cache& cache, bool keep) const {
    Activations<T> x = to_activations(patches);
    if (keep) {
      cache.convs.assign(convs_.size(), {});
      cache.sums.clear();
      cache.batch = x.batch;
    }
    for (const Stage& stage : stages_) {
      Activations<T> pre = conv_forward(convs_[stage.down], x);
      Activations<T> act = pre;
      for (auto& v : act.data) v = detail::silu(v);
      if (keep) cache.convs[stage.down] = {std::move(x), std::move(pre)};
      x = std::move(act);
      for (const auto& [c0, c1] : stage.residual) {
        Activations<T> pre0 = conv_forward(convs_[c0], x);
        Activations<T> mid = pre0;
        for (auto& v : mid.data) v = detail::silu(v);
        Activations<T> sum = conv_forward(convs_[c1], mid);
        for (std::size_t i = 0; i < sum.data.size(); ++i) sum.data[i] += x.data[i];
        Activations<T> out = sum;
        for (auto& v : out.data) v = detail::silu(v);
        if (keep) {
          cache.convs[c0] = {std::move(x), std::move(pre0)};
          cache.convs[c1] = {std::move(mid), {}};
          cache.sums.push_back(std::move(sum));
        }
        x = std::move(out);
      }
    }

    // Global average pool -> B x F.
    Mat<T> features(x.batch, x.channels);
    const std::size_t hw = static_cast<std::size_t>(x.height) * x.width;
    for (int c = 0; c < x.channels; ++c)
      for (int b = 0; b < x.batch; ++b) {
        const T* src = x.data.data() + (static_cast<std::size_t>(c) * x.batch + b) * hw;
        T s = 0;
        for (std::size_t i = 0; i < hw; ++i) s += src[i];
        features(b, c) = s / static_cast<T>(hw);
      }

    ConstMatMap<T> w(params_[proj_weight_].value.data(), kEmbedDim, feature_dim_);
    Eigen::Map<const Vec<T>> bias(params_[proj_bias_].value.data(), kEmbedDim);
    Mat<T> z = features * w.transpose();
    z.rowwise() += bias.transpose();
    if (keep) {
      cache.last = std::move(x);
      cache.features = std::move(features);
    }
    return z;
  }

  Modality modality_ = Modality::RGB;
  Arch arch_ = Arch::Desk;
  int feature_dim_ = 0;
  std::vector<ParamBlock<T>> params_;
  std::vector<Conv> convs_;
  std::vector<Stage> stages_;
  std::size_t proj_weight_ = 0;
  std::size_t proj_bias_ = 0;
};

template <class T = float>
EncoderBranch<T> init_branch(Modality modality, Arch arch, std::uint64_t seed) {
  EncoderBranch<T> b(modality, arch);
  b.initialize(seed);
  return b;
}

/// Unit-normalizes each row in place (double accumulation).
inline void normalize_rows(Mat<float>& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double norm = m.row(i).template cast<double>().norm();
    if (!(norm > 0.0) || !std::isfinite(norm)) throw Error("cannot normalize a zero or non-finite embedding");
    m.row(i) = (m.row(i).template cast<double>() / norm).template cast<float>();
  }
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// Layout: "CROCOCKPT" | u32 version | u64 header length | JSON header |
// float32 LE parameter blocks (RGB branch, then DEM branch, header order).

inline constexpr std::string_view kCheckpointMagic = "CROCOCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  EncoderBranch<float> rgb;
  EncoderBranch<float> dem;
  NormalizationStats rgb_stats{Modality::RGB, {0, 0, 0}, {1, 1, 1}};
  NormalizationStats dem_stats{Modality::DEM, {0, 0, 0}, {1, 1, 1}};
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::uint64_t step = 0;

  Arch arch() const { return rgb.arch(); }

  const EncoderBranch<float>& branch(Modality m) const { return m == Modality::RGB ? rgb : dem; }
  const NormalizationStats& stats(Modality m) const { return m == Modality::RGB ? rgb_stats : dem_stats; }

  /// Identifies the encoder weights and preprocessing; stamped into feature maps.
  std::string fingerprint() const {
    Fnv1a h;
    const std::string a = to_string(arch());
    h.update(a.data(), a.size());
    for (const auto* b : {&rgb, &dem})
      for (const auto& block : b->params()) {
        h.update(block.name.data(), block.name.size());
        for (float v : block.value) h.update_f32(v);
      }
    for (const auto* s : {&rgb_stats, &dem_stats})
      for (int c = 0; c < 3; ++c) {
        h.update(&s->mean[c], sizeof(double));
        h.update(&s->stddev[c], sizeof(double));
      }
    return h.hex();
  }

  bool operator==(const Checkpoint& o) const {
    return rgb == o.rgb && dem == o.dem && rgb_stats == o.rgb_stats && dem_stats == o.dem_stats &&
           config == o.config && seed == o.seed && step == o.step;
  }
};

inline Checkpoint make_checkpoint(Arch arch, std::uint64_t seed) {
  Checkpoint c;
  c.rgb = init_branch(Modality::RGB, arch, seed);
  c.dem = init_branch(Modality::DEM, arch, seed);
  c.seed = seed;
  return c;
}

inline std::vector<char> serialize_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json header;
  header["format_version"] = kCheckpointVersion;
  header["arch"] = to_string(ckpt.arch());
  header["embed_dim"] = kEmbedDim;
  header["seed"] = ckpt.seed;
  header["step"] = ckpt.step;
  header["stats"] = {{"rgb", to_json(ckpt.rgb_stats)}, {"dem", to_json(ckpt.dem_stats)}};
  header["config"] = ckpt.config;
  header["fingerprint"] = ckpt.fingerprint();
  for (const auto* b : {&ckpt.rgb, &ckpt.dem}) {
    nlohmann::json blocks = nlohmann::json::array();
    for (const auto& p : b->params()) blocks.push_back({{"name", p.name}, {"shape", p.shape}});
    header["branches"].push_back({{"modality", to_string(b->modality())}, {"blocks", blocks}});
  }
  const std::string text = header.dump();

  std::vector<char> out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  put_u32(out, kCheckpointVersion);
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto* b : {&ckpt.rgb, &ckpt.dem})
    for (const auto& p : b->params())
      for (float v : p.value) put_f32(out, v);
  return out;
}

inline Checkpoint deserialize_checkpoint(std::span<const char> bytes) {
  const std::size_t prefix = kCheckpointMagic.size() + 4 + 8;
  if (bytes.size() < prefix) throw Error("checkpoint: truncated file");
  if (std::string_view(bytes.data(), kCheckpointMagic.size()) != kCheckpointMagic)
    throw Error("checkpoint: bad magic bytes");
  const std::uint32_t version = get_u32(bytes.data() + kCheckpointMagic.size());
  if (version != kCheckpointVersion)
    throw Error("checkpoint: unsupported format version " + std::to_string(version));
  const std::uint64_t header_len = get_u64(bytes.data() + kCheckpointMagic.size() + 4);
  if (header_len > bytes.size() - prefix) throw Error("checkpoint: truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + prefix, bytes.begin() + prefix + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("checkpoint: bad header: ") + e.what());
  }

  Checkpoint ckpt;
  try {
    const Arch arch = arch_from_string(header.at("arch").get<std::string>());
    if (header.at("embed_dim").get<int>() != kEmbedDim) throw Error("checkpoint: embedding dimension mismatch");
    ckpt.rgb = EncoderBranch<float>(Modality::RGB, arch);
    ckpt.dem = EncoderBranch<float>(Modality::DEM, arch);
    ckpt.seed = header.at("seed").get<std::uint64_t>();
    ckpt.step = header.at("step").get<std::uint64_t>();
    ckpt.rgb_stats = stats_from_json(header.at("stats").at("rgb"));
    ckpt.dem_stats = stats_from_json(header.at("stats").at("dem"));
    ckpt.config = header.at("config");
    const auto& branches = header.at("branches");
    if (branches.size() != 2) throw Error("checkpoint: expected two branches");
    std::size_t expected_values = 0;
    for (std::size_t bi = 0; bi < 2; ++bi) {
      const auto& branch = bi == 0 ? ckpt.rgb : ckpt.dem;
      const auto& blocks = branches[bi].at("blocks");
      if (modality_from_string(branches[bi].at("modality").get<std::string>()) != branch.modality() ||
          blocks.size() != branch.params().size())
        throw Error("checkpoint: branch layout does not match architecture");
      for (std::size_t k = 0; k < blocks.size(); ++k) {
        const auto& p = branch.params()[k];
        if (blocks[k].at("name").get<std::string>() != p.name || blocks[k].at("shape").get<std::vector<int>>() != p.shape)
          throw Error("checkpoint: parameter block '" + p.name + "' does not match architecture");
        expected_values += p.value.size();
      }
    }
    const std::size_t payload = bytes.size() - prefix - header_len;
    if (payload != expected_values * 4)
      throw Error(payload < expected_values * 4 ? "checkpoint: truncated parameter payload"
                                                : "checkpoint: trailing bytes after parameters");
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("checkpoint: bad header: ") + e.what());
  }

  const char* p = bytes.data() + prefix + header_len;
  for (auto* b : {&ckpt.rgb, &ckpt.dem})
    for (auto& block : b->params())
      for (auto& v : block.value) {
        v = get_f32(p);
        p += 4;
      }
  return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto bytes = serialize_checkpoint(ckpt);
  write_file_bytes(path.string(), bytes);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path.string());
  return deserialize_checkpoint(bytes);
}

}  // namespace croco
