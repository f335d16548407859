#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "asckit/common.hpp"
#include "asckit/tensor.hpp"

namespace asckit::nn {

// ---------------------------------------------------------------------------
// configuration

struct FilterGroup {
  int count = 0;
  int time_extent = 0;
  int freq_extent = 0;
};

struct FilterConfiguration {
  std::string name;
  std::vector<FilterGroup> groups;

  int total_filters() const {
    int t = 0;
    for (const auto& g : groups) t += g.count;
    return t;
  }
};

/// The six first-layer filter configurations (square plus 1..5 vertical
/// shapes); every configuration totals 112 filters.
const std::vector<FilterConfiguration>& filter_configurations();
const FilterConfiguration& filter_configuration(const std::string& name);

struct NetworkConfig {
  std::string filter_configuration = "CNN_4";
  bool pre_activation = false;
  bool preact_inner = false;  // BN+ReLU between each pooling and the next layer
  int conv2_filters = 224;    // double the 112 first-layer filters
  int conv2_time = 5, conv2_freq = 5;
  int pool1_time = 5, pool1_freq = 5;
  int pool2_time = 11, pool2_freq = 4;
  int classes = 15;
  int input_time = 75, input_freq = 128;
  double l2 = 1e-5;
};

struct TrainingConfig {
  double initial_lr = 0.002;
  double plateau_factor = 2.0;
  int plateau_patience = 5;
  int early_stop_patience = 15;
  int max_epochs = 200;
  int batch_size = 64;
  double val_fraction = 0.15;
  bool restore_best = true;
  std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// layers

template <typename T>
struct ParamTensor {
  std::string name;
  std::vector<T> value;
  std::vector<T> grad;
  bool l2 = false;  // participates in the conv-weight L2 penalty

  void zero_grad() { std::fill(grad.begin(), grad.end(), T{0}); }
};

/// Layers take their input by value and keep whatever they need for the
/// backward pass; callers move activations through the chain so the large
/// conv1-sized buffers are never copied.
template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual const char* kind() const = 0;
  virtual Tensor4<T> forward(Tensor4<T> x, bool train) = 0;
  virtual Tensor4<T> backward(const Tensor4<T>& dy) = 0;
  virtual void collect_params(std::vector<ParamTensor<T>*>& out) {}
};

namespace detail {

template <typename T>
using EigenRowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using EigenColMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;

inline int same_pad_before(int k) { return (k - 1) / 2; }

}  // namespace detail

/// First-layer style convolution: one or more filter-shape branches over the
/// same input. With `same_pad`, each branch's input is zero-padded so every
/// branch outputs the input's spatial size and the branch outputs are
/// concatenated along channels. Without it (single branch), valid convolution.
template <typename T>
class ConvLayer : public Layer<T> {
 public:
  ConvLayer(std::string name, int in_ch, std::vector<FilterGroup> groups, bool same_pad,
            RngStream& rng)
      : name_(std::move(name)), in_ch_(in_ch), groups_(std::move(groups)), same_pad_(same_pad) {
    if (!same_pad_ && groups_.size() != 1) {
      throw ConfigError("valid-padding convolution supports a single filter shape");
    }
    for (std::size_t g = 0; g < groups_.size(); ++g) {
      const FilterGroup& fg = groups_[g];
      if (fg.count < 1 || fg.time_extent < 1 || fg.freq_extent < 1) {
        throw ConfigError("convolution filter extents must be >= 1");
      }
      ParamTensor<T> w, b;
      w.name = name_ + ".w" + std::to_string(g);
      w.l2 = true;
      const std::size_t k = static_cast<std::size_t>(in_ch_) * fg.time_extent * fg.freq_extent;
      w.value.resize(static_cast<std::size_t>(fg.count) * k);
      w.grad.assign(w.value.size(), T{0});
      const double fan_in = static_cast<double>(k);
      const double fan_out = static_cast<double>(fg.count) * fg.time_extent * fg.freq_extent;
      const double bound = std::sqrt(6.0 / (fan_in + fan_out));
      for (auto& v : w.value) v = static_cast<T>(rng.uniform(-bound, bound));
      b.name = name_ + ".b" + std::to_string(g);
      b.value.assign(fg.count, T{0});
      b.grad.assign(fg.count, T{0});
      weights_.push_back(std::move(w));
      biases_.push_back(std::move(b));
    }
  }

  const char* kind() const override { return "conv"; }

  int out_channels() const {
    int t = 0;
    for (const auto& g : groups_) t += g.count;
    return t;
  }

  void out_shape(int h, int w, int& oh, int& ow) const {
    if (same_pad_) {
      oh = h;
      ow = w;
    } else {
      oh = h - groups_[0].time_extent + 1;
      ow = w - groups_[0].freq_extent + 1;
      if (oh < 1 || ow < 1) {
        throw ConfigError(name_ + ": kernel larger than its input (" + std::to_string(h) + "x" +
                          std::to_string(w) + ")");
      }
    }
  }

  Tensor4<T> forward(Tensor4<T> x, bool) override {
    if (x.c != in_ch_) throw DataError(name_ + ": channel mismatch");
    x_ = std::move(x);
    const Tensor4<T>& xin = x_;
    int oh = 0, ow = 0;
    out_shape(xin.h, xin.w, oh, ow);
    Tensor4<T> y(xin.n, out_channels(), oh, ow);

    parallel_for_blocks(static_cast<std::size_t>(xin.n), [&](std::size_t lo, std::size_t hi, int) {
      std::vector<T> col;
      for (std::size_t i = lo; i < hi; ++i) {
        T* out = y.sample(static_cast<int>(i));
        int ch_off = 0;
        for (std::size_t g = 0; g < groups_.size(); ++g) {
          const FilterGroup& fg = groups_[g];
          const int k = in_ch_ * fg.time_extent * fg.freq_extent;
          im2col(xin.sample(static_cast<int>(i)), xin.h, xin.w, fg, col, oh, ow);
          const Eigen::Map<const detail::EigenRowMat<T>> wm(weights_[g].value.data(), fg.count, k);
          const Eigen::Map<const detail::EigenColMat<T>> cm(col.data(), k,
                                                            static_cast<Eigen::Index>(oh) * ow);
          Eigen::Map<detail::EigenRowMat<T>> om(out + static_cast<std::size_t>(ch_off) * oh * ow,
                                                fg.count, static_cast<Eigen::Index>(oh) * ow);
          om.noalias() = wm * cm;
          om.colwise() += Eigen::Map<const Eigen::Vector<T, Eigen::Dynamic>>(
              biases_[g].value.data(), fg.count);
          ch_off += fg.count;
        }
      }
    });
    return y;
  }

  Tensor4<T> backward(const Tensor4<T>& dy) override {
    const Tensor4<T>& x = x_;
    Tensor4<T> dx(x.n, x.c, x.h, x.w);
    dx.zero();  // col2im accumulates
    const int oh = dy.h, ow = dy.w;

    struct BlockGrads {
      std::vector<std::vector<T>> dw, db;
    };
    std::vector<BlockGrads> blocks(std::max(1, max_threads()));

    parallel_for_blocks(static_cast<std::size_t>(x.n), [&](std::size_t lo, std::size_t hi,
                                                           int block) {
      BlockGrads& acc = blocks[block];
      acc.dw.resize(groups_.size());
      acc.db.resize(groups_.size());
      for (std::size_t g = 0; g < groups_.size(); ++g) {
        acc.dw[g].assign(weights_[g].value.size(), T{0});
        acc.db[g].assign(biases_[g].value.size(), T{0});
      }
      std::vector<T> col, dcol;
      for (std::size_t i = lo; i < hi; ++i) {
        const T* dout = dy.sample(static_cast<int>(i));
        T* dxs = dx.sample(static_cast<int>(i));
        int ch_off = 0;
        for (std::size_t g = 0; g < groups_.size(); ++g) {
          const FilterGroup& fg = groups_[g];
          const int k = in_ch_ * fg.time_extent * fg.freq_extent;
          im2col(x.sample(static_cast<int>(i)), x.h, x.w, fg, col, oh, ow);
          const Eigen::Map<const detail::EigenRowMat<T>> dym(
              dout + static_cast<std::size_t>(ch_off) * oh * ow, fg.count,
              static_cast<Eigen::Index>(oh) * ow);
          const Eigen::Map<const detail::EigenColMat<T>> cm(col.data(), k,
                                                            static_cast<Eigen::Index>(oh) * ow);
          Eigen::Map<detail::EigenRowMat<T>> dwm(acc.dw[g].data(), fg.count, k);
          dwm.noalias() += dym * cm.transpose();
          Eigen::Map<Eigen::Vector<T, Eigen::Dynamic>> dbm(acc.db[g].data(), fg.count);
          dbm.noalias() += dym.rowwise().sum();

          const Eigen::Map<const detail::EigenRowMat<T>> wm(weights_[g].value.data(), fg.count, k);
          dcol.assign(static_cast<std::size_t>(k) * oh * ow, T{0});
          Eigen::Map<detail::EigenColMat<T>> dcm(dcol.data(), k,
                                                 static_cast<Eigen::Index>(oh) * ow);
          dcm.noalias() = wm.transpose() * dym;
          col2im_add(dcol.data(), x.h, x.w, fg, dxs, oh, ow);
          ch_off += fg.count;
        }
      }
    });

    for (std::size_t g = 0; g < groups_.size(); ++g) {
      for (const auto& blk : blocks) {
        if (blk.dw.empty()) continue;
        for (std::size_t j = 0; j < weights_[g].grad.size(); ++j) {
          weights_[g].grad[j] += blk.dw[g][j];
        }
        for (std::size_t j = 0; j < biases_[g].grad.size(); ++j) {
          biases_[g].grad[j] += blk.db[g][j];
        }
      }
    }
    return dx;
  }

  void collect_params(std::vector<ParamTensor<T>*>& out) override {
    for (std::size_t g = 0; g < groups_.size(); ++g) {
      out.push_back(&weights_[g]);
      out.push_back(&biases_[g]);
    }
  }

 private:
  // col is (in_ch*kh*kw) x (oh*ow), column-major: one output pixel per column
  void im2col(const T* xs, int h, int w, const FilterGroup& fg, std::vector<T>& col, int oh,
              int ow) const {
    const int kh = fg.time_extent, kw = fg.freq_extent;
    const int pad_t = same_pad_ ? detail::same_pad_before(kh) : 0;
    const int pad_l = same_pad_ ? detail::same_pad_before(kw) : 0;
    const std::size_t k = static_cast<std::size_t>(in_ch_) * kh * kw;
    col.assign(k * oh * ow, T{0});
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        T* dst = col.data() + (static_cast<std::size_t>(oy) * ow + ox) * k;
        for (int c = 0; c < in_ch_; ++c) {
          const T* plane = xs + static_cast<std::size_t>(c) * h * w;
          for (int ky = 0; ky < kh; ++ky) {
            const int y = oy - pad_t + ky;
            T* drow = dst + (static_cast<std::size_t>(c) * kh + ky) * kw;
            if (y < 0 || y >= h) continue;  // zero pad
            const int x0 = ox - pad_l;
            const int lo = std::max(0, -x0);
            const int hi = std::min(kw, w - x0);
            for (int kx = lo; kx < hi; ++kx) drow[kx] = plane[static_cast<std::size_t>(y) * w + x0 + kx];
          }
        }
      }
    }
  }

  void col2im_add(const T* col, int h, int w, const FilterGroup& fg, T* dxs, int oh,
                  int ow) const {
    const int kh = fg.time_extent, kw = fg.freq_extent;
    const int pad_t = same_pad_ ? detail::same_pad_before(kh) : 0;
    const int pad_l = same_pad_ ? detail::same_pad_before(kw) : 0;
    const std::size_t k = static_cast<std::size_t>(in_ch_) * kh * kw;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const T* src = col + (static_cast<std::size_t>(oy) * ow + ox) * k;
        for (int c = 0; c < in_ch_; ++c) {
          T* plane = dxs + static_cast<std::size_t>(c) * h * w;
          for (int ky = 0; ky < kh; ++ky) {
            const int y = oy - pad_t + ky;
            if (y < 0 || y >= h) continue;
            const T* srow = src + (static_cast<std::size_t>(c) * kh + ky) * kw;
            const int x0 = ox - pad_l;
            const int lo = std::max(0, -x0);
            const int hi = std::min(kw, w - x0);
            for (int kx = lo; kx < hi; ++kx) plane[static_cast<std::size_t>(y) * w + x0 + kx] += srow[kx];
          }
        }
      }
    }
  }

  std::string name_;
  int in_ch_;
  std::vector<FilterGroup> groups_;
  bool same_pad_;
  std::vector<ParamTensor<T>> weights_, biases_;
  Tensor4<T> x_;
};

template <typename T>
class BatchNormLayer : public Layer<T> {
 public:
  BatchNormLayer(std::string name, int channels, double momentum = 0.99, double eps = 1e-3)
      : name_(std::move(name)), channels_(channels), momentum_(momentum), eps_(eps) {
    gamma_.name = name_ + ".gamma";
    gamma_.value.assign(channels, T{1});
    gamma_.grad.assign(channels, T{0});
    beta_.name = name_ + ".beta";
    beta_.value.assign(channels, T{0});
    beta_.grad.assign(channels, T{0});
    running_mean_.assign(channels, T{0});
    running_var_.assign(channels, T{1});
  }

  const char* kind() const override { return "batchnorm"; }

  Tensor4<T> forward(Tensor4<T> x, bool train) override {
    if (x.c != channels_) throw DataError(name_ + ": channel mismatch");
    const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
    const std::size_t m = static_cast<std::size_t>(x.n) * plane;

    if (train) {
      x_ = std::move(x);
      const Tensor4<T>& xin = x_;
      Tensor4<T> y(xin.n, xin.c, xin.h, xin.w);
      mean_.assign(channels_, T{0});
      invstd_.assign(channels_, T{0});
      parallel_for_blocks(static_cast<std::size_t>(channels_), [&](std::size_t lo, std::size_t hi,
                                                                   int) {
        for (std::size_t c = lo; c < hi; ++c) {
          double sum = 0.0, sumsq = 0.0;
          for (int i = 0; i < xin.n; ++i) {
            const T* p = xin.sample(i) + c * plane;
            for (std::size_t j = 0; j < plane; ++j) {
              sum += static_cast<double>(p[j]);
              sumsq += static_cast<double>(p[j]) * p[j];
            }
          }
          const double mu = sum / static_cast<double>(m);
          const double var = std::max(sumsq / static_cast<double>(m) - mu * mu, 0.0);
          mean_[c] = static_cast<T>(mu);
          invstd_[c] = static_cast<T>(1.0 / std::sqrt(var + eps_));
          running_mean_[c] = static_cast<T>(momentum_ * running_mean_[c] + (1.0 - momentum_) * mu);
          running_var_[c] = static_cast<T>(momentum_ * running_var_[c] + (1.0 - momentum_) * var);
          const T g = gamma_.value[c], b = beta_.value[c], mu_t = mean_[c], is = invstd_[c];
          const T scale = g * is;
          for (int i = 0; i < xin.n; ++i) {
            const T* p = xin.sample(i) + c * plane;
            T* q = y.sample(i) + c * plane;
            for (std::size_t j = 0; j < plane; ++j) q[j] = scale * (p[j] - mu_t) + b;
          }
        }
      });
      return y;
    }

    // inference: normalize in place with the running statistics
    Tensor4<T> y = std::move(x);
    parallel_for_blocks(static_cast<std::size_t>(channels_), [&](std::size_t lo, std::size_t hi,
                                                                 int) {
      for (std::size_t c = lo; c < hi; ++c) {
        const T is = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var_[c]) + eps_));
        const T g = gamma_.value[c], b = beta_.value[c], mu = running_mean_[c];
        const T scale = g * is;
        for (int i = 0; i < y.n; ++i) {
          T* q = y.sample(i) + c * plane;
          for (std::size_t j = 0; j < plane; ++j) q[j] = scale * (q[j] - mu) + b;
        }
      }
    });
    return y;
  }

  Tensor4<T> backward(const Tensor4<T>& dy) override {
    const Tensor4<T>& x = x_;
    if (!dy.same_shape(x)) throw DataError(name_ + ": backward shape mismatch");
    Tensor4<T> dx(x.n, x.c, x.h, x.w);
    const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
    const double m = static_cast<double>(x.n) * plane;

    parallel_for_blocks(static_cast<std::size_t>(channels_), [&](std::size_t lo, std::size_t hi,
                                                                 int) {
      for (std::size_t c = lo; c < hi; ++c) {
        const T mu = mean_[c], is = invstd_[c], g = gamma_.value[c];
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int i = 0; i < x.n; ++i) {
          const T* xp = x.sample(i) + c * plane;
          const T* dp = dy.sample(i) + c * plane;
          for (std::size_t j = 0; j < plane; ++j) {
            const double xhat = static_cast<double>(xp[j] - mu) * is;
            sum_dy += dp[j];
            sum_dy_xhat += static_cast<double>(dp[j]) * xhat;
          }
        }
        gamma_.grad[c] += static_cast<T>(sum_dy_xhat);
        beta_.grad[c] += static_cast<T>(sum_dy);
        const T k1 = static_cast<T>(static_cast<double>(g) * is);
        const T k2 = static_cast<T>(sum_dy / m);
        const T k3 = static_cast<T>(sum_dy_xhat / m);
        for (int i = 0; i < x.n; ++i) {
          const T* xp = x.sample(i) + c * plane;
          const T* dp = dy.sample(i) + c * plane;
          T* dq = dx.sample(i) + c * plane;
          for (std::size_t j = 0; j < plane; ++j) {
            const T xhat = (xp[j] - mu) * is;
            dq[j] = k1 * (dp[j] - k2 - xhat * k3);
          }
        }
      }
    });
    return dx;
  }

  void collect_params(std::vector<ParamTensor<T>*>& out) override {
    out.push_back(&gamma_);
    out.push_back(&beta_);
  }

  std::vector<T>& running_mean() { return running_mean_; }
  std::vector<T>& running_var() { return running_var_; }

 private:
  std::string name_;
  int channels_;
  double momentum_, eps_;
  ParamTensor<T> gamma_, beta_;
  std::vector<T> running_mean_, running_var_;
  std::vector<T> mean_, invstd_;
  Tensor4<T> x_;
};

template <typename T>
class ReluLayer : public Layer<T> {
 public:
  const char* kind() const override { return "relu"; }

  Tensor4<T> forward(Tensor4<T> x, bool) override {
    Tensor4<T> y = std::move(x);
    mask_.resize(y.v.size());
    T* v = y.v.data();
    std::uint8_t* m = mask_.data();
    parallel_for_blocks(y.v.size(), [&](std::size_t lo, std::size_t hi, int) {
      for (std::size_t i = lo; i < hi; ++i) {
        const bool pos = v[i] > T{0};
        m[i] = pos;
        v[i] = pos ? v[i] : T{0};
      }
    });
    return y;
  }

  Tensor4<T> backward(const Tensor4<T>& dy) override {
    Tensor4<T> dx(dy.n, dy.c, dy.h, dy.w);
    const T* src = dy.v.data();
    const std::uint8_t* m = mask_.data();
    T* dst = dx.v.data();
    parallel_for_blocks(dx.v.size(), [&](std::size_t lo, std::size_t hi, int) {
      for (std::size_t i = lo; i < hi; ++i) dst[i] = src[i] * static_cast<T>(m[i]);
    });
    return dx;
  }

 private:
  RawVec<std::uint8_t> mask_;
};

/// Non-overlapping max pooling with floor division; remainder rows/columns
/// are discarded. Backward routes gradient only to the argmax positions.
template <typename T>
class MaxPoolLayer : public Layer<T> {
 public:
  MaxPoolLayer(std::string name, int pool_h, int pool_w)
      : name_(std::move(name)), ph_(pool_h), pw_(pool_w) {}

  const char* kind() const override { return "maxpool"; }

  Tensor4<T> forward(Tensor4<T> xin, bool) override {
    const Tensor4<T> x = std::move(xin);  // only argmax indices survive the pass
    const int oh = x.h / ph_, ow = x.w / pw_;
    if (oh < 1 || ow < 1) {
      throw ConfigError(name_ + ": pool window larger than input (" + std::to_string(x.h) + "x" +
                        std::to_string(x.w) + ")");
    }
    in_shape_ = {x.n, x.c, x.h, x.w};
    Tensor4<T> y(x.n, x.c, oh, ow);
    argmax_.resize(y.size());

    parallel_for_blocks(static_cast<std::size_t>(x.n) * x.c, [&](std::size_t lo, std::size_t hi,
                                                                 int) {
      for (std::size_t nc = lo; nc < hi; ++nc) {
        const T* plane = x.v.data() + nc * x.h * x.w;
        T* out = y.v.data() + nc * oh * ow;
        std::uint32_t* amax = argmax_.data() + nc * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          for (int ox = 0; ox < ow; ++ox) {
            int by = oy * ph_, bx = ox * pw_;
            T best = plane[static_cast<std::size_t>(by) * x.w + bx];
            std::uint32_t arg = static_cast<std::uint32_t>(by * x.w + bx);
            for (int yy = by; yy < by + ph_; ++yy) {
              for (int xx = bx; xx < bx + pw_; ++xx) {
                const T v = plane[static_cast<std::size_t>(yy) * x.w + xx];
                if (v > best) {  // first max wins ties
                  best = v;
                  arg = static_cast<std::uint32_t>(yy * x.w + xx);
                }
              }
            }
            out[static_cast<std::size_t>(oy) * ow + ox] = best;
            amax[static_cast<std::size_t>(oy) * ow + ox] = arg;
          }
        }
      }
    });
    return y;
  }

  Tensor4<T> backward(const Tensor4<T>& dy) override {
    Tensor4<T> dx(in_shape_[0], in_shape_[1], in_shape_[2], in_shape_[3]);
    const std::size_t in_plane = static_cast<std::size_t>(in_shape_[2]) * in_shape_[3];
    const std::size_t out_plane = static_cast<std::size_t>(dy.h) * dy.w;
    parallel_for_blocks(static_cast<std::size_t>(dy.n) * dy.c, [&](std::size_t lo, std::size_t hi,
                                                                   int) {
      for (std::size_t nc = lo; nc < hi; ++nc) {
        const T* src = dy.v.data() + nc * out_plane;
        const std::uint32_t* amax = argmax_.data() + nc * out_plane;
        T* dst = dx.v.data() + nc * in_plane;
        std::fill(dst, dst + in_plane, T{0});
        for (std::size_t j = 0; j < out_plane; ++j) dst[amax[j]] += src[j];
      }
    });
    return dx;
  }

 private:
  std::string name_;
  int ph_, pw_;
  std::array<int, 4> in_shape_{};
  RawVec<std::uint32_t> argmax_;
};

template <typename T>
class DenseLayer : public Layer<T> {
 public:
  DenseLayer(std::string name, int in_dim, int units, RngStream& rng)
      : name_(std::move(name)), in_dim_(in_dim), units_(units) {
    w_.name = name_ + ".w";
    w_.value.resize(static_cast<std::size_t>(units) * in_dim);
    w_.grad.assign(w_.value.size(), T{0});
    const double bound = std::sqrt(6.0 / (in_dim + units));
    for (auto& v : w_.value) v = static_cast<T>(rng.uniform(-bound, bound));
    b_.name = name_ + ".b";
    b_.value.assign(units, T{0});
    b_.grad.assign(units, T{0});
  }

  const char* kind() const override { return "dense"; }

  Tensor4<T> forward(Tensor4<T> x, bool) override {
    if (static_cast<int>(x.sample_size()) != in_dim_) {
      throw DataError(name_ + ": flatten dimension mismatch, got " +
                      std::to_string(x.sample_size()) + " expected " + std::to_string(in_dim_));
    }
    x_ = std::move(x);
    Tensor4<T> y(x_.n, units_, 1, 1);
    const Eigen::Map<const detail::EigenRowMat<T>> xm(x_.v.data(), x_.n, in_dim_);
    const Eigen::Map<const detail::EigenRowMat<T>> wm(w_.value.data(), units_, in_dim_);
    Eigen::Map<detail::EigenRowMat<T>> ym(y.v.data(), x_.n, units_);
    ym.noalias() = xm * wm.transpose();
    ym.rowwise() += Eigen::Map<const Eigen::RowVector<T, Eigen::Dynamic>>(b_.value.data(), units_);
    return y;
  }

  Tensor4<T> backward(const Tensor4<T>& dy) override {
    const Eigen::Map<const detail::EigenRowMat<T>> dym(dy.v.data(), dy.n, units_);
    const Eigen::Map<const detail::EigenRowMat<T>> xm(x_.v.data(), x_.n, in_dim_);
    Eigen::Map<detail::EigenRowMat<T>> dwm(w_.grad.data(), units_, in_dim_);
    dwm.noalias() += dym.transpose() * xm;
    Eigen::Map<Eigen::RowVector<T, Eigen::Dynamic>> dbm(b_.grad.data(), units_);
    dbm.noalias() += dym.colwise().sum();

    Tensor4<T> dx(x_.n, x_.c, x_.h, x_.w);
    const Eigen::Map<const detail::EigenRowMat<T>> wm(w_.value.data(), units_, in_dim_);
    Eigen::Map<detail::EigenRowMat<T>> dxm(dx.v.data(), x_.n, in_dim_);
    dxm.noalias() = dym * wm;
    return dx;
  }

  void collect_params(std::vector<ParamTensor<T>*>& out) override {
    out.push_back(&w_);
    out.push_back(&b_);
  }

 private:
  std::string name_;
  int in_dim_, units_;
  ParamTensor<T> w_, b_;
  Tensor4<T> x_;
};

// ---------------------------------------------------------------------------
// network

template <typename T>
class Network {
 public:
  Network() = default;

  NetworkConfig config;

  std::vector<std::unique_ptr<Layer<T>>>& layers() { return layers_; }
  const std::vector<std::unique_ptr<Layer<T>>>& layers() const { return layers_; }

  std::vector<ParamTensor<T>*> params() {
    std::vector<ParamTensor<T>*> out;
    for (auto& l : layers_) l->collect_params(out);
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto* p : params()) n += p->value.size();
    return n;
  }

  /// Pre-softmax class scores, N x classes.
  Tensor4<T> logits(const Tensor4<T>& x, bool train) {
    if (x.c != 1 || x.h != config.input_time || x.w != config.input_freq) {
      throw DataError("network input must be Bx1x" + std::to_string(config.input_time) + "x" +
                      std::to_string(config.input_freq));
    }
    Tensor4<T> cur = x;
    for (auto& l : layers_) cur = l->forward(std::move(cur), train);
    return cur;
  }

  /// Class probabilities, rows summing to one.
  std::vector<double> forward(const Tensor4<T>& x, bool train = false) {
    const Tensor4<T> z = logits(x, train);
    return softmax_rows(z);
  }

  /// Mean categorical cross-entropy plus the conv-weight L2 penalty;
  /// accumulates gradients for every trainable parameter (zeroed first).
  double loss_and_gradients(const Tensor4<T>& x, const std::vector<int>& labels,
                            std::vector<double>* probs_out = nullptr) {
    if (static_cast<int>(labels.size()) != x.n) throw DataError("label count mismatch");
    for (auto* p : params()) p->zero_grad();

    const Tensor4<T> z = logits(x, true);
    const std::vector<double> probs = softmax_rows(z);
    if (probs_out != nullptr) *probs_out = probs;

    double loss = 0.0;
    Tensor4<T> dz(z.n, z.c, 1, 1);
    const double inv_n = 1.0 / static_cast<double>(x.n);
    for (int i = 0; i < x.n; ++i) {
      const int y = labels[i];
      if (y < 0 || y >= config.classes) throw DataError("label out of range");
      const double p = probs[static_cast<std::size_t>(i) * config.classes + y];
      loss -= std::log(std::max(p, 1e-300));
      for (int c = 0; c < config.classes; ++c) {
        const double pc = probs[static_cast<std::size_t>(i) * config.classes + c];
        dz.v[static_cast<std::size_t>(i) * config.classes + c] =
            static_cast<T>((pc - (c == y ? 1.0 : 0.0)) * inv_n);
      }
    }
    loss *= inv_n;

    Tensor4<T> cur = dz;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) cur = (*it)->backward(cur);

    if (config.l2 > 0.0) {
      for (auto* p : params()) {
        if (!p->l2) continue;
        double sq = 0.0;
        for (std::size_t j = 0; j < p->value.size(); ++j) {
          sq += static_cast<double>(p->value[j]) * p->value[j];
          p->grad[j] += static_cast<T>(2.0 * config.l2 * p->value[j]);
        }
        loss += config.l2 * sq;
      }
    }
    if (!std::isfinite(loss)) throw NumericError("non-finite training loss");
    return loss;
  }

  std::vector<double> softmax_rows(const Tensor4<T>& z) const {
    std::vector<double> probs(static_cast<std::size_t>(z.n) * config.classes);
    for (int i = 0; i < z.n; ++i) {
      const T* row = z.v.data() + static_cast<std::size_t>(i) * config.classes;
      double mx = row[0];
      for (int c = 1; c < config.classes; ++c) mx = std::max(mx, static_cast<double>(row[c]));
      double sum = 0.0;
      for (int c = 0; c < config.classes; ++c) {
        const double e = std::exp(static_cast<double>(row[c]) - mx);
        probs[static_cast<std::size_t>(i) * config.classes + c] = e;
        sum += e;
      }
      for (int c = 0; c < config.classes; ++c) {
        probs[static_cast<std::size_t>(i) * config.classes + c] /= sum;
      }
    }
    return probs;
  }

  /// BatchNorm layers in topology order (for checkpointing running stats).
  std::vector<BatchNormLayer<T>*> batchnorm_layers() {
    std::vector<BatchNormLayer<T>*> out;
    for (auto& l : layers_) {
      if (auto* bn = dynamic_cast<BatchNormLayer<T>*>(l.get())) out.push_back(bn);
    }
    return out;
  }

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

/// Builds the two-conv architecture for the named filter configuration and
/// verifies the shape chain against the 1 x input_time x input_freq input.
template <typename T>
Network<T> build_network(const NetworkConfig& config, std::uint64_t seed) {
  const FilterConfiguration& fc = filter_configuration(config.filter_configuration);
  RngStream rng(seed);

  Network<T> net;
  net.config = config;
  auto& layers = net.layers();

  if (config.pre_activation) {
    layers.push_back(std::make_unique<BatchNormLayer<T>>("bn_in", 1));
    layers.push_back(std::make_unique<ReluLayer<T>>());
  }

  auto conv1 = std::make_unique<ConvLayer<T>>("conv1", 1, fc.groups, /*same_pad=*/true, rng);
  const int conv1_ch = conv1->out_channels();
  layers.push_back(std::move(conv1));
  layers.push_back(std::make_unique<BatchNormLayer<T>>("bn1", conv1_ch));
  layers.push_back(std::make_unique<ReluLayer<T>>());
  layers.push_back(std::make_unique<MaxPoolLayer<T>>("pool1", config.pool1_time, config.pool1_freq));

  int h = config.input_time / config.pool1_time;
  int w = config.input_freq / config.pool1_freq;
  if (h < config.conv2_time || w < config.conv2_freq) {
    throw ConfigError("conv2 kernel does not fit the pooled map (" + std::to_string(h) + "x" +
                      std::to_string(w) + ")");
  }

  if (config.preact_inner) {
    layers.push_back(std::make_unique<BatchNormLayer<T>>("bn_pre2", conv1_ch));
    layers.push_back(std::make_unique<ReluLayer<T>>());
  }

  layers.push_back(std::make_unique<ConvLayer<T>>(
      "conv2", conv1_ch,
      std::vector<FilterGroup>{{config.conv2_filters, config.conv2_time, config.conv2_freq}},
      /*same_pad=*/false, rng));
  layers.push_back(std::make_unique<BatchNormLayer<T>>("bn2", config.conv2_filters));
  layers.push_back(std::make_unique<ReluLayer<T>>());
  layers.push_back(std::make_unique<MaxPoolLayer<T>>("pool2", config.pool2_time, config.pool2_freq));

  h = h - config.conv2_time + 1;
  w = w - config.conv2_freq + 1;
  if (h < config.pool2_time || w < config.pool2_freq) {
    throw ConfigError("pool2 window does not fit the conv2 map (" + std::to_string(h) + "x" +
                      std::to_string(w) + ")");
  }
  h /= config.pool2_time;
  w /= config.pool2_freq;

  if (config.preact_inner) {
    layers.push_back(std::make_unique<BatchNormLayer<T>>("bn_pre3", config.conv2_filters));
    layers.push_back(std::make_unique<ReluLayer<T>>());
  }

  const int flat = config.conv2_filters * h * w;
  layers.push_back(std::make_unique<DenseLayer<T>>("dense", flat, config.classes, rng));
  return net;
}

// ---------------------------------------------------------------------------
// optimizer

/// Adam with the standard beta/epsilon defaults and bias correction.
template <typename T>
class AdamOptimizer {
 public:
  explicit AdamOptimizer(const std::vector<ParamTensor<T>*>& params, double beta1 = 0.9,
                         double beta2 = 0.999, double eps = 1e-8)
      : params_(params), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params[i]->value.size(), 0.0);
      v_[i].assign(params[i]->value.size(), 0.0);
    }
  }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      ParamTensor<T>* p = params_[i];
      for (std::size_t j = 0; j < p->value.size(); ++j) {
        const double g = static_cast<double>(p->grad[j]);
        m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
        v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
        const double mhat = m_[i][j] / bc1;
        const double vhat = v_[i][j] / bc2;
        p->value[j] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  int steps_taken() const { return t_; }

 private:
  std::vector<ParamTensor<T>*> params_;
  double beta1_, beta2_, eps_;
  int t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// ---------------------------------------------------------------------------
// training loop

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainingHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double best_val_loss = 0.0;
  bool early_stopped = false;
};

/// Plateau-scheduled Adam training with early stopping; returns history and
/// leaves the network holding the best-validation-loss parameters.
TrainingHistory train(Network<float>& net, const Tensor4<float>& patches,
                      const std::vector<int>& labels, const TrainingConfig& config);

/// Per-patch class probabilities for the 7 patches of one recording.
std::vector<std::vector<double>> predict_segments(Network<float>& net,
                                                  const Tensor4<float>& patches);

void save_checkpoint(Network<float>& net, const std::string& path,
                     const std::vector<double>& scaler_mean,
                     const std::vector<double>& scaler_std);
Network<float> load_checkpoint(const std::string& path, std::vector<double>* scaler_mean,
                               std::vector<double>* scaler_std);

void write_history_jsonl(const TrainingHistory& history, const std::string& path);

}  // namespace asckit::nn
