#include "mapl/layers.hpp"

#include "mapl/error.hpp"
#include "mapl/simd/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace mapl::nn {

Parameter::Parameter(std::string n, std::vector<int> s) : name(std::move(n)), shape(std::move(s)) {
    std::size_t count = 1;
    for (int d : shape) count *= static_cast<std::size_t>(d);
    value.assign(count, 0.0);
    grad.assign(count, 0.0);
}

void Parameter::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

void leaky_relu_inplace(Tensor& t) { simd::kernels().leaky_relu(t.size(), kLeakySlope, t.data.data(), t.data.data()); }

Tensor leaky_relu_backward(const Tensor& y, const Tensor& dy) {
    Tensor dx(dy.channels, dy.height, dy.width);
    simd::kernels().leaky_relu_backward(y.size(), kLeakySlope, y.data.data(), dy.data.data(), dx.data.data());
    return dx;
}

Conv2d::Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride, bool bias)
    : weight(name + ".weight", {out_channels, in_channels * kernel * kernel}),
      in_(in_channels),
      out_(out_channels),
      kernel_(kernel),
      stride_(stride) {
    if (kernel % 2 != 1 || stride < 1) throw ParameterError("conv '" + name + "': odd kernel and stride >= 1 required");
    if (bias) this->bias = Parameter(name + ".bias", {out_channels});
}

void Conv2d::init(Rng& rng, double gain) {
    const double std = gain / std::sqrt(static_cast<double>(in_ * kernel_ * kernel_));
    for (double& w : weight.value) w = std * rng.normal();
    std::fill(bias.value.begin(), bias.value.end(), 0.0);
}

std::vector<double> Conv2d::im2col(const Tensor& x, int ho, int wo) const {
    const int pad = (kernel_ - 1) / 2;
    const std::size_t n = static_cast<std::size_t>(ho) * wo;
    std::vector<double> cols(static_cast<std::size_t>(in_) * kernel_ * kernel_ * n);
    std::size_t row = 0;
    for (int c = 0; c < in_; ++c) {
        const double* src = x.plane(c);
        for (int ky = 0; ky < kernel_; ++ky) {
            for (int kx = 0; kx < kernel_; ++kx, ++row) {
                double* dst = cols.data() + row * n;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = std::clamp(oy * stride_ + ky - pad, 0, x.height - 1);
                    const double* srow = src + static_cast<std::size_t>(iy) * x.width;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = std::clamp(ox * stride_ + kx - pad, 0, x.width - 1);
                        dst[oy * wo + ox] = srow[ix];
                    }
                }
            }
        }
    }
    return cols;
}

void Conv2d::col2im(const std::vector<double>& cols, Tensor& dx, int ho, int wo) const {
    const int pad = (kernel_ - 1) / 2;
    const std::size_t n = static_cast<std::size_t>(ho) * wo;
    std::size_t row = 0;
    for (int c = 0; c < in_; ++c) {
        double* dst = dx.plane(c);
        for (int ky = 0; ky < kernel_; ++ky) {
            for (int kx = 0; kx < kernel_; ++kx, ++row) {
                const double* src = cols.data() + row * n;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = std::clamp(oy * stride_ + ky - pad, 0, dx.height - 1);
                    double* drow = dst + static_cast<std::size_t>(iy) * dx.width;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = std::clamp(ox * stride_ + kx - pad, 0, dx.width - 1);
                        drow[ix] += src[oy * wo + ox];
                    }
                }
            }
        }
    }
}

Tensor Conv2d::forward(const Tensor& x) const {
    if (x.channels != in_) throw ParameterError("conv '" + weight.name + "': expected " + std::to_string(in_) +
                                                " input channels, got " + std::to_string(x.channels));
    const int ho = out_size(x.height), wo = out_size(x.width);
    const int n = ho * wo;
    const int k = in_ * kernel_ * kernel_;
    Tensor y(out_, ho, wo);
    if (has_bias())
        for (int c = 0; c < out_; ++c) std::fill(y.plane(c), y.plane(c) + n, bias.value[c]);
    const auto& kt = simd::kernels();
    if (kernel_ == 1 && stride_ == 1) {
        kt.gemm_nn(out_, n, k, weight.value.data(), k, x.data.data(), n, y.data.data(), n);
    } else {
        const std::vector<double> cols = im2col(x, ho, wo);
        kt.gemm_nn(out_, n, k, weight.value.data(), k, cols.data(), n, y.data.data(), n);
    }
    return y;
}

Tensor Conv2d::backward(const Tensor& x, const Tensor& dy, bool need_dx, bool param_grads) {
    const int ho = dy.height, wo = dy.width;
    const int n = ho * wo;
    const int k = in_ * kernel_ * kernel_;
    const auto& kt = simd::kernels();
    const bool direct = kernel_ == 1 && stride_ == 1;
    std::vector<double> cols;
    if (!direct && param_grads) cols = im2col(x, ho, wo);
    if (param_grads) {
        const double* b = direct ? x.data.data() : cols.data();
        kt.gemm_nt(out_, k, n, dy.data.data(), n, b, n, weight.grad.data(), k);
        if (has_bias()) {
            for (int c = 0; c < out_; ++c) {
                const double* g = dy.plane(c);
                double s = 0.0;
                for (int i = 0; i < n; ++i) s += g[i];
                bias.grad[c] += s;
            }
        }
    }
    if (!need_dx) return {};
    Tensor dx(in_, x.height, x.width);
    if (direct) {
        kt.gemm_tn(k, n, out_, weight.value.data(), k, dy.data.data(), n, dx.data.data(), n);
    } else {
        std::vector<double> dcols(static_cast<std::size_t>(k) * n, 0.0);
        kt.gemm_tn(k, n, out_, weight.value.data(), k, dy.data.data(), n, dcols.data(), n);
        col2im(dcols, dx, ho, wo);
    }
    return dx;
}

GroupNorm::GroupNorm(const std::string& name, int channels)
    : gamma(name + ".gamma", {channels}), beta(name + ".beta", {channels}), channels_(channels) {
    std::fill(gamma.value.begin(), gamma.value.end(), 1.0);
    // Largest group count up to 8 that leaves at least 4 channels per group.
    groups_ = 1;
    for (int g = std::min(8, channels / 4); g > 1; --g)
        if (channels % g == 0) {
            groups_ = g;
            break;
        }
}

Tensor GroupNorm::forward(const Tensor& x, Cache* cache) const {
    if (x.channels != channels_) throw ParameterError("group norm '" + gamma.name + "': channel mismatch");
    const int per = channels_ / groups_;
    const std::size_t plane = x.plane_size();
    const double count = static_cast<double>(per) * static_cast<double>(plane);
    Tensor xhat(x.channels, x.height, x.width);
    std::vector<double> inv(groups_);
    for (int g = 0; g < groups_; ++g) {
        const double* src = x.plane(g * per);
        const std::size_t n = static_cast<std::size_t>(per) * plane;
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += src[i];
        mean /= count;
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) var += (src[i] - mean) * (src[i] - mean);
        var /= count;
        inv[g] = 1.0 / std::sqrt(var + kEps);
        double* dst = xhat.plane(g * per);
        for (std::size_t i = 0; i < n; ++i) dst[i] = (src[i] - mean) * inv[g];
    }
    Tensor y(x.channels, x.height, x.width);
    for (int c = 0; c < channels_; ++c) {
        const double* h = xhat.plane(c);
        double* o = y.plane(c);
        for (std::size_t i = 0; i < plane; ++i) o[i] = gamma.value[c] * h[i] + beta.value[c];
    }
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->inv_std = std::move(inv);
    }
    return y;
}

Tensor GroupNorm::backward(const Cache& cache, const Tensor& dy, bool param_grads) {
    const Tensor& xhat = cache.xhat;
    const int per = channels_ / groups_;
    const std::size_t plane = xhat.plane_size();
    const double count = static_cast<double>(per) * static_cast<double>(plane);
    Tensor dx(xhat.channels, xhat.height, xhat.width);
    for (int g = 0; g < groups_; ++g) {
        double sum_d = 0.0, sum_dx = 0.0;
        for (int c = g * per; c < (g + 1) * per; ++c) {
            const double* d = dy.plane(c);
            const double* h = xhat.plane(c);
            double sd = 0.0, sdx = 0.0;
            for (std::size_t i = 0; i < plane; ++i) {
                sd += d[i];
                sdx += d[i] * h[i];
            }
            if (param_grads) {
                gamma.grad[c] += sdx;
                beta.grad[c] += sd;
            }
            sum_d += gamma.value[c] * sd;
            sum_dx += gamma.value[c] * sdx;
        }
        const double mean_d = sum_d / count, mean_dx = sum_dx / count;
        for (int c = g * per; c < (g + 1) * per; ++c) {
            const double* d = dy.plane(c);
            const double* h = xhat.plane(c);
            double* o = dx.plane(c);
            const double gc = gamma.value[c];
            for (std::size_t i = 0; i < plane; ++i) o[i] = cache.inv_std[g] * (gc * d[i] - mean_d - h[i] * mean_dx);
        }
    }
    return dx;
}

ConvAct::ConvAct(Conv2d c, bool act, bool with_norm)
    : conv(std::move(c)), activate(act), normalize(with_norm) {
    if (normalize) norm = GroupNorm(conv.weight.name.substr(0, conv.weight.name.rfind('.')) + ".norm", conv.out_channels());
}

Tensor ConvAct::forward(const Tensor& x, Cache* cache) const {
    Tensor y = conv.forward(x);
    if (normalize) {
        Cache local;
        y = norm.forward(y, cache ? cache : &local);
    }
    if (activate) leaky_relu_inplace(y);
    return y;
}

Tensor ConvAct::backward(const Tensor& x, const Tensor& y, const Tensor& dy, bool need_dx, bool param_grads,
                         const Cache* cache) {
    Tensor g = activate ? leaky_relu_backward(y, dy) : dy;
    if (normalize) {
        if (!cache) throw StateError("conv block '" + conv.weight.name + "': backward needs the forward cache");
        g = norm.backward(*cache, g, param_grads);
    }
    return conv.backward(x, g, need_dx, param_grads);
}

Linear::Linear(const std::string& name, int in_features, int out_features)
    : weight(name + ".weight", {out_features, in_features}),
      bias(name + ".bias", {out_features}),
      in_(in_features),
      out_(out_features) {}

void Linear::init(Rng& rng, double gain) {
    const double std = gain / std::sqrt(static_cast<double>(in_));
    for (double& w : weight.value) w = std * rng.normal();
    std::fill(bias.value.begin(), bias.value.end(), 0.0);
}

std::vector<double> Linear::forward(std::span<const double> x) const {
    if (static_cast<int>(x.size()) != in_) throw ParameterError("linear '" + weight.name + "': input size mismatch");
    std::vector<double> y(bias.value);
    const auto& kt = simd::kernels();
    for (int o = 0; o < out_; ++o) y[o] += kt.dot(in_, weight.value.data() + static_cast<std::size_t>(o) * in_, x.data());
    return y;
}

std::vector<double> Linear::backward(std::span<const double> x, std::span<const double> dy, bool need_dx,
                                     bool param_grads) {
    const auto& kt = simd::kernels();
    if (param_grads) {
        for (int o = 0; o < out_; ++o) {
            kt.axpy(in_, dy[o], x.data(), weight.grad.data() + static_cast<std::size_t>(o) * in_);
            bias.grad[o] += dy[o];
        }
    }
    if (!need_dx) return {};
    std::vector<double> dx(in_, 0.0);
    for (int o = 0; o < out_; ++o) kt.axpy(in_, dy[o], weight.value.data() + static_cast<std::size_t>(o) * in_, dx.data());
    return dx;
}

}  // namespace mapl::nn
