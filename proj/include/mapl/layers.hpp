#pragma once

#include "mapl/rng.hpp"
#include "mapl/tensor.hpp"

#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace mapl::nn {

/// Negative slope of every LeakyReLU in the network.
inline constexpr double kLeakySlope = 0.01;

struct Parameter {
    std::string name;
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool trainable = true;

    Parameter() = default;
    Parameter(std::string n, std::vector<int> s);

    std::size_t size() const noexcept { return value.size(); }
    void zero_grad();
};

void leaky_relu_inplace(Tensor& t);
Tensor leaky_relu_backward(const Tensor& y, const Tensor& dy);

inline double sigmoid(double z) { return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

/// 2-D convolution with replicate ("edge") padding of (kernel - 1) / 2, so a
/// constant input plane yields a constant output plane.
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride, bool bias);

    /// Weights ~ N(0, (gain^2) / fan_in); bias zero.
    void init(Rng& rng, double gain);

    Tensor forward(const Tensor& x) const;
    /// Returns dL/dx (empty when need_dx is false); adds dL/dW, dL/db into
    /// the parameter grads when param_grads is true.
    Tensor backward(const Tensor& x, const Tensor& dy, bool need_dx, bool param_grads);

    int in_channels() const noexcept { return in_; }
    int out_channels() const noexcept { return out_; }
    int kernel() const noexcept { return kernel_; }
    int stride() const noexcept { return stride_; }
    bool has_bias() const noexcept { return !bias.value.empty(); }

    Parameter weight;  // [out, in * k * k]
    Parameter bias;    // [out] or empty

private:
    int in_ = 0, out_ = 0, kernel_ = 1, stride_ = 1;

    int out_size(int n) const { return (n + 2 * ((kernel_ - 1) / 2) - kernel_) / stride_ + 1; }
    std::vector<double> im2col(const Tensor& x, int ho, int wo) const;
    void col2im(const std::vector<double>& cols, Tensor& dx, int ho, int wo) const;
};

/// Per-sample group normalisation with a per-channel affine transform.
/// Batch independent, and a constant group maps to its shift beta.
class GroupNorm {
public:
    GroupNorm() = default;
    GroupNorm(const std::string& name, int channels);

    struct Cache {
        Tensor xhat;
        std::vector<double> inv_std;  // per group
    };
    Tensor forward(const Tensor& x, Cache* cache) const;
    Tensor backward(const Cache& cache, const Tensor& dy, bool param_grads);
    int groups() const noexcept { return groups_; }

    Parameter gamma;  // [channels], init 1
    Parameter beta;   // [channels], init 0
    static constexpr double kEps = 1e-5;

private:
    int channels_ = 0, groups_ = 1;
};

/// Convolution, optional group normalisation, optional LeakyReLU.
struct ConvAct {
    Conv2d conv;
    bool activate = true;
    bool normalize = false;
    GroupNorm norm;

    ConvAct() = default;
    ConvAct(Conv2d c, bool act, bool with_norm);

    using Cache = GroupNorm::Cache;
    /// cache is required for backward when the block normalises.
    Tensor forward(const Tensor& x, Cache* cache = nullptr) const;
    /// x is the block input, y its output as returned by forward.
    Tensor backward(const Tensor& x, const Tensor& y, const Tensor& dy, bool need_dx, bool param_grads,
                    const Cache* cache = nullptr);
};

class Linear {
public:
    Linear() = default;
    Linear(const std::string& name, int in_features, int out_features);

    void init(Rng& rng, double gain);

    std::vector<double> forward(std::span<const double> x) const;
    std::vector<double> backward(std::span<const double> x, std::span<const double> dy, bool need_dx,
                                 bool param_grads);

    int in_features() const noexcept { return in_; }
    int out_features() const noexcept { return out_; }

    Parameter weight;  // [out, in]
    Parameter bias;    // [out]

private:
    int in_ = 0, out_ = 0;
};

}  // namespace mapl::nn
