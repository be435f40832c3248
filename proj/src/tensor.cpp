#include "mapl/tensor.hpp"

#include "mapl/error.hpp"

#include <cmath>
#include <numeric>

namespace mapl {

double Tensor::sum() const { return std::accumulate(data.begin(), data.end(), 0.0); }

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

Tensor& Tensor::operator+=(const Tensor& o) {
    if (!same_shape(o)) throw ParameterError("tensor add: shape mismatch");
    for (std::size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
    return *this;
}

Tensor upsample2x(const Tensor& x) {
    Tensor y(x.channels, x.height * 2, x.width * 2);
    for (int c = 0; c < x.channels; ++c)
        for (int yy = 0; yy < y.height; ++yy)
            for (int xx = 0; xx < y.width; ++xx) y.at(c, yy, xx) = x.at(c, yy / 2, xx / 2);
    return y;
}

Tensor upsample2x_adjoint(const Tensor& dy) {
    Tensor dx(dy.channels, dy.height / 2, dy.width / 2);
    for (int c = 0; c < dy.channels; ++c)
        for (int yy = 0; yy < dy.height; ++yy)
            for (int xx = 0; xx < dy.width; ++xx) dx.at(c, yy / 2, xx / 2) += dy.at(c, yy, xx);
    return dx;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.height != b.height || a.width != b.width) throw ParameterError("concat: spatial size mismatch");
    Tensor y(a.channels + b.channels, a.height, a.width);
    std::copy(a.data.begin(), a.data.end(), y.data.begin());
    std::copy(b.data.begin(), b.data.end(), y.data.begin() + static_cast<std::ptrdiff_t>(a.size()));
    return y;
}

void split_channels(const Tensor& g, int channels_a, Tensor& ga, Tensor& gb) {
    ga = Tensor(channels_a, g.height, g.width);
    gb = Tensor(g.channels - channels_a, g.height, g.width);
    std::copy(g.data.begin(), g.data.begin() + static_cast<std::ptrdiff_t>(ga.size()), ga.data.begin());
    std::copy(g.data.begin() + static_cast<std::ptrdiff_t>(ga.size()), g.data.end(), gb.data.begin());
}

Tensor channel_mean(const Tensor& x) {
    Tensor m(1, x.height, x.width);
    const std::size_t n = x.plane_size();
    for (int c = 0; c < x.channels; ++c) {
        const double* p = x.plane(c);
        for (std::size_t i = 0; i < n; ++i) m.data[i] += p[i];
    }
    const double inv = 1.0 / static_cast<double>(x.channels);
    for (double& v : m.data) v *= inv;
    return m;
}

Tensor multiply_broadcast(const Tensor& x, const Tensor& map) {
    if (map.channels != 1 || map.height != x.height || map.width != x.width)
        throw ParameterError("broadcast multiply: map shape mismatch");
    Tensor y(x.channels, x.height, x.width);
    const std::size_t n = x.plane_size();
    for (int c = 0; c < x.channels; ++c) {
        const double* p = x.plane(c);
        double* q = y.plane(c);
        for (std::size_t i = 0; i < n; ++i) q[i] = p[i] * map.data[i];
    }
    return y;
}

Tensor channel_dot(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw ParameterError("channel dot: shape mismatch");
    Tensor m(1, a.height, a.width);
    const std::size_t n = a.plane_size();
    for (int c = 0; c < a.channels; ++c) {
        const double* p = a.plane(c);
        const double* q = b.plane(c);
        for (std::size_t i = 0; i < n; ++i) m.data[i] += p[i] * q[i];
    }
    return m;
}

}  // namespace mapl
