#include "eir/kernels.hpp"

#include <algorithm>
#include <cstring>
#include <stdexcept>
#include <vector>

namespace eir::kernels {

namespace {

constexpr int kLanes = 8;   // output columns per register tile
constexpr int kBlock = 4;   // output channels per register tile

using Lanes = double __attribute__((vector_size(kLanes * sizeof(double))));

inline Lanes splat(double v) { return Lanes{} + v; }

template <int St>
inline Lanes load_strided(const double* p) {
    Lanes x;
    if constexpr (St == 1) {
        std::memcpy(&x, p, sizeof x);
    } else {
        for (int j = 0; j < kLanes; ++j) x[j] = p[j * St];
    }
    return x;
}

/// Output channels oc0..oc0+NB-1 of one output row, columns [ox, ox+8).
template <int St, int NB>
inline void conv_tile(int in_c, std::size_t in_plane, int wp, const double* in, int k, const double* w,
                      const double* bias, int oc0, int oy, int ox, std::size_t out_plane, int ow, double* out,
                      bool accumulate) {
    const int kk = k * k;
    const std::size_t wstride = static_cast<std::size_t>(in_c) * kk;
    Lanes acc[NB];
    for (int b = 0; b < NB; ++b) acc[b] = splat(bias ? bias[oc0 + b] : 0.0);
    for (int ic = 0; ic < in_c; ++ic) {
        const double* plane = in + ic * in_plane;
        const double* wb = w + (static_cast<std::size_t>(oc0) * in_c + ic) * kk;
        for (int ky = 0; ky < k; ++ky) {
            const double* row = plane + static_cast<std::size_t>(oy * St + ky) * wp + ox * St;
            for (int kx = 0; kx < k; ++kx) {
                const Lanes x = load_strided<St>(row + kx);
                const int t = ky * k + kx;
                for (int b = 0; b < NB; ++b) acc[b] += wb[b * wstride + t] * x;
            }
        }
    }
    for (int b = 0; b < NB; ++b) {
        double* o = out + (oc0 + b) * out_plane + static_cast<std::size_t>(oy) * ow + ox;
        Lanes v = acc[b];
        if (accumulate) {
            Lanes prev;
            std::memcpy(&prev, o, sizeof prev);
            v += prev;
        }
        std::memcpy(o, &v, sizeof v);
    }
}

/// Valid (unpadded) convolution of a pre-padded CHW buffer, register-tiled over
/// up to 4 output channels x 8 output columns. `w` is [out_c][in_c][k][k]; `bias`
/// may be null. out = (accumulate ? out : 0) + bias + conv.
template <int St>
void valid_conv_t(int in_c, int hp, int wp, const double* in, int out_c, int k, const double* w, const double* bias,
                  int oh, int ow, double* out, bool accumulate) {
    const std::size_t in_plane = static_cast<std::size_t>(hp) * wp;
    const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
    const int kk = k * k;
    const int blocks = (out_c + kBlock - 1) / kBlock;

#pragma omp parallel for schedule(static)
    for (int blk = 0; blk < blocks; ++blk) {
        const int oc0 = blk * kBlock;
        const int nb = std::min(kBlock, out_c - oc0);
        for (int oy = 0; oy < oh; ++oy) {
            int ox = 0;
            for (; ox + kLanes <= ow; ox += kLanes) {
                switch (nb) {
                    case 4: conv_tile<St, 4>(in_c, in_plane, wp, in, k, w, bias, oc0, oy, ox, out_plane, ow, out, accumulate); break;
                    case 3: conv_tile<St, 3>(in_c, in_plane, wp, in, k, w, bias, oc0, oy, ox, out_plane, ow, out, accumulate); break;
                    case 2: conv_tile<St, 2>(in_c, in_plane, wp, in, k, w, bias, oc0, oy, ox, out_plane, ow, out, accumulate); break;
                    default: conv_tile<St, 1>(in_c, in_plane, wp, in, k, w, bias, oc0, oy, ox, out_plane, ow, out, accumulate); break;
                }
            }
            for (int b = 0; b < nb; ++b) {
                const int oc = oc0 + b;
                for (int x0 = ox; x0 < ow; ++x0) {
                    double acc = bias ? bias[oc] : 0.0;
                    for (int ic = 0; ic < in_c; ++ic) {
                        const double* plane = in + ic * in_plane;
                        const double* wk = w + (static_cast<std::size_t>(oc) * in_c + ic) * kk;
                        for (int ky = 0; ky < k; ++ky) {
                            const double* row = plane + static_cast<std::size_t>(oy * St + ky) * wp + x0 * St;
                            for (int kx = 0; kx < k; ++kx) acc += wk[ky * k + kx] * row[kx];
                        }
                    }
                    double& o = out[oc * out_plane + static_cast<std::size_t>(oy) * ow + x0];
                    o = accumulate ? o + acc : acc;
                }
            }
        }
    }
}

/// dL/dW for one (oc, ic) pair with a K x K kernel: 8-wide partial sums per tap.
template <int St, int K>
void weight_grad_tile(const double* go, int oh, int ow, const double* ip, int wp, double* gw) {
    Lanes acc[K * K];
    for (auto& a : acc) a = splat(0.0);
    double tail[K * K] = {};
    for (int oy = 0; oy < oh; ++oy) {
        const double* gorow = go + static_cast<std::size_t>(oy) * ow;
        int ox = 0;
        for (; ox + kLanes <= ow; ox += kLanes) {
            Lanes g;
            std::memcpy(&g, gorow + ox, sizeof g);
            for (int ky = 0; ky < K; ++ky) {
                const double* row = ip + static_cast<std::size_t>(oy * St + ky) * wp + ox * St;
                for (int kx = 0; kx < K; ++kx) acc[ky * K + kx] += g * load_strided<St>(row + kx);
            }
        }
        for (; ox < ow; ++ox)
            for (int ky = 0; ky < K; ++ky) {
                const double* row = ip + static_cast<std::size_t>(oy * St + ky) * wp + ox * St;
                for (int kx = 0; kx < K; ++kx) tail[ky * K + kx] += gorow[ox] * row[kx];
            }
    }
    for (int t = 0; t < K * K; ++t) {
        double sum = tail[t];
        for (int j = 0; j < kLanes; ++j) sum += acc[t][j];
        gw[t] += sum;
    }
}

void valid_conv(int in_c, int hp, int wp, const double* in, int out_c, int k, int st, const double* w,
                const double* bias, int oh, int ow, double* out, bool accumulate) {
    if (st == 1) valid_conv_t<1>(in_c, hp, wp, in, out_c, k, w, bias, oh, ow, out, accumulate);
    else if (st == 2) valid_conv_t<2>(in_c, hp, wp, in, out_c, k, w, bias, oh, ow, out, accumulate);
    else throw std::invalid_argument("stride must be 1 or 2");
}

/// Copies a CHW tensor into a zero border of `top`/`left` rows/columns, total size hp x wp.
std::vector<double> pad_planes(int c, int h, int w, const double* src, int hp, int wp, int top, int left) {
    std::vector<double> out(static_cast<std::size_t>(c) * hp * wp, 0.0);
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            std::copy_n(src + (static_cast<std::size_t>(ch) * h + y) * w, w,
                        out.data() + (static_cast<std::size_t>(ch) * hp + y + top) * wp + left);
    return out;
}

}  // namespace

namespace reference {

void conv2d_forward(const ConvShape& s, std::span<const double> in, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> out) {
    const int oh = s.out_h(), ow = s.out_w(), k = s.kernel;
    for (int oc = 0; oc < s.out_c; ++oc)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                double acc = bias[oc];
                for (int ic = 0; ic < s.in_c; ++ic)
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx) {
                            const int iy = oy * s.stride - s.pad + ky;
                            const int ix = ox * s.stride - s.pad + kx;
                            if (iy < 0 || iy >= s.in_h || ix < 0 || ix >= s.in_w) continue;
                            acc += weight[((oc * s.in_c + ic) * k + ky) * k + kx] *
                                   in[(static_cast<std::size_t>(ic) * s.in_h + iy) * s.in_w + ix];
                        }
                out[(static_cast<std::size_t>(oc) * oh + oy) * ow + ox] = acc;
            }
}

void conv2d_backward_input(const ConvShape& s, std::span<const double> grad_out, std::span<const double> weight,
                           std::span<double> grad_in) {
    const int oh = s.out_h(), ow = s.out_w(), k = s.kernel;
    for (int oc = 0; oc < s.out_c; ++oc)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                const double g = grad_out[(static_cast<std::size_t>(oc) * oh + oy) * ow + ox];
                for (int ic = 0; ic < s.in_c; ++ic)
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx) {
                            const int iy = oy * s.stride - s.pad + ky;
                            const int ix = ox * s.stride - s.pad + kx;
                            if (iy < 0 || iy >= s.in_h || ix < 0 || ix >= s.in_w) continue;
                            grad_in[(static_cast<std::size_t>(ic) * s.in_h + iy) * s.in_w + ix] +=
                                weight[((oc * s.in_c + ic) * k + ky) * k + kx] * g;
                        }
            }
}

void conv2d_backward_params(const ConvShape& s, std::span<const double> in, std::span<const double> grad_out,
                            std::span<double> grad_weight, std::span<double> grad_bias) {
    const int oh = s.out_h(), ow = s.out_w(), k = s.kernel;
    for (int oc = 0; oc < s.out_c; ++oc)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                const double g = grad_out[(static_cast<std::size_t>(oc) * oh + oy) * ow + ox];
                grad_bias[oc] += g;
                for (int ic = 0; ic < s.in_c; ++ic)
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx) {
                            const int iy = oy * s.stride - s.pad + ky;
                            const int ix = ox * s.stride - s.pad + kx;
                            if (iy < 0 || iy >= s.in_h || ix < 0 || ix >= s.in_w) continue;
                            grad_weight[((oc * s.in_c + ic) * k + ky) * k + kx] +=
                                g * in[(static_cast<std::size_t>(ic) * s.in_h + iy) * s.in_w + ix];
                        }
            }
}

}  // namespace reference

namespace parallel {

void conv2d_forward(const ConvShape& s, std::span<const double> in, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> out) {
    const int hp = s.in_h + 2 * s.pad, wp = s.in_w + 2 * s.pad;
    const auto padded = pad_planes(s.in_c, s.in_h, s.in_w, in.data(), hp, wp, s.pad, s.pad);
    valid_conv(s.in_c, hp, wp, padded.data(), s.out_c, s.kernel, s.stride, weight.data(), bias.data(), s.out_h(),
               s.out_w(), out.data(), false);
}

void conv2d_backward_input(const ConvShape& s, std::span<const double> grad_out, std::span<const double> weight,
                           std::span<double> grad_in) {
    // Transposed convolution: scatter grad_out onto a zero grid at stride spacing,
    // then run a stride-1 valid convolution with the flipped, transposed kernel.
    const int oh = s.out_h(), ow = s.out_w(), k = s.kernel, st = s.stride;
    const int hp = s.in_h + k - 1, wp = s.in_w + k - 1, off = k - 1 - s.pad;
    std::vector<double> grid(static_cast<std::size_t>(s.out_c) * hp * wp, 0.0);
    for (int oc = 0; oc < s.out_c; ++oc)
        for (int oy = 0; oy < oh; ++oy) {
            const int gy = oy * st + off;
            if (gy < 0 || gy >= hp) continue;
            for (int ox = 0; ox < ow; ++ox) {
                const int gx = ox * st + off;
                if (gx < 0 || gx >= wp) continue;
                grid[(static_cast<std::size_t>(oc) * hp + gy) * wp + gx] =
                    grad_out[(static_cast<std::size_t>(oc) * oh + oy) * ow + ox];
            }
        }
    const int kk = k * k;
    std::vector<double> flipped(static_cast<std::size_t>(s.in_c) * s.out_c * kk);
    for (int oc = 0; oc < s.out_c; ++oc)
        for (int ic = 0; ic < s.in_c; ++ic)
            for (int t = 0; t < kk; ++t)
                flipped[(static_cast<std::size_t>(ic) * s.out_c + oc) * kk + (kk - 1 - t)] =
                    weight[(static_cast<std::size_t>(oc) * s.in_c + ic) * kk + t];
    valid_conv(s.out_c, hp, wp, grid.data(), s.in_c, k, 1, flipped.data(), nullptr, s.in_h, s.in_w, grad_in.data(),
               true);
}

void conv2d_backward_params(const ConvShape& s, std::span<const double> in, std::span<const double> grad_out,
                            std::span<double> grad_weight, std::span<double> grad_bias) {
    const int oh = s.out_h(), ow = s.out_w(), k = s.kernel, st = s.stride, kk = k * k;
    const int hp = s.in_h + 2 * s.pad, wp = s.in_w + 2 * s.pad;
    const auto padded = pad_planes(s.in_c, s.in_h, s.in_w, in.data(), hp, wp, s.pad, s.pad);
    const std::size_t in_plane = static_cast<std::size_t>(hp) * wp;
    const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;

#pragma omp parallel for schedule(static)
    for (int oc = 0; oc < s.out_c; ++oc) {
        const double* go = grad_out.data() + oc * out_plane;
        double bsum = 0.0;
#pragma omp simd reduction(+ : bsum)
        for (std::size_t i = 0; i < out_plane; ++i) bsum += go[i];
        grad_bias[oc] += bsum;
        for (int ic = 0; ic < s.in_c; ++ic) {
            const double* ip = padded.data() + ic * in_plane;
            double* gw = grad_weight.data() + (static_cast<std::size_t>(oc) * s.in_c + ic) * kk;
            if (k == 3 && st == 1) weight_grad_tile<1, 3>(go, oh, ow, ip, wp, gw);
            else if (k == 3 && st == 2) weight_grad_tile<2, 3>(go, oh, ow, ip, wp, gw);
            else if (k == 1 && st == 1) weight_grad_tile<1, 1>(go, oh, ow, ip, wp, gw);
            else if (k == 1 && st == 2) weight_grad_tile<2, 1>(go, oh, ow, ip, wp, gw);
            else
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx) {
                        double a = 0.0;
                        for (int oy = 0; oy < oh; ++oy)
                            for (int ox = 0; ox < ow; ++ox)
                                a += go[static_cast<std::size_t>(oy) * ow + ox] *
                                     ip[static_cast<std::size_t>(oy * st + ky) * wp + ox * st + kx];
                        gw[ky * k + kx] += a;
                    }
        }
    }
}

}  // namespace parallel

void resize_nearest(int channels, int in_h, int in_w, std::span<const double> in, int out_h, int out_w,
                    std::span<double> out) {
    for (int c = 0; c < channels; ++c)
        for (int y = 0; y < out_h; ++y) {
            const int sy = static_cast<int>(static_cast<long>(y) * in_h / out_h);
            const double* src = in.data() + (static_cast<std::size_t>(c) * in_h + sy) * in_w;
            double* dst = out.data() + (static_cast<std::size_t>(c) * out_h + y) * out_w;
            for (int x = 0; x < out_w; ++x) dst[x] = src[static_cast<long>(x) * in_w / out_w];
        }
}

void resize_nearest_backward(int channels, int in_h, int in_w, std::span<double> grad_in, int out_h, int out_w,
                             std::span<const double> grad_out) {
    for (int c = 0; c < channels; ++c)
        for (int y = 0; y < out_h; ++y) {
            const int sy = static_cast<int>(static_cast<long>(y) * in_h / out_h);
            double* dst = grad_in.data() + (static_cast<std::size_t>(c) * in_h + sy) * in_w;
            const double* src = grad_out.data() + (static_cast<std::size_t>(c) * out_h + y) * out_w;
            for (int x = 0; x < out_w; ++x) dst[static_cast<long>(x) * in_w / out_w] += src[x];
        }
}

}  // namespace eir::kernels
