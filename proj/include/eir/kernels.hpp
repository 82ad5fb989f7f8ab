#pragma once

#include <span>

namespace eir::kernels {

/// Geometry of a 2-D convolution over one CHW image.
/// Weights are laid out [out_c][in_c][k][k].
struct ConvShape {
    int in_c = 0;
    int in_h = 0;
    int in_w = 0;
    int out_c = 0;
    int kernel = 3;
    int stride = 1;
    int pad = 1;

    int out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
    int out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
    long weight_count() const { return static_cast<long>(out_c) * in_c * kernel * kernel; }
};

// Naive direct loops, one bounds check per tap. Kept as the ground truth for tests
// and the benchmark.
namespace reference {
void conv2d_forward(const ConvShape& s, std::span<const double> in, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> out);
/// grad_in += dL/d(in)
void conv2d_backward_input(const ConvShape& s, std::span<const double> grad_out, std::span<const double> weight,
                           std::span<double> grad_in);
/// grad_weight += dL/dW, grad_bias += dL/db
void conv2d_backward_params(const ConvShape& s, std::span<const double> in, std::span<const double> grad_out,
                            std::span<double> grad_weight, std::span<double> grad_bias);
}  // namespace reference

// Row-sweep kernels with hoisted bounds, parallel across channels with OpenMP.
// Every output element is written by one thread, so results do not depend on the
// thread count.
namespace parallel {
void conv2d_forward(const ConvShape& s, std::span<const double> in, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> out);
void conv2d_backward_input(const ConvShape& s, std::span<const double> grad_out, std::span<const double> weight,
                           std::span<double> grad_in);
void conv2d_backward_params(const ConvShape& s, std::span<const double> in, std::span<const double> grad_out,
                            std::span<double> grad_weight, std::span<double> grad_bias);
}  // namespace parallel

/// Nearest-neighbour resize of every channel plane to (out_h, out_w).
void resize_nearest(int channels, int in_h, int in_w, std::span<const double> in, int out_h, int out_w,
                    std::span<double> out);
/// Adjoint of resize_nearest: grad_in += scatter(grad_out).
void resize_nearest_backward(int channels, int in_h, int in_w, std::span<double> grad_in, int out_h, int out_w,
                             std::span<const double> grad_out);

}  // namespace eir::kernels
