#include "csp/ops.hpp"

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>
#include <string>

namespace csp {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;

constexpr double kNormEps = 1e-10;

void check_conv_shapes(const Tensor& input, const ConvParams& p, const char* op, bool transposed)
{
    const int expected_in = transposed ? p.weight.shape[0] : p.weight.shape[1];
    if (input.c() != expected_in) {
        throw std::invalid_argument(std::string(op) + ": input has " + std::to_string(input.c()) +
                                    " channels but weight " + shape_str(p.weight) + " expects " +
                                    std::to_string(expected_in));
    }
    const int bias_ch = transposed ? p.weight.shape[1] : p.weight.shape[0];
    if (static_cast<int>(p.bias.numel()) != bias_ch) {
        throw std::invalid_argument(std::string(op) + ": bias has " + std::to_string(p.bias.numel()) +
                                    " entries, expected " + std::to_string(bias_ch));
    }
    if (p.stride < 1 || p.padding < 0 || p.dilation < 1) {
        throw std::invalid_argument(std::string(op) + ": invalid stride/padding/dilation");
    }
}

// Gathers conv input patches into a (C*kh*kw, H_out*W_out) matrix.
void im2col(const double* in, int C, int H, int W, int kh, int kw, int stride, int pad,
            int dil, int Ho, int Wo, RowMat& col)
{
    col.setZero(C * kh * kw, static_cast<Eigen::Index>(Ho) * Wo);
    for (int c = 0; c < C; ++c) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                double* dst = col.row((c * kh + ki) * kw + kj).data();
                const double* src = in + static_cast<std::size_t>(c) * H * W;
                for (int oy = 0; oy < Ho; ++oy) {
                    const int iy = oy * stride - pad + ki * dil;
                    if (iy < 0 || iy >= H) {
                        continue;
                    }
                    for (int ox = 0; ox < Wo; ++ox) {
                        const int ix = ox * stride - pad + kj * dil;
                        if (ix >= 0 && ix < W) {
                            dst[oy * Wo + ox] = src[iy * W + ix];
                        }
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatter-adds patch columns back onto the input grid.
void col2im(const RowMat& col, int C, int H, int W, int kh, int kw, int stride, int pad,
            int dil, int Ho, int Wo, double* out)
{
    for (int c = 0; c < C; ++c) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                const double* src = col.row((c * kh + ki) * kw + kj).data();
                double* dst = out + static_cast<std::size_t>(c) * H * W;
                for (int oy = 0; oy < Ho; ++oy) {
                    const int iy = oy * stride - pad + ki * dil;
                    if (iy < 0 || iy >= H) {
                        continue;
                    }
                    for (int ox = 0; ox < Wo; ++ox) {
                        const int ix = ox * stride - pad + kj * dil;
                        if (ix >= 0 && ix < W) {
                            dst[iy * W + ix] += src[oy * Wo + ox];
                        }
                    }
                }
            }
        }
    }
}

} // namespace

int conv_out_size(int in, int kernel, int stride, int padding, int dilation)
{
    return (in + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1;
}

int deconv_out_size(int in, int kernel, int stride, int padding, int dilation)
{
    return stride * (in - 1) + dilation * (kernel - 1) + 1 - 2 * padding;
}

Tensor conv2d_forward(const Tensor& input, const ConvParams& p)
{
    check_conv_shapes(input, p, "conv2d_forward", false);
    const int O = p.weight.shape[0], I = p.weight.shape[1];
    const int kh = p.weight.shape[2], kw = p.weight.shape[3];
    const int Ho = conv_out_size(input.h(), kh, p.stride, p.padding, p.dilation);
    const int Wo = conv_out_size(input.w(), kw, p.stride, p.padding, p.dilation);
    if (Ho < 1 || Wo < 1) {
        throw std::invalid_argument("conv2d_forward: output size " + std::to_string(Ho) + "x" +
                                    std::to_string(Wo) + " for input " + shape_str(input));
    }

    Tensor out(input.n(), O, Ho, Wo);
    const Eigen::Index L = static_cast<Eigen::Index>(Ho) * Wo;
    ConstRowMap wmat(p.weight.data.data(), O, static_cast<Eigen::Index>(I) * kh * kw);
    RowMat col;
    for (int n = 0; n < input.n(); ++n) {
        im2col(input.data.data() + input.index(n, 0, 0, 0), I, input.h(), input.w(), kh, kw,
               p.stride, p.padding, p.dilation, Ho, Wo, col);
        RowMap omat(out.data.data() + out.index(n, 0, 0, 0), O, L);
        omat.noalias() = wmat * col;
        for (int o = 0; o < O; ++o) {
            omat.row(o).array() += p.bias.data[o];
        }
    }
    return out;
}

ConvGrads conv2d_backward(const Tensor& input, const ConvParams& p, const Tensor& grad_out)
{
    check_conv_shapes(input, p, "conv2d_backward", false);
    const int O = p.weight.shape[0], I = p.weight.shape[1];
    const int kh = p.weight.shape[2], kw = p.weight.shape[3];
    const int Ho = conv_out_size(input.h(), kh, p.stride, p.padding, p.dilation);
    const int Wo = conv_out_size(input.w(), kw, p.stride, p.padding, p.dilation);
    if (grad_out.n() != input.n() || grad_out.c() != O || grad_out.h() != Ho || grad_out.w() != Wo) {
        throw std::invalid_argument("conv2d_backward: grad_out " + shape_str(grad_out) +
                                    " does not match forward output (" + std::to_string(input.n()) +
                                    ", " + std::to_string(O) + ", " + std::to_string(Ho) + ", " +
                                    std::to_string(Wo) + ")");
    }

    ConvGrads g;
    g.input = Tensor::zeros_like(input);
    g.weight = Tensor::zeros_like(p.weight);
    g.bias = Tensor::zeros_like(p.bias);

    const Eigen::Index K = static_cast<Eigen::Index>(I) * kh * kw;
    const Eigen::Index L = static_cast<Eigen::Index>(Ho) * Wo;
    ConstRowMap wmat(p.weight.data.data(), O, K);
    RowMap gwmat(g.weight.data.data(), O, K);
    RowMat col, gcol;
    for (int n = 0; n < input.n(); ++n) {
        ConstRowMap gout(grad_out.data.data() + grad_out.index(n, 0, 0, 0), O, L);

        im2col(input.data.data() + input.index(n, 0, 0, 0), I, input.h(), input.w(), kh, kw,
               p.stride, p.padding, p.dilation, Ho, Wo, col);
        gwmat.noalias() += gout * col.transpose();

        gcol.noalias() = wmat.transpose() * gout;
        col2im(gcol, I, input.h(), input.w(), kh, kw, p.stride, p.padding, p.dilation, Ho, Wo,
               g.input.data.data() + g.input.index(n, 0, 0, 0));

        for (int o = 0; o < O; ++o) {
            g.bias.data[o] += gout.row(o).sum();
        }
    }
    return g;
}

Tensor deconv2d_forward(const Tensor& input, const ConvParams& p)
{
    check_conv_shapes(input, p, "deconv2d_forward", true);
    const int A = p.weight.shape[0], B = p.weight.shape[1];
    const int kh = p.weight.shape[2], kw = p.weight.shape[3];
    const int Ho = deconv_out_size(input.h(), kh, p.stride, p.padding, p.dilation);
    const int Wo = deconv_out_size(input.w(), kw, p.stride, p.padding, p.dilation);
    if (Ho < 1 || Wo < 1) {
        throw std::invalid_argument("deconv2d_forward: output size " + std::to_string(Ho) + "x" +
                                    std::to_string(Wo) + " for input " + shape_str(input));
    }

    Tensor out(input.n(), B, Ho, Wo);
    const Eigen::Index K = static_cast<Eigen::Index>(B) * kh * kw;
    const Eigen::Index Lin = static_cast<Eigen::Index>(input.h()) * input.w();
    ConstRowMap wmat(p.weight.data.data(), A, K);
    RowMat gcol;
    for (int n = 0; n < input.n(); ++n) {
        ConstRowMap in_mat(input.data.data() + input.index(n, 0, 0, 0), A, Lin);
        gcol.noalias() = wmat.transpose() * in_mat;
        double* out_ptr = out.data.data() + out.index(n, 0, 0, 0);
        col2im(gcol, B, Ho, Wo, kh, kw, p.stride, p.padding, p.dilation, input.h(), input.w(),
               out_ptr);
        for (int b = 0; b < B; ++b) {
            double* ch = out_ptr + static_cast<std::size_t>(b) * Ho * Wo;
            for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(Ho) * Wo; ++i) {
                ch[i] += p.bias.data[b];
            }
        }
    }
    return out;
}

ConvGrads deconv2d_backward(const Tensor& input, const ConvParams& p, const Tensor& grad_out)
{
    check_conv_shapes(input, p, "deconv2d_backward", true);
    const int A = p.weight.shape[0], B = p.weight.shape[1];
    const int kh = p.weight.shape[2], kw = p.weight.shape[3];
    const int Ho = deconv_out_size(input.h(), kh, p.stride, p.padding, p.dilation);
    const int Wo = deconv_out_size(input.w(), kw, p.stride, p.padding, p.dilation);
    if (grad_out.n() != input.n() || grad_out.c() != B || grad_out.h() != Ho || grad_out.w() != Wo) {
        throw std::invalid_argument("deconv2d_backward: grad_out " + shape_str(grad_out) +
                                    " does not match forward output (" + std::to_string(input.n()) +
                                    ", " + std::to_string(B) + ", " + std::to_string(Ho) + ", " +
                                    std::to_string(Wo) + ")");
    }

    ConvGrads g;
    g.input = Tensor::zeros_like(input);
    g.weight = Tensor::zeros_like(p.weight);
    g.bias = Tensor::zeros_like(p.bias);

    const Eigen::Index K = static_cast<Eigen::Index>(B) * kh * kw;
    const Eigen::Index Lin = static_cast<Eigen::Index>(input.h()) * input.w();
    ConstRowMap wmat(p.weight.data.data(), A, K);
    RowMap gwmat(g.weight.data.data(), A, K);
    RowMat col;
    for (int n = 0; n < input.n(); ++n) {
        // grad_out plays the role of the conv input here.
        im2col(grad_out.data.data() + grad_out.index(n, 0, 0, 0), B, Ho, Wo, kh, kw, p.stride,
               p.padding, p.dilation, input.h(), input.w(), col);

        RowMap gin(g.input.data.data() + g.input.index(n, 0, 0, 0), A, Lin);
        gin.noalias() = wmat * col;

        ConstRowMap x_mat(input.data.data() + input.index(n, 0, 0, 0), A, Lin);
        gwmat.noalias() += x_mat * col.transpose();

        const double* go = grad_out.data.data() + grad_out.index(n, 0, 0, 0);
        for (int b = 0; b < B; ++b) {
            const double* ch = go + static_cast<std::size_t>(b) * Ho * Wo;
            double s = 0.0;
            for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(Ho) * Wo; ++i) {
                s += ch[i];
            }
            g.bias.data[b] += s;
        }
    }
    return g;
}

Tensor l2_normalize(const Tensor& input, double target_norm)
{
    if (target_norm <= 0.0) {
        throw std::invalid_argument("l2_normalize: target_norm must be positive");
    }
    Tensor out = Tensor::zeros_like(input);
    const int C = input.c();
    const std::size_t plane = static_cast<std::size_t>(input.h()) * input.w();
    for (int n = 0; n < input.n(); ++n) {
        const double* in = input.data.data() + input.index(n, 0, 0, 0);
        double* o = out.data.data() + out.index(n, 0, 0, 0);
        for (std::size_t s = 0; s < plane; ++s) {
            double sq = 0.0;
            for (int c = 0; c < C; ++c) {
                const double v = in[c * plane + s];
                sq += v * v;
            }
            const double norm = std::sqrt(sq);
            if (norm <= kNormEps) {
                continue; // zero vector stays zero
            }
            const double scale = target_norm / norm;
            for (int c = 0; c < C; ++c) {
                o[c * plane + s] = in[c * plane + s] * scale;
            }
        }
    }
    return out;
}

Tensor l2_normalize_backward(const Tensor& input, double target_norm, const Tensor& grad_out)
{
    if (!input.same_shape(grad_out)) {
        throw std::invalid_argument("l2_normalize_backward: grad_out " + shape_str(grad_out) +
                                    " vs input " + shape_str(input));
    }
    Tensor gin = Tensor::zeros_like(input);
    const int C = input.c();
    const std::size_t plane = static_cast<std::size_t>(input.h()) * input.w();
    for (int n = 0; n < input.n(); ++n) {
        const double* in = input.data.data() + input.index(n, 0, 0, 0);
        const double* g = grad_out.data.data() + grad_out.index(n, 0, 0, 0);
        double* o = gin.data.data() + gin.index(n, 0, 0, 0);
        for (std::size_t s = 0; s < plane; ++s) {
            double sq = 0.0, dot = 0.0;
            for (int c = 0; c < C; ++c) {
                const double v = in[c * plane + s];
                sq += v * v;
                dot += v * g[c * plane + s];
            }
            const double norm = std::sqrt(sq);
            if (norm <= kNormEps) {
                continue; // guarded zero vector: output is constant zero
            }
            const double inv = target_norm / norm;
            const double proj = dot / sq;
            for (int c = 0; c < C; ++c) {
                o[c * plane + s] = inv * (g[c * plane + s] - in[c * plane + s] * proj);
            }
        }
    }
    return gin;
}

Tensor activation(const Tensor& input, Activation kind)
{
    Tensor out = Tensor::zeros_like(input);
    if (kind == Activation::relu) {
        for (std::size_t i = 0; i < input.numel(); ++i) {
            out.data[i] = input.data[i] > 0.0 ? input.data[i] : 0.0;
        }
    } else {
        for (std::size_t i = 0; i < input.numel(); ++i) {
            const double x = input.data[i];
            out.data[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                   : std::exp(x) / (1.0 + std::exp(x));
        }
    }
    return out;
}

Tensor activation_backward(const Tensor& input, Activation kind, const Tensor& grad_out)
{
    if (!input.same_shape(grad_out)) {
        throw std::invalid_argument("activation_backward: grad_out " + shape_str(grad_out) +
                                    " vs input " + shape_str(input));
    }
    Tensor gin = Tensor::zeros_like(input);
    if (kind == Activation::relu) {
        for (std::size_t i = 0; i < input.numel(); ++i) {
            gin.data[i] = input.data[i] > 0.0 ? grad_out.data[i] : 0.0;
        }
    } else {
        for (std::size_t i = 0; i < input.numel(); ++i) {
            const double x = input.data[i];
            const double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                      : std::exp(x) / (1.0 + std::exp(x));
            gin.data[i] = grad_out.data[i] * s * (1.0 - s);
        }
    }
    return gin;
}

Tensor concat_channels(const std::vector<const Tensor*>& parts)
{
    if (parts.empty()) {
        throw std::invalid_argument("concat_channels: no inputs");
    }
    const Tensor& first = *parts.front();
    int total_c = 0;
    for (const Tensor* t : parts) {
        if (t->n() != first.n() || t->h() != first.h() || t->w() != first.w()) {
            throw std::invalid_argument("concat_channels: mismatched shapes " + shape_str(first) +
                                        " vs " + shape_str(*t));
        }
        total_c += t->c();
    }
    Tensor out(first.n(), total_c, first.h(), first.w());
    const std::size_t plane = static_cast<std::size_t>(first.h()) * first.w();
    for (int n = 0; n < first.n(); ++n) {
        std::size_t off = out.index(n, 0, 0, 0);
        for (const Tensor* t : parts) {
            const std::size_t len = static_cast<std::size_t>(t->c()) * plane;
            std::copy_n(t->data.data() + t->index(n, 0, 0, 0), len, out.data.data() + off);
            off += len;
        }
    }
    return out;
}

std::vector<Tensor> split_channels(const Tensor& grad, const std::vector<int>& channels)
{
    int total = 0;
    for (int c : channels) {
        total += c;
    }
    if (total != grad.c()) {
        throw std::invalid_argument("split_channels: channel counts sum to " + std::to_string(total) +
                                    " but tensor has " + std::to_string(grad.c()));
    }
    std::vector<Tensor> out;
    out.reserve(channels.size());
    const std::size_t plane = static_cast<std::size_t>(grad.h()) * grad.w();
    int c0 = 0;
    for (int c : channels) {
        Tensor part(grad.n(), c, grad.h(), grad.w());
        for (int n = 0; n < grad.n(); ++n) {
            std::copy_n(grad.data.data() + grad.index(n, c0, 0, 0), static_cast<std::size_t>(c) * plane,
                        part.data.data() + part.index(n, 0, 0, 0));
        }
        out.push_back(std::move(part));
        c0 += c;
    }
    return out;
}

} // namespace csp
