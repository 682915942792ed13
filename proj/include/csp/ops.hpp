#pragma once

#include <vector>

#include "csp/tensor.hpp"

namespace csp {

// Convolution parameters. `weight` is (out_ch, in_ch, kh, kw); `bias` is kept
// as a (1, C, 1, 1) tensor so every trainable value lives in a Tensor.
//
// The same struct parameterizes a transposed convolution: there the weight is
// read as the kernel of the conv whose input-gradient we compute, so a deconv
// maps weight.shape[0] input channels to weight.shape[1] output channels and
// its bias has weight.shape[1] entries.
struct ConvParams {
    Tensor weight;
    Tensor bias;
    int stride = 1;
    int padding = 0;
    int dilation = 1;
};

int conv_out_size(int in, int kernel, int stride, int padding, int dilation);
int deconv_out_size(int in, int kernel, int stride, int padding, int dilation);

Tensor conv2d_forward(const Tensor& input, const ConvParams& p);

struct ConvGrads {
    Tensor input;
    Tensor weight;
    Tensor bias;
};

ConvGrads conv2d_backward(const Tensor& input, const ConvParams& p, const Tensor& grad_out);

Tensor deconv2d_forward(const Tensor& input, const ConvParams& p);
ConvGrads deconv2d_backward(const Tensor& input, const ConvParams& p, const Tensor& grad_out);

// Rescales every per-location channel vector to the target Euclidean norm.
// Vectors with norm <= 1e-10 map to zero (and get zero gradient).
Tensor l2_normalize(const Tensor& input, double target_norm);
Tensor l2_normalize_backward(const Tensor& input, double target_norm, const Tensor& grad_out);

enum class Activation { relu, sigmoid };

Tensor activation(const Tensor& input, Activation kind);
Tensor activation_backward(const Tensor& input, Activation kind, const Tensor& grad_out);

Tensor concat_channels(const std::vector<const Tensor*>& parts);
// Splits a channel-concatenated gradient back into per-part gradients.
std::vector<Tensor> split_channels(const Tensor& grad, const std::vector<int>& channels);

} // namespace csp
