#pragma once

#include <utility>

#include "csp/tensor.hpp"

namespace csp {

struct LossConfig {
    double gamma = 2.0;
    double beta = 4.0;
    double lambda_c = 0.01;
    double lambda_s = 1.0;
    double lambda_o = 0.1;
    double smooth_l1_delta = 1.0;
};

struct LossReport {
    double center = 0.0;
    double scale = 0.0;
    double offset = 0.0;
    double total = 0.0;
    long positives = 0;
};

struct LossGrad {
    double value = 0.0;
    Tensor grad;
};

// Focal center-classification loss over the heatmap: probabilities at
// positives, complements at negatives, negatives discounted by (1 - M)^beta.
// Gradient is taken with respect to the post-sigmoid probabilities.
LossGrad center_loss(const Tensor& p, const Tensor& y, const Tensor& gauss, int positives,
                     const LossConfig& cfg);

// Returns (value, derivative).
std::pair<double, double> smooth_l1(double x, double delta);

LossGrad scale_loss(const Tensor& s, const Tensor& t, const Tensor& weight, const LossConfig& cfg);

LossGrad offset_loss(const Tensor& o, const Tensor& t, const Tensor& weight, const LossConfig& cfg);

LossReport total_loss(double center, double scale, double offset, const LossConfig& cfg,
                      bool offset_enabled = true);

} // namespace csp
