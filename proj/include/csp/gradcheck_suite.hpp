#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace csp {

struct GradCheckReport {
    std::string name;
    double worst_rel = 0.0;
    double tolerance = 1e-5;
    bool pass = true;
};

// Finite-difference verification sweeps. `corrupt` names an op whose analytic
// gradient gets deliberately perturbed (negative-control fixture).
std::vector<GradCheckReport> gradcheck_ops(std::uint64_t seed, const std::string& corrupt = "");
std::vector<GradCheckReport> gradcheck_losses(std::uint64_t seed, const std::string& corrupt = "");
std::vector<GradCheckReport> gradcheck_model(std::uint64_t seed, const std::string& corrupt = "");

} // namespace csp
