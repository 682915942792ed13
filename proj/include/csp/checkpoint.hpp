#pragma once

#include <string>

#include "csp/config.hpp"
#include "csp/network.hpp"
#include "csp/optim.hpp"

namespace csp {

// On-disk layout: manifest.json plus one tensor snapshot per parameter and
// per optimizer moment, with EMA weights stored separately. Inference loads
// the EMA weights by default.
void save_checkpoint(const std::string& dir, const RunConfig& cfg, CspModel& model,
                     const OptimState& optim, const EmaState& ema);

struct Checkpoint {
    RunConfig cfg;
    CspModel model; // raw training weights
    OptimState optim;
    EmaState ema;
    long step = 0;
};

Checkpoint load_checkpoint(const std::string& dir);

// Copies the EMA shadow into the model parameters.
void apply_ema_weights(CspModel& model, const EmaState& ema);

} // namespace csp
