#pragma once

// Finite-difference gradient checks in double precision, shared by the unit
// tests and the acceptance runner.

#include <cstddef>
#include <string>
#include <vector>

#include "xorinv/rng.hpp"

namespace xorinv::gradcheck {

struct Result {
    std::string what;       // layer name and randomized configuration
    double rel_error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
    std::size_t checked = 0;  // coordinates compared
    std::size_t skipped = 0;  // coordinates whose difference bracket straddles a kink
};

Result conv2d(Rng& rng);
Result relu(Rng& rng);
Result maxpool2(Rng& rng);
Result upconv2(Rng& rng);
Result concat(Rng& rng);
Result mse(Rng& rng);
Result rescale(Rng& rng);
/// Whole U-Net with MSE loss; checks a random subset of parameters and inputs.
Result unet(Rng& rng);

/// `per_layer` randomized configurations of every layer check.
std::vector<Result> all_layers(Rng& rng, int per_layer);

}  // namespace xorinv::gradcheck
