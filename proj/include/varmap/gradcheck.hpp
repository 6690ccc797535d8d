#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace varmap {

/// One finite-difference audit: central differences with step 1e-5 against
/// the analytic gradient, every input coordinate probed.
struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    double tolerance = 1e-5;
    bool ok() const { return max_rel_err < tolerance; }
};

/// Audits every registered primitive, each observation term, the prior,
/// the assembled cost, the LSTM cell, and a K=3 unrolled solve (the latter
/// with a 1e-4 tolerance). All instances are small and seeded.
std::vector<GradCheckEntry> gradcheck_all(std::uint64_t seed);

} // namespace varmap
