#ifndef ASYMBP_GRADCHECK_HPP
#define ASYMBP_GRADCHECK_HPP

#include "asymbp/network.hpp"

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>

namespace asymbp {

struct GradCheckOptions {
    double step = 1e-5;               // central-difference half width h
    std::size_t max_parameters = 10000;
    double tolerance = 1e-5;
    /// Fault injection: perturb one analytic gradient entry before comparing.
    bool corrupt_backward = false;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::string worst;                // "layer 3 weight[17]"
    bool passed = false;
};

class parameter_cap_error : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Relative difference |a - n| / max(|a|, |n|, 1e-3).
double relative_error(double analytic, double numeric);

/// Sets V := W, then compares every parameter's backward gradient of the
/// summed softmax cross-entropy against (L(w+h) - L(w-h)) / 2h, with BN layers
/// in train mode. Throws parameter_cap_error above options.max_parameters.
GradCheckReport gradient_check(Network& net, const Tensor& inputs, std::span<const std::uint32_t> labels,
                               const GradCheckOptions& options = {});

} // namespace asymbp

#endif // ASYMBP_GRADCHECK_HPP
