#ifndef ASYMBP_UPDATE_RULE_HPP
#define ASYMBP_UPDATE_RULE_HPP

#include "asymbp/tensor.hpp"

#include <string_view>

namespace asymbp {

/// Weight update computations, with g the batch-summed gradient:
///   sgd  τ(t) = -g + m·τ(t-1) - d·w(t)
///   bm1  τ(t) = -sign(g) + m·τ(t-1) - d·w(t)
///   bm2  τ(t) = sign(-sign(g) + m·τ(t-1) - d·w(t))
///   bm3  κ(t) = -sign(g) + m·κ(t-1) - d·w(t),  τ(t) = sign(κ(t))
/// and w(t+1) = w(t) + η·τ(t).
enum class UpdateSetting { sgd = 0, bm1 = 1, bm2 = 2, bm3 = 3 };

std::string_view to_string(UpdateSetting setting);
/// Accepts sgd|bm1|bm2|bm3; throws std::invalid_argument otherwise.
UpdateSetting parse_update_setting(std::string_view name);

struct UpdateParams {
    UpdateSetting setting = UpdateSetting::sgd;
    double momentum = 0.9;
    double weight_decay = 0.0;
};

/// Per-parameter-tensor update state. τ and κ start at zero.
class UpdateRule {
public:
    UpdateRule(const UpdateParams& params, const Shape& shape);

    /// Returns η·τ(t) and advances the state.
    Tensor compute_step(const Tensor& grad_sum, const Tensor& weight, double eta);

    const UpdateParams& params() const noexcept { return params_; }
    const Tensor& tau() const noexcept { return tau_; }
    /// Only maintained by bm3; empty otherwise.
    const Tensor& kappa() const noexcept { return kappa_; }

private:
    UpdateParams params_;
    Tensor tau_;
    Tensor kappa_;
};

/// w += step
void apply_update(Tensor& weight, const Tensor& step);

} // namespace asymbp

#endif // ASYMBP_UPDATE_RULE_HPP
