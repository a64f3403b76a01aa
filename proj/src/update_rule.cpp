#include "asymbp/update_rule.hpp"

#include <stdexcept>
#include <string>

namespace asymbp {

std::string_view to_string(UpdateSetting setting) {
    switch (setting) {
    case UpdateSetting::sgd: return "sgd";
    case UpdateSetting::bm1: return "bm1";
    case UpdateSetting::bm2: return "bm2";
    case UpdateSetting::bm3: return "bm3";
    }
    return "unknown";
}

UpdateSetting parse_update_setting(std::string_view name) {
    if (name == "sgd") return UpdateSetting::sgd;
    if (name == "bm1" || name == "bm") return UpdateSetting::bm1;
    if (name == "bm2") return UpdateSetting::bm2;
    if (name == "bm3") return UpdateSetting::bm3;
    throw std::invalid_argument("unknown update rule '" + std::string(name) + "' (expected sgd|bm1|bm2|bm3)");
}

UpdateRule::UpdateRule(const UpdateParams& params, const Shape& shape) : params_(params), tau_(shape, 0.0) {
    if (params_.setting == UpdateSetting::bm3) kappa_ = Tensor(shape, 0.0);
}

Tensor UpdateRule::compute_step(const Tensor& grad_sum, const Tensor& weight, double eta) {
    if (grad_sum.shape() != tau_.shape() || weight.shape() != tau_.shape()) {
        throw dimension_error("compute_step: gradient " + to_string(grad_sum.shape()) + " and weight " +
                              to_string(weight.shape()) + " must match state " + to_string(tau_.shape()));
    }
    const double m = params_.momentum, d = params_.weight_decay;
    Tensor step(tau_.shape());
    for (std::size_t i = 0; i < step.size(); ++i) {
        const double g = grad_sum[i];
        double tau = 0.0;
        switch (params_.setting) {
        case UpdateSetting::sgd:
            tau = -g + m * tau_[i] - d * weight[i];
            break;
        case UpdateSetting::bm1:
            tau = -sign(g) + m * tau_[i] - d * weight[i];
            break;
        case UpdateSetting::bm2:
            tau = sign(-sign(g) + m * tau_[i] - d * weight[i]);
            break;
        case UpdateSetting::bm3:
            kappa_[i] = -sign(g) + m * kappa_[i] - d * weight[i];
            tau = sign(kappa_[i]);
            break;
        }
        tau_[i] = tau;
        step[i] = eta * tau;
    }
    return step;
}

void apply_update(Tensor& weight, const Tensor& step) {
    if (weight.shape() != step.shape()) {
        throw dimension_error("apply_update: weight " + to_string(weight.shape()) + " vs step " +
                              to_string(step.shape()));
    }
    for (std::size_t i = 0; i < weight.size(); ++i) weight[i] += step[i];
}

} // namespace asymbp
