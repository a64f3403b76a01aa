#include "asymbp/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace asymbp {

namespace {

std::string_view role_name(ParamRole role) {
    switch (role) {
    case ParamRole::weight: return "weight";
    case ParamRole::bias: return "bias";
    case ParamRole::gamma: return "gamma";
    case ParamRole::beta: return "beta";
    }
    return "?";
}

double loss_of(const Network& net, const Tensor& x, std::span<const std::uint32_t> labels) {
    return softmax_xent(net.forward(x, Mode::train), labels).loss;
}

} // namespace

double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-3});
    return std::abs(analytic - numeric) / denom;
}

GradCheckReport gradient_check(Network& net, const Tensor& inputs, std::span<const std::uint32_t> labels,
                               const GradCheckOptions& options) {
    const std::size_t count = net.parameter_count();
    if (count > options.max_parameters) {
        throw parameter_cap_error("gradient check refused: " + std::to_string(count) + " parameters exceed the cap of " +
                                  std::to_string(options.max_parameters));
    }
    net.make_symmetric();

    ForwardTrace trace;
    const LossResult loss = softmax_xent(net.forward(inputs, Mode::train, &trace), labels);
    BackwardResult back = net.backward(trace, loss.delta);
    auto params = net.parameters();
    if (options.corrupt_backward && !params.empty() && !back.grads[0].empty()) back.grads[0][0] += 1e-2;

    GradCheckReport report;
    const double h = options.step;
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& w = *params[k].value;
        const Tensor& g = back.grads[k];
        if (g.shape() != w.shape()) {
            throw std::logic_error("gradient check: missing gradient for layer " + std::to_string(params[k].layer));
        }
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double saved = w[i];
            w[i] = saved + h;
            const double plus = loss_of(net, inputs, labels);
            w[i] = saved - h;
            const double minus = loss_of(net, inputs, labels);
            w[i] = saved;
            const double numeric = (plus - minus) / (2.0 * h);
            const double err = relative_error(g[i], numeric);
            ++report.checked;
            if (err > report.max_rel_error || std::isnan(err)) {
                report.max_rel_error = std::isnan(err) ? std::numeric_limits<double>::infinity() : err;
                report.worst = "layer " + std::to_string(params[k].layer) + " " + std::string(role_name(params[k].role)) +
                               "[" + std::to_string(i) + "]";
            }
        }
    }
    report.passed = report.max_rel_error < options.tolerance;
    return report;
}

} // namespace asymbp
