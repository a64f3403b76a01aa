#include "asymbp/feedback.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace asymbp {

namespace {

struct KindName {
    FeedbackKind kind;
    std::string_view name;
};

constexpr KindName kKindNames[] = {
    {FeedbackKind::symmetric, "symmetric"}, {FeedbackKind::usf, "usf"},       {FeedbackKind::nusf, "nusf"},
    {FeedbackKind::brsf, "brsf"},           {FeedbackKind::frsf, "frsf"},     {FeedbackKind::brsf_p, "brsf_p"},
    {FeedbackKind::frsf_p, "frsf_p"},       {FeedbackKind::rndf, "rndf"},
};

bool is_fixed(FeedbackKind k) { return k == FeedbackKind::frsf || k == FeedbackKind::frsf_p; }

} // namespace

std::string_view to_string(FeedbackKind kind) {
    for (const auto& kn : kKindNames)
        if (kn.kind == kind) return kn.name;
    return "unknown";
}

FeedbackKind parse_feedback_kind(std::string_view name) {
    for (const auto& kn : kKindNames)
        if (kn.name == name) return kn.kind;
    throw std::invalid_argument("unknown feedback scheme '" + std::string(name) +
                                "' (expected symmetric|usf|nusf|brsf|frsf|brsf_p|frsf_p|rndf)");
}

void FeedbackScheme::validate() const {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("feedback p must lie in [0, 1], got " + std::to_string(p));
    if (!(sigma > 0.0)) throw std::invalid_argument("feedback sigma must be positive, got " + std::to_string(sigma));
}

FeedbackRng FeedbackRng::for_layer(std::uint64_t seed, std::uint64_t ordinal) {
    return {make_stream(seed, Stream::magnitude, ordinal), make_stream(seed, Stream::flip, ordinal),
            make_stream(seed, Stream::random_feedback, ordinal)};
}

Tensor draw_magnitudes(const Shape& shape, const FeedbackScheme& scheme, Rng& rng) {
    Tensor m(shape, 1.0);
    if (scheme.unit_magnitude) return m;
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    for (auto& v : m.data()) v = dist(rng);
    return m;
}

Tensor draw_flips(const Shape& shape, double p, Rng& rng) {
    Tensor s(shape, 1.0);
    std::bernoulli_distribution flip(p);
    for (auto& v : s.data()) v = flip(rng) ? -1.0 : 1.0;
    return s;
}

Tensor compose_feedback(const Tensor& weight, const Tensor& magnitudes, const Tensor& flips) {
    if (magnitudes.shape() != weight.shape() || (!flips.empty() && flips.shape() != weight.shape())) {
        throw dimension_error("compose_feedback: weight " + to_string(weight.shape()) + ", magnitudes " +
                              to_string(magnitudes.shape()) + ", flips " + to_string(flips.shape()));
    }
    Tensor v(weight.shape());
    for (std::size_t i = 0; i < v.size(); ++i) {
        double x = magnitudes[i] * sign(weight[i]);
        if (!flips.empty()) x *= flips[i];
        v[i] = x;
    }
    return v;
}

Tensor make_feedback(const Tensor& weight, const FeedbackScheme& scheme, FeedbackRng& rng, std::size_t fan_in) {
    switch (scheme.kind) {
    case FeedbackKind::symmetric:
        return weight;
    case FeedbackKind::usf:
        return ewise_map(weight, Map::sign);
    case FeedbackKind::nusf:
        return scale(ewise_map(weight, Map::sign), 1.0 / static_cast<double>(fan_in));
    case FeedbackKind::brsf:
    case FeedbackKind::frsf:
        return compose_feedback(weight, draw_magnitudes(weight.shape(), scheme, rng.magnitude), Tensor{});
    case FeedbackKind::brsf_p:
    case FeedbackKind::frsf_p: {
        Tensor m = draw_magnitudes(weight.shape(), scheme, rng.magnitude);
        Tensor s = draw_flips(weight.shape(), scheme.p, rng.flip);
        return compose_feedback(weight, m, s);
    }
    case FeedbackKind::rndf: {
        Tensor v(weight.shape());
        std::normal_distribution<double> dist(0.0, scheme.sigma);
        for (auto& x : v.data()) x = dist(rng.random);
        return v;
    }
    }
    throw std::logic_error("unhandled feedback kind");
}

double concordance(const Tensor& weight, const Tensor& feedback) {
    if (weight.shape() != feedback.shape()) {
        throw dimension_error("concordance: shape mismatch " + to_string(weight.shape()) + " vs " +
                              to_string(feedback.shape()));
    }
    std::size_t agree = 0, counted = 0;
    for (std::size_t i = 0; i < weight.size(); ++i) {
        const double sw = sign(weight[i]), sv = sign(feedback[i]);
        if (sw == 0.0 || sv == 0.0) continue;
        ++counted;
        if (sw == sv) ++agree;
    }
    if (counted == 0) return std::numeric_limits<double>::quiet_NaN();
    return static_cast<double>(agree) / static_cast<double>(counted);
}

// ---------------------------------------------------------------------------

FeedbackBank::FeedbackBank(const FeedbackScheme& scheme, Network& net, std::uint64_t seed) : scheme_(scheme) {
    scheme_.validate();
    std::uint64_t ordinal = 0;
    for (auto layer : net.weighted_layers()) {
        LayerState st{layer, net.fan_in(layer), FeedbackRng::for_layer(seed, ordinal++), {}, {}};
        const Tensor& w = net.weight(layer);
        if (is_fixed(scheme_.kind)) {
            st.fixed_m = draw_magnitudes(w.shape(), scheme_, st.rng.magnitude);
            if (scheme_.uses_flips()) st.fixed_s = draw_flips(w.shape(), scheme_.p, st.rng.flip);
            net.feedback(layer) = compose_feedback(w, st.fixed_m, st.fixed_s);
        } else {
            net.feedback(layer) = make_feedback(w, scheme_, st.rng, st.fan_in);
        }
        layers_.push_back(std::move(st));
    }
}

void FeedbackBank::refresh(Network& net) {
    for (auto& st : layers_) {
        const Tensor& w = net.weight(st.layer);
        switch (scheme_.kind) {
        case FeedbackKind::rndf:
            break;
        case FeedbackKind::frsf:
        case FeedbackKind::frsf_p:
            // M and S stay fixed; the signs follow the current weights.
            net.feedback(st.layer) = compose_feedback(w, st.fixed_m, st.fixed_s);
            break;
        default:
            net.feedback(st.layer) = make_feedback(w, scheme_, st.rng, st.fan_in);
            break;
        }
    }
}

} // namespace asymbp
