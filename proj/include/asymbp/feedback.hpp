#ifndef ASYMBP_FEEDBACK_HPP
#define ASYMBP_FEEDBACK_HPP

#include "asymbp/network.hpp"
#include "asymbp/rng.hpp"
#include "asymbp/tensor.hpp"

#include <cstdint>
#include <string_view>
#include <vector>

namespace asymbp {

/// How the feedback matrix V is derived from the forward weights W.
///   symmetric  V = W
///   usf        V = sign(W)
///   nusf       V = sign(W) / fan_in
///   brsf       V = M ∘ sign(W), M redrawn after every update
///   frsf       V = M ∘ sign(W), M drawn once per run
///   brsf_p     V = M ∘ sign(W) ∘ S_p, M and S_p redrawn after every update
///   frsf_p     V = M ∘ sign(W) ∘ S_p, M and S_p drawn once per run
///   rndf       V ~ N(0, sigma²), drawn once and never changed
/// M is uniform on [0, 1); S_p is -1 with probability p and +1 otherwise.
enum class FeedbackKind { symmetric, usf, nusf, brsf, frsf, brsf_p, frsf_p, rndf };

std::string_view to_string(FeedbackKind kind);
/// Accepts the config names above; throws std::invalid_argument otherwise.
FeedbackKind parse_feedback_kind(std::string_view name);

struct FeedbackScheme {
    FeedbackKind kind = FeedbackKind::symmetric;
    double p = 0.0;
    double sigma = 0.05;
    /// Forces M ≡ 1. Only used to check scheme reductions.
    bool unit_magnitude = false;

    void validate() const;
    bool uses_flips() const { return kind == FeedbackKind::brsf_p || kind == FeedbackKind::frsf_p; }
    bool uses_magnitudes() const {
        return kind == FeedbackKind::brsf || kind == FeedbackKind::frsf || uses_flips();
    }
};

/// Generators consumed by one layer's feedback.
struct FeedbackRng {
    Rng magnitude;
    Rng flip;
    Rng random;

    static FeedbackRng for_layer(std::uint64_t seed, std::uint64_t ordinal);
};

Tensor draw_magnitudes(const Shape& shape, const FeedbackScheme& scheme, Rng& rng);
Tensor draw_flips(const Shape& shape, double p, Rng& rng);

/// V = m ∘ sign(w) (∘ s when s is non-empty).
Tensor compose_feedback(const Tensor& weight, const Tensor& magnitudes, const Tensor& flips);

/// Builds V from W. Random variants draw fresh M / S_p / Gaussian values from
/// `rng`; V depends on W only through sign(W) except for the symmetric scheme.
Tensor make_feedback(const Tensor& weight, const FeedbackScheme& scheme, FeedbackRng& rng, std::size_t fan_in);

/// Fraction of positions where sign(W) == sign(V), ignoring positions where
/// either sign is zero. Returns NaN when no position qualifies.
double concordance(const Tensor& weight, const Tensor& feedback);

/// Feedback state for every weighted layer of one network.
class FeedbackBank {
public:
    /// Initializes V on every weighted layer of `net`. Random streams derive
    /// from `seed` and the weighted-layer ordinal.
    FeedbackBank(const FeedbackScheme& scheme, Network& net, std::uint64_t seed);

    /// Called once per mini-batch after the weight update.
    void refresh(Network& net);

    const FeedbackScheme& scheme() const noexcept { return scheme_; }
    /// Cached magnitudes / flips of the fixed variants, per weighted layer.
    const Tensor& fixed_magnitudes(std::size_t ordinal) const { return layers_.at(ordinal).fixed_m; }
    const Tensor& fixed_flips(std::size_t ordinal) const { return layers_.at(ordinal).fixed_s; }

private:
    struct LayerState {
        std::size_t layer;
        std::size_t fan_in;
        FeedbackRng rng;
        Tensor fixed_m;
        Tensor fixed_s;
    };

    FeedbackScheme scheme_;
    std::vector<LayerState> layers_;
};

inline void refresh_feedback(Network& net, FeedbackBank& bank) { bank.refresh(net); }

} // namespace asymbp

#endif // ASYMBP_FEEDBACK_HPP
