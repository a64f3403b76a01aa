#ifndef ASYMBP_TRAINER_HPP
#define ASYMBP_TRAINER_HPP

#include "asymbp/dataset.hpp"
#include "asymbp/feedback.hpp"
#include "asymbp/network.hpp"
#include "asymbp/update_rule.hpp"

#include <cstdint>
#include <functional>
#include <string_view>
#include <vector>

namespace asymbp {

/// Learning rate for the inclusive epoch range [first, last].
struct LrPhase {
    std::size_t first = 1;
    std::size_t last = 1;
    double rate = 0.0;

    friend bool operator==(const LrPhase&, const LrPhase&) = default;
};

/// Batch size used for the inclusive epoch range [first, last].
struct BatchSizePhase {
    std::size_t first = 1;
    std::size_t last = 1;
    std::size_t batch_size = 100;

    friend bool operator==(const BatchSizePhase&, const BatchSizePhase&) = default;
};

/// 65 epochs: 5e-4 for 1-50, 5e-5 for 51-60, 5e-6 for 61-65.
std::vector<LrPhase> full_schedule();
/// 20 epochs with the same three rates: 1-15, 16-18, 19-20.
std::vector<LrPhase> desk_schedule();
/// The three rates with phase ends at round(epochs·50/65) and
/// round(epochs·60/65); empty phases are dropped.
std::vector<LrPhase> compressed_schedule(std::size_t epochs);

/// Scheduled rate for `epoch` (1-based) times `multiplier`.
/// Throws std::out_of_range when no phase covers the epoch.
double lr_at(const std::vector<LrPhase>& schedule, std::size_t epoch, double multiplier);

enum class ClampMode { none, bottom, top };

std::string_view to_string(ClampMode mode);
ClampMode parse_clamp_mode(std::string_view name);

struct ExperimentConfig {
    NetworkSpec network;
    FeedbackScheme scheme;
    UpdateParams rule;
    std::size_t epochs = 65;
    std::vector<LrPhase> lr_schedule = full_schedule();
    std::size_t batch_size = 100;
    std::vector<BatchSizePhase> batch_size_overrides;
    double lr_multiplier = 1.0;
    ClampMode clamp = ClampMode::none;
    std::uint64_t seed = 1;
    double bn_ema_alpha = 0.05;
    std::size_t bn_ema_batches = 20;
    /// Multiplies every batch gradient sum before the update rule (test hook).
    double grad_scale = 1.0;

    /// Throws std::invalid_argument describing the first problem found.
    void validate() const;
    std::size_t batch_size_at(std::size_t epoch) const;
};

struct RunRecord {
    std::vector<double> train_loss;       // mean per-sample loss, one per epoch
    std::vector<double> test_error;       // percent, one per epoch
    double best_error = 100.0;
    std::vector<double> concordance;      // per weighted layer, after training
    bool diverged = false;
    std::size_t diverged_epoch = 0;       // 1-based; 0 when not diverged
    double wall_seconds = 0.0;
};

/// Optional observers. `after_batch` runs after the feedback refresh of each
/// batch; `after_epoch` runs once per epoch (diverged ones included) with the
/// record filled up to that epoch.
struct TrainHooks {
    std::function<void(const Network&, std::size_t epoch, std::size_t batch)> after_batch;
    std::function<void(const Network&, std::size_t epoch, const RunRecord& so_far)> after_epoch;
};

/// Marks the clamped weighted layers frozen. Throws std::invalid_argument when
/// the network has no weighted layers to clamp.
void apply_clamp(Network& net, ClampMode mode);

/// Percentage of misclassified samples using test-mode forwards in chunks.
double evaluate(const Network& net, const Dataset& data, std::size_t chunk = 100);

/// Folds `n_batches` freshly drawn training batches into every BN layer's
/// running mean and std: running <- (1 - alpha)·running + alpha·batch.
void update_bn_running_stats(Network& net, const Dataset& train, double alpha, std::size_t n_batches,
                             std::size_t batch_size, Rng& rng);

/// Builds the network from the config seed and trains it.
RunRecord train(const ExperimentConfig& config, const DataSplit& data, const TrainHooks& hooks = {});

/// Trains an existing network in place (clamping is applied here).
RunRecord train_network(Network& net, const ExperimentConfig& config, const DataSplit& data,
                        const TrainHooks& hooks = {});

} // namespace asymbp

#endif // ASYMBP_TRAINER_HPP
