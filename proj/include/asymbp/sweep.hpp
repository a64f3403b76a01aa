#ifndef ASYMBP_SWEEP_HPP
#define ASYMBP_SWEEP_HPP

#include "asymbp/config.hpp"
#include "asymbp/trainer.hpp"

#include <functional>
#include <string>
#include <vector>

namespace asymbp {

/// Keys a [sweep] block may list, in expansion order (first key outermost):
/// scheme, p, sigma, rule, bn, clamp, seed, lr_multiplier. Each value is a
/// comma separated list; keys not listed keep the base config's value.
/// Blocks are expanded one after another. Every expanded config is validated
/// (including building its network) before anything is returned.
std::vector<RunSpec> expand_sweep(const ConfigFile& file);

/// Column order of result files.
std::string csv_header();
/// One row without a trailing newline. Fields: run_id, dataset, scheme, p,
/// sigma, rule, bn, clamp, lr_multiplier, seed, best_error_pct, diverged,
/// epochs, wall_secs.
std::string csv_row(const RunSpec& spec, const RunRecord& record);

/// Appends rows to `path`, writing the header first when the file is new or empty.
void append_csv(const std::filesystem::path& path, const std::vector<std::string>& rows);

/// One (dataset, scheme, p, sigma, rule, bn, clamp) condition.
struct SummaryCell {
    std::string dataset;
    FeedbackKind scheme;
    double p;
    double sigma;
    UpdateSetting rule;
    bool bn;
    ClampMode clamp;
    std::size_t runs = 0;
    std::size_t seeds = 0;
    /// Minimum best error over every run of the cell.
    double min_best_error = 100.0;
    /// Mean over seeds of the per-seed minimum over learning-rate multipliers.
    double seed_mean_best_error = 100.0;
    bool any_diverged = false;
};

/// Cells in order of first appearance.
std::vector<SummaryCell> summarize(const std::vector<RunSpec>& specs, const std::vector<RunRecord>& records);
std::string summary_csv(const std::vector<SummaryCell>& cells);
std::string summary_table(const std::vector<SummaryCell>& cells);

/// Runs every spec on `data` with up to `workers` threads (one trainer each).
/// `on_result` is invoked from the calling thread in spec order as results
/// become available, which serializes all output.
std::vector<RunRecord> run_sweep(const std::vector<RunSpec>& specs, const DataSplit& data, std::size_t workers,
                                 const std::function<void(std::size_t, const RunRecord&)>& on_result = {});

} // namespace asymbp

#endif // ASYMBP_SWEEP_HPP
