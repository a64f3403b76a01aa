#ifndef ASYMBP_CONFIG_HPP
#define ASYMBP_CONFIG_HPP

#include "asymbp/dataset.hpp"
#include "asymbp/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace asymbp {

/// Raised for malformed config text or invalid values. `line` is 0 when the
/// problem is not tied to a single line (e.g. a missing key).
class config_error : public std::runtime_error {
public:
    config_error(std::size_t line, std::string key, const std::string& message);

    std::size_t line() const noexcept { return line_; }
    const std::string& key() const noexcept { return key_; }

private:
    std::size_t line_;
    std::string key_;
};

struct ConfigValue {
    std::string text;
    std::size_t line = 0;
};

using ConfigSection = std::map<std::string, ConfigValue, std::less<>>;

/// INI-style text: "[section]" headers, "key = value" lines, '#' or ';'
/// comments. Keys outside a section are rejected. Repeated [sweep] sections
/// are kept separately, in order; other sections must be unique.
struct ConfigFile {
    std::map<std::string, ConfigSection, std::less<>> sections;
    std::vector<ConfigSection> sweeps;
    std::filesystem::path source;
};

ConfigFile parse_config_text(std::string_view text, std::filesystem::path source = {});
ConfigFile read_config_file(const std::filesystem::path& path);

// ---------------------------------------------------------------------------

enum class DataSource { idx, synthetic };

struct DataConfig {
    DataSource source = DataSource::idx;
    std::string name = "mnist";
    /// IDX files. With no test files, train files form one pool that is split
    /// into train_per_class / test_per_class stratified samples.
    std::string train_images = "data/mnist5k/images-idx3-ubyte";
    std::string train_labels = "data/mnist5k/labels-idx1-ubyte";
    std::string test_images;
    std::string test_labels;
    std::size_t classes = 0;
    std::size_t train_per_class = 400;
    std::size_t test_per_class = 100;
    std::uint64_t split_seed = 1;
    SyntheticSpec synthetic;
};

/// One fully specified run.
struct RunSpec {
    DataConfig data;
    ExperimentConfig experiment;
};

/// Reads [data], [network], [feedback], [update] and [train]. Missing keys take
/// the default values; unknown keys and invalid values raise config_error.
RunSpec load_run_spec(const ConfigFile& file);

/// Applies one "key = value" of the given section to `spec`.
void apply_setting(RunSpec& spec, std::string_view section, std::string_view key, const ConfigValue& value);

/// Shortest round-trip decimal form of v.
std::string format_number(double v);

/// Per-sample shape from "1x28x28" or "1845".
Shape parse_shape(std::string_view text);
std::vector<LrPhase> parse_lr_schedule(std::string_view text);
std::vector<BatchSizePhase> parse_batch_schedule(std::string_view text);

/// Resolves a dataset path: absolute paths as given, otherwise relative to
/// $ASYMBP_DATA_ROOT when set, else to the working directory.
std::filesystem::path resolve_data_path(const std::string& path);

DataSplit load_data(const DataConfig& config);

/// Canonical text covering every field that influences a run's outcome.
std::string describe(const RunSpec& spec);
/// 16 hex digit FNV-1a hash of describe(spec).
std::string fingerprint(const RunSpec& spec);

} // namespace asymbp

#endif // ASYMBP_CONFIG_HPP
