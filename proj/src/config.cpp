#include "asymbp/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace asymbp {

config_error::config_error(std::size_t line, std::string key, const std::string& message)
    : std::runtime_error((line ? "line " + std::to_string(line) + ": " : std::string()) +
                         (key.empty() ? std::string() : key + ": ") + message),
      line_(line), key_(std::move(key)) {}

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        out.push_back(trim(s.substr(start, pos == std::string_view::npos ? pos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

double to_double(std::string_view s) {
    s = trim(s);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
        throw std::invalid_argument("'" + std::string(s) + "' is not a number");
    return v;
}

std::uint64_t to_u64(std::string_view s) {
    s = trim(s);
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
        throw std::invalid_argument("'" + std::string(s) + "' is not a non-negative integer");
    return v;
}

std::size_t to_size(std::string_view s) { return static_cast<std::size_t>(to_u64(s)); }

bool to_bool(std::string_view s) {
    const std::string v = lower(trim(s));
    if (v == "true" || v == "yes" || v == "on" || v == "1") return true;
    if (v == "false" || v == "no" || v == "off" || v == "0") return false;
    throw std::invalid_argument("'" + v + "' is not a boolean");
}

// "A-B:value" phases, comma separated; a bare "A:value" covers one epoch.
template <class F>
void parse_phases(std::string_view text, F&& emit) {
    for (auto item : split(text, ',')) {
        const auto colon = item.find(':');
        if (colon == std::string_view::npos) throw std::invalid_argument("phase '" + std::string(item) + "' lacks ':'");
        const auto range = trim(item.substr(0, colon));
        const auto value = trim(item.substr(colon + 1));
        const auto dash = range.find('-');
        const std::size_t first = to_size(range.substr(0, dash));
        const std::size_t last = dash == std::string_view::npos ? first : to_size(range.substr(dash + 1));
        emit(first, last, value);
    }
}

} // namespace

std::string format_number(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

ConfigFile parse_config_text(std::string_view text, std::filesystem::path source) {
    ConfigFile file;
    file.source = std::move(source);
    ConfigSection* current = nullptr;
    std::string current_name;
    std::size_t line_no = 0;
    std::istringstream in{std::string(text)};
    std::string raw;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string_view line = raw;
        if (const auto hash = line.find_first_of("#;"); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw config_error(line_no, "", "unterminated section header");
            current_name = lower(trim(line.substr(1, line.size() - 2)));
            if (current_name.empty()) throw config_error(line_no, "", "empty section name");
            if (current_name == "sweep") {
                current = &file.sweeps.emplace_back();
            } else {
                if (file.sections.contains(current_name))
                    throw config_error(line_no, current_name, "duplicate section");
                current = &file.sections[current_name];
            }
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw config_error(line_no, "", "expected 'key = value'");
        const std::string key = lower(trim(line.substr(0, eq)));
        if (key.empty()) throw config_error(line_no, "", "missing key before '='");
        if (!current) throw config_error(line_no, key, "key outside of any section");
        if (current->contains(key)) throw config_error(line_no, current_name + "." + key, "duplicate key");
        (*current)[key] = ConfigValue{std::string(trim(line.substr(eq + 1))), line_no};
    }
    return file;
}

ConfigFile read_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw config_error(0, "", "cannot read config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), path);
}

Shape parse_shape(std::string_view text) {
    Shape shape;
    for (auto part : split(lower(text), 'x')) {
        const std::size_t d = to_size(part);
        if (d == 0) throw std::invalid_argument("shape '" + std::string(text) + "' has a zero dimension");
        shape.push_back(d);
    }
    if (shape.size() != 1 && shape.size() != 3)
        throw std::invalid_argument("input shape must be 'd' or 'cxhxw', got '" + std::string(text) + "'");
    return shape;
}

std::vector<LrPhase> parse_lr_schedule(std::string_view text) {
    std::vector<LrPhase> out;
    parse_phases(text, [&](std::size_t a, std::size_t b, std::string_view v) { out.push_back({a, b, to_double(v)}); });
    return out;
}

std::vector<BatchSizePhase> parse_batch_schedule(std::string_view text) {
    std::vector<BatchSizePhase> out;
    if (trim(text).empty()) return out;
    parse_phases(text, [&](std::size_t a, std::size_t b, std::string_view v) { out.push_back({a, b, to_size(v)}); });
    return out;
}

void apply_setting(RunSpec& spec, std::string_view section, std::string_view key, const ConfigValue& value) {
    const std::string name = std::string(section) + "." + std::string(key);
    const std::string_view v = value.text;
    auto& d = spec.data;
    auto& e = spec.experiment;
    auto unknown = [&]() { throw config_error(value.line, name, "unknown key"); };
    try {
        if (section == "data") {
            if (key == "source") {
                const std::string s = lower(v);
                if (s == "idx") d.source = DataSource::idx;
                else if (s == "synthetic") d.source = DataSource::synthetic;
                else throw std::invalid_argument("unknown data source '" + s + "' (expected idx|synthetic)");
            } else if (key == "name") d.name = std::string(v);
            else if (key == "train_images") d.train_images = std::string(v);
            else if (key == "train_labels") d.train_labels = std::string(v);
            else if (key == "test_images") d.test_images = std::string(v);
            else if (key == "test_labels") d.test_labels = std::string(v);
            else if (key == "classes") d.classes = to_size(v);
            else if (key == "train_per_class") d.train_per_class = to_size(v);
            else if (key == "test_per_class") d.test_per_class = to_size(v);
            else if (key == "split_seed") d.split_seed = to_u64(v);
            else if (key == "kind") d.synthetic.kind = parse_synthetic_kind(lower(v));
            else if (key == "dim") d.synthetic.dim = to_size(v);
            else if (key == "separation") d.synthetic.separation = to_double(v);
            else if (key == "noise") d.synthetic.noise = to_double(v);
            else if (key == "synthetic_seed") d.synthetic.seed = to_u64(v);
            else unknown();
        } else if (section == "network") {
            auto& n = e.network;
            if (key == "input") n.input = parse_shape(v);
            else if (key == "layers") n.layers = parse_layers(v);
            else if (key == "batch_norm") n.batch_norm = to_bool(v);
            else if (key == "bn_learnable") n.bn_learnable = to_bool(v);
            else if (key == "bn_epsilon") n.bn_epsilon = to_double(v);
            else unknown();
        } else if (section == "feedback") {
            if (key == "scheme") e.scheme.kind = parse_feedback_kind(lower(v));
            else if (key == "p") e.scheme.p = to_double(v);
            else if (key == "sigma") e.scheme.sigma = to_double(v);
            else unknown();
        } else if (section == "update") {
            if (key == "rule") e.rule.setting = parse_update_setting(lower(v));
            else if (key == "momentum") e.rule.momentum = to_double(v);
            else if (key == "weight_decay") e.rule.weight_decay = to_double(v);
            else unknown();
        } else if (section == "train") {
            if (key == "epochs") e.epochs = to_size(v);
            else if (key == "lr_schedule") {
                const std::string s = lower(v);
                if (s == "full") e.lr_schedule = full_schedule();
                else if (s == "desk") e.lr_schedule = desk_schedule();
                else e.lr_schedule = parse_lr_schedule(v);
            } else if (key == "batch_size") e.batch_size = to_size(v);
            else if (key == "batch_size_schedule") e.batch_size_overrides = parse_batch_schedule(v);
            else if (key == "lr_multiplier") e.lr_multiplier = to_double(v);
            else if (key == "clamp") e.clamp = parse_clamp_mode(lower(v));
            else if (key == "seed") e.seed = to_u64(v);
            else if (key == "bn_ema_alpha") e.bn_ema_alpha = to_double(v);
            else if (key == "bn_ema_batches") e.bn_ema_batches = to_size(v);
            else unknown();
        } else {
            throw config_error(value.line, std::string(section), "unknown section");
        }
    } catch (const config_error&) {
        throw;
    } catch (const std::exception& ex) {
        throw config_error(value.line, name, ex.what());
    }
}

RunSpec load_run_spec(const ConfigFile& file) {
    RunSpec spec;
    spec.experiment.network = mnist_architecture();
    for (const auto& [section, entries] : file.sections) {
        if (section != "data" && section != "network" && section != "feedback" && section != "update" &&
            section != "train") {
            const std::size_t line = entries.empty() ? 0 : entries.begin()->second.line;
            throw config_error(line, section, "unknown section");
        }
        for (const auto& [key, value] : entries) apply_setting(spec, section, key, value);
    }

    const ConfigSection* train = nullptr;
    if (auto it = file.sections.find("train"); it != file.sections.end()) train = &it->second;
    auto line_of = [&](std::string_view key) -> std::size_t {
        if (!train) return 0;
        auto it = train->find(key);
        return it == train->end() ? 0 : it->second.line;
    };
    if (!train || !train->contains("lr_schedule")) spec.experiment.lr_schedule = compressed_schedule(spec.experiment.epochs);

    try {
        spec.experiment.validate();
    } catch (const std::exception& ex) {
        const std::string msg = ex.what();
        if (msg.rfind("lr ", 0) == 0) throw config_error(line_of("lr_schedule"), "train.lr_schedule", msg);
        if (msg.rfind("feedback", 0) == 0) throw config_error(0, "feedback", msg);
        throw config_error(0, "train", msg);
    }
    if (spec.data.source == DataSource::synthetic) {
        auto& s = spec.data.synthetic;
        s.classes = spec.data.classes ? spec.data.classes : 2;
        s.n = (spec.data.train_per_class + spec.data.test_per_class) * s.classes;
    }
    return spec;
}

std::filesystem::path resolve_data_path(const std::string& path) {
    std::filesystem::path p(path);
    if (p.is_absolute()) return p;
    if (const char* root = std::getenv("ASYMBP_DATA_ROOT"); root && *root) return std::filesystem::path(root) / p;
    return p;
}

DataSplit load_data(const DataConfig& config) {
    if (config.source == DataSource::synthetic) {
        const Dataset pool = make_synthetic(config.synthetic);
        return stratified_split(pool, config.train_per_class, config.test_per_class, config.split_seed);
    }
    const Dataset train = load_idx(resolve_data_path(config.train_images), resolve_data_path(config.train_labels),
                                   config.classes);
    if (config.test_images.empty() != config.test_labels.empty())
        throw std::invalid_argument("test_images and test_labels must be given together");
    if (config.test_images.empty()) {
        return stratified_split(train, config.train_per_class, config.test_per_class, config.split_seed);
    }
    Dataset test = load_idx(resolve_data_path(config.test_images), resolve_data_path(config.test_labels),
                            std::max(config.classes, train.classes));
    Dataset train_full = train;
    train_full.classes = test.classes = std::max(train.classes, test.classes);
    DataSplit split;
    split.train = config.train_per_class ? subset(train_full, config.train_per_class, config.split_seed) : train_full;
    split.test = config.test_per_class ? subset(test, config.test_per_class, config.split_seed + 1) : test;
    return split;
}

std::string describe(const RunSpec& spec) {
    std::ostringstream os;
    const auto& d = spec.data;
    const auto& e = spec.experiment;
    os << "data.source=" << (d.source == DataSource::idx ? "idx" : "synthetic") << ";data.name=" << d.name;
    if (d.source == DataSource::idx) {
        os << ";data.train=" << d.train_images << "," << d.train_labels << ";data.test=" << d.test_images << ","
           << d.test_labels;
    } else {
        const auto& s = d.synthetic;
        os << ";data.kind=" << (s.kind == SyntheticKind::gaussian_blobs ? "gaussian_blobs" : "two_spirals")
           << ";data.dim=" << s.dim << ";data.separation=" << format_number(s.separation)
           << ";data.noise=" << format_number(s.noise) << ";data.synthetic_seed=" << s.seed;
    }
    os << ";data.classes=" << d.classes << ";data.per_class=" << d.train_per_class << "/" << d.test_per_class
       << ";data.split_seed=" << d.split_seed;
    os << ";network.input=" << to_string(e.network.input) << ";network.layers=" << format_layers(e.network.layers)
       << ";network.bn=" << e.network.batch_norm << ";network.bn_learnable=" << e.network.bn_learnable
       << ";network.bn_epsilon=" << format_number(e.network.bn_epsilon);
    os << ";feedback=" << to_string(e.scheme.kind) << ",p=" << format_number(e.scheme.p)
       << ",sigma=" << format_number(e.scheme.sigma) << ",unit=" << e.scheme.unit_magnitude;
    os << ";update=" << to_string(e.rule.setting) << ",m=" << format_number(e.rule.momentum)
       << ",d=" << format_number(e.rule.weight_decay);
    os << ";train.epochs=" << e.epochs << ";train.lr=";
    for (const auto& ph : e.lr_schedule) os << ph.first << "-" << ph.last << ":" << format_number(ph.rate) << ",";
    os << ";train.batch=" << e.batch_size << ";train.batch_schedule=";
    for (const auto& ph : e.batch_size_overrides) os << ph.first << "-" << ph.last << ":" << ph.batch_size << ",";
    os << ";train.lr_multiplier=" << format_number(e.lr_multiplier) << ";train.clamp=" << to_string(e.clamp)
       << ";train.seed=" << e.seed << ";train.bn_ema=" << format_number(e.bn_ema_alpha) << "x" << e.bn_ema_batches
       << ";train.grad_scale=" << format_number(e.grad_scale);
    return os.str();
}

std::string fingerprint(const RunSpec& spec) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : describe(spec)) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace asymbp
