#include "asymbp/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

namespace asymbp {

namespace {

struct SweepKey {
    std::string_view name;
    std::string_view section;
    std::string_view key;
};

constexpr SweepKey kSweepKeys[] = {
    {"scheme", "feedback", "scheme"}, {"p", "feedback", "p"},       {"sigma", "feedback", "sigma"},
    {"rule", "update", "rule"},       {"bn", "network", "batch_norm"}, {"clamp", "train", "clamp"},
    {"seed", "train", "seed"},        {"lr_multiplier", "train", "lr_multiplier"},
};

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto a = item.find_first_not_of(" \t");
        if (a == std::string::npos) continue;
        const auto b = item.find_last_not_of(" \t");
        out.push_back(item.substr(a, b - a + 1));
    }
    return out;
}

} // namespace

std::vector<RunSpec> expand_sweep(const ConfigFile& file) {
    if (file.sweeps.empty()) throw config_error(0, "sweep", "no [sweep] section: the product is empty");
    const RunSpec base = load_run_spec(file);

    std::vector<RunSpec> out;
    for (const auto& block : file.sweeps) {
        for (const auto& [key, value] : block) {
            const bool known = std::any_of(std::begin(kSweepKeys), std::end(kSweepKeys),
                                           [&](const SweepKey& k) { return k.name == key; });
            if (!known) throw config_error(value.line, "sweep." + key, "key cannot be swept");
        }
        // Axes in fixed order; unlisted axes contribute no factor.
        std::vector<std::pair<const SweepKey*, std::vector<ConfigValue>>> axes;
        for (const auto& k : kSweepKeys) {
            auto it = block.find(k.name);
            if (it == block.end()) continue;
            std::vector<ConfigValue> values;
            for (auto& v : split_list(it->second.text)) values.push_back({v, it->second.line});
            if (values.empty())
                throw config_error(it->second.line, "sweep." + std::string(k.name), "empty value list: the product is empty");
            axes.emplace_back(&k, std::move(values));
        }
        std::vector<std::size_t> counter(axes.size(), 0);
        while (true) {
            RunSpec spec = base;
            for (std::size_t a = 0; a < axes.size(); ++a) {
                const auto* k = axes[a].first;
                apply_setting(spec, k->section, k->key, axes[a].second[counter[a]]);
            }
            out.push_back(std::move(spec));
            bool done = true;
            for (std::size_t a = axes.size(); a-- > 0;) {
                if (++counter[a] < axes[a].second.size()) {
                    done = false;
                    break;
                }
                counter[a] = 0;
            }
            if (done) break;
        }
    }

    for (std::size_t i = 0; i < out.size(); ++i) {
        try {
            out[i].experiment.validate();
            build_network(out[i].experiment.network, out[i].experiment.seed);
        } catch (const std::exception& ex) {
            throw config_error(0, "sweep", "expanded run " + std::to_string(i + 1) + " is invalid: " + ex.what());
        }
    }
    return out;
}

std::string csv_header() {
    return "run_id,dataset,scheme,p,sigma,rule,bn,clamp,lr_multiplier,seed,best_error_pct,diverged,epochs,wall_secs";
}

std::string csv_row(const RunSpec& spec, const RunRecord& record) {
    const auto& e = spec.experiment;
    char wall[32];
    std::snprintf(wall, sizeof wall, "%.3f", record.wall_seconds);
    std::ostringstream os;
    os << fingerprint(spec) << ',' << spec.data.name << ',' << to_string(e.scheme.kind) << ','
       << format_number(e.scheme.p) << ',' << format_number(e.scheme.sigma) << ',' << to_string(e.rule.setting) << ','
       << (e.network.batch_norm ? "true" : "false") << ',' << to_string(e.clamp) << ','
       << format_number(e.lr_multiplier) << ',' << e.seed << ',' << format_number(record.best_error) << ','
       << (record.diverged ? "true" : "false") << ',' << record.test_error.size() << ',' << wall;
    return os.str();
}

void append_csv(const std::filesystem::path& path, const std::vector<std::string>& rows) {
    std::error_code ec;
    const bool fresh = !std::filesystem::exists(path, ec) || std::filesystem::file_size(path, ec) == 0;
    std::ofstream out(path, std::ios::app);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    if (fresh) out << csv_header() << '\n';
    for (const auto& r : rows) out << r << '\n';
    out.flush();
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<SummaryCell> summarize(const std::vector<RunSpec>& specs, const std::vector<RunRecord>& records) {
    if (specs.size() != records.size()) throw std::invalid_argument("summarize: specs and records differ in length");
    std::vector<SummaryCell> cells;
    std::vector<std::map<std::uint64_t, double>> per_seed;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const auto& e = specs[i].experiment;
        const auto& r = records[i];
        auto it = std::find_if(cells.begin(), cells.end(), [&](const SummaryCell& c) {
            return c.dataset == specs[i].data.name && c.scheme == e.scheme.kind && c.p == e.scheme.p &&
                   c.sigma == e.scheme.sigma && c.rule == e.rule.setting && c.bn == e.network.batch_norm &&
                   c.clamp == e.clamp;
        });
        if (it == cells.end()) {
            cells.push_back({specs[i].data.name, e.scheme.kind, e.scheme.p, e.scheme.sigma, e.rule.setting,
                             e.network.batch_norm, e.clamp});
            per_seed.emplace_back();
            it = cells.end() - 1;
        }
        auto& seeds = per_seed[static_cast<std::size_t>(it - cells.begin())];
        ++it->runs;
        it->min_best_error = std::min(it->min_best_error, r.best_error);
        it->any_diverged = it->any_diverged || r.diverged;
        auto [slot, inserted] = seeds.try_emplace(e.seed, r.best_error);
        if (!inserted) slot->second = std::min(slot->second, r.best_error);
    }
    for (std::size_t c = 0; c < cells.size(); ++c) {
        double sum = 0.0;
        for (const auto& [seed, best] : per_seed[c]) sum += best;
        cells[c].seeds = per_seed[c].size();
        cells[c].seed_mean_best_error = sum / static_cast<double>(per_seed[c].size());
    }
    return cells;
}

std::string summary_csv(const std::vector<SummaryCell>& cells) {
    std::ostringstream os;
    os << "dataset,scheme,p,sigma,rule,bn,clamp,runs,seeds,min_best_error_pct,seed_mean_best_error_pct,any_diverged\n";
    for (const auto& c : cells) {
        os << c.dataset << ',' << to_string(c.scheme) << ',' << format_number(c.p) << ',' << format_number(c.sigma)
           << ',' << to_string(c.rule) << ',' << (c.bn ? "true" : "false") << ',' << to_string(c.clamp) << ','
           << c.runs << ',' << c.seeds << ',' << format_number(c.min_best_error) << ','
           << format_number(c.seed_mean_best_error) << ',' << (c.any_diverged ? "true" : "false") << '\n';
    }
    return os.str();
}

std::string summary_table(const std::vector<SummaryCell>& cells) {
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof line, "%-10s %-9s %5s %-5s %-4s %-7s %5s %9s %10s\n", "dataset", "scheme", "p", "rule",
                  "bn", "clamp", "runs", "min_err%", "seedmean%");
    os << line;
    for (const auto& c : cells) {
        std::snprintf(line, sizeof line, "%-10s %-9s %5.2f %-5s %-4s %-7s %5zu %9.2f %10.2f%s\n", c.dataset.c_str(),
                      std::string(to_string(c.scheme)).c_str(), c.p, std::string(to_string(c.rule)).c_str(),
                      c.bn ? "yes" : "no", std::string(to_string(c.clamp)).c_str(), c.runs, c.min_best_error,
                      c.seed_mean_best_error, c.any_diverged ? "  (diverged runs)" : "");
        os << line;
    }
    return os.str();
}

std::vector<RunRecord> run_sweep(const std::vector<RunSpec>& specs, const DataSplit& data, std::size_t workers,
                                 const std::function<void(std::size_t, const RunRecord&)>& on_result) {
    const std::size_t n = specs.size();
    std::vector<std::optional<RunRecord>> results(n);
    std::vector<std::exception_ptr> errors(n);
    std::mutex mu;
    std::condition_variable cv;
    std::atomic<std::size_t> next{0};

    auto work = [&] {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            std::optional<RunRecord> rec;
            std::exception_ptr err;
            try {
                rec = train(specs[i].experiment, data);
            } catch (...) {
                err = std::current_exception();
            }
            {
                std::lock_guard lock(mu);
                results[i] = std::move(rec);
                errors[i] = err;
                if (err) next.store(n); // stop handing out new runs
            }
            cv.notify_all();
        }
    };

    workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(n, 1));
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);

    std::exception_ptr failure;
    std::vector<RunRecord> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n && !failure; ++i) {
        std::unique_lock lock(mu);
        cv.wait(lock, [&] {
            if (results[i] || errors[i]) return true;
            return std::any_of(errors.begin(), errors.end(), [](const auto& e) { return e != nullptr; });
        });
        if (errors[i] || !results[i]) {
            failure = errors[i];
            if (!failure)
                for (auto& e : errors)
                    if (e) failure = e;
            break;
        }
        RunRecord rec = *results[i];
        lock.unlock();
        if (on_result) on_result(i, rec);
        out.push_back(std::move(rec));
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
    return out;
}

} // namespace asymbp
