#include "asymbp/cli.hpp"

#include "asymbp/config.hpp"
#include "asymbp/gradcheck.hpp"
#include "asymbp/rng.hpp"
#include "asymbp/sweep.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>

namespace asymbp {

namespace {

std::string printf_line(const char* fmt, auto... args) {
    char buf[256];
    std::snprintf(buf, sizeof buf, fmt, args...);
    return buf;
}

void check_data_matches(const RunSpec& spec, const DataSplit& data) {
    const auto& net = spec.experiment.network;
    if (data.train.sample_shape() != net.input) {
        throw config_error(0, "network.input", "network input " + to_string(net.input) + " does not match the data's " +
                                                   to_string(data.train.sample_shape()));
    }
    const auto& last = net.layers.back();
    if (last.kind != LayerKind::dense && last.kind != LayerKind::conv)
        throw config_error(0, "network.layers", "the last layer must be weighted");
}

std::filesystem::path summary_path(const std::filesystem::path& out) {
    auto p = out;
    p.replace_filename(out.stem().string() + "_summary.csv");
    return p;
}

int cmd_run(const std::string& config_path, const std::string& out_path, std::optional<std::uint64_t> seed,
            std::ostream& out) {
    RunSpec spec = load_run_spec(read_config_file(config_path));
    if (seed) spec.experiment.seed = *seed;
    const DataSplit data = load_data(spec.data);
    check_data_matches(spec, data);

    out << printf_line("%-6s %-10s %-6s %-12s %-9s\n", "epoch", "lr", "batch", "train_loss", "test_err%");
    TrainHooks hooks;
    hooks.after_epoch = [&](const Network&, std::size_t epoch, const RunRecord& rec) {
        const auto& e = spec.experiment;
        out << printf_line("%-6zu %-10.3g %-6zu %-12.6g %-9.2f%s\n", epoch, lr_at(e.lr_schedule, epoch, e.lr_multiplier),
                           e.batch_size_at(epoch), rec.train_loss.back(), rec.test_error.back(),
                           rec.diverged ? "  diverged" : "");
        out.flush();
    };
    const RunRecord rec = train(spec.experiment, data, hooks);
    out << printf_line("best test error %.2f%%%s, %.1f s\n", rec.best_error, rec.diverged ? " (diverged)" : "",
                       rec.wall_seconds);
    append_csv(out_path, {csv_row(spec, rec)});
    return kExitOk;
}

int cmd_sweep(const std::string& config_path, const std::string& out_path, std::optional<std::uint64_t> seed,
              std::size_t workers, std::ostream& out, std::ostream& err) {
    ConfigFile file = read_config_file(config_path);
    if (seed) file.sections["train"]["seed"] = ConfigValue{std::to_string(*seed), 0};
    const auto specs = expand_sweep(file);
    const DataSplit data = load_data(specs.front().data);
    for (const auto& s : specs) check_data_matches(s, data);

    err << "sweep: " << specs.size() << " runs, " << workers << " worker(s)\n";
    const auto records = run_sweep(specs, data, workers, [&](std::size_t i, const RunRecord& rec) {
        append_csv(out_path, {csv_row(specs[i], rec)});
        const auto& e = specs[i].experiment;
        err << printf_line("[%zu/%zu] %s rule=%s bn=%d clamp=%s lr_x=%g seed=%llu -> %.2f%%%s (%.1f s)\n", i + 1,
                           specs.size(), std::string(to_string(e.scheme.kind)).c_str(),
                           std::string(to_string(e.rule.setting)).c_str(), e.network.batch_norm ? 1 : 0,
                           std::string(to_string(e.clamp)).c_str(), e.lr_multiplier,
                           static_cast<unsigned long long>(e.seed), rec.best_error, rec.diverged ? " diverged" : "",
                           rec.wall_seconds);
        err.flush();
    });
    const auto cells = summarize(specs, records);
    out << summary_table(cells);
    const auto sp = summary_path(out_path);
    std::ofstream s(sp, std::ios::trunc);
    if (!s) throw std::runtime_error("cannot write " + sp.string());
    s << summary_csv(cells);
    return kExitOk;
}

int cmd_gradcheck(const std::string& config_path, std::optional<std::uint64_t> seed, std::size_t batch,
                  bool corrupt, std::ostream& out) {
    const RunSpec spec = load_run_spec(read_config_file(config_path));
    const std::uint64_t s = seed.value_or(spec.experiment.seed);
    Network net = build_network(spec.experiment.network, s);

    Shape shape = net.input_shape();
    shape.insert(shape.begin(), batch);
    Tensor x(shape);
    Rng rng = make_stream(s, Stream::data, 1000);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (auto& v : x.data()) v = gauss(rng);
    std::vector<std::uint32_t> labels(batch);
    std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(net.output_size() - 1));
    for (auto& l : labels) l = pick(rng);

    GradCheckOptions opts;
    opts.corrupt_backward = corrupt;
    const GradCheckReport report = gradient_check(net, x, labels, opts);
    out << printf_line("checked %zu parameters, max relative error %.3e at %s: %s\n", report.checked,
                       report.max_rel_error, report.worst.c_str(), report.passed ? "PASS" : "FAIL");
    return report.passed ? kExitOk : kExitFailure;
}

int cmd_datagen(const std::optional<std::string>& config_path, SyntheticSpec synth, const std::string& prefix,
                const std::string& format, std::ostream& out) {
    if (config_path) {
        const RunSpec spec = load_run_spec(read_config_file(*config_path));
        synth = spec.data.synthetic;
    }
    const Dataset d = make_synthetic(synth);
    const auto fmt = format == "byte" ? IdxPixelFormat::unsigned_byte : IdxPixelFormat::float64;
    const std::string images = prefix + "-images.idx", labels = prefix + "-labels.idx";
    write_idx(d, images, labels, fmt);
    out << "wrote " << d.size() << " samples to " << images << " and " << labels << "\n";
    return kExitOk;
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Asymmetric backpropagation experiments"};
    app.require_subcommand(1);

    std::string config, out_csv = "results.csv", prefix = "synthetic", format = "float64";
    std::optional<std::uint64_t> seed;
    std::size_t workers = 1, batch = 4;
    bool corrupt = false;

    auto* run = app.add_subcommand("run", "Train one experiment");
    run->add_option("--config", config, "Experiment config file")->required();
    run->add_option("--out", out_csv, "CSV file to append the result row to");
    run->add_option("--seed", seed, "Override train.seed");

    auto* sweep = app.add_subcommand("sweep", "Run the Cartesian product described by [sweep] blocks");
    sweep->add_option("--config", config, "Sweep config file")->required();
    sweep->add_option("--out", out_csv, "CSV file to append result rows to");
    sweep->add_option("--seed", seed, "Override the base train.seed");
    sweep->add_option("--workers", workers, "Concurrent trainers")->check(CLI::PositiveNumber);

    auto* grad = app.add_subcommand("gradcheck", "Compare backward against finite differences with V = W");
    grad->add_option("--config", config, "Config with a [network] section")->required();
    grad->add_option("--seed", seed, "Override train.seed");
    grad->add_option("--batch", batch, "Samples in the probe batch")->check(CLI::Range(2, 1000));
    grad->add_flag("--corrupt-backward", corrupt, "Perturb one analytic gradient (self test)");

    SyntheticSpec synth;
    std::string kind = "gaussian_blobs";
    std::optional<std::string> datagen_config;
    auto* gen = app.add_subcommand("datagen", "Write a synthetic dataset as IDX files");
    gen->add_option("--config", datagen_config, "Config whose [data] section describes the dataset");
    gen->add_option("--kind", kind, "gaussian_blobs or two_spirals");
    gen->add_option("--n", synth.n, "Number of samples");
    gen->add_option("--classes", synth.classes, "Number of classes");
    gen->add_option("--dim", synth.dim, "Feature dimension");
    gen->add_option("--separation", synth.separation, "Blob center distance in noise units, or spiral turns");
    gen->add_option("--noise", synth.noise, "Within-class standard deviation or radial jitter");
    gen->add_option("--seed", seed, "Generator seed");
    gen->add_option("--out", prefix, "Output prefix");
    gen->add_option("--format", format, "Pixel encoding")->check(CLI::IsMember({"byte", "float64"}));

    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*run) return cmd_run(config, out_csv, seed, out);
        if (*sweep) return cmd_sweep(config, out_csv, seed, workers, out, err);
        if (*grad) return cmd_gradcheck(config, seed, batch, corrupt, out);
        if (*gen) {
            synth.kind = parse_synthetic_kind(kind);
            if (seed) synth.seed = *seed;
            return cmd_datagen(datagen_config, synth, prefix, format, out);
        }
    } catch (const config_error& e) {
        err << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const parameter_cap_error& e) {
        err << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}

} // namespace asymbp
