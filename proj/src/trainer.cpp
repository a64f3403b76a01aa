#include "asymbp/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace asymbp {

std::vector<LrPhase> full_schedule() { return {{1, 50, 5e-4}, {51, 60, 5e-5}, {61, 65, 5e-6}}; }

std::vector<LrPhase> desk_schedule() { return {{1, 15, 5e-4}, {16, 18, 5e-5}, {19, 20, 5e-6}}; }

std::vector<LrPhase> compressed_schedule(std::size_t epochs) {
    const auto boundary = [&](double frac) {
        return static_cast<std::size_t>(std::lround(static_cast<double>(epochs) * frac));
    };
    const std::size_t ends[] = {std::max<std::size_t>(1, boundary(50.0 / 65.0)), boundary(60.0 / 65.0), epochs};
    const double rates[] = {5e-4, 5e-5, 5e-6};
    std::vector<LrPhase> out;
    std::size_t first = 1;
    for (int i = 0; i < 3; ++i) {
        const std::size_t last = std::min(ends[i], epochs);
        if (last >= first) {
            out.push_back({first, last, rates[i]});
            first = last + 1;
        }
    }
    return out;
}

double lr_at(const std::vector<LrPhase>& schedule, std::size_t epoch, double multiplier) {
    for (const auto& ph : schedule)
        if (epoch >= ph.first && epoch <= ph.last) return ph.rate * multiplier;
    throw std::out_of_range("no learning rate scheduled for epoch " + std::to_string(epoch));
}

std::string_view to_string(ClampMode mode) {
    switch (mode) {
    case ClampMode::none: return "none";
    case ClampMode::bottom: return "bottom";
    case ClampMode::top: return "top";
    }
    return "unknown";
}

ClampMode parse_clamp_mode(std::string_view name) {
    if (name == "none") return ClampMode::none;
    if (name == "bottom") return ClampMode::bottom;
    if (name == "top") return ClampMode::top;
    throw std::invalid_argument("unknown clamp mode '" + std::string(name) + "' (expected none|bottom|top)");
}

void ExperimentConfig::validate() const {
    if (epochs == 0) throw std::invalid_argument("epochs must be positive");
    if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
    if (!(lr_multiplier > 0.0) || !std::isfinite(lr_multiplier))
        throw std::invalid_argument("lr_multiplier must be positive");
    if (!(bn_ema_alpha > 0.0 && bn_ema_alpha <= 1.0))
        throw std::invalid_argument("bn_ema_alpha must lie in (0, 1]");
    if (bn_ema_batches == 0) throw std::invalid_argument("bn_ema_batches must be positive");
    if (!std::isfinite(grad_scale)) throw std::invalid_argument("grad_scale must be finite");
    if (!(rule.momentum >= 0.0) || !(rule.weight_decay >= 0.0))
        throw std::invalid_argument("momentum and weight_decay must be non-negative");
    scheme.validate();

    // The schedule must tile [1, epochs] exactly.
    std::vector<LrPhase> phases = lr_schedule;
    std::sort(phases.begin(), phases.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::size_t next = 1;
    for (const auto& ph : phases) {
        if (ph.first > ph.last) throw std::invalid_argument("lr phase " + std::to_string(ph.first) + "-" +
                                                            std::to_string(ph.last) + " is empty");
        if (ph.first != next) {
            throw std::invalid_argument(ph.first < next ? "lr schedule overlaps at epoch " + std::to_string(ph.first)
                                                        : "lr schedule has a gap at epoch " + std::to_string(next));
        }
        if (!(ph.rate >= 0.0)) throw std::invalid_argument("learning rates must be non-negative");
        next = ph.last + 1;
    }
    if (next != epochs + 1) {
        throw std::invalid_argument("lr schedule covers epochs 1-" + std::to_string(next - 1) + " but the run has " +
                                    std::to_string(epochs));
    }
    for (const auto& ph : batch_size_overrides) {
        if (ph.first == 0 || ph.first > ph.last || ph.batch_size == 0)
            throw std::invalid_argument("invalid batch size override " + std::to_string(ph.first) + "-" +
                                        std::to_string(ph.last) + ":" + std::to_string(ph.batch_size));
    }
}

std::size_t ExperimentConfig::batch_size_at(std::size_t epoch) const {
    for (const auto& ph : batch_size_overrides)
        if (epoch >= ph.first && epoch <= ph.last) return ph.batch_size;
    return batch_size;
}

void apply_clamp(Network& net, ClampMode mode) {
    const auto weighted = net.weighted_layers();
    if (weighted.empty()) throw std::invalid_argument("apply_clamp: network has no weighted layers");
    for (std::size_t i = 0; i < weighted.size(); ++i) {
        const bool last = i + 1 == weighted.size();
        bool frozen = false;
        if (mode == ClampMode::bottom) frozen = last;
        if (mode == ClampMode::top) frozen = !last;
        net.set_frozen(weighted[i], frozen);
    }
}

double evaluate(const Network& net, const Dataset& data, std::size_t chunk) {
    if (data.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
    if (chunk == 0) chunk = data.size();
    std::size_t wrong = 0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < data.size(); start += chunk) {
        const std::size_t end = std::min(data.size(), start + chunk);
        idx.resize(end - start);
        std::iota(idx.begin(), idx.end(), start);
        const Dataset batch = gather(data, idx);
        const auto pred = argmax_rows(net.forward(batch.inputs, Mode::test));
        for (std::size_t i = 0; i < pred.size(); ++i)
            if (pred[i] != batch.labels[i]) ++wrong;
    }
    return 100.0 * static_cast<double>(wrong) / static_cast<double>(data.size());
}

void update_bn_running_stats(Network& net, const Dataset& train, double alpha, std::size_t n_batches,
                             std::size_t batch_size, Rng& rng) {
    std::vector<std::size_t> bn_layers;
    for (std::size_t i = 0; i < net.layers().size(); ++i)
        if (std::holds_alternative<BatchNorm>(net.layers()[i])) bn_layers.push_back(i);
    if (bn_layers.empty()) return;
    batch_size = std::min(batch_size, train.size());
    if (batch_size < 2) throw std::invalid_argument("update_bn_running_stats: need batches of at least 2 samples");

    std::vector<std::size_t> pool(train.size());
    std::iota(pool.begin(), pool.end(), 0);
    std::size_t cursor = pool.size();
    std::vector<std::size_t> idx(batch_size);
    for (std::size_t b = 0; b < n_batches; ++b) {
        for (auto& i : idx) {
            if (cursor == pool.size()) {
                std::shuffle(pool.begin(), pool.end(), rng);
                cursor = 0;
            }
            i = pool[cursor++];
        }
        const Dataset batch = gather(train, idx);
        ForwardTrace trace;
        net.forward(batch.inputs, Mode::train, &trace);
        for (auto li : bn_layers) {
            const auto& t = std::get<BatchNormTrace>(trace.entries[li]);
            auto& st = std::get<BatchNorm>(net.layers()[li]).state;
            for (std::size_t f = 0; f < st.running_mean.size(); ++f) {
                st.running_mean[f] = (1.0 - alpha) * st.running_mean[f] + alpha * t.mean[f];
                st.running_std[f] = (1.0 - alpha) * st.running_std[f] + alpha * t.std[f];
            }
        }
    }
}

RunRecord train(const ExperimentConfig& config, const DataSplit& data, const TrainHooks& hooks) {
    config.validate();
    Network net = build_network(config.network, config.seed);
    return train_network(net, config, data, hooks);
}

RunRecord train_network(Network& net, const ExperimentConfig& config, const DataSplit& data,
                        const TrainHooks& hooks) {
    const auto started = std::chrono::steady_clock::now();
    config.validate();
    data.train.validate();
    data.test.validate();
    if (data.train.sample_shape() != net.input_shape() || data.test.sample_shape() != net.input_shape()) {
        throw std::invalid_argument("dataset samples " + to_string(data.train.sample_shape()) +
                                    " do not match network input " + to_string(net.input_shape()));
    }
    if (data.train.classes != net.output_size() || data.test.classes != net.output_size()) {
        throw std::invalid_argument("dataset has " + std::to_string(data.train.classes) + " classes but network has " +
                                    std::to_string(net.output_size()) + " outputs");
    }

    apply_clamp(net, config.clamp);
    FeedbackBank bank(config.scheme, net, config.seed);
    auto params = net.parameters();
    std::vector<UpdateRule> rules;
    rules.reserve(params.size());
    for (const auto& p : params) rules.emplace_back(config.rule, p.value->shape());

    const double chance = 100.0 * (1.0 - 1.0 / static_cast<double>(net.output_size()));
    const double nan = std::numeric_limits<double>::quiet_NaN();
    RunRecord rec;
    std::vector<std::size_t> order(data.train.size());

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        if (rec.diverged) {
            rec.train_loss.push_back(nan);
            rec.test_error.push_back(chance);
            if (hooks.after_epoch) hooks.after_epoch(net, epoch, rec);
            continue;
        }
        const double eta = lr_at(config.lr_schedule, epoch, config.lr_multiplier);
        const std::size_t bs = config.batch_size_at(epoch);
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng = make_stream(config.seed, Stream::shuffle, epoch);
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double loss_sum = 0.0;
        std::size_t seen = 0, batch_no = 0;
        for (std::size_t start = 0; start < order.size(); start += bs) {
            const std::size_t end = std::min(order.size(), start + bs);
            if (end - start < 2) break;
            const Dataset batch = gather(data.train, std::span(order).subspan(start, end - start));

            ForwardTrace trace;
            const Tensor logits = net.forward(batch.inputs, Mode::train, &trace);
            const LossResult loss = softmax_xent(logits, batch.labels);
            if (!std::isfinite(loss.loss)) {
                rec.diverged = true;
                rec.diverged_epoch = epoch;
                break;
            }
            loss_sum += loss.loss;
            seen += batch.size();

            BackwardResult back = net.backward(trace, loss.delta);
            for (std::size_t k = 0; k < params.size(); ++k) {
                if (params[k].frozen) continue;
                Tensor& g = back.grads[k];
                if (config.grad_scale != 1.0) g = scale(g, config.grad_scale);
                apply_update(*params[k].value, rules[k].compute_step(g, *params[k].value, eta));
            }
            bank.refresh(net);
            if (hooks.after_batch) hooks.after_batch(net, epoch, batch_no);
            ++batch_no;
        }
        if (rec.diverged) {
            rec.train_loss.push_back(nan);
            rec.test_error.push_back(chance);
            if (hooks.after_epoch) hooks.after_epoch(net, epoch, rec);
            continue;
        }

        Rng bn_rng = make_stream(config.seed, Stream::bn_stats, epoch);
        update_bn_running_stats(net, data.train, config.bn_ema_alpha, config.bn_ema_batches, bs, bn_rng);
        const double err = evaluate(net, data.test);
        rec.train_loss.push_back(seen ? loss_sum / static_cast<double>(seen) : nan);
        rec.test_error.push_back(err);
        if (hooks.after_epoch) hooks.after_epoch(net, epoch, rec);
    }

    rec.best_error = *std::min_element(rec.test_error.begin(), rec.test_error.end());
    for (auto layer : net.weighted_layers()) rec.concordance.push_back(concordance(net.weight(layer), net.feedback(layer)));
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return rec;
}

} // namespace asymbp
