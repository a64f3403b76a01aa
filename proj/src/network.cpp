#include "asymbp/network.hpp"

#include "asymbp/rng.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <regex>
#include <sstream>
#include <stdexcept>

namespace asymbp {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::size_t to_size(const std::ssub_match& m) { return static_cast<std::size_t>(std::stoul(m.str())); }

void parse_padding(const std::smatch& m, std::size_t first, ConvGeometry& g) {
    if (!m[first].matched) return;
    if (m[first + 1].matched) {
        g.pad_top = to_size(m[first]);
        g.pad_left = to_size(m[first + 1]);
        g.pad_bottom = to_size(m[first + 2]);
        g.pad_right = to_size(m[first + 3]);
    } else {
        g.pad_top = g.pad_left = g.pad_bottom = g.pad_right = to_size(m[first]);
    }
}

// Per-sample shape after a stage.
Shape propagate(const Layer& layer, const Shape& in) {
    return std::visit(
        overloaded{
            [&](const Dense& d) -> Shape {
                if (element_count(in) != d.inputs()) {
                    throw dimension_error("dense layer expects " + std::to_string(d.inputs()) + " inputs, got " +
                                          to_string(in));
                }
                return {d.outputs()};
            },
            [&](const Conv2D& c) -> Shape {
                if (in.size() != 3 || in[0] != c.in_channels) {
                    throw dimension_error("conv layer expects [" + std::to_string(c.in_channels) + "xHxW], got " +
                                          to_string(in));
                }
                return {c.out_channels, c.geometry.out_h(in[1]), c.geometry.out_w(in[2])};
            },
            [&](const Pool& p) -> Shape {
                if (in.size() != 3) throw dimension_error("pool layer expects [CxHxW], got " + to_string(in));
                return {in[0], p.geometry.out_h(in[1]), p.geometry.out_w(in[2])};
            },
            [&](const Relu&) -> Shape { return in; },
            [&](const BatchNorm& bn) -> Shape {
                if (in.empty() || in[0] != bn.features() || (in.size() != 1 && in.size() != 3)) {
                    throw dimension_error("batchnorm over " + std::to_string(bn.features()) +
                                          " features cannot take " + to_string(in));
                }
                return in;
            },
        },
        layer);
}

Tensor gaussian(Shape shape, double stddev, Rng& rng) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : t.data()) v = dist(rng);
    return t;
}

} // namespace

// ---------------------------------------------------------------------------

std::vector<LayerSpec> parse_layers(std::string_view text) {
    static const std::regex fc_re(R"(fc(\d+))");
    static const std::regex conv_re(R"(conv(\d+)x(\d+)x(\d+)/(\d+)(?:p(\d+)(?:,(\d+),(\d+),(\d+))?)?)");
    static const std::regex pool_re(R"((max|avg)pool(\d+)x(\d+)/(\d+)(?:p(\d+)(?:,(\d+),(\d+),(\d+))?)?)");
    std::string normalized(text);
    std::transform(normalized.begin(), normalized.end(), normalized.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    std::replace(normalized.begin(), normalized.end(), ',', ' ');
    // Padding lists use commas too; restore them inside "pA,B,C,D" groups.
    static const std::regex pad_list(R"(p(\d+) (\d+) (\d+) (\d+))");
    normalized = std::regex_replace(normalized, pad_list, "p$1,$2,$3,$4");

    std::vector<LayerSpec> out;
    std::istringstream is(normalized);
    std::string token;
    while (is >> token) {
        std::smatch m;
        LayerSpec s;
        if (std::regex_match(token, m, fc_re)) {
            s.kind = LayerKind::dense;
            s.units = to_size(m[1]);
        } else if (std::regex_match(token, m, conv_re)) {
            s.kind = LayerKind::conv;
            s.geometry.kernel_h = to_size(m[1]);
            s.geometry.kernel_w = to_size(m[2]);
            s.units = to_size(m[3]);
            s.geometry.stride = to_size(m[4]);
            parse_padding(m, 5, s.geometry);
        } else if (std::regex_match(token, m, pool_re)) {
            s.kind = m[1].str() == "max" ? LayerKind::max_pool : LayerKind::avg_pool;
            s.geometry.kernel_h = to_size(m[2]);
            s.geometry.kernel_w = to_size(m[3]);
            s.geometry.stride = to_size(m[4]);
            parse_padding(m, 5, s.geometry);
        } else {
            throw std::invalid_argument("unrecognized layer token '" + token + "'");
        }
        if ((s.kind == LayerKind::dense || s.kind == LayerKind::conv) && s.units == 0) {
            throw std::invalid_argument("layer '" + token + "' has zero units");
        }
        out.push_back(s);
    }
    if (out.empty()) throw std::invalid_argument("empty layer list");
    return out;
}

std::string format_layers(const std::vector<LayerSpec>& layers) {
    std::ostringstream os;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& s = layers[i];
        const auto& g = s.geometry;
        if (i) os << ' ';
        switch (s.kind) {
        case LayerKind::dense: os << "fc" << s.units; continue;
        case LayerKind::conv: os << "conv" << g.kernel_h << 'x' << g.kernel_w << 'x' << s.units; break;
        case LayerKind::max_pool: os << "maxpool" << g.kernel_h << 'x' << g.kernel_w; break;
        case LayerKind::avg_pool: os << "avgpool" << g.kernel_h << 'x' << g.kernel_w; break;
        }
        os << '/' << g.stride;
        if (g.pad_top || g.pad_left || g.pad_bottom || g.pad_right) {
            if (g.pad_top == g.pad_left && g.pad_top == g.pad_bottom && g.pad_top == g.pad_right)
                os << 'p' << g.pad_top;
            else
                os << 'p' << g.pad_top << ',' << g.pad_left << ',' << g.pad_bottom << ',' << g.pad_right;
        }
    }
    return os.str();
}

NetworkSpec mnist_architecture() {
    NetworkSpec spec;
    spec.input = {1, 28, 28};
    spec.layers = parse_layers("conv5x5x20/1 maxpool2x2/2 conv5x5x50/1 maxpool2x2/2 fc500 fc10");
    return spec;
}

NetworkSpec timit_architecture(std::size_t classes) {
    NetworkSpec spec;
    spec.input = {1845};
    spec.layers = parse_layers("fc512 fc256 fc" + std::to_string(classes));
    return spec;
}

// ---------------------------------------------------------------------------

Network::Network(Shape input_shape, std::vector<Layer> layers)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)) {
    Shape s = input_shape_;
    for (const auto& l : layers_) s = propagate(l, s);
    output_size_ = element_count(s);
}

std::vector<std::size_t> Network::weighted_layers() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < layers_.size(); ++i)
        if (std::holds_alternative<Dense>(layers_[i]) || std::holds_alternative<Conv2D>(layers_[i])) out.push_back(i);
    return out;
}

namespace {

template <class Net>
auto& weight_of(Net& layers, std::size_t i) {
    if (auto* d = std::get_if<Dense>(&layers[i])) return d->weight;
    if (auto* c = std::get_if<Conv2D>(&layers[i])) return c->weight;
    throw std::invalid_argument("layer " + std::to_string(i) + " has no weights");
}

template <class Net>
auto& feedback_of(Net& layers, std::size_t i) {
    if (auto* d = std::get_if<Dense>(&layers[i])) return d->feedback;
    if (auto* c = std::get_if<Conv2D>(&layers[i])) return c->feedback;
    throw std::invalid_argument("layer " + std::to_string(i) + " has no feedback weights");
}

} // namespace

Tensor& Network::weight(std::size_t layer) { return weight_of(layers_, layer); }
Tensor& Network::feedback(std::size_t layer) { return feedback_of(layers_, layer); }
const Tensor& Network::weight(std::size_t layer) const { return weight_of(layers_, layer); }
const Tensor& Network::feedback(std::size_t layer) const { return feedback_of(layers_, layer); }

std::size_t Network::fan_in(std::size_t layer) const {
    if (auto* d = std::get_if<Dense>(&layers_[layer])) return d->fan_in();
    if (auto* c = std::get_if<Conv2D>(&layers_[layer])) return c->fan_in();
    throw std::invalid_argument("layer " + std::to_string(layer) + " has no weights");
}

void Network::set_frozen(std::size_t layer, bool frozen) {
    std::visit(overloaded{[&](Dense& d) { d.frozen = frozen; }, [&](Conv2D& c) { c.frozen = frozen; },
                          [&](BatchNorm& b) { b.frozen = frozen; }, [](auto&) {}},
               layers_.at(layer));
}

bool Network::frozen(std::size_t layer) const {
    return std::visit(overloaded{[](const Dense& d) { return d.frozen; }, [](const Conv2D& c) { return c.frozen; },
                                 [](const BatchNorm& b) { return b.frozen; }, [](const auto&) { return false; }},
                      layers_.at(layer));
}

std::vector<ParamRef> Network::parameters() {
    std::vector<ParamRef> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        std::visit(overloaded{
                       [&](Dense& d) {
                           out.push_back({i, ParamRole::weight, &d.weight, d.frozen});
                           out.push_back({i, ParamRole::bias, &d.bias, d.frozen});
                       },
                       [&](Conv2D& c) {
                           out.push_back({i, ParamRole::weight, &c.weight, c.frozen});
                           out.push_back({i, ParamRole::bias, &c.bias, c.frozen});
                       },
                       [&](BatchNorm& b) {
                           if (b.state.gamma) {
                               out.push_back({i, ParamRole::gamma, &*b.state.gamma, b.frozen});
                               out.push_back({i, ParamRole::beta, &*b.state.beta, b.frozen});
                           }
                       },
                       [](auto&) {},
                   },
                   layers_[i]);
    }
    return out;
}

std::size_t Network::parameter_count() const {
    std::size_t n = 0;
    for (const auto& layer : layers_) {
        std::visit(overloaded{[&](const Dense& d) { n += d.weight.size() + d.bias.size(); },
                              [&](const Conv2D& c) { n += c.weight.size() + c.bias.size(); },
                              [&](const BatchNorm& b) { n += b.learnable() ? 2 * b.features() : 0; },
                              [](const auto&) {}},
                   layer);
    }
    return n;
}

void Network::make_symmetric() {
    for (auto i : weighted_layers()) feedback(i) = weight(i);
}

Tensor Network::forward(const Tensor& x, Mode mode, ForwardTrace* trace) const {
    Shape expected{x.dim(0)};
    expected.insert(expected.end(), input_shape_.begin(), input_shape_.end());
    if (x.shape() != expected) {
        throw dimension_error("network input " + to_string(x.shape()) + " does not match " + to_string(expected));
    }
    if (trace) {
        trace->entries.clear();
        trace->entries.reserve(layers_.size());
    }
    Tensor cur = x;
    for (const auto& layer : layers_) {
        std::visit(
            [&](const auto& l) {
                using T = std::decay_t<decltype(l)>;
                auto step = [&]() {
                    if constexpr (std::is_same_v<T, Dense>) return fc_forward(l, cur);
                    else if constexpr (std::is_same_v<T, Conv2D>) return conv_forward(l, cur);
                    else if constexpr (std::is_same_v<T, Pool>) return pool_forward(l, cur);
                    else if constexpr (std::is_same_v<T, Relu>) return relu_forward(cur);
                    else return batchnorm_forward(l, cur, mode);
                }();
                cur = std::move(step.output);
                if (trace) trace->entries.emplace_back(std::move(step.trace));
            },
            layer);
    }
    // Logits as [batch × classes].
    return cur.rank() == 2 ? cur : std::move(cur).reshaped({x.dim(0), output_size_});
}

BackwardResult Network::backward(const ForwardTrace& trace, const Tensor& output_delta,
                                 bool need_input_delta) const {
    if (trace.entries.size() != layers_.size()) {
        throw std::invalid_argument("backward: trace has " + std::to_string(trace.entries.size()) +
                                    " entries for " + std::to_string(layers_.size()) + " layers");
    }
    // Offsets of each layer's parameters in the parameters() ordering.
    std::vector<std::size_t> offset(layers_.size() + 1, 0);
    std::size_t lowest_trainable = layers_.size();
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        std::size_t count = 0;
        bool trainable = false;
        std::visit(overloaded{[&](const Dense& d) { count = 2; trainable = !d.frozen; },
                              [&](const Conv2D& c) { count = 2; trainable = !c.frozen; },
                              [&](const BatchNorm& b) {
                                  count = b.learnable() ? 2 : 0;
                                  trainable = b.learnable() && !b.frozen;
                              },
                              [](const auto&) {}},
                   layers_[i]);
        offset[i + 1] = offset[i] + count;
        if (trainable && lowest_trainable == layers_.size()) lowest_trainable = i;
    }

    BackwardResult result;
    result.grads.resize(offset.back());

    Tensor delta = output_delta;
    for (std::size_t idx = layers_.size(); idx-- > 0;) {
        const bool need_dx = need_input_delta || lowest_trainable < idx;
        const bool need_here = need_input_delta || lowest_trainable <= idx;
        if (!need_here) break;
        const auto& entry = trace.entries[idx];
        std::visit(
            overloaded{
                [&](const Dense& l) {
                    const auto& t = std::get<DenseTrace>(entry);
                    Tensor dy = delta.rank() == 2 ? delta : delta.reshaped({delta.dim(0), delta.size() / delta.dim(0)});
                    auto g = fc_backward(l, t, dy, need_dx);
                    result.grads[offset[idx]] = std::move(g.weight);
                    result.grads[offset[idx] + 1] = std::move(g.bias);
                    delta = std::move(g.input_delta);
                },
                [&](const Conv2D& l) {
                    const auto& t = std::get<ConvTrace>(entry);
                    Shape out_shape{t.input_shape[0], l.out_channels, t.out_h, t.out_w};
                    Tensor dy = delta.shape() == out_shape ? delta : delta.reshaped(out_shape);
                    auto g = conv_backward(l, t, dy, need_dx);
                    result.grads[offset[idx]] = std::move(g.weight);
                    result.grads[offset[idx] + 1] = std::move(g.bias);
                    delta = std::move(g.input_delta);
                },
                [&](const Pool& l) {
                    const auto& t = std::get<PoolTrace>(entry);
                    const Shape& in = t.input_shape;
                    Shape out_shape{in[0], in[1], l.geometry.out_h(in[2]), l.geometry.out_w(in[3])};
                    delta = pool_backward(l, t, delta.shape() == out_shape ? delta : delta.reshaped(out_shape));
                },
                [&](const Relu&) {
                    const auto& t = std::get<ReluTrace>(entry);
                    delta = relu_backward(t, delta.shape() == t.pre_activation.shape()
                                                 ? delta
                                                 : delta.reshaped(t.pre_activation.shape()));
                },
                [&](const BatchNorm& l) {
                    const auto& t = std::get<BatchNormTrace>(entry);
                    auto g = batchnorm_backward(l, t, delta.shape() == t.normalized.shape()
                                                          ? delta
                                                          : delta.reshaped(t.normalized.shape()));
                    if (l.learnable()) {
                        result.grads[offset[idx]] = std::move(*g.gamma);
                        result.grads[offset[idx] + 1] = std::move(*g.beta);
                    }
                    delta = std::move(g.input_delta);
                },
            },
            layers_[idx]);
        if (!need_dx) break;
    }
    if (need_input_delta) {
        Shape in_shape{output_delta.dim(0)};
        in_shape.insert(in_shape.end(), input_shape_.begin(), input_shape_.end());
        result.input_delta = delta.shape() == in_shape ? std::move(delta) : std::move(delta).reshaped(in_shape);
    }
    return result;
}

// ---------------------------------------------------------------------------

Network build_network(const NetworkSpec& spec, std::uint64_t seed) {
    if (spec.input.empty()) throw std::invalid_argument("network input shape is empty");
    std::size_t last_weighted = spec.layers.size();
    for (std::size_t i = 0; i < spec.layers.size(); ++i)
        if (spec.layers[i].kind == LayerKind::dense || spec.layers[i].kind == LayerKind::conv) last_weighted = i;
    if (last_weighted == spec.layers.size()) throw std::invalid_argument("network has no weighted layer");

    std::vector<Layer> layers;
    Shape shape = spec.input;
    std::uint64_t ordinal = 0;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const auto& s = spec.layers[i];
        Layer layer;
        switch (s.kind) {
        case LayerKind::dense: {
            Dense d;
            const std::size_t in = element_count(shape);
            Rng rng = make_stream(seed, Stream::init, ordinal++);
            d.weight = gaussian({in, s.units}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
            d.feedback = d.weight;
            d.bias = Tensor({s.units}, 0.0);
            layer = std::move(d);
            break;
        }
        case LayerKind::conv: {
            if (shape.size() != 3) throw dimension_error("conv stage needs a [CxHxW] input, got " + to_string(shape));
            Conv2D c;
            c.in_channels = shape[0];
            c.out_channels = s.units;
            c.geometry = s.geometry;
            Rng rng = make_stream(seed, Stream::init, ordinal++);
            c.weight = gaussian({c.fan_in(), s.units}, 1.0 / std::sqrt(static_cast<double>(c.fan_in())), rng);
            c.feedback = c.weight;
            c.bias = Tensor({s.units}, 0.0);
            layer = std::move(c);
            break;
        }
        case LayerKind::max_pool:
        case LayerKind::avg_pool:
            layer = Pool{s.kind == LayerKind::max_pool ? PoolKind::max : PoolKind::average, s.geometry};
            break;
        }
        shape = propagate(layer, shape);
        layers.push_back(std::move(layer));
        const bool weighted = s.kind == LayerKind::dense || s.kind == LayerKind::conv;
        if (weighted && i != last_weighted) {
            if (spec.batch_norm) {
                layers.push_back(make_batch_norm(shape[0], spec.bn_learnable, spec.bn_epsilon));
            }
            layers.push_back(Relu{});
        }
    }
    return Network(spec.input, std::move(layers));
}

} // namespace asymbp
