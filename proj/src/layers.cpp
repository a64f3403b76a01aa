#include "asymbp/layers.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace asymbp {

namespace {

constexpr std::size_t kNoIndex = std::numeric_limits<std::size_t>::max();

std::size_t out_extent(std::size_t in, std::size_t pad_lo, std::size_t pad_hi, std::size_t kernel,
                       std::size_t stride, const char* axis) {
    if (stride == 0 || kernel == 0) throw dimension_error("conv geometry: kernel and stride must be positive");
    const std::size_t padded = in + pad_lo + pad_hi;
    if (padded < kernel) {
        throw dimension_error(std::string("conv geometry: kernel ") + std::to_string(kernel) + " exceeds padded " +
                              axis + " extent " + std::to_string(padded));
    }
    return (padded - kernel) / stride + 1;
}

void require_rank4(const Tensor& x, const char* what) {
    if (x.rank() != 4) throw dimension_error(std::string(what) + ": expected [batch×c×h×w], got " + to_string(x.shape()));
}

// Flattens trailing dimensions: [b × ...] -> [b × rest].
Tensor flatten_batch(const Tensor& x) {
    if (x.rank() < 2) throw dimension_error("expected a batched input, got " + to_string(x.shape()));
    return x.rank() == 2 ? x : x.reshaped({x.dim(0), x.size() / x.dim(0)});
}

Tensor column_sums(const Tensor& m) {
    Tensor out({m.dim(1)});
    const std::size_t rows = m.dim(0), cols = m.dim(1);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[c] += m[r * cols + c];
    return out;
}

// Feature layout for normalization: [batch × features × spatial].
struct FeatureView {
    std::size_t batch, features, spatial;
};

FeatureView feature_view(const Tensor& x, std::size_t features) {
    if (x.rank() != 2 && x.rank() != 4) {
        throw dimension_error("batchnorm: expected rank 2 or 4 input, got " + to_string(x.shape()));
    }
    FeatureView v{x.dim(0), x.dim(1), x.rank() == 4 ? x.dim(2) * x.dim(3) : 1};
    if (v.features != features) {
        throw dimension_error("batchnorm: input " + to_string(x.shape()) + " does not have " +
                              std::to_string(features) + " features");
    }
    return v;
}

} // namespace

std::size_t ConvGeometry::out_h(std::size_t in_h) const {
    return out_extent(in_h, pad_top, pad_bottom, kernel_h, stride, "height");
}

std::size_t ConvGeometry::out_w(std::size_t in_w) const {
    return out_extent(in_w, pad_left, pad_right, kernel_w, stride, "width");
}

BatchNorm make_batch_norm(std::size_t features, bool learnable, double epsilon) {
    if (!(epsilon > 0.0)) throw std::invalid_argument("batchnorm: epsilon must be positive");
    BatchNorm bn;
    bn.state.running_mean = Tensor({features}, 0.0);
    bn.state.running_std = Tensor({features}, 1.0);
    bn.state.epsilon = epsilon;
    if (learnable) {
        bn.state.gamma = Tensor({features}, 1.0);
        bn.state.beta = Tensor({features}, 0.0);
    }
    return bn;
}

// ---------------------------------------------------------------------------
// Fully connected

Forward<DenseTrace> fc_forward(const Dense& layer, const Tensor& x) {
    Tensor flat = flatten_batch(x);
    if (flat.dim(1) != layer.inputs()) {
        throw dimension_error("fc_forward: input " + to_string(x.shape()) + " does not match weight " +
                              to_string(layer.weight.shape()));
    }
    Tensor y = matmul(flat, layer.weight);
    const std::size_t out = layer.outputs();
    for (std::size_t b = 0; b < y.dim(0); ++b)
        for (std::size_t j = 0; j < out; ++j) y[b * out + j] += layer.bias[j];
    return {std::move(y), DenseTrace{std::move(flat), x.shape()}};
}

WeightGrads fc_backward(const Tensor& feedback, const DenseTrace& trace, const Tensor& delta_y,
                        bool need_input_delta) {
    const Tensor& x = trace.input;
    if (delta_y.rank() != 2 || delta_y.dim(0) != x.dim(0) || feedback.rank() != 2 ||
        feedback.dim(0) != x.dim(1) || feedback.dim(1) != delta_y.dim(1)) {
        throw dimension_error("fc_backward: delta " + to_string(delta_y.shape()) + ", input " +
                              to_string(x.shape()) + " and feedback " + to_string(feedback.shape()) +
                              " disagree");
    }
    WeightGrads g;
    g.weight = matmul_tn(x, delta_y);
    g.bias = column_sums(delta_y);
    if (need_input_delta) g.input_delta = matmul_nt(delta_y, feedback).reshaped(trace.input_shape);
    return g;
}

// ---------------------------------------------------------------------------
// Convolution (im2col)

namespace {

// Kernel columns [begin, end) that land inside a row of width w; input column
// of kernel column i is offset + i.
struct KernelSpan {
    std::size_t begin;
    std::size_t end;
    std::ptrdiff_t offset;
};

KernelSpan kernel_span(std::size_t ox, std::size_t stride, std::size_t pad_left, std::size_t kernel_w, std::size_t w) {
    const std::ptrdiff_t offset = static_cast<std::ptrdiff_t>(ox * stride) - static_cast<std::ptrdiff_t>(pad_left);
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -offset);
    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(kernel_w),
                                                       static_cast<std::ptrdiff_t>(w) - offset);
    if (hi <= lo) return {0, 0, offset};
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi), offset};
}

} // namespace

Forward<ConvTrace> conv_forward(const Conv2D& layer, const Tensor& x) {
    require_rank4(x, "conv_forward");
    const auto& g = layer.geometry;
    const std::size_t batch = x.dim(0), channels = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (channels != layer.in_channels) {
        throw dimension_error("conv_forward: input " + to_string(x.shape()) + " has " + std::to_string(channels) +
                              " channels, layer expects " + std::to_string(layer.in_channels));
    }
    const std::size_t oh = g.out_h(h), ow = g.out_w(w);
    const std::size_t k = layer.fan_in();
    const std::size_t rows = batch * oh * ow;

    Tensor cols({rows, k}, uninitialized);
    double* cp = cols.raw();
    const double* xp = x.raw();
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                double* row = cp + ((b * oh + oy) * ow + ox) * k;
                const KernelSpan kx = kernel_span(ox, g.stride, g.pad_left, g.kernel_w, w);
                for (std::size_t c = 0; c < channels; ++c) {
                    const double* plane = xp + (b * channels + c) * h * w;
                    for (std::size_t ky = 0; ky < g.kernel_h; ++ky, row += g.kernel_w) {
                        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                                  static_cast<std::ptrdiff_t>(g.pad_top);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
                            std::fill(row, row + g.kernel_w, 0.0);
                            continue;
                        }
                        const double* src = plane + iy * static_cast<std::ptrdiff_t>(w) + kx.offset;
                        std::fill(row, row + kx.begin, 0.0);
                        for (std::size_t i = kx.begin; i < kx.end; ++i) row[i] = src[i];
                        std::fill(row + kx.end, row + g.kernel_w, 0.0);
                    }
                }
            }
        }
    }

    const Tensor out2 = matmul(cols, layer.weight); // [rows × out_channels]
    const std::size_t oc = layer.out_channels;
    Tensor y({batch, oc, oh, ow}, uninitialized);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t o = 0; o < oc; ++o)
            for (std::size_t s = 0; s < oh * ow; ++s)
                y[(b * oc + o) * oh * ow + s] = out2[(b * oh * ow + s) * oc + o] + layer.bias[o];

    return {std::move(y), ConvTrace{std::move(cols), x.shape(), oh, ow}};
}

WeightGrads conv_backward(const Conv2D& layer, const Tensor& feedback, const ConvTrace& trace,
                          const Tensor& delta_y, bool need_input_delta) {
    const std::size_t batch = trace.input_shape[0];
    const std::size_t oc = layer.out_channels, oh = trace.out_h, ow = trace.out_w;
    if (delta_y.shape() != Shape{batch, oc, oh, ow} || feedback.shape() != layer.weight.shape()) {
        throw dimension_error("conv_backward: delta " + to_string(delta_y.shape()) + " or feedback " +
                              to_string(feedback.shape()) + " does not match layer output [" +
                              std::to_string(batch) + "x" + std::to_string(oc) + "x" + std::to_string(oh) + "x" +
                              std::to_string(ow) + "]");
    }
    const std::size_t spatial = oh * ow;
    Tensor dy2({batch * spatial, oc}, uninitialized);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t o = 0; o < oc; ++o)
            for (std::size_t s = 0; s < spatial; ++s)
                dy2[(b * spatial + s) * oc + o] = delta_y[(b * oc + o) * spatial + s];

    WeightGrads g;
    g.weight = matmul_tn(trace.columns, dy2);
    g.bias = column_sums(dy2);
    if (!need_input_delta) return g;

    const Tensor dcols = matmul_nt(dy2, feedback); // [rows × fan_in]
    const auto& geo = layer.geometry;
    const std::size_t channels = trace.input_shape[1], h = trace.input_shape[2], w = trace.input_shape[3];
    const std::size_t k = layer.fan_in();
    Tensor dx(trace.input_shape, 0.0);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                const double* row = dcols.raw() + ((b * oh + oy) * ow + ox) * k;
                const KernelSpan kx = kernel_span(ox, geo.stride, geo.pad_left, geo.kernel_w, w);
                for (std::size_t c = 0; c < channels; ++c) {
                    double* plane = dx.raw() + (b * channels + c) * h * w;
                    for (std::size_t ky = 0; ky < geo.kernel_h; ++ky, row += geo.kernel_w) {
                        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * geo.stride + ky) -
                                                  static_cast<std::ptrdiff_t>(geo.pad_top);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                        double* dst = plane + iy * static_cast<std::ptrdiff_t>(w) + kx.offset;
                        for (std::size_t i = kx.begin; i < kx.end; ++i) dst[i] += row[i];
                    }
                }
            }
        }
    }
    g.input_delta = std::move(dx);
    return g;
}

// ---------------------------------------------------------------------------
// Pooling

Forward<PoolTrace> pool_forward(const Pool& layer, const Tensor& x) {
    require_rank4(x, "pool_forward");
    const auto& g = layer.geometry;
    const std::size_t batch = x.dim(0), channels = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = g.out_h(h), ow = g.out_w(w);
    Tensor y({batch, channels, oh, ow}, uninitialized);
    PoolTrace trace;
    trace.input_shape = x.shape();
    if (layer.kind == PoolKind::max) trace.argmax.assign(y.size(), kNoIndex);
    const double window = static_cast<double>(g.kernel_h * g.kernel_w);

    for (std::size_t plane = 0; plane < batch * channels; ++plane) {
        const double* src = x.raw() + plane * h * w;
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                const std::size_t out_index = (plane * oh + oy) * ow + ox;
                double best = -std::numeric_limits<double>::infinity();
                std::size_t best_index = kNoIndex;
                double sum = 0.0;
                for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                              static_cast<std::ptrdiff_t>(g.pad_top);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                                  static_cast<std::ptrdiff_t>(g.pad_left);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                        const std::size_t idx = static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix);
                        const double v = src[idx];
                        sum += v;
                        if (best_index == kNoIndex || v > best) {
                            best = v;
                            best_index = idx;
                        }
                    }
                }
                if (layer.kind == PoolKind::max) {
                    y[out_index] = best_index == kNoIndex ? 0.0 : best;
                    trace.argmax[out_index] = best_index == kNoIndex ? kNoIndex : plane * h * w + best_index;
                } else {
                    y[out_index] = sum / window;
                }
            }
        }
    }
    return {std::move(y), std::move(trace)};
}

Tensor pool_backward(const Pool& layer, const PoolTrace& trace, const Tensor& delta_y) {
    const auto& g = layer.geometry;
    const std::size_t batch = trace.input_shape[0], channels = trace.input_shape[1];
    const std::size_t h = trace.input_shape[2], w = trace.input_shape[3];
    const std::size_t oh = g.out_h(h), ow = g.out_w(w);
    if (delta_y.shape() != Shape{batch, channels, oh, ow}) {
        throw dimension_error("pool_backward: delta " + to_string(delta_y.shape()) + " does not match input " +
                              to_string(trace.input_shape));
    }
    Tensor dx(trace.input_shape, 0.0);
    if (layer.kind == PoolKind::max) {
        for (std::size_t i = 0; i < delta_y.size(); ++i)
            if (trace.argmax[i] != kNoIndex) dx[trace.argmax[i]] += delta_y[i];
        return dx;
    }
    const double window = static_cast<double>(g.kernel_h * g.kernel_w);
    for (std::size_t plane = 0; plane < batch * channels; ++plane) {
        double* dst = dx.raw() + plane * h * w;
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                const double d = delta_y[(plane * oh + oy) * ow + ox] / window;
                for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                              static_cast<std::ptrdiff_t>(g.pad_top);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                                  static_cast<std::ptrdiff_t>(g.pad_left);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                        dst[static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)] += d;
                    }
                }
            }
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------
// ReLU

Forward<ReluTrace> relu_forward(const Tensor& x) { return {ewise_map(x, Map::relu), ReluTrace{x}}; }

Tensor relu_backward(const ReluTrace& trace, const Tensor& delta_y) {
    if (delta_y.shape() != trace.pre_activation.shape()) {
        throw dimension_error("relu_backward: delta " + to_string(delta_y.shape()) + " vs input " +
                              to_string(trace.pre_activation.shape()));
    }
    Tensor dx = delta_y;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= relu_deriv(trace.pre_activation[i]);
    return dx;
}

// ---------------------------------------------------------------------------
// Batch normalization

Forward<BatchNormTrace> batchnorm_forward(const BatchNorm& layer, const Tensor& x, Mode mode) {
    const auto& st = layer.state;
    const FeatureView v = feature_view(x, layer.features());
    const std::size_t count = v.batch * v.spatial;
    BatchNormTrace trace;
    Tensor mean({v.features}), std_dev({v.features});

    if (mode == Mode::train) {
        if (v.batch < 2) throw std::invalid_argument("batchnorm: train mode needs a batch of at least 2 samples");
        for (std::size_t f = 0; f < v.features; ++f) {
            double sum = 0.0;
            for (std::size_t b = 0; b < v.batch; ++b) {
                const double* p = x.raw() + (b * v.features + f) * v.spatial;
                for (std::size_t s = 0; s < v.spatial; ++s) sum += p[s];
            }
            const double m = sum / static_cast<double>(count);
            double sq = 0.0;
            for (std::size_t b = 0; b < v.batch; ++b) {
                const double* p = x.raw() + (b * v.features + f) * v.spatial;
                for (std::size_t s = 0; s < v.spatial; ++s) sq += (p[s] - m) * (p[s] - m);
            }
            mean[f] = m;
            std_dev[f] = std::sqrt(sq / static_cast<double>(count));
        }
    } else {
        mean = st.running_mean;
        std_dev = st.running_std;
    }

    Tensor xhat(x.shape(), uninitialized);
    Tensor y(x.shape(), uninitialized);
    for (std::size_t b = 0; b < v.batch; ++b) {
        for (std::size_t f = 0; f < v.features; ++f) {
            const double denom = std_dev[f] + st.epsilon;
            const double gamma = st.gamma ? (*st.gamma)[f] : 1.0;
            const double beta = st.beta ? (*st.beta)[f] : 0.0;
            const std::size_t base = (b * v.features + f) * v.spatial;
            for (std::size_t s = 0; s < v.spatial; ++s) {
                const double n = (x[base + s] - mean[f]) / denom;
                xhat[base + s] = n;
                y[base + s] = st.gamma ? gamma * n + beta : n;
            }
        }
    }
    trace.normalized = std::move(xhat);
    if (mode == Mode::train) {
        trace.mean = std::move(mean);
        trace.std = std::move(std_dev);
    }
    return {std::move(y), std::move(trace)};
}

BatchNormGrads batchnorm_backward(const BatchNorm& layer, const BatchNormTrace& trace, const Tensor& delta_y) {
    const auto& st = layer.state;
    if (trace.std.empty()) throw std::invalid_argument("batchnorm_backward: trace is not from a train-mode forward");
    if (delta_y.shape() != trace.normalized.shape()) {
        throw dimension_error("batchnorm_backward: delta " + to_string(delta_y.shape()) + " vs input " +
                              to_string(trace.normalized.shape()));
    }
    const FeatureView v = feature_view(delta_y, layer.features());
    const double count = static_cast<double>(v.batch * v.spatial);
    const Tensor& xhat = trace.normalized;

    BatchNormGrads out;
    out.input_delta = Tensor(delta_y.shape(), uninitialized);
    if (st.gamma) {
        out.gamma = Tensor({v.features});
        out.beta = Tensor({v.features});
    }
    for (std::size_t f = 0; f < v.features; ++f) {
        const double gamma = st.gamma ? (*st.gamma)[f] : 1.0;
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t b = 0; b < v.batch; ++b) {
            const std::size_t base = (b * v.features + f) * v.spatial;
            for (std::size_t s = 0; s < v.spatial; ++s) {
                sum_dy += delta_y[base + s];
                sum_dy_xhat += delta_y[base + s] * xhat[base + s];
            }
        }
        if (st.gamma) {
            (*out.gamma)[f] = sum_dy_xhat;
            (*out.beta)[f] = sum_dy;
        }
        // With g = γ·dy, s = σ + ε:
        //   dx = (g - mean(g)) / s - x̂ · mean(g·x̂) / σ
        // The second term vanishes for a constant feature (σ = 0, x̂ = 0).
        const double sigma = trace.std[f];
        const double s = sigma + st.epsilon;
        const double mean_g = gamma * sum_dy / count;
        const double mean_gx = gamma * sum_dy_xhat / count;
        const double proj = sigma > 0.0 ? mean_gx / sigma : 0.0;
        for (std::size_t b = 0; b < v.batch; ++b) {
            const std::size_t base = (b * v.features + f) * v.spatial;
            for (std::size_t s_i = 0; s_i < v.spatial; ++s_i) {
                const double g = gamma * delta_y[base + s_i];
                out.input_delta[base + s_i] = (g - mean_g) / s - xhat[base + s_i] * proj;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

LossResult softmax_xent(const Tensor& logits, std::span<const std::uint32_t> labels) {
    if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
        throw dimension_error("softmax_xent: logits " + to_string(logits.shape()) + " vs " +
                              std::to_string(labels.size()) + " labels");
    }
    const std::size_t batch = logits.dim(0), classes = logits.dim(1);
    LossResult r;
    r.delta = Tensor(logits.shape(), uninitialized);
    for (std::size_t b = 0; b < batch; ++b) {
        if (labels[b] >= classes) {
            throw std::out_of_range("softmax_xent: label " + std::to_string(labels[b]) + " outside [0, " +
                                    std::to_string(classes) + ")");
        }
        const double* row = logits.raw() + b * classes;
        double* d = r.delta.raw() + b * classes;
        double mx = row[0];
        for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
        double z = 0.0;
        for (std::size_t c = 0; c < classes; ++c) {
            d[c] = std::exp(row[c] - mx);
            z += d[c];
        }
        for (std::size_t c = 0; c < classes; ++c) d[c] /= z;
        r.loss += std::log(z) + mx - row[labels[b]];
        d[labels[b]] -= 1.0;
    }
    return r;
}

} // namespace asymbp
