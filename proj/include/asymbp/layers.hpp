#ifndef ASYMBP_LAYERS_HPP
#define ASYMBP_LAYERS_HPP

// Layer kernels. Backward passes that propagate error to the layer input take
// the feedback matrix V explicitly: the input delta is formed with V wherever
// ordinary backpropagation would use W, while weight gradients always use the
// true cached inputs. All batch reductions are sums.

#include "asymbp/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace asymbp {

enum class Mode { train, test };

/// Kernel window, stride and zero padding shared by convolution and pooling.
struct ConvGeometry {
    std::size_t kernel_h = 1;
    std::size_t kernel_w = 1;
    std::size_t stride = 1;
    std::size_t pad_top = 0;
    std::size_t pad_left = 0;
    std::size_t pad_bottom = 0;
    std::size_t pad_right = 0;

    /// Output extent for an input extent; throws dimension_error when the
    /// window does not fit.
    std::size_t out_h(std::size_t in_h) const;
    std::size_t out_w(std::size_t in_w) const;

    friend bool operator==(const ConvGeometry&, const ConvGeometry&) = default;
};

/// Fully connected stage. weight is [in × out]; weight(i, j) links input i to
/// output j. Inputs of higher rank are flattened per sample.
struct Dense {
    Tensor weight;
    Tensor feedback;
    Tensor bias;
    bool frozen = false;

    std::size_t inputs() const { return weight.dim(0); }
    std::size_t outputs() const { return weight.dim(1); }
    std::size_t fan_in() const { return weight.dim(0); }
};

/// 2-D cross-correlation over [batch × channels × h × w]. weight is stored as
/// [in_channels·kernel_h·kernel_w × out_channels] with rows ordered
/// (channel, ky, kx), which is the im2col column order.
struct Conv2D {
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    ConvGeometry geometry;
    Tensor weight;
    Tensor feedback;
    Tensor bias;
    bool frozen = false;

    std::size_t fan_in() const { return in_channels * geometry.kernel_h * geometry.kernel_w; }
};

enum class PoolKind { max, average };

struct Pool {
    PoolKind kind = PoolKind::max;
    ConvGeometry geometry;
};

struct Relu {};

/// Normalization state. Statistics are per feature: per column for [batch × d]
/// inputs and per channel for [batch × c × h × w] inputs.
struct BatchNormState {
    Tensor running_mean;
    Tensor running_std;
    std::optional<Tensor> gamma;
    std::optional<Tensor> beta;
    double epsilon = 1e-8;
};

struct BatchNorm {
    BatchNormState state;
    bool frozen = false;

    bool learnable() const { return state.gamma.has_value(); }
    std::size_t features() const { return state.running_mean.size(); }
};

BatchNorm make_batch_norm(std::size_t features, bool learnable, double epsilon);

// ---------------------------------------------------------------------------
// Per-layer forward caches

struct DenseTrace {
    Tensor input; // flattened [batch × in]
    Shape input_shape;
};

struct ConvTrace {
    Tensor columns; // im2col matrix [batch·out_h·out_w × fan_in]
    Shape input_shape;
    std::size_t out_h = 0;
    std::size_t out_w = 0;
};

struct PoolTrace {
    std::vector<std::size_t> argmax; // flat input index per output element (max pooling)
    Shape input_shape;
};

struct ReluTrace {
    Tensor pre_activation;
};

struct BatchNormTrace {
    Tensor normalized; // x̂, same shape as the input
    Tensor mean;       // per-feature batch mean
    Tensor std;        // per-feature population standard deviation
};

template <class Trace>
struct Forward {
    Tensor output;
    Trace trace;
};

struct WeightGrads {
    Tensor input_delta; // empty when not requested
    Tensor weight;
    Tensor bias;
};

struct BatchNormGrads {
    Tensor input_delta;
    std::optional<Tensor> gamma;
    std::optional<Tensor> beta;
};

// ---------------------------------------------------------------------------

Forward<DenseTrace> fc_forward(const Dense& layer, const Tensor& x);
WeightGrads fc_backward(const Tensor& feedback, const DenseTrace& trace, const Tensor& delta_y,
                        bool need_input_delta = true);
inline WeightGrads fc_backward(const Dense& layer, const DenseTrace& trace, const Tensor& delta_y,
                               bool need_input_delta = true) {
    return fc_backward(layer.feedback, trace, delta_y, need_input_delta);
}

Forward<ConvTrace> conv_forward(const Conv2D& layer, const Tensor& x);
WeightGrads conv_backward(const Conv2D& layer, const Tensor& feedback, const ConvTrace& trace,
                          const Tensor& delta_y, bool need_input_delta = true);
inline WeightGrads conv_backward(const Conv2D& layer, const ConvTrace& trace, const Tensor& delta_y,
                                 bool need_input_delta = true) {
    return conv_backward(layer, layer.feedback, trace, delta_y, need_input_delta);
}

Forward<PoolTrace> pool_forward(const Pool& layer, const Tensor& x);
Tensor pool_backward(const Pool& layer, const PoolTrace& trace, const Tensor& delta_y);

Forward<ReluTrace> relu_forward(const Tensor& x);
Tensor relu_backward(const ReluTrace& trace, const Tensor& delta_y);

/// Train mode normalizes with batch statistics (requires batch ≥ 2); test mode
/// uses the running statistics and leaves the trace statistics empty.
Forward<BatchNormTrace> batchnorm_forward(const BatchNorm& layer, const Tensor& x, Mode mode);
BatchNormGrads batchnorm_backward(const BatchNorm& layer, const BatchNormTrace& trace, const Tensor& delta_y);

struct LossResult {
    double loss = 0.0; // summed over the batch
    Tensor delta;      // softmax - onehot, not divided by the batch size
};

LossResult softmax_xent(const Tensor& logits, std::span<const std::uint32_t> labels);

} // namespace asymbp

#endif // ASYMBP_LAYERS_HPP
