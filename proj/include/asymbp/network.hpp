#ifndef ASYMBP_NETWORK_HPP
#define ASYMBP_NETWORK_HPP

#include "asymbp/layers.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace asymbp {

using Layer = std::variant<Dense, Conv2D, Pool, Relu, BatchNorm>;
using LayerTrace = std::variant<DenseTrace, ConvTrace, PoolTrace, ReluTrace, BatchNormTrace>;

/// One cache entry per layer, filled by a train-mode or test-mode forward.
struct ForwardTrace {
    std::vector<LayerTrace> entries;
};

enum class ParamRole { weight, bias, gamma, beta };

/// A trainable tensor inside a network.
struct ParamRef {
    std::size_t layer;
    ParamRole role;
    Tensor* value;
    bool frozen;
};

struct BackwardResult {
    Tensor input_delta;        // empty unless requested
    std::vector<Tensor> grads; // aligned with Network::parameters(); empty where skipped
};

// ---------------------------------------------------------------------------
// Architecture description

enum class LayerKind { dense, conv, max_pool, avg_pool };

struct LayerSpec {
    LayerKind kind = LayerKind::dense;
    std::size_t units = 0; // output units (dense) or feature maps (conv)
    ConvGeometry geometry;

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Ordered weighted and pooling stages. Building a network inserts
/// [BatchNorm] + ReLU after every weighted stage except the last one.
struct NetworkSpec {
    Shape input;                   // per-sample shape: {d} or {c, h, w}
    std::vector<LayerSpec> layers;
    bool batch_norm = false;
    bool bn_learnable = false;
    double bn_epsilon = 1e-8;
};

/// Parses a whitespace/comma separated stage list, e.g.
///   "conv5x5x20/1 maxpool2x2/2 conv5x5x50/1 maxpool2x2/2 fc500 fc10"
/// Conv and pool stages accept padding suffixes "p2" (all sides) or
/// "p0,0,1,1" (top,left,bottom,right).
std::vector<LayerSpec> parse_layers(std::string_view text);
std::string format_layers(const std::vector<LayerSpec>& layers);

/// The MNIST network: conv 5x5x20/1, max-pool 2x2/2, conv 5x5x50/1,
/// max-pool 2x2/2, fc 500, fc 10 over 1x28x28 inputs.
NetworkSpec mnist_architecture();
/// Fully connected 512-256-classes network over 1845 inputs.
NetworkSpec timit_architecture(std::size_t classes = 80);

class Network {
public:
    Network() = default;
    Network(Shape input_shape, std::vector<Layer> layers);

    const Shape& input_shape() const noexcept { return input_shape_; }
    std::size_t output_size() const noexcept { return output_size_; }

    std::vector<Layer>& layers() noexcept { return layers_; }
    const std::vector<Layer>& layers() const noexcept { return layers_; }

    /// Indices of Dense and Conv2D layers, bottom to top.
    std::vector<std::size_t> weighted_layers() const;
    Tensor& weight(std::size_t layer);
    Tensor& feedback(std::size_t layer);
    const Tensor& weight(std::size_t layer) const;
    const Tensor& feedback(std::size_t layer) const;
    std::size_t fan_in(std::size_t layer) const;
    void set_frozen(std::size_t layer, bool frozen);
    bool frozen(std::size_t layer) const;

    std::vector<ParamRef> parameters();
    std::size_t parameter_count() const;

    /// Sets V := W on every weighted layer.
    void make_symmetric();

    /// x is [batch × input_shape...]. With a trace, every layer's cache is kept.
    Tensor forward(const Tensor& x, Mode mode, ForwardTrace* trace = nullptr) const;

    /// Propagates output_delta down through the trace. Layers below the lowest
    /// trainable parameter are skipped unless need_input_delta is set.
    BackwardResult backward(const ForwardTrace& trace, const Tensor& output_delta,
                            bool need_input_delta = false) const;

private:
    Shape input_shape_;
    std::vector<Layer> layers_;
    std::size_t output_size_ = 0;
};

/// Builds a network with weights ~ N(0, 1/fan_in), zero biases, and V = W.
/// Weight draws come from one stream per weighted-layer ordinal, so the same
/// seed yields the same weights whether or not normalization layers are present.
Network build_network(const NetworkSpec& spec, std::uint64_t seed);

} // namespace asymbp

#endif // ASYMBP_NETWORK_HPP
