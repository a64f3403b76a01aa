#pragma once

#include "asymbp/network.hpp"
#include "asymbp/rng.hpp"
#include "asymbp/tensor.hpp"

#include <cstring>
#include <random>

namespace testutil {

inline asymbp::Tensor randn(asymbp::Shape shape, std::uint64_t seed, double sd = 1.0) {
    asymbp::Tensor t(std::move(shape));
    asymbp::Rng rng = asymbp::make_stream(seed, asymbp::Stream::data, 4242);
    std::normal_distribution<double> g(0.0, sd);
    for (auto& v : t.data()) v = g(rng);
    return t;
}

inline bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

inline asymbp::NetworkSpec spec(asymbp::Shape input, const char* layers, bool bn = false, bool learnable = false) {
    asymbp::NetworkSpec s;
    s.input = std::move(input);
    s.layers = asymbp::parse_layers(layers);
    s.batch_norm = bn;
    s.bn_learnable = learnable;
    return s;
}

} // namespace testutil
