#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "fedsfr/rng.hpp"

namespace fedsfr {

/// Dense row-major tensor of 64-bit floats. Shape is a list of extents
/// (e.g. {C, H, W} for images, {d} for feature vectors).
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<std::size_t> s, std::vector<double> d);

    static Tensor zeros(std::vector<std::size_t> shape);
    static Tensor full(std::vector<std::size_t> shape, double value);

    std::size_t size() const { return data.size(); }

    /// Same data, different extents. Element count must be preserved.
    Tensor reshaped(std::vector<std::size_t> new_shape) const;

    bool all_finite() const;
};

std::size_t shape_numel(const std::vector<std::size_t>& shape);
bool same_shape(const Tensor& a, const Tensor& b);
std::string shape_str(const std::vector<std::size_t>& shape);

enum class LayerKind : std::uint8_t {
    Dense = 0,
    Conv2d = 1,
    TransposeConv2d = 2,
    Relu = 3,
    Sigmoid = 4,
};

/// One layer of a feed-forward net. Parameterized kinds (dense, conv2d,
/// transpose_conv2d) carry a weight and bias tensor; activation kinds
/// carry nothing.
struct LayerSpec {
    LayerKind kind = LayerKind::Relu;
    // dense
    int in_features = 0;
    int out_features = 0;
    // conv2d / transpose_conv2d
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 0;
    int stride = 1;
    int padding = 0;

    static LayerSpec dense(int in, int out);
    static LayerSpec conv2d(int in_ch, int out_ch, int kernel, int stride, int padding);
    static LayerSpec transpose_conv2d(int in_ch, int out_ch, int kernel, int stride, int padding);
    static LayerSpec relu() { return LayerSpec{LayerKind::Relu, 0, 0, 0, 0, 0, 1, 0}; }
    static LayerSpec sigmoid() { return LayerSpec{LayerKind::Sigmoid, 0, 0, 0, 0, 0, 1, 0}; }

    bool has_params() const;
    std::size_t weight_count() const;
    std::size_t bias_count() const;
    std::size_t param_count() const { return weight_count() + bias_count(); }
    std::vector<std::size_t> weight_shape() const;

    /// Output shape for a given input shape; validates compatibility.
    std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const;
};

/// The flat view of a network's parameters: one contiguous vector plus a
/// per-parameterized-layer (offset, length) table. Sparsification budgets
/// and wire formats are defined against this layout.
struct FlatParams {
    std::vector<double> values;
    std::vector<std::pair<std::size_t, std::size_t>> boundaries;

    std::size_t size() const { return values.size(); }
};

/// Activation record from a forward pass: activations[0] is the input,
/// activations[i+1] the output of layer i.
struct ForwardTape {
    std::vector<Tensor> activations;
};

struct BackwardResult {
    FlatParams param_grads;
    Tensor input_grad;
};

/// An ordered stack of layers with materialized parameters. The shape
/// chain is validated at construction.
class Network {
public:
    Network() = default;
    Network(std::vector<LayerSpec> layers, std::vector<std::size_t> input_shape);

    const std::vector<LayerSpec>& layers() const { return layers_; }
    const std::vector<std::size_t>& input_shape() const { return input_shape_; }
    const std::vector<std::size_t>& output_shape() const { return output_shape_; }
    std::size_t param_count() const { return param_count_; }

    /// Direct access to a layer's weight/bias (parameterized layers only).
    Tensor& weight(std::size_t layer);
    Tensor& bias(std::size_t layer);
    const Tensor& weight(std::size_t layer) const;
    const Tensor& bias(std::size_t layer) const;

    /// Kaiming-uniform-style fan-in init from the given stream.
    void init_params(RngStream& rng);

    FlatParams flatten() const;
    void load_flat(const FlatParams& flat);
    void load_values(const double* values, std::size_t n);

    /// Forward pass. If tape is non-null, records every activation needed
    /// by backward. Throws on shape mismatch or non-finite values.
    Tensor forward(const Tensor& input, ForwardTape* tape = nullptr) const;

    /// Reverse pass over a tape produced by this network's forward.
    BackwardResult backward(const ForwardTape& tape, const Tensor& output_grad) const;

private:
    std::vector<LayerSpec> layers_;
    std::vector<Tensor> weights_;  // empty tensor for activation layers
    std::vector<Tensor> biases_;
    std::vector<std::size_t> input_shape_;
    std::vector<std::size_t> output_shape_;
    std::size_t param_count_ = 0;
};

/// loss = mean((pred - target)^2), grad = d loss / d pred.
std::pair<double, Tensor> mse_loss(const Tensor& pred, const Tensor& target);

/// out = params - lr * grads. Plain SGD, no state.
FlatParams sgd_step(const FlatParams& params, const FlatParams& grads, double lr);

/// Central-difference gradient of loss(net) w.r.t. every parameter.
FlatParams finite_diff_gradient(const Network& net,
                                const std::function<double(const Network&)>& loss,
                                double step = 1e-5);

/// Central differences on a subset of coordinates of an arbitrary flat
/// parameter vector (used for large models where the full sweep is too slow).
std::vector<double> finite_diff_at(const FlatParams& base,
                                   const std::function<double(const FlatParams&)>& loss,
                                   const std::vector<std::size_t>& coords, double step = 1e-5);

}  // namespace fedsfr
