#include "fedsfr/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace fedsfr {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void check_finite(const Tensor& t, const char* where) {
    if (!t.all_finite()) {
        throw std::runtime_error(std::string("non-finite value produced in ") + where);
    }
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != data.size()) {
        fail("tensor shape " + shape_str(shape) + " does not match data length " +
             std::to_string(data.size()));
    }
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
    std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
    std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::reshaped(std::vector<std::size_t> new_shape) const {
    if (shape_numel(new_shape) != data.size()) {
        fail("reshape " + shape_str(shape) + " -> " + shape_str(new_shape) +
             " changes element count");
    }
    return Tensor(std::move(new_shape), data);
}

bool Tensor::all_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return shape.empty() ? 0 : n;
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream ss;
    ss << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) ss << "x";
        ss << shape[i];
    }
    ss << ")";
    return ss.str();
}

LayerSpec LayerSpec::dense(int in, int out) {
    if (in <= 0 || out <= 0) fail("dense layer needs positive in/out features");
    LayerSpec s;
    s.kind = LayerKind::Dense;
    s.in_features = in;
    s.out_features = out;
    return s;
}

LayerSpec LayerSpec::conv2d(int in_ch, int out_ch, int kernel, int stride, int padding) {
    if (in_ch <= 0 || out_ch <= 0 || kernel <= 0 || stride <= 0 || padding < 0) {
        fail("conv2d layer has malformed dimensions");
    }
    LayerSpec s;
    s.kind = LayerKind::Conv2d;
    s.in_channels = in_ch;
    s.out_channels = out_ch;
    s.kernel = kernel;
    s.stride = stride;
    s.padding = padding;
    return s;
}

LayerSpec LayerSpec::transpose_conv2d(int in_ch, int out_ch, int kernel, int stride, int padding) {
    if (in_ch <= 0 || out_ch <= 0 || kernel <= 0 || stride <= 0 || padding < 0) {
        fail("transpose_conv2d layer has malformed dimensions");
    }
    LayerSpec s;
    s.kind = LayerKind::TransposeConv2d;
    s.in_channels = in_ch;
    s.out_channels = out_ch;
    s.kernel = kernel;
    s.stride = stride;
    s.padding = padding;
    return s;
}

bool LayerSpec::has_params() const {
    return kind == LayerKind::Dense || kind == LayerKind::Conv2d ||
           kind == LayerKind::TransposeConv2d;
}

std::size_t LayerSpec::weight_count() const {
    switch (kind) {
        case LayerKind::Dense:
            return static_cast<std::size_t>(in_features) * out_features;
        case LayerKind::Conv2d:
        case LayerKind::TransposeConv2d:
            return static_cast<std::size_t>(in_channels) * out_channels * kernel * kernel;
        default:
            return 0;
    }
}

std::size_t LayerSpec::bias_count() const {
    switch (kind) {
        case LayerKind::Dense:
            return static_cast<std::size_t>(out_features);
        case LayerKind::Conv2d:
        case LayerKind::TransposeConv2d:
            return static_cast<std::size_t>(out_channels);
        default:
            return 0;
    }
}

std::vector<std::size_t> LayerSpec::weight_shape() const {
    switch (kind) {
        case LayerKind::Dense:
            return {static_cast<std::size_t>(out_features), static_cast<std::size_t>(in_features)};
        case LayerKind::Conv2d:
            // (out_ch, in_ch, k, k)
            return {static_cast<std::size_t>(out_channels), static_cast<std::size_t>(in_channels),
                    static_cast<std::size_t>(kernel), static_cast<std::size_t>(kernel)};
        case LayerKind::TransposeConv2d:
            // (in_ch, out_ch, k, k)
            return {static_cast<std::size_t>(in_channels), static_cast<std::size_t>(out_channels),
                    static_cast<std::size_t>(kernel), static_cast<std::size_t>(kernel)};
        default:
            return {};
    }
}

std::vector<std::size_t> LayerSpec::output_shape(const std::vector<std::size_t>& in) const {
    switch (kind) {
        case LayerKind::Dense: {
            if (shape_numel(in) != static_cast<std::size_t>(in_features)) {
                fail("dense layer expects " + std::to_string(in_features) + " inputs, got shape " +
                     shape_str(in));
            }
            return {static_cast<std::size_t>(out_features)};
        }
        case LayerKind::Conv2d: {
            if (in.size() != 3 || in[0] != static_cast<std::size_t>(in_channels)) {
                fail("conv2d expects (C=" + std::to_string(in_channels) + ",H,W), got " +
                     shape_str(in));
            }
            long long h = static_cast<long long>(in[1]);
            long long w = static_cast<long long>(in[2]);
            long long ho = (h + 2LL * padding - kernel) / stride + 1;
            long long wo = (w + 2LL * padding - kernel) / stride + 1;
            if (h + 2LL * padding < kernel || w + 2LL * padding < kernel) {
                fail("conv2d kernel exceeds padded input " + shape_str(in));
            }
            return {static_cast<std::size_t>(out_channels), static_cast<std::size_t>(ho),
                    static_cast<std::size_t>(wo)};
        }
        case LayerKind::TransposeConv2d: {
            if (in.size() != 3 || in[0] != static_cast<std::size_t>(in_channels)) {
                fail("transpose_conv2d expects (C=" + std::to_string(in_channels) + ",H,W), got " +
                     shape_str(in));
            }
            long long h = static_cast<long long>(in[1]);
            long long w = static_cast<long long>(in[2]);
            long long ho = (h - 1) * stride - 2LL * padding + kernel;
            long long wo = (w - 1) * stride - 2LL * padding + kernel;
            if (ho <= 0 || wo <= 0) {
                fail("transpose_conv2d output collapses for input " + shape_str(in));
            }
            return {static_cast<std::size_t>(out_channels), static_cast<std::size_t>(ho),
                    static_cast<std::size_t>(wo)};
        }
        case LayerKind::Relu:
        case LayerKind::Sigmoid:
            return in;
    }
    fail("unknown layer kind");
}

Network::Network(std::vector<LayerSpec> layers, std::vector<std::size_t> input_shape)
    : layers_(std::move(layers)), input_shape_(std::move(input_shape)) {
    if (layers_.empty()) fail("network needs at least one layer");
    std::vector<std::size_t> shape = input_shape_;
    weights_.resize(layers_.size());
    biases_.resize(layers_.size());
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        shape = layers_[i].output_shape(shape);
        if (layers_[i].has_params()) {
            weights_[i] = Tensor::zeros(layers_[i].weight_shape());
            biases_[i] = Tensor::zeros({layers_[i].bias_count()});
            param_count_ += layers_[i].param_count();
        }
    }
    output_shape_ = shape;
}

Tensor& Network::weight(std::size_t layer) {
    if (layer >= layers_.size() || !layers_[layer].has_params()) fail("layer has no weights");
    return weights_[layer];
}

Tensor& Network::bias(std::size_t layer) {
    if (layer >= layers_.size() || !layers_[layer].has_params()) fail("layer has no bias");
    return biases_[layer];
}

const Tensor& Network::weight(std::size_t layer) const {
    return const_cast<Network*>(this)->weight(layer);
}

const Tensor& Network::bias(std::size_t layer) const {
    return const_cast<Network*>(this)->bias(layer);
}

void Network::init_params(RngStream& rng) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const LayerSpec& spec = layers_[i];
        if (!spec.has_params()) continue;
        double fan_in = 0;
        switch (spec.kind) {
            case LayerKind::Dense:
                fan_in = spec.in_features;
                break;
            case LayerKind::Conv2d:
            case LayerKind::TransposeConv2d:
                fan_in = static_cast<double>(spec.in_channels) * spec.kernel * spec.kernel;
                break;
            default:
                break;
        }
        double wb = std::sqrt(6.0 / fan_in);
        for (double& v : weights_[i].data) v = (2.0 * rng.uniform() - 1.0) * wb;
        double bb = 1.0 / std::sqrt(fan_in);
        for (double& v : biases_[i].data) v = (2.0 * rng.uniform() - 1.0) * bb;
    }
}

FlatParams Network::flatten() const {
    FlatParams flat;
    flat.values.reserve(param_count_);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (!layers_[i].has_params()) continue;
        std::size_t offset = flat.values.size();
        flat.values.insert(flat.values.end(), weights_[i].data.begin(), weights_[i].data.end());
        flat.values.insert(flat.values.end(), biases_[i].data.begin(), biases_[i].data.end());
        flat.boundaries.emplace_back(offset, flat.values.size() - offset);
    }
    return flat;
}

void Network::load_flat(const FlatParams& flat) { load_values(flat.values.data(), flat.size()); }

void Network::load_values(const double* values, std::size_t n) {
    if (n != param_count_) {
        fail("parameter vector length " + std::to_string(n) + " does not match network (" +
             std::to_string(param_count_) + ")");
    }
    std::size_t pos = 0;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (!layers_[i].has_params()) continue;
        for (double& v : weights_[i].data) v = values[pos++];
        for (double& v : biases_[i].data) v = values[pos++];
    }
}

namespace {

// Forward kernels. Loop order is fixed ascending everywhere so reductions
// are run-to-run deterministic.

Tensor dense_forward(const LayerSpec& spec, const Tensor& w, const Tensor& b, const Tensor& x) {
    std::size_t in = static_cast<std::size_t>(spec.in_features);
    std::size_t out = static_cast<std::size_t>(spec.out_features);
    Tensor y = Tensor::zeros({out});
    for (std::size_t o = 0; o < out; ++o) {
        double acc = b.data[o];
        const double* wrow = &w.data[o * in];
        for (std::size_t i = 0; i < in; ++i) acc += wrow[i] * x.data[i];
        y.data[o] = acc;
    }
    return y;
}

void dense_backward(const LayerSpec& spec, const Tensor& w, const Tensor& x, const Tensor& dy,
                    double* dw, double* db, Tensor& dx) {
    std::size_t in = static_cast<std::size_t>(spec.in_features);
    std::size_t out = static_cast<std::size_t>(spec.out_features);
    for (std::size_t o = 0; o < out; ++o) {
        double g = dy.data[o];
        const double* wrow = &w.data[o * in];
        double* dwrow = &dw[o * in];
        for (std::size_t i = 0; i < in; ++i) {
            dwrow[i] += g * x.data[i];
            dx.data[i] += wrow[i] * g;
        }
        db[o] += g;
    }
}

Tensor conv2d_forward(const LayerSpec& spec, const Tensor& w, const Tensor& b, const Tensor& x) {
    std::size_t ic = static_cast<std::size_t>(spec.in_channels);
    std::size_t oc = static_cast<std::size_t>(spec.out_channels);
    long long h = static_cast<long long>(x.shape[1]);
    long long ww = static_cast<long long>(x.shape[2]);
    long long k = spec.kernel, s = spec.stride, p = spec.padding;
    long long ho = (h + 2 * p - k) / s + 1;
    long long wo = (ww + 2 * p - k) / s + 1;
    Tensor y = Tensor::zeros({oc, static_cast<std::size_t>(ho), static_cast<std::size_t>(wo)});
    for (std::size_t co = 0; co < oc; ++co) {
        for (long long oy = 0; oy < ho; ++oy) {
            for (long long ox = 0; ox < wo; ++ox) {
                double acc = b.data[co];
                for (std::size_t ci = 0; ci < ic; ++ci) {
                    const double* wbase = &w.data[((co * ic) + ci) * k * k];
                    const double* xbase = &x.data[ci * h * ww];
                    for (long long ky = 0; ky < k; ++ky) {
                        long long iy = oy * s + ky - p;
                        if (iy < 0 || iy >= h) continue;
                        for (long long kx = 0; kx < k; ++kx) {
                            long long ix = ox * s + kx - p;
                            if (ix < 0 || ix >= ww) continue;
                            acc += wbase[ky * k + kx] * xbase[iy * ww + ix];
                        }
                    }
                }
                y.data[(co * ho + oy) * wo + ox] = acc;
            }
        }
    }
    return y;
}

void conv2d_backward(const LayerSpec& spec, const Tensor& w, const Tensor& x, const Tensor& dy,
                     double* dw, double* db, Tensor& dx) {
    std::size_t ic = static_cast<std::size_t>(spec.in_channels);
    std::size_t oc = static_cast<std::size_t>(spec.out_channels);
    long long h = static_cast<long long>(x.shape[1]);
    long long ww = static_cast<long long>(x.shape[2]);
    long long k = spec.kernel, s = spec.stride, p = spec.padding;
    long long ho = static_cast<long long>(dy.shape[1]);
    long long wo = static_cast<long long>(dy.shape[2]);
    for (std::size_t co = 0; co < oc; ++co) {
        for (long long oy = 0; oy < ho; ++oy) {
            for (long long ox = 0; ox < wo; ++ox) {
                double g = dy.data[(co * ho + oy) * wo + ox];
                db[co] += g;
                for (std::size_t ci = 0; ci < ic; ++ci) {
                    const double* wbase = &w.data[((co * ic) + ci) * k * k];
                    double* dwbase = &dw[((co * ic) + ci) * k * k];
                    const double* xbase = &x.data[ci * h * ww];
                    double* dxbase = &dx.data[ci * h * ww];
                    for (long long ky = 0; ky < k; ++ky) {
                        long long iy = oy * s + ky - p;
                        if (iy < 0 || iy >= h) continue;
                        for (long long kx = 0; kx < k; ++kx) {
                            long long ix = ox * s + kx - p;
                            if (ix < 0 || ix >= ww) continue;
                            dwbase[ky * k + kx] += g * xbase[iy * ww + ix];
                            dxbase[iy * ww + ix] += wbase[ky * k + kx] * g;
                        }
                    }
                }
            }
        }
    }
}

Tensor tconv2d_forward(const LayerSpec& spec, const Tensor& w, const Tensor& b, const Tensor& x) {
    std::size_t ic = static_cast<std::size_t>(spec.in_channels);
    std::size_t oc = static_cast<std::size_t>(spec.out_channels);
    long long h = static_cast<long long>(x.shape[1]);
    long long ww = static_cast<long long>(x.shape[2]);
    long long k = spec.kernel, s = spec.stride, p = spec.padding;
    long long ho = (h - 1) * s - 2 * p + k;
    long long wo = (ww - 1) * s - 2 * p + k;
    Tensor y = Tensor::zeros({oc, static_cast<std::size_t>(ho), static_cast<std::size_t>(wo)});
    for (std::size_t co = 0; co < oc; ++co) {
        double bv = b.data[co];
        double* ybase = &y.data[co * ho * wo];
        for (long long i = 0; i < ho * wo; ++i) ybase[i] = bv;
    }
    for (std::size_t ci = 0; ci < ic; ++ci) {
        const double* xbase = &x.data[ci * h * ww];
        for (long long iy = 0; iy < h; ++iy) {
            for (long long ix = 0; ix < ww; ++ix) {
                double v = xbase[iy * ww + ix];
                for (std::size_t co = 0; co < oc; ++co) {
                    const double* wbase = &w.data[((ci * oc) + co) * k * k];
                    double* ybase = &y.data[co * ho * wo];
                    for (long long ky = 0; ky < k; ++ky) {
                        long long oy = iy * s + ky - p;
                        if (oy < 0 || oy >= ho) continue;
                        for (long long kx = 0; kx < k; ++kx) {
                            long long ox = ix * s + kx - p;
                            if (ox < 0 || ox >= wo) continue;
                            ybase[oy * wo + ox] += wbase[ky * k + kx] * v;
                        }
                    }
                }
            }
        }
    }
    return y;
}

void tconv2d_backward(const LayerSpec& spec, const Tensor& w, const Tensor& x, const Tensor& dy,
                      double* dw, double* db, Tensor& dx) {
    std::size_t ic = static_cast<std::size_t>(spec.in_channels);
    std::size_t oc = static_cast<std::size_t>(spec.out_channels);
    long long h = static_cast<long long>(x.shape[1]);
    long long ww = static_cast<long long>(x.shape[2]);
    long long k = spec.kernel, s = spec.stride, p = spec.padding;
    long long ho = static_cast<long long>(dy.shape[1]);
    long long wo = static_cast<long long>(dy.shape[2]);
    for (std::size_t co = 0; co < oc; ++co) {
        const double* dybase = &dy.data[co * ho * wo];
        for (long long i = 0; i < ho * wo; ++i) db[co] += dybase[i];
    }
    for (std::size_t ci = 0; ci < ic; ++ci) {
        const double* xbase = &x.data[ci * h * ww];
        double* dxbase = &dx.data[ci * h * ww];
        for (long long iy = 0; iy < h; ++iy) {
            for (long long ix = 0; ix < ww; ++ix) {
                double xv = xbase[iy * ww + ix];
                double acc = 0.0;
                for (std::size_t co = 0; co < oc; ++co) {
                    const double* wbase = &w.data[((ci * oc) + co) * k * k];
                    double* dwbase = &dw[((ci * oc) + co) * k * k];
                    const double* dybase = &dy.data[co * ho * wo];
                    for (long long ky = 0; ky < k; ++ky) {
                        long long oy = iy * s + ky - p;
                        if (oy < 0 || oy >= ho) continue;
                        for (long long kx = 0; kx < k; ++kx) {
                            long long ox = ix * s + kx - p;
                            if (ox < 0 || ox >= wo) continue;
                            double g = dybase[oy * wo + ox];
                            dwbase[ky * k + kx] += xv * g;
                            acc += wbase[ky * k + kx] * g;
                        }
                    }
                }
                dxbase[iy * ww + ix] += acc;
            }
        }
    }
}

}  // namespace

Tensor Network::forward(const Tensor& input, ForwardTape* tape) const {
    if (input.shape != input_shape_) {
        // A flat vector with the right element count is accepted; conv stacks
        // receive channel-major features back from the wire as plain vectors.
        if (shape_numel(input.shape) != shape_numel(input_shape_)) {
            fail("network input shape " + shape_str(input.shape) + ", expected " +
                 shape_str(input_shape_));
        }
    }
    Tensor cur = input.shape == input_shape_ ? input : input.reshaped(input_shape_);
    if (tape) {
        tape->activations.clear();
        tape->activations.push_back(cur);
    }
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const LayerSpec& spec = layers_[i];
        Tensor next;
        switch (spec.kind) {
            case LayerKind::Dense:
                next = dense_forward(spec, weights_[i], biases_[i],
                                     cur.shape.size() == 1
                                         ? cur
                                         : cur.reshaped({shape_numel(cur.shape)}));
                break;
            case LayerKind::Conv2d:
                next = conv2d_forward(spec, weights_[i], biases_[i], cur);
                break;
            case LayerKind::TransposeConv2d:
                next = tconv2d_forward(spec, weights_[i], biases_[i], cur);
                break;
            case LayerKind::Relu: {
                next = cur;
                for (double& v : next.data) v = v > 0.0 ? v : 0.0;
                break;
            }
            case LayerKind::Sigmoid: {
                next = cur;
                for (double& v : next.data) v = 1.0 / (1.0 + std::exp(-v));
                break;
            }
        }
        check_finite(next, "forward");
        if (tape) tape->activations.push_back(next);
        cur = std::move(next);
    }
    return cur;
}

BackwardResult Network::backward(const ForwardTape& tape, const Tensor& output_grad) const {
    if (tape.activations.size() != layers_.size() + 1) {
        fail("tape does not match network (got " + std::to_string(tape.activations.size()) +
             " records for " + std::to_string(layers_.size()) + " layers)");
    }
    if (shape_numel(output_grad.shape) != shape_numel(output_shape_)) {
        fail("output_grad shape " + shape_str(output_grad.shape) + ", expected " +
             shape_str(output_shape_));
    }

    FlatParams grads;
    grads.values.assign(param_count_, 0.0);
    std::size_t offset = 0;
    std::vector<std::size_t> layer_offsets(layers_.size(), 0);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (!layers_[i].has_params()) continue;
        layer_offsets[i] = offset;
        grads.boundaries.emplace_back(offset, layers_[i].param_count());
        offset += layers_[i].param_count();
    }

    Tensor dcur = output_grad.shape == output_shape_ ? output_grad
                                                     : output_grad.reshaped(output_shape_);
    for (std::size_t idx = layers_.size(); idx-- > 0;) {
        const LayerSpec& spec = layers_[idx];
        const Tensor& x = tape.activations[idx];
        const Tensor& y = tape.activations[idx + 1];
        Tensor dx = Tensor::zeros(x.shape);
        switch (spec.kind) {
            case LayerKind::Dense: {
                double* dw = &grads.values[layer_offsets[idx]];
                double* db = dw + spec.weight_count();
                Tensor xin = x.shape.size() == 1 ? x : x.reshaped({shape_numel(x.shape)});
                Tensor dflat = Tensor::zeros(xin.shape);
                dense_backward(spec, weights_[idx], xin, dcur, dw, db, dflat);
                dx = dflat.reshaped(x.shape);
                break;
            }
            case LayerKind::Conv2d: {
                double* dw = &grads.values[layer_offsets[idx]];
                double* db = dw + spec.weight_count();
                conv2d_backward(spec, weights_[idx], x, dcur, dw, db, dx);
                break;
            }
            case LayerKind::TransposeConv2d: {
                double* dw = &grads.values[layer_offsets[idx]];
                double* db = dw + spec.weight_count();
                tconv2d_backward(spec, weights_[idx], x, dcur, dw, db, dx);
                break;
            }
            case LayerKind::Relu: {
                // Subgradient at 0 is 0: only strictly positive inputs pass.
                for (std::size_t i = 0; i < x.size(); ++i) {
                    dx.data[i] = x.data[i] > 0.0 ? dcur.data[i] : 0.0;
                }
                break;
            }
            case LayerKind::Sigmoid: {
                for (std::size_t i = 0; i < x.size(); ++i) {
                    dx.data[i] = y.data[i] * (1.0 - y.data[i]) * dcur.data[i];
                }
                break;
            }
        }
        dcur = std::move(dx);
    }
    return BackwardResult{std::move(grads), std::move(dcur)};
}

std::pair<double, Tensor> mse_loss(const Tensor& pred, const Tensor& target) {
    if (!same_shape(pred, target)) {
        fail("mse_loss shape mismatch: " + shape_str(pred.shape) + " vs " +
             shape_str(target.shape));
    }
    std::size_t n = pred.size();
    double acc = 0.0;
    Tensor grad = Tensor::zeros(pred.shape);
    double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        double d = pred.data[i] - target.data[i];
        acc += d * d;
        grad.data[i] = 2.0 * d * inv;
    }
    return {acc * inv, std::move(grad)};
}

FlatParams sgd_step(const FlatParams& params, const FlatParams& grads, double lr) {
    if (params.size() != grads.size()) {
        fail("sgd_step length mismatch: " + std::to_string(params.size()) + " vs " +
             std::to_string(grads.size()));
    }
    if (!(lr >= 0.0) || !std::isfinite(lr)) fail("sgd_step needs a finite learning rate >= 0");
    FlatParams out;
    out.boundaries = params.boundaries;
    out.values.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        out.values[i] = params.values[i] - lr * grads.values[i];
        if (!std::isfinite(out.values[i])) {
            throw std::runtime_error("non-finite parameter after sgd_step at index " +
                                     std::to_string(i));
        }
    }
    return out;
}

FlatParams finite_diff_gradient(const Network& net,
                                const std::function<double(const Network&)>& loss, double step) {
    FlatParams base = net.flatten();
    FlatParams grad;
    grad.boundaries = base.boundaries;
    grad.values.assign(base.size(), 0.0);
    Network probe = net;
    for (std::size_t i = 0; i < base.size(); ++i) {
        double saved = base.values[i];
        base.values[i] = saved + step;
        probe.load_flat(base);
        double up = loss(probe);
        base.values[i] = saved - step;
        probe.load_flat(base);
        double down = loss(probe);
        base.values[i] = saved;
        grad.values[i] = (up - down) / (2.0 * step);
    }
    return grad;
}

std::vector<double> finite_diff_at(const FlatParams& base,
                                   const std::function<double(const FlatParams&)>& loss,
                                   const std::vector<std::size_t>& coords, double step) {
    FlatParams probe = base;
    std::vector<double> out;
    out.reserve(coords.size());
    for (std::size_t c : coords) {
        if (c >= probe.size()) fail("finite_diff_at coordinate out of range");
        double saved = probe.values[c];
        probe.values[c] = saved + step;
        double up = loss(probe);
        probe.values[c] = saved - step;
        double down = loss(probe);
        probe.values[c] = saved;
        out.push_back((up - down) / (2.0 * step));
    }
    return out;
}

}  // namespace fedsfr
