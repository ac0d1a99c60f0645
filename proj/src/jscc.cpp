#include "fedsfr/jscc.hpp"

#include <cmath>
#include <stdexcept>

#include "fedsfr/checkpoint.hpp"

namespace fedsfr {

double ChannelConfig::sigma2() const {
    if (std::isinf(snr_db) && snr_db > 0) return 0.0;
    if (!std::isfinite(snr_db)) throw std::invalid_argument("snr_db must be finite or +inf");
    return std::pow(10.0, -snr_db / 10.0);
}

double ChannelConfig::snr_db_from_sigma2(double sigma2) {
    if (!(sigma2 > 0)) throw std::invalid_argument("sigma2 must be positive");
    return -10.0 * std::log10(sigma2);
}

JsccModel::JsccModel(Network enc, Network dec) : encoder(std::move(enc)), decoder(std::move(dec)) {
    std::size_t d_out = shape_numel(encoder.output_shape());
    std::size_t d_in = shape_numel(decoder.input_shape());
    if (d_out != d_in) {
        throw std::invalid_argument("encoder emits " + std::to_string(d_out) +
                                    " features but decoder expects " + std::to_string(d_in));
    }
}

void JsccModel::init_params(RngStream& rng) {
    encoder.init_params(rng);
    decoder.init_params(rng);
}

FlatParams JsccModel::flatten() const {
    FlatParams e = encoder.flatten();
    FlatParams d = decoder.flatten();
    FlatParams out;
    out.values = std::move(e.values);
    out.values.insert(out.values.end(), d.values.begin(), d.values.end());
    out.boundaries = std::move(e.boundaries);
    std::size_t shift = encoder.param_count();
    for (auto [off, len] : d.boundaries) out.boundaries.emplace_back(off + shift, len);
    return out;
}

void JsccModel::load_flat(const FlatParams& flat) { load_values(flat.values.data(), flat.size()); }

void JsccModel::load_values(const double* values, std::size_t n) {
    if (n != param_count()) {
        throw std::invalid_argument("parameter vector length " + std::to_string(n) +
                                    " does not match model (" + std::to_string(param_count()) +
                                    ")");
    }
    encoder.load_values(values, theta_count());
    decoder.load_values(values + theta_count(), decoder.param_count());
}

JsccModel make_autoencoder(const std::vector<std::size_t>& image_shape,
                           const std::vector<int>& hidden_channels, std::size_t d) {
    if (image_shape.size() != 3) {
        throw std::invalid_argument("autoencoder input must be (C,H,W), got " +
                                    shape_str(image_shape));
    }
    if (image_shape[1] != image_shape[2]) {
        throw std::invalid_argument("autoencoder input must be square, got " +
                                    shape_str(image_shape));
    }
    if (d == 0) throw std::invalid_argument("feature dimension d must be positive");
    int C = static_cast<int>(image_shape[0]);
    std::size_t H = image_shape[1];
    if (H < 2) throw std::invalid_argument("image side must be at least 2");

    // Halve the spatial extent per stage until 1x1. Even sizes take kernel 4,
    // odd ones kernel 3 (both stride 2, padding 1); the mirrored
    // transpose-conv stack then restores the extent exactly at every stage.
    std::vector<int> kernels;
    for (std::size_t h = H; h > 1;) {
        int k = (h % 2 == 0) ? 4 : 3;
        kernels.push_back(k);
        h = (h + 2 - static_cast<std::size_t>(k)) / 2 + 1;
    }
    std::size_t stages = kernels.size();
    if (hidden_channels.size() + 1 != stages) {
        throw std::invalid_argument(
            "a " + std::to_string(H) + "x" + std::to_string(H) + " input needs " +
            std::to_string(stages) + " stages, so " + std::to_string(stages - 1) +
            " hidden channel widths (got " + std::to_string(hidden_channels.size()) + ")");
    }
    for (int ch : hidden_channels) {
        if (ch <= 0) throw std::invalid_argument("hidden channel widths must be positive");
    }

    std::vector<int> widths;
    widths.push_back(C);
    for (int ch : hidden_channels) widths.push_back(ch);
    widths.push_back(static_cast<int>(d));

    std::vector<LayerSpec> enc_layers;
    for (std::size_t i = 0; i < stages; ++i) {
        if (i) enc_layers.push_back(LayerSpec::relu());
        enc_layers.push_back(LayerSpec::conv2d(widths[i], widths[i + 1], kernels[i], 2, 1));
    }
    std::vector<LayerSpec> dec_layers;
    for (std::size_t i = stages; i-- > 0;) {
        dec_layers.push_back(LayerSpec::transpose_conv2d(widths[i + 1], widths[i], kernels[i], 2, 1));
        if (i) dec_layers.push_back(LayerSpec::relu());
    }
    dec_layers.push_back(LayerSpec::sigmoid());

    Network enc(std::move(enc_layers), image_shape);
    Network dec(std::move(dec_layers), {d, 1, 1});
    JsccModel model(std::move(enc), std::move(dec));
    if (shape_numel(model.decoder.output_shape()) != shape_numel(image_shape)) {
        throw std::invalid_argument("decoder does not restore the input shape");  // unreachable
    }
    return model;
}

Tensor encode(const JsccModel& model, const Tensor& image) {
    Tensor y = model.encoder.forward(image);
    return y.reshaped({y.size()});
}

Tensor normalize_feature(const Tensor& y) {
    double norm2 = 0.0;
    for (double v : y.data) norm2 += v * v;
    if (norm2 == 0.0) {
        throw std::runtime_error("cannot power-normalize an all-zero feature vector");
    }
    double inv = 1.0 / std::sqrt(norm2);
    Tensor out = y;
    for (double& v : out.data) v *= inv;
    return out;
}

Tensor apply_awgn(const Tensor& signal, const ChannelConfig& cfg, RngStream& rng) {
    double s2 = cfg.sigma2();
    if (s2 == 0.0) return signal;
    double sigma = std::sqrt(s2);
    Tensor out = signal;
    for (double& v : out.data) v += sigma * rng.normal();
    return out;
}

namespace {

std::vector<double> draw_noise(std::size_t d, const ChannelConfig& cfg, RngStream& rng) {
    std::vector<double> noise(d, 0.0);
    double s2 = cfg.sigma2();
    if (s2 > 0.0) {
        double sigma = std::sqrt(s2);
        for (double& v : noise) v = sigma * rng.normal();
    }
    return noise;
}

// d(loss)/dy for y_tilde = y / ||y||: project out the radial component and
// scale by 1/||y||.
Tensor normalize_backward(const Tensor& y, const Tensor& y_tilde, const Tensor& dtilde) {
    double dot = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) dot += y_tilde.data[i] * dtilde.data[i];
    double norm = 0.0;
    for (double v : y.data) norm += v * v;
    norm = std::sqrt(norm);
    Tensor dy = Tensor::zeros(y.shape);
    for (std::size_t i = 0; i < y.size(); ++i) {
        dy.data[i] = (dtilde.data[i] - y_tilde.data[i] * dot) / norm;
    }
    return dy;
}

FlatParams concat_grads(const JsccModel& model, FlatParams theta, const FlatParams& phi) {
    std::size_t shift = model.theta_count();
    theta.values.insert(theta.values.end(), phi.values.begin(), phi.values.end());
    for (auto [off, len] : phi.boundaries) theta.boundaries.emplace_back(off + shift, len);
    return theta;
}

}  // namespace

TransmitResult transmit_image(const JsccModel& model, const Tensor& image,
                              const ChannelConfig& cfg, RngStream& rng) {
    Tensor y = encode(model, image);
    Tensor y_tilde = normalize_feature(y);
    Tensor received = apply_awgn(y_tilde, cfg, rng);
    Tensor x_hat = model.decoder.forward(received).reshaped(image.shape);
    auto [loss, grad] = mse_loss(x_hat, image);
    (void)grad;
    return TransmitResult{std::move(x_hat), loss};
}

FrResult fr_pass(const JsccModel& model, const Tensor& y, const ChannelConfig& cfg,
                 RngStream& rng) {
    Tensor y_tilde = normalize_feature(y);
    Tensor received = apply_awgn(y_tilde, cfg, rng);
    // Decoder first, encoder second.
    Tensor mid = model.decoder.forward(received);
    Tensor y_hat = model.encoder.forward(mid).reshaped({y.size()});
    auto [loss, grad] = mse_loss(y_hat, y.reshaped({y.size()}));
    (void)grad;
    return FrResult{std::move(y_hat), loss};
}

LossGrad transmit_loss_grad(const JsccModel& model, const Tensor& image, const ChannelConfig& cfg,
                            RngStream& rng) {
    return transmit_loss_grad_with_noise(model, image,
                                         draw_noise(model.feature_dim(), cfg, rng));
}

LossGrad transmit_loss_grad_with_noise(const JsccModel& model, const Tensor& image,
                                       const std::vector<double>& noise) {
    if (noise.size() != model.feature_dim()) {
        throw std::invalid_argument("noise length does not match feature dimension");
    }
    ForwardTape enc_tape;
    Tensor y = model.encoder.forward(image, &enc_tape).reshaped({model.feature_dim()});
    Tensor y_tilde = normalize_feature(y);
    Tensor received = y_tilde;
    for (std::size_t i = 0; i < received.size(); ++i) received.data[i] += noise[i];

    ForwardTape dec_tape;
    Tensor x_hat = model.decoder.forward(received, &dec_tape).reshaped(image.shape);
    auto [loss, dxa] = mse_loss(x_hat, image);

    BackwardResult dec_bw = model.decoder.backward(dec_tape, dxa.reshaped(model.decoder.output_shape()));
    Tensor dtilde = dec_bw.input_grad.reshaped({y.size()});
    Tensor dy = normalize_backward(y, y_tilde, dtilde);
    BackwardResult enc_bw = model.encoder.backward(enc_tape, dy.reshaped(model.encoder.output_shape()));

    return LossGrad{loss, concat_grads(model, std::move(enc_bw.param_grads), dec_bw.param_grads)};
}

LossGrad fr_loss_grad(const JsccModel& model, const Tensor& y, const ChannelConfig& cfg,
                      RngStream& rng) {
    return fr_loss_grad_with_noise(model, y, draw_noise(model.feature_dim(), cfg, rng));
}

LossGrad fr_loss_grad_with_noise(const JsccModel& model, const Tensor& y,
                                 const std::vector<double>& noise) {
    if (noise.size() != model.feature_dim()) {
        throw std::invalid_argument("noise length does not match feature dimension");
    }
    Tensor y_flat = y.reshaped({y.size()});
    Tensor y_tilde = normalize_feature(y_flat);
    Tensor received = y_tilde;
    for (std::size_t i = 0; i < received.size(); ++i) received.data[i] += noise[i];

    ForwardTape dec_tape;
    Tensor mid = model.decoder.forward(received, &dec_tape);
    ForwardTape enc_tape;
    Tensor y_hat = model.encoder.forward(mid, &enc_tape).reshaped({y_flat.size()});
    auto [loss, dyh] = mse_loss(y_hat, y_flat);

    BackwardResult enc_bw =
        model.encoder.backward(enc_tape, dyh.reshaped(model.encoder.output_shape()));
    BackwardResult dec_bw = model.decoder.backward(
        dec_tape, enc_bw.input_grad.reshaped(model.decoder.output_shape()));
    // The received feature is an input here, not a parameter: no gradient
    // flows back into y.
    return LossGrad{loss, concat_grads(model, std::move(enc_bw.param_grads), dec_bw.param_grads)};
}

void put_feature(std::string& out, const Tensor& y) {
    put_u32(out, static_cast<std::uint32_t>(y.size()));
    for (double v : y.data) put_f64(out, v);
}

Tensor get_feature(ByteReader& r) {
    std::uint32_t n = r.get_u32();
    Tensor y = Tensor::zeros({n});
    for (double& v : y.data) v = r.get_f64();
    return y;
}

void save_model(const std::string& path, const JsccModel& model) {
    save_networks(path, {&model.encoder, &model.decoder});
}

JsccModel load_model(const std::string& path) {
    auto nets = load_networks(path);
    if (nets.size() != 2) {
        throw std::runtime_error(path + ": expected 2 networks (encoder, decoder), found " +
                                 std::to_string(nets.size()));
    }
    return JsccModel(std::move(nets[0]), std::move(nets[1]));
}

}  // namespace fedsfr
