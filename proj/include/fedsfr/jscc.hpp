#pragma once

#include <string>
#include <vector>

#include "fedsfr/rng.hpp"
#include "fedsfr/tensor.hpp"
#include "fedsfr/util.hpp"

namespace fedsfr {

/// AWGN channel parameters. snr_db may be +inf as a noiseless sentinel.
struct ChannelConfig {
    double snr_db = 20.0;

    /// Noise variance per symbol: sigma2 = 10^(-snr_db / 10), so SNR = 1/sigma2.
    double sigma2() const;
    static double snr_db_from_sigma2(double sigma2);
};

/// Autoencoder pair: encoder f_theta maps an image to a d-dim feature,
/// decoder f_phi^-1 maps a (noisy, power-normalized) feature back to an
/// image. The flat parameter vector is concat(theta, phi).
struct JsccModel {
    Network encoder;
    Network decoder;

    JsccModel() = default;
    JsccModel(Network enc, Network dec);  // validates the d handoff

    std::size_t feature_dim() const { return shape_numel(encoder.output_shape()); }
    std::size_t theta_count() const { return encoder.param_count(); }
    std::size_t param_count() const { return encoder.param_count() + decoder.param_count(); }

    void init_params(RngStream& rng);
    FlatParams flatten() const;
    void load_flat(const FlatParams& flat);
    void load_values(const double* values, std::size_t n);
};

/// Symmetric conv/transpose-conv autoencoder for square C x H x W images.
/// Spatial size halves per stage down to 1x1 (kernel 4 on even sizes, 3 on
/// odd ones, stride 2, padding 1); the mirrored decoder restores it exactly.
/// hidden_channels lists the intermediate widths (one per stage except the
/// last, which always outputs d); sigmoid output keeps pixels in (0, 1).
JsccModel make_autoencoder(const std::vector<std::size_t>& image_shape,
                           const std::vector<int>& hidden_channels, std::size_t d);

/// y = f_theta(X), flattened to a length-d vector.
Tensor encode(const JsccModel& model, const Tensor& image);

/// y / ||y||_2. Zero-norm input is a hard error (dead encoder).
Tensor normalize_feature(const Tensor& y);

/// signal + n with n ~ N(0, sigma2 I) drawn from the given stream.
/// Draws exactly signal.size() normals when sigma2 > 0, none otherwise.
Tensor apply_awgn(const Tensor& signal, const ChannelConfig& cfg, RngStream& rng);

struct TransmitResult {
    Tensor reconstruction;
    double loss = 0.0;  // l_c = MSE(X_hat, X)
};

/// Client-side pipeline: X -> encode -> normalize -> channel -> decode.
TransmitResult transmit_image(const JsccModel& model, const Tensor& image,
                              const ChannelConfig& cfg, RngStream& rng);

struct FrResult {
    Tensor restored;    // y_hat
    double loss = 0.0;  // l_s = MSE(y_hat, y), y un-normalized
};

/// Server-side feature reconstruction: the received feature goes through the
/// decoder FIRST and the encoder SECOND, the reverse of the client order.
/// The loss targets the raw feature y even though the channel carries y/||y||.
FrResult fr_pass(const JsccModel& model, const Tensor& y, const ChannelConfig& cfg,
                 RngStream& rng);

struct LossGrad {
    double loss = 0.0;
    FlatParams grads;  // aligned with JsccModel::flatten()
};

// Loss gradients for both training paths. The *_with_noise variants take the
// channel noise explicitly so the loss is a deterministic function of the
// parameters (what the finite-difference oracle needs); the rng variants draw
// the noise and delegate.
LossGrad transmit_loss_grad(const JsccModel& model, const Tensor& image, const ChannelConfig& cfg,
                            RngStream& rng);
LossGrad transmit_loss_grad_with_noise(const JsccModel& model, const Tensor& image,
                                       const std::vector<double>& noise);
LossGrad fr_loss_grad(const JsccModel& model, const Tensor& y, const ChannelConfig& cfg,
                      RngStream& rng);
LossGrad fr_loss_grad_with_noise(const JsccModel& model, const Tensor& y,
                                 const std::vector<double>& noise);

// Feature vector wire form: u32 length prefix, then little-endian f64s.
void put_feature(std::string& out, const Tensor& y);
Tensor get_feature(ByteReader& r);

void save_model(const std::string& path, const JsccModel& model);
JsccModel load_model(const std::string& path);

}  // namespace fedsfr
