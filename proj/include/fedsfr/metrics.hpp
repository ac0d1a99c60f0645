#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedsfr/data.hpp"
#include "fedsfr/jscc.hpp"
#include "fedsfr/tensor.hpp"

namespace fedsfr {

/// One row of the per-round metrics log. Column order in the CSV is fixed;
/// see write_csv.
struct RoundMetrics {
    int t = 0;
    double eta_c = 0.0;
    double eta_s = 0.0;
    double train_lc = 0.0;
    double test_lc_pre_fr = 0.0;
    double test_lc_post_fr = 0.0;
    double test_psnr_pre_fr = 0.0;
    double test_psnr_post_fr = 0.0;
    bool fr_improved = false;
    double epsilon_hat = 0.0;
    double cos_ab = 0.0;
    double mean_mem_sq = 0.0;
    double lemma2_bound_value = 0.0;
    double grad_norm_sq = 0.0;
    double wall_ms = 0.0;
};

using MetricsLog = std::vector<RoundMetrics>;

/// 10 log10(max_val^2 / MSE(a, b)) in dB; +inf when the images agree exactly.
double psnr(const Tensor& a, const Tensor& b, double max_val = 1.0);
double psnr_from_mse(double mse, double max_val = 1.0);

struct EpsilonEstimate {
    double epsilon = 0.0;  // ||a - b||^2 / (||a||^2 + ||b||^2), 0 if both zero
    double cosine = 0.0;   // a.b / (||a|| ||b||), 0 if either is zero
};

/// Alignment diagnostic between the weighted error-memory sum and the
/// server's own update direction. epsilon <= 1 means the two directions are
/// compatible in the bounded-disturbance sense; values above 1 flag rounds
/// where they oppose.
EpsilonEstimate epsilon_hat(const std::vector<double>& a, const std::vector<double>& b);

/// Fraction of logged rounds where the FR step strictly reduced test l_c.
/// Ties and rounds without FR count as not-improved. window = 0 means all
/// rounds, otherwise only the trailing `window` rounds.
double improvement_ratio(const MetricsLog& log, std::size_t window = 0);

void write_csv(const MetricsLog& log, const std::string& path);
MetricsLog read_csv(const std::string& path);
std::string csv_header();
std::string csv_row(const RoundMetrics& m);

struct EvalResult {
    double mean_lc = 0.0;
    double mean_psnr = 0.0;  // from the mean MSE, so it is monotone in mean_lc
};

/// Transmit every indexed test image through the channel and average l_c.
/// Channel noise is keyed on (master_seed, image id), NOT on the round, so
/// evaluations of different models see identical noise and their PSNRs are
/// directly comparable.
EvalResult evaluate_model(const JsccModel& model, const ChannelConfig& cfg, const ImageDataset& ds,
                          const std::vector<std::size_t>& indices, std::uint64_t master_seed,
                          int threads = 1);

/// ||grad F(w)||^2 with F the mean transmit loss over the indexed images
/// (budget-subsampled evenly when budget < |indices|). Noise is keyed on
/// (master_seed, image id) as above.
double grad_norm_estimate(const JsccModel& model, const ChannelConfig& cfg, const ImageDataset& ds,
                          const std::vector<std::size_t>& indices, std::size_t budget,
                          std::uint64_t master_seed, int threads = 1);

}  // namespace fedsfr
