#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "fedsfr/compression.hpp"
#include "fedsfr/data.hpp"
#include "fedsfr/jscc.hpp"
#include "fedsfr/metrics.hpp"
#include "fedsfr/rng.hpp"

namespace fedsfr {

enum class Algorithm { FedSfr, Dsgd };

/// How the sampled participants are split into the model-uplink set A_m and
/// the feature-uplink set A_o. Capacity draws a per-round scalar capacity for
/// each sampled client and gives the top-K_m the model uplink; RandomSplit
/// just takes the first K_m of the sample order.
enum class Grouping { Capacity, RandomSplit };

enum class ScheduleMode { Staircase, Theory };

struct ScheduleConfig {
    ScheduleMode mode = ScheduleMode::Staircase;
    double eta_c0 = 0.01;
    double eta_s0 = 0.001;
    double decay = 0.8;   // multiplicative, applied every decay_every rounds
    int decay_every = 10;
    double alpha0 = 1.0;  // Theory mode numerator scale
    int horizon = 1;      // Theory mode T
};

struct LrPair {
    double eta_c = 0.0;
    double eta_s = 0.0;
    bool server_slower = false;  // eta_s < eta_c, the intended operating regime
};

/// Staircase: eta(t) = eta(0) * decay^floor(t / decay_every).
/// Theory:    eta_c = alpha(t)/sqrt(T), eta_s = alpha(t)/T^(3/4), with
/// alpha(t) decayed on the same staircase.
LrPair lr_schedule(int t, const ScheduleConfig& cfg);

struct ClientState {
    int id = 0;
    std::vector<std::size_t> train;          // D_k, indices into the dataset
    std::vector<std::size_t> public_subset;  // P_k subset of D_k
    ErrorMemory memory;
    double p = 0.0;  // |D_k| / |D|
};

struct RoundPlan {
    int t = 0;
    std::vector<int> a_m;  // ascending client ids, |a_m| = K_m
    std::vector<int> a_o;  // ascending client ids, |a_o| = K_o, disjoint from a_m
    std::size_t s_m = 0;
    std::size_t s_o = 0;
    double eta_c = 0.0;
    double eta_s = 0.0;
};

struct FeatureSet {
    int owner = -1;
    std::vector<std::vector<double>> vectors;   // raw encoder outputs, length d
    std::vector<std::size_t> source_ids;        // audit only, never trained on
};

struct GlobalState {
    FlatParams w;
    int t = 0;
    std::uint64_t master_seed = 0;
    // Running diagnostics for the memory-norm bound: largest per-step client
    // gradient norm seen so far and the largest SGD step count per round.
    double grad_norm_peak = 0.0;
    int steps_peak = 0;
};

/// Everything a training run needs. Pointers reference caller-owned objects;
/// proto carries the architecture (its parameter values are ignored, the run
/// draws its own init).
struct TrainSetup {
    const ImageDataset* dataset = nullptr;
    const Partition* partition = nullptr;
    const JsccModel* proto = nullptr;
    ChannelConfig channel;
    Algorithm algorithm = Algorithm::FedSfr;
    Grouping grouping = Grouping::Capacity;
    int k_m = 0;
    int k_o = 0;
    std::size_t s_m = 0;            // model-uplink budget, in parameter values
    std::size_t s_o = 0;            // feature-uplink budget, in values (vectors = s_o / d)
    int rounds = 1;                 // T
    int client_epochs = 1;          // E_c
    int server_epochs = 0;          // E_s
    int batch_size = 16;
    int server_batch_size = 16;
    ScheduleConfig schedule;
    std::uint64_t master_seed = 1;
    int threads = 1;
    std::size_t grad_eval_images = 0;  // 0 skips the gradient-norm estimate
};

/// Draw K_m + K_o distinct clients uniformly without replacement and split
/// them per the grouping policy. Budgets and learning rates are stamped into
/// the plan. Throws if K_m + K_o > k_total.
RoundPlan sample_round(std::uint64_t master_seed, int k_total, int k_m, int k_o,
                       const ScheduleConfig& sched, Grouping grouping, std::size_t s_m,
                       std::size_t s_o, int t);

struct LocalOutcome {
    std::vector<double> accum;        // broadcast w minus final local weights, exact
    std::vector<double> final_theta;  // encoder slice after the last local step
    double loss_sum = 0.0;            // sum over steps of the batch-mean loss
    int steps = 0;
    double max_grad_norm = 0.0;       // largest per-step minibatch gradient norm
};

/// E_c epochs of mini-batch SGD on the transmit loss over the client's data.
/// data_rng orders the batches, chan_rng draws the per-image channel noise.
LocalOutcome local_update(const ClientState& client, const ImageDataset& ds,
                          const JsccModel& proto, const std::vector<double>& w,
                          const ChannelConfig& channel, double eta_c, int epochs,
                          int batch_size, RngStream& data_rng, RngStream& chan_rng);

/// Encode min(s_o / d, |P_k|) images drawn without replacement from P_k with
/// the client's freshly trained encoder. A zero vector budget produces an
/// empty payload (warned on stderr, the round degrades gracefully).
FeatureSet make_feature_payload(const ClientState& client, const ImageDataset& ds,
                                const Network& encoder_proto,
                                const std::vector<double>& final_theta, std::size_t d,
                                std::size_t s_o, RngStream& rng);

struct WeightedUpdate {
    int client_id = -1;
    double p = 0.0;
    const SparseUpdate* update = nullptr;
};

/// w_half = w - (K / K_m) * sum_k p_k densify(g_k), summed in ascending
/// client-id order. K_m = 0 with updates present is an error; with none it
/// returns w unchanged (a pure feature round).
std::vector<double> aggregate(const std::vector<double>& w,
                              const std::vector<std::pair<std::size_t, std::size_t>>& boundaries,
                              std::vector<WeightedUpdate> updates, int k_total, int k_m);

/// E_s epochs of mini-batch SGD on the feature-restoration loss over the
/// pooled feature vectors. Empty pool, zero epochs, or zero rate return
/// w_half unchanged.
std::vector<double> server_fr_update(const std::vector<double>& w_half, const JsccModel& proto,
                                     const std::vector<std::vector<double>>& pooled,
                                     const ChannelConfig& channel, double eta_s, int epochs,
                                     int batch_size, RngStream& data_rng, RngStream& noise_rng);

struct BestRefTerm {
    double p = 0.0;
    const std::vector<double>* accum = nullptr;
    const std::vector<double>* memory = nullptr;
};

/// Diagnostic-only oracle: the update the server could apply with full
/// visibility of every participant's uncompressed accumulator and memory,
/// w - K/(K_m+K_o) * sum p_k (accum_k + m_k). Terms must be in ascending
/// client-id order.
std::vector<double> best_reference_update(const std::vector<double>& w,
                                          const std::vector<BestRefTerm>& terms, int k_total);

struct RoundOutcome {
    RoundMetrics metrics;       // wall_ms stays 0 so logs are run-to-run identical
    double best_ref_dist = 0.0; // ||w_best - w^(t+1)||_2
    double elapsed_ms = 0.0;    // actual wall time, reported out of band
};

/// One protocol round: local updates for A_m and A_o, sparse aggregation,
/// feature pooling, server restoration pass, memory resets, metrics.
RoundOutcome run_round(GlobalState& state, const RoundPlan& plan,
                       std::vector<ClientState>& clients,
                       const std::vector<std::size_t>& train_pool, const TrainSetup& setup);

struct TrainResult {
    MetricsLog log;
    std::vector<double> final_w;
    std::vector<double> best_ref_dist;  // one entry per round
    double grad_norm_peak = 0.0;
    int steps_peak = 0;
};

/// Called after every round with the fresh row and the best-reference
/// distance, so partial logs survive a failed run.
using RoundSink = std::function<void(const RoundMetrics&, double)>;

/// T rounds of the protocol from a fresh init. Dsgd mode folds the feature
/// set into the model set (all participants send sparse updates, no server
/// pass). Deterministic for a fixed setup, including threads > 1.
TrainResult run_training(const TrainSetup& setup, const RoundSink& sink = {});

}  // namespace fedsfr
