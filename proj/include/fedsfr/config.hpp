#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedsfr/data.hpp"
#include "fedsfr/federation.hpp"
#include "fedsfr/jscc.hpp"

namespace fedsfr {

// Where the training images come from.
enum class DataSource { Synthetic, Idx, ImageDir };

// Everything a run needs, as read from an INI-style config file. Field
// defaults double as the documented defaults of the file format; a resolved
// snapshot (write_resolved) always lists every key so a run can be replayed
// from the snapshot alone.
struct RunConfig {
    // [run]
    Algorithm algorithm = Algorithm::FedSfr;
    std::uint64_t seed = 1;
    int rounds = 50;
    int threads = 1;
    std::string out_dir = "out";

    // [data]
    DataSource source = DataSource::Synthetic;
    SynthKind synth_kind = SynthKind::Stripes;
    std::size_t synth_count = 1408;
    std::size_t channels = 1, height = 8, width = 8;
    std::string idx_path;
    std::string dir_path;
    std::uint64_t data_seed = 4242;

    // [partition]
    std::size_t clients = 10;
    std::size_t per_client = 128;
    std::size_t public_per_client = 32;

    // [model]
    std::vector<int> hidden = {4, 8};
    std::size_t feature_dim = 16;

    // [compression]
    double s_m_frac = 0.4;
    double s_o_frac = 0.2;

    // [train]
    int k_m = 3;
    int k_o = 3;
    int client_epochs = 5;
    int server_epochs = 11;
    std::size_t batch_size = 8;
    std::size_t server_batch_size = 32;
    ScheduleConfig schedule = {.mode = ScheduleMode::Staircase,
                               .eta_c0 = 4.0,
                               .eta_s0 = 0.4,
                               .decay = 0.8,
                               .decay_every = 2};
    double snr_db = 25.0;
    Grouping grouping = Grouping::Capacity;
    std::size_t grad_eval_images = 48;
};

// Parse an INI-style config file. Unknown sections or keys, duplicate keys,
// and malformed values are all hard errors naming the offending entry.
RunConfig parse_config_file(const std::string& path);
RunConfig parse_config_text(const std::string& text, const std::string& origin);

// Cross-field validation with field-level messages ("[train] k_m + k_o
// exceeds [partition] clients"). Throws std::invalid_argument.
void validate_config(const RunConfig& cfg);

// Canonical snapshot: every key in schema order, doubles at full precision.
// Parsing the result reproduces the config (and therefore the run) exactly.
std::string resolved_config_text(const RunConfig& cfg);

// Builders for the run's working objects.
ImageDataset build_dataset(const RunConfig& cfg);
Partition build_partition(const RunConfig& cfg, const ImageDataset& ds);
JsccModel build_model(const RunConfig& cfg);

// Assembles the TrainSetup from parts owned by the caller (S budgets are
// resolved from the fractions against the model's parameter count here).
TrainSetup build_setup(const RunConfig& cfg, const ImageDataset& ds, const Partition& part,
                       const JsccModel& proto);

}  // namespace fedsfr
