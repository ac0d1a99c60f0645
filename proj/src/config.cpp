#include "fedsfr/config.hpp"

#include <cmath>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

#include "fedsfr/util.hpp"

namespace fedsfr {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

// '#' opens a comment when it starts the line or follows whitespace, so a
// value itself may still contain '#'.
std::string strip_comment(const std::string& line) {
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] != '#') continue;
        if (i == 0 || line[i - 1] == ' ' || line[i - 1] == '\t') return line.substr(0, i);
    }
    return line;
}

struct Entry {
    std::string section;
    std::string key;
    std::string value;
    int line = 0;
};

[[noreturn]] void bad_entry(const std::string& origin, const Entry& e, const std::string& why) {
    throw std::invalid_argument(origin + ":" + std::to_string(e.line) + ": [" + e.section + "] " +
                                e.key + ": " + why);
}

long long entry_int(const std::string& origin, const Entry& e, long long lo, long long hi) {
    long long v = 0;
    try {
        v = parse_int(e.value);
    } catch (const std::exception& ex) {
        bad_entry(origin, e, ex.what());
    }
    if (v < lo || v > hi) {
        bad_entry(origin, e, "value " + e.value + " outside [" + std::to_string(lo) + ", " +
                                 std::to_string(hi) + "]");
    }
    return v;
}

double entry_double(const std::string& origin, const Entry& e) {
    try {
        return parse_double(e.value);
    } catch (const std::exception& ex) {
        bad_entry(origin, e, ex.what());
    }
}

std::vector<int> entry_int_list(const std::string& origin, const Entry& e) {
    std::vector<int> out;
    std::string rest = e.value;
    while (true) {
        std::size_t comma = rest.find(',');
        std::string tok = trim(rest.substr(0, comma));
        if (tok.empty()) bad_entry(origin, e, "empty element in list");
        try {
            out.push_back(int(parse_int(tok)));
        } catch (const std::exception& ex) {
            bad_entry(origin, e, ex.what());
        }
        if (comma == std::string::npos) break;
        rest = rest.substr(comma + 1);
    }
    return out;
}

const char* algorithm_name(Algorithm a) { return a == Algorithm::FedSfr ? "fedsfr" : "dsgd"; }
const char* source_name(DataSource s) {
    switch (s) {
        case DataSource::Synthetic: return "synthetic";
        case DataSource::Idx: return "idx";
        case DataSource::ImageDir: return "image_dir";
    }
    return "?";
}
const char* synth_kind_name(SynthKind k) {
    return k == SynthKind::GaussianBlobs ? "blobs" : "stripes";
}
const char* grouping_name(Grouping g) {
    return g == Grouping::Capacity ? "capacity" : "random";
}
const char* schedule_name(ScheduleMode m) {
    return m == ScheduleMode::Staircase ? "staircase" : "theory";
}

bool apply_run(RunConfig& c, const std::string& o, const Entry& e) {
    if (e.key == "algorithm") {
        if (e.value == "fedsfr") c.algorithm = Algorithm::FedSfr;
        else if (e.value == "dsgd") c.algorithm = Algorithm::Dsgd;
        else bad_entry(o, e, "expected fedsfr or dsgd");
    } else if (e.key == "seed") {
        c.seed = std::uint64_t(entry_int(o, e, 0, std::numeric_limits<long long>::max()));
    } else if (e.key == "rounds") {
        c.rounds = int(entry_int(o, e, 1, 1000000));
    } else if (e.key == "threads") {
        c.threads = int(entry_int(o, e, 1, 1024));
    } else if (e.key == "out_dir") {
        c.out_dir = e.value;
    } else {
        return false;
    }
    return true;
}

bool apply_data(RunConfig& c, const std::string& o, const Entry& e) {
    if (e.key == "source") {
        if (e.value == "synthetic") c.source = DataSource::Synthetic;
        else if (e.value == "idx") c.source = DataSource::Idx;
        else if (e.value == "image_dir") c.source = DataSource::ImageDir;
        else bad_entry(o, e, "expected synthetic, idx, or image_dir");
    } else if (e.key == "synth_kind") {
        if (e.value == "blobs") c.synth_kind = SynthKind::GaussianBlobs;
        else if (e.value == "stripes") c.synth_kind = SynthKind::Stripes;
        else bad_entry(o, e, "expected blobs or stripes");
    } else if (e.key == "synth_count") {
        c.synth_count = std::size_t(entry_int(o, e, 1, 100000000));
    } else if (e.key == "channels") {
        c.channels = std::size_t(entry_int(o, e, 1, 1024));
    } else if (e.key == "height") {
        c.height = std::size_t(entry_int(o, e, 1, 65536));
    } else if (e.key == "width") {
        c.width = std::size_t(entry_int(o, e, 1, 65536));
    } else if (e.key == "idx_path") {
        c.idx_path = e.value;
    } else if (e.key == "dir_path") {
        c.dir_path = e.value;
    } else if (e.key == "data_seed") {
        c.data_seed = std::uint64_t(entry_int(o, e, 0, std::numeric_limits<long long>::max()));
    } else {
        return false;
    }
    return true;
}

bool apply_partition(RunConfig& c, const std::string& o, const Entry& e) {
    if (e.key == "clients") {
        c.clients = std::size_t(entry_int(o, e, 1, 1000000));
    } else if (e.key == "per_client") {
        c.per_client = std::size_t(entry_int(o, e, 1, 100000000));
    } else if (e.key == "public_per_client") {
        c.public_per_client = std::size_t(entry_int(o, e, 0, 100000000));
    } else {
        return false;
    }
    return true;
}

bool apply_model(RunConfig& c, const std::string& o, const Entry& e) {
    if (e.key == "hidden") {
        c.hidden = entry_int_list(o, e);
    } else if (e.key == "feature_dim") {
        c.feature_dim = std::size_t(entry_int(o, e, 1, 1000000));
    } else {
        return false;
    }
    return true;
}

bool apply_compression(RunConfig& c, const std::string& o, const Entry& e) {
    if (e.key == "s_m_frac") {
        c.s_m_frac = entry_double(o, e);
    } else if (e.key == "s_o_frac") {
        c.s_o_frac = entry_double(o, e);
    } else {
        return false;
    }
    return true;
}

bool apply_train(RunConfig& c, const std::string& o, const Entry& e) {
    if (e.key == "k_m") {
        c.k_m = int(entry_int(o, e, 0, 1000000));
    } else if (e.key == "k_o") {
        c.k_o = int(entry_int(o, e, 0, 1000000));
    } else if (e.key == "client_epochs") {
        c.client_epochs = int(entry_int(o, e, 1, 1000000));
    } else if (e.key == "server_epochs") {
        c.server_epochs = int(entry_int(o, e, 0, 1000000));
    } else if (e.key == "batch_size") {
        c.batch_size = std::size_t(entry_int(o, e, 1, 100000000));
    } else if (e.key == "server_batch_size") {
        c.server_batch_size = std::size_t(entry_int(o, e, 1, 100000000));
    } else if (e.key == "schedule") {
        if (e.value == "staircase") c.schedule.mode = ScheduleMode::Staircase;
        else if (e.value == "theory") c.schedule.mode = ScheduleMode::Theory;
        else bad_entry(o, e, "expected staircase or theory");
    } else if (e.key == "eta_c0") {
        c.schedule.eta_c0 = entry_double(o, e);
    } else if (e.key == "eta_s0") {
        c.schedule.eta_s0 = entry_double(o, e);
    } else if (e.key == "decay") {
        c.schedule.decay = entry_double(o, e);
    } else if (e.key == "decay_every") {
        c.schedule.decay_every = int(entry_int(o, e, 1, 1000000));
    } else if (e.key == "alpha0") {
        c.schedule.alpha0 = entry_double(o, e);
    } else if (e.key == "horizon") {
        c.schedule.horizon = int(entry_int(o, e, 1, 1000000));
    } else if (e.key == "snr_db") {
        c.snr_db = entry_double(o, e);
    } else if (e.key == "grouping") {
        if (e.value == "capacity") c.grouping = Grouping::Capacity;
        else if (e.value == "random") c.grouping = Grouping::RandomSplit;
        else bad_entry(o, e, "expected capacity or random");
    } else if (e.key == "grad_eval_images") {
        c.grad_eval_images = std::size_t(entry_int(o, e, 0, 100000000));
    } else {
        return false;
    }
    return true;
}

}  // namespace

RunConfig parse_config_text(const std::string& text, const std::string& origin) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string raw;
    std::string section;
    std::set<std::string> seen;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        if (!raw.empty() && raw.back() == '\r') raw.pop_back();
        std::string line = trim(strip_comment(raw));
        if (line.empty()) continue;
        std::string at = origin + ":" + std::to_string(line_no);
        if (line.front() == '[') {
            if (line.back() != ']') throw std::invalid_argument(at + ": unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section != "run" && section != "data" && section != "partition" &&
                section != "model" && section != "compression" && section != "train") {
                throw std::invalid_argument(at + ": unknown section [" + section + "]");
            }
            continue;
        }
        std::size_t eq = line.find('=');
        if (eq == std::string::npos) throw std::invalid_argument(at + ": expected key = value");
        Entry e{section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)), line_no};
        if (e.section.empty()) throw std::invalid_argument(at + ": key before any [section]");
        if (e.key.empty()) throw std::invalid_argument(at + ": empty key");
        if (!seen.insert(e.section + "." + e.key).second) bad_entry(origin, e, "duplicate key");
        bool ok = false;
        if (e.section == "run") ok = apply_run(cfg, origin, e);
        else if (e.section == "data") ok = apply_data(cfg, origin, e);
        else if (e.section == "partition") ok = apply_partition(cfg, origin, e);
        else if (e.section == "model") ok = apply_model(cfg, origin, e);
        else if (e.section == "compression") ok = apply_compression(cfg, origin, e);
        else if (e.section == "train") ok = apply_train(cfg, origin, e);
        if (!ok) bad_entry(origin, e, "unknown key");
    }
    return cfg;
}

RunConfig parse_config_file(const std::string& path) {
    return parse_config_text(read_file(path), path);
}

void validate_config(const RunConfig& cfg) {
    auto fail = [](const std::string& msg) { throw std::invalid_argument(msg); };
    if (cfg.out_dir.empty()) fail("[run] out_dir must not be empty");
    if (cfg.source == DataSource::Idx && cfg.idx_path.empty())
        fail("[data] idx_path is required when source = idx");
    if (cfg.source == DataSource::ImageDir && cfg.dir_path.empty())
        fail("[data] dir_path is required when source = image_dir");
    if (cfg.source == DataSource::Synthetic) {
        std::size_t consumed = cfg.clients * cfg.per_client;
        if (consumed >= cfg.synth_count)
            fail("[partition] clients * per_client consumes all of [data] synth_count, leaving no "
                 "test images");
    }
    if (cfg.public_per_client > cfg.per_client)
        fail("[partition] public_per_client exceeds per_client");
    if (cfg.hidden.empty()) fail("[model] hidden must list at least one width");
    for (int ch : cfg.hidden)
        if (ch < 1) fail("[model] hidden widths must be positive");
    if (!(cfg.s_m_frac > 0.0 && cfg.s_m_frac <= 1.0)) fail("[compression] s_m_frac must be in (0, 1]");
    if (!(cfg.s_o_frac >= 0.0 && cfg.s_o_frac <= 1.0)) fail("[compression] s_o_frac must be in [0, 1]");
    if (!(cfg.s_o_frac < cfg.s_m_frac))
        fail("[compression] s_o_frac must stay below s_m_frac (the feature uplink is the cheap one)");
    if (cfg.k_m < 1) fail("[train] k_m must be at least 1");
    if (std::size_t(cfg.k_m) + std::size_t(cfg.k_o) > cfg.clients)
        fail("[train] k_m + k_o exceeds [partition] clients");
    if (std::isnan(cfg.snr_db) || cfg.snr_db == -std::numeric_limits<double>::infinity())
        fail("[train] snr_db must be a number or inf");
    if (!(cfg.schedule.eta_c0 > 0.0)) fail("[train] eta_c0 must be positive");
    if (!(cfg.schedule.eta_s0 >= 0.0)) fail("[train] eta_s0 must not be negative");
    if (!(cfg.schedule.decay > 0.0 && cfg.schedule.decay <= 1.0))
        fail("[train] decay must be in (0, 1]");
    if (cfg.schedule.mode == ScheduleMode::Theory) {
        if (!(cfg.schedule.alpha0 > 0.0)) fail("[train] alpha0 must be positive");
        if (cfg.schedule.horizon < cfg.rounds)
            fail("[train] horizon must cover [run] rounds when schedule = theory");
    }
}

std::string resolved_config_text(const RunConfig& cfg) {
    std::string out;
    auto kv = [&out](const std::string& k, const std::string& v) { out += k + " = " + v + "\n"; };
    out += "[run]\n";
    kv("algorithm", algorithm_name(cfg.algorithm));
    kv("seed", std::to_string(cfg.seed));
    kv("rounds", std::to_string(cfg.rounds));
    kv("threads", std::to_string(cfg.threads));
    kv("out_dir", cfg.out_dir);
    out += "\n[data]\n";
    kv("source", source_name(cfg.source));
    kv("synth_kind", synth_kind_name(cfg.synth_kind));
    kv("synth_count", std::to_string(cfg.synth_count));
    kv("channels", std::to_string(cfg.channels));
    kv("height", std::to_string(cfg.height));
    kv("width", std::to_string(cfg.width));
    if (!cfg.idx_path.empty()) kv("idx_path", cfg.idx_path);
    if (!cfg.dir_path.empty()) kv("dir_path", cfg.dir_path);
    kv("data_seed", std::to_string(cfg.data_seed));
    out += "\n[partition]\n";
    kv("clients", std::to_string(cfg.clients));
    kv("per_client", std::to_string(cfg.per_client));
    kv("public_per_client", std::to_string(cfg.public_per_client));
    out += "\n[model]\n";
    std::string widths;
    for (std::size_t i = 0; i < cfg.hidden.size(); ++i) {
        if (i) widths += ",";
        widths += std::to_string(cfg.hidden[i]);
    }
    kv("hidden", widths);
    kv("feature_dim", std::to_string(cfg.feature_dim));
    out += "\n[compression]\n";
    kv("s_m_frac", fmt_double(cfg.s_m_frac));
    kv("s_o_frac", fmt_double(cfg.s_o_frac));
    out += "\n[train]\n";
    kv("k_m", std::to_string(cfg.k_m));
    kv("k_o", std::to_string(cfg.k_o));
    kv("client_epochs", std::to_string(cfg.client_epochs));
    kv("server_epochs", std::to_string(cfg.server_epochs));
    kv("batch_size", std::to_string(cfg.batch_size));
    kv("server_batch_size", std::to_string(cfg.server_batch_size));
    kv("schedule", schedule_name(cfg.schedule.mode));
    kv("eta_c0", fmt_double(cfg.schedule.eta_c0));
    kv("eta_s0", fmt_double(cfg.schedule.eta_s0));
    kv("decay", fmt_double(cfg.schedule.decay));
    kv("decay_every", std::to_string(cfg.schedule.decay_every));
    kv("alpha0", fmt_double(cfg.schedule.alpha0));
    kv("horizon", std::to_string(cfg.schedule.horizon));
    kv("snr_db", fmt_double(cfg.snr_db));
    kv("grouping", grouping_name(cfg.grouping));
    kv("grad_eval_images", std::to_string(cfg.grad_eval_images));
    return out;
}

ImageDataset build_dataset(const RunConfig& cfg) {
    switch (cfg.source) {
        case DataSource::Synthetic: {
            RngStream rng = derive_stream(cfg.data_seed, StreamTag::Synth);
            return synth_dataset(rng, cfg.synth_count, {cfg.channels, cfg.height, cfg.width},
                                 cfg.synth_kind);
        }
        case DataSource::Idx: return load_idx(cfg.idx_path);
        case DataSource::ImageDir: return load_image_dir(cfg.dir_path);
    }
    throw std::logic_error("unhandled data source");
}

Partition build_partition(const RunConfig& cfg, const ImageDataset& ds) {
    RngStream rng = derive_stream(cfg.data_seed, StreamTag::Partition);
    return partition_dataset(ds, PartitionSpec{cfg.clients, cfg.per_client, cfg.public_per_client},
                             rng);
}

JsccModel build_model(const RunConfig& cfg) {
    return make_autoencoder({cfg.channels, cfg.height, cfg.width}, cfg.hidden, cfg.feature_dim);
}

TrainSetup build_setup(const RunConfig& cfg, const ImageDataset& ds, const Partition& part,
                       const JsccModel& proto) {
    std::vector<std::size_t> want = {cfg.channels, cfg.height, cfg.width};
    if (ds.shape() != want) {
        auto dims = [](const std::vector<std::size_t>& s) {
            return std::to_string(s[0]) + "x" + std::to_string(s[1]) + "x" + std::to_string(s[2]);
        };
        throw std::invalid_argument("[data] channels/height/width (" + dims(want) +
                                    ") do not match the loaded dataset (" + dims(ds.shape()) + ")");
    }
    TrainSetup s;
    s.dataset = &ds;
    s.partition = &part;
    s.proto = &proto;
    s.channel.snr_db = cfg.snr_db;
    s.algorithm = cfg.algorithm;
    s.grouping = cfg.grouping;
    s.k_m = cfg.k_m;
    s.k_o = cfg.k_o;
    double n = double(proto.param_count());
    s.s_m = std::size_t(std::llround(cfg.s_m_frac * n));
    s.s_o = std::size_t(std::llround(cfg.s_o_frac * n));
    if (s.s_m == 0) throw std::invalid_argument("[compression] s_m_frac keeps nothing at this model size");
    s.rounds = cfg.rounds;
    s.client_epochs = cfg.client_epochs;
    s.server_epochs = cfg.server_epochs;
    s.batch_size = int(cfg.batch_size);
    s.server_batch_size = int(cfg.server_batch_size);
    s.schedule = cfg.schedule;
    s.master_seed = cfg.seed;
    s.threads = cfg.threads;
    s.grad_eval_images = cfg.grad_eval_images;
    return s;
}

}  // namespace fedsfr
