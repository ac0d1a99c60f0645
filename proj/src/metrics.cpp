#include "fedsfr/metrics.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "fedsfr/util.hpp"

namespace fedsfr {

double psnr_from_mse(double mse, double max_val) {
    if (!(max_val > 0)) throw std::invalid_argument("psnr needs max_val > 0");
    if (mse < 0) throw std::invalid_argument("negative MSE");
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(max_val * max_val / mse);
}

double psnr(const Tensor& a, const Tensor& b, double max_val) {
    auto [mse, grad] = mse_loss(a, b);
    (void)grad;
    return psnr_from_mse(mse, max_val);
}

EpsilonEstimate epsilon_hat(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) {
        throw std::invalid_argument("epsilon_hat length mismatch: " + std::to_string(a.size()) +
                                    " vs " + std::to_string(b.size()));
    }
    double na = 0, nb = 0, dot = 0, diff = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        na += a[i] * a[i];
        nb += b[i] * b[i];
        dot += a[i] * b[i];
        double d = a[i] - b[i];
        diff += d * d;
    }
    EpsilonEstimate e;
    if (na + nb == 0.0) return e;  // both zero: 0 by convention
    e.epsilon = diff / (na + nb);
    if (na > 0 && nb > 0) e.cosine = dot / (std::sqrt(na) * std::sqrt(nb));
    return e;
}

double improvement_ratio(const MetricsLog& log, std::size_t window) {
    if (log.empty()) throw std::invalid_argument("improvement_ratio over an empty log");
    std::size_t begin = 0;
    if (window > 0 && window < log.size()) begin = log.size() - window;
    std::size_t improved = 0, total = 0;
    for (std::size_t i = begin; i < log.size(); ++i) {
        improved += log[i].fr_improved;
        total++;
    }
    return static_cast<double>(improved) / static_cast<double>(total);
}

std::string csv_header() {
    return "t,eta_c,eta_s,train_lc,test_lc_pre_fr,test_lc_post_fr,test_psnr_pre_fr,"
           "test_psnr_post_fr,fr_improved,epsilon_hat,cos_ab,mean_mem_sq,lemma2_bound,"
           "grad_norm_sq,wall_ms";
}

std::string csv_row(const RoundMetrics& m) {
    std::string row = std::to_string(m.t);
    for (double v : {m.eta_c, m.eta_s, m.train_lc, m.test_lc_pre_fr, m.test_lc_post_fr,
                     m.test_psnr_pre_fr, m.test_psnr_post_fr}) {
        row += ',';
        row += fmt_double(v);
    }
    row += m.fr_improved ? ",1" : ",0";
    for (double v : {m.epsilon_hat, m.cos_ab, m.mean_mem_sq, m.lemma2_bound_value, m.grad_norm_sq,
                     m.wall_ms}) {
        row += ',';
        row += fmt_double(v);
    }
    return row;
}

void write_csv(const MetricsLog& log, const std::string& path) {
    std::string out = csv_header();
    out += '\n';
    for (const RoundMetrics& m : log) {
        out += csv_row(m);
        out += '\n';
    }
    write_file(path, out);
}

MetricsLog read_csv(const std::string& path) {
    std::string raw = read_file(path);
    std::istringstream in(raw);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path + ": empty metrics file");
    if (line != csv_header()) throw std::runtime_error(path + ": unexpected CSV header");
    MetricsLog log;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::size_t at = 0;
        while (true) {
            std::size_t comma = line.find(',', at);
            if (comma == std::string::npos) {
                cells.push_back(line.substr(at));
                break;
            }
            cells.push_back(line.substr(at, comma - at));
            at = comma + 1;
        }
        if (cells.size() != 15) {
            throw std::runtime_error(path + ": row with " + std::to_string(cells.size()) +
                                     " cells, want 15");
        }
        RoundMetrics m;
        m.t = static_cast<int>(parse_int(cells[0]));
        m.eta_c = parse_double(cells[1]);
        m.eta_s = parse_double(cells[2]);
        m.train_lc = parse_double(cells[3]);
        m.test_lc_pre_fr = parse_double(cells[4]);
        m.test_lc_post_fr = parse_double(cells[5]);
        m.test_psnr_pre_fr = parse_double(cells[6]);
        m.test_psnr_post_fr = parse_double(cells[7]);
        m.fr_improved = parse_int(cells[8]) != 0;
        m.epsilon_hat = parse_double(cells[9]);
        m.cos_ab = parse_double(cells[10]);
        m.mean_mem_sq = parse_double(cells[11]);
        m.lemma2_bound_value = parse_double(cells[12]);
        m.grad_norm_sq = parse_double(cells[13]);
        m.wall_ms = parse_double(cells[14]);
        log.push_back(m);
    }
    return log;
}

EvalResult evaluate_model(const JsccModel& model, const ChannelConfig& cfg, const ImageDataset& ds,
                          const std::vector<std::size_t>& indices, std::uint64_t master_seed,
                          int threads) {
    if (indices.empty()) throw std::invalid_argument("evaluate_model: no images");
    std::vector<double> losses(indices.size(), 0.0);
    parallel_for(indices.size(), threads, [&](std::size_t i) {
        std::size_t id = indices[i];
        RngStream noise = derive_stream(master_seed, StreamTag::EvalNoise, id);
        losses[i] = transmit_image(model, ds.images.at(id), cfg, noise).loss;
    });
    double sum = 0.0;
    for (double l : losses) sum += l;
    EvalResult res;
    res.mean_lc = sum / static_cast<double>(indices.size());
    res.mean_psnr = psnr_from_mse(res.mean_lc);
    return res;
}

double grad_norm_estimate(const JsccModel& model, const ChannelConfig& cfg, const ImageDataset& ds,
                          const std::vector<std::size_t>& indices, std::size_t budget,
                          std::uint64_t master_seed, int threads) {
    if (indices.empty()) throw std::invalid_argument("grad_norm_estimate: no images");
    if (budget == 0) throw std::invalid_argument("grad_norm_estimate: budget must be >= 1");
    std::vector<std::size_t> chosen;
    if (budget >= indices.size()) {
        chosen = indices;
    } else {
        // Evenly strided subsample: deterministic, stable across rounds.
        chosen.reserve(budget);
        for (std::size_t i = 0; i < budget; ++i) {
            chosen.push_back(indices[i * indices.size() / budget]);
        }
    }
    std::vector<std::vector<double>> grads(chosen.size());
    parallel_for(chosen.size(), threads, [&](std::size_t i) {
        std::size_t id = chosen[i];
        RngStream noise = derive_stream(master_seed, StreamTag::GradEval, id);
        grads[i] = transmit_loss_grad(model, ds.images.at(id), cfg, noise).grads.values;
    });
    std::size_t n = grads[0].size();
    std::vector<double> mean(n, 0.0);
    for (const auto& g : grads) {
        for (std::size_t j = 0; j < n; ++j) mean[j] += g[j];
    }
    double inv = 1.0 / static_cast<double>(grads.size());
    double norm_sq = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        double v = mean[j] * inv;
        norm_sq += v * v;
    }
    return norm_sq;
}

}  // namespace fedsfr
