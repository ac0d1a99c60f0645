#include "fedsfr/federation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>

#include "fedsfr/util.hpp"

namespace fedsfr {

namespace {

double staircase(double base, int t, double decay, int every) {
    // repeated multiplication instead of pow() so every platform agrees bitwise
    double v = base;
    for (int i = 0; i < t / every; ++i) v *= decay;
    return v;
}

double l2_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

void check_ascending_ids(const std::vector<int>& ids, const char* what) {
    for (std::size_t i = 1; i < ids.size(); ++i) {
        if (ids[i] <= ids[i - 1]) {
            throw std::invalid_argument(std::string(what) + " ids must be strictly ascending");
        }
    }
}

}  // namespace

LrPair lr_schedule(int t, const ScheduleConfig& cfg) {
    if (t < 0) throw std::invalid_argument("lr_schedule: negative round index");
    if (cfg.decay_every < 1) throw std::invalid_argument("lr_schedule: decay_every must be >= 1");
    LrPair out;
    if (cfg.mode == ScheduleMode::Staircase) {
        out.eta_c = staircase(cfg.eta_c0, t, cfg.decay, cfg.decay_every);
        out.eta_s = staircase(cfg.eta_s0, t, cfg.decay, cfg.decay_every);
    } else {
        if (cfg.horizon < 1) throw std::invalid_argument("lr_schedule: horizon must be >= 1");
        double alpha = staircase(cfg.alpha0, t, cfg.decay, cfg.decay_every);
        double rt = std::sqrt(static_cast<double>(cfg.horizon));
        out.eta_c = alpha / rt;
        out.eta_s = alpha / (rt * std::sqrt(rt));  // T^(3/4)
    }
    out.server_slower = out.eta_s < out.eta_c;
    return out;
}

RoundPlan sample_round(std::uint64_t master_seed, int k_total, int k_m, int k_o,
                       const ScheduleConfig& sched, Grouping grouping, std::size_t s_m,
                       std::size_t s_o, int t) {
    if (k_total < 1) throw std::invalid_argument("sample_round: no clients");
    if (k_m < 0 || k_o < 0) throw std::invalid_argument("sample_round: negative set size");
    if (k_m + k_o < 1) throw std::invalid_argument("sample_round: k_m + k_o must be >= 1");
    if (k_m + k_o > k_total) {
        throw std::invalid_argument("sample_round: k_m + k_o = " + std::to_string(k_m + k_o) +
                                    " exceeds the client count K = " + std::to_string(k_total));
    }
    if (s_o >= s_m) {
        throw std::invalid_argument("sample_round: the feature budget s_o = " + std::to_string(s_o) +
                                    " must be smaller than the model budget s_m = " +
                                    std::to_string(s_m));
    }

    RoundPlan plan;
    plan.t = t;
    plan.s_m = s_m;
    plan.s_o = s_o;
    LrPair lr = lr_schedule(t, sched);
    plan.eta_c = lr.eta_c;
    plan.eta_s = lr.eta_s;

    RngStream samp = derive_stream(master_seed, StreamTag::RoundSampling, static_cast<std::uint64_t>(t));
    std::vector<std::size_t> picked =
        samp.sample_without_replacement(static_cast<std::size_t>(k_total),
                                        static_cast<std::size_t>(k_m + k_o));

    if (grouping == Grouping::Capacity) {
        // per-round scalar capacity per sampled client; the best-connected
        // k_m get the model uplink. Draw in ascending-id order so thread
        // count and sample order cannot change the assignment.
        std::vector<int> ids(picked.begin(), picked.end());
        std::sort(ids.begin(), ids.end());
        RngStream cap = derive_stream(master_seed, StreamTag::Capacity, static_cast<std::uint64_t>(t));
        std::vector<std::pair<double, int>> ranked;
        ranked.reserve(ids.size());
        for (int id : ids) ranked.emplace_back(cap.uniform(), id);
        std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        for (std::size_t i = 0; i < ranked.size(); ++i) {
            (i < static_cast<std::size_t>(k_m) ? plan.a_m : plan.a_o).push_back(ranked[i].second);
        }
    } else {
        for (std::size_t i = 0; i < picked.size(); ++i) {
            (i < static_cast<std::size_t>(k_m) ? plan.a_m : plan.a_o)
                .push_back(static_cast<int>(picked[i]));
        }
    }
    std::sort(plan.a_m.begin(), plan.a_m.end());
    std::sort(plan.a_o.begin(), plan.a_o.end());
    return plan;
}

LocalOutcome local_update(const ClientState& client, const ImageDataset& ds,
                          const JsccModel& proto, const std::vector<double>& w,
                          const ChannelConfig& channel, double eta_c, int epochs,
                          int batch_size, RngStream& data_rng, RngStream& chan_rng) {
    if (client.train.empty()) {
        throw std::invalid_argument("local_update: client " + std::to_string(client.id) +
                                    " has no training data");
    }
    if (epochs < 1) throw std::invalid_argument("local_update: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("local_update: batch_size must be >= 1");
    if (!std::isfinite(eta_c) || eta_c < 0.0) {
        throw std::invalid_argument("local_update: bad learning rate");
    }

    const std::size_t n = w.size();
    JsccModel model = proto;
    model.load_values(w.data(), n);

    std::vector<double> cur = w;
    std::vector<double> grad(n);
    LocalOutcome out;

    auto schedule = minibatches(client.train.size(), static_cast<std::size_t>(batch_size), epochs,
                                data_rng);
    for (const auto& batch : schedule) {
        std::fill(grad.begin(), grad.end(), 0.0);
        double batch_loss = 0.0;
        for (std::size_t pos : batch) {
            const Tensor& image = ds.images[client.train[pos]];
            LossGrad lg = transmit_loss_grad(model, image, channel, chan_rng);
            batch_loss += lg.loss;
            for (std::size_t i = 0; i < n; ++i) grad[i] += lg.grads.values[i];
        }
        const double inv = 1.0 / static_cast<double>(batch.size());
        for (std::size_t i = 0; i < n; ++i) grad[i] *= inv;
        batch_loss *= inv;

        double gn = l2_norm(grad);
        if (!std::isfinite(gn)) {
            throw std::runtime_error("local_update: non-finite gradient on client " +
                                     std::to_string(client.id));
        }
        if (gn > out.max_grad_norm) out.max_grad_norm = gn;

        for (std::size_t i = 0; i < n; ++i) cur[i] -= eta_c * grad[i];
        model.load_values(cur.data(), n);
        out.loss_sum += batch_loss;
        out.steps += 1;
    }

    out.accum.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.accum[i] = w[i] - cur[i];
    out.final_theta.assign(cur.begin(), cur.begin() + static_cast<std::ptrdiff_t>(proto.theta_count()));
    return out;
}

FeatureSet make_feature_payload(const ClientState& client, const ImageDataset& ds,
                                const Network& encoder_proto,
                                const std::vector<double>& final_theta, std::size_t d,
                                std::size_t s_o, RngStream& rng) {
    if (client.public_subset.empty()) {
        throw std::invalid_argument("make_feature_payload: client " + std::to_string(client.id) +
                                    " has an empty public subset");
    }
    if (d == 0) throw std::invalid_argument("make_feature_payload: zero feature dimension");

    FeatureSet fs;
    fs.owner = client.id;
    std::size_t budget_vectors = s_o / d;
    std::size_t count = std::min(budget_vectors, client.public_subset.size());
    if (count == 0) {
        std::fprintf(stderr,
                     "warning: client %d feature budget %zu fits no length-%zu vector, sending "
                     "an empty payload\n",
                     client.id, s_o, d);
        return fs;
    }

    std::vector<std::size_t> positions = rng.sample_without_replacement(client.public_subset.size(), count);
    std::sort(positions.begin(), positions.end());

    Network encoder = encoder_proto;
    encoder.load_values(final_theta.data(), final_theta.size());
    for (std::size_t pos : positions) {
        std::size_t idx = client.public_subset[pos];
        Tensor y = encoder.forward(ds.images[idx]);
        fs.vectors.push_back(y.data);
        fs.source_ids.push_back(ds.ids[idx]);
    }
    return fs;
}

std::vector<double> aggregate(const std::vector<double>& w,
                              const std::vector<std::pair<std::size_t, std::size_t>>& boundaries,
                              std::vector<WeightedUpdate> updates, int k_total, int k_m) {
    if (k_total < 1) throw std::invalid_argument("aggregate: no clients");
    if (k_m == 0) {
        if (!updates.empty()) {
            throw std::invalid_argument("aggregate: got " + std::to_string(updates.size()) +
                                        " updates but k_m = 0");
        }
        return w;  // pure feature round, the weighted sum is empty
    }
    if (k_m < 0 || static_cast<std::size_t>(k_m) != updates.size()) {
        throw std::invalid_argument("aggregate: expected one update per model-uplink client (k_m = " +
                                    std::to_string(k_m) + ", got " +
                                    std::to_string(updates.size()) + ")");
    }
    std::sort(updates.begin(), updates.end(),
              [](const WeightedUpdate& a, const WeightedUpdate& b) { return a.client_id < b.client_id; });
    for (std::size_t i = 1; i < updates.size(); ++i) {
        if (updates[i].client_id == updates[i - 1].client_id) {
            throw std::invalid_argument("aggregate: duplicate update from client " +
                                        std::to_string(updates[i].client_id));
        }
    }

    const std::size_t n = w.size();
    std::vector<double> acc(n, 0.0);
    for (const WeightedUpdate& u : updates) {
        if (u.update == nullptr) throw std::invalid_argument("aggregate: null update");
        std::vector<double> dense = densify(*u.update, boundaries, n);
        for (std::size_t i = 0; i < n; ++i) acc[i] += u.p * dense[i];
    }
    const double scale = static_cast<double>(k_total) / static_cast<double>(k_m);
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = w[i] - scale * acc[i];
    return out;
}

std::vector<double> server_fr_update(const std::vector<double>& w_half, const JsccModel& proto,
                                     const std::vector<std::vector<double>>& pooled,
                                     const ChannelConfig& channel, double eta_s, int epochs,
                                     int batch_size, RngStream& data_rng, RngStream& noise_rng) {
    if (epochs < 0) throw std::invalid_argument("server_fr_update: negative epochs");
    if (batch_size < 1) throw std::invalid_argument("server_fr_update: batch_size must be >= 1");
    if (!std::isfinite(eta_s) || eta_s < 0.0) {
        throw std::invalid_argument("server_fr_update: bad learning rate");
    }
    if (pooled.empty() || epochs == 0 || eta_s == 0.0) return w_half;

    const std::size_t n = w_half.size();
    const std::size_t d = proto.feature_dim();
    for (const auto& v : pooled) {
        if (v.size() != d) {
            throw std::invalid_argument("server_fr_update: pooled vector of length " +
                                        std::to_string(v.size()) + ", expected " + std::to_string(d));
        }
    }

    JsccModel model = proto;
    model.load_values(w_half.data(), n);
    std::vector<double> cur = w_half;
    std::vector<double> grad(n);

    auto schedule = minibatches(pooled.size(), static_cast<std::size_t>(batch_size), epochs, data_rng);
    for (const auto& batch : schedule) {
        std::fill(grad.begin(), grad.end(), 0.0);
        for (std::size_t pos : batch) {
            Tensor y({d}, pooled[pos]);
            LossGrad lg = fr_loss_grad(model, y, channel, noise_rng);
            for (std::size_t i = 0; i < n; ++i) grad[i] += lg.grads.values[i];
        }
        const double inv = 1.0 / static_cast<double>(batch.size());
        for (std::size_t i = 0; i < n; ++i) cur[i] -= eta_s * (grad[i] * inv);
        model.load_values(cur.data(), n);
    }
    return cur;
}

std::vector<double> best_reference_update(const std::vector<double>& w,
                                          const std::vector<BestRefTerm>& terms, int k_total) {
    if (k_total < 1) throw std::invalid_argument("best_reference_update: no clients");
    if (terms.empty()) return w;
    const std::size_t n = w.size();
    std::vector<double> acc(n, 0.0);
    for (const BestRefTerm& term : terms) {
        if (term.accum == nullptr || term.memory == nullptr ||
            term.accum->size() != n || term.memory->size() != n) {
            throw std::invalid_argument("best_reference_update: malformed term");
        }
        for (std::size_t i = 0; i < n; ++i) {
            acc[i] += term.p * ((*term.accum)[i] + (*term.memory)[i]);
        }
    }
    const double scale = static_cast<double>(k_total) / static_cast<double>(terms.size());
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = w[i] - scale * acc[i];
    return out;
}

RoundOutcome run_round(GlobalState& state, const RoundPlan& plan,
                       std::vector<ClientState>& clients,
                       const std::vector<std::size_t>& train_pool, const TrainSetup& setup) {
    const auto t0 = std::chrono::steady_clock::now();
    const ImageDataset& ds = *setup.dataset;
    const JsccModel& proto = *setup.proto;
    const std::size_t n = state.w.values.size();
    const int k_total = static_cast<int>(clients.size());

    check_ascending_ids(plan.a_m, "plan.a_m");
    check_ascending_ids(plan.a_o, "plan.a_o");
    std::vector<int> participants(plan.a_m.size() + plan.a_o.size());
    std::merge(plan.a_m.begin(), plan.a_m.end(), plan.a_o.begin(), plan.a_o.end(),
               participants.begin());
    check_ascending_ids(participants, "participant");  // catches a_m/a_o overlap
    for (int id : participants) {
        if (id < 0 || id >= k_total) {
            throw std::invalid_argument("run_round: plan names unknown client " + std::to_string(id));
        }
    }

    // Theorem-side diagnostic at the broadcast weights, before anyone moves.
    double grad_norm_sq = 0.0;
    if (setup.grad_eval_images > 0) {
        JsccModel probe = proto;
        probe.load_values(state.w.values.data(), n);
        grad_norm_sq = grad_norm_estimate(probe, setup.channel, ds, train_pool,
                                          setup.grad_eval_images, state.master_seed, setup.threads);
    }

    // 1. every participant trains locally on the broadcast weights
    std::vector<LocalOutcome> outcomes(participants.size());
    parallel_for(participants.size(), setup.threads, [&](std::size_t i) {
        int k = participants[i];
        RngStream data_rng = derive_stream(state.master_seed, StreamTag::ClientData,
                                           static_cast<std::uint64_t>(k),
                                           static_cast<std::uint64_t>(plan.t));
        RngStream chan_rng = derive_stream(state.master_seed, StreamTag::ClientChannel,
                                           static_cast<std::uint64_t>(k),
                                           static_cast<std::uint64_t>(plan.t));
        outcomes[i] = local_update(clients[k], ds, proto, state.w.values, setup.channel,
                                   plan.eta_c, setup.client_epochs, setup.batch_size, data_rng,
                                   chan_rng);
    });
    std::vector<int> pos_of(clients.size(), -1);
    for (std::size_t i = 0; i < participants.size(); ++i) pos_of[participants[i]] = static_cast<int>(i);

    // 2. full-visibility reference step, before payload bookkeeping touches
    //    the memories
    std::vector<double> w_best;
    {
        std::vector<BestRefTerm> terms;
        terms.reserve(participants.size());
        for (std::size_t i = 0; i < participants.size(); ++i) {
            terms.push_back({clients[participants[i]].p, &outcomes[i].accum,
                             &clients[participants[i]].memory.residual});
        }
        w_best = best_reference_update(state.w.values, terms, k_total);
    }

    // 3. uplink payloads
    const auto& boundaries = state.w.boundaries;
    std::vector<std::size_t> model_budget = allocate_budget(boundaries, plan.s_m);
    std::vector<std::size_t> zero_budget = allocate_budget(boundaries, 0);

    std::vector<SparseUpdate> round_updates;
    std::vector<WeightedUpdate> weighted;
    round_updates.reserve(plan.a_m.size());
    for (int k : plan.a_m) {
        const LocalOutcome& oc = outcomes[pos_of[k]];
        LocalUpdateResult r =
            build_local_update(oc.accum, clients[k].memory, boundaries, model_budget, plan.t);
        clients[k].memory.residual = std::move(r.residual);
        round_updates.push_back(std::move(r.update));
    }
    for (std::size_t i = 0; i < plan.a_m.size(); ++i) {
        weighted.push_back({plan.a_m[i], clients[plan.a_m[i]].p, &round_updates[i]});
    }

    std::vector<FeatureSet> feature_payloads;
    feature_payloads.reserve(plan.a_o.size());
    for (int k : plan.a_o) {
        const LocalOutcome& oc = outcomes[pos_of[k]];
        // the whole accumulated step enters the memory (nothing was uplinked
        // as a model payload)
        LocalUpdateResult r =
            build_local_update(oc.accum, clients[k].memory, boundaries, zero_budget, plan.t);
        clients[k].memory.residual = std::move(r.residual);
        RngStream select = derive_stream(state.master_seed, StreamTag::FeatureSelect,
                                         static_cast<std::uint64_t>(k),
                                         static_cast<std::uint64_t>(plan.t));
        feature_payloads.push_back(make_feature_payload(clients[k], ds, proto.encoder,
                                                        oc.final_theta, proto.feature_dim(),
                                                        plan.s_o, select));
    }

    // 4. sparse aggregation
    std::vector<double> w_half = aggregate(state.w.values, boundaries, weighted, k_total,
                                           static_cast<int>(plan.a_m.size()));

    // 5. evaluation before the server pass
    JsccModel eval_model = proto;
    eval_model.load_values(w_half.data(), n);
    EvalResult pre = evaluate_model(eval_model, setup.channel, ds, setup.partition->test,
                                    state.master_seed, setup.threads);

    // 6. server restoration pass over the pooled features (ascending owner)
    std::vector<std::vector<double>> pooled;
    for (const FeatureSet& fs : feature_payloads) {
        for (const auto& v : fs.vectors) pooled.push_back(v);
    }
    const bool fr_active =
        !pooled.empty() && setup.server_epochs > 0 && plan.eta_s > 0.0;
    std::vector<double> w_next;
    EvalResult post;
    if (fr_active) {
        RngStream fr_data = derive_stream(state.master_seed, StreamTag::ServerFrData,
                                          static_cast<std::uint64_t>(plan.t));
        RngStream fr_noise = derive_stream(state.master_seed, StreamTag::ServerFrNoise,
                                           static_cast<std::uint64_t>(plan.t));
        w_next = server_fr_update(w_half, proto, pooled, setup.channel, plan.eta_s,
                                  setup.server_epochs, setup.server_batch_size, fr_data, fr_noise);
        eval_model.load_values(w_next.data(), n);
        post = evaluate_model(eval_model, setup.channel, ds, setup.partition->test,
                              state.master_seed, setup.threads);
    } else {
        w_next = w_half;
        post = pre;
    }

    // 7. memory-alignment diagnostic over every client's post-update memory,
    //    taken before the feature senders are cleared
    std::vector<double> a(n, 0.0);
    for (const ClientState& c : clients) {
        for (std::size_t i = 0; i < n; ++i) a[i] += c.p * c.memory.residual[i];
    }
    std::vector<double> b(n);
    for (std::size_t i = 0; i < n; ++i) b[i] = w_half[i] - w_next[i];
    EpsilonEstimate eps = epsilon_hat(a, b);

    // 8. feature senders' updates are in the global model now; drop them
    for (int k : plan.a_o) reset_memory(clients[k].memory);

    double mean_mem_sq = 0.0;
    for (const ClientState& c : clients) {
        double s = 0.0;
        for (double x : c.memory.residual) s += x * x;
        mean_mem_sq += s;
    }
    mean_mem_sq /= static_cast<double>(clients.size());

    // 9. advance the global state and the running peaks
    double total_loss = 0.0;
    int total_steps = 0;
    for (const LocalOutcome& oc : outcomes) {
        total_loss += oc.loss_sum;
        total_steps += oc.steps;
        if (oc.max_grad_norm > state.grad_norm_peak) state.grad_norm_peak = oc.max_grad_norm;
        if (oc.steps > state.steps_peak) state.steps_peak = oc.steps;
    }

    RoundOutcome out;
    double dist_sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double dd = w_best[i] - w_next[i];
        dist_sq += dd * dd;
    }
    out.best_ref_dist = std::sqrt(dist_sq);

    state.w.values = std::move(w_next);
    state.t = plan.t + 1;

    RoundMetrics& m = out.metrics;
    m.t = plan.t;
    m.eta_c = plan.eta_c;
    m.eta_s = plan.eta_s;
    m.train_lc = total_steps > 0 ? total_loss / static_cast<double>(total_steps) : 0.0;
    m.test_lc_pre_fr = pre.mean_lc;
    m.test_lc_post_fr = post.mean_lc;
    m.test_psnr_pre_fr = pre.mean_psnr;
    m.test_psnr_post_fr = post.mean_psnr;
    m.fr_improved = post.mean_lc < pre.mean_lc;
    m.epsilon_hat = eps.epsilon;
    m.cos_ab = eps.cosine;
    m.mean_mem_sq = mean_mem_sq;
    double delta = static_cast<double>(plan.s_m) / static_cast<double>(n);
    m.lemma2_bound_value =
        lemma2_bound(lr_schedule(0, setup.schedule).eta_c, state.steps_peak, state.grad_norm_peak, delta);
    m.grad_norm_sq = grad_norm_sq;
    m.wall_ms = 0.0;  // the log must be byte-identical across reruns

    out.elapsed_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

TrainResult run_training(const TrainSetup& setup, const RoundSink& sink) {
    if (setup.dataset == nullptr || setup.partition == nullptr || setup.proto == nullptr) {
        throw std::invalid_argument("run_training: dataset, partition, and proto are required");
    }
    TrainSetup eff = setup;
    if (eff.algorithm == Algorithm::Dsgd) {
        // the baseline: every participant sends a sparse model update and the
        // server never runs its own pass
        eff.k_m = setup.k_m + setup.k_o;
        eff.k_o = 0;
        eff.server_epochs = 0;
    }

    const int k_total = static_cast<int>(eff.partition->clients.size());
    if (k_total < 1) throw std::invalid_argument("run_training: empty partition");
    if (eff.k_m < 0 || eff.k_o < 0 || eff.k_m + eff.k_o < 1) {
        throw std::invalid_argument("run_training: need at least one participant per round");
    }
    if (eff.k_m + eff.k_o > k_total) {
        throw std::invalid_argument("run_training: k_m + k_o = " + std::to_string(eff.k_m + eff.k_o) +
                                    " exceeds the client count K = " + std::to_string(k_total));
    }
    if (eff.rounds < 1) throw std::invalid_argument("run_training: rounds must be >= 1");
    if (eff.client_epochs < 1) throw std::invalid_argument("run_training: client_epochs must be >= 1");
    if (eff.server_epochs < 0) throw std::invalid_argument("run_training: negative server_epochs");
    if (eff.batch_size < 1 || eff.server_batch_size < 1) {
        throw std::invalid_argument("run_training: batch sizes must be >= 1");
    }
    if (eff.threads < 1) throw std::invalid_argument("run_training: threads must be >= 1");

    JsccModel model = *eff.proto;
    {
        RngStream init_rng = derive_stream(eff.master_seed, StreamTag::Init);
        model.init_params(init_rng);
    }
    GlobalState state;
    state.w = model.flatten();
    state.t = 0;
    state.master_seed = eff.master_seed;
    const std::size_t n = state.w.values.size();

    if (eff.s_m < 1 || eff.s_m > n) {
        throw std::invalid_argument("run_training: s_m = " + std::to_string(eff.s_m) +
                                    " must be in [1, " + std::to_string(n) + "]");
    }
    if (eff.s_o >= eff.s_m) {
        throw std::invalid_argument("run_training: s_o = " + std::to_string(eff.s_o) +
                                    " must be smaller than s_m = " + std::to_string(eff.s_m));
    }

    std::vector<ClientState> clients;
    clients.reserve(eff.partition->clients.size());
    double p_sum = 0.0;
    for (std::size_t k = 0; k < eff.partition->clients.size(); ++k) {
        const ClientSplit& split = eff.partition->clients[k];
        ClientState c;
        c.id = static_cast<int>(k);
        c.train = split.train;
        c.public_subset = split.public_subset;
        c.memory = ErrorMemory::zeros(n, c.id);
        c.p = split.weight;
        p_sum += c.p;
        clients.push_back(std::move(c));
    }
    if (std::abs(p_sum - 1.0) > 1e-12) {
        throw std::invalid_argument("run_training: client weights sum to " + fmt_double(p_sum) +
                                    ", expected 1");
    }
    if (eff.partition->test.empty()) {
        throw std::invalid_argument("run_training: the held-out test split is empty");
    }

    std::vector<std::size_t> train_pool;
    for (const ClientState& c : clients) {
        train_pool.insert(train_pool.end(), c.train.begin(), c.train.end());
    }
    std::sort(train_pool.begin(), train_pool.end());

    TrainResult result;
    for (int t = 0; t < eff.rounds; ++t) {
        RoundPlan plan = sample_round(eff.master_seed, k_total, eff.k_m, eff.k_o, eff.schedule,
                                      eff.grouping, eff.s_m, eff.s_o, t);
        RoundOutcome oc = run_round(state, plan, clients, train_pool, eff);
        result.log.push_back(oc.metrics);
        result.best_ref_dist.push_back(oc.best_ref_dist);
        if (sink) sink(oc.metrics, oc.best_ref_dist);
    }
    result.final_w = std::move(state.w.values);
    result.grad_norm_peak = state.grad_norm_peak;
    result.steps_peak = state.steps_peak;
    return result;
}

}  // namespace fedsfr
