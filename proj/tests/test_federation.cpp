#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>

#include "fedsfr/federation.hpp"
#include "fedsfr/metrics.hpp"

using namespace fedsfr;

namespace {

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

bool all_zero(const std::vector<double>& v) {
    for (double x : v) {
        if (x != 0.0) return false;
    }
    return true;
}

// A fully linear 4 -> 4 -> 4 autoencoder; no relu kinks, so the
// finite-difference oracle is valid everywhere.
JsccModel linear_stub() {
    Network enc({LayerSpec::dense(4, 4)}, {4});
    Network dec({LayerSpec::dense(4, 4)}, {4});
    return JsccModel(std::move(enc), std::move(dec));
}

// Small shared world: 60 blob images split across 4 clients, 20 held out.
struct World {
    ImageDataset ds;
    Partition part;
    JsccModel proto;
    TrainSetup setup;
};

World make_world(std::uint64_t seed) {
    World w;
    RngStream synth = derive_stream(seed, StreamTag::Synth);
    w.ds = synth_dataset(synth, 60, {1, 4, 4}, SynthKind::GaussianBlobs);
    RngStream part = derive_stream(seed, StreamTag::Partition);
    w.part = partition_dataset(w.ds, PartitionSpec{4, 10, 4}, part);
    w.proto = make_autoencoder({1, 4, 4}, {3}, 4);

    TrainSetup& s = w.setup;
    s.dataset = &w.ds;
    s.partition = &w.part;
    s.proto = &w.proto;
    s.channel.snr_db = 20.0;
    s.k_m = 1;
    s.k_o = 1;
    s.s_m = w.proto.param_count() * 2 / 5;
    s.s_o = 5 * w.proto.feature_dim();
    s.rounds = 3;
    s.client_epochs = 2;
    s.server_epochs = 2;
    s.batch_size = 5;
    s.server_batch_size = 8;
    s.schedule.eta_c0 = 0.05;
    s.schedule.eta_s0 = 0.005;
    s.master_seed = seed;
    s.grad_eval_images = 8;
    return w;
}

std::string log_bytes(const MetricsLog& log) {
    std::string out = csv_header();
    out += "\n";
    for (const RoundMetrics& m : log) {
        out += csv_row(m);
        out += "\n";
    }
    return out;
}

}  // namespace

TEST_CASE("staircase schedule decays by 0.8 every 10 rounds") {
    ScheduleConfig cfg;
    cfg.eta_c0 = 0.01;
    cfg.eta_s0 = 0.001;
    for (int t = 0; t < 10; ++t) {
        LrPair lr = lr_schedule(t, cfg);
        CHECK(lr.eta_c == 0.01);
        CHECK(lr.eta_s == 0.001);
        CHECK(lr.server_slower);
    }
    CHECK(lr_schedule(10, cfg).eta_c == doctest::Approx(0.008).epsilon(1e-15));
    CHECK(lr_schedule(10, cfg).eta_s == doctest::Approx(0.0008).epsilon(1e-15));
    CHECK(lr_schedule(25, cfg).eta_c == doctest::Approx(0.01 * 0.8 * 0.8).epsilon(1e-15));
    CHECK_THROWS_AS(lr_schedule(-1, cfg), std::invalid_argument);
    ScheduleConfig bad = cfg;
    bad.decay_every = 0;
    CHECK_THROWS_AS(lr_schedule(0, bad), std::invalid_argument);
}

TEST_CASE("theory schedule scales rates with the horizon") {
    ScheduleConfig cfg;
    cfg.mode = ScheduleMode::Theory;
    cfg.alpha0 = 1.0;
    cfg.horizon = 10000;
    LrPair lr = lr_schedule(0, cfg);
    CHECK(lr.eta_c == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(lr.eta_s == doctest::Approx(0.001).epsilon(1e-12));
    CHECK(lr.server_slower);
    // the alpha staircase applies on top
    CHECK(lr_schedule(10, cfg).eta_c == doctest::Approx(0.008).epsilon(1e-12));
}

TEST_CASE("sample_round draws disjoint sets of the right sizes") {
    ScheduleConfig sched;
    RoundPlan plan = sample_round(7, 5, 2, 1, sched, Grouping::Capacity, 100, 10, 0);
    CHECK(plan.a_m.size() == 2);
    CHECK(plan.a_o.size() == 1);
    std::set<int> seen(plan.a_m.begin(), plan.a_m.end());
    seen.insert(plan.a_o.begin(), plan.a_o.end());
    CHECK(seen.size() == 3);
    for (int id : seen) {
        CHECK(id >= 0);
        CHECK(id < 5);
    }
    CHECK(std::is_sorted(plan.a_m.begin(), plan.a_m.end()));
    CHECK(std::is_sorted(plan.a_o.begin(), plan.a_o.end()));
    CHECK(plan.eta_c == sched.eta_c0);

    RoundPlan fedavg_shape = sample_round(7, 5, 3, 0, sched, Grouping::Capacity, 100, 10, 0);
    CHECK(fedavg_shape.a_o.empty());
    CHECK(fedavg_shape.a_m.size() == 3);
}

TEST_CASE("sample_round rejects impossible plans") {
    ScheduleConfig sched;
    CHECK_THROWS_WITH_AS(sample_round(7, 5, 4, 2, sched, Grouping::Capacity, 100, 10, 0),
                         doctest::Contains("exceeds the client count"), std::invalid_argument);
    CHECK_THROWS_AS(sample_round(7, 5, 0, 0, sched, Grouping::Capacity, 100, 10, 0),
                    std::invalid_argument);
    // the feature budget must stay below the model budget
    CHECK_THROWS_AS(sample_round(7, 5, 2, 1, sched, Grouping::Capacity, 10, 10, 0),
                    std::invalid_argument);
}

TEST_CASE("sample_round is deterministic and varies by round") {
    ScheduleConfig sched;
    RoundPlan a = sample_round(11, 10, 3, 2, sched, Grouping::Capacity, 100, 10, 4);
    RoundPlan b = sample_round(11, 10, 3, 2, sched, Grouping::Capacity, 100, 10, 4);
    CHECK(a.a_m == b.a_m);
    CHECK(a.a_o == b.a_o);

    bool any_differ = false;
    for (int t = 0; t < 20; ++t) {
        RoundPlan p = sample_round(11, 10, 3, 2, sched, Grouping::Capacity, 100, 10, t);
        if (p.a_m != a.a_m || p.a_o != a.a_o) any_differ = true;
    }
    CHECK(any_differ);

    // the two grouping policies disagree somewhere
    bool split_differs = false;
    for (int t = 0; t < 20; ++t) {
        RoundPlan cap = sample_round(11, 10, 3, 2, sched, Grouping::Capacity, 100, 10, t);
        RoundPlan rnd = sample_round(11, 10, 3, 2, sched, Grouping::RandomSplit, 100, 10, t);
        std::set<int> cap_all(cap.a_m.begin(), cap.a_m.end());
        cap_all.insert(cap.a_o.begin(), cap.a_o.end());
        std::set<int> rnd_all(rnd.a_m.begin(), rnd.a_m.end());
        rnd_all.insert(rnd.a_o.begin(), rnd.a_o.end());
        CHECK(cap_all == rnd_all);  // same draw, different split
        if (cap.a_m != rnd.a_m) split_differs = true;
    }
    CHECK(split_differs);
}

TEST_CASE("every client is picked at the uniform rate") {
    ScheduleConfig sched;
    const int k = 10, k_m = 3, k_o = 2, draws = 100000;
    std::vector<int> hits(k, 0);
    for (int t = 0; t < draws; ++t) {
        RoundPlan p = sample_round(123, k, k_m, k_o, sched, Grouping::Capacity, 100, 10, t);
        for (int id : p.a_m) hits[id]++;
        for (int id : p.a_o) hits[id]++;
    }
    const double expect = static_cast<double>(k_m + k_o) / k;
    for (int id = 0; id < k; ++id) {
        double freq = static_cast<double>(hits[id]) / draws;
        CHECK(std::abs(freq - expect) / expect < 0.01);
    }
}

TEST_CASE("local_update with zero rate leaves the weights alone") {
    World w = make_world(21);
    JsccModel model = w.proto;
    RngStream init = derive_stream(3, StreamTag::Init);
    model.init_params(init);
    FlatParams flat = model.flatten();

    ClientState client{0, w.part.clients[0].train, w.part.clients[0].public_subset,
                       ErrorMemory::zeros(flat.size(), 0), 0.25};
    RngStream data = derive_stream(3, StreamTag::ClientData, 0, 0);
    RngStream chan = derive_stream(3, StreamTag::ClientChannel, 0, 0);
    LocalOutcome oc = local_update(client, w.ds, w.proto, flat.values, w.setup.channel, 0.0, 2, 5,
                                   data, chan);
    CHECK(all_zero(oc.accum));
    CHECK(oc.steps == 4);  // 10 images, batch 5, 2 epochs
    std::vector<double> theta(flat.values.begin(),
                              flat.values.begin() + static_cast<std::ptrdiff_t>(w.proto.theta_count()));
    CHECK(bitwise_equal(oc.final_theta, theta));
}

TEST_CASE("a single local step matches the finite-difference oracle") {
    JsccModel stub = linear_stub();
    RngStream init = derive_stream(5, StreamTag::Init);
    stub.init_params(init);
    FlatParams base = stub.flatten();

    // one unit-norm sample, noiseless channel: the loss is a deterministic
    // function of the parameters
    std::vector<double> raw = {0.6, -0.2, 0.4, 0.1};
    double nrm = std::sqrt(0.36 + 0.04 + 0.16 + 0.01);
    for (double& v : raw) v /= nrm;
    ImageDataset ds;
    ds.images.push_back(Tensor({4}, raw));
    ds.ids.push_back(0);
    ds.split = "train";

    ChannelConfig clean;
    clean.snr_db = std::numeric_limits<double>::infinity();
    ClientState client{0, {0}, {0}, ErrorMemory::zeros(base.size(), 0), 1.0};
    const double eta = 0.01;
    RngStream data = derive_stream(5, StreamTag::ClientData, 0, 0);
    RngStream chan = derive_stream(5, StreamTag::ClientChannel, 0, 0);
    LocalOutcome oc = local_update(client, ds, stub, base.values, clean, eta, 1, 1, data, chan);
    CHECK(oc.steps == 1);
    CHECK(oc.max_grad_norm > 0.0);

    std::vector<std::size_t> coords(base.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    RngStream unused = derive_stream(5, StreamTag::GradEval);
    std::vector<double> fd = finite_diff_at(
        base,
        [&](const FlatParams& p) {
            JsccModel probe = linear_stub();
            probe.load_flat(p);
            return transmit_image(probe, ds.images[0], clean, unused).loss;
        },
        coords);

    double diff = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < base.size(); ++i) {
        double analytic = oc.accum[i] / eta;
        diff += (analytic - fd[i]) * (analytic - fd[i]);
        na += analytic * analytic;
        nb += fd[i] * fd[i];
    }
    CHECK(std::sqrt(diff) / std::sqrt(std::max(na, nb)) < 1e-6);
}

TEST_CASE("local_update accumulates exactly w minus the final weights") {
    World w = make_world(22);
    JsccModel model = w.proto;
    RngStream init = derive_stream(9, StreamTag::Init);
    model.init_params(init);
    FlatParams flat = model.flatten();

    ClientState client{1, w.part.clients[1].train, w.part.clients[1].public_subset,
                       ErrorMemory::zeros(flat.size(), 1), 0.25};
    RngStream data = derive_stream(9, StreamTag::ClientData, 1, 0);
    RngStream chan = derive_stream(9, StreamTag::ClientChannel, 1, 0);
    LocalOutcome oc = local_update(client, w.ds, w.proto, flat.values, w.setup.channel, 0.05, 2, 5,
                                   data, chan);
    // w - accum must reproduce the final theta slice bit for bit
    for (std::size_t i = 0; i < w.proto.theta_count(); ++i) {
        CHECK(flat.values[i] - oc.accum[i] == oc.final_theta[i]);
    }
    CHECK(oc.max_grad_norm > 0.0);

    ClientState starved{2, {}, {}, ErrorMemory::zeros(flat.size(), 2), 0.0};
    CHECK_THROWS_WITH_AS(local_update(starved, w.ds, w.proto, flat.values, w.setup.channel, 0.05,
                                      1, 5, data, chan),
                         doctest::Contains("no training data"), std::invalid_argument);
}

TEST_CASE("feature payloads respect the vector budget") {
    World w = make_world(23);
    JsccModel model = w.proto;
    RngStream init = derive_stream(13, StreamTag::Init);
    model.init_params(init);
    FlatParams flat = model.flatten();
    std::vector<double> theta(flat.values.begin(),
                              flat.values.begin() + static_cast<std::ptrdiff_t>(w.proto.theta_count()));
    const std::size_t d = w.proto.feature_dim();
    ClientState client{0, w.part.clients[0].train, w.part.clients[0].public_subset,
                       ErrorMemory::zeros(flat.size(), 0), 0.25};

    RngStream r1 = derive_stream(13, StreamTag::FeatureSelect, 0, 0);
    FeatureSet all = make_feature_payload(client, w.ds, w.proto.encoder, theta, d, 100 * d, r1);
    CHECK(all.owner == 0);
    CHECK(all.vectors.size() == 4);  // |P_k| = 4 caps the budget
    CHECK(all.source_ids.size() == 4);
    for (const auto& v : all.vectors) CHECK(v.size() == d);

    RngStream r2 = derive_stream(13, StreamTag::FeatureSelect, 0, 0);
    FeatureSet one = make_feature_payload(client, w.ds, w.proto.encoder, theta, d, d + 3, r2);
    CHECK(one.vectors.size() == 1);

    RngStream r3 = derive_stream(13, StreamTag::FeatureSelect, 0, 0);
    FeatureSet none = make_feature_payload(client, w.ds, w.proto.encoder, theta, d, d - 1, r3);
    CHECK(none.vectors.empty());

    // vectors come from the owner's public subset, encoded with final_theta
    Network enc = w.proto.encoder;
    enc.load_values(theta.data(), theta.size());
    std::set<std::size_t> pool(client.public_subset.begin(), client.public_subset.end());
    for (std::size_t i = 0; i < all.vectors.size(); ++i) {
        CHECK(pool.count(all.source_ids[i]) == 1);  // synth ids equal indices
        Tensor y = enc.forward(w.ds.images[all.source_ids[i]]);
        CHECK(bitwise_equal(all.vectors[i], y.data));
    }

    RngStream r4 = derive_stream(13, StreamTag::FeatureSelect, 0, 0);
    FeatureSet again = make_feature_payload(client, w.ds, w.proto.encoder, theta, d, 100 * d, r4);
    CHECK(again.source_ids == all.source_ids);
    for (std::size_t i = 0; i < all.vectors.size(); ++i) {
        CHECK(bitwise_equal(again.vectors[i], all.vectors[i]));
    }

    ClientState empty{3, {0}, {}, ErrorMemory::zeros(flat.size(), 3), 0.25};
    CHECK_THROWS_WITH_AS(make_feature_payload(empty, w.ds, w.proto.encoder, theta, d, 100 * d, r1),
                         doctest::Contains("empty public subset"), std::invalid_argument);
}

TEST_CASE("aggregate applies the scaled weighted sum") {
    std::vector<std::pair<std::size_t, std::size_t>> bounds = {{0, 2}};
    SparseUpdate g;
    g.layers.push_back({{0}, {1.0}});
    g.total_nnz = 1;

    std::vector<double> w = {0.0, 0.0};
    std::vector<double> out = aggregate(w, bounds, {{0, 0.5, &g}}, 2, 1);
    CHECK(out[0] == -1.0);  // 0 - (2/1) * 0.5 * 1
    CHECK(out[1] == 0.0);

    SparseUpdate zero;
    zero.layers.push_back({{}, {}});
    std::vector<double> w2 = {0.25, -1.5};
    std::vector<double> same = aggregate(w2, bounds, {{0, 0.5, &zero}, {1, 0.5, &zero}}, 4, 2);
    CHECK(bitwise_equal(same, w2));

    CHECK(bitwise_equal(aggregate(w2, bounds, {}, 4, 0), w2));
    CHECK_THROWS_AS(aggregate(w2, bounds, {{0, 0.5, &g}}, 4, 0), std::invalid_argument);
    CHECK_THROWS_AS(aggregate(w2, bounds, {{0, 0.5, &g}}, 4, 2), std::invalid_argument);
    CHECK_THROWS_AS(aggregate(w2, bounds, {{0, 0.5, &g}, {0, 0.5, &g}}, 4, 2),
                    std::invalid_argument);
}

TEST_CASE("aggregate matches a hand-rolled naive loop bitwise") {
    RngStream rng = derive_stream(31, StreamTag::GradEval);
    std::vector<std::pair<std::size_t, std::size_t>> bounds = {{0, 7}, {7, 5}};
    const std::size_t n = 12;
    const int k_total = 6, k_m = 3;

    std::vector<double> w(n);
    for (double& x : w) x = rng.normal();

    std::vector<std::vector<double>> dense(k_m, std::vector<double>(n, 0.0));
    std::vector<SparseUpdate> ups(k_m);
    std::vector<double> ps = {0.2, 0.5, 0.3};
    for (int c = 0; c < k_m; ++c) {
        std::vector<double> v(n);
        for (double& x : v) x = rng.normal();
        auto budget = allocate_budget(bounds, 6);
        SparsifyResult sr = top_s_sparsify(v, bounds, budget);
        ups[c] = sr.sparse;
        for (std::size_t l = 0; l < bounds.size(); ++l) {
            for (std::size_t j = 0; j < ups[c].layers[l].indices.size(); ++j) {
                dense[c][bounds[l].first + ups[c].layers[l].indices[j]] =
                    ups[c].layers[l].values[j];
            }
        }
    }

    std::vector<WeightedUpdate> weighted = {{2, ps[2], &ups[2]}, {0, ps[0], &ups[0]},
                                            {1, ps[1], &ups[1]}};
    std::vector<double> got = aggregate(w, bounds, weighted, k_total, k_m);

    std::vector<double> want(n);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int c = 0; c < k_m; ++c) acc += ps[c] * dense[c][i];
        want[i] = w[i] - (static_cast<double>(k_total) / k_m) * acc;
    }
    CHECK(bitwise_equal(got, want));
}

TEST_CASE("server pass is the identity when disabled") {
    World w = make_world(24);
    JsccModel model = w.proto;
    RngStream init = derive_stream(17, StreamTag::Init);
    model.init_params(init);
    FlatParams flat = model.flatten();

    std::vector<std::vector<double>> pool;
    RngStream data = derive_stream(17, StreamTag::ServerFrData, 0);
    RngStream noise = derive_stream(17, StreamTag::ServerFrNoise, 0);
    CHECK(bitwise_equal(server_fr_update(flat.values, w.proto, pool, w.setup.channel, 0.01, 3, 4,
                                         data, noise),
                        flat.values));

    pool.push_back(std::vector<double>(w.proto.feature_dim(), 0.3));
    CHECK(bitwise_equal(server_fr_update(flat.values, w.proto, pool, w.setup.channel, 0.01, 0, 4,
                                         data, noise),
                        flat.values));
    CHECK(bitwise_equal(server_fr_update(flat.values, w.proto, pool, w.setup.channel, 0.0, 3, 4,
                                         data, noise),
                        flat.values));

    pool.push_back(std::vector<double>(w.proto.feature_dim() + 1, 0.3));
    CHECK_THROWS_AS(server_fr_update(flat.values, w.proto, pool, w.setup.channel, 0.01, 3, 4, data,
                                     noise),
                    std::invalid_argument);
}

TEST_CASE("a single server step matches a hand-stepped gradient") {
    JsccModel stub = linear_stub();
    RngStream init = derive_stream(19, StreamTag::Init);
    stub.init_params(init);
    FlatParams flat = stub.flatten();

    std::vector<std::vector<double>> pool = {{0.5, -0.25, 0.75, 0.1}};
    ChannelConfig chan;
    chan.snr_db = 20.0;
    const double eta = 0.02;

    RngStream data = derive_stream(19, StreamTag::ServerFrData, 0);
    RngStream noise = derive_stream(19, StreamTag::ServerFrNoise, 0);
    std::vector<double> got =
        server_fr_update(flat.values, stub, pool, chan, eta, 1, 4, data, noise);

    RngStream noise2 = derive_stream(19, StreamTag::ServerFrNoise, 0);
    JsccModel probe = linear_stub();
    probe.load_flat(flat);
    LossGrad lg = fr_loss_grad(probe, Tensor({4}, pool[0]), chan, noise2);
    for (std::size_t i = 0; i < flat.size(); ++i) {
        CHECK(got[i] == flat.values[i] - eta * lg.grads.values[i]);
    }
}

TEST_CASE("best_reference_update folds accumulators and memories together") {
    std::vector<double> w = {1.0, 2.0, 3.0};
    std::vector<double> a0 = {0.1, 0.0, -0.2};
    std::vector<double> a1 = {0.0, 0.4, 0.0};
    std::vector<double> m0 = {0.0, 0.0, 0.0};
    std::vector<double> m1 = {0.05, 0.0, 0.1};

    std::vector<double> out =
        best_reference_update(w, {{0.5, &a0, &m0}, {0.5, &a1, &m1}}, 4);
    // scale = 4/2 = 2
    CHECK(out[0] == doctest::Approx(1.0 - 2 * (0.5 * 0.1 + 0.5 * 0.05)));
    CHECK(out[1] == doctest::Approx(2.0 - 2 * (0.5 * 0.4)));
    CHECK(out[2] == doctest::Approx(3.0 - 2 * (0.5 * -0.2 + 0.5 * 0.1)));

    CHECK(bitwise_equal(best_reference_update(w, {}, 4), w));

    // with zero memories, every client included, and uniform weights it is a
    // plain unsparsified averaging step
    std::vector<double> out2 =
        best_reference_update(w, {{0.5, &a0, &m0}, {0.5, &a1, &m0}}, 2);
    for (std::size_t i = 0; i < w.size(); ++i) {
        CHECK(out2[i] == w[i] - (0.5 * a0[i] + 0.5 * a1[i]));
    }
}

TEST_CASE("with the full budget and no feature clients the loop is plain FedAvg") {
    World w = make_world(25);
    TrainSetup setup = w.setup;
    setup.k_m = 2;
    setup.k_o = 0;
    setup.server_epochs = 0;
    setup.s_m = w.proto.param_count();
    setup.s_o = 0;
    setup.rounds = 20;
    setup.grad_eval_images = 0;

    TrainResult run = run_training(setup);

    // independent plain-FedAvg loop: dense accumulator averaging, no
    // compression module, no memories
    JsccModel model = w.proto;
    RngStream init = derive_stream(setup.master_seed, StreamTag::Init);
    model.init_params(init);
    std::vector<double> weights = model.flatten().values;
    const std::size_t n = weights.size();
    const int k_total = static_cast<int>(w.part.clients.size());

    for (int t = 0; t < setup.rounds; ++t) {
        RoundPlan plan = sample_round(setup.master_seed, k_total, setup.k_m, setup.k_o,
                                      setup.schedule, setup.grouping, setup.s_m, setup.s_o, t);
        std::vector<double> delta(n, 0.0);
        for (int k : plan.a_m) {
            ClientState client{k, w.part.clients[k].train, w.part.clients[k].public_subset,
                               ErrorMemory::zeros(n, k), w.part.clients[k].weight};
            RngStream data = derive_stream(setup.master_seed, StreamTag::ClientData,
                                           static_cast<std::uint64_t>(k),
                                           static_cast<std::uint64_t>(t));
            RngStream chan = derive_stream(setup.master_seed, StreamTag::ClientChannel,
                                           static_cast<std::uint64_t>(k),
                                           static_cast<std::uint64_t>(t));
            LocalOutcome oc = local_update(client, w.ds, w.proto, weights, setup.channel,
                                           plan.eta_c, setup.client_epochs, setup.batch_size,
                                           data, chan);
            for (std::size_t i = 0; i < n; ++i) delta[i] += client.p * oc.accum[i];
        }
        const double scale = static_cast<double>(k_total) / static_cast<double>(plan.a_m.size());
        for (std::size_t i = 0; i < n; ++i) weights[i] -= scale * delta[i];
    }

    CHECK(bitwise_equal(run.final_w, weights));
}

TEST_CASE("feature senders end every round with their memory cleared") {
    World w = make_world(26);
    TrainSetup setup = w.setup;
    setup.rounds = 1;

    JsccModel model = w.proto;
    RngStream init = derive_stream(setup.master_seed, StreamTag::Init);
    model.init_params(init);

    GlobalState state;
    state.w = model.flatten();
    state.master_seed = setup.master_seed;
    const std::size_t n = state.w.values.size();

    std::vector<ClientState> clients;
    for (std::size_t k = 0; k < w.part.clients.size(); ++k) {
        clients.push_back({static_cast<int>(k), w.part.clients[k].train,
                           w.part.clients[k].public_subset, ErrorMemory::zeros(n, static_cast<int>(k)),
                           w.part.clients[k].weight});
    }
    std::vector<std::size_t> pool;
    for (const auto& c : clients) pool.insert(pool.end(), c.train.begin(), c.train.end());
    std::sort(pool.begin(), pool.end());

    RoundPlan plan = sample_round(setup.master_seed, static_cast<int>(clients.size()), setup.k_m,
                                  setup.k_o, setup.schedule, setup.grouping, setup.s_m, setup.s_o, 0);
    RoundOutcome oc = run_round(state, plan, clients, pool, setup);

    for (int k : plan.a_o) CHECK(all_zero(clients[k].memory.residual));
    for (int k : plan.a_m) CHECK_FALSE(all_zero(clients[k].memory.residual));
    CHECK(state.t == 1);
    CHECK(oc.metrics.t == 0);
    CHECK(oc.metrics.wall_ms == 0.0);
    CHECK(oc.elapsed_ms > 0.0);
    CHECK(oc.metrics.train_lc > 0.0);
    CHECK(oc.metrics.grad_norm_sq > 0.0);
    CHECK(oc.metrics.mean_mem_sq > 0.0);
    CHECK(oc.metrics.lemma2_bound_value > 0.0);
    CHECK(oc.best_ref_dist > 0.0);
}

TEST_CASE("a round with no model uplink moves only through the server pass") {
    World w = make_world(27);
    TrainSetup setup = w.setup;
    setup.k_m = 0;
    setup.k_o = 2;

    JsccModel model = w.proto;
    RngStream init = derive_stream(setup.master_seed, StreamTag::Init);
    model.init_params(init);

    GlobalState state;
    state.w = model.flatten();
    state.master_seed = setup.master_seed;
    std::vector<double> w0 = state.w.values;
    const std::size_t n = w0.size();

    std::vector<ClientState> clients;
    for (std::size_t k = 0; k < w.part.clients.size(); ++k) {
        clients.push_back({static_cast<int>(k), w.part.clients[k].train,
                           w.part.clients[k].public_subset, ErrorMemory::zeros(n, static_cast<int>(k)),
                           w.part.clients[k].weight});
    }
    std::vector<std::size_t> pool;
    for (const auto& c : clients) pool.insert(pool.end(), c.train.begin(), c.train.end());
    std::sort(pool.begin(), pool.end());

    RoundPlan plan = sample_round(setup.master_seed, static_cast<int>(clients.size()), 0, 2,
                                  setup.schedule, setup.grouping, setup.s_m, setup.s_o, 0);
    CHECK(plan.a_m.empty());

    // with the server pass disabled nothing can move
    TrainSetup frozen = setup;
    frozen.server_epochs = 0;
    GlobalState state2 = state;
    std::vector<ClientState> clients2 = clients;
    run_round(state2, plan, clients2, pool, frozen);
    CHECK(bitwise_equal(state2.w.values, w0));

    run_round(state, plan, clients, pool, setup);
    CHECK_FALSE(bitwise_equal(state.w.values, w0));
}

TEST_CASE("training runs are deterministic across thread counts") {
    World w = make_world(28);
    TrainSetup setup = w.setup;
    setup.rounds = 3;

    TrainResult a = run_training(setup);
    TrainResult b = run_training(setup);
    CHECK(log_bytes(a.log) == log_bytes(b.log));
    CHECK(bitwise_equal(a.final_w, b.final_w));
    CHECK(a.best_ref_dist == b.best_ref_dist);

    TrainSetup threaded = setup;
    threaded.threads = 3;
    TrainResult c = run_training(threaded);
    CHECK(log_bytes(a.log) == log_bytes(c.log));
    CHECK(bitwise_equal(a.final_w, c.final_w));

    TrainSetup reseeded = setup;
    reseeded.master_seed = setup.master_seed + 1;
    TrainResult d = run_training(reseeded);
    CHECK(log_bytes(a.log) != log_bytes(d.log));
}

TEST_CASE("the baseline never runs the server pass and diverges from the full protocol") {
    World w = make_world(29);
    TrainSetup setup = w.setup;
    setup.rounds = 4;

    TrainSetup base = setup;
    base.algorithm = Algorithm::Dsgd;
    TrainResult dsgd = run_training(base);
    for (const RoundMetrics& m : dsgd.log) {
        CHECK(m.test_lc_pre_fr == m.test_lc_post_fr);
        CHECK_FALSE(m.fr_improved);
    }

    TrainResult fedsfr = run_training(setup);
    CHECK_FALSE(bitwise_equal(fedsfr.final_w, dsgd.final_w));

    // the sink sees every round in order
    std::vector<int> seen;
    run_training(base, [&](const RoundMetrics& m, double dist) {
        seen.push_back(m.t);
        CHECK(dist >= 0.0);
    });
    CHECK(seen == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("run_training validates its setup with named fields") {
    World w = make_world(30);
    TrainSetup setup = w.setup;
    setup.k_m = 3;
    setup.k_o = 2;  // 5 > 4 clients
    CHECK_THROWS_WITH_AS(run_training(setup), doctest::Contains("exceeds the client count"),
                         std::invalid_argument);

    setup = w.setup;
    setup.s_o = setup.s_m;
    CHECK_THROWS_WITH_AS(run_training(setup), doctest::Contains("smaller than s_m"),
                         std::invalid_argument);

    setup = w.setup;
    setup.s_m = w.proto.param_count() + 1;
    CHECK_THROWS_AS(run_training(setup), std::invalid_argument);

    setup = w.setup;
    setup.proto = nullptr;
    CHECK_THROWS_AS(run_training(setup), std::invalid_argument);

    setup = w.setup;
    setup.rounds = 0;
    CHECK_THROWS_AS(run_training(setup), std::invalid_argument);
}
