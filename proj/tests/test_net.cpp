#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "imucoco/losses.hpp"
#include "imucoco/trainer.hpp"

using namespace imucoco;

namespace {

NetConfig tiny_config() {
    NetConfig c;
    c.d_in = 6;
    c.d_h = 8;
    c.d_e = 4;
    c.n_freq = 2;
    c.n_mfe = 1;
    c.jnm_layers = 2;
    c.kr_hidden = 8;
    c.pr_hidden = 16;
    return c;
}

std::vector<std::array<double, 9>> random_channels(int frames, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<std::array<double, 9>> out(frames);
    for (auto& row : out)
        for (double& v : row) v = u(rng);
    return out;
}

void zero_params(ModelParams& m) {
    for (auto& p : m.named_params())
        std::fill(p.tensor->data.begin(), p.tensor->data.end(), 0.0);
}

}  // namespace

TEST_CASE("coordinate standardization") {
    const BodyModel body = build_canonical_body();
    const int joint = 7;
    const Vec3 r_j = body.tpose_joint_pos[joint];
    SECTION("origin shift") {
        CHECK(standardize_coordinate(r_j, joint, body).norm() == 0.0);
    }
    SECTION("unit span") {
        const Vec3 r = r_j + (body.r_max - body.r_min);
        CHECK((standardize_coordinate(r, joint, body) - Vec3::Ones()).norm() < 1e-12);
    }
    SECTION("component-wise formula") {
        std::mt19937_64 rng(3);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        for (int i = 0; i < 50; ++i) {
            const Vec3 r(u(rng), u(rng), u(rng));
            const Vec3 got = standardize_coordinate(r, joint, body);
            for (int a = 0; a < 3; ++a)
                CHECK(got[a] ==
                      Catch::Approx((r[a] - r_j[a]) / (body.r_max[a] - body.r_min[a])).margin(1e-15));
        }
    }
}

TEST_CASE("positional encoding") {
    SECTION("zero coordinate") {
        const std::vector<double> got = positional_encode(Vec3::Zero(), 2);
        const std::vector<double> expected = {0, 0, 0, 1, 1, 1, 0, 0, 0, 1, 1, 1};
        REQUIRE(got.size() == expected.size());
        for (std::size_t i = 0; i < got.size(); ++i)
            CHECK(got[i] == Catch::Approx(expected[i]).margin(1e-12));
    }
    SECTION("known angle: x = 0.5 gives sin(pi) = 0, cos(pi) = -1 in block p=0") {
        const std::vector<double> got = positional_encode(Vec3(0.5, 0, 0), 1);
        CHECK(got[0] == Catch::Approx(0.0).margin(1e-12));
        CHECK(got[3] == Catch::Approx(-1.0).margin(1e-12));
        CHECK(got[4] == 1.0);
        CHECK(got[5] == 1.0);
    }
    SECTION("per-element transcendental oracle") {
        std::mt19937_64 rng(4);
        std::uniform_real_distribution<double> u(-2.0, 2.0);
        const Vec3 r(u(rng), u(rng), u(rng));
        const std::vector<double> got = positional_encode(r, 4);
        REQUIRE(got.size() == 24);
        for (int p = 0; p < 4; ++p) {
            const double f = std::pow(2.0, p);
            for (int a = 0; a < 3; ++a) {
                CHECK(got[6 * p + a] == Catch::Approx(std::sin(2 * M_PI * f * r[a])).margin(1e-12));
                CHECK(got[6 * p + 3 + a] ==
                      Catch::Approx(std::cos(2 * M_PI * f * r[a])).margin(1e-12));
            }
        }
    }
    CHECK_THROWS_AS(positional_encode(Vec3::Zero(), 0), ValidationError);
}

TEST_CASE("sce_forward properties") {
    const BodyModel body = build_canonical_body();
    const NetConfig nc = tiny_config();

    SECTION("all-zero parameters give all-zero codes") {
        ModelParams m = ModelParams::init(nc, 1);
        zero_params(m);
        Graph g;
        const auto codes = sce_forward(g, m.nodes[3], {Vec3(0.1, 0.2, 0.3), 5}, 3, body,
                                       nc.n_freq, nc.d_h);
        REQUIRE(codes.size() == 2);
        for (const auto& [gamma, beta] : codes) {
            for (double v : g.value(gamma).data) CHECK(v == 0.0);
            for (double v : g.value(beta).data) CHECK(v == 0.0);
        }
    }

    SECTION("same coordinate, different region: codes differ via the embedding") {
        ModelParams m = ModelParams::init(nc, 2);
        Graph g;
        const Vec3 r(0.05, -0.2, 0.01);
        const auto a = sce_forward(g, m.nodes[0], {r, 3}, 0, body, nc.n_freq, nc.d_h);
        const auto b = sce_forward(g, m.nodes[0], {r, 9}, 0, body, nc.n_freq, nc.d_h);
        CHECK(g.value(a[0].first).data != g.value(b[0].first).data);
    }

    SECTION("codes are deterministic across repeated calls") {
        ModelParams m = ModelParams::init(nc, 3);
        std::vector<double> first;
        for (int call = 0; call < 100; ++call) {
            Graph g;
            const auto codes =
                sce_forward(g, m.nodes[7], {Vec3(0.2, 0.1, 0.0), 7}, 7, body, nc.n_freq, nc.d_h);
            std::vector<double> flat;
            for (const auto& [gamma, beta] : codes) {
                const auto& gv = g.value(gamma).data;
                const auto& bv = g.value(beta).data;
                flat.insert(flat.end(), gv.begin(), gv.end());
                flat.insert(flat.end(), bv.begin(), bv.end());
            }
            if (call == 0)
                first = flat;
            else
                CHECK(flat == first);
        }
    }

    SECTION("region out of range is rejected") {
        ModelParams m = ModelParams::init(nc, 4);
        Graph g;
        CHECK_THROWS_AS(sce_forward(g, m.nodes[0], {Vec3::Zero(), 24}, 0, body, nc.n_freq, nc.d_h),
                        ValidationError);
    }
}

TEST_CASE("mfe_forward is causal and matches the cell-chaining oracle") {
    const NetConfig nc = tiny_config();
    ModelParams m = ModelParams::init(nc, 5);
    std::mt19937_64 rng(6);
    const auto channels = random_channels(12, rng);

    SECTION("causality: perturbing a later frame leaves earlier outputs bit-identical") {
        auto run = [&](const std::vector<std::array<double, 9>>& ch) {
            Graph g;
            LstmCarry carry = LstmCarry::zeros(nc.n_mfe, nc.d_h);
            const auto h = mfe_forward(g, m.nodes[0], ch, 0, 12, &carry);
            std::vector<std::vector<double>> out;
            for (NodeId id : h) out.push_back(g.value(id).data);
            return out;
        };
        auto perturbed = channels;
        perturbed[8][2] += 10.0;
        const auto base = run(channels);
        const auto poked = run(perturbed);
        for (int t = 0; t < 8; ++t) CHECK(base[t] == poked[t]);
        CHECK(base[8] != poked[8]);
    }

    SECTION("zero parameters reproduce the 0.5-gate cascade") {
        ModelParams z = ModelParams::init(nc, 7);
        zero_params(z);
        Graph g;
        LstmCarry carry = LstmCarry::zeros(nc.n_mfe, nc.d_h);
        const auto h = mfe_forward(g, z.nodes[0], channels, 0, 3, &carry);
        // zero weights: c stays 0, h = 0.5 * tanh(0) = 0 for every frame
        for (NodeId id : h)
            for (double v : g.value(id).data) CHECK(v == 0.0);
    }

    SECTION("matches chaining lstm_cell_step frame by frame") {
        Graph g;
        LstmCarry carry = LstmCarry::zeros(nc.n_mfe, nc.d_h);
        const auto h = mfe_forward(g, m.nodes[2], channels, 0, 12, &carry);

        Graph o;
        const NodeParams& node = m.nodes[2];
        NodeId hh = o.constant(Tensor::zeros({nc.d_h}));
        NodeId cc = o.constant(Tensor::zeros({nc.d_h}));
        for (int t = 0; t < 12; ++t) {
            const NodeId x = o.constant(
                Tensor::vector(std::vector<double>(channels[t].begin(), channels[t].end())));
            const NodeId proj = o.relu(o.add(o.matmul(o.leaf(node.mfe_in.w), x), o.leaf(node.mfe_in.b)));
            const LstmState s = lstm_cell_step(o, o.leaf(node.mfe_lstm[0].w),
                                               o.leaf(node.mfe_lstm[0].b), proj, hh, cc);
            hh = s.h;
            cc = s.c;
            const auto& got = g.value(h[t]).data;
            const auto& expected = o.value(s.h).data;
            for (int i = 0; i < nc.d_h; ++i)
                CHECK(got[i] == Catch::Approx(expected[i]).margin(1e-12));
        }
    }
}

TEST_CASE("jnm_forward modulation semantics") {
    const NetConfig nc = tiny_config();
    ModelParams m = ModelParams::init(nc, 8);
    const BodyModel body = build_canonical_body();
    std::mt19937_64 rng(9);
    const auto channels = random_channels(6, rng);

    auto forward_h = [&](Graph& g) {
        LstmCarry carry = LstmCarry::zeros(nc.n_mfe, nc.d_h);
        return mfe_forward(g, m.nodes[0], channels, 0, 6, &carry);
    };

    SECTION("gamma = 1, beta = 0 reproduces the unmodulated stack bit-exactly") {
        Graph g;
        const auto h = forward_h(g);
        PlacementCodeNodes identity_codes;
        for (int l = 0; l < nc.jnm_layers; ++l)
            identity_codes.emplace_back(
                g.constant(Tensor({nc.d_h}, std::vector<double>(nc.d_h, 1.0))),
                g.constant(Tensor::zeros({nc.d_h})));
        LstmCarry jc = LstmCarry::zeros(nc.jnm_layers, nc.d_h);
        const auto z = jnm_forward(g, m.nodes[0], h, identity_codes, &jc);

        // unmodulated oracle: plain LSTM chain over h
        Graph o;
        const auto h2 = [&] {
            LstmCarry carry = LstmCarry::zeros(nc.n_mfe, nc.d_h);
            return mfe_forward(o, m.nodes[0], channels, 0, 6, &carry);
        }();
        std::vector<NodeId> seq = h2;
        for (int l = 0; l < nc.jnm_layers; ++l) {
            NodeId hh = o.constant(Tensor::zeros({nc.d_h}));
            NodeId cc = o.constant(Tensor::zeros({nc.d_h}));
            std::vector<NodeId> next;
            for (NodeId x : seq) {
                const LstmState s = lstm_cell_step(o, o.leaf(m.nodes[0].jnm[l].w),
                                                   o.leaf(m.nodes[0].jnm[l].b), x, hh, cc);
                hh = s.h;
                cc = s.c;
                next.push_back(s.h);
            }
            seq = next;
        }
        for (int t = 0; t < 6; ++t) CHECK(g.value(z[t]).data == o.value(seq[t]).data);
    }

    SECTION("gamma = 0 makes the output independent of the signal") {
        auto run = [&](const std::vector<std::array<double, 9>>& ch) {
            Graph g;
            LstmCarry mc = LstmCarry::zeros(nc.n_mfe, nc.d_h);
            const auto h = mfe_forward(g, m.nodes[0], ch, 0, 6, &mc);
            PlacementCodeNodes codes;
            for (int l = 0; l < nc.jnm_layers; ++l)
                codes.emplace_back(g.constant(Tensor::zeros({nc.d_h})),
                                   g.constant(Tensor::vector(std::vector<double>(nc.d_h, 0.3))));
            LstmCarry jc = LstmCarry::zeros(nc.jnm_layers, nc.d_h);
            const auto z = jnm_forward(g, m.nodes[0], h, codes, &jc);
            std::vector<std::vector<double>> out;
            for (NodeId id : z) out.push_back(g.value(id).data);
            return out;
        };
        CHECK(run(channels) == run(random_channels(6, rng)));
    }

    SECTION("random codes match the explicit modulation oracle") {
        Graph g;
        const auto h = forward_h(g);
        const auto codes = sce_forward(g, m.nodes[0], {Vec3(0.1, 0.4, 0.0), 4}, 0, body,
                                       nc.n_freq, nc.d_h);
        LstmCarry jc = LstmCarry::zeros(nc.jnm_layers, nc.d_h);
        const auto z = jnm_forward(g, m.nodes[0], h, codes, &jc);

        // oracle: form gamma*z+beta explicitly, then chain cells
        std::vector<std::vector<double>> cur;
        for (NodeId id : h) cur.push_back(g.value(id).data);
        for (int l = 0; l < nc.jnm_layers; ++l) {
            const auto& gamma = g.value(codes[l].first).data;
            const auto& beta = g.value(codes[l].second).data;
            Graph o;
            NodeId hh = o.constant(Tensor::zeros({nc.d_h}));
            NodeId cc = o.constant(Tensor::zeros({nc.d_h}));
            std::vector<std::vector<double>> next;
            for (const auto& zt : cur) {
                std::vector<double> mod(nc.d_h);
                for (int i = 0; i < nc.d_h; ++i) mod[i] = gamma[i] * zt[i] + beta[i];
                const LstmState s =
                    lstm_cell_step(o, o.leaf(m.nodes[0].jnm[l].w), o.leaf(m.nodes[0].jnm[l].b),
                                   o.constant(Tensor::vector(mod)), hh, cc);
                hh = s.h;
                cc = s.c;
                next.push_back(o.value(s.h).data);
            }
            cur = next;
        }
        for (int t = 0; t < 6; ++t)
            for (int i = 0; i < nc.d_h; ++i)
                CHECK(g.value(z[t]).data[i] == Catch::Approx(cur[t][i]).margin(1e-12));
    }

    SECTION("code/depth mismatch is rejected") {
        Graph g;
        const auto h = forward_h(g);
        PlacementCodeNodes one_code = {{g.constant(Tensor::zeros({nc.d_h})),
                                        g.constant(Tensor::zeros({nc.d_h}))}};
        LstmCarry jc = LstmCarry::zeros(nc.jnm_layers, nc.d_h);
        CHECK_THROWS_AS(jnm_forward(g, m.nodes[0], h, one_code, &jc), ValidationError);
    }
}

TEST_CASE("kr and pr heads") {
    const NetConfig nc = tiny_config();
    std::mt19937_64 rng(11);

    SECTION("zero weights output the final bias") {
        ModelParams m = ModelParams::init(nc, 12);
        zero_params(m);
        for (int i = 0; i < 3; ++i) m.nodes[0].kr[0].l2.b.data[i] = 0.5 + i;
        Graph g;
        const NodeId z = g.constant(Tensor::zeros({nc.d_h}));
        const KrOutputs out = kr_forward(g, m.nodes[0], {z});
        CHECK(g.value(out.heads[0][0]).data == std::vector<double>{0.5, 1.5, 2.5});
    }

    SECTION("pr input concatenates joint features in order") {
        ModelParams m = ModelParams::init(nc, 13);
        Graph g;
        std::vector<NodeId> feats;
        for (int j = 0; j < kJointCount; ++j)
            feats.push_back(g.constant(Tensor::random_uniform({nc.d_h}, 1.0, rng)));
        const NodeId a = pr_forward(g, m, feats);
        std::swap(feats[2], feats[17]);
        const NodeId b = pr_forward(g, m, feats);
        CHECK(g.value(a).data != g.value(b).data);
    }

    SECTION("random input matches the two-matmul oracle") {
        ModelParams m = ModelParams::init(nc, 14);
        const Regressor& reg = m.nodes[5].kr[3];
        Tensor z = Tensor::random_uniform({nc.d_h}, 1.0, rng);
        Graph g;
        const NodeId out = regressor_forward(g, reg, g.constant(z));

        std::vector<double> hidden(nc.kr_hidden, 0.0);
        for (int i = 0; i < nc.kr_hidden; ++i) {
            double s = reg.l1.b.data[i];
            for (int k = 0; k < nc.d_h; ++k) s += reg.l1.w.data[i * nc.d_h + k] * z.data[k];
            hidden[i] = std::max(0.0, s);
        }
        for (int i = 0; i < 6; ++i) {
            double s = reg.l2.b.data[i];
            for (int k = 0; k < nc.kr_hidden; ++k)
                s += reg.l2.w.data[i * nc.kr_hidden + k] * hidden[k];
            CHECK(g.value(out).data[i] == Catch::Approx(s).margin(1e-12));
        }
    }
}

TEST_CASE("node_forward end-to-end properties") {
    const BodyModel body = build_canonical_body();
    const NetConfig nc = tiny_config();
    ModelParams m = ModelParams::init(nc, 15);
    const MotionSequence motion = generate_motion(15, 1.0, MotionKind::arm_swing);
    const ImuTrack track = synthesize_mesh_imu(body, motion, 600);

    SECTION("deterministic across calls") {
        Graph a, b;
        const auto fa = node_forward(a, m, 4, track, body);
        const auto fb = node_forward(b, m, 4, track, body);
        for (std::size_t t = 0; t < fa.z.size(); ++t)
            CHECK(a.value(fa.z[t]).data == b.value(fb.z[t]).data);
    }

    SECTION("moving the placement with a frozen signal changes the output") {
        Graph a, b;
        ImuTrack moved = track;
        moved.placement.r += Vec3(0.15, -0.1, 0.05);
        const auto fa = node_forward(a, m, 4, track, body);
        const auto fb = node_forward(b, m, 4, moved, body);
        CHECK(a.value(fa.z.back()).data != b.value(fb.z.back()).data);
    }

    SECTION("idle track features converge after LSTM burn-in") {
        const MotionSequence idle = generate_motion(16, 1.5, MotionKind::idle);
        const ImuTrack idle_track = synthesize_mesh_imu(body, idle, 600);
        Graph g;
        const auto fwd = node_forward(g, m, 4, idle_track, body);
        const int frames = static_cast<int>(fwd.z.size());
        auto step_norm = [&](int t) {
            const auto& a = g.value(fwd.z[t]).data;
            const auto& b = g.value(fwd.z[t + 1]).data;
            double s = 0;
            for (int i = 0; i < nc.d_h; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
            return std::sqrt(s);
        };
        // over the last 30 frames the step-to-step change trends to zero
        CHECK(step_norm(frames - 2) < 1e-8);
        CHECK(step_norm(frames - 2) <= step_norm(frames - 31));
        double prev = step_norm(frames - 31);
        int monotone_violations = 0;
        for (int t = frames - 30; t + 1 < frames; ++t) {
            const double cur = step_norm(t);
            if (cur > prev + 1e-15) ++monotone_violations;
            prev = cur;
        }
        CHECK(monotone_violations == 0);
    }
}

TEST_CASE("full pathway gradient check on the tiny config") {
    const BodyModel body = build_canonical_body();
    const NetConfig nc = tiny_config();
    ModelParams m = ModelParams::init(nc, 16);
    MotionSequence motion = generate_motion(17, 0.1, MotionKind::mixed);
    motion.frames.resize(5);
    const ImuTrack track = synthesize_mesh_imu(body, motion, 300);
    const auto channels = encode_channels(track, nc.accel_scale);
    const KinematicsGT gt = kinematics_ground_truth(body, motion);

    NodeBuffer buffer;
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (int j = 0; j < kJointCount; ++j) {
        std::vector<std::vector<double>> z(5, std::vector<double>(nc.d_h));
        for (auto& row : z)
            for (double& x : row) x = u(rng);
        buffer.store(j, z, false);
    }
    std::vector<std::vector<double>> z_ref(5, std::vector<double>(nc.d_h));
    for (auto& row : z_ref)
        for (double& x : row) x = u(rng);
    std::vector<std::vector<double>> pose_gt;
    for (int t = 0; t < gt.frames; ++t) pose_gt.push_back(pose_gt_row(gt, t));

    const int joint = 9;
    const LossWeights weights{1.0, 1.0, 0.5};
    auto build = [&](Graph& g) {
        PathwayCarry carry = PathwayCarry::zeros(nc);
        const auto fwd = node_forward_window(g, m, joint, channels, track.placement, body, 0, 5,
                                             &carry);
        return total_node_loss(g, m, joint, fwd, gt, buffer, &z_ref, pose_gt, weights, 0, 5).total;
    };
    std::vector<Tensor*> params;
    for (auto& p : m.node_and_pr_params(joint, false)) params.push_back(p.tensor);
    CHECK(gradient_check(build, params) < 1e-4);
}

TEST_CASE("parameter count matches the published formula") {
    auto formula = [](const NetConfig& c) {
        long node = 0;
        node += static_cast<long>(c.d_in) * 9 + c.d_in;                       // MFE projection
        node += 4L * c.d_h * (c.d_in + c.d_h) + 4L * c.d_h;                   // MFE LSTM layer 0
        for (int l = 1; l < c.n_mfe; ++l) node += 4L * c.d_h * (2 * c.d_h) + 4L * c.d_h;
        node += 24L * c.d_e;                                                  // region embedding
        node += 2L * c.d_h * (6 * c.n_freq + c.d_e) + 2L * c.d_h;             // SCE FC 1
        for (int l = 1; l < c.jnm_layers; ++l) node += 2L * c.d_h * (2 * c.d_h) + 2L * c.d_h;
        node += static_cast<long>(c.jnm_layers) * (4L * c.d_h * (2 * c.d_h) + 4L * c.d_h);  // JNM
        for (int out : {3, 3, 6, 6, 3})
            node += static_cast<long>(c.kr_hidden) * c.d_h + c.kr_hidden +
                    static_cast<long>(out) * c.kr_hidden + out;               // five KRs
        long pr = static_cast<long>(c.pr_hidden) * (24 * c.d_h) + c.pr_hidden +
                  144L * c.pr_hidden + 144;
        return 24 * node + pr;
    };
    for (std::uint64_t seed : {1ULL, 2ULL}) {
        NetConfig c = tiny_config();
        ModelParams m = ModelParams::init(c, seed);
        CHECK(m.parameter_count() == formula(c));
    }
    NetConfig big;  // defaults
    ModelParams m = ModelParams::init(big, 3);
    CHECK(m.parameter_count() == formula(big));
    NetConfig deep = tiny_config();
    deep.n_mfe = 2;
    deep.jnm_layers = 3;
    ModelParams md = ModelParams::init(deep, 4);
    CHECK(md.parameter_count() == formula(deep));
}

TEST_CASE("placement codes never vary with the signal") {
    const BodyModel body = build_canonical_body();
    const NetConfig nc = tiny_config();
    ModelParams m = ModelParams::init(nc, 18);
    const PlacementCoordinate placement{Vec3(0.3, -0.5, 0.02), 4};
    Graph g;
    const auto c1 = sce_forward(g, m.nodes[4], placement, 4, body, nc.n_freq, nc.d_h);
    const auto c2 = sce_forward(g, m.nodes[4], placement, 4, body, nc.n_freq, nc.d_h);
    for (std::size_t l = 0; l < c1.size(); ++l) {
        CHECK(g.value(c1[l].first).data == g.value(c2[l].first).data);
        CHECK(g.value(c1[l].second).data == g.value(c2[l].second).data);
    }
}
