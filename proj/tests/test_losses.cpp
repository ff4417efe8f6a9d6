#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "imucoco/losses.hpp"

using namespace imucoco;

namespace {

std::vector<NodeId> const_rows(Graph& g, const std::vector<Vec3>& rows) {
    std::vector<NodeId> out;
    out.reserve(rows.size());
    for (const Vec3& r : rows) out.push_back(g.constant(Tensor::vector({r.x(), r.y(), r.z()})));
    return out;
}

std::vector<Vec3> random_rows(int n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<Vec3> out(n);
    for (Vec3& r : out) r = Vec3(u(rng), u(rng), u(rng));
    return out;
}

}  // namespace

TEST_CASE("multi-frame root velocity loss") {
    std::mt19937_64 rng(2);

    SECTION("exact predictions give zero") {
        const std::vector<Vec3> gt = random_rows(40, rng);
        Graph g;
        CHECK(g.value(root_velocity_multiframe_loss(g, const_rows(g, gt), gt)).data[0] <
              1e-24);
    }

    SECTION("constant bias accumulates as 820 |delta|^2 / 3") {
        const Vec3 delta(0.2, -0.1, 0.05);
        const std::vector<Vec3> gt = random_rows(40, rng);
        std::vector<Vec3> pred = gt;
        for (Vec3& p : pred) p += delta;
        Graph g;
        const double got = g.value(root_velocity_multiframe_loss(g, const_rows(g, pred), gt)).data[0];
        CHECK(std::abs(got - 820.0 * delta.squaredNorm() / 3.0) < 1e-9);
    }

    SECTION("random sequences match the brute-force window-sum oracle") {
        const int frames = 40;
        const std::vector<Vec3> gt = random_rows(frames, rng);
        const std::vector<Vec3> pred = random_rows(frames, rng);
        Graph g;
        const double got = g.value(root_velocity_multiframe_loss(g, const_rows(g, pred), gt)).data[0];

        double expected = 0;
        for (int horizon : {1, 3, 9, 27}) {
            double horizon_sum = 0;
            int starts = 0;
            for (int t = 0; t + horizon <= frames; ++t) {
                Vec3 wp = Vec3::Zero(), wg = Vec3::Zero();
                for (int i = t; i < t + horizon; ++i) {
                    wp += pred[i];
                    wg += gt[i];
                }
                horizon_sum += (wp - wg).squaredNorm() / 3.0;
                ++starts;
            }
            expected += horizon_sum / starts;
        }
        CHECK(std::abs(got - expected) < 1e-12);
    }

    SECTION("short sequences drop infeasible horizons") {
        const std::vector<Vec3> gt = random_rows(5, rng);
        std::vector<Vec3> pred = gt;
        for (Vec3& p : pred) p += Vec3(1, 0, 0);
        Graph g;
        // only horizons 1 and 3 are feasible: (1 + 9) * 1/3
        const double got = g.value(root_velocity_multiframe_loss(g, const_rows(g, pred), gt)).data[0];
        CHECK(std::abs(got - 10.0 / 3.0) < 1e-12);
    }

    SECTION("empty input is rejected") {
        Graph g;
        CHECK_THROWS_AS(root_velocity_multiframe_loss(g, {}, {}), ValidationError);
    }
}

TEST_CASE("alignment loss hits its closed-form anchors") {
    Graph g;
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const int frames = 8, width = 6;
    std::vector<std::vector<double>> ref(frames, std::vector<double>(width));
    for (auto& row : ref)
        for (double& v : row) v = u(rng);

    auto as_nodes = [&](const std::vector<std::vector<double>>& rows) {
        std::vector<NodeId> out;
        for (const auto& r : rows) out.push_back(g.constant(Tensor::vector(r)));
        return out;
    };

    SECTION("aligned gives 0") {
        CHECK(g.value(alignment_loss(g, as_nodes(ref), ref)).data[0] < 1e-12);
    }
    SECTION("anti-aligned gives 2") {
        std::vector<std::vector<double>> neg = ref;
        for (auto& row : neg)
            for (double& v : row) v = -v;
        CHECK(g.value(alignment_loss(g, as_nodes(neg), ref)).data[0] ==
              Catch::Approx(2.0).margin(1e-12));
    }
    SECTION("frame-wise orthogonal gives 1") {
        // swap-negate pairs to build exact orthogonal vectors
        std::vector<std::vector<double>> orth = ref;
        for (auto& row : orth)
            for (int i = 0; i + 1 < width; i += 2) {
                const double a = row[i], b = row[i + 1];
                row[i] = -b;
                row[i + 1] = a;
            }
        CHECK(g.value(alignment_loss(g, as_nodes(orth), ref)).data[0] ==
              Catch::Approx(1.0).margin(1e-12));
    }
    SECTION("zero-norm frames are skipped and counted") {
        std::vector<std::vector<double>> withzero = ref;
        withzero[3].assign(width, 0.0);
        int skipped = 0;
        const NodeId loss = alignment_loss(g, as_nodes(withzero), ref, &skipped);
        CHECK(skipped == 1);
        CHECK(g.value(loss).data[0] < 1e-12);  // other frames aligned
    }
}

TEST_CASE("pose loss closed forms") {
    Graph g;
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const int frames = 4;
    std::vector<std::vector<double>> gt(frames, std::vector<double>(144));
    for (auto& row : gt)
        for (double& v : row) v = u(rng);
    auto as_nodes = [&](const std::vector<std::vector<double>>& rows) {
        std::vector<NodeId> out;
        for (const auto& r : rows) out.push_back(g.constant(Tensor::vector(r)));
        return out;
    };

    SECTION("equal inputs give 0") {
        CHECK(g.value(pose_loss(g, as_nodes(gt), gt)).data[0] < 1e-24);
    }
    SECTION("one perturbed 6D block costs |e|^2 / 144 per frame") {
        std::vector<std::vector<double>> pred = gt;
        double e2 = 0;
        for (int i = 0; i < 6; ++i) {
            pred[1][30 + i] += 0.1 * (i + 1);
            e2 += 0.01 * (i + 1) * (i + 1);
        }
        const double got = g.value(pose_loss(g, as_nodes(pred), gt)).data[0];
        CHECK(std::abs(got - (e2 / 144.0) / frames) < 1e-12);
    }
    SECTION("random inputs match a scalar loop") {
        std::vector<std::vector<double>> pred(frames, std::vector<double>(144));
        for (auto& row : pred)
            for (double& v : row) v = u(rng);
        double expected = 0;
        for (int t = 0; t < frames; ++t) {
            double s = 0;
            for (int i = 0; i < 144; ++i) {
                const double d = pred[t][i] - gt[t][i];
                s += d * d;
            }
            expected += s / 144.0;
        }
        expected /= frames;
        CHECK(std::abs(g.value(pose_loss(g, as_nodes(pred), gt)).data[0] - expected) < 1e-12);
    }
    SECTION("shape mismatch is rejected") {
        std::vector<std::vector<double>> short_gt(2, std::vector<double>(144, 0.0));
        CHECK_THROWS_AS(pose_loss(g, as_nodes(gt), short_gt), ValidationError);
    }
}

TEST_CASE("kinematic loss closed forms and scalar-loop oracle") {
    const BodyModel body = build_canonical_body();
    MotionSequence motion = generate_motion(5, 0.5, MotionKind::mixed);
    const KinematicsGT gt = kinematics_ground_truth(body, motion);
    const int frames = gt.frames;
    const int joint = 6;

    // exact predictions as constants
    auto exact_preds = [&](Graph& g) {
        KrOutputs preds;
        for (int t = 0; t < frames; ++t) {
            preds.heads[int(KrHead::velocity)].push_back(
                g.constant(Tensor::vector({gt.velocity[joint][t].x(), gt.velocity[joint][t].y(),
                                           gt.velocity[joint][t].z()})));
            preds.heads[int(KrHead::position)].push_back(
                g.constant(Tensor::vector({gt.position[joint][t].x(), gt.position[joint][t].y(),
                                           gt.position[joint][t].z()})));
            std::vector<double> lo(6), go(6);
            for (int i = 0; i < 6; ++i) {
                lo[i] = gt.local_orientation[joint][t][i];
                go[i] = gt.global_orientation[joint][t][i];
            }
            preds.heads[int(KrHead::local_orientation)].push_back(g.constant(Tensor::vector(lo)));
            preds.heads[int(KrHead::global_orientation)].push_back(g.constant(Tensor::vector(go)));
            preds.heads[int(KrHead::root_velocity)].push_back(
                g.constant(Tensor::vector({gt.root_velocity[t].x(), gt.root_velocity[t].y(),
                                           gt.root_velocity[t].z()})));
        }
        return preds;
    };

    SECTION("exact predictions give zero") {
        Graph g;
        CHECK(g.value(kinematic_loss(g, exact_preds(g), gt, joint, 0, frames)).data[0] < 1e-20);
    }

    SECTION("constant velocity offset costs |c|^2 / 3") {
        Graph g;
        KrOutputs preds = exact_preds(g);
        const Vec3 c(0.3, -0.2, 0.6);
        for (int t = 0; t < frames; ++t) {
            const Vec3 v = gt.velocity[joint][t] + c;
            preds.heads[int(KrHead::velocity)][t] =
                g.constant(Tensor::vector({v.x(), v.y(), v.z()}));
        }
        const double got = g.value(kinematic_loss(g, preds, gt, joint, 0, frames)).data[0];
        CHECK(std::abs(got - c.squaredNorm() / 3.0) < 1e-12);
    }

    SECTION("random predictions match an independent scalar loop") {
        std::mt19937_64 rng(6);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        std::vector<Vec3> pv(frames), pp(frames), prv(frames);
        std::vector<std::array<double, 6>> plo(frames), pgo(frames);
        for (int t = 0; t < frames; ++t) {
            pv[t] = Vec3(u(rng), u(rng), u(rng));
            pp[t] = Vec3(u(rng), u(rng), u(rng));
            prv[t] = Vec3(u(rng), u(rng), u(rng));
            for (int i = 0; i < 6; ++i) {
                plo[t][i] = u(rng);
                pgo[t][i] = u(rng);
            }
        }
        Graph g;
        KrOutputs preds;
        for (int t = 0; t < frames; ++t) {
            preds.heads[0].push_back(g.constant(Tensor::vector({pv[t].x(), pv[t].y(), pv[t].z()})));
            preds.heads[1].push_back(g.constant(Tensor::vector({pp[t].x(), pp[t].y(), pp[t].z()})));
            preds.heads[2].push_back(
                g.constant(Tensor::vector(std::vector<double>(plo[t].begin(), plo[t].end()))));
            preds.heads[3].push_back(
                g.constant(Tensor::vector(std::vector<double>(pgo[t].begin(), pgo[t].end()))));
            preds.heads[4].push_back(
                g.constant(Tensor::vector({prv[t].x(), prv[t].y(), prv[t].z()})));
        }
        const double got = g.value(kinematic_loss(g, preds, gt, joint, 0, frames)).data[0];

        auto mse3 = [&](const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
            double s = 0;
            for (int t = 0; t < frames; ++t) s += (a[t] - b[t]).squaredNorm() / 3.0;
            return s / frames;
        };
        double expected = mse3(pv, gt.velocity[joint]) + mse3(pp, gt.position[joint]);
        double lo_sum = 0, go_sum = 0;
        for (int t = 0; t < frames; ++t) {
            double lo = 0, go = 0;
            for (int i = 0; i < 6; ++i) {
                lo += std::pow(plo[t][i] - gt.local_orientation[joint][t][i], 2);
                go += std::pow(pgo[t][i] - gt.global_orientation[joint][t][i], 2);
            }
            lo_sum += lo / 6.0;
            go_sum += go / 6.0;
        }
        expected += lo_sum / frames + go_sum / frames;
        for (int horizon : {1, 3, 9, 27}) {
            if (horizon > frames) continue;
            double hsum = 0;
            int starts = 0;
            for (int t = 0; t + horizon <= frames; ++t) {
                Vec3 wp = Vec3::Zero(), wg = Vec3::Zero();
                for (int i = t; i < t + horizon; ++i) {
                    wp += prv[i];
                    wg += gt.root_velocity[i];
                }
                hsum += (wp - wg).squaredNorm() / 3.0;
                ++starts;
            }
            expected += hsum / starts;
        }
        CHECK(std::abs(got - expected) < 1e-12);
    }
}

TEST_CASE("total node loss composes its audited terms") {
    const BodyModel body = build_canonical_body();
    const NetConfig nc = [] {
        NetConfig c;
        c.d_in = 6;
        c.d_h = 8;
        c.d_e = 4;
        c.n_freq = 2;
        c.kr_hidden = 8;
        c.pr_hidden = 16;
        return c;
    }();
    ModelParams m = ModelParams::init(nc, 21);
    MotionSequence motion = generate_motion(21, 0.2, MotionKind::mixed);
    const KinematicsGT gt = kinematics_ground_truth(body, motion);
    const int frames = gt.frames;
    const ImuTrack track = synthesize_mesh_imu(body, motion, 500);
    const auto channels = encode_channels(track, nc.accel_scale);

    NodeBuffer buffer;
    std::mt19937_64 rng(22);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (int j = 0; j < kJointCount; ++j) {
        std::vector<std::vector<double>> z(frames, std::vector<double>(nc.d_h));
        for (auto& row : z)
            for (double& x : row) x = u(rng);
        buffer.store(j, z, false);
    }
    std::vector<std::vector<double>> z_ref(frames, std::vector<double>(nc.d_h));
    for (auto& row : z_ref)
        for (double& x : row) x = u(rng);
    std::vector<std::vector<double>> pose_gt;
    for (int t = 0; t < frames; ++t) pose_gt.push_back(pose_gt_row(gt, t));

    const int joint = 2;

    SECTION("all lambdas zero gives zero") {
        Graph g;
        PathwayCarry carry = PathwayCarry::zeros(nc);
        const auto fwd =
            node_forward_window(g, m, joint, channels, track.placement, body, 0, frames, &carry);
        const auto lb = total_node_loss(g, m, joint, fwd, gt, buffer, &z_ref, pose_gt,
                                        LossWeights{0, 0, 0}, 0, frames);
        CHECK(g.value(lb.total).data[0] == 0.0);
    }

    SECTION("alignment-only loss vanishes when z equals z_ref") {
        Graph g;
        PathwayCarry carry = PathwayCarry::zeros(nc);
        const auto fwd =
            node_forward_window(g, m, joint, channels, track.placement, body, 0, frames, &carry);
        std::vector<std::vector<double>> self_ref;
        for (NodeId id : fwd.z) self_ref.push_back(g.value(id).data);
        const auto lb = total_node_loss(g, m, joint, fwd, gt, buffer, &self_ref, pose_gt,
                                        LossWeights{0, 0, 1.0}, 0, frames);
        CHECK(g.value(lb.total).data[0] < 1e-12);
    }

    SECTION("weighted decomposition to 1e-12") {
        const LossWeights w{0.7, 1.3, 0.4};
        Graph g;
        PathwayCarry carry = PathwayCarry::zeros(nc);
        const auto fwd =
            node_forward_window(g, m, joint, channels, track.placement, body, 0, frames, &carry);
        const auto lb =
            total_node_loss(g, m, joint, fwd, gt, buffer, &z_ref, pose_gt, w, 0, frames);
        const double total = g.value(lb.total).data[0];
        const double recomposed = w.kinematic * lb.kinematic + w.pose * lb.pose + w.align * lb.align;
        CHECK(std::abs(total - recomposed) < 1e-12);

        // terms audited independently
        Graph g2;
        PathwayCarry carry2 = PathwayCarry::zeros(nc);
        const auto fwd2 =
            node_forward_window(g2, m, joint, channels, track.placement, body, 0, frames, &carry2);
        const double kin = g2.value(kinematic_loss(g2, fwd2.kr, gt, joint, 0, frames)).data[0];
        CHECK(std::abs(kin - lb.kinematic) < 1e-12);
        const double align = g2.value(alignment_loss(g2, fwd2.z, z_ref)).data[0];
        CHECK(std::abs(align - lb.align) < 1e-12);
    }

    SECTION("unpopulated buffer slots are rejected") {
        NodeBuffer partial;
        partial.store(0, buffer.z[0], false);
        Graph g;
        PathwayCarry carry = PathwayCarry::zeros(nc);
        const auto fwd =
            node_forward_window(g, m, joint, channels, track.placement, body, 0, frames, &carry);
        CHECK_THROWS_AS(total_node_loss(g, m, joint, fwd, gt, partial, &z_ref, pose_gt,
                                        LossWeights{}, 0, frames),
                        ValidationError);
    }
}
