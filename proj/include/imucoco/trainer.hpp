#pragma once

#include <iostream>
#include <map>
#include <unordered_map>

#include "imucoco/losses.hpp"

namespace imucoco {

struct TrainConfig {
    NetConfig net;
    LossWeights weights;
    int phase1_steps = 200;
    int phase2_steps = 100;
    int mesh_samples_per_sequence = 48;  // full-scale reference value is 384
    double hop_decay = 0.5;
    int bptt_window = 64;
    AdamConfig adam;
    std::uint64_t seed = 1;
    int plateau_window = 50;
    double plateau_rel_improvement = 0.01;

    void validate() const {
        net.validate();
        if (!(weights.kinematic >= 0) || !(weights.pose >= 0) || !(weights.align >= 0) ||
            !std::isfinite(weights.kinematic) || !std::isfinite(weights.pose) ||
            !std::isfinite(weights.align))
            throw ConfigError("loss weights must be finite and non-negative");
        if (phase1_steps < 0 || phase2_steps < 0) throw ConfigError("step budgets must be >= 0");
        if (mesh_samples_per_sequence < 1) throw ConfigError("mesh_samples_per_sequence must be >= 1");
        if (!(hop_decay > 0.0) || hop_decay > 1.0) throw ConfigError("hop_decay must be in (0, 1]");
        if (bptt_window < 1) throw ConfigError("bptt_window must be >= 1");
    }

    static TrainConfig from_file(const std::string& path) {
        const KeyValueFile kv = KeyValueFile::load(path);
        TrainConfig c;
        c.net = NetConfig::from_kv(kv);
        c.weights.kinematic = kv.get_real("lambda_kinematic", c.weights.kinematic);
        c.weights.pose = kv.get_real("lambda_pose", c.weights.pose);
        c.weights.align = kv.get_real("lambda_align", c.weights.align);
        c.phase1_steps = kv.get_int("phase1_steps", c.phase1_steps);
        c.phase2_steps = kv.get_int("phase2_steps", c.phase2_steps);
        c.mesh_samples_per_sequence =
            kv.get_int("mesh_samples_per_sequence", c.mesh_samples_per_sequence);
        c.hop_decay = kv.get_real("hop_decay", c.hop_decay);
        c.bptt_window = kv.get_int("bptt_window", c.bptt_window);
        c.adam.lr = kv.get_real("learning_rate", c.adam.lr);
        c.adam.beta1 = kv.get_real("adam_beta1", c.adam.beta1);
        c.adam.beta2 = kv.get_real("adam_beta2", c.adam.beta2);
        c.adam.eps = kv.get_real("adam_eps", c.adam.eps);
        c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<int>(c.seed)));
        c.plateau_window = kv.get_int("plateau_window", c.plateau_window);
        c.plateau_rel_improvement = kv.get_real("plateau_rel_improvement", c.plateau_rel_improvement);
        c.validate();
        return c;
    }
};

// Weighted stratified vertex sampling: weight = (bone area per vertex)
// * hop_decay^hops(region(v), joint), drawn without replacement via
// exponential sort keys. Deterministic in the seed.
inline std::vector<int> sample_mesh_vertices(const BodyModel& body, int joint, int n,
                                             double hop_decay, std::uint64_t seed) {
    if (joint < 0 || joint >= kJointCount) throw ValidationError("joint index out of range");
    if (n < 1) throw ValidationError("sample count must be >= 1");
    const int total = body.mesh.vertex_count();
    if (n > total) {
        std::cerr << "warning: sample count " << n << " clamped to vertex count " << total << "\n";
        n = total;
    }

    std::array<double, kJointCount> hop_weight;
    for (int r = 0; r < kJointCount; ++r)
        hop_weight[r] = std::pow(hop_decay, hop_distance(body.skeleton, r, joint));

    std::array<double, kJointCount> area_per_vertex{};
    const int per_bone = body.config.rings * body.config.segments + 2;
    for (int b = 1; b < kJointCount; ++b) {
        const double len = body.skeleton.rest_offset[b].norm();
        const double radius = detail::bone_radius(body.config, b);
        area_per_vertex[b] = (2.0 * M_PI * radius * len + 2.0 * M_PI * radius * radius) / per_bone;
    }

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<std::pair<double, int>> keyed(total);
    for (int v = 0; v < total; ++v) {
        const double w = area_per_vertex[body.mesh.bone_of_vertex[v]] * hop_weight[body.mesh.region[v]];
        const double u = unit(rng);
        const double key = w > 0 ? std::pow(u, 1.0 / w) : 0.0;
        keyed[v] = {key, v};
    }
    std::sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    std::vector<int> out(n);
    for (int i = 0; i < n; ++i) out[i] = keyed[i].second;
    return out;
}

// Per-sequence caches shared by both training phases.
struct PreparedSequence {
    MotionSequence motion;
    std::vector<BodyTransforms> transforms;
    KinematicsGT gt;
    std::array<ImuTrack, kJointCount> joint_tracks;
    std::array<std::vector<std::array<double, 9>>, kJointCount> joint_channels;
    std::vector<std::vector<double>> pose_gt;  // frames x 144
    std::unordered_map<int, ImuTrack> mesh_track_cache;

    const ImuTrack& mesh_track(const BodyModel& body, int vertex) {
        auto it = mesh_track_cache.find(vertex);
        if (it != mesh_track_cache.end()) return it->second;
        ImuTrack track = synthesize_mesh_imu(body, motion, vertex, &transforms);
        return mesh_track_cache.emplace(vertex, std::move(track)).first->second;
    }
};

inline PreparedSequence prepare_sequence(const BodyModel& body, const MotionSequence& motion,
                                         const NetConfig& net) {
    PreparedSequence ps;
    ps.motion = motion;
    ps.transforms = motion_transforms(body.skeleton, motion);
    ps.gt = kinematics_ground_truth(body, motion, &ps.transforms);
    for (int j = 0; j < kJointCount; ++j) {
        ps.joint_tracks[j] = synthesize_joint_imu(body, motion, j, &ps.transforms);
        ps.joint_channels[j] = encode_channels(ps.joint_tracks[j], net.accel_scale);
    }
    ps.pose_gt.reserve(ps.gt.frames);
    for (int t = 0; t < ps.gt.frames; ++t) ps.pose_gt.push_back(pose_gt_row(ps.gt, t));
    return ps;
}

// Forward one joint node over a whole sequence in truncated windows,
// without gradients, collecting the detached feature sequence (and
// optionally the root-velocity head values).
inline std::vector<std::vector<double>> forward_node_features(
    ModelParams& model, int joint, const std::vector<std::array<double, 9>>& channels,
    const PlacementCoordinate& placement, const BodyModel& body, int bptt_window,
    std::vector<Vec3>* root_velocity_out = nullptr) {
    const int frames = static_cast<int>(channels.size());
    std::vector<std::vector<double>> features;
    features.reserve(frames);
    PathwayCarry carry = PathwayCarry::zeros(model.config);
    for (int t0 = 0; t0 < frames; t0 += bptt_window) {
        const int t1 = std::min(frames, t0 + bptt_window);
        Graph g;
        const NodeForwardResult fwd =
            node_forward_window(g, model, joint, channels, placement, body, t0, t1, &carry);
        for (int i = 0; i < t1 - t0; ++i) {
            features.push_back(g.value(fwd.z[i]).data);
            if (root_velocity_out) {
                const auto& v = g.value(fwd.kr.heads[int(KrHead::root_velocity)][i]).data;
                root_velocity_out->push_back(Vec3(v[0], v[1], v[2]));
            }
        }
    }
    return features;
}

struct StepLoss {
    int step;
    double kinematic;
    double pose;
    double align;

    double total(const LossWeights& w) const {
        return w.kinematic * kinematic + w.pose * pose + w.align * align;
    }
};

struct TrainReport {
    std::vector<StepLoss> steps;
    bool plateaued = false;
};

namespace detail {

struct LossAccumulator {
    double kin = 0, pose = 0, align = 0;
    long count = 0;
    void add(const NodeLossBreakdown& b) {
        kin += b.kinematic;
        pose += b.pose;
        align += b.align;
        ++count;
    }
    StepLoss mean(int step) const {
        const double c = count > 0 ? static_cast<double>(count) : 1.0;
        return {step, kin / c, pose / c, align / c};
    }
};

// Fills the buffer with detached joint-IMU features for every node.
inline void fill_buffer_from_joints(ModelParams& model, const BodyModel& body,
                                    PreparedSequence& ps, int bptt_window, NodeBuffer& buffer) {
    for (int j = 0; j < kJointCount; ++j) {
        buffer.store(j,
                     forward_node_features(model, j, ps.joint_channels[j],
                                           ps.joint_tracks[j].placement, body, bptt_window),
                     false);
    }
}

// Forward + losses + backward over truncated windows for one node on one
// track; gradients are summed into `grads`.
inline void backprop_node_on_track(ModelParams& model, int joint,
                                   const std::vector<std::array<double, 9>>& channels,
                                   const PlacementCoordinate& placement, const BodyModel& body,
                                   const KinematicsGT& gt,
                                   const std::vector<std::vector<double>>& pose_gt,
                                   const NodeBuffer& buffer,
                                   const std::vector<std::vector<double>>* z_ref,
                                   const LossWeights& weights, int bptt_window,
                                   std::map<const Tensor*, std::vector<double>>& grads,
                                   LossAccumulator& log,
                                   std::vector<std::vector<double>>* features_out = nullptr) {
    const int frames = static_cast<int>(channels.size());
    PathwayCarry carry = PathwayCarry::zeros(model.config);
    for (int t0 = 0; t0 < frames; t0 += bptt_window) {
        const int t1 = std::min(frames, t0 + bptt_window);
        Graph g;
        const NodeForwardResult fwd =
            node_forward_window(g, model, joint, channels, placement, body, t0, t1, &carry);
        const NodeLossBreakdown loss = total_node_loss(g, model, joint, fwd, gt, buffer, z_ref,
                                                       pose_gt, weights, t0, t1);
        g.backward(loss.total);
        g.accumulate_leaf_grads(grads);
        log.add(loss);
        if (features_out)
            for (int i = 0; i < t1 - t0; ++i) features_out->push_back(g.value(fwd.z[i]).data);
    }
}

inline std::uint64_t derive_seed(std::uint64_t seed, int step, int joint) {
    Fnv1a64 h;
    h.update(&seed, sizeof(seed));
    h.update(&step, sizeof(step));
    h.update(&joint, sizeof(joint));
    return h.digest();
}

inline bool plateau_reached(const std::vector<StepLoss>& steps, const TrainConfig& cfg) {
    const int w = cfg.plateau_window;
    if (static_cast<int>(steps.size()) < 2 * w) return false;
    auto window_mean = [&](int begin) {
        double s = 0;
        for (int i = begin; i < begin + w; ++i) s += steps[i].total(cfg.weights);
        return s / w;
    };
    const double prev = window_mean(static_cast<int>(steps.size()) - 2 * w);
    const double last = window_mean(static_cast<int>(steps.size()) - w);
    return prev - last < cfg.plateau_rel_improvement * std::abs(prev);
}

}  // namespace detail

// Phase 1: joint virtual IMUs only, kinematic + pose loss (no alignment),
// one optimizer step per sequence pass, plateau detection on top of the
// fixed step budget.
inline TrainReport train_phase1(ModelParams& model, const BodyModel& body,
                                const std::vector<MotionSequence>& corpus, const TrainConfig& config,
                                AdamState& opt, std::ostream* log_stream = nullptr) {
    config.validate();
    if (corpus.empty()) throw ValidationError("training corpus is empty");
    if (model.config != config.net)
        throw ValidationError("model and training config disagree on network shape");

    std::vector<PreparedSequence> prepared;
    prepared.reserve(corpus.size());
    for (const MotionSequence& m : corpus) prepared.push_back(prepare_sequence(body, m, config.net));

    const std::vector<NamedParam> all_params = model.named_params();
    TrainReport report;
    const LossWeights phase1_weights{config.weights.kinematic, config.weights.pose, 0.0};

    for (int step = 0; step < config.phase1_steps; ++step) {
        PreparedSequence& ps = prepared[step % prepared.size()];
        NodeBuffer buffer;
        detail::fill_buffer_from_joints(model, body, ps, config.bptt_window, buffer);

        std::map<const Tensor*, std::vector<double>> grads;
        detail::LossAccumulator acc;
        for (int j = 0; j < kJointCount; ++j) {
            detail::backprop_node_on_track(model, j, ps.joint_channels[j],
                                           ps.joint_tracks[j].placement, body, ps.gt, ps.pose_gt,
                                           buffer, nullptr, phase1_weights, config.bptt_window,
                                           grads, acc);
        }
        adam_step(all_params, grads, opt);

        report.steps.push_back(acc.mean(step));
        if (log_stream) {
            const StepLoss& s = report.steps.back();
            *log_stream << s.step << ' ' << format_real(s.kinematic) << ' ' << format_real(s.pose)
                        << ' ' << format_real(s.align) << "\n";
        }
        if (detail::plateau_reached(report.steps, config)) {
            report.plateaued = true;
            break;
        }
    }
    return report;
}

// Phase 2: per sequence pass, refill the buffer and reference features from
// the joint IMUs, then per node accumulate gradients from the joint-IMU
// pass and the sampled mesh-IMU passes (Eq-style objective with alignment)
// and take one optimizer step per node with KR parameters excluded. The
// buffer slot is replaced by the detached mesh feature after the step.
inline TrainReport train_phase2(ModelParams& model, const BodyModel& body,
                                const std::vector<MotionSequence>& corpus, const TrainConfig& config,
                                AdamState& opt, std::ostream* log_stream = nullptr) {
    config.validate();
    if (corpus.empty()) throw ValidationError("training corpus is empty");
    if (model.config != config.net)
        throw ValidationError("model and training config disagree on network shape");

    std::vector<PreparedSequence> prepared;
    prepared.reserve(corpus.size());
    for (const MotionSequence& m : corpus) prepared.push_back(prepare_sequence(body, m, config.net));

    const int samples_per_node = std::max(1, config.mesh_samples_per_sequence / kJointCount);
    TrainReport report;

    for (int step = 0; step < config.phase2_steps; ++step) {
        PreparedSequence& ps = prepared[step % prepared.size()];

        NodeBuffer buffer;
        std::array<std::vector<std::vector<double>>, kJointCount> z_ref;
        for (int j = 0; j < kJointCount; ++j) {
            z_ref[j] = forward_node_features(model, j, ps.joint_channels[j],
                                             ps.joint_tracks[j].placement, body, config.bptt_window);
            buffer.store(j, z_ref[j], false);
        }

        detail::LossAccumulator acc;
        for (int j = 0; j < kJointCount; ++j) {
            std::map<const Tensor*, std::vector<double>> grads;
            // joint-IMU pass: kinematic + pose, no alignment against itself
            const LossWeights joint_weights{config.weights.kinematic, config.weights.pose, 0.0};
            detail::backprop_node_on_track(model, j, ps.joint_channels[j],
                                           ps.joint_tracks[j].placement, body, ps.gt, ps.pose_gt,
                                           buffer, nullptr, joint_weights, config.bptt_window,
                                           grads, acc);

            const std::vector<int> vertices = sample_mesh_vertices(
                body, j, samples_per_node, config.hop_decay,
                detail::derive_seed(config.seed, step, j));
            std::vector<std::vector<double>> last_mesh_features;
            for (int v : vertices) {
                const ImuTrack& track = ps.mesh_track(body, v);
                const auto channels = encode_channels(track, config.net.accel_scale);
                std::vector<std::vector<double>> features;
                detail::backprop_node_on_track(model, j, channels, track.placement, body, ps.gt,
                                               ps.pose_gt, buffer, &z_ref[j], config.weights,
                                               config.bptt_window, grads, acc, &features);
                last_mesh_features = std::move(features);
            }

            adam_step(model.node_and_pr_params(j, /*freeze_kr=*/true), grads, opt);
            buffer.store(j, std::move(last_mesh_features), true);
        }

        report.steps.push_back(acc.mean(step));
        if (log_stream) {
            const StepLoss& s = report.steps.back();
            *log_stream << s.step << ' ' << format_real(s.kinematic) << ' ' << format_real(s.pose)
                        << ' ' << format_real(s.align) << "\n";
        }
    }
    return report;
}

// Mean alignment loss of mesh placements against their natural node's
// joint-IMU reference; used for held-out smoke evaluation.
inline double mean_mesh_alignment_loss(ModelParams& model, const BodyModel& body,
                                       const std::vector<MotionSequence>& corpus,
                                       const std::vector<int>& vertices, int bptt_window) {
    double sum = 0;
    long count = 0;
    for (const MotionSequence& motion : corpus) {
        const std::vector<BodyTransforms> transforms = motion_transforms(body.skeleton, motion);
        for (int v : vertices) {
            const int joint = body.mesh.region[v];
            const ImuTrack joint_track = synthesize_joint_imu(body, motion, joint, &transforms);
            const auto joint_channels = encode_channels(joint_track, model.config.accel_scale);
            const auto ref = forward_node_features(model, joint, joint_channels,
                                                   joint_track.placement, body, bptt_window);
            const ImuTrack mesh = synthesize_mesh_imu(body, motion, v, &transforms);
            const auto mesh_channels = encode_channels(mesh, model.config.accel_scale);
            const auto feat = forward_node_features(model, joint, mesh_channels, mesh.placement,
                                                    body, bptt_window);
            double per_frame = 0;
            long used = 0;
            for (std::size_t t = 0; t < feat.size(); ++t) {
                double na = 0, nb = 0, d = 0;
                for (std::size_t i = 0; i < feat[t].size(); ++i) {
                    na += feat[t][i] * feat[t][i];
                    nb += ref[t][i] * ref[t][i];
                    d += feat[t][i] * ref[t][i];
                }
                if (na < 1e-24 || nb < 1e-24) continue;
                per_frame += 1.0 - d / (std::sqrt(na) * std::sqrt(nb));
                ++used;
            }
            if (used > 0) {
                sum += per_frame / used;
                ++count;
            }
        }
    }
    return count > 0 ? sum / count : 0.0;
}

}  // namespace imucoco
