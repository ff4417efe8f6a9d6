#pragma once

#include "imucoco/matchmaker.hpp"
#include "imucoco/metrics.hpp"

namespace imucoco {

struct PoseEstimate {
    double fps = 60.0;
    RotationSeq orientation;             // re-orthonormalized, det +1
    std::vector<Vec3> translation;       // integrated mean root velocity

    int frame_count() const { return static_cast<int>(orientation.size()); }
};

struct InferOptions {
    int bptt_window = 64;
    bool zero_coordinates = false;  // ablation: SCE sees r = (0,0,0)
};

// Test-time pipeline: matchmaker assignment, per-node forward on the
// assigned device's track, PR on the 24 features, root translation from
// the mean of all nodes' root-velocity heads.
inline PoseEstimate infer_pose(ModelParams& model, std::uint64_t model_fp, const LossTable& table,
                               const DeviceSet& devices, const std::vector<ImuTrack>& tracks,
                               const BodyModel& body, const InferOptions& options = {}) {
    validate_table(table, body, model_fp);
    devices.validate(body);
    if (tracks.size() != devices.devices.size())
        throw ValidationError("expected one track per device");
    if (tracks.empty()) throw ValidationError("no input tracks");

    const double fps = tracks[0].fps;
    const int frames = tracks[0].frame_count();
    for (std::size_t i = 0; i < tracks.size(); ++i) {
        if (std::abs(tracks[i].fps - fps) > 1e-9)
            throw ValidationError("tracks disagree on fps");
        if (tracks[i].frame_count() != frames)
            throw ValidationError("tracks disagree on frame count");
        if ((tracks[i].placement.r - devices.devices[i].placement.r).norm() > 1e-6)
            throw ValidationError("device " + std::to_string(devices.devices[i].id) +
                                  " placement does not match its track");
    }
    if (frames < 1) throw ValidationError("empty tracks");

    const std::array<int, kJointCount> assignment = assign_devices(table, devices, body);
    std::map<int, int> device_index;  // id -> position in the track list
    for (std::size_t i = 0; i < devices.devices.size(); ++i)
        device_index[devices.devices[i].id] = static_cast<int>(i);

    std::array<std::vector<std::vector<double>>, kJointCount> features;
    std::vector<Vec3> velocity_sum(frames, Vec3::Zero());
    for (int j = 0; j < kJointCount; ++j) {
        const ImuTrack& track = tracks[device_index.at(assignment[j])];
        auto channels = encode_channels(track, model.config.accel_scale);
        PlacementCoordinate placement = track.placement;
        if (options.zero_coordinates) placement.r = Vec3::Zero();
        std::vector<Vec3> root_velocity;
        features[j] = forward_node_features(model, j, channels, placement, body,
                                            options.bptt_window, &root_velocity);
        for (int t = 0; t < frames; ++t) velocity_sum[t] += root_velocity[t];
    }

    PoseEstimate estimate;
    estimate.fps = fps;
    estimate.orientation.resize(frames);
    estimate.translation.resize(frames);

    Graph g;
    for (int t = 0; t < frames; ++t) {
        std::vector<NodeId> slots(kJointCount);
        for (int j = 0; j < kJointCount; ++j) slots[j] = g.constant(Tensor::vector(features[j][t]));
        const std::vector<double>& pose = g.value(pr_forward(g, model, slots)).data;
        for (int j = 0; j < kJointCount; ++j) {
            Rot6d r;
            for (int i = 0; i < 6; ++i) r[i] = pose[j * 6 + i];
            estimate.orientation[t][j] = rotation_from_6d(r);
        }
    }
    estimate.translation[0] = Vec3::Zero();
    for (int t = 1; t < frames; ++t)
        estimate.translation[t] =
            estimate.translation[t - 1] + velocity_sum[t] / (kJointCount * fps);
    return estimate;
}

struct SweepVariant {
    std::string label;
    std::vector<Vec3> device_positions;
};

struct SweepRow {
    std::string label;
    double gae_deg = 0;
};

// For each placement variant: synthesize tracks at the nearest mesh
// vertices, infer, and score GAE against the motion's FK ground truth,
// averaged over the corpus.
inline std::vector<SweepRow> placement_sweep(ModelParams& model, std::uint64_t model_fp,
                                             const BodyModel& body,
                                             const std::vector<MotionSequence>& corpus,
                                             const std::vector<SweepVariant>& variants,
                                             const LossTable& table, const InferOptions& options = {}) {
    if (corpus.empty()) throw ValidationError("sweep needs a non-empty motion corpus");
    std::vector<SweepRow> rows;
    rows.reserve(variants.size());
    for (const SweepVariant& variant : variants) {
        if (variant.device_positions.empty())
            throw ValidationError("sweep variant `" + variant.label + "` has no devices");
        double gae_sum = 0;
        for (const MotionSequence& motion : corpus) {
            const std::vector<BodyTransforms> transforms = motion_transforms(body.skeleton, motion);
            DeviceSet devices;
            std::vector<ImuTrack> tracks;
            for (std::size_t i = 0; i < variant.device_positions.size(); ++i) {
                const int v = nearest_vertex(body, variant.device_positions[i]);
                tracks.push_back(synthesize_mesh_imu(body, motion, v, &transforms));
                devices.devices.push_back({static_cast<int>(i), tracks.back().placement});
            }
            const PoseEstimate estimate =
                infer_pose(model, model_fp, table, devices, tracks, body, options);
            gae_sum += global_angular_error(estimate.orientation,
                                            ground_truth_rotations(body.skeleton, motion));
        }
        rows.push_back({variant.label, gae_sum / corpus.size()});
    }
    return rows;
}

// .pose text round trip for estimates.
inline void write_pose_estimate(const PoseEstimate& estimate, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open for writing: " + path);
    out << "fps " << format_real(estimate.fps) << "\n";
    out << "frames " << estimate.frame_count() << "\n";
    for (int t = 0; t < estimate.frame_count(); ++t) {
        out << format_real(estimate.translation[t].x()) << ' '
            << format_real(estimate.translation[t].y()) << ' '
            << format_real(estimate.translation[t].z());
        for (int j = 0; j < kJointCount; ++j) {
            const Rot6d r = rotation_to_6d(estimate.orientation[t][j]);
            for (int i = 0; i < 6; ++i) out << ' ' << format_real(r[i]);
        }
        out << "\n";
    }
    if (!out) throw ValidationError("write failed: " + path);
}

inline PoseEstimate read_pose_estimate(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open pose file: " + path);
    std::string line, key;
    PoseEstimate estimate;
    int frames = 0;
    if (!std::getline(in, line)) throw ParseError(path, 1, "missing fps header");
    {
        std::istringstream s(line);
        s >> key >> estimate.fps;
        if (s.fail() || key != "fps") throw ParseError(path, 1, "expected `fps <real>`");
    }
    if (!std::getline(in, line)) throw ParseError(path, 2, "missing frames header");
    {
        std::istringstream s(line);
        s >> key >> frames;
        if (s.fail() || key != "frames" || frames < 1)
            throw ParseError(path, 2, "expected `frames <count>`");
    }
    estimate.orientation.resize(frames);
    estimate.translation.resize(frames);
    for (int t = 0; t < frames; ++t) {
        if (!std::getline(in, line)) throw ParseError(path, 3 + t, "unexpected end of file");
        std::istringstream s(line);
        s >> estimate.translation[t].x() >> estimate.translation[t].y() >> estimate.translation[t].z();
        for (int j = 0; j < kJointCount; ++j) {
            Rot6d r;
            for (int i = 0; i < 6; ++i) s >> r[i];
            estimate.orientation[t][j] = rotation_from_6d(r);
        }
        if (s.fail()) throw ParseError(path, 3 + t, "malformed pose row");
    }
    return estimate;
}

}  // namespace imucoco
