#pragma once

#include <array>
#include <fstream>
#include <optional>
#include <sstream>
#include <vector>

#include "imucoco/body_model.hpp"
#include "imucoco/motion.hpp"

namespace imucoco {

struct PlacementCoordinate {
    Vec3 r = Vec3::Zero();  // root-centered T-pose position
    int region_k = 0;
};

inline constexpr double kPlacementBoundsSlack = 0.05;

// Placements must live on or near the body surface.
inline void validate_placement_bounds(const BodyModel& body, const Vec3& r) {
    static constexpr const char* axis_name[3] = {"x", "y", "z"};
    for (int a = 0; a < 3; ++a) {
        if (r[a] < body.r_min[a] - kPlacementBoundsSlack || r[a] > body.r_max[a] + kPlacementBoundsSlack)
            throw ValidationError(std::string("placement out of body bounds on axis ") + axis_name[a] +
                                  ": " + format_real(r[a]));
    }
}

struct ImuTrack {
    PlacementCoordinate placement;
    std::vector<Vec3> accel;   // m/s^2, world frame
    std::vector<Quat> orient;  // T-pose calibrated
    double fps = 60.0;
    std::vector<int> degenerate_frames;  // frames where the face-frame fallback fired

    int frame_count() const { return static_cast<int>(accel.size()); }
};

// Ground-truth regression targets for the five kinematics heads.
struct KinematicsGT {
    double fps = 60.0;
    int frames = 0;
    std::array<std::vector<Vec3>, kJointCount> velocity;            // m/s, world
    std::array<std::vector<Vec3>, kJointCount> position;            // m, root-centered
    std::array<std::vector<Rot6d>, kJointCount> local_orientation;
    std::array<std::vector<Rot6d>, kJointCount> global_orientation;
    std::vector<Vec3> root_velocity;                                // m/s
};

inline std::vector<BodyTransforms> motion_transforms(const Skeleton& skeleton,
                                                     const MotionSequence& motion) {
    std::vector<BodyTransforms> out;
    out.reserve(motion.frames.size());
    for (const PoseFrame& f : motion.frames) out.push_back(forward_kinematics(skeleton, f));
    return out;
}

// Sensor frame at a mesh vertex: y points along the mean incident-face
// normal (outward), z is orthogonal to the plane spanned by the posed bone
// direction and y, and x completes the right-handed triad. When the bone
// direction degenerates against y, z falls back to the previous frame's
// z-axis projected orthogonal to y (a fixed completion at t = 0).
inline Mat3 vertex_orientation_frame(const BodyModel& body, int vertex_id,
                                     const BodyTransforms& transforms,
                                     const Vec3* previous_z = nullptr,
                                     bool* degenerate = nullptr) {
    if (vertex_id < 0 || vertex_id >= body.mesh.vertex_count())
        throw ValidationError("vertex id out of range: " + std::to_string(vertex_id));
    const auto& incident = body.vertex_faces[vertex_id];
    if (incident.empty())
        throw ValidationError("vertex has no incident faces: " + std::to_string(vertex_id));

    Vec3 normal_sum = Vec3::Zero();
    for (int f : incident) {
        const auto& face = body.mesh.faces[f];
        const Vec3 p0 = skin_vertex(body, transforms, face[0]);
        const Vec3 p1 = skin_vertex(body, transforms, face[1]);
        const Vec3 p2 = skin_vertex(body, transforms, face[2]);
        normal_sum += (p1 - p0).cross(p2 - p0).normalized();
    }
    const Vec3 y = normal_sum.normalized();

    const int bone = body.mesh.bone_of_vertex[vertex_id];
    const Vec3 b = transforms[bone].position - transforms[body.skeleton.parent[bone]].position;

    Vec3 z;
    const Vec3 bxy = b.cross(y);
    if (bxy.norm() < 1e-8) {
        if (degenerate) *degenerate = true;
        if (previous_z) {
            z = (*previous_z - previous_z->dot(y) * y);
            if (z.norm() < 1e-8) z = y.cross(std::abs(y.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY());
        } else {
            z = y.cross(std::abs(y.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY());
        }
        z.normalize();
    } else {
        if (degenerate) *degenerate = false;
        z = bxy.normalized();
    }
    Mat3 frame;
    frame.col(0) = y.cross(z);
    frame.col(1) = y;
    frame.col(2) = z;
    return frame;
}

// out[t] = raw[t] * tpose^{-1}; the designated T-pose frame reads identity.
inline std::vector<Quat> calibrate(const std::vector<Quat>& raw, const Quat& tpose_orient) {
    const Quat inv = tpose_orient.conjugate();
    std::vector<Quat> out;
    out.reserve(raw.size());
    for (const Quat& q : raw) out.push_back((q * inv).normalized());
    return out;
}

namespace detail {

// Central second difference with endpoint clamping to the nearest interior value.
inline std::vector<Vec3> second_difference(const std::vector<Vec3>& p, double fps) {
    const int n = static_cast<int>(p.size());
    std::vector<Vec3> acc(n, Vec3::Zero());
    for (int t = 1; t + 1 < n; ++t) acc[t] = (p[t + 1] - 2.0 * p[t] + p[t - 1]) * fps * fps;
    if (n >= 3) {
        acc[0] = acc[1];
        acc[n - 1] = acc[n - 2];
    }
    return acc;
}

inline std::vector<Vec3> first_difference(const std::vector<Vec3>& p, double fps) {
    const int n = static_cast<int>(p.size());
    std::vector<Vec3> vel(n, Vec3::Zero());
    for (int t = 1; t + 1 < n; ++t) vel[t] = (p[t + 1] - p[t - 1]) * (fps / 2.0);
    if (n >= 3) {
        vel[0] = vel[1];
        vel[n - 1] = vel[n - 2];
    }
    return vel;
}

inline ImuTrack make_track(std::vector<Vec3> positions, std::vector<Quat> raw_orient,
                           PlacementCoordinate placement, double fps,
                           std::vector<int> degenerate_frames) {
    ImuTrack track;
    track.placement = placement;
    track.fps = fps;
    track.accel = second_difference(positions, fps);
    track.orient = calibrate(raw_orient, raw_orient.front());
    track.degenerate_frames = std::move(degenerate_frames);
    return track;
}

}  // namespace detail

// Virtual IMU at a mesh vertex: acceleration from the second difference of
// skinned positions, orientation from the face frame, T-pose calibrated at
// frame 0 (every generated sequence starts at an exact T-pose).
inline ImuTrack synthesize_mesh_imu(const BodyModel& body, const MotionSequence& motion,
                                    int vertex_id,
                                    const std::vector<BodyTransforms>* cached = nullptr) {
    if (motion.frame_count() < 3) throw ValidationError("motion needs at least 3 frames");
    if (vertex_id < 0 || vertex_id >= body.mesh.vertex_count())
        throw ValidationError("vertex id out of range: " + std::to_string(vertex_id));

    std::vector<BodyTransforms> local;
    if (!cached) {
        local = motion_transforms(body.skeleton, motion);
        cached = &local;
    }
    const int n = motion.frame_count();
    std::vector<Vec3> pos(n);
    std::vector<Quat> raw(n);
    std::vector<int> degenerate_frames;
    Vec3 prev_z = Vec3::Zero();
    for (int t = 0; t < n; ++t) {
        pos[t] = skin_vertex(body, (*cached)[t], vertex_id);
        bool degenerate = false;
        const Mat3 frame = vertex_orientation_frame(body, vertex_id, (*cached)[t],
                                                    t > 0 ? &prev_z : nullptr, &degenerate);
        if (degenerate) degenerate_frames.push_back(t);
        prev_z = frame.col(2);
        raw[t] = Quat(frame).normalized();
    }
    PlacementCoordinate placement{body.mesh.vertices_rest[vertex_id],
                                  body.mesh.region[vertex_id]};
    return detail::make_track(std::move(pos), std::move(raw), placement, motion.fps,
                              std::move(degenerate_frames));
}

namespace detail {

// Trajectory a joint node samples from: its chain child, or for leaf joints
// the extension vertex beyond the leaf bone.
inline std::vector<Vec3> joint_sample_positions(const BodyModel& body, int joint,
                                                const std::vector<BodyTransforms>& transforms) {
    const int child = kPrimaryChild[joint];
    const int n = static_cast<int>(transforms.size());
    std::vector<Vec3> pos(n);
    if (child >= 0) {
        for (int t = 0; t < n; ++t) pos[t] = transforms[t][child].position;
    } else {
        const int v = body.extension_vertex[joint];
        for (int t = 0; t < n; ++t) pos[t] = skin_vertex(body, transforms[t], v);
    }
    return pos;
}

inline PlacementCoordinate joint_sample_placement(const BodyModel& body, int joint) {
    const int child = kPrimaryChild[joint];
    if (child >= 0) {
        const int apex = body.end_apex_vertex[child];
        return {body.tpose_joint_pos[child], body.mesh.region[apex]};
    }
    const int v = body.extension_vertex[joint];
    return {body.mesh.vertices_rest[v], body.mesh.region[v]};
}

}  // namespace detail

// Joint virtual IMU: kinematics sampled from the chain child (extension
// vertex for leaves), orientation kept from the joint itself.
inline ImuTrack synthesize_joint_imu(const BodyModel& body, const MotionSequence& motion,
                                     int joint,
                                     const std::vector<BodyTransforms>* cached = nullptr) {
    if (motion.frame_count() < 3) throw ValidationError("motion needs at least 3 frames");
    if (joint < 0 || joint >= kJointCount)
        throw ValidationError("joint index out of range: " + std::to_string(joint));

    std::vector<BodyTransforms> local;
    if (!cached) {
        local = motion_transforms(body.skeleton, motion);
        cached = &local;
    }
    const int n = motion.frame_count();
    std::vector<Vec3> pos = detail::joint_sample_positions(body, joint, *cached);
    std::vector<Quat> raw(n);
    for (int t = 0; t < n; ++t) raw[t] = Quat((*cached)[t][joint].rotation).normalized();
    return detail::make_track(std::move(pos), std::move(raw),
                              detail::joint_sample_placement(body, joint), motion.fps, {});
}

struct LeafExtension {
    int joint;
    int vertex;
    Vec3 rest_position;
};

// The five surface points beyond the leaf joints (head top, fingertips,
// toe tips) used in place of the leaf joints' missing children.
inline std::array<LeafExtension, 5> leaf_extension_vertices(const BodyModel& body) {
    std::array<LeafExtension, 5> out;
    for (std::size_t i = 0; i < kLeafJoints.size(); ++i) {
        const int joint = kLeafJoints[i];
        const int v = body.extension_vertex[joint];
        out[i] = {joint, v, body.mesh.vertices_rest[v]};
    }
    return out;
}

// 9-channel network input: scaled acceleration followed by the 6D rotation
// (first two matrix columns, column-major).
inline std::vector<std::array<double, 9>> encode_channels(const ImuTrack& track,
                                                          double accel_scale = 9.81) {
    std::vector<std::array<double, 9>> out(track.frame_count());
    for (int t = 0; t < track.frame_count(); ++t) {
        const Vec3 a = track.accel[t] / accel_scale;
        const Rot6d r = rotation_to_6d(track.orient[t].toRotationMatrix());
        out[t] = {a.x(), a.y(), a.z(), r[0], r[1], r[2], r[3], r[4], r[5]};
    }
    return out;
}

inline KinematicsGT kinematics_ground_truth(const BodyModel& body, const MotionSequence& motion,
                                            const std::vector<BodyTransforms>* cached = nullptr) {
    if (motion.frame_count() < 3) throw ValidationError("motion needs at least 3 frames");
    std::vector<BodyTransforms> local;
    if (!cached) {
        local = motion_transforms(body.skeleton, motion);
        cached = &local;
    }
    const int n = motion.frame_count();
    KinematicsGT gt;
    gt.fps = motion.fps;
    gt.frames = n;

    std::vector<Vec3> root(n);
    for (int t = 0; t < n; ++t) root[t] = motion.frames[t].root_translation;
    gt.root_velocity = detail::first_difference(root, motion.fps);

    for (int j = 0; j < kJointCount; ++j) {
        std::vector<Vec3> sampled = detail::joint_sample_positions(body, j, *cached);
        gt.velocity[j] = detail::first_difference(sampled, motion.fps);
        gt.position[j].resize(n);
        gt.local_orientation[j].resize(n);
        gt.global_orientation[j].resize(n);
        for (int t = 0; t < n; ++t) {
            gt.position[j][t] = sampled[t] - (*cached)[t][0].position;
            gt.local_orientation[j][t] =
                rotation_to_6d(motion.frames[t].local_rotation[j].toRotationMatrix());
            gt.global_orientation[j][t] = rotation_to_6d((*cached)[t][j].rotation);
        }
    }
    return gt;
}

// .imutrack text round trip.
inline void write_imu_track(const ImuTrack& track, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open for writing: " + path);
    out << "fps " << format_real(track.fps) << "\n";
    out << "T " << track.frame_count() << "\n";
    out << "placement " << format_real(track.placement.r.x()) << ' '
        << format_real(track.placement.r.y()) << ' ' << format_real(track.placement.r.z()) << "\n";
    out << "region " << track.placement.region_k << "\n";
    for (int t = 0; t < track.frame_count(); ++t) {
        const Vec3& a = track.accel[t];
        const Quat& q = track.orient[t];
        out << format_real(a.x()) << ' ' << format_real(a.y()) << ' ' << format_real(a.z()) << ' '
            << format_real(q.w()) << ' ' << format_real(q.x()) << ' ' << format_real(q.y()) << ' '
            << format_real(q.z()) << "\n";
    }
    if (!out) throw ValidationError("write failed: " + path);
}

inline ImuTrack read_imu_track(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open imu track file: " + path);
    ImuTrack track;
    std::string line, key;
    int frames = 0;

    auto next_line = [&](int lineno) {
        if (!std::getline(in, line)) throw ParseError(path, lineno, "unexpected end of file");
        return std::istringstream(line);
    };
    {
        auto s = next_line(1);
        s >> key >> track.fps;
        if (s.fail() || key != "fps") throw ParseError(path, 1, "expected `fps <real>`");
    }
    {
        auto s = next_line(2);
        s >> key >> frames;
        if (s.fail() || key != "T" || frames < 1) throw ParseError(path, 2, "expected `T <count>`");
    }
    {
        auto s = next_line(3);
        s >> key >> track.placement.r.x() >> track.placement.r.y() >> track.placement.r.z();
        if (s.fail() || key != "placement") throw ParseError(path, 3, "expected `placement x y z`");
    }
    {
        auto s = next_line(4);
        s >> key >> track.placement.region_k;
        if (s.fail() || key != "region" || track.placement.region_k < 0 ||
            track.placement.region_k >= kJointCount)
            throw ParseError(path, 4, "expected `region <0..23>`");
    }
    track.accel.reserve(frames);
    track.orient.reserve(frames);
    for (int t = 0; t < frames; ++t) {
        auto s = next_line(5 + t);
        Vec3 a;
        double w, x, y, z;
        s >> a.x() >> a.y() >> a.z() >> w >> x >> y >> z;
        if (s.fail()) throw ParseError(path, 5 + t, "malformed frame row");
        track.accel.push_back(a);
        track.orient.push_back(Quat(w, x, y, z));
    }
    for (const Quat& q : track.orient) check_unit_quaternion(q);
    return track;
}

}  // namespace imucoco
