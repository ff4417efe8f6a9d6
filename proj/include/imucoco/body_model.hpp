#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "imucoco/hash.hpp"
#include "imucoco/kvfile.hpp"
#include "imucoco/rotations.hpp"

namespace imucoco {

inline constexpr int kJointCount = 24;

// 24-joint SMPL-style topology. Every non-root joint has a parent with a
// smaller index, so iterating in index order is a valid tree traversal.
inline constexpr std::array<int, kJointCount> kJointParent = {
    -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21};

inline constexpr std::array<const char*, kJointCount> kJointName = {
    "pelvis",     "left_hip",      "right_hip",      "spine1",     "left_knee",
    "right_knee", "spine2",        "left_ankle",     "right_ankle", "spine3",
    "left_foot",  "right_foot",    "neck",           "left_collar", "right_collar",
    "head",       "left_shoulder", "right_shoulder", "left_elbow",  "right_elbow",
    "left_wrist", "right_wrist",   "left_hand",      "right_hand"};

// Chain successor used when a joint node samples kinematics from its child:
// spine chain for the trunk, per-side chains for the limbs. Leaf joints
// (feet, head, hands) map to -1 and use their extension vertex instead.
inline constexpr std::array<int, kJointCount> kPrimaryChild = {
    3,  4,  5,  6,  7,  8,  9,  10, 11, 12, -1, -1, 15, 16, 17, -1, 18, 19, 20, 21, 22, 23, -1, -1};

inline constexpr std::array<int, 5> kLeafJoints = {15, 22, 23, 10, 11};  // head, hands, feet

struct BodyConfig {
    int rings = 5;      // cross-section rings per bone
    int segments = 12;  // vertices per ring
    double extension_length = 0.10;

    // bone lengths / offsets, meters
    double hip_width = 0.09;
    double hip_drop = 0.09;
    double spine1_height = 0.11;
    double spine2_height = 0.13;
    double spine3_height = 0.13;
    double neck_height = 0.16;
    double head_height = 0.12;
    double collar_width = 0.05;
    double collar_height = 0.11;
    double shoulder_width = 0.12;
    double upper_arm_length = 0.28;
    double forearm_length = 0.26;
    double hand_length = 0.09;
    double thigh_length = 0.40;
    double shank_length = 0.40;
    double foot_drop = 0.06;
    double foot_forward = 0.13;

    // bone radii, meters
    double torso_radius = 0.11;
    double hip_radius = 0.07;
    double neck_radius = 0.05;
    double head_radius = 0.09;
    double collar_radius = 0.05;
    double arm_radius = 0.045;
    double forearm_radius = 0.04;
    double hand_radius = 0.035;
    double thigh_radius = 0.065;
    double shank_radius = 0.05;
    double foot_radius = 0.04;

    static BodyConfig from_file(const std::string& path) {
        KeyValueFile kv = KeyValueFile::load(path);
        BodyConfig c;
        c.rings = kv.get_int("rings", c.rings);
        c.segments = kv.get_int("segments", c.segments);
        c.extension_length = kv.get_real("extension_length", c.extension_length);
        c.hip_width = kv.get_real("hip_width", c.hip_width);
        c.hip_drop = kv.get_real("hip_drop", c.hip_drop);
        c.spine1_height = kv.get_real("spine1_height", c.spine1_height);
        c.spine2_height = kv.get_real("spine2_height", c.spine2_height);
        c.spine3_height = kv.get_real("spine3_height", c.spine3_height);
        c.neck_height = kv.get_real("neck_height", c.neck_height);
        c.head_height = kv.get_real("head_height", c.head_height);
        c.collar_width = kv.get_real("collar_width", c.collar_width);
        c.collar_height = kv.get_real("collar_height", c.collar_height);
        c.shoulder_width = kv.get_real("shoulder_width", c.shoulder_width);
        c.upper_arm_length = kv.get_real("upper_arm_length", c.upper_arm_length);
        c.forearm_length = kv.get_real("forearm_length", c.forearm_length);
        c.hand_length = kv.get_real("hand_length", c.hand_length);
        c.thigh_length = kv.get_real("thigh_length", c.thigh_length);
        c.shank_length = kv.get_real("shank_length", c.shank_length);
        c.foot_drop = kv.get_real("foot_drop", c.foot_drop);
        c.foot_forward = kv.get_real("foot_forward", c.foot_forward);
        c.torso_radius = kv.get_real("torso_radius", c.torso_radius);
        c.hip_radius = kv.get_real("hip_radius", c.hip_radius);
        c.neck_radius = kv.get_real("neck_radius", c.neck_radius);
        c.head_radius = kv.get_real("head_radius", c.head_radius);
        c.collar_radius = kv.get_real("collar_radius", c.collar_radius);
        c.arm_radius = kv.get_real("arm_radius", c.arm_radius);
        c.forearm_radius = kv.get_real("forearm_radius", c.forearm_radius);
        c.hand_radius = kv.get_real("hand_radius", c.hand_radius);
        c.thigh_radius = kv.get_real("thigh_radius", c.thigh_radius);
        c.shank_radius = kv.get_real("shank_radius", c.shank_radius);
        c.foot_radius = kv.get_real("foot_radius", c.foot_radius);
        return c;
    }

    std::string canonical_text() const {
        std::string s;
        auto add = [&s](const char* k, double v) {
            s += k;
            s += "=";
            s += format_real(v);
            s += "\n";
        };
        add("rings", rings);
        add("segments", segments);
        add("extension_length", extension_length);
        add("hip_width", hip_width);
        add("hip_drop", hip_drop);
        add("spine1_height", spine1_height);
        add("spine2_height", spine2_height);
        add("spine3_height", spine3_height);
        add("neck_height", neck_height);
        add("head_height", head_height);
        add("collar_width", collar_width);
        add("collar_height", collar_height);
        add("shoulder_width", shoulder_width);
        add("upper_arm_length", upper_arm_length);
        add("forearm_length", forearm_length);
        add("hand_length", hand_length);
        add("thigh_length", thigh_length);
        add("shank_length", shank_length);
        add("foot_drop", foot_drop);
        add("foot_forward", foot_forward);
        add("torso_radius", torso_radius);
        add("hip_radius", hip_radius);
        add("neck_radius", neck_radius);
        add("head_radius", head_radius);
        add("collar_radius", collar_radius);
        add("arm_radius", arm_radius);
        add("forearm_radius", forearm_radius);
        add("hand_radius", hand_radius);
        add("thigh_radius", thigh_radius);
        add("shank_radius", shank_radius);
        add("foot_radius", foot_radius);
        return s;
    }

    std::uint64_t fingerprint() const {
        Fnv1a64 h;
        h.update(canonical_text());
        return h.digest();
    }
};

struct Skeleton {
    std::array<int, kJointCount> parent = kJointParent;
    std::array<Vec3, kJointCount> rest_offset;  // child position relative to parent at T-pose
};

struct PoseFrame {
    std::array<Quat, kJointCount> local_rotation;  // w.r.t. parent
    Vec3 root_translation = Vec3::Zero();

    static PoseFrame identity() {
        PoseFrame f;
        f.local_rotation.fill(Quat::Identity());
        return f;
    }
};

struct JointTransform {
    Mat3 rotation = Mat3::Identity();
    Vec3 position = Vec3::Zero();
};

using BodyTransforms = std::array<JointTransform, kJointCount>;

// One skinning entry; each vertex carries at most two.
struct SkinWeight {
    int joint;
    double weight;
};

struct BodyMesh {
    std::vector<Vec3> vertices_rest;              // T-pose, root-centered
    std::vector<std::array<int, 3>> faces;
    std::vector<std::array<SkinWeight, 2>> skin;  // weight 0 marks an unused slot
    std::vector<int> region;                      // 0..23 per vertex, fixed at T-pose
    std::vector<int> bone_of_vertex;              // child joint of the generating bone

    int vertex_count() const { return static_cast<int>(vertices_rest.size()); }
};

struct BodyModel {
    BodyConfig config;
    Skeleton skeleton;
    BodyMesh mesh;
    std::array<Vec3, kJointCount> tpose_joint_pos;
    Vec3 r_min, r_max;

    // derived lookups
    std::vector<std::vector<int>> vertex_faces;       // incident faces per vertex
    std::array<int, kJointCount> end_apex_vertex;     // bone end-cap apex, -1 for root
    std::array<int, kJointCount> extension_vertex;    // leaf extensions only, else -1

    std::uint64_t fingerprint() const { return config.fingerprint(); }
};

namespace detail {

inline void orthonormal_basis(const Vec3& axis, Vec3& e1, Vec3& e2) {
    Vec3 ref = std::abs(axis.dot(Vec3::UnitY())) < 0.99 ? Vec3::UnitY() : Vec3::UnitZ();
    e1 = ref.cross(axis).normalized();
    e2 = axis.cross(e1);
}

inline double bone_radius(const BodyConfig& c, int child_joint) {
    switch (child_joint) {
        case 1: case 2: return c.hip_radius;
        case 3: case 6: case 9: return c.torso_radius;
        case 4: case 5: return c.thigh_radius;
        case 7: case 8: return c.shank_radius;
        case 10: case 11: return c.foot_radius;
        case 12: return c.neck_radius;
        case 13: case 14: return c.collar_radius;
        case 15: return c.head_radius;
        case 16: case 17: case 18: case 19: return c.arm_radius;
        case 20: case 21: return c.forearm_radius;
        case 22: case 23: return c.hand_radius;
        default: throw ConfigError("no bone for joint " + std::to_string(child_joint));
    }
}

}  // namespace detail

inline std::array<Vec3, kJointCount> rest_offsets_from_config(const BodyConfig& c) {
    std::array<Vec3, kJointCount> o;
    o[0] = Vec3::Zero();
    o[1] = Vec3(c.hip_width, -c.hip_drop, 0);
    o[2] = Vec3(-c.hip_width, -c.hip_drop, 0);
    o[3] = Vec3(0, c.spine1_height, 0);
    o[4] = Vec3(0, -c.thigh_length, 0);
    o[5] = Vec3(0, -c.thigh_length, 0);
    o[6] = Vec3(0, c.spine2_height, 0);
    o[7] = Vec3(0, -c.shank_length, 0);
    o[8] = Vec3(0, -c.shank_length, 0);
    o[9] = Vec3(0, c.spine3_height, 0);
    o[10] = Vec3(0, -c.foot_drop, c.foot_forward);
    o[11] = Vec3(0, -c.foot_drop, c.foot_forward);
    o[12] = Vec3(0, c.neck_height, 0);
    o[13] = Vec3(c.collar_width, c.collar_height, 0);
    o[14] = Vec3(-c.collar_width, c.collar_height, 0);
    o[15] = Vec3(0, c.head_height, 0);
    o[16] = Vec3(c.shoulder_width, 0, 0);
    o[17] = Vec3(-c.shoulder_width, 0, 0);
    o[18] = Vec3(c.upper_arm_length, 0, 0);
    o[19] = Vec3(-c.upper_arm_length, 0, 0);
    o[20] = Vec3(c.forearm_length, 0, 0);
    o[21] = Vec3(-c.forearm_length, 0, 0);
    o[22] = Vec3(c.hand_length, 0, 0);
    o[23] = Vec3(-c.hand_length, 0, 0);
    return o;
}

// Builds the canonical toy body: SMPL topology, capped generalized cylinders
// per bone, two-nearest-joint inverse-distance skinning, argmax-weight regions.
// Deterministic in the config; never touches an RNG.
inline BodyModel build_canonical_body(const BodyConfig& config = BodyConfig{}) {
    if (config.rings < 3)
        throw ConfigError("rings must be >= 3, got " + std::to_string(config.rings));
    if (config.segments < 3)
        throw ConfigError("segments must be >= 3, got " + std::to_string(config.segments));
    if (config.extension_length <= 0) throw ConfigError("extension_length must be > 0");
    for (double r : {config.torso_radius, config.hip_radius, config.neck_radius,
                     config.head_radius, config.collar_radius, config.arm_radius,
                     config.forearm_radius, config.hand_radius, config.thigh_radius,
                     config.shank_radius, config.foot_radius}) {
        if (r <= 0) throw ConfigError("bone radii must be > 0");
    }

    BodyModel body;
    body.config = config;
    body.skeleton.rest_offset = rest_offsets_from_config(config);

    body.tpose_joint_pos[0] = Vec3::Zero();
    for (int j = 1; j < kJointCount; ++j)
        body.tpose_joint_pos[j] =
            body.tpose_joint_pos[body.skeleton.parent[j]] + body.skeleton.rest_offset[j];

    body.end_apex_vertex.fill(-1);
    body.extension_vertex.fill(-1);

    BodyMesh& mesh = body.mesh;
    const int rings = config.rings;
    const int segs = config.segments;

    for (int j = 1; j < kJointCount; ++j) {
        const int p = body.skeleton.parent[j];
        const Vec3 a = body.tpose_joint_pos[p];
        const Vec3 b = body.tpose_joint_pos[j];
        const Vec3 d = b - a;
        const double len = d.norm();
        if (len <= 0) throw ConfigError("zero-length bone at joint " + std::to_string(j));
        const Vec3 u = d / len;
        Vec3 e1, e2;
        detail::orthonormal_basis(u, e1, e2);
        const double radius = detail::bone_radius(config, j);
        const bool leaf =
            std::find(kLeafJoints.begin(), kLeafJoints.end(), j) != kLeafJoints.end();

        const int base = mesh.vertex_count();
        for (int i = 0; i < rings; ++i) {
            const Vec3 center = a + u * (len * i / (rings - 1));
            for (int k = 0; k < segs; ++k) {
                const double th = 2.0 * M_PI * k / segs;
                mesh.vertices_rest.push_back(center + radius * (std::cos(th) * e1 + std::sin(th) * e2));
                mesh.bone_of_vertex.push_back(j);
            }
        }
        const int start_apex = mesh.vertex_count();
        mesh.vertices_rest.push_back(a);
        mesh.bone_of_vertex.push_back(j);
        const int end_apex = mesh.vertex_count();
        mesh.vertices_rest.push_back(leaf ? Vec3(b + u * config.extension_length) : b);
        mesh.bone_of_vertex.push_back(j);
        body.end_apex_vertex[j] = end_apex;
        if (leaf) body.extension_vertex[j] = end_apex;

        auto ring_vertex = [&](int i, int k) { return base + i * segs + (k % segs); };
        for (int i = 0; i + 1 < rings; ++i) {
            for (int k = 0; k < segs; ++k) {
                mesh.faces.push_back({ring_vertex(i, k), ring_vertex(i, k + 1), ring_vertex(i + 1, k + 1)});
                mesh.faces.push_back({ring_vertex(i, k), ring_vertex(i + 1, k + 1), ring_vertex(i + 1, k)});
            }
        }
        for (int k = 0; k < segs; ++k) {
            mesh.faces.push_back({start_apex, ring_vertex(0, k), ring_vertex(0, k + 1)});
            mesh.faces.push_back({end_apex, ring_vertex(rings - 1, k + 1), ring_vertex(rings - 1, k)});
        }

        // Fix winding so that every face normal points away from the bone axis.
        for (std::size_t f = mesh.faces.size() - (std::size_t)((rings - 1) * segs * 2 + segs * 2);
             f < mesh.faces.size(); ++f) {
            auto& face = mesh.faces[f];
            const Vec3 v0 = mesh.vertices_rest[face[0]];
            const Vec3 v1 = mesh.vertices_rest[face[1]];
            const Vec3 v2 = mesh.vertices_rest[face[2]];
            const Vec3 n = (v1 - v0).cross(v2 - v0);
            const Vec3 c = (v0 + v1 + v2) / 3.0;
            const double t = std::clamp((c - a).dot(u), 0.0, len);
            const Vec3 outward = c - (a + u * t);
            if (n.dot(outward) < 0) std::swap(face[1], face[2]);
        }
    }

    const int total_v = mesh.vertex_count();

    // Two-nearest-joint inverse-distance skin weights; leaf extension
    // vertices are pinned to their leaf joint.
    mesh.skin.resize(total_v);
    for (int v = 0; v < total_v; ++v) {
        bool pinned = false;
        for (int leaf : kLeafJoints) {
            if (body.extension_vertex[leaf] == v) {
                mesh.skin[v] = {SkinWeight{leaf, 1.0}, SkinWeight{0, 0.0}};
                pinned = true;
                break;
            }
        }
        if (pinned) continue;

        int j1 = -1, j2 = -1;
        double d1 = 0, d2 = 0;
        for (int j = 0; j < kJointCount; ++j) {
            const double d = (mesh.vertices_rest[v] - body.tpose_joint_pos[j]).norm();
            if (j1 < 0 || d < d1) {
                j2 = j1; d2 = d1;
                j1 = j; d1 = d;
            } else if (j2 < 0 || d < d2) {
                j2 = j; d2 = d;
            }
        }
        if (d1 < 1e-9) {
            mesh.skin[v] = {SkinWeight{j1, 1.0}, SkinWeight{0, 0.0}};
        } else {
            const double w1 = 1.0 / d1, w2 = 1.0 / d2;
            // keep the lower joint index in slot 0 for a stable tie rule
            int ja = j1, jb = j2;
            double wa = w1 / (w1 + w2), wb = w2 / (w1 + w2);
            if (jb < ja) {
                std::swap(ja, jb);
                std::swap(wa, wb);
            }
            mesh.skin[v] = {SkinWeight{ja, wa}, SkinWeight{jb, wb}};
        }
    }

    // argmax-weight region labels, ties to the lower joint index
    mesh.region.resize(total_v);
    for (int v = 0; v < total_v; ++v) {
        const auto& s = mesh.skin[v];
        mesh.region[v] = (s[1].weight > s[0].weight) ? s[1].joint : s[0].joint;
    }

    body.vertex_faces.resize(total_v);
    for (std::size_t f = 0; f < mesh.faces.size(); ++f)
        for (int idx : mesh.faces[f]) body.vertex_faces[idx].push_back(static_cast<int>(f));

    body.r_min = mesh.vertices_rest[0];
    body.r_max = mesh.vertices_rest[0];
    for (const Vec3& v : mesh.vertices_rest) {
        body.r_min = body.r_min.cwiseMin(v);
        body.r_max = body.r_max.cwiseMax(v);
    }
    return body;
}

inline void validate_pose_frame(const PoseFrame& frame) {
    for (const Quat& q : frame.local_rotation) check_unit_quaternion(q);
}

inline BodyTransforms forward_kinematics(const Skeleton& skeleton, const PoseFrame& frame) {
    validate_pose_frame(frame);
    BodyTransforms g;
    g[0].rotation = frame.local_rotation[0].toRotationMatrix();
    g[0].position = frame.root_translation;
    for (int j = 1; j < kJointCount; ++j) {
        const JointTransform& par = g[skeleton.parent[j]];
        g[j].rotation = par.rotation * frame.local_rotation[j].toRotationMatrix();
        g[j].position = par.position + par.rotation * skeleton.rest_offset[j];
    }
    return g;
}

inline Vec3 skin_vertex(const BodyModel& body, const BodyTransforms& transforms, int vertex) {
    const auto& s = body.mesh.skin[vertex];
    const Vec3& rest = body.mesh.vertices_rest[vertex];
    Vec3 out = Vec3::Zero();
    for (const SkinWeight& sw : s) {
        if (sw.weight == 0.0) continue;
        const JointTransform& g = transforms[sw.joint];
        out += sw.weight * (g.rotation * (rest - body.tpose_joint_pos[sw.joint]) + g.position);
    }
    return out;
}

inline std::vector<Vec3> skin_vertices(const BodyModel& body, const BodyTransforms& transforms) {
    std::vector<Vec3> out(body.mesh.vertices_rest.size());
    for (int v = 0; v < body.mesh.vertex_count(); ++v) out[v] = skin_vertex(body, transforms, v);
    return out;
}

inline std::vector<int> assign_regions(const BodyModel& body) {
    std::vector<int> out(body.mesh.vertex_count());
    for (int v = 0; v < body.mesh.vertex_count(); ++v) {
        const auto& s = body.mesh.skin[v];
        out[v] = (s[1].weight > s[0].weight) ? s[1].joint : s[0].joint;
    }
    return out;
}

// Graph distance in the kinematic tree (edges are parent links).
inline int hop_distance(const Skeleton& skeleton, int a, int b) {
    if (a < 0 || a >= kJointCount || b < 0 || b >= kJointCount)
        throw ValidationError("joint index out of range in hop_distance");
    if (a == b) return 0;
    std::array<int, kJointCount> dist;
    dist.fill(-1);
    dist[a] = 0;
    std::deque<int> queue{a};
    while (!queue.empty()) {
        const int cur = queue.front();
        queue.pop_front();
        if (cur == b) return dist[cur];
        auto visit = [&](int next) {
            if (next >= 0 && dist[next] < 0) {
                dist[next] = dist[cur] + 1;
                queue.push_back(next);
            }
        };
        visit(skeleton.parent[cur]);
        for (int j = 1; j < kJointCount; ++j)
            if (skeleton.parent[j] == cur) visit(j);
    }
    throw ValidationError("disconnected skeleton in hop_distance");
}

// Pure argmin over rest vertices; the matchmaker wraps this with the
// placement-bounds validation.
inline int nearest_vertex_linear(const BodyModel& body, const Vec3& r) {
    int best = 0;
    double best_d = (body.mesh.vertices_rest[0] - r).squaredNorm();
    for (int v = 1; v < body.mesh.vertex_count(); ++v) {
        const double d = (body.mesh.vertices_rest[v] - r).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = v;
        }
    }
    return best;
}

}  // namespace imucoco
