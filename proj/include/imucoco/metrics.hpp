#pragma once

#include <vector>

#include "imucoco/body_model.hpp"

namespace imucoco {

// Per-frame global rotations of all 24 joints.
using RotationSeq = std::vector<std::array<Mat3, kJointCount>>;

// GAE default mask: root, wrists, hands, and feet excluded from averaging.
inline std::array<bool, kJointCount> default_gae_mask() {
    std::array<bool, kJointCount> include;
    include.fill(true);
    for (int j : {0, 10, 11, 20, 21, 22, 23}) include[j] = false;
    return include;
}

// Mean geodesic angle (degrees) between predicted and ground-truth global
// rotations over the unmasked joints and all frames.
inline double global_angular_error(const RotationSeq& pred, const RotationSeq& gt,
                                   const std::array<bool, kJointCount>& include = default_gae_mask()) {
    if (pred.size() != gt.size()) throw ValidationError("global_angular_error: length mismatch");
    if (pred.empty()) throw ValidationError("global_angular_error: empty sequences");
    int unmasked = 0;
    for (bool b : include) unmasked += b ? 1 : 0;
    if (unmasked == 0) throw ValidationError("global_angular_error: mask excludes every joint");

    double sum = 0;
    for (std::size_t t = 0; t < pred.size(); ++t)
        for (int j = 0; j < kJointCount; ++j)
            if (include[j]) sum += rotation_angle_deg(gt[t][j], pred[t][j]);
    return sum / (static_cast<double>(pred.size()) * unmasked);
}

// e[t] = || pred[t] - gt[t] || after re-basing both series to frame 0.
inline std::vector<double> cumulative_translation_error(const std::vector<Vec3>& pred_trans,
                                                        const std::vector<Vec3>& gt_trans) {
    if (pred_trans.size() != gt_trans.size())
        throw ValidationError("cumulative_translation_error: length mismatch");
    if (pred_trans.empty()) throw ValidationError("cumulative_translation_error: empty series");
    std::vector<double> out(pred_trans.size());
    const Vec3 p0 = pred_trans[0], g0 = gt_trans[0];
    for (std::size_t t = 0; t < pred_trans.size(); ++t)
        out[t] = ((pred_trans[t] - p0) - (gt_trans[t] - g0)).norm();
    return out;
}

inline RotationSeq ground_truth_rotations(const Skeleton& skeleton, const MotionSequence& motion) {
    RotationSeq out;
    out.reserve(motion.frames.size());
    for (const PoseFrame& f : motion.frames) {
        const BodyTransforms g = forward_kinematics(skeleton, f);
        std::array<Mat3, kJointCount> row;
        for (int j = 0; j < kJointCount; ++j) row[j] = g[j].rotation;
        out.push_back(row);
    }
    return out;
}

}  // namespace imucoco
