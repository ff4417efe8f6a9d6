#pragma once

#include <iostream>
#include <vector>

#include "imucoco/net.hpp"

namespace imucoco {

namespace detail {

inline NodeId mean_of_terms(Graph& g, const std::vector<NodeId>& terms) {
    if (terms.empty()) return g.scalar_constant(0.0);
    NodeId sum = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) sum = g.add(sum, terms[i]);
    return g.scale(sum, 1.0 / terms.size());
}

inline NodeId const_vec3(Graph& g, const Vec3& v) {
    return g.constant(Tensor::vector({v.x(), v.y(), v.z()}));
}

inline NodeId const_rot6d(Graph& g, const Rot6d& r) {
    return g.constant(Tensor::vector({r[0], r[1], r[2], r[3], r[4], r[5]}));
}

}  // namespace detail

// Multi-frame root-velocity loss over horizons {1, 3, 9, 27}: for every
// valid start the squared norm of the difference of window sums, averaged
// over starts, per-component normalized, summed over horizons. Horizons
// longer than the sequence are dropped.
inline NodeId root_velocity_multiframe_loss(Graph& g, const std::vector<NodeId>& pred_v,
                                            const std::vector<Vec3>& gt_v) {
    const int frames = static_cast<int>(pred_v.size());
    if (frames < 1 || gt_v.size() != pred_v.size())
        throw ValidationError("root_velocity_multiframe_loss: bad frame counts");

    // prefix sums: prefix[t] = sum of pred_v[0..t)
    std::vector<NodeId> prefix(frames + 1);
    prefix[0] = g.constant(Tensor::zeros({3}));
    for (int t = 0; t < frames; ++t) prefix[t + 1] = g.add(prefix[t], pred_v[t]);
    std::vector<Vec3> gt_prefix(frames + 1, Vec3::Zero());
    for (int t = 0; t < frames; ++t) gt_prefix[t + 1] = gt_prefix[t] + gt_v[t];

    NodeId total = g.scalar_constant(0.0);
    for (int horizon : {1, 3, 9, 27}) {
        if (horizon > frames) continue;
        std::vector<NodeId> terms;
        terms.reserve(frames - horizon + 1);
        for (int t = 0; t + horizon <= frames; ++t) {
            const NodeId window = g.sub(prefix[t + horizon], prefix[t]);
            const Vec3 gt_window = gt_prefix[t + horizon] - gt_prefix[t];
            terms.push_back(g.sum_squared_error(window, detail::const_vec3(g, gt_window)));
        }
        total = g.add(total, detail::mean_of_terms(g, terms));
    }
    return total;
}

// Five equally weighted terms: MSE on velocity, position, global and local
// orientation, plus the multi-frame root-velocity loss.
inline NodeId kinematic_loss(Graph& g, const KrOutputs& preds, const KinematicsGT& gt, int joint,
                             int t0, int t1) {
    const int window = static_cast<int>(preds.heads[0].size());
    if (t1 - t0 != window || t0 < 0 || t1 > gt.frames)
        throw ValidationError("kinematic_loss: prediction/ground-truth length mismatch");

    std::vector<NodeId> vel, pos, gori, lori;
    for (int i = 0; i < window; ++i) {
        const int t = t0 + i;
        vel.push_back(g.sum_squared_error(preds.heads[int(KrHead::velocity)][i],
                                          detail::const_vec3(g, gt.velocity[joint][t])));
        pos.push_back(g.sum_squared_error(preds.heads[int(KrHead::position)][i],
                                          detail::const_vec3(g, gt.position[joint][t])));
        lori.push_back(g.sum_squared_error(preds.heads[int(KrHead::local_orientation)][i],
                                           detail::const_rot6d(g, gt.local_orientation[joint][t])));
        gori.push_back(g.sum_squared_error(preds.heads[int(KrHead::global_orientation)][i],
                                           detail::const_rot6d(g, gt.global_orientation[joint][t])));
    }
    std::vector<Vec3> gt_rv(gt.root_velocity.begin() + t0, gt.root_velocity.begin() + t1);
    NodeId loss = detail::mean_of_terms(g, vel);
    loss = g.add(loss, detail::mean_of_terms(g, pos));
    loss = g.add(loss, detail::mean_of_terms(g, gori));
    loss = g.add(loss, detail::mean_of_terms(g, lori));
    loss = g.add(loss, root_velocity_multiframe_loss(
                           g, preds.heads[int(KrHead::root_velocity)], gt_rv));
    return loss;
}

// Mean over frames of (1 - cosine similarity). Zero-norm frames are
// skipped, counted, and reported once per call.
inline NodeId alignment_loss(Graph& g, const std::vector<NodeId>& z,
                             const std::vector<std::vector<double>>& z_ref,
                             int* skipped_frames = nullptr) {
    if (z.size() != z_ref.size()) throw ValidationError("alignment_loss: length mismatch");
    std::vector<NodeId> terms;
    int skipped = 0;
    for (std::size_t t = 0; t < z.size(); ++t) {
        double nz = 0, nr = 0;
        for (double v : g.value(z[t]).data) nz += v * v;
        for (double v : z_ref[t]) nr += v * v;
        if (nz < 1e-24 || nr < 1e-24) {
            ++skipped;
            continue;
        }
        const NodeId ref = g.constant(Tensor::vector(z_ref[t]));
        terms.push_back(g.sub(g.scalar_constant(1.0), g.cosine_similarity(z[t], ref)));
    }
    if (skipped > 0)
        std::cerr << "warning: alignment_loss skipped " << skipped << " zero-norm frame(s)\n";
    if (skipped_frames) *skipped_frames = skipped;
    return detail::mean_of_terms(g, terms);
}

// MSE over all entries of the stacked global pose rows.
inline NodeId pose_loss(Graph& g, const std::vector<NodeId>& pr_output,
                        const std::vector<std::vector<double>>& gt_global_pose) {
    if (pr_output.size() != gt_global_pose.size())
        throw ValidationError("pose_loss: frame count mismatch");
    std::vector<NodeId> terms;
    terms.reserve(pr_output.size());
    for (std::size_t t = 0; t < pr_output.size(); ++t) {
        if (g.value(pr_output[t]).size() != static_cast<long>(gt_global_pose[t].size()))
            throw ValidationError("pose_loss: pose width mismatch");
        terms.push_back(g.sum_squared_error(pr_output[t], g.constant(Tensor::vector(gt_global_pose[t]))));
    }
    return detail::mean_of_terms(g, terms);
}

// Ground-truth 144-vector (24 x 6D global orientation) for one frame.
inline std::vector<double> pose_gt_row(const KinematicsGT& gt, int t) {
    std::vector<double> row;
    row.reserve(kJointCount * 6);
    for (int j = 0; j < kJointCount; ++j)
        for (int i = 0; i < 6; ++i) row.push_back(gt.global_orientation[j][t][i]);
    return row;
}

struct LossWeights {
    double kinematic = 1.0;
    double pose = 1.0;
    double align = 0.1;
};

struct NodeLossBreakdown {
    NodeId total;
    double kinematic = 0;  // unweighted term values
    double pose = 0;
    double align = 0;
};

// Buffered feature bank for the full-body pose loss: one detached feature
// sequence per joint node, each slot flagged with its provenance.
struct NodeBuffer {
    int frames = 0;
    std::array<std::vector<std::vector<double>>, kJointCount> z;
    std::array<bool, kJointCount> populated{};
    std::array<bool, kJointCount> from_mesh{};

    void store(int joint, std::vector<std::vector<double>> features, bool mesh) {
        z[joint] = std::move(features);
        populated[joint] = true;
        from_mesh[joint] = mesh;
        frames = static_cast<int>(z[joint].size());
    }

    bool fully_populated() const {
        for (bool p : populated)
            if (!p) return false;
        return true;
    }
};

// The per-node training objective: lambda_kinematic * L_kin
// + lambda_pose * L_pose with the buffer's slot for this joint replaced by
// the live feature + lambda_align * L_align against the detached reference.
// Pass a null z_ref in phase 1 to omit the alignment term.
inline NodeLossBreakdown total_node_loss(Graph& g, ModelParams& model, int joint,
                                         const NodeForwardResult& fwd, const KinematicsGT& gt,
                                         const NodeBuffer& buffer,
                                         const std::vector<std::vector<double>>* z_ref,
                                         const std::vector<std::vector<double>>& pose_gt,
                                         const LossWeights& weights, int t0, int t1) {
    if (!buffer.fully_populated())
        throw ValidationError("total_node_loss: node buffer has unpopulated slots");

    NodeLossBreakdown out;
    const NodeId kin = kinematic_loss(g, fwd.kr, gt, joint, t0, t1);
    out.kinematic = g.value(kin).data[0];

    std::vector<NodeId> pr_rows;
    std::vector<std::vector<double>> gt_rows;
    pr_rows.reserve(t1 - t0);
    for (int i = 0; i < t1 - t0; ++i) {
        const int t = t0 + i;
        std::vector<NodeId> features(kJointCount);
        for (int other = 0; other < kJointCount; ++other) {
            features[other] = other == joint
                                  ? fwd.z[i]
                                  : g.constant(Tensor::vector(buffer.z[other][t]));
        }
        pr_rows.push_back(pr_forward(g, model, features));
        gt_rows.push_back(pose_gt[t]);
    }
    const NodeId pose = pose_loss(g, pr_rows, gt_rows);
    out.pose = g.value(pose).data[0];

    NodeId total = g.add(g.scale(kin, weights.kinematic), g.scale(pose, weights.pose));
    if (z_ref) {
        std::vector<std::vector<double>> ref_window(z_ref->begin() + t0, z_ref->begin() + t1);
        const NodeId align = alignment_loss(g, fwd.z, ref_window);
        out.align = g.value(align).data[0];
        total = g.add(total, g.scale(align, weights.align));
    }
    out.total = total;
    return out;
}

}  // namespace imucoco
