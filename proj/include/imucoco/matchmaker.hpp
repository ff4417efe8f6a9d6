#pragma once

#include <atomic>
#include <cstdlib>
#include <thread>

#include "imucoco/checkpoint.hpp"
#include "imucoco/trainer.hpp"

namespace imucoco {

// 24 x V transfer-loss table M(j, v), fingerprinted against the body config
// and the checkpoint it was built from.
struct LossTable {
    int vertex_count = 0;
    int stride = 1;
    std::uint64_t body_fingerprint = 0;
    std::uint64_t model_fingerprint = 0;
    std::vector<double> values;  // row-major 24 x V

    double at(int joint, int vertex) const {
        return values[static_cast<std::size_t>(joint) * vertex_count + vertex];
    }
    double& at(int joint, int vertex) {
        return values[static_cast<std::size_t>(joint) * vertex_count + vertex];
    }
};

struct Device {
    int id = 0;
    PlacementCoordinate placement;
};

struct DeviceSet {
    std::vector<Device> devices;

    void validate(const BodyModel& body) const {
        if (devices.empty()) throw ValidationError("device set is empty");
        for (std::size_t i = 0; i < devices.size(); ++i) {
            validate_placement_bounds(body, devices[i].placement.r);
            for (std::size_t k = i + 1; k < devices.size(); ++k)
                if (devices[i].id == devices[k].id)
                    throw ValidationError("duplicate device id " + std::to_string(devices[i].id));
        }
    }
};

inline int nearest_vertex(const BodyModel& body, const Vec3& r) {
    validate_placement_bounds(body, r);
    return nearest_vertex_linear(body, r);
}

inline int worker_count_from_env() {
    const char* env = std::getenv("IMUCOCO_WORKERS");
    if (!env) return 1;
    const int n = std::atoi(env);
    return n >= 1 ? n : 1;
}

// M(j, v) = mean over the validation corpus of kinematic + alignment loss
// for a virtual IMU at vertex v fed to node j. Vertices skipped by the
// stride inherit the value of the nearest evaluated vertex. Deterministic
// for any worker count: workers fill disjoint columns.
inline LossTable build_loss_table(ModelParams& model, const BodyModel& body,
                                  const std::vector<MotionSequence>& validation_corpus,
                                  int subsample_stride, int bptt_window = 64, int workers = 1) {
    if (validation_corpus.empty()) throw ValidationError("loss table needs a non-empty corpus");
    if (subsample_stride < 1) throw ValidationError("stride must be >= 1");

    const int total_v = body.mesh.vertex_count();
    LossTable table;
    table.vertex_count = total_v;
    table.stride = subsample_stride;
    table.body_fingerprint = body.fingerprint();
    table.model_fingerprint = model_fingerprint(model);
    table.values.assign(static_cast<std::size_t>(kJointCount) * total_v, 0.0);

    struct SequenceContext {
        PreparedSequence prepared;
        std::array<std::vector<std::vector<double>>, kJointCount> z_ref;
    };
    std::vector<SequenceContext> contexts;
    contexts.reserve(validation_corpus.size());
    for (const MotionSequence& motion : validation_corpus) {
        SequenceContext ctx;
        ctx.prepared = prepare_sequence(body, motion, model.config);
        for (int j = 0; j < kJointCount; ++j)
            ctx.z_ref[j] = forward_node_features(model, j, ctx.prepared.joint_channels[j],
                                                 ctx.prepared.joint_tracks[j].placement, body,
                                                 bptt_window);
        contexts.push_back(std::move(ctx));
    }

    std::vector<int> evaluated;
    for (int v = 0; v < total_v; v += subsample_stride) evaluated.push_back(v);

    // one column of the table: all 24 nodes fed from vertex v
    auto evaluate_vertex = [&](int v, std::vector<double>& column) {
        column.assign(kJointCount, 0.0);
        for (const SequenceContext& ctx : contexts) {
            const ImuTrack track =
                synthesize_mesh_imu(body, ctx.prepared.motion, v, &ctx.prepared.transforms);
            const auto channels = encode_channels(track, model.config.accel_scale);
            const int frames = static_cast<int>(channels.size());
            for (int j = 0; j < kJointCount; ++j) {
                PathwayCarry carry = PathwayCarry::zeros(model.config);
                double kin_sum = 0, align_sum = 0;
                int windows = 0;
                for (int t0 = 0; t0 < frames; t0 += bptt_window) {
                    const int t1 = std::min(frames, t0 + bptt_window);
                    Graph g;
                    const NodeForwardResult fwd = node_forward_window(
                        g, model, j, channels, track.placement, body, t0, t1, &carry);
                    kin_sum += g.value(kinematic_loss(g, fwd.kr, ctx.prepared.gt, j, t0, t1)).data[0];
                    std::vector<std::vector<double>> ref(ctx.z_ref[j].begin() + t0,
                                                         ctx.z_ref[j].begin() + t1);
                    align_sum += g.value(alignment_loss(g, fwd.z, ref)).data[0];
                    ++windows;
                }
                column[j] += (kin_sum + align_sum) / windows;
            }
        }
        for (double& c : column) c /= contexts.size();
    };

    const int n_workers = std::max(1, workers);
    std::vector<std::thread> pool;
    std::atomic<std::size_t> cursor{0};
    auto work = [&]() {
        std::vector<double> column;
        while (true) {
            const std::size_t i = cursor.fetch_add(1);
            if (i >= evaluated.size()) break;
            const int v = evaluated[i];
            evaluate_vertex(v, column);
            for (int j = 0; j < kJointCount; ++j) table.at(j, v) = column[j];
        }
    };
    if (n_workers == 1) {
        work();
    } else {
        for (int w = 0; w < n_workers; ++w) pool.emplace_back(work);
        for (std::thread& t : pool) t.join();
    }

    if (subsample_stride > 1) {
        for (int v = 0; v < total_v; ++v) {
            if (v % subsample_stride == 0) continue;
            int best = evaluated[0];
            double best_d = (body.mesh.vertices_rest[v] - body.mesh.vertices_rest[best]).squaredNorm();
            for (int e : evaluated) {
                const double d = (body.mesh.vertices_rest[v] - body.mesh.vertices_rest[e]).squaredNorm();
                if (d < best_d) {
                    best_d = d;
                    best = e;
                }
            }
            for (int j = 0; j < kJointCount; ++j) table.at(j, v) = table.at(j, best);
        }
    }
    return table;
}

// d_j* = argmin over devices of M(j, nearest_vertex(r_d)); ties go to the
// lowest device id; many-to-one is allowed.
inline std::array<int, kJointCount> assign_devices(const LossTable& table, const DeviceSet& devices,
                                                   const BodyModel& body) {
    devices.validate(body);
    if (table.vertex_count != body.mesh.vertex_count())
        throw ValidationError("loss table vertex count does not match body");
    if (table.body_fingerprint != body.fingerprint())
        throw ValidationError("loss table body fingerprint mismatch");

    std::vector<std::pair<int, int>> by_id;  // (device id, vertex)
    by_id.reserve(devices.devices.size());
    for (const Device& d : devices.devices)
        by_id.emplace_back(d.id, nearest_vertex(body, d.placement.r));
    std::sort(by_id.begin(), by_id.end());

    std::array<int, kJointCount> out;
    for (int j = 0; j < kJointCount; ++j) {
        int best_id = by_id[0].first;
        double best_loss = table.at(j, by_id[0].second);
        for (std::size_t i = 1; i < by_id.size(); ++i) {
            const double loss = table.at(j, by_id[i].second);
            if (loss < best_loss) {
                best_loss = loss;
                best_id = by_id[i].first;
            }
        }
        out[j] = best_id;
    }
    return out;
}

inline void write_table(const LossTable& table, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open for writing: " + path);
    out << "V " << table.vertex_count << "\n";
    out << "stride " << table.stride << "\n";
    out << "body " << hash_to_hex(table.body_fingerprint) << "\n";
    out << "model " << hash_to_hex(table.model_fingerprint) << "\n";
    for (int j = 0; j < kJointCount; ++j) {
        for (int v = 0; v < table.vertex_count; ++v) {
            if (v) out << ' ';
            out << format_real(table.at(j, v));
        }
        out << "\n";
    }
    if (!out) throw ValidationError("write failed: " + path);
}

inline LossTable read_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open loss table: " + path);
    LossTable table;
    std::string line, key, hex;

    auto parse_hex = [&](const std::string& s, int lineno) {
        if (s.size() != 16) throw ParseError(path, lineno, "fingerprint must be 16 hex digits");
        return std::stoull(s, nullptr, 16);
    };
    if (!std::getline(in, line)) throw ParseError(path, 1, "missing V header");
    {
        std::istringstream s(line);
        s >> key >> table.vertex_count;
        if (s.fail() || key != "V" || table.vertex_count < 1)
            throw ParseError(path, 1, "expected `V <count>`");
    }
    if (!std::getline(in, line)) throw ParseError(path, 2, "missing stride header");
    {
        std::istringstream s(line);
        s >> key >> table.stride;
        if (s.fail() || key != "stride" || table.stride < 1)
            throw ParseError(path, 2, "expected `stride <n>`");
    }
    if (!std::getline(in, line)) throw ParseError(path, 3, "missing body fingerprint");
    {
        std::istringstream s(line);
        s >> key >> hex;
        if (s.fail() || key != "body") throw ParseError(path, 3, "expected `body <hex>`");
        table.body_fingerprint = parse_hex(hex, 3);
    }
    if (!std::getline(in, line)) throw ParseError(path, 4, "missing model fingerprint");
    {
        std::istringstream s(line);
        s >> key >> hex;
        if (s.fail() || key != "model") throw ParseError(path, 4, "expected `model <hex>`");
        table.model_fingerprint = parse_hex(hex, 4);
    }
    table.values.assign(static_cast<std::size_t>(kJointCount) * table.vertex_count, 0.0);
    for (int j = 0; j < kJointCount; ++j) {
        if (!std::getline(in, line)) throw ParseError(path, 5 + j, "missing table row");
        std::istringstream s(line);
        for (int v = 0; v < table.vertex_count; ++v) {
            double value;
            s >> value;
            if (s.fail()) throw ParseError(path, 5 + j, "short table row");
            if (!std::isfinite(value) || value < 0)
                throw ParseError(path, 5 + j, "table entries must be finite and >= 0");
            table.at(j, v) = value;
        }
    }
    return table;
}

// Fingerprint gate evaluated whenever a table enters a live session.
inline void validate_table(const LossTable& table, const BodyModel& body,
                           std::uint64_t model_fp) {
    if (table.body_fingerprint != body.fingerprint())
        throw ValidationError("loss table was built for a different body config");
    if (table.model_fingerprint != model_fp)
        throw ValidationError("loss table was built from a different checkpoint");
    if (table.vertex_count != body.mesh.vertex_count())
        throw ValidationError("loss table vertex count does not match body");
}

}  // namespace imucoco
