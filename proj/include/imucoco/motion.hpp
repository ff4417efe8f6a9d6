#pragma once

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "imucoco/body_model.hpp"

namespace imucoco {

struct MotionSequence {
    double fps = 60.0;
    std::vector<PoseFrame> frames;
    std::string label;

    int frame_count() const { return static_cast<int>(frames.size()); }
    double frame_time(int t) const { return t / fps; }
};

enum class MotionKind { idle, walk, arm_swing, squat, mixed };

inline MotionKind motion_kind_from_string(const std::string& s) {
    if (s == "idle") return MotionKind::idle;
    if (s == "walk") return MotionKind::walk;
    if (s == "arm_swing") return MotionKind::arm_swing;
    if (s == "squat") return MotionKind::squat;
    if (s == "mixed") return MotionKind::mixed;
    throw ValidationError("unknown motion kind: " + s);
}

inline const char* motion_kind_name(MotionKind k) {
    switch (k) {
        case MotionKind::idle: return "idle";
        case MotionKind::walk: return "walk";
        case MotionKind::arm_swing: return "arm_swing";
        case MotionKind::squat: return "squat";
        case MotionKind::mixed: return "mixed";
    }
    throw ValidationError("unknown motion kind enum value");
}

// Smoothstep blend envelope: 0 at both sequence ends, 1 in the middle,
// 0.5 s ramps (shorter for very short clips). Sequences therefore start
// and end at an exact T-pose, which doubles as the calibration frame.
inline double motion_envelope(double t, double duration) {
    const double beta = std::min(0.5, duration / 2.0);
    auto smooth = [](double u) { return u * u * (3.0 - 2.0 * u); };
    if (t <= 0 || t >= duration) return 0.0;
    if (t < beta) return smooth(t / beta);
    if (t > duration - beta) return smooth((duration - t) / beta);
    return 1.0;
}

// Exact antiderivative of motion_envelope over [0, t].
inline double motion_envelope_integral(double t, double duration) {
    const double beta = std::min(0.5, duration / 2.0);
    auto ramp_integral = [&](double x) {  // integral of smooth(u/beta) over [0, x], x in [0, beta]
        const double u = x / beta;
        return beta * (u * u * u - 0.5 * u * u * u * u);
    };
    t = std::clamp(t, 0.0, duration);
    if (t <= beta) return ramp_integral(t);
    if (t <= duration - beta) return 0.5 * beta + (t - beta);
    return 0.5 * beta + (duration - 2.0 * beta) + (0.5 * beta - ramp_integral(duration - t));
}

inline double walk_forward_speed() { return 1.0; }  // m/s along +Z at full envelope

namespace detail {

struct Sinusoid {
    double amplitude;
    double frequency;  // Hz, <= 2
    double phase;
};

struct JointWave {
    int joint;
    Vec3 axis;
    double offset = 0.0;
    std::vector<Sinusoid> comps;

    double angle(double t) const {
        double a = offset;
        for (const Sinusoid& s : comps) a += s.amplitude * std::sin(2.0 * M_PI * s.frequency * t + s.phase);
        return a;
    }
};

// Adds a small seeded wobble on every joint so that no two seeds produce
// the same clip. Amplitudes stay well under the continuity budget.
inline void add_seeded_wobble(std::vector<JointWave>& waves, std::mt19937_64& rng, double amp) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int j = 1; j < kJointCount; ++j) {
        JointWave w;
        w.joint = j;
        const double az = 2.0 * M_PI * unit(rng);
        const double el = M_PI * (unit(rng) - 0.5);
        w.axis = Vec3(std::cos(el) * std::cos(az), std::sin(el), std::cos(el) * std::sin(az));
        const int n = 1 + static_cast<int>(unit(rng) * 3);  // 1..3 components
        for (int m = 0; m < n; ++m)
            w.comps.push_back({amp * (0.3 + 0.7 * unit(rng)) / n, 0.2 + 1.8 * unit(rng),
                               2.0 * M_PI * unit(rng)});
        waves.push_back(w);
    }
}

}  // namespace detail

// Deterministic procedural motion. Joint-angle trajectories are envelope-
// gated sums of at most 5 sinusoids per joint, max frequency 2 Hz. The
// first and last 0.5 s blend to/from T-pose. Walk integrates a forward
// velocity with an exact closed-form antiderivative.
inline MotionSequence generate_motion(std::uint64_t seed, double duration_s, MotionKind kind,
                                      double fps = 60.0) {
    if (duration_s < 0.1) throw ValidationError("duration must be >= 0.1 s");
    if (fps <= 0) throw ValidationError("fps must be positive");

    const int frames = static_cast<int>(std::lround(duration_s * fps)) + 1;
    const double duration = (frames - 1) / fps;

    MotionSequence seq;
    seq.fps = fps;
    seq.label = motion_kind_name(kind);
    seq.frames.resize(frames, PoseFrame::identity());
    if (kind == MotionKind::idle) return seq;

    std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(kind));
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    std::vector<detail::JointWave> waves;
    const Vec3 x = Vec3::UnitX(), y = Vec3::UnitY(), z = Vec3::UnitZ();
    const double gait = 0.9 + 0.2 * unit(rng);  // walk cadence, Hz

    switch (kind) {
        case MotionKind::walk: {
            waves.push_back({1, x, 0.0, {{0.45, gait, 0.0}}});                   // left hip
            waves.push_back({2, x, 0.0, {{0.45, gait, M_PI}}});                  // right hip
            waves.push_back({4, x, 0.35, {{0.35, gait, M_PI_2}}});               // left knee
            waves.push_back({5, x, 0.35, {{0.35, gait, M_PI_2 + M_PI}}});        // right knee
            waves.push_back({16, x, 0.0, {{0.25, gait, M_PI}}});                 // shoulders counter-swing
            waves.push_back({17, x, 0.0, {{0.25, gait, 0.0}}});
            waves.push_back({18, z, 0.15, {{0.10, gait, M_PI}}});                // slight elbow bend
            waves.push_back({19, z, -0.15, {{0.10, gait, 0.0}}});
            waves.push_back({3, x, 0.05, {{0.03, gait, 0.0}}});                  // torso sway
            detail::add_seeded_wobble(waves, rng, 0.05);
            break;
        }
        case MotionKind::arm_swing: {
            const double f = 0.5 + 1.0 * unit(rng);
            waves.push_back({16, z, 0.0, {{0.6, f, 0.0}, {0.1, 2.0 * f > 2.0 ? 2.0 : 2.0 * f, 1.0}}});
            waves.push_back({17, z, 0.0, {{0.6, f, M_PI}, {0.1, 2.0 * f > 2.0 ? 2.0 : 2.0 * f, 2.0}}});
            waves.push_back({18, x, 0.3, {{0.3, f, M_PI_2}}});
            waves.push_back({19, x, 0.3, {{0.3, f, M_PI_2 + M_PI}}});
            waves.push_back({13, z, 0.0, {{0.08, f, 0.0}}});
            waves.push_back({14, z, 0.0, {{0.08, f, M_PI}}});
            detail::add_seeded_wobble(waves, rng, 0.05);
            break;
        }
        case MotionKind::squat: {
            const double f = 0.35 + 0.2 * unit(rng);
            auto updown = [&](double a) {
                return std::vector<detail::Sinusoid>{{0.5 * a, f, -M_PI_2}};
            };
            waves.push_back({1, x, -0.45, updown(-0.9)});   // hips fold
            waves.push_back({2, x, -0.45, updown(-0.9)});
            waves.push_back({4, x, 0.6, updown(1.2)});      // knees bend
            waves.push_back({5, x, 0.6, updown(1.2)});
            waves.push_back({7, x, -0.2, updown(-0.4)});    // ankles compensate
            waves.push_back({8, x, -0.2, updown(-0.4)});
            waves.push_back({3, x, 0.15, updown(0.3)});     // forward lean
            waves.push_back({16, x, -0.25, updown(-0.5)});  // arms reach forward
            waves.push_back({17, x, -0.25, updown(-0.5)});
            detail::add_seeded_wobble(waves, rng, 0.04);
            break;
        }
        case MotionKind::mixed: {
            for (int j = 1; j < kJointCount; ++j) {
                detail::JointWave w;
                w.joint = j;
                const double az = 2.0 * M_PI * unit(rng);
                const double el = M_PI * (unit(rng) - 0.5);
                w.axis = Vec3(std::cos(el) * std::cos(az), std::sin(el), std::cos(el) * std::sin(az));
                const bool spine = (j == 3 || j == 6 || j == 9 || j == 12);
                const double total = spine ? 0.2 : 0.55;
                const int n = 2 + static_cast<int>(unit(rng) * 4);  // 2..5 components
                for (int m = 0; m < n; ++m)
                    w.comps.push_back({total * (0.4 + 0.6 * unit(rng)) / n, 0.2 + 1.8 * unit(rng),
                                       2.0 * M_PI * unit(rng)});
                waves.push_back(w);
            }
            break;
        }
        case MotionKind::idle:
            break;
    }

    // Band-limited root drift for mixed; pure forward velocity for walk;
    // vertical dip for squat. All closed-form positions.
    std::vector<detail::Sinusoid> drift_x, drift_y, drift_z;
    if (kind == MotionKind::mixed) {
        for (auto* bank : {&drift_x, &drift_y, &drift_z}) {
            const double total = bank == &drift_y ? 0.05 : 0.15;
            for (int m = 0; m < 2; ++m)
                bank->push_back({total * (0.3 + 0.7 * unit(rng)) / 2, 0.2 + 1.3 * unit(rng),
                                 2.0 * M_PI * unit(rng)});
        }
    }
    double squat_f = 0.0, squat_depth = 0.0;
    if (kind == MotionKind::squat) {
        squat_f = waves[0].comps[0].frequency;
        squat_depth = 0.22 + 0.06 * unit(rng);
    }

    for (int t = 0; t < frames; ++t) {
        const double time = seq.frame_time(t);
        const double env = motion_envelope(time, duration);
        PoseFrame& frame = seq.frames[t];
        for (const auto& w : waves) {
            const double angle = env * w.angle(time);
            const Quat q(Eigen::AngleAxisd(angle, w.axis));
            frame.local_rotation[w.joint] = (frame.local_rotation[w.joint] * q).normalized();
        }
        if (kind == MotionKind::walk) {
            frame.root_translation.z() = walk_forward_speed() * motion_envelope_integral(time, duration);
        } else if (kind == MotionKind::squat) {
            frame.root_translation.y() =
                -squat_depth * env * (0.5 - 0.5 * std::cos(2.0 * M_PI * squat_f * time));
        } else if (kind == MotionKind::mixed) {
            auto eval = [&](const std::vector<detail::Sinusoid>& bank) {
                double v = 0;
                for (const auto& s : bank) v += s.amplitude * std::sin(2.0 * M_PI * s.frequency * time + s.phase);
                return env * v;
            };
            frame.root_translation = Vec3(eval(drift_x), eval(drift_y), eval(drift_z));
        }
    }
    return seq;
}

// Line-oriented text format:
//   fps <int> frames <int> label <text>
//   <tx> <ty> <tz> <24 x (qw qx qy qz)> per frame
inline void write_motion(const MotionSequence& seq, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open for writing: " + path);
    out << "fps " << static_cast<int>(std::lround(seq.fps)) << " frames " << seq.frame_count()
        << " label " << (seq.label.empty() ? "none" : seq.label) << "\n";
    for (const PoseFrame& f : seq.frames) {
        out << format_real(f.root_translation.x()) << ' ' << format_real(f.root_translation.y())
            << ' ' << format_real(f.root_translation.z());
        for (const Quat& q : f.local_rotation)
            out << ' ' << format_real(q.w()) << ' ' << format_real(q.x()) << ' '
                << format_real(q.y()) << ' ' << format_real(q.z());
        out << "\n";
    }
    if (!out) throw ValidationError("write failed: " + path);
}

inline MotionSequence read_motion(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open motion file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path, 1, "missing header");
    std::istringstream header(line);
    std::string k_fps, k_frames, k_label;
    int fps = 0, frames = 0;
    std::string label;
    header >> k_fps >> fps >> k_frames >> frames >> k_label >> label;
    if (header.fail() || k_fps != "fps" || k_frames != "frames" || k_label != "label")
        throw ParseError(path, 1, "malformed header, expected `fps N frames N label S`");
    if (frames < 3) throw ParseError(path, 1, "motion needs at least 3 frames");
    if (fps <= 0) throw ParseError(path, 1, "fps must be positive");

    MotionSequence seq;
    seq.fps = fps;
    seq.label = label;
    seq.frames.reserve(frames);
    for (int t = 0; t < frames; ++t) {
        if (!std::getline(in, line)) throw ParseError(path, 2 + t, "unexpected end of file");
        std::istringstream row(line);
        PoseFrame f;
        row >> f.root_translation.x() >> f.root_translation.y() >> f.root_translation.z();
        for (Quat& q : f.local_rotation) {
            double w, x, y, z;
            row >> w >> x >> y >> z;
            q = Quat(w, x, y, z);
        }
        if (row.fail()) throw ParseError(path, 2 + t, "malformed frame row");
        seq.frames.push_back(f);
    }
    for (const PoseFrame& f : seq.frames) validate_pose_frame(f);
    return seq;
}

}  // namespace imucoco
