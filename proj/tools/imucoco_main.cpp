// Command-line surface for the whole pipeline: motion generation, virtual
// IMU synthesis, two-phase training, loss-table construction, matchmaker
// assignment, inference, evaluation, and placement sweeps.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "imucoco/infer.hpp"

namespace ic = imucoco;

namespace {

ic::BodyConfig load_body_config(const std::string& path) {
    return path.empty() ? ic::BodyConfig{} : ic::BodyConfig::from_file(path);
}

ic::TrainConfig load_train_config(const std::string& path) {
    return path.empty() ? ic::TrainConfig{} : ic::TrainConfig::from_file(path);
}

std::vector<ic::MotionSequence> load_corpus(const std::vector<std::string>& paths) {
    std::vector<ic::MotionSequence> corpus;
    corpus.reserve(paths.size());
    for (const std::string& p : paths) corpus.push_back(ic::read_motion(p));
    return corpus;
}

ic::DeviceSet read_devices_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ic::ValidationError("cannot open devices file: " + path);
    ic::DeviceSet set;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream s(line);
        ic::Device d;
        s >> d.id >> d.placement.r.x() >> d.placement.r.y() >> d.placement.r.z();
        if (s.fail()) throw ic::ParseError(path, lineno, "expected `id x y z`");
        set.devices.push_back(d);
    }
    if (set.devices.empty()) throw ic::ValidationError(path + ": no devices listed");
    return set;
}

std::vector<ic::SweepVariant> read_placements_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ic::ValidationError("cannot open placements file: " + path);
    std::vector<ic::SweepVariant> variants;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream s(line);
        ic::SweepVariant v;
        s >> v.label;
        double x, y, z;
        while (s >> x >> y >> z) v.device_positions.push_back(ic::Vec3(x, y, z));
        if (v.label.empty() || v.device_positions.empty())
            throw ic::ParseError(path, lineno, "expected `label x y z [x y z ...]`");
        variants.push_back(std::move(v));
    }
    if (variants.empty()) throw ic::ValidationError(path + ": no placements listed");
    return variants;
}

int run(int argc, char** argv) {
    CLI::App app{"imucoco: placement-flexible inertial pose estimation pipeline"};
    app.require_subcommand(1);

    // genmotion
    auto* gen = app.add_subcommand("genmotion", "generate a procedural motion sequence");
    std::string gen_kind = "walk", gen_out;
    std::uint64_t gen_seed = 1;
    double gen_duration = 8.0, gen_fps = 60.0;
    gen->add_option("--kind", gen_kind, "idle|walk|arm_swing|squat|mixed");
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--duration", gen_duration, "seconds (>= 0.1)");
    gen->add_option("--fps", gen_fps, "sample rate");
    gen->add_option("--out", gen_out, ".motion output path")->required();

    // synth
    auto* synth = app.add_subcommand("synth", "synthesize a virtual IMU track");
    std::string synth_body, synth_motion, synth_out;
    int synth_vertex = -1, synth_joint = -1;
    synth->add_option("--config,--body", synth_body, "body config file");
    synth->add_option("--motion", synth_motion, ".motion input")->required();
    synth->add_option("--vertex", synth_vertex, "mesh vertex id");
    synth->add_option("--joint", synth_joint, "joint node id (0..23)");
    synth->add_option("--out", synth_out, ".imutrack output path")->required();

    // train
    auto* train = app.add_subcommand("train", "run a training phase");
    std::string train_config, train_body, train_init, train_out, train_log;
    std::vector<std::string> train_corpus;
    int train_phase = 1;
    std::int64_t train_seed = -1;
    bool train_no_optimizer = false;
    train->add_option("--phase", train_phase, "1 or 2")->required();
    train->add_option("--config", train_config, "train config file");
    train->add_option("--body", train_body, "body config file");
    train->add_option("--corpus", train_corpus, ".motion files")->required()->expected(-1);
    train->add_option("--init", train_init, "checkpoint to resume from (required for phase 2)");
    train->add_option("--out", train_out, "checkpoint output path")->required();
    train->add_option("--log", train_log, "loss log output path");
    train->add_option("--seed", train_seed, "override config seed");
    train->add_flag("--no-optimizer", train_no_optimizer, "omit optimizer state from the checkpoint");

    // losstable
    auto* lt = app.add_subcommand("losstable", "build the 24 x V transfer-loss table");
    std::string lt_ckpt, lt_body, lt_out;
    std::vector<std::string> lt_corpus;
    int lt_stride = 4, lt_window = 64;
    lt->add_option("--checkpoint", lt_ckpt, "trained checkpoint")->required();
    lt->add_option("--config,--body", lt_body, "body config file");
    lt->add_option("--corpus", lt_corpus, "validation .motion files")->required()->expected(-1);
    lt->add_option("--stride", lt_stride, "vertex subsample stride");
    lt->add_option("--bptt-window", lt_window, "forward window length");
    lt->add_option("--out", lt_out, ".losstable output path")->required();

    // assign
    auto* assign = app.add_subcommand("assign", "match devices to joint nodes");
    std::string as_table, as_body, as_devices, as_out;
    assign->add_option("--table", as_table, ".losstable file")->required();
    assign->add_option("--config,--body", as_body, "body config file");
    assign->add_option("--devices", as_devices, "devices file (`id x y z` lines)")->required();
    assign->add_option("--out", as_out, "write assignment here instead of stdout");

    // infer
    auto* infer = app.add_subcommand("infer", "estimate pose from IMU tracks");
    std::string in_ckpt, in_table, in_body, in_out;
    std::vector<std::string> in_tracks;
    int in_window = 64;
    bool in_zero_sc = false;
    infer->add_option("--checkpoint", in_ckpt, "trained checkpoint")->required();
    infer->add_option("--table", in_table, ".losstable file")->required();
    infer->add_option("--config,--body", in_body, "body config file");
    infer->add_option("--tracks", in_tracks, ".imutrack files (one per device)")
        ->required()
        ->expected(-1);
    infer->add_option("--bptt-window", in_window, "forward window length");
    infer->add_flag("--zero-coordinates", in_zero_sc, "feed zeroed sensor coordinates to the SCE");
    infer->add_option("--out", in_out, ".pose output path")->required();

    // eval
    auto* eval = app.add_subcommand("eval", "score pose estimates against ground truth");
    std::string ev_motion, ev_body, ev_out;
    std::vector<std::string> ev_poses;
    eval->add_option("--pose", ev_poses, ".pose files")->required()->expected(-1);
    eval->add_option("--motion", ev_motion, "ground-truth .motion file")->required();
    eval->add_option("--config,--body", ev_body, "body config file");
    eval->add_option("--out", ev_out, "write report here instead of stdout");

    // sweep
    auto* sweep = app.add_subcommand("sweep", "GAE across placement variants");
    std::string sw_ckpt, sw_table, sw_body, sw_placements, sw_out;
    std::vector<std::string> sw_corpus;
    int sw_window = 64;
    bool sw_zero_sc = false;
    sweep->add_option("--checkpoint", sw_ckpt, "trained checkpoint")->required();
    sweep->add_option("--table", sw_table, ".losstable file")->required();
    sweep->add_option("--config,--body", sw_body, "body config file");
    sweep->add_option("--corpus", sw_corpus, ".motion files")->required()->expected(-1);
    sweep->add_option("--placements", sw_placements, "placement variants file")->required();
    sweep->add_option("--bptt-window", sw_window, "forward window length");
    sweep->add_flag("--zero-coordinates", sw_zero_sc, "feed zeroed sensor coordinates to the SCE");
    sweep->add_option("--out", sw_out, "write report here instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    if (gen->parsed()) {
        const ic::MotionSequence seq =
            ic::generate_motion(gen_seed, gen_duration, ic::motion_kind_from_string(gen_kind), gen_fps);
        ic::write_motion(seq, gen_out);
        std::cout << "wrote " << gen_out << " (" << seq.frame_count() << " frames)\n";
        return 0;
    }

    if (synth->parsed()) {
        const ic::BodyModel body = ic::build_canonical_body(load_body_config(synth_body));
        const ic::MotionSequence motion = ic::read_motion(synth_motion);
        if ((synth_vertex < 0) == (synth_joint < 0))
            throw ic::ValidationError("pass exactly one of --vertex or --joint");
        const ic::ImuTrack track = synth_vertex >= 0
                                       ? ic::synthesize_mesh_imu(body, motion, synth_vertex)
                                       : ic::synthesize_joint_imu(body, motion, synth_joint);
        ic::write_imu_track(track, synth_out);
        std::cout << "wrote " << synth_out << "\n";
        return 0;
    }

    if (train->parsed()) {
        const ic::BodyModel body = ic::build_canonical_body(load_body_config(train_body));
        ic::TrainConfig config = load_train_config(train_config);
        if (train_seed >= 0) config.seed = static_cast<std::uint64_t>(train_seed);
        const std::vector<ic::MotionSequence> corpus = load_corpus(train_corpus);

        ic::ModelParams model = ic::ModelParams::init(config.net, config.seed);
        ic::AdamState opt;
        opt.config = config.adam;
        if (!train_init.empty()) {
            ic::LoadedCheckpoint loaded = ic::load_checkpoint(train_init);
            if (!(loaded.model.config == config.net))
                throw ic::ValidationError("checkpoint network shape differs from train config");
            model = std::move(loaded.model);
            if (loaded.optimizer) opt = std::move(*loaded.optimizer);
        } else if (train_phase == 2) {
            throw ic::ValidationError("phase 2 requires --init with a phase-1 checkpoint");
        }

        std::ofstream log;
        if (!train_log.empty()) {
            log.open(train_log);
            if (!log) throw ic::ValidationError("cannot open log file: " + train_log);
        }
        std::ostream* log_stream = train_log.empty() ? nullptr : &log;

        ic::TrainReport report;
        if (train_phase == 1) {
            report = ic::train_phase1(model, body, corpus, config, opt, log_stream);
        } else if (train_phase == 2) {
            report = ic::train_phase2(model, body, corpus, config, opt, log_stream);
        } else {
            throw ic::ValidationError("--phase must be 1 or 2");
        }
        ic::save_checkpoint(model, train_out, train_no_optimizer ? nullptr : &opt);
        std::cout << "phase " << train_phase << ": " << report.steps.size() << " steps"
                  << (report.plateaued ? " (plateaued)" : "") << ", checkpoint " << train_out << "\n";
        return 0;
    }

    if (lt->parsed()) {
        const ic::BodyModel body = ic::build_canonical_body(load_body_config(lt_body));
        ic::LoadedCheckpoint loaded = ic::load_checkpoint(lt_ckpt);
        const std::vector<ic::MotionSequence> corpus = load_corpus(lt_corpus);
        const ic::LossTable table =
            ic::build_loss_table(loaded.model, body, corpus, lt_stride, lt_window,
                                 ic::worker_count_from_env());
        ic::write_table(table, lt_out);
        std::cout << "wrote " << lt_out << " (V=" << table.vertex_count << ", stride=" << table.stride
                  << ")\n";
        return 0;
    }

    if (assign->parsed()) {
        const ic::BodyModel body = ic::build_canonical_body(load_body_config(as_body));
        const ic::LossTable table = ic::read_table(as_table);
        if (table.body_fingerprint != body.fingerprint())
            throw ic::ValidationError("loss table was built for a different body config");
        const ic::DeviceSet devices = read_devices_file(as_devices);
        const auto assignment = ic::assign_devices(table, devices, body);
        std::ostringstream report;
        for (int j = 0; j < ic::kJointCount; ++j)
            report << ic::kJointName[j] << " -> device " << assignment[j] << "\n";
        if (as_out.empty()) {
            std::cout << report.str();
        } else {
            std::ofstream out(as_out);
            out << report.str();
        }
        return 0;
    }

    if (infer->parsed()) {
        const ic::BodyModel body = ic::build_canonical_body(load_body_config(in_body));
        ic::LoadedCheckpoint loaded = ic::load_checkpoint(in_ckpt);
        const ic::LossTable table = ic::read_table(in_table);
        std::vector<ic::ImuTrack> tracks;
        ic::DeviceSet devices;
        for (std::size_t i = 0; i < in_tracks.size(); ++i) {
            tracks.push_back(ic::read_imu_track(in_tracks[i]));
            devices.devices.push_back({static_cast<int>(i), tracks.back().placement});
        }
        ic::InferOptions options;
        options.bptt_window = in_window;
        options.zero_coordinates = in_zero_sc;
        const ic::PoseEstimate estimate = ic::infer_pose(loaded.model, loaded.fingerprint, table,
                                                         devices, tracks, body, options);
        ic::write_pose_estimate(estimate, in_out);
        std::cout << "wrote " << in_out << " (" << estimate.frame_count() << " frames)\n";
        return 0;
    }

    if (eval->parsed()) {
        const ic::BodyModel body = ic::build_canonical_body(load_body_config(ev_body));
        const ic::MotionSequence motion = ic::read_motion(ev_motion);
        const ic::RotationSeq gt = ic::ground_truth_rotations(body.skeleton, motion);
        std::vector<ic::Vec3> gt_trans;
        for (const ic::PoseFrame& f : motion.frames) gt_trans.push_back(f.root_translation);

        std::ostringstream report;
        for (const std::string& pose_path : ev_poses) {
            const ic::PoseEstimate estimate = ic::read_pose_estimate(pose_path);
            if (estimate.frame_count() != motion.frame_count())
                throw ic::ValidationError(pose_path + ": frame count differs from ground truth");
            const double gae = ic::global_angular_error(estimate.orientation, gt);
            const std::vector<double> err =
                ic::cumulative_translation_error(estimate.translation, gt_trans);
            report << std::filesystem::path(pose_path).stem().string() << " GAE_deg " << std::fixed
                   << std::setprecision(2) << gae << " final_translation_error_m "
                   << std::setprecision(3) << err.back() << "\n";
        }
        if (ev_out.empty()) {
            std::cout << report.str();
        } else {
            std::ofstream out(ev_out);
            out << report.str();
        }
        return 0;
    }

    if (sweep->parsed()) {
        const ic::BodyModel body = ic::build_canonical_body(load_body_config(sw_body));
        ic::LoadedCheckpoint loaded = ic::load_checkpoint(sw_ckpt);
        const ic::LossTable table = ic::read_table(sw_table);
        const std::vector<ic::MotionSequence> corpus = load_corpus(sw_corpus);
        const std::vector<ic::SweepVariant> variants = read_placements_file(sw_placements);
        ic::InferOptions options;
        options.bptt_window = sw_window;
        options.zero_coordinates = sw_zero_sc;
        const std::vector<ic::SweepRow> rows = ic::placement_sweep(
            loaded.model, loaded.fingerprint, body, corpus, variants, table, options);
        std::ostringstream report;
        for (const ic::SweepRow& row : rows)
            report << row.label << " GAE_deg " << std::fixed << std::setprecision(2) << row.gae_deg
                   << "\n";
        if (sw_out.empty()) {
            std::cout << report.str();
        } else {
            std::ofstream out(sw_out);
            out << report.str();
        }
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ic::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    }
}
