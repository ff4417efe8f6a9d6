#pragma once

#include <array>
#include <string>
#include <vector>

#include "imucoco/autodiff.hpp"
#include "imucoco/kvfile.hpp"
#include "imucoco/vimu.hpp"

namespace imucoco {

struct NetConfig {
    int d_in = 32;      // MFE input projection width
    int d_h = 64;       // feature width of every pathway
    int d_e = 16;       // region embedding width
    int n_freq = 6;     // positional encoding frequency bands
    int n_mfe = 1;      // MFE LSTM depth
    int jnm_layers = 2; // JNM depth L (= number of placement codes)
    int kr_hidden = 64;
    int pr_hidden = 128;
    double accel_scale = 9.81;

    void validate() const {
        if (d_in < 1 || d_h < 1 || d_e < 1 || n_freq < 1 || n_mfe < 1 || jnm_layers < 1 ||
            kr_hidden < 1 || pr_hidden < 1 || accel_scale <= 0)
            throw ConfigError("invalid network config");
    }

    int sce_input_dim() const { return 6 * n_freq + d_e; }

    static NetConfig from_kv(const KeyValueFile& kv) {
        NetConfig c;
        c.d_in = kv.get_int("d_in", c.d_in);
        c.d_h = kv.get_int("d_h", c.d_h);
        c.d_e = kv.get_int("d_e", c.d_e);
        c.n_freq = kv.get_int("n_freq", c.n_freq);
        c.n_mfe = kv.get_int("n_mfe", c.n_mfe);
        c.jnm_layers = kv.get_int("jnm_layers", c.jnm_layers);
        c.kr_hidden = kv.get_int("kr_hidden", c.kr_hidden);
        c.pr_hidden = kv.get_int("pr_hidden", c.pr_hidden);
        c.accel_scale = kv.get_real("accel_scale", c.accel_scale);
        c.validate();
        return c;
    }

    std::string canonical_text() const {
        std::string s;
        auto add = [&s](const char* k, const std::string& v) { s += std::string(k) + " = " + v + "\n"; };
        add("d_in", std::to_string(d_in));
        add("d_h", std::to_string(d_h));
        add("d_e", std::to_string(d_e));
        add("n_freq", std::to_string(n_freq));
        add("n_mfe", std::to_string(n_mfe));
        add("jnm_layers", std::to_string(jnm_layers));
        add("kr_hidden", std::to_string(kr_hidden));
        add("pr_hidden", std::to_string(pr_hidden));
        add("accel_scale", format_real(accel_scale));
        return s;
    }

    bool operator==(const NetConfig&) const = default;
};

struct Linear {
    Tensor w;  // (out x in)
    Tensor b;  // (out)
};

struct LstmLayer {
    Tensor w;  // (4H x (in + H)), gates [i; f; g; o]
    Tensor b;  // (4H)
};

struct Regressor {
    Linear l1;
    Linear l2;
};

// The five kinematics heads, in the fixed serialization order.
enum class KrHead { velocity = 0, position, local_orientation, global_orientation, root_velocity };
inline constexpr std::array<int, 5> kKrOutputDim = {3, 3, 6, 6, 3};
inline constexpr std::array<const char*, 5> kKrName = {"vel", "pos", "lori", "gori", "rvel"};

struct NodeParams {
    Linear mfe_in;
    std::vector<LstmLayer> mfe_lstm;
    Tensor sce_embedding;           // (24 x d_e)
    std::vector<Linear> sce_fc;     // each emits (gamma, beta) of width 2*d_h
    std::vector<LstmLayer> jnm;
    std::array<Regressor, 5> kr;
};

struct ModelParams {
    NetConfig config;
    std::array<NodeParams, kJointCount> nodes;
    Regressor pr;

    static ModelParams init(const NetConfig& config, std::uint64_t seed) {
        config.validate();
        ModelParams m;
        m.config = config;
        std::mt19937_64 rng(seed);
        auto linear = [&](int out, int in) {
            const double limit = std::sqrt(1.0 / in);
            return Linear{Tensor::random_uniform({out, in}, limit, rng, true),
                          Tensor::zeros({out}, true)};
        };
        auto lstm = [&](int in, int hidden) {
            const double limit = std::sqrt(1.0 / (in + hidden));
            return LstmLayer{Tensor::random_uniform({4 * hidden, in + hidden}, limit, rng, true),
                             Tensor::zeros({4 * hidden}, true)};
        };
        auto regressor = [&](int out, int hidden, int in) {
            return Regressor{linear(hidden, in), linear(out, hidden)};
        };
        for (NodeParams& n : m.nodes) {
            n.mfe_in = linear(config.d_in, 9);
            for (int l = 0; l < config.n_mfe; ++l)
                n.mfe_lstm.push_back(lstm(l == 0 ? config.d_in : config.d_h, config.d_h));
            n.sce_embedding = Tensor::random_uniform({kJointCount, config.d_e}, 0.5, rng, true);
            for (int l = 0; l < config.jnm_layers; ++l)
                n.sce_fc.push_back(linear(2 * config.d_h,
                                          l == 0 ? config.sce_input_dim() : 2 * config.d_h));
            for (int l = 0; l < config.jnm_layers; ++l) n.jnm.push_back(lstm(config.d_h, config.d_h));
            for (int h = 0; h < 5; ++h)
                n.kr[h] = regressor(kKrOutputDim[h], config.kr_hidden, config.d_h);
        }
        m.pr = regressor(kJointCount * 6, config.pr_hidden, kJointCount * config.d_h);
        return m;
    }

    // Stable enumeration used by the optimizer and the checkpoint format.
    std::vector<NamedParam> named_params() {
        std::vector<NamedParam> out;
        auto add = [&out](const std::string& name, Tensor& t) { out.push_back({name, &t}); };
        for (int j = 0; j < kJointCount; ++j) {
            char prefix[8];
            std::snprintf(prefix, sizeof(prefix), "n%02d.", j);
            NodeParams& n = nodes[j];
            add(prefix + std::string("mfe_in.w"), n.mfe_in.w);
            add(prefix + std::string("mfe_in.b"), n.mfe_in.b);
            for (std::size_t l = 0; l < n.mfe_lstm.size(); ++l) {
                add(prefix + std::string("mfe_lstm") + std::to_string(l) + ".w", n.mfe_lstm[l].w);
                add(prefix + std::string("mfe_lstm") + std::to_string(l) + ".b", n.mfe_lstm[l].b);
            }
            add(prefix + std::string("sce_emb"), n.sce_embedding);
            for (std::size_t l = 0; l < n.sce_fc.size(); ++l) {
                add(prefix + std::string("sce_fc") + std::to_string(l) + ".w", n.sce_fc[l].w);
                add(prefix + std::string("sce_fc") + std::to_string(l) + ".b", n.sce_fc[l].b);
            }
            for (std::size_t l = 0; l < n.jnm.size(); ++l) {
                add(prefix + std::string("jnm") + std::to_string(l) + ".w", n.jnm[l].w);
                add(prefix + std::string("jnm") + std::to_string(l) + ".b", n.jnm[l].b);
            }
            for (int h = 0; h < 5; ++h) {
                const std::string base = prefix + std::string("kr_") + kKrName[h];
                add(base + ".l1.w", n.kr[h].l1.w);
                add(base + ".l1.b", n.kr[h].l1.b);
                add(base + ".l2.w", n.kr[h].l2.w);
                add(base + ".l2.b", n.kr[h].l2.b);
            }
        }
        add("pr.l1.w", pr.l1.w);
        add("pr.l1.b", pr.l1.b);
        add("pr.l2.w", pr.l2.w);
        add("pr.l2.b", pr.l2.b);
        return out;
    }

    // Parameters of one joint node plus the shared pose regressor; KR
    // tensors excluded when `freeze_kr` is set (phase-2 contract).
    std::vector<NamedParam> node_and_pr_params(int joint, bool freeze_kr) {
        std::vector<NamedParam> all = named_params();
        char prefix[8];
        std::snprintf(prefix, sizeof(prefix), "n%02d.", joint);
        std::vector<NamedParam> out;
        for (NamedParam& p : all) {
            const bool in_node = p.name.rfind(prefix, 0) == 0;
            const bool in_pr = p.name.rfind("pr.", 0) == 0;
            const bool is_kr = p.name.find(".kr_") != std::string::npos;
            if ((in_node && !(freeze_kr && is_kr)) || in_pr) out.push_back(p);
        }
        return out;
    }

    long parameter_count() {
        long n = 0;
        for (const NamedParam& p : named_params()) n += p.tensor->size();
        return n;
    }
};

// r_st = (r - r_j) / (r_max - r_min), component-wise.
inline Vec3 standardize_coordinate(const Vec3& r, int joint, const BodyModel& body) {
    if (joint < 0 || joint >= kJointCount) throw ValidationError("joint index out of range");
    const Vec3 span = body.r_max - body.r_min;
    return (r - body.tpose_joint_pos[joint]).cwiseQuotient(span);
}

// Frequency blocks in increasing powers of two; each block is
// [sin(2pi f x), sin(2pi f y), sin(2pi f z), cos(2pi f x), cos(..y), cos(..z)].
inline std::vector<double> positional_encode(const Vec3& r_st, int n_freq) {
    if (n_freq < 1) throw ValidationError("n_freq must be >= 1");
    std::vector<double> out;
    out.reserve(6 * n_freq);
    for (int p = 0; p < n_freq; ++p) {
        const double f = std::pow(2.0, p);
        for (int a = 0; a < 3; ++a) out.push_back(std::sin(2.0 * M_PI * f * r_st[a]));
        for (int a = 0; a < 3; ++a) out.push_back(std::cos(2.0 * M_PI * f * r_st[a]));
    }
    return out;
}

using PlacementCodeNodes = std::vector<std::pair<NodeId, NodeId>>;  // (gamma, beta) per layer

// SCE: positional encoding + region embedding -> FC chain; every FC output
// splits into a (gamma, beta) pair. ReLU between layers, none after the
// last. Codes depend only on (r, k, j), never on the signal or the frame.
inline PlacementCodeNodes sce_forward(Graph& g, const NodeParams& node,
                                      const PlacementCoordinate& placement, int joint,
                                      const BodyModel& body, int n_freq, int d_h) {
    if (placement.region_k < 0 || placement.region_k >= kJointCount)
        throw ValidationError("region out of range: " + std::to_string(placement.region_k));
    const Vec3 r_st = standardize_coordinate(placement.r, joint, body);
    const NodeId r_node = g.constant(Tensor::vector({r_st.x(), r_st.y(), r_st.z()}));
    std::vector<NodeId> blocks;
    for (int p = 0; p < n_freq; ++p) {
        const NodeId scaled = g.scale(r_node, 2.0 * M_PI * std::pow(2.0, p));
        blocks.push_back(g.sin(scaled));
        blocks.push_back(g.cos(scaled));
    }
    blocks.push_back(g.embedding_lookup(g.leaf(node.sce_embedding), placement.region_k));

    NodeId a = g.concat(blocks);
    PlacementCodeNodes codes;
    for (std::size_t l = 0; l < node.sce_fc.size(); ++l) {
        const NodeId q = g.add(g.matmul(g.leaf(node.sce_fc[l].w), a), g.leaf(node.sce_fc[l].b));
        codes.emplace_back(g.slice(q, 0, d_h), g.slice(q, d_h, d_h));
        if (l + 1 < node.sce_fc.size()) a = g.relu(q);
    }
    return codes;
}

// Detached recurrent state carried across truncated-BPTT windows.
struct LstmCarry {
    std::vector<std::vector<double>> h;
    std::vector<std::vector<double>> c;

    static LstmCarry zeros(int layers, int hidden) {
        LstmCarry s;
        s.h.assign(layers, std::vector<double>(hidden, 0.0));
        s.c.assign(layers, std::vector<double>(hidden, 0.0));
        return s;
    }
};

namespace detail {

// One recurrent layer over a window; the detached (h, c) carry is read on
// entry and overwritten with the final state. The layer is taken by
// reference so graph leaves bind to the model's own tensors.
inline std::vector<NodeId> lstm_layer_forward(Graph& g, const LstmLayer& layer,
                                              const std::vector<NodeId>& inputs,
                                              std::vector<double>& h_carry,
                                              std::vector<double>& c_carry) {
    const NodeId w = g.leaf(layer.w);
    const NodeId b = g.leaf(layer.b);
    NodeId h = g.constant(Tensor::vector(h_carry));
    NodeId c = g.constant(Tensor::vector(c_carry));
    std::vector<NodeId> out;
    out.reserve(inputs.size());
    for (NodeId x : inputs) {
        const LstmState next = lstm_cell_step(g, w, b, x, h, c);
        h = next.h;
        c = next.c;
        out.push_back(next.h);
    }
    h_carry = g.value(h).data;
    c_carry = g.value(c).data;
    return out;
}

}  // namespace detail

// MFE: per-frame linear projection with ReLU, then a unidirectional LSTM
// stack. Output at t depends only on inputs <= t.
inline std::vector<NodeId> mfe_forward(Graph& g, const NodeParams& node,
                                       const std::vector<std::array<double, 9>>& channels,
                                       int t0, int t1, LstmCarry* carry) {
    if (t0 < 0 || t1 > static_cast<int>(channels.size()) || t0 >= t1)
        throw ValidationError("mfe_forward: bad frame window");
    std::vector<NodeId> seq;
    seq.reserve(t1 - t0);
    const NodeId w = g.leaf(node.mfe_in.w);
    const NodeId b = g.leaf(node.mfe_in.b);
    if (g.value(w).dim(1) != 9) throw ValidationError("mfe_forward: channel width must be 9");
    for (int t = t0; t < t1; ++t) {
        const NodeId x = g.constant(Tensor::vector(
            std::vector<double>(channels[t].begin(), channels[t].end())));
        seq.push_back(g.relu(g.add(g.matmul(w, x), b)));
    }
    for (std::size_t l = 0; l < node.mfe_lstm.size(); ++l)
        seq = detail::lstm_layer_forward(g, node.mfe_lstm[l], seq, carry->h[l], carry->c[l]);
    return seq;
}

// JNM: FiLM-modulated LSTM stack, z^(l) = LSTM^(l)(gamma^(l) * z^(l-1) + beta^(l)).
inline std::vector<NodeId> jnm_forward(Graph& g, const NodeParams& node,
                                       const std::vector<NodeId>& h, const PlacementCodeNodes& codes,
                                       LstmCarry* carry) {
    if (codes.size() != node.jnm.size())
        throw ValidationError("jnm_forward: placement code count " + std::to_string(codes.size()) +
                              " does not match depth " + std::to_string(node.jnm.size()));
    std::vector<NodeId> seq = h;
    for (std::size_t l = 0; l < node.jnm.size(); ++l) {
        std::vector<NodeId> modulated;
        modulated.reserve(seq.size());
        for (NodeId z : seq)
            modulated.push_back(g.add(g.hadamard(codes[l].first, z), codes[l].second));
        seq = detail::lstm_layer_forward(g, node.jnm[l], modulated, carry->h[l], carry->c[l]);
    }
    return seq;
}

inline NodeId regressor_forward(Graph& g, const Regressor& reg, NodeId x) {
    const NodeId hidden = g.relu(g.add(g.matmul(g.leaf(reg.l1.w), x), g.leaf(reg.l1.b)));
    return g.add(g.matmul(g.leaf(reg.l2.w), hidden), g.leaf(reg.l2.b));
}

struct KrOutputs {
    std::array<std::vector<NodeId>, 5> heads;  // indexed by KrHead, per frame
};

inline KrOutputs kr_forward(Graph& g, const NodeParams& node, const std::vector<NodeId>& z) {
    KrOutputs out;
    for (int h = 0; h < 5; ++h) {
        out.heads[h].reserve(z.size());
        for (NodeId zt : z) out.heads[h].push_back(regressor_forward(g, node.kr[h], zt));
    }
    return out;
}

inline NodeId pr_forward(Graph& g, const ModelParams& model, const std::vector<NodeId>& features) {
    if (features.size() != kJointCount)
        throw ValidationError("pr_forward expects 24 joint features");
    return regressor_forward(g, model.pr, g.concat(features));
}

// Recurrent state of one full pathway (MFE + JNM stacks).
struct PathwayCarry {
    LstmCarry mfe;
    LstmCarry jnm;

    static PathwayCarry zeros(const NetConfig& c) {
        return {LstmCarry::zeros(c.n_mfe, c.d_h), LstmCarry::zeros(c.jnm_layers, c.d_h)};
    }
};

struct NodeForwardResult {
    std::vector<NodeId> z;  // JNM output per frame of the window
    KrOutputs kr;
};

// One joint node over a frame window: channels -> MFE -> (SCE codes) ->
// JNM -> KRs. Placement codes are rebuilt per call but constant over time.
inline NodeForwardResult node_forward_window(Graph& g, ModelParams& model, int joint,
                                             const std::vector<std::array<double, 9>>& channels,
                                             const PlacementCoordinate& placement,
                                             const BodyModel& body, int t0, int t1,
                                             PathwayCarry* carry) {
    if (joint < 0 || joint >= kJointCount) throw ValidationError("joint index out of range");
    NodeParams& node = model.nodes[joint];
    const PlacementCodeNodes codes =
        sce_forward(g, node, placement, joint, body, model.config.n_freq, model.config.d_h);
    const std::vector<NodeId> h = mfe_forward(g, node, channels, t0, t1, &carry->mfe);
    NodeForwardResult out;
    out.z = jnm_forward(g, node, h, codes, &carry->jnm);
    out.kr = kr_forward(g, node, out.z);
    return out;
}

// Whole-sequence convenience wrapper (fresh zero state, single window).
inline NodeForwardResult node_forward(Graph& g, ModelParams& model, int joint,
                                      const ImuTrack& track, const BodyModel& body) {
    const auto channels = encode_channels(track, model.config.accel_scale);
    PathwayCarry carry = PathwayCarry::zeros(model.config);
    return node_forward_window(g, model, joint, channels, track.placement, body, 0,
                               static_cast<int>(channels.size()), &carry);
}

}  // namespace imucoco
