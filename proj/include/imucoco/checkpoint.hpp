#pragma once

#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>

#include "imucoco/net.hpp"

namespace imucoco {

inline constexpr char kCheckpointMagic[8] = {'I', 'M', 'C', 'O', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
public:
    void raw(const void* p, std::size_t n) {
        const char* c = static_cast<const char*>(p);
        bytes_.insert(bytes_.end(), c, c + n);
    }
    void u32(std::uint32_t v) { raw(&v, sizeof(v)); }
    void i64(std::int64_t v) { raw(&v, sizeof(v)); }
    void f64(double v) { raw(&v, sizeof(v)); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
    const std::string& bytes() const { return bytes_; }

private:
    std::string bytes_;
};

class ByteReader {
public:
    ByteReader(const std::string& b, const std::string& origin) : bytes_(b), origin_(origin) {}
    void raw(void* p, std::size_t n) {
        if (pos_ + n > bytes_.size()) throw ValidationError(origin_ + ": truncated checkpoint");
        std::memcpy(p, bytes_.data() + pos_, n);
        pos_ += n;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        raw(&v, sizeof(v));
        return v;
    }
    std::int64_t i64() {
        std::int64_t v;
        raw(&v, sizeof(v));
        return v;
    }
    double f64() {
        double v;
        raw(&v, sizeof(v));
        return v;
    }
    std::string str() {
        const std::uint32_t n = u32();
        std::string s(n, '\0');
        raw(s.data(), n);
        return s;
    }
    std::size_t position() const { return pos_; }

private:
    const std::string& bytes_;
    std::string origin_;
    std::size_t pos_ = 0;
};

inline void write_tensor(ByteWriter& w, const std::string& name, const Tensor& t) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) w.i64(d);
    w.raw(t.data.data(), t.data.size() * sizeof(double));
}

// Serialized parameter section, shared by the file format and the in-memory
// model fingerprint so the loss table can pin the exact weights it was
// built from.
inline std::string serialize_params(ModelParams& model) {
    ByteWriter w;
    w.str(model.config.canonical_text());
    auto params = model.named_params();
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (const NamedParam& p : params) write_tensor(w, p.name, *p.tensor);
    return w.bytes();
}

}  // namespace detail

inline std::uint64_t model_fingerprint(ModelParams& model) {
    Fnv1a64 h;
    h.update(detail::serialize_params(model));
    return h.digest();
}

// Binary checkpoint: magic, version, parameter section, optional optimizer
// state, FNV-64 trailer over everything before it. Round trips bit-exactly.
inline void save_checkpoint(ModelParams& model, const std::string& path,
                            const AdamState* optimizer = nullptr) {
    detail::ByteWriter w;
    w.raw(kCheckpointMagic, sizeof(kCheckpointMagic));
    w.u32(kCheckpointVersion);
    w.str(detail::serialize_params(model));
    w.u32(optimizer ? 1u : 0u);
    if (optimizer) {
        w.f64(optimizer->config.lr);
        w.f64(optimizer->config.beta1);
        w.f64(optimizer->config.beta2);
        w.f64(optimizer->config.eps);
        w.i64(optimizer->step_count);
        w.u32(static_cast<std::uint32_t>(optimizer->moments.size()));
        for (const auto& [name, mv] : optimizer->moments) {
            w.str(name);
            w.u32(static_cast<std::uint32_t>(mv.first.size()));
            w.raw(mv.first.data(), mv.first.size() * sizeof(double));
            w.raw(mv.second.data(), mv.second.size() * sizeof(double));
        }
    }
    Fnv1a64 h;
    h.update(w.bytes());
    const std::uint64_t digest = h.digest();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot open for writing: " + path);
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    out.write(reinterpret_cast<const char*>(&digest), sizeof(digest));
    if (!out) throw ValidationError("write failed: " + path);
}

struct LoadedCheckpoint {
    ModelParams model;
    std::optional<AdamState> optimizer;
    std::uint64_t fingerprint = 0;  // fingerprint of the parameter section
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open checkpoint: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    std::string bytes = ss.str();
    if (bytes.size() < sizeof(kCheckpointMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t))
        throw ValidationError(path + ": truncated checkpoint");

    const std::uint64_t stored_hash =
        *reinterpret_cast<const std::uint64_t*>(bytes.data() + bytes.size() - sizeof(std::uint64_t));
    bytes.resize(bytes.size() - sizeof(std::uint64_t));
    Fnv1a64 h;
    h.update(bytes);
    if (h.digest() != stored_hash)
        throw ValidationError(path + ": checkpoint hash mismatch (file is corrupted; re-run "
                                     "training or restore the file from a clean copy)");

    detail::ByteReader r(bytes, path);
    char magic[8];
    r.raw(magic, sizeof(magic));
    if (std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw ValidationError(path + ": not a checkpoint file");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw ValidationError(path + ": unsupported checkpoint version " + std::to_string(version) +
                              " (this build reads version " + std::to_string(kCheckpointVersion) +
                              "; re-train or convert the checkpoint)");

    const std::string param_section = r.str();
    Fnv1a64 ph;
    ph.update(param_section);

    detail::ByteReader pr(param_section, path);
    LoadedCheckpoint out;
    out.fingerprint = ph.digest();
    {
        const KeyValueFile kv = KeyValueFile::from_string(pr.str(), path + "#config");
        out.model = ModelParams::init(NetConfig::from_kv(kv), /*seed=*/0);
    }
    const std::uint32_t tensor_count = pr.u32();
    auto params = out.model.named_params();
    if (tensor_count != params.size())
        throw ValidationError(path + ": tensor count mismatch against config echo");
    for (std::uint32_t i = 0; i < tensor_count; ++i) {
        const std::string name = pr.str();
        if (name != params[i].name)
            throw ValidationError(path + ": unexpected tensor `" + name + "`, wanted `" +
                                  params[i].name + "`");
        const std::uint32_t rank = pr.u32();
        std::vector<int> shape(rank);
        for (std::uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<int>(pr.i64());
        if (shape != params[i].tensor->shape)
            throw ValidationError(path + ": shape mismatch for tensor `" + name + "`");
        pr.raw(params[i].tensor->data.data(), params[i].tensor->data.size() * sizeof(double));
    }

    if (r.u32() == 1) {
        AdamState opt;
        opt.config.lr = r.f64();
        opt.config.beta1 = r.f64();
        opt.config.beta2 = r.f64();
        opt.config.eps = r.f64();
        opt.step_count = r.i64();
        const std::uint32_t entries = r.u32();
        for (std::uint32_t i = 0; i < entries; ++i) {
            const std::string name = r.str();
            const std::uint32_t n = r.u32();
            std::vector<double> m(n), v(n);
            r.raw(m.data(), n * sizeof(double));
            r.raw(v.data(), n * sizeof(double));
            opt.moments[name] = {std::move(m), std::move(v)};
        }
        out.optimizer = std::move(opt);
    }
    return out;
}

}  // namespace imucoco
