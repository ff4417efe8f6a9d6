#pragma once

#include <cstdint>
#include <cstdio>
#include <string>

namespace imucoco {

// FNV-1a, used to fingerprint configs, checkpoints, and loss tables.
class Fnv1a64 {
public:
    void update(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            state_ ^= p[i];
            state_ *= 0x100000001b3ULL;
        }
    }
    void update(const std::string& s) { update(s.data(), s.size()); }
    std::uint64_t digest() const { return state_; }

private:
    std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::string hash_to_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace imucoco
