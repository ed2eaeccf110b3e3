#pragma once
// Shared serialization helpers: text key/value headers followed by
// little-endian float32 payloads, plus the FNV-1a hash used to fingerprint
// configs inside artifact headers.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace chartjepa {

inline uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(uint64_t v);

// ---- binary payload ------------------------------------------------------
// Values are stored as IEEE-754 binary32, little-endian. Readers/writers
// operate on double in memory.

void write_f32(std::vector<uint8_t>& out, const std::vector<double>& v);
std::vector<double> read_f32(const uint8_t* p, size_t count);

inline void write_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v & 0xff));
    out.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
    out.push_back(static_cast<uint8_t>((v >> 16) & 0xff));
    out.push_back(static_cast<uint8_t>((v >> 24) & 0xff));
}
inline uint32_t read_u32(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

// ---- header blocks -------------------------------------------------------
// Format: first line is a magic string ("NAME vK"). Then "key value" lines,
// then a line "---" separating header from binary payload.

struct Header {
    std::string magic;
    std::vector<std::pair<std::string, std::string>> fields; // insertion order

    void set(const std::string& k, const std::string& v);
    void set_u64(const std::string& k, uint64_t v);
    void set_f64(const std::string& k, double v);
    const std::string& get(const std::string& k) const; // throws if missing
    uint64_t get_u64(const std::string& k) const;
    double get_f64(const std::string& k) const;
    bool has(const std::string& k) const;

    std::string serialize() const; // magic + fields + "---\n"
};

// Parses header from a buffer; returns header and offset of byte after "---\n".
Header parse_header(const std::vector<uint8_t>& buf, size_t& payload_offset);

// ---- whole-file helpers ---------------------------------------------------
std::vector<uint8_t> read_file(const std::string& path); // throws on failure
void write_file(const std::string& path, const std::vector<uint8_t>& data);
void write_file(const std::string& path, const std::string& text);
void append_bytes(std::vector<uint8_t>& out, const std::string& s);

// Canonical float formatting for headers/CSV: shortest round-trip via %.17g.
std::string fmt_f64(double v);

} // namespace chartjepa
