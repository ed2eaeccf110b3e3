#include "chartjepa/serial.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

namespace chartjepa {

std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

void write_f32(std::vector<uint8_t>& out, const std::vector<double>& v) {
    size_t base = out.size();
    out.resize(base + v.size() * 4);
    for (size_t i = 0; i < v.size(); ++i) {
        float f = static_cast<float>(v[i]);
        uint32_t bits;
        std::memcpy(&bits, &f, 4);
        out[base + 4 * i + 0] = static_cast<uint8_t>(bits & 0xff);
        out[base + 4 * i + 1] = static_cast<uint8_t>((bits >> 8) & 0xff);
        out[base + 4 * i + 2] = static_cast<uint8_t>((bits >> 16) & 0xff);
        out[base + 4 * i + 3] = static_cast<uint8_t>((bits >> 24) & 0xff);
    }
}

std::vector<double> read_f32(const uint8_t* p, size_t count) {
    std::vector<double> v(count);
    for (size_t i = 0; i < count; ++i) {
        uint32_t bits = static_cast<uint32_t>(p[4 * i]) |
                        (static_cast<uint32_t>(p[4 * i + 1]) << 8) |
                        (static_cast<uint32_t>(p[4 * i + 2]) << 16) |
                        (static_cast<uint32_t>(p[4 * i + 3]) << 24);
        float f;
        std::memcpy(&f, &bits, 4);
        v[i] = static_cast<double>(f);
    }
    return v;
}

void Header::set(const std::string& k, const std::string& v) {
    for (auto& kv : fields) {
        if (kv.first == k) {
            kv.second = v;
            return;
        }
    }
    fields.emplace_back(k, v);
}

void Header::set_u64(const std::string& k, uint64_t v) { set(k, std::to_string(v)); }
void Header::set_f64(const std::string& k, double v) { set(k, fmt_f64(v)); }

const std::string& Header::get(const std::string& k) const {
    for (const auto& kv : fields)
        if (kv.first == k) return kv.second;
    throw std::runtime_error("header: missing field '" + k + "'");
}

uint64_t Header::get_u64(const std::string& k) const {
    return std::stoull(get(k));
}

double Header::get_f64(const std::string& k) const {
    return std::stod(get(k));
}

bool Header::has(const std::string& k) const {
    for (const auto& kv : fields)
        if (kv.first == k) return true;
    return false;
}

std::string Header::serialize() const {
    std::string s = magic + "\n";
    for (const auto& kv : fields) s += kv.first + " " + kv.second + "\n";
    s += "---\n";
    return s;
}

Header parse_header(const std::vector<uint8_t>& buf, size_t& payload_offset) {
    Header h;
    size_t pos = 0;
    bool first = true;
    while (pos < buf.size()) {
        size_t eol = pos;
        while (eol < buf.size() && buf[eol] != '\n') ++eol;
        if (eol == buf.size()) throw std::runtime_error("header: truncated (no terminator line)");
        std::string line(reinterpret_cast<const char*>(buf.data()) + pos, eol - pos);
        pos = eol + 1;
        if (line == "---") {
            payload_offset = pos;
            if (first) throw std::runtime_error("header: missing magic line");
            return h;
        }
        if (first) {
            h.magic = line;
            first = false;
            continue;
        }
        size_t sp = line.find(' ');
        if (sp == std::string::npos) throw std::runtime_error("header: malformed line '" + line + "'");
        h.fields.emplace_back(line.substr(0, sp), line.substr(sp + 1));
    }
    throw std::runtime_error("header: truncated (no terminator line)");
}

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for read: " + path);
    f.seekg(0, std::ios::end);
    std::streamoff n = f.tellg();
    f.seekg(0, std::ios::beg);
    std::vector<uint8_t> buf(static_cast<size_t>(n));
    if (n > 0) f.read(reinterpret_cast<char*>(buf.data()), n);
    if (!f) throw std::runtime_error("read failed: " + path);
    return buf;
}

void write_file(const std::string& path, const std::vector<uint8_t>& data) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    if (!data.empty()) f.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!f) throw std::runtime_error("write failed: " + path);
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!f) throw std::runtime_error("write failed: " + path);
}

void append_bytes(std::vector<uint8_t>& out, const std::string& s) {
    out.insert(out.end(), s.begin(), s.end());
}

std::string fmt_f64(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    // Trim to shortest representation that round-trips.
    for (int prec = 1; prec <= 17; ++prec) {
        char t[64];
        std::snprintf(t, sizeof(t), "%.*g", prec, v);
        double back = std::strtod(t, nullptr);
        if (back == v) return std::string(t);
    }
    return std::string(buf);
}

} // namespace chartjepa
