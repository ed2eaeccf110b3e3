#include <cstdio>

#include "chartjepa/serial.hpp"
#include "test_support.hpp"

using namespace chartjepa;

static void test_fnv1a() {
    testing::section("fnv1a64");
    // Reference values from the FNV specification test vectors.
    REQUIRE(fnv1a64("") == 0xcbf29ce484222325ULL);
    REQUIRE(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
    REQUIRE(fnv1a64("abc") == 0xe71fa2190541574bULL);
    REQUIRE(hex64(0xe71fa2190541574bULL) == "e71fa2190541574b");
    REQUIRE(hex64(0x1ULL) == "0000000000000001");
}

static void test_f32_roundtrip() {
    testing::section("f32 payload");
    std::vector<double> v = {0.0, 1.0, -2.5, 3.14159265358979, 1e-8, -1e8};
    std::vector<uint8_t> buf;
    write_f32(buf, v);
    REQUIRE(buf.size() == v.size() * 4);
    std::vector<double> back = read_f32(buf.data(), v.size());
    for (size_t i = 0; i < v.size(); ++i)
        REQUIRE(back[i] == static_cast<double>(static_cast<float>(v[i])));

    // little-endian layout: 1.0f = 0x3f800000
    std::vector<uint8_t> one;
    write_f32(one, {1.0});
    REQUIRE(one[0] == 0x00 && one[1] == 0x00 && one[2] == 0x80 && one[3] == 0x3f);
}

static void test_header_roundtrip() {
    testing::section("header block");
    Header h;
    h.magic = "CHARTJEPA-TEST v1";
    h.set("alpha", "1");
    h.set_u64("count", 42);
    h.set_f64("rate", 0.125);
    h.set("alpha", "2"); // overwrite keeps position
    REQUIRE(h.fields.size() == 3);
    REQUIRE(h.get("alpha") == "2");
    REQUIRE(h.get_u64("count") == 42);
    REQUIRE(h.get_f64("rate") == 0.125);
    REQUIRE(h.has("rate"));
    REQUIRE(!h.has("missing"));
    REQUIRE_THROWS(h.get("missing"));

    std::string s = h.serialize();
    REQUIRE(s == "CHARTJEPA-TEST v1\nalpha 2\ncount 42\nrate 0.125\n---\n");

    std::vector<uint8_t> buf(s.begin(), s.end());
    append_bytes(buf, "PAYLOAD");
    size_t off = 0;
    Header back = parse_header(buf, off);
    REQUIRE(back.magic == "CHARTJEPA-TEST v1");
    REQUIRE(back.get("alpha") == "2");
    REQUIRE(back.get_u64("count") == 42);
    REQUIRE(std::string(buf.begin() + off, buf.end()) == "PAYLOAD");

    // malformed headers
    std::vector<uint8_t> bad1 = {'x', 'y'};
    size_t o;
    REQUIRE_THROWS(parse_header(bad1, o));
    std::string bad2 = "MAGIC v1\nnovalue\n---\n";
    std::vector<uint8_t> b2(bad2.begin(), bad2.end());
    REQUIRE_THROWS(parse_header(b2, o));
    std::string bad3 = "---\n";
    std::vector<uint8_t> b3(bad3.begin(), bad3.end());
    REQUIRE_THROWS(parse_header(b3, o));
}

static void test_file_io() {
    testing::section("file io");
    const std::string path = "serial_test_tmp.bin";
    std::vector<uint8_t> data = {0, 1, 2, 255, 128};
    write_file(path, data);
    REQUIRE(read_file(path) == data);
    std::remove(path.c_str());
    REQUIRE_THROWS(read_file("does/not/exist.bin"));
}

static void test_fmt() {
    testing::section("float formatting");
    REQUIRE(fmt_f64(0.5) == "0.5");
    REQUIRE(fmt_f64(1.0) == "1");
    REQUIRE(fmt_f64(-0.0003) == "-0.0003");
    // round-trips exactly
    double v = 0.1 + 0.2;
    REQUIRE(std::stod(fmt_f64(v)) == v);
    REQUIRE(std::stod(fmt_f64(1.0 / 3.0)) == 1.0 / 3.0);
}

int main() {
    test_fnv1a();
    test_f32_roundtrip();
    test_header_roundtrip();
    test_file_io();
    test_fmt();
    testing::done("test_serial");
    return 0;
}
