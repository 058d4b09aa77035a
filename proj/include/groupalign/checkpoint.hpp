#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "groupalign/common.hpp"

namespace groupalign {

// Portable little-endian container of named double arrays plus a few scalar
// fields. Layout:
//   magic "GALNCKPT" | u32 version | u64 config_hash | i64 iteration
//   | str rng_state | str config_text | u32 array_count
//   | { str name | u64 length | f64 data[length] } * array_count
// Strings are u32 length + bytes. Doubles are stored as raw IEEE-754 bits.
struct Checkpoint {
    std::uint64_t config_hash = 0;
    long long iteration = 0;
    std::string rng_state;
    std::string config_text;  // flat-key snapshot, enough to rebuild the models
    std::map<std::string, std::vector<double>> arrays;

    static constexpr char kMagic[9] = "GALNCKPT";
    static constexpr std::uint32_t kVersion = 1;

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw DataError("cannot open checkpoint for writing: " + path);
        out.write(kMagic, 8);
        write_u32(out, kVersion);
        write_u64(out, config_hash);
        write_u64(out, static_cast<std::uint64_t>(iteration));
        write_str(out, rng_state);
        write_str(out, config_text);
        write_u32(out, static_cast<std::uint32_t>(arrays.size()));
        for (const auto& [name, data] : arrays) {
            write_str(out, name);
            write_u64(out, data.size());
            for (double d : data) write_f64(out, d);
        }
        if (!out) throw DataError("checkpoint write failed: " + path);
    }

    static Checkpoint load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw DataError("cannot open checkpoint: " + path);
        char magic[8];
        in.read(magic, 8);
        if (!in || std::memcmp(magic, kMagic, 8) != 0)
            throw DataError("not a checkpoint file: " + path);
        if (read_u32(in) != kVersion) throw DataError("unsupported checkpoint version: " + path);
        Checkpoint ck;
        ck.config_hash = read_u64(in);
        ck.iteration = static_cast<long long>(read_u64(in));
        ck.rng_state = read_str(in);
        ck.config_text = read_str(in);
        const std::uint32_t count = read_u32(in);
        for (std::uint32_t i = 0; i < count; ++i) {
            std::string name = read_str(in);
            const std::uint64_t len = read_u64(in);
            std::vector<double> data(len);
            for (std::uint64_t j = 0; j < len; ++j) data[j] = read_f64(in);
            ck.arrays.emplace(std::move(name), std::move(data));
        }
        if (!in) throw DataError("truncated checkpoint: " + path);
        return ck;
    }

    const std::vector<double>& require(const std::string& name) const {
        auto it = arrays.find(name);
        if (it == arrays.end()) throw DataError("checkpoint missing array: " + name);
        return it->second;
    }

   private:
    static void write_u32(std::ostream& out, std::uint32_t v) {
        unsigned char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
        out.write(reinterpret_cast<char*>(b), 4);
    }
    static void write_u64(std::ostream& out, std::uint64_t v) {
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
        out.write(reinterpret_cast<char*>(b), 8);
    }
    static void write_f64(std::ostream& out, double d) {
        std::uint64_t bits;
        std::memcpy(&bits, &d, 8);
        write_u64(out, bits);
    }
    static void write_str(std::ostream& out, const std::string& s) {
        write_u32(out, static_cast<std::uint32_t>(s.size()));
        out.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    static std::uint32_t read_u32(std::istream& in) {
        unsigned char b[4];
        in.read(reinterpret_cast<char*>(b), 4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
        return v;
    }
    static std::uint64_t read_u64(std::istream& in) {
        unsigned char b[8];
        in.read(reinterpret_cast<char*>(b), 8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        return v;
    }
    static double read_f64(std::istream& in) {
        const std::uint64_t bits = read_u64(in);
        double d;
        std::memcpy(&d, &bits, 8);
        return d;
    }
    static std::string read_str(std::istream& in) {
        const std::uint32_t len = read_u32(in);
        std::string s(len, '\0');
        in.read(s.data(), len);
        return s;
    }
};

}  // namespace groupalign
