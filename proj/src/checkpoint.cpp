#include "megcast/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace megcast {

namespace {

constexpr char kMagic[8] = {'M', 'E', 'G', 'C', 'K', 'P', 'T', '\n'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& f, uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff), static_cast<char>((v >> 16) & 0xff),
                 static_cast<char>((v >> 24) & 0xff)};
    f.write(b, 4);
}

uint32_t read_u32(std::istream& f) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (!f) throw IoError("truncated checkpoint");
    return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}

void write_string(std::ostream& f, const std::string& s) {
    write_u32(f, static_cast<uint32_t>(s.size()));
    f.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& f) {
    const uint32_t n = read_u32(f);
    std::string s(n, '\0');
    f.read(s.data(), static_cast<std::streamsize>(n));
    if (!f) throw IoError("truncated checkpoint");
    return s;
}

}  // namespace

void Checkpoint::set(const std::string& key, const std::string& value) {
    for (auto& [k, v] : meta)
        if (k == key) {
            v = value;
            return;
        }
    meta.emplace_back(key, value);
}

const std::string& Checkpoint::get(const std::string& key) const {
    for (const auto& [k, v] : meta)
        if (k == key) return v;
    throw IoError("checkpoint metadata key missing: " + key);
}

bool Checkpoint::has(const std::string& key) const {
    for (const auto& [k, v] : meta)
        if (k == key) return true;
    return false;
}

int64_t Checkpoint::get_int(const std::string& key) const { return std::stoll(get(key)); }

double Checkpoint::get_double(const std::string& key) const { return std::stod(get(key)); }

void Checkpoint::add_tensor(const std::string& name, const MatrixXf& t) {
    for (const auto& [n, m] : tensors)
        if (n == name) throw IoError("duplicate tensor name: " + name);
    tensors.emplace_back(name, t);
}

const MatrixXf& Checkpoint::tensor(const std::string& name) const {
    for (const auto& [n, m] : tensors)
        if (n == name) return m;
    throw IoError("checkpoint tensor missing: " + name);
}

bool Checkpoint::has_tensor(const std::string& name) const {
    for (const auto& [n, m] : tensors)
        if (n == name) return true;
    return false;
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write checkpoint: " + path);
    f.write(kMagic, 8);
    write_u32(f, kVersion);

    std::string meta_text;
    for (const auto& [k, v] : ck.meta) {
        if (k.find_first_of(" \n") != std::string::npos) throw IoError("metadata key contains whitespace: " + k);
        if (v.find('\n') != std::string::npos) throw IoError("metadata value contains newline: " + k);
        meta_text += k + " " + v + "\n";
    }
    write_string(f, meta_text);

    write_u32(f, static_cast<uint32_t>(ck.tensors.size()));
    for (const auto& [name, t] : ck.tensors) {
        write_string(f, name);
        write_u32(f, static_cast<uint32_t>(t.rows()));
        write_u32(f, static_cast<uint32_t>(t.cols()));
    }
    std::vector<char> buf;
    for (const auto& [name, t] : ck.tensors) {
        buf.resize(static_cast<size_t>(t.size()) * 4);
        size_t o = 0;
        for (Eigen::Index r = 0; r < t.rows(); ++r)
            for (Eigen::Index c = 0; c < t.cols(); ++c) {
                const float v = t(r, c);
                uint32_t u;
                std::memcpy(&u, &v, 4);
                buf[o++] = static_cast<char>(u & 0xff);
                buf[o++] = static_cast<char>((u >> 8) & 0xff);
                buf[o++] = static_cast<char>((u >> 16) & 0xff);
                buf[o++] = static_cast<char>((u >> 24) & 0xff);
            }
        f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    }
    if (!f) throw IoError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kMagic, 8) != 0) throw IoError("not a checkpoint file: " + path);
    const uint32_t version = read_u32(f);
    if (version != kVersion)
        throw VersionError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                           std::to_string(kVersion) + ")");

    Checkpoint ck;
    const std::string meta_text = read_string(f);
    size_t pos = 0;
    while (pos < meta_text.size()) {
        const size_t eol = meta_text.find('\n', pos);
        if (eol == std::string::npos) throw IoError("malformed checkpoint metadata");
        const std::string line = meta_text.substr(pos, eol - pos);
        pos = eol + 1;
        if (line.empty()) continue;
        const size_t sp = line.find(' ');
        if (sp == std::string::npos) throw IoError("malformed checkpoint metadata line: " + line);
        ck.meta.emplace_back(line.substr(0, sp), line.substr(sp + 1));
    }

    const uint32_t n_tensors = read_u32(f);
    std::vector<std::pair<std::string, std::pair<uint32_t, uint32_t>>> manifest;
    manifest.reserve(n_tensors);
    for (uint32_t i = 0; i < n_tensors; ++i) {
        const std::string name = read_string(f);
        const uint32_t rows = read_u32(f);
        const uint32_t cols = read_u32(f);
        manifest.emplace_back(name, std::make_pair(rows, cols));
    }
    std::vector<char> buf;
    for (const auto& [name, shape] : manifest) {
        MatrixXf t(shape.first, shape.second);
        buf.resize(static_cast<size_t>(t.size()) * 4);
        f.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (!f) throw IoError("truncated checkpoint tensor: " + name);
        size_t o = 0;
        for (Eigen::Index r = 0; r < t.rows(); ++r)
            for (Eigen::Index c = 0; c < t.cols(); ++c) {
                const uint32_t u = uint32_t(static_cast<unsigned char>(buf[o])) |
                                   uint32_t(static_cast<unsigned char>(buf[o + 1])) << 8 |
                                   uint32_t(static_cast<unsigned char>(buf[o + 2])) << 16 |
                                   uint32_t(static_cast<unsigned char>(buf[o + 3])) << 24;
                o += 4;
                float v;
                std::memcpy(&v, &u, 4);
                t(r, c) = v;
            }
        ck.add_tensor(name, t);
    }
    return ck;
}

}  // namespace megcast
