#include "megcast/artifacts.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "megcast/signal.hpp"

namespace megcast {

namespace fs = std::filesystem;

namespace {

void write_int_track(const std::string& path, const VectorXi& v) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    for (Eigen::Index i = 0; i < v.size(); ++i) f << v[i] << "\n";
}

VectorXi read_int_track(const std::string& path, Eigen::Index expected) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read " + path);
    VectorXi v(expected);
    for (Eigen::Index i = 0; i < expected; ++i) {
        long x = 0;
        if (!(f >> x)) throw IoError("short label file " + path);
        v[i] = static_cast<int>(x);
    }
    return v;
}

}  // namespace

void save_tokens(const TokenArtifact& art, const std::string& dir) {
    const TokenizedRecording& rec = art.rec;
    if (art.kind != "mulaw" && art.kind != "flat") throw IoError("unknown token artifact kind " + art.kind);
    if (rec.condition_track.size() != rec.samples() || rec.subject_track.size() != rec.samples())
        throw IoError("label track length does not match sample count");
    fs::create_directories(dir);

    {
        std::ofstream f(dir + "/tokens.i32", std::ios::binary);
        if (!f) throw IoError("cannot write " + dir + "/tokens.i32");
        std::vector<int32_t> row(static_cast<size_t>(rec.samples()));
        for (Eigen::Index c = 0; c < rec.channels(); ++c) {
            for (Eigen::Index t = 0; t < rec.samples(); ++t) row[static_cast<size_t>(t)] = rec.tokens(c, t);
            f.write(reinterpret_cast<const char*>(row.data()),
                    static_cast<std::streamsize>(row.size() * sizeof(int32_t)));
        }
    }

    {
        std::ofstream f(dir + "/header.txt", std::ios::binary);
        if (!f) throw IoError("cannot write " + dir + "/header.txt");
        f << "kind: " << art.kind << "\n";
        f << "fs: " << format_double(rec.fs) << "\n";
        f << "rows: " << rec.channels() << "\n";
        f << "samples: " << rec.samples() << "\n";
        f << "n_bins: " << rec.codec.n_bins << "\n";
        f << "mu: " << format_double(rec.codec.mu) << "\n";
        f << "names: ";
        for (size_t i = 0; i < rec.channel_names.size(); ++i) {
            if (i) f << ",";
            f << rec.channel_names[i];
        }
        f << "\n";
    }

    write_int_track(dir + "/condition.txt", rec.condition_track);
    write_int_track(dir + "/subject.txt", rec.subject_track);
}

TokenArtifact load_tokens(const std::string& dir) {
    if (!fs::exists(dir + "/header.txt")) throw IoError("no token artifact at " + dir);

    TokenArtifact art;
    TokenizedRecording& rec = art.rec;
    Eigen::Index R = 0, T = 0;
    {
        std::ifstream f(dir + "/header.txt");
        std::string line;
        while (std::getline(f, line)) {
            auto colon = line.find(':');
            if (colon == std::string::npos) continue;
            const std::string key = line.substr(0, colon);
            std::string val = line.substr(colon + 1);
            if (!val.empty() && val.front() == ' ') val.erase(0, 1);
            if (key == "kind") art.kind = val;
            else if (key == "fs") rec.fs = std::stod(val);
            else if (key == "rows") R = std::stol(val);
            else if (key == "samples") T = std::stol(val);
            else if (key == "n_bins") rec.codec.n_bins = std::stoi(val);
            else if (key == "mu") rec.codec.mu = std::stod(val);
            else if (key == "names") {
                std::stringstream ss(val);
                std::string name;
                while (std::getline(ss, name, ',')) rec.channel_names.push_back(name);
            } else {
                throw IoError("unknown header key '" + key + "' in " + dir);
            }
        }
    }
    if (R <= 0 || T <= 0) throw IoError("bad header in " + dir);
    if (art.kind != "mulaw" && art.kind != "flat") throw IoError("unknown token artifact kind in " + dir);

    {
        std::ifstream f(dir + "/tokens.i32", std::ios::binary);
        if (!f) throw IoError("cannot read " + dir + "/tokens.i32");
        rec.tokens.resize(R, T);
        std::vector<int32_t> row(static_cast<size_t>(T));
        for (Eigen::Index c = 0; c < R; ++c) {
            f.read(reinterpret_cast<char*>(row.data()),
                   static_cast<std::streamsize>(row.size() * sizeof(int32_t)));
            if (!f) throw IoError("short token file in " + dir);
            for (Eigen::Index t = 0; t < T; ++t) rec.tokens(c, t) = row[static_cast<size_t>(t)];
        }
    }

    rec.condition_track = read_int_track(dir + "/condition.txt", T);
    rec.subject_track = read_int_track(dir + "/subject.txt", T);
    return art;
}

TokenSplit split_tokens(const TokenizedRecording& rec, int val_trials, int test_trials) {
    const auto [b1, b2] = split_boundaries(rec.condition_track, val_trials, test_trials);
    auto slice = [&](Eigen::Index from, Eigen::Index to) {
        TokenizedRecording out;
        out.codec = rec.codec;
        out.fs = rec.fs;
        out.channel_names = rec.channel_names;
        out.tokens = rec.tokens.middleCols(from, to - from);
        out.condition_track = rec.condition_track.segment(from, to - from);
        out.subject_track = rec.subject_track.segment(from, to - from);
        return out;
    };
    TokenSplit out;
    out.val = slice(0, b1);
    out.test = slice(b1, b2);
    out.train = slice(b2, rec.samples());
    return out;
}

}  // namespace megcast
