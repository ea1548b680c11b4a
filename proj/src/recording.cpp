#include "megcast/recording.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace megcast {

namespace fs = std::filesystem;

void Recording::validate() const {
    if (!data.allFinite()) throw std::runtime_error("recording contains non-finite values");
    if (condition_track.size() != samples() || subject_track.size() != samples())
        throw std::runtime_error("label track length does not match sample count");
    if (channel_names.size() != static_cast<size_t>(channels()))
        throw std::runtime_error("channel name count does not match channel count");
    if (condition_track.size() && condition_track.minCoeff() < 0)
        throw std::runtime_error("condition indices must be >= 0");
    if (subject_track.size() && subject_track.minCoeff() < 1)
        throw std::runtime_error("subject indices must be >= 1");
}

static void write_int_track(const std::string& path, const VectorXi& v) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    for (Eigen::Index i = 0; i < v.size(); ++i) f << v[i] << "\n";
}

static VectorXi read_int_track(const std::string& path, Eigen::Index expected) {
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

void save_recording(const Recording& rec, const std::string& dir) {
    rec.validate();
    fs::create_directories(dir);

    {
        std::ofstream f(dir + "/data.f32", std::ios::binary);
        if (!f) throw IoError("cannot write " + dir + "/data.f32");
        std::vector<float> row(static_cast<size_t>(rec.samples()));
        for (Eigen::Index c = 0; c < rec.channels(); ++c) {
            for (Eigen::Index t = 0; t < rec.samples(); ++t) row[static_cast<size_t>(t)] = static_cast<float>(rec.data(c, t));
            f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)));
        }
    }

    {
        std::ofstream f(dir + "/header.txt", std::ios::binary);
        if (!f) throw IoError("cannot write " + dir + "/header.txt");
        f << "fs: " << format_double(rec.fs) << "\n";
        f << "channels: " << rec.channels() << "\n";
        f << "samples: " << rec.samples() << "\n";
        f << "channel_names: ";
        for (size_t i = 0; i < rec.channel_names.size(); ++i) {
            if (i) f << ",";
            f << rec.channel_names[i];
        }
        f << "\n";
    }

    write_int_track(dir + "/condition.txt", rec.condition_track);
    write_int_track(dir + "/subject.txt", rec.subject_track);
}

Recording load_recording(const std::string& dir) {
    if (!fs::exists(dir + "/header.txt")) throw IoError("no recording at " + dir);

    Recording rec;
    Eigen::Index C = 0, T = 0;
    {
        std::ifstream f(dir + "/header.txt");
        std::string line;
        while (std::getline(f, line)) {
            auto colon = line.find(':');
            if (colon == std::string::npos) continue;
            const std::string key = line.substr(0, colon);
            std::string val = line.substr(colon + 1);
            if (!val.empty() && val.front() == ' ') val.erase(0, 1);
            if (key == "fs") rec.fs = std::stod(val);
            else if (key == "channels") C = std::stol(val);
            else if (key == "samples") T = std::stol(val);
            else if (key == "channel_names") {
                std::stringstream ss(val);
                std::string name;
                while (std::getline(ss, name, ',')) rec.channel_names.push_back(name);
            } else {
                throw IoError("unknown header key '" + key + "' in " + dir);
            }
        }
    }
    if (C <= 0 || T <= 0) throw IoError("bad header in " + dir);

    {
        std::ifstream f(dir + "/data.f32", std::ios::binary);
        if (!f) throw IoError("cannot read " + dir + "/data.f32");
        rec.data.resize(C, T);
        std::vector<float> row(static_cast<size_t>(T));
        for (Eigen::Index c = 0; c < C; ++c) {
            f.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)));
            if (!f) throw IoError("short data file in " + dir);
            for (Eigen::Index t = 0; t < T; ++t) rec.data(c, t) = row[static_cast<size_t>(t)];
        }
    }

    rec.condition_track = read_int_track(dir + "/condition.txt", T);
    rec.subject_track = read_int_track(dir + "/subject.txt", T);
    rec.validate();
    return rec;
}

}  // namespace megcast
