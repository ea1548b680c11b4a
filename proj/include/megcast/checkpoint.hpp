#pragma once

#include <string>
#include <utility>
#include <vector>

#include "megcast/common.hpp"

namespace megcast {

// Versioned model artifact: canonical key-value metadata plus named float32
// tensors. Metadata order is preserved so reruns byte-match.
struct Checkpoint {
    std::vector<std::pair<std::string, std::string>> meta;
    std::vector<std::pair<std::string, MatrixXf>> tensors;

    void set(const std::string& key, const std::string& value);
    const std::string& get(const std::string& key) const;  // missing -> IoError
    bool has(const std::string& key) const;
    int64_t get_int(const std::string& key) const;
    double get_double(const std::string& key) const;

    void add_tensor(const std::string& name, const MatrixXf& t);
    const MatrixXf& tensor(const std::string& name) const;  // missing -> IoError
    bool has_tensor(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& ck, const std::string& path);

// IoError on bad magic or truncation; VersionError on format version mismatch.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace megcast
