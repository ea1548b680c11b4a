#pragma once

#include <string>

#include "megcast/mulaw.hpp"

namespace megcast {

// On-disk token artifact. kind "mulaw" holds per-channel codec tokens; kind
// "flat" holds per-bucket vector-quantiser tokens (rows are buckets and the
// codec fields only record the vocabulary size).
//
// Directory layout:
//   tokens.i32     little-endian int32, row-major R x T
//   header.txt     key: value lines (kind, fs, rows, samples, n_bins, mu, names)
//   condition.txt  one integer per line, length T
//   subject.txt    one integer per line, length T
struct TokenArtifact {
    std::string kind = "mulaw";
    TokenizedRecording rec;
};

void save_tokens(const TokenArtifact& art, const std::string& dir);
TokenArtifact load_tokens(const std::string& dir);  // IoError on missing or malformed files

struct TokenSplit {
    TokenizedRecording train, val, test;
};

// Same trial-prefix boundaries as split_dataset, applied to a token matrix.
TokenSplit split_tokens(const TokenizedRecording& rec, int val_trials, int test_trials);

}  // namespace megcast
