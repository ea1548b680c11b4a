#include "megcast/mulaw.hpp"

namespace megcast {

double mu_law(double x, double mu) {
    if (!(std::abs(x) <= 1.0)) throw std::invalid_argument("mu-law input " + format_double(x) + " outside [-1, 1]");
    const double s = x < 0.0 ? -1.0 : 1.0;
    return s * std::log1p(mu * std::abs(x)) / std::log1p(mu);
}

double mu_law_inv(double y, double mu) {
    if (!(std::abs(y) <= 1.0)) throw std::invalid_argument("mu-law inverse input outside [-1, 1]");
    const double s = y < 0.0 ? -1.0 : 1.0;
    return s * (std::pow(1.0 + mu, std::abs(y)) - 1.0) / mu;
}

int quantize_value(double x, const MuLawCodec& codec) {
    const double y = mu_law(x, codec.mu);
    const double q = std::floor((y + 1.0) / 2.0 * static_cast<double>(codec.n_bins));
    return std::min(static_cast<int>(q), codec.n_bins - 1);
}

double detokenize_value(int token, const MuLawCodec& codec) {
    if (token < 0 || token >= codec.n_bins) throw std::invalid_argument("token outside vocabulary");
    const double y = 2.0 * (static_cast<double>(token) + 0.5) / static_cast<double>(codec.n_bins) - 1.0;
    return mu_law_inv(y, codec.mu);
}

TokenizedRecording quantize(const Recording& rec, const MuLawCodec& codec) {
    if (codec.n_bins < 2 || codec.mu <= 0.0) throw std::invalid_argument("bad codec parameters");
    TokenizedRecording out;
    out.codec = codec;
    out.fs = rec.fs;
    out.channel_names = rec.channel_names;
    out.condition_track = rec.condition_track;
    out.subject_track = rec.subject_track;
    out.tokens.resize(rec.channels(), rec.samples());
    for (Eigen::Index c = 0; c < rec.channels(); ++c)
        for (Eigen::Index t = 0; t < rec.samples(); ++t) out.tokens(c, t) = quantize_value(rec.data(c, t), codec);
    return out;
}

Recording detokenize(const TokenizedRecording& tok) {
    Recording out;
    out.fs = tok.fs;
    out.channel_names = tok.channel_names;
    out.condition_track = tok.condition_track;
    out.subject_track = tok.subject_track;
    out.data.resize(tok.channels(), tok.samples());
    // 2 * n_bins distinct values at most; avoid recomputing pow per sample.
    std::vector<double> centre(static_cast<size_t>(tok.codec.n_bins));
    for (int q = 0; q < tok.codec.n_bins; ++q) centre[static_cast<size_t>(q)] = detokenize_value(q, tok.codec);
    for (Eigen::Index c = 0; c < tok.channels(); ++c)
        for (Eigen::Index t = 0; t < tok.samples(); ++t) {
            const int q = tok.tokens(c, t);
            if (q < 0 || q >= tok.codec.n_bins) throw std::invalid_argument("token outside vocabulary");
            out.data(c, t) = centre[static_cast<size_t>(q)];
        }
    return out;
}

}  // namespace megcast
