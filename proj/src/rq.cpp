#include "megcast/rq.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "megcast/kmeans.hpp"

namespace megcast {

void BucketAssignment::validate() const {
    const Eigen::Index C = bucket_of_channel.size();
    if (static_cast<int>(channels.size()) != n_buckets) throw std::runtime_error("bucket list size mismatch");
    std::vector<int> seen(static_cast<size_t>(C), 0);
    for (int b = 0; b < n_buckets; ++b) {
        if (channels[static_cast<size_t>(b)].empty()) throw std::runtime_error("empty bucket");
        for (int c : channels[static_cast<size_t>(b)]) {
            if (c < 0 || c >= C) throw std::runtime_error("channel index out of range");
            if (bucket_of_channel[c] != b) throw std::runtime_error("bucket map inconsistent");
            ++seen[static_cast<size_t>(c)];
        }
    }
    for (Eigen::Index c = 0; c < C; ++c)
        if (seen[static_cast<size_t>(c)] != 1) throw std::runtime_error("channel not in exactly one bucket");
}

BucketAssignment kmeans_buckets(const MatrixXd& cov, int n_buckets, uint64_t seed) {
    const Eigen::Index C = cov.rows();
    if (cov.cols() != C) throw std::invalid_argument("covariance must be square");
    if (n_buckets < 1 || n_buckets > C)
        throw std::invalid_argument("need 1 <= buckets <= channels, got " + std::to_string(n_buckets));

    Rng rng(Rng::substream(seed, 0));
    const KMeansResult km = kmeans(cov, n_buckets, rng);

    // Renumber clusters by their lowest channel for a reproducible ordering.
    std::vector<int> first(static_cast<size_t>(n_buckets), -1);
    for (Eigen::Index c = 0; c < C; ++c) {
        int& f = first[static_cast<size_t>(km.assignment[c])];
        if (f < 0) f = static_cast<int>(c);
    }
    std::vector<int> order(static_cast<size_t>(n_buckets));
    for (int b = 0; b < n_buckets; ++b) order[static_cast<size_t>(b)] = b;
    std::sort(order.begin(), order.end(), [&](int a, int b) { return first[static_cast<size_t>(a)] < first[static_cast<size_t>(b)]; });
    std::vector<int> renum(static_cast<size_t>(n_buckets));
    for (int i = 0; i < n_buckets; ++i) renum[static_cast<size_t>(order[static_cast<size_t>(i)])] = i;

    BucketAssignment out;
    out.n_buckets = n_buckets;
    out.bucket_of_channel.resize(C);
    out.channels.resize(static_cast<size_t>(n_buckets));
    for (Eigen::Index c = 0; c < C; ++c) {
        const int b = renum[static_cast<size_t>(km.assignment[c])];
        out.bucket_of_channel[c] = b;
        out.channels[static_cast<size_t>(b)].push_back(static_cast<int>(c));
    }
    out.validate();
    return out;
}

int64_t ResidualCodebook::vocab_size() const {
    int64_t v = 1;
    for (const auto& t : tables) v *= t.rows();
    return v;
}

namespace {

MatrixXd round_f32(const MatrixXd& m) { return m.cast<float>().cast<double>(); }

Eigen::Index nearest_row(const MatrixXd& table, const VectorXd& x) {
    Eigen::Index best = 0;
    (table.rowwise() - x.transpose()).rowwise().squaredNorm().minCoeff(&best);
    return best;
}

}  // namespace

ResidualCodebook rq_fit(const MatrixXd& data, int m_stages, int bits_per_table, uint64_t seed) {
    if (m_stages < 1) throw std::invalid_argument("need at least one stage");
    if (bits_per_table < 1 || bits_per_table > 16) throw std::invalid_argument("bits per table out of range");
    const int k = 1 << bits_per_table;
    if (data.rows() < k)
        throw std::invalid_argument("residual quantiser needs at least " + std::to_string(k) + " training rows");

    ResidualCodebook cb;
    cb.bits_per_table = bits_per_table;
    MatrixXd residual = data;
    for (int m = 0; m < m_stages; ++m) {
        Rng rng(Rng::substream(seed, static_cast<uint64_t>(m)));
        const KMeansResult km = kmeans(residual, k, rng);
        const MatrixXd table = round_f32(km.centroids);
        // Residuals against the stored (float32-rounded) table, re-assigned.
        for (Eigen::Index i = 0; i < residual.rows(); ++i)
            residual.row(i) -= table.row(nearest_row(table, residual.row(i).transpose()));
        cb.tables.push_back(table);
    }
    return cb;
}

VectorXi rq_encode(const ResidualCodebook& cb, const VectorXd& x) {
    if (x.size() != cb.dim()) throw std::invalid_argument("encode dimension mismatch");
    VectorXi codes(cb.n_stages());
    VectorXd r = x;
    for (int m = 0; m < cb.n_stages(); ++m) {
        const Eigen::Index j = nearest_row(cb.tables[static_cast<size_t>(m)], r);
        codes[m] = static_cast<int>(j);
        r -= cb.tables[static_cast<size_t>(m)].row(j).transpose();
    }
    return codes;
}

VectorXd rq_decode(const ResidualCodebook& cb, const VectorXi& codes) {
    if (codes.size() != cb.n_stages()) throw std::invalid_argument("code count mismatch");
    VectorXd x = VectorXd::Zero(cb.dim());
    for (int m = 0; m < cb.n_stages(); ++m) {
        const int j = codes[m];
        if (j < 0 || j >= cb.tables[static_cast<size_t>(m)].rows()) throw std::invalid_argument("code out of range");
        x += cb.tables[static_cast<size_t>(m)].row(j).transpose();
    }
    return x;
}

int64_t rq_pack(const ResidualCodebook& cb, const VectorXi& codes) {
    if (codes.size() != cb.n_stages()) throw std::invalid_argument("code count mismatch");
    int64_t v = 0;
    for (int m = 0; m < cb.n_stages(); ++m) v = v * cb.tables[static_cast<size_t>(m)].rows() + codes[m];
    return v;
}

VectorXi rq_unpack(const ResidualCodebook& cb, int64_t token) {
    if (token < 0 || token >= cb.vocab_size()) throw std::invalid_argument("token out of range");
    VectorXi codes(cb.n_stages());
    for (int m = cb.n_stages() - 1; m >= 0; --m) {
        const int64_t k = cb.tables[static_cast<size_t>(m)].rows();
        codes[m] = static_cast<int>(token % k);
        token /= k;
    }
    return codes;
}

int64_t VectorQuantizer::vocab_size() const {
    int64_t v = 0;
    for (const auto& cb : codebooks) v = std::max(v, cb.vocab_size());
    return v;
}

VectorQuantizer fit_vector_quantizer(const MatrixXd& data, int n_buckets, int m_stages, int bits_per_table,
                                     uint64_t seed) {
    VectorQuantizer vq;
    const MatrixXd cov = [&] {
        MatrixXd centered = data.colwise() - data.rowwise().mean();
        return MatrixXd((centered * centered.transpose()) / static_cast<double>(data.cols()));
    }();
    vq.buckets = kmeans_buckets(cov, n_buckets, Rng::substream(seed, 1));
    for (int b = 0; b < n_buckets; ++b) {
        const auto& chans = vq.buckets.channels[static_cast<size_t>(b)];
        MatrixXd pts(data.cols(), static_cast<Eigen::Index>(chans.size()));
        for (size_t i = 0; i < chans.size(); ++i) pts.col(static_cast<Eigen::Index>(i)) = data.row(chans[i]).transpose();
        vq.codebooks.push_back(rq_fit(pts, m_stages, bits_per_table, Rng::substream(seed, 100 + static_cast<uint64_t>(b))));
    }
    return vq;
}

MatrixXi vq_encode(const VectorQuantizer& vq, const MatrixXd& data) {
    const int B = vq.buckets.n_buckets;
    if (data.rows() != vq.buckets.bucket_of_channel.size()) throw std::invalid_argument("channel count mismatch");
    MatrixXi tokens(B, data.cols());
    for (int b = 0; b < B; ++b) {
        const auto& chans = vq.buckets.channels[static_cast<size_t>(b)];
        const auto& cb = vq.codebooks[static_cast<size_t>(b)];
        VectorXd x(static_cast<Eigen::Index>(chans.size()));
        for (Eigen::Index t = 0; t < data.cols(); ++t) {
            for (size_t i = 0; i < chans.size(); ++i) x[static_cast<Eigen::Index>(i)] = data(chans[i], t);
            tokens(b, t) = static_cast<int>(rq_pack(cb, rq_encode(cb, x)));
        }
    }
    return tokens;
}

MatrixXd vq_decode(const VectorQuantizer& vq, const MatrixXi& tokens) {
    const int B = vq.buckets.n_buckets;
    if (tokens.rows() != B) throw std::invalid_argument("bucket count mismatch");
    MatrixXd out(vq.buckets.bucket_of_channel.size(), tokens.cols());
    for (int b = 0; b < B; ++b) {
        const auto& chans = vq.buckets.channels[static_cast<size_t>(b)];
        const auto& cb = vq.codebooks[static_cast<size_t>(b)];
        for (Eigen::Index t = 0; t < tokens.cols(); ++t) {
            const VectorXd x = rq_decode(cb, rq_unpack(cb, tokens(b, t)));
            for (size_t i = 0; i < chans.size(); ++i) out(chans[i], t) = x[static_cast<Eigen::Index>(i)];
        }
    }
    return out;
}

VectorXi flatten_tokens(const MatrixXi& bucket_tokens, int sep_token) {
    const Eigen::Index B = bucket_tokens.rows(), T = bucket_tokens.cols();
    VectorXi flat((B + 1) * T);
    Eigen::Index p = 0;
    for (Eigen::Index t = 0; t < T; ++t) {
        flat[p++] = sep_token;
        for (Eigen::Index b = 0; b < B; ++b) flat[p++] = bucket_tokens(b, t);
    }
    return flat;
}

MatrixXi unflatten_tokens(const VectorXi& flat, int n_buckets, int sep_token) {
    const Eigen::Index stride = n_buckets + 1;
    if (flat.size() % stride != 0)
        throw std::invalid_argument("flat length " + std::to_string(flat.size()) + " not divisible by " +
                                    std::to_string(stride));
    const Eigen::Index T = flat.size() / stride;
    MatrixXi tokens(n_buckets, T);
    for (Eigen::Index t = 0; t < T; ++t) {
        if (flat[t * stride] != sep_token) throw std::invalid_argument("missing separator token");
        for (Eigen::Index b = 0; b < n_buckets; ++b) tokens(b, t) = flat[t * stride + 1 + b];
    }
    return tokens;
}

namespace {

constexpr char kMagic[8] = {'M', 'E', 'G', 'C', 'O', 'D', 'E', 'C'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& f, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    f.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& f) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (!f) throw IoError("truncated codebook file");
    return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 | static_cast<uint32_t>(b[2]) << 16 |
           static_cast<uint32_t>(b[3]) << 24;
}

void write_f32(std::ostream& f, float v) {
    uint32_t u;
    std::memcpy(&u, &v, 4);
    write_u32(f, u);
}

float read_f32(std::istream& f) {
    const uint32_t u = read_u32(f);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}

}  // namespace

void save_quantizer(const VectorQuantizer& vq, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    f.write(kMagic, 8);
    write_u32(f, kVersion);
    const Eigen::Index C = vq.buckets.bucket_of_channel.size();
    write_u32(f, static_cast<uint32_t>(C));
    write_u32(f, static_cast<uint32_t>(vq.buckets.n_buckets));
    for (Eigen::Index c = 0; c < C; ++c) write_u32(f, static_cast<uint32_t>(vq.buckets.bucket_of_channel[c]));
    for (const auto& cb : vq.codebooks) {
        write_u32(f, static_cast<uint32_t>(cb.bits_per_table));
        write_u32(f, static_cast<uint32_t>(cb.n_stages()));
        for (const auto& table : cb.tables) {
            write_u32(f, static_cast<uint32_t>(table.rows()));
            write_u32(f, static_cast<uint32_t>(table.cols()));
            for (Eigen::Index i = 0; i < table.rows(); ++i)
                for (Eigen::Index j = 0; j < table.cols(); ++j) write_f32(f, static_cast<float>(table(i, j)));
        }
    }
    if (!f) throw IoError("write failure on " + path);
}

VectorQuantizer load_quantizer(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kMagic, 8) != 0) throw IoError("not a codebook file: " + path);
    const uint32_t version = read_u32(f);
    if (version != kVersion)
        throw VersionError("codebook version " + std::to_string(version) + " unsupported (want " +
                           std::to_string(kVersion) + ")");

    VectorQuantizer vq;
    const uint32_t C = read_u32(f);
    const uint32_t B = read_u32(f);
    vq.buckets.n_buckets = static_cast<int>(B);
    vq.buckets.bucket_of_channel.resize(C);
    vq.buckets.channels.resize(B);
    for (uint32_t c = 0; c < C; ++c) {
        const uint32_t b = read_u32(f);
        if (b >= B) throw IoError("corrupt bucket map in " + path);
        vq.buckets.bucket_of_channel[c] = static_cast<int>(b);
        vq.buckets.channels[b].push_back(static_cast<int>(c));
    }
    vq.buckets.validate();
    for (uint32_t b = 0; b < B; ++b) {
        ResidualCodebook cb;
        cb.bits_per_table = static_cast<int>(read_u32(f));
        const uint32_t M = read_u32(f);
        for (uint32_t m = 0; m < M; ++m) {
            const uint32_t rows = read_u32(f);
            const uint32_t cols = read_u32(f);
            MatrixXd table(rows, cols);
            for (uint32_t i = 0; i < rows; ++i)
                for (uint32_t j = 0; j < cols; ++j) table(i, j) = read_f32(f);
            cb.tables.push_back(std::move(table));
        }
        vq.codebooks.push_back(std::move(cb));
    }
    return vq;
}

}  // namespace megcast
