#include <doctest.h>

#include <fstream>
#include <map>

#include "megcast/kmeans.hpp"
#include "megcast/rq.hpp"
#include "megcast/signal.hpp"
#include "megcast/synth.hpp"
#include "test_util.hpp"

using namespace megcast;

TEST_CASE("mu-law fixed points and reference value") {
    CHECK(mu_law(0.0, 255.0) == 0.0);
    CHECK(mu_law(1.0, 255.0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(mu_law(-1.0, 255.0) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(mu_law(0.5, 255.0) == doctest::Approx(0.87571).epsilon(1e-5));
    CHECK_THROWS(mu_law(1.0001, 255.0));
    CHECK_THROWS(mu_law(std::nan(""), 255.0));
}

TEST_CASE("companding round trip is exact to 1e-9") {
    Rng r(31);
    double worst = 0.0;
    for (int i = 0; i < 100000; ++i) {
        const double x = 2.0 * r.uniform() - 1.0;
        worst = std::max(worst, std::abs(mu_law_inv(mu_law(x, 255.0), 255.0) - x));
    }
    CHECK(worst < 1e-9);
}

TEST_CASE("quantiser bin assignment") {
    MuLawCodec codec;
    CHECK(quantize_value(0.0, codec) == 128);
    CHECK(quantize_value(1.0, codec) == 255);
    CHECK(quantize_value(-1.0, codec) == 0);

    // Monotone in x.
    int prev = 0;
    for (int i = 0; i <= 1000; ++i) {
        const double x = -1.0 + 2.0 * static_cast<double>(i) / 1000.0;
        const int q = quantize_value(x, codec);
        CHECK(q >= prev);
        prev = q;
    }
}

TEST_CASE("bins near zero are narrower than bins near the edges") {
    MuLawCodec codec;
    // Raw-domain width of the token containing x: difference of bin edges
    // mapped back through the inverse transfer function.
    auto raw_width = [&](int token) {
        const double lo = 2.0 * static_cast<double>(token) / codec.n_bins - 1.0;
        const double hi = 2.0 * static_cast<double>(token + 1) / codec.n_bins - 1.0;
        return mu_law_inv(hi, codec.mu) - mu_law_inv(lo, codec.mu);
    };
    CHECK(raw_width(128) < raw_width(255));
    CHECK(raw_width(128) < raw_width(0));
    CHECK(raw_width(140) < raw_width(250));
}

TEST_CASE("round trip error is bounded by the companded bin width") {
    MuLawCodec codec;
    const double bin_width = 2.0 / codec.n_bins;
    Rng r(17);
    for (int i = 0; i < 20000; ++i) {
        const double x = 2.0 * r.uniform() - 1.0;
        const double back = detokenize_value(quantize_value(x, codec), codec);
        CHECK(std::abs(mu_law(back, codec.mu) - mu_law(x, codec.mu)) <= bin_width);
    }
}

TEST_CASE("tokenized recordings carry labels and stay in vocabulary") {
    SyntheticSpec spec;
    spec.n_channels = 3;
    spec.n_conditions = 2;
    spec.noise_exponent = 0.0;
    spec.duration_s = spec.duration_for(4);
    const Recording rec = preprocess(synthesize(spec));

    const TokenizedRecording tok = quantize(rec);
    CHECK(tok.tokens.minCoeff() >= 0);
    CHECK(tok.tokens.maxCoeff() < 256);
    CHECK(tok.condition_track == rec.condition_track);
    CHECK(tok.subject_track == rec.subject_track);
    CHECK(tok.fs == rec.fs);

    const Recording back = detokenize(tok);
    CHECK(back.data.cwiseAbs().maxCoeff() < 1.0);
    CHECK((back.data - rec.data).cwiseAbs().maxCoeff() < 0.05);

    Recording bad = rec;
    bad.data(0, 0) = 1.5;
    CHECK_THROWS(quantize(bad));
}

TEST_CASE("round-tripped synthetic data preserves the evoked response") {
    SyntheticSpec spec;
    spec.n_channels = 4;
    spec.n_conditions = 2;
    spec.noise_exponent = 0.0;
    spec.noise_scale = 0.3;
    spec.duration_s = spec.duration_for(40);
    spec.seed = 9;
    const Recording rec = preprocess(synthesize(spec));
    const Recording back = detokenize(quantize(rec));

    auto evoked = [&](const Recording& r) {
        const EpochedData ep = epoch(r, 0.0, spec.schedule.duration_s);
        MatrixXd avg = MatrixXd::Zero(r.channels(), ep.epochs[0].cols());
        for (const auto& e : ep.epochs) avg += e;
        return MatrixXd(avg / static_cast<double>(ep.n_trials()));
    };
    const MatrixXd a = evoked(rec), b = evoked(back);
    const VectorXd x = Eigen::Map<const VectorXd>(a.data(), a.size());
    const VectorXd y = Eigen::Map<const VectorXd>(b.data(), b.size());
    const VectorXd xc = x.array() - x.mean(), yc = y.array() - y.mean();
    const double corr = xc.dot(yc) / std::sqrt(xc.squaredNorm() * yc.squaredNorm());
    CHECK(corr > 0.99);
}

TEST_CASE("k-means separates well-separated clusters") {
    Rng r(41);
    MatrixXd pts(60, 2);
    for (int i = 0; i < 60; ++i) {
        const int g = i % 3;
        pts(i, 0) = 10.0 * g + 0.1 * r.gauss();
        pts(i, 1) = -5.0 * g + 0.1 * r.gauss();
    }
    Rng kr(1);
    const KMeansResult km = kmeans(pts, 3, kr);
    for (int i = 0; i < 60; ++i) CHECK(km.assignment[i] == km.assignment[i % 3]);
    CHECK(km.inertia < 60.0 * 0.1);
}

TEST_CASE("covariance bucketing groups duplicated channels") {
    // Two channel families driven by independent sources.
    Rng r(5);
    const Eigen::Index T = 4000;
    VectorXd s1(T), s2(T);
    for (Eigen::Index t = 0; t < T; ++t) {
        s1[t] = r.gauss();
        s2[t] = r.gauss();
    }
    MatrixXd data(6, T);
    for (int c = 0; c < 3; ++c) data.row(c) = s1.transpose() * (1.0 + 0.1 * c);
    for (int c = 3; c < 6; ++c) data.row(c) = s2.transpose() * (1.0 + 0.1 * (c - 3));
    for (int c = 0; c < 6; ++c)
        for (Eigen::Index t = 0; t < T; ++t) data(c, t) += 0.01 * r.gauss();

    const MatrixXd cov = channel_covariance_matrix(data);
    const BucketAssignment buckets = kmeans_buckets(cov, 2, 7);
    buckets.validate();
    CHECK(buckets.channels[0] == std::vector<int>{0, 1, 2});
    CHECK(buckets.channels[1] == std::vector<int>{3, 4, 5});

    // B = C gives singletons.
    const BucketAssignment singles = kmeans_buckets(cov, 6, 7);
    for (int b = 0; b < 6; ++b) CHECK(singles.channels[static_cast<size_t>(b)].size() == 1);

    CHECK_THROWS(kmeans_buckets(cov, 7, 1));
}

TEST_CASE("single-stage table containing the query reconstructs exactly") {
    // 8 distinct, well-separated points; 3 bits = 8 centroids.
    MatrixXd pts(8, 2);
    for (int i = 0; i < 8; ++i) {
        pts(i, 0) = 5.0 * i;
        pts(i, 1) = -3.0 * i + 1.0;
    }
    const ResidualCodebook cb = rq_fit(pts, 1, 3, 11);
    for (int i = 0; i < 8; ++i) {
        const VectorXd x = pts.row(i).transpose();
        const VectorXd back = rq_decode(cb, rq_encode(cb, x));
        CHECK((back - x).norm() < 1e-5);  // float32 table storage
    }
    VectorXd wrong(3);
    CHECK_THROWS(rq_encode(cb, wrong));
}

TEST_CASE("second stage reduces held-out reconstruction error") {
    Rng r(23);
    auto draw = [&](Eigen::Index n) {
        MatrixXd m(n, 3);
        for (Eigen::Index i = 0; i < n; ++i) {
            const int g = static_cast<int>(r.randint(4));
            for (int j = 0; j < 3; ++j) m(i, j) = 3.0 * g * (j + 1) + r.gauss();
        }
        return m;
    };
    const MatrixXd train = draw(2000), held = draw(500);
    const ResidualCodebook cb2 = rq_fit(train, 2, 4, 3);

    ResidualCodebook cb1 = cb2;
    cb1.tables.resize(1);  // the M=1 prefix of the same training run

    auto mse = [&](const ResidualCodebook& cb) {
        double acc = 0.0;
        for (Eigen::Index i = 0; i < held.rows(); ++i) {
            const VectorXd x = held.row(i).transpose();
            acc += (rq_decode(cb, rq_encode(cb, x)) - x).squaredNorm();
        }
        return acc / static_cast<double>(held.rows());
    };
    CHECK(mse(cb2) <= mse(cb1));
    CHECK(mse(cb2) < mse(cb1) * 0.9);  // and strictly, by a margin
}

TEST_CASE("two stages match a single stage of the same total bits on product-structured data") {
    // Points form an A + B grid: coarse well-separated offsets plus a small
    // shared displacement set. Both quantisers can hit zero error.
    Rng r(13);
    MatrixXd a(8, 2), b(8, 2);
    for (int i = 0; i < 8; ++i) {
        a(i, 0) = 100.0 * i;
        a(i, 1) = -70.0 * i;
        b(i, 0) = 0.5 * i;
        b(i, 1) = 0.3 * i + 0.2;
    }
    MatrixXd pts(64, 2);
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) pts.row(i * 8 + j) = a.row(i) + b.row(j);

    const ResidualCodebook two = rq_fit(pts, 2, 3, 19);
    const ResidualCodebook one = rq_fit(pts, 1, 6, 19);
    auto mse = [&](const ResidualCodebook& cb) {
        double acc = 0.0;
        for (Eigen::Index i = 0; i < pts.rows(); ++i) {
            const VectorXd x = pts.row(i).transpose();
            acc += (rq_decode(cb, rq_encode(cb, x)) - x).squaredNorm();
        }
        return acc / static_cast<double>(pts.rows());
    };
    CHECK(mse(two) <= mse(one) + 1e-8);
}

TEST_CASE("packing stage codes is bijective") {
    MatrixXd pts = MatrixXd::Random(300, 2);
    const ResidualCodebook cb = rq_fit(pts, 2, 3, 29);
    CHECK(cb.vocab_size() == 64);
    for (int64_t tkn = 0; tkn < 64; ++tkn) CHECK(rq_pack(cb, rq_unpack(cb, tkn)) == tkn);
}

TEST_CASE("vector quantizer round trip has bounded error and full channel coverage") {
    Rng r(3);
    const Eigen::Index T = 3000;
    MatrixXd data(5, T);
    for (int c = 0; c < 5; ++c)
        for (Eigen::Index t = 0; t < T; ++t) data(c, t) = r.gauss();

    const VectorQuantizer vq = fit_vector_quantizer(data, 2, 2, 5, 43);
    CHECK(vq.vocab_size() == 1024);
    const MatrixXi tokens = vq_encode(vq, data);
    CHECK(tokens.rows() == 2);
    CHECK(tokens.cols() == T);
    CHECK(tokens.minCoeff() >= 0);
    CHECK(tokens.maxCoeff() < 1024);
    const MatrixXd back = vq_decode(vq, tokens);
    const double mse = (back - data).squaredNorm() / static_cast<double>(data.size());
    CHECK(std::isfinite(mse));
    CHECK(mse < 1.0);  // strictly better than predicting the mean
}

TEST_CASE("flatten layout and inverse") {
    MatrixXi tokens(2, 2);
    tokens << 1, 3,
              2, 4;
    const VectorXi flat = flatten_tokens(tokens, 99);
    REQUIRE(flat.size() == 6);
    CHECK(flat[0] == 99);
    CHECK(flat[1] == 1);
    CHECK(flat[2] == 2);
    CHECK(flat[3] == 99);
    CHECK(flat[4] == 3);
    CHECK(flat[5] == 4);
    CHECK(unflatten_tokens(flat, 2, 99) == tokens);

    MatrixXi wide(30, 100);
    wide.setConstant(7);
    CHECK(flatten_tokens(wide, 5).size() == 3100);

    VectorXi bad(5);
    bad.setZero();
    CHECK_THROWS(unflatten_tokens(bad, 2, 99));
}

TEST_CASE("codebook container round-trips bit-exactly") {
    Rng r(8);
    MatrixXd data(4, 1500);
    for (int c = 0; c < 4; ++c)
        for (Eigen::Index t = 0; t < 1500; ++t) data(c, t) = r.gauss();
    const VectorQuantizer vq = fit_vector_quantizer(data, 2, 2, 4, 17);

    TempDir tmp;
    save_quantizer(vq, tmp.sub("codec.bin"));
    const VectorQuantizer back = load_quantizer(tmp.sub("codec.bin"));
    CHECK(back.buckets.bucket_of_channel == vq.buckets.bucket_of_channel);
    REQUIRE(back.codebooks.size() == vq.codebooks.size());
    for (size_t b = 0; b < vq.codebooks.size(); ++b) {
        REQUIRE(back.codebooks[b].n_stages() == vq.codebooks[b].n_stages());
        for (int m = 0; m < vq.codebooks[b].n_stages(); ++m) {
            const MatrixXd& x = vq.codebooks[b].tables[static_cast<size_t>(m)];
            const MatrixXd& y = back.codebooks[b].tables[static_cast<size_t>(m)];
            CHECK((x - y).cwiseAbs().maxCoeff() == 0.0);
        }
    }
    // Same tokens from the loaded quantizer.
    CHECK(vq_encode(back, data) == vq_encode(vq, data));
}

TEST_CASE("codebook loader rejects foreign and future files") {
    TempDir tmp;
    {
        std::ofstream f(tmp.sub("junk.bin"), std::ios::binary);
        f << "NOTACODE0000";
    }
    CHECK_THROWS_AS(load_quantizer(tmp.sub("junk.bin")), IoError);
    CHECK_THROWS_AS(load_quantizer(tmp.sub("missing.bin")), IoError);

    Rng r(8);
    MatrixXd data(2, 600);
    for (int c = 0; c < 2; ++c)
        for (Eigen::Index t = 0; t < 600; ++t) data(c, t) = r.gauss();
    const VectorQuantizer vq = fit_vector_quantizer(data, 1, 1, 3, 1);
    save_quantizer(vq, tmp.sub("codec.bin"));
    // Bump the version field (bytes 8..11).
    {
        std::fstream f(tmp.sub("codec.bin"), std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(8);
        const char v2[4] = {2, 0, 0, 0};
        f.write(v2, 4);
    }
    CHECK_THROWS_AS(load_quantizer(tmp.sub("codec.bin")), VersionError);
}
