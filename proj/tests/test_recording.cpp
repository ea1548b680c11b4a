#include <doctest.h>

#include <fstream>

#include "megcast/recording.hpp"
#include "test_util.hpp"

using namespace megcast;

namespace {

Recording make_rec() {
    Recording rec;
    rec.fs = 123.5;
    rec.data.resize(3, 7);
    Rng r(2);
    for (Eigen::Index c = 0; c < 3; ++c)
        for (Eigen::Index t = 0; t < 7; ++t) rec.data(c, t) = 10.0 * r.gauss();
    rec.data(0, 0) = -1.0e6;
    rec.data(2, 6) = 0.1;
    rec.channel_names = {"left", "right", "mid"};
    rec.condition_track.resize(7);
    rec.condition_track << 0, 1, 1, 0, 2, 2, 0;
    rec.subject_track = VectorXi::Ones(7);
    return rec;
}

}  // namespace

TEST_CASE("recording round-trips through the directory format") {
    TempDir tmp;
    const Recording rec = make_rec();
    save_recording(rec, tmp.sub("rec"));
    const Recording back = load_recording(tmp.sub("rec"));

    CHECK(back.fs == rec.fs);
    CHECK(back.channel_names == rec.channel_names);
    CHECK(back.condition_track == rec.condition_track);
    CHECK(back.subject_track == rec.subject_track);
    REQUIRE(back.data.rows() == rec.data.rows());
    REQUIRE(back.data.cols() == rec.data.cols());
    // On-disk precision is float32; the load must reproduce exactly that.
    const MatrixXd want = rec.data.cast<float>().cast<double>();
    CHECK((back.data - want).cwiseAbs().maxCoeff() == 0.0);

    // A second trip is bit-exact.
    save_recording(back, tmp.sub("rec2"));
    const Recording again = load_recording(tmp.sub("rec2"));
    CHECK((again.data - back.data).cwiseAbs().maxCoeff() == 0.0);

    std::ifstream a(tmp.sub("rec") + "/data.f32", std::ios::binary);
    std::ifstream b(tmp.sub("rec2") + "/data.f32", std::ios::binary);
    const std::string bytes_a((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    const std::string bytes_b((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(bytes_a == bytes_b);
}

TEST_CASE("validate rejects malformed recordings") {
    Recording rec = make_rec();
    CHECK_NOTHROW(rec.validate());

    Recording bad = rec;
    bad.condition_track.resize(3);
    CHECK_THROWS(bad.validate());

    bad = rec;
    bad.condition_track[1] = -1;
    CHECK_THROWS(bad.validate());

    bad = rec;
    bad.subject_track[0] = 0;
    CHECK_THROWS(bad.validate());

    bad = rec;
    bad.data(1, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS(bad.validate());

    bad = rec;
    bad.channel_names.pop_back();
    CHECK_THROWS(bad.validate());
}

TEST_CASE("loading a missing directory raises an io error") {
    TempDir tmp;
    CHECK_THROWS_AS(load_recording(tmp.sub("nope")), IoError);
}

TEST_CASE("unknown header keys are rejected") {
    TempDir tmp;
    save_recording(make_rec(), tmp.sub("rec"));
    {
        std::ofstream f(tmp.sub("rec") + "/header.txt", std::ios::app);
        f << "bogus: 1\n";
    }
    CHECK_THROWS_AS(load_recording(tmp.sub("rec")), IoError);
}

TEST_CASE("truncated data file is detected") {
    TempDir tmp;
    save_recording(make_rec(), tmp.sub("rec"));
    std::filesystem::resize_file(std::filesystem::path(tmp.sub("rec")) / "data.f32", 10);
    CHECK_THROWS_AS(load_recording(tmp.sub("rec")), IoError);
}
