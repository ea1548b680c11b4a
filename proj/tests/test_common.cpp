#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <set>

#include "megcast/common.hpp"

using namespace megcast;

TEST_CASE("rng streams are deterministic") {
    Rng a(7), b(7);
    for (int i = 0; i < 32; ++i) CHECK(a.next() == b.next());
    Rng c(8);
    CHECK(Rng(7).next() != c.next());
}

TEST_CASE("uniform stays in unit interval") {
    Rng r(3);
    for (int i = 0; i < 10000; ++i) {
        const double u = r.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
}

TEST_CASE("randint bounds and coverage") {
    Rng r(11);
    int counts[5] = {0, 0, 0, 0, 0};
    for (int i = 0; i < 5000; ++i) {
        const int64_t v = r.randint(5);
        REQUIRE(v >= 0);
        REQUIRE(v < 5);
        ++counts[v];
    }
    for (int k = 0; k < 5; ++k) CHECK(std::abs(counts[k] - 1000) < 150);
    for (int i = 0; i < 100; ++i) {
        const int64_t v = r.randint(-3, 3);
        CHECK(v >= -3);
        CHECK(v <= 3);
    }
}

TEST_CASE("gauss moments") {
    Rng r(5);
    const int n = 40000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double g = r.gauss();
        sum += g;
        sq += g * g;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(var - 1.0) < 0.03);
}

TEST_CASE("substreams decorrelate") {
    CHECK(Rng::substream(1, 0) != Rng::substream(1, 1));
    CHECK(Rng::substream(1, 0) != Rng::substream(2, 0));
    Rng a(Rng::substream(9, 0)), b(Rng::substream(9, 1));
    int same = 0;
    for (int i = 0; i < 64; ++i) same += a.next() == b.next();
    CHECK(same == 0);
}

TEST_CASE("shuffle is a seeded permutation") {
    std::vector<int> v(10), w(10);
    for (int i = 0; i < 10; ++i) v[static_cast<size_t>(i)] = w[static_cast<size_t>(i)] = i;
    Rng a(21), b(21);
    a.shuffle(v);
    b.shuffle(w);
    CHECK(v == w);
    std::set<int> s(v.begin(), v.end());
    CHECK(s.size() == 10);
}

TEST_CASE("format_double round-trips") {
    const double cases[] = {0.0,       -0.0,   1.0,   -1.0,     0.1,    1.0 / 3.0, 1e300,
                            2.5e-308,  123456789.0, 3.141592653589793, -271.5, 1e-9, 255.0};
    for (double v : cases) {
        const std::string s = format_double(v);
        char* end = nullptr;
        const double back = std::strtod(s.c_str(), &end);
        CHECK(*end == '\0');
        CHECK(back == v);
    }
    CHECK(format_int(-42) == "-42");
    CHECK(format_int(0) == "0");
    CHECK(format_int(1234567890123LL) == "1234567890123");
}
