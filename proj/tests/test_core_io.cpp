#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "defleye/config.hpp"
#include "defleye/image.hpp"
#include "defleye/rng.hpp"
#include "defleye/util.hpp"

using namespace defleye;

namespace {
std::string tmp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}
}  // namespace

TEST_CASE("sha1 and git blob hash match known vectors") {
    CHECK(sha1_hex("") == "da39a3ee5e6b4b0d3255bfef95601890afd80709");
    CHECK(sha1_hex("abc") == "a9993e364706816aba3e25717850c26c9cd0d89d");
    // `printf '' | git hash-object --stdin` -> e69de...
    CHECK(git_blob_hash("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
    // `printf 'hello\n' | git hash-object --stdin`
    CHECK(git_blob_hash("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST_CASE("pgm16 round-trips with 16-bit quantization") {
    Image img(37, 23);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) img.at(x, y) = (x * 7 + y * 13) % 100 / 99.0;
    const std::string path = tmp_path("defleye_test.pgm");
    write_pgm16(path, img);
    const Image back = read_pgm16(path);
    REQUIRE(back.same_size(img));
    for (size_t i = 0; i < img.size(); ++i)
        CHECK(std::abs(back.data[i] - img.data[i]) < 1.0 / 65535.0);
    std::remove(path.c_str());
}

TEST_CASE("png writer emits a well-formed signature") {
    Image img(16, 8, 0.25);
    const std::string path = tmp_path("defleye_test.png");
    write_png8(path, img);
    const std::string bytes = read_file(path);
    REQUIRE(bytes.size() > 20);
    CHECK(static_cast<unsigned char>(bytes[0]) == 0x89);
    CHECK(bytes.substr(1, 3) == "PNG");
    CHECK(bytes.find("IHDR") != std::string::npos);
    CHECK(bytes.find("IEND") != std::string::npos);
    std::remove(path.c_str());
}

TEST_CASE("channel container round-trips planes and rejects bad magic") {
    ChannelStack s;
    s.magic = "DPM1";
    s.width = 9;
    s.height = 4;
    std::vector<double> a(36), b(36);
    for (size_t i = 0; i < 36; ++i) {
        a[i] = 0.5 * i;
        b[i] = -1.25 * i;
    }
    s.add("phx ", a);
    s.add("conf", b);
    const std::string path = tmp_path("defleye_test.dpm");
    write_channels(path, s);
    const ChannelStack back = read_channels(path, "DPM1");
    CHECK(back.width == 9);
    CHECK(back.height == 4);
    CHECK(back.plane("phx ") == a);
    CHECK(back.plane("conf") == b);
    CHECK(back.has("conf"));
    CHECK(!back.has("none"));
    CHECK_THROWS_AS(read_channels(path, "DGT1"), Error);
    std::remove(path.c_str());
}

TEST_CASE("config parser handles sections, lists, comments and writes back") {
    const std::string text = R"(# units: mm, px, rad
[camera.0]
fx = 2400      # pixels
name = "left eye cam"
[surface]
type = two_sphere
knots = [1, 2.5, 3]
)";
    const Config cfg = Config::parse_string(text);
    CHECK(cfg.get_double("camera.0", "fx") == 2400.0);
    CHECK(cfg.get_string("camera.0", "name") == "left eye cam");
    CHECK(cfg.get_string("surface", "type") == "two_sphere");
    const auto knots = cfg.get_list("surface", "knots");
    REQUIRE(knots.size() == 3);
    CHECK(knots[1] == 2.5);
    CHECK(cfg.get_int("camera.0", "missing", 7) == 7);
    CHECK_THROWS_AS(cfg.get_double("camera.0", "missing"), ConfigError);
    CHECK_THROWS_AS(cfg.get_double("camera.0", "name"), ConfigError);

    const std::string out = cfg.serialize({"round trip"});
    const Config back = Config::parse_string(out);
    CHECK(back.get_double("camera.0", "fx") == 2400.0);
    CHECK(back.get_list("surface", "knots") == knots);
}

TEST_CASE("config reports parse errors with location") {
    CHECK_THROWS_AS(Config::parse_string("[sec\nx=1\n"), ConfigError);
    CHECK_THROWS_AS(Config::parse_string("[sec]\njust a line\n"), ConfigError);
}

TEST_CASE("counter rng is deterministic, order-free and roughly gaussian") {
    const CounterRng rng(123);
    CHECK(rng.bits(1, 2, 3) == CounterRng(123).bits(1, 2, 3));
    CHECK(rng.bits(1, 2, 3) != rng.bits(1, 3, 2));
    CHECK(rng.bits(2, 2, 3) != rng.bits(1, 2, 3));

    double sum = 0, sum_sq = 0;
    const int n = 50000;
    for (int i = 0; i < n; ++i) {
        const double g = rng.gaussian(7, i);
        sum += g;
        sum_sq += g * g;
    }
    const double m = sum / n;
    const double var = sum_sq / n - m * m;
    CHECK(std::abs(m) < 0.02);
    CHECK(std::abs(var - 1.0) < 0.03);

    // uniform moments
    double us = 0;
    for (int i = 0; i < n; ++i) us += rng.uniform(3, i);
    CHECK(std::abs(us / n - 0.5) < 0.01);
}

TEST_CASE("statistics helpers") {
    CHECK(mean({1, 2, 3, 4}) == 2.5);
    CHECK(stddev_population({1, 3}) == doctest::Approx(1.0));  // divisor n
    CHECK(median({5, 1, 9}) == 5);
    CHECK(median({1, 2, 3, 4}) == 2.5);
    CHECK(rms({3, 4}) == doctest::Approx(std::sqrt(12.5)));
    CHECK(spearman_rho({1, 2, 3, 4, 5}, {2, 4, 6, 9, 11}) == doctest::Approx(1.0));
    CHECK(spearman_rho({1, 2, 3}, {5, 4, 3}) == doctest::Approx(-1.0));
    CHECK(csv_number(1.23456789, 4) == "1.2346");
}
