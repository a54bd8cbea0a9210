#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <random>

#include "pwrelax/io.hpp"

using namespace pwrelax;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("pwrelax_io_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

DensityField sample_field() {
    CellPartition p;
    p.points_per_cell_axis = 2;
    const auto f = compute_density(SuperpositionSpec::m4_paper(), 0.7, p, IntegratorConfig{});
    return f;
}

}  // namespace

TEST_CASE("number formatting round-trips", "[io]") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1e3, 1e3);
    for (int i = 0; i < 1000; ++i) {
        const double v = u(rng) * std::pow(10.0, (i % 40) - 20);
        CHECK(io::parse_double(io::fmt(v)) == v);
    }
    CHECK(std::isnan(io::parse_double(io::fmt(std::nan("")))));
    CHECK(io::parse_double(io::fmt(-HUGE_VAL)) == -HUGE_VAL);
    CHECK_THROWS_AS(io::parse_double("1.5x"), ConfigError);
    CHECK_THROWS_AS(io::parse_double(""), ConfigError);
}

TEST_CASE("phase documents", "[io]") {
    TempDir tmp;
    const auto spec = SuperpositionSpec::random(9, 5);
    io::write_phase_file(tmp.path / "phases.json", spec, 9);
    const auto doc = io::read_phase_file(tmp.path / "phases.json");
    CHECK(doc.seed == std::optional<std::uint64_t>(9));
    CHECK(doc.spec.modes_per_axis() == 5);
    for (int m = 0; m < 5; ++m)
        for (int n = 0; n < 5; ++n) CHECK(doc.spec.phase(m, n) == spec.phase(m, n));

    const auto m4 = io::phases_from_json(io::phases_to_json(SuperpositionSpec::m4_paper()));
    CHECK(m4.spec.phase(0, 1) == 2.3099);
    CHECK_FALSE(m4.seed.has_value());

    using io::json;
    CHECK_THROWS_AS(io::phases_from_json(json::array()), ConfigError);
    CHECK_THROWS_AS(io::phases_from_json(json{{"modes_per_axis", 2}}), ConfigError);
    CHECK_THROWS_AS(io::phases_from_json(json{{"modes_per_axis", 2}, {"phases", {{0.1, 0.2}}}}), ConfigError);
    CHECK_THROWS_AS(io::phases_from_json(json{{"modes_per_axis", 1}, {"phases", {{7.0}}}}), ConfigError);
    CHECK_THROWS_AS(io::phases_from_json(json{{"modes_per_axis", 1}, {"phases", {{"x"}}}}), ConfigError);

    io::write_atomically(tmp.path / "bad.json", "{\"modes_per_axis\": 2, \"phases\": [[0.1,");
    CHECK_THROWS_AS(io::read_phase_file(tmp.path / "bad.json"), ConfigError);
    CHECK_THROWS_AS(io::read_phase_file(tmp.path / "missing.json"), ConfigError);
}

TEST_CASE("density field text round-trips exactly", "[io]") {
    auto f = sample_field();
    f.valid[3] = 0;
    f.rho[3] = 0.0;
    f.recount();
    const auto text = io::field_to_text(f, {{"run", "test"}});
    const auto g = io::field_from_text(text);
    CHECK(g.time == f.time);
    CHECK(g.partition == f.partition);
    CHECK(g.rho == f.rho);
    CHECK(g.rho_qt == f.rho_qt);
    CHECK(g.valid == f.valid);
    CHECK(g.accuracy_fraction == f.accuracy_fraction);
    CHECK(io::field_to_text(g, {{"run", "test"}}) == text);
    CHECK(text.find("nan") != std::string::npos);

    CHECK_THROWS_AS(io::field_from_text("not json\n"), ConfigError);
    CHECK_THROWS_AS(io::field_from_text(text.substr(0, text.size() / 2)), ConfigError);
}

TEST_CASE("directory store persists fields", "[io]") {
    TempDir tmp;
    const auto store = io::directory_store(tmp.path);
    CHECK_FALSE(store.load(0, 30).has_value());
    const auto f = sample_field();
    store.save(2, 30, f);
    CHECK(fs::exists(tmp.path / "field_t0002_g30.txt"));
    const auto back = store.load(2, 30);
    REQUIRE(back.has_value());
    CHECK(back->rho == f.rho);

    // A truncated file is treated as missing.
    io::write_atomically(tmp.path / "field_t0003_g30.txt", "{\"format\":");
    CHECK_FALSE(store.load(3, 30).has_value());
}

TEST_CASE("PGM output", "[io]") {
    TempDir tmp;
    const std::vector<double> v{0.0, 1.0, 2.0, 4.0};  // (a, b) -> v[a * 2 + b]
    const double scale = io::write_pgm(tmp.path / "x.pgm", v, 2);
    CHECK(scale == 4.0);
    const auto bytes = io::read_file(tmp.path / "x.pgm");
    const std::string header = "P5\n# scale_max 4\n2 2\n255\n";
    REQUIRE(bytes.substr(0, header.size()) == header);
    const auto px = bytes.substr(header.size());
    REQUIRE(px.size() == 4);
    // Top row is b = 1: v(0,1) = 1, v(1,1) = 4.
    CHECK(static_cast<unsigned char>(px[0]) == 64);
    CHECK(static_cast<unsigned char>(px[1]) == 255);
    CHECK(static_cast<unsigned char>(px[2]) == 0);
    CHECK(static_cast<unsigned char>(px[3]) == 128);
    CHECK_THROWS_AS(io::write_pgm(tmp.path / "y.pgm", v, 3), DomainError);
}

TEST_CASE("H-bar CSV round-trips", "[io]") {
    HBarSeries s;
    s.grids = {29, 30, 31};
    s.add(0.0, {0.49, 0.4894, 0.488}, 1.0);
    s.add(kTwoPi, {0.1 / 3, 0.2, 1e-17}, 0.99);
    const auto text = io::hbar_csv(s, "metadata: run.json");
    CHECK(text.rfind("# metadata: run.json\n", 0) == 0);
    CHECK(text.find("time,periods,hbar_grid29,hbar_grid30,hbar_grid31,hbar_mean,hbar_min,hbar_max,accuracy_min") !=
          std::string::npos);
    const auto back = io::parse_hbar_csv(text);
    CHECK(back.grids == s.grids);
    REQUIRE(back.entries.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(back.entries[i].time == s.entries[i].time);
        CHECK(back.entries[i].values == s.entries[i].values);
        CHECK(back.entries[i].accuracy_min == s.entries[i].accuracy_min);
    }
    CHECK_THROWS_AS(io::parse_hbar_csv("a,b\n1,2\n"), ConfigError);
    CHECK_THROWS_AS(io::parse_hbar_csv(""), ConfigError);
}

TEST_CASE("trace and scatter tables", "[io]") {
    const auto tr = trace(SuperpositionSpec::ground_state(), {1.5, -1.5}, 0.2, 0.1, IntegratorConfig{});
    const auto csv = io::traces_csv({tr});
    CHECK(csv == "id,time,q1,q2,status\n0,0,1.5,-1.5,ok\n0,0.1,1.5,-1.5,ok\n0,0.2,1.5,-1.5,succeeded\n");

    const auto fate = square_fate(SuperpositionSpec::ground_state(), {0, 0}, 0.2, 0.0, IntegratorConfig{}, 2);
    const auto sc = io::scatters_csv({fate}, 0.0);
    CHECK(sc.rfind("id,time,q1,q2,status\n0:0,0,", 0) == 0);
    // One initial and one final row per point.
    CHECK(std::count(sc.begin(), sc.end(), '\n') == 9);
    CHECK(sc.find(",initial\n") != std::string::npos);
}
