#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <numeric>
#include <set>

#include "cartoflow/dataset.hpp"
#include "cartoflow/synth.hpp"
#include "test_util.hpp"

using namespace cartoflow;

namespace {
std::string fixture(const char* name) {
    return std::string(CARTOFLOW_FIXTURE_DIR) + "/" + name;
}
} // namespace

TEST_CASE("ingest: two-station fixture") {
    const auto records = ingest_csv(fixture("two_stations_48h.csv"));
    REQUIRE(records.size() == 2);
    for (const auto& r : records) {
        CHECK(r.demand.size() == 48);
        CHECK(r.kind == Kind::rental);
    }
    CHECK(records[0].station_id == "stA");
    CHECK(records[0].demand[0] == 1 % 5);
    CHECK(records[1].demand[5] == (6 * 3) % 7);
}

TEST_CASE("ingest: malformed inputs") {
    CHECK_THROWS_AS(ingest_csv(fixture("gap_hour.csv")), NonUniformT);
    CHECK_THROWS_AS(ingest_csv(fixture("negative_count.csv")), NegativeCount);
    CHECK_THROWS_AS(ingest_csv(fixture("bad_header.csv")), SchemaError);
}

TEST_CASE("ingest: ten-station excerpt tallies") {
    const auto records = ingest_csv(fixture("ten_station_excerpt.csv"));
    REQUIRE(records.size() == 20); // 10 stations x 2 kinds

    // hand-tallied hourly totals per kind
    const std::int64_t rental_totals[6] = {48, 45, 53, 50, 47, 55};
    const std::int64_t return_totals[6] = {38, 40, 42, 44, 37, 39};
    std::int64_t got_rental[6] = {0}, got_return[6] = {0};
    for (const auto& r : records)
        for (int t = 0; t < 6; ++t)
            (r.kind == Kind::rental ? got_rental : got_return)[t] += r.demand[t];
    for (int t = 0; t < 6; ++t) {
        CHECK(got_rental[t] == rental_totals[t]);
        CHECK(got_return[t] == return_totals[t]);
    }
    for (const auto& r : records) {
        if (r.station_id == "st03" && r.kind == Kind::rental) {
            const std::int64_t want[6] = {2, 5, 8, 0, 3, 6};
            for (int t = 0; t < 6; ++t) CHECK(r.demand[t] == want[t]);
        }
        if (r.station_id == "st07" && r.kind == Kind::return_) {
            const std::int64_t want[6] = {1, 3, 5, 7, 0, 2};
            for (int t = 0; t < 6; ++t) CHECK(r.demand[t] == want[t]);
        }
    }
}

TEST_CASE("grid: boundary assignment is half-open with closed far edge") {
    const GridSpec g = GridSpec::uniform(2, 3, 1.0, {0.0, 0.0});
    CHECK(g.cell_index({0.0, 0.0}) == 0);
    CHECK(g.cell_index({0.999, 0.0}) == 0);
    CHECK(g.cell_index({1.0, 0.0}) == 1);   // left edge belongs to the cell
    CHECK(g.cell_index({3.0, 0.5}) == 2);   // extreme right edge -> last column
    CHECK(g.cell_index({1.5, 2.0}) == 4);   // extreme top edge -> last row
    CHECK(g.cell_index({2.5, 1.5}) == 5);
    CHECK_THROWS_AS(g.cell_index({3.2, 0.5}), OutOfBounds);
    CHECK_THROWS_AS(g.cell_index({-0.1, 0.5}), OutOfBounds);
}

TEST_CASE("bin_to_grid: one station per cell reproduces the series") {
    std::vector<StationRecord> recs;
    for (int c = 0; c < 4; ++c) {
        StationRecord r;
        r.station_id = "s" + std::to_string(c);
        r.kind = Kind::rental;
        r.position = {0.5 + c, 0.5};
        r.demand = {c + 1, 2 * c, 7};
        recs.push_back(r);
    }
    const GridSpec g = GridSpec::uniform(1, 4, 1.0, {0.0, 0.0});
    const GridSeries gs = bin_to_grid(recs, Kind::rental, g);
    CHECK(gs.hours == 3);
    for (int c = 0; c < 4; ++c) {
        CHECK(gs.at(c, 1) == c + 1);
        CHECK(gs.at(c, 2) == 2 * c);
        CHECK(gs.at(c, 3) == 7);
        CHECK(gs.membership[c].size() == 1);
    }
}

TEST_CASE("bin_to_grid: co-located stations add exactly") {
    std::vector<StationRecord> recs(2);
    recs[0] = {"a", {0.2, 0.2}, Kind::rental, {1, 2, 3, 4}};
    recs[1] = {"b", {0.7, 0.4}, Kind::rental, {2, 4, 6, 8}};
    const GridSpec g = GridSpec::uniform(1, 1, 1.0, {0.0, 0.0});
    const GridSeries gs = bin_to_grid(recs, Kind::rental, g);
    for (std::int64_t t = 1; t <= 4; ++t) CHECK(gs.at(0, t) == 3 * t);
}

TEST_CASE("bin_to_grid: conservation and split-cell additivity") {
    ScenarioConfig cfg;
    cfg.n_stations = 40;
    cfg.hours = 200;
    cfg.seed = 9;
    const Scenario scn = generate(cfg);

    const GridSpec coarse = GridSpec::uniform(1, 1, 20.0, {0.0, 0.0});
    const GridSpec fine = GridSpec::uniform(2, 2, 10.0, {0.0, 0.0});
    const GridSeries a = bin_to_grid(scn.records, Kind::rental, coarse);
    const GridSeries b = bin_to_grid(scn.records, Kind::rental, fine);

    for (std::int64_t t = 1; t <= cfg.hours; t += 17) {
        std::int64_t raw = 0;
        for (const auto& r : scn.records)
            if (r.kind == Kind::rental) raw += r.demand[t - 1];
        std::int64_t fine_sum = 0;
        for (int c = 0; c < 4; ++c) fine_sum += b.at(c, t);
        CHECK(a.at(0, t) == raw);      // conservation
        CHECK(fine_sum == a.at(0, t)); // splitting cells re-sums exactly
    }
}

TEST_CASE("bin_to_grid: cartogram coordinates eliminate empty cells") {
    ScenarioConfig cfg;
    cfg.n_stations = 90;
    cfg.hours = 4;
    cfg.n_clusters = 3;
    cfg.cluster_std = 0.9;
    cfg.seed = 14;
    const Scenario scn = generate(cfg);
    const StationSites sites = station_sites(scn.records);

    const BBox box = BBox::of_points(sites.positions, 0.05);
    const GridSpec grid = GridSpec::fit_bbox(5, 5, box);
    const GridSeries before = bin_to_grid(scn.records, Kind::rental, grid);
    CHECK(before.empty_cells() >= 1);

    const CartogramLayout layout = build_cartogram(sites.positions, box, 1e-3 * box.diagonal(), 60);
    std::map<std::string, Point2> moved;
    for (std::size_t i = 0; i < sites.ids.size(); ++i) moved[sites.ids[i]] = layout.points[i];
    const GridSeries after = bin_to_grid(scn.records, Kind::rental, grid, &moved);
    CHECK(after.empty_cells() == 0);

    // totals conserved under relocation
    std::int64_t sa = 0, sb = 0;
    for (int c = 0; c < grid.cells(); ++c) {
        sa += before.at(c, 2);
        sb += after.at(c, 2);
    }
    CHECK(sa == sb);
}

TEST_CASE("build_sequence: lag windows per resolution") {
    GridSeries gs;
    gs.grid = GridSpec::uniform(1, 1, 1.0, {0.0, 0.0});
    gs.hours = 400;
    gs.counts.resize(400);
    std::iota(gs.counts.begin(), gs.counts.end(), 1); // X(t) = t
    gs.membership.assign(1, {"s"});

    const auto hourly = build_sequence(gs, 0, 10, Res::hour, 3);
    CHECK(hourly == std::vector<double>{10, 9, 8});

    const auto daily = build_sequence(gs, 0, 100, Res::day, 3);
    CHECK(daily == std::vector<double>{77, 53, 29});

    CHECK_THROWS_AS(build_sequence(gs, 0, 300, Res::week, 2), WindowOutOfRange);
    const auto weekly = build_sequence(gs, 0, 336, Res::week, 2);
    CHECK(weekly == std::vector<double>{169, 1});

    // the first hourly lag is the pivot value itself
    for (std::int64_t t : {5, 77, 399})
        CHECK(build_sequence(gs, 0, t, Res::hour, 1)[0] == static_cast<double>(t));
}

TEST_CASE("sample_batch: admissibility, determinism, degenerate batch") {
    GridSeries gs;
    gs.grid = GridSpec::uniform(2, 2, 1.0, {0.0, 0.0});
    gs.hours = 500;
    gs.counts.assign(4 * 500, 1);
    gs.membership.assign(4, {"s"});
    const ResolutionConfig rc; // taus 3,3,2 -> admissible [336, 499]

    const auto [lo, hi] = admissible_pivot_range(gs, rc);
    CHECK(lo == 336);
    CHECK(hi == 499);

    const InputTriplet one = sample_batch(gs, rc, 1, 77);
    CHECK(one.pivots.size() == 1);
    CHECK(one.x_hour.rows == 4);

    const InputTriplet b16 = sample_batch(gs, rc, 16, 123);
    CHECK(b16.pivots.size() == 16);
    const std::set<std::int64_t> uniq(b16.pivots.begin(), b16.pivots.end());
    CHECK(uniq.size() == 16);
    for (std::int64_t t : b16.pivots) {
        CHECK(t >= lo);
        CHECK(t <= hi);
    }

    const InputTriplet again = sample_batch(gs, rc, 16, 123);
    CHECK(again.pivots == b16.pivots);
    CHECK(again.x_week.a == b16.x_week.a);

    CHECK_THROWS_AS(sample_batch(gs, rc, 400, 1), InsufficientHistory);
    GridSeries tiny = gs;
    tiny.hours = 300; // below the weekly window
    tiny.counts.assign(4 * 300, 0);
    CHECK_THROWS_AS(sample_batch(tiny, rc, 1, 1), InsufficientHistory);
}

TEST_CASE("grid series round-trips through the export directory") {
    ScenarioConfig cfg;
    cfg.n_stations = 12;
    cfg.hours = 48;
    cfg.seed = 4;
    const Scenario scn = generate(cfg);
    const GridSpec grid = GridSpec::uniform(3, 3, 7.0, {0.0, 0.0});
    const GridSeries gs = bin_to_grid(scn.records, Kind::return_, grid);

    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "cartoflow_grid_rt";
    fs::create_directories(dir);
    save_grid_series_csv((dir / "grid_series.csv").string(), gs);
    save_membership_csv((dir / "membership.csv").string(), gs);
    save_grid_json((dir / "grid.json").string(), gs, "original");

    const GridSeries back = load_grid_dir(dir.string());
    CHECK(back.hours == gs.hours);
    CHECK(back.grid.rows == 3);
    CHECK(back.counts == gs.counts);
    CHECK(back.membership == gs.membership);
}
