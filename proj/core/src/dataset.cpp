#include "cartoflow/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "cartoflow/rng.hpp"

namespace cartoflow {

const char* kind_name(Kind k) { return k == Kind::rental ? "rental" : "return"; }

Kind parse_kind(const std::string& s) {
    if (s == "rental") return Kind::rental;
    if (s == "return") return Kind::return_;
    throw SchemaError("unknown kind '" + s + "' (expected rental|return)");
}

GridSpec GridSpec::uniform(int rows, int cols, double cell_size, Point2 origin) {
    if (rows < 1 || cols < 1 || cell_size <= 0.0)
        throw InvalidConfig("grid needs rows>=1, cols>=1, cell_size>0");
    return {rows, cols, cell_size, cell_size, origin};
}

GridSpec GridSpec::fit_bbox(int rows, int cols, const BBox& box) {
    if (rows < 1 || cols < 1) throw InvalidConfig("grid needs rows>=1, cols>=1");
    if (box.width() <= 0.0 || box.height() <= 0.0) throw InvalidConfig("empty bounding box");
    return {rows, cols, box.width() / cols, box.height() / rows, {box.xmin, box.ymin}};
}

int GridSpec::cell_index(Point2 p) const {
    const double fx = (p.x - origin.x) / cell_w;
    const double fy = (p.y - origin.y) / cell_h;
    int col = static_cast<int>(std::floor(fx));
    int row = static_cast<int>(std::floor(fy));
    // right/top boundary points belong to the last cell
    if (col == cols && p.x <= origin.x + cell_w * cols + 1e-9 * cell_w) col = cols - 1;
    if (row == rows && p.y <= origin.y + cell_h * rows + 1e-9 * cell_h) row = rows - 1;
    if (col < 0 || col >= cols || row < 0 || row >= rows) {
        char buf[128];
        std::snprintf(buf, sizeof(buf), "position (%g, %g) outside the grid", p.x, p.y);
        throw OutOfBounds(buf);
    }
    return row * cols + col;
}

std::int64_t GridSeries::at(int cell, std::int64_t t) const {
    if (cell < 0 || cell >= grid.cells()) throw OutOfBounds("cell index out of range");
    if (t < 1 || t > hours) throw WindowOutOfRange("time index out of range");
    return counts[static_cast<std::size_t>(cell) * hours + (t - 1)];
}

int GridSeries::empty_cells() const {
    int n = 0;
    for (const auto& m : membership)
        if (m.empty()) ++n;
    return n;
}

std::int64_t res_stride(Res r) {
    switch (r) {
        case Res::hour: return 1;
        case Res::day: return 24;
        case Res::week: return 168;
    }
    return 1;
}

int ResolutionConfig::tau(Res r) const {
    switch (r) {
        case Res::hour: return tau_hour;
        case Res::day: return tau_day;
        case Res::week: return tau_week;
    }
    return 1;
}

void ResolutionConfig::validate() const {
    if (tau_hour < 1 || tau_day < 1 || tau_week < 1)
        throw InvalidConfig("truncation depths must be >= 1");
}

std::int64_t ResolutionConfig::min_pivot() const { return static_cast<std::int64_t>(tau_week) * 168; }

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

std::int64_t parse_int(const std::string& s, const char* what) {
    try {
        std::size_t pos = 0;
        const long long v = std::stoll(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw SchemaError(std::string("cannot parse ") + what + " from '" + s + "'");
    }
}

double parse_double(const std::string& s, const char* what) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw SchemaError(std::string("cannot parse ") + what + " from '" + s + "'");
    }
}

} // namespace

std::vector<StationRecord> ingest_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw SchemaError("cannot open " + path);
    std::string line;
    if (!std::getline(f, line)) throw SchemaError("empty file " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "station_id,kind,timestamp_hour,count,x_km,y_km")
        throw SchemaError("bad header in " + path);

    struct Series {
        Point2 pos;
        std::map<std::int64_t, std::int64_t> by_hour;
    };
    std::map<std::pair<std::string, int>, Series> series;
    std::map<std::string, Point2> pos_by_station;
    std::int64_t max_t = 0;
    std::size_t lineno = 1;

    while (std::getline(f, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::vector<std::string> fields = split_csv_line(line);
        if (fields.size() != 6)
            throw SchemaError("line " + std::to_string(lineno) + ": expected 6 fields");
        const std::string& sid = fields[0];
        const Kind kind = parse_kind(fields[1]);
        const std::int64_t t = parse_int(fields[2], "timestamp_hour");
        const std::int64_t count = parse_int(fields[3], "count");
        const double x = parse_double(fields[4], "x_km");
        const double y = parse_double(fields[5], "y_km");
        if (t < 1) throw SchemaError("line " + std::to_string(lineno) + ": timestamp_hour must be >= 1");
        if (count < 0)
            throw NegativeCount("line " + std::to_string(lineno) + ": negative count for " + sid);

        auto [it, inserted] = pos_by_station.try_emplace(sid, Point2{x, y});
        if (!inserted && (it->second.x != x || it->second.y != y))
            throw SchemaError("station " + sid + " has inconsistent coordinates");

        Series& s = series[{sid, static_cast<int>(kind)}];
        s.pos = {x, y};
        if (!s.by_hour.emplace(t, count).second)
            throw SchemaError("duplicate hour " + std::to_string(t) + " for station " + sid);
        max_t = std::max(max_t, t);
    }
    if (series.empty()) throw SchemaError("no data rows in " + path);

    std::vector<StationRecord> out;
    out.reserve(series.size());
    for (auto& [key, s] : series) {
        if (static_cast<std::int64_t>(s.by_hour.size()) != max_t)
            throw NonUniformT("station " + key.first + " (" + kind_name(static_cast<Kind>(key.second)) +
                              ") covers " + std::to_string(s.by_hour.size()) + " hours, expected " +
                              std::to_string(max_t));
        StationRecord rec;
        rec.station_id = key.first;
        rec.kind = static_cast<Kind>(key.second);
        rec.position = s.pos;
        rec.demand.resize(max_t);
        for (std::int64_t t = 1; t <= max_t; ++t) {
            auto it = s.by_hour.find(t);
            if (it == s.by_hour.end())
                throw NonUniformT("station " + key.first + " missing hour " + std::to_string(t));
            rec.demand[t - 1] = it->second;
        }
        out.push_back(std::move(rec));
    }
    return out;
}

void write_stations_csv(const std::string& path, const std::vector<StationRecord>& records) {
    std::ofstream f(path);
    if (!f) throw InvalidConfig("cannot write " + path);
    f << "station_id,kind,timestamp_hour,count,x_km,y_km\n";
    char buf[160];
    for (const StationRecord& r : records) {
        for (std::size_t i = 0; i < r.demand.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%s,%s,%lld,%lld,%.17g,%.17g\n", r.station_id.c_str(),
                          kind_name(r.kind), static_cast<long long>(i + 1),
                          static_cast<long long>(r.demand[i]), r.position.x, r.position.y);
            f << buf;
        }
    }
}

StationSites station_sites(const std::vector<StationRecord>& records) {
    std::map<std::string, Point2> by_id;
    for (const StationRecord& r : records) by_id.emplace(r.station_id, r.position);
    StationSites sites;
    for (const auto& [id, pos] : by_id) {
        sites.ids.push_back(id);
        sites.positions.push_back(pos);
    }
    return sites;
}

GridSeries bin_to_grid(const std::vector<StationRecord>& records, Kind kind, const GridSpec& grid,
                       const std::map<std::string, Point2>* positions) {
    GridSeries gs;
    gs.grid = grid;
    gs.membership.assign(grid.cells(), {});

    std::int64_t hours = -1;
    for (const StationRecord& r : records) {
        if (r.kind != kind) continue;
        if (hours < 0) hours = static_cast<std::int64_t>(r.demand.size());
        if (hours != static_cast<std::int64_t>(r.demand.size()))
            throw NonUniformT("records disagree on T");
    }
    if (hours < 0) throw EmptyInput("no records of kind " + std::string(kind_name(kind)));
    gs.hours = hours;
    gs.counts.assign(static_cast<std::size_t>(grid.cells()) * hours, 0);

    for (const StationRecord& r : records) {
        if (r.kind != kind) continue;
        Point2 pos = r.position;
        if (positions) {
            auto it = positions->find(r.station_id);
            if (it == positions->end())
                throw OutOfBounds("station " + r.station_id + " missing from the layout");
            pos = it->second;
        }
        const int cell = grid.cell_index(pos);
        gs.membership[cell].push_back(r.station_id);
        std::int64_t* row = gs.counts.data() + static_cast<std::size_t>(cell) * hours;
        for (std::int64_t t = 0; t < hours; ++t) row[t] += r.demand[t];
    }
    for (auto& m : gs.membership) std::sort(m.begin(), m.end());
    return gs;
}

std::vector<double> build_sequence(const GridSeries& gs, int cell, std::int64_t t, Res r, int tau) {
    if (tau < 1) throw InvalidConfig("tau must be >= 1");
    const std::int64_t stride = res_stride(r);
    // window: t+1-k*stride for k=1..tau, all within [1, T]
    if (t + 1 - static_cast<std::int64_t>(tau) * stride < 1 || t + 1 - stride > gs.hours)
        throw WindowOutOfRange("pivot " + std::to_string(t) + " lacks history at stride " +
                               std::to_string(stride));
    std::vector<double> seq(tau);
    for (int k = 1; k <= tau; ++k)
        seq[k - 1] = static_cast<double>(gs.at(cell, t + 1 - k * stride));
    return seq;
}

std::pair<std::int64_t, std::int64_t> admissible_pivot_range(const GridSeries& gs,
                                                             const ResolutionConfig& rc) {
    return {rc.min_pivot(), gs.hours - 1};
}

InputTriplet make_triplet(const GridSeries& gs, const ResolutionConfig& rc,
                          const std::vector<std::int64_t>& pivots) {
    rc.validate();
    const int mn = gs.grid.cells();
    const int b_count = static_cast<int>(pivots.size());
    if (b_count == 0) throw InvalidConfig("no pivot times");

    InputTriplet trip;
    trip.pivots = pivots;
    trip.cells = mn;
    trip.x_hour = Matrix(static_cast<std::size_t>(b_count) * mn, rc.tau_hour);
    trip.x_day = Matrix(static_cast<std::size_t>(b_count) * mn, rc.tau_day);
    trip.x_week = Matrix(static_cast<std::size_t>(b_count) * mn, rc.tau_week);
    trip.target = Matrix(b_count, mn);

    for (int b = 0; b < b_count; ++b) {
        const std::int64_t t = pivots[b];
        for (int i = 0; i < mn; ++i) {
            const std::size_t u = static_cast<std::size_t>(i) + static_cast<std::size_t>(b) * mn;
            const auto fill = [&](Matrix& m, Res r, int tau) {
                const std::vector<double> seq = build_sequence(gs, i, t, r, tau);
                for (int k = 0; k < tau; ++k) m(u, k) = seq[k];
            };
            fill(trip.x_hour, Res::hour, rc.tau_hour);
            fill(trip.x_day, Res::day, rc.tau_day);
            fill(trip.x_week, Res::week, rc.tau_week);
            trip.target(b, i) = static_cast<double>(gs.at(i, t + 1));
        }
    }
    return trip;
}

InputTriplet sample_batch(const GridSeries& gs, const ResolutionConfig& rc, int batch,
                          std::uint64_t seed,
                          std::optional<std::pair<std::int64_t, std::int64_t>> range) {
    if (batch < 1) throw InvalidConfig("batch must be >= 1");
    auto [lo, hi] = admissible_pivot_range(gs, rc);
    if (range) {
        lo = std::max(lo, range->first);
        hi = std::min(hi, range->second);
    }
    const std::int64_t count = hi - lo + 1;
    if (count < batch)
        throw InsufficientHistory("only " + std::to_string(std::max<std::int64_t>(count, 0)) +
                                  " admissible pivot times, need " + std::to_string(batch));

    // Partial Fisher-Yates over the admissible range.
    std::vector<std::int64_t> pool(count);
    std::iota(pool.begin(), pool.end(), lo);
    Rng rng(seed);
    std::vector<std::int64_t> pivots(batch);
    for (int k = 0; k < batch; ++k) {
        const std::size_t j = k + static_cast<std::size_t>(rng.uniform_below(count - k));
        std::swap(pool[k], pool[j]);
        pivots[k] = pool[k];
    }
    return make_triplet(gs, rc, pivots);
}

void save_grid_series_csv(const std::string& path, const GridSeries& gs) {
    std::ofstream f(path);
    if (!f) throw InvalidConfig("cannot write " + path);
    f << "cell_index,t,X\n";
    for (int c = 0; c < gs.grid.cells(); ++c)
        for (std::int64_t t = 1; t <= gs.hours; ++t)
            f << c << ',' << t << ',' << gs.at(c, t) << '\n';
}

void save_membership_csv(const std::string& path, const GridSeries& gs) {
    std::ofstream f(path);
    if (!f) throw InvalidConfig("cannot write " + path);
    f << "cell_index,station_id\n";
    for (int c = 0; c < gs.grid.cells(); ++c)
        for (const std::string& sid : gs.membership[c]) f << c << ',' << sid << '\n';
}

void save_grid_json(const std::string& path, const GridSeries& gs, const std::string& coords_tag,
                    const std::string& kind_tag) {
    nlohmann::json j;
    j["rows"] = gs.grid.rows;
    j["cols"] = gs.grid.cols;
    j["cell_w"] = gs.grid.cell_w;
    j["cell_h"] = gs.grid.cell_h;
    j["origin"] = {gs.grid.origin.x, gs.grid.origin.y};
    j["hours"] = gs.hours;
    j["coords"] = coords_tag;
    j["kind"] = kind_tag;
    j["empty_cells"] = gs.empty_cells();
    std::ofstream f(path);
    if (!f) throw InvalidConfig("cannot write " + path);
    f << j.dump(2) << "\n";
}

GridSeries load_grid_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    const fs::path base(dir);

    nlohmann::json j;
    {
        std::ifstream f(base / "grid.json");
        if (!f) throw SchemaError("cannot read " + (base / "grid.json").string());
        f >> j;
    }
    GridSeries gs;
    gs.grid.rows = j.at("rows").get<int>();
    gs.grid.cols = j.at("cols").get<int>();
    gs.grid.cell_w = j.at("cell_w").get<double>();
    gs.grid.cell_h = j.at("cell_h").get<double>();
    gs.grid.origin = {j.at("origin")[0].get<double>(), j.at("origin")[1].get<double>()};
    gs.hours = j.at("hours").get<std::int64_t>();
    gs.counts.assign(static_cast<std::size_t>(gs.grid.cells()) * gs.hours, 0);
    gs.membership.assign(gs.grid.cells(), {});

    {
        std::ifstream f(base / "grid_series.csv");
        if (!f) throw SchemaError("cannot read " + (base / "grid_series.csv").string());
        std::string line;
        std::getline(f, line);
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            const auto fields = split_csv_line(line);
            if (fields.size() != 3) throw SchemaError("bad grid_series row: " + line);
            const std::int64_t c = parse_int(fields[0], "cell_index");
            const std::int64_t t = parse_int(fields[1], "t");
            const std::int64_t v = parse_int(fields[2], "X");
            if (c < 0 || c >= gs.grid.cells() || t < 1 || t > gs.hours)
                throw SchemaError("grid_series index out of range: " + line);
            gs.counts[static_cast<std::size_t>(c) * gs.hours + (t - 1)] = v;
        }
    }
    {
        std::ifstream f(base / "membership.csv");
        if (!f) throw SchemaError("cannot read " + (base / "membership.csv").string());
        std::string line;
        std::getline(f, line);
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            const auto fields = split_csv_line(line);
            if (fields.size() != 2) throw SchemaError("bad membership row: " + line);
            const std::int64_t c = parse_int(fields[0], "cell_index");
            if (c < 0 || c >= gs.grid.cells())
                throw SchemaError("membership cell out of range: " + line);
            gs.membership[c].push_back(fields[1]);
        }
    }
    return gs;
}

} // namespace cartoflow
