#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cartoflow/errors.hpp"
#include "cartoflow/geometry.hpp"
#include "cartoflow/matrix.hpp"

namespace cartoflow {

enum class Kind { rental, return_ };

const char* kind_name(Kind k);
Kind parse_kind(const std::string& s);

// Hourly demand of one station, one kind. Timestamps are 1-based: demand[t-1]
// is the count for hour t, t = 1..T.
struct StationRecord {
    std::string station_id;
    Point2 position;
    Kind kind = Kind::rental;
    std::vector<std::int64_t> demand;
};

// Row-major grid over the plane: cell index = row * cols + col, rows counted
// from the origin upward. cell_w/cell_h may differ when the grid is fitted to
// a relaxation bounding box.
struct GridSpec {
    int rows = 1; // M
    int cols = 1; // N
    double cell_w = 1.0;
    double cell_h = 1.0;
    Point2 origin;

    static GridSpec uniform(int rows, int cols, double cell_size, Point2 origin);
    static GridSpec fit_bbox(int rows, int cols, const BBox& box);

    int cells() const { return rows * cols; }
    double width() const { return cell_w * cols; }
    double height() const { return cell_h * rows; }
    // Half-open cells [left,right) x [bottom,top); points on the extreme
    // right/top boundary belong to the last cell. Throws OutOfBounds.
    int cell_index(Point2 p) const;
};

struct GridSeries {
    GridSpec grid;
    std::int64_t hours = 0; // T
    std::vector<std::int64_t> counts; // cells() x T, row-major per cell
    std::vector<std::vector<std::string>> membership; // station ids per cell

    std::int64_t at(int cell, std::int64_t t) const; // t is 1-based
    int empty_cells() const;
};

enum class Res { hour, day, week };
std::int64_t res_stride(Res r); // 1, 24, 168

struct ResolutionConfig {
    int tau_hour = 3;
    int tau_day = 3;
    int tau_week = 2;

    int tau(Res r) const;
    void validate() const;
    // Pivot t admits a full lag window for every resolution plus the
    // one-hour-ahead target: tau_week*168 <= t <= T-1.
    std::int64_t min_pivot() const;
};

// One training unit: B pivot times, the three lag tensors and the
// next-hour target. Lag matrices are (B*MN) x tau_r with row u = i + b*MN;
// target is B x MN.
struct InputTriplet {
    std::vector<std::int64_t> pivots;
    int cells = 0;
    Matrix x_hour, x_day, x_week;
    Matrix target;
};

// CSV schema: station_id,kind,timestamp_hour,count,x_km,y_km (header
// required). Every (station, kind) series must cover hours 1..T exactly.
std::vector<StationRecord> ingest_csv(const std::string& path);
void write_stations_csv(const std::string& path, const std::vector<StationRecord>& records);

// Unique station positions in station_id-sorted order (both kinds share
// one position; mismatches are schema errors at ingestion).
struct StationSites {
    std::vector<std::string> ids;
    std::vector<Point2> positions;
};
StationSites station_sites(const std::vector<StationRecord>& records);

// Sums member-station demand per cell. `positions` overrides station
// coordinates (cartogram layout); ids absent from it are errors.
GridSeries bin_to_grid(const std::vector<StationRecord>& records, Kind kind, const GridSpec& grid,
                       const std::map<std::string, Point2>* positions = nullptr);

// Lag window at resolution r: entry k (k=1..tau) is X_cell(t+1-k*stride).
std::vector<double> build_sequence(const GridSeries& gs, int cell, std::int64_t t, Res r, int tau);

std::pair<std::int64_t, std::int64_t> admissible_pivot_range(const GridSeries& gs,
                                                             const ResolutionConfig& rc);

// Deterministic assembly for explicit pivot times.
InputTriplet make_triplet(const GridSeries& gs, const ResolutionConfig& rc,
                          const std::vector<std::int64_t>& pivots);

// B distinct pivots drawn uniformly without replacement from the
// admissible range (optionally clamped to [lo,hi]).
InputTriplet sample_batch(const GridSeries& gs, const ResolutionConfig& rc, int batch,
                          std::uint64_t seed,
                          std::optional<std::pair<std::int64_t, std::int64_t>> range = std::nullopt);

void save_grid_series_csv(const std::string& path, const GridSeries& gs);
void save_membership_csv(const std::string& path, const GridSeries& gs);
void save_grid_json(const std::string& path, const GridSeries& gs, const std::string& coords_tag,
                    const std::string& kind_tag = "rental");
GridSeries load_grid_dir(const std::string& dir); // reads the three files above

} // namespace cartoflow
