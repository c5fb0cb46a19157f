#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cartoflow/dataset.hpp"

namespace cartoflow {

enum class SpatialLayout { clustered, uniform };

SpatialLayout parse_layout(const std::string& s);
const char* layout_name(SpatialLayout l);

struct NewStationSpec {
    Point2 position;
    std::int64_t activation_hour = 1; // zero demand before this hour
    double base_rate = 1.0;
};

// Open-system demand generator: per-station Poisson counts around a
// quasi-periodic rate lambda_j(t) = base_j * (1 + daily_amp*sin(2*pi*t/24)
// + weekly_amp*sin(2*pi*t/168)), clamped at zero. Stations in one spatial
// cluster share base rates within +-20%.
struct ScenarioConfig {
    int n_stations = 100;
    SpatialLayout layout = SpatialLayout::clustered;
    int n_clusters = 4;
    double extent_w = 20.0; // km
    double extent_h = 20.0;
    double cluster_std = 1.2;
    std::int64_t hours = 1344;
    double base_rate = 4.0;
    double daily_amp = 0.5;
    double weekly_amp = 0.2;
    double noise = 1.0; // 0: deterministic round(lambda); otherwise Poisson
    std::optional<NewStationSpec> new_station;
    std::uint64_t seed = 1;

    void validate() const;
};

struct RateSeries {
    std::string station_id;
    std::vector<double> lambda; // length T
};

struct Scenario {
    std::vector<StationRecord> records; // rental and return per station
    std::vector<RateSeries> rates;      // ground truth, one per station
};

Scenario generate(const ScenarioConfig& cfg);

void save_rates_csv(const std::string& path, const std::vector<RateSeries>& rates);

} // namespace cartoflow
