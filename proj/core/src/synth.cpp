#include "cartoflow/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "cartoflow/rng.hpp"

namespace cartoflow {

SpatialLayout parse_layout(const std::string& s) {
    if (s == "clustered") return SpatialLayout::clustered;
    if (s == "uniform") return SpatialLayout::uniform;
    throw InvalidConfig("unknown layout '" + s + "' (expected clustered|uniform)");
}

const char* layout_name(SpatialLayout l) {
    return l == SpatialLayout::clustered ? "clustered" : "uniform";
}

void ScenarioConfig::validate() const {
    if (n_stations < 1) throw InvalidConfig("n_stations must be >= 1");
    if (n_clusters < 1) throw InvalidConfig("n_clusters must be >= 1");
    if (hours < 2) throw InvalidConfig("hours must be >= 2");
    if (extent_w <= 0.0 || extent_h <= 0.0) throw InvalidConfig("extent must be positive");
    if (base_rate < 0.0) throw InvalidConfig("base_rate must be >= 0");
    if (daily_amp < 0.0 || weekly_amp < 0.0) throw InvalidConfig("amplitudes must be >= 0");
    if (noise < 0.0) throw InvalidConfig("noise must be >= 0");
    if (new_station) {
        if (new_station->activation_hour < 1 || new_station->activation_hour > hours)
            throw InvalidConfig("activation hour outside [1, T]");
        if (new_station->base_rate < 0.0) throw InvalidConfig("new station base_rate must be >= 0");
    }
}

namespace {

double rate_at(double base, double daily_amp, double weekly_amp, std::int64_t t) {
    constexpr double two_pi = 6.283185307179586476925286766559;
    const double v = base * (1.0 + daily_amp * std::sin(two_pi * static_cast<double>(t) / 24.0) +
                             weekly_amp * std::sin(two_pi * static_cast<double>(t) / 168.0));
    return std::max(v, 0.0);
}

std::string station_name(int idx) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "s%04d", idx);
    return buf;
}

} // namespace

Scenario generate(const ScenarioConfig& cfg) {
    cfg.validate();

    struct Site {
        std::string id;
        Point2 pos;
        double base;
        std::int64_t first_hour; // 1 except for the late-activated station
    };
    std::vector<Site> sites;
    sites.reserve(cfg.n_stations + 1);

    Rng layout_rng(Rng::mix(cfg.seed, 0xA11CE));
    if (cfg.layout == SpatialLayout::uniform) {
        for (int j = 0; j < cfg.n_stations; ++j) {
            Site s;
            s.id = station_name(j);
            s.pos = {layout_rng.uniform(0.0, cfg.extent_w), layout_rng.uniform(0.0, cfg.extent_h)};
            s.base = cfg.base_rate * layout_rng.uniform(0.8, 1.2);
            s.first_hour = 1;
            sites.push_back(std::move(s));
        }
    } else {
        // cluster centers keep a margin so the spread stays mostly inside
        std::vector<Point2> centers(cfg.n_clusters);
        std::vector<double> cluster_base(cfg.n_clusters);
        for (int c = 0; c < cfg.n_clusters; ++c) {
            centers[c] = {layout_rng.uniform(0.18 * cfg.extent_w, 0.82 * cfg.extent_w),
                          layout_rng.uniform(0.18 * cfg.extent_h, 0.82 * cfg.extent_h)};
            cluster_base[c] = cfg.base_rate * layout_rng.uniform(0.5, 1.5);
        }
        for (int j = 0; j < cfg.n_stations; ++j) {
            const int c = static_cast<int>(layout_rng.uniform_below(cfg.n_clusters));
            Site s;
            s.id = station_name(j);
            s.pos = {std::clamp(centers[c].x + layout_rng.normal(0.0, cfg.cluster_std), 0.0, cfg.extent_w),
                     std::clamp(centers[c].y + layout_rng.normal(0.0, cfg.cluster_std), 0.0, cfg.extent_h)};
            s.base = cluster_base[c] * layout_rng.uniform(0.8, 1.2);
            s.first_hour = 1;
            sites.push_back(std::move(s));
        }
    }
    if (cfg.new_station) {
        Site s;
        s.id = "new0";
        s.pos = cfg.new_station->position;
        s.base = cfg.new_station->base_rate;
        s.first_hour = cfg.new_station->activation_hour;
        sites.push_back(std::move(s));
    }

    Scenario scn;
    scn.records.reserve(sites.size() * 2);
    scn.rates.reserve(sites.size());

    for (std::size_t j = 0; j < sites.size(); ++j) {
        const Site& s = sites[j];
        RateSeries rate;
        rate.station_id = s.id;
        rate.lambda.resize(cfg.hours);
        for (std::int64_t t = 1; t <= cfg.hours; ++t)
            rate.lambda[t - 1] =
                t >= s.first_hour ? rate_at(s.base, cfg.daily_amp, cfg.weekly_amp, t) : 0.0;

        for (Kind kind : {Kind::rental, Kind::return_}) {
            StationRecord rec;
            rec.station_id = s.id;
            rec.position = s.pos;
            rec.kind = kind;
            rec.demand.resize(cfg.hours);
            Rng rng(Rng::mix(cfg.seed, Rng::mix(j + 1, static_cast<std::uint64_t>(kind))));
            for (std::int64_t t = 1; t <= cfg.hours; ++t) {
                const double lam = rate.lambda[t - 1];
                rec.demand[t - 1] = cfg.noise > 0.0 ? rng.poisson(lam)
                                                    : static_cast<std::int64_t>(std::llround(lam));
            }
            scn.records.push_back(std::move(rec));
        }
        scn.rates.push_back(std::move(rate));
    }
    return scn;
}

void save_rates_csv(const std::string& path, const std::vector<RateSeries>& rates) {
    std::ofstream f(path);
    if (!f) throw InvalidConfig("cannot write " + path);
    f << "station_id,t,lambda\n";
    char buf[96];
    for (const RateSeries& r : rates) {
        for (std::size_t t = 0; t < r.lambda.size(); ++t) {
            std::snprintf(buf, sizeof(buf), "%s,%zu,%.17g\n", r.station_id.c_str(), t + 1,
                          r.lambda[t]);
            f << buf;
        }
    }
}

} // namespace cartoflow
