// cartoflow command-line front end: synth | cartogram | prepare | train |
// predict | evaluate. Every subcommand writes its resolved configuration to
// <out>/config.json so a run can be reproduced from its output directory.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cartoflow/dataset.hpp"
#include "cartoflow/evaluation.hpp"
#include "cartoflow/geometry.hpp"
#include "cartoflow/model.hpp"
#include "cartoflow/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cartoflow;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitNumeric = 3;

void write_run_config(const fs::path& out_dir, const std::string& subcommand, json extra) {
    extra["subcommand"] = subcommand;
    const char* threads = std::getenv("CARTOFLOW_THREADS");
    extra["threads"] = threads ? std::atoi(threads) : 1;
    std::ofstream f(out_dir / "config.json");
    if (!f) throw InvalidConfig("cannot write " + (out_dir / "config.json").string());
    f << extra.dump(2) << "\n";
}

fs::path ensure_out_dir(const std::string& out) {
    if (out.empty()) throw InvalidConfig("--out is required");
    fs::path p(out);
    fs::create_directories(p);
    return p;
}

std::pair<int, int> parse_grid(const std::string& s) {
    int rows = 0, cols = 0;
    char x = 0;
    std::istringstream is(s);
    if (!(is >> rows >> x >> cols) || (x != 'x' && x != 'X') || !is.eof() || rows < 1 || cols < 1)
        throw InvalidConfig("--grid expects MxN, got '" + s + "'");
    return {rows, cols};
}

std::vector<std::int64_t> parse_range(const std::string& s, const char* flag) {
    std::vector<std::int64_t> parts;
    std::stringstream ss(s);
    std::string field;
    try {
        while (std::getline(ss, field, ':')) parts.push_back(std::stoll(field));
    } catch (const std::exception&) {
        throw InvalidConfig(std::string(flag) + ": cannot parse '" + s + "'");
    }
    if (parts.size() < 2 || parts.size() > 3)
        throw InvalidConfig(std::string(flag) + " expects lo:hi or lo:hi:step");
    if (parts.size() == 2) parts.push_back(1);
    if (parts[2] < 1 || parts[1] < parts[0])
        throw InvalidConfig(std::string(flag) + ": empty or backwards range");
    return parts;
}

ResolutionConfig parse_tau(const std::string& s) {
    int h = 0, d = 0, w = 0;
    if (std::sscanf(s.c_str(), "%d,%d,%d", &h, &d, &w) != 3)
        throw InvalidConfig("--tau expects three comma-separated depths, got '" + s + "'");
    ResolutionConfig rc{h, d, w};
    rc.validate();
    return rc;
}

// --- synth ---

struct SynthArgs {
    int stations = 100;
    std::int64_t hours = 1344;
    std::string layout = "clustered";
    int clusters = 4;
    std::string extent = "20x20";
    double cluster_std = 1.2;
    double base_rate = 4.0;
    double daily_amp = 0.5;
    double weekly_amp = 0.2;
    double noise = 1.0;
    std::string new_station; // "x,y,hour,rate"
    std::uint64_t seed = 1;
    std::string out;
};

int run_synth(const SynthArgs& a) {
    ScenarioConfig cfg;
    cfg.n_stations = a.stations;
    cfg.hours = a.hours;
    cfg.layout = parse_layout(a.layout);
    cfg.n_clusters = a.clusters;
    {
        double w = 0, h = 0;
        char x = 0;
        std::istringstream is(a.extent);
        if (!(is >> w >> x >> h) || (x != 'x' && x != 'X'))
            throw InvalidConfig("--extent expects WxH km, got '" + a.extent + "'");
        cfg.extent_w = w;
        cfg.extent_h = h;
    }
    cfg.cluster_std = a.cluster_std;
    cfg.base_rate = a.base_rate;
    cfg.daily_amp = a.daily_amp;
    cfg.weekly_amp = a.weekly_amp;
    cfg.noise = a.noise;
    cfg.seed = a.seed;
    if (!a.new_station.empty()) {
        double x = 0, y = 0, rate = 0;
        long long hour = 0;
        if (std::sscanf(a.new_station.c_str(), "%lf,%lf,%lld,%lf", &x, &y, &hour, &rate) != 4)
            throw InvalidConfig("--new-station expects x,y,hour,rate");
        cfg.new_station = NewStationSpec{{x, y}, hour, rate};
    }

    const fs::path out = ensure_out_dir(a.out);
    const Scenario scn = generate(cfg);
    write_stations_csv((out / "stations.csv").string(), scn.records);
    save_rates_csv((out / "rates.csv").string(), scn.rates);
    write_run_config(out, "synth",
                     {{"stations", cfg.n_stations},
                      {"hours", cfg.hours},
                      {"layout", layout_name(cfg.layout)},
                      {"clusters", cfg.n_clusters},
                      {"extent_w", cfg.extent_w},
                      {"extent_h", cfg.extent_h},
                      {"cluster_std", cfg.cluster_std},
                      {"base_rate", cfg.base_rate},
                      {"daily_amp", cfg.daily_amp},
                      {"weekly_amp", cfg.weekly_amp},
                      {"noise", cfg.noise},
                      {"new_station", a.new_station},
                      {"seed", cfg.seed}});
    std::cout << "wrote " << scn.records.size() << " station records over " << cfg.hours
              << " hours to " << out.string() << "\n";
    return kExitOk;
}

// --- cartogram ---

struct CartogramArgs {
    std::string stations;
    std::string out;
    double tol_frac = 1e-3;
    int max_iter = 100;
    double pad_frac = 0.05;
    int bins = 20;
};

int run_cartogram(const CartogramArgs& a) {
    const fs::path out = ensure_out_dir(a.out);
    const auto records = ingest_csv(a.stations);
    const StationSites sites = station_sites(records);
    const BBox box = BBox::of_points(sites.positions, a.pad_frac);
    const double tol = a.tol_frac * box.diagonal();

    const auto initial_cells = voronoi_cells(sites.positions, box);
    const CartogramLayout layout = build_cartogram(sites.positions, box, tol, a.max_iter);

    save_layout_json((out / "layout.json").string(), layout, box, sites.ids);
    save_polygons_csv((out / "polygons.csv").string(), layout.polygons);
    save_histogram_csv((out / "area_hist_initial.csv").string(),
                       relative_area_distribution(initial_cells, a.bins));
    save_histogram_csv((out / "area_hist_final.csv").string(),
                       relative_area_distribution(layout.polygons, a.bins));

    json summary;
    summary["stations"] = sites.ids.size();
    summary["iterations_run"] = layout.iterations_run;
    summary["initial_area_cv"] = layout.area_cv_trace.front();
    summary["final_area_cv"] = layout.area_cv_trace.back();
    summary["bbox"] = {box.xmin, box.ymin, box.xmax, box.ymax};
    {
        std::ofstream f(out / "summary.json");
        f << summary.dump(2) << "\n";
    }
    write_run_config(out, "cartogram",
                     {{"stations_file", a.stations},
                      {"tol_frac", a.tol_frac},
                      {"max_iter", a.max_iter},
                      {"pad_frac", a.pad_frac},
                      {"bins", a.bins}});
    std::cout << "cartogram: " << layout.iterations_run << " iterations, area CV "
              << layout.area_cv_trace.front() << " -> " << layout.area_cv_trace.back() << "\n";
    return kExitOk;
}

// --- prepare ---

struct PrepareArgs {
    std::string stations;
    std::string kind = "rental";
    std::string grid;
    double cell_km = 0.0; // 0: fit the padded extent
    std::string layout;
    double pad_frac = 0.05;
    std::string out;
};

int run_prepare(const PrepareArgs& a) {
    const fs::path out = ensure_out_dir(a.out);
    const auto records = ingest_csv(a.stations);
    const Kind kind = parse_kind(a.kind);
    const auto [rows, cols] = parse_grid(a.grid);

    GridSpec grid;
    std::optional<std::map<std::string, Point2>> positions;
    std::string coords_tag = "original";
    if (!a.layout.empty()) {
        const LoadedLayout ll = load_layout_json(a.layout);
        if (ll.station_ids.size() != ll.points.size() || ll.station_ids.empty())
            throw SchemaError("layout file lacks station ids");
        positions.emplace();
        for (std::size_t i = 0; i < ll.station_ids.size(); ++i)
            (*positions)[ll.station_ids[i]] = ll.points[i];
        grid = GridSpec::fit_bbox(rows, cols, ll.box);
        coords_tag = "cartogram";
    } else {
        const StationSites sites = station_sites(records);
        const BBox box = BBox::of_points(sites.positions, a.pad_frac);
        if (a.cell_km > 0.0)
            grid = GridSpec::uniform(rows, cols, a.cell_km, {box.xmin, box.ymin});
        else
            grid = GridSpec::fit_bbox(rows, cols, box);
    }

    const GridSeries gs = bin_to_grid(records, kind, grid, positions ? &*positions : nullptr);
    save_grid_series_csv((out / "grid_series.csv").string(), gs);
    save_membership_csv((out / "membership.csv").string(), gs);
    save_grid_json((out / "grid.json").string(), gs, coords_tag, a.kind);
    write_run_config(out, "prepare",
                     {{"stations_file", a.stations},
                      {"kind", a.kind},
                      {"grid", a.grid},
                      {"cell_km", a.cell_km},
                      {"layout_file", a.layout},
                      {"pad_frac", a.pad_frac},
                      {"coords", coords_tag},
                      {"empty_cells", gs.empty_cells()}});
    std::cout << "prepared " << gs.grid.cells() << " cells x " << gs.hours << " hours ("
              << coords_tag << " coordinates), " << gs.empty_cells() << " empty cells\n";
    return kExitOk;
}

// --- train ---

struct TrainArgs {
    std::string data;
    std::string out;
    int epochs = 50;
    int steps_per_epoch = 1000;
    int batch = 16;
    std::string tau = "3,3,2";
    int latent = 32;
    int gat_dim = 32;
    int conv_mid = 16;
    int gate_hidden = 8;
    int conv_out = 8;
    double leaky_slope = 0.2;
    double lr = 1e-3;
    std::string normalize = "none";
    std::uint64_t seed = 1;
    std::string train_range;
    int checkpoint_every = 0;
};

int run_train(const TrainArgs& a) {
    const fs::path out = ensure_out_dir(a.out);
    const GridSeries gs = load_grid_dir(a.data);

    ModelConfig cfg;
    cfg.grid_rows = gs.grid.rows;
    cfg.grid_cols = gs.grid.cols;
    cfg.batch = a.batch;
    cfg.resolution = parse_tau(a.tau);
    cfg.latent = a.latent;
    cfg.gat_dim = a.gat_dim;
    cfg.conv_mid = a.conv_mid;
    cfg.gate_hidden = a.gate_hidden;
    cfg.conv_out = a.conv_out;
    cfg.leaky_slope = a.leaky_slope;
    cfg.lr = a.lr;
    cfg.steps_per_epoch = a.steps_per_epoch;
    cfg.seed = a.seed;
    if (a.normalize == "mean") {
        cfg.normalize = true;
        cfg.norm_scale = 0.0; // resolved from the training region
    } else if (a.normalize != "none") {
        throw InvalidConfig("--normalize expects none|mean");
    }

    TrainOptions opt;
    opt.epochs = a.epochs;
    opt.checkpoint_dir = out.string();
    opt.checkpoint_every = a.checkpoint_every;
    if (!a.train_range.empty()) {
        const auto r = parse_range(a.train_range, "--train-range");
        opt.pivot_range = std::make_pair(r[0], r[1]);
    }

    TrainResult result;
    const ModelState state = train_model(gs, cfg, opt, &result);
    save_checkpoint((out / "checkpoint.json").string(), state);
    save_loss_trace_csv((out / "loss_trace.csv").string(), result);

    json extra{{"data_dir", a.data},
               {"epochs", a.epochs},
               {"steps_per_epoch", a.steps_per_epoch},
               {"batch", a.batch},
               {"tau", a.tau},
               {"latent", a.latent},
               {"gat_dim", a.gat_dim},
               {"conv_mid", a.conv_mid},
               {"gate_hidden", a.gate_hidden},
               {"conv_out", a.conv_out},
               {"leaky_slope", a.leaky_slope},
               {"lr", a.lr},
               {"normalize", a.normalize},
               {"norm_scale", state.config.norm_scale},
               {"seed", a.seed},
               {"train_range", a.train_range},
               {"checkpoint_every", a.checkpoint_every}};
    write_run_config(out, "train", std::move(extra));

    if (!result.loss_trace.empty())
        std::cout << "trained " << result.loss_trace.size() << " steps, loss "
                  << result.loss_trace.front().second << " -> " << result.loss_trace.back().second
                  << "\n";
    else
        std::cout << "trained 0 steps (initial state saved)\n";
    return kExitOk;
}

// --- predict ---

struct PredictArgs {
    std::string checkpoint;
    std::string data;
    std::string pivots;
    std::string out;
};

int run_predict(const PredictArgs& a) {
    const fs::path out = ensure_out_dir(a.out);
    const ModelState state = load_checkpoint(a.checkpoint);
    const GridSeries gs = load_grid_dir(a.data);

    const auto r = parse_range(a.pivots, "--pivots");
    std::vector<std::int64_t> pivots;
    for (std::int64_t t = r[0]; t <= r[1]; t += r[2]) pivots.push_back(t);

    AttentionAccumulator acc;
    const Matrix xhat = predict(state, gs, pivots, &acc);

    {
        std::ofstream f(out / "predictions.csv");
        if (!f) throw InvalidConfig("cannot write predictions.csv");
        f << "pivot,cell,xhat\n";
        char buf[96];
        for (std::size_t p = 0; p < pivots.size(); ++p)
            for (int c = 0; c < gs.grid.cells(); ++c) {
                std::snprintf(buf, sizeof(buf), "%lld,%d,%.17g\n",
                              static_cast<long long>(pivots[p]), c, xhat(p, c));
                f << buf;
            }
    }
    {
        const Matrix cellm = acc.mean();
        std::ofstream f(out / "attention_cells.csv");
        if (!f) throw InvalidConfig("cannot write attention_cells.csv");
        f << "cell_u,cell_v,alpha_mean\n";
        char buf[96];
        for (std::size_t u = 0; u < cellm.rows; ++u)
            for (std::size_t v = 0; v < cellm.cols; ++v) {
                std::snprintf(buf, sizeof(buf), "%zu,%zu,%.17g\n", u, v, cellm(u, v));
                f << buf;
            }
    }
    write_run_config(out, "predict",
                     {{"checkpoint", a.checkpoint}, {"data_dir", a.data}, {"pivots", a.pivots}});
    std::cout << "predicted " << pivots.size() << " pivots x " << gs.grid.cells() << " cells\n";
    return kExitOk;
}

// --- evaluate ---

struct EvaluateArgs {
    std::string predictions;
    std::string data;
    std::string stations;
    std::string attention;
    std::string scenario = "original";
    int clusters = 3;
    int detrend_window = 24;
    std::string out;
};

json metrics_to_json(const MetricsReport& rep) {
    json cells = json::array();
    for (const auto& c : rep.cells) {
        json jc{{"cell", c.cell}, {"e_rmse", c.e_rmse}, {"e_mae", c.e_mae}};
        if (c.pearson)
            jc["pearson"] = *c.pearson;
        else
            jc["pearson"] = nullptr;
        cells.push_back(std::move(jc));
    }
    return json{{"scenario", rep.scenario},
                {"mean_rmse", rep.mean_rmse},
                {"std_rmse", rep.std_rmse},
                {"mean_mae", rep.mean_mae},
                {"std_mae", rep.std_mae},
                {"mean_pearson", rep.mean_pearson},
                {"std_pearson", rep.std_pearson},
                {"pooled_rmse", rep.pooled_rmse},
                {"persistence_pooled_rmse", rep.persistence_pooled_rmse},
                {"persistence_mean_rmse", rep.persistence_mean_rmse},
                {"cells", std::move(cells)}};
}

int run_evaluate(const EvaluateArgs& a) {
    const fs::path out = ensure_out_dir(a.out);
    const GridSeries gs = load_grid_dir(a.data);
    const int mn = gs.grid.cells();

    // predictions.csv -> per-pivot rows
    std::map<std::int64_t, std::vector<double>> by_pivot;
    {
        std::ifstream f(a.predictions);
        if (!f) throw SchemaError("cannot read " + a.predictions);
        std::string line;
        std::getline(f, line);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line != "pivot,cell,xhat") throw SchemaError("bad predictions header");
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            long long pivot = 0;
            int cell = 0;
            double xhat = 0.0;
            if (std::sscanf(line.c_str(), "%lld,%d,%lf", &pivot, &cell, &xhat) != 3)
                throw SchemaError("bad predictions row: " + line);
            auto& row = by_pivot[pivot];
            row.resize(mn, 0.0);
            if (cell < 0 || cell >= mn) throw SchemaError("prediction cell out of range");
            row[cell] = xhat;
        }
    }
    if (by_pivot.empty()) throw SchemaError("no predictions found");

    Matrix actual(by_pivot.size(), mn), predicted(by_pivot.size(), mn),
        persistence(by_pivot.size(), mn);
    std::vector<std::int64_t> pivots;
    {
        std::size_t row = 0;
        for (const auto& [pivot, xs] : by_pivot) {
            if (pivot < 1 || pivot + 1 > gs.hours)
                throw OutOfBounds("pivot " + std::to_string(pivot) + " has no target hour");
            pivots.push_back(pivot);
            for (int c = 0; c < mn; ++c) {
                actual(row, c) = static_cast<double>(gs.at(c, pivot + 1));
                predicted(row, c) = xs[c];
                persistence(row, c) = static_cast<double>(gs.at(c, pivot));
            }
            ++row;
        }
    }

    const MetricsReport rep = compute_metrics(actual, predicted, persistence, a.scenario);
    {
        std::ofstream f(out / "metrics.json");
        f << metrics_to_json(rep).dump(2) << "\n";
    }
    {
        std::ofstream f(out / "cell_metrics.csv");
        f << "cell,e_rmse,e_mae,pearson\n";
        char buf[128];
        for (const auto& c : rep.cells) {
            if (c.pearson)
                std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g\n", c.cell, c.e_rmse,
                              c.e_mae, *c.pearson);
            else
                std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,\n", c.cell, c.e_rmse, c.e_mae);
            f << buf;
        }
    }

    // per-station estimates: each cell prediction split over its members
    {
        std::ofstream f(out / "station_estimates.csv");
        f << "station_id,t,xhat\n";
        char buf[128];
        for (std::size_t p = 0; p < pivots.size(); ++p)
            for (int c = 0; c < mn; ++c) {
                if (gs.membership[c].empty()) continue;
                const double each = station_estimate(predicted(p, c), gs.membership[c].size());
                for (const std::string& sid : gs.membership[c]) {
                    std::snprintf(buf, sizeof(buf), "%s,%lld,%.17g\n", sid.c_str(),
                                  static_cast<long long>(pivots[p] + 1), each);
                    f << buf;
                }
            }
    }

    json extra{{"predictions", a.predictions},
               {"data_dir", a.data},
               {"stations_file", a.stations},
               {"attention_file", a.attention},
               {"scenario", a.scenario},
               {"clusters", a.clusters},
               {"detrend_window", a.detrend_window},
               {"evaluated_pivots", pivots.size()},
               {"mean_rmse", rep.mean_rmse},
               {"mean_mae", rep.mean_mae}};

    // within-cell similarity needs the raw station series
    std::map<std::string, Point2> station_pos;
    if (!a.stations.empty()) {
        const auto records = ingest_csv(a.stations);
        const std::string kind_tag = [&] {
            std::ifstream f(fs::path(a.data) / "grid.json");
            json j;
            f >> j;
            return j.value("kind", "rental");
        }();
        const Kind kind = parse_kind(kind_tag);
        std::map<std::string, const StationRecord*> by_id;
        for (const auto& r : records) {
            station_pos[r.station_id] = r.position;
            if (r.kind == kind) by_id[r.station_id] = &r;
        }
        std::vector<std::vector<std::vector<double>>> members(mn);
        for (int c = 0; c < mn; ++c)
            for (const std::string& sid : gs.membership[c]) {
                auto it = by_id.find(sid);
                if (it == by_id.end()) throw SchemaError("station " + sid + " missing from CSV");
                members[c].emplace_back(it->second->demand.begin(), it->second->demand.end());
            }
        const auto sim = cell_similarity(members, a.detrend_window);
        std::ofstream f(out / "similarity.csv");
        f << "cell,stations,pearson,cv\n";
        char buf[128];
        for (const auto& s : sim) {
            std::snprintf(buf, sizeof(buf), "%d,%zu,%.17g,%.17g\n", s.cell, s.stations,
                          s.mean_pairwise_pearson, s.cv);
            f << buf;
        }
    }

    if (!a.attention.empty()) {
        Matrix cellm(mn, mn);
        std::ifstream f(a.attention);
        if (!f) throw SchemaError("cannot read " + a.attention);
        std::string line;
        std::getline(f, line);
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            std::size_t u = 0, v = 0;
            double w = 0.0;
            if (std::sscanf(line.c_str(), "%zu,%zu,%lf", &u, &v, &w) != 3)
                throw SchemaError("bad attention row: " + line);
            if (u >= static_cast<std::size_t>(mn) || v >= static_cast<std::size_t>(mn))
                throw SchemaError("attention cell out of range");
            cellm(u, v) = w;
        }
        const AttentionReport arep = build_attention_report(cellm, a.clusters);
        {
            std::ofstream g(out / "attention_edges.csv");
            g << "cell_u,cell_v,alpha_mean\n";
            char buf[96];
            for (std::size_t u = 0; u < cellm.rows; ++u)
                for (std::size_t v = 0; v < cellm.cols; ++v) {
                    std::snprintf(buf, sizeof(buf), "%zu,%zu,%.17g\n", u, v,
                                  arep.cell_matrix(u, v));
                    g << buf;
                }
        }
        {
            std::ofstream g(out / "attention_clusters.csv");
            g << "cluster,cell,station_id,x_km,y_km\n";
            char buf[160];
            const auto emit = [&](const char* tag, const std::vector<int>& cs) {
                for (int c : cs) {
                    if (gs.membership[c].empty()) {
                        std::snprintf(buf, sizeof(buf), "%s,%d,,,\n", tag, c);
                        g << buf;
                        continue;
                    }
                    for (const std::string& sid : gs.membership[c]) {
                        const auto it = station_pos.find(sid);
                        if (it != station_pos.end())
                            std::snprintf(buf, sizeof(buf), "%s,%d,%s,%.17g,%.17g\n", tag, c,
                                          sid.c_str(), it->second.x, it->second.y);
                        else
                            std::snprintf(buf, sizeof(buf), "%s,%d,%s,,\n", tag, c, sid.c_str());
                        g << buf;
                    }
                }
            };
            emit("low", arep.low_cells);
            emit("high", arep.high_cells);
        }
        extra["attention_degenerate"] = arep.degenerate;
    }

    write_run_config(out, "evaluate", std::move(extra));
    std::cout << "evaluated " << pivots.size() << " pivots: mean cell RMSE " << rep.mean_rmse
              << ", mean cell MAE " << rep.mean_mae << " (persistence RMSE "
              << rep.persistence_mean_rmse << ")\n";
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"cartogram-aided demand forecasting pipeline"};
    app.require_subcommand(1);

    SynthArgs synth_args;
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic demand scenario");
    synth_cmd->add_option("--stations", synth_args.stations, "station count");
    synth_cmd->add_option("--hours", synth_args.hours, "hours of demand (T)");
    synth_cmd->add_option("--layout", synth_args.layout, "clustered|uniform");
    synth_cmd->add_option("--clusters", synth_args.clusters, "number of spatial clusters");
    synth_cmd->add_option("--extent", synth_args.extent, "city extent WxH in km");
    synth_cmd->add_option("--cluster-std", synth_args.cluster_std, "cluster spread (km)");
    synth_cmd->add_option("--base-rate", synth_args.base_rate, "mean hourly rate per station");
    synth_cmd->add_option("--daily-amp", synth_args.daily_amp, "daily modulation amplitude");
    synth_cmd->add_option("--weekly-amp", synth_args.weekly_amp, "weekly modulation amplitude");
    synth_cmd->add_option("--noise", synth_args.noise, "0 for deterministic counts");
    synth_cmd->add_option("--new-station", synth_args.new_station,
                          "late-activated station x,y,hour,rate");
    synth_cmd->add_option("--seed", synth_args.seed, "random seed");
    synth_cmd->add_option("--out", synth_args.out, "output directory")->required();

    CartogramArgs carto_args;
    auto* carto_cmd =
        app.add_subcommand("cartogram", "relax station positions to uniform density");
    carto_cmd->add_option("--stations", carto_args.stations, "stations CSV")->required();
    carto_cmd->add_option("--tol-frac", carto_args.tol_frac,
                          "stop when max displacement < tol-frac * bbox diagonal");
    carto_cmd->add_option("--max-iter", carto_args.max_iter, "iteration cap");
    carto_cmd->add_option("--pad-frac", carto_args.pad_frac, "bounding-box padding per side");
    carto_cmd->add_option("--bins", carto_args.bins, "area-histogram bins");
    carto_cmd->add_option("--out", carto_args.out, "output directory")->required();

    PrepareArgs prep_args;
    auto* prep_cmd = app.add_subcommand("prepare", "coarse-grain stations onto the grid");
    prep_cmd->add_option("--stations", prep_args.stations, "stations CSV")->required();
    prep_cmd->add_option("--kind", prep_args.kind, "rental|return");
    prep_cmd->add_option("--grid", prep_args.grid, "grid as MxN")->required();
    prep_cmd->add_option("--cell-km", prep_args.cell_km, "uniform cell size (km)");
    prep_cmd->add_option("--layout", prep_args.layout, "cartogram layout JSON");
    prep_cmd->add_option("--pad-frac", prep_args.pad_frac, "bounding-box padding per side");
    prep_cmd->add_option("--out", prep_args.out, "output directory")->required();

    TrainArgs train_args;
    auto* train_cmd = app.add_subcommand("train", "train the forecasting network");
    train_cmd->add_option("--data", train_args.data, "prepared grid directory")->required();
    train_cmd->add_option("--epochs", train_args.epochs, "training epochs");
    train_cmd->add_option("--steps-per-epoch", train_args.steps_per_epoch, "Adam steps per epoch");
    train_cmd->add_option("--batch", train_args.batch, "pivot times per batch (B)");
    train_cmd->add_option("--tau", train_args.tau, "lag depths hour,day,week");
    train_cmd->add_option("--latent", train_args.latent, "attention width");
    train_cmd->add_option("--gat-dim", train_args.gat_dim, "graph-attention feature width");
    train_cmd->add_option("--conv-mid", train_args.conv_mid, "conv channels");
    train_cmd->add_option("--gate-hidden", train_args.gate_hidden, "channel-gate hidden width");
    train_cmd->add_option("--conv-out", train_args.conv_out, "conv output channels");
    train_cmd->add_option("--leaky-slope", train_args.leaky_slope, "LeakyReLU slope");
    train_cmd->add_option("--lr", train_args.lr, "Adam learning rate");
    train_cmd->add_option("--normalize", train_args.normalize, "none|mean input scaling");
    train_cmd->add_option("--seed", train_args.seed, "random seed");
    train_cmd->add_option("--train-range", train_args.train_range, "pivot range lo:hi");
    train_cmd->add_option("--checkpoint-every", train_args.checkpoint_every,
                          "periodic checkpoint interval in steps");
    train_cmd->add_option("--out", train_args.out, "output directory")->required();

    PredictArgs pred_args;
    auto* pred_cmd = app.add_subcommand("predict", "forecast the next hour for pivot times");
    pred_cmd->add_option("--checkpoint", pred_args.checkpoint, "checkpoint JSON")->required();
    pred_cmd->add_option("--data", pred_args.data, "prepared grid directory")->required();
    pred_cmd->add_option("--pivots", pred_args.pivots, "pivot range lo:hi[:step]")->required();
    pred_cmd->add_option("--out", pred_args.out, "output directory")->required();

    EvaluateArgs eval_args;
    auto* eval_cmd = app.add_subcommand("evaluate", "score predictions and emit reports");
    eval_cmd->add_option("--predictions", eval_args.predictions, "predictions CSV")->required();
    eval_cmd->add_option("--data", eval_args.data, "prepared grid directory")->required();
    eval_cmd->add_option("--stations", eval_args.stations, "stations CSV for similarity/coords");
    eval_cmd->add_option("--attention", eval_args.attention, "attention cell matrix CSV");
    eval_cmd->add_option("--scenario", eval_args.scenario, "report tag: original|cartogram");
    eval_cmd->add_option("--clusters", eval_args.clusters, "cluster size k for the report");
    eval_cmd->add_option("--detrend-window", eval_args.detrend_window, "detrend window (hours)");
    eval_cmd->add_option("--out", eval_args.out, "output directory")->required();

    try {
        app.parse(argc, argv);
        if (synth_cmd->parsed()) return run_synth(synth_args);
        if (carto_cmd->parsed()) return run_cartogram(carto_args);
        if (prep_cmd->parsed()) return run_prepare(prep_args);
        if (train_cmd->parsed()) return run_train(train_args);
        if (pred_cmd->parsed()) return run_predict(pred_args);
        if (eval_cmd->parsed()) return run_evaluate(eval_args);
        return kExitValidation;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitValidation;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    }
}
