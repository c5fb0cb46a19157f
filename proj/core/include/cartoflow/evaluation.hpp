#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cartoflow/errors.hpp"
#include "cartoflow/matrix.hpp"

namespace cartoflow {

double rmse(const std::vector<double>& actual, const std::vector<double>& predicted);
double mae(const std::vector<double>& actual, const std::vector<double>& predicted);
double pearson(const std::vector<double>& a, const std::vector<double>& b);

// Pearson correlation after subtracting a centered moving average
// (window hours, default one daily cycle).
double detrended_pearson(const std::vector<double>& a, const std::vector<double>& b,
                         int detrend_window = 24);

// Time-averaged ratio of the population standard deviation to the mean of
// the member series; hours with zero mean are skipped.
double coefficient_of_variation(const std::vector<std::vector<double>>& members);

// Equal split of a cell-level prediction over its member stations.
double station_estimate(double cell_prediction, std::size_t members_in_cell);

struct CellMetrics {
    int cell = 0;
    double e_rmse = 0.0;
    double e_mae = 0.0;
    std::optional<double> pearson; // absent for constant series
};

struct MetricsReport {
    std::string scenario; // original | cartogram
    std::vector<CellMetrics> cells;
    double mean_rmse = 0.0, std_rmse = 0.0;
    double mean_mae = 0.0, std_mae = 0.0;
    double mean_pearson = 0.0, std_pearson = 0.0;
    double persistence_mean_rmse = 0.0; // next hour = current hour baseline
    double pooled_rmse = 0.0;             // over all (cell, t) pairs
    double persistence_pooled_rmse = 0.0;
};

// actual/predicted: one row per evaluation time, one column per cell.
// persistence_reference: actual demand at the pivot hours (the naive
// forecast), same shape.
MetricsReport compute_metrics(const Matrix& actual, const Matrix& predicted,
                              const Matrix& persistence_reference, const std::string& scenario);

struct CellSimilarity {
    int cell = 0;
    std::size_t stations = 0;
    double mean_pairwise_pearson = 1.0; // 1 for single-station cells
    double cv = 0.0;
};

// Per-cell within-cell statistics from raw member-station series.
std::vector<CellSimilarity> cell_similarity(
    const std::vector<std::vector<std::vector<double>>>& members_per_cell, int detrend_window = 24);

struct AttentionReport {
    Matrix cell_matrix;          // MN x MN, rows sum to 1
    std::vector<int> order;      // cells sorted by off-diagonal row mean, ascending
    std::vector<int> low_cells;  // k weakest
    std::vector<int> high_cells; // k strongest
    bool degenerate = false;     // all weights tied; ordering meaningless
};

AttentionReport build_attention_report(const Matrix& cell_matrix, int k);

} // namespace cartoflow
