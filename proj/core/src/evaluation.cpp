#include "cartoflow/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cartoflow/errors.hpp"

namespace cartoflow {

namespace {

void require_same_length(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw LengthMismatch("series lengths differ");
    if (a.empty()) throw LengthMismatch("empty series");
}

double mean_of(const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

} // namespace

double rmse(const std::vector<double>& actual, const std::vector<double>& predicted) {
    require_same_length(actual, predicted);
    double s = 0.0;
    for (std::size_t i = 0; i < actual.size(); ++i) {
        const double d = actual[i] - predicted[i];
        s += d * d;
    }
    return std::sqrt(s / static_cast<double>(actual.size()));
}

double mae(const std::vector<double>& actual, const std::vector<double>& predicted) {
    require_same_length(actual, predicted);
    double s = 0.0;
    for (std::size_t i = 0; i < actual.size(); ++i) s += std::abs(actual[i] - predicted[i]);
    return s / static_cast<double>(actual.size());
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    require_same_length(a, b);
    const double ma = mean_of(a), mb = mean_of(b);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa <= 0.0 || sbb <= 0.0) throw ZeroVariance("constant series has no correlation");
    return sab / std::sqrt(saa * sbb);
}

namespace {

// Residual after subtracting a centered moving average over
// [t - w/2, t + w/2 - 1], truncated at the boundaries.
std::vector<double> detrend(const std::vector<double>& x, int window) {
    const std::int64_t n = static_cast<std::int64_t>(x.size());
    const std::int64_t half = window / 2;
    std::vector<double> out(n);
    for (std::int64_t t = 0; t < n; ++t) {
        const std::int64_t lo = std::max<std::int64_t>(0, t - half);
        const std::int64_t hi = std::min<std::int64_t>(n - 1, t + half - 1 + (window % 2));
        double s = 0.0;
        for (std::int64_t k = lo; k <= hi; ++k) s += x[k];
        out[t] = x[t] - s / static_cast<double>(hi - lo + 1);
    }
    return out;
}

} // namespace

double detrended_pearson(const std::vector<double>& a, const std::vector<double>& b,
                         int detrend_window) {
    require_same_length(a, b);
    if (detrend_window < 1) throw InvalidConfig("detrend window must be >= 1");
    if (a.size() < 2 * static_cast<std::size_t>(detrend_window))
        throw LengthMismatch("series shorter than twice the detrend window");
    return pearson(detrend(a, detrend_window), detrend(b, detrend_window));
}

double coefficient_of_variation(const std::vector<std::vector<double>>& members) {
    if (members.empty()) throw EmptyCell("cell has no stations");
    const std::size_t n = members.size();
    const std::size_t t_len = members[0].size();
    for (const auto& m : members)
        if (m.size() != t_len) throw LengthMismatch("member series lengths differ");
    if (t_len == 0) throw LengthMismatch("empty member series");

    double acc = 0.0;
    std::size_t counted = 0;
    for (std::size_t t = 0; t < t_len; ++t) {
        double mu = 0.0;
        for (const auto& m : members) mu += m[t];
        mu /= static_cast<double>(n);
        if (mu == 0.0) continue; // 0/0 guard
        double var = 0.0;
        for (const auto& m : members) {
            const double d = m[t] - mu;
            var += d * d;
        }
        var /= static_cast<double>(n);
        acc += std::sqrt(var) / mu;
        ++counted;
    }
    return counted > 0 ? acc / static_cast<double>(counted) : 0.0;
}

double station_estimate(double cell_prediction, std::size_t members_in_cell) {
    if (members_in_cell == 0) throw EmptyCell("no stations in cell");
    return cell_prediction / static_cast<double>(members_in_cell);
}

MetricsReport compute_metrics(const Matrix& actual, const Matrix& predicted,
                              const Matrix& persistence_reference, const std::string& scenario) {
    if (actual.rows != predicted.rows || actual.cols != predicted.cols ||
        actual.rows != persistence_reference.rows || actual.cols != persistence_reference.cols)
        throw LengthMismatch("metric input shapes differ");
    if (actual.rows == 0 || actual.cols == 0) throw LengthMismatch("empty metric input");

    MetricsReport rep;
    rep.scenario = scenario;
    const std::size_t t_len = actual.rows;
    std::vector<double> xa(t_len), xp(t_len), xb(t_len);

    std::vector<double> rmses, maes, rhos;
    double pooled = 0.0, pooled_base = 0.0;
    for (std::size_t c = 0; c < actual.cols; ++c) {
        for (std::size_t t = 0; t < t_len; ++t) {
            xa[t] = actual(t, c);
            xp[t] = predicted(t, c);
            xb[t] = persistence_reference(t, c);
        }
        CellMetrics cm;
        cm.cell = static_cast<int>(c);
        cm.e_rmse = rmse(xa, xp);
        cm.e_mae = mae(xa, xp);
        try {
            cm.pearson = pearson(xa, xp);
        } catch (const ZeroVariance&) {
            cm.pearson = std::nullopt;
        }
        rep.cells.push_back(cm);
        rmses.push_back(cm.e_rmse);
        maes.push_back(cm.e_mae);
        if (cm.pearson) rhos.push_back(*cm.pearson);
        for (std::size_t t = 0; t < t_len; ++t) {
            pooled += (xa[t] - xp[t]) * (xa[t] - xp[t]);
            pooled_base += (xa[t] - xb[t]) * (xa[t] - xb[t]);
        }
        rep.persistence_mean_rmse += rmse(xa, xb);
    }
    rep.persistence_mean_rmse /= static_cast<double>(actual.cols);
    const double entries = static_cast<double>(t_len * actual.cols);
    rep.pooled_rmse = std::sqrt(pooled / entries);
    rep.persistence_pooled_rmse = std::sqrt(pooled_base / entries);

    const auto mean_std = [](const std::vector<double>& v, double& mean, double& sd) {
        if (v.empty()) {
            mean = sd = 0.0;
            return;
        }
        mean = mean_of(v);
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        sd = std::sqrt(var / static_cast<double>(v.size()));
    };
    mean_std(rmses, rep.mean_rmse, rep.std_rmse);
    mean_std(maes, rep.mean_mae, rep.std_mae);
    mean_std(rhos, rep.mean_pearson, rep.std_pearson);
    return rep;
}

std::vector<CellSimilarity> cell_similarity(
    const std::vector<std::vector<std::vector<double>>>& members_per_cell, int detrend_window) {
    std::vector<CellSimilarity> out;
    for (std::size_t c = 0; c < members_per_cell.size(); ++c) {
        const auto& members = members_per_cell[c];
        if (members.empty()) continue; // empty cells carry no statistics
        CellSimilarity cs;
        cs.cell = static_cast<int>(c);
        cs.stations = members.size();
        cs.cv = coefficient_of_variation(members);
        if (members.size() == 1) {
            cs.mean_pairwise_pearson = 1.0; // single-station convention
        } else {
            double acc = 0.0;
            std::size_t pairs = 0;
            for (std::size_t i = 0; i < members.size(); ++i)
                for (std::size_t j = i + 1; j < members.size(); ++j) {
                    try {
                        acc += detrended_pearson(members[i], members[j], detrend_window);
                        ++pairs;
                    } catch (const ZeroVariance&) {
                        // constant residuals contribute nothing
                    }
                }
            cs.mean_pairwise_pearson = pairs > 0 ? acc / static_cast<double>(pairs) : 1.0;
        }
        out.push_back(cs);
    }
    return out;
}

AttentionReport build_attention_report(const Matrix& cell_matrix, int k) {
    if (cell_matrix.rows == 0 || cell_matrix.rows != cell_matrix.cols)
        throw NoScoresCollected("attention cell matrix is empty or not square");
    const int mn = static_cast<int>(cell_matrix.rows);
    if (k < 1 || 2 * k > mn) throw InvalidConfig("cluster size k must satisfy 1 <= 2k <= cells");

    AttentionReport rep;
    rep.cell_matrix = cell_matrix;

    // Every row sums to one, so ranking uses the off-diagonal mass: how much
    // weight a cell puts on the others rather than on itself.
    std::vector<double> score(mn);
    for (int i = 0; i < mn; ++i) {
        double s = 0.0;
        for (int j = 0; j < mn; ++j)
            if (j != i) s += cell_matrix(i, j);
        score[i] = mn > 1 ? s / static_cast<double>(mn - 1) : 0.0;
    }
    rep.order.resize(mn);
    std::iota(rep.order.begin(), rep.order.end(), 0);
    std::stable_sort(rep.order.begin(), rep.order.end(),
                     [&](int a, int b) { return score[a] < score[b]; });

    const auto [mn_it, mx_it] = std::minmax_element(score.begin(), score.end());
    rep.degenerate = (*mx_it - *mn_it) <= 1e-12;

    rep.low_cells.assign(rep.order.begin(), rep.order.begin() + k);
    rep.high_cells.assign(rep.order.end() - k, rep.order.end());
    return rep;
}

} // namespace cartoflow
