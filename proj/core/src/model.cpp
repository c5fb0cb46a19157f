#include "cartoflow/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "cartoflow/errors.hpp"
#include "cartoflow/rng.hpp"

namespace cartoflow {

void ModelConfig::validate() const {
    if (grid_rows < 1 || grid_cols < 1) throw InvalidConfig("grid dimensions must be >= 1");
    if (batch < 1) throw InvalidConfig("batch must be >= 1");
    resolution.validate();
    if (latent < 1 || gat_dim < 1 || conv_mid < 1 || gate_hidden < 1 || conv_out < 1)
        throw InvalidConfig("model widths must be >= 1");
    if (!(leaky_slope > 0.0 && leaky_slope < 1.0))
        throw InvalidConfig("leaky_slope must be in (0,1)");
    if (!(gat_teleport >= 0.0 && gat_teleport < 1.0))
        throw InvalidConfig("gat_teleport must be in [0,1)");
    if (lr <= 0.0) throw InvalidConfig("learning rate must be positive");
    if (steps_per_epoch < 1) throw InvalidConfig("steps_per_epoch must be >= 1");
    if (normalize && norm_scale < 0.0) throw InvalidConfig("norm_scale must be >= 0");
}

namespace {

ParamSet make_params(const ModelConfig& c) {
    ParamSet p;
    const int taus[3] = {c.resolution.tau_hour, c.resolution.tau_day, c.resolution.tau_week};
    for (int r = 0; r < 3; ++r) {
        p.w_emb[r] = Matrix(taus[r], c.latent);
        p.w_q[r] = Matrix(c.latent, c.latent);
        p.w_k[r] = Matrix(c.latent, c.latent);
        p.w_v[r] = Matrix(c.latent, c.latent);
        p.w_gat[r] = Matrix(c.latent, c.gat_dim);
        p.a_gat[r] = Matrix(2 * c.gat_dim, 1);
        ConvHeadParams& h = p.conv[r];
        h.k1 = Matrix(9 * c.gat_dim, c.conv_mid);
        h.b1 = Matrix(1, c.conv_mid);
        h.k2 = Matrix(9 * c.conv_mid, c.conv_mid);
        h.b2 = Matrix(1, c.conv_mid);
        h.wg1 = Matrix(c.conv_mid, c.gate_hidden);
        h.bg1 = Matrix(1, c.gate_hidden);
        h.wg2 = Matrix(c.gate_hidden, c.conv_mid);
        h.bg2 = Matrix(1, c.conv_mid);
        h.wp = Matrix(c.conv_mid, c.conv_out);
        h.bp = Matrix(1, c.conv_out);
    }
    p.w_merge = Matrix(3 * c.conv_out, 1);
    return p;
}

void scale_inplace(Matrix& m, double s) {
    for (double& v : m.a) v *= s;
}

void add_bias(Matrix& m, const Matrix& bias) {
    if (bias.rows != 1 || bias.cols != m.cols) throw ShapeMismatch("bias width mismatch");
    for (std::size_t i = 0; i < m.rows; ++i) {
        double* row = m.row(i);
        for (std::size_t j = 0; j < m.cols; ++j) row[j] += bias(0, j);
    }
}

Matrix column_sums(const Matrix& m) {
    Matrix s(1, m.cols);
    for (std::size_t i = 0; i < m.rows; ++i) {
        const double* row = m.row(i);
        for (std::size_t j = 0; j < m.cols; ++j) s(0, j) += row[j];
    }
    return s;
}

Matrix relu(const Matrix& m) {
    Matrix out = m;
    for (double& v : out.a) v = v > 0.0 ? v : 0.0;
    return out;
}

// d(relu)/dx using the pre-activation sign.
void relu_mask_inplace(Matrix& grad, const Matrix& pre) {
    for (std::size_t i = 0; i < grad.a.size(); ++i)
        if (pre.a[i] <= 0.0) grad.a[i] = 0.0;
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// 3x3 same-padding neighborhoods as a (B*M*N) x (9*C) matrix.
Matrix im2col(const Matrix& x, int b, int m, int n) {
    const int c = static_cast<int>(x.cols);
    Matrix g(x.rows, 9 * static_cast<std::size_t>(c));
    for (int bi = 0; bi < b; ++bi) {
        for (int r = 0; r < m; ++r) {
            for (int col = 0; col < n; ++col) {
                const std::size_t row = (static_cast<std::size_t>(bi) * m + r) * n + col;
                double* grow = g.row(row);
                for (int dr = -1; dr <= 1; ++dr) {
                    for (int dc = -1; dc <= 1; ++dc) {
                        const int slot = (dr + 1) * 3 + (dc + 1);
                        const int rr = r + dr, cc = col + dc;
                        if (rr < 0 || rr >= m || cc < 0 || cc >= n) continue;
                        const std::size_t src = (static_cast<std::size_t>(bi) * m + rr) * n + cc;
                        const double* xr = x.row(src);
                        double* dst = grow + static_cast<std::size_t>(slot) * c;
                        for (int ch = 0; ch < c; ++ch) dst[ch] = xr[ch];
                    }
                }
            }
        }
    }
    return g;
}

// Adjoint of im2col: scatter neighborhood gradients back onto the grid.
Matrix col2im(const Matrix& g, int b, int m, int n, int c) {
    Matrix x(g.rows, c);
    for (int bi = 0; bi < b; ++bi) {
        for (int r = 0; r < m; ++r) {
            for (int col = 0; col < n; ++col) {
                const std::size_t row = (static_cast<std::size_t>(bi) * m + r) * n + col;
                const double* grow = g.row(row);
                for (int dr = -1; dr <= 1; ++dr) {
                    for (int dc = -1; dc <= 1; ++dc) {
                        const int slot = (dr + 1) * 3 + (dc + 1);
                        const int rr = r + dr, cc = col + dc;
                        if (rr < 0 || rr >= m || cc < 0 || cc >= n) continue;
                        const std::size_t src = (static_cast<std::size_t>(bi) * m + rr) * n + cc;
                        double* xr = x.row(src);
                        const double* s = grow + static_cast<std::size_t>(slot) * c;
                        for (int ch = 0; ch < c; ++ch) xr[ch] += s[ch];
                    }
                }
            }
        }
    }
    return x;
}

} // namespace

void ModelState::init() {
    config.validate();
    params = make_params(config);
    Rng rng(Rng::mix(config.seed, 0x1417));
    params.for_each([&](const std::string&, Matrix& m, bool is_bias) {
        if (is_bias) {
            m.fill(0.0);
        } else {
            const double stddev = 1.0 / std::sqrt(static_cast<double>(m.rows));
            for (double& v : m.a) v = rng.normal(0.0, stddev);
        }
    });
    grads = make_params(config);
    adam_m = make_params(config);
    adam_v = make_params(config);
    adam_steps = 0;
}

void ModelState::zero_grads() {
    grads.for_each([](const std::string&, Matrix& m, bool) { m.fill(0.0); });
}

Matrix embed(const Matrix& x, const Matrix& w_emb) {
    if (x.cols != w_emb.rows) throw ShapeMismatch("embed: lag width does not match embedding");
    return matmul(x, w_emb);
}

Matrix batch_attention(const Matrix& x_emb, const Matrix& w_q, const Matrix& w_k,
                       const Matrix& w_v, AttnCache* cache) {
    if (x_emb.cols != w_q.rows || x_emb.cols != w_k.rows || x_emb.cols != w_v.rows)
        throw ShapeMismatch("attention: embedding width mismatch");
    if (w_q.cols != w_k.cols) throw ShapeMismatch("attention: query/key width mismatch");
    AttnCache local;
    AttnCache& c = cache ? *cache : local;
    c.q = matmul(x_emb, w_q);
    c.k = matmul(x_emb, w_k);
    c.v = matmul(x_emb, w_v);
    Matrix scores = matmul_nt(c.q, c.k);
    scale_inplace(scores, 1.0 / std::sqrt(static_cast<double>(w_q.cols)));
    c.probs = row_softmax(scores);
    Matrix y = matmul(c.probs, c.v);
    if (!all_finite(y)) throw NonFiniteActivation("attention output not finite");
    return y;
}

Matrix attention_scores(const Matrix& y, const Matrix& w_gat, const Matrix& a_gat,
                        double leaky_slope, GatScoreCache* cache) {
    if (y.cols != w_gat.rows) throw ShapeMismatch("scores: feature width mismatch");
    if (a_gat.cols != 1 || a_gat.rows != 2 * w_gat.cols)
        throw ShapeMismatch("scores: scoring vector must be 2x projection width");
    if (!all_finite(y)) throw NonFiniteActivation("scores: input not finite");

    GatScoreCache local;
    GatScoreCache& c = cache ? *cache : local;
    c.g = matmul(y, w_gat);
    const std::size_t rows = y.rows;
    const std::size_t gd = w_gat.cols;
    c.left.assign(rows, 0.0);
    c.right.assign(rows, 0.0);
    for (std::size_t u = 0; u < rows; ++u) {
        const double* gr = c.g.row(u);
        double l = 0.0, r = 0.0;
        for (std::size_t j = 0; j < gd; ++j) {
            l += gr[j] * a_gat(j, 0);
            r += gr[j] * a_gat(gd + j, 0);
        }
        c.left[u] = l;
        c.right[u] = r;
    }
    Matrix scores(rows, rows);
    for (std::size_t u = 0; u < rows; ++u) {
        double* srow = scores.row(u);
        const double lu = c.left[u];
        for (std::size_t v = 0; v < rows; ++v) {
            const double raw = lu + c.right[v];
            srow[v] = raw > 0.0 ? raw : leaky_slope * raw;
        }
    }
    c.alpha = row_softmax(scores);
    if (!all_finite(c.alpha)) throw NonFiniteActivation("attention scores not finite");
    return c.alpha;
}

Matrix gat_layer(const Matrix& y, const Matrix& alpha, int layer_index, const Matrix& w_gat) {
    if (alpha.rows != alpha.cols || alpha.rows != y.rows)
        throw ShapeMismatch("gat_layer: score matrix does not match features");
    if (layer_index == 1) {
        if (y.cols != w_gat.rows) throw ShapeMismatch("gat_layer: projection width mismatch");
        return matmul(alpha, matmul(y, w_gat));
    }
    if (layer_index == 2 || layer_index == 3) return matmul(alpha, y);
    throw InvalidConfig("gat_layer: layer_index must be 1..3");
}

Matrix conv_head_forward(const ConvHeadParams& p, const Matrix& x, int b, int m, int n,
                         ConvCache* cache) {
    if (static_cast<std::size_t>(b) * m * n != x.rows)
        throw ShapeMismatch("conv: rows != B*M*N");
    if (9 * x.cols != p.k1.rows) throw ShapeMismatch("conv: channel mismatch");
    ConvCache local;
    ConvCache& c = cache ? *cache : local;
    c.b = b;
    c.m = m;
    c.n = n;
    c.x = x;
    c.g1 = im2col(x, b, m, n);
    c.h1pre = matmul(c.g1, p.k1);
    add_bias(c.h1pre, p.b1);
    c.h1 = relu(c.h1pre);
    c.g2 = im2col(c.h1, b, m, n);
    c.h2pre = matmul(c.g2, p.k2);
    add_bias(c.h2pre, p.b2);
    c.h2 = relu(c.h2pre);

    // channel gate from per-image channel means
    const int mn = m * n;
    const std::size_t cm = c.h2.cols;
    c.means = Matrix(b, cm);
    for (int bi = 0; bi < b; ++bi)
        for (int cell = 0; cell < mn; ++cell) {
            const double* row = c.h2.row(static_cast<std::size_t>(bi) * mn + cell);
            for (std::size_t ch = 0; ch < cm; ++ch) c.means(bi, ch) += row[ch];
        }
    scale_inplace(c.means, 1.0 / static_cast<double>(mn));
    c.gh_pre = matmul(c.means, p.wg1);
    add_bias(c.gh_pre, p.bg1);
    c.gh = relu(c.gh_pre);
    c.gate_pre = matmul(c.gh, p.wg2);
    add_bias(c.gate_pre, p.bg2);
    c.gate = c.gate_pre;
    for (double& v : c.gate.a) v = sigmoid(v);

    c.gated = c.h2;
    for (int bi = 0; bi < b; ++bi)
        for (int cell = 0; cell < mn; ++cell) {
            double* row = c.gated.row(static_cast<std::size_t>(bi) * mn + cell);
            for (std::size_t ch = 0; ch < cm; ++ch) row[ch] *= c.gate(bi, ch);
        }
    c.out = matmul(c.gated, p.wp);
    add_bias(c.out, p.bp);
    return c.out;
}

Matrix conv_head_backward(const ConvHeadParams& p, ConvHeadParams& g, const ConvCache& c,
                          const Matrix& d_out) {
    if (d_out.rows != c.gated.rows || d_out.cols != p.wp.cols)
        throw ShapeMismatch("conv backward: output gradient shape");
    const int mn = c.m * c.n;
    const std::size_t cm = c.h2.cols;

    add_inplace(g.wp, matmul_tn(c.gated, d_out));
    add_inplace(g.bp, column_sums(d_out));
    const Matrix d_gated = matmul_nt(d_out, p.wp);

    // gate path
    Matrix d_gate(c.b, cm);
    Matrix d_h2 = d_gated;
    for (int bi = 0; bi < c.b; ++bi)
        for (int cell = 0; cell < mn; ++cell) {
            const std::size_t row = static_cast<std::size_t>(bi) * mn + cell;
            const double* dg = d_gated.row(row);
            const double* h2 = c.h2.row(row);
            double* dh = d_h2.row(row);
            for (std::size_t ch = 0; ch < cm; ++ch) {
                d_gate(bi, ch) += dg[ch] * h2[ch];
                dh[ch] = dg[ch] * c.gate(bi, ch);
            }
        }
    Matrix d_gate_pre = d_gate;
    for (std::size_t i = 0; i < d_gate_pre.a.size(); ++i) {
        const double s = c.gate.a[i];
        d_gate_pre.a[i] *= s * (1.0 - s);
    }
    add_inplace(g.wg2, matmul_tn(c.gh, d_gate_pre));
    add_inplace(g.bg2, column_sums(d_gate_pre));
    Matrix d_gh = matmul_nt(d_gate_pre, p.wg2);
    relu_mask_inplace(d_gh, c.gh_pre);
    add_inplace(g.wg1, matmul_tn(c.means, d_gh));
    add_inplace(g.bg1, column_sums(d_gh));
    const Matrix d_means = matmul_nt(d_gh, p.wg1);
    const double inv_mn = 1.0 / static_cast<double>(mn);
    for (int bi = 0; bi < c.b; ++bi)
        for (int cell = 0; cell < mn; ++cell) {
            double* dh = d_h2.row(static_cast<std::size_t>(bi) * mn + cell);
            const double* dm = d_means.row(bi);
            for (std::size_t ch = 0; ch < cm; ++ch) dh[ch] += dm[ch] * inv_mn;
        }

    relu_mask_inplace(d_h2, c.h2pre);
    add_inplace(g.k2, matmul_tn(c.g2, d_h2));
    add_inplace(g.b2, column_sums(d_h2));
    Matrix d_h1 = col2im(matmul_nt(d_h2, p.k2), c.b, c.m, c.n, static_cast<int>(c.h1.cols));
    relu_mask_inplace(d_h1, c.h1pre);
    add_inplace(g.k1, matmul_tn(c.g1, d_h1));
    add_inplace(g.b1, column_sums(d_h1));
    return col2im(matmul_nt(d_h1, p.k1), c.b, c.m, c.n, static_cast<int>(c.x.cols));
}

Matrix merge(const Matrix& d_hour, const Matrix& d_day, const Matrix& d_week,
             const Matrix& w_merge, int cells) {
    if (d_hour.rows != d_day.rows || d_hour.rows != d_week.rows ||
        d_hour.cols != d_day.cols || d_hour.cols != d_week.cols)
        throw ShapeMismatch("merge: resolution outputs differ in shape");
    if (w_merge.cols != 1 || w_merge.rows != 3 * d_hour.cols)
        throw ShapeMismatch("merge: weight vector shape");
    if (cells < 1 || d_hour.rows % cells != 0) throw ShapeMismatch("merge: rows not divisible by cells");

    const std::size_t co = d_hour.cols;
    const std::size_t batch = d_hour.rows / cells;
    Matrix xhat(batch, cells);
    for (std::size_t row = 0; row < d_hour.rows; ++row) {
        const double* dh = d_hour.row(row);
        const double* dd = d_day.row(row);
        const double* dw = d_week.row(row);
        double v = 0.0;
        for (std::size_t j = 0; j < co; ++j) {
            v += dh[j] * w_merge(j, 0);
            v += dd[j] * w_merge(co + j, 0);
            v += dw[j] * w_merge(2 * co + j, 0);
        }
        xhat(row / cells, row % cells) = v;
    }
    return xhat;
}

double sum_squared_loss(const Matrix& xhat, const Matrix& target) {
    if (xhat.rows != target.rows || xhat.cols != target.cols)
        throw ShapeMismatch("loss: prediction/target shape mismatch");
    double loss = 0.0;
    for (std::size_t i = 0; i < xhat.a.size(); ++i) {
        const double d = xhat.a[i] - target.a[i];
        loss += d * d;
    }
    return loss;
}

double forward(const ModelState& s, const InputTriplet& trip, ForwardCache& cache) {
    const ModelConfig& cfg = s.config;
    if (trip.cells != cfg.cells()) throw ShapeMismatch("forward: triplet grid does not match model");
    const int batch = static_cast<int>(trip.pivots.size());
    if (batch < 1) throw ShapeMismatch("forward: empty batch");
    const double inv_scale = cfg.normalize ? 1.0 / cfg.norm_scale : 1.0;

    const Matrix* slices[3] = {&trip.x_hour, &trip.x_day, &trip.x_week};
    for (int r = 0; r < 3; ++r) {
        ResCache& rc = cache.res[r];
        rc.x_in = *slices[r];
        if (cfg.normalize) scale_inplace(rc.x_in, inv_scale);
        rc.x_emb = embed(rc.x_in, s.params.w_emb[r]);
        rc.y0 = batch_attention(rc.x_emb, s.params.w_q[r], s.params.w_k[r], s.params.w_v[r],
                                &rc.attn);
        attention_scores(rc.y0, s.params.w_gat[r], s.params.a_gat[r], cfg.leaky_slope, &rc.gat);
        // three propagation layers; each keeps a teleport share of the
        // first-layer features so row identity survives the dense pooling
        const double tp = cfg.gat_teleport;
        rc.y1 = matmul(rc.gat.alpha, rc.gat.g);
        scale_inplace(rc.y1, 1.0 - tp);
        add_scaled(rc.y1, rc.gat.g, tp);
        rc.y2 = matmul(rc.gat.alpha, rc.y1);
        scale_inplace(rc.y2, 1.0 - tp);
        add_scaled(rc.y2, rc.gat.g, tp);
        rc.y3 = matmul(rc.gat.alpha, rc.y2);
        scale_inplace(rc.y3, 1.0 - tp);
        add_scaled(rc.y3, rc.gat.g, tp);
        conv_head_forward(s.params.conv[r], rc.y3, batch, cfg.grid_rows, cfg.grid_cols, &rc.conv);
    }

    const std::size_t rows = cache.res[0].conv.out.rows;
    const std::size_t co = cfg.conv_out;
    cache.concat = Matrix(rows, 3 * co);
    for (std::size_t i = 0; i < rows; ++i) {
        double* dst = cache.concat.row(i);
        for (int r = 0; r < 3; ++r) {
            const double* src = cache.res[r].conv.out.row(i);
            for (std::size_t j = 0; j < co; ++j) dst[r * co + j] = src[j];
        }
    }
    cache.xhat = merge(cache.res[0].conv.out, cache.res[1].conv.out, cache.res[2].conv.out,
                       s.params.w_merge, cfg.cells());
    if (!all_finite(cache.xhat)) throw NonFiniteActivation("prediction not finite");
    cache.target = trip.target;
    if (cfg.normalize) scale_inplace(cache.target, inv_scale);
    cache.batch = batch;
    cache.valid = true;
    return sum_squared_loss(cache.xhat, cache.target);
}

void backward(ModelState& s, const ForwardCache& cache) {
    if (!cache.valid) throw MissingForwardCache("backward without a cached forward pass");
    const ModelConfig& cfg = s.config;
    s.zero_grads();

    const std::size_t rows = cache.concat.rows;
    const std::size_t co = cfg.conv_out;
    Matrix d_xhat_col(rows, 1);
    for (std::size_t i = 0; i < cache.xhat.a.size(); ++i)
        d_xhat_col.a[i] = 2.0 * (cache.xhat.a[i] - cache.target.a[i]);

    add_inplace(s.grads.w_merge, matmul_tn(cache.concat, d_xhat_col));
    const Matrix d_concat = matmul_nt(d_xhat_col, s.params.w_merge);

    for (int r = 0; r < 3; ++r) {
        const ResCache& rc = cache.res[r];
        Matrix d_out(rows, co);
        for (std::size_t i = 0; i < rows; ++i) {
            const double* src = d_concat.row(i);
            double* dst = d_out.row(i);
            for (std::size_t j = 0; j < co; ++j) dst[j] = src[r * co + j];
        }
        Matrix d_y3 = conv_head_backward(s.params.conv[r], s.grads.conv[r], rc.conv, d_out);

        // three propagation layers sharing one score matrix, each with a
        // teleport share of the first-layer features
        const Matrix& alpha = rc.gat.alpha;
        const double tp = cfg.gat_teleport;
        Matrix d_g(rc.gat.g.rows, rc.gat.g.cols);

        Matrix d_agg3 = d_y3;
        scale_inplace(d_agg3, 1.0 - tp);
        add_scaled(d_g, d_y3, tp);
        Matrix d_y2 = matmul_tn(alpha, d_agg3);
        Matrix d_alpha = matmul_nt(d_agg3, rc.y2);

        Matrix d_agg2 = d_y2;
        scale_inplace(d_agg2, 1.0 - tp);
        add_scaled(d_g, d_y2, tp);
        Matrix d_y1 = matmul_tn(alpha, d_agg2);
        add_inplace(d_alpha, matmul_nt(d_agg2, rc.y1));

        Matrix d_agg1 = d_y1;
        scale_inplace(d_agg1, 1.0 - tp);
        add_scaled(d_g, d_y1, tp);
        add_inplace(d_g, matmul_tn(alpha, d_agg1));
        add_inplace(d_alpha, matmul_nt(d_agg1, rc.gat.g));

        // scores: alpha = rowsoftmax(lrelu(left_u + right_v))
        const Matrix d_scores = row_softmax_backward(alpha, d_alpha);
        const std::size_t n = d_scores.rows;
        std::vector<double> d_left(n, 0.0), d_right(n, 0.0);
        for (std::size_t u = 0; u < n; ++u) {
            const double* drow = d_scores.row(u);
            const double lu = rc.gat.left[u];
            for (std::size_t v = 0; v < n; ++v) {
                const double raw = lu + rc.gat.right[v];
                const double dr = drow[v] * (raw > 0.0 ? 1.0 : cfg.leaky_slope);
                d_left[u] += dr;
                d_right[v] += dr;
            }
        }
        const std::size_t gd = cfg.gat_dim;
        Matrix& da = s.grads.a_gat[r];
        for (std::size_t u = 0; u < n; ++u) {
            const double* grow = rc.gat.g.row(u);
            double* dgrow = d_g.row(u);
            const double dl = d_left[u], drt = d_right[u];
            for (std::size_t j = 0; j < gd; ++j) {
                da(j, 0) += dl * grow[j];
                da(gd + j, 0) += drt * grow[j];
                dgrow[j] += dl * s.params.a_gat[r](j, 0) + drt * s.params.a_gat[r](gd + j, 0);
            }
        }
        add_inplace(s.grads.w_gat[r], matmul_tn(rc.y0, d_g));
        Matrix d_y0 = matmul_nt(d_g, s.params.w_gat[r]);

        // attention
        const AttnCache& at = rc.attn;
        Matrix d_probs = matmul_nt(d_y0, at.v);
        Matrix d_v = matmul_tn(at.probs, d_y0);
        Matrix d_s = row_softmax_backward(at.probs, d_probs);
        const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.latent));
        Matrix d_q = matmul(d_s, at.k);
        scale_inplace(d_q, scale);
        Matrix d_k = matmul_tn(d_s, at.q);
        scale_inplace(d_k, scale);

        add_inplace(s.grads.w_q[r], matmul_tn(rc.x_emb, d_q));
        add_inplace(s.grads.w_k[r], matmul_tn(rc.x_emb, d_k));
        add_inplace(s.grads.w_v[r], matmul_tn(rc.x_emb, d_v));
        Matrix d_x_emb = matmul_nt(d_q, s.params.w_q[r]);
        add_inplace(d_x_emb, matmul_nt(d_k, s.params.w_k[r]));
        add_inplace(d_x_emb, matmul_nt(d_v, s.params.w_v[r]));
        add_inplace(s.grads.w_emb[r], matmul_tn(rc.x_in, d_x_emb));
    }
}

void adam_step(ModelState& s) {
    std::vector<Matrix*> ps, gs, ms, vs;
    s.params.for_each([&](const std::string&, Matrix& m, bool) { ps.push_back(&m); });
    s.grads.for_each([&](const std::string&, Matrix& m, bool) { gs.push_back(&m); });
    s.adam_m.for_each([&](const std::string&, Matrix& m, bool) { ms.push_back(&m); });
    s.adam_v.for_each([&](const std::string&, Matrix& m, bool) { vs.push_back(&m); });

    s.adam_steps += 1;
    const double t = static_cast<double>(s.adam_steps);
    const double bc1 = 1.0 - std::pow(s.config.beta1, t);
    const double bc2 = 1.0 - std::pow(s.config.beta2, t);
    for (std::size_t k = 0; k < ps.size(); ++k) {
        Matrix& p = *ps[k];
        Matrix& g = *gs[k];
        Matrix& m = *ms[k];
        Matrix& v = *vs[k];
        for (std::size_t i = 0; i < p.a.size(); ++i) {
            m.a[i] = s.config.beta1 * m.a[i] + (1.0 - s.config.beta1) * g.a[i];
            v.a[i] = s.config.beta2 * v.a[i] + (1.0 - s.config.beta2) * g.a[i] * g.a[i];
            const double mhat = m.a[i] / bc1;
            const double vhat = v.a[i] / bc2;
            p.a[i] -= s.config.lr * mhat / (std::sqrt(vhat) + s.config.adam_eps);
        }
    }
}

void AttentionAccumulator::add(const Matrix& alpha, int batch, int mn) {
    if (alpha.rows != alpha.cols || alpha.rows != static_cast<std::size_t>(batch) * mn)
        throw ShapeMismatch("attention accumulator: score matrix shape");
    if (cells == 0) {
        cells = mn;
        sum = Matrix(mn, mn);
    }
    if (cells != mn) throw ShapeMismatch("attention accumulator: cell count changed");
    for (int b = 0; b < batch; ++b) {
        for (int i = 0; i < mn; ++i) {
            const double* arow = alpha.row(static_cast<std::size_t>(b) * mn + i);
            double* srow = sum.row(i);
            for (int b2 = 0; b2 < batch; ++b2) {
                const double* blk = arow + static_cast<std::size_t>(b2) * mn;
                for (int j = 0; j < mn; ++j) srow[j] += blk[j];
            }
        }
        slices += 1.0;
    }
}

Matrix AttentionAccumulator::mean() const {
    if (slices <= 0.0) throw NoScoresCollected("no attention scores accumulated");
    Matrix m = sum;
    scale_inplace(m, 1.0 / slices);
    return m;
}

namespace {

double resolve_norm_scale(const GridSeries& gs, std::int64_t train_hi) {
    const std::int64_t hi = std::min<std::int64_t>(gs.hours, train_hi);
    double total = 0.0;
    std::size_t n = 0;
    for (int c = 0; c < gs.grid.cells(); ++c)
        for (std::int64_t t = 1; t <= hi; ++t, ++n) total += static_cast<double>(gs.at(c, t));
    const double mean = n > 0 ? total / static_cast<double>(n) : 0.0;
    return std::max(mean, 1e-9);
}

} // namespace

TrainResult train(ModelState& state, const GridSeries& gs, const TrainOptions& opt) {
    ModelConfig& cfg = state.config;
    if (opt.epochs < 0) throw InvalidConfig("epochs must be >= 0");
    if (gs.grid.cells() != cfg.cells()) throw InvalidConfig("grid does not match model config");

    auto [lo, hi] = admissible_pivot_range(gs, cfg.resolution);
    if (opt.pivot_range) {
        lo = std::max(lo, opt.pivot_range->first);
        hi = std::min(hi, opt.pivot_range->second);
    }
    if (hi - lo + 1 < cfg.batch)
        throw InsufficientHistory("not enough admissible pivot times for one batch");

    if (cfg.normalize && cfg.norm_scale <= 0.0)
        cfg.norm_scale = resolve_norm_scale(gs, hi + 1);
    if (state.params.w_merge.empty()) state.init();

    TrainResult result;
    ForwardCache cache;
    const std::int64_t total_steps =
        static_cast<std::int64_t>(opt.epochs) * cfg.steps_per_epoch;
    for (std::int64_t step = 0; step < total_steps; ++step) {
        const std::uint64_t batch_seed = Rng::mix(cfg.seed, 0xB000 + static_cast<std::uint64_t>(step));
        const InputTriplet trip =
            sample_batch(gs, cfg.resolution, cfg.batch, batch_seed, std::make_pair(lo, hi));
        const double loss = forward(state, trip, cache);
        if (!std::isfinite(loss))
            throw NonFiniteLoss("loss diverged at step " + std::to_string(step));
        backward(state, cache);
        adam_step(state);
        result.loss_trace.emplace_back(step, loss);
        if (!opt.checkpoint_dir.empty() && opt.checkpoint_every > 0 &&
            (step + 1) % opt.checkpoint_every == 0) {
            save_checkpoint(opt.checkpoint_dir + "/checkpoint_step" + std::to_string(step + 1) +
                                ".json",
                            state);
        }
    }
    return result;
}

ModelState train_model(const GridSeries& gs, const ModelConfig& cfg, const TrainOptions& opt,
                       TrainResult* result) {
    ModelState state;
    state.config = cfg;
    state.init();
    TrainResult r = train(state, gs, opt);
    if (result) *result = std::move(r);
    return state;
}

Matrix predict(const ModelState& s, const GridSeries& gs, const std::vector<std::int64_t>& pivots,
               AttentionAccumulator* attn) {
    const ModelConfig& cfg = s.config;
    if (pivots.empty()) throw InvalidConfig("no pivot times requested");
    auto [lo, hi] = admissible_pivot_range(gs, cfg.resolution);
    for (std::int64_t t : pivots)
        if (t < lo || t > hi)
            throw InsufficientHistory("pivot " + std::to_string(t) + " outside admissible range [" +
                                      std::to_string(lo) + ", " + std::to_string(hi) + "]");

    Matrix out(pivots.size(), cfg.cells());
    ForwardCache cache;
    for (std::size_t begin = 0; begin < pivots.size(); begin += cfg.batch) {
        const std::size_t end = std::min(pivots.size(), begin + cfg.batch);
        const std::vector<std::int64_t> chunk(pivots.begin() + begin, pivots.begin() + end);
        const InputTriplet trip = make_triplet(gs, cfg.resolution, chunk);
        forward(s, trip, cache);
        const double scale = cfg.normalize ? cfg.norm_scale : 1.0;
        for (std::size_t b = 0; b < chunk.size(); ++b)
            for (int i = 0; i < cfg.cells(); ++i) out(begin + b, i) = cache.xhat(b, i) * scale;
        if (attn)
            for (int r = 0; r < 3; ++r)
                attn->add(cache.res[r].gat.alpha, static_cast<int>(chunk.size()), cfg.cells());
    }
    return out;
}

namespace {

nlohmann::json config_to_json(const ModelConfig& c) {
    return {
        {"grid_rows", c.grid_rows},
        {"grid_cols", c.grid_cols},
        {"batch", c.batch},
        {"tau_hour", c.resolution.tau_hour},
        {"tau_day", c.resolution.tau_day},
        {"tau_week", c.resolution.tau_week},
        {"latent", c.latent},
        {"gat_dim", c.gat_dim},
        {"conv_mid", c.conv_mid},
        {"gate_hidden", c.gate_hidden},
        {"conv_out", c.conv_out},
        {"leaky_slope", c.leaky_slope},
        {"gat_teleport", c.gat_teleport},
        {"normalize", c.normalize},
        {"norm_scale", c.norm_scale},
        {"lr", c.lr},
        {"beta1", c.beta1},
        {"beta2", c.beta2},
        {"adam_eps", c.adam_eps},
        {"steps_per_epoch", c.steps_per_epoch},
        {"seed", c.seed},
    };
}

ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.grid_rows = j.at("grid_rows").get<int>();
    c.grid_cols = j.at("grid_cols").get<int>();
    c.batch = j.at("batch").get<int>();
    c.resolution.tau_hour = j.at("tau_hour").get<int>();
    c.resolution.tau_day = j.at("tau_day").get<int>();
    c.resolution.tau_week = j.at("tau_week").get<int>();
    c.latent = j.at("latent").get<int>();
    c.gat_dim = j.at("gat_dim").get<int>();
    c.conv_mid = j.at("conv_mid").get<int>();
    c.gate_hidden = j.at("gate_hidden").get<int>();
    c.conv_out = j.at("conv_out").get<int>();
    c.leaky_slope = j.at("leaky_slope").get<double>();
    c.gat_teleport = j.at("gat_teleport").get<double>();
    c.normalize = j.at("normalize").get<bool>();
    c.norm_scale = j.at("norm_scale").get<double>();
    c.lr = j.at("lr").get<double>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.adam_eps = j.at("adam_eps").get<double>();
    c.steps_per_epoch = j.at("steps_per_epoch").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

} // namespace

void save_checkpoint(const std::string& path, const ModelState& s) {
    nlohmann::json j;
    j["format"] = "cartoflow-checkpoint";
    j["version"] = 1;
    j["config"] = config_to_json(s.config);
    nlohmann::json tensors = nlohmann::json::array();
    s.params.for_each([&](const std::string& name, const Matrix& m, bool) {
        tensors.push_back({{"name", name}, {"shape", {m.rows, m.cols}}, {"data", m.a}});
    });
    j["tensors"] = std::move(tensors);
    std::ofstream f(path);
    if (!f) throw InvalidConfig("cannot write " + path);
    f << j.dump() << "\n";
}

ModelState load_checkpoint(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw InvalidConfig("cannot read " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        throw SchemaError("checkpoint parse error: " + std::string(e.what()));
    }
    if (j.value("format", "") != "cartoflow-checkpoint")
        throw SchemaError("not a checkpoint file: " + path);
    if (j.value("version", 0) != 1) throw SchemaError("unsupported checkpoint version");

    ModelState s;
    s.config = config_from_json(j.at("config"));
    s.init();

    std::map<std::string, const nlohmann::json*> by_name;
    for (const auto& t : j.at("tensors")) by_name[t.at("name").get<std::string>()] = &t;
    s.params.for_each([&](const std::string& name, Matrix& m, bool) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw SchemaError("checkpoint missing tensor " + name);
        const nlohmann::json& t = *it->second;
        const auto shape = t.at("shape").get<std::vector<std::size_t>>();
        if (shape.size() != 2 || shape[0] != m.rows || shape[1] != m.cols)
            throw SchemaError("checkpoint tensor " + name + " has wrong shape");
        const auto data = t.at("data").get<std::vector<double>>();
        if (data.size() != m.a.size()) throw SchemaError("checkpoint tensor " + name + " size");
        m.a = data;
    });
    return s;
}

void save_loss_trace_csv(const std::string& path, const TrainResult& r) {
    std::ofstream f(path);
    if (!f) throw InvalidConfig("cannot write " + path);
    f << "step,loss\n";
    char buf[64];
    for (const auto& [step, loss] : r.loss_trace) {
        std::snprintf(buf, sizeof(buf), "%lld,%.17g\n", static_cast<long long>(step), loss);
        f << buf;
    }
}

} // namespace cartoflow
