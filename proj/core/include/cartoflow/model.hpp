#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cartoflow/dataset.hpp"
#include "cartoflow/matrix.hpp"

namespace cartoflow {

// Forecasting network: per resolution, lag windows are embedded into a
// latent space, mixed by scaled dot-product attention jointly over all
// cells and all pivot times of the batch, scored and propagated through
// a three-layer graph attention stage (scores computed once, first layer
// applies the projection, later layers aggregate only), pushed through a
// small convolutional head with a channel gate, and finally merged across
// resolutions into one next-hour value per cell.
struct ModelConfig {
    int grid_rows = 0; // M
    int grid_cols = 0; // N
    int batch = 16;    // B
    ResolutionConfig resolution;
    int latent = 32;      // attention width L
    int gat_dim = 32;     // node-feature width after the first graph layer
    int conv_mid = 16;    // conv channels
    int gate_hidden = 8;  // channel-gate hidden width
    int conv_out = 8;     // channels entering the merge
    double leaky_slope = 0.2;
    // Personalized-propagation teleport: each graph layer keeps this share
    // of the first-layer features (0 = pure score aggregation). Without it
    // the dense score matrix pools all rows together and per-cell identity
    // cannot reach the output.
    double gat_teleport = 0.2;
    bool normalize = false; // scale inputs/targets by 1/norm_scale during training
    double norm_scale = 1.0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int steps_per_epoch = 1000;
    std::uint64_t seed = 1;

    int cells() const { return grid_rows * grid_cols; }
    void validate() const;
};

struct ConvHeadParams {
    Matrix k1, b1; // 3x3 conv: (9*c_in) x c_mid, 1 x c_mid
    Matrix k2, b2; // 3x3 conv: (9*c_mid) x c_mid
    Matrix wg1, bg1, wg2, bg2; // channel gate over per-image channel means
    Matrix wp, bp; // 1x1 projection to c_out
};

struct ParamSet {
    std::array<Matrix, 3> w_emb;  // tau_r x L
    std::array<Matrix, 3> w_q, w_k, w_v; // L x L
    std::array<Matrix, 3> w_gat;  // L x L'
    std::array<Matrix, 3> a_gat;  // (2L') x 1 scoring vector
    std::array<ConvHeadParams, 3> conv;
    Matrix w_merge; // (3*c_out) x 1, shared across cells

    template <class Self, class F> static void visit(Self& self, F&& f) {
        static constexpr const char* sfx[3] = {"h", "d", "w"};
        for (int r = 0; r < 3; ++r) {
            const std::string s = sfx[r];
            f("emb_" + s, self.w_emb[r], false);
            f("attn_q_" + s, self.w_q[r], false);
            f("attn_k_" + s, self.w_k[r], false);
            f("attn_v_" + s, self.w_v[r], false);
            f("gat_w0_" + s, self.w_gat[r], false);
            f("gat_a_" + s, self.a_gat[r], false);
            f("conv_k1_" + s, self.conv[r].k1, false);
            f("conv_b1_" + s, self.conv[r].b1, true);
            f("conv_k2_" + s, self.conv[r].k2, false);
            f("conv_b2_" + s, self.conv[r].b2, true);
            f("gate_w1_" + s, self.conv[r].wg1, false);
            f("gate_b1_" + s, self.conv[r].bg1, true);
            f("gate_w2_" + s, self.conv[r].wg2, false);
            f("gate_b2_" + s, self.conv[r].bg2, true);
            f("proj_w_" + s, self.conv[r].wp, false);
            f("proj_b_" + s, self.conv[r].bp, true);
        }
        f(std::string("merge_w"), self.w_merge, false);
    }
    template <class F> void for_each(F&& f) { visit(*this, std::forward<F>(f)); }
    template <class F> void for_each(F&& f) const { visit(*this, std::forward<F>(f)); }
};

struct AttnCache {
    Matrix q, k, v;
    Matrix probs; // row-softmaxed (MNB x MNB)
};

struct GatScoreCache {
    Matrix g;                     // y * W0
    std::vector<double> left, right; // per-row score halves
    Matrix alpha;
};

struct ConvCache {
    int b = 0, m = 0, n = 0;
    Matrix x, g1, h1pre, h1, g2, h2pre, h2;
    Matrix means, gh_pre, gh, gate_pre, gate;
    Matrix gated, out;
};

struct ResCache {
    Matrix x_in;  // (B*MN) x tau, normalized when enabled
    Matrix x_emb;
    AttnCache attn;
    Matrix y0;
    GatScoreCache gat;
    Matrix y1, y2, y3;
    ConvCache conv;
};

struct ForwardCache {
    std::array<ResCache, 3> res;
    Matrix concat; // (B*MN) x 3*c_out
    Matrix xhat;   // B x MN
    Matrix target; // B x MN
    int batch = 0;
    bool valid = false;
};

struct ModelState {
    ModelConfig config;
    ParamSet params;
    ParamSet grads;
    ParamSet adam_m, adam_v;
    std::int64_t adam_steps = 0;

    void init(); // allocates and draws Gaussian weights from config.seed
    void zero_grads();
};

// --- building blocks (also the unit-test surface) ---

// Row u of the result is the lag window of row u times w_emb.
Matrix embed(const Matrix& x, const Matrix& w_emb);

// rowsoftmax(Q K^T / sqrt(L)) V over all rows jointly; with one pivot time
// this is plain self-attention over the cells.
Matrix batch_attention(const Matrix& x_emb, const Matrix& w_q, const Matrix& w_k,
                       const Matrix& w_v, AttnCache* cache = nullptr);

// Pairwise scores softmax_v(LeakyReLU(a^T [W0 y_u || W0 y_v])); every row
// sums to one.
Matrix attention_scores(const Matrix& y, const Matrix& w_gat, const Matrix& a_gat,
                        double leaky_slope, GatScoreCache* cache = nullptr);

// layer_index 1 applies the projection (alpha * (y * w_gat)); layers 2 and 3
// aggregate without it (alpha * y).
Matrix gat_layer(const Matrix& y, const Matrix& alpha, int layer_index, const Matrix& w_gat);

Matrix conv_head_forward(const ConvHeadParams& p, const Matrix& x, int b, int m, int n,
                         ConvCache* cache = nullptr);
// Returns d(loss)/d(input); parameter gradients are accumulated into g.
Matrix conv_head_backward(const ConvHeadParams& p, ConvHeadParams& g, const ConvCache& cache,
                          const Matrix& d_out);

// Concatenates the three conv outputs per (pivot, cell) row and applies the
// shared merge vector; result is B x MN.
Matrix merge(const Matrix& d_hour, const Matrix& d_day, const Matrix& d_week,
             const Matrix& w_merge, int cells);

// Sum of squared errors over all entries (a sum, not a mean).
double sum_squared_loss(const Matrix& xhat, const Matrix& target);

// --- full network ---

double forward(const ModelState& s, const InputTriplet& trip, ForwardCache& cache);
void backward(ModelState& s, const ForwardCache& cache);
void adam_step(ModelState& s);

// Running cell-level average of attention scores; every (batch, pivot)
// row-block contributes one row-stochastic MN x MN slice.
struct AttentionAccumulator {
    int cells = 0;
    Matrix sum;
    double slices = 0.0;

    void add(const Matrix& alpha, int batch, int mn);
    Matrix mean() const; // throws NoScoresCollected when empty
};

struct TrainOptions {
    int epochs = 1;
    std::optional<std::pair<std::int64_t, std::int64_t>> pivot_range;
    std::string checkpoint_dir; // when set, periodic + final checkpoints land here
    int checkpoint_every = 0;   // steps; 0 keeps only the final checkpoint
};

struct TrainResult {
    std::vector<std::pair<std::int64_t, double>> loss_trace; // (step, loss)
};

// Initializes the state from cfg (resolving norm_scale from the training
// region when normalization is on) and runs epochs * steps_per_epoch Adam
// steps. Deterministic for a fixed seed and thread count.
TrainResult train(ModelState& state, const GridSeries& gs, const TrainOptions& opt);
ModelState train_model(const GridSeries& gs, const ModelConfig& cfg, const TrainOptions& opt,
                       TrainResult* result = nullptr);

// Predictions in count units, one row per pivot, batched internally in
// groups of config.batch.
Matrix predict(const ModelState& s, const GridSeries& gs, const std::vector<std::int64_t>& pivots,
               AttentionAccumulator* attn = nullptr);

void save_checkpoint(const std::string& path, const ModelState& s);
ModelState load_checkpoint(const std::string& path);
void save_loss_trace_csv(const std::string& path, const TrainResult& r);

} // namespace cartoflow
