#include "cartoflow/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <thread>

#include "cartoflow/errors.hpp"

namespace cartoflow {

int thread_count() {
    static const int cached = [] {
        const char* env = std::getenv("CARTOFLOW_THREADS");
        if (!env) return 1;
        int n = std::atoi(env);
        if (n < 1) n = 1;
        int hw = static_cast<int>(std::thread::hardware_concurrency());
        if (hw > 0 && n > hw) n = hw;
        return n;
    }();
    return cached;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body) {
    const int nt = thread_count();
    if (nt <= 1 || n < 64) {
        body(0, n);
        return;
    }
    const std::size_t chunks = static_cast<std::size_t>(nt);
    const std::size_t step = (n + chunks - 1) / chunks;
    std::vector<std::thread> workers;
    workers.reserve(chunks);
    for (std::size_t begin = 0; begin < n; begin += step) {
        const std::size_t end = std::min(n, begin + step);
        workers.emplace_back([&body, begin, end] { body(begin, end); });
    }
    for (auto& w : workers) w.join();
}

namespace {

void require(bool ok, const char* what) {
    if (!ok) throw ShapeMismatch(what);
}

} // namespace

Matrix matmul(const Matrix& A, const Matrix& B) {
    require(A.cols == B.rows, "matmul: inner dimensions differ");
    Matrix C(A.rows, B.cols);
    parallel_for(A.rows, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            const double* arow = A.row(i);
            double* crow = C.row(i);
            for (std::size_t k = 0; k < A.cols; ++k) {
                const double aik = arow[k];
                if (aik == 0.0) continue;
                const double* brow = B.row(k);
                for (std::size_t j = 0; j < B.cols; ++j) crow[j] += aik * brow[j];
            }
        }
    });
    return C;
}

Matrix matmul_tn(const Matrix& A, const Matrix& B) {
    require(A.rows == B.rows, "matmul_tn: row counts differ");
    Matrix C(A.cols, B.cols);
    // C[i][j] = sum_k A[k][i] * B[k][j]; partition over i keeps the
    // accumulation order fixed per output entry.
    parallel_for(A.cols, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t k = 0; k < A.rows; ++k) {
            const double* arow = A.row(k);
            const double* brow = B.row(k);
            for (std::size_t i = lo; i < hi; ++i) {
                const double aki = arow[i];
                if (aki == 0.0) continue;
                double* crow = C.row(i);
                for (std::size_t j = 0; j < B.cols; ++j) crow[j] += aki * brow[j];
            }
        }
    });
    return C;
}

Matrix matmul_nt(const Matrix& A, const Matrix& B) {
    require(A.cols == B.cols, "matmul_nt: column counts differ");
    Matrix C(A.rows, B.rows);
    parallel_for(A.rows, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            const double* arow = A.row(i);
            double* crow = C.row(i);
            for (std::size_t j = 0; j < B.rows; ++j) {
                const double* brow = B.row(j);
                double s = 0.0;
                for (std::size_t k = 0; k < A.cols; ++k) s += arow[k] * brow[k];
                crow[j] = s;
            }
        }
    });
    return C;
}

void add_inplace(Matrix& dst, const Matrix& src) {
    require(dst.rows == src.rows && dst.cols == src.cols, "add_inplace: shape mismatch");
    for (std::size_t i = 0; i < dst.a.size(); ++i) dst.a[i] += src.a[i];
}

void add_scaled(Matrix& dst, const Matrix& src, double s) {
    require(dst.rows == src.rows && dst.cols == src.cols, "add_scaled: shape mismatch");
    for (std::size_t i = 0; i < dst.a.size(); ++i) dst.a[i] += s * src.a[i];
}

Matrix row_softmax(const Matrix& z) {
    Matrix p(z.rows, z.cols);
    for (std::size_t i = 0; i < z.rows; ++i) {
        const double* zr = z.row(i);
        double* pr = p.row(i);
        double m = zr[0];
        for (std::size_t j = 1; j < z.cols; ++j) m = std::max(m, zr[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < z.cols; ++j) {
            pr[j] = std::exp(zr[j] - m);
            sum += pr[j];
        }
        const double inv = 1.0 / sum;
        for (std::size_t j = 0; j < z.cols; ++j) pr[j] *= inv;
    }
    return p;
}

Matrix row_softmax_backward(const Matrix& soft, const Matrix& grad) {
    require(soft.rows == grad.rows && soft.cols == grad.cols, "softmax backward: shape mismatch");
    Matrix dz(soft.rows, soft.cols);
    for (std::size_t i = 0; i < soft.rows; ++i) {
        const double* p = soft.row(i);
        const double* g = grad.row(i);
        double* d = dz.row(i);
        double dot = 0.0;
        for (std::size_t j = 0; j < soft.cols; ++j) dot += p[j] * g[j];
        for (std::size_t j = 0; j < soft.cols; ++j) d[j] = (g[j] - dot) * p[j];
    }
    return dz;
}

bool all_finite(const Matrix& m) {
    for (double v : m.a)
        if (!std::isfinite(v)) return false;
    return true;
}

} // namespace cartoflow
