#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "cartoflow/rng.hpp"

namespace cartoflow {

// Dense row-major double matrix. Deliberately small surface: the model
// code spells out its own loops where the math is the point, and uses
// the kernels below where it is not.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> a;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}
    Matrix(std::size_t r, std::size_t c, double fill) : rows(r), cols(c), a(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return a[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return a[r * cols + c]; }
    double* row(std::size_t r) { return a.data() + r * cols; }
    const double* row(std::size_t r) const { return a.data() + r * cols; }
    std::size_t size() const { return a.size(); }
    bool empty() const { return a.empty(); }

    void fill(double v) { a.assign(a.size(), v); }

    static Matrix gaussian(std::size_t r, std::size_t c, double stddev, Rng& rng) {
        Matrix m(r, c);
        for (double& v : m.a) v = rng.normal(0.0, stddev);
        return m;
    }
};

// Thread cap for the matmul kernels, from CARTOFLOW_THREADS (default 1).
// Work is partitioned over output rows, so results are bit-identical for
// any thread count.
int thread_count();
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

Matrix matmul(const Matrix& A, const Matrix& B);    // A * B
Matrix matmul_tn(const Matrix& A, const Matrix& B); // A^T * B
Matrix matmul_nt(const Matrix& A, const Matrix& B); // A * B^T

void add_inplace(Matrix& dst, const Matrix& src);
void add_scaled(Matrix& dst, const Matrix& src, double s);

// Row-wise softmax with max subtraction; finite for arbitrarily large inputs.
Matrix row_softmax(const Matrix& z);
// Gradient through row_softmax: given soft = row_softmax(z) and dL/dsoft,
// returns dL/dz.
Matrix row_softmax_backward(const Matrix& soft, const Matrix& grad);

bool all_finite(const Matrix& m);

} // namespace cartoflow
