#pragma once

#include <cassert>
#include <cstring>
#include <span>
#include <vector>

namespace plmcmc {

/// Row-major dense matrix of doubles. Rows are samples, columns attributes.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {}

    double* row(int r) { return a.data() + static_cast<size_t>(r) * cols; }
    const double* row(int r) const { return a.data() + static_cast<size_t>(r) * cols; }
    std::span<double> row_span(int r) { return {row(r), static_cast<size_t>(cols)}; }
    std::span<const double> row_span(int r) const { return {row(r), static_cast<size_t>(cols)}; }

    double& at(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }

    void resize(int r, int c) {
        rows = r;
        cols = c;
        a.assign(static_cast<size_t>(r) * c, 0.0);
    }
};

/// Y[b,o] = sum_k X[b,k] * W[o,k] + bias[o].  W is row-major [out x in].
inline void linear_forward(const Mat& x, std::span<const double> w,
                           std::span<const double> bias, Mat& y) {
    const int in = x.cols, out = static_cast<int>(bias.size());
    assert(static_cast<int>(w.size()) == in * out);
    y.resize(x.rows, out);
    for (int b = 0; b < x.rows; ++b) {
        const double* xb = x.row(b);
        double* yb = y.row(b);
        for (int o = 0; o < out; ++o) {
            const double* wo = w.data() + static_cast<size_t>(o) * in;
            double s = bias[o];
            for (int k = 0; k < in; ++k) s += wo[k] * xb[k];
            yb[o] = s;
        }
    }
}

inline void relu_inplace(Mat& m) {
    for (double& v : m.a) v = v > 0.0 ? v : 0.0;
}

}  // namespace plmcmc
