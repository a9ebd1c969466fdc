#pragma once

// Independent correctness oracles. Everything here goes through dense linear
// algebra (Eigen) or direct summation, never through the flow's own
// log-density path, so agreement between the two routes is meaningful.

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "plmcmc/matrix.hpp"
#include "plmcmc/sample.hpp"

namespace plmcmc {

struct GaussianConditional {
    std::vector<int> missing;  // coordinate order of mean/cov
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

/// Closed-form conditional of x ~ N(b, A A^T) given observed coordinates.
inline GaussianConditional gaussian_conditional(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                                                const std::vector<std::pair<int, double>>& observed) {
    const int d = static_cast<int>(A.rows());
    if (A.cols() != d || b.size() != d)
        throw std::invalid_argument("gaussian_conditional: A must be square, b of matching size");
    Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
    if (!lu.isInvertible())
        throw std::invalid_argument("gaussian_conditional: A is singular");

    std::vector<char> is_obs(d, 0);
    for (auto [i, v] : observed) {
        if (i < 0 || i >= d) throw std::invalid_argument("gaussian_conditional: index out of range");
        is_obs[i] = 1;
    }
    GaussianConditional out;
    std::vector<int> obs_idx;
    for (int i = 0; i < d; ++i) (is_obs[i] ? obs_idx : out.missing).push_back(i);
    const int nm = static_cast<int>(out.missing.size());
    const int no = static_cast<int>(obs_idx.size());

    const Eigen::MatrixXd sigma = A * A.transpose();
    if (no == 0) {
        out.mean = Eigen::VectorXd(nm);
        for (int i = 0; i < nm; ++i) out.mean(i) = b(out.missing[i]);
        out.cov = sigma;
        return out;
    }

    Eigen::MatrixXd s_mm(nm, nm), s_mo(nm, no), s_oo(no, no);
    Eigen::VectorXd delta(no), b_m(nm);
    for (int i = 0; i < nm; ++i) {
        b_m(i) = b(out.missing[i]);
        for (int j = 0; j < nm; ++j) s_mm(i, j) = sigma(out.missing[i], out.missing[j]);
        for (int j = 0; j < no; ++j) s_mo(i, j) = sigma(out.missing[i], obs_idx[j]);
    }
    for (int i = 0; i < no; ++i)
        for (int j = 0; j < no; ++j) s_oo(i, j) = sigma(obs_idx[i], obs_idx[j]);
    for (auto [i, v] : observed) {
        for (int j = 0; j < no; ++j)
            if (obs_idx[j] == i) delta(j) = v - b(i);
    }

    const Eigen::MatrixXd gain = s_mo * s_oo.llt().solve(Eigen::MatrixXd::Identity(no, no));
    out.mean = b_m + gain * delta;
    out.cov = s_mm - gain * s_mo.transpose();
    return out;
}

/// Multivariate normal log-density via Cholesky, independent of any flow code.
inline double mvn_logpdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                         const Eigen::MatrixXd& cov) {
    const int d = static_cast<int>(x.size());
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success)
        throw std::invalid_argument("mvn_logpdf: covariance not positive definite");
    const Eigen::VectorXd delta = x - mean;
    const Eigen::VectorXd z = llt.matrixL().solve(delta);
    double log_det_half = 0.0;
    for (int i = 0; i < d; ++i) log_det_half += std::log(llt.matrixL()(i, i));
    return -0.5 * z.squaredNorm() - log_det_half -
           0.5 * d * 1.8378770664093454835606594728112;  // log(2 pi)
}

/// Numerically extract (A, b) from a flow whose coupling nets are linear
/// (hidden-layer-free), by probing basis vectors through `forward`.
struct AffineMap {
    Eigen::MatrixXd A;
    Eigen::VectorXd b;
};

inline AffineMap extract_affine(const FlowModel& m) {
    const int d = m.dim;
    AffineMap out;
    out.A.resize(d, d);
    out.b.resize(d);
    std::vector<double> zero(d, 0.0);
    const auto f0 = forward(m, zero).value;
    for (int i = 0; i < d; ++i) out.b(i) = f0[i];
    for (int j = 0; j < d; ++j) {
        std::vector<double> e(d, 0.0);
        e[j] = 1.0;
        const auto fj = forward(m, e).value;
        for (int i = 0; i < d; ++i) out.A(i, j) = fj[i] - f0[i];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Brute-force grid conditional (<= 2 missing coordinates)
// ---------------------------------------------------------------------------

struct GridSpec {
    std::vector<double> lo, hi;  // one entry per missing coordinate
    int points = 2001;
};

/// Default grid: +-8 prior standard deviations per missing axis, 2001 points.
inline GridSpec default_grid(const FlowModel& m, int n_missing) {
    GridSpec g;
    const double r = 8.0 * prior_std(m.prior);
    g.lo.assign(n_missing, -r);
    g.hi.assign(n_missing, r);
    return g;
}

struct DiscreteDist {
    std::vector<std::vector<double>> axes;  // grid per missing coordinate
    std::vector<double> p;                  // row-major over axes, normalized

    double total() const {
        double s = 0.0;
        for (double v : p) s += v;
        return s;
    }
    std::vector<double> marginal(int axis) const {
        if (axes.size() == 1) return p;
        const int n0 = static_cast<int>(axes[0].size()), n1 = static_cast<int>(axes[1].size());
        std::vector<double> out(axis == 0 ? n0 : n1, 0.0);
        for (int i = 0; i < n0; ++i)
            for (int j = 0; j < n1; ++j) out[axis == 0 ? i : j] += p[static_cast<size_t>(i) * n1 + j];
        return out;
    }
    double mean(int axis) const {
        auto m = marginal(axis);
        double s = 0.0;
        for (size_t i = 0; i < m.size(); ++i) s += m[i] * axes[axis][i];
        return s;
    }
    double var(int axis) const {
        auto m = marginal(axis);
        const double mu = mean(axis);
        double s = 0.0;
        for (size_t i = 0; i < m.size(); ++i) s += m[i] * (axes[axis][i] - mu) * (axes[axis][i] - mu);
        return s;
    }
};

/// Evaluates p(y_M; x_O) over the grid and normalizes: the exact conditional
/// distribution of the missing coordinates at grid resolution.
inline DiscreteDist grid_conditional(const FlowModel& m, const MaskedSample& s, const GridSpec& g) {
    const int nm = static_cast<int>(s.missing.size());
    if (nm < 1 || nm > 2)
        throw std::invalid_argument("grid_conditional: supports 1 or 2 missing coordinates");
    if (static_cast<int>(g.lo.size()) != nm || static_cast<int>(g.hi.size()) != nm || g.points < 2)
        throw std::invalid_argument("grid_conditional: bad grid spec");

    DiscreteDist out;
    for (int a = 0; a < nm; ++a) {
        std::vector<double> axis(g.points);
        const double step = (g.hi[a] - g.lo[a]) / (g.points - 1);
        for (int i = 0; i < g.points; ++i) axis[i] = g.lo[a] + step * i;
        out.axes.push_back(std::move(axis));
    }

    std::vector<double> x(m.dim, 0.0);
    s.project(x, x);  // fill observed block once; missing block overwritten below
    std::vector<double> logp;
    if (nm == 1) {
        logp.resize(g.points);
        for (int i = 0; i < g.points; ++i) {
            x[s.missing[0]] = out.axes[0][i];
            logp[i] = log_prob(m, x);
        }
    } else {
        logp.resize(static_cast<size_t>(g.points) * g.points);
        for (int i = 0; i < g.points; ++i) {
            x[s.missing[0]] = out.axes[0][i];
            for (int j = 0; j < g.points; ++j) {
                x[s.missing[1]] = out.axes[1][j];
                logp[static_cast<size_t>(i) * g.points + j] = log_prob(m, x);
            }
        }
    }
    double mx = logp[0];
    for (double v : logp) mx = std::max(mx, v);
    out.p.resize(logp.size());
    double total = 0.0;
    for (size_t i = 0; i < logp.size(); ++i) {
        out.p[i] = std::exp(logp[i] - mx);
        total += out.p[i];
    }
    for (double& v : out.p) v /= total;
    return out;
}

// ---------------------------------------------------------------------------
// Appendix-style KL identities on discrete joint tables
// ---------------------------------------------------------------------------

namespace detail {
inline void check_joint(const Mat& t, const char* who) {
    double s = 0.0;
    for (double v : t.a) {
        if (!(v > 0.0)) throw std::invalid_argument(std::string(who) + ": table must be strictly positive");
        s += v;
    }
    if (std::abs(s - 1.0) > 1e-9)
        throw std::invalid_argument(std::string(who) + ": table must be normalized");
}
}  // namespace detail

struct KlDecomposition {
    double lhs = 0.0;          // D(p_xy || q_xy)
    double rhs = 0.0;          // E_x[ D(p_y|x || q_y|x) ]
    double slack = 0.0;        // lhs - rhs
    double marginal_kl = 0.0;  // D(p_x || q_x), the identity value of the slack
};

/// D(p_xy||q_xy) = E_x[D(p_y|x||q_y|x)] + D(p_x||q_x); slack must be >= 0.
/// Rows index x, columns index y.
inline KlDecomposition kl_decomposition_check(const Mat& p, const Mat& q) {
    if (p.rows != q.rows || p.cols != q.cols)
        throw std::invalid_argument("kl_decomposition_check: shape mismatch");
    detail::check_joint(p, "kl_decomposition_check(p)");
    detail::check_joint(q, "kl_decomposition_check(q)");
    KlDecomposition out;
    std::vector<double> px(p.rows, 0.0), qx(p.rows, 0.0);
    for (int i = 0; i < p.rows; ++i)
        for (int j = 0; j < p.cols; ++j) {
            px[i] += p.at(i, j);
            qx[i] += q.at(i, j);
            out.lhs += p.at(i, j) * std::log(p.at(i, j) / q.at(i, j));
        }
    for (int i = 0; i < p.rows; ++i) {
        double d = 0.0;
        for (int j = 0; j < p.cols; ++j) {
            const double pc = p.at(i, j) / px[i];
            const double qc = q.at(i, j) / qx[i];
            d += pc * std::log(pc / qc);
        }
        out.rhs += px[i] * d;
        out.marginal_kl += px[i] * std::log(px[i] / qx[i]);
    }
    out.slack = out.lhs - out.rhs;
    return out;
}

struct KlImprovement {
    double imputed = 0.0;   // D(p_xy || q_y|x * p_x)
    double original = 0.0;  // D(p_xy || q_xy)
    bool holds = false;     // imputed <= original (+ tolerance)
};

/// The MC-EM justification: imputing with q's conditionals cannot increase the
/// divergence from the ground-truth joint.
inline KlImprovement imputation_kl_improvement_check(const Mat& p, const Mat& q,
                                                     double tol = 1e-12) {
    const KlDecomposition d = kl_decomposition_check(p, q);
    KlImprovement out;
    out.imputed = d.rhs;  // D(p||q_y|x p_x) = E_x[D(p_y|x||q_y|x)]
    out.original = d.lhs;
    out.holds = out.imputed <= out.original + tol;
    return out;
}

}  // namespace plmcmc
