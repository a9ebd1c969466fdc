#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include <Eigen/Dense>

#include "plmcmc/flow.hpp"
#include "plmcmc/io.hpp"
#include "plmcmc/oracles.hpp"
#include "test_util.hpp"

using namespace plmcmc;
using Catch::Approx;

TEST_CASE("zero-initialized model is the identity map", "[flow]") {
    auto m = testutil::zeroed(testutil::random_flow(4, 6, 8, 1, PriorKind::Normal, 11));
    std::vector<double> xi = {0.3, -1.2, 2.5, 0.0};
    auto e = forward(m, xi);
    REQUIRE(e.logdet == 0.0);
    for (int i = 0; i < 4; ++i) REQUIRE(e.value[i] == xi[i]);

    auto inv = inverse(m, std::vector<double>{0.3, -1.2, 2.5, 0.0});
    REQUIRE(inv.logdet == 0.0);
    for (int i = 0; i < 4; ++i) REQUIRE(inv.value[i] == xi[i]);
}

TEST_CASE("pure scaling layer", "[flow]") {
    auto m = testutil::scaling_flow({std::log(2.0), std::log(2.0)});
    auto e = forward(m, std::vector<double>{1.0, 1.0});
    REQUIRE(e.value[0] == Approx(2.0));
    REQUIRE(e.value[1] == Approx(2.0));
    REQUIRE(e.logdet == Approx(2.0 * std::log(2.0)));

    auto inv = inverse(m, std::vector<double>{2.0, 2.0});
    REQUIRE(inv.value[0] == Approx(1.0));
    REQUIRE(inv.value[1] == Approx(1.0));
    REQUIRE(inv.logdet == Approx(-2.0 * std::log(2.0)));
}

TEST_CASE("round-trip: inverse(forward(xi)) = xi", "[flow]") {
    Rng rng(99);
    for (int dim : {2, 3, 4, 5, 6, 8}) {
        auto m = testutil::random_flow(dim, 5, 12, 1, dim % 2 ? PriorKind::Normal : PriorKind::Logistic,
                                       1000 + dim);
        for (int rep = 0; rep < 50; ++rep) {
            std::vector<double> xi(dim);
            for (double& v : xi) v = 3.0 * rng.normal();
            auto fwd = forward(m, xi);
            auto back = inverse(m, fwd.value);
            REQUIRE(back.logdet == Approx(-fwd.logdet).margin(1e-12));
            double scale = 1.0;
            for (double v : xi) scale = std::max(scale, std::abs(v));
            for (int i = 0; i < dim; ++i)
                REQUIRE(std::abs(back.value[i] - xi[i]) <= 1e-9 * (1.0 + scale));
        }
    }
}

TEST_CASE("forward log-det matches a finite-difference Jacobian", "[flow]") {
    Rng rng(123);
    for (int dim : {2, 4, 6}) {
        auto m = testutil::random_flow(dim, 4, 10, 1, PriorKind::Normal, 52 + dim);
        const double expected = m.scaling.logdet();
        for (int rep = 0; rep < 50; ++rep) {
            std::vector<double> xi(dim);
            for (double& v : xi) v = 2.0 * rng.normal();
            Eigen::MatrixXd jac(dim, dim);
            const double h = 1e-6;
            for (int j = 0; j < dim; ++j) {
                auto hi = xi, lo = xi;
                hi[j] += h;
                lo[j] -= h;
                auto fh = forward(m, hi).value;
                auto fl = forward(m, lo).value;
                for (int i = 0; i < dim; ++i) jac(i, j) = (fh[i] - fl[i]) / (2.0 * h);
            }
            const double fd_logdet = std::log(std::abs(jac.determinant()));
            REQUIRE(fd_logdet == Approx(expected).margin(1e-4 * (1.0 + std::abs(expected))));
        }
    }
}

TEST_CASE("log_prob at the origin: identity models", "[flow]") {
    auto normal2 = testutil::identity_flow(2, PriorKind::Normal);
    REQUIRE(log_prob(normal2, std::vector<double>{0.0, 0.0}) ==
            Approx(-std::log(2.0 * M_PI)).epsilon(1e-12));

    auto logistic1 = testutil::identity_flow(1, PriorKind::Logistic);
    REQUIRE(log_prob(logistic1, std::vector<double>{0.0}) ==
            Approx(std::log(0.25)).epsilon(1e-12));
}

TEST_CASE("log_prob matches the dense Gaussian oracle on affine flows", "[flow]") {
    Rng rng(2024);
    for (std::uint64_t seed : {5u, 6u, 7u}) {
        auto m = testutil::random_affine_flow(4, 5, seed);
        auto aff = extract_affine(m);
        Eigen::MatrixXd cov = aff.A * aff.A.transpose();
        for (int rep = 0; rep < 20; ++rep) {
            Eigen::VectorXd x(4);
            for (int i = 0; i < 4; ++i) x(i) = aff.b(i) + 2.0 * rng.normal();
            std::vector<double> xv(x.data(), x.data() + 4);
            REQUIRE(log_prob(m, xv) == Approx(mvn_logpdf(x, aff.b, cov)).margin(1e-9));
        }
    }
}

TEST_CASE("density normalizes at desk scale (dim 2)", "[flow]") {
    for (PriorKind prior : {PriorKind::Normal, PriorKind::Logistic}) {
        auto m = testutil::random_flow(2, 3, 8, 1, prior, 31, 0.5, 0.2);

        // Data-space box: map the +-12 prior-std latent box through the flow
        // and pad; the pushforward mass outside is negligible.
        const double bound = 12.0 * prior_std(m.prior);
        double lo = 0.0, hi = 0.0;
        Rng rng(5);
        for (int rep = 0; rep < 4000; ++rep) {
            std::vector<double> xi = {bound * (2.0 * rng.uniform01() - 1.0),
                                      bound * (2.0 * rng.uniform01() - 1.0)};
            for (double v : forward(m, xi).value) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        }
        lo *= 1.1;
        hi *= 1.1;
        const int n = 700;
        const double step = (hi - lo) / n;
        FlowWorkspace ws;
        Mat pts(n, 2), xi_buf;
        std::vector<double> lp(n);
        double integral = 0.0;
        for (int i = 0; i < n; ++i) {
            const double x0 = lo + (i + 0.5) * step;
            for (int j = 0; j < n; ++j) {
                pts.at(j, 0) = x0;
                pts.at(j, 1) = lo + (j + 0.5) * step;
            }
            log_prob_batch(m, pts, lp, ws, xi_buf);
            for (int j = 0; j < n; ++j) integral += std::exp(lp[j]);
        }
        integral *= step * step;
        REQUIRE(integral == Approx(1.0).margin(1e-2));
    }
}

TEST_CASE("log_prob stays finite for extreme finite inputs", "[flow]") {
    for (PriorKind prior : {PriorKind::Normal, PriorKind::Logistic}) {
        auto m = testutil::random_flow(2, 3, 8, 1, prior, 8);
        for (double mag : {1.0, 1e3, 1e6, 1e8}) {
            std::vector<double> x = {mag, -mag};
            const double lp = log_prob(m, x);
            REQUIRE(std::isfinite(lp));
        }
    }
}

TEST_CASE("input validation", "[flow]") {
    auto m = testutil::identity_flow(2);
    REQUIRE_THROWS_AS(forward(m, std::vector<double>{1.0}), std::invalid_argument);
    REQUIRE_THROWS_AS(inverse(m, std::vector<double>{1.0, 2.0, 3.0}), std::invalid_argument);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_THROWS_AS(forward(m, std::vector<double>{nan, 0.0}), std::domain_error);
    REQUIRE_THROWS_AS(log_prob(m, std::vector<double>{0.0, nan}), std::domain_error);
}

TEST_CASE("sample_prior: precondition and moments", "[flow]") {
    auto normal = testutil::identity_flow(2, PriorKind::Normal);
    Rng rng(77);
    REQUIRE_THROWS_AS(sample_prior(normal, 0.0, rng), std::invalid_argument);

    const int n = 100000;
    double sum0 = 0.0;
    for (int i = 0; i < n; ++i) sum0 += sample_prior(normal, 1.0, rng)[0];
    REQUIRE(std::abs(sum0 / n) < 4.0 / std::sqrt(double(n)));

    auto logistic = testutil::identity_flow(2, PriorKind::Logistic);
    double s1 = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double v = sample_prior(logistic, 1.0, rng)[1];
        s1 += v;
        s2 += v * v;
    }
    const double var = s2 / n - (s1 / n) * (s1 / n);
    const double expected = M_PI * M_PI / 3.0;
    REQUIRE(var == Approx(expected).epsilon(0.05));
}

TEST_CASE("partition invariants", "[flow]") {
    Rng rng(3);
    FlowSpec spec;
    spec.dim = 6;
    spec.levels = 2;
    spec.depth = 3;
    spec.hidden = 8;
    auto m = make_flow(spec, 42, rng);
    int bits = 0;
    for (auto b : m.in_a) bits += b;
    REQUIRE(bits == 3);
    // Alternating direction: successive layers swap which half feeds the net.
    for (size_t k = 0; k < m.couplings.size(); ++k) REQUIRE(m.couplings[k].swap == (k % 2 == 1));
    // Same partition for every layer, fixed by the partition seed.
    Rng rng2(999);
    auto m2 = make_flow(spec, 42, rng2);
    REQUIRE(m2.in_a == m.in_a);
}

TEST_CASE("model JSON round-trip is bit-exact", "[flow][io]") {
    auto m = testutil::random_flow(4, 4, 6, 2, PriorKind::Logistic, 17);
    WhiteningStats st;
    st.mean = {0.5, -1.0, 2.0, 0.0};
    st.std = {1.0, 2.0, 0.5, 3.0};
    auto j = model_to_json(m, st);
    auto back = model_from_json(j);

    REQUIRE(back.model.dim == m.dim);
    REQUIRE(back.model.prior == m.prior);
    REQUIRE(back.model.in_a == m.in_a);
    REQUIRE(back.model.scaling.log_scale == m.scaling.log_scale);
    for (size_t k = 0; k < m.couplings.size(); ++k) {
        REQUIRE(back.model.couplings[k].swap == m.couplings[k].swap);
        REQUIRE(back.model.couplings[k].net.weights == m.couplings[k].net.weights);
        REQUIRE(back.model.couplings[k].net.biases == m.couplings[k].net.biases);
    }
    REQUIRE(back.whitening.has_value());
    REQUIRE(back.whitening->mean == st.mean);
    REQUIRE(back.whitening->std == st.std);

    // Serializing again yields the identical document.
    REQUIRE(model_to_json(back.model, back.whitening).dump() == j.dump());
}
