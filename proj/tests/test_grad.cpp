#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "plmcmc/grad.hpp"
#include "plmcmc/io.hpp"
#include "test_util.hpp"

using namespace plmcmc;
using Catch::Approx;

namespace {

Mat gaussian_rho_data(int n, double rho, std::uint64_t seed) {
    Mat d(n, 2);
    Rng rng(seed);
    const double s = std::sqrt(1.0 - rho * rho);
    for (int r = 0; r < n; ++r) {
        const double z1 = rng.normal(), z2 = rng.normal();
        d.at(r, 0) = z1;
        d.at(r, 1) = rho * z1 + s * z2;
    }
    return d;
}

/// Central finite difference of the batch NLL with respect to every parameter.
void check_against_fd(const FlowModel& model, const Mat& batch, double h, double tol) {
    auto [nll, grads] = nll_and_grad(model, batch);
    FlowModel probe = model;
    ParamGradients* gp = &const_cast<ParamGradients&>(grads);
    zip_params(probe, [&](std::vector<double>& p, std::vector<double>& g) {
        for (size_t i = 0; i < p.size(); ++i) {
            const double saved = p[i];
            p[i] = saved + h;
            const double hi = batch_nll(probe, batch);
            p[i] = saved - h;
            const double lo = batch_nll(probe, batch);
            p[i] = saved;
            const double fd = (hi - lo) / (2.0 * h);
            REQUIRE(std::abs(g[i] - fd) <= tol * (1.0 + std::max(std::abs(fd), std::abs(g[i]))));
        }
    }, *gp);
}

}  // namespace

TEST_CASE("nll_and_grad at the zero-initialized identity", "[grad]") {
    auto m = testutil::zeroed(testutil::random_flow(2, 4, 6, 1, PriorKind::Normal, 3));
    Mat batch(1, 2);
    auto [nll, grads] = nll_and_grad(m, batch);
    REQUIRE(nll == Approx(std::log(2.0 * M_PI)).epsilon(1e-12));
    for_each_grad(grads, [&](const std::vector<double>& a) {
        for (double v : a) REQUIRE(v == (&a == &grads.log_scale ? 1.0 : 0.0));
    });
}

TEST_CASE("gradients match central finite differences", "[grad][c4]") {
    Rng rng(314);
    int checks = 0;
    for (int dim : {2, 4, 6}) {
        for (int rep = 0; rep < 68; ++rep) {
            const auto prior = (rep % 2) ? PriorKind::Logistic : PriorKind::Normal;
            auto m = testutil::random_flow(dim, 3, 6, rep % 3 == 0 ? 2 : 1, prior,
                                           9000 + dim * 100 + rep, 0.8, 0.3);
            Mat batch(1, dim);
            for (int i = 0; i < dim; ++i) batch.at(0, i) = 1.5 * rng.normal();
            check_against_fd(m, batch, 1e-5, 1e-4);
            ++checks;
        }
    }
    REQUIRE(checks >= 200);
}

TEST_CASE("gradient of a multi-row batch matches finite differences", "[grad]") {
    Rng rng(11);
    auto m = testutil::random_flow(4, 4, 8, 1, PriorKind::Normal, 21);
    Mat batch(7, 4);
    for (double& v : batch.a) v = rng.normal();
    check_against_fd(m, batch, 1e-5, 1e-4);
}

TEST_CASE("duplicating the batch leaves nll and grads unchanged", "[grad]") {
    Rng rng(5);
    auto m = testutil::random_flow(2, 3, 6, 1, PriorKind::Normal, 77);
    Mat batch(5, 2);
    for (double& v : batch.a) v = rng.normal();
    Mat doubled(10, 2);
    std::copy(batch.a.begin(), batch.a.end(), doubled.a.begin());
    std::copy(batch.a.begin(), batch.a.end(), doubled.a.begin() + batch.a.size());

    auto [nll1, g1] = nll_and_grad(m, batch);
    auto [nll2, g2] = nll_and_grad(m, doubled);
    REQUIRE(nll1 == Approx(nll2).epsilon(1e-12));
    for (size_t i = 0; i < g1.log_scale.size(); ++i)
        REQUIRE(g1.log_scale[i] == Approx(g2.log_scale[i]).margin(1e-12));
    for (size_t k = 0; k < g1.w.size(); ++k)
        for (size_t l = 0; l < g1.w[k].size(); ++l)
            for (size_t i = 0; i < g1.w[k][l].size(); ++i)
                REQUIRE(g1.w[k][l][i] == Approx(g2.w[k][l][i]).margin(1e-12));
}

TEST_CASE("empty batch rejected", "[grad]") {
    auto m = testutil::identity_flow(2);
    Mat empty(0, 2);
    REQUIRE_THROWS_AS(nll_and_grad(m, empty), std::invalid_argument);
}

TEST_CASE("optimizers: zero gradients leave parameters unchanged", "[grad]") {
    for (auto kind : {OptKind::RmsProp, OptKind::Adamax}) {
        auto m = testutil::random_flow(2, 2, 4, 1, PriorKind::Normal, 15);
        const auto before = model_to_json(m).dump();
        auto opt = kind == OptKind::RmsProp ? make_rmsprop(0.01) : make_adamax(0.01);
        auto zero = make_gradients(m);
        optimizer_step(opt, m, zero);
        REQUIRE(model_to_json(m).dump() == before);
    }
}

TEST_CASE("adamax scalar recurrence matches the hand-rolled trace", "[grad]") {
    auto m = testutil::scaling_flow({0.0});
    auto opt = make_adamax(0.1);
    auto g = make_gradients(m);
    g.log_scale[0] = 1.0;

    // Hand-rolled reference recurrence.
    double p = 0.0, m1 = 0.0, u = 0.0;
    for (int t = 1; t <= 7; ++t) {
        optimizer_step(opt, m, g);
        m1 = 0.9 * m1 + 0.1 * 1.0;
        u = std::max(0.999 * u, 1.0);
        p -= (0.1 / (1.0 - std::pow(0.9, t))) * m1 / (u + 1e-8);
        REQUIRE(m.scaling.log_scale[0] == Approx(p).margin(1e-15));
        if (t == 1) {
            // First step moves by -lr * 1 / (max accumulator).
            REQUIRE(m.scaling.log_scale[0] == Approx(-0.1 * 1.0 / u).epsilon(1e-7));
        }
    }
}

TEST_CASE("rmsprop scalar recurrence matches the hand-rolled trace", "[grad]") {
    auto m = testutil::scaling_flow({0.0});
    auto opt = make_rmsprop(0.01, 0.9, 0.99, 1e-8);
    auto g = make_gradients(m);
    g.log_scale[0] = 1.0;

    double p = 0.0, sq = 0.0, buf = 0.0;
    for (int t = 1; t <= 7; ++t) {
        optimizer_step(opt, m, g);
        sq = 0.99 * sq + 0.01 * 1.0;
        buf = 0.9 * buf + 1.0 / (std::sqrt(sq) + 1e-8);
        p -= 0.01 * buf;
        REQUIRE(m.scaling.log_scale[0] == Approx(p).margin(1e-15));
    }
}

TEST_CASE("non-finite gradients abort without a partial update", "[grad]") {
    auto m = testutil::random_flow(2, 2, 4, 1, PriorKind::Normal, 99);
    const auto before = model_to_json(m).dump();
    auto opt = make_adamax(0.01);
    auto g = make_gradients(m);
    g.w[0][0][0] = std::numeric_limits<double>::infinity();
    REQUIRE_THROWS_AS(optimizer_step(opt, m, g), std::runtime_error);
    REQUIRE(model_to_json(m).dump() == before);
}

TEST_CASE("train: zero epochs is a no-op", "[grad]") {
    auto m = testutil::random_flow(2, 2, 4, 1, PriorKind::Normal, 1);
    const auto before = model_to_json(m).dump();
    auto opt = make_adamax(0.01);
    Rng rng(1);
    auto log = train(m, gaussian_rho_data(100, 0.9, 2), 0, 32, opt, rng);
    REQUIRE(log.empty());
    REQUIRE(model_to_json(m).dump() == before);
}

TEST_CASE("train reaches the analytic NLL of a correlated Gaussian", "[grad][slow]") {
    const double rho = 0.9;
    Mat train_data = gaussian_rho_data(4000, rho, 100);
    Mat test_data = gaussian_rho_data(2000, rho, 101);

    auto m = testutil::random_flow(2, 6, 24, 1, PriorKind::Normal, 5, 1.0, 0.0);
    auto opt = make_adamax(0.005);
    Rng rng(7);
    auto log = train(m, train_data, 200, 500, opt, rng);

    // Entropy of the generating Gaussian: the best achievable expected NLL.
    const double entropy = 1.0 + std::log(2.0 * M_PI) + 0.5 * std::log(1.0 - rho * rho);
    const double held_out = batch_nll(m, test_data);
    INFO("held-out NLL " << held_out << " vs entropy " << entropy);
    REQUIRE(std::abs(held_out - entropy) < 0.1);

    double first10 = 0.0, last10 = 0.0;
    for (int i = 0; i < 10; ++i) {
        first10 += log[i].mean_nll / 10.0;
        last10 += log[log.size() - 1 - i].mean_nll / 10.0;
    }
    REQUIRE(last10 <= first10);

    bool finite = true;
    zip_params(m, [&](std::vector<double>& p) { finite = finite && all_finite(p); });
    REQUIRE(finite);
}

TEST_CASE("train: deterministic replay is bit-identical", "[grad]") {
    Mat data = gaussian_rho_data(300, 0.8, 50);
    auto run = [&] {
        auto m = testutil::random_flow(2, 3, 8, 1, PriorKind::Normal, 41);
        auto opt = make_adamax(0.01);
        Rng rng(123);
        train(m, data, 5, 64, opt, rng);
        return model_to_json(m).dump();
    };
    REQUIRE(run() == run());
}

TEST_CASE("train clamps oversized batch with a warning", "[grad]") {
    Mat data = gaussian_rho_data(10, 0.5, 9);
    auto m = testutil::random_flow(2, 2, 4, 1, PriorKind::Normal, 2);
    auto opt = make_adamax(0.001);
    Rng rng(3);
    REQUIRE_NOTHROW(train(m, data, 1, 99, opt, rng));
}
