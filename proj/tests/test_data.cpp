#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "plmcmc/data.hpp"
#include "test_util.hpp"

using namespace plmcmc;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

fs::path write_temp(const std::string& name, const std::string& content) {
    const fs::path p = fs::temp_directory_path() / name;
    std::ofstream f(p);
    f << content;
    return p;
}

Table from_mat(const Mat& m, std::optional<std::pair<int, int>> grid = std::nullopt) {
    Table t;
    t.rows = m.rows;
    t.cols = m.cols;
    t.values = m.a;
    t.grid = grid;
    for (int c = 0; c < m.cols; ++c) t.columns.push_back("a" + std::to_string(c));
    return t;
}

}  // namespace

TEST_CASE("load_csv: complete and holey files", "[data]") {
    auto p1 = write_temp("plmcmc_complete.csv", "a,b\n1,2\n3,4\n");
    auto t1 = load_csv(p1.string());
    REQUIRE(t1.table.rows == 2);
    REQUIRE(t1.table.cols == 2);
    REQUIRE(t1.n_missing() == 0);
    REQUIRE(t1.table.at(1, 0) == 3.0);

    auto p2 = write_temp("plmcmc_holes.csv", "a,b\n1,\n,4\n");
    auto t2 = load_csv(p2.string());
    REQUIRE(t2.is_missing(0, 1));
    REQUIRE(t2.is_missing(1, 0));
    REQUIRE_FALSE(t2.is_missing(0, 0));
    REQUIRE_FALSE(t2.is_missing(1, 1));
    REQUIRE(t2.n_missing() == 2);
}

TEST_CASE("load_csv: parse errors carry the location", "[data]") {
    auto ragged = write_temp("plmcmc_ragged.csv", "a,b\n1,2\n3\n");
    REQUIRE_THROWS_WITH(load_csv(ragged.string()), Catch::Matchers::ContainsSubstring("line 3"));

    auto alpha = write_temp("plmcmc_alpha.csv", "a,b\n1,x7\n");
    REQUIRE_THROWS_WITH(load_csv(alpha.string()),
                        Catch::Matchers::ContainsSubstring("line 2, column 2"));
}

TEST_CASE("csv round-trip through save and load", "[data]") {
    Mat data = testutil::uci_surrogate(40);
    MaskSpec spec{MaskMechanism::Independent, 0.4, 7};
    auto mt = apply_mask(from_mat(data), spec);
    const fs::path p = fs::temp_directory_path() / "plmcmc_roundtrip.csv";
    save_csv(p.string(), mt);
    auto back = load_csv(p.string());
    REQUIRE(back.missing == mt.missing);
    for (int r = 0; r < mt.table.rows; ++r)
        for (int c = 0; c < mt.table.cols; ++c)
            if (!mt.is_missing(r, c)) REQUIRE(back.table.at(r, c) == mt.table.at(r, c));
}

TEST_CASE("surrogate table has the documented shape", "[data]") {
    Mat data = testutil::uci_surrogate();
    REQUIRE(data.rows == 1372);
    REQUIRE(data.cols == 4);
}

TEST_CASE("apply_mask: rate 0 and the binomial bound", "[data]") {
    Mat data(1000, 8);
    auto t = from_mat(data);

    auto none = apply_mask(t, {MaskMechanism::Independent, 0.0, 1});
    REQUIRE(none.n_missing() == 0);

    Mat big(125000, 8);  // 1e6 cells
    auto masked = apply_mask(from_mat(big), {MaskMechanism::Independent, 0.5, 2});
    const double n = static_cast<double>(big.a.size());
    const double frac = static_cast<double>(masked.n_missing()) / n;
    REQUIRE(std::abs(frac - 0.5) <= 3.0 * std::sqrt(0.25 / n));
}

TEST_CASE("apply_mask: square observation side length from the area formula", "[data]") {
    Mat img(10, 28 * 28);
    auto t = from_mat(img, std::make_pair(28, 28));
    auto masked = apply_mask(t, {MaskMechanism::SquareObservation, 0.8, 3});
    // side = round(sqrt(0.2 * 784)) = 13; observed = 169 cells per row.
    for (int r = 0; r < img.rows; ++r) {
        long observed = 0;
        for (int c = 0; c < img.cols; ++c)
            if (!masked.is_missing(r, c)) ++observed;
        REQUIRE(observed == 13 * 13);
    }
}

TEST_CASE("apply_mask: patch missingness area is near the requested rate", "[data]") {
    Mat img(200, 28 * 28);
    auto t = from_mat(img, std::make_pair(28, 28));
    auto masked = apply_mask(t, {MaskMechanism::Patch, 0.6, 4});
    const double frac =
        static_cast<double>(masked.n_missing()) / static_cast<double>(img.a.size());
    REQUIRE(frac == Approx(0.6).margin(0.1));
    // Contiguity: per row the missing cells form one rectangle.
    for (int r = 0; r < 5; ++r) {
        int top = 28, bottom = -1, left = 28, right = -1;
        long count = 0;
        for (int i = 0; i < 28; ++i)
            for (int j = 0; j < 28; ++j)
                if (masked.is_missing(r, i * 28 + j)) {
                    top = std::min(top, i);
                    bottom = std::max(bottom, i);
                    left = std::min(left, j);
                    right = std::max(right, j);
                    ++count;
                }
        REQUIRE(count == static_cast<long>(bottom - top + 1) * (right - left + 1));
    }
}

TEST_CASE("apply_mask: grid mechanisms need a grid", "[data]") {
    Mat data(10, 6);
    REQUIRE_THROWS_AS(apply_mask(from_mat(data), {MaskMechanism::Patch, 0.5, 1}),
                      std::invalid_argument);
}

TEST_CASE("mask generation is a pure function of shape, spec and seed", "[data]") {
    Mat data = testutil::uci_surrogate(100);
    MaskSpec spec{MaskMechanism::Independent, 0.5, 42};
    auto a = apply_mask(from_mat(data), spec);
    auto b = apply_mask(from_mat(data), spec);
    REQUIRE(a.missing == b.missing);
    spec.seed = 43;
    auto c = apply_mask(from_mat(data), spec);
    REQUIRE(a.missing != c.missing);
}

TEST_CASE("whiten: stats, round-trip and the poison check", "[data]") {
    Mat data = testutil::uci_surrogate(600);
    auto mt = apply_mask(from_mat(data), {MaskMechanism::Independent, 0.3, 9});
    const auto original = mt.table.values;

    auto mt_poisoned = mt;
    for (size_t i = 0; i < mt_poisoned.missing.size(); ++i)
        if (mt_poisoned.missing[i]) mt_poisoned.table.values[i] = 1e12;  // sentinel poison

    auto st = observed_stats(mt);
    auto st_poisoned = observed_stats(mt_poisoned);
    REQUIRE(st.mean == st_poisoned.mean);
    REQUIRE(st.std == st_poisoned.std);

    whiten(mt);
    auto rewhitened = observed_stats(mt);
    for (int c = 0; c < 4; ++c) {
        REQUIRE(rewhitened.mean[c] == Approx(0.0).margin(1e-12));
        REQUIRE(rewhitened.std[c] == Approx(1.0).epsilon(1e-12));
    }
    unwhiten(mt, st);
    for (size_t i = 0; i < original.size(); ++i)
        if (!mt.missing[i])
            REQUIRE(mt.table.values[i] == Approx(original[i]).margin(1e-12));
}

TEST_CASE("whiten: constant observed column rejected", "[data]") {
    Mat data(50, 2);
    for (int r = 0; r < 50; ++r) {
        data.at(r, 0) = 3.14;
        data.at(r, 1) = r;
    }
    auto mt = apply_mask(from_mat(data), {MaskMechanism::Independent, 0.0, 1});
    REQUIRE_THROWS_AS(whiten(mt), std::invalid_argument);
}

TEST_CASE("double_attributes duplicates values, masks and truth", "[data]") {
    Mat data = testutil::uci_surrogate(120);
    auto mt = apply_mask(from_mat(data), {MaskMechanism::Independent, 0.5, 11});
    auto doubled = double_attributes(mt);

    REQUIRE(doubled.table.cols == 8);
    REQUIRE(doubled.table.rows == mt.table.rows);
    for (int r = 0; r < mt.table.rows; ++r)
        for (int c = 0; c < 4; ++c) {
            REQUIRE(doubled.table.at(r, c) == mt.table.at(r, c));
            REQUIRE(doubled.table.at(r, c + 4) == mt.table.at(r, c));
            REQUIRE(doubled.is_missing(r, c) == mt.is_missing(r, c));
            REQUIRE(doubled.is_missing(r, c + 4) == mt.is_missing(r, c));
            REQUIRE((*doubled.truth)[r * 8 + c] == (*doubled.truth)[r * 8 + c + 4]);
        }
}

TEST_CASE("observed_range covers exactly the observed entries", "[data]") {
    Mat data(4, 1);
    data.at(0, 0) = -5.0;
    data.at(1, 0) = 2.0;
    data.at(2, 0) = 100.0;  // will be masked out
    data.at(3, 0) = 1.0;
    auto mt = apply_mask(from_mat(data), {MaskMechanism::Independent, 0.0, 1});
    mt.missing[2] = 1;
    auto r = observed_range(mt);
    REQUIRE(r.lo[0] == -5.0);
    REQUIRE(r.hi[0] == 2.0);
}

TEST_CASE("mask export writes the parallel 0/1 table", "[data]") {
    Mat data(2, 2);
    auto mt = apply_mask(from_mat(data), {MaskMechanism::Independent, 0.0, 1});
    mt.missing = {1, 0, 0, 1};
    const fs::path p = fs::temp_directory_path() / "plmcmc_mask.csv";
    save_mask_csv(p.string(), mt);
    std::ifstream f(p);
    std::string header, r0, r1;
    std::getline(f, header);
    std::getline(f, r0);
    std::getline(f, r1);
    REQUIRE(r0 == "1,0");
    REQUIRE(r1 == "0,1");
}
