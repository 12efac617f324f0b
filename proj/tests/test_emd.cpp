#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "fiberlearn/emd.hpp"
#include "lp_oracle.hpp"
#include "test_support.hpp"

using namespace fiberlearn;
using fiberlearn::testing::transport_lp;

namespace {

std::vector<double> random_mass(std::size_t n, Rng& rng, double sparsity = 0.0) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng) < sparsity ? 0.0 : u(rng);
    if (std::accumulate(v.begin(), v.end(), 0.0) == 0.0) v[0] = 1.0;
    const double s = std::accumulate(v.begin(), v.end(), 0.0);
    for (auto& x : v) x /= s;
    return v;
}

std::vector<double> dict_cost(const SphereDictionary& d) {
    std::vector<double> c;
    for (std::size_t i = 0; i < d.size(); ++i)
        for (std::size_t j = 0; j < d.size(); ++j) c.push_back(rad2deg(d.angles(i, j)));
    return c;
}

const SphereDictionary& small_dict() {
    static const SphereDictionary d = build_dictionary(12, 0);
    return d;
}

}  // namespace

TEST(Transport, MatchesDenseLpOracle) {
    Rng rng(1);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    for (int trial = 0; trial < 60; ++trial) {
        const std::size_t r = 1 + trial % 6, c = 1 + (trial / 6) % 7;
        TransportInstance in;
        in.supply = random_mass(r, rng, trial % 3 == 0 ? 0.4 : 0.0);
        in.demand = random_mass(c, rng, trial % 4 == 0 ? 0.4 : 0.0);
        for (std::size_t i = 0; i < r * c; ++i) in.cost.push_back(u(rng));
        const double oracle = transport_lp(in.supply, in.demand, in.cost);
        const auto sol = solve_transport(in);
        EXPECT_NEAR(sol.cost, oracle, 1e-9) << "trial " << trial;
        // feasibility of the returned plan
        double total = 0.0;
        for (std::size_t i = 0; i < r; ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                EXPECT_GE(sol.flow[i * c + j], -1e-12);
                row += sol.flow[i * c + j];
                total += sol.flow[i * c + j] * in.cost[i * c + j];
            }
            EXPECT_NEAR(row, in.supply[i], 1e-9);
        }
        for (std::size_t j = 0; j < c; ++j) {
            double col = 0.0;
            for (std::size_t i = 0; i < r; ++i) col += sol.flow[i * c + j];
            EXPECT_NEAR(col, in.demand[j], 1e-9);
        }
        EXPECT_NEAR(total, sol.cost, 1e-9);
    }
}

TEST(Transport, AssignmentByPermutation) {
    Rng rng(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const std::size_t n = 6;
    for (int trial = 0; trial < 20; ++trial) {
        TransportInstance in;
        in.supply.assign(n, 1.0 / n);
        in.demand.assign(n, 1.0 / n);
        for (std::size_t i = 0; i < n * n; ++i) in.cost.push_back(u(rng));
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        double best = 1e9;
        do {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += in.cost[i * n + perm[i]] / n;
            best = std::min(best, s);
        } while (std::next_permutation(perm.begin(), perm.end()));
        EXPECT_NEAR(solve_transport(in).cost, best, 1e-12);
    }
}

TEST(Transport, Validation) {
    TransportInstance in{{0.5, 0.6}, {1.0}, {1.0, 1.0}};
    EXPECT_THROW(solve_transport(in), ConfigError);
    in = {{1.0}, {1.0}, {1.0, 2.0}};
    EXPECT_THROW(solve_transport(in), ConfigError);
    in = {{1.2, -0.2}, {1.0}, {1.0, 1.0}};
    EXPECT_THROW(solve_transport(in), ConfigError);
    in = {{0.5, 0.5 + 5e-7}, {1.0}, {1.0, 3.0}};
    EXPECT_NEAR(solve_transport(in).cost, 2.0, 1e-5);
}

TEST(Emd, MatchesLpOracleOnDictionary) {
    const auto& d = small_dict();
    const auto cost = dict_cost(d);
    Rng rng(3);
    for (int trial = 0; trial < 30; ++trial) {
        const auto p = random_mass(d.size(), rng, 0.5);
        const auto q = random_mass(d.size(), rng, 0.5);
        EXPECT_NEAR(emd(d, p, q), transport_lp(p, q, cost), 1e-8);
    }
}

TEST(Emd, MetricAxioms) {
    const auto& d = small_dict();
    Rng rng(4);
    for (int trial = 0; trial < 40; ++trial) {
        const auto p = random_mass(d.size(), rng, 0.3);
        const auto q = random_mass(d.size(), rng, 0.3);
        const auto r = random_mass(d.size(), rng, 0.3);
        EXPECT_NEAR(emd(d, p, p), 0.0, 1e-12);
        const double pq = emd(d, p, q);
        EXPECT_GE(pq, 0.0);
        EXPECT_NEAR(pq, emd(d, q, p), 1e-9);
        EXPECT_LE(pq, emd(d, p, r) + emd(d, r, q) + 1e-9);
        EXPECT_LE(pq, 90.0 + 1e-9);
    }
}

TEST(Emd, PointMassesThirtyDegreesApart) {
    const auto d = dictionary_from_directions(
        {Vec3::UnitZ(), Vec3(std::sin(deg2rad(30)), 0, std::cos(deg2rad(30))), Vec3::UnitX()});
    const std::vector<double> p{1, 0, 0}, q{0, 1, 0}, r{0, 0, 1};
    EXPECT_NEAR(emd(d, p, q), 30.0, 1e-9);
    EXPECT_NEAR(emd(d, p, r), 90.0, 1e-9);
    const std::vector<double> half{0.5, 0.5, 0};
    EXPECT_NEAR(emd(d, p, half), 15.0, 1e-9);
}

TEST(Emd, ScaleInvarianceAndFloatOverload) {
    const auto& d = small_dict();
    Rng rng(5);
    const auto p = random_mass(d.size(), rng);
    const auto q = random_mass(d.size(), rng);
    auto p3 = p;
    for (auto& v : p3) v *= 3.0;
    EXPECT_NEAR(emd(d, p3, q), emd(d, p, q), 1e-9);
    std::vector<float> pf(p.begin(), p.end()), qf(q.begin(), q.end());
    EXPECT_NEAR(emd(d, std::span<const float>(pf), std::span<const float>(qf)), emd(d, p, q), 1e-4);
}

TEST(Emd, RejectsBadInputs) {
    const auto& d = small_dict();
    const std::vector<double> zero(d.size(), 0.0), ok(d.size(), 1.0), shortv(3, 1.0);
    auto neg = ok;
    neg[2] = -1.0;
    EXPECT_THROW(emd(d, zero, ok), ConfigError);
    EXPECT_THROW(emd(d, shortv, ok), ConfigError);
    EXPECT_THROW(emd(d, neg, ok), ConfigError);
}

TEST(Emd, FullDictionaryLargeSupport) {
    const auto d = build_dictionary(362, 0);
    Rng rng(6);
    const auto p = random_mass(d.size(), rng);
    const auto q = random_mass(d.size(), rng);
    const double v = emd(d, p, q);
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 90.0);
    EXPECT_NEAR(v, emd(d, q, p), 1e-7);
}
