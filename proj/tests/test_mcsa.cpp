#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "immunocast/mcsa.hpp"

using namespace immu;

namespace {

McsaConfig small_config(std::uint64_t seed = 1) {
    McsaConfig cfg;
    cfg.tmpl.spine_count = 1;
    cfg.population_size = 10;
    cfg.iterations = 40;
    cfg.seed = seed;
    return cfg;
}

/// Generate a series by iterating a planted antibody from seed values.
std::vector<double> iterate_series(const Antibody& ab, std::vector<double> history,
                                   std::size_t n) {
    const int k = effective_order(ab);
    REQUIRE(history.size() >= static_cast<std::size_t>(k));
    auto tree = build_tree(ab);
    while (history.size() < n) {
        std::vector<double> window(static_cast<std::size_t>(k));
        for (int q = 0; q < k; ++q)
            window[static_cast<std::size_t>(q)] =
                history[history.size() - 1 - static_cast<std::size_t>(q)];
        auto f = evaluate(tree, window);
        REQUIRE(f.has_value());
        history.push_back(*f);
    }
    return history;
}

} // namespace

TEST_CASE("afer matches the closed-form cases") {
    // perfect one-step fit
    std::vector<double> actual{3, 4, 5, 6};
    auto identity_next = [&](std::span<const double> w) {
        return std::optional<double>(w[0] + 1);
    };
    CHECK(afer(actual, identity_next, 1) == Catch::Approx(0.0).margin(1e-12));

    // single scored point: d=2, f=1 -> 50%
    std::vector<double> two{1, 2};
    auto always_one = [](std::span<const double>) { return std::optional<double>(1.0); };
    CHECK(afer(two, always_one, 1) == Catch::Approx(50.0).margin(1e-12));

    // d=(1,2), f=(1.1,1.8) -> (0.1 + 0.1) * 100 / 2 = 10%
    std::vector<double> three{5, 1, 2};
    int call = 0;
    auto scripted = [&](std::span<const double>) {
        return std::optional<double>(call++ == 0 ? 1.1 : 1.8);
    };
    CHECK(afer(three, scripted, 1) == Catch::Approx(10.0).margin(1e-12));
}

TEST_CASE("afer rejects zero denominators and short series") {
    std::vector<double> zeros{1, 0, 2};
    auto fn = [](std::span<const double>) { return std::optional<double>(1.0); };
    CHECK_THROWS_AS(afer(zeros, fn, 1), ZeroDenominatorError);

    std::vector<double> shorty{1, 2};
    CHECK_THROWS_AS(afer(shorty, fn, 2), Error);
    CHECK_THROWS_AS(afer(shorty, fn, 0), Error);
}

TEST_CASE("afer goes infinite when any forecast is invalid") {
    std::vector<double> actual{1, 2, 3, 4};
    int call = 0;
    auto flaky = [&](std::span<const double>) {
        return call++ == 1 ? std::nullopt : std::optional<double>(2.0);
    };
    CHECK(std::isinf(afer(actual, flaky, 1)));
}

TEST_CASE("afer agrees with a direct recomputation on random fixtures") {
    Rng rng(55);
    for (int round = 0; round < 20; ++round) {
        const int k = 1 + static_cast<int>(rng.uniform_index(3));
        const std::size_t n = static_cast<std::size_t>(k) + 2 + rng.uniform_index(10);
        std::vector<double> actual(n);
        for (double& v : actual) v = rng.uniform(0.5, 10.0);
        std::vector<double> forecasts(n, 0.0);
        for (std::size_t j = static_cast<std::size_t>(k); j < n; ++j)
            forecasts[j] = rng.uniform(0.5, 10.0);
        auto play_back = [&, j = static_cast<std::size_t>(k)](
                             std::span<const double>) mutable {
            return std::optional<double>(forecasts[j++]);
        };
        const double got = afer(actual, play_back, k);
        double sum = 0;
        for (std::size_t j = static_cast<std::size_t>(k); j < n; ++j)
            sum += std::abs((forecasts[j] - actual[j]) / actual[j]);
        const double expected = sum * 100.0 / static_cast<double>(n - static_cast<std::size_t>(k));
        CHECK(got == Catch::Approx(expected).margin(1e-12 * std::max(1.0, expected)));
    }
}

TEST_CASE("selection picks ceil(beta P) and clones by inverse rank") {
    McsaConfig cfg;
    cfg.population_size = 20;
    cfg.cloning_coefficient = 0.3;
    cfg.reproduction_coefficient = 0.8;
    CHECK(cfg.selection_count() == 6);
    const std::vector<int> expected{16, 8, 5, 4, 3, 3};
    int total = 0;
    for (int r = 1; r <= 6; ++r) {
        CHECK(cfg.clone_count(r) == expected[static_cast<std::size_t>(r - 1)]);
        total += cfg.clone_count(r);
    }
    CHECK(total == 39);

    // beta = 1/P selects exactly the best antibody
    McsaConfig tight;
    tight.population_size = 20;
    tight.cloning_coefficient = 1.0 / 20.0;
    CHECK(tight.selection_count() == 1);

    Rng rng(1);
    std::vector<AffinityRecord> population;
    for (int i = 0; i < 20; ++i)
        population.push_back({random_antibody(SbtTemplate{1}, rng), static_cast<double>(i)});
    auto clones = select_and_clone(population, tight);
    tight.reproduction_coefficient = 0.8;
    for (const auto& c : clones) CHECK(c.antibody == population[0].antibody);
}

TEST_CASE("mutation rate is linear in rank") {
    McsaConfig cfg;
    cfg.mutation_min = 0.05;
    cfg.mutation_max = 0.4;
    CHECK(mutation_rate(1, 6, cfg) == Catch::Approx(0.05));
    CHECK(mutation_rate(6, 6, cfg) == Catch::Approx(0.4));
    CHECK(mutation_rate(1, 1, cfg) == Catch::Approx(0.05)); // degenerate n_sel
}

TEST_CASE("hypermutate always changes something and keeps antibodies valid") {
    McsaConfig cfg = small_config();
    cfg.mutation_min = 0.0; // force the fallback path often
    cfg.mutation_max = 0.3;
    Rng rng(77);
    for (int i = 0; i < 1000; ++i) {
        auto parent = random_antibody(cfg.tmpl, rng, cfg.constant_range);
        Rng mrng(1000 + static_cast<std::uint64_t>(i));
        const int rank = 1 + static_cast<int>(mrng.uniform_index(6));
        auto child = hypermutate(parent, rank, 6, cfg, mrng);
        CHECK(child.tmpl.spine_count == parent.tmpl.spine_count);
        CHECK_NOTHROW(validate(child));
        CHECK(!(child == parent));
    }
}

TEST_CASE("hypermutate at rate one resamples every discrete locus") {
    McsaConfig cfg = small_config();
    cfg.mutation_min = 1.0;
    cfg.mutation_max = 1.0;
    Rng rng(3);
    auto parent = random_antibody(cfg.tmpl, rng, cfg.constant_range);

    // expected Hamming distance over discrete loci: each internal pair
    // resamples func (miss 1/6) and op (miss 1/4); each leaf resamples func
    // and a terminal from max_order+1 symbols.
    const double internals = static_cast<double>(parent.internals.size());
    const double leaves = static_cast<double>(parent.leaves.size());
    const double alpha = static_cast<double>(parent.tmpl.max_order() + 1);
    const double expected = internals * (5.0 / 6.0 + 3.0 / 4.0) +
                            leaves * (5.0 / 6.0 + (alpha - 1.0) / alpha);

    double total = 0;
    const int rounds = 10000;
    for (int i = 0; i < rounds; ++i) {
        Rng mrng(50000 + static_cast<std::uint64_t>(i));
        auto child = hypermutate(parent, 1, 1, cfg, mrng);
        int distance = 0;
        for (std::size_t g = 0; g < parent.internals.size(); ++g) {
            distance += parent.internals[g].func != child.internals[g].func;
            distance += parent.internals[g].op != child.internals[g].op;
        }
        for (std::size_t g = 0; g < parent.leaves.size(); ++g) {
            distance += parent.leaves[g].func != child.leaves[g].func;
            distance += parent.leaves[g].terminal != child.leaves[g].terminal;
        }
        total += distance;
    }
    const double mean = total / rounds;
    CHECK(mean == Catch::Approx(expected).epsilon(0.03));
}

TEST_CASE("similarity compares strings exactly and constants by tolerance") {
    McsaConfig cfg = small_config();
    const std::vector<double> c1{100.0};
    const std::vector<double> c2{100.05};
    const std::vector<double> c3{150.0};
    auto a = antibody_from_string("_+_-_a_?_*_+_a_b_a", c1);
    auto b = antibody_from_string("_+_-_a_?_*_+_a_b_a", c2);
    auto c = antibody_from_string("_+_-_a_?_*_+_a_b_a", c3);
    auto d = antibody_from_string("_-_-_a_?_*_+_a_b_a", c1);

    CHECK(similar(a, a, 1e-3));
    CHECK(similar(a, b, 1e-3)); // 5e-4 relative difference
    CHECK_FALSE(similar(a, c, 1e-3));
    CHECK_FALSE(similar(a, d, 1e-3)); // different sign string

    std::vector<Clone> clones{{a, 1}, {b, 1}, {c, 2}};
    auto survivors = self_destruct_similar(clones, {}, cfg);
    REQUIRE(survivors.size() == 2); // b suppressed by a
    CHECK(survivors[0].antibody == a);
    CHECK(survivors[1].antibody == c);

    // population members also suppress clones
    std::vector<AffinityRecord> population{{a, 1.0}};
    auto vs_pop = self_destruct_similar(clones, population, cfg);
    REQUIRE(vs_pop.size() == 1);
    CHECK(vs_pop[0].antibody == c);
}

TEST_CASE("mcsa_run validates its inputs") {
    McsaConfig cfg = small_config();
    std::vector<double> shorty{1, 2, 3};
    CHECK_THROWS_AS(mcsa_run(shorty, cfg), Error);

    std::vector<double> zeros{5, 4, 0, 2, 5, 4, 3, 2, 5, 4};
    CHECK_THROWS_AS(mcsa_run(zeros, cfg), ZeroDenominatorError);

    McsaConfig bad = cfg;
    bad.population_size = 1;
    std::vector<double> train{5, 4, 3, 2, 5, 4, 3, 2, 5, 4};
    CHECK_THROWS_AS(mcsa_run(train, bad), Error);
}

TEST_CASE("a minimal run returns the better of its antibodies") {
    McsaConfig cfg = small_config(9);
    cfg.population_size = 2;
    cfg.iterations = 1;
    std::vector<double> train{5, 4, 3, 2, 5, 4, 3, 2, 5, 4};
    auto model = mcsa_run(train, cfg);
    CHECK(model.train_afer >= 0);
    CHECK_NOTHROW(validate(model.antibody));
}

TEST_CASE("the best-affinity trace never increases and the population stays full") {
    McsaConfig cfg = small_config(4);
    cfg.iterations = 30;
    std::vector<double> train;
    for (int j = 0; j < 12; ++j) train.push_back(10 + std::sin(0.7 * j) * 3);
    McsaLog log;
    auto model = mcsa_run(train, cfg, {}, &log);
    REQUIRE(log.size() == 30);
    for (std::size_t i = 1; i < log.size(); ++i)
        CHECK(log[i].best_afer <= log[i - 1].best_afer);
    for (const auto& row : log) {
        CHECK(row.best_afer >= 0);
        CHECK(row.invalid_count >= 0);
        CHECK(row.invalid_count <= cfg.population_size);
    }
    CHECK(model.train_afer == log.back().best_afer);
}

TEST_CASE("runs are deterministic for a fixed seed") {
    McsaConfig cfg = small_config(31);
    std::vector<double> train;
    for (int j = 0; j < 14; ++j) train.push_back(20 + j * 1.5 + std::cos(j));
    auto a = mcsa_run(train, cfg);
    auto b = mcsa_run(train, cfg);
    CHECK(a.antibody == b.antibody);
    CHECK(a.train_afer == b.train_afer);
}

TEST_CASE("seed antibodies join the initial population") {
    McsaConfig cfg = small_config(12);
    cfg.iterations = 2;
    // f = (c/c)*a + (b-b) = d^{j-1}: reproduces its own series exactly
    auto planted = antibody_from_string("_+_-_b_b_*_/_c_c_a");
    std::vector<double> train = iterate_series(planted, {3, 5, 4}, 12);
    std::vector<Antibody> seeds{planted};
    auto model = mcsa_run(train, cfg, seeds);
    CHECK(model.train_afer == Catch::Approx(0.0).margin(1e-9));

    McsaConfig other = small_config(12);
    other.tmpl.spine_count = 2;
    CHECK_THROWS_WITH(mcsa_run(train, other, seeds),
                      Catch::Matchers::ContainsSubstring("template"));
}

TEST_CASE("stagnation window stops early") {
    McsaConfig cfg = small_config(21);
    cfg.iterations = 200;
    cfg.stagnation_window = 5;
    std::vector<double> train;
    for (int j = 0; j < 12; ++j) train.push_back(7 + 0.1 * j);
    McsaLog log;
    mcsa_run(train, cfg, {}, &log);
    CHECK(log.size() < 200);
}

TEST_CASE("planted model recovery on a short budget") {
    // f = (c/c)*b + (a-a) = d^{j-2}: a period-two orbit
    auto planted = antibody_from_string("_+_-_a_a_*_/_c_c_b");
    auto train = iterate_series(planted, {3, 5, 4}, 30);
    McsaConfig cfg;
    cfg.tmpl.spine_count = 1;
    cfg.seed = 2;
    cfg.iterations = 120;
    auto model = mcsa_run(train, cfg);
    CHECK(model.train_afer < 30.0); // meaningfully better than noise
    CHECK(std::isfinite(model.train_afer));
}
