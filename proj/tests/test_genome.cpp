#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <set>

#include "immunocast/genome.hpp"
#include "support/reference_parser.hpp"

using namespace immu;

namespace {

constexpr const char* kFigureString = "L*S/SeSdC-S+EaCbEa";
constexpr const char* kFigureAnalytic =
    "ln(cos(sin(exp(d[j-1])+cos(d[j-2]))-exp(d[j-1]))*sin(sin(d[j-5])/sin(d[j-4])))";

/// Naive tree-walking evaluator, independent of the library's protected
/// evaluation path. Returns NaN where the library returns `invalid`.
double naive_eval(const ExprNode& node, std::span<const double> window) {
    double base;
    switch (node.kind) {
        case ExprNode::Kind::lag:
            base = window[static_cast<std::size_t>(node.lag - 1)];
            break;
        case ExprNode::Kind::constant:
            base = node.value;
            break;
        default: {
            const double l = naive_eval(*node.left, window);
            const double r = naive_eval(*node.right, window);
            switch (node.op) {
                case Operation::add: base = l + r; break;
                case Operation::sub: base = l - r; break;
                case Operation::mul: base = l * r; break;
                default: base = r == 0 ? std::nan("") : l / r;
            }
        }
    }
    switch (node.func) {
        case Functional::sine: return std::sin(base);
        case Functional::cosine: return std::cos(base);
        case Functional::sqrt_fn: return base < 0 ? std::nan("") : std::sqrt(base);
        case Functional::log_fn: return base <= 0 ? std::nan("") : std::log(base);
        case Functional::exp_fn: return std::exp(base);
        default: return base;
    }
}

Rng make_rng(std::uint64_t seed) { return Rng(seed); }

} // namespace

TEST_CASE("template shape counts") {
    SbtTemplate s1{1};
    CHECK(s1.internal_count() == 4);
    CHECK(s1.leaf_count() == 5);
    CHECK(s1.sign_count() == 18);

    SbtTemplate s3{3};
    CHECK(s3.internal_count() == 8);
    CHECK(s3.leaf_count() == 9);
    CHECK(s3.sign_count() == 34);

    CHECK_THROWS_AS(SbtTemplate{0}.validate(), Error);
}

TEST_CASE("the worked antibody string decodes and re-encodes") {
    auto ab = antibody_from_string(kFigureString);
    CHECK(ab.tmpl.spine_count == 1);
    CHECK(encode(ab) == kFigureString);
    CHECK(effective_order(ab) == 5);
    CHECK(to_analytic_string(ab) == kFigureAnalytic);
}

TEST_CASE("the middle-dot multiplication sign is accepted on input") {
    const std::string dotted = "L\xc2\xb7S/SeSdC-S+EaCbEa";
    auto ab = antibody_from_string(dotted);
    CHECK(encode(ab) == kFigureString); // canonical form uses '*'
}

TEST_CASE("degenerate three-pair strings decode for ad-hoc evaluation") {
    auto tree = decode("_+_a_b");
    const double window[2] = {2, 3};
    CHECK(evaluate(tree, window) == 5.0);
    CHECK(to_analytic_string(tree) == "(d[j-1]+d[j-2])");
    // but they are not full antibodies
    CHECK_THROWS_AS(antibody_from_string("_+_a_b"), ParseError);
}

TEST_CASE("parse errors carry the offending offset") {
    try {
        decode("L*Se");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.offset() == 2);
    }

    CHECK_THROWS_AS(decode(""), ParseError);
    CHECK_THROWS_AS(decode("L*S"), ParseError);       // odd sign count
    CHECK_THROWS_AS(decode("Lz_a_b"), ParseError);    // 'z' is no operation
    CHECK_THROWS_AS(decode("_+_a_b_c"), ParseError);  // trailing signs
}

TEST_CASE("decode checks the constants count") {
    CHECK_THROWS_WITH(decode("_+_?_b"), Catch::Matchers::ContainsSubstring("constant"));
    const std::vector<double> two{1.0, 2.0};
    CHECK_THROWS_AS(decode("_+_?_b", two), Error);
    const std::vector<double> one{2.5};
    CHECK(to_analytic_string(decode("_+_?_b", one)) == "(2.5+d[j-2])");
}

TEST_CASE("rendering covers leaves, constants, and wrappers") {
    ExprNode leaf;
    leaf.kind = ExprNode::Kind::lag;
    leaf.lag = 1;
    leaf.func = Functional::exp_fn;
    ExpressionTree tree;
    tree.root = std::make_unique<ExprNode>(std::move(leaf));
    CHECK(to_analytic_string(tree) == "exp(d[j-1])");

    const std::vector<double> c{128.75};
    CHECK(to_analytic_string(decode("Q*_?Sb", c)) == "sqrt(128.75*sin(d[j-2]))");
}

TEST_CASE("protected evaluation yields invalid instead of raising") {
    ExprNode bad;
    bad.kind = ExprNode::Kind::constant;
    bad.value = -1;
    bad.func = Functional::log_fn;
    ExpressionTree tree;
    tree.root = std::make_unique<ExprNode>(std::move(bad));
    CHECK_FALSE(evaluate(tree, {}));

    // division by zero
    const std::vector<double> zeros{1.0, 0.0};
    auto div = decode("_/_a_b");
    const double w[2] = {1, 0};
    CHECK_FALSE(evaluate(div, w));

    // sqrt of a negative
    auto sq = decode("Q-_a_b");
    const double w2[2] = {1, 5};
    CHECK_FALSE(evaluate(sq, w2));

    // overflow
    auto big = decode("E*_a_b");
    const double w3[2] = {1e4, 1e4};
    CHECK_FALSE(evaluate(big, w3));
}

TEST_CASE("a window missing a lag is a programming error, not invalid") {
    auto tree = decode(kFigureString);
    const double w[2] = {1, 1}; // needs lags up to 5
    CHECK_THROWS_AS(evaluate(tree, w), std::out_of_range);
}

TEST_CASE("the worked antibody evaluates like an independent rewrite") {
    auto tree = decode(kFigureString);

    // at an all-ones window the ln argument is negative
    const std::vector<double> ones(5, 1.0);
    CHECK_FALSE(evaluate(tree, ones));
    CHECK_FALSE(refparse::evaluate_formula(kFigureAnalytic, ones));

    // at 0.5 the value is finite; cross-check three ways
    const std::vector<double> halves(5, 0.5);
    auto lib = evaluate(tree, halves);
    REQUIRE(lib.has_value());
    const double x = 0.5;
    const double by_hand = std::log(
        std::cos(std::sin(std::exp(x) + std::cos(x)) - std::exp(x)) *
        std::sin(std::sin(x) / std::sin(x)));
    CHECK(*lib == Catch::Approx(by_hand).margin(1e-12));
    auto ref = refparse::evaluate_formula(kFigureAnalytic, halves);
    REQUIRE(ref.has_value());
    CHECK(*lib == Catch::Approx(*ref).margin(1e-12));
}

TEST_CASE("effective order comes from the largest lag terminal") {
    auto low = antibody_from_string("_+_-_a_b_*_+_a_b_a");
    CHECK(effective_order(low) == 2);

    const std::vector<double> cs{1, 2, 3, 4};
    auto sparse = antibody_from_string("_+_-_d_?_*_+_?_?_?", cs);
    CHECK(effective_order(sparse) == 4);

    const std::vector<double> all(5, 1.0);
    CHECK_THROWS_AS(antibody_from_string("_+_-_?_?_*_+_?_?_?", all), Error);
}

TEST_CASE("antibody validation enforces template capacity") {
    // 'f' means lag 6, beyond the five leaves of an s=1 template
    CHECK_THROWS_WITH(antibody_from_string("_+_-_a_f_*_+_a_b_a"),
                      Catch::Matchers::ContainsSubstring("capacity"));
    // constants must be finite
    const std::vector<double> inf{std::numeric_limits<double>::infinity()};
    CHECK_THROWS_AS(antibody_from_string("_+_-_a_?_*_+_a_b_a", inf), Error);
}

TEST_CASE("random antibodies are deterministic and valid") {
    SbtTemplate tmpl{2};
    Rng a = make_rng(99);
    Rng b = make_rng(99);
    auto ab1 = random_antibody(tmpl, a);
    auto ab2 = random_antibody(tmpl, b);
    CHECK(ab1 == ab2);

    Rng rng = make_rng(123);
    for (int i = 0; i < 200; ++i) {
        auto ab = random_antibody(tmpl, rng);
        CHECK_NOTHROW(validate(ab));
        CHECK(effective_order(ab) <= tmpl.max_order());
        for (double c : ab.constants) {
            CHECK(c >= -250);
            CHECK(c <= 250);
        }
    }
}

TEST_CASE("all functionals appear among random leaf genes") {
    SbtTemplate tmpl{1};
    Rng rng = make_rng(7);
    std::set<char> seen;
    for (int i = 0; i < 10000; ++i) {
        auto ab = random_antibody(tmpl, rng);
        for (const auto& leaf : ab.leaves) seen.insert(static_cast<char>(leaf.func));
        if (seen.size() == 6) break;
    }
    CHECK(seen == std::set<char>{'S', 'C', 'Q', 'L', 'E', '_'});
}

TEST_CASE("codec round-trips every template size") {
    for (int s : {1, 2, 3, 4}) {
        SbtTemplate tmpl{s};
        Rng rng = make_rng(1000 + static_cast<std::uint64_t>(s));
        for (int i = 0; i < 1000; ++i) {
            auto ab = random_antibody(tmpl, rng);
            const std::string str = encode(ab);
            CHECK(str.size() == static_cast<std::size_t>(tmpl.sign_count()));
            auto back = antibody_from_string(str, ab.constants);
            REQUIRE(back == ab);
            CHECK(encode(back) == str);
        }
    }
}

TEST_CASE("evaluation matches a naive tree walk") {
    SbtTemplate tmpl{2};
    Rng rng = make_rng(2025);
    int finite_checked = 0;
    while (finite_checked < 500) {
        auto ab = random_antibody(tmpl, rng);
        auto tree = build_tree(ab);
        std::vector<double> window(static_cast<std::size_t>(tmpl.max_order()));
        for (double& w : window) w = rng.uniform(-3.0, 3.0);
        auto lib = evaluate(tree, window);
        if (!lib.has_value()) continue; // only finite outcomes are comparable
        const double naive = naive_eval(*tree.root, window);
        REQUIRE(std::isfinite(naive));
        CHECK(std::abs(*lib - naive) <= 1e-12 * std::max(1.0, std::abs(naive)));
        ++finite_checked;
    }
}

TEST_CASE("printed formulas evaluate like the trees that made them") {
    SbtTemplate tmpl{1};
    Rng rng = make_rng(31337);
    int checked = 0;
    while (checked < 200) {
        auto ab = random_antibody(tmpl, rng);
        auto tree = build_tree(ab);
        std::vector<double> window(static_cast<std::size_t>(tmpl.max_order()));
        for (double& w : window) w = rng.uniform(0.1, 2.0);
        auto lib = evaluate(tree, window);
        auto ref = refparse::evaluate_formula(to_analytic_string(tree), window);
        if (!lib.has_value() || !ref.has_value()) continue; // domain edges may differ
        CHECK(std::abs(*lib - *ref) <= 1e-6 * std::max(1.0, std::abs(*lib)));
        ++checked;
    }
}
