#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "immunocast/errors.hpp"
#include "immunocast/rng.hpp"

namespace immu {

// ---------------------------------------------------------------------------
// Alphabets
// ---------------------------------------------------------------------------

/// Unary wrapper attached to every tree node. '_' means no function.
enum class Functional : char {
    sine = 'S',
    cosine = 'C',
    sqrt_fn = 'Q',
    log_fn = 'L',
    exp_fn = 'E',
    none = '_',
};

enum class Operation : char {
    add = '+',
    sub = '-',
    mul = '*',
    div = '/',
};

inline constexpr Functional kFunctionals[] = {Functional::sine,    Functional::cosine,
                                              Functional::sqrt_fn, Functional::log_fn,
                                              Functional::exp_fn,  Functional::none};
inline constexpr Operation kOperations[] = {Operation::add, Operation::sub, Operation::mul,
                                            Operation::div};

/// Leaf sign in the terminal alphabet: 'a'..'z' select lagged series values
/// positionally (a -> lag 1, b -> lag 2, ...), '?' is a constant slot.
inline constexpr char kConstantTerminal = '?';

inline bool is_functional(char ch) {
    return ch == 'S' || ch == 'C' || ch == 'Q' || ch == 'L' || ch == 'E' || ch == '_';
}

inline bool is_operation(char ch) {
    return ch == '+' || ch == '-' || ch == '*' || ch == '/';
}

inline bool is_terminal(char ch) {
    return (ch >= 'a' && ch <= 'z') || ch == kConstantTerminal;
}

inline int terminal_lag(char ch) { return ch - 'a' + 1; }
inline char lag_terminal(int lag) { return static_cast<char>('a' + lag - 1); }

// ---------------------------------------------------------------------------
// Template shape
// ---------------------------------------------------------------------------

/// Strict-binary-tree skeleton: a spine of `spine_count` internal nodes, each
/// carrying a right subtree of two leaves, capped on the deepest spine node's
/// left branch by one three-leaf subtree.
struct SbtTemplate {
    int spine_count = 3;

    int internal_count() const { return 2 * spine_count + 2; }
    int leaf_count() const { return 2 * spine_count + 3; }
    /// Highest lag the shape can express (one distinct lag per leaf).
    int max_order() const { return leaf_count(); }
    int sign_count() const { return 2 * (internal_count() + leaf_count()); }

    void validate() const {
        if (spine_count < 1) throw Error("template: spine_count must be at least 1");
        if (max_order() > 26) throw Error("template: more leaves than terminal letters");
    }
};

// ---------------------------------------------------------------------------
// Antibody genome
// ---------------------------------------------------------------------------

struct InternalGene {
    Functional func = Functional::none;
    Operation op = Operation::add;

    bool operator==(const InternalGene&) const = default;
};

struct LeafGene {
    Functional func = Functional::none;
    char terminal = 'a';

    bool is_constant() const { return terminal == kConstantTerminal; }
    bool operator==(const LeafGene&) const = default;
};

/// A candidate model: gene pairs in canonical string order plus one numeric
/// constant per '?' leaf.
struct Antibody {
    SbtTemplate tmpl;
    std::vector<InternalGene> internals; // canonical order
    std::vector<LeafGene> leaves;        // canonical order
    std::vector<double> constants;       // one per '?' leaf, in leaf order

    bool operator==(const Antibody& other) const = default;
};

/// Largest lag actually read by the model (the real order k).
inline int effective_order(const Antibody& ab) {
    int k = 0;
    for (const auto& leaf : ab.leaves)
        if (!leaf.is_constant()) k = std::max(k, terminal_lag(leaf.terminal));
    if (k == 0) throw Error("antibody has no lag terminals (all constants)");
    return k;
}

inline void validate(const Antibody& ab) {
    ab.tmpl.validate();
    if (ab.internals.size() != static_cast<std::size_t>(ab.tmpl.internal_count()))
        throw Error("antibody: internal gene count does not match template");
    if (ab.leaves.size() != static_cast<std::size_t>(ab.tmpl.leaf_count()))
        throw Error("antibody: leaf gene count does not match template");
    std::size_t slots = 0;
    for (const auto& leaf : ab.leaves)
        if (leaf.is_constant()) ++slots;
    if (slots != ab.constants.size())
        throw Error("antibody: constants count does not match '?' slots");
    for (double c : ab.constants)
        if (!std::isfinite(c)) throw Error("antibody: non-finite constant");
    if (effective_order(ab) > ab.tmpl.max_order())
        throw Error("antibody: lag exceeds template capacity");
}

// ---------------------------------------------------------------------------
// Expression tree
// ---------------------------------------------------------------------------

struct ExprNode {
    enum class Kind { lag, constant, binary };

    Kind kind = Kind::lag;
    Functional func = Functional::none;
    int lag = 0;        // kind == lag, 1-based
    double value = 0;   // kind == constant
    Operation op = Operation::add;
    std::unique_ptr<ExprNode> left, right;
};

struct ExpressionTree {
    std::unique_ptr<ExprNode> root;
};

// ---------------------------------------------------------------------------
// Codec
// ---------------------------------------------------------------------------

namespace detail {

struct SignPair {
    char first = 0;
    char second = 0;
    std::size_t offset = 0; // character offset of the pair in the input
};

inline std::vector<SignPair> split_pairs(const std::string& str) {
    // '·' (U+00B7, UTF-8 c2 b7) is accepted as multiplication on input.
    std::string ascii;
    std::vector<std::size_t> offsets;
    for (std::size_t i = 0; i < str.size(); ++i) {
        unsigned char ch = static_cast<unsigned char>(str[i]);
        if (ch == 0xC2 && i + 1 < str.size() &&
            static_cast<unsigned char>(str[i + 1]) == 0xB7) {
            ascii += '*';
            offsets.push_back(i);
            ++i;
            continue;
        }
        if (ch == ' ' || ch == '\t') continue;
        ascii += static_cast<char>(ch);
        offsets.push_back(i);
    }
    if (ascii.size() % 2 != 0)
        throw ParseError(offsets.empty() ? 0 : offsets.back(), "odd number of signs");
    std::vector<SignPair> pairs;
    pairs.reserve(ascii.size() / 2);
    for (std::size_t i = 0; i < ascii.size(); i += 2)
        pairs.push_back({ascii[i], ascii[i + 1], offsets[i]});
    return pairs;
}

class PairReader {
public:
    explicit PairReader(const std::vector<SignPair>& pairs) : pairs_(pairs) {}

    std::size_t remaining() const { return pairs_.size() - pos_; }
    std::size_t consumed() const { return pos_; }

    std::size_t next_offset() const {
        return pos_ < pairs_.size() ? pairs_[pos_].offset : end_offset();
    }

    SignPair internal_pair() {
        const SignPair p = take("(functional, operation) pair");
        if (!is_functional(p.first) || !is_operation(p.second))
            throw ParseError(p.offset, std::string("expected (functional, operation) pair, got '") +
                                           p.first + p.second + "'");
        return p;
    }

    SignPair leaf_pair() {
        const SignPair p = take("(functional, terminal) pair");
        if (!is_functional(p.first) || !is_terminal(p.second))
            throw ParseError(p.offset, std::string("expected (functional, terminal) pair, got '") +
                                           p.first + p.second + "'");
        return p;
    }

private:
    SignPair take(const char* what) {
        if (pos_ >= pairs_.size())
            throw ParseError(end_offset(), std::string("unexpected end, expected ") + what);
        return pairs_[pos_++];
    }

    std::size_t end_offset() const {
        return pairs_.empty() ? 0 : pairs_.back().offset + 2;
    }

    const std::vector<SignPair>& pairs_;
    std::size_t pos_ = 0;
};

} // namespace detail

/// Parse the canonical sign string into gene vectors. Accepts the antibody
/// grammar (4s+5 pairs, s >= 1) and, for tests and ad-hoc evaluation, the
/// 3-pair degenerate form (one internal node over two leaves).
struct ParsedGenes {
    int spine_count = 0; // 0 marks the degenerate 3-pair form
    std::vector<InternalGene> internals;
    std::vector<LeafGene> leaves;
};

inline ParsedGenes parse_signs(const std::string& str) {
    const auto pairs = detail::split_pairs(str);
    detail::PairReader reader(pairs);
    ParsedGenes out;

    auto push_internal = [&](const detail::SignPair& p) {
        out.internals.push_back(
            {static_cast<Functional>(p.first), static_cast<Operation>(p.second)});
    };
    auto push_leaf = [&](const detail::SignPair& p) {
        out.leaves.push_back({static_cast<Functional>(p.first), p.second});
    };

    auto read_right_block = [&] { // pair leafpair leafpair
        push_internal(reader.internal_pair());
        push_leaf(reader.leaf_pair());
        push_leaf(reader.leaf_pair());
    };
    auto read_left_block = [&] { // outer pair, inner pair, its two leaves, outer's right leaf
        push_internal(reader.internal_pair());
        push_internal(reader.internal_pair());
        push_leaf(reader.leaf_pair());
        push_leaf(reader.leaf_pair());
        push_leaf(reader.leaf_pair());
    };

    if (pairs.size() == 3) { // degenerate single-node form used in tests
        read_right_block();
        out.spine_count = 0;
        return out;
    }

    int spine = 0;
    while (true) {
        push_internal(reader.internal_pair()); // spine node
        read_right_block();
        ++spine;
        const std::size_t rest = reader.remaining();
        if (rest == 5) {
            read_left_block();
            break;
        }
        if (rest < 9 || (rest - 5) % 4 != 0)
            throw ParseError(reader.next_offset(),
                             "remaining signs fit neither a spine level nor the left block");
    }
    out.spine_count = spine;
    return out;
}

/// Canonical serialization: for each spine level its (functional, operation)
/// pair then its right two-leaf block, finally the three-leaf left block.
inline std::string encode(const Antibody& ab) {
    std::string out;
    out.reserve(static_cast<std::size_t>(ab.tmpl.sign_count()));
    std::size_t internal_idx = 0;
    std::size_t leaf_idx = 0;
    auto put_internal = [&] {
        const auto& g = ab.internals[internal_idx++];
        out += static_cast<char>(g.func);
        out += static_cast<char>(g.op);
    };
    auto put_leaf = [&] {
        const auto& g = ab.leaves[leaf_idx++];
        out += static_cast<char>(g.func);
        out += g.terminal;
    };
    for (int level = 0; level < ab.tmpl.spine_count; ++level) {
        put_internal(); // spine node
        put_internal(); // right block internal
        put_leaf();
        put_leaf();
    }
    put_internal(); // left block outer
    put_internal(); // left block inner
    put_leaf();
    put_leaf();
    put_leaf();
    return out;
}

/// Build a strict antibody from its canonical string plus constants.
inline Antibody antibody_from_string(const std::string& str,
                                     std::vector<double> constants = {}) {
    ParsedGenes genes = parse_signs(str);
    if (genes.spine_count < 1)
        throw ParseError(0, "string is the degenerate test form, not a full antibody");
    Antibody ab;
    ab.tmpl.spine_count = genes.spine_count;
    ab.internals = std::move(genes.internals);
    ab.leaves = std::move(genes.leaves);
    ab.constants = std::move(constants);
    validate(ab);
    return ab;
}

namespace detail {

struct TreeBuilder {
    const ParsedGenes& genes;
    std::span<const double> constants;
    std::size_t internal_idx = 0;
    std::size_t leaf_idx = 0;
    std::size_t constant_idx = 0;

    std::unique_ptr<ExprNode> leaf() {
        const LeafGene& g = genes.leaves[leaf_idx++];
        auto node = std::make_unique<ExprNode>();
        node->func = g.func;
        if (g.is_constant()) {
            node->kind = ExprNode::Kind::constant;
            node->value = constants[constant_idx++];
        } else {
            node->kind = ExprNode::Kind::lag;
            node->lag = terminal_lag(g.terminal);
        }
        return node;
    }

    std::unique_ptr<ExprNode> binary(const InternalGene& g, std::unique_ptr<ExprNode> left,
                                     std::unique_ptr<ExprNode> right) {
        auto node = std::make_unique<ExprNode>();
        node->kind = ExprNode::Kind::binary;
        node->func = g.func;
        node->op = g.op;
        node->left = std::move(left);
        node->right = std::move(right);
        return node;
    }

    std::unique_ptr<ExprNode> right_block() {
        const InternalGene g = genes.internals[internal_idx++];
        auto l = leaf();
        auto r = leaf();
        return binary(g, std::move(l), std::move(r));
    }

    std::unique_ptr<ExprNode> left_block() {
        const InternalGene outer = genes.internals[internal_idx++];
        const InternalGene inner = genes.internals[internal_idx++];
        auto inner_left = leaf();
        auto inner_right = leaf();
        auto outer_right = leaf();
        return binary(outer, binary(inner, std::move(inner_left), std::move(inner_right)),
                      std::move(outer_right));
    }

    std::unique_ptr<ExprNode> spine(int level) {
        const InternalGene g = genes.internals[internal_idx++];
        auto right = right_block();
        auto left = (level + 1 < genes.spine_count) ? spine(level + 1) : left_block();
        return binary(g, std::move(left), std::move(right));
    }
};

} // namespace detail

/// Decode a sign string (and its constants) into an expression tree.
inline ExpressionTree decode(const std::string& str, std::span<const double> constants = {}) {
    ParsedGenes genes = parse_signs(str);
    std::size_t slots = 0;
    for (const auto& leaf : genes.leaves)
        if (leaf.is_constant()) ++slots;
    if (slots != constants.size())
        throw Error("decode: string has " + std::to_string(slots) + " constant slots, got " +
                    std::to_string(constants.size()) + " constants");

    detail::TreeBuilder builder{genes, constants};
    ExpressionTree tree;
    tree.root = (genes.spine_count == 0) ? builder.right_block() : builder.spine(0);
    return tree;
}

inline ExpressionTree build_tree(const Antibody& ab) {
    return decode(encode(ab), ab.constants);
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

namespace detail {

inline std::optional<double> apply_functional(Functional f, double x) {
    double y;
    switch (f) {
        case Functional::sine: y = std::sin(x); break;
        case Functional::cosine: y = std::cos(x); break;
        case Functional::sqrt_fn:
            if (x < 0) return std::nullopt;
            y = std::sqrt(x);
            break;
        case Functional::log_fn:
            if (x <= 0) return std::nullopt;
            y = std::log(x);
            break;
        case Functional::exp_fn: y = std::exp(x); break;
        case Functional::none: y = x; break;
        default: return std::nullopt;
    }
    if (!std::isfinite(y)) return std::nullopt;
    return y;
}

inline std::optional<double> apply_operation(Operation op, double a, double b) {
    double y;
    switch (op) {
        case Operation::add: y = a + b; break;
        case Operation::sub: y = a - b; break;
        case Operation::mul: y = a * b; break;
        case Operation::div:
            if (b == 0) return std::nullopt;
            y = a / b;
            break;
        default: return std::nullopt;
    }
    if (!std::isfinite(y)) return std::nullopt;
    return y;
}

inline std::optional<double> eval_node(const ExprNode& node, std::span<const double> window) {
    double base;
    if (node.kind == ExprNode::Kind::lag) {
        if (node.lag < 1 || static_cast<std::size_t>(node.lag) > window.size())
            throw std::out_of_range("evaluate: window does not supply lag " +
                                    std::to_string(node.lag));
        base = window[static_cast<std::size_t>(node.lag - 1)];
    } else if (node.kind == ExprNode::Kind::constant) {
        base = node.value;
    } else {
        auto l = eval_node(*node.left, window);
        if (!l) return std::nullopt;
        auto r = eval_node(*node.right, window);
        if (!r) return std::nullopt;
        auto combined = apply_operation(node.op, *l, *r);
        if (!combined) return std::nullopt;
        base = *combined;
    }
    return apply_functional(node.func, base);
}

} // namespace detail

/// Protected evaluation. window[0] = d^{j-1}, window[1] = d^{j-2}, ...
/// Domain violations (ln of non-positive, sqrt of negative, division by
/// zero) and overflow yield nullopt instead of raising; a window missing a
/// lag the tree reads is a programming error and throws.
inline std::optional<double> evaluate(const ExpressionTree& tree,
                                      std::span<const double> window) {
    return detail::eval_node(*tree.root, window);
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

namespace detail {

inline const char* functional_name(Functional f) {
    switch (f) {
        case Functional::sine: return "sin";
        case Functional::cosine: return "cos";
        case Functional::sqrt_fn: return "sqrt";
        case Functional::log_fn: return "ln";
        case Functional::exp_fn: return "exp";
        default: return "";
    }
}

inline std::string format_constant(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

inline void render_node(const ExprNode& node, std::string& out) {
    if (node.kind == ExprNode::Kind::binary) {
        if (node.func != Functional::none) {
            out += functional_name(node.func);
            out += '(';
        } else {
            out += '(';
        }
        render_node(*node.left, out);
        out += static_cast<char>(node.op);
        render_node(*node.right, out);
        out += ')';
        return;
    }
    std::string base = node.kind == ExprNode::Kind::lag
                           ? "d[j-" + std::to_string(node.lag) + "]"
                           : format_constant(node.value);
    if (node.func != Functional::none) {
        out += functional_name(node.func);
        out += '(';
        out += base;
        out += ')';
    } else {
        out += base;
    }
}

} // namespace detail

/// Human-readable fully parenthesized formula with lags rendered d[j-1],
/// d[j-2], ... and constants printed to 6 significant digits.
inline std::string to_analytic_string(const ExpressionTree& tree) {
    std::string out;
    detail::render_node(*tree.root, out);
    return out;
}

inline std::string to_analytic_string(const Antibody& ab) {
    return to_analytic_string(build_tree(ab));
}

// ---------------------------------------------------------------------------
// Random generation
// ---------------------------------------------------------------------------

struct ConstantRange {
    double lo = -250.0;
    double hi = 250.0;
};

/// Uniform gene draws over the alphabets, terminals restricted to the
/// template's capacity. Guaranteed to carry at least one lag terminal.
inline Antibody random_antibody(const SbtTemplate& tmpl, Rng& rng,
                                const ConstantRange& range = {}) {
    tmpl.validate();
    const int max_letter = tmpl.max_order();
    Antibody ab;
    ab.tmpl = tmpl;
    while (true) {
        ab.internals.clear();
        ab.leaves.clear();
        ab.constants.clear();
        for (int i = 0; i < tmpl.internal_count(); ++i)
            ab.internals.push_back({kFunctionals[rng.uniform_index(6)],
                                    kOperations[rng.uniform_index(4)]});
        bool has_lag = false;
        for (int i = 0; i < tmpl.leaf_count(); ++i) {
            const Functional f = kFunctionals[rng.uniform_index(6)];
            const int pick = rng.uniform_int(0, max_letter); // letters + '?'
            if (pick == max_letter) {
                ab.leaves.push_back({f, kConstantTerminal});
                ab.constants.push_back(rng.uniform(range.lo, range.hi));
            } else {
                ab.leaves.push_back({f, lag_terminal(pick + 1)});
                has_lag = true;
            }
        }
        if (has_lag) break;
    }
    return ab;
}

} // namespace immu
