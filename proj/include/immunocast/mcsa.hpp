#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "immunocast/errors.hpp"
#include "immunocast/genome.hpp"
#include "immunocast/rng.hpp"
#include "immunocast/threading.hpp"

namespace immu {

struct McsaConfig {
    int population_size = 20;          // P
    int iterations = 600;              // G
    double cloning_coefficient = 0.3;  // beta, share of the population selected
    double reproduction_coefficient = 0.8; // rho, scales clone counts
    double mutation_min = 0.05;        // per-locus rate for the best rank
    double mutation_max = 0.4;         // per-locus rate for the worst selected rank
    double constant_sigma = 0.1;       // relative gaussian step for '?' constants
    double similarity_constant_tol = 1e-3;
    int stagnation_window = 0;         // 0 disables early stop
    std::uint64_t seed = 0;
    SbtTemplate tmpl;
    ConstantRange constant_range;

    void validate() const {
        if (population_size < 2) throw Error("mcsa: population_size must be at least 2");
        if (iterations < 1) throw Error("mcsa: iterations must be at least 1");
        if (!(cloning_coefficient > 0 && cloning_coefficient <= 1))
            throw Error("mcsa: cloning_coefficient must be in (0, 1]");
        if (!(reproduction_coefficient > 0 && reproduction_coefficient <= 1))
            throw Error("mcsa: reproduction_coefficient must be in (0, 1]");
        if (!(mutation_min >= 0 && mutation_min <= mutation_max && mutation_max <= 1))
            throw Error("mcsa: need 0 <= mutation_min <= mutation_max <= 1");
        if (constant_sigma < 0) throw Error("mcsa: constant_sigma must be non-negative");
        if (similarity_constant_tol < 0)
            throw Error("mcsa: similarity_constant_tol must be non-negative");
        if (stagnation_window < 0) throw Error("mcsa: stagnation_window must be non-negative");
        if (!(constant_range.lo < constant_range.hi))
            throw Error("mcsa: constant range must be non-empty");
        tmpl.validate();
    }

    int selection_count() const {
        const int n_sel = static_cast<int>(
            std::ceil(cloning_coefficient * population_size - 1e-9));
        return std::clamp(n_sel, 1, population_size);
    }

    /// Clone count for 1-based rank r: more clones for better antibodies.
    int clone_count(int rank) const {
        const double raw = reproduction_coefficient * population_size / rank;
        return std::max(1, static_cast<int>(std::llround(raw)));
    }
};

struct AffinityRecord {
    Antibody antibody;
    double affinity = std::numeric_limits<double>::infinity();
};

/// Result of one MCSA run: the best antibody seen and its training AFER.
struct FittedModel {
    Antibody antibody;
    double train_afer = std::numeric_limits<double>::infinity();
    std::uint64_t seed = 0;

    int order() const { return effective_order(antibody); }
    std::string analytic() const { return to_analytic_string(antibody); }
};

struct McsaLogRow {
    int iteration = 0;
    double best_afer = 0;
    double mean_afer = 0;
    int invalid_count = 0;
};
using McsaLog = std::vector<McsaLogRow>;

// ---------------------------------------------------------------------------
// AFER
// ---------------------------------------------------------------------------

/// Average forecasting error rate in percent over the scored positions
/// j = k+1..n: mean of |(f_j - d_j) / d_j| * 100, with f_j produced from the
/// window of the k preceding actual values. Any invalid forecast makes the
/// whole score +inf.
template <class ForecastFn>
double afer(std::span<const double> actual, ForecastFn&& forecast_fn, int k) {
    const std::size_t n = actual.size();
    if (k < 1) throw Error("afer: order must be at least 1");
    if (n <= static_cast<std::size_t>(k))
        throw Error("afer: series length " + std::to_string(n) +
                    " leaves no scored positions for order " + std::to_string(k));
    for (std::size_t j = static_cast<std::size_t>(k); j < n; ++j)
        if (actual[j] == 0)
            throw ZeroDenominatorError("afer: actual value at position " +
                                       std::to_string(j + 1) + " is zero");
    double sum = 0;
    std::vector<double> window(static_cast<std::size_t>(k));
    for (std::size_t j = static_cast<std::size_t>(k); j < n; ++j) {
        for (int q = 0; q < k; ++q)
            window[static_cast<std::size_t>(q)] = actual[j - 1 - static_cast<std::size_t>(q)];
        const std::optional<double> f = forecast_fn(std::span<const double>(window));
        if (!f) return std::numeric_limits<double>::infinity();
        sum += std::abs((*f - actual[j]) / actual[j]);
    }
    return sum * 100.0 / static_cast<double>(n - static_cast<std::size_t>(k));
}

/// AFER of an antibody's decoded model on a training series.
inline double antibody_affinity(const Antibody& ab, std::span<const double> train) {
    const int k = effective_order(ab);
    if (train.size() <= static_cast<std::size_t>(k))
        return std::numeric_limits<double>::infinity();
    const ExpressionTree tree = build_tree(ab);
    return afer(train, [&](std::span<const double> w) { return evaluate(tree, w); }, k);
}

// ---------------------------------------------------------------------------
// Selection and cloning
// ---------------------------------------------------------------------------

struct Clone {
    Antibody antibody;
    int rank = 1; // 1-based rank of the parent among the selected
};

/// population must already be sorted ascending by affinity (stable on ties).
/// Selects the best ceil(beta*P) antibodies; rank r spawns
/// max(1, round(rho*P/r)) clones.
inline std::vector<Clone> select_and_clone(std::span<const AffinityRecord> population,
                                           const McsaConfig& cfg) {
    const int n_sel = std::min<int>(cfg.selection_count(),
                                    static_cast<int>(population.size()));
    std::vector<Clone> clones;
    for (int r = 1; r <= n_sel; ++r) {
        const int count = cfg.clone_count(r);
        for (int i = 0; i < count; ++i)
            clones.push_back({population[static_cast<std::size_t>(r - 1)].antibody, r});
    }
    return clones;
}

// ---------------------------------------------------------------------------
// Hypermutation
// ---------------------------------------------------------------------------

namespace detail {

inline Functional resample_functional(Rng& rng) { return kFunctionals[rng.uniform_index(6)]; }
inline Operation resample_operation(Rng& rng) { return kOperations[rng.uniform_index(4)]; }

/// Uniform draw over the template's terminal set (letters up to capacity
/// plus '?'), optionally excluding the current symbol.
inline char resample_terminal(Rng& rng, int max_letter, char exclude = 0) {
    while (true) {
        const int pick = rng.uniform_int(0, max_letter);
        const char t = pick == max_letter ? kConstantTerminal : lag_terminal(pick + 1);
        if (t != exclude) return t;
    }
}

template <class T>
T resample_excluding(Rng& rng, std::span<const T> alphabet, T exclude) {
    while (true) {
        const T v = alphabet[rng.uniform_index(alphabet.size())];
        if (v != exclude) return v;
    }
}

} // namespace detail

/// Per-locus mutation probability for 1-based rank r: linear from
/// mutation_min (best) to mutation_max (worst selected).
inline double mutation_rate(int rank, int n_sel, const McsaConfig& cfg) {
    const double span = cfg.mutation_max - cfg.mutation_min;
    return cfg.mutation_min + span * (rank - 1) / std::max(1, n_sel - 1);
}

/// Rank-dependent randomization of a clone. Discrete loci are resampled
/// uniformly from their alphabet with probability p(rank); constants take a
/// gaussian step of relative scale constant_sigma with the same probability.
/// A clone that would come back unchanged gets one forced mutation; the
/// template shape never changes and the result always keeps a lag terminal.
inline Antibody hypermutate(const Antibody& clone, int rank, int n_sel,
                            const McsaConfig& cfg, Rng& rng) {
    const double p = mutation_rate(rank, n_sel, cfg);
    const int max_letter = clone.tmpl.max_order();
    const auto& range = cfg.constant_range;

    auto constant_step = [&](double c) {
        const double scale = cfg.constant_sigma * std::max(std::abs(c), 1.0);
        return std::clamp(c + rng.gaussian() * scale, range.lo, range.hi);
    };

    while (true) {
        Antibody ab = clone;
        bool changed = false;

        for (auto& gene : ab.internals) {
            if (rng.uniform01() < p) {
                const Functional f = detail::resample_functional(rng);
                changed |= f != gene.func;
                gene.func = f;
            }
            if (rng.uniform01() < p) {
                const Operation op = detail::resample_operation(rng);
                changed |= op != gene.op;
                gene.op = op;
            }
        }

        std::size_t cidx = 0; // constant slot of the current leaf
        for (auto& gene : ab.leaves) {
            if (rng.uniform01() < p) {
                const Functional f = detail::resample_functional(rng);
                changed |= f != gene.func;
                gene.func = f;
            }
            const bool was_constant = gene.is_constant();
            if (rng.uniform01() < p) {
                const char t = detail::resample_terminal(rng, max_letter);
                changed |= t != gene.terminal;
                gene.terminal = t;
            }
            if (was_constant && !gene.is_constant()) {
                ab.constants.erase(ab.constants.begin() + static_cast<std::ptrdiff_t>(cidx));
            } else if (!was_constant && gene.is_constant()) {
                ab.constants.insert(ab.constants.begin() + static_cast<std::ptrdiff_t>(cidx),
                                    rng.uniform(range.lo, range.hi));
            }
            if (gene.is_constant()) ++cidx;
        }

        for (double& c : ab.constants) {
            if (rng.uniform01() < p) {
                const double next = constant_step(c);
                changed |= next != c;
                c = next;
            }
        }

        if (!changed) {
            // Forced mutation: pick one locus and make it actually differ.
            const std::size_t internal_loci = ab.internals.size() * 2;
            const std::size_t leaf_loci = ab.leaves.size() * 2;
            const std::size_t total = internal_loci + leaf_loci + ab.constants.size();
            std::size_t locus = rng.uniform_index(total);
            if (locus < internal_loci) {
                auto& gene = ab.internals[locus / 2];
                if (locus % 2 == 0)
                    gene.func = detail::resample_excluding<Functional>(rng, kFunctionals,
                                                                       gene.func);
                else
                    gene.op = detail::resample_excluding<Operation>(rng, kOperations, gene.op);
            } else if (locus < internal_loci + leaf_loci) {
                locus -= internal_loci;
                auto& gene = ab.leaves[locus / 2];
                if (locus % 2 == 0) {
                    gene.func = detail::resample_excluding<Functional>(rng, kFunctionals,
                                                                       gene.func);
                } else {
                    std::size_t slot = 0;
                    for (std::size_t i = 0; i < locus / 2; ++i)
                        if (ab.leaves[i].is_constant()) ++slot;
                    const bool was_constant = gene.is_constant();
                    gene.terminal = detail::resample_terminal(rng, max_letter, gene.terminal);
                    if (was_constant && !gene.is_constant())
                        ab.constants.erase(ab.constants.begin() +
                                           static_cast<std::ptrdiff_t>(slot));
                    else if (!was_constant && gene.is_constant())
                        ab.constants.insert(ab.constants.begin() +
                                                static_cast<std::ptrdiff_t>(slot),
                                            rng.uniform(range.lo, range.hi));
                }
            } else {
                double& c = ab.constants[locus - internal_loci - leaf_loci];
                double next = c;
                while (next == c) next = constant_step(c);
                c = next;
            }
        }

        const bool has_lag = std::any_of(ab.leaves.begin(), ab.leaves.end(),
                                         [](const LeafGene& g) { return !g.is_constant(); });
        if (has_lag) return ab;
        // all-'?' outcome: redraw the whole mutation
    }
}

// ---------------------------------------------------------------------------
// Similarity suppression
// ---------------------------------------------------------------------------

/// Two antibodies are similar when their sign strings match and every
/// constant pair agrees within the relative tolerance.
inline bool similar(const Antibody& a, const Antibody& b, double constant_tol) {
    if (a.tmpl.spine_count != b.tmpl.spine_count) return false;
    if (a.internals != b.internals || a.leaves.size() != b.leaves.size()) return false;
    for (std::size_t i = 0; i < a.leaves.size(); ++i)
        if (a.leaves[i].func != b.leaves[i].func ||
            a.leaves[i].terminal != b.leaves[i].terminal)
            return false;
    for (std::size_t i = 0; i < a.constants.size(); ++i) {
        const double x = a.constants[i], y = b.constants[i];
        const double denom = std::max(std::abs(x), std::abs(y));
        if (denom == 0) continue;
        if (std::abs(x - y) / denom > constant_tol) return false;
    }
    return true;
}

/// Remove clones similar to an earlier-surviving clone or to any antibody of
/// the current population.
inline std::vector<Clone> self_destruct_similar(std::span<const Clone> clones,
                                                std::span<const AffinityRecord> population,
                                                const McsaConfig& cfg) {
    std::vector<Clone> survivors;
    for (const Clone& c : clones) {
        bool dup = false;
        for (const auto& rec : population)
            if (similar(c.antibody, rec.antibody, cfg.similarity_constant_tol)) {
                dup = true;
                break;
            }
        for (const Clone& kept : survivors) {
            if (dup) break;
            if (similar(c.antibody, kept.antibody, cfg.similarity_constant_tol)) dup = true;
        }
        if (!dup) survivors.push_back(c);
    }
    return survivors;
}

// ---------------------------------------------------------------------------
// The MCSA loop
// ---------------------------------------------------------------------------

namespace detail {

inline void evaluate_affinities(std::vector<AffinityRecord>& records,
                                std::span<const double> train, std::size_t from = 0) {
    parallel_for(records.size() - from, [&](std::size_t i) {
        records[from + i].affinity = antibody_affinity(records[from + i].antibody, train);
    });
}

inline void sort_ascending(std::vector<AffinityRecord>& records) {
    std::stable_sort(records.begin(), records.end(),
                     [](const AffinityRecord& a, const AffinityRecord& b) {
                         return a.affinity < b.affinity;
                     });
}

inline void validate_train(std::span<const double> train, const McsaConfig& cfg) {
    const std::size_t min_len = static_cast<std::size_t>(cfg.tmpl.max_order()) + 2;
    if (train.size() < min_len)
        throw Error("mcsa: training series needs at least " + std::to_string(min_len) +
                    " points for this template, got " + std::to_string(train.size()));
    for (double x : train)
        if (!std::isfinite(x)) throw Error("mcsa: non-finite training value");
    for (std::size_t j = 1; j < train.size(); ++j)
        if (train[j] == 0)
            throw ZeroDenominatorError(
                "mcsa: training value at position " + std::to_string(j + 1) +
                " is zero and would appear as an AFER denominator");
}

} // namespace detail

/// Evolve one forecasting model for a training series. The population is
/// seeded from seed_population (checked against the configured template) and
/// topped up with random antibodies; each iteration runs sort, selection and
/// cloning, hypermutation, similarity self-destruction, affinity evaluation,
/// merge with suppression, and replenishment back to size P. The best record
/// ever seen is retained and returned. Deterministic given cfg.seed.
inline FittedModel mcsa_run(std::span<const double> train, const McsaConfig& cfg,
                            std::span<const Antibody> seed_population = {},
                            McsaLog* log = nullptr) {
    cfg.validate();
    detail::validate_train(train, cfg);

    const int P = cfg.population_size;
    const int n_sel = cfg.selection_count();
    constexpr std::uint64_t kReplenishStream = 0x80000000ULL;

    std::vector<AffinityRecord> population;
    population.reserve(static_cast<std::size_t>(P));
    for (const Antibody& ab : seed_population) {
        if (population.size() == static_cast<std::size_t>(P)) break;
        validate(ab);
        if (ab.tmpl.spine_count != cfg.tmpl.spine_count)
            throw Error("mcsa: seed antibody template does not match configuration");
        population.push_back({ab, 0});
    }
    for (std::size_t slot = population.size(); slot < static_cast<std::size_t>(P); ++slot) {
        Rng rng = derive_rng(cfg.seed, 0, slot);
        population.push_back({random_antibody(cfg.tmpl, rng, cfg.constant_range), 0});
    }
    detail::evaluate_affinities(population, train);
    detail::sort_ascending(population);

    AffinityRecord best = population.front();
    int since_improvement = 0;

    for (int g = 1; g <= cfg.iterations; ++g) {
        std::vector<Clone> clones = select_and_clone(population, cfg);
        parallel_for(clones.size(), [&](std::size_t slot) {
            Rng rng = derive_rng(cfg.seed, static_cast<std::uint64_t>(g), slot);
            clones[slot].antibody =
                hypermutate(clones[slot].antibody, clones[slot].rank, n_sel, cfg, rng);
        });

        std::vector<Clone> survivors = self_destruct_similar(clones, population, cfg);

        std::vector<AffinityRecord> merged = population;
        const std::size_t clone_from = merged.size();
        for (Clone& c : survivors) merged.push_back({std::move(c.antibody), 0});
        detail::evaluate_affinities(merged, train, clone_from);
        detail::sort_ascending(merged);

        // Suppression: keep the best representative of every similarity group.
        population.clear();
        for (AffinityRecord& rec : merged) {
            if (population.size() == static_cast<std::size_t>(P)) break;
            bool dup = false;
            for (const AffinityRecord& kept : population)
                if (similar(rec.antibody, kept.antibody, cfg.similarity_constant_tol)) {
                    dup = true;
                    break;
                }
            if (!dup) population.push_back(std::move(rec));
        }

        const std::size_t replenish_from = population.size();
        for (std::size_t slot = population.size(); slot < static_cast<std::size_t>(P);
             ++slot) {
            Rng rng = derive_rng(cfg.seed, static_cast<std::uint64_t>(g),
                                 kReplenishStream + slot);
            population.push_back({random_antibody(cfg.tmpl, rng, cfg.constant_range), 0});
        }
        detail::evaluate_affinities(population, train, replenish_from);
        detail::sort_ascending(population);

        if (population.front().affinity < best.affinity) {
            best = population.front();
            since_improvement = 0;
        } else {
            ++since_improvement;
        }

        if (log) {
            double sum = 0;
            int finite = 0, invalid = 0;
            for (const auto& rec : population) {
                if (std::isfinite(rec.affinity)) {
                    sum += rec.affinity;
                    ++finite;
                } else {
                    ++invalid;
                }
            }
            log->push_back({g, best.affinity,
                            finite ? sum / finite : std::numeric_limits<double>::infinity(),
                            invalid});
        }

        if (cfg.stagnation_window > 0 && since_improvement >= cfg.stagnation_window) break;
    }

    return FittedModel{std::move(best.antibody), best.affinity, cfg.seed};
}

} // namespace immu
