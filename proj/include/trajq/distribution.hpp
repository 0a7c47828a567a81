#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace trajq {

/// A single point mass of a return distribution.
struct Atom {
    double value = 0.0;
    double prob = 0.0;

    friend bool operator==(const Atom&, const Atom&) = default;
};

/// Values closer than this are merged into one atom by normalize().
inline constexpr double kAtomMergeTolerance = 1e-9;

/**
 * Finite Dirac mixture over real returns.
 *
 * Atoms are kept sorted strictly ascending by value, every probability is
 * strictly positive and the probabilities sum to one. The only way to build
 * one is through dirac() / normalize(), so every instance is valid.
 */
class ReturnDistribution {
public:
    /// Point mass at zero.
    ReturnDistribution();

    std::span<const Atom> atoms() const { return atoms_; }
    std::size_t size() const { return atoms_.size(); }

    double mean() const;
    double min_value() const { return atoms_.front().value; }
    double max_value() const { return atoms_.back().value; }

    /// Cumulative probabilities; the last entry is exactly 1.
    std::vector<double> cumulative() const;

    std::string to_string() const;

    friend bool operator==(const ReturnDistribution&, const ReturnDistribution&) = default;

private:
    explicit ReturnDistribution(std::vector<Atom> atoms);

    friend ReturnDistribution normalize(std::vector<Atom> raw);

    std::vector<Atom> atoms_;
};

ReturnDistribution dirac(double value);

/// Sorts, merges values within kAtomMergeTolerance, drops zero mass and
/// renormalizes. Throws std::invalid_argument on negative or non-finite
/// input or zero total mass.
ReturnDistribution normalize(std::vector<Atom> raw);

/// Distribution of scale * X + shift. scale == 0 collapses to dirac(shift).
ReturnDistribution affine(const ReturnDistribution& d, double scale, double shift);

/// Distribution of X + Y for independent X ~ a, Y ~ b.
ReturnDistribution convolve(const ReturnDistribution& a, const ReturnDistribution& b);

/// Weighted mixture; weights must sum to one within 1e-12.
ReturnDistribution mix(std::span<const std::pair<double, ReturnDistribution>> parts);

/// Smallest atom value v with cdf(v) >= u, for u in (0, 1).
double quantile(const ReturnDistribution& d, double u);

double cdf(const ReturnDistribution& d, double x);

/// Exact p-Wasserstein distance between the two quantile functions.
double wasserstein(const ReturnDistribution& a, const ReturnDistribution& b, double p);

struct PruneResult {
    ReturnDistribution dist;
    /// Exact 1-Wasserstein distance between the input and the pruned result.
    double w1_error = 0.0;
};

/// Projects onto max_atoms equally weighted quantile midpoints when the
/// input has more than max_atoms atoms; otherwise returns the input.
PruneResult prune(const ReturnDistribution& d, std::size_t max_atoms);

/// Inverse-CDF draw.
double sample(const ReturnDistribution& d, std::mt19937_64& rng);

/// Empirical distribution of equally weighted samples.
ReturnDistribution empirical(std::span<const double> samples);

template <class Key>
using KeyedDistributionMap = std::map<Key, ReturnDistribution>;

/// Supremum of the per-key p-Wasserstein distance. Both maps must share
/// exactly the same key set.
template <class Key>
double max_wasserstein(const KeyedDistributionMap<Key>& a, const KeyedDistributionMap<Key>& b,
                       double p) {
    if (a.size() != b.size()) {
        throw std::invalid_argument("max_wasserstein: key sets differ in size");
    }
    double sup = 0.0;
    auto ib = b.begin();
    for (auto ia = a.begin(); ia != a.end(); ++ia, ++ib) {
        if (ia->first < ib->first || ib->first < ia->first) {
            throw std::invalid_argument("max_wasserstein: key sets differ");
        }
        sup = std::max(sup, wasserstein(ia->second, ib->second, p));
    }
    return sup;
}

}  // namespace trajq
