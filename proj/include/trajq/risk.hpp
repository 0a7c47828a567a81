#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "trajq/distribution.hpp"

namespace trajq {

enum class RiskKind { Mean, CVaR, Wang, CPW, POW };

/// Smallest CPW parameter for which the weighting function stays monotone.
inline constexpr double kCpwMinEta = 0.28;

/**
 * Distortion risk measure, represented by its quantile-fraction map g.
 *
 * The measure of X is the integral over tau in [0, 1] of F^{-1}(g(tau)).
 * Parameter ranges: CVaR eta in (0, 1], CPW eta >= kCpwMinEta, Wang and
 * POW any finite eta. eta is ignored for Mean.
 */
struct RiskMeasure {
    RiskKind kind = RiskKind::Mean;
    double eta = 0.0;

    static RiskMeasure mean() { return {RiskKind::Mean, 0.0}; }
    static RiskMeasure cvar(double eta);
    static RiskMeasure wang(double eta);
    static RiskMeasure cpw(double eta);
    static RiskMeasure pow(double eta);

    /// Throws std::invalid_argument when eta is out of range for the kind.
    void validate() const;

    /// "mean", "cvar:0.1", "wang:-0.75", ...
    std::string to_string() const;

    friend bool operator==(const RiskMeasure&, const RiskMeasure&) = default;
};

/// Parses the "kind[:eta]" form produced by RiskMeasure::to_string.
RiskMeasure parse_measure(std::string_view text);

double normal_cdf(double x);
/// Inverse of normal_cdf on (0, 1).
double normal_quantile(double p);

/// g(tau), clamped to [0, 1].
double fraction_map(const RiskMeasure& m, double tau);

/// sup{tau in [0,1] : g(tau) <= c}.
double fraction_map_inverse(const RiskMeasure& m, double c);

/// Exact value on a Dirac mixture.
double evaluate(const RiskMeasure& m, const ReturnDistribution& d);

/**
 * Estimate on N equally weighted sorted quantile values. Fractions are
 * the K midpoints (2k+1)/2K, or K uniform draws when an rng is given;
 * each maps to quantile_values[floor(g(tau) * N)].
 */
double evaluate_sampled(const RiskMeasure& m, std::span<const double> quantile_values,
                        std::size_t k_samples);
double evaluate_sampled(const RiskMeasure& m, std::span<const double> quantile_values,
                        std::size_t k_samples, std::mt19937_64& rng);

/// Midpoint-mode evaluate_sampled with the fraction lookups precomputed as
/// per-index weights. Results agree with evaluate_sampled up to summation order.
class SampledRiskEvaluator {
public:
    SampledRiskEvaluator(const RiskMeasure& m, std::size_t n_quantiles, std::size_t k_samples);

    double operator()(std::span<const double> quantile_values) const;

    std::size_t n_quantiles() const { return n_quantiles_; }
    std::size_t k_samples() const { return k_samples_; }

private:
    std::size_t n_quantiles_;
    std::size_t k_samples_;
    std::vector<double> weights_;
};

}  // namespace trajq
