#include "trajq/risk.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace trajq {

namespace {

RiskMeasure make(RiskKind kind, double eta) {
    RiskMeasure m{kind, eta};
    m.validate();
    return m;
}

double cpw_weight(double tau, double eta) {
    if (tau <= 0.0) return 0.0;
    if (tau >= 1.0) return 1.0;
    const double a = std::pow(tau, eta);
    const double b = std::pow(1.0 - tau, eta);
    return a / std::pow(a + b, 1.0 / eta);
}

std::size_t lookup_index(double u, std::size_t n) {
    const double scaled = std::floor(u * static_cast<double>(n));
    if (scaled <= 0.0) return 0;
    return std::min(static_cast<std::size_t>(scaled), n - 1);
}

void check_quantile_values(std::span<const double> q, std::size_t k) {
    if (q.empty()) {
        throw std::invalid_argument("evaluate_sampled: empty quantile list");
    }
    if (k == 0) {
        throw std::invalid_argument("evaluate_sampled: k_samples must be positive");
    }
}

}  // namespace

RiskMeasure RiskMeasure::cvar(double eta) { return make(RiskKind::CVaR, eta); }
RiskMeasure RiskMeasure::wang(double eta) { return make(RiskKind::Wang, eta); }
RiskMeasure RiskMeasure::cpw(double eta) { return make(RiskKind::CPW, eta); }
RiskMeasure RiskMeasure::pow(double eta) { return make(RiskKind::POW, eta); }

void RiskMeasure::validate() const {
    if (kind == RiskKind::Mean) return;
    if (!std::isfinite(eta)) {
        throw std::invalid_argument("risk measure: eta must be finite");
    }
    switch (kind) {
        case RiskKind::CVaR:
            if (!(eta > 0.0 && eta <= 1.0)) {
                throw std::invalid_argument("cvar: eta must lie in (0, 1]");
            }
            break;
        case RiskKind::CPW:
            if (eta < kCpwMinEta) {
                throw std::invalid_argument("cpw: eta below 0.28 gives a non-monotone weighting");
            }
            break;
        default:
            break;
    }
}

std::string RiskMeasure::to_string() const {
    const char* name = "mean";
    switch (kind) {
        case RiskKind::Mean: return name;
        case RiskKind::CVaR: name = "cvar"; break;
        case RiskKind::Wang: name = "wang"; break;
        case RiskKind::CPW: name = "cpw"; break;
        case RiskKind::POW: name = "pow"; break;
    }
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, eta);
    return std::string(name) + ":" + std::string(buf, res.ptr);
}

RiskMeasure parse_measure(std::string_view text) {
    const auto colon = text.find(':');
    const std::string_view name = text.substr(0, colon);
    if (name == "mean") {
        if (colon != std::string_view::npos) {
            throw std::invalid_argument("measure 'mean' takes no parameter");
        }
        return RiskMeasure::mean();
    }
    if (colon == std::string_view::npos) {
        throw std::invalid_argument("measure '" + std::string(text) + "' needs a parameter, e.g. cvar:0.1");
    }
    const std::string_view arg = text.substr(colon + 1);
    double eta = 0.0;
    auto [ptr, ec] = std::from_chars(arg.data(), arg.data() + arg.size(), eta);
    if (ec != std::errc{} || ptr != arg.data() + arg.size() || arg.empty()) {
        throw std::invalid_argument("measure parameter '" + std::string(arg) + "' is not a number");
    }
    if (name == "cvar") return RiskMeasure::cvar(eta);
    if (name == "wang") return RiskMeasure::wang(eta);
    if (name == "cpw") return RiskMeasure::cpw(eta);
    if (name == "pow") return RiskMeasure::pow(eta);
    throw std::invalid_argument("unknown measure kind '" + std::string(name) + "'");
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        throw std::invalid_argument("normal_quantile: p must lie in (0, 1)");
    }
    // Acklam's rational approximation.
    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                   -2.759285104469687e+02, 1.383577518672690e+02,
                                   -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                   -1.556989798598866e+02, 6.680131188771972e+01,
                                   -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                   -2.400758277161838e+00, -2.549732539343734e+00,
                                   4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                   2.445134137142996e+00, 3.754408661907416e+00};
    constexpr double p_low = 0.02425;

    double x;
    if (p < p_low) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - p_low) {
        const double q = p - 0.5;
        const double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double q = std::sqrt(-2.0 * std::log1p(-p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }

    // One Newton step on the exact cdf. Upper tail uses the complement.
    const double density = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    if (density > 0.0) {
        const double err = (p > 0.5) ? (1.0 - p) - 0.5 * std::erfc(x / std::numbers::sqrt2)
                                     : normal_cdf(x) - p;
        x -= err / density;
    }
    return x;
}

double fraction_map(const RiskMeasure& m, double tau) {
    if (!(tau >= 0.0 && tau <= 1.0)) {
        throw std::invalid_argument("fraction_map: tau must lie in [0, 1]");
    }
    m.validate();
    double g = tau;
    switch (m.kind) {
        case RiskKind::Mean:
            break;
        case RiskKind::CVaR:
            g = m.eta * tau;
            break;
        case RiskKind::Wang:
            if (tau > 0.0 && tau < 1.0) g = normal_cdf(normal_quantile(tau) + m.eta);
            break;
        case RiskKind::CPW:
            g = cpw_weight(tau, m.eta);
            break;
        case RiskKind::POW: {
            const double e = 1.0 / (1.0 + std::abs(m.eta));
            g = (m.eta >= 0.0) ? std::pow(tau, e) : 1.0 - std::pow(1.0 - tau, e);
            break;
        }
    }
    return std::clamp(g, 0.0, 1.0);
}

double fraction_map_inverse(const RiskMeasure& m, double c) {
    if (!(c >= 0.0 && c <= 1.0)) {
        throw std::invalid_argument("fraction_map_inverse: c must lie in [0, 1]");
    }
    if (c >= 1.0) return 1.0;
    double t = c;
    switch (m.kind) {
        case RiskKind::Mean:
            break;
        case RiskKind::CVaR:
            t = std::min(1.0, c / m.eta);
            break;
        case RiskKind::Wang:
            t = (c <= 0.0) ? 0.0 : normal_cdf(normal_quantile(c) - m.eta);
            break;
        case RiskKind::POW: {
            const double e = 1.0 + std::abs(m.eta);
            t = (m.eta >= 0.0) ? std::pow(c, e) : 1.0 - std::pow(1.0 - c, e);
            break;
        }
        case RiskKind::CPW: {
            double lo = 0.0;
            double hi = 1.0;
            while (hi - lo > 1e-12) {
                const double mid = 0.5 * (lo + hi);
                if (cpw_weight(mid, m.eta) <= c) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            t = lo;
            break;
        }
    }
    return std::clamp(t, 0.0, 1.0);
}

double evaluate(const RiskMeasure& m, const ReturnDistribution& d) {
    m.validate();
    const bool identity = m.kind == RiskKind::Mean || (m.kind == RiskKind::CVaR && m.eta == 1.0) ||
                          ((m.kind == RiskKind::Wang || m.kind == RiskKind::POW) && m.eta == 0.0);
    if (identity) return d.mean();
    const auto atoms = d.atoms();
    const auto cum = d.cumulative();
    double prev = 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < atoms.size(); ++i) {
        const double t = (i + 1 == atoms.size()) ? 1.0 : fraction_map_inverse(m, cum[i]);
        if (t > prev) {
            total += atoms[i].value * (t - prev);
            prev = t;
        }
    }
    return total;
}

double evaluate_sampled(const RiskMeasure& m, std::span<const double> quantile_values,
                        std::size_t k_samples) {
    check_quantile_values(quantile_values, k_samples);
    if (quantile_values.size() == 1) return quantile_values.front();
    const double k = static_cast<double>(k_samples);
    double acc = 0.0;
    for (std::size_t i = 0; i < k_samples; ++i) {
        const double tau = (2.0 * static_cast<double>(i) + 1.0) / (2.0 * k);
        acc += quantile_values[lookup_index(fraction_map(m, tau), quantile_values.size())];
    }
    return acc / k;
}

SampledRiskEvaluator::SampledRiskEvaluator(const RiskMeasure& m, std::size_t n_quantiles,
                                           std::size_t k_samples)
    : n_quantiles_(n_quantiles), k_samples_(k_samples) {
    if (n_quantiles == 0 || k_samples == 0) {
        throw std::invalid_argument("SampledRiskEvaluator: sizes must be positive");
    }
    weights_.assign(n_quantiles, 0.0);
    const double k = static_cast<double>(k_samples);
    for (std::size_t i = 0; i < k_samples; ++i) {
        const double tau = (2.0 * static_cast<double>(i) + 1.0) / (2.0 * k);
        weights_[lookup_index(fraction_map(m, tau), n_quantiles)] += 1.0 / k;
    }
}

double SampledRiskEvaluator::operator()(std::span<const double> quantile_values) const {
    if (quantile_values.size() != n_quantiles_) {
        throw std::invalid_argument("SampledRiskEvaluator: wrong number of quantiles");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < n_quantiles_; ++i) {
        acc += weights_[i] * quantile_values[i];
    }
    return acc;
}

double evaluate_sampled(const RiskMeasure& m, std::span<const double> quantile_values,
                        std::size_t k_samples, std::mt19937_64& rng) {
    check_quantile_values(quantile_values, k_samples);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    double acc = 0.0;
    for (std::size_t i = 0; i < k_samples; ++i) {
        acc += quantile_values[lookup_index(fraction_map(m, unif(rng)), quantile_values.size())];
    }
    return acc / static_cast<double>(k_samples);
}

}  // namespace trajq
