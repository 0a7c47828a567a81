#include "trajq/distribution.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace trajq {

namespace {

void require_finite(double v, const char* what) {
    if (!std::isfinite(v)) {
        throw std::invalid_argument(std::string(what) + ": value must be finite");
    }
}

// Index of the atom holding fraction u under the left-continuous inverse.
std::size_t quantile_index(std::span<const double> cum, double u) {
    auto it = std::lower_bound(cum.begin(), cum.end(), u);
    if (it == cum.end()) {
        return cum.size() - 1;
    }
    return static_cast<std::size_t>(it - cum.begin());
}

}  // namespace

ReturnDistribution::ReturnDistribution() : atoms_{{0.0, 1.0}} {}

ReturnDistribution::ReturnDistribution(std::vector<Atom> atoms) : atoms_(std::move(atoms)) {}

double ReturnDistribution::mean() const {
    double m = 0.0;
    for (const auto& a : atoms_) {
        m += a.value * a.prob;
    }
    return m;
}

std::vector<double> ReturnDistribution::cumulative() const {
    std::vector<double> cum(atoms_.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < atoms_.size(); ++i) {
        acc += atoms_[i].prob;
        cum[i] = std::min(acc, 1.0);
    }
    cum.back() = 1.0;
    return cum;
}

std::string ReturnDistribution::to_string() const {
    std::ostringstream os;
    os.precision(9);
    os << '{';
    for (std::size_t i = 0; i < atoms_.size(); ++i) {
        if (i) os << ", ";
        os << '(' << atoms_[i].value << ", " << atoms_[i].prob << ')';
    }
    os << '}';
    return os.str();
}

ReturnDistribution dirac(double value) {
    require_finite(value, "dirac");
    return normalize({{value, 1.0}});
}

ReturnDistribution normalize(std::vector<Atom> raw) {
    double total = 0.0;
    for (const auto& a : raw) {
        require_finite(a.value, "normalize");
        if (!std::isfinite(a.prob) || a.prob < 0.0) {
            throw std::invalid_argument("normalize: probabilities must be finite and nonnegative");
        }
        total += a.prob;
    }
    if (!(total > 0.0)) {
        throw std::invalid_argument("normalize: total probability mass is zero");
    }
    // Already-normalized input keeps its probabilities bit for bit.
    const bool rescale = std::abs(total - 1.0) > 1e-12;
    std::erase_if(raw, [](const Atom& a) { return a.prob == 0.0; });
    std::sort(raw.begin(), raw.end(),
              [](const Atom& x, const Atom& y) { return x.value < y.value; });

    std::vector<Atom> merged;
    merged.reserve(raw.size());
    std::size_t i = 0;
    while (i < raw.size()) {
        const double anchor = raw[i].value;
        double mass = 0.0;
        double weighted = 0.0;
        std::size_t j = i;
        for (; j < raw.size() && raw[j].value - anchor <= kAtomMergeTolerance; ++j) {
            mass += raw[j].prob;
            weighted += raw[j].prob * (raw[j].value - anchor);
        }
        const double value = anchor + weighted / mass;
        merged.push_back({value, rescale ? mass / total : mass});
        i = j;
    }
    return ReturnDistribution(std::move(merged));
}

ReturnDistribution affine(const ReturnDistribution& d, double scale, double shift) {
    if (!(scale >= 0.0) || !std::isfinite(scale)) {
        throw std::invalid_argument("affine: scale must be finite and nonnegative");
    }
    require_finite(shift, "affine");
    if (scale == 0.0) {
        return dirac(shift);
    }
    std::vector<Atom> out;
    out.reserve(d.size());
    for (const auto& a : d.atoms()) {
        out.push_back({scale * a.value + shift, a.prob});
    }
    return normalize(std::move(out));
}

ReturnDistribution convolve(const ReturnDistribution& a, const ReturnDistribution& b) {
    if (b.size() == 1) {
        return affine(a, 1.0, b.atoms().front().value);
    }
    if (a.size() == 1) {
        return affine(b, 1.0, a.atoms().front().value);
    }
    std::vector<Atom> out;
    out.reserve(a.size() * b.size());
    for (const auto& x : a.atoms()) {
        for (const auto& y : b.atoms()) {
            out.push_back({x.value + y.value, x.prob * y.prob});
        }
    }
    return normalize(std::move(out));
}

ReturnDistribution mix(std::span<const std::pair<double, ReturnDistribution>> parts) {
    if (parts.empty()) {
        throw std::invalid_argument("mix: no components");
    }
    double wsum = 0.0;
    std::vector<Atom> out;
    for (const auto& [w, d] : parts) {
        if (!(w >= 0.0 && w <= 1.0)) {
            throw std::invalid_argument("mix: weights must lie in [0, 1]");
        }
        wsum += w;
        for (const auto& atom : d.atoms()) {
            out.push_back({atom.value, w * atom.prob});
        }
    }
    if (std::abs(wsum - 1.0) > 1e-12) {
        throw std::invalid_argument("mix: weights must sum to one");
    }
    return normalize(std::move(out));
}

double quantile(const ReturnDistribution& d, double u) {
    if (!(u > 0.0 && u < 1.0)) {
        throw std::invalid_argument("quantile: fraction must lie in (0, 1)");
    }
    const auto cum = d.cumulative();
    return d.atoms()[quantile_index(cum, u)].value;
}

double cdf(const ReturnDistribution& d, double x) {
    double acc = 0.0;
    for (const auto& a : d.atoms()) {
        if (a.value > x) break;
        acc += a.prob;
    }
    return std::min(acc, 1.0);
}

double wasserstein(const ReturnDistribution& a, const ReturnDistribution& b, double p) {
    if (!(p >= 1.0) || !std::isfinite(p)) {
        throw std::invalid_argument("wasserstein: p must be >= 1");
    }
    const auto ca = a.cumulative();
    const auto cb = b.cumulative();
    const auto xa = a.atoms();
    const auto xb = b.atoms();
    std::size_t i = 0;
    std::size_t j = 0;
    double prev = 0.0;
    double acc = 0.0;
    while (i < xa.size() && j < xb.size()) {
        const double next = std::min(ca[i], cb[j]);
        const double width = next - prev;
        if (width > 0.0) {
            acc += std::pow(std::abs(xa[i].value - xb[j].value), p) * width;
        }
        prev = next;
        if (ca[i] == next) ++i;
        if (cb[j] == next) ++j;
    }
    return std::pow(acc, 1.0 / p);
}

PruneResult prune(const ReturnDistribution& d, std::size_t max_atoms) {
    if (max_atoms < 2) {
        throw std::invalid_argument("prune: max_atoms must be at least 2");
    }
    if (d.size() <= max_atoms) {
        return {d, 0.0};
    }
    const auto cum = d.cumulative();
    const double weight = 1.0 / static_cast<double>(max_atoms);
    std::vector<Atom> out;
    out.reserve(max_atoms);
    for (std::size_t i = 0; i < max_atoms; ++i) {
        const double u = (2.0 * static_cast<double>(i) + 1.0) / (2.0 * static_cast<double>(max_atoms));
        out.push_back({d.atoms()[quantile_index(cum, u)].value, weight});
    }
    auto pruned = normalize(std::move(out));
    const double err = wasserstein(d, pruned, 1.0);
    return {std::move(pruned), err};
}

double sample(const ReturnDistribution& d, std::mt19937_64& rng) {
    if (d.size() == 1) {
        return d.atoms().front().value;
    }
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double u = unif(rng);
    double acc = 0.0;
    for (const auto& a : d.atoms()) {
        acc += a.prob;
        if (u < acc) return a.value;
    }
    return d.atoms().back().value;
}

ReturnDistribution empirical(std::span<const double> samples) {
    std::vector<Atom> atoms;
    atoms.reserve(samples.size());
    for (double s : samples) {
        atoms.push_back({s, 1.0});
    }
    return normalize(std::move(atoms));
}

}  // namespace trajq
