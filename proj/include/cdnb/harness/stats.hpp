#pragma once

// Pearson correlation with a two-sided Student-t p-value. The t tail is
// computed through the regularized incomplete beta function, evaluated by
// its continued fraction with the modified Lentz method.

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

namespace cdnb::harness {

namespace detail {

/// Continued fraction for I_x(a, b), valid and fast for x < (a + 1) / (a + b + 2).
inline double beta_continued_fraction(double a, double b, double x) {
    constexpr double tiny = 1e-300, eps = 1e-16;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 10000; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < eps) return h;
    }
    throw std::runtime_error("incomplete beta continued fraction did not converge");
}

}  // namespace detail

/// Regularized incomplete beta I_x(a, b) for a, b > 0 and x in [0, 1].
inline double incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0)) throw std::domain_error("incomplete_beta: a and b must be positive");
    if (!(x >= 0.0 && x <= 1.0)) throw std::domain_error("incomplete_beta: x must lie in [0, 1]");
    if (x == 0.0 || x == 1.0) return x;
    const double front =
        std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x));
    if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_continued_fraction(a, b, x) / a;
    return 1.0 - front * detail::beta_continued_fraction(b, a, 1.0 - x) / b;
}

/// P(|T| >= |t|) for T with `df` degrees of freedom.
inline double student_t_two_sided(double t, double df) {
    if (!(df > 0.0)) throw std::domain_error("student_t_two_sided: df must be positive");
    if (std::isinf(t)) return 0.0;
    return incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
}

struct CorrelationResult {
    std::string measurement;
    std::string target;
    std::size_t n = 0;
    double r = 0.0;
    double p = 1.0;

    [[nodiscard]] bool significant(double alpha = 0.05) const { return p <= alpha; }
};

/// Two-sided p of a Pearson r over n points. |r| = 1 yields the smallest
/// positive double rather than 0 so p stays in (0, 1].
inline double pearson_p_value(double r, std::size_t n) {
    if (n < 3) throw std::invalid_argument("pearson_p_value: need n >= 3");
    const double df = static_cast<double>(n - 2);
    if (std::abs(r) >= 1.0) return std::numeric_limits<double>::min();
    const double t = r * std::sqrt(df / (1.0 - r * r));
    return std::max(student_t_two_sided(t, df), std::numeric_limits<double>::min());
}

inline CorrelationResult pearson(std::span<const double> xs, std::span<const double> ys, std::string measurement = {},
                                 std::string target = {}) {
    if (xs.size() != ys.size()) {
        throw std::invalid_argument("pearson: inputs have different lengths (" + std::to_string(xs.size()) + " vs " +
                                    std::to_string(ys.size()) + ")");
    }
    const std::size_t n = xs.size();
    if (n < 3) throw std::invalid_argument("pearson: need at least 3 points, got " + std::to_string(n));
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = xs[i] - mx, dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    auto constant = [](std::span<const double> v) {
        return std::all_of(v.begin(), v.end(), [&](double a) { return a == v.front(); });
    };
    const std::string label = measurement.empty() && target.empty() ? std::string() : " (" + measurement + " vs " + target + ")";
    if (sxx == 0.0 || constant(xs)) throw std::invalid_argument("pearson: first input has zero variance" + label);
    if (syy == 0.0 || constant(ys)) throw std::invalid_argument("pearson: second input has zero variance" + label);
    CorrelationResult res;
    res.measurement = std::move(measurement);
    res.target = std::move(target);
    res.n = n;
    res.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
    res.p = pearson_p_value(res.r, n);
    return res;
}

/// Four decimals, or "<.0001" below 1e-4.
inline std::string format_p(double p) {
    if (p < 1e-4) return "<.0001";
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << p;
    return os.str();
}

inline std::string correlation_csv_header() { return "measurement,target,n,r,p"; }

inline std::string to_csv_row(const CorrelationResult& c) {
    std::ostringstream os;
    os << c.measurement << ',' << c.target << ',' << c.n << ',' << std::fixed << std::setprecision(6) << c.r << ','
       << std::scientific << std::setprecision(6) << c.p;
    return os.str();
}

inline nlohmann::json to_json(const CorrelationResult& c) {
    return {{"measurement", c.measurement}, {"target", c.target}, {"n", c.n}, {"r", c.r}, {"p", c.p}};
}

}  // namespace cdnb::harness
