#pragma once

#include <charconv>
#include <cmath>
#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cdnb::attacks {

enum class Family { fgsm, pgd, cw };
enum class Norm { l2, linf };

inline std::string_view to_string(Family f) {
    switch (f) {
        case Family::fgsm: return "fgsm";
        case Family::pgd: return "pgd";
        case Family::cw: return "cw";
    }
    return "?";
}

inline std::string_view to_string(Norm n) { return n == Norm::l2 ? "l2" : "linf"; }

inline Family parse_family(std::string_view s) {
    if (s == "fgsm") return Family::fgsm;
    if (s == "pgd") return Family::pgd;
    if (s == "cw") return Family::cw;
    throw std::invalid_argument("unknown attack family '" + std::string(s) + "' (expected fgsm, pgd or cw)");
}

inline Norm parse_norm(std::string_view s) {
    if (s == "l2") return Norm::l2;
    if (s == "linf") return Norm::linf;
    throw std::invalid_argument("unknown norm '" + std::string(s) + "' (expected l2 or linf)");
}

namespace detail {

inline double parse_plain(std::string_view s, std::string_view what) {
    while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
    while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
    double v = 0.0;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || end != s.data() + s.size()) {
        throw std::invalid_argument("cannot parse " + std::string(what) + " value '" + std::string(s) + "'");
    }
    return v;
}

}  // namespace detail

/// Parses a number, also accepting fractions such as "8/255".
inline double parse_fraction(std::string_view s) {
    const auto slash = s.find('/');
    if (slash == std::string_view::npos) return detail::parse_plain(s, "numeric");
    const double num = detail::parse_plain(s.substr(0, slash), "numerator");
    const double den = detail::parse_plain(s.substr(slash + 1), "denominator");
    if (den == 0.0) throw std::invalid_argument("zero denominator in '" + std::string(s) + "'");
    return num / den;
}

struct AttackConfig {
    std::string name;
    Family family = Family::pgd;
    Norm norm = Norm::linf;
    double epsilon = 8.0 / 255.0;
    std::size_t steps = 10;
    double step_size = 2.0 / 255.0;
    bool random_init = true;
    double cw_c = 1.0;
    double cw_kappa = 0.0;
    double cw_lr = 0.01;

    /// Throws std::invalid_argument naming the offending field.
    void validate() const {
        const std::string who = name.empty() ? std::string(to_string(family)) : name;
        if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) {
            throw std::invalid_argument("attack '" + who + "': epsilon must be finite and >= 0");
        }
        if (family == Family::pgd) {
            if (steps < 1) throw std::invalid_argument("attack '" + who + "': pgd needs steps >= 1");
            if (!(step_size > 0.0)) throw std::invalid_argument("attack '" + who + "': step_size must be > 0");
        }
        if (family == Family::cw) {
            if (norm != Norm::l2) throw std::invalid_argument("attack '" + who + "': cw is l2 only");
            if (!(cw_lr > 0.0)) throw std::invalid_argument("attack '" + who + "': cw lr must be > 0");
            if (cw_kappa < 0.0) throw std::invalid_argument("attack '" + who + "': cw kappa must be >= 0");
        }
        if (family == Family::fgsm && norm != Norm::linf) {
            throw std::invalid_argument("attack '" + who + "': fgsm is linf only");
        }
    }
};

inline AttackConfig fgsm_config(std::string name, double eps) {
    AttackConfig c;
    c.name = std::move(name);
    c.family = Family::fgsm;
    c.norm = Norm::linf;
    c.epsilon = eps;
    c.steps = 1;
    c.step_size = eps;
    c.random_init = false;
    return c;
}

inline AttackConfig pgd_config(std::string name, Norm norm, double eps, std::size_t steps, double alpha,
                               bool random_init = true) {
    AttackConfig c;
    c.name = std::move(name);
    c.family = Family::pgd;
    c.norm = norm;
    c.epsilon = eps;
    c.steps = steps;
    c.step_size = alpha;
    c.random_init = random_init;
    return c;
}

inline AttackConfig cw_config(std::string name, double eps, std::size_t steps, double c = 1.0, double kappa = 0.0,
                              double lr = 0.01) {
    AttackConfig a;
    a.name = std::move(name);
    a.family = Family::cw;
    a.norm = Norm::l2;
    a.epsilon = eps;
    a.steps = steps;
    a.step_size = lr;
    a.random_init = false;
    a.cw_c = c;
    a.cw_kappa = kappa;
    a.cw_lr = lr;
    return a;
}

/// The seven evaluation attacks, in reporting order.
inline std::vector<AttackConfig> table2_suite() {
    return {
        pgd_config("pgd20_l2", Norm::l2, 1.0, 20, 0.2),
        pgd_config("pgd40_l2", Norm::l2, 1.0, 40, 0.2),
        pgd_config("pgd20_linf", Norm::linf, 8.0 / 255.0, 20, 2.0 / 255.0),
        pgd_config("pgd40_linf", Norm::linf, 8.0 / 255.0, 40, 4.0 / 255.0),
        fgsm_config("fgsm", 8.0 / 255.0),
        cw_config("cw20", 1.0, 20),
        cw_config("cw40", 1.0, 40),
    };
}

/// PGD10 used inside adversarial training loops.
inline AttackConfig training_pgd10() { return pgd_config("pgd10_linf", Norm::linf, 8.0 / 255.0, 10, 2.0 / 255.0); }

/// Builds a config from string fields: family, norm, eps, steps, alpha,
/// random_init, c, kappa, lr. Unknown keys are rejected.
inline AttackConfig parse_attack_config(const std::string& name, const std::map<std::string, std::string>& kv) {
    auto it = kv.find("family");
    if (it == kv.end()) throw std::invalid_argument("attack '" + name + "': missing 'family'");
    AttackConfig c;
    c.name = name;
    c.family = parse_family(it->second);
    if (c.family == Family::cw) c = cw_config(name, 1.0, 20);
    if (c.family == Family::fgsm) c = fgsm_config(name, 8.0 / 255.0);
    for (const auto& [key, value] : kv) {
        if (key == "family") continue;
        if (key == "norm") c.norm = parse_norm(value);
        else if (key == "eps") c.epsilon = parse_fraction(value);
        else if (key == "steps") {
            const double s = parse_fraction(value);
            if (s < 0 || s != std::floor(s)) throw std::invalid_argument("attack '" + name + "': steps must be a whole number");
            c.steps = static_cast<std::size_t>(s);
        } else if (key == "alpha") c.step_size = parse_fraction(value);
        else if (key == "random_init") {
            if (value == "true" || value == "1") c.random_init = true;
            else if (value == "false" || value == "0") c.random_init = false;
            else throw std::invalid_argument("attack '" + name + "': random_init must be true or false");
        } else if (key == "c") c.cw_c = parse_fraction(value);
        else if (key == "kappa") c.cw_kappa = parse_fraction(value);
        else if (key == "lr") c.cw_lr = parse_fraction(value);
        else throw std::invalid_argument("attack '" + name + "': unknown key '" + key + "'");
    }
    if (c.family == Family::fgsm) c.step_size = c.epsilon;
    c.validate();
    return c;
}

}  // namespace cdnb::attacks
