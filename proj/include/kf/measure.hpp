#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "digest.hpp"
#include "errors.hpp"

namespace kf {

enum class chirality { right_continuous, left_continuous };
enum class side { value, opposite_limit };
enum class closure { left_open_right_closed, left_closed_right_open, closed, open };

// Compensated (Kahan) accumulator. Summation order is always ascending
// position so results are reproducible.
struct kahan {
    double s = 0.0, c = 0.0;
    void add(double x) {
        double y = x - c;
        double t = s + y;
        c = (t - s) - y;
        s = t;
    }
    double sum() const { return s; }
};

// ---------------------------------------------------------------------------
// Declarative measure specification

struct uniform_component {
    double mass = 1.0;
};

struct piecewise_linear_component {
    std::vector<double> breakpoints; // ascending, from 0 to 1
    std::vector<double> slopes;      // density on each segment, positive
};

struct atoms_component {
    std::vector<std::pair<double, double>> atoms; // (position, mass)
};

struct ifs_component {
    std::vector<double> ratios;  // contraction ratios in (0,1)
    std::vector<double> weights; // probability weights, positive
    int depth = 1;
    double mass = 1.0;
};

struct measure_component {
    enum class kind { uniform, piecewise_linear, atoms, ifs_self_similar } k;
    uniform_component uni;
    piecewise_linear_component pl;
    atoms_component at;
    ifs_component ifs;
};

struct measure_spec {
    std::vector<measure_component> components;
    chirality chi = chirality::right_continuous;
    std::string label;
};

inline const char* to_string(chirality c) {
    return c == chirality::right_continuous ? "right_continuous" : "left_continuous";
}

inline chirality chirality_from_string(const std::string& s) {
    if (s == "right_continuous") return chirality::right_continuous;
    if (s == "left_continuous") return chirality::left_continuous;
    throw config_error("unknown chirality: " + s);
}

namespace detail {

inline void check_known_keys(const nlohmann::json& j, std::initializer_list<const char*> keys,
                             const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* k : keys)
            if (it.key() == k) { known = true; break; }
        if (!known)
            throw config_error("unknown key \"" + it.key() + "\" in " + where);
    }
}

} // namespace detail

inline nlohmann::json to_json(const measure_spec& s) {
    nlohmann::json comps = nlohmann::json::array();
    for (const auto& c : s.components) {
        nlohmann::json jc;
        switch (c.k) {
        case measure_component::kind::uniform:
            jc["kind"] = "uniform";
            jc["mass"] = c.uni.mass;
            break;
        case measure_component::kind::piecewise_linear:
            jc["kind"] = "piecewise_linear";
            jc["breakpoints"] = c.pl.breakpoints;
            jc["slopes"] = c.pl.slopes;
            break;
        case measure_component::kind::atoms: {
            jc["kind"] = "atoms";
            nlohmann::json a = nlohmann::json::array();
            for (auto& [p, m] : c.at.atoms) a.push_back({p, m});
            jc["atoms"] = a;
            break;
        }
        case measure_component::kind::ifs_self_similar:
            jc["kind"] = "ifs_self_similar";
            jc["ratios"] = c.ifs.ratios;
            jc["weights"] = c.ifs.weights;
            jc["depth"] = c.ifs.depth;
            jc["mass"] = c.ifs.mass;
            break;
        }
        comps.push_back(jc);
    }
    return nlohmann::json{{"components", comps}, {"chirality", to_string(s.chi)}, {"label", s.label}};
}

inline measure_spec measure_spec_from_json(const nlohmann::json& j) {
    detail::check_known_keys(j, {"components", "chirality", "label"}, "measure spec");
    measure_spec s;
    if (!j.contains("chirality"))
        throw config_error("measure spec missing \"chirality\"");
    s.chi = chirality_from_string(j.at("chirality").get<std::string>());
    if (j.contains("label")) s.label = j.at("label").get<std::string>();
    if (!j.contains("components") || !j.at("components").is_array() || j.at("components").empty())
        throw config_error("measure spec needs a nonempty \"components\" array");
    for (const auto& jc : j.at("components")) {
        measure_component c;
        std::string kind = jc.at("kind").get<std::string>();
        if (kind == "uniform") {
            detail::check_known_keys(jc, {"kind", "mass"}, "uniform component");
            c.k = measure_component::kind::uniform;
            if (jc.contains("mass")) c.uni.mass = jc.at("mass").get<double>();
        } else if (kind == "piecewise_linear") {
            detail::check_known_keys(jc, {"kind", "breakpoints", "slopes"}, "piecewise_linear component");
            c.k = measure_component::kind::piecewise_linear;
            c.pl.breakpoints = jc.at("breakpoints").get<std::vector<double>>();
            c.pl.slopes = jc.at("slopes").get<std::vector<double>>();
        } else if (kind == "atoms") {
            detail::check_known_keys(jc, {"kind", "atoms"}, "atoms component");
            c.k = measure_component::kind::atoms;
            for (const auto& ja : jc.at("atoms"))
                c.at.atoms.emplace_back(ja.at(0).get<double>(), ja.at(1).get<double>());
        } else if (kind == "ifs_self_similar") {
            detail::check_known_keys(jc, {"kind", "ratios", "weights", "depth", "mass"}, "ifs component");
            c.k = measure_component::kind::ifs_self_similar;
            c.ifs.ratios = jc.at("ratios").get<std::vector<double>>();
            c.ifs.weights = jc.at("weights").get<std::vector<double>>();
            c.ifs.depth = jc.at("depth").get<int>();
            if (jc.contains("mass")) c.ifs.mass = jc.at("mass").get<double>();
        } else {
            throw config_error("unknown component kind: " + kind);
        }
        s.components.push_back(std::move(c));
    }
    return s;
}

// ---------------------------------------------------------------------------
// Compiled finite-atom measure on the torus [0,1)

struct atomic_measure {
    std::vector<double> positions; // strictly increasing, in (0,1) resp. [0,1)
    std::vector<double> masses;    // positive, same length
    chirality chi = chirality::right_continuous;
    double total_mass = 0.0;
    int resolution = 0;
    std::string digest;
    std::vector<double> cum; // prefix sums of masses, built once after compile

    std::size_t size() const { return positions.size(); }

    void build_prefix() {
        cum.resize(masses.size());
        kahan acc;
        for (std::size_t i = 0; i < masses.size(); ++i) {
            acc.add(masses[i]);
            cum[i] = acc.sum();
        }
    }

    // Cumulative value. For right_continuous (a W): value(x) = sum of masses
    // at positions <= x, opposite_limit is the left limit (< x). For
    // left_continuous (a V): value(x) = sum over < x, opposite_limit over <= x.
    // x = 1 means the full period.
    double eval(double x, side sd = side::value) const {
        bool le; // include atoms at exactly x?
        if (chi == chirality::right_continuous)
            le = (sd == side::value);
        else
            le = (sd == side::opposite_limit);
        std::size_t idx = le ? first_gt(x) : first_geq(x);
        if (idx == 0) return 0.0;
        if (!cum.empty()) return cum[idx - 1];
        kahan acc;
        for (std::size_t i = 0; i < idx; ++i) acc.add(masses[i]);
        return acc.sum();
    }

    // index of first atom with position >= x (resp. > x)
    std::size_t first_geq(double x) const {
        return static_cast<std::size_t>(std::lower_bound(positions.begin(), positions.end(), x) -
                                        positions.begin());
    }
    std::size_t first_gt(double x) const {
        return static_cast<std::size_t>(std::upper_bound(positions.begin(), positions.end(), x) -
                                        positions.begin());
    }

    double interval_mass(double a, double b, closure cl) const {
        if (a > b) throw error("interval_mass: a > b");
        bool incl_a = (cl == closure::left_closed_right_open || cl == closure::closed);
        bool incl_b = (cl == closure::left_open_right_closed || cl == closure::closed);
        std::size_t lo = incl_a ? first_geq(a) : first_gt(a);
        std::size_t hi = incl_b ? first_gt(b) : first_geq(b);
        kahan acc;
        for (std::size_t i = lo; i < hi; ++i) acc.add(masses[i]);
        return acc.sum();
    }
};

// Sum of f(u_k) m_k over atoms of m in the given interval, ascending order.
inline double stieltjes_sum(std::span<const double> f, const atomic_measure& m, double a, double b,
                            closure cl) {
    if (f.size() != m.size()) throw error("stieltjes_sum: length mismatch");
    if (a > b) throw error("stieltjes_sum: a > b");
    bool incl_a = (cl == closure::left_closed_right_open || cl == closure::closed);
    bool incl_b = (cl == closure::left_open_right_closed || cl == closure::closed);
    std::size_t lo = incl_a ? m.first_geq(a) : m.first_gt(a);
    std::size_t hi = incl_b ? m.first_gt(b) : m.first_geq(b);
    kahan acc;
    for (std::size_t i = lo; i < hi; ++i) acc.add(f[i] * m.masses[i]);
    return acc.sum();
}

// One-sided difference quotients of step data adapted to the measure.
// For a right_continuous m (a W): d_k = (f(u_k) - f(u_{k-1})) / m_k, where the
// k=0 predecessor value is `wrap` (the periodic predecessor of the first atom).
// For a left_continuous m (a V): d_k = (f(u_{k+1}) - f(u_k)) / m_k, with the
// successor value of the last atom given by `wrap`.
inline std::vector<double> discrete_derivative(std::span<const double> f, const atomic_measure& m,
                                               double wrap) {
    std::size_t n = m.size();
    if (n < 2) throw error("discrete_derivative: fewer than 2 atoms");
    if (f.size() != n) throw error("discrete_derivative: length mismatch");
    std::vector<double> d(n);
    if (m.chi == chirality::right_continuous) {
        d[0] = (f[0] - wrap) / m.masses[0];
        for (std::size_t k = 1; k < n; ++k) d[k] = (f[k] - f[k - 1]) / m.masses[k];
    } else {
        for (std::size_t k = 0; k + 1 < n; ++k) d[k] = (f[k + 1] - f[k]) / m.masses[k];
        d[n - 1] = (wrap - f[n - 1]) / m.masses[n - 1];
    }
    return d;
}

// Periodic default: the step function is extended periodically, so the wrap
// value is f at the last atom (W case) resp. the first atom (V case).
inline std::vector<double> discrete_derivative(std::span<const double> f, const atomic_measure& m) {
    if (m.size() < 2) throw error("discrete_derivative: fewer than 2 atoms");
    double wrap = (m.chi == chirality::right_continuous) ? f[f.size() - 1] : f[0];
    return discrete_derivative(f, m, wrap);
}

// ---------------------------------------------------------------------------
// Compilation

namespace detail {

inline void validate(const measure_spec& s) {
    for (const auto& c : s.components) {
        switch (c.k) {
        case measure_component::kind::uniform:
            if (!(c.uni.mass > 0)) throw config_error("uniform component mass must be positive");
            break;
        case measure_component::kind::piecewise_linear: {
            const auto& bp = c.pl.breakpoints;
            if (bp.size() < 2 || bp.front() != 0.0 || bp.back() != 1.0)
                throw config_error("piecewise_linear breakpoints must run from 0 to 1");
            for (std::size_t i = 1; i < bp.size(); ++i)
                if (!(bp[i] > bp[i - 1]))
                    throw config_error("piecewise_linear breakpoints must be strictly increasing");
            if (c.pl.slopes.size() != bp.size() - 1)
                throw config_error("piecewise_linear needs one slope per segment");
            for (double sl : c.pl.slopes)
                if (!(sl > 0)) throw config_error("piecewise_linear slopes must be positive");
            break;
        }
        case measure_component::kind::atoms: {
            std::vector<double> seen;
            for (auto& [p, mm] : c.at.atoms) {
                if (!(p >= 0.0 && p < 1.0))
                    throw config_error("atom position must lie in [0,1)");
                if (!(mm > 0)) throw config_error("atom mass must be positive");
                seen.push_back(p);
            }
            std::sort(seen.begin(), seen.end());
            if (std::adjacent_find(seen.begin(), seen.end()) != seen.end())
                throw config_error("duplicate declared atom positions");
            break;
        }
        case measure_component::kind::ifs_self_similar: {
            if (c.ifs.ratios.empty() || c.ifs.ratios.size() != c.ifs.weights.size())
                throw config_error("ifs needs matching nonempty ratios and weights");
            double rsum = 0;
            for (double r : c.ifs.ratios) {
                if (!(r > 0 && r < 1)) throw config_error("ifs ratios must lie in (0,1)");
                rsum += r;
            }
            if (rsum > 1.0 + 1e-12) throw config_error("ifs ratios must sum to at most 1");
            for (double w : c.ifs.weights)
                if (!(w > 0)) throw config_error("ifs weights must be positive");
            if (c.ifs.depth < 1) throw config_error("ifs depth must be >= 1");
            if (!(c.ifs.mass > 0)) throw config_error("ifs mass must be positive");
            break;
        }
        }
    }
}

// quantile of the piecewise linear CDF at cumulative mass q
inline double pl_quantile(const piecewise_linear_component& pl, double q) {
    std::size_t n = pl.slopes.size();
    double acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double seg = pl.slopes[i] * (pl.breakpoints[i + 1] - pl.breakpoints[i]);
        if (q <= acc + seg || i + 1 == n)
            return pl.breakpoints[i] + (q - acc) / pl.slopes[i];
        acc += seg;
    }
    return 1.0;
}

} // namespace detail

inline atomic_measure compile(const measure_spec& spec, int resolution) {
    if (resolution < 1) throw config_error("resolution must be >= 1");
    detail::validate(spec);

    std::vector<std::pair<double, double>> atoms; // (position, mass)
    for (const auto& c : spec.components) {
        switch (c.k) {
        case measure_component::kind::uniform: {
            double cell = c.uni.mass / resolution;
            for (int i = 0; i < resolution; ++i)
                atoms.emplace_back((i + 0.5) / resolution, cell);
            break;
        }
        case measure_component::kind::piecewise_linear: {
            double total = 0;
            for (std::size_t i = 0; i < c.pl.slopes.size(); ++i)
                total += c.pl.slopes[i] * (c.pl.breakpoints[i + 1] - c.pl.breakpoints[i]);
            double cell = total / resolution;
            for (int i = 0; i < resolution; ++i)
                atoms.emplace_back(detail::pl_quantile(c.pl, (i + 0.5) * cell), cell);
            break;
        }
        case measure_component::kind::atoms:
            for (auto& a : c.at.atoms) atoms.push_back(a);
            break;
        case measure_component::kind::ifs_self_similar: {
            std::size_t nmaps = c.ifs.ratios.size();
            double gap = nmaps > 1 ? (1.0 - std::accumulate(c.ifs.ratios.begin(), c.ifs.ratios.end(), 0.0)) /
                                         static_cast<double>(nmaps - 1)
                                   : 0.0;
            std::vector<double> offs(nmaps);
            double off = 0;
            for (std::size_t i = 0; i < nmaps; ++i) {
                offs[i] = off;
                off += c.ifs.ratios[i] + gap;
            }
            // enumerate all depth-d words
            std::vector<std::size_t> word(static_cast<std::size_t>(c.ifs.depth), 0);
            for (;;) {
                double start = 0, len = 1, w = c.ifs.mass;
                for (std::size_t letter : word) {
                    start += offs[letter] * len;
                    len *= c.ifs.ratios[letter];
                    w *= c.ifs.weights[letter];
                }
                atoms.emplace_back(start + len / 2, w);
                std::size_t k = word.size();
                while (k > 0 && ++word[k - 1] == nmaps) word[--k] = 0;
                if (k == 0) break;
            }
            break;
        }
        }
    }

    std::sort(atoms.begin(), atoms.end());
    atomic_measure m;
    m.chi = spec.chi;
    m.resolution = resolution;
    for (auto& [p, mass] : atoms) {
        if (!m.positions.empty() && m.positions.back() == p)
            m.masses.back() += mass; // coinciding positions merge
        else {
            m.positions.push_back(p);
            m.masses.push_back(mass);
        }
    }
    if (m.positions.empty()) throw config_error("measure spec compiles to zero total mass");
    if (spec.chi == chirality::right_continuous && m.positions.front() == 0.0)
        throw config_error("right-continuous measure may not carry an atom at position 0 "
                           "(cumulative value at the origin is 0 by convention)");
    kahan tot;
    for (double mm : m.masses) tot.add(mm);
    m.total_mass = tot.sum();
    if (!(m.total_mass > 0)) throw config_error("measure spec compiles to zero total mass");

    nlohmann::json key{{"spec", to_json(spec)}, {"resolution", resolution}};
    m.digest = hex_digest(key.dump());
    m.build_prefix();
    return m;
}

// ---------------------------------------------------------------------------
// CSV cache format: comment header with chirality / resolution / digest,
// then position,mass rows.

inline void write_csv(const atomic_measure& m, std::ostream& os) {
    os.precision(17);
    os << "# chirality=" << to_string(m.chi) << "\n";
    os << "# resolution=" << m.resolution << "\n";
    os << "# digest=" << m.digest << "\n";
    os << "position,mass\n";
    for (std::size_t i = 0; i < m.size(); ++i)
        os << m.positions[i] << "," << m.masses[i] << "\n";
}

inline void write_csv(const atomic_measure& m, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw cache_error("cannot write " + path);
    write_csv(m, os);
}

inline atomic_measure read_csv(std::istream& is) {
    atomic_measure m;
    std::string line;
    bool have_chi = false;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            std::string key = line.substr(1, eq - 1);
            std::string val = line.substr(eq + 1);
            key.erase(0, key.find_first_not_of(' '));
            key.erase(key.find_last_not_of(' ') + 1);
            if (key == "chirality") {
                m.chi = chirality_from_string(val);
                have_chi = true;
            } else if (key == "resolution")
                m.resolution = std::stoi(val);
            else if (key == "digest")
                m.digest = val;
            continue;
        }
        if (line.rfind("position", 0) == 0) continue;
        auto comma = line.find(',');
        if (comma == std::string::npos) throw cache_error("malformed measure CSV row: " + line);
        m.positions.push_back(std::stod(line.substr(0, comma)));
        m.masses.push_back(std::stod(line.substr(comma + 1)));
    }
    if (!have_chi) throw cache_error("measure CSV missing chirality header");
    if (m.positions.empty()) throw cache_error("measure CSV has no atoms");
    kahan tot;
    for (double mm : m.masses) tot.add(mm);
    m.total_mass = tot.sum();
    m.build_prefix();
    return m;
}

inline atomic_measure read_csv_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw cache_error("cannot read " + path);
    return read_csv(is);
}

// Convenience for tests and the oracle: build directly from atoms.
inline atomic_measure make_atomic(std::vector<std::pair<double, double>> atoms, chirality chi) {
    measure_spec s;
    s.chi = chi;
    measure_component c;
    c.k = measure_component::kind::atoms;
    c.at.atoms = std::move(atoms);
    s.components.push_back(std::move(c));
    return compile(s, 1);
}

inline measure_spec uniform_spec(chirality chi, double mass = 1.0) {
    measure_spec s;
    s.chi = chi;
    measure_component c;
    c.k = measure_component::kind::uniform;
    c.uni.mass = mass;
    s.components.push_back(c);
    return s;
}

inline measure_spec cantor_spec(chirality chi, int depth) {
    measure_spec s;
    s.chi = chi;
    measure_component c;
    c.k = measure_component::kind::ifs_self_similar;
    c.ifs.ratios = {1.0 / 3.0, 1.0 / 3.0};
    c.ifs.weights = {0.5, 0.5};
    c.ifs.depth = depth;
    s.components.push_back(c);
    return s;
}

} // namespace kf
