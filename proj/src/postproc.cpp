#include "cardioem/postproc.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace cardioem {

std::vector<double> threshold_crossings(const std::vector<double>& t, const std::vector<double>& u, double threshold,
                                        double lockout) {
    if (t.size() != u.size()) throw InputError("trace time and value lengths differ");
    std::vector<double> out;
    for (std::size_t k = 1; k < t.size(); ++k) {
        if (!(u[k - 1] < threshold && u[k] >= threshold)) continue;
        const double tc = t[k - 1] + (threshold - u[k - 1]) / (u[k] - u[k - 1]) * (t[k] - t[k - 1]);
        if (!out.empty() && tc - out.back() < lockout) continue;
        out.push_back(tc);
    }
    return out;
}

namespace {

void fill_stats(BclStats& s) {
    s.sustained = s.activations.size() >= 2;
    if (s.cycles.empty()) {
        s.mean = s.min = s.max = 0.0;
        return;
    }
    s.mean = std::accumulate(s.cycles.begin(), s.cycles.end(), 0.0) / static_cast<double>(s.cycles.size());
    s.min = *std::min_element(s.cycles.begin(), s.cycles.end());
    s.max = *std::max_element(s.cycles.begin(), s.cycles.end());
}

}  // namespace

BclStats detect_bcl(const std::vector<double>& t, const std::vector<double>& u, double threshold, double lockout) {
    BclStats s;
    s.activations = threshold_crossings(t, u, threshold, lockout);
    for (std::size_t k = 1; k < s.activations.size(); ++k) s.cycles.push_back(s.activations[k] - s.activations[k - 1]);
    fill_stats(s);
    return s;
}

BclStats last_cycles(const BclStats& s, int n) {
    if (n <= 0 || static_cast<std::size_t>(n) >= s.cycles.size()) return s;
    BclStats r;
    r.cycles.assign(s.cycles.end() - n, s.cycles.end());
    r.activations.assign(s.activations.end() - (n + 1), s.activations.end());
    fill_stats(r);
    return r;
}

double relative_spread(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    return (*hi - *lo) / mean;
}

std::optional<double> conduction_velocity(const Vec3& xa, double ta, const Vec3& xb, double tb) {
    if (ta < 0.0 || tb < 0.0 || ta == tb) return std::nullopt;
    return (xb - xa).norm() / std::abs(tb - ta);
}

std::vector<PvCycle> pv_loop(const std::vector<double>& t, const std::vector<double>& volume,
                             const std::vector<double>& pressure, const std::vector<double>& boundaries) {
    if (t.size() != volume.size() || t.size() != pressure.size())
        throw InputError("pressure-volume traces have different lengths");
    auto value_at = [&](double tb) {
        const auto it = std::lower_bound(t.begin(), t.end(), tb);
        if (it == t.end()) return volume.back();
        const std::size_t k = static_cast<std::size_t>(it - t.begin());
        if (k == 0 || *it == tb) return volume[k];
        const double s = (tb - t[k - 1]) / (t[k] - t[k - 1]);
        return volume[k - 1] + s * (volume[k] - volume[k - 1]);
    };
    std::vector<PvCycle> out;
    for (std::size_t b = 0; b + 1 < boundaries.size(); ++b) {
        PvCycle c;
        c.t_start = boundaries[b];
        c.t_end = boundaries[b + 1];
        c.v_max = -std::numeric_limits<double>::infinity();
        c.v_min = std::numeric_limits<double>::infinity();
        c.p_peak = -std::numeric_limits<double>::infinity();
        bool any = false;
        for (std::size_t k = 0; k < t.size(); ++k) {
            if (t[k] < c.t_start || t[k] >= c.t_end) continue;
            any = true;
            c.v_max = std::max(c.v_max, volume[k]);
            c.v_min = std::min(c.v_min, volume[k]);
            c.p_peak = std::max(c.p_peak, pressure[k]);
        }
        if (!any) continue;
        c.sv = c.v_max - c.v_min;
        c.ef = c.v_max > 0.0 ? c.sv / c.v_max : 0.0;
        c.closure_gap = std::abs(value_at(c.t_start) - value_at(c.t_end));
        out.push_back(c);
    }
    return out;
}

std::vector<double> periodic_boundaries(const std::vector<double>& t, double period, double t0) {
    if (!(period > 0.0)) throw InputError("cycle period must be positive");
    std::vector<double> b;
    if (t.empty()) return b;
    for (int k = 0;; ++k) {
        const double tb = t0 + k * period;
        if (tb > t.back() + 1e-12) break;
        b.push_back(tb);
    }
    return b;
}

const char* to_string(VtClass c) {
    switch (c) {
    case VtClass::Stable: return "stable";
    case VtClass::Unstable: return "unstable";
    case VtClass::None: return "none";
    }
    return "none";
}

VtClass classify_vt(const BclStats& bcl, const std::vector<double>& sv_per_cycle, const VtCriteria& c, double t_end) {
    if (static_cast<int>(bcl.cycles.size()) < c.cycles) return VtClass::None;
    const BclStats tail = last_cycles(bcl, c.cycles);
    if (t_end >= 0.0 && t_end - bcl.activations.back() > 2.0 * tail.mean) return VtClass::None;
    if (relative_spread(tail.cycles) > c.bcl_spread) return VtClass::Unstable;
    if (static_cast<int>(sv_per_cycle.size()) >= c.cycles) {
        const std::vector<double> sv(sv_per_cycle.end() - c.cycles, sv_per_cycle.end());
        if (relative_spread(sv) > c.sv_spread) return VtClass::Unstable;
    }
    return VtClass::Stable;
}

TensionSample tension_sample(double t, const std::vector<double>& Ta, const std::vector<double>& weights) {
    TensionSample s;
    s.t = t;
    if (Ta.empty()) return s;
    if (!weights.empty() && weights.size() != Ta.size()) throw InputError("tension weights do not match the field");
    s.min = *std::min_element(Ta.begin(), Ta.end());
    s.max = *std::max_element(Ta.begin(), Ta.end());
    double sum = 0.0, wsum = 0.0;
    for (std::size_t i = 0; i < Ta.size(); ++i) {
        const double w = weights.empty() ? 1.0 : weights[i];
        sum += w * Ta[i];
        wsum += w;
    }
    s.avg = sum / wsum;
    return s;
}

double diastolic_floor(const std::vector<TensionSample>& s, const std::vector<double>& beat_times) {
    double floor = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t k = 1; k + 1 < beat_times.size(); ++k) {
        double m = std::numeric_limits<double>::infinity();
        for (const TensionSample& x : s)
            if (x.t >= beat_times[k] && x.t < beat_times[k + 1]) m = std::min(m, x.min);
        if (std::isfinite(m)) floor = std::isnan(floor) ? m : std::min(floor, m);
    }
    return floor;
}

const std::vector<double>& CsvTable::column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return columns[i];
    throw InputError("CSV column missing: " + name);
}

bool CsvTable::has(const std::string& name) const {
    return std::find(header.begin(), header.end(), name) != header.end();
}

CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path);
    CsvTable t;
    std::string line;
    if (!std::getline(in, line)) throw InputError(path + ": empty CSV");
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) t.header.push_back(cell);
    }
    t.columns.resize(t.header.size());
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        std::size_t col = 0, pos = 0;
        while (true) {
            const std::size_t end = std::min(line.find(',', pos), line.size());
            if (col >= t.columns.size()) throw InputError(path + ": too many fields on line " + std::to_string(row));
            double v = 0.0;
            const auto r = std::from_chars(line.data() + pos, line.data() + end, v);
            if (r.ec != std::errc() || r.ptr != line.data() + end)
                throw InputError(path + ": bad number in column " + t.header[col] + " on line " + std::to_string(row));
            t.columns[col++].push_back(v);
            if (end == line.size()) break;
            pos = end + 1;
        }
        if (col != t.columns.size()) throw InputError(path + ": too few fields on line " + std::to_string(row));
    }
    return t;
}

std::string format_double(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);  // shortest exact round trip
    return std::string(buf, r.ptr);
}

void write_metrics(const std::string& path, const Metrics& m) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path);
    for (const auto& [k, v] : m) out << k << " = " << v << '\n';
}

Metrics read_metrics(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path);
    Metrics m;
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find(" = ");
        if (eq == std::string::npos) continue;
        m[line.substr(0, eq)] = line.substr(eq + 3);
    }
    return m;
}

}  // namespace cardioem
