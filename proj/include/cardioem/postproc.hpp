#pragma once

#include "cardioem/common.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace cardioem {

// Upward crossings of `threshold`, linearly interpolated, ignoring crossings within `lockout` of the last.
std::vector<double> threshold_crossings(const std::vector<double>& t, const std::vector<double>& u, double threshold,
                                        double lockout);

struct BclStats {
    std::vector<double> activations;  // s
    std::vector<double> cycles;       // s
    double mean = 0.0, min = 0.0, max = 0.0;
    bool sustained = false;           // at least two activations
};

BclStats detect_bcl(const std::vector<double>& t, const std::vector<double>& u, double threshold = -20.0,
                    double lockout = 0.05);
// Statistics over the last `n` cycles (all when n <= 0 or fewer are available).
BclStats last_cycles(const BclStats& s, int n);
// (max - min) / mean; 0 for an empty list.
double relative_spread(const std::vector<double>& v);

// Distance over activation-time difference between two points; empty if either is unactivated (t < 0)
// or the times coincide.
std::optional<double> conduction_velocity(const Vec3& xa, double ta, const Vec3& xb, double tb);

struct PvCycle {
    double t_start = 0.0, t_end = 0.0;
    double sv = 0.0, ef = 0.0, v_max = 0.0, v_min = 0.0, p_peak = 0.0, closure_gap = 0.0;
};

// Per-cycle loop metrics over [boundaries[k], boundaries[k+1]); samples must be time-ordered.
std::vector<PvCycle> pv_loop(const std::vector<double>& t, const std::vector<double>& volume,
                             const std::vector<double>& pressure, const std::vector<double>& boundaries);
// Cycle boundaries every `period` from t0 up to the last sample.
std::vector<double> periodic_boundaries(const std::vector<double>& t, double period, double t0 = 0.0);

enum class VtClass { Stable, Unstable, None };
const char* to_string(VtClass c);

struct VtCriteria {
    double bcl_spread = 0.10;
    double sv_spread = 0.15;
    int cycles = 3;
};

// "none" without at least `cycles` completed cycles or when activity stops: the last activation lies more
// than two mean cycle lengths before t_end (t_end < 0 skips that check).
VtClass classify_vt(const BclStats& bcl, const std::vector<double>& sv_per_cycle, const VtCriteria& c = {},
                    double t_end = -1.0);

struct TensionSample {
    double t = 0.0, min = 0.0, avg = 0.0, max = 0.0;
};

// Weighted domain statistics (weights: quadrature volumes; empty: plain mean).
TensionSample tension_sample(double t, const std::vector<double>& Ta, const std::vector<double>& weights = {});
// Minimum of the domain-min tension over inter-beat windows [b_k, b_k+1) for k >= 1; the first window
// precedes any contraction. NaN without at least one such window.
double diastolic_floor(const std::vector<TensionSample>& s, const std::vector<double>& beat_times);

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> columns;
    const std::vector<double>& column(const std::string& name) const;  // throws InputError naming the column
    bool has(const std::string& name) const;
    std::size_t rows() const { return columns.empty() ? 0 : columns.front().size(); }
};

CsvTable read_csv(const std::string& path);

// Flat "key = value" report, keys sorted.
using Metrics = std::map<std::string, std::string>;
void write_metrics(const std::string& path, const Metrics& m);
Metrics read_metrics(const std::string& path);
std::string format_double(double v);

}  // namespace cardioem
