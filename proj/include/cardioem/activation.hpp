#pragma once

#include "cardioem/common.hpp"

namespace cardioem {

struct ActivationParams {
    // Sarcomere constants. Only kd_bar, alpha_kd, k_off, k_basic, a_xb and sl0 drive the reduced
    // kinetics; the rest are carried for reporting.
    double mu = 10.0, gamma = 30.0, Q = 2.0;
    double kd_bar = 0.4;        // uM
    double alpha_kd = -0.2083;  // uM/um
    double k_off = 40.0;        // 1/s
    double k_basic = 8.0;       // 1/s
    double mu_fp0 = 32.255, mu_fp1 = 0.768, r0 = 134.31, alpha = 25.184;
    double a_xb = 160e6;  // Pa
    double sl0 = 1.9;     // um

    // Reduced two-state model.
    double hill = 3.0;      // calcium binding cooperativity
    double k_att = 30.0;    // 1/s, attachment rate at full binding
    double fv = 10.0;       // 1/um, detachment increase per |dSL/dt| (um/s)
    double eps_xb = 1.0e-3; // fraction of a_xb carried by fully attached crossbridges
    double sl_min = 1.4, sl_max = 2.3;  // um, length-dependence ramp
    double theta = 5e-3;    // s, low-pass time constant on dSL/dt
};

void validate(const ActivationParams& p);

// SL = sl0 sqrt(I4f), I4f = |F f0|^2.
double sarcomere_length(const Mat3& F, const Vec3& f0, double sl0, double* I4f = nullptr);
double dissociation_constant(double sl, const ActivationParams& p);
double length_factor(double sl, const ActivationParams& p);

// First-order low-pass y += dt/(theta+dt) (x - y), seeded with the first sample.
struct LowPass {
    double y = 0.0;
    bool primed = false;
    double update(double x, double dt, double theta);
};

struct ActivationState {
    double B = 0.0;   // calcium-bound fraction of regulatory units
    double X = 0.0;   // force-bearing crossbridge fraction
    double sl_prev = -1.0;
    LowPass rate;     // filtered dSL/dt (um/s)
};

// One implicit step of the reduced kinetics at calcium ca (uM) and current SL (um).
// Returns the active tension T_a (Pa).
double activation_step(ActivationState& s, double ca, double sl, double dt, const ActivationParams& p);
double active_tension(const ActivationState& s, double sl, const ActivationParams& p);

}  // namespace cardioem
