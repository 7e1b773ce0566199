#pragma once

#include "cardioem/common.hpp"

#include <array>
#include <string>

namespace cardioem {

// Closed-loop lumped circulation. Units: mL, mmHg, s.
enum CircIndex : int {
    V_LA = 0,
    V_LV,
    V_RA,
    V_RV,
    P_AR_SYS,
    P_VEN_SYS,
    P_AR_PUL,
    P_VEN_PUL,
    Q_AR_SYS,
    Q_VEN_SYS,
    Q_AR_PUL,
    Q_VEN_PUL,
    kCircSize
};

using CircState = std::array<double, kCircSize>;

const std::array<std::string, kCircSize>& circ_state_names();

enum class Chamber { LA, LV, RA, RV };

struct ChamberParams {
    double E_pass;    // mmHg/mL
    double E_act;     // mmHg/mL, peak active elastance on top of E_pass
    double V0;        // mL
};

struct CircParams {
    double R_AR_SYS = 0.64, R_AR_PUL = 0.032116;
    double R_VEN_SYS = 0.32, R_VEN_PUL = 0.035684;
    double C_AR_SYS = 1.2, C_AR_PUL = 10.0;
    double C_VEN_SYS = 60.0, C_VEN_PUL = 16.0;
    double L_AR_SYS = 5.0e-3, L_AR_PUL = 5.0e-4;
    double L_VEN_SYS = 5.0e-4, L_VEN_PUL = 5.0e-4;

    ChamberParams LA{0.18, 0.07, 4.0};
    ChamberParams RA{0.07, 0.06, 4.0};
    ChamberParams RV{0.05, 0.55, 16.0};
    // Only used when the LV is itself lumped (no 3D model attached).
    ChamberParams LV{0.08, 2.75, 5.0};

    double R_min = 0.0075;
    double R_max = 75006.2;

    double period = 0.8;              // s
    double ventricle_systole = 0.3;   // fraction of period
    double atrium_systole = 0.3;      // fraction of period
    double atrium_lead = 0.2;         // atrial onset precedes ventricular onset, fraction of period
};

CircState default_circ_state();

// Periodic activation pulse in [0,1]: squared half-sine over the systolic window.
double activation_pulse(double t, double onset, double duration, double period);

double elastance(double t, Chamber chamber, const CircParams& p);

double valve_flow(double dp, const CircParams& p);

// Chamber pressures and valve flows derived from a state. p_LV is an input.
struct CircAux {
    double p_LA, p_LV, p_RA, p_RV;
    double Q_MV, Q_AV, Q_TV, Q_PV;
};

CircAux circ_aux(double t, const CircState& c, double p_LV, const CircParams& p);

// LV pressure of the lumped LV elastance (0D-only mode).
double lv_elastance_pressure(double t, const CircState& c, const CircParams& p);

// Right-hand side. With lumped_lv the p_LV argument is ignored and the LV elastance is used.
CircState circ_rhs(double t, const CircState& c, double p_LV, const CircParams& p, bool lumped_lv = false);

// One RK4 step; p_LV held constant across the step unless lumped_lv.
CircState circ_step(double t, const CircState& c, double p_LV, double dt, const CircParams& p,
                    bool lumped_lv = false);

// Throws SolverError on negative volume or |p| > 500 mmHg.
void check_circ_state(const CircState& c, double t);

double total_blood_volume(const CircState& c, const CircParams& p);

// Largest |eigenvalue| * dt over a few representative Jacobians; throws InputError above the RK4 margin.
double circ_stability_number(const CircParams& p, double dt, bool lumped_lv);
void check_circ_timestep(const CircParams& p, double dt, bool lumped_lv);

}  // namespace cardioem
