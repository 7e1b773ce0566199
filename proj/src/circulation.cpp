#include "cardioem/circulation.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>
#include <sstream>

namespace cardioem {

const std::array<std::string, kCircSize>& circ_state_names() {
    static const std::array<std::string, kCircSize> names = {
        "V_LA",      "V_LV",      "V_RA",      "V_RV",      "p_AR_SYS",  "p_VEN_SYS",
        "p_AR_PUL",  "p_VEN_PUL", "Q_AR_SYS",  "Q_VEN_SYS", "Q_AR_PUL",  "Q_VEN_PUL"};
    return names;
}

CircState default_circ_state() {
    CircState c{};
    c[V_LA] = 65.0;
    c[V_LV] = 120.0;
    c[V_RA] = 65.0;
    c[V_RV] = 145.0;
    c[P_AR_SYS] = 80.0;
    c[P_VEN_SYS] = 30.0;
    c[P_AR_PUL] = 35.0;
    c[P_VEN_PUL] = 24.0;
    return c;
}

double activation_pulse(double t, double onset, double duration, double period) {
    double s = std::fmod(t - onset, period);
    if (s < 0.0) s += period;
    if (s >= duration) return 0.0;
    const double v = std::sin(std::numbers::pi * s / duration);
    return v * v;
}

double elastance(double t, Chamber chamber, const CircParams& p) {
    const double T = p.period;
    switch (chamber) {
        case Chamber::LA:
            return p.LA.E_pass +
                   p.LA.E_act * activation_pulse(t, -p.atrium_lead * T, p.atrium_systole * T, T);
        case Chamber::RA:
            return p.RA.E_pass +
                   p.RA.E_act * activation_pulse(t, -p.atrium_lead * T, p.atrium_systole * T, T);
        case Chamber::RV:
            return p.RV.E_pass + p.RV.E_act * activation_pulse(t, 0.0, p.ventricle_systole * T, T);
        case Chamber::LV:
            return p.LV.E_pass + p.LV.E_act * activation_pulse(t, 0.0, p.ventricle_systole * T, T);
    }
    return 0.0;
}

double valve_flow(double dp, const CircParams& p) {
    return dp >= 0.0 ? dp / p.R_min : dp / p.R_max;
}

double lv_elastance_pressure(double t, const CircState& c, const CircParams& p) {
    return elastance(t, Chamber::LV, p) * (c[V_LV] - p.LV.V0);
}

CircAux circ_aux(double t, const CircState& c, double p_LV, const CircParams& p) {
    CircAux a{};
    a.p_LA = elastance(t, Chamber::LA, p) * (c[V_LA] - p.LA.V0);
    a.p_RA = elastance(t, Chamber::RA, p) * (c[V_RA] - p.RA.V0);
    a.p_RV = elastance(t, Chamber::RV, p) * (c[V_RV] - p.RV.V0);
    a.p_LV = p_LV;
    a.Q_MV = valve_flow(a.p_LA - a.p_LV, p);
    a.Q_AV = valve_flow(a.p_LV - c[P_AR_SYS], p);
    a.Q_TV = valve_flow(a.p_RA - a.p_RV, p);
    a.Q_PV = valve_flow(a.p_RV - c[P_AR_PUL], p);
    return a;
}

CircState circ_rhs(double t, const CircState& c, double p_LV, const CircParams& p, bool lumped_lv) {
    if (lumped_lv) p_LV = lv_elastance_pressure(t, c, p);
    const CircAux a = circ_aux(t, c, p_LV, p);
    CircState r{};
    r[V_LA] = c[Q_VEN_PUL] - a.Q_MV;
    r[V_LV] = a.Q_MV - a.Q_AV;
    r[V_RA] = c[Q_VEN_SYS] - a.Q_TV;
    r[V_RV] = a.Q_TV - a.Q_PV;
    r[P_AR_SYS] = (a.Q_AV - c[Q_AR_SYS]) / p.C_AR_SYS;
    r[P_VEN_SYS] = (c[Q_AR_SYS] - c[Q_VEN_SYS]) / p.C_VEN_SYS;
    r[P_AR_PUL] = (a.Q_PV - c[Q_AR_PUL]) / p.C_AR_PUL;
    r[P_VEN_PUL] = (c[Q_AR_PUL] - c[Q_VEN_PUL]) / p.C_VEN_PUL;
    r[Q_AR_SYS] = (c[P_AR_SYS] - c[P_VEN_SYS] - p.R_AR_SYS * c[Q_AR_SYS]) / p.L_AR_SYS;
    r[Q_VEN_SYS] = (c[P_VEN_SYS] - a.p_RA - p.R_VEN_SYS * c[Q_VEN_SYS]) / p.L_VEN_SYS;
    r[Q_AR_PUL] = (c[P_AR_PUL] - c[P_VEN_PUL] - p.R_AR_PUL * c[Q_AR_PUL]) / p.L_AR_PUL;
    r[Q_VEN_PUL] = (c[P_VEN_PUL] - a.p_LA - p.R_VEN_PUL * c[Q_VEN_PUL]) / p.L_VEN_PUL;
    return r;
}

namespace {

CircState axpy(const CircState& x, double a, const CircState& y) {
    CircState r;
    for (int i = 0; i < kCircSize; ++i) r[i] = x[i] + a * y[i];
    return r;
}

}  // namespace

CircState circ_step(double t, const CircState& c, double p_LV, double dt, const CircParams& p,
                    bool lumped_lv) {
    const CircState k1 = circ_rhs(t, c, p_LV, p, lumped_lv);
    const CircState k2 = circ_rhs(t + 0.5 * dt, axpy(c, 0.5 * dt, k1), p_LV, p, lumped_lv);
    const CircState k3 = circ_rhs(t + 0.5 * dt, axpy(c, 0.5 * dt, k2), p_LV, p, lumped_lv);
    const CircState k4 = circ_rhs(t + dt, axpy(c, dt, k3), p_LV, p, lumped_lv);
    CircState r;
    for (int i = 0; i < kCircSize; ++i)
        r[i] = c[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    return r;
}

void check_circ_state(const CircState& c, double t) {
    for (int i = 0; i < kCircSize; ++i) {
        const bool bad = !std::isfinite(c[i]) || (i <= V_RV && c[i] < 0.0) ||
                         (i >= P_AR_SYS && i <= P_VEN_PUL && std::abs(c[i]) > 500.0);
        if (bad) {
            std::ostringstream os;
            os << "circulation unstable at t=" << t << ": " << circ_state_names()[i] << " = " << c[i];
            throw SolverError(os.str());
        }
    }
}

double total_blood_volume(const CircState& c, const CircParams& p) {
    return c[V_LA] + c[V_LV] + c[V_RA] + c[V_RV] + p.C_AR_SYS * c[P_AR_SYS] +
           p.C_VEN_SYS * c[P_VEN_SYS] + p.C_AR_PUL * c[P_AR_PUL] + p.C_VEN_PUL * c[P_VEN_PUL];
}

double circ_stability_number(const CircParams& p, double dt, bool lumped_lv) {
    // Probe the Jacobian at end-systole-like and end-diastole-like phases with every valve
    // driven open and closed; the spectral radius bounds the explicit step.
    double worst = 0.0;
    const double T = p.period;
    const double times[] = {0.0, 0.5 * p.ventricle_systole * T, 0.9 * T};
    for (double t : times) {
        for (int open = 0; open < 2; ++open) {
            CircState c = default_circ_state();
            if (open) {
                c[V_LA] = 400.0;
                c[V_RA] = 400.0;
                c[V_RV] = 400.0;
                c[V_LV] = 400.0;
                c[P_AR_SYS] = c[P_AR_PUL] = 1.0;
            }
            // The 3D LV behaves like a stiff elastance; a fixed p_LV probes the rest of the loop.
            const double p_lv = open ? 0.0 : 200.0;
            Eigen::Matrix<double, kCircSize, kCircSize> J;
            const CircState f0 = circ_rhs(t, c, p_lv, p, lumped_lv);
            for (int j = 0; j < kCircSize; ++j) {
                CircState cp = c;
                const double h = 1e-6 * std::max(1.0, std::abs(c[j]));
                cp[j] += h;
                const CircState f1 = circ_rhs(t, cp, p_lv, p, lumped_lv);
                for (int i = 0; i < kCircSize; ++i) J(i, j) = (f1[i] - f0[i]) / h;
            }
            Eigen::EigenSolver<Eigen::Matrix<double, kCircSize, kCircSize>> es(J, false);
            for (int i = 0; i < kCircSize; ++i) worst = std::max(worst, std::abs(es.eigenvalues()[i]) * dt);
        }
    }
    return worst;
}

void check_circ_timestep(const CircParams& p, double dt, bool lumped_lv) {
    const double z = circ_stability_number(p, dt, lumped_lv);
    // RK4 real-axis limit is ~2.78; keep a margin.
    if (z > 2.5) {
        std::ostringstream os;
        os << "circulation time step " << dt << " s too large: |lambda| dt = " << z;
        throw InputError(os.str());
    }
}

}  // namespace cardioem
