#include "cardioem/ionic.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace cardioem {

namespace {

const char* kNames[TTP06::kSize] = {"K_i", "Na_i", "Ca_i", "Xr1", "Xr2", "Xs",    "m",     "h",     "j",
                                    "Ca_ss", "d", "f",  "f2",  "fCass", "s", "r", "Ca_SR", "R_prime"};

inline double sq(double x) { return x * x; }

}  // namespace

std::string TTP06::state_name(int i) const { return kNames[i]; }

bool TTP06::is_gate(int i) {
    switch (i) {
        case Xr1: case Xr2: case Xs: case m: case h: case j: case d: case f: case f2: case fCass:
        case s: case r:
            return true;
        default:
            return false;
    }
}

void TTP06::initial_state(std::span<double> w) const {
    w[K_i] = 138.4;
    w[Na_i] = 10.355;
    w[Ca_i] = 0.00013;
    w[Xr1] = 0.00448;
    w[Xr2] = 0.476;
    w[Xs] = 0.0087;
    w[m] = 0.00155;
    w[h] = 0.7573;
    w[j] = 0.7225;
    w[Ca_ss] = 0.00036;
    w[d] = 3.164e-5;
    w[f] = 0.8009;
    w[f2] = 0.9778;
    w[fCass] = 0.9953;
    w[s] = 0.3212;
    w[r] = 2.235e-8;
    w[Ca_SR] = 3.715;
    w[R_prime] = 0.9068;
}

void TTP06::gates(double V, std::span<const double> w, Gates& g) const {
    g.inf[Xr1] = 1.0 / (1.0 + std::exp((-26.0 - V) / 7.0));
    g.tau[Xr1] = (450.0 / (1.0 + std::exp((-45.0 - V) / 10.0))) * (6.0 / (1.0 + std::exp((V + 30.0) / 11.5)));

    g.inf[Xr2] = 1.0 / (1.0 + std::exp((V + 88.0) / 24.0));
    g.tau[Xr2] = (3.0 / (1.0 + std::exp((-60.0 - V) / 20.0))) * (1.12 / (1.0 + std::exp((V - 60.0) / 20.0)));

    g.inf[Xs] = 1.0 / (1.0 + std::exp((-5.0 - V) / 14.0));
    g.tau[Xs] = (1400.0 / std::sqrt(1.0 + std::exp((5.0 - V) / 6.0))) * (1.0 / (1.0 + std::exp((V - 35.0) / 15.0))) + 80.0;

    g.inf[m] = 1.0 / sq(1.0 + std::exp((-56.86 - V) / 9.03));
    g.tau[m] = (1.0 / (1.0 + std::exp((-60.0 - V) / 5.0))) *
               (0.1 / (1.0 + std::exp((V + 35.0) / 5.0)) + 0.1 / (1.0 + std::exp((V - 50.0) / 200.0)));

    const double hj_inf = 1.0 / sq(1.0 + std::exp((V + 71.55) / 7.43));
    double ah, bh, aj, bj;
    if (V < -40.0) {
        ah = 0.057 * std::exp(-(V + 80.0) / 6.8);
        bh = 2.7 * std::exp(0.079 * V) + 3.1e5 * std::exp(0.3485 * V);
        aj = (-25428.0 * std::exp(0.2444 * V) - 6.948e-6 * std::exp(-0.04391 * V)) * (V + 37.78) /
             (1.0 + std::exp(0.311 * (V + 79.23)));
        bj = 0.02424 * std::exp(-0.01052 * V) / (1.0 + std::exp(-0.1378 * (V + 40.14)));
    } else {
        ah = 0.0;
        bh = 0.77 / (0.13 * (1.0 + std::exp(-(V + 10.66) / 11.1)));
        aj = 0.0;
        bj = 0.6 * std::exp(0.057 * V) / (1.0 + std::exp(-0.1 * (V + 32.0)));
    }
    g.inf[h] = hj_inf;
    g.tau[h] = 1.0 / (ah + bh);
    g.inf[j] = hj_inf;
    g.tau[j] = 1.0 / (aj + bj);

    g.inf[d] = 1.0 / (1.0 + std::exp((-8.0 - V) / 7.5));
    g.tau[d] = (1.4 / (1.0 + std::exp((-35.0 - V) / 13.0)) + 0.25) * (1.4 / (1.0 + std::exp((V + 5.0) / 5.0))) +
               1.0 / (1.0 + std::exp((50.0 - V) / 20.0));

    g.inf[f] = 1.0 / (1.0 + std::exp((V + 20.0) / 7.0));
    g.tau[f] = 1102.5 * std::exp(-sq(V + 27.0) / 225.0) + 200.0 / (1.0 + std::exp((13.0 - V) / 10.0)) +
               180.0 / (1.0 + std::exp((V + 30.0) / 10.0)) + 20.0;

    g.inf[f2] = 0.67 / (1.0 + std::exp((V + 35.0) / 7.0)) + 0.33;
    g.tau[f2] = 562.0 * std::exp(-sq(V + 27.0) / 240.0) + 31.0 / (1.0 + std::exp((25.0 - V) / 10.0)) +
                80.0 / (1.0 + std::exp((V + 30.0) / 10.0));

    const double c2 = sq(w[Ca_ss] / 0.05);
    g.inf[fCass] = 0.6 / (1.0 + c2) + 0.4;
    g.tau[fCass] = 80.0 / (1.0 + c2) + 2.0;

    // Endocardial transient outward inactivation.
    g.inf[s] = 1.0 / (1.0 + std::exp((V + 28.0) / 5.0));
    g.tau[s] = 1000.0 * std::exp(-sq(V + 67.0) / 1000.0) + 8.0;

    g.inf[r] = 1.0 / (1.0 + std::exp((20.0 - V) / 6.0));
    g.tau[r] = 9.5 * std::exp(-sq(V + 40.0) / 1800.0) + 0.8;
}

double TTP06::currents(double V, std::span<const double> w, double eta, double* rate) const {
    const TTP06Params& p = p_;
    const double RTF = p.R * p.T / p.F;
    const double FRT = 1.0 / RTF;

    const double E_Na = RTF * std::log(p.Na_o / w[Na_i]);
    const double E_K = RTF * std::log(p.K_o / w[K_i]);
    const double E_Ks = RTF * std::log((p.K_o + p.P_kna * p.Na_o) / (w[K_i] + p.P_kna * w[Na_i]));
    const double E_Ca = 0.5 * RTF * std::log(p.Ca_o / w[Ca_i]);

    const double g_Na = p.g_Na * eta;
    const double g_CaL = p.g_CaL * eta;
    const double g_K1 = p.g_K1 * (0.5 + 0.5 * eta);
    const double sqrt_ko = std::sqrt(p.K_o / 5.4);

    const double a_K1 = 0.1 / (1.0 + std::exp(0.06 * (V - E_K - 200.0)));
    const double b_K1 = (3.0 * std::exp(0.0002 * (V - E_K + 100.0)) + std::exp(0.1 * (V - E_K - 10.0))) /
                        (1.0 + std::exp(-0.5 * (V - E_K)));
    const double I_K1 = g_K1 * sqrt_ko * (a_K1 / (a_K1 + b_K1)) * (V - E_K);
    const double I_to = p.g_to * w[r] * w[s] * (V - E_K);
    const double I_Kr = p.g_Kr * sqrt_ko * w[Xr1] * w[Xr2] * (V - E_K);
    const double I_Ks = p.g_Ks * sq(w[Xs]) * (V - E_Ks);

    // L-type current; removable singularity at V = 15 mV.
    const double z = 2.0 * (V - 15.0) * FRT;
    double ghk;
    if (std::abs(z) < 1e-6) {
        ghk = 2.0 * p.F * (0.25 * w[Ca_ss] - p.Ca_o);
    } else {
        ghk = 4.0 * (V - 15.0) * p.F * FRT * (0.25 * w[Ca_ss] * std::exp(z) - p.Ca_o) / std::expm1(z);
    }
    const double I_CaL = g_CaL * w[d] * w[f] * w[f2] * w[fCass] * ghk;

    const double I_NaK = p.P_NaK * p.K_o / (p.K_o + p.K_mk) * w[Na_i] / (w[Na_i] + p.K_mNa) /
                         (1.0 + 0.1245 * std::exp(-0.1 * V * FRT) + 0.0353 * std::exp(-V * FRT));
    const double I_Na = g_Na * w[m] * w[m] * w[m] * w[h] * w[j] * (V - E_Na);
    const double I_bNa = p.g_bna * (V - E_Na);
    const double e1 = std::exp(p.gamma * V * FRT), e2 = std::exp((p.gamma - 1.0) * V * FRT);
    const double I_NaCa =
        p.K_NaCa * (e1 * w[Na_i] * w[Na_i] * w[Na_i] * p.Ca_o - e2 * p.Na_o * p.Na_o * p.Na_o * w[Ca_i] * p.alpha) /
        ((p.Km_Nai * p.Km_Nai * p.Km_Nai + p.Na_o * p.Na_o * p.Na_o) * (p.Km_Ca + p.Ca_o) * (1.0 + p.K_sat * e2));
    const double I_bCa = p.g_bca * (V - E_Ca);
    const double I_pK = p.g_pK * (V - E_K) / (1.0 + std::exp((25.0 - V) / 5.98));
    const double I_pCa = p.g_pCa * w[Ca_i] / (w[Ca_i] + p.K_pCa);

    if (rate != nullptr) {
        const double I_up = p.Vmax_up / (1.0 + sq(p.K_up) / sq(w[Ca_i]));
        const double I_leak = p.V_leak * (w[Ca_SR] - w[Ca_i]);
        const double I_xfer = p.V_xfer * (w[Ca_ss] - w[Ca_i]);
        const double k_casr = p.max_sr - (p.max_sr - p.min_sr) / (1.0 + sq(p.EC / w[Ca_SR]));
        const double k1 = p.k1p / k_casr;
        const double k2 = p.k2p * k_casr;
        const double O = k1 * sq(w[Ca_ss]) * w[R_prime] / (p.k3 + k1 * sq(w[Ca_ss]));
        const double I_rel = p.V_rel * O * (w[Ca_SR] - w[Ca_ss]);

        const double buf_c = 1.0 / (1.0 + p.Buf_c * p.K_buf_c / sq(w[Ca_i] + p.K_buf_c));
        const double buf_sr = 1.0 / (1.0 + p.Buf_sr * p.K_buf_sr / sq(w[Ca_SR] + p.K_buf_sr));
        const double buf_ss = 1.0 / (1.0 + p.Buf_ss * p.K_buf_ss / sq(w[Ca_ss] + p.K_buf_ss));

        rate[R_prime] = -k2 * w[Ca_ss] * w[R_prime] + p.k4 * (1.0 - w[R_prime]);
        rate[Ca_i] = buf_c * ((I_leak - I_up) * p.V_sr / p.V_c + I_xfer -
                              (I_bCa + I_pCa - 2.0 * I_NaCa) * p.Cm / (2.0 * p.V_c * p.F));
        rate[Ca_SR] = buf_sr * (I_up - (I_rel + I_leak));
        rate[Ca_ss] = buf_ss * (-I_CaL * p.Cm / (2.0 * p.V_ss * p.F) + I_rel * p.V_sr / p.V_ss -
                                I_xfer * p.V_c / p.V_ss);
        rate[Na_i] = -(I_Na + I_bNa + 3.0 * I_NaK + 3.0 * I_NaCa) * p.Cm / (p.V_c * p.F);
        rate[K_i] = -(I_K1 + I_to + I_Kr + I_Ks + I_pK - 2.0 * I_NaK) * p.Cm / (p.V_c * p.F);
    }

    return I_K1 + I_to + I_Kr + I_Ks + I_CaL + I_NaK + I_Na + I_bNa + I_NaCa + I_bCa + I_pK + I_pCa;
}

double TTP06::current(double u, std::span<const double> w, double eta) const {
    if (eta <= 0.0) return p_.scar_leak * (u - resting_potential());
    return 1000.0 * currents(u, w, eta, nullptr);
}

void TTP06::rates(double u, std::span<const double> w, double eta, std::span<double> dwdt) const {
    if (eta <= 0.0) {
        std::fill(dwdt.begin(), dwdt.end(), 0.0);
        return;
    }
    Gates g;
    gates(u, w, g);
    double conc[kSize];
    currents(u, w, eta, conc);
    for (int i = 0; i < kSize; ++i)
        dwdt[i] = 1000.0 * (is_gate(i) ? (g.inf[i] - w[i]) / g.tau[i] : conc[i]);
}

void TTP06::advance(double u, std::span<double> w, double eta, double dt) const {
    if (eta <= 0.0) return;
    const double dt_ms = 1000.0 * dt;
    Gates g;
    gates(u, w, g);
    double conc[kSize];
    currents(u, w, eta, conc);
    for (int i = 0; i < kSize; ++i) {
        if (is_gate(i)) {
            w[i] = g.inf[i] + (w[i] - g.inf[i]) * std::exp(-dt_ms / g.tau[i]);
        } else {
            // Explicit step in log space keeps concentrations positive.
            w[i] = w[i] * std::exp(dt_ms * conc[i] / w[i]);
        }
    }
}

IonicResult ionic_rhs(const IonicModel& model, double u, std::span<const double> w, double eta) {
    check_ionic_state(model, w);
    IonicResult r;
    r.dwdt.resize(model.n_states());
    r.I_ion = model.current(u, w, eta);
    model.rates(u, w, eta, r.dwdt);
    return r;
}

void check_ionic_state(const IonicModel& model, std::span<const double> w) {
    for (int i = 0; i < model.n_states(); ++i) {
        if (!std::isfinite(w[i])) throw SolverError("ionic state " + model.state_name(i) + " is not finite");
    }
}

CellState cell_initial(const IonicModel& model) {
    CellState st;
    st.u = model.resting_potential();
    st.w.resize(model.n_states());
    model.initial_state(st.w);
    return st;
}

void cell_step(const IonicModel& model, CellState& st, double I_stim, double eta, double dt) {
    model.advance(st.u, st.w, eta, dt);
    st.u += dt * (I_stim - model.current(st.u, st.w, eta));
}

void pace_cell(const IonicModel& model, CellState& st, const CellProtocol& prot, int n_beats, double eta,
               CellTrace* trace, double sample) {
    const long steps_per_beat = std::lround(prot.period / prot.dt);
    const long stim_steps = std::lround(prot.stim_duration / prot.dt);
    const long sample_every = std::max(1L, std::lround(sample / prot.dt));
    for (int b = 0; b < n_beats; ++b) {
        for (long k = 0; k < steps_per_beat; ++k) {
            if (trace != nullptr && k % sample_every == 0) {
                trace->t.push_back((b * steps_per_beat + k) * prot.dt);
                trace->u.push_back(st.u);
                trace->ca.push_back(model.calcium(st.w));
            }
            cell_step(model, st, k < stim_steps ? prot.stim_amplitude : 0.0, eta, prot.dt);
        }
    }
}

SteadyState initialize_steady_state(const IonicModel& model, double period, int n_beats, const CellProtocol& base) {
    SteadyState out;
    out.state = cell_initial(model);
    CellProtocol prot = base;
    prot.period = period;
    for (int b = 0; b < n_beats; ++b) {
        const CellState prev = out.state;
        pace_cell(model, out.state, prot, 1);
        double drift = std::abs(out.state.u - prev.u) / std::abs(prev.u);
        for (int i = 0; i < model.n_states(); ++i) {
            const double scale = std::max(std::abs(prev.w[i]), 1e-12);
            drift = std::max(drift, std::abs(out.state.w[i] - prev.w[i]) / scale);
        }
        out.drift.push_back(drift);
    }
    return out;
}

double apd90(const CellTrace& tr) {
    const std::size_t n = tr.u.size();
    if (n < 3) return -1.0;
    std::size_t up = n;
    for (std::size_t i = 1; i < n; ++i) {
        if (tr.u[i - 1] < -20.0 && tr.u[i] >= -20.0) {
            up = i;
            break;
        }
    }
    if (up == n) return -1.0;
    const double rest = tr.u[0];
    double peak = tr.u[up];
    std::size_t ipk = up;
    for (std::size_t i = up; i < n && tr.t[i] - tr.t[up] < 0.05; ++i) {
        if (tr.u[i] > peak) {
            peak = tr.u[i];
            ipk = i;
        }
    }
    const double level = peak - 0.9 * (peak - rest);
    // Onset at the maximal upstroke slope before the peak.
    std::size_t ion = up;
    double best = -1.0;
    for (std::size_t i = (up > 5 ? up - 5 : 1); i <= ipk; ++i) {
        const double slope = (tr.u[i] - tr.u[i - 1]) / (tr.t[i] - tr.t[i - 1]);
        if (slope > best) {
            best = slope;
            ion = i;
        }
    }
    for (std::size_t i = ipk + 1; i < n; ++i) {
        if (tr.u[i - 1] > level && tr.u[i] <= level) {
            const double a = (tr.u[i - 1] - level) / (tr.u[i - 1] - tr.u[i]);
            return tr.t[i - 1] + a * (tr.t[i] - tr.t[i - 1]) - tr.t[ion];
        }
    }
    return -1.0;
}

CellState quiescent_state(const IonicModel& model, double duration, double dt) {
    CellState st = cell_initial(model);
    const long n = std::lround(duration / dt);
    for (long k = 0; k < n; ++k) cell_step(model, st, 0.0, 1.0, dt);
    return st;
}

double max_upstroke_velocity(const CellTrace& tr) {
    double best = 0.0;
    for (std::size_t i = 1; i < tr.u.size(); ++i)
        best = std::max(best, (tr.u[i] - tr.u[i - 1]) / (tr.t[i] - tr.t[i - 1]));
    return best;
}

}  // namespace cardioem
