#pragma once

#include "cardioem/common.hpp"

#include <span>
#include <string>
#include <vector>

namespace cardioem {

// Pointwise membrane model. Potential in mV, time in s, currents in mV/s
// (the monodomain equation is normalized by the membrane capacitance).
class IonicModel {
public:
    virtual ~IonicModel() = default;
    virtual int n_states() const = 0;
    virtual double resting_potential() const = 0;
    virtual void initial_state(std::span<double> w) const = 0;
    // Total ionic current I_ion(u, w) for impairment factor eta.
    virtual double current(double u, std::span<const double> w, double eta) const = 0;
    // Time derivative of w at fixed u.
    virtual void rates(double u, std::span<const double> w, double eta, std::span<double> dwdt) const = 0;
    // Advance w over dt at fixed u (exponential update for gates).
    virtual void advance(double u, std::span<double> w, double eta, double dt) const = 0;
    // Calcium as seen by the activation model, in micromolar.
    virtual double calcium(std::span<const double> w) const = 0;
    virtual std::string state_name(int i) const = 0;
};

struct TTP06Params {
    double R = 8314.472, T = 310.0, F = 96485.3415;
    double Cm = 0.185, V_c = 0.016404, V_sr = 0.001094, V_ss = 5.468e-5;
    double P_kna = 0.03, K_o = 5.4, Na_o = 140.0, Ca_o = 2.0;
    double g_K1 = 5.405, g_Kr = 0.153, g_Ks = 0.392, g_Na = 14.838;
    double g_bna = 0.00029, g_CaL = 3.98e-5, g_bca = 0.000592, g_to = 0.073;
    double P_NaK = 2.724, K_mk = 1.0, K_mNa = 40.0;
    double K_NaCa = 1000.0, K_sat = 0.1, alpha = 2.5, gamma = 0.35, Km_Ca = 1.38, Km_Nai = 87.5;
    double g_pCa = 0.1238, K_pCa = 0.0005, g_pK = 0.0146;
    double k1p = 0.15, k2p = 0.045, k3 = 0.06, k4 = 0.005, EC = 1.5, max_sr = 2.5, min_sr = 1.0;
    double V_rel = 0.102, V_xfer = 0.0038, K_up = 0.00025, V_leak = 0.00036, Vmax_up = 0.006375;
    double Buf_c = 0.2, K_buf_c = 0.001, Buf_sr = 10.0, K_buf_sr = 0.3, Buf_ss = 0.4, K_buf_ss = 0.00025;

    double omega_ca = 0.48;       // calcium rescaling handed to the activation model
    double scar_leak = 100.0;     // 1/s, relaxation to rest for eta = 0
};

// Endocardial ten Tusscher-Panfilov 2006 cell.
class TTP06 final : public IonicModel {
public:
    enum Index : int {
        K_i = 0, Na_i, Ca_i, Xr1, Xr2, Xs, m, h, j, Ca_ss, d, f, f2, fCass, s, r, Ca_SR, R_prime, kSize
    };

    explicit TTP06(TTP06Params p = {}) : p_(p) {}

    int n_states() const override { return kSize; }
    double resting_potential() const override { return -86.709; }
    void initial_state(std::span<double> w) const override;
    double current(double u, std::span<const double> w, double eta) const override;
    void rates(double u, std::span<const double> w, double eta, std::span<double> dwdt) const override;
    void advance(double u, std::span<double> w, double eta, double dt) const override;
    double calcium(std::span<const double> w) const override { return p_.omega_ca * w[Ca_i] * 1000.0; }
    std::string state_name(int i) const override;

    const TTP06Params& params() const { return p_; }
    static bool is_gate(int i);

private:
    struct Gates {
        double inf[kSize];
        double tau[kSize];  // ms
    };
    void gates(double u, std::span<const double> w, Gates& g) const;
    // Returns the membrane current (mV/ms) and fills concentration rates (per ms).
    double currents(double u, std::span<const double> w, double eta, double* conc_rates) const;

    TTP06Params p_;
};

// Linear leak membrane without internal state: I = g (u - u_rest). Useful as a stateless reaction.
class PassiveMembrane final : public IonicModel {
public:
    PassiveMembrane(double g = 0.0, double u_rest = -86.709) : g_(g), u_rest_(u_rest) {}
    int n_states() const override { return 0; }
    double resting_potential() const override { return u_rest_; }
    void initial_state(std::span<double>) const override {}
    double current(double u, std::span<const double>, double) const override { return g_ * (u - u_rest_); }
    void rates(double, std::span<const double>, double, std::span<double>) const override {}
    void advance(double, std::span<double>, double, double) const override {}
    double calcium(std::span<const double>) const override { return 0.0; }
    std::string state_name(int) const override { return {}; }

private:
    double g_, u_rest_;
};

struct IonicResult {
    double I_ion;               // mV/s
    std::vector<double> dwdt;   // per s
};

// Throws SolverError naming the first non-finite state variable.
IonicResult ionic_rhs(const IonicModel& model, double u, std::span<const double> w, double eta);
void check_ionic_state(const IonicModel& model, std::span<const double> w);

// Single isolated cell under periodic stimulation.
struct CellProtocol {
    double period = 0.45;         // s
    double stim_amplitude = 52000.0;  // mV/s
    double stim_duration = 1e-3;  // s
    double dt = 2e-5;             // s
};

struct CellState {
    double u = 0.0;
    std::vector<double> w;
};

struct CellTrace {
    std::vector<double> t, u, ca;
};

CellState cell_initial(const IonicModel& model);
// Unstimulated relaxation from the initial state; the published state is not an exact equilibrium.
CellState quiescent_state(const IonicModel& model, double duration = 10.0, double dt = 1e-4);
// Advance one step of the membrane equation (explicit in the current).
void cell_step(const IonicModel& model, CellState& st, double I_stim, double eta, double dt);
// Integrate n_beats; returns the trace sampled every `sample` seconds if trace != nullptr.
void pace_cell(const IonicModel& model, CellState& st, const CellProtocol& prot, int n_beats,
               double eta = 1.0, CellTrace* trace = nullptr, double sample = 1e-3);

struct SteadyState {
    CellState state;
    std::vector<double> drift;  // per beat: max relative state change against the previous beat end
};

SteadyState initialize_steady_state(const IonicModel& model, double period, int n_beats,
                                    const CellProtocol& base = {});

// Action potential duration at 90% repolarization of the first upstroke in the trace (s); -1 if none.
double apd90(const CellTrace& trace);
double max_upstroke_velocity(const CellTrace& trace);

}  // namespace cardioem
