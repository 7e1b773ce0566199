#include "cardioem/activation.hpp"

#include <algorithm>
#include <cmath>

namespace cardioem {

void validate(const ActivationParams& p) {
    if (!(p.a_xb > 0.0)) throw InputError("a_XB must be positive");
    if (!(p.sl0 > 0.0)) throw InputError("SL0 must be positive");
    if (!(p.k_off > 0.0) || !(p.k_basic >= 0.0) || !(p.k_att >= 0.0) || !(p.fv >= 0.0))
        throw InputError("activation rates must be nonnegative (k_off positive)");
    if (!(p.eps_xb > 0.0) || p.eps_xb > 1.0) throw InputError("eps_xb must lie in (0, 1]");
    if (!(p.sl_max > p.sl_min)) throw InputError("length ramp needs sl_max > sl_min");
    if (!(p.theta >= 0.0)) throw InputError("filter time constant must be nonnegative");
}

double sarcomere_length(const Mat3& F, const Vec3& f0, double sl0, double* I4f) {
    const double i4 = (F * f0).squaredNorm();
    if (I4f) *I4f = i4;
    return sl0 * std::sqrt(i4);
}

double dissociation_constant(double sl, const ActivationParams& p) {
    // Keep k_d positive for extreme stretch.
    return std::max(0.05 * p.kd_bar, p.kd_bar + p.alpha_kd * (sl - p.sl0));
}

double length_factor(double sl, const ActivationParams& p) {
    return std::clamp((sl - p.sl_min) / (p.sl_max - p.sl_min), 0.0, 1.0);
}

double LowPass::update(double x, double dt, double theta) {
    if (!primed) {
        y = x;
        primed = true;
        return y;
    }
    y += dt / (theta + dt) * (x - y);
    return y;
}

double activation_step(ActivationState& s, double ca, double sl, double dt, const ActivationParams& p) {
    ca = std::max(0.0, ca);
    const double raw = s.sl_prev > 0.0 ? (sl - s.sl_prev) / dt : 0.0;
    s.sl_prev = sl;
    const double v = s.rate.update(raw, dt, p.theta);

    const double r = std::pow(ca / dissociation_constant(sl, p), p.hill);
    // Implicit Euler: both equations are linear in their own unknown.
    s.B = (s.B + dt * p.k_off * r) / (1.0 + dt * p.k_off * (r + 1.0));
    const double on = p.k_att * s.B;
    const double off = p.k_basic + p.fv * std::abs(v);
    s.X = (s.X + dt * on) / (1.0 + dt * (on + off));
    s.B = std::clamp(s.B, 0.0, 1.0);
    s.X = std::clamp(s.X, 0.0, 1.0);
    return active_tension(s, sl, p);
}

double active_tension(const ActivationState& s, double sl, const ActivationParams& p) {
    return p.a_xb * p.eps_xb * s.X * length_factor(sl, p);
}

}  // namespace cardioem
