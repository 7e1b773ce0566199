#pragma once

#include "cardioem/circulation.hpp"
#include "cardioem/mesh.hpp"

#include <functional>
#include <vector>

namespace cardioem {

// Frame for the cavity volume integral, fixed on the reference mesh.
struct CavityGeometry {
    Vec3 axis = Vec3::UnitZ();  // centerline direction, apex to base
    Vec3 h = Vec3::UnitX();     // unit vector orthogonal to the centerline
    Vec3 b = Vec3::Zero();      // interior reference point
    double orientation = 1.0;   // sign making the reference volume positive
};

CavityGeometry make_cavity_geometry(const Mesh& m);

// Enclosed volume (mL) bounded by the endocardial facets and the base plane, in the configuration
// displaced by d (nullptr: reference).
double lv_volume_3d(const Mesh& m, const CavityGeometry& cav, const Vector* d);
// Same integral over every facet carrying `label`, without orientation sign.
double surface_volume_integral(const Mesh& m, const std::vector<Vec3>& x, const CavityGeometry& cav,
                               FacetLabel label);

// One 3D trial: given p_LV (mmHg) return the 3D cavity volume (mL) of the mechanics solve.
using VolumeTrial = std::function<double(double p_lv)>;
// 0D trial: given p_LV (mmHg) return the LV volume (mL) of the advanced circulation state.
using CircTrial = std::function<double(double p_lv)>;

struct MultiplierOptions {
    double tol = 1e-3;   // mL
    int max_it = 20;
    double initial_slope = 0.0;  // dr/dp estimate (mL/mmHg); 0 selects a probe step
    double probe = 0.5;          // mmHg
};

struct MultiplierResult {
    double p_lv = 0.0;
    double residual = 0.0;   // V_0D - V_3D at p_lv (mL)
    double slope = 0.0;      // last secant slope
    int iterations = 0;
    std::vector<double> r_history;
    bool monotone = true;
};

// Safeguarded secant on r(p) = V_0D(p) - V_3D(p), starting from p0. Evaluations always leave the
// callbacks' internal state at the last trial, so the final evaluation is at the returned p.
MultiplierResult solve_pressure_multiplier(const VolumeTrial& v3d, const CircTrial& v0d, double p0,
                                           const MultiplierOptions& opt);

}  // namespace cardioem
