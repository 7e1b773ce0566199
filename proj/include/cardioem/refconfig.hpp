#pragma once

#include "cardioem/mechanics.hpp"

#include <vector>

namespace cardioem {

struct UnloadOptions {
    MechOptions mech;             // forced quasi-static
    double omega = 0.7;           // fixed-point relaxation in (0, 1]
    int max_it = 50;
    double tol_fraction = 1e-3;   // of the wall thickness
    double wall_thickness = 0.0;  // m; 0 estimates it from the endo/epi surfaces
    double max_load_step = 400.0; // Pa per quasi-static increment
};

struct UnloadResult {
    Mesh reference;
    Vector loaded_displacement;  // forward solution on `reference` at the loaded state
    int iterations = 0;
    std::vector<double> mismatch_history;  // max vertex mismatch (m) per forward solve
    double tolerance = 0.0;                // m
};

// Mean distance from epicardial vertices to the nearest endocardial vertex.
double estimate_wall_thickness(const Mesh& m);

// Quasi-static displacement at pressure p (Pa) and tension Ta, reached in increments from the current
// trial state at pressure p_from.
void static_solve(MechanicsSolver& ms, double p_from, double p, const std::vector<double>& Ta, double max_step);

// Stress-free geometry whose static loading at (p, Ta) reproduces `loaded`. Fibers are attached to the
// material and reused on every candidate. Throws SolverError with the mismatch history on failure.
UnloadResult recover_reference(const Mesh& loaded, const FiberField& fibers, double p, const std::vector<double>& Ta,
                               const UnloadOptions& opt);

struct InflateResult {
    Vector d0;
    double p_ed = 0.0;     // Pa
    double volume = 0.0;   // mL
    int evaluations = 0;
};

// Pressure bringing the cavity to V_target (mL) with zero active tension; |V - V_target| <= tol_ml.
InflateResult inflate_to_ed(const Mesh& reference, const FiberField& fibers, double v_target, const MechOptions& mech,
                            double tol_ml = 0.1, double max_load_step = 400.0);

}  // namespace cardioem
