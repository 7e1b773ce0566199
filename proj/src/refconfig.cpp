#include "cardioem/refconfig.hpp"

#include "cardioem/coupling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cardioem {

double estimate_wall_thickness(const Mesh& m) {
    std::vector<char> endo(m.n_vertices(), 0), epi(m.n_vertices(), 0);
    for (const Facet& f : m.facets)
        for (int k = 0; k < m.facet_nodes(); ++k) {
            if (f.label == FacetLabel::Endo) endo[f.v[k]] = 1;
            if (f.label == FacetLabel::Epi) epi[f.v[k]] = 1;
        }
    std::vector<Vec3> e;
    for (int i = 0; i < m.n_vertices(); ++i)
        if (endo[i]) e.push_back(m.x[i]);
    if (e.empty()) throw InputError("wall thickness estimate needs endocardial and epicardial facets");
    double sum = 0.0;
    int n = 0;
    for (int i = 0; i < m.n_vertices(); ++i) {
        if (!epi[i] || endo[i]) continue;
        double best = std::numeric_limits<double>::infinity();
        for (const Vec3& y : e) best = std::min(best, (m.x[i] - y).norm());
        sum += best;
        ++n;
    }
    if (n == 0) throw InputError("wall thickness estimate needs endocardial and epicardial facets");
    return sum / n;
}

void static_solve(MechanicsSolver& ms, double p_from, double p, const std::vector<double>& Ta, double max_step) {
    const int steps = std::max(1, static_cast<int>(std::ceil(std::abs(p - p_from) / max_step)));
    for (int k = 1; k <= steps; ++k) {
        ms.solve(p_from + (p - p_from) * k / steps, Ta);
        ms.commit();
    }
}

UnloadResult recover_reference(const Mesh& loaded, const FiberField& fibers, double p, const std::vector<double>& Ta,
                               const UnloadOptions& opt) {
    if (!(opt.omega > 0.0 && opt.omega <= 1.0)) throw InputError("unloading relaxation must lie in (0, 1]");
    if (opt.max_it < 1) throw InputError("unloading needs at least one iteration");
    MechOptions mo = opt.mech;
    mo.dynamic = false;
    const double thick = opt.wall_thickness > 0.0 ? opt.wall_thickness : estimate_wall_thickness(loaded);

    UnloadResult out;
    out.reference = loaded;
    out.tolerance = opt.tol_fraction * thick;
    for (int it = 1; it <= opt.max_it; ++it) {
        MechanicsSolver ms(out.reference, fibers, mo);
        try {
            static_solve(ms, 0.0, p, Ta, opt.max_load_step);
        } catch (const SolverError& e) {
            throw SolverError(std::string("unloading forward solve: ") + e.what(), out.mismatch_history);
        }
        const Vector& d = ms.committed_displacement();
        double worst = 0.0;
        std::vector<Vec3> mis(loaded.n_vertices());
        for (int i = 0; i < loaded.n_vertices(); ++i) {
            mis[i] = loaded.x[i] - (out.reference.x[i] + d.segment<3>(3 * i));
            worst = std::max(worst, mis[i].norm());
        }
        out.mismatch_history.push_back(worst);
        out.iterations = it;
        if (worst < out.tolerance) {
            out.loaded_displacement = d;
            return out;
        }
        for (int i = 0; i < loaded.n_vertices(); ++i) out.reference.x[i] += opt.omega * mis[i];
    }
    throw SolverError("unloading did not converge", out.mismatch_history);
}

InflateResult inflate_to_ed(const Mesh& reference, const FiberField& fibers, double v_target, const MechOptions& mech,
                            double tol_ml, double max_load_step) {
    MechOptions mo = mech;
    mo.dynamic = false;
    const CavityGeometry cav = make_cavity_geometry(reference);
    const double v_ref = lv_volume_3d(reference, cav, nullptr);
    if (v_target < v_ref - tol_ml)
        throw InputError("end-diastolic target volume lies below the reference cavity volume");
    InflateResult out;
    out.d0 = Vector::Zero(3 * reference.n_vertices());
    out.volume = v_ref;
    if (std::abs(v_target - v_ref) <= tol_ml) return out;

    MechanicsSolver ms(reference, fibers, mo);
    const std::vector<double> Ta(static_cast<std::size_t>(ms.fe().n_cells()) * ms.fe().nq(), 0.0);
    double p_now = 0.0;
    auto volume_at = [&](double p) {
        static_solve(ms, p_now, p, Ta, max_load_step);
        p_now = p;
        ++out.evaluations;
        return lv_volume_3d(reference, cav, &ms.committed_displacement());
    };

    // Bracket by doubling, then Illinois regula falsi; V(p) increases with p.
    double lo = 0.0, flo = v_ref - v_target;
    double hi = 500.0, fhi = volume_at(hi) - v_target;
    while (fhi < 0.0) {
        lo = hi;
        flo = fhi;
        hi *= 2.0;
        if (hi > 1e6) throw SolverError("end-diastolic inflation: target volume not reached below 1 MPa");
        fhi = volume_at(hi) - v_target;
    }
    double p = hi, f = fhi;
    int side = 0;
    for (int it = 0; it < 60 && std::abs(f) > tol_ml; ++it) {
        p = (lo * fhi - hi * flo) / (fhi - flo);
        f = volume_at(p) - v_target;
        if (f < 0.0) {
            lo = p;
            flo = f;
            if (side == -1) fhi *= 0.5;
            side = -1;
        } else {
            hi = p;
            fhi = f;
            if (side == 1) flo *= 0.5;
            side = 1;
        }
    }
    if (std::abs(f) > tol_ml) throw SolverError("end-diastolic inflation: root find did not converge");
    if (p_now != p) volume_at(p);
    out.p_ed = p;
    out.d0 = ms.committed_displacement();
    out.volume = v_target + f;
    return out;
}

}  // namespace cardioem
