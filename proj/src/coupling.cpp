#include "cardioem/coupling.hpp"
#include "cardioem/fem.hpp"

#include <cmath>
#include <set>
#include <sstream>

namespace cardioem {

CavityGeometry make_cavity_geometry(const Mesh& m) {
    if (!m.has_label(FacetLabel::Endo)) throw InputError("cavity volume needs endocardial facets");
    std::set<int> endo, base;
    for (const Facet& f : m.facets) {
        for (int k = 0; k < m.facet_nodes(); ++k) {
            if (f.label == FacetLabel::Endo) endo.insert(f.v[k]);
            if (f.label == FacetLabel::Base) base.insert(f.v[k]);
        }
    }
    Vec3 ring = Vec3::Zero();
    int nr = 0;
    for (int v : endo)
        if (base.count(v)) {
            ring += m.x[v];
            ++nr;
        }
    Vec3 lo = Vec3::Constant(1e300), hi = Vec3::Constant(-1e300);
    for (int v : endo) {
        lo = lo.cwiseMin(m.x[v]);
        hi = hi.cwiseMax(m.x[v]);
    }
    CavityGeometry cav;
    if (nr == 0) {
        // Closed cavity: any centered frame works.
        cav.b = 0.5 * (lo + hi);
        cav.axis = Vec3::UnitZ();
    } else {
        ring /= nr;
        // Apex: endocardial vertex farthest from the base centroid.
        Vec3 apex = ring;
        double best = -1.0;
        for (int v : endo) {
            const double d = (m.x[v] - ring).norm();
            if (d > best) {
                best = d;
                apex = m.x[v];
            }
        }
        cav.axis = (ring - apex).normalized();
        cav.b = 0.5 * (ring + apex);
    }
    Vec3 h = cav.axis.cross(Vec3::UnitY());
    if (h.norm() < 1e-6) h = cav.axis.cross(Vec3::UnitX());
    cav.h = h.normalized();
    cav.orientation = 1.0;
    const double v0 = surface_volume_integral(m, m.x, cav, FacetLabel::Endo);
    cav.orientation = v0 < 0.0 ? -1.0 : 1.0;
    return cav;
}

double surface_volume_integral(const Mesh& m, const std::vector<Vec3>& x, const CavityGeometry& cav,
                               FacetLabel label) {
    const Quadrature& Q = facet_quadrature(m.dim);
    double N[4], dNs[4], dNt[4];
    double vol = 0.0;
    for (const Facet& f : m.facets) {
        if (f.label != label) continue;
        for (int q = 0; q < Q.size(); ++q) {
            q1_facet_shape(m.dim, Q.xi[q][0], Q.xi[q][1], N, dNs, dNt);
            Vec3 p = Vec3::Zero(), xs = Vec3::Zero(), xt = Vec3::Zero();
            for (int k = 0; k < m.facet_nodes(); ++k) {
                p += N[k] * x[f.v[k]];
                xs += dNs[k] * x[f.v[k]];
                xt += dNt[k] * x[f.v[k]];
            }
            Vec3 nda;
            if (m.dim == 3) nda = xs.cross(xt);
            else nda = Vec3(xs[1], -xs[0], 0.0);
            vol += Q.w[q] * cav.h.dot(p - cav.b) * cav.h.dot(nda);
        }
    }
    return vol;
}

double lv_volume_3d(const Mesh& m, const CavityGeometry& cav, const Vector* d) {
    const auto x = displaced_vertices(m, d);
    return cav.orientation * surface_volume_integral(m, x, cav, FacetLabel::Endo) * kM3ToMl;
}

MultiplierResult solve_pressure_multiplier(const VolumeTrial& v3d, const CircTrial& v0d, double p0,
                                           const MultiplierOptions& opt) {
    MultiplierResult res;
    auto r = [&](double p) {
        const double val = v0d(p) - v3d(p);
        res.r_history.push_back(val);
        ++res.iterations;
        return val;
    };
    auto fail = [&](const std::string& why) {
        std::ostringstream os;
        os << "pressure multiplier: " << why << " after " << res.iterations << " evaluations";
        throw SolverError(os.str(), res.r_history);
    };
    double pa = p0, ra = r(pa);
    res.p_lv = pa;
    res.residual = ra;
    if (std::abs(ra) < opt.tol) {
        res.slope = opt.initial_slope;
        return res;
    }
    // Bracket bookkeeping: r decreases with p, so r(lo) > 0 > r(hi).
    bool have_lo = false, have_hi = false;
    double lo = 0.0, hi = 0.0;
    auto record = [&](double p, double rv) {
        if (rv > 0.0 && (!have_lo || p > lo)) {
            lo = p;
            have_lo = true;
        }
        if (rv < 0.0 && (!have_hi || p < hi)) {
            hi = p;
            have_hi = true;
        }
    };
    record(pa, ra);
    double slope = opt.initial_slope;
    double pb, rb;
    if (slope < 0.0) {
        pb = pa - ra / slope;
    } else {
        pb = pa + (ra > 0.0 ? opt.probe : -opt.probe);
    }
    double step_cap = 20.0;
    while (true) {
        rb = r(pb);
        record(pb, rb);
        res.p_lv = pb;
        res.residual = rb;
        if (std::abs(rb) < opt.tol) break;
        if (res.iterations >= opt.max_it) fail("no convergence");
        const double s = (rb - ra) / (pb - pa);
        if (std::isfinite(s) && s < 0.0) {
            slope = s;
        } else {
            res.monotone = false;
        }
        double pn = (slope < 0.0) ? pb - rb / slope : pb + (rb > 0.0 ? step_cap : -step_cap);
        if (std::abs(pn - pb) > step_cap) pn = pb + (pn > pb ? step_cap : -step_cap);
        if (have_lo && have_hi && !(pn > lo && pn < hi)) pn = 0.5 * (lo + hi);
        if (!have_lo || !have_hi) step_cap *= 2.0;  // expansion while unbracketed
        if (!std::isfinite(pn)) fail("non-finite update");
        pa = pb;
        ra = rb;
        pb = pn;
    }
    res.slope = slope;
    return res;
}

}  // namespace cardioem
