#include <doctest.h>

#include "cardioem/coupling.hpp"
#include "cardioem/refconfig.hpp"

#include <cmath>

using namespace cardioem;

namespace {

Mesh small_lv() {
    LvGeometry g;
    g.resolution = 4;
    return generate_lv_mesh(g);
}

std::vector<double> zero_tension(const Mesh& m) {
    return std::vector<double>(static_cast<std::size_t>(m.n_cells()) * 8, 0.0);
}

}  // namespace

TEST_SUITE("refconfig") {

TEST_CASE("wall thickness estimate") {
    const Mesh m = small_lv();
    const double t = estimate_wall_thickness(m);
    CHECK(t > 0.007);
    CHECK(t < 0.012);
    CHECK_THROWS_AS(estimate_wall_thickness(generate_slab_mesh({0.01, 0.01, 0.01}, 0.005)), InputError);
}

TEST_CASE("unloaded input is its own reference") {
    const Mesh m = small_lv();
    const FiberField ff = generate_fibers(m, FiberAngles{});
    const UnloadResult r = recover_reference(m, ff, 0.0, zero_tension(m), UnloadOptions{});
    CHECK(r.iterations == 1);
    for (int i = 0; i < m.n_vertices(); ++i) CHECK(r.reference.x[i] == m.x[i]);
}

TEST_CASE("round trip at 1.5 kPa") {
    const Mesh loaded = small_lv();
    const FiberField ff = generate_fibers(loaded, FiberAngles{});
    const auto Ta = zero_tension(loaded);
    UnloadOptions opt;
    const UnloadResult r = recover_reference(loaded, ff, 1500.0, Ta, opt);
    MESSAGE("unloading iterations " << r.iterations << ", final mismatch " << r.mismatch_history.back());
    for (std::size_t k = 1; k < r.mismatch_history.size(); ++k)
        CHECK(r.mismatch_history[k] < r.mismatch_history[k - 1]);

    // Recovered cells are not inverted, and the cavity shrank.
    const FeCache fe(r.reference);
    for (int c = 0; c < fe.n_cells(); ++c)
        for (int q = 0; q < fe.nq(); ++q) CHECK(fe.jxw(c, q) > 0.0);
    const CavityGeometry cav = make_cavity_geometry(loaded);
    CHECK(lv_volume_3d(r.reference, make_cavity_geometry(r.reference), nullptr) < lv_volume_3d(loaded, cav, nullptr));

    // Independent re-inflation reproduces the loaded boundary.
    MechOptions mo = opt.mech;
    mo.dynamic = false;
    MechanicsSolver ms(r.reference, ff, mo);
    static_solve(ms, 0.0, 1500.0, Ta, 250.0);
    double worst = 0.0;
    for (const Facet& f : loaded.facets)
        for (int k = 0; k < 4; ++k) {
            const int v = f.v[k];
            worst = std::max(worst, (r.reference.x[v] + ms.committed_displacement().segment<3>(3 * v) - loaded.x[v]).norm());
        }
    CHECK(worst < 1e-3 * estimate_wall_thickness(loaded));
}

TEST_CASE("end-diastolic inflation") {
    const Mesh m = small_lv();
    const FiberField ff = generate_fibers(m, FiberAngles{});
    const double v_ref = lv_volume_3d(m, make_cavity_geometry(m), nullptr);
    MechOptions mo;
    const InflateResult same = inflate_to_ed(m, ff, v_ref, mo);
    CHECK(same.p_ed == 0.0);
    CHECK(same.d0.norm() == 0.0);
    CHECK_THROWS_AS(inflate_to_ed(m, ff, v_ref - 5.0, mo), InputError);
    const InflateResult r = inflate_to_ed(m, ff, v_ref + 20.0, mo);
    CHECK(std::abs(r.volume - (v_ref + 20.0)) <= 0.1);
    CHECK(r.p_ed > 0.0);
    CHECK(std::abs(lv_volume_3d(m, make_cavity_geometry(m), &r.d0) - (v_ref + 20.0)) <= 0.1);
    MESSAGE("p_ED " << r.p_ed << " Pa after " << r.evaluations << " evaluations");
}

}
