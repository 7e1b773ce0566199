#include <doctest.h>

#include "cardioem/coupling.hpp"

#include <cmath>

using namespace cardioem;

TEST_SUITE("coupling") {

TEST_CASE("closed box volume is exact, also after affine motion") {
    Mesh m = generate_slab_mesh({0.02, 0.03, 0.01}, 0.005);
    relabel_tagged_facets(m, {0, 1, 2, 3, 4, 5}, FacetLabel::Endo);
    const CavityGeometry cav = make_cavity_geometry(m);
    CHECK(lv_volume_3d(m, cav, nullptr) == doctest::Approx(6.0).epsilon(1e-12));
    Mat3 G;
    G << 0.1, 0.05, 0.0, 0.0, -0.05, 0.02, 0.03, 0.0, 0.08;
    Vector d(3 * m.n_vertices());
    for (int v = 0; v < m.n_vertices(); ++v) d.segment<3>(3 * v) = G * m.x[v] + Vec3(0.01, -0.02, 0.3);
    const double det = (Mat3::Identity() + G).determinant();
    CHECK(lv_volume_3d(m, cav, &d) == doctest::Approx(6.0 * det).epsilon(1e-12));
}

TEST_CASE("open cavity: rigid motion preserves the volume") {
    LvGeometry g;
    g.resolution = 6;
    Mesh m = generate_lv_mesh(g);
    const CavityGeometry cav = make_cavity_geometry(m);
    const double v0 = lv_volume_3d(m, cav, nullptr);
    CHECK(v0 > 0.0);
    // Translation along the base plane and rotation about the centerline.
    const double a = 0.3;
    Mat3 R;
    R << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
    Vector d(3 * m.n_vertices());
    for (int v = 0; v < m.n_vertices(); ++v) d.segment<3>(3 * v) = R * m.x[v] - m.x[v] + Vec3(0.004, -0.002, 0.0);
    CHECK(lv_volume_3d(m, cav, &d) == doctest::Approx(v0).epsilon(1e-12));
}

TEST_CASE("open cavity: uniform radial scaling scales the volume") {
    LvGeometry g;
    g.resolution = 6;
    Mesh m = generate_lv_mesh(g);
    const CavityGeometry cav = make_cavity_geometry(m);
    const double v0 = lv_volume_3d(m, cav, nullptr);
    Vector d(3 * m.n_vertices());
    for (int v = 0; v < m.n_vertices(); ++v) d.segment<3>(3 * v) = 0.1 * m.x[v];
    CHECK(lv_volume_3d(m, cav, &d) == doctest::Approx(v0 * 1.331).epsilon(1e-12));
}

TEST_CASE("multiplier: linear residual converges in at most three evaluations past the first") {
    // V_3D(p) = 100 + 0.8 (p - 10), V_0D(p) = 140 - 1.2 (p - 10): root at p = 30.
    VolumeTrial v3 = [](double p) { return 100.0 + 0.8 * (p - 10.0); };
    CircTrial v0 = [](double p) { return 140.0 - 1.2 * (p - 10.0); };
    MultiplierOptions opt;
    MultiplierResult r = solve_pressure_multiplier(v3, v0, 10.0, opt);
    CHECK(r.p_lv == doctest::Approx(30.0).epsilon(1e-6));
    CHECK(std::abs(r.residual) <= opt.tol);
    CHECK(r.iterations <= 4);
    CHECK(r.slope == doctest::Approx(-2.0));
    // Warm slope: one secant step.
    opt.initial_slope = -2.0;
    r = solve_pressure_multiplier(v3, v0, 10.0, opt);
    CHECK(r.iterations == 2);
}

TEST_CASE("multiplier: nonlinear compliance and bracketing") {
    // Stiffening cavity: V_3D = 120 + 30 tanh(p / 40); 0D side slightly nonlinear.
    VolumeTrial v3 = [](double p) { return 120.0 + 30.0 * std::tanh(p / 40.0); };
    CircTrial v0 = [](double p) { return 160.0 - 0.02 * p - 1e-4 * p * p; };
    MultiplierOptions opt;
    const MultiplierResult r = solve_pressure_multiplier(v3, v0, 0.0, opt);
    CHECK(std::abs(r.residual) <= opt.tol);
    CHECK(std::abs(v0(r.p_lv) - v3(r.p_lv) - r.residual) < 1e-12);
    CHECK(r.iterations <= 20);
    CHECK(r.monotone);
}

TEST_CASE("multiplier: rigid cavity is a pure 0D solve") {
    VolumeTrial rigid = [](double) { return 120.0; };
    CircTrial v0 = [](double p) { return 125.0 - 0.05 * p; };
    MultiplierOptions opt;
    const MultiplierResult r = solve_pressure_multiplier(rigid, v0, 80.0, opt);
    CHECK(r.p_lv == doctest::Approx(100.0).epsilon(1e-5));
}

TEST_CASE("multiplier: failure reports the residual history") {
    VolumeTrial v3 = [](double) { return 100.0; };
    CircTrial v0 = [](double p) { return 101.0 + 1e-9 * p; };  // no root in reach
    MultiplierOptions opt;
    opt.max_it = 6;
    try {
        solve_pressure_multiplier(v3, v0, 0.0, opt);
        FAIL("expected failure");
    } catch (const SolverError& e) {
        CHECK(e.history().size() == 6);
        for (double r : e.history()) CHECK(r > 0.0);
    }
}

}
