#include <doctest.h>

#include "cardioem/coupling.hpp"
#include "cardioem/fem.hpp"
#include "cardioem/mesh.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

using namespace cardioem;

TEST_SUITE("geometry") {

TEST_CASE("slab grid arithmetic") {
    Mesh m = generate_slab_mesh({0.020, 0.020}, 0.0005);
    CHECK(m.n_cells() == 1600);
    CHECK(m.n_vertices() == 41 * 41);
    CHECK(m.h_mean == doctest::Approx(0.0005));
    for (const Facet& f : m.facets) CHECK(f.label == FacetLabel::Neumann);
    CHECK(m.facets.size() == 160);

    Mesh one = generate_slab_mesh({1.0, 1.0}, 1.0);
    CHECK(one.n_vertices() == 4);
    CHECK(one.n_cells() == 1);

    CHECK_THROWS_AS(generate_slab_mesh({-1.0, 1.0}, 0.1), InputError);
    CHECK_THROWS_AS(generate_slab_mesh({1.0, 1.0}, 0.0), InputError);
}

TEST_CASE("thin slab spans the mid-plane") {
    Mesh m = generate_thin_slab_mesh(0.04, 0.02, 0.002, 0.002, 1);
    CHECK(m.n_cells() == 20 * 10);
    double zmin = 1, zmax = -1;
    for (const Vec3& p : m.x) {
        zmin = std::min(zmin, p[2]);
        zmax = std::max(zmax, p[2]);
    }
    CHECK(zmin == doctest::Approx(-0.001));
    CHECK(zmax == doctest::Approx(0.001));
    relabel_tagged_facets(m, {0, 1}, FacetLabel::Epi);
    int ends = 0;
    for (const Facet& f : m.facets) ends += f.label == FacetLabel::Epi;
    CHECK(ends == 2 * 10);
}

TEST_CASE("LV mesh: labels, Jacobians, cavity volume") {
    LvGeometry g;
    Mesh m = generate_lv_mesh(g);
    CHECK(m.has_label(FacetLabel::Endo));
    CHECK(m.has_label(FacetLabel::Epi));
    CHECK(m.has_label(FacetLabel::Base));
    CHECK_NOTHROW(FeCache{m});
    std::set<std::array<int, 4>> endo, epi;
    for (const Facet& f : m.facets) {
        auto k = f.v;
        std::sort(k.begin(), k.end());
        if (f.label == FacetLabel::Endo) endo.insert(k);
        if (f.label == FacetLabel::Epi) epi.insert(k);
    }
    for (const auto& k : endo) CHECK(epi.count(k) == 0);
    // Base vertices lie on the truncation plane.
    for (const Facet& f : m.facets)
        if (f.label == FacetLabel::Base)
            for (int k = 0; k < 4; ++k) CHECK(std::abs(m.x[f.v[k]][2] - g.z_trunc) < 1e-15);

    const double exact_ml = 2.0 * M_PI / 3.0 * 25.0 * 25.0 * 60.0 / 1000.0;
    CHECK(analytic_cavity_volume(g) * 1e6 == doctest::Approx(exact_ml).epsilon(1e-12));
    const CavityGeometry cav = make_cavity_geometry(m);
    const double v = lv_volume_3d(m, cav, nullptr);
    CHECK(std::abs(v - exact_ml) / exact_ml < 0.02);
}

TEST_CASE("LV mesh watertight: every interior face shared by two cells") {
    LvGeometry g;
    g.resolution = 4;
    Mesh m = generate_lv_mesh(g);
    // Closed surface check: the flux of a constant field through all boundary facets vanishes.
    Vec3 flux = Vec3::Zero();
    for (const Facet& f : m.facets) {
        const Vec3 t1 = m.x[f.v[1]] - m.x[f.v[0]] + m.x[f.v[3]] - m.x[f.v[2]];
        const Vec3 t2 = m.x[f.v[2]] - m.x[f.v[0]] + m.x[f.v[3]] - m.x[f.v[1]];
        flux += 0.25 * t1.cross(t2);
    }
    CHECK(flux.norm() < 1e-12);
}

TEST_CASE("LV cavity volume converges with resolution") {
    LvGeometry g;
    g.z_trunc = 0.01;
    const double exact = analytic_cavity_volume(g) * 1e6;
    std::vector<double> err;
    for (int n : {4, 8, 16}) {
        g.resolution = n;
        Mesh m = generate_lv_mesh(g);
        err.push_back(std::abs(lv_volume_3d(m, make_cavity_geometry(m), nullptr) - exact));
    }
    CHECK(err[1] < err[0]);
    CHECK(err[2] < err[1]);
    CHECK(std::log2(err[0] / err[1]) >= 1.0);
    CHECK(std::log2(err[1] / err[2]) >= 1.0);
}

TEST_CASE("LV descriptor validation") {
    LvGeometry g;
    g.epi_radii = g.endo_radii;
    CHECK_THROWS_AS(generate_lv_mesh(g), InputError);
    g = LvGeometry{};
    g.wall_layers = 1;
    CHECK_THROWS_AS(generate_lv_mesh(g), InputError);
    g = LvGeometry{};
    g.endo_radii[0] = -1.0;
    CHECK_THROWS_AS(generate_lv_mesh(g), InputError);
}

TEST_CASE("fibers: orthonormal, right-handed, transmural helix") {
    LvGeometry g;
    g.resolution = 6;
    g.wall_layers = 4;
    Mesh m = generate_lv_mesh(g);
    FiberAngles an;
    FiberField ff = generate_fibers(m, an);
    for (const Mat3& R : ff.qp) {
        CHECK((R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
        CHECK(std::abs(R.determinant() - 1.0) < 1e-12);
        CHECK(std::abs(R.col(0).dot(R.col(1))) < 1e-12);
    }
    for (const Mat3& R : ff.vertex) CHECK(std::abs(R.determinant() - 1.0) < 1e-12);

    // Endocardial facet quadrature points carry phi = 0.
    const Vector phi = transmural_coordinate(m);
    const FeCache fe(m);
    int checked = 0;
    for (const Facet& f : m.facets) {
        if (f.label != FacetLabel::Endo) continue;
        double p = 0.0;
        for (int k = 0; k < 4; ++k) p += 0.25 * phi[f.v[k]];
        CHECK(std::abs(p) < 1e-10);
        // Gradient from the owning cell at its centroid.
        Vec3 gp = Vec3::Zero();
        double N[8];
        Vec3 dN[8];
        q1_shape(3, Vec3(0.5, 0.5, 0.0), N, dN);
        Mat3 J = Mat3::Zero();
        for (int a = 0; a < 8; ++a) J += m.x[m.cells[f.cell][a]] * dN[a].transpose();
        for (int a = 0; a < 8; ++a) gp += phi[m.cells[f.cell][a]] * (J.inverse().transpose() * dN[a]);
        const Mat3 R = fiber_triad(p, gp, an);
        if (std::abs(Vec3::UnitZ().cross(gp.normalized()).norm()) > 0.1) {
            CHECK(helix_angle(R, gp) == doctest::Approx(60.0).epsilon(1.0 / 60.0));
            ++checked;
        }
    }
    CHECK(checked > 10);
    CHECK(helix_angle(fiber_triad(0.5, Vec3(1, 0, 0), an), Vec3(1, 0, 0)) == doctest::Approx(0.0).scale(1.0));
    CHECK(std::abs(helix_angle(fiber_triad(1.0, Vec3(0, 1, 0.2), an), Vec3(0, 1, 0.2)) + 60.0) < 1e-9);

    Mesh slab = generate_slab_mesh({0.01, 0.01}, 0.005);
    CHECK_THROWS_AS(generate_fibers(slab, an), InputError);
    an.alpha_endo = 95.0;
    CHECK_THROWS_AS(generate_fibers(m, an), InputError);
}

TEST_CASE("eta painting") {
    Mesh m = generate_slab_mesh({0.02, 0.02, 0.004}, 0.001);
    CHECK(assign_eta(m, {}) == std::vector<double>(m.n_vertices(), 1.0));
    std::vector<EtaRegion> regs = {
        {Sphere{Vec3(0.005, 0.005, 0.002), 0.003}, 0.2},
        {Ellipsoid{Vec3(0.015, 0.01, 0.002), Vec3(0.004, 0.006, 0.01)}, 0.1},
        {Cylinder{Vec3(0.01, 0.015, 0.0), Vec3(0, 0, 1), 0.002}, 0.0},
        {Box{Vec3(0.0, 0.0, 0.0), Vec3(0.006, 0.006, 0.004)}, 0.15},
    };
    const auto eta = assign_eta(m, regs);
    for (int v = 0; v < m.n_vertices(); ++v) {
        double expect = 1.0;
        for (const auto& r : regs)
            if (contains(r.shape, m.x[v])) expect = std::min(expect, r.eta);
        CHECK(eta[v] == expect);
        CHECK(eta[v] >= 0.0);
        CHECK(eta[v] <= 1.0);
    }
    // Independent sample points against hand-coded primitive tests.
    std::mt19937 rng(11);
    std::uniform_real_distribution<double> ux(0.0, 0.02), uz(0.0, 0.004);
    for (int k = 0; k < 1000; ++k) {
        const Vec3 p(ux(rng), ux(rng), uz(rng));
        const bool in_sphere = std::pow(p[0] - 0.005, 2) + std::pow(p[1] - 0.005, 2) + std::pow(p[2] - 0.002, 2) <= 9e-6;
        CHECK(contains(regs[0].shape, p) == in_sphere);
        const bool in_cyl = std::pow(p[0] - 0.01, 2) + std::pow(p[1] - 0.015, 2) <= 4e-6;
        CHECK(contains(regs[2].shape, p) == in_cyl);
        const bool in_ell = std::pow((p[0] - 0.015) / 0.004, 2) + std::pow((p[1] - 0.01) / 0.006, 2) +
                                std::pow((p[2] - 0.002) / 0.01, 2) <= 1.0;
        CHECK(contains(regs[1].shape, p) == in_ell);
    }
    CHECK_THROWS_AS(assign_eta(m, {{Sphere{Vec3::Zero(), 1.0}, 1.5}}), InputError);
}

TEST_CASE("VTK output layout") {
    Mesh m = generate_slab_mesh({1.0, 1.0, 1.0}, 1.0);
    std::vector<double> s(m.n_vertices(), 2.0);
    const std::string path = "geometry_test.vtk";
    write_vtk(path, m, {{"eta", &s, nullptr}});
    std::ifstream is(path);
    std::stringstream ss;
    ss << is.rdbuf();
    const std::string txt = ss.str();
    CHECK(txt.find("DATASET UNSTRUCTURED_GRID") != std::string::npos);
    CHECK(txt.find("POINTS 8 double") != std::string::npos);
    CHECK(txt.find("CELLS 1 9\n8 0 1 3 2 4 5 7 6\n") != std::string::npos);
    CHECK(txt.find("CELL_TYPES 1\n12\n") != std::string::npos);
    CHECK(txt.find("SCALARS eta double 1") != std::string::npos);
    CHECK(txt.find('\r') == std::string::npos);
    std::remove(path.c_str());
}

}
