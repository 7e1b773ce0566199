#include <doctest.h>

#include "cardioem/electrophysiology.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

using namespace cardioem;

namespace {

Mat3 random_rotation(std::mt19937& rng) {
    std::normal_distribution<double> nd;
    Eigen::Quaterniond q(nd(rng), nd(rng), nd(rng), nd(rng));
    q.normalize();
    return q.toRotationMatrix();
}

const EpVariant kAllVariants[] = {EpVariant::E,        EpVariant::GmefMinimal, EpVariant::GmefEnhanced,
                                  EpVariant::GmefFull, EpVariant::Sac,         EpVariant::GmefFullSac};

// Planar-wave conduction velocity along x on a thin strip.
double strip_cv(double sigma_l, double h) {
    Mesh m = generate_slab_mesh({0.010, 2 * h}, h);
    FiberField ff = uniform_fibers(m, 0.0);
    TTP06 model;
    EpOptions opt;
    opt.sigma.l = sigma_l;
    StimulusProtocol stim = {{Vec3(0, 0, 0), 0.5e-3, 50000.0, 2e-3, 0.0}};
    EpSolver ep(m, ff, {}, model, opt, stim);
    ep.advance_to(0.035);
    auto at = [&](double x) {
        double t = -1;
        for (int v = 0; v < m.n_vertices(); ++v)
            if (std::abs(m.x[v][0] - x) < 1e-9 && m.x[v][1] == 0.0) t = ep.last_activation()[v];
        return t;
    };
    const double t1 = at(0.003), t2 = at(0.008);
    REQUIRE(t1 > 0.0);
    REQUIRE(t2 > t1);
    return 0.005 / (t2 - t1);
}

}  // namespace

TEST_SUITE("electrophysiology") {

TEST_CASE("conductivity at identity has the fiber eigenpairs") {
    std::mt19937 rng(5);
    const Mat3 R = random_rotation(rng);
    Conductivities s;
    const Mat3 D = conductivity_tensor(Mat3::Identity(), R, 1.0, s);
    CHECK((D * R.col(0) - s.l * R.col(0)).norm() < 1e-18);
    CHECK((D * R.col(1) - s.t * R.col(1)).norm() < 1e-18);
    CHECK((D * R.col(2) - s.n * R.col(2)).norm() < 1e-18);
    CHECK(conductivity_tensor(Mat3::Identity(), R, 0.0, s).norm() == 0.0);
    // Fiber stretch: the fiber eigenvector stays and keeps eta*sigma_l.
    Mat3 F = Mat3::Identity();
    F(0, 0) = 1.2;
    const Mat3 Ds = conductivity_tensor(F, Mat3::Identity(), 0.7, s);
    CHECK((Ds * Vec3::UnitX() - 0.7 * s.l * Vec3::UnitX()).norm() < 1e-18);
    CHECK_THROWS_AS(conductivity_tensor(-Mat3::Identity(), R, 1.0, s), SolverError);
}

TEST_CASE("conductivity is symmetric positive semidefinite for random deformations") {
    std::mt19937 rng(8);
    std::uniform_real_distribution<double> ud(-0.3, 0.3);
    Conductivities s;
    for (int k = 0; k < 200; ++k) {
        Mat3 F = Mat3::Identity();
        for (int i = 0; i < 9; ++i) F.data()[i] += ud(rng);
        if (F.determinant() <= 0.1) continue;
        const Mat3 R = random_rotation(rng);
        for (EpVariant v : kAllVariants) {
            const Mat3 D = pullback_diffusion(v, F, R, 0.8, s);
            CHECK((D - D.transpose()).norm() <= 1e-16 * D.norm());
            Eigen::SelfAdjointEigenSolver<Mat3> es(D);
            CHECK(es.eigenvalues().minCoeff() >= -1e-20);
        }
    }
}

TEST_CASE("pullback formulas") {
    Conductivities iso{1.0, 1.0, 1.0};
    Mat3 F = Mat3::Identity();
    F(0, 0) = 2.0;
    const Mat3 expect = Vec3(0.5, 2.0, 2.0).asDiagonal();
    CHECK((pullback_diffusion(EpVariant::GmefMinimal, F, Mat3::Identity(), 1.0, iso) - expect).norm() < 1e-15);
    CHECK((pullback_diffusion(EpVariant::GmefEnhanced, F, Mat3::Identity(), 1.0, iso) - expect).norm() < 1e-15);
    CHECK((pullback_diffusion(EpVariant::E, F, Mat3::Identity(), 1.0, iso) - Mat3::Identity()).norm() == 0.0);

    std::mt19937 rng(2);
    const Mat3 R = random_rotation(rng);
    Conductivities s;
    const Mat3 D0 = pullback_diffusion(EpVariant::E, Mat3::Identity(), R, 1.0, s);
    for (EpVariant v : kAllVariants) CHECK(pullback_diffusion(v, Mat3::Identity(), R, 1.0, s) == D0);
    Mat3 G = Mat3::Identity() + 0.1 * random_rotation(rng);
    CHECK(pullback_diffusion(EpVariant::E, G, R, 1.0, s) == D0);
    CHECK(pullback_diffusion(EpVariant::Sac, G, R, 1.0, s) == D0);
}

TEST_CASE("SAC clamp and sign property") {
    std::mt19937 rng(17);
    std::uniform_real_distribution<double> uu(-100.0, 60.0), ue(-0.4, 0.4);
    const SacParams p{100.0, 0.0};
    int compressed = 0, stretched = 0;
    for (int k = 0; k < 10000; ++k) {
        Mat3 F = Mat3::Identity();
        for (int i = 0; i < 9; ++i) F.data()[i] += ue(rng);
        const Vec3 f0 = random_rotation(rng).col(0);
        const double u = uu(rng);
        const double lam = (F * f0).norm();
        const double I = sac_current(u, F, f0, p);
        if (lam <= 1.0) {
            ++compressed;
            CHECK(I == 0.0);
        } else {
            ++stretched;
            CHECK(I * (u - p.u_rev) > 0.0);
        }
    }
    CHECK(compressed > 1000);
    CHECK(stretched > 1000);
    Mat3 F = Mat3::Identity();
    F(0, 0) = 1.1;
    CHECK(sac_current(-80.0, F, Vec3::UnitX(), p) == doctest::Approx(-800.0));
    CHECK(sac_current(0.0, F, Vec3::UnitX(), p) == 0.0);
    CHECK(sac_current(-80.0, Mat3::Identity(), Vec3::UnitX(), p) == 0.0);
}

TEST_CASE("stimulus windows") {
    StimulusProtocol s = {{Vec3::Zero(), 1e-3, 17000.0, 3e-3, 0.0}, {Vec3::Zero(), 1e-3, 17000.0, 3e-3, 0.45}};
    CHECK(applied_current(Vec3::Zero(), 0.001, s) == 17000.0);
    CHECK(applied_current(Vec3::Zero(), 0.2, s) == 0.0);
    CHECK(applied_current(Vec3::Zero(), 0.449, s) == 0.0);
    CHECK(applied_current(Vec3::Zero(), 0.451, s) == 17000.0);
    CHECK(applied_current(Vec3(1e-3, 0, 0), 0.001, s) == doctest::Approx(17000.0 / std::numbers::e));
    s[0].duration = 0.0;
    CHECK_THROWS_AS(validate_stimuli(s), InputError);
    s[0].duration = 1e-3;
    s[0].amplitude = -1.0;
    CHECK_THROWS_AS(validate_stimuli(s), InputError);
}

TEST_CASE("variant names round trip") {
    for (EpVariant v : kAllVariants) CHECK(parse_ep_variant(to_string(v)) == v);
    CHECK_THROWS_AS(parse_ep_variant("bidomain"), InputError);
}

TEST_CASE("zero-flux diffusion conserves the lumped integral") {
    Mesh m = generate_slab_mesh({0.004, 0.003, 0.001}, 0.0005);
    FiberField ff = uniform_fibers(m, 30.0);
    PassiveMembrane none;
    std::mt19937 rng(4);
    std::uniform_real_distribution<double> ud(-0.2, 0.2);
    std::vector<Mat3> Fq(static_cast<std::size_t>(m.n_cells()) * 8), Fv(m.n_vertices());
    for (auto& F : Fq) {
        F = Mat3::Identity();
        for (int i = 0; i < 9; ++i) F.data()[i] += ud(rng);
    }
    for (auto& F : Fv) F = Mat3::Identity();
    for (EpVariant var : {EpVariant::E, EpVariant::GmefFull}) {
        EpOptions opt;
        opt.variant = var;
        EpSolver ep(m, ff, {}, none, opt);
        ep.set_deformation(Fq, Fv);
        Vector u0(m.n_vertices());
        for (int v = 0; v < u0.size(); ++v) u0[v] = std::sin(3000.0 * m.x[v][0]) * 40.0 - 60.0;
        ep.seed_history({u0}, 0.0);
        double prev = ep.mass().dot(ep.u());
        for (int k = 0; k < 20; ++k) {
            ep.step();
            const double now = ep.mass().dot(ep.u());
            CHECK(std::abs(now - prev) <= 1e-10 * std::abs(prev));
            prev = now;
        }
    }
}

TEST_CASE("rest is a fixed point of the discrete step") {
    Mesh m = generate_slab_mesh({0.003, 0.003}, 0.0005);
    FiberField ff = uniform_fibers(m, 0.0);
    PassiveMembrane leak(50.0, -85.0);
    for (EpVariant v : kAllVariants) {
        EpOptions opt;
        opt.variant = v;
        opt.sac = {100.0, 0.0};
        EpSolver ep(m, ff, {}, leak, opt);
        for (int k = 0; k < 100; ++k) ep.step();
        CHECK((ep.u().array() + 85.0).abs().maxCoeff() < 1e-9);
    }
    // A spatially uniform excitable state evolves without spatial deviation.
    TTP06 model;
    EpSolver ep(m, ff, {}, model, EpOptions{});
    for (int k = 0; k < 100; ++k) ep.step();
    CHECK(ep.u().maxCoeff() - ep.u().minCoeff() < 1e-9);
}

TEST_CASE("BDF3 manufactured solution converges at third order") {
    Mesh m = generate_slab_mesh({0.002, 0.002}, 0.00025);
    FiberField ff = uniform_fibers(m, 20.0);
    PassiveMembrane none;
    // Discrete manufactured solution u(t) = g cos(w t) + c; f = du/dt + M^{-1} K u.
    FeCache fe(m);
    std::vector<Mat3> D(static_cast<std::size_t>(m.n_cells()) * 4);
    Conductivities s;
    for (std::size_t i = 0; i < D.size(); ++i) D[i] = conductivity_tensor(Mat3::Identity(), ff.qp[i], 1.0, s);
    const SpMat K = assemble_diffusion(m, fe, D).matrix();
    const Vector M = lumped_mass(m, fe);
    Vector g(m.n_vertices());
    for (int v = 0; v < g.size(); ++v) g[v] = 30.0 * std::cos(1500.0 * m.x[v][0]) * std::sin(900.0 * m.x[v][1] + 0.3);
    const double om = 40.0;
    auto exact = [&](double t) { Vector u = g * std::cos(om * t); u.array() -= 60.0; return u; };
    const Vector Kg = (K * g).cwiseQuotient(M);
    const Vector Kc = (K * Vector::Constant(g.size(), -60.0)).cwiseQuotient(M);
    const double T = 0.02;
    std::vector<double> err;
    for (double dt : {200e-6, 100e-6, 50e-6}) {
        EpOptions opt;
        opt.dt = dt;
        EpSolver ep(m, ff, {}, none, opt);
        ep.set_source([&](double t, Vector& f) { f = -om * std::sin(om * t) * g + std::cos(om * t) * Kg + Kc; });
        ep.seed_history({exact(0.0), exact(-dt), exact(-2 * dt)}, 0.0);
        ep.advance_to(T);
        err.push_back((ep.u() - exact(ep.time())).cwiseAbs().maxCoeff());
    }
    const double p1 = std::log2(err[0] / err[1]), p2 = std::log2(err[1] / err[2]);
    MESSAGE("BDF3 errors " << err[0] << " " << err[1] << " " << err[2] << " orders " << p1 << " " << p2);
    CHECK(p1 >= 2.8);
    CHECK(p2 >= 2.8);
}

TEST_CASE("startup reaches BDF3 after two steps") {
    CHECK(bdf_coefficients(1).alpha0 == 1.0);
    for (int k = 1; k <= 3; ++k) {
        const BdfCoefficients c = bdf_coefficients(k);
        double sa = 0.0, se = 0.0;
        for (double a : c.a) sa += a;
        for (double e : c.ext) se += e;
        CHECK(sa == doctest::Approx(c.alpha0));
        CHECK(se == doctest::Approx(1.0));
    }
    CHECK_THROWS_AS(bdf_coefficients(4), InputError);
}

TEST_CASE("unstimulated slab stays at rest for every variant") {
    Mesh m = generate_slab_mesh({0.001, 0.001}, 0.0005);
    FiberField ff = uniform_fibers(m, 0.0);
    TTP06 model;
    const CellState rest = quiescent_state(model);
    for (EpVariant v : kAllVariants) {
        EpOptions opt;
        opt.variant = v;
        opt.dt = 1e-4;
        EpSolver ep(m, ff, {}, model, opt);
        ep.initialize(rest);
        double dev = 0.0;
        while (ep.time() < 4.0 - 1e-9) {
            ep.step();
            dev = std::max(dev, (ep.u().array() - rest.u).abs().maxCoeff());
        }
        CHECK(dev < 0.5);
    }
}

TEST_CASE("degenerate deformation aborts") {
    Mesh m = generate_slab_mesh({0.001, 0.001}, 0.0005);
    FiberField ff = uniform_fibers(m, 0.0);
    TTP06 model;
    EpSolver ep(m, ff, {}, model, EpOptions{});
    std::vector<Mat3> Fq(static_cast<std::size_t>(m.n_cells()) * 4, Mat3::Identity()), Fv(m.n_vertices(), Mat3::Identity());
    Fq[3] *= 0.2;
    CHECK_THROWS_AS(ep.set_deformation(Fq, Fv), SolverError);
}

TEST_CASE("conduction velocity scales with the square root of conductivity") {
    const double cv1 = strip_cv(0.7643e-4, 1e-4);
    const double cv2 = strip_cv(2.0 * 0.7643e-4, 1e-4);
    MESSAGE("CV " << cv1 << " -> " << cv2 << " ratio " << cv2 / cv1);
    CHECK(cv1 > 0.3);
    CHECK(cv1 < 0.8);
    CHECK(std::abs(cv2 / cv1 - std::sqrt(2.0)) <= 0.05 * std::sqrt(2.0));
}

TEST_CASE("scar blocks conduction") {
    Mesh m = generate_slab_mesh({0.006, 0.0004}, 2e-4);
    FiberField ff = uniform_fibers(m, 0.0);
    TTP06 model;
    std::vector<EtaRegion> scar = {{Box{Vec3(0.0025, -1, -1), Vec3(0.0035, 1, 1)}, 0.0}};
    StimulusProtocol stim = {{Vec3(0, 0, 0), 0.5e-3, 50000.0, 2e-3, 0.0}};
    EpSolver ep(m, ff, assign_eta(m, scar), model, EpOptions{}, stim);
    ep.advance_to(0.03);
    for (int v = 0; v < m.n_vertices(); ++v) {
        if (m.x[v][0] < 0.002) CHECK(ep.last_activation()[v] > 0.0);
        if (m.x[v][0] > 0.004) CHECK(ep.last_activation()[v] < 0.0);
    }
}

TEST_CASE("checkpoint round trip continues bitwise") {
    Mesh m = generate_slab_mesh({0.002, 0.002}, 0.0005);
    FiberField ff = uniform_fibers(m, 10.0);
    TTP06 model;
    StimulusProtocol stim = {{Vec3(0, 0, 0), 0.5e-3, 50000.0, 2e-3, 0.0}};
    EpSolver a(m, ff, {}, model, EpOptions{}, stim);
    for (int k = 0; k < 60; ++k) a.step();
    std::stringstream ss;
    a.save(ss);
    EpSolver b(m, ff, {}, model, EpOptions{}, stim);
    b.load(ss);
    for (int k = 0; k < 60; ++k) {
        a.step();
        b.step();
    }
    CHECK(a.u() == b.u());
    CHECK(a.time() == b.time());
}

}
