#include <doctest.h>

#include "cardioem/fem.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <random>

using namespace cardioem;

namespace {

std::vector<Mat3> constant_tensor(const Mesh& m, const Mat3& D) {
    return std::vector<Mat3>(static_cast<std::size_t>(m.n_cells()) * cell_quadrature(m.dim).size(), D);
}

// Slightly distorted unit cube so the patch test is not trivially axis aligned.
Mesh distorted_cube() {
    Mesh m = generate_slab_mesh({1.0, 1.0, 1.0}, 1.0);
    m.x[7] += Vec3(0.1, 0.05, -0.08);
    m.x[1] += Vec3(0.05, -0.02, 0.03);
    return m;
}

}  // namespace

TEST_SUITE("fem") {

TEST_CASE("mass matrix totals the volume") {
    for (double h : {1.0, 0.5}) {
        Mesh m = generate_slab_mesh({1.0, 1.0, 1.0}, h);
        FeCache fe(m);
        AssembledOperator M = assemble_mass(m, fe);
        CHECK(M.matrix().sum() == doctest::Approx(1.0).epsilon(1e-14));
        CHECK(lumped_mass(m, fe).sum() == doctest::Approx(1.0).epsilon(1e-14));
        std::mt19937 rng(3);
        std::normal_distribution<double> nd;
        for (int k = 0; k < 10; ++k) {
            Vector x(m.n_vertices());
            for (int i = 0; i < x.size(); ++i) x[i] = nd(rng);
            CHECK(x.dot(M.matrix() * x) > 0.0);
        }
        const SpMat& A = M.matrix();
        CHECK((Eigen::MatrixXd(A) - Eigen::MatrixXd(A).transpose()).cwiseAbs().maxCoeff() < 1e-14 * A.coeffs().cwiseAbs().maxCoeff());
    }
}

TEST_CASE("2x2x2 mass integrates trilinear products exactly") {
    Mesh m = generate_slab_mesh({1.0, 1.0, 1.0}, 0.5);
    FeCache fe(m);
    const SpMat M = assemble_mass(m, fe).matrix();
    // u = x*y*z is in the Q1 space on this grid: integral of u*u = 1/27.
    Vector u(m.n_vertices());
    for (int v = 0; v < m.n_vertices(); ++v) u[v] = m.x[v][0] * m.x[v][1] * m.x[v][2];
    CHECK(u.dot(M * u) == doctest::Approx(1.0 / 27.0).epsilon(1e-13));
}

TEST_CASE("diffusion: constants in the kernel, patch test, zero tensor") {
    Mesh m = distorted_cube();
    FeCache fe(m);
    const SpMat K = assemble_diffusion(m, fe, constant_tensor(m, Mat3::Identity())).matrix();
    Vector one = Vector::Ones(m.n_vertices());
    CHECK((K * one).cwiseAbs().maxCoeff() < 1e-12);
    // Linear u = x: energy equals the volume.
    Vector u(m.n_vertices());
    for (int v = 0; v < m.n_vertices(); ++v) u[v] = m.x[v][0];
    CHECK(u.dot(K * u) == doctest::Approx(fe.volume()).epsilon(1e-12));
    // Linear fields give constant gradients at every quadrature point.
    for (int q = 0; q < fe.nq(); ++q) {
        Vec3 g = Vec3::Zero();
        for (int a = 0; a < fe.nn(); ++a) g += (2.0 * m.x[m.cells[0][a]][0] - m.x[m.cells[0][a]][1]) * fe.grad(0, q, a);
        CHECK((g - Vec3(2.0, -1.0, 0.0)).norm() < 1e-12);
    }
    const SpMat Z = assemble_diffusion(m, fe, constant_tensor(m, Mat3::Zero())).matrix();
    CHECK(Z.cwiseAbs().sum() == 0.0);
}

TEST_CASE("diffusion rejects non-symmetric tensors") {
    Mesh m = generate_slab_mesh({1.0, 1.0}, 0.5);
    FeCache fe(m);
    Mat3 D = Mat3::Identity();
    D(0, 1) = 0.3;
    CHECK_THROWS_AS(assemble_diffusion(m, fe, constant_tensor(m, D)), InputError);
}

TEST_CASE("assembly is bitwise deterministic") {
    Mesh m = generate_slab_mesh({0.01, 0.01, 0.004}, 0.001);
    FeCache fe(m);
    std::vector<Mat3> D = constant_tensor(m, Mat3::Identity());
    for (std::size_t i = 0; i < D.size(); ++i) D[i](0, 0) = 1.0 + 0.1 * std::sin(static_cast<double>(i));
    const SpMat A = assemble_diffusion(m, fe, D).matrix();
    const SpMat B = assemble_diffusion(m, fe, D).matrix();
    REQUIRE(A.nonZeros() == B.nonZeros());
    CHECK(std::equal(A.valuePtr(), A.valuePtr() + A.nonZeros(), B.valuePtr()));
}

TEST_CASE("pattern couples exactly the vertices sharing a cell") {
    Mesh m = generate_slab_mesh({3.0, 2.0}, 1.0);
    AssembledOperator op(m, 1);
    // Interior vertex of a 3x2 grid touches 4 cells -> 9 neighbours including itself.
    CHECK(op.matrix().row(5).nonZeros() == 9);
    CHECK(op.matrix().row(0).nonZeros() == 4);
}

TEST_CASE("intergrid transfer") {
    Mesh coarse = generate_slab_mesh({0.02, 0.01}, 0.005);
    Mesh fine = generate_slab_mesh({0.02, 0.01}, 0.0025);
    IntergridMap map = build_intergrid(coarse, fine);
    CHECK(map.n_outside == 0);
    for (const auto& loc : map.fine_vertex) {
        const auto w = interpolation_weights(coarse.dim, loc.xi);
        double s = 0.0;
        for (double x : w) {
            CHECK(x >= 0.0);
            CHECK(x <= 1.0);
            s += x;
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
    }
    std::vector<double> cc(coarse.n_vertices(), 3.7), fc(fine.n_vertices(), 3.7);
    for (double v : transfer_coarse_to_fine(map, coarse, cc)) CHECK(v == doctest::Approx(3.7).epsilon(1e-15));
    for (double v : transfer_fine_to_coarse(map, fine, fc)) CHECK(v == doctest::Approx(3.7).epsilon(1e-15));

    std::vector<double> lc(coarse.n_vertices()), lf(fine.n_vertices());
    for (int v = 0; v < coarse.n_vertices(); ++v) lc[v] = coarse.x[v][0] + 2.0 * coarse.x[v][1];
    for (int v = 0; v < fine.n_vertices(); ++v) lf[v] = fine.x[v][0] + 2.0 * fine.x[v][1];
    const auto tf = transfer_coarse_to_fine(map, coarse, lc);
    for (int v = 0; v < fine.n_vertices(); ++v) CHECK(std::abs(tf[v] - lf[v]) < 1e-12);
    const auto tc = transfer_fine_to_coarse(map, fine, lf);
    FeCache fec(coarse);
    for (int c = 0; c < coarse.n_cells(); ++c)
        for (int q = 0; q < fec.nq(); ++q) {
            const Vec3& x = fec.xq(c, q);
            CHECK(std::abs(tc[c * fec.nq() + q] - (x[0] + 2.0 * x[1])) < 1e-12);
        }
}

TEST_CASE("intergrid identity map on equal meshes") {
    Mesh m = generate_slab_mesh({0.01, 0.01, 0.002}, 0.002);
    IntergridMap map = build_intergrid(m, m);
    std::vector<double> f(m.n_vertices());
    for (int v = 0; v < m.n_vertices(); ++v) f[v] = std::sin(100.0 * m.x[v][0]) + m.x[v][2];
    const auto g = transfer_coarse_to_fine(map, m, f);
    for (int v = 0; v < m.n_vertices(); ++v) CHECK(g[v] == doctest::Approx(f[v]).epsilon(1e-12));
}

TEST_CASE("deformation gradient of an affine displacement") {
    Mesh m = generate_slab_mesh({0.01, 0.01, 0.01}, 0.005);
    Mat3 G;
    G << 0.1, 0.02, 0.0, -0.03, 0.05, 0.01, 0.0, 0.04, -0.02;
    Vector d(3 * m.n_vertices());
    for (int v = 0; v < m.n_vertices(); ++v) d.segment<3>(3 * v) = G * m.x[v];
    FeCache fe(m);
    for (const Mat3& F : deformation_gradients(m, fe, d)) CHECK((F - Mat3::Identity() - G).norm() < 1e-12);
    PointLocation loc{3, Vec3(0.2, 0.7, 0.4)};
    CHECK((deformation_gradient(m, d, loc) - Mat3::Identity() - G).norm() < 1e-12);
}

TEST_CASE("linear solver") {
    const int n = 50;
    SpMat I(n, n);
    I.setIdentity();
    Vector b = Vector::LinSpaced(n, 1.0, 2.0), x;
    solve_linear(I, b, x, 1e-12);
    CHECK((x - b).norm() < 1e-12);

    // 1D Laplacian with Dirichlet ends against dense LU.
    std::vector<Eigen::Triplet<double>> t;
    for (int i = 0; i < n; ++i) {
        t.emplace_back(i, i, 2.0);
        if (i > 0) t.emplace_back(i, i - 1, -1.0);
        if (i + 1 < n) t.emplace_back(i, i + 1, -1.0);
    }
    SpMat L(n, n);
    L.setFromTriplets(t.begin(), t.end());
    Vector e1 = Vector::Zero(n);
    e1[0] = 1.0;
    Vector xl;
    solve_linear(L, e1, xl, 1e-12);
    const Vector ref = Eigen::MatrixXd(L).lu().solve(e1);
    CHECK((xl - ref).norm() / ref.norm() < 1e-10);
    Vector xb;
    solve_linear(L, e1, xb, 1e-12, 2000, LinearSolverKind::BiCGSTAB);
    CHECK((xb - ref).norm() / ref.norm() < 1e-9);
    Vector xd;
    solve_linear(L, e1, xd, 1e-12, 0, LinearSolverKind::Direct);
    CHECK((xd - ref).norm() / ref.norm() < 1e-12);
}

TEST_CASE("singular system with consistent right-hand side") {
    // Pure Neumann Laplacian: the constant is in the kernel; b orthogonal to it is in the range.
    Mesh m = generate_slab_mesh({1.0, 1.0}, 0.25);
    FeCache fe(m);
    const SpMat K = assemble_diffusion(m, fe, constant_tensor(m, Mat3::Identity())).matrix();
    Vector b(m.n_vertices());
    for (int i = 0; i < b.size(); ++i) b[i] = std::sin(1.0 + i);
    b.array() -= b.mean();
    Vector x = Vector::Zero(b.size());
    const SolveInfo info = solve_linear(K, b, x, 1e-10);
    CHECK(info.residual <= 1e-9);
    CHECK((K * x - b).norm() <= 1e-9 * b.norm());
}

TEST_CASE("solver failure carries the residual") {
    const int n = 200;
    std::vector<Eigen::Triplet<double>> t;
    for (int i = 0; i < n; ++i) {
        t.emplace_back(i, i, 2.0);
        if (i > 0) t.emplace_back(i, i - 1, -1.0);
        if (i + 1 < n) t.emplace_back(i, i + 1, -1.0);
    }
    SpMat L(n, n);
    L.setFromTriplets(t.begin(), t.end());
    Vector b = Vector::Ones(n), x;
    try {
        solve_linear(L, b, x, 1e-14, 3);
        FAIL("expected an error");
    } catch (const SolverError& e) {
        REQUIRE(e.history().size() == 1);
        CHECK(e.history()[0] > 1e-14);
    }
}

TEST_CASE("newton: scalar quadratic") {
    ResidualFn res = [](const Vector& x, Vector& r) {
        r.resize(1);
        r[0] = x[0] * x[0] - 4.0;
        return true;
    };
    JacobianFn jac = [](const Vector& x) {
        SpMat J(1, 1);
        J.insert(0, 0) = 2.0 * x[0];
        return J;
    };
    Vector x(1);
    x[0] = 3.0;
    NewtonOptions opt;
    opt.tol_abs = 1e-12;
    const NewtonResult r = newton_solve(res, jac, x, opt);
    CHECK(std::abs(x[0] - 2.0) < 1e-12);
    CHECK(r.iterations <= 6);
    // Hand iteration: 3 -> 2.1666..., 2.00641..., 2.00001...
    CHECK(r.history[1] == doctest::Approx(2.1666666666666667 * 2.1666666666666667 - 4.0).epsilon(1e-12));

    Vector at(1);
    at[0] = 2.0;
    CHECK(newton_solve(res, jac, at, opt).iterations == 0);
}

TEST_CASE("newton: linear residual converges in one step") {
    Eigen::Matrix3d A;
    A << 4, 1, 0, 1, 3, 1, 0, 1, 2;
    const Vector b = Vector::Ones(3);
    ResidualFn res = [&](const Vector& x, Vector& r) {
        r = A * x - b;
        return true;
    };
    JacobianFn jac = [&](const Vector&) {
        SpMat J = Eigen::MatrixXd(A).sparseView();
        return J;
    };
    Vector x = Vector::Zero(3);
    NewtonOptions opt;
    opt.tol_abs = 1e-12;
    CHECK(newton_solve(res, jac, x, opt).iterations == 1);
}

TEST_CASE("newton: line search and divergence report") {
    // atan has a famously divergent full Newton step from x0 = 2.
    ResidualFn res = [](const Vector& x, Vector& r) {
        r.resize(1);
        r[0] = std::atan(x[0]);
        return true;
    };
    JacobianFn jac = [](const Vector& x) {
        SpMat J(1, 1);
        J.insert(0, 0) = 1.0 / (1.0 + x[0] * x[0]);
        return J;
    };
    Vector x(1);
    x[0] = 2.0;
    NewtonOptions opt;
    opt.tol_abs = 1e-12;
    newton_solve(res, jac, x, opt);
    CHECK(std::abs(x[0]) < 1e-12);

    ResidualFn none = [](const Vector& x, Vector& r) {
        r.resize(1);
        r[0] = x[0] * x[0] + 1.0;
        return true;
    };
    JacobianFn jn = [](const Vector& x) {
        SpMat J(1, 1);
        J.insert(0, 0) = 2.0 * x[0] + 1e-3;
        return J;
    };
    Vector y(1);
    y[0] = 1.0;
    opt.max_it = 10;
    try {
        newton_solve(none, jn, y, opt);
        FAIL("expected divergence");
    } catch (const SolverError& e) {
        CHECK(e.history().size() >= 2);
    }
}

}
