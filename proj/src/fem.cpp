#include "cardioem/fem.hpp"

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <sstream>

namespace cardioem {

void q1_shape(int dim, const Vec3& xi, double* N, Vec3* dN) {
    const double l[3][2] = {{1.0 - xi[0], xi[0]}, {1.0 - xi[1], xi[1]}, {1.0 - xi[2], xi[2]}};
    const double dl[2] = {-1.0, 1.0};
    const int nn = dim == 3 ? 8 : 4;
    for (int a = 0; a < nn; ++a) {
        const int i = a & 1, j = (a >> 1) & 1, k = (a >> 2) & 1;
        if (dim == 3) {
            N[a] = l[0][i] * l[1][j] * l[2][k];
            if (dN != nullptr)
                dN[a] = Vec3(dl[i] * l[1][j] * l[2][k], l[0][i] * dl[j] * l[2][k], l[0][i] * l[1][j] * dl[k]);
        } else {
            N[a] = l[0][i] * l[1][j];
            if (dN != nullptr) dN[a] = Vec3(dl[i] * l[1][j], l[0][i] * dl[j], 0.0);
        }
    }
}

void q1_facet_shape(int dim, double s, double t, double* N, double* dNs, double* dNt) {
    if (dim == 3) {
        N[0] = (1 - s) * (1 - t);
        N[1] = s * (1 - t);
        N[2] = (1 - s) * t;
        N[3] = s * t;
        dNs[0] = -(1 - t);
        dNs[1] = 1 - t;
        dNs[2] = -t;
        dNs[3] = t;
        dNt[0] = -(1 - s);
        dNt[1] = -s;
        dNt[2] = 1 - s;
        dNt[3] = s;
    } else {
        N[0] = 1 - s;
        N[1] = s;
        dNs[0] = -1;
        dNs[1] = 1;
        dNt[0] = dNt[1] = 0.0;
    }
}

namespace {

Quadrature make_rule(int dim) {
    const double g[2] = {0.5 - 0.5 / std::sqrt(3.0), 0.5 + 0.5 / std::sqrt(3.0)};
    Quadrature q;
    const int n = 1 << dim;
    for (int a = 0; a < n; ++a) {
        Vec3 xi(g[a & 1], dim > 1 ? g[(a >> 1) & 1] : 0.0, dim > 2 ? g[(a >> 2) & 1] : 0.0);
        q.xi.push_back(xi);
        q.w.push_back(1.0 / n);
    }
    return q;
}

Mat3 cell_jacobian(const Mesh& m, int c, const Vec3* dN) {
    Mat3 J = Mat3::Zero();
    for (int a = 0; a < m.nodes_per_cell(); ++a) J += m.x[m.cells[c][a]] * dN[a].transpose();
    if (m.dim == 2) J(2, 2) = 1.0;
    return J;
}

}  // namespace

const Quadrature& cell_quadrature(int dim) {
    static const Quadrature q2 = make_rule(2), q3 = make_rule(3);
    return dim == 3 ? q3 : q2;
}

const Quadrature& facet_quadrature(int dim) {
    static const Quadrature q1 = make_rule(1), q2 = make_rule(2);
    return dim == 3 ? q2 : q1;
}

FeCache::FeCache(const Mesh& m)
    : dim_(m.dim), nn_(m.nodes_per_cell()), nq_(cell_quadrature(m.dim).size()), n_cells_(m.n_cells()) {
    const Quadrature& Q = cell_quadrature(dim_);
    N_.resize(static_cast<std::size_t>(nq_) * nn_);
    std::vector<Vec3> dNref(static_cast<std::size_t>(nq_) * nn_);
    for (int q = 0; q < nq_; ++q) q1_shape(dim_, Q.xi[q], &N_[q * nn_], &dNref[q * nn_]);
    grad_.resize(static_cast<std::size_t>(n_cells_) * nq_ * nn_);
    jxw_.resize(static_cast<std::size_t>(n_cells_) * nq_);
    xq_.resize(static_cast<std::size_t>(n_cells_) * nq_);
    for (int c = 0; c < n_cells_; ++c) {
        for (int q = 0; q < nq_; ++q) {
            const Mat3 J = cell_jacobian(m, c, &dNref[q * nn_]);
            const double det = J.determinant();
            if (!(det > 0.0)) {
                std::ostringstream os;
                os << "cell " << c << " has non-positive Jacobian " << det << " at quadrature point " << q;
                throw InputError(os.str());
            }
            const Mat3 Jit = J.inverse().transpose();
            const std::size_t cq = static_cast<std::size_t>(c) * nq_ + q;
            jxw_[cq] = det * Q.w[q];
            Vec3 x = Vec3::Zero();
            for (int a = 0; a < nn_; ++a) {
                grad_[cq * nn_ + a] = Jit * dNref[q * nn_ + a];
                if (dim_ == 2) grad_[cq * nn_ + a][2] = 0.0;
                x += N_[q * nn_ + a] * m.x[m.cells[c][a]];
            }
            xq_[cq] = x;
        }
    }
}

double FeCache::volume() const {
    double v = 0.0;
    for (double w : jxw_) v += w;
    return v;
}

AssembledOperator::AssembledOperator(const Mesh& m, int block) : nn_(m.nodes_per_cell()), block_(block) {
    const int n = m.n_vertices() * block;
    std::vector<std::vector<int>> adj(m.n_vertices());
    for (const auto& cell : m.cells)
        for (int a = 0; a < nn_; ++a)
            for (int b = 0; b < nn_; ++b) adj[cell[a]].push_back(cell[b]);
    std::vector<Eigen::Triplet<double>> trip;
    for (int v = 0; v < m.n_vertices(); ++v) {
        auto& r = adj[v];
        std::sort(r.begin(), r.end());
        r.erase(std::unique(r.begin(), r.end()), r.end());
        for (int i = 0; i < block; ++i)
            for (int w : r)
                for (int j = 0; j < block; ++j) trip.emplace_back(v * block + i, w * block + j, 0.0);
    }
    A_.resize(n, n);
    A_.setFromTriplets(trip.begin(), trip.end());
    A_.makeCompressed();
    map_.resize(static_cast<std::size_t>(m.n_cells()) * nn_ * nn_ * block * block);
    const int* outer = A_.outerIndexPtr();
    const int* inner = A_.innerIndexPtr();
    for (int c = 0; c < m.n_cells(); ++c)
        for (int a = 0; a < nn_; ++a)
            for (int b = 0; b < nn_; ++b)
                for (int i = 0; i < block; ++i)
                    for (int j = 0; j < block; ++j) {
                        const int row = m.cells[c][a] * block + i, col = m.cells[c][b] * block + j;
                        const int* pos = std::lower_bound(inner + outer[row], inner + outer[row + 1], col);
                        map_[((static_cast<std::size_t>(c) * nn_ + a) * nn_ + b) * block * block + i * block + j] =
                            static_cast<int>(pos - inner);
                    }
}

void AssembledOperator::zero() {
    std::fill(A_.valuePtr(), A_.valuePtr() + A_.nonZeros(), 0.0);
}

AssembledOperator assemble_mass(const Mesh& m, const FeCache& fe, const std::vector<double>* weight) {
    AssembledOperator M(m, 1);
    const int nn = fe.nn(), nq = fe.nq();
    for (int c = 0; c < m.n_cells(); ++c)
        for (int q = 0; q < nq; ++q) {
            const double w = fe.jxw(c, q) * (weight ? (*weight)[static_cast<std::size_t>(c) * nq + q] : 1.0);
            for (int a = 0; a < nn; ++a)
                for (int b = 0; b < nn; ++b) M.at(c, a, 0, b, 0) += w * fe.N(q, a) * fe.N(q, b);
        }
    return M;
}

Vector lumped_mass(const Mesh& m, const FeCache& fe, const std::vector<double>* weight) {
    Vector ml = Vector::Zero(m.n_vertices());
    const int nn = fe.nn(), nq = fe.nq();
    for (int c = 0; c < m.n_cells(); ++c)
        for (int q = 0; q < nq; ++q) {
            const double w = fe.jxw(c, q) * (weight ? (*weight)[static_cast<std::size_t>(c) * nq + q] : 1.0);
            for (int a = 0; a < nn; ++a) ml[m.cells[c][a]] += w * fe.N(q, a);
        }
    return ml;
}

void assemble_diffusion(const Mesh& m, const FeCache& fe, const std::vector<Mat3>& tensor, AssembledOperator& K) {
    const int nn = fe.nn(), nq = fe.nq();
    if (tensor.size() != static_cast<std::size_t>(m.n_cells()) * nq)
        throw InputError("diffusion tensor field has the wrong size");
    K.zero();
    Vec3 Dg[8];
    for (int c = 0; c < m.n_cells(); ++c)
        for (int q = 0; q < nq; ++q) {
            const Mat3& D = tensor[static_cast<std::size_t>(c) * nq + q];
            const double asym = (D - D.transpose()).cwiseAbs().maxCoeff();
            if (asym > 1e-12 * std::max(1e-300, D.cwiseAbs().maxCoeff()))
                throw InputError("diffusion tensor is not symmetric");
            const double w = fe.jxw(c, q);
            for (int b = 0; b < nn; ++b) Dg[b] = D * fe.grad(c, q, b);
            for (int a = 0; a < nn; ++a) {
                const Vec3& ga = fe.grad(c, q, a);
                for (int b = 0; b < nn; ++b) K.at(c, a, 0, b, 0) += w * ga.dot(Dg[b]);
            }
        }
}

AssembledOperator assemble_diffusion(const Mesh& m, const FeCache& fe, const std::vector<Mat3>& tensor) {
    AssembledOperator K(m, 1);
    assemble_diffusion(m, fe, tensor, K);
    return K;
}

PointLocator::PointLocator(const Mesh& m) : m_(m) {
    lo_ = Vec3::Constant(1e300);
    hi_ = Vec3::Constant(-1e300);
    for (const Vec3& p : m.x) {
        lo_ = lo_.cwiseMin(p);
        hi_ = hi_.cwiseMax(p);
    }
    const double pad = 1e-9 + 1e-6 * (hi_ - lo_).norm();
    lo_.array() -= pad;
    hi_.array() += pad;
    const int per_axis = std::max(1, static_cast<int>(std::cbrt(static_cast<double>(m.n_cells()))));
    for (int k = 0; k < 3; ++k) {
        nb_[k] = (k < m.dim) ? per_axis : 1;
        bs_[k] = (hi_[k] - lo_[k]) / nb_[k];
    }
    buckets_.resize(static_cast<std::size_t>(nb_[0]) * nb_[1] * nb_[2]);
    for (int c = 0; c < m.n_cells(); ++c) {
        Vec3 clo = Vec3::Constant(1e300), chi = Vec3::Constant(-1e300);
        for (int a = 0; a < m.nodes_per_cell(); ++a) {
            clo = clo.cwiseMin(m.x[m.cells[c][a]]);
            chi = chi.cwiseMax(m.x[m.cells[c][a]]);
        }
        int i0[3], i1[3];
        for (int k = 0; k < 3; ++k) {
            i0[k] = std::clamp(static_cast<int>((clo[k] - lo_[k]) / bs_[k]), 0, nb_[k] - 1);
            i1[k] = std::clamp(static_cast<int>((chi[k] - lo_[k]) / bs_[k]), 0, nb_[k] - 1);
        }
        for (int i = i0[0]; i <= i1[0]; ++i)
            for (int j = i0[1]; j <= i1[1]; ++j)
                for (int k = i0[2]; k <= i1[2]; ++k) buckets_[(static_cast<std::size_t>(k) * nb_[1] + j) * nb_[0] + i].push_back(c);
    }
}

bool PointLocator::inverse_map(int c, const Vec3& p, Vec3& xi) const {
    const int nn = m_.nodes_per_cell();
    double N[8];
    Vec3 dN[8];
    xi = Vec3(0.5, 0.5, m_.dim == 3 ? 0.5 : 0.0);
    Vec3 target = p;
    if (m_.dim == 2) target[2] = 0.0;
    for (int it = 0; it < 30; ++it) {
        q1_shape(m_.dim, xi, N, dN);
        Vec3 x = Vec3::Zero();
        Mat3 J = Mat3::Zero();
        for (int a = 0; a < nn; ++a) {
            Vec3 xa = m_.x[m_.cells[c][a]];
            if (m_.dim == 2) xa[2] = 0.0;
            x += N[a] * xa;
            J += xa * dN[a].transpose();
        }
        if (m_.dim == 2) J(2, 2) = 1.0;
        const Vec3 r = target - x;
        const Vec3 dxi = J.lu().solve(r);
        xi += dxi;
        if (m_.dim == 2) xi[2] = 0.0;
        if (dxi.norm() < 1e-14) break;
    }
    const double tol = 1e-9;
    for (int k = 0; k < m_.dim; ++k)
        if (!(xi[k] >= -tol && xi[k] <= 1.0 + tol)) return false;
    return true;
}

PointLocation PointLocator::locate(const Vec3& p, bool* outside) const {
    int idx[3];
    for (int k = 0; k < 3; ++k) idx[k] = std::clamp(static_cast<int>((p[k] - lo_[k]) / bs_[k]), 0, nb_[k] - 1);
    const auto& cand = buckets_[(static_cast<std::size_t>(idx[2]) * nb_[1] + idx[1]) * nb_[0] + idx[0]];
    PointLocation best;
    double best_dist = 1e300;
    auto try_cells = [&](const std::vector<int>& cells) {
        for (int c : cells) {
            Vec3 xi;
            if (inverse_map(c, p, xi)) {
                best.cell = c;
                for (int k = 0; k < m_.dim; ++k) xi[k] = std::clamp(xi[k], 0.0, 1.0);
                best.xi = xi;
                return true;
            }
            // Distance outside the unit cell, for the nearest-cell fallback.
            double d = 0.0;
            for (int k = 0; k < m_.dim; ++k) d = std::max(d, std::max(-xi[k], xi[k] - 1.0));
            if (std::isfinite(d) && d < best_dist) {
                best_dist = d;
                best.cell = c;
                for (int k = 0; k < m_.dim; ++k) xi[k] = std::clamp(xi[k], 0.0, 1.0);
                best.xi = xi;
            }
        }
        return false;
    };
    if (try_cells(cand)) {
        if (outside) *outside = false;
        return best;
    }
    std::vector<int> all(m_.n_cells());
    for (int c = 0; c < m_.n_cells(); ++c) all[c] = c;
    if (try_cells(all)) {
        if (outside) *outside = false;
        return best;
    }
    if (outside) *outside = true;
    return best;
}

std::vector<double> interpolation_weights(int dim, const Vec3& xi) {
    std::vector<double> w(dim == 3 ? 8 : 4);
    q1_shape(dim, xi, w.data(), nullptr);
    return w;
}

IntergridMap build_intergrid(const Mesh& coarse, const Mesh& fine) {
    IntergridMap map;
    map.coarse_dim = coarse.dim;
    map.fine_dim = fine.dim;
    PointLocator in_coarse(coarse), in_fine(fine);
    bool out = false;
    map.fine_vertex.resize(fine.n_vertices());
    for (int v = 0; v < fine.n_vertices(); ++v) {
        map.fine_vertex[v] = in_coarse.locate(fine.x[v], &out);
        map.n_outside += out;
    }
    const FeCache fe_fine(fine), fe_coarse(coarse);
    map.fine_qp.resize(static_cast<std::size_t>(fine.n_cells()) * fe_fine.nq());
    for (int c = 0; c < fine.n_cells(); ++c)
        for (int q = 0; q < fe_fine.nq(); ++q) {
            map.fine_qp[static_cast<std::size_t>(c) * fe_fine.nq() + q] = in_coarse.locate(fe_fine.xq(c, q), &out);
            map.n_outside += out;
        }
    map.coarse_qp.resize(static_cast<std::size_t>(coarse.n_cells()) * fe_coarse.nq());
    for (int c = 0; c < coarse.n_cells(); ++c)
        for (int q = 0; q < fe_coarse.nq(); ++q) {
            map.coarse_qp[static_cast<std::size_t>(c) * fe_coarse.nq() + q] = in_fine.locate(fe_coarse.xq(c, q), &out);
            map.n_outside += out;
        }
    if (map.n_outside > 0)
        std::clog << "intergrid: " << map.n_outside << " points outside the donor mesh clamped to the nearest cell\n";
    return map;
}

std::vector<double> transfer_fine_to_coarse(const IntergridMap& map, const Mesh& fine, const std::vector<double>& f) {
    std::vector<double> out(map.coarse_qp.size());
    double N[8];
    for (std::size_t i = 0; i < map.coarse_qp.size(); ++i) {
        const PointLocation& loc = map.coarse_qp[i];
        q1_shape(fine.dim, loc.xi, N, nullptr);
        double v = 0.0;
        for (int a = 0; a < fine.nodes_per_cell(); ++a) v += N[a] * f[fine.cells[loc.cell][a]];
        out[i] = v;
    }
    return out;
}

std::vector<double> transfer_coarse_to_fine(const IntergridMap& map, const Mesh& coarse, const std::vector<double>& f) {
    std::vector<double> out(map.fine_vertex.size());
    double N[8];
    for (std::size_t i = 0; i < map.fine_vertex.size(); ++i) {
        const PointLocation& loc = map.fine_vertex[i];
        q1_shape(coarse.dim, loc.xi, N, nullptr);
        double v = 0.0;
        for (int a = 0; a < coarse.nodes_per_cell(); ++a) v += N[a] * f[coarse.cells[loc.cell][a]];
        out[i] = v;
    }
    return out;
}

Mat3 deformation_gradient(const Mesh& m, const Vector& d, const PointLocation& loc) {
    double N[8];
    Vec3 dN[8];
    q1_shape(m.dim, loc.xi, N, dN);
    const int nn = m.nodes_per_cell();
    Mat3 J = Mat3::Zero(), G = Mat3::Zero();
    for (int a = 0; a < nn; ++a) {
        const int v = m.cells[loc.cell][a];
        J += m.x[v] * dN[a].transpose();
        G += d.segment<3>(3 * v) * dN[a].transpose();
    }
    if (m.dim == 2) J(2, 2) = 1.0;
    return Mat3::Identity() + G * J.inverse();
}

std::vector<Mat3> deformation_gradients(const Mesh& m, const FeCache& fe, const Vector& d) {
    std::vector<Mat3> F(static_cast<std::size_t>(m.n_cells()) * fe.nq());
    for (int c = 0; c < m.n_cells(); ++c)
        for (int q = 0; q < fe.nq(); ++q) {
            Mat3 G = Mat3::Zero();
            for (int a = 0; a < fe.nn(); ++a) G += d.segment<3>(3 * m.cells[c][a]) * fe.grad(c, q, a).transpose();
            F[static_cast<std::size_t>(c) * fe.nq() + q] = Mat3::Identity() + G;
        }
    return F;
}

SolveInfo solve_linear(const SpMat& A, const Vector& b, Vector& x, double tol, int max_it, LinearSolverKind kind) {
    SolveInfo info;
    const double bn = b.norm();
    if (bn == 0.0) {
        x.setZero();
        return info;
    }
    if (x.size() != b.size()) x = Vector::Zero(b.size());
    if (kind == LinearSolverKind::Direct) {
        Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
        lu.compute(Eigen::SparseMatrix<double>(A));
        if (lu.info() != Eigen::Success) throw SolverError("sparse LU factorization failed: " + lu.lastErrorMessage());
        x = lu.solve(b);
        info.residual = (A * x - b).norm() / bn;
        if (!(info.residual <= tol)) throw SolverError("direct solve residual too large", {info.residual});
        return info;
    }
    if (kind == LinearSolverKind::CG) {
        Eigen::ConjugateGradient<SpMat, Eigen::Lower | Eigen::Upper, Eigen::DiagonalPreconditioner<double>> cg;
        cg.setTolerance(tol);
        cg.setMaxIterations(max_it);
        cg.compute(A);
        x = cg.solveWithGuess(b, x);
        info.iterations = static_cast<int>(cg.iterations());
    } else {
        Eigen::BiCGSTAB<SpMat, Eigen::DiagonalPreconditioner<double>> bi;
        bi.setTolerance(tol);
        bi.setMaxIterations(max_it);
        bi.compute(A);
        x = bi.solveWithGuess(b, x);
        info.iterations = static_cast<int>(bi.iterations());
    }
    info.residual = (A * x - b).norm() / bn;
    if (!x.allFinite() || !(info.residual <= 10.0 * tol)) {
        std::ostringstream os;
        os << "Krylov solve did not converge after " << info.iterations << " iterations, relative residual "
           << info.residual;
        throw SolverError(os.str(), {info.residual});
    }
    return info;
}

NewtonResult newton_solve(const ResidualFn& residual, const StepFn& step, Vector& x, const NewtonOptions& opt) {
    NewtonResult res;
    Vector r(x.size()), dx(x.size()), trial(x.size()), rt(x.size());
    if (!residual(x, r)) throw SolverError("Newton initial state is inadmissible");
    double rn = r.norm();
    res.history.push_back(rn);
    const double target = std::max(opt.tol_abs, opt.tol_rel * rn);
    while (rn > target) {
        if (res.iterations >= opt.max_it) {
            std::ostringstream os;
            os << "Newton did not converge in " << opt.max_it << " iterations, residual " << rn;
            throw SolverError(os.str(), res.history);
        }
        step(x, r, dx);
        if (!dx.allFinite()) throw SolverError("Newton correction is not finite", res.history);
        double alpha = 1.0;
        bool accepted = false;
        bool have_admissible = false;
        Vector best_x, best_r;
        for (int h = 0; h <= opt.max_halvings; ++h) {
            trial = x + alpha * dx;
            if (residual(trial, rt)) {
                const double tn = rt.norm();
                if (tn < (1.0 - 1e-4 * alpha) * rn || tn <= target) {
                    accepted = true;
                    break;
                }
                if (!have_admissible) {
                    have_admissible = true;
                    best_x = trial;
                    best_r = rt;
                }
            }
            alpha *= 0.5;
        }
        if (!accepted) {
            if (!have_admissible) throw SolverError("Newton line search found no admissible state", res.history);
            // No sufficient decrease; take the longest admissible step and let the iteration continue.
            trial = best_x;
            rt = best_r;
        }
        x = trial;
        r = rt;
        rn = r.norm();
        ++res.iterations;
        res.history.push_back(rn);
    }
    return res;
}

NewtonResult newton_solve(const ResidualFn& residual, const JacobianFn& jacobian, Vector& x, const NewtonOptions& opt) {
    StepFn step = [&](const Vector& xs, const Vector& r, Vector& dx) {
        Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
        lu.compute(Eigen::SparseMatrix<double>(jacobian(xs)));
        if (lu.info() != Eigen::Success) throw SolverError("Jacobian factorization failed");
        dx = -lu.solve(r);
    };
    return newton_solve(residual, step, x, opt);
}

}  // namespace cardioem
