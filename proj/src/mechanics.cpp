#include "cardioem/mechanics.hpp"
#include "cardioem/binio.hpp"

#include <cmath>
#include <sstream>

namespace cardioem {

namespace {

Mat3 coupling_matrix(const MaterialParams& p) {
    Mat3 B;
    B << p.b_ff, p.b_fs, p.b_fn, p.b_fs, p.b_ss, p.b_sn, p.b_fn, p.b_sn, p.b_nn;
    return B;
}

Mat3 skew(const Vec3& v) {
    Mat3 S;
    S << 0, -v[2], v[1], v[2], 0, -v[0], -v[1], v[0], 0;
    return S;
}

void flatten_into(const Mat3& dP, Tangent& A, int col) {
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 3; ++k) A(3 * i + k, col) = dP(i, k);
}

}  // namespace

void validate(const MaterialParams& p) {
    if (!(p.kappa > 0.0) || !(p.a > 0.0)) throw InputError("material: kappa and a must be positive");
    for (double b : {p.b_ff, p.b_ss, p.b_nn, p.b_fs, p.b_fn, p.b_sn})
        if (!(b >= 0.0)) throw InputError("material: exponents must be nonnegative");
    if (!(p.rho >= 0.0)) throw InputError("material: density must be nonnegative");
}

void validate(const EpicardialSupport& s) {
    for (double v : {s.K_perp, s.K_par, s.C_perp, s.C_par})
        if (!(v >= 0.0)) throw InputError("epicardial support coefficients must be nonnegative");
}

double strain_energy(const Mat3& F, const Mat3& R, const MaterialParams& p) {
    const double J = F.determinant();
    if (!(J > 0.0)) throw SolverError("strain energy: det F <= 0");
    const Mat3 E = 0.5 * (F.transpose() * F - Mat3::Identity());
    const Mat3 Eh = R.transpose() * E * R;
    const double Q = (coupling_matrix(p).array() * Eh.array().square()).sum();
    return 0.5 * p.kappa * (J - 1.0) * std::log(J) + 0.5 * p.a * std::expm1(Q);
}

Mat3 passive_stress(const Mat3& F, const Mat3& R, const MaterialParams& p) {
    Mat3 P;
    Tangent A;
    passive_stress_tangent(F, R, p, P, A);
    return P;
}

void passive_stress_tangent(const Mat3& F, const Mat3& R, const MaterialParams& p, Mat3& P, Tangent& A) {
    const double J = F.determinant();
    if (!(J > 0.0)) throw SolverError("passive stress: det F <= 0");
    const Mat3 B = coupling_matrix(p);
    const Mat3 E = 0.5 * (F.transpose() * F - Mat3::Identity());
    const Mat3 Eh = R.transpose() * E * R;
    const Mat3 BE = B.cwiseProduct(Eh);
    const double eQ = std::exp((BE.array() * Eh.array()).sum());
    const Mat3 S = p.a * eQ * (R * BE * R.transpose());
    const Mat3 Fit = F.inverse().transpose();
    const double g = 0.5 * p.kappa * (J * std::log(J) + J - 1.0);
    const double dg = 0.5 * p.kappa * (std::log(J) + 2.0);
    P = F * S + g * Fit;

    for (int j = 0; j < 3; ++j)
        for (int l = 0; l < 3; ++l) {
            Mat3 dF = Mat3::Zero();
            dF(j, l) = 1.0;
            const Mat3 dE = 0.5 * (dF.transpose() * F + F.transpose() * dF);
            const Mat3 dEh = R.transpose() * dE * R;
            const double dQ = 2.0 * (BE.array() * dEh.array()).sum();
            const Mat3 dS = p.a * eQ * (R * (dQ * BE + B.cwiseProduct(dEh)) * R.transpose());
            // d(J) = J F^-T : dF, d(F^-T) = -F^-T dF^T F^-T
            const double dJ = J * Fit(j, l);
            const Mat3 dP = dF * S + F * dS + dg * dJ * Fit - g * Fit * dF.transpose() * Fit;
            flatten_into(dP, A, 3 * j + l);
        }
}

Mat3 active_stress(const Mat3& F, double Ta, const Vec3& f0) {
    const Vec3 Ff = F * f0;
    return (Ta / Ff.norm()) * (Ff * f0.transpose());
}

void active_stress_tangent(const Mat3& F, double Ta, const Vec3& f0, Mat3& P, Tangent& A) {
    const Vec3 Ff = F * f0;
    const double lam = Ff.norm();
    P = (Ta / lam) * (Ff * f0.transpose());
    for (int j = 0; j < 3; ++j)
        for (int l = 0; l < 3; ++l) {
            // dF = e_j e_l^T: dF f0 = f0[l] e_j
            Vec3 dFf = Vec3::Zero();
            dFf[j] = f0[l];
            const Mat3 dP = (Ta / lam) * (dFf * f0.transpose()) -
                            (Ta * Ff.dot(dFf) / (lam * lam * lam)) * (Ff * f0.transpose());
            flatten_into(dP, A, 3 * j + l);
        }
}

MechanicsSolver::MechanicsSolver(const Mesh& mesh, const FiberField& fibers, MechOptions opt)
    : mesh_(mesh), fe_(mesh), fibers_(fibers), opt_(opt) {
    if (mesh_.dim != 3) throw InputError("mechanics needs a 3D mesh");
    if (static_cast<int>(fibers_.qp.size()) != fe_.n_cells() * fe_.nq())
        throw InputError("fiber field does not match the mechanics mesh");
    validate(opt_.material);
    validate(opt_.epi);
    if (!(opt_.dt > 0.0)) throw InputError("mechanics time step must be positive");
    mass_ = lumped_mass(mesh_, fe_);
    for (int i = 0; i < static_cast<int>(mesh_.facets.size()); ++i) {
        const Facet& f = mesh_.facets[i];
        if (f.label == FacetLabel::Neumann) continue;
        FacetData fd{i, static_cast<int>(f.label), {-1, -1, -1, -1}};
        for (int k = 0; k < 4; ++k)
            for (int a = 0; a < 8; ++a)
                if (mesh_.cells[f.cell][a] == f.v[k]) fd.local[k] = a;
        facets_.push_back(fd);
        has_endo_ |= f.label == FacetLabel::Endo;
        has_base_ |= f.label == FacetLabel::Base;
    }
    K_ = AssembledOperator(mesh_, 3);
    d_ = d_n_ = v_n_ = Vector::Zero(n_dofs());
}

std::vector<Mat3> MechanicsSolver::deformation_gradients_qp(const Vector& d) const {
    return deformation_gradients(mesh_, fe_, d);
}

void MechanicsSolver::set_state(const Vector& d, const Vector& v) {
    if (d.size() != n_dofs() || v.size() != n_dofs()) throw InputError("mechanics state has the wrong size");
    d_ = d_n_ = d;
    v_n_ = v;
}

void MechanicsSolver::add_facets(const Vector& d, double p, Vector* r, AssembledOperator* K, Vector* g, Vec3* V,
                                 double* A, Vector* gradA, Eigen::MatrixXd* gradV, const Vec3* vbase) const {
    const Quadrature& Q = facet_quadrature(3);
    double N[4], dNs[4], dNt[4];
    const EpicardialSupport& ep = opt_.epi;
    const double inv_dt = opt_.dynamic ? 1.0 / opt_.dt : 0.0;
    for (const FacetData& fd : facets_) {
        const Facet& f = mesh_.facets[fd.facet];
        for (int q = 0; q < Q.size(); ++q) {
            q1_facet_shape(3, Q.xi[q][0], Q.xi[q][1], N, dNs, dNt);
            const double w = Q.w[q];
            Vec3 X_s = Vec3::Zero(), X_t = Vec3::Zero(), x_s = Vec3::Zero(), x_t = Vec3::Zero();
            Vec3 dq = Vec3::Zero(), vq = Vec3::Zero();
            for (int k = 0; k < 4; ++k) {
                const Vec3 dk = d.segment<3>(3 * f.v[k]);
                X_s += dNs[k] * mesh_.x[f.v[k]];
                X_t += dNt[k] * mesh_.x[f.v[k]];
                x_s += dNs[k] * (mesh_.x[f.v[k]] + dk);
                x_t += dNt[k] * (mesh_.x[f.v[k]] + dk);
                dq += N[k] * dk;
                vq += N[k] * (dk - d_n_.segment<3>(3 * f.v[k]));
            }
            vq *= inv_dt;
            if (fd.label == static_cast<int>(FacetLabel::Epi)) {
                const Vec3 a0 = X_s.cross(X_t);
                const double da = w * a0.norm();
                const Vec3 n0 = a0.normalized();
                const Mat3 NN = n0 * n0.transpose();
                const Mat3 Kt = ep.K_par * (Mat3::Identity() - NN) + ep.K_perp * NN;
                const Mat3 Ct = ep.C_par * (Mat3::Identity() - NN) + ep.C_perp * NN;
                const Mat3 Ceff = opt_.dynamic ? Ct : Mat3::Zero();
                const Vec3 t = Kt * dq + Ceff * vq;
                if (r)
                    for (int k = 0; k < 4; ++k) r->segment<3>(3 * f.v[k]) += da * N[k] * t;
                if (K) {
                    const Mat3 Kb = Kt + inv_dt * Ceff;
                    for (int a = 0; a < 4; ++a)
                        for (int b = 0; b < 4; ++b)
                            for (int i = 0; i < 3; ++i)
                                for (int j = 0; j < 3; ++j)
                                    K->at(f.cell, fd.local[a], i, fd.local[b], j) += da * N[a] * N[b] * Kb(i, j);
                }
            } else if (fd.label == static_cast<int>(FacetLabel::Endo)) {
                const Vec3 an = x_s.cross(x_t);
                if (r)
                    for (int k = 0; k < 4; ++k) r->segment<3>(3 * f.v[k]) += (w * p * N[k]) * an;
                if (V) *V += w * p * an;
                if (K || gradV) {
                    const Mat3 St = skew(x_t), Ss = skew(x_s);
                    for (int b = 0; b < 4; ++b) {
                        const Mat3 Mb = -dNs[b] * St + dNt[b] * Ss;
                        if (K)
                            for (int a = 0; a < 4; ++a)
                                for (int i = 0; i < 3; ++i)
                                    for (int j = 0; j < 3; ++j)
                                        K->at(f.cell, fd.local[a], i, fd.local[b], j) += w * p * N[a] * Mb(i, j);
                        if (gradV)
                            for (int i = 0; i < 3; ++i)
                                for (int j = 0; j < 3; ++j) (*gradV)(3 * f.v[b] + j, i) += w * p * Mb(i, j);
                    }
                }
            } else if (fd.label == static_cast<int>(FacetLabel::Base)) {
                const Vec3 an = x_s.cross(x_t);
                const double mag = an.norm();
                if (A) *A += w * mag;
                if (g)
                    for (int k = 0; k < 4; ++k) (*g)[f.v[k]] += w * N[k] * mag;
                if (gradA || (K && vbase)) {
                    const Vec3 ah = an / mag;
                    const Mat3 St = skew(x_t), Ss = skew(x_s);
                    for (int b = 0; b < 4; ++b) {
                        const Vec3 row = (ah.transpose() * (-dNs[b] * St + dNt[b] * Ss)).transpose();
                        if (gradA) gradA->segment<3>(3 * f.v[b]) += w * row;
                        if (K && vbase) {
                            // Local part of -g_a v_base: only d|a| varies, v_base held fixed.
                            const Vec3& vb = *vbase;
                            for (int a = 0; a < 4; ++a)
                                for (int i = 0; i < 3; ++i)
                                    for (int j = 0; j < 3; ++j)
                                        K->at(f.cell, fd.local[a], i, fd.local[b], j) -= w * N[a] * vb[i] * row[j];
                        }
                    }
                }
            }
        }
    }
}

bool MechanicsSolver::residual(const Vector& d, double p, const std::vector<double>& Ta, Vector& r) const {
    const int nq = fe_.nq();
    if (static_cast<int>(Ta.size()) != fe_.n_cells() * nq) throw InputError("active tension field has the wrong size");
    r.setZero(n_dofs());
    for (int c = 0; c < fe_.n_cells(); ++c) {
        const auto& cell = mesh_.cells[c];
        for (int q = 0; q < nq; ++q) {
            Mat3 F = Mat3::Identity();
            for (int a = 0; a < 8; ++a) F += d.segment<3>(3 * cell[a]) * fe_.grad(c, q, a).transpose();
            if (!(F.determinant() > 0.0)) return false;
            const Mat3& R = fibers_.qp[c * nq + q];
            Mat3 P = passive_stress(F, R, opt_.material);
            if (Ta[c * nq + q] != 0.0) P += active_stress(F, Ta[c * nq + q], R.col(0));
            const double w = fe_.jxw(c, q);
            for (int a = 0; a < 8; ++a) r.segment<3>(3 * cell[a]) += w * (P * fe_.grad(c, q, a));
        }
    }
    if (opt_.dynamic && opt_.material.rho > 0.0) {
        const double s = opt_.material.rho / (opt_.dt * opt_.dt);
        for (int v = 0; v < mesh_.n_vertices(); ++v)
            r.segment<3>(3 * v) +=
                s * mass_[v] * (d.segment<3>(3 * v) - d_n_.segment<3>(3 * v) - opt_.dt * v_n_.segment<3>(3 * v));
    }
    if (opt_.base_traction && has_base_ && p != 0.0) {
        Vec3 V = Vec3::Zero();
        double A = 0.0;
        Vector g = Vector::Zero(mesh_.n_vertices());
        add_facets(d, p, &r, nullptr, &g, &V, &A, nullptr, nullptr);
        if (!(A > 0.0)) throw SolverError("base traction: zero base area");
        for (int v = 0; v < mesh_.n_vertices(); ++v) r.segment<3>(3 * v) -= g[v] * V / A;
    } else {
        add_facets(d, p, &r, nullptr, nullptr, nullptr, nullptr, nullptr, nullptr);
    }
    return true;
}

Linearization MechanicsSolver::linearize(const Vector& d, double p, const std::vector<double>& Ta) const {
    const int nq = fe_.nq();
    K_.zero();
    Tangent A, Aa;
    Mat3 P, Pa;
    for (int c = 0; c < fe_.n_cells(); ++c) {
        const auto& cell = mesh_.cells[c];
        for (int q = 0; q < nq; ++q) {
            Mat3 F = Mat3::Identity();
            for (int a = 0; a < 8; ++a) F += d.segment<3>(3 * cell[a]) * fe_.grad(c, q, a).transpose();
            const Mat3& R = fibers_.qp[c * nq + q];
            passive_stress_tangent(F, R, opt_.material, P, A);
            if (Ta[c * nq + q] != 0.0) {
                active_stress_tangent(F, Ta[c * nq + q], R.col(0), Pa, Aa);
                A += Aa;
            }
            const double w = fe_.jxw(c, q);
            for (int a = 0; a < 8; ++a) {
                const Vec3& ga = fe_.grad(c, q, a);
                for (int b = 0; b < 8; ++b) {
                    const Vec3& gb = fe_.grad(c, q, b);
                    for (int i = 0; i < 3; ++i)
                        for (int j = 0; j < 3; ++j) {
                            double s = 0.0;
                            for (int k = 0; k < 3; ++k)
                                for (int l = 0; l < 3; ++l) s += A(3 * i + k, 3 * j + l) * ga[k] * gb[l];
                            K_.at(c, a, i, b, j) += w * s;
                        }
                }
            }
        }
    }
    Linearization L;
    const bool base = opt_.base_traction && has_base_ && p != 0.0;
    if (base) {
        // V and A are needed before the local base block can be formed.
        Vec3 V = Vec3::Zero();
        double Ab = 0.0;
        Vector g = Vector::Zero(mesh_.n_vertices());
        Vector gradA = Vector::Zero(n_dofs());
        Eigen::MatrixXd gradV = Eigen::MatrixXd::Zero(n_dofs(), 3);
        add_facets(d, p, nullptr, nullptr, &g, &V, &Ab, nullptr, nullptr);
        if (!(Ab > 0.0)) throw SolverError("base traction: zero base area");
        const Vec3 vb = V / Ab;
        add_facets(d, p, nullptr, &K_, nullptr, nullptr, nullptr, &gradA, &gradV, &vb);
        L.U = Eigen::MatrixXd::Zero(n_dofs(), 4);
        L.W = Eigen::MatrixXd::Zero(n_dofs(), 4);
        for (int v = 0; v < mesh_.n_vertices(); ++v)
            for (int i = 0; i < 3; ++i) {
                L.U(3 * v + i, i) = -g[v] / Ab;
                L.U(3 * v + i, 3) = g[v] * V[i] / (Ab * Ab);
            }
        L.W.leftCols(3) = gradV;
        L.W.col(3) = gradA;
    } else {
        add_facets(d, p, nullptr, &K_, nullptr, nullptr, nullptr, nullptr, nullptr);
    }
    L.S = K_.matrix();
    if (opt_.dynamic && opt_.material.rho > 0.0) {
        const double s = opt_.material.rho / (opt_.dt * opt_.dt);
        for (int v = 0; v < mesh_.n_vertices(); ++v)
            for (int i = 0; i < 3; ++i) L.S.coeffRef(3 * v + i, 3 * v + i) += s * mass_[v];
    }
    return L;
}

NewtonResult MechanicsSolver::solve(double p, const std::vector<double>& Ta) {
    ResidualFn res = [&](const Vector& x, Vector& r) { return residual(x, p, Ta, r); };
    StepFn step = [&](const Vector& x, const Vector& r, Vector& dx) {
        const Linearization L = linearize(x, p, Ta);
        Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
        lu.compute(Eigen::SparseMatrix<double>(L.S));
        if (lu.info() != Eigen::Success) throw SolverError("mechanics: Jacobian factorization failed");
        const Vector y = lu.solve(r);
        if (L.U.cols() == 0) {
            dx = -y;
            return;
        }
        // Woodbury: (S + U W^T)^-1 r = y - Z (I + W^T Z)^-1 W^T y with Z = S^-1 U.
        Eigen::MatrixXd Z(L.U.rows(), L.U.cols());
        for (int k = 0; k < L.U.cols(); ++k) Z.col(k) = lu.solve(Vector(L.U.col(k)));
        Eigen::MatrixXd cap = Eigen::MatrixXd::Identity(L.U.cols(), L.U.cols()) + L.W.transpose() * Z;
        const Vector corr = Z * cap.partialPivLu().solve(L.W.transpose() * y);
        dx = -(y - corr);
    };
    try {
        return newton_solve(res, step, d_, opt_.newton);
    } catch (const SolverError& e) {
        throw SolverError(std::string("mechanics: ") + e.what(), e.history());
    }
}

void MechanicsSolver::commit() {
    if (opt_.dynamic) v_n_ = (d_ - d_n_) / opt_.dt;
    d_n_ = d_;
}

Vec3 MechanicsSolver::endo_force(const Vector& d, double p) const {
    Vec3 V = Vec3::Zero();
    double A = 0.0;
    Vector g = Vector::Zero(mesh_.n_vertices());
    add_facets(d, p, nullptr, nullptr, &g, &V, &A, nullptr, nullptr);
    return V;
}

double MechanicsSolver::base_area(const Vector& d) const {
    Vec3 V = Vec3::Zero();
    double A = 0.0;
    Vector g = Vector::Zero(mesh_.n_vertices());
    add_facets(d, 0.0, nullptr, nullptr, &g, &V, &A, nullptr, nullptr);
    return A;
}

Vec3 MechanicsSolver::base_traction_vector(const Vector& d, double p) const {
    if (!has_endo_ || !has_base_) throw InputError("base traction needs endocardial and base facets");
    const double A = base_area(d);
    if (!(A > 0.0)) throw SolverError("base traction: zero base area");
    return endo_force(d, p) / A;
}

double MechanicsSolver::stored_energy(const Vector& d) const {
    double W = 0.0;
    const int nq = fe_.nq();
    for (int c = 0; c < fe_.n_cells(); ++c)
        for (int q = 0; q < nq; ++q) {
            Mat3 F = Mat3::Identity();
            for (int a = 0; a < 8; ++a) F += d.segment<3>(3 * mesh_.cells[c][a]) * fe_.grad(c, q, a).transpose();
            W += fe_.jxw(c, q) * strain_energy(F, fibers_.qp[c * nq + q], opt_.material);
        }
    return W;
}

double MechanicsSolver::kinetic_energy(const Vector& v) const {
    double T = 0.0;
    for (int i = 0; i < mesh_.n_vertices(); ++i) T += 0.5 * opt_.material.rho * mass_[i] * v.segment<3>(3 * i).squaredNorm();
    return T;
}

void MechanicsSolver::save(std::ostream& os) const {
    bin::put_eigen(os, d_);
    bin::put_eigen(os, d_n_);
    bin::put_eigen(os, v_n_);
}

void MechanicsSolver::load(std::istream& is) {
    d_ = bin::get_eigen(is);
    d_n_ = bin::get_eigen(is);
    v_n_ = bin::get_eigen(is);
    if (d_.size() != n_dofs() || d_n_.size() != n_dofs() || v_n_.size() != n_dofs())
        throw InputError("checkpoint: mechanics state does not match the mesh");
}

}  // namespace cardioem
