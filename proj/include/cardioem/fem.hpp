#pragma once

#include "cardioem/mesh.hpp"

#include <Eigen/Sparse>

#include <functional>
#include <vector>

namespace cardioem {

using SpMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;

// Q1 shape functions on the unit cell [0,1]^dim, lexicographic node order.
void q1_shape(int dim, const Vec3& xi, double* N, Vec3* dN);
void q1_facet_shape(int dim, double s, double t, double* N, double* dNs, double* dNt);

// 2-point Gauss rule per direction on [0,1].
struct Quadrature {
    std::vector<Vec3> xi;
    std::vector<double> w;
    int size() const { return static_cast<int>(w.size()); }
};
const Quadrature& cell_quadrature(int dim);
const Quadrature& facet_quadrature(int dim);  // points in (s,t); edges use s only

// Reference-configuration shape data for every cell and quadrature point.
class FeCache {
public:
    explicit FeCache(const Mesh& m);
    int dim() const { return dim_; }
    int nn() const { return nn_; }
    int nq() const { return nq_; }
    int n_cells() const { return n_cells_; }
    double N(int q, int a) const { return N_[q * nn_ + a]; }
    const Vec3& grad(int c, int q, int a) const { return grad_[(static_cast<std::size_t>(c) * nq_ + q) * nn_ + a]; }
    double jxw(int c, int q) const { return jxw_[static_cast<std::size_t>(c) * nq_ + q]; }
    const Vec3& xq(int c, int q) const { return xq_[static_cast<std::size_t>(c) * nq_ + q]; }
    double volume() const;

private:
    int dim_, nn_, nq_, n_cells_;
    std::vector<double> N_;
    std::vector<Vec3> grad_;
    std::vector<double> jxw_;
    std::vector<Vec3> xq_;
};

// Sparse operator whose pattern couples vertices sharing a cell, with a precomputed scatter map
// so repeated assembly writes in a fixed order (bitwise reproducible).
class AssembledOperator {
public:
    AssembledOperator() = default;
    AssembledOperator(const Mesh& m, int block);
    SpMat& matrix() { return A_; }
    const SpMat& matrix() const { return A_; }
    int block() const { return block_; }
    void zero();
    // Position in the value array of entry (cell c, local node a comp i, local node b comp j).
    double& at(int c, int a, int i, int b, int j) {
        return A_.valuePtr()[map_[((static_cast<std::size_t>(c) * nn_ + a) * nn_ + b) * block_ * block_ + i * block_ + j]];
    }

private:
    SpMat A_;
    std::vector<int> map_;
    int nn_ = 0, block_ = 1;
};

// Per-quadrature weight fields are indexed c * nq + q; nullptr means 1.
AssembledOperator assemble_mass(const Mesh& m, const FeCache& fe, const std::vector<double>* weight = nullptr);
Vector lumped_mass(const Mesh& m, const FeCache& fe, const std::vector<double>* weight = nullptr);
void assemble_diffusion(const Mesh& m, const FeCache& fe, const std::vector<Mat3>& tensor, AssembledOperator& K);
AssembledOperator assemble_diffusion(const Mesh& m, const FeCache& fe, const std::vector<Mat3>& tensor);

// Location of points inside a donor mesh: cell index and local coordinates.
struct PointLocation {
    int cell = -1;
    Vec3 xi = Vec3::Zero();
};

// Locates arbitrary points in a mesh; points outside snap to the nearest cell (counted).
class PointLocator {
public:
    explicit PointLocator(const Mesh& m);
    PointLocation locate(const Vec3& p, bool* outside = nullptr) const;

private:
    const Mesh& m_;
    Vec3 lo_, hi_;
    int nb_[3];
    double bs_[3];
    std::vector<std::vector<int>> buckets_;
    bool inverse_map(int c, const Vec3& p, Vec3& xi) const;
};

struct IntergridMap {
    std::vector<PointLocation> fine_vertex;   // in coarse mesh
    std::vector<PointLocation> fine_qp;       // in coarse mesh, index c * nq + q of the fine mesh
    std::vector<PointLocation> coarse_qp;     // in fine mesh
    int coarse_dim = 3, fine_dim = 3;
    int n_outside = 0;
};

IntergridMap build_intergrid(const Mesh& coarse, const Mesh& fine);
std::vector<double> transfer_fine_to_coarse(const IntergridMap& map, const Mesh& fine, const std::vector<double>& f);
std::vector<double> transfer_coarse_to_fine(const IntergridMap& map, const Mesh& coarse, const std::vector<double>& f);
std::vector<double> interpolation_weights(int dim, const Vec3& xi);

// Deformation gradient I + grad d of a coarse displacement at a located point.
Mat3 deformation_gradient(const Mesh& coarse, const Vector& d, const PointLocation& loc);
// Deformation gradients at the cell quadrature points of the mesh carrying d.
std::vector<Mat3> deformation_gradients(const Mesh& m, const FeCache& fe, const Vector& d);

struct SolveInfo {
    int iterations = 0;
    double residual = 0.0;  // relative
};

enum class LinearSolverKind { CG, BiCGSTAB, Direct };

// Jacobi-preconditioned Krylov solve; x holds the initial guess. Throws SolverError on failure.
SolveInfo solve_linear(const SpMat& A, const Vector& b, Vector& x, double tol, int max_it = 2000,
                       LinearSolverKind kind = LinearSolverKind::CG);

struct NewtonOptions {
    double tol_abs = 1e-10;
    double tol_rel = 0.0;
    int max_it = 25;
    int max_halvings = 8;
};

struct NewtonResult {
    int iterations = 0;
    std::vector<double> history;
};

// residual(x, r) returns false when x is inadmissible. step(x, r, dx) must return the Newton
// correction dx = -J(x)^{-1} r.
using ResidualFn = std::function<bool(const Vector&, Vector&)>;
using StepFn = std::function<void(const Vector&, const Vector&, Vector&)>;
using JacobianFn = std::function<SpMat(const Vector&)>;

NewtonResult newton_solve(const ResidualFn& residual, const StepFn& step, Vector& x, const NewtonOptions& opt);
NewtonResult newton_solve(const ResidualFn& residual, const JacobianFn& jacobian, Vector& x, const NewtonOptions& opt);

}  // namespace cardioem
