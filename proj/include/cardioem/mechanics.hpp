#pragma once

#include "cardioem/fem.hpp"
#include "cardioem/mesh.hpp"

#include <Eigen/SparseLU>

#include <iosfwd>
#include <vector>

namespace cardioem {

struct MaterialParams {
    double kappa = 50e3;  // Pa, bulk modulus
    double a = 0.88e3;    // Pa, stiffness scaling
    double b_ff = 8.0, b_ss = 6.0, b_nn = 3.0, b_fs = 12.0, b_fn = 3.0, b_sn = 3.0;
    double rho = 1e3;  // kg/m^3
};

struct EpicardialSupport {
    double K_perp = 2e5, K_par = 2e4;  // Pa/m
    double C_perp = 2e4, C_par = 2e3;  // Pa s/m
};

void validate(const MaterialParams& p);
void validate(const EpicardialSupport& s);

// dP_ik / dF_jl stored at (3 i + k, 3 j + l).
using Tangent = Eigen::Matrix<double, 9, 9>;

// Guccione strain energy (Pa) with a (J-1) log J volumetric penalty; R holds (f0, s0, n0) as columns.
double strain_energy(const Mat3& F, const Mat3& R, const MaterialParams& p);
Mat3 passive_stress(const Mat3& F, const Mat3& R, const MaterialParams& p);
void passive_stress_tangent(const Mat3& F, const Mat3& R, const MaterialParams& p, Mat3& P, Tangent& A);
// T_a (F f0 (x) f0) / sqrt(I4f).
Mat3 active_stress(const Mat3& F, double Ta, const Vec3& f0);
void active_stress_tangent(const Mat3& F, double Ta, const Vec3& f0, Mat3& P, Tangent& A);

struct MechOptions {
    MaterialParams material;
    EpicardialSupport epi;
    bool dynamic = true;      // BDF1 with inertia and epicardial damping; false: quasi-static
    double dt = 5e-4;         // s
    bool base_traction = true;
    NewtonOptions newton{1e-9, 1e-10, 25, 8};
};

// Jacobian split into a sparse local part and a low-rank nonlocal part: J = S + U W^T.
struct Linearization {
    SpMat S;
    Eigen::MatrixXd U, W;
};

class MechanicsSolver {
public:
    MechanicsSolver(const Mesh& mesh, const FiberField& fibers, MechOptions opt);

    // Solve the step for endocardial pressure p (Pa) and active tension per quadrature point
    // (c * nq + q). The trial displacement starts from the last trial; commit() accepts it.
    NewtonResult solve(double p, const std::vector<double>& Ta);
    void commit();
    // Restart the trial from the last committed state.
    void reset_trial() { d_ = d_n_; }

    // Residual and linearization at displacement d; residual returns false if some J <= 0.
    bool residual(const Vector& d, double p, const std::vector<double>& Ta, Vector& r) const;
    Linearization linearize(const Vector& d, double p, const std::vector<double>& Ta) const;
    // Base traction density v_base (Pa) for pressure p at displacement d.
    Vec3 base_traction_vector(const Vector& d, double p) const;
    // Net force on the endocardium integral p J F^-T N dGamma (N).
    Vec3 endo_force(const Vector& d, double p) const;
    double base_area(const Vector& d) const;

    // Stored elastic energy (J), kinetic energy (J) of a velocity field.
    double stored_energy(const Vector& d) const;
    double kinetic_energy(const Vector& v) const;

    const Vector& displacement() const { return d_; }
    const Vector& committed_displacement() const { return d_n_; }
    const Vector& velocity() const { return v_n_; }
    void set_state(const Vector& d, const Vector& v);
    std::vector<Mat3> deformation_gradients_qp(const Vector& d) const;
    const Mesh& mesh() const { return mesh_; }
    const FeCache& fe() const { return fe_; }
    const FiberField& fibers() const { return fibers_; }
    MechOptions& options() { return opt_; }
    const MechOptions& options() const { return opt_; }
    int n_dofs() const { return 3 * mesh_.n_vertices(); }

    void save(std::ostream& os) const;
    void load(std::istream& is);

private:
    struct FacetData {
        int facet;
        int label;
        std::array<int, 4> local;  // node positions inside the owning cell
    };
    void add_facets(const Vector& d, double p, Vector* r, AssembledOperator* K, Vector* g, Vec3* V, double* A,
                    Vector* gradA, Eigen::MatrixXd* gradV, const Vec3* vbase = nullptr) const;

    const Mesh& mesh_;
    FeCache fe_;
    FiberField fibers_;
    MechOptions opt_;
    Vector mass_;  // lumped density-free vertex volumes
    std::vector<FacetData> facets_;
    bool has_endo_ = false, has_base_ = false;
    mutable AssembledOperator K_;
    Vector d_, d_n_, v_n_;
};

}  // namespace cardioem
