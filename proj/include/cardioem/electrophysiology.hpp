#pragma once

#include "cardioem/fem.hpp"
#include "cardioem/ionic.hpp"
#include "cardioem/mesh.hpp"

#include <Eigen/SparseCholesky>

#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace cardioem {

// Monodomain formulations: how the deformation enters diffusion, the capacitive and reaction
// terms, and whether stretch-activated channels are present.
enum class EpVariant { E, GmefMinimal, GmefEnhanced, GmefFull, Sac, GmefFullSac };

const char* to_string(EpVariant v);
EpVariant parse_ep_variant(const std::string& s);  // throws InputError
bool has_sac(EpVariant v);
bool is_j_weighted(EpVariant v);
bool operators_depend_on_deformation(EpVariant v);

struct Conductivities {
    double l = 0.7643e-4, t = 0.3494e-4, n = 0.1125e-4;  // m^2/s
};

struct SacParams {
    double G_s = 0.0;    // 1/s
    double u_rev = 0.0;  // mV
};

// eta * sum_i sigma_i F a_i (x) F a_i / |F a_i|^2 over the triad columns (f0, s0, n0).
Mat3 conductivity_tensor(const Mat3& F, const Mat3& triad, double eta, const Conductivities& s);
// Tensor used in the reference-configuration assembly for the given formulation.
Mat3 pullback_diffusion(EpVariant v, const Mat3& F, const Mat3& triad, double eta, const Conductivities& s);
// G_s (|F f0| - 1)_+ (u - u_rev), in mV/s.
double sac_current(double u, const Mat3& F, const Vec3& f0, const SacParams& p);

struct Stimulus {
    Vec3 center = Vec3::Zero();
    double radius = 1e-3;        // m
    double amplitude = 17000.0;  // mV/s
    double duration = 3e-3;      // s
    double onset = 0.0;          // s
};
using StimulusProtocol = std::vector<Stimulus>;

void validate_stimuli(const StimulusProtocol& p);
// Sum of Gaussian stimuli active at t (closed window [onset, onset + duration]).
double applied_current(const Vec3& x, double t, const StimulusProtocol& p);

struct EpOptions {
    EpVariant variant = EpVariant::E;
    Conductivities sigma;
    SacParams sac;
    double dt = 5e-5;                  // s
    int order = 3;                     // BDF order after startup (1..3)
    LinearSolverKind solver = LinearSolverKind::Direct;
    double cg_tol = 1e-10;
    double activation_threshold = -20.0;  // mV
    double j_min = 0.05;               // abort below this Jacobian
};

struct ActivationEvent {
    int vertex;
    double t;
};

// Extra nodal source (mV/s) added to the reaction term: f(t, out) fills out at the new time level.
using NodalSource = std::function<void(double t, Vector& out)>;

class EpSolver {
public:
    EpSolver(const Mesh& mesh, const FiberField& fibers, std::vector<double> eta, const IonicModel& model,
             EpOptions opt, StimulusProtocol stimuli = {});

    // Uniform initial condition at every vertex.
    void initialize(const CellState& cell, double t0 = 0.0);
    // Deformation gradients at the fine-mesh quadrature points and vertices; held until the next call.
    void set_deformation(const std::vector<Mat3>& F_qp, const std::vector<Mat3>& F_vertex);
    void set_source(NodalSource f) { source_ = std::move(f); }
    // Replace the BDF history (newest first) so that the next step runs at full order.
    void seed_history(const std::vector<Vector>& newest_first, double t);

    void step();
    void advance_to(double t_end);

    double time() const { return t_; }
    long steps() const { return n_steps_; }
    const Vector& u() const { return hist_.front(); }
    const Mesh& mesh() const { return mesh_; }
    const FeCache& fe() const { return fe_; }
    const EpOptions& options() const { return opt_; }
    const IonicModel& model() const { return model_; }
    const std::vector<double>& eta() const { return eta_; }
    std::span<const double> ionic_state(int v) const {
        return {w_.data() + static_cast<std::size_t>(v) * ns_, static_cast<std::size_t>(ns_)};
    }
    double calcium(int v) const { return model_.calcium(ionic_state(v)); }
    std::vector<double> calcium_field() const;
    std::vector<double> stretch_field() const;  // |F f0| at vertices
    const Vector& mass() const { return mass_; }

    // Last upward threshold crossing per vertex (-1 before the first).
    const std::vector<double>& last_activation() const { return last_act_; }
    std::vector<ActivationEvent> take_events();

    void save(std::ostream& os) const;
    void load(std::istream& is);

private:
    void rebuild_operators();
    void factorize(double alpha0);

    const Mesh& mesh_;
    FeCache fe_;
    FiberField fibers_;
    std::vector<double> eta_;
    std::vector<double> eta_qp_;
    const IonicModel& model_;
    EpOptions opt_;
    StimulusProtocol stim_;
    int ns_;

    double t_ = 0.0;
    long n_steps_ = 0;
    std::vector<Vector> hist_;  // newest first, at most 3
    std::vector<double> w_;
    std::vector<Mat3> F_qp_, F_v_;
    bool deformed_ = false;

    Vector mass_;  // lumped, J-weighted where required
    AssembledOperator K_;
    SpMat A_;
    double factored_alpha_ = -1.0;
    std::unique_ptr<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>> ldlt_;
    NodalSource source_;

    std::vector<double> last_act_;
    std::vector<ActivationEvent> events_;
    Vector scratch_;
};

// BDF coefficients: alpha0 u^{n+1} - sum_j a_j u^{n-j}, and matching extrapolation weights.
struct BdfCoefficients {
    double alpha0;
    std::vector<double> a;
    std::vector<double> ext;
};
BdfCoefficients bdf_coefficients(int order);

}  // namespace cardioem
