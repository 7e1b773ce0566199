#include "cardioem/electrophysiology.hpp"
#include "cardioem/binio.hpp"

#include <cmath>
#include <sstream>

namespace cardioem {

const char* to_string(EpVariant v) {
    switch (v) {
        case EpVariant::E: return "E";
        case EpVariant::GmefMinimal: return "gMEF-minimal";
        case EpVariant::GmefEnhanced: return "gMEF-enhanced";
        case EpVariant::GmefFull: return "gMEF-full";
        case EpVariant::Sac: return "SAC";
        case EpVariant::GmefFullSac: return "gMEF-full+SAC";
    }
    return "?";
}

EpVariant parse_ep_variant(const std::string& s) {
    for (EpVariant v : {EpVariant::E, EpVariant::GmefMinimal, EpVariant::GmefEnhanced, EpVariant::GmefFull,
                        EpVariant::Sac, EpVariant::GmefFullSac})
        if (s == to_string(v)) return v;
    throw InputError("unknown monodomain variant '" + s + "'");
}

bool has_sac(EpVariant v) { return v == EpVariant::Sac || v == EpVariant::GmefFullSac; }
bool operators_depend_on_deformation(EpVariant v) { return v != EpVariant::E && v != EpVariant::Sac; }

bool is_j_weighted(EpVariant v) { return v == EpVariant::GmefFull || v == EpVariant::GmefFullSac; }

Mat3 conductivity_tensor(const Mat3& F, const Mat3& triad, double eta, const Conductivities& s) {
    if (F.determinant() <= 0.0) throw SolverError("conductivity: inverted element (det F <= 0)");
    const double sig[3] = {s.l, s.t, s.n};
    Mat3 D = Mat3::Zero();
    for (int i = 0; i < 3; ++i) {
        const Vec3 a = F * triad.col(i);
        const Mat3 aa = a * a.transpose();
        D += (eta * sig[i] / a.squaredNorm()) * aa;
    }
    return D;
}

Mat3 pullback_diffusion(EpVariant v, const Mat3& F, const Mat3& triad, double eta, const Conductivities& s) {
    switch (v) {
        case EpVariant::E:
        case EpVariant::Sac: return conductivity_tensor(Mat3::Identity(), triad, eta, s);
        case EpVariant::GmefMinimal: {
            const double J = F.determinant();
            if (J <= 0.0) throw SolverError("pullback: inverted element (det F <= 0)");
            const Mat3 Fi = F.inverse();
            const Mat3 P = J * Fi * conductivity_tensor(Mat3::Identity(), triad, eta, s) * Fi.transpose();
            return 0.5 * (P + P.transpose());
        }
        default: {
            const double J = F.determinant();
            if (J <= 0.0) throw SolverError("pullback: inverted element (det F <= 0)");
            const Mat3 Fi = F.inverse();
            const Mat3 P = J * Fi * conductivity_tensor(F, triad, eta, s) * Fi.transpose();
            return 0.5 * (P + P.transpose());
        }
    }
}

double sac_current(double u, const Mat3& F, const Vec3& f0, const SacParams& p) {
    const double stretch = (F * f0).norm() - 1.0;
    if (!(stretch > 0.0)) return 0.0;
    return p.G_s * stretch * (u - p.u_rev);
}

void validate_stimuli(const StimulusProtocol& p) {
    for (const Stimulus& s : p) {
        if (!(s.duration > 0.0)) throw InputError("stimulus duration must be positive");
        if (!(s.amplitude >= 0.0)) throw InputError("stimulus amplitude must be nonnegative");
        if (!(s.radius > 0.0)) throw InputError("stimulus radius must be positive");
    }
}

double applied_current(const Vec3& x, double t, const StimulusProtocol& p) {
    double I = 0.0;
    for (const Stimulus& s : p)
        if (t >= s.onset && t <= s.onset + s.duration)
            I += s.amplitude * std::exp(-(x - s.center).squaredNorm() / (s.radius * s.radius));
    return I;
}

BdfCoefficients bdf_coefficients(int order) {
    switch (order) {
        case 1: return {1.0, {1.0}, {1.0}};
        case 2: return {1.5, {2.0, -0.5}, {2.0, -1.0}};
        case 3: return {11.0 / 6.0, {3.0, -1.5, 1.0 / 3.0}, {3.0, -3.0, 1.0}};
        default: throw InputError("BDF order must be 1, 2 or 3");
    }
}

EpSolver::EpSolver(const Mesh& mesh, const FiberField& fibers, std::vector<double> eta, const IonicModel& model,
                   EpOptions opt, StimulusProtocol stimuli)
    : mesh_(mesh), fe_(mesh), fibers_(fibers), eta_(std::move(eta)), model_(model), opt_(opt),
      stim_(std::move(stimuli)), ns_(model.n_states()) {
    const int nv = mesh_.n_vertices();
    if (eta_.empty()) eta_.assign(nv, 1.0);
    if (static_cast<int>(eta_.size()) != nv) throw InputError("eta field size does not match the mesh");
    if (static_cast<int>(fibers_.qp.size()) != fe_.n_cells() * fe_.nq() ||
        static_cast<int>(fibers_.vertex.size()) != nv)
        throw InputError("fiber field does not match the mesh");
    if (!(opt_.dt > 0.0)) throw InputError("EP time step must be positive");
    if (opt_.order < 1 || opt_.order > 3) throw InputError("BDF order must be 1, 2 or 3");
    if (!(opt_.sac.G_s >= 0.0)) throw InputError("G_s must be nonnegative");
    validate_stimuli(stim_);
    eta_qp_.resize(static_cast<std::size_t>(fe_.n_cells()) * fe_.nq());
    for (int c = 0; c < fe_.n_cells(); ++c)
        for (int q = 0; q < fe_.nq(); ++q) {
            double e = 0.0;
            for (int a = 0; a < fe_.nn(); ++a) e += fe_.N(q, a) * eta_[mesh_.cells[c][a]];
            eta_qp_[c * fe_.nq() + q] = e;
        }
    K_ = AssembledOperator(mesh_, 1);
    last_act_.assign(nv, -1.0);
    w_.assign(static_cast<std::size_t>(nv) * ns_, 0.0);
    rebuild_operators();
    CellState rest;
    rest.u = model_.resting_potential();
    rest.w.resize(ns_);
    model_.initial_state(rest.w);
    initialize(rest);
}

void EpSolver::initialize(const CellState& cell, double t0) {
    if (static_cast<int>(cell.w.size()) != ns_) throw InputError("initial ionic state has the wrong size");
    const int nv = mesh_.n_vertices();
    for (int v = 0; v < nv; ++v)
        std::copy(cell.w.begin(), cell.w.end(), w_.begin() + static_cast<std::ptrdiff_t>(v) * ns_);
    hist_.assign(1, Vector::Constant(nv, cell.u));
    t_ = t0;
    n_steps_ = 0;
    last_act_.assign(nv, -1.0);
    events_.clear();
}

void EpSolver::set_deformation(const std::vector<Mat3>& F_qp, const std::vector<Mat3>& F_vertex) {
    if (F_qp.empty() && F_vertex.empty()) {
        F_qp_.clear();
        F_v_.clear();
        deformed_ = false;
        rebuild_operators();
        return;
    }
    if (F_qp.size() != eta_qp_.size() || static_cast<int>(F_vertex.size()) != mesh_.n_vertices())
        throw InputError("deformation field does not match the EP mesh");
    for (std::size_t i = 0; i < F_qp.size(); ++i) {
        const double J = F_qp[i].determinant();
        if (!(J > opt_.j_min)) {
            std::ostringstream os;
            os << "EP: degenerate Jacobian J = " << J << " at cell " << i / fe_.nq() << " quadrature point "
               << i % fe_.nq();
            throw SolverError(os.str());
        }
    }
    F_qp_ = F_qp;
    F_v_ = F_vertex;
    const bool was = deformed_;
    deformed_ = true;
    // E and SAC assemble on the reference operators; skip the identical rebuild and refactorization.
    if (!was || operators_depend_on_deformation(opt_.variant)) rebuild_operators();
}

void EpSolver::rebuild_operators() {
    const std::size_t nqt = eta_qp_.size();
    std::vector<Mat3> D(nqt);
    for (std::size_t i = 0; i < nqt; ++i) {
        const Mat3 F = deformed_ ? F_qp_[i] : Mat3::Identity();
        D[i] = pullback_diffusion(opt_.variant, F, fibers_.qp[i], eta_qp_[i], opt_.sigma);
    }
    assemble_diffusion(mesh_, fe_, D, K_);
    if (is_j_weighted(opt_.variant)) {
        std::vector<double> J(nqt, 1.0);
        if (deformed_)
            for (std::size_t i = 0; i < nqt; ++i) J[i] = F_qp_[i].determinant();
        mass_ = lumped_mass(mesh_, fe_, &J);
    } else {
        mass_ = lumped_mass(mesh_, fe_);
    }
    factored_alpha_ = -1.0;
}

void EpSolver::factorize(double alpha0) {
    if (alpha0 == factored_alpha_) return;
    A_ = K_.matrix();
    const double s = alpha0 / opt_.dt;
    for (int i = 0; i < A_.rows(); ++i) A_.coeffRef(i, i) += s * mass_[i];
    if (opt_.solver == LinearSolverKind::Direct) {
        ldlt_ = std::make_unique<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>>();
        ldlt_->compute(Eigen::SparseMatrix<double>(A_));
        if (ldlt_->info() != Eigen::Success) throw SolverError("EP: factorization of the diffusion operator failed");
    }
    factored_alpha_ = alpha0;
}

void EpSolver::seed_history(const std::vector<Vector>& newest_first, double t) {
    if (newest_first.empty() || newest_first.size() > 3) throw InputError("history must hold 1 to 3 states");
    hist_ = newest_first;
    t_ = t;
}

void EpSolver::step() {
    const int nv = mesh_.n_vertices();
    const int k = std::min<int>(opt_.order, static_cast<int>(hist_.size()));
    const BdfCoefficients bc = bdf_coefficients(k);
    const double t_new = t_ + opt_.dt;
    const double dt = opt_.dt;

    Vector u_ext = Vector::Zero(nv);
    Vector hsum = Vector::Zero(nv);
    for (int j = 0; j < k; ++j) {
        u_ext += bc.ext[j] * hist_[j];
        hsum += bc.a[j] * hist_[j];
    }
    const Vector& u_n = hist_.front();

    Vector react(nv);
    if (source_) {
        scratch_.setZero(nv);
        source_(t_new, scratch_);
    }
    const bool sac = has_sac(opt_.variant) && deformed_ && opt_.sac.G_s > 0.0;
    int bad = -1;
#pragma omp parallel for schedule(static)
    for (int v = 0; v < nv; ++v) {
        std::span<double> w(w_.data() + static_cast<std::size_t>(v) * ns_, static_cast<std::size_t>(ns_));
        model_.advance(u_n[v], w, eta_[v], dt);
        double r = -model_.current(u_ext[v], w, eta_[v]);
        if (sac) r -= sac_current(u_ext[v], F_v_[v], fibers_.vertex[v].col(0), opt_.sac);
        if (!stim_.empty()) r += applied_current(mesh_.x[v], t_new, stim_);
        if (source_) r += scratch_[v];
        react[v] = r;
        if (!std::isfinite(r)) {
#pragma omp critical
            if (bad < 0 || v < bad) bad = v;
        }
    }
    if (bad >= 0) {
        std::ostringstream os;
        os << "EP: non-finite reaction at vertex " << bad << " (" << mesh_.x[bad].transpose() << ") t = " << t_new;
        try {
            check_ionic_state(model_, ionic_state(bad));
        } catch (const SolverError& e) {
            os << ": " << e.what();
        }
        throw SolverError(os.str());
    }

    const Vector rhs = mass_.cwiseProduct(hsum / dt + react);
    factorize(bc.alpha0);
    Vector u_new;
    if (opt_.solver == LinearSolverKind::Direct) {
        u_new = ldlt_->solve(rhs);
    } else {
        u_new = u_ext;
        solve_linear(A_, rhs, u_new, opt_.cg_tol, 5000, opt_.solver);
    }
    for (int v = 0; v < nv; ++v) {
        if (!std::isfinite(u_new[v])) {
            std::ostringstream os;
            os << "EP: non-finite potential at vertex " << v << " (" << mesh_.x[v].transpose() << ") t = " << t_new;
            throw SolverError(os.str());
        }
    }
    const double thr = opt_.activation_threshold;
    for (int v = 0; v < nv; ++v) {
        if (u_n[v] < thr && u_new[v] >= thr) {
            const double tc = t_ + dt * (thr - u_n[v]) / (u_new[v] - u_n[v]);
            last_act_[v] = tc;
            events_.push_back({v, tc});
        }
    }
    hist_.insert(hist_.begin(), std::move(u_new));
    if (hist_.size() > 3) hist_.pop_back();
    t_ = t_new;
    ++n_steps_;
}

void EpSolver::advance_to(double t_end) {
    while (t_ + 0.5 * opt_.dt < t_end) step();
}

std::vector<double> EpSolver::calcium_field() const {
    std::vector<double> ca(mesh_.n_vertices());
    for (int v = 0; v < mesh_.n_vertices(); ++v) ca[v] = calcium(v);
    return ca;
}

std::vector<double> EpSolver::stretch_field() const {
    std::vector<double> s(mesh_.n_vertices(), 1.0);
    if (deformed_)
        for (int v = 0; v < mesh_.n_vertices(); ++v) s[v] = (F_v_[v] * fibers_.vertex[v].col(0)).norm();
    return s;
}

std::vector<ActivationEvent> EpSolver::take_events() {
    std::vector<ActivationEvent> out;
    out.swap(events_);
    return out;
}

void EpSolver::save(std::ostream& os) const {
    bin::put<double>(os, t_);
    bin::put<std::int64_t>(os, n_steps_);
    bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(hist_.size()));
    for (const Vector& h : hist_) bin::put_eigen(os, h);
    bin::put_vec(os, w_);
    bin::put<std::uint8_t>(os, deformed_ ? 1 : 0);
    bin::put_vec(os, F_qp_);
    bin::put_vec(os, F_v_);
    bin::put_vec(os, last_act_);
}

void EpSolver::load(std::istream& is) {
    t_ = bin::get<double>(is);
    n_steps_ = bin::get<std::int64_t>(is);
    const auto nh = bin::get<std::uint32_t>(is);
    if (nh < 1 || nh > 3) throw InputError("checkpoint: bad EP history length");
    hist_.clear();
    for (std::uint32_t i = 0; i < nh; ++i) hist_.push_back(bin::get_eigen(is));
    w_ = bin::get_vec<double>(is);
    deformed_ = bin::get<std::uint8_t>(is) != 0;
    F_qp_ = bin::get_vec<Mat3>(is);
    F_v_ = bin::get_vec<Mat3>(is);
    last_act_ = bin::get_vec<double>(is);
    const std::size_t nv = static_cast<std::size_t>(mesh_.n_vertices());
    if (hist_.front().size() != static_cast<Eigen::Index>(nv) || w_.size() != nv * ns_ || last_act_.size() != nv)
        throw InputError("checkpoint: EP state does not match the mesh");
    events_.clear();
    rebuild_operators();
}

}  // namespace cardioem
