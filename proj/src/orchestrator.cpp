#include "cardioem/orchestrator.hpp"

#include "cardioem/binio.hpp"
#include "cardioem/refconfig.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <limits>
#include <sstream>

namespace cardioem {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string f2s(double v) { return format_double(v); }

LinearSolverKind solver_kind(const std::string& s) {
    if (s == "cg") return LinearSolverKind::CG;
    if (s == "bicgstab") return LinearSolverKind::BiCGSTAB;
    return LinearSolverKind::Direct;
}

}  // namespace

int nearest_vertex(const Mesh& m, const Vec3& p) {
    int best = -1;
    double bd = std::numeric_limits<double>::infinity();
    for (int v = 0; v < m.n_vertices(); ++v) {
        Vec3 x = m.x[v];
        if (m.dim == 2) x[2] = p[2];
        const double d = (x - p).squaredNorm();
        if (d < bd) {
            bd = d;
            best = v;
        }
    }
    return best;
}

Simulation::Simulation(SimConfig cfg) : cfg_(std::move(cfg)) {
    validate(cfg_);
    build();
    initialize_states();
}

Simulation::~Simulation() = default;

void Simulation::build() {
    const GeometryConfig& g = cfg_.geometry;
    model_ = std::make_unique<TTP06>();
    n_sub_ = static_cast<int>(std::lround(cfg_.mechanics.dt / cfg_.ep.dt));
    if (cfg_.mode == RunMode::ZeroD) {
        check_circ_timestep(cfg_.circulation, cfg_.mechanics.dt, true);
        return;
    }

    if (g.type == "slab") {
        fine_ = std::make_unique<Mesh>(generate_slab_mesh(g.extent, g.h));
        fine_fibers_ = uniform_fibers(*fine_, cfg_.fibers.slab_angle);
        if (cfg_.mode == RunMode::Em) {
            if (g.extent.size() == 2)
                coarse_ = std::make_unique<Mesh>(
                    generate_thin_slab_mesh(g.extent[0], g.extent[1], g.thickness, g.h_mech, g.layers));
            else
                coarse_ = std::make_unique<Mesh>(generate_slab_mesh(g.extent, g.h_mech));
            relabel_tagged_facets(*coarse_, cfg_.mechanics.support_faces, FacetLabel::Epi);
            coarse_fibers_ = uniform_fibers(*coarse_, cfg_.fibers.slab_angle);
        }
    } else {
        LvGeometry lf = g.lv;
        lf.resolution *= g.ep_refine;
        lf.wall_layers *= g.ep_refine;
        fine_ = std::make_unique<Mesh>(generate_lv_mesh(lf));
        fine_fibers_ = generate_fibers(*fine_, cfg_.fibers.angles);
        if (cfg_.mode == RunMode::Em) {
            coarse_ = std::make_unique<Mesh>(generate_lv_mesh(g.lv));
            coarse_fibers_ = generate_fibers(*coarse_, cfg_.fibers.angles);
        }
    }
    eta_ = assign_eta(*fine_, cfg_.eta_regions);

    if (coarse_ && g.type == "lv" && cfg_.refconfig.unload && cfg_.refconfig.p_loaded > 0.0) {
        // The generated geometry is the loaded one: recover its stress-free shape and carry the EP mesh along.
        UnloadOptions uo;
        uo.mech = cfg_.mechanics.opt;
        uo.omega = cfg_.refconfig.omega;
        const std::vector<double> Ta0(static_cast<std::size_t>(coarse_->n_cells()) * 8, 0.0);
        const UnloadResult ur = recover_reference(*coarse_, coarse_fibers_, cfg_.refconfig.p_loaded, Ta0, uo);
        const IntergridMap m0 = build_intergrid(*coarse_, *fine_);
        std::vector<double> shift[3];
        for (int k = 0; k < 3; ++k) {
            std::vector<double> s(coarse_->n_vertices());
            for (int v = 0; v < coarse_->n_vertices(); ++v) s[v] = ur.reference.x[v][k] - coarse_->x[v][k];
            shift[k] = transfer_coarse_to_fine(m0, *coarse_, s);
        }
        for (int v = 0; v < fine_->n_vertices(); ++v)
            for (int k = 0; k < 3; ++k) fine_->x[v][k] += shift[k][v];
        *coarse_ = ur.reference;
    }

    EpOptions eo;
    eo.variant = cfg_.variant;
    eo.sigma = cfg_.ep.sigma;
    eo.sac = cfg_.ep.sac;
    eo.dt = cfg_.ep.dt;
    eo.order = cfg_.ep.order;
    eo.solver = solver_kind(cfg_.ep.solver);
    eo.activation_threshold = cfg_.ep.activation_threshold;
    ep_ = std::make_unique<EpSolver>(*fine_, fine_fibers_, eta_, *model_, eo, expanded_stimuli(cfg_));

    if (coarse_) {
        MechOptions mo = cfg_.mechanics.opt;
        mo.dt = cfg_.mechanics.dt;
        mech_ = std::make_unique<MechanicsSolver>(*coarse_, coarse_fibers_, mo);
        map_ = build_intergrid(*coarse_, *fine_);
        cavity_ = coarse_->has_label(FacetLabel::Endo);
        if (cavity_) {
            cav_ = make_cavity_geometry(*coarse_);
            check_circ_timestep(cfg_.circulation, cfg_.mechanics.dt, false);
        }
        const FeCache& fe = mech_->fe();
        act_weights_.resize(static_cast<std::size_t>(fe.n_cells()) * fe.nq());
        for (int c = 0; c < fe.n_cells(); ++c)
            for (int q = 0; q < fe.nq(); ++q) act_weights_[static_cast<std::size_t>(c) * fe.nq() + q] = fe.jxw(c, q);
    } else if (cfg_.activation.enabled) {
        act_weights_.assign(ep_->mass().data(), ep_->mass().data() + ep_->mass().size());
    }

    for (const Vec3& p : cfg_.outputs.probes) probe_vertex_.push_back(nearest_vertex(*fine_, p));
}

void Simulation::initialize_states() {
    circ_ = cfg_.circ_initial;
    if (cfg_.mode == RunMode::ZeroD) return;

    CellState cell;
    if (cfg_.ionic.initial == "published") {
        cell = cell_initial(*model_);
    } else if (cfg_.ionic.initial == "paced" && cfg_.ionic.prepace_beats > 0) {
        cell = initialize_steady_state(*model_, cfg_.ionic.prepace_period, cfg_.ionic.prepace_beats).state;
    } else {
        cell = quiescent_state(*model_);
    }
    ep_->initialize(cell, 0.0);

    if (mech_) {
        act_.assign(act_weights_.size(), ActivationState{});
        Ta_.assign(act_weights_.size(), 0.0);
        if (cavity_) {
            if (cfg_.refconfig.v_ed > 0.0) {
                const InflateResult ir =
                    inflate_to_ed(*coarse_, coarse_fibers_, cfg_.refconfig.v_ed, cfg_.mechanics.opt);
                mech_->set_state(ir.d0, Vector::Zero(mech_->n_dofs()));
                p_ed_ = ir.p_ed;
                v_ed_ = ir.volume;
            }
            v3d_ = lv_volume_3d(*coarse_, cav_, &mech_->committed_displacement());
            if (cfg_.refconfig.v_ed <= 0.0) v_ed_ = v3d_;
            circ_[V_LV] = v3d_;
            p_lv_ = p_ed_ / kMmHgToPa;
        }
        transfer_deformation();
    } else {
        if (cfg_.activation.enabled) {
            act_.assign(act_weights_.size(), ActivationState{});
            Ta_.assign(act_weights_.size(), 0.0);
        }
        // Mechanics frozen at the identity: deformation-aware variants still see F explicitly.
        if (cfg_.variant != EpVariant::E) {
            const std::size_t nq = static_cast<std::size_t>(ep_->fe().n_cells()) * ep_->fe().nq();
            ep_->set_deformation(std::vector<Mat3>(nq, Mat3::Identity()),
                                 std::vector<Mat3>(fine_->n_vertices(), Mat3::Identity()));
        }
    }
    next_probe_ = 0.0;
}

void Simulation::transfer_deformation() {
    if (!mech_ || cfg_.variant == EpVariant::E) return;
    const Vector& d = mech_->committed_displacement();
    std::vector<Mat3> Fq(map_.fine_qp.size()), Fv(map_.fine_vertex.size());
    for (std::size_t i = 0; i < Fq.size(); ++i) Fq[i] = deformation_gradient(*coarse_, d, map_.fine_qp[i]);
    for (std::size_t i = 0; i < Fv.size(); ++i) Fv[i] = deformation_gradient(*coarse_, d, map_.fine_vertex[i]);
    ep_->set_deformation(Fq, Fv);
}

std::vector<double> Simulation::ep_stretch() const {
    if (!ep_) return {};
    if (mech_ && cfg_.variant == EpVariant::E) {
        // E ignores the deformation; report the mechanical stretch anyway.
        const Vector& d = mech_->committed_displacement();
        std::vector<double> s(map_.fine_vertex.size());
        for (std::size_t i = 0; i < s.size(); ++i)
            s[i] = (deformation_gradient(*coarse_, d, map_.fine_vertex[i]) * fine_fibers_.vertex[i].col(0)).norm();
        return s;
    }
    return ep_->stretch_field();
}

void Simulation::sample_probes() {
    if (probe_vertex_.empty()) return;
    const double t = ep_->time();
    if (t + 0.5 * cfg_.ep.dt < next_probe_) return;
    ProbeRow row{t, {}, {}};
    for (int v : probe_vertex_) {
        row.u.push_back(ep_->u()[v]);
        row.ca.push_back(ep_->calcium(v));
    }
    if (probe_csv_.is_open()) {
        probe_csv_ << f2s(row.t);
        for (std::size_t i = 0; i < row.u.size(); ++i) probe_csv_ << ',' << f2s(row.u[i]) << ',' << f2s(row.ca[i]);
        probe_csv_ << '\n';
    }
    probe_rows_.push_back(std::move(row));
    const long k = std::lround(next_probe_ / cfg_.outputs.probe_interval) + 1;
    next_probe_ = k * cfg_.outputs.probe_interval;
}

void Simulation::ep_substeps() {
    if (n_macro_ == 0 && t_ == 0.0 && probe_rows_.empty()) sample_probes();
    for (int k = 0; k < n_sub_; ++k) {
        ep_->step();
        sample_probes();
    }
    std::vector<ActivationEvent> ev = ep_->take_events();
    if (!ev.empty()) {
        const std::vector<double> st = act_csv_.is_open() ? ep_stretch() : std::vector<double>{};
        for (const ActivationEvent& e : ev) {
            if (act_csv_.is_open()) {
                const Vec3& x = fine_->x[e.vertex];
                act_csv_ << e.vertex << ',' << f2s(e.t) << ',' << f2s(x[0]) << ',' << f2s(x[1]) << ',' << f2s(x[2])
                         << ',' << f2s(st[e.vertex]) << ',' << f2s(eta_[e.vertex]) << '\n';
            }
            act_log_.push_back(e);
        }
    }
}

std::vector<ActivationEvent> Simulation::take_activation_log() {
    std::vector<ActivationEvent> out;
    out.swap(act_log_);
    return out;
}

void Simulation::activation_update() {
    if (act_.empty()) return;
    const ActivationParams& ap = cfg_.activation.params;
    const double dt = cfg_.mechanics.dt;
    const std::vector<double> ca_v = ep_->calcium_field();
    if (mech_) {
        const std::vector<double> ca = transfer_fine_to_coarse(map_, *fine_, ca_v);
        const std::vector<Mat3> F = mech_->deformation_gradients_qp(mech_->committed_displacement());
        for (std::size_t i = 0; i < act_.size(); ++i) {
            const double sl = sarcomere_length(F[i], coarse_fibers_.qp[i].col(0), ap.sl0);
            Ta_[i] = activation_step(act_[i], ca[i], sl, dt, ap);
        }
    } else {
        for (std::size_t i = 0; i < act_.size(); ++i) Ta_[i] = activation_step(act_[i], ca_v[i], ap.sl0, dt, ap);
    }
}

void Simulation::mechanics_update(StepRecord& rec) {
    int newton = 0;
    if (!cavity_) {
        newton += mech_->solve(0.0, Ta_).iterations;
        mech_->commit();
        rec.v3d = kNaN;
        rec.residual = kNaN;
    } else {
        const double dt = cfg_.mechanics.dt;
        const double t0 = t_;
        VolumeTrial v3d = [&](double p) {
            try {
                newton += mech_->solve(p * kMmHgToPa, Ta_).iterations;
            } catch (const SolverError&) {
                // Retry from the committed state before giving up.
                mech_->reset_trial();
                newton += mech_->solve(p * kMmHgToPa, Ta_).iterations;
            }
            return lv_volume_3d(*coarse_, cav_, &mech_->displacement());
        };
        CircTrial v0d = [&](double p) { return circ_step(t0, circ_, p, dt, cfg_.circulation, false)[V_LV]; };
        MultiplierOptions mo = cfg_.coupling.multiplier;
        mo.initial_slope = slope_;
        const MultiplierResult mr = solve_pressure_multiplier(v3d, v0d, p_lv_, mo);
        if (!(std::abs(mr.residual) <= mo.tol))
            throw SolverError("coupling: volume constraint not met", mr.r_history);
        p_lv_ = mr.p_lv;
        if (mr.slope != 0.0 && std::isfinite(mr.slope)) slope_ = mr.slope;
        mech_->commit();
        circ_ = circ_step(t0, circ_, p_lv_, dt, cfg_.circulation, false);
        check_circ_state(circ_, t0 + dt);
        v3d_ = lv_volume_3d(*coarse_, cav_, &mech_->committed_displacement());
        rec.multiplier_iterations = mr.iterations;
        rec.v3d = v3d_;
        rec.residual = circ_[V_LV] - v3d_;
    }
    rec.newton_iterations = newton;
    rec.p_lv = p_lv_;
    const Vector& d = mech_->committed_displacement();
    double dmax = 0.0;
    for (int v = 0; v < coarse_->n_vertices(); ++v) dmax = std::max(dmax, d.segment<3>(3 * v).norm());
    rec.max_displacement = dmax;
    const std::vector<Mat3> F = mech_->deformation_gradients_qp(d);
    rec.stretch_min = std::numeric_limits<double>::infinity();
    rec.stretch_max = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < F.size(); ++i) {
        const double s = (F[i] * coarse_fibers_.qp[i].col(0)).norm();
        rec.stretch_min = std::min(rec.stretch_min, s);
        rec.stretch_max = std::max(rec.stretch_max, s);
    }
}

void Simulation::circulation_only(StepRecord& rec) {
    const double dt = cfg_.mechanics.dt;
    circ_ = circ_step(t_, circ_, 0.0, dt, cfg_.circulation, true);
    check_circ_state(circ_, t_ + dt);
    p_lv_ = lv_elastance_pressure(t_ + dt, circ_, cfg_.circulation);
    rec.p_lv = p_lv_;
    rec.v3d = kNaN;
    rec.residual = kNaN;
}

void Simulation::step() {
    StepRecord rec;
    if (cfg_.mode == RunMode::ZeroD) {
        circulation_only(rec);
    } else {
        ep_substeps();
        activation_update();
        if (mech_) {
            mechanics_update(rec);
        } else {
            rec.v3d = kNaN;
            rec.residual = kNaN;
        }
        transfer_deformation();
    }
    t_ = (n_macro_ + 1) * cfg_.mechanics.dt;
    ++n_macro_;
    rec.t = t_;
    if (!act_.empty()) tension_.push_back(tension_sample(t_, Ta_, act_weights_));
    records_.push_back(rec);
    write_step(rec);
}

void Simulation::write_step(const StepRecord& rec) {
    if (circ_csv_.is_open() && (cfg_.mode == RunMode::ZeroD || cavity_)) {
        const CircAux aux = circ_aux(t_, circ_, p_lv_, cfg_.circulation);
        circ_csv_ << f2s(t_);
        for (int i = 0; i < kCircSize; ++i) circ_csv_ << ',' << f2s(circ_[i]);
        circ_csv_ << ',' << f2s(p_lv_) << ',' << f2s(aux.Q_MV) << ',' << f2s(aux.Q_AV) << ',' << f2s(aux.Q_TV) << ','
                  << f2s(aux.Q_PV) << ',' << f2s(rec.v3d) << ',' << f2s(rec.residual) << ','
                  << f2s(total_blood_volume(circ_, cfg_.circulation)) << '\n';
    }
    if (tension_csv_.is_open() && !tension_.empty()) {
        const TensionSample& s = tension_.back();
        tension_csv_ << f2s(s.t) << ',' << f2s(s.min) << ',' << f2s(s.avg) << ',' << f2s(s.max) << '\n';
    }
    if (mech_csv_.is_open()) {
        mech_csv_ << f2s(rec.t) << ',' << rec.newton_iterations << ',' << rec.multiplier_iterations << ','
                  << f2s(rec.max_displacement) << ',' << f2s(rec.stretch_min) << ',' << f2s(rec.stretch_max) << '\n';
    }
    if (!outdir_.empty()) {
        const int vs = cfg_.outputs.vtk_stride;
        if (vs > 0 && n_macro_ % vs == 0 && ep_) {
            std::ostringstream name;
            name << std::setw(6) << std::setfill('0') << n_macro_;
            std::vector<double> u(ep_->u().data(), ep_->u().data() + ep_->u().size());
            const std::vector<double> ca = ep_->calcium_field();
            write_vtk(outdir_ + "/ep_" + name.str() + ".vtk", *fine_, {{"u", &u, nullptr}, {"ca", &ca, nullptr}});
            if (mech_) {
                const Vector& d = mech_->committed_displacement();
                std::vector<Vec3> dv(coarse_->n_vertices());
                for (int v = 0; v < coarse_->n_vertices(); ++v) dv[v] = d.segment<3>(3 * v);
                write_vtk(outdir_ + "/mech_" + name.str() + ".vtk", *coarse_, {{"displacement", nullptr, &dv}}, &d);
            }
        }
        const int cs = cfg_.outputs.checkpoint_stride;
        if (cs > 0 && n_macro_ % cs == 0) {
            std::ostringstream name;
            name << outdir_ << "/checkpoint_" << std::setw(6) << std::setfill('0') << n_macro_ << ".bin";
            save_checkpoint_file(name.str());
        }
    }
}

void Simulation::open_outputs(const std::string& dir) {
    std::filesystem::create_directories(dir);
    outdir_ = dir;
    auto open = [&](std::ofstream& f, const std::string& name, const std::string& header) {
        f.open(dir + "/" + name);
        if (!f) throw InputError("cannot write " + dir + "/" + name);
        f << header << '\n';
    };
    if (cfg_.mode == RunMode::ZeroD || cavity_) {
        std::string h = "t";
        for (const std::string& n : circ_state_names()) h += "," + n;
        h += ",p_LV,Q_MV,Q_AV,Q_TV,Q_PV,V_LV_3D,constraint_residual,total_volume";
        open(circ_csv_, "circulation.csv", h);
    }
    if (!probe_vertex_.empty()) {
        std::string h = "t";
        for (std::size_t i = 0; i < probe_vertex_.size(); ++i)
            h += ",u_" + std::to_string(i) + ",ca_" + std::to_string(i);
        open(probe_csv_, "probes.csv", h);
    }
    if (!act_.empty()) open(tension_csv_, "tension.csv", "t,Ta_min,Ta_avg,Ta_max");
    if (mech_) open(mech_csv_, "mechanics.csv", "t,newton_iterations,multiplier_iterations,max_displacement,stretch_min,stretch_max");
    if (ep_) open(act_csv_, "activations.csv", "vertex,t,x,y,z,stretch,eta");
    if (coarse_ && cfg_.refconfig.unload) write_vtk(dir + "/reference.vtk", *coarse_, {});
    write_manifest();
}

void Simulation::write_manifest() const {
    nlohmann::json m;
    m["format_version"] = 1;
    m["module_versions"] = {{"circulation", 1}, {"ionic", 1},      {"electrophysiology", 1}, {"activation", 1},
                            {"mechanics", 1},   {"coupling", 1},   {"refconfig", 1},         {"orchestrator", 1},
                            {"postproc", 1}};
    m["mode"] = to_string(cfg_.mode);
    m["variant"] = to_string(cfg_.variant);
    m["config"] = nlohmann::json::parse(dump_config(cfg_));
    m["config_hash"] = fnv1a_hex(dump_config(cfg_));
    m["physics_hash"] = physics_hash();
    m["seed"] = 0;
    m["macro_dt"] = cfg_.mechanics.dt;
    m["ep_substeps"] = n_sub_;
    m["t_end"] = cfg_.protocol.t_end;
    m["circulation_period"] = cfg_.circulation.period;
    m["a_xb"] = cfg_.activation.params.a_xb;
    if (fine_) {
        m["ep_mesh"] = {{"vertices", fine_->n_vertices()}, {"cells", fine_->n_cells()}, {"dim", fine_->dim}};
        nlohmann::json probes = nlohmann::json::array();
        for (std::size_t i = 0; i < probe_vertex_.size(); ++i) {
            const Vec3& x = fine_->x[probe_vertex_[i]];
            probes.push_back({{"index", i}, {"vertex", probe_vertex_[i]}, {"x", {x[0], x[1], x[2]}}});
        }
        m["probes"] = probes;
    }
    if (coarse_) m["mechanics_mesh"] = {{"vertices", coarse_->n_vertices()}, {"cells", coarse_->n_cells()}};
    nlohmann::json onsets = nlohmann::json::array();
    for (const Stimulus& s : expanded_stimuli(cfg_)) onsets.push_back(s.onset);
    m["stimulus_onsets"] = onsets;
    if (cavity_) {
        m["p_ed_Pa"] = p_ed_;
        m["ed_volume_mL"] = v_ed_;
    }
    std::ofstream out(outdir_ + "/manifest.json");
    out << m.dump(2) << '\n';
}

void Simulation::flush_outputs() {
    for (std::ofstream* f : {&circ_csv_, &probe_csv_, &tension_csv_, &mech_csv_, &act_csv_})
        if (f->is_open()) f->flush();
}

void Simulation::run() {
    const long n_total = std::lround(cfg_.protocol.t_end / cfg_.mechanics.dt);
    std::string snapshot;
    while (n_macro_ < n_total) {
        if (!outdir_.empty()) {
            std::ostringstream os(std::ios::binary);
            save_checkpoint(os);
            snapshot = os.str();
        }
        try {
            step();
        } catch (const SolverError& e) {
            if (!outdir_.empty()) {
                flush_outputs();
                std::ofstream(outdir_ + "/checkpoint_failure.bin", std::ios::binary) << snapshot;
                std::ofstream rep(outdir_ + "/failure.txt");
                rep << "status = failed\n"
                    << "t = " << f2s(t_) << "\n"
                    << "macro_step = " << n_macro_ << "\n"
                    << "error = " << e.what() << "\n";
                rep << "history =";
                for (double h : e.history()) rep << ' ' << f2s(h);
                rep << "\n";
            }
            throw;
        }
    }
    if (!outdir_.empty()) {
        flush_outputs();
        for (std::ofstream* f : {&circ_csv_, &probe_csv_, &tension_csv_, &mech_csv_, &act_csv_})
            if (f->is_open()) f->close();
        postprocess_run(outdir_);
    }
}

std::string Simulation::physics_hash() const {
    SimConfig c = cfg_;
    c.protocol.t_end = 0.0;
    c.outputs = OutputConfig{};
    return fnv1a_hex(dump_config(c));
}

void Simulation::save_checkpoint(std::ostream& os) const {
    os.write(kCheckpointMagic, 8);
    bin::put<std::uint32_t>(os, kCheckpointVersion);
    bin::put<std::uint32_t>(os, 0x01020304u);
    const std::string h = physics_hash();
    os.write(h.data(), 16);
    bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(cfg_.mode));
    bin::put<double>(os, t_);
    bin::put<std::int64_t>(os, n_macro_);
    bin::put<double>(os, next_probe_);
    for (int i = 0; i < kCircSize; ++i) bin::put<double>(os, circ_[i]);
    bin::put<double>(os, p_lv_);
    bin::put<double>(os, slope_);
    bin::put<double>(os, v3d_);
    bin::put<std::uint64_t>(os, act_.size());
    for (const ActivationState& a : act_) {
        bin::put<double>(os, a.B);
        bin::put<double>(os, a.X);
        bin::put<double>(os, a.sl_prev);
        bin::put<double>(os, a.rate.y);
        bin::put<std::uint8_t>(os, a.rate.primed ? 1 : 0);
    }
    bin::put_vec(os, Ta_);
    bin::put<std::uint8_t>(os, ep_ ? 1 : 0);
    if (ep_) ep_->save(os);
    bin::put<std::uint8_t>(os, mech_ ? 1 : 0);
    if (mech_) mech_->save(os);
}

void Simulation::load_checkpoint(std::istream& is) {
    char magic[8];
    is.read(magic, 8);
    if (!is || !std::equal(magic, magic + 8, kCheckpointMagic)) throw InputError("checkpoint: bad magic");
    if (bin::get<std::uint32_t>(is) != kCheckpointVersion) throw InputError("checkpoint: unsupported version");
    if (bin::get<std::uint32_t>(is) != 0x01020304u) throw InputError("checkpoint: byte order mismatch");
    std::string h(16, ' ');
    is.read(h.data(), 16);
    if (h != physics_hash()) throw InputError("checkpoint: written by a different physics configuration");
    if (bin::get<std::uint32_t>(is) != static_cast<std::uint32_t>(cfg_.mode)) throw InputError("checkpoint: mode mismatch");
    t_ = bin::get<double>(is);
    n_macro_ = bin::get<std::int64_t>(is);
    next_probe_ = bin::get<double>(is);
    for (int i = 0; i < kCircSize; ++i) circ_[i] = bin::get<double>(is);
    p_lv_ = bin::get<double>(is);
    slope_ = bin::get<double>(is);
    v3d_ = bin::get<double>(is);
    const auto na = bin::get<std::uint64_t>(is);
    if (na != act_.size()) throw InputError("checkpoint: activation state size mismatch");
    for (ActivationState& a : act_) {
        a.B = bin::get<double>(is);
        a.X = bin::get<double>(is);
        a.sl_prev = bin::get<double>(is);
        a.rate.y = bin::get<double>(is);
        a.rate.primed = bin::get<std::uint8_t>(is) != 0;
    }
    Ta_ = bin::get_vec<double>(is);
    if (Ta_.size() != act_.size()) throw InputError("checkpoint: tension field size mismatch");
    if ((bin::get<std::uint8_t>(is) != 0) != static_cast<bool>(ep_)) throw InputError("checkpoint: EP block mismatch");
    if (ep_) ep_->load(is);
    if ((bin::get<std::uint8_t>(is) != 0) != static_cast<bool>(mech_))
        throw InputError("checkpoint: mechanics block mismatch");
    if (mech_) mech_->load(is);
    if (!is) throw InputError("checkpoint: truncated");
}

void Simulation::save_checkpoint_file(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw InputError("cannot write " + path);
    save_checkpoint(os);
}

void Simulation::load_checkpoint_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw InputError("cannot open " + path);
    load_checkpoint(is);
}

Metrics postprocess_run(const std::string& dir) {
    std::ifstream mf(dir + "/manifest.json");
    if (!mf) throw InputError("no manifest.json in " + dir);
    const nlohmann::json man = nlohmann::json::parse(mf);
    Metrics out;
    out["mode"] = man.at("mode").get<std::string>();
    out["variant"] = man.at("variant").get<std::string>();
    const double a_xb = man.at("a_xb").get<double>();
    const double period = man.at("circulation_period").get<double>();
    std::vector<double> onsets = man.at("stimulus_onsets").get<std::vector<double>>();
    std::sort(onsets.begin(), onsets.end());
    namespace fs = std::filesystem;

    BclStats bcl0;
    bool have_bcl = false;
    std::vector<double> t_end_probe;
    if (fs::exists(dir + "/probes.csv")) {
        const CsvTable p = read_csv(dir + "/probes.csv");
        const auto& t = p.column("t");
        const nlohmann::json& probes = man.at("probes");
        std::vector<double> first(probes.size(), -1.0);
        std::ofstream cyc(dir + "/bcl_cycles.csv");
        cyc << "probe,cycle,start,length\n";
        for (std::size_t i = 0; i < probes.size(); ++i) {
            const BclStats s = detect_bcl(t, p.column("u_" + std::to_string(i)));
            const std::string k = "probe_" + std::to_string(i);
            out[k + ".activations"] = std::to_string(s.activations.size());
            out[k + ".bcl_mean"] = f2s(s.mean);
            out[k + ".bcl_min"] = f2s(s.min);
            out[k + ".bcl_max"] = f2s(s.max);
            out[k + ".bcl_spread"] = f2s(relative_spread(s.cycles));
            for (std::size_t c = 0; c < s.cycles.size(); ++c)
                cyc << i << ',' << c << ',' << f2s(s.activations[c]) << ',' << f2s(s.cycles[c]) << '\n';
            if (!s.activations.empty()) first[i] = s.activations.front();
            if (i == 0) {
                bcl0 = s;
                have_bcl = true;
            }
        }
        if (probes.size() >= 2) {
            const auto xa = probes[0].at("x").get<std::vector<double>>();
            const auto xb = probes[1].at("x").get<std::vector<double>>();
            const auto cv = conduction_velocity(Vec3(xa[0], xa[1], xa[2]), first[0], Vec3(xb[0], xb[1], xb[2]), first[1]);
            out["cv_probe0_probe1"] = cv ? f2s(*cv) : "none";
        }
        if (!t.empty()) t_end_probe.push_back(t.back());
    }

    std::vector<double> sv_cycles;
    if (fs::exists(dir + "/circulation.csv")) {
        const CsvTable c = read_csv(dir + "/circulation.csv");
        const auto& t = c.column("t");
        const auto& v = c.column("V_LV");
        const auto& p = c.column("p_LV");
        // Cycles follow the activity: probe activations when available, else the circulation period.
        std::vector<double> bounds =
            have_bcl && bcl0.activations.size() >= 2 ? bcl0.activations : periodic_boundaries(t, period);
        const std::vector<PvCycle> cycles = pv_loop(t, v, p, bounds);
        std::ofstream pv(dir + "/pv_cycles.csv");
        pv << "cycle,t_start,t_end,sv,ef,v_max,v_min,p_peak,closure_gap\n";
        for (std::size_t k = 0; k < cycles.size(); ++k) {
            const PvCycle& x = cycles[k];
            pv << k << ',' << f2s(x.t_start) << ',' << f2s(x.t_end) << ',' << f2s(x.sv) << ',' << f2s(x.ef) << ','
               << f2s(x.v_max) << ',' << f2s(x.v_min) << ',' << f2s(x.p_peak) << ',' << f2s(x.closure_gap) << '\n';
            sv_cycles.push_back(x.sv);
        }
        if (!cycles.empty()) {
            out["pv.cycles"] = std::to_string(cycles.size());
            out["pv.last.sv"] = f2s(cycles.back().sv);
            out["pv.last.ef"] = f2s(cycles.back().ef);
            out["pv.last.p_peak"] = f2s(cycles.back().p_peak);
            out["pv.last.closure_gap"] = f2s(cycles.back().closure_gap);
        }
        const auto& tot = c.column("total_volume");
        if (!tot.empty()) out["total_volume.drift_rel"] = f2s(std::abs(tot.back() - tot.front()) / tot.front());
        const auto& res = c.column("constraint_residual");
        double worst = 0.0;
        bool any = false;
        for (double r : res)
            if (!std::isnan(r)) {
                worst = std::max(worst, std::abs(r));
                any = true;
            }
        if (any) out["coupling.max_abs_residual"] = f2s(worst);
        if (!t.empty()) t_end_probe.push_back(t.back());
    }

    if (have_bcl && man.at("mode").get<std::string>() != "0d") {
        const double t_end = t_end_probe.empty() ? -1.0 : t_end_probe.front();
        out["vt_class"] = to_string(classify_vt(bcl0, sv_cycles, {}, t_end));
    }

    if (fs::exists(dir + "/tension.csv")) {
        const CsvTable tc = read_csv(dir + "/tension.csv");
        std::vector<TensionSample> s;
        for (std::size_t i = 0; i < tc.rows(); ++i)
            s.push_back({tc.column("t")[i], tc.column("Ta_min")[i], tc.column("Ta_avg")[i], tc.column("Ta_max")[i]});
        double peak = 0.0;
        for (const TensionSample& x : s) peak = std::max(peak, x.max);
        const std::vector<double>& beats = onsets.size() >= 2 ? onsets : bcl0.activations;
        const double floor = diastolic_floor(s, beats);
        out["tension.peak"] = f2s(peak);
        out["tension.diastolic_floor"] = f2s(floor);
        out["tension.floor_over_a_xb"] = f2s(floor / a_xb);
        out["tension.floor_over_peak"] = peak > 0.0 ? f2s(floor / peak) : "nan";
    }
    write_metrics(dir + "/metrics.txt", out);
    return out;
}

}  // namespace cardioem
