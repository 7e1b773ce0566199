#pragma once

#include "cardioem/activation.hpp"
#include "cardioem/circulation.hpp"
#include "cardioem/config.hpp"
#include "cardioem/coupling.hpp"
#include "cardioem/electrophysiology.hpp"
#include "cardioem/fem.hpp"
#include "cardioem/ionic.hpp"
#include "cardioem/mechanics.hpp"
#include "cardioem/postproc.hpp"

#include <fstream>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace cardioem {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'C', 'E', 'M', 'C', 'H', 'K', '0', '1'};

struct ProbeRow {
    double t;
    std::vector<double> u, ca;
};

// Per macro-step record of the coupled solve.
struct StepRecord {
    double t = 0.0;
    int newton_iterations = 0;
    int multiplier_iterations = 0;
    double p_lv = 0.0;        // mmHg
    double v3d = 0.0;         // mL (NaN without a cavity)
    double residual = 0.0;    // V_0D - V_3D (mL)
    double max_displacement = 0.0;
    double stretch_min = 1.0, stretch_max = 1.0;
};

// Segregated staggered time loop. Per macro step: EP substeps with frozen deformation, activation from
// transferred calcium and sarcomere length, mechanics coupled to the circulation through the LV pressure
// multiplier, circulation bookkeeping, then the deformation transfer for the next step.
class Simulation {
public:
    explicit Simulation(SimConfig cfg);
    ~Simulation();
    Simulation(const Simulation&) = delete;
    Simulation& operator=(const Simulation&) = delete;

    // Streams CSV outputs into `dir` (created if needed); call before stepping.
    void open_outputs(const std::string& dir);
    void step();
    // Step to protocol.t_end, then write metrics. On a solver error the state at the start of the failed
    // step is checkpointed, a failure report written and the error rethrown.
    void run();

    double time() const { return t_; }
    long macro_steps() const { return n_macro_; }
    double macro_dt() const { return cfg_.mechanics.dt; }
    const SimConfig& config() const { return cfg_; }

    const Mesh& ep_mesh() const { return *fine_; }
    const Mesh* mech_mesh() const { return coarse_.get(); }
    const EpSolver* ep() const { return ep_.get(); }
    EpSolver* ep() { return ep_.get(); }
    const MechanicsSolver* mechanics() const { return mech_.get(); }
    const CircState& circulation() const { return circ_; }
    double p_lv() const { return p_lv_; }
    bool has_cavity() const { return cavity_; }
    const std::vector<ProbeRow>& probe_rows() const { return probe_rows_; }
    const std::vector<int>& probe_vertices() const { return probe_vertex_; }
    const std::vector<TensionSample>& tension() const { return tension_; }
    const std::vector<StepRecord>& records() const { return records_; }
    const std::vector<double>& active_tension_field() const { return Ta_; }
    // Fiber stretch |F f0| at EP vertices as seen by the current EP step.
    std::vector<double> ep_stretch() const;
    std::vector<ActivationEvent> take_activation_log();
    double p_ed() const { return p_ed_; }
    double ed_volume() const { return v_ed_; }

    void save_checkpoint(std::ostream& os) const;
    void load_checkpoint(std::istream& is);
    void save_checkpoint_file(const std::string& path) const;
    void load_checkpoint_file(const std::string& path);
    // Hash of the physics-relevant configuration (protocol end time and outputs excluded).
    std::string physics_hash() const;

private:
    void build();
    void initialize_states();
    void ep_substeps();
    void activation_update();
    void mechanics_update(StepRecord& rec);
    void circulation_only(StepRecord& rec);
    void transfer_deformation();
    void sample_probes();
    void write_step(const StepRecord& rec);
    void write_manifest() const;
    void flush_outputs();

    SimConfig cfg_;
    std::unique_ptr<IonicModel> model_;
    std::unique_ptr<Mesh> fine_, coarse_;
    FiberField fine_fibers_, coarse_fibers_;
    std::vector<double> eta_;
    std::unique_ptr<EpSolver> ep_;
    std::unique_ptr<MechanicsSolver> mech_;
    IntergridMap map_;
    CavityGeometry cav_;
    bool cavity_ = false;
    int n_sub_ = 1;

    std::vector<ActivationState> act_;
    std::vector<double> act_weights_;
    std::vector<double> Ta_;
    CircState circ_{};
    double p_lv_ = 0.0;
    double slope_ = 0.0;
    double v3d_ = 0.0;
    double p_ed_ = 0.0, v_ed_ = 0.0;
    double t_ = 0.0;
    long n_macro_ = 0;
    double next_probe_ = 0.0;

    std::vector<int> probe_vertex_;
    std::vector<ProbeRow> probe_rows_;
    std::vector<TensionSample> tension_;
    std::vector<StepRecord> records_;
    std::vector<ActivationEvent> act_log_;

    std::string outdir_;
    std::ofstream circ_csv_, probe_csv_, tension_csv_, mech_csv_, act_csv_;
};

// Recompute the metrics report and per-cycle tables of a run directory from its CSV streams and manifest.
Metrics postprocess_run(const std::string& dir);

// Nearest mesh vertex (lowest index on ties).
int nearest_vertex(const Mesh& m, const Vec3& p);

}  // namespace cardioem
