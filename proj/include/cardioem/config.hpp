#pragma once

#include "cardioem/activation.hpp"
#include "cardioem/circulation.hpp"
#include "cardioem/coupling.hpp"
#include "cardioem/electrophysiology.hpp"
#include "cardioem/mechanics.hpp"
#include "cardioem/mesh.hpp"

#include <string>
#include <vector>

namespace cardioem {

enum class RunMode { ZeroD, Ep, Em };
const char* to_string(RunMode m);

struct GeometryConfig {
    std::string type = "slab";  // slab | lv
    // Slab: EP mesh extent (2 or 3 entries, m) and spacing. The mechanics slab is 3D, spans the same
    // x/y extent with thickness `thickness` centered on z = 0 (a 2D EP slab lies on its mid-plane).
    std::vector<double> extent{0.01, 0.01};
    double h = 2.5e-4;
    double h_mech = 1e-3;
    double thickness = 1e-3;
    int layers = 1;
    // LV: mechanics mesh; the EP mesh refines resolution and wall layers by ep_refine.
    LvGeometry lv{{0.025, 0.025, 0.060}, {0.035, 0.035, 0.070}, 0.0, 4, 2};
    int ep_refine = 2;
};

struct FiberConfig {
    FiberAngles angles;
    double slab_angle = 0.0;  // degrees from the x axis, slab meshes only
};

struct IonicConfig {
    std::string initial = "quiescent";  // quiescent | published | paced
    int prepace_beats = 0;
    double prepace_period = 0.8;
};

struct EpConfig {
    Conductivities sigma;
    SacParams sac;
    double dt = 5e-5;
    int order = 3;
    std::string solver = "direct";  // direct | cg | bicgstab
    double activation_threshold = -20.0;
};

struct ActivationConfig {
    bool enabled = true;  // EP-only runs track tension at the EP vertices when set
    ActivationParams params;
};

struct MechanicsConfig {
    MechOptions opt;
    double dt = 5e-4;                  // macro step
    std::vector<int> support_faces{};  // slab faces (xmin, xmax, ymin, ymax, zmin, zmax) carrying the Robin support
};

struct CouplingConfig {
    MultiplierOptions multiplier;
};

struct RefConfigConfig {
    bool unload = false;
    double p_loaded = 0.0;   // Pa, pressure of the input geometry
    double omega = 0.7;
    double v_ed = 0.0;       // mL; 0 keeps the reference state
};

struct PacingTrain {
    Stimulus stimulus;       // onset is the first beat
    double period = 0.8;
    int count = 0;
};

struct ProtocolConfig {
    double t_end = 4.0;
    StimulusProtocol stimuli;
    PacingTrain pacing;
};

struct OutputConfig {
    std::vector<Vec3> probes;
    double probe_interval = 1e-3;
    int vtk_stride = 0;        // macro steps between snapshots; 0 disables
    int checkpoint_stride = 0; // macro steps between checkpoints; 0 disables
};

struct SimConfig {
    RunMode mode = RunMode::Ep;
    EpVariant variant = EpVariant::E;
    GeometryConfig geometry;
    FiberConfig fibers;
    std::vector<EtaRegion> eta_regions;
    IonicConfig ionic;
    EpConfig ep;
    ActivationConfig activation;
    MechanicsConfig mechanics;
    CircParams circulation;
    CircState circ_initial = default_circ_state();
    CouplingConfig coupling;
    RefConfigConfig refconfig;
    ProtocolConfig protocol;
    OutputConfig outputs;
};

// Strict parse: unknown keys, wrong types and out-of-range values throw ConfigError with the key path.
SimConfig parse_config(const std::string& json_text);
SimConfig load_config(const std::string& path);
// Complete config (all defaults filled) as pretty JSON.
std::string dump_config(const SimConfig& c);
void validate(const SimConfig& c);
// Stimuli of the explicit list plus the expanded pacing train.
StimulusProtocol expanded_stimuli(const SimConfig& c);
// FNV-1a 64-bit hash of a string, as 16 hex digits.
std::string fnv1a_hex(const std::string& s);

}  // namespace cardioem
