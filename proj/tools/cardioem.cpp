#include "cardioem/config.hpp"
#include "cardioem/orchestrator.hpp"
#include "cardioem/refconfig.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#ifdef _OPENMP
#include <omp.h>
#endif

using namespace cardioem;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitSolver = 3;

SimConfig config_or_default(const std::string& path) { return path.empty() ? SimConfig{} : load_config(path); }

void run_mode(SimConfig cfg, RunMode mode, const std::string& out, const std::string& restart) {
    cfg.mode = mode;
    validate(cfg);
    Simulation sim(cfg);
    if (!restart.empty()) sim.load_checkpoint_file(restart);
    sim.open_outputs(out);
    sim.run();
    std::cout << "run complete: " << sim.macro_steps() << " macro steps, t = " << sim.time() << " s, outputs in " << out
              << '\n';
}

void mesh_gen(const SimConfig& cfg, const std::string& out) {
    std::filesystem::create_directories(out);
    const GeometryConfig& g = cfg.geometry;
    Mesh fine, coarse;
    FiberField ff;
    if (g.type == "slab") {
        fine = generate_slab_mesh(g.extent, g.h);
        ff = uniform_fibers(fine, cfg.fibers.slab_angle);
        coarse = g.extent.size() == 2 ? generate_thin_slab_mesh(g.extent[0], g.extent[1], g.thickness, g.h_mech, g.layers)
                                      : generate_slab_mesh(g.extent, g.h_mech);
    } else {
        LvGeometry lf = g.lv;
        lf.resolution *= g.ep_refine;
        lf.wall_layers *= g.ep_refine;
        fine = generate_lv_mesh(lf);
        ff = generate_fibers(fine, cfg.fibers.angles);
        coarse = generate_lv_mesh(g.lv);
    }
    const std::vector<double> eta = assign_eta(fine, cfg.eta_regions);
    std::vector<Vec3> f0(fine.n_vertices());
    for (int v = 0; v < fine.n_vertices(); ++v) f0[v] = ff.vertex[v].col(0);
    write_vtk(out + "/ep_mesh.vtk", fine, {{"eta", &eta, nullptr}, {"fiber", nullptr, &f0}});
    write_vtk(out + "/mech_mesh.vtk", coarse, {});
    std::cout << "EP mesh: " << fine.n_vertices() << " vertices, " << fine.n_cells() << " cells; mechanics mesh: "
              << coarse.n_vertices() << " vertices, " << coarse.n_cells() << " cells\n";
}

void unload(const SimConfig& cfg, double pressure, const std::string& out) {
    if (cfg.geometry.type != "lv") throw ConfigError("geometry.type", "unloading needs an LV geometry");
    std::filesystem::create_directories(out);
    const Mesh loaded = generate_lv_mesh(cfg.geometry.lv);
    const FiberField ff = generate_fibers(loaded, cfg.fibers.angles);
    UnloadOptions uo;
    uo.mech = cfg.mechanics.opt;
    uo.omega = cfg.refconfig.omega;
    const double p = pressure >= 0.0 ? pressure : cfg.refconfig.p_loaded;
    const std::vector<double> Ta(static_cast<std::size_t>(loaded.n_cells()) * 8, 0.0);
    const UnloadResult r = recover_reference(loaded, ff, p, Ta, uo);
    write_vtk(out + "/reference.vtk", r.reference, {});
    Metrics m;
    m["p_loaded_Pa"] = format_double(p);
    m["iterations"] = std::to_string(r.iterations);
    m["tolerance_m"] = format_double(r.tolerance);
    m["final_mismatch_m"] = format_double(r.mismatch_history.back());
    const CavityGeometry cav = make_cavity_geometry(r.reference);
    m["reference_volume_mL"] = format_double(lv_volume_3d(r.reference, cav, nullptr));
    if (cfg.refconfig.v_ed > 0.0) {
        const InflateResult ir = inflate_to_ed(r.reference, ff, cfg.refconfig.v_ed, cfg.mechanics.opt);
        m["p_ed_Pa"] = format_double(ir.p_ed);
        m["ed_volume_mL"] = format_double(ir.volume);
    }
    write_metrics(out + "/unload.txt", m);
    std::ofstream h(out + "/unload_history.csv");
    h << "iteration,max_mismatch\n";
    for (std::size_t k = 0; k < r.mismatch_history.size(); ++k)
        h << k + 1 << ',' << format_double(r.mismatch_history[k]) << '\n';
    std::cout << "unloaded in " << r.iterations << " iterations, final mismatch " << r.mismatch_history.back() << " m\n";
}

void sweep(const SimConfig& cfg, const std::string& out) {
    for (EpVariant v : {EpVariant::E, EpVariant::GmefMinimal, EpVariant::GmefEnhanced, EpVariant::GmefFull,
                        EpVariant::Sac, EpVariant::GmefFullSac}) {
        SimConfig c = cfg;
        c.variant = v;
        const RunMode mode = c.mode == RunMode::ZeroD ? RunMode::Ep : c.mode;
        std::cout << "variant " << to_string(v) << '\n';
        run_mode(c, mode, out + "/" + to_string(v), "");
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cardiac electromechanics simulator"};
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "Worker threads (0: runtime default)");

    std::string config, out = "run", restart, run_dir;
    double pressure = -1.0;
    bool print_config = false;
    app.add_flag("--print-config", print_config, "Print the complete default configuration and exit");

    auto* mg = app.add_subcommand("mesh-gen", "Generate and export the EP and mechanics meshes");
    auto* r0 = app.add_subcommand("run-0d", "Closed-loop circulation with a lumped LV");
    auto* re = app.add_subcommand("run-ep", "Electrophysiology with mechanics frozen at the identity");
    auto* rm = app.add_subcommand("run-em", "Coupled electromechanics");
    auto* ul = app.add_subcommand("unload", "Recover the stress-free LV reference configuration");
    auto* pp = app.add_subcommand("postprocess", "Recompute the metrics report of a run directory");
    auto* sw = app.add_subcommand("sweep", "Run all six monodomain variants from one configuration");
    for (auto* s : {mg, r0, re, rm, ul, sw}) {
        s->add_option("-c,--config", config, "JSON configuration file");
        s->add_option("-o,--out", out, "Output directory");
    }
    for (auto* s : {re, rm}) s->add_option("--restart", restart, "Checkpoint to restart from");
    ul->add_option("--pressure", pressure, "Loaded-state pressure (Pa); default refconfig.p_loaded");
    pp->add_option("run", run_dir, "Run directory")->required();
    app.require_subcommand(0, 1);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }
#ifdef _OPENMP
    if (threads > 0) omp_set_num_threads(threads);
#endif

    try {
        if (print_config) {
            std::cout << dump_config(SimConfig{}) << '\n';
            return 0;
        }
        if (app.get_subcommands().empty()) {
            std::cerr << app.help();
            return kExitConfig;
        }
        if (*mg) mesh_gen(config_or_default(config), out);
        if (*r0) {
            SimConfig c = config_or_default(config);
            if (config.empty()) c.protocol.t_end = 20 * c.circulation.period;
            run_mode(c, RunMode::ZeroD, out, "");
        }
        if (*re) run_mode(config_or_default(config), RunMode::Ep, out, restart);
        if (*rm) run_mode(config_or_default(config), RunMode::Em, out, restart);
        if (*ul) unload(config_or_default(config), pressure, out);
        if (*pp) {
            const Metrics m = postprocess_run(run_dir);
            for (const auto& [k, v] : m) std::cout << k << " = " << v << '\n';
        }
        if (*sw) sweep(config_or_default(config), out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const InputError& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const SolverError& e) {
        std::cerr << "solver error: " << e.what() << '\n';
        return kExitSolver;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
