#include <doctest.h>

#include "cardioem/orchestrator.hpp"

#include <cmath>
#include <filesystem>
#include <sstream>

using namespace cardioem;

namespace {

SimConfig small_ep_slab() {
    SimConfig c;
    c.mode = RunMode::Ep;
    c.geometry.extent = {0.004, 0.004};
    c.geometry.h = 5e-4;
    c.protocol.t_end = 0.02;
    c.protocol.stimuli = {Stimulus{Vec3(0, 0, 0), 1e-3, 17000.0, 3e-3, 0.0}};
    c.outputs.probes = {Vec3(0.001, 0.002, 0), Vec3(0.003, 0.002, 0)};
    return c;
}

SimConfig small_em_slab() {
    SimConfig c = small_ep_slab();
    c.mode = RunMode::Em;
    c.variant = EpVariant::GmefFullSac;
    c.ep.sac.G_s = 50.0;
    c.geometry.h_mech = 1e-3;
    c.geometry.thickness = 5e-4;
    c.mechanics.support_faces = {0, 1};
    return c;
}

SimConfig small_em_lv() {
    SimConfig c;
    c.mode = RunMode::Em;
    c.geometry.type = "lv";
    c.geometry.lv.resolution = 4;
    c.geometry.lv.wall_layers = 2;
    c.geometry.ep_refine = 1;
    c.protocol.t_end = 0.005;
    c.protocol.stimuli = {Stimulus{Vec3(0, 0, -0.065), 5e-3, 17000.0, 3e-3, 0.0}};
    c.outputs.probes = {Vec3(0, 0, -0.065)};
    return c;
}

std::string error_key(const std::string& json) {
    try {
        parse_config(json);
    } catch (const ConfigError& e) {
        return e.key();
    }
    return "<none>";
}

}  // namespace

TEST_SUITE("orchestrator") {

TEST_CASE("strict configuration parsing") {
    CHECK_NOTHROW(parse_config("{}"));
    CHECK(error_key(R"({"mechanics": {"materal": {}}})") == "mechanics.materal");
    CHECK(error_key(R"({"ep": {"dt": "fast"}})") == "ep.dt");
    CHECK(error_key(R"({"variant": "F"})") == "variant");
    CHECK(error_key(R"({"eta_regions": [{"shape": "sphere", "center": [0,0,0], "radius": 1e-3}]})") ==
          "eta_regions[0].eta");
    CHECK(error_key(R"({"eta_regions": [{"shape": "box", "eta": 0, "lo": [0,0,0]}]})") == "eta_regions[0].hi");
    CHECK(error_key(R"({"ep": {"order": 4}})") == "ep.order");
    CHECK(error_key(R"({"mechanics": {"dt": 1.23e-4}})") == "mechanics.dt");
    CHECK(error_key("{not json") == "");
    CHECK_THROWS_AS(parse_config("{not json"), ConfigError);
}

TEST_CASE("configuration dump round trip") {
    SimConfig c = small_em_slab();
    c.eta_regions = {{Box{Vec3(0, 0, -1), Vec3(1e-3, 1e-3, 1)}, 0.0}, {Sphere{Vec3(1, 2, 3), 0.5}, 0.2}};
    const std::string d = dump_config(c);
    CHECK(dump_config(parse_config(d)) == d);
    CHECK(dump_config(parse_config(dump_config(SimConfig{}))) == dump_config(SimConfig{}));
}

TEST_CASE("variant sweep configs differ only in the variant") {
    const SimConfig base = small_ep_slab();
    for (const char* v : {"gMEF-minimal", "gMEF-enhanced", "gMEF-full", "SAC", "gMEF-full+SAC"}) {
        SimConfig c = base;
        c.variant = parse_ep_variant(v);
        std::istringstream a(dump_config(base)), b(dump_config(c));
        std::string la, lb;
        int diffs = 0;
        while (std::getline(a, la) && std::getline(b, lb))
            if (la != lb) {
                ++diffs;
                CHECK(la.find("\"variant\"") != std::string::npos);
            }
        CHECK(diffs == 1);
    }
}

TEST_CASE("EP-only mode equals the standalone EP solver bitwise") {
    const SimConfig c = small_ep_slab();
    Simulation sim(c);
    while (sim.time() < c.protocol.t_end - 1e-12) sim.step();

    const Mesh m = generate_slab_mesh(c.geometry.extent, c.geometry.h);
    const TTP06 model;
    EpOptions eo;
    EpSolver ep(m, uniform_fibers(m, 0.0), assign_eta(m, {}), model, eo, c.protocol.stimuli);
    ep.initialize(quiescent_state(model));
    for (long k = 0; k < sim.ep()->steps(); ++k) ep.step();
    CHECK(ep.u().size() == sim.ep()->u().size());
    CHECK((ep.u() - sim.ep()->u()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(sim.probe_rows().size() >= 20);
}

TEST_CASE("0D loop conserves blood volume") {
    SimConfig c;
    c.mode = RunMode::ZeroD;
    c.protocol.t_end = 1.6;
    Simulation sim(c);
    const double v0 = total_blood_volume(sim.circulation(), c.circulation);
    while (sim.time() < c.protocol.t_end - 1e-12) sim.step();
    CHECK(std::abs(total_blood_volume(sim.circulation(), c.circulation) - v0) < 1e-3 * v0);
    CHECK(sim.macro_steps() == 3200);
}

TEST_CASE("checkpoint restart reproduces the trajectory") {
    const SimConfig c = small_em_slab();
    Simulation a(c);
    for (int k = 0; k < 10; ++k) a.step();
    std::stringstream chk(std::ios::in | std::ios::out | std::ios::binary);
    a.save_checkpoint(chk);
    for (int k = 0; k < 10; ++k) a.step();

    Simulation b(c);
    b.load_checkpoint(chk);
    CHECK(b.time() == doctest::Approx(10 * c.mechanics.dt));
    for (int k = 0; k < 10; ++k) b.step();
    CHECK((a.ep()->u() - b.ep()->u()).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.mechanics()->committed_displacement() - b.mechanics()->committed_displacement()).cwiseAbs().maxCoeff() ==
          0.0);
    CHECK(a.active_tension_field() == b.active_tension_field());

    // A checkpoint from another physics configuration is rejected.
    SimConfig other = c;
    other.ep.sac.G_s = 10.0;
    Simulation d(other);
    chk.seekg(0);
    CHECK_THROWS_AS(d.load_checkpoint(chk), InputError);
}

TEST_CASE("coupled LV steps satisfy the volume constraint") {
    const SimConfig c = small_em_lv();
    Simulation sim(c);
    while (sim.time() < c.protocol.t_end - 1e-12) sim.step();
    for (const StepRecord& r : sim.records()) {
        CHECK(std::abs(r.residual) < c.coupling.multiplier.tol);
        CHECK(r.newton_iterations >= 0);
    }
    CHECK(sim.records().size() == 10);
}

TEST_CASE("run directory outputs and postprocessing") {
    const auto dir = (std::filesystem::temp_directory_path() / "cardioem_orch_test").string();
    std::filesystem::remove_all(dir);
    SimConfig c = small_em_slab();
    c.outputs.checkpoint_stride = 20;
    Simulation sim(c);
    sim.open_outputs(dir);
    sim.run();
    for (const char* f : {"manifest.json", "probes.csv", "tension.csv", "mechanics.csv", "activations.csv",
                          "metrics.txt", "checkpoint_000020.bin"})
        CHECK(std::filesystem::exists(dir + "/" + f));
    const CsvTable p = read_csv(dir + "/probes.csv");
    CHECK(p.header == std::vector<std::string>{"t", "u_0", "ca_0", "u_1", "ca_1"});
    const Metrics m = read_metrics(dir + "/metrics.txt");
    CHECK(m.at("probe_0.activations") == "1");
    CHECK(m.count("cv_probe0_probe1") == 1);
    // Postprocessing is a pure function of the run directory.
    CHECK(postprocess_run(dir) == m);
    std::filesystem::remove_all(dir);
}

}
