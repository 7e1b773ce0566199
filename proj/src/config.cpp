#include "cardioem/config.hpp"

#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace cardioem {

using json = nlohmann::json;

const char* to_string(RunMode m) {
    switch (m) {
    case RunMode::ZeroD: return "0d";
    case RunMode::Ep: return "ep";
    case RunMode::Em: return "em";
    }
    return "ep";
}

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

const char* type_name(const json& j) { return j.type_name(); }

class Reader {
public:
    Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_, std::string("expected an object, got ") + type_name(j_));
    }

    template <class T>
    void field(const char* key, T& v) {
        if (!take(key)) return;
        read(j_.at(key), join(path_, key), v);
    }

    template <class F>
    void section(const char* key, F&& f) {
        if (!take(key)) return;
        Reader r(j_.at(key), join(path_, key));
        f(r);
        r.finish();
    }

    template <class T, class F>
    void list(const char* key, std::vector<T>& v, F&& f) {
        if (!take(key)) return;
        const json& a = j_.at(key);
        const std::string p = join(path_, key);
        if (!a.is_array()) throw ConfigError(p, std::string("expected an array, got ") + type_name(a));
        v.clear();
        for (std::size_t i = 0; i < a.size(); ++i) {
            Reader r(a[i], p + "[" + std::to_string(i) + "]");
            v.emplace_back();
            f(r, v.back());
            r.finish();
        }
    }

    void eta_regions(const char* key, std::vector<EtaRegion>& v) {
        if (!take(key)) return;
        const json& a = j_.at(key);
        const std::string p = join(path_, key);
        if (!a.is_array()) throw ConfigError(p, std::string("expected an array, got ") + type_name(a));
        v.clear();
        for (std::size_t i = 0; i < a.size(); ++i) {
            Reader r(a[i], p + "[" + std::to_string(i) + "]");
            std::string shape;
            if (!a[i].contains("shape")) throw ConfigError(r.path_ + ".shape", "missing required key");
            r.field("shape", shape);
            EtaRegion reg{Sphere{Vec3::Zero(), 0.0}, 1.0};
            if (!a[i].contains("eta")) throw ConfigError(r.path_ + ".eta", "missing required key");
            r.field("eta", reg.eta);
            if (shape == "sphere") {
                Sphere s{Vec3::Zero(), 0.0};
                r.required("center", s.center);
                r.required("radius", s.radius);
                reg.shape = s;
            } else if (shape == "ellipsoid") {
                Ellipsoid s{Vec3::Zero(), Vec3::Ones()};
                r.required("center", s.center);
                r.required("radii", s.radii);
                reg.shape = s;
            } else if (shape == "cylinder") {
                Cylinder s{Vec3::Zero(), Vec3::UnitZ(), 0.0};
                r.required("center", s.center);
                r.required("axis", s.axis);
                r.required("radius", s.radius);
                reg.shape = s;
            } else if (shape == "box") {
                Box s{Vec3::Zero(), Vec3::Zero()};
                r.required("lo", s.lo);
                r.required("hi", s.hi);
                reg.shape = s;
            } else {
                throw ConfigError(r.path_ + ".shape", "unknown shape '" + shape + "' (sphere, ellipsoid, cylinder, box)");
            }
            r.finish();
            v.push_back(reg);
        }
    }

    template <class T>
    void required(const char* key, T& v) {
        if (!j_.contains(key)) throw ConfigError(join(path_, key), "missing required key");
        field(key, v);
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError(join(path_, it.key()), "unknown key");
    }

private:
    bool take(const char* key) {
        seen_.insert(key);
        return j_.contains(key);
    }

    static void read(const json& j, const std::string& p, double& v) {
        if (!j.is_number()) throw ConfigError(p, std::string("expected a number, got ") + type_name(j));
        v = j.get<double>();
    }
    static void read(const json& j, const std::string& p, int& v) {
        if (!j.is_number_integer()) throw ConfigError(p, std::string("expected an integer, got ") + type_name(j));
        v = j.get<int>();
    }
    static void read(const json& j, const std::string& p, bool& v) {
        if (!j.is_boolean()) throw ConfigError(p, std::string("expected a boolean, got ") + type_name(j));
        v = j.get<bool>();
    }
    static void read(const json& j, const std::string& p, std::string& v) {
        if (!j.is_string()) throw ConfigError(p, std::string("expected a string, got ") + type_name(j));
        v = j.get<std::string>();
    }
    static void read(const json& j, const std::string& p, Vec3& v) {
        if (!j.is_array() || j.size() != 3) throw ConfigError(p, "expected an array of 3 numbers");
        for (int k = 0; k < 3; ++k) read(j[k], p + "[" + std::to_string(k) + "]", v[k]);
    }
    template <class T>
    static void read(const json& j, const std::string& p, std::vector<T>& v) {
        if (!j.is_array()) throw ConfigError(p, std::string("expected an array, got ") + type_name(j));
        v.assign(j.size(), T{});
        for (std::size_t k = 0; k < j.size(); ++k) read(j[k], p + "[" + std::to_string(k) + "]", v[k]);
    }
    static void read(const json& j, const std::string& p, RunMode& v) {
        std::string s;
        read(j, p, s);
        if (s == "0d") v = RunMode::ZeroD;
        else if (s == "ep") v = RunMode::Ep;
        else if (s == "em") v = RunMode::Em;
        else throw ConfigError(p, "unknown mode '" + s + "' (0d, ep, em)");
    }
    static void read(const json& j, const std::string& p, EpVariant& v) {
        std::string s;
        read(j, p, s);
        try {
            v = parse_ep_variant(s);
        } catch (const InputError& e) {
            throw ConfigError(p, e.what());
        }
    }

    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

class Writer {
public:
    json j = json::object();

    template <class T>
    void field(const char* key, const T& v) {
        j[key] = write(v);
    }
    template <class T>
    void required(const char* key, const T& v) {
        field(key, v);
    }
    template <class F>
    void section(const char* key, F&& f) {
        Writer w;
        f(w);
        j[key] = w.j;
    }
    template <class T, class F>
    void list(const char* key, std::vector<T>& v, F&& f) {
        json a = json::array();
        for (T& x : v) {
            Writer w;
            f(w, x);
            a.push_back(w.j);
        }
        j[key] = a;
    }
    void eta_regions(const char* key, std::vector<EtaRegion>& v) {
        json a = json::array();
        for (const EtaRegion& r : v) {
            json o;
            o["eta"] = r.eta;
            if (const auto* s = std::get_if<Sphere>(&r.shape)) {
                o["shape"] = "sphere";
                o["center"] = write(s->center);
                o["radius"] = s->radius;
            } else if (const auto* e = std::get_if<Ellipsoid>(&r.shape)) {
                o["shape"] = "ellipsoid";
                o["center"] = write(e->center);
                o["radii"] = write(e->radii);
            } else if (const auto* c = std::get_if<Cylinder>(&r.shape)) {
                o["shape"] = "cylinder";
                o["center"] = write(c->center);
                o["axis"] = write(c->axis);
                o["radius"] = c->radius;
            } else if (const auto* b = std::get_if<Box>(&r.shape)) {
                o["shape"] = "box";
                o["lo"] = write(b->lo);
                o["hi"] = write(b->hi);
            }
            a.push_back(o);
        }
        j[key] = a;
    }

private:
    static json write(double v) { return v; }
    static json write(int v) { return v; }
    static json write(bool v) { return v; }
    static json write(const std::string& v) { return v; }
    static json write(const Vec3& v) { return json::array({v[0], v[1], v[2]}); }
    static json write(RunMode v) { return to_string(v); }
    static json write(EpVariant v) { return to_string(v); }
    template <class T>
    static json write(const std::vector<T>& v) {
        json a = json::array();
        for (const T& x : v) a.push_back(write(x));
        return a;
    }
};

template <class IO>
void visit_stimulus(IO& io, Stimulus& s) {
    io.field("center", s.center);
    io.field("radius", s.radius);
    io.field("amplitude", s.amplitude);
    io.field("duration", s.duration);
    io.field("onset", s.onset);
}

template <class IO>
void visit(IO& io, SimConfig& c) {
    io.field("mode", c.mode);
    io.field("variant", c.variant);
    io.section("geometry", [&](IO& s) {
        GeometryConfig& g = c.geometry;
        s.field("type", g.type);
        s.field("extent", g.extent);
        s.field("h", g.h);
        s.field("h_mech", g.h_mech);
        s.field("thickness", g.thickness);
        s.field("layers", g.layers);
        s.section("lv", [&](IO& l) {
            l.field("endo_radii", g.lv.endo_radii);
            l.field("epi_radii", g.lv.epi_radii);
            l.field("z_trunc", g.lv.z_trunc);
            l.field("resolution", g.lv.resolution);
            l.field("wall_layers", g.lv.wall_layers);
        });
        s.field("ep_refine", g.ep_refine);
    });
    io.section("fibers", [&](IO& s) {
        s.field("alpha_endo", c.fibers.angles.alpha_endo);
        s.field("alpha_epi", c.fibers.angles.alpha_epi);
        s.field("beta_endo", c.fibers.angles.beta_endo);
        s.field("beta_epi", c.fibers.angles.beta_epi);
        s.field("slab_angle", c.fibers.slab_angle);
    });
    io.eta_regions("eta_regions", c.eta_regions);
    io.section("ionic", [&](IO& s) {
        s.field("initial", c.ionic.initial);
        s.field("prepace_beats", c.ionic.prepace_beats);
        s.field("prepace_period", c.ionic.prepace_period);
    });
    io.section("ep", [&](IO& s) {
        s.section("conductivity", [&](IO& k) {
            k.field("l", c.ep.sigma.l);
            k.field("t", c.ep.sigma.t);
            k.field("n", c.ep.sigma.n);
        });
        s.section("sac", [&](IO& k) {
            k.field("G_s", c.ep.sac.G_s);
            k.field("u_rev", c.ep.sac.u_rev);
        });
        s.field("dt", c.ep.dt);
        s.field("order", c.ep.order);
        s.field("solver", c.ep.solver);
        s.field("activation_threshold", c.ep.activation_threshold);
    });
    io.section("activation", [&](IO& s) {
        ActivationParams& p = c.activation.params;
        s.field("enabled", c.activation.enabled);
        s.field("mu", p.mu);
        s.field("gamma", p.gamma);
        s.field("Q", p.Q);
        s.field("kd_bar", p.kd_bar);
        s.field("alpha_kd", p.alpha_kd);
        s.field("k_off", p.k_off);
        s.field("k_basic", p.k_basic);
        s.field("mu_fp0", p.mu_fp0);
        s.field("mu_fp1", p.mu_fp1);
        s.field("r0", p.r0);
        s.field("alpha", p.alpha);
        s.field("a_xb", p.a_xb);
        s.field("sl0", p.sl0);
        s.field("hill", p.hill);
        s.field("k_att", p.k_att);
        s.field("fv", p.fv);
        s.field("eps_xb", p.eps_xb);
        s.field("sl_min", p.sl_min);
        s.field("sl_max", p.sl_max);
        s.field("theta", p.theta);
    });
    io.section("mechanics", [&](IO& s) {
        MechOptions& o = c.mechanics.opt;
        s.field("dt", c.mechanics.dt);
        s.field("dynamic", o.dynamic);
        s.field("base_traction", o.base_traction);
        s.section("material", [&](IO& k) {
            k.field("kappa", o.material.kappa);
            k.field("a", o.material.a);
            k.field("b_ff", o.material.b_ff);
            k.field("b_ss", o.material.b_ss);
            k.field("b_nn", o.material.b_nn);
            k.field("b_fs", o.material.b_fs);
            k.field("b_fn", o.material.b_fn);
            k.field("b_sn", o.material.b_sn);
            k.field("rho", o.material.rho);
        });
        s.section("epicardium", [&](IO& k) {
            k.field("K_perp", o.epi.K_perp);
            k.field("K_par", o.epi.K_par);
            k.field("C_perp", o.epi.C_perp);
            k.field("C_par", o.epi.C_par);
        });
        s.section("newton", [&](IO& k) {
            k.field("tol_abs", o.newton.tol_abs);
            k.field("tol_rel", o.newton.tol_rel);
            k.field("max_it", o.newton.max_it);
            k.field("max_halvings", o.newton.max_halvings);
        });
        s.field("support_faces", c.mechanics.support_faces);
    });
    io.section("circulation", [&](IO& s) {
        CircParams& p = c.circulation;
        s.field("R_AR_SYS", p.R_AR_SYS);
        s.field("R_AR_PUL", p.R_AR_PUL);
        s.field("R_VEN_SYS", p.R_VEN_SYS);
        s.field("R_VEN_PUL", p.R_VEN_PUL);
        s.field("C_AR_SYS", p.C_AR_SYS);
        s.field("C_AR_PUL", p.C_AR_PUL);
        s.field("C_VEN_SYS", p.C_VEN_SYS);
        s.field("C_VEN_PUL", p.C_VEN_PUL);
        s.field("L_AR_SYS", p.L_AR_SYS);
        s.field("L_AR_PUL", p.L_AR_PUL);
        s.field("L_VEN_SYS", p.L_VEN_SYS);
        s.field("L_VEN_PUL", p.L_VEN_PUL);
        auto chamber = [&](const char* key, ChamberParams& ch) {
            s.section(key, [&](IO& k) {
                k.field("E_pass", ch.E_pass);
                k.field("E_act", ch.E_act);
                k.field("V0", ch.V0);
            });
        };
        chamber("LA", p.LA);
        chamber("RA", p.RA);
        chamber("RV", p.RV);
        chamber("LV", p.LV);
        s.field("R_min", p.R_min);
        s.field("R_max", p.R_max);
        s.field("period", p.period);
        s.field("ventricle_systole", p.ventricle_systole);
        s.field("atrium_systole", p.atrium_systole);
        s.field("atrium_lead", p.atrium_lead);
        s.section("initial", [&](IO& k) {
            for (int i = 0; i < kCircSize; ++i) k.field(circ_state_names()[i].c_str(), c.circ_initial[i]);
        });
    });
    io.section("coupling", [&](IO& s) {
        s.field("tol", c.coupling.multiplier.tol);
        s.field("max_it", c.coupling.multiplier.max_it);
        s.field("probe", c.coupling.multiplier.probe);
    });
    io.section("refconfig", [&](IO& s) {
        s.field("unload", c.refconfig.unload);
        s.field("p_loaded", c.refconfig.p_loaded);
        s.field("omega", c.refconfig.omega);
        s.field("v_ed", c.refconfig.v_ed);
    });
    io.section("protocol", [&](IO& s) {
        s.field("t_end", c.protocol.t_end);
        s.list("stimuli", c.protocol.stimuli, [](IO& k, Stimulus& st) { visit_stimulus(k, st); });
        s.section("pacing", [&](IO& k) {
            visit_stimulus(k, c.protocol.pacing.stimulus);
            k.field("period", c.protocol.pacing.period);
            k.field("count", c.protocol.pacing.count);
        });
    });
    io.section("outputs", [&](IO& s) {
        s.field("probes", c.outputs.probes);
        s.field("probe_interval", c.outputs.probe_interval);
        s.field("vtk_stride", c.outputs.vtk_stride);
        s.field("checkpoint_stride", c.outputs.checkpoint_stride);
    });
}

void check(bool ok, const char* key, const std::string& what) {
    if (!ok) throw ConfigError(key, what);
}

}  // namespace

void validate(const SimConfig& c) {
    const GeometryConfig& g = c.geometry;
    check(g.type == "slab" || g.type == "lv", "geometry.type", "must be 'slab' or 'lv'");
    if (g.type == "slab") {
        check(g.extent.size() == 2 || g.extent.size() == 3, "geometry.extent", "needs 2 or 3 entries");
        for (double e : g.extent) check(e > 0.0, "geometry.extent", "entries must be positive");
    }
    check(g.h > 0.0, "geometry.h", "must be positive");
    check(g.h_mech > 0.0, "geometry.h_mech", "must be positive");
    check(g.thickness > 0.0, "geometry.thickness", "must be positive");
    check(g.layers >= 1, "geometry.layers", "must be at least 1");
    check(g.lv.resolution >= 2 && g.lv.resolution % 2 == 0, "geometry.lv.resolution", "must be even and >= 2");
    check(g.lv.wall_layers >= 2, "geometry.lv.wall_layers", "must be at least 2");
    check(g.ep_refine >= 1, "geometry.ep_refine", "must be at least 1");
    check(c.ionic.initial == "quiescent" || c.ionic.initial == "published" || c.ionic.initial == "paced",
          "ionic.initial", "must be quiescent, published or paced");
    check(c.ionic.prepace_beats >= 0, "ionic.prepace_beats", "must be nonnegative");
    check(c.ionic.prepace_period > 0.0, "ionic.prepace_period", "must be positive");
    check(c.ep.dt > 0.0, "ep.dt", "must be positive");
    check(c.ep.order >= 1 && c.ep.order <= 3, "ep.order", "must be 1, 2 or 3");
    check(c.ep.solver == "direct" || c.ep.solver == "cg" || c.ep.solver == "bicgstab", "ep.solver",
          "must be direct, cg or bicgstab");
    check(c.ep.sigma.l > 0.0 && c.ep.sigma.t > 0.0 && c.ep.sigma.n > 0.0, "ep.conductivity", "must be positive");
    check(c.ep.sac.G_s >= 0.0, "ep.sac.G_s", "must be nonnegative");
    check(c.mechanics.dt > 0.0, "mechanics.dt", "must be positive");
    const double ratio = c.mechanics.dt / c.ep.dt;
    check(std::abs(ratio - std::round(ratio)) < 1e-9 && std::round(ratio) >= 1.0, "mechanics.dt",
          "must be an integer multiple of ep.dt");
    for (int f : c.mechanics.support_faces) check(f >= 0 && f < 6, "mechanics.support_faces", "face tags lie in 0..5");
    try {
        validate(c.activation.params);
        validate(c.mechanics.opt.material);
        validate(c.mechanics.opt.epi);
    } catch (const InputError& e) {
        throw ConfigError("", e.what());
    }
    check(c.coupling.multiplier.tol > 0.0, "coupling.tol", "must be positive");
    check(c.coupling.multiplier.max_it >= 1, "coupling.max_it", "must be at least 1");
    check(c.refconfig.omega > 0.0 && c.refconfig.omega <= 1.0, "refconfig.omega", "must lie in (0, 1]");
    check(c.refconfig.p_loaded >= 0.0, "refconfig.p_loaded", "must be nonnegative");
    check(c.refconfig.v_ed >= 0.0, "refconfig.v_ed", "must be nonnegative");
    check(c.protocol.t_end > 0.0, "protocol.t_end", "must be positive");
    check(c.protocol.pacing.count >= 0, "protocol.pacing.count", "must be nonnegative");
    check(c.protocol.pacing.period > 0.0, "protocol.pacing.period", "must be positive");
    check(c.outputs.probe_interval > 0.0, "outputs.probe_interval", "must be positive");
    check(c.outputs.vtk_stride >= 0, "outputs.vtk_stride", "must be nonnegative");
    check(c.outputs.checkpoint_stride >= 0, "outputs.checkpoint_stride", "must be nonnegative");
    try {
        validate_stimuli(expanded_stimuli(c));
    } catch (const InputError& e) {
        throw ConfigError("protocol", e.what());
    }
    if (c.mode == RunMode::Em && g.type == "slab")
        check(!c.mechanics.support_faces.empty(), "mechanics.support_faces", "a mechanics slab needs at least one supported face");
}

SimConfig parse_config(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("", std::string("malformed JSON: ") + e.what());
    }
    SimConfig c;
    Reader r(j, "");
    visit(r, c);
    r.finish();
    validate(c);
    return c;
}

SimConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("", "cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string dump_config(const SimConfig& c) {
    SimConfig copy = c;
    Writer w;
    visit(w, copy);
    return w.j.dump(2);
}

StimulusProtocol expanded_stimuli(const SimConfig& c) {
    StimulusProtocol s = c.protocol.stimuli;
    for (int k = 0; k < c.protocol.pacing.count; ++k) {
        Stimulus x = c.protocol.pacing.stimulus;
        x.onset += k * c.protocol.pacing.period;
        s.push_back(x);
    }
    return s;
}

std::string fnv1a_hex(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace cardioem
