#include "cardioem/fem.hpp"
#include "cardioem/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

namespace cardioem {

const char* to_string(FacetLabel l) {
    switch (l) {
        case FacetLabel::Neumann: return "neumann";
        case FacetLabel::Epi: return "epi";
        case FacetLabel::Endo: return "endo";
        case FacetLabel::Base: return "base";
    }
    return "?";
}

bool Mesh::has_label(FacetLabel l) const {
    return std::any_of(facets.begin(), facets.end(), [l](const Facet& f) { return f.label == l; });
}

namespace {

// Local faces of the lexicographic cell: fixed axis and side, nodes in (p,q) order with p < q.
struct LocalFace {
    int axis, side;
    std::array<int, 4> nodes;
};

std::vector<LocalFace> local_faces(int dim) {
    std::vector<LocalFace> out;
    for (int axis = 0; axis < dim; ++axis)
        for (int side = 0; side < 2; ++side) {
            LocalFace f{axis, side, {-1, -1, -1, -1}};
            int k = 0;
            const int nn = 1 << dim;
            for (int a = 0; a < nn; ++a)
                if (((a >> axis) & 1) == side) f.nodes[k++] = a;
            out.push_back(f);
        }
    return out;
}

Vec3 cell_centroid(const Mesh& m, int c) {
    Vec3 x = Vec3::Zero();
    for (int a = 0; a < m.nodes_per_cell(); ++a) x += m.x[m.cells[c][a]];
    return x / m.nodes_per_cell();
}

// Boundary facets = faces owned by exactly one cell, oriented outward.
std::vector<Facet> boundary_facets(const Mesh& m) {
    const auto faces = local_faces(m.dim);
    const int fn = m.facet_nodes();
    std::map<std::array<int, 4>, std::pair<int, int>> seen;  // sorted key -> (count, cell*8+face)
    for (int c = 0; c < m.n_cells(); ++c)
        for (int f = 0; f < static_cast<int>(faces.size()); ++f) {
            std::array<int, 4> key{-1, -1, -1, -1};
            for (int k = 0; k < fn; ++k) key[k] = m.cells[c][faces[f].nodes[k]];
            std::sort(key.begin(), key.begin() + fn);
            auto& e = seen[key];
            e.first += 1;
            e.second = c * 8 + f;
        }
    std::vector<std::pair<int, Facet>> out;
    for (const auto& [key, e] : seen) {
        if (e.first != 1) continue;
        const int c = e.second / 8, f = e.second % 8;
        Facet F;
        F.cell = c;
        for (int k = 0; k < fn; ++k) F.v[k] = m.cells[c][faces[f].nodes[k]];
        Vec3 fc = Vec3::Zero();
        for (int k = 0; k < fn; ++k) fc += m.x[F.v[k]];
        fc /= fn;
        const Vec3 out_dir = fc - cell_centroid(m, c);
        Vec3 n;
        if (m.dim == 3) {
            const Vec3 t1 = (m.x[F.v[1]] - m.x[F.v[0]]) + (m.x[F.v[3]] - m.x[F.v[2]]);
            const Vec3 t2 = (m.x[F.v[2]] - m.x[F.v[0]]) + (m.x[F.v[3]] - m.x[F.v[1]]);
            n = t1.cross(t2);
            if (n.dot(out_dir) < 0.0) std::swap(F.v[1], F.v[2]);
        } else {
            const Vec3 t = m.x[F.v[1]] - m.x[F.v[0]];
            n = Vec3(t[1], -t[0], 0.0);
            if (n.dot(out_dir) < 0.0) std::swap(F.v[0], F.v[1]);
        }
        out.emplace_back(c * 8 + f, F);
    }
    // Deterministic order: by owning cell and local face.
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<Facet> facets;
    facets.reserve(out.size());
    for (auto& p : out) facets.push_back(p.second);
    return facets;
}

double mean_edge(const Mesh& m) {
    double sum = 0.0;
    long n = 0;
    for (const auto& c : m.cells)
        for (int a = 0; a < m.nodes_per_cell(); ++a)
            for (int axis = 0; axis < m.dim; ++axis)
                if (((a >> axis) & 1) == 0) {
                    sum += (m.x[c[a + (1 << axis)]] - m.x[c[a]]).norm();
                    ++n;
                }
    return n ? sum / n : 0.0;
}

}  // namespace

void build_slab_facets(Mesh& m, const Vec3& lo, const Vec3& hi) {
    m.facets = boundary_facets(m);
    const double tol = 1e-9 * (hi - lo).norm();
    for (Facet& f : m.facets) {
        f.label = FacetLabel::Neumann;
        for (int axis = 0; axis < m.dim && f.tag < 0; ++axis)
            for (int side = 0; side < 2; ++side) {
                const double plane = side ? hi[axis] : lo[axis];
                bool on = true;
                for (int k = 0; k < m.facet_nodes(); ++k) on = on && std::abs(m.x[f.v[k]][axis] - plane) < tol;
                if (on) {
                    f.tag = 2 * axis + side;
                    break;
                }
            }
    }
}

void relabel_tagged_facets(Mesh& m, const std::vector<int>& tags, FacetLabel label) {
    for (Facet& f : m.facets)
        if (std::find(tags.begin(), tags.end(), f.tag) != tags.end()) f.label = label;
}

Mesh generate_slab_mesh(const std::vector<double>& extent, double h) {
    const int dim = static_cast<int>(extent.size());
    if (dim != 2 && dim != 3) throw InputError("slab extent must have 2 or 3 entries");
    if (!(h > 0.0)) throw InputError("slab resolution must be positive");
    int n[3] = {1, 1, 0};
    for (int k = 0; k < dim; ++k) {
        if (!(extent[k] > 0.0)) throw InputError("slab extents must be positive");
        n[k] = std::max(1, static_cast<int>(std::lround(extent[k] / h)));
    }
    Mesh m;
    m.dim = dim;
    const int nz = dim == 3 ? n[2] : 0;
    const int vx = n[0] + 1, vy = n[1] + 1;
    for (int k = 0; k <= nz; ++k)
        for (int j = 0; j <= n[1]; ++j)
            for (int i = 0; i <= n[0]; ++i)
                m.x.emplace_back(extent[0] * i / n[0], extent[1] * j / n[1], dim == 3 ? extent[2] * k / n[2] : 0.0);
    auto vid = [&](int i, int j, int k) { return (k * vy + j) * vx + i; };
    for (int k = 0; k < std::max(nz, 1); ++k)
        for (int j = 0; j < n[1]; ++j)
            for (int i = 0; i < n[0]; ++i) {
                std::array<int, 8> c{};
                for (int a = 0; a < (1 << dim); ++a) c[a] = vid(i + (a & 1), j + ((a >> 1) & 1), dim == 3 ? k + ((a >> 2) & 1) : 0);
                if (dim == 2)
                    for (int a = 4; a < 8; ++a) c[a] = -1;
                m.cells.push_back(c);
            }
    build_slab_facets(m, Vec3::Zero(), Vec3(extent[0], extent[1], dim == 3 ? extent[2] : 0.0));
    m.h_mean = mean_edge(m);
    return m;
}

Mesh generate_thin_slab_mesh(double lx, double ly, double lz, double h, int nz) {
    if (!(lx > 0 && ly > 0 && lz > 0 && h > 0 && nz >= 1)) throw InputError("invalid thin slab descriptor");
    Mesh m = generate_slab_mesh({lx, ly, lz}, h);
    // Re-grid z with exactly nz layers, centered on z = 0.
    const int nx = std::max(1, static_cast<int>(std::lround(lx / h)));
    const int ny = std::max(1, static_cast<int>(std::lround(ly / h)));
    Mesh s;
    s.dim = 3;
    for (int k = 0; k <= nz; ++k)
        for (int j = 0; j <= ny; ++j)
            for (int i = 0; i <= nx; ++i) s.x.emplace_back(lx * i / nx, ly * j / ny, -0.5 * lz + lz * k / nz);
    auto vid = [&](int i, int j, int k) { return (k * (ny + 1) + j) * (nx + 1) + i; };
    for (int k = 0; k < nz; ++k)
        for (int j = 0; j < ny; ++j)
            for (int i = 0; i < nx; ++i) {
                std::array<int, 8> c{};
                for (int a = 0; a < 8; ++a) c[a] = vid(i + (a & 1), j + ((a >> 1) & 1), k + ((a >> 2) & 1));
                s.cells.push_back(c);
            }
    build_slab_facets(s, Vec3(0, 0, -0.5 * lz), Vec3(lx, ly, 0.5 * lz));
    s.h_mean = mean_edge(s);
    return s;
}

Mesh generate_lv_mesh(const LvGeometry& g) {
    for (int k = 0; k < 3; ++k) {
        if (!(g.endo_radii[k] > 0.0) || !(g.epi_radii[k] > 0.0)) throw InputError("LV radii must be positive");
        if (!(g.epi_radii[k] > g.endo_radii[k])) throw InputError("LV wall thickness must be positive");
    }
    if (g.wall_layers < 2) throw InputError("LV mesh needs at least 2 elements through the wall");
    if (g.resolution < 2 || g.resolution % 2 != 0) throw InputError("LV resolution must be an even number >= 2");
    if (!(g.z_trunc > -g.endo_radii[2] && g.z_trunc < g.endo_radii[2]))
        throw InputError("truncation height must cut the endocardial ellipsoid");

    const int n = g.resolution;
    // Lower half of a cube [-n, n]^3 in integer units: bottom face z=-n, side faces z in [-n, 0].
    std::map<std::array<int, 3>, int> index;
    std::vector<std::array<int, 3>> pts;
    auto point = [&](std::array<int, 3> p) {
        auto it = index.find(p);
        if (it != index.end()) return it->second;
        const int id = static_cast<int>(pts.size());
        index.emplace(p, id);
        pts.push_back(p);
        return id;
    };
    std::vector<std::array<int, 4>> quads;  // (00,10,01,11)
    auto add_face = [&](auto map, int nu, int nv) {
        for (int j = 0; j < nv; ++j)
            for (int i = 0; i < nu; ++i)
                quads.push_back({point(map(i, j)), point(map(i + 1, j)), point(map(i, j + 1)), point(map(i + 1, j + 1))});
    };
    const int s2 = 2;  // step in integer units: cube edge [-n, n] split into n cells
    add_face([&](int i, int j) { return std::array<int, 3>{-n + s2 * i, -n + s2 * j, -n}; }, n, n);
    add_face([&](int i, int j) { return std::array<int, 3>{n, -n + s2 * i, -n + s2 * j}; }, n, n / 2);
    add_face([&](int i, int j) { return std::array<int, 3>{-n, -n + s2 * i, -n + s2 * j}; }, n, n / 2);
    add_face([&](int i, int j) { return std::array<int, 3>{-n + s2 * i, n, -n + s2 * j}; }, n, n / 2);
    add_face([&](int i, int j) { return std::array<int, 3>{-n + s2 * i, -n, -n + s2 * j}; }, n, n / 2);

    // Equiangular projection to the unit sphere, then onto each truncated ellipsoid with a
    // polar remap that keeps the base on the plane z = z_trunc.
    const int ns = static_cast<int>(pts.size());
    std::vector<double> theta(ns), lambda(ns);
    for (int i = 0; i < ns; ++i) {
        Vec3 p;
        for (int k = 0; k < 3; ++k) p[k] = std::tan(0.25 * std::numbers::pi * pts[i][k] / n);
        p.normalize();
        theta[i] = std::acos(std::clamp(-p[2], -1.0, 1.0));
        lambda[i] = std::atan2(p[1], p[0]);
        if (pts[i][2] == 0) theta[i] = 0.5 * std::numbers::pi;
    }
    auto surface = [&](const Vec3& r, int i) {
        const double psi_max = std::acos(-g.z_trunc / r[2]);
        const double psi = theta[i] * psi_max / (0.5 * std::numbers::pi);
        Vec3 x(r[0] * std::sin(psi) * std::cos(lambda[i]), r[1] * std::sin(psi) * std::sin(lambda[i]), -r[2] * std::cos(psi));
        if (pts[i][2] == 0) x[2] = g.z_trunc;
        return x;
    };
    const int L = g.wall_layers;
    Mesh m;
    m.dim = 3;
    m.x.resize(static_cast<std::size_t>(ns) * (L + 1));
    for (int i = 0; i < ns; ++i) {
        const Vec3 a = surface(g.endo_radii, i), b = surface(g.epi_radii, i);
        for (int l = 0; l <= L; ++l) m.x[static_cast<std::size_t>(l) * ns + i] = a + (b - a) * (static_cast<double>(l) / L);
    }
    for (auto q : quads) {
        // Orient so that (e_s x e_t) points from endo to epi.
        const Vec3 t1 = m.x[q[1]] - m.x[q[0]] + m.x[q[3]] - m.x[q[2]];
        const Vec3 t2 = m.x[q[2]] - m.x[q[0]] + m.x[q[3]] - m.x[q[1]];
        const Vec3 c = 0.25 * (m.x[q[0]] + m.x[q[1]] + m.x[q[2]] + m.x[q[3]]);
        const Vec3 c_out = 0.25 * (m.x[q[0] + L * ns] + m.x[q[1] + L * ns] + m.x[q[2] + L * ns] + m.x[q[3] + L * ns]);
        if (t1.cross(t2).dot(c_out - c) < 0.0) std::swap(q[1], q[2]);
        for (int l = 0; l < L; ++l) {
            std::array<int, 8> cell{};
            for (int a = 0; a < 4; ++a) {
                cell[a] = q[a] + l * ns;
                cell[a + 4] = q[a] + (l + 1) * ns;
            }
            m.cells.push_back(cell);
        }
    }
    m.facets = boundary_facets(m);
    for (Facet& f : m.facets) {
        int lo = L + 1, hi = -1;
        for (int k = 0; k < 4; ++k) {
            lo = std::min(lo, f.v[k] / ns);
            hi = std::max(hi, f.v[k] / ns);
        }
        if (hi == 0) f.label = FacetLabel::Endo;
        else if (lo == L) f.label = FacetLabel::Epi;
        else f.label = FacetLabel::Base;
    }
    m.h_mean = mean_edge(m);
    return m;
}

double analytic_cavity_volume(const LvGeometry& g) {
    const double a = g.endo_radii[0], b = g.endo_radii[1], c = g.endo_radii[2], z = g.z_trunc;
    return std::numbers::pi * a * b * ((z + c) - (z * z * z + c * c * c) / (3.0 * c * c));
}

std::vector<Vec3> displaced_vertices(const Mesh& m, const Vector* d) {
    std::vector<Vec3> x = m.x;
    if (d != nullptr)
        for (int v = 0; v < m.n_vertices(); ++v) x[v] += d->segment<3>(3 * v);
    return x;
}

Mat3 fiber_triad(double phi, const Vec3& grad_phi, const FiberAngles& an) {
    const double deg = std::numbers::pi / 180.0;
    const double alpha = (an.alpha_endo + (an.alpha_epi - an.alpha_endo) * phi) * deg;
    const double beta = (an.beta_endo + (an.beta_epi - an.beta_endo) * phi) * deg;
    const Vec3 t = grad_phi.normalized();
    Vec3 k = Vec3::UnitZ();
    Vec3 c = k.cross(t);
    if (c.norm() < 1e-3) c = Vec3::UnitX().cross(t);  // apex: axis parallel to the transmural direction
    c.normalize();
    const Vec3 l = t.cross(c);
    const Vec3 f = std::cos(alpha) * c + std::sin(alpha) * l;
    const Vec3 n0 = f.cross(t);
    // Sheet angle: rotate (t, n0) about f.
    const Vec3 s = std::cos(beta) * t + std::sin(beta) * n0;
    const Vec3 n = f.cross(s);
    Mat3 R;
    R.col(0) = f;
    R.col(1) = s;
    R.col(2) = n;
    return R;
}

double helix_angle(const Mat3& R, const Vec3& grad_phi) {
    const Vec3 t = grad_phi.normalized();
    Vec3 c = Vec3::UnitZ().cross(t);
    if (c.norm() < 1e-3) c = Vec3::UnitX().cross(t);
    c.normalize();
    const Vec3 l = t.cross(c);
    const Vec3 f = R.col(0);
    return std::atan2(f.dot(l), f.dot(c)) * 180.0 / std::numbers::pi;
}

Vector transmural_coordinate(const Mesh& m) {
    if (!m.has_label(FacetLabel::Endo) || !m.has_label(FacetLabel::Epi))
        throw InputError("fiber generation needs labeled endo and epi boundaries");
    const FeCache fe(m);
    std::vector<Mat3> I(static_cast<std::size_t>(m.n_cells()) * fe.nq(), Mat3::Identity());
    AssembledOperator K = assemble_diffusion(m, fe, I);
    const int n = m.n_vertices();
    std::vector<int> fixed(n, -1);
    for (const Facet& f : m.facets) {
        if (f.label != FacetLabel::Endo && f.label != FacetLabel::Epi) continue;
        for (int k = 0; k < m.facet_nodes(); ++k) fixed[f.v[k]] = f.label == FacetLabel::Epi ? 1 : 0;
    }
    Vector phi = Vector::Zero(n), b = Vector::Zero(n);
    for (int v = 0; v < n; ++v)
        if (fixed[v] >= 0) phi[v] = fixed[v];
    SpMat& A = K.matrix();
    b = -(A * phi);
    // Eliminate Dirichlet rows/columns symmetrically.
    for (int r = 0; r < n; ++r)
        for (SpMat::InnerIterator it(A, r); it; ++it) {
            if (fixed[r] >= 0 || fixed[it.col()] >= 0) it.valueRef() = (r == it.col()) ? 1.0 : 0.0;
        }
    for (int v = 0; v < n; ++v)
        if (fixed[v] >= 0) b[v] = phi[v];
    Vector x = phi;
    solve_linear(A, b, x, 1e-12, 10000);
    return x;
}

FiberField generate_fibers(const Mesh& m, const FiberAngles& an) {
    for (double a : {an.alpha_endo, an.alpha_epi, an.beta_endo, an.beta_epi})
        if (!(a > -90.0 && a < 90.0)) throw InputError("fiber angles must lie in (-90, 90) degrees");
    const Vector phi = transmural_coordinate(m);
    const FeCache fe(m);
    FiberField ff;
    const int nq = fe.nq(), nn = fe.nn();
    ff.qp.resize(static_cast<std::size_t>(m.n_cells()) * nq);
    ff.phi_qp.resize(ff.qp.size());
    std::vector<Vec3> vgrad(m.n_vertices(), Vec3::Zero());
    std::vector<double> vw(m.n_vertices(), 0.0);
    for (int c = 0; c < m.n_cells(); ++c)
        for (int q = 0; q < nq; ++q) {
            double p = 0.0;
            Vec3 gp = Vec3::Zero();
            for (int a = 0; a < nn; ++a) {
                p += fe.N(q, a) * phi[m.cells[c][a]];
                gp += phi[m.cells[c][a]] * fe.grad(c, q, a);
            }
            const std::size_t cq = static_cast<std::size_t>(c) * nq + q;
            ff.qp[cq] = fiber_triad(p, gp, an);
            ff.phi_qp[cq] = p;
            for (int a = 0; a < nn; ++a) {
                vgrad[m.cells[c][a]] += fe.jxw(c, q) * fe.N(q, a) * gp;
                vw[m.cells[c][a]] += fe.jxw(c, q) * fe.N(q, a);
            }
        }
    ff.vertex.resize(m.n_vertices());
    ff.phi_vertex.resize(m.n_vertices());
    for (int v = 0; v < m.n_vertices(); ++v) {
        ff.phi_vertex[v] = phi[v];
        ff.vertex[v] = fiber_triad(phi[v], vgrad[v] / vw[v], an);
    }
    return ff;
}

FiberField uniform_fibers(const Mesh& m, double angle_deg) {
    const double a = angle_deg * std::numbers::pi / 180.0;
    Mat3 R;
    R.col(0) = Vec3(std::cos(a), std::sin(a), 0.0);
    R.col(1) = Vec3(-std::sin(a), std::cos(a), 0.0);
    R.col(2) = Vec3::UnitZ();
    FiberField ff;
    ff.qp.assign(static_cast<std::size_t>(m.n_cells()) * cell_quadrature(m.dim).size(), R);
    ff.vertex.assign(m.n_vertices(), R);
    return ff;
}

bool contains(const Shape& s, const Vec3& p) {
    return std::visit(
        [&](const auto& sh) -> bool {
            using T = std::decay_t<decltype(sh)>;
            if constexpr (std::is_same_v<T, Sphere>) {
                return (p - sh.center).squaredNorm() <= sh.radius * sh.radius;
            } else if constexpr (std::is_same_v<T, Ellipsoid>) {
                return (p - sh.center).cwiseQuotient(sh.radii).squaredNorm() <= 1.0;
            } else if constexpr (std::is_same_v<T, Cylinder>) {
                const Vec3 a = sh.axis.normalized();
                const Vec3 r = p - sh.center;
                return (r - r.dot(a) * a).squaredNorm() <= sh.radius * sh.radius;
            } else {
                return (p.array() >= sh.lo.array()).all() && (p.array() <= sh.hi.array()).all();
            }
        },
        s);
}

std::vector<double> assign_eta(const Mesh& m, const std::vector<EtaRegion>& regions) {
    for (const auto& r : regions)
        if (!(r.eta >= 0.0 && r.eta <= 1.0)) throw InputError("eta values must lie in [0, 1]");
    std::vector<double> eta(m.n_vertices(), 1.0);
    for (int v = 0; v < m.n_vertices(); ++v)
        for (const auto& r : regions)
            if (contains(r.shape, m.x[v])) eta[v] = std::min(eta[v], r.eta);
    return eta;
}

void write_vtk(const std::string& path, const Mesh& m, const std::vector<VtkField>& point_data, const Vector* d) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open " + path + " for writing");
    os.precision(10);
    os << "# vtk DataFile Version 3.0\ncardioem\nASCII\nDATASET UNSTRUCTURED_GRID\n";
    os << "POINTS " << m.n_vertices() << " double\n";
    const auto x = displaced_vertices(m, d);
    for (const Vec3& p : x) os << p[0] << ' ' << p[1] << ' ' << p[2] << '\n';
    const int nn = m.nodes_per_cell();
    os << "CELLS " << m.n_cells() << ' ' << m.n_cells() * (nn + 1) << '\n';
    // Lexicographic to VTK ordering.
    const int order3[8] = {0, 1, 3, 2, 4, 5, 7, 6};
    for (const auto& c : m.cells) {
        os << nn;
        for (int a = 0; a < nn; ++a) os << ' ' << c[order3[a]];
        os << '\n';
    }
    os << "CELL_TYPES " << m.n_cells() << '\n';
    for (int c = 0; c < m.n_cells(); ++c) os << (m.dim == 3 ? 12 : 9) << '\n';
    if (!point_data.empty()) {
        os << "POINT_DATA " << m.n_vertices() << '\n';
        for (const VtkField& f : point_data) {
            if (f.scalars) {
                os << "SCALARS " << f.name << " double 1\nLOOKUP_TABLE default\n";
                for (double v : *f.scalars) os << v << '\n';
            } else if (f.vectors) {
                os << "VECTORS " << f.name << " double\n";
                for (const Vec3& v : *f.vectors) os << v[0] << ' ' << v[1] << ' ' << v[2] << '\n';
            }
        }
    }
}

}  // namespace cardioem
