#pragma once

#include "cardioem/common.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

namespace cardioem {

enum class FacetLabel : std::uint8_t { Neumann = 0, Epi, Endo, Base };

const char* to_string(FacetLabel l);

// Boundary facet. Quads (3D) list vertices as (00, 10, 01, 11) in the facet parameters so that
// x_,1 x x_,2 points out of the owning cell. Edges (2D) are ordered so that the tangent rotated
// clockwise points outward.
struct Facet {
    std::array<int, 4> v{-1, -1, -1, -1};
    int cell = -1;
    FacetLabel label = FacetLabel::Neumann;
    int tag = -1;  // slab face index (xmin, xmax, ymin, ymax, zmin, zmax); -1 otherwise
};

// Q1 mesh. Cell vertices use lexicographic local numbering a + 2b (+ 4c).
struct Mesh {
    int dim = 3;
    std::vector<Vec3> x;
    std::vector<std::array<int, 8>> cells;
    std::vector<Facet> facets;
    double h_mean = 0.0;

    int nodes_per_cell() const { return dim == 3 ? 8 : 4; }
    int facet_nodes() const { return dim == 3 ? 4 : 2; }
    int n_vertices() const { return static_cast<int>(x.size()); }
    int n_cells() const { return static_cast<int>(cells.size()); }
    bool has_label(FacetLabel l) const;
};

struct LvGeometry {
    Vec3 endo_radii{0.025, 0.025, 0.060};  // m
    Vec3 epi_radii{0.035, 0.035, 0.070};
    double z_trunc = 0.0;                  // base plane height (m)
    int resolution = 8;                    // cells along one edge of the unfolded cube face (even)
    int wall_layers = 2;
};

Mesh generate_lv_mesh(const LvGeometry& g);
// Structured slab with corner at the origin; extent.size() selects 2D or 3D.
Mesh generate_slab_mesh(const std::vector<double>& extent, double h);
// 3D slab centered in z (spans [-lz/2, lz/2]) so a 2D slab sits on its mid-plane.
Mesh generate_thin_slab_mesh(double lx, double ly, double lz, double h, int nz);
// Rebuild facets from cell connectivity, labeling slab faces by `tag`.
void build_slab_facets(Mesh& m, const Vec3& lo, const Vec3& hi);
void relabel_tagged_facets(Mesh& m, const std::vector<int>& tags, FacetLabel label);

double analytic_cavity_volume(const LvGeometry& g);

// Vertices with a copy of the mesh moved by a displacement field (3 comps per vertex).
std::vector<Vec3> displaced_vertices(const Mesh& m, const Vector* d);

// Fiber/sheet/normal triads (columns of the matrix) per quadrature point and per vertex.
struct FiberAngles {
    double alpha_endo = 60.0, alpha_epi = -60.0;  // degrees
    double beta_endo = -20.0, beta_epi = 20.0;
};

struct FiberField {
    std::vector<Mat3> qp;        // n_cells * n_qp
    std::vector<Mat3> vertex;
    std::vector<double> phi_qp;  // transmural coordinate (LV only)
    std::vector<double> phi_vertex;
};

inline Vec3 fiber(const Mat3& R) { return R.col(0); }

// Triad from transmural coordinate and its gradient.
Mat3 fiber_triad(double phi, const Vec3& grad_phi, const FiberAngles& a);
// Helix angle (degrees) of a fiber against the local circumferential direction.
double helix_angle(const Mat3& triad, const Vec3& grad_phi);

FiberField generate_fibers(const Mesh& m, const FiberAngles& a);
FiberField uniform_fibers(const Mesh& m, double angle_deg);
// Nodal solution of the transmural Laplace problem (endo 0, epi 1).
Vector transmural_coordinate(const Mesh& m);

struct Sphere { Vec3 center; double radius; };
struct Ellipsoid { Vec3 center; Vec3 radii; };
// Infinite cylinder through `center` along `axis` (transmural when the axis crosses the wall).
struct Cylinder { Vec3 center; Vec3 axis; double radius; };
struct Box { Vec3 lo; Vec3 hi; };
using Shape = std::variant<Sphere, Ellipsoid, Cylinder, Box>;

struct EtaRegion {
    Shape shape;
    double eta;
};

bool contains(const Shape& s, const Vec3& p);
std::vector<double> assign_eta(const Mesh& m, const std::vector<EtaRegion>& regions);

// Legacy ASCII VTK unstructured grid with optional point data.
struct VtkField {
    std::string name;
    const std::vector<double>* scalars = nullptr;
    const std::vector<Vec3>* vectors = nullptr;
};
void write_vtk(const std::string& path, const Mesh& m, const std::vector<VtkField>& point_data,
               const Vector* displacement = nullptr);

}  // namespace cardioem
