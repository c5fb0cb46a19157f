#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cartoflow/errors.hpp"

namespace cartoflow {

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

inline Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
inline Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
inline Point2 operator*(Point2 a, double s) { return {a.x * s, a.y * s}; }
inline double dot(Point2 a, Point2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Point2 a, Point2 b) { return a.x * b.y - a.y * b.x; }
double dist(Point2 a, Point2 b);

struct BBox {
    double xmin = 0.0, ymin = 0.0, xmax = 1.0, ymax = 1.0;

    double width() const { return xmax - xmin; }
    double height() const { return ymax - ymin; }
    double area() const { return width() * height(); }
    double diagonal() const;
    bool contains(Point2 p) const {
        return p.x >= xmin && p.x <= xmax && p.y >= ymin && p.y <= ymax;
    }
    std::vector<Point2> corners() const; // counterclockwise

    // Axis-aligned extent of the points, padded by pad_frac of the span per side.
    static BBox of_points(const std::vector<Point2>& pts, double pad_frac);
};

// Vertex index triple into a point list, counterclockwise.
struct Triangle {
    int a = 0, b = 0, c = 0;
};

struct VoronoiPolygon {
    int owner = -1;                // index of the point this cell belongs to
    std::vector<Point2> vertices;  // counterclockwise, convex
    double area = 0.0;
};

struct Histogram {
    std::vector<double> edges;       // size bins+1
    std::vector<std::size_t> counts; // size bins
};

struct CartogramLayout {
    std::vector<Point2> points;
    std::vector<VoronoiPolygon> polygons;
    int iterations_run = 0;
    std::vector<double> area_cv_trace;        // iterations_run + 1 entries
    std::vector<double> max_displacement_trace; // iterations_run entries
};

double polygon_area(const std::vector<Point2>& poly);
Point2 polygon_centroid(const std::vector<Point2>& poly);
bool point_in_convex_polygon(const std::vector<Point2>& poly, Point2 p, double tol);

// Delaunay triangulation (Bowyer-Watson insertion followed by Lawson
// flips until every interior edge satisfies the empty-circumcircle
// property). Rejects <3 points, exact duplicates and all-collinear input.
std::vector<Triangle> delaunay_triangulate(const std::vector<Point2>& points);

// Circumcircle center of a non-degenerate triangle.
Point2 circumcenter(const Triangle& t, const std::vector<Point2>& points);

// One clipped Voronoi cell per input point; cells tile the box. Inputs of
// one or two points are handled directly (whole box / bisector split).
std::vector<VoronoiPolygon> voronoi_cells(const std::vector<Point2>& points, const BBox& box);

// Moves every point to the area centroid of its clipped Voronoi cell.
std::vector<Point2> relax_step(const std::vector<Point2>& points, const BBox& box);

// Iterates relax_step until the largest point displacement drops below
// tol_displacement or max_iter is reached, recording per-iteration traces.
CartogramLayout build_cartogram(const std::vector<Point2>& points, const BBox& box,
                                double tol_displacement, int max_iter);

// Areas scaled by the largest area, histogrammed over (0, 1].
Histogram relative_area_distribution(const std::vector<VoronoiPolygon>& polygons,
                                     std::size_t bins = 20);

double area_coefficient_of_variation(const std::vector<VoronoiPolygon>& polygons);

// Index of the polygon containing p (ties on shared edges resolved to the
// first match). -1 if outside every cell.
int locate_owner(const std::vector<VoronoiPolygon>& polygons, Point2 p, double tol);

// Layout file round-trip. station_ids, when non-empty, must match points
// one-to-one and are stored alongside them.
void save_layout_json(const std::string& path, const CartogramLayout& layout, const BBox& box,
                      const std::vector<std::string>& station_ids);
struct LoadedLayout {
    std::vector<Point2> points;
    std::vector<std::string> station_ids;
    BBox box;
    int iterations = 0;
    std::vector<double> area_cv_trace;
};
LoadedLayout load_layout_json(const std::string& path);

void save_polygons_csv(const std::string& path, const std::vector<VoronoiPolygon>& polygons);
void save_histogram_csv(const std::string& path, const Histogram& h);

} // namespace cartoflow
