#include "cartoflow/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <utility>

#include <json.hpp>

namespace cartoflow {

double dist(Point2 a, Point2 b) {
    const double dx = a.x - b.x, dy = a.y - b.y;
    return std::sqrt(dx * dx + dy * dy);
}

double BBox::diagonal() const { return std::sqrt(width() * width() + height() * height()); }

std::vector<Point2> BBox::corners() const {
    return {{xmin, ymin}, {xmax, ymin}, {xmax, ymax}, {xmin, ymax}};
}

BBox BBox::of_points(const std::vector<Point2>& pts, double pad_frac) {
    if (pts.empty()) throw EmptyInput("bbox of empty point set");
    BBox b{pts[0].x, pts[0].y, pts[0].x, pts[0].y};
    for (const Point2& p : pts) {
        b.xmin = std::min(b.xmin, p.x);
        b.ymin = std::min(b.ymin, p.y);
        b.xmax = std::max(b.xmax, p.x);
        b.ymax = std::max(b.ymax, p.y);
    }
    double pw = b.width() * pad_frac;
    double ph = b.height() * pad_frac;
    // Degenerate spans still need a usable box.
    const double span = std::max(b.width(), b.height());
    if (pw <= 0.0) pw = span > 0.0 ? span * pad_frac : 1.0;
    if (ph <= 0.0) ph = span > 0.0 ? span * pad_frac : 1.0;
    b.xmin -= pw;
    b.xmax += pw;
    b.ymin -= ph;
    b.ymax += ph;
    return b;
}

double polygon_area(const std::vector<Point2>& poly) {
    double twice = 0.0;
    const std::size_t n = poly.size();
    for (std::size_t i = 0; i < n; ++i) {
        const Point2& p = poly[i];
        const Point2& q = poly[(i + 1) % n];
        twice += p.x * q.y - q.x * p.y;
    }
    return 0.5 * twice;
}

Point2 polygon_centroid(const std::vector<Point2>& poly) {
    const std::size_t n = poly.size();
    double twice = 0.0, cx = 0.0, cy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const Point2& p = poly[i];
        const Point2& q = poly[(i + 1) % n];
        const double w = p.x * q.y - q.x * p.y;
        twice += w;
        cx += (p.x + q.x) * w;
        cy += (p.y + q.y) * w;
    }
    if (std::abs(twice) < 1e-300) throw DegenerateInput("centroid of degenerate polygon");
    return {cx / (3.0 * twice), cy / (3.0 * twice)};
}

bool point_in_convex_polygon(const std::vector<Point2>& poly, Point2 p, double tol) {
    const std::size_t n = poly.size();
    if (n < 3) return false;
    for (std::size_t i = 0; i < n; ++i) {
        const Point2& a = poly[i];
        const Point2& b = poly[(i + 1) % n];
        if (cross(b - a, p - a) < -tol) return false;
    }
    return true;
}

namespace {

// > 0 iff d lies strictly inside the circumcircle of ccw triangle (a,b,c).
double in_circle(Point2 a, Point2 b, Point2 c, Point2 d) {
    const double adx = a.x - d.x, ady = a.y - d.y;
    const double bdx = b.x - d.x, bdy = b.y - d.y;
    const double cdx = c.x - d.x, cdy = c.y - d.y;
    const double ad = adx * adx + ady * ady;
    const double bd = bdx * bdx + bdy * bdy;
    const double cd = cdx * cdx + cdy * cdy;
    return adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx);
}

double in_circle_tol(Point2 a, Point2 b, Point2 c, Point2 d) {
    const double m = std::max({std::abs(a.x - d.x), std::abs(a.y - d.y), std::abs(b.x - d.x),
                               std::abs(b.y - d.y), std::abs(c.x - d.x), std::abs(c.y - d.y)});
    return 1e-12 * m * m * m * m + 1e-300;
}

double orient2(Point2 a, Point2 b, Point2 c) { return cross(b - a, c - a); }

struct Tri {
    int a, b, c;
    bool alive = true;
};

void make_ccw(int& a, int& b, int& c, const std::vector<Point2>& pts) {
    if (orient2(pts[a], pts[b], pts[c]) < 0.0) std::swap(b, c);
}

using Edge = std::pair<int, int>;
Edge edge_key(int u, int v) { return {std::min(u, v), std::max(u, v)}; }

int opposite_vertex(const Tri& t, const Edge& e) {
    if (t.a != e.first && t.a != e.second) return t.a;
    if (t.b != e.first && t.b != e.second) return t.b;
    return t.c;
}

// Lawson pass: flip interior edges until the empty-circumcircle property
// holds everywhere. Converges from any triangulation of the point set.
void legalize_all(std::vector<Tri>& tris, const std::vector<Point2>& pts) {
    const std::size_t max_rounds = 4 * tris.size() * tris.size() + 64;
    std::size_t rounds = 0;
    bool flipped = true;
    while (flipped && rounds++ < max_rounds) {
        flipped = false;
        std::map<Edge, std::vector<int>> by_edge;
        for (std::size_t i = 0; i < tris.size(); ++i) {
            if (!tris[i].alive) continue;
            const Tri& t = tris[i];
            by_edge[edge_key(t.a, t.b)].push_back(static_cast<int>(i));
            by_edge[edge_key(t.b, t.c)].push_back(static_cast<int>(i));
            by_edge[edge_key(t.c, t.a)].push_back(static_cast<int>(i));
        }
        for (const auto& [e, owners] : by_edge) {
            if (owners.size() != 2) continue;
            Tri& t1 = tris[owners[0]];
            Tri& t2 = tris[owners[1]];
            if (!t1.alive || !t2.alive) continue;
            const int w1 = opposite_vertex(t1, e);
            const int w2 = opposite_vertex(t2, e);
            if (w1 == w2) continue;
            const double det = in_circle(pts[t1.a], pts[t1.b], pts[t1.c], pts[w2]);
            if (det <= in_circle_tol(pts[t1.a], pts[t1.b], pts[t1.c], pts[w2])) continue;
            // Replace (u,v,w1),(u,v,w2) by (w1,w2,u),(w1,w2,v).
            int a1 = w1, b1 = w2, c1 = e.first;
            int a2 = w1, b2 = w2, c2 = e.second;
            if (std::abs(orient2(pts[a1], pts[b1], pts[c1])) < 1e-300 ||
                std::abs(orient2(pts[a2], pts[b2], pts[c2])) < 1e-300)
                continue;
            make_ccw(a1, b1, c1, pts);
            make_ccw(a2, b2, c2, pts);
            t1 = {a1, b1, c1, true};
            t2 = {a2, b2, c2, true};
            flipped = true;
        }
    }
}

} // namespace

std::vector<Triangle> delaunay_triangulate(const std::vector<Point2>& points) {
    const std::size_t n = points.size();
    if (n < 3) throw DegenerateInput("triangulation needs at least 3 points");

    {
        std::vector<std::pair<std::pair<double, double>, int>> sorted;
        sorted.reserve(n);
        for (std::size_t i = 0; i < n; ++i) sorted.push_back({{points[i].x, points[i].y}, static_cast<int>(i)});
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t i = 1; i < n; ++i)
            if (sorted[i].first == sorted[i - 1].first)
                throw DegenerateInput("duplicate point at index " + std::to_string(sorted[i].second));
    }

    const BBox box = BBox::of_points(points, 0.0);
    const double diag = std::max(box.diagonal(), 1e-12);
    {
        // All points collinear <=> every point sits on the line through the
        // first two (duplicates were ruled out above).
        bool non_collinear = false;
        for (std::size_t i = 2; i < n && !non_collinear; ++i)
            if (std::abs(orient2(points[0], points[1], points[i])) > 1e-12 * diag * diag)
                non_collinear = true;
        if (!non_collinear) throw DegenerateInput("all points collinear");
    }

    std::vector<Point2> pts = points;
    const Point2 center{(box.xmin + box.xmax) * 0.5, (box.ymin + box.ymax) * 0.5};
    const double R = 1024.0 * diag;
    pts.push_back({center.x, center.y + 3.0 * R});
    pts.push_back({center.x - 3.0 * R, center.y - 2.0 * R});
    pts.push_back({center.x + 3.0 * R, center.y - 2.0 * R});
    const int s0 = static_cast<int>(n), s1 = s0 + 1, s2 = s0 + 2;

    std::vector<Tri> tris;
    {
        int a = s0, b = s1, c = s2;
        make_ccw(a, b, c, pts);
        tris.push_back({a, b, c, true});
    }

    for (int p = 0; p < static_cast<int>(n); ++p) {
        // Cavity: triangles whose circumcircle strictly contains the new
        // point. On-circle ties stay put; the flip pass sorts those out.
        std::vector<int> bad;
        for (std::size_t i = 0; i < tris.size(); ++i) {
            if (!tris[i].alive) continue;
            const Tri& t = tris[i];
            const double det = in_circle(pts[t.a], pts[t.b], pts[t.c], pts[p]);
            if (det > in_circle_tol(pts[t.a], pts[t.b], pts[t.c], pts[p]))
                bad.push_back(static_cast<int>(i));
        }
        std::map<Edge, int> edge_count;
        std::map<Edge, std::pair<int, int>> edge_dir;
        for (int bi : bad) {
            const Tri& t = tris[bi];
            const int vs[3][2] = {{t.a, t.b}, {t.b, t.c}, {t.c, t.a}};
            for (auto& v : vs) {
                const Edge e = edge_key(v[0], v[1]);
                edge_count[e]++;
                edge_dir[e] = {v[0], v[1]};
            }
        }
        for (int bi : bad) tris[bi].alive = false;
        for (const auto& [e, cnt] : edge_count) {
            if (cnt != 1) continue;
            // Fan from p over the cavity boundary, keeping orientation.
            int a = edge_dir[e].first, b = edge_dir[e].second, c = p;
            if (std::abs(orient2(pts[a], pts[b], pts[c])) < 1e-300) continue;
            make_ccw(a, b, c, pts);
            tris.push_back({a, b, c, true});
        }
    }

    // Drop scaffolding triangles, then enforce the circumcircle property
    // among the real ones.
    std::vector<Tri> real;
    for (const Tri& t : tris) {
        if (!t.alive) continue;
        if (t.a >= s0 || t.b >= s0 || t.c >= s0) continue;
        real.push_back(t);
    }
    if (real.empty()) throw DegenerateInput("triangulation failed (degenerate configuration)");
    legalize_all(real, pts);

    std::vector<Triangle> out;
    out.reserve(real.size());
    for (const Tri& t : real)
        if (t.alive) out.push_back({t.a, t.b, t.c});
    return out;
}

Point2 circumcenter(const Triangle& t, const std::vector<Point2>& points) {
    const Point2 a = points[t.a], b = points[t.b], c = points[t.c];
    const Point2 d0 = b - a, d1 = c - a;
    const double denom = 2.0 * cross(d0, d1);
    const double scale = std::max(dot(d0, d0), dot(d1, d1));
    if (std::abs(denom) <= 1e-14 * scale + 1e-300)
        throw DegenerateInput("circumcenter of collinear triangle");
    const double d00 = dot(d0, d0), d11 = dot(d1, d1);
    const double ux = (d1.y * d00 - d0.y * d11) / denom;
    const double uy = (d0.x * d11 - d1.x * d00) / denom;
    return {a.x + ux, a.y + uy};
}

namespace {

// Keep the side {x : nrm.x <= d}; Sutherland-Hodgman, convex input.
std::vector<Point2> clip_halfplane(const std::vector<Point2>& poly, Point2 nrm, double d) {
    std::vector<Point2> out;
    const std::size_t n = poly.size();
    if (n == 0) return out;
    out.reserve(n + 1);
    for (std::size_t i = 0; i < n; ++i) {
        const Point2 s = poly[i];
        const Point2 e = poly[(i + 1) % n];
        const double fs = dot(nrm, s) - d;
        const double fe = dot(nrm, e) - d;
        const bool sin = fs <= 0.0;
        const bool ein = fe <= 0.0;
        if (sin) out.push_back(s);
        if (sin != ein) {
            const double t = fs / (fs - fe);
            out.push_back(s + (e - s) * t);
        }
    }
    return out;
}

std::vector<VoronoiPolygon> cells_by_bisectors(const std::vector<Point2>& points, const BBox& box,
                                               const std::vector<std::vector<int>>& neighbors) {
    std::vector<VoronoiPolygon> cells(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        std::vector<Point2> poly = box.corners();
        for (int j : neighbors[i]) {
            const Point2 nrm = points[j] - points[i];
            const Point2 mid = (points[i] + points[j]) * 0.5;
            poly = clip_halfplane(poly, nrm, dot(nrm, mid));
            if (poly.empty()) break;
        }
        cells[i].owner = static_cast<int>(i);
        cells[i].vertices = std::move(poly);
        cells[i].area = cells[i].vertices.size() >= 3 ? polygon_area(cells[i].vertices) : 0.0;
    }
    return cells;
}

} // namespace

std::vector<VoronoiPolygon> voronoi_cells(const std::vector<Point2>& points, const BBox& box) {
    if (points.empty()) throw EmptyInput("no points");
    for (const Point2& p : points)
        if (!(p.x > box.xmin && p.x < box.xmax && p.y > box.ymin && p.y < box.ymax))
            throw DegenerateInput("point outside bounding box");

    std::vector<std::vector<int>> neighbors(points.size());
    if (points.size() == 1) {
        // no bisectors; the cell is the whole box
    } else if (points.size() == 2) {
        neighbors[0] = {1};
        neighbors[1] = {0};
    } else {
        const std::vector<Triangle> tris = delaunay_triangulate(points);
        std::vector<std::set<int>> nb(points.size());
        for (const Triangle& t : tris) {
            nb[t.a].insert(t.b);
            nb[t.a].insert(t.c);
            nb[t.b].insert(t.a);
            nb[t.b].insert(t.c);
            nb[t.c].insert(t.a);
            nb[t.c].insert(t.b);
        }
        for (std::size_t i = 0; i < points.size(); ++i)
            neighbors[i].assign(nb[i].begin(), nb[i].end());
    }
    return cells_by_bisectors(points, box, neighbors);
}

std::vector<Point2> relax_step(const std::vector<Point2>& points, const BBox& box) {
    const std::vector<VoronoiPolygon> cells = voronoi_cells(points, box);
    std::vector<Point2> moved(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (cells[i].vertices.size() < 3) {
            moved[i] = points[i]; // clipped away; should not happen for interior points
            continue;
        }
        Point2 c = polygon_centroid(cells[i].vertices);
        c.x = std::clamp(c.x, box.xmin, box.xmax);
        c.y = std::clamp(c.y, box.ymin, box.ymax);
        moved[i] = c;
    }
    return moved;
}

double area_coefficient_of_variation(const std::vector<VoronoiPolygon>& polygons) {
    if (polygons.empty()) throw EmptyInput("no polygons");
    double mean = 0.0;
    for (const auto& c : polygons) mean += c.area;
    mean /= static_cast<double>(polygons.size());
    if (mean <= 0.0) return 0.0;
    double var = 0.0;
    for (const auto& c : polygons) {
        const double d = c.area - mean;
        var += d * d;
    }
    var /= static_cast<double>(polygons.size());
    return std::sqrt(var) / mean;
}

CartogramLayout build_cartogram(const std::vector<Point2>& points, const BBox& box,
                                double tol_displacement, int max_iter) {
    if (max_iter < 0) throw InvalidConfig("max_iter must be >= 0");
    CartogramLayout layout;
    layout.points = points;
    layout.polygons = voronoi_cells(layout.points, box);
    layout.area_cv_trace.push_back(area_coefficient_of_variation(layout.polygons));

    for (int it = 0; it < max_iter; ++it) {
        std::vector<Point2> moved(layout.points.size());
        double max_disp = 0.0;
        for (std::size_t i = 0; i < layout.points.size(); ++i) {
            Point2 c = layout.points[i];
            if (layout.polygons[i].vertices.size() >= 3) {
                c = polygon_centroid(layout.polygons[i].vertices);
                c.x = std::clamp(c.x, box.xmin, box.xmax);
                c.y = std::clamp(c.y, box.ymin, box.ymax);
            }
            max_disp = std::max(max_disp, dist(c, layout.points[i]));
            moved[i] = c;
        }
        layout.points = std::move(moved);
        layout.polygons = voronoi_cells(layout.points, box);
        layout.area_cv_trace.push_back(area_coefficient_of_variation(layout.polygons));
        layout.max_displacement_trace.push_back(max_disp);
        if (max_disp < tol_displacement) break;
    }
    layout.iterations_run = static_cast<int>(layout.max_displacement_trace.size());
    return layout;
}

Histogram relative_area_distribution(const std::vector<VoronoiPolygon>& polygons,
                                     std::size_t bins) {
    if (polygons.empty()) throw EmptyInput("no polygons");
    if (bins == 0) throw InvalidConfig("bins must be >= 1");
    double amax = 0.0;
    for (const auto& c : polygons) amax = std::max(amax, c.area);
    if (amax <= 0.0) throw DegenerateInput("all polygon areas zero");

    Histogram h;
    h.edges.resize(bins + 1);
    for (std::size_t i = 0; i <= bins; ++i)
        h.edges[i] = static_cast<double>(i) / static_cast<double>(bins);
    h.counts.assign(bins, 0);
    for (const auto& c : polygons) {
        const double rel = c.area / amax;
        std::size_t idx = static_cast<std::size_t>(rel * static_cast<double>(bins));
        if (idx >= bins) idx = bins - 1;
        h.counts[idx]++;
    }
    return h;
}

int locate_owner(const std::vector<VoronoiPolygon>& polygons, Point2 p, double tol) {
    for (const auto& c : polygons)
        if (point_in_convex_polygon(c.vertices, p, tol)) return c.owner;
    return -1;
}

void save_layout_json(const std::string& path, const CartogramLayout& layout, const BBox& box,
                      const std::vector<std::string>& station_ids) {
    nlohmann::json j;
    auto& pts = j["points"];
    pts = nlohmann::json::array();
    for (const Point2& p : layout.points) pts.push_back({p.x, p.y});
    j["iterations"] = layout.iterations_run;
    j["area_cv_trace"] = layout.area_cv_trace;
    j["max_displacement_trace"] = layout.max_displacement_trace;
    j["bbox"] = {box.xmin, box.ymin, box.xmax, box.ymax};
    if (!station_ids.empty()) {
        if (station_ids.size() != layout.points.size())
            throw InvalidConfig("station_ids do not match point count");
        j["station_ids"] = station_ids;
    }
    std::ofstream f(path);
    if (!f) throw InvalidConfig("cannot write " + path);
    f << j.dump(2) << "\n";
}

LoadedLayout load_layout_json(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw InvalidConfig("cannot read " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        throw SchemaError("layout JSON parse error: " + std::string(e.what()));
    }
    if (!j.contains("points")) throw SchemaError("layout JSON missing 'points'");
    LoadedLayout out;
    for (const auto& p : j["points"]) {
        if (!p.is_array() || p.size() != 2) throw SchemaError("layout point is not [x,y]");
        out.points.push_back({p[0].get<double>(), p[1].get<double>()});
    }
    if (j.contains("station_ids"))
        out.station_ids = j["station_ids"].get<std::vector<std::string>>();
    if (j.contains("bbox")) {
        const auto& b = j["bbox"];
        if (!b.is_array() || b.size() != 4) throw SchemaError("layout bbox is not [xmin,ymin,xmax,ymax]");
        out.box = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
    } else {
        out.box = BBox::of_points(out.points, 0.05);
    }
    if (j.contains("iterations")) out.iterations = j["iterations"].get<int>();
    if (j.contains("area_cv_trace"))
        out.area_cv_trace = j["area_cv_trace"].get<std::vector<double>>();
    return out;
}

void save_polygons_csv(const std::string& path, const std::vector<VoronoiPolygon>& polygons) {
    std::ofstream f(path);
    if (!f) throw InvalidConfig("cannot write " + path);
    f << "owner,vertices\n";
    char buf[64];
    for (const auto& c : polygons) {
        f << c.owner;
        for (const Point2& v : c.vertices) {
            std::snprintf(buf, sizeof(buf), ",%.17g,%.17g", v.x, v.y);
            f << buf;
        }
        f << "\n";
    }
}

void save_histogram_csv(const std::string& path, const Histogram& h) {
    std::ofstream f(path);
    if (!f) throw InvalidConfig("cannot write " + path);
    f << "bin_left,bin_right,count\n";
    char buf[80];
    for (std::size_t i = 0; i < h.counts.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%zu\n", h.edges[i], h.edges[i + 1], h.counts[i]);
        f << buf;
    }
}

} // namespace cartoflow
