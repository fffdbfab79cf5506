#include "nfem/triangulate.hpp"

#include "nfem/error.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numbers>

namespace nfem::mesh {

namespace {

double orient(const Vec2& a, const Vec2& b, const Vec2& c) {
    return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
}

// Positive when d lies strictly inside the circumcircle of the CCW triangle abc.
double incircle(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& d) {
    const double adx = a.x - d.x, ady = a.y - d.y;
    const double bdx = b.x - d.x, bdy = b.y - d.y;
    const double cdx = c.x - d.x, cdy = c.y - d.y;
    const double ad = adx * adx + ady * ady;
    const double bd = bdx * bdx + bdy * bdy;
    const double cd = cdx * cdx + cdy * cdy;
    return adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx);
}

double dist2(const Vec2& a, const Vec2& b) {
    const double dx = a.x - b.x, dy = a.y - b.y;
    return dx * dx + dy * dy;
}

Vec2 circumcenter(const Vec2& a, const Vec2& b, const Vec2& c) {
    const double bx = b.x - a.x, by = b.y - a.y;
    const double cx = c.x - a.x, cy = c.y - a.y;
    const double d = 2.0 * (bx * cy - by * cx);
    const double b2 = bx * bx + by * by;
    const double c2 = cx * cx + cy * cy;
    return {a.x + (cy * b2 - by * c2) / d, a.y + (bx * c2 - cx * b2) / d};
}

// Even-odd point-in-domain test with segments binned by x so a vertical ray
// only visits nearby segments.
class DomainLocator {
public:
    explicit DomainLocator(std::span<const BoundaryLoop> loops) {
        xmin_ = std::numeric_limits<double>::infinity();
        double xmax = -xmin_;
        for (const auto& loop : loops) {
            for (const auto& p : loop.points) {
                xmin_ = std::min(xmin_, p.x);
                xmax = std::max(xmax, p.x);
            }
        }
        std::size_t n_segments = 0;
        for (const auto& loop : loops) {
            n_segments += loop.points.size();
        }
        bins_ = std::max<std::size_t>(1, std::min<std::size_t>(n_segments, 4096));
        width_ = (xmax - xmin_) / static_cast<double>(bins_);
        if (!(width_ > 0.0)) {
            width_ = 1.0;
        }
        buckets_.resize(bins_);
        for (const auto& loop : loops) {
            const std::size_t n = loop.points.size();
            for (std::size_t i = 0; i < n; ++i) {
                const Vec2 a = loop.points[i];
                const Vec2 b = loop.points[(i + 1) % n];
                segments_.push_back({a, b});
                const std::size_t lo = bin(std::min(a.x, b.x));
                const std::size_t hi = bin(std::max(a.x, b.x));
                for (std::size_t k = lo; k <= hi; ++k) {
                    buckets_[k].push_back(segments_.size() - 1);
                }
            }
        }
    }

    bool contains(const Vec2& p) const {
        if (p.x < xmin_ || p.x > xmin_ + width_ * static_cast<double>(bins_)) {
            return false;
        }
        bool inside = false;
        for (std::size_t s : buckets_[bin(p.x)]) {
            const Vec2& a = segments_[s].first;
            const Vec2& b = segments_[s].second;
            if ((a.x <= p.x) == (b.x <= p.x)) {
                continue;
            }
            const double y = a.y + (p.x - a.x) * (b.y - a.y) / (b.x - a.x);
            if (y > p.y) {
                inside = !inside;
            }
        }
        return inside;
    }

private:
    std::size_t bin(double x) const {
        const double t = std::floor((x - xmin_) / width_);
        if (t <= 0.0) return 0;
        return std::min(bins_ - 1, static_cast<std::size_t>(t));
    }

    double xmin_ = 0.0;
    double width_ = 1.0;
    std::size_t bins_ = 1;
    std::vector<std::pair<Vec2, Vec2>> segments_;
    std::vector<std::vector<std::size_t>> buckets_;
};

struct Tri {
    std::array<int, 3> v{};
    std::array<int, 3> n{-1, -1, -1};  // n[i] is the neighbour across the edge opposite v[i]
    bool alive = true;
};

struct Segment {
    int a = -1;
    int b = -1;
    int loop = -1;
    bool alive = true;
};

struct BoundaryEdge {
    int a, b, outer, owner;
};

class Refiner {
public:
    Refiner(std::span<const BoundaryLoop> loops, double h, const TriangulationOptions& options)
        : loops_(loops), domain_(loops), max_area_(max_triangle_area(h)), min_edge_(h * options.min_edge_fraction),
          min_angle_(options.min_angle_deg), max_vertices_(options.max_vertices) {}

    Mesh run() {
        build_super_triangle();
        insert_boundary();
        std::deque<int> bad;
        for (std::size_t t = 0; t < tris_.size(); ++t) {
            if (tris_[t].alive && is_bad(static_cast<int>(t))) {
                bad.push_back(static_cast<int>(t));
            }
        }
        bad_queue_ = std::move(bad);
        refine();
        return extract();
    }

private:
    void build_super_triangle() {
        double xmin = std::numeric_limits<double>::infinity(), ymin = xmin;
        double xmax = -xmin, ymax = -xmin;
        for (const auto& loop : loops_) {
            for (const auto& p : loop.points) {
                xmin = std::min(xmin, p.x);
                xmax = std::max(xmax, p.x);
                ymin = std::min(ymin, p.y);
                ymax = std::max(ymax, p.y);
            }
        }
        const double cx = 0.5 * (xmin + xmax), cy = 0.5 * (ymin + ymax);
        const double r = 20.0 * std::max({xmax - xmin, ymax - ymin, 1e-9});
        pts_ = {{cx - 2.0 * r, cy - r}, {cx + 2.0 * r, cy - r}, {cx, cy + 2.0 * r}};
        input_.assign(3, 0);
        vert_tri_.assign(3, 0);
        vert_segs_.resize(3);
        tris_.push_back(Tri{{0, 1, 2}, {-1, -1, -1}, true});
    }

    void insert_boundary() {
        for (std::size_t l = 0; l < loops_.size(); ++l) {
            const auto& pts = loops_[l].points;
            const int first = static_cast<int>(pts_.size());
            const int n = static_cast<int>(pts.size());
            for (int i = 0; i < n; ++i) {
                const int v = add_vertex(pts[i], true);
                if (insert_vertex(v, last_) < 0) {
                    fail(ErrorCategory::mesh, "duplicate or degenerate boundary vertex");
                }
            }
            for (int i = 0; i < n; ++i) {
                add_segment(first + i, first + (i + 1) % n, static_cast<int>(l));
            }
        }
        for (std::size_t s = 0; s < segs_.size(); ++s) {
            seg_queue_.push_back(static_cast<int>(s));
        }
    }

    int add_vertex(Vec2 p, bool input) {
        pts_.push_back(p);
        input_.push_back(input ? 1 : 0);
        vert_tri_.push_back(-1);
        vert_segs_.emplace_back();
        if (pts_.size() > max_vertices_) {
            fail(ErrorCategory::mesh, "triangulation exceeded vertex budget; target size too small");
        }
        return static_cast<int>(pts_.size()) - 1;
    }

    int add_segment(int a, int b, int loop) {
        segs_.push_back({a, b, loop, true});
        const int id = static_cast<int>(segs_.size()) - 1;
        vert_segs_[a].push_back(id);
        vert_segs_[b].push_back(id);
        return id;
    }

    int locate(const Vec2& p, int hint) const {
        int t = (hint >= 0 && hint < static_cast<int>(tris_.size()) && tris_[hint].alive) ? hint : -1;
        if (t < 0) {
            for (std::size_t i = 0; i < tris_.size(); ++i) {
                if (tris_[i].alive) {
                    t = static_cast<int>(i);
                    break;
                }
            }
        }
        const std::size_t limit = 4 * tris_.size() + 16;
        for (std::size_t step = 0; step < limit; ++step) {
            const Tri& tri = tris_[t];
            int next = -1;
            for (int k = 0; k < 3; ++k) {
                const int i = static_cast<int>((k + step) % 3);
                if (orient(pts_[tri.v[(i + 1) % 3]], pts_[tri.v[(i + 2) % 3]], p) < 0.0) {
                    next = tri.n[i];
                    break;
                }
            }
            if (next == -1) {
                return t;
            }
            t = next;
        }
        // Walk failed to terminate; fall back to the triangle that contains p
        // with the largest margin.
        int best = -1;
        double best_margin = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < tris_.size(); ++i) {
            const Tri& tri = tris_[i];
            if (!tri.alive) continue;
            const double m = std::min({orient(pts_[tri.v[0]], pts_[tri.v[1]], p),
                                       orient(pts_[tri.v[1]], pts_[tri.v[2]], p),
                                       orient(pts_[tri.v[2]], pts_[tri.v[0]], p)});
            if (m > best_margin) {
                best_margin = m;
                best = static_cast<int>(i);
            }
        }
        if (best >= 0 && best_margin > -1e-12 * (1.0 + std::abs(p.x) + std::abs(p.y))) {
            return best;
        }
        fail(ErrorCategory::mesh, "point location failed");
    }

    bool in_circle(int t, const Vec2& p) const {
        const Tri& tri = tris_[t];
        return incircle(pts_[tri.v[0]], pts_[tri.v[1]], pts_[tri.v[2]], p) > 0.0;
    }

    // Bowyer-Watson cavity of p, made star-shaped with respect to p.
    bool cavity(const Vec2& p, int start, std::vector<int>& cav, std::vector<BoundaryEdge>& boundary) {
        ++stamp_;
        if (mark_.size() < tris_.size()) {
            mark_.resize(tris_.size(), 0);
        }
        cav.clear();
        cav.push_back(start);
        mark_[start] = stamp_;
        for (std::size_t i = 0; i < cav.size(); ++i) {
            const Tri& tri = tris_[cav[i]];
            for (int k = 0; k < 3; ++k) {
                const int nb = tri.n[k];
                if (nb >= 0 && mark_[nb] != stamp_ && in_circle(nb, p)) {
                    mark_[nb] = stamp_;
                    cav.push_back(nb);
                }
            }
        }
        for (int round = 0; round < 64; ++round) {
            boundary.clear();
            bool fixed = false;
            for (int c : cav) {
                const Tri& tri = tris_[c];
                for (int k = 0; k < 3; ++k) {
                    const int nb = tri.n[k];
                    if (nb >= 0 && mark_[nb] == stamp_) {
                        continue;
                    }
                    const int a = tri.v[(k + 1) % 3];
                    const int b = tri.v[(k + 2) % 3];
                    if (orient(pts_[a], pts_[b], p) <= 0.0) {
                        if (c == start) {
                            if (nb < 0) {
                                return false;
                            }
                            mark_[nb] = stamp_;
                            cav.push_back(nb);
                        } else {
                            mark_[c] = 0;
                            cav.erase(std::find(cav.begin(), cav.end(), c));
                        }
                        fixed = true;
                        break;
                    }
                    boundary.push_back({a, b, nb, c});
                }
                if (fixed) {
                    break;
                }
            }
            if (!fixed) {
                return true;
            }
        }
        return false;
    }

    int new_tri_slot() {
        if (!free_.empty()) {
            const int t = free_.back();
            free_.pop_back();
            return t;
        }
        tris_.emplace_back();
        mark_.push_back(0);
        return static_cast<int>(tris_.size()) - 1;
    }

    // Re-triangulates the cavity as a fan around vertex v. Returns the new triangles.
    const std::vector<int>& fill(int v, const std::vector<int>& cav, const std::vector<BoundaryEdge>& boundary) {
        for (int c : cav) {
            tris_[c].alive = false;
            free_.push_back(c);
        }
        created_.clear();
        for (const auto& e : boundary) {
            const int t = new_tri_slot();
            Tri& tri = tris_[t];
            tri.v = {v, e.a, e.b};
            tri.n = {e.outer, -1, -1};
            tri.alive = true;
            if (e.outer >= 0) {
                Tri& o = tris_[e.outer];
                for (int k = 0; k < 3; ++k) {
                    if (o.v[k] != e.a && o.v[k] != e.b) {
                        o.n[k] = t;
                    }
                }
            }
            created_.push_back(t);
        }
        for (int t : created_) {
            Tri& tri = tris_[t];
            for (int u : created_) {
                const Tri& other = tris_[u];
                if (other.v[1] == tri.v[2]) {
                    tri.n[1] = u;  // edge (b, v)
                }
                if (other.v[2] == tri.v[1]) {
                    tri.n[2] = u;  // edge (v, a)
                }
            }
            vert_tri_[tri.v[0]] = t;
            vert_tri_[tri.v[1]] = t;
            vert_tri_[tri.v[2]] = t;
        }
        last_ = created_.empty() ? last_ : created_.front();
        return created_;
    }

    // Returns the number of new triangles, or -1 if the point could not be inserted.
    int insert_vertex(int v, int hint) {
        const Vec2 p = pts_[v];
        const int t = locate(p, hint);
        const Tri& tri = tris_[t];
        for (int k = 0; k < 3; ++k) {
            if (dist2(pts_[tri.v[k]], p) == 0.0) {
                return -1;
            }
        }
        if (!cavity(p, t, cav_, boundary_)) {
            return -1;
        }
        const auto& created = fill(v, cav_, boundary_);
        after_insert(v, created);
        return static_cast<int>(created.size());
    }

    void after_insert(int v, const std::vector<int>& created) {
        for (int t : created) {
            const Tri& tri = tris_[t];
            for (int k = 1; k < 3; ++k) {
                for (int s : vert_segs_[tri.v[k]]) {
                    if (segs_[s].alive) {
                        seg_queue_.push_back(s);
                    }
                }
            }
            if (is_bad(t)) {
                bad_queue_.push_back(t);
            }
        }
        for (int s : vert_segs_[v]) {
            if (segs_[s].alive) {
                seg_queue_.push_back(s);
            }
        }
    }

    // Triangles around vertex a that also contain b (at most two).
    int edge_apexes(int a, int b, std::array<int, 2>& apex) const {
        int count = 0;
        const int start = vert_tri_[a];
        if (start < 0) {
            return 0;
        }
        auto visit = [&](int t) {
            const Tri& tri = tris_[t];
            int ia = -1, ib = -1;
            for (int k = 0; k < 3; ++k) {
                if (tri.v[k] == a) ia = k;
                if (tri.v[k] == b) ib = k;
            }
            if (ia >= 0 && ib >= 0 && count < 2) {
                apex[count++] = tri.v[3 - ia - ib];
            }
        };
        // Rotate around a in both directions.
        int t = start;
        bool closed = false;
        for (std::size_t guard = 0; guard < 4096; ++guard) {
            visit(t);
            const Tri& tri = tris_[t];
            int ia = 0;
            while (tri.v[ia] != a) ++ia;
            const int next = tri.n[(ia + 2) % 3];
            if (next < 0) break;
            if (next == start) {
                closed = true;
                break;
            }
            t = next;
        }
        if (!closed) {
            t = start;
            for (std::size_t guard = 0; guard < 4096; ++guard) {
                const Tri& tri = tris_[t];
                int ia = 0;
                while (tri.v[ia] != a) ++ia;
                const int next = tri.n[(ia + 1) % 3];
                if (next < 0 || next == start) break;
                t = next;
                visit(t);
            }
        }
        return count;
    }

    bool encroached_by(int s, const Vec2& w) const {
        const Vec2& a = pts_[segs_[s].a];
        const Vec2& b = pts_[segs_[s].b];
        return (a.x - w.x) * (b.x - w.x) + (a.y - w.y) * (b.y - w.y) < 0.0;
    }

    // Missing from the triangulation or encroached by an adjacent apex.
    bool needs_split(int s) const {
        std::array<int, 2> apex{};
        const int found = edge_apexes(segs_[s].a, segs_[s].b, apex);
        if (found == 0) {
            return true;
        }
        for (int i = 0; i < found; ++i) {
            if (encroached_by(s, pts_[apex[i]])) {
                return true;
            }
        }
        return false;
    }

    void split_segment(int s) {
        const Segment seg = segs_[s];
        const Vec2 a = pts_[seg.a];
        const Vec2 b = pts_[seg.b];
        double t = 0.5;
        // Concentric shells around input vertices keep splits from cascading
        // into small input angles.
        const bool ia = input_[seg.a] != 0;
        const bool ib = input_[seg.b] != 0;
        if (ia != ib) {
            const double len = std::sqrt(dist2(a, b));
            const double d = std::exp2(std::round(std::log2(0.5 * len)));
            t = ia ? d / len : 1.0 - d / len;
        }
        const Vec2 m{a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)};
        segs_[s].alive = false;
        const int v = add_vertex(m, false);
        add_segment(seg.a, v, seg.loop);
        add_segment(v, seg.b, seg.loop);
        if (insert_vertex(v, vert_tri_[seg.a]) < 0) {
            fail(ErrorCategory::mesh, "failed to insert segment split point");
        }
    }

    bool drain_segments() {
        bool any = false;
        while (!seg_queue_.empty()) {
            const int s = seg_queue_.front();
            seg_queue_.pop_front();
            if (!segs_[s].alive || !needs_split(s)) {
                continue;
            }
            split_segment(s);
            any = true;
        }
        return any;
    }

    bool inside(int t) const {
        const Tri& tri = tris_[t];
        for (int k = 0; k < 3; ++k) {
            if (tri.v[k] < 3) return false;
        }
        const Vec2& a = pts_[tri.v[0]];
        const Vec2& b = pts_[tri.v[1]];
        const Vec2& c = pts_[tri.v[2]];
        return domain_.contains({(a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0});
    }

    bool is_bad(int t) const {
        if (!inside(t)) {
            return false;
        }
        const Tri& tri = tris_[t];
        const Vec2& a = pts_[tri.v[0]];
        const Vec2& b = pts_[tri.v[1]];
        const Vec2& c = pts_[tri.v[2]];
        if (0.5 * orient(a, b, c) > max_area_) {
            return true;
        }
        const double shortest = std::sqrt(std::min({dist2(a, b), dist2(b, c), dist2(c, a)}));
        return shortest > min_edge_ && min_angle_deg(a, b, c) < min_angle_;
    }

    void refine() {
        drain_segments();
        while (!bad_queue_.empty()) {
            const int t = bad_queue_.front();
            bad_queue_.pop_front();
            if (!tris_[t].alive || !is_bad(t)) {
                continue;
            }
            const Tri tri = tris_[t];
            const Vec2 c = circumcenter(pts_[tri.v[0]], pts_[tri.v[1]], pts_[tri.v[2]]);
            if (!std::isfinite(c.x) || !std::isfinite(c.y) || !domain_.contains(c)) {
                continue;
            }
            const int host = locate(c, t);
            if (!cavity(c, host, cav_, boundary_)) {
                continue;
            }
            // Subsegments on the cavity that c would encroach get split instead.
            std::vector<int> encroached;
            for (int ct : cav_) {
                const Tri& ctri = tris_[ct];
                for (int k = 0; k < 3; ++k) {
                    const int x = ctri.v[k];
                    const int y = ctri.v[(k + 1) % 3];
                    for (int s : vert_segs_[x]) {
                        const Segment& seg = segs_[s];
                        if (seg.alive && (seg.a == y || seg.b == y) && encroached_by(s, c)) {
                            encroached.push_back(s);
                        }
                    }
                }
            }
            if (!encroached.empty()) {
                std::sort(encroached.begin(), encroached.end());
                encroached.erase(std::unique(encroached.begin(), encroached.end()), encroached.end());
                for (int s : encroached) {
                    if (segs_[s].alive) {
                        split_segment(s);
                    }
                }
                drain_segments();
                if (tris_[t].alive && tris_[t].v == tri.v) {
                    bad_queue_.push_back(t);
                }
                continue;
            }
            const int v = add_vertex(c, false);
            const auto& created = fill(v, cav_, boundary_);
            after_insert(v, created);
            drain_segments();
        }
    }

    Mesh extract() const {
        Mesh mesh;
        mesh.dim = 2;
        std::vector<int> remap(pts_.size(), -1);
        std::vector<std::array<int, 3>> kept;
        for (std::size_t t = 0; t < tris_.size(); ++t) {
            if (tris_[t].alive && inside(static_cast<int>(t))) {
                kept.push_back(tris_[t].v);
            }
        }
        // Canonical order so identical inputs give identical files.
        for (auto& tri : kept) {
            const auto lowest = std::min_element(tri.begin(), tri.end()) - tri.begin();
            std::rotate(tri.begin(), tri.begin() + lowest, tri.end());
        }
        std::sort(kept.begin(), kept.end());
        std::vector<char> used(pts_.size(), 0);
        for (const auto& tri : kept) {
            for (int v : tri) used[v] = 1;
        }
        for (std::size_t v = 0; v < pts_.size(); ++v) {
            if (used[v]) {
                remap[v] = static_cast<int>(mesh.nodes.size());
                mesh.nodes.push_back({pts_[v].x, pts_[v].y, 0.0});
            }
        }
        for (const auto& tri : kept) {
            mesh.elements.push_back({remap[tri[0]], remap[tri[1]], remap[tri[2]], -1});
        }
        for (const auto& f : exterior_facets(2, mesh.elements)) {
            mesh.boundary_facets.push_back({{f[0], f[1], -1}, NodeTag::dirichlet, ""});
        }
        // Attribute each exterior facet to the loop of the subsegment it lies on.
        std::vector<std::pair<std::pair<int, int>, int>> seg_loop;
        for (const auto& seg : segs_) {
            if (seg.alive && remap[seg.a] >= 0 && remap[seg.b] >= 0) {
                const int a = remap[seg.a], b = remap[seg.b];
                seg_loop.push_back({{std::min(a, b), std::max(a, b)}, seg.loop});
            }
        }
        std::sort(seg_loop.begin(), seg_loop.end());
        for (auto& facet : mesh.boundary_facets) {
            const std::pair<int, int> key{std::min(facet.nodes[0], facet.nodes[1]),
                                          std::max(facet.nodes[0], facet.nodes[1])};
            const auto it = std::lower_bound(seg_loop.begin(), seg_loop.end(), std::make_pair(key, -1));
            if (it == seg_loop.end() || it->first != key) {
                fail(ErrorCategory::mesh, "triangulation boundary does not follow the input segments");
            }
            facet.group = loops_[it->second].group;
        }
        retag_nodes(mesh);
        return mesh;
    }

    std::span<const BoundaryLoop> loops_;
    DomainLocator domain_;
    double max_area_;
    double min_edge_;
    double min_angle_;
    std::size_t max_vertices_;

    std::vector<Vec2> pts_;
    std::vector<char> input_;
    std::vector<Tri> tris_;
    std::vector<int> free_;
    std::vector<int> vert_tri_;
    std::vector<std::vector<int>> vert_segs_;
    std::vector<Segment> segs_;
    std::deque<int> seg_queue_;
    std::deque<int> bad_queue_;
    std::vector<unsigned> mark_;
    unsigned stamp_ = 0;
    int last_ = 0;

    std::vector<int> cav_;
    std::vector<BoundaryEdge> boundary_;
    std::vector<int> created_;
};

} // namespace

double max_triangle_area(double h) { return std::sqrt(3.0) / 4.0 * h * h; }

double min_angle_deg(const Vec2& a, const Vec2& b, const Vec2& c) {
    auto angle = [](const Vec2& p, const Vec2& q, const Vec2& r) {
        const double ux = q.x - p.x, uy = q.y - p.y;
        const double vx = r.x - p.x, vy = r.y - p.y;
        return std::atan2(std::abs(ux * vy - uy * vx), ux * vx + uy * vy);
    };
    const double m = std::min({angle(a, b, c), angle(b, c, a), angle(c, a, b)});
    return m * 180.0 / std::numbers::pi;
}

double enclosed_area(std::span<const BoundaryLoop> loops) {
    DomainLocator single_loop_test(loops);
    double total = 0.0;
    for (std::size_t i = 0; i < loops.size(); ++i) {
        const auto& pts = loops[i].points;
        double a = 0.0;
        for (std::size_t k = 0; k < pts.size(); ++k) {
            const Vec2& p = pts[k];
            const Vec2& q = pts[(k + 1) % pts.size()];
            a += p.x * q.y - q.x * p.y;
        }
        a = std::abs(0.5 * a);
        // Depth parity: count the other loops that contain this loop.
        int depth = 0;
        for (std::size_t j = 0; j < loops.size(); ++j) {
            if (j == i) continue;
            DomainLocator other(std::span<const BoundaryLoop>(&loops[j], 1));
            if (other.contains(pts.front())) ++depth;
        }
        total += (depth % 2 == 0) ? a : -a;
    }
    return total;
}

Mesh triangulate(std::span<const BoundaryLoop> loops, double h, const TriangulationOptions& options) {
    if (!(h > 0.0)) {
        fail(ErrorCategory::mesh, "target element size must be positive");
    }
    if (loops.empty()) {
        fail(ErrorCategory::mesh, "triangulate needs at least one boundary loop");
    }
    // Pre-split every input edge so no boundary segment is longer than h.
    std::vector<BoundaryLoop> split(loops.begin(), loops.end());
    for (auto& loop : split) {
        if (loop.points.size() < 3) {
            fail(ErrorCategory::mesh, "boundary loop needs at least three points");
        }
        std::vector<Vec2> pts;
        const std::size_t n = loop.points.size();
        for (std::size_t i = 0; i < n; ++i) {
            const Vec2 a = loop.points[i];
            const Vec2 b = loop.points[(i + 1) % n];
            const double len = std::sqrt(dist2(a, b));
            if (!(len > 0.0)) {
                fail(ErrorCategory::mesh, "boundary loop has repeated points");
            }
            const int pieces = std::max(1, static_cast<int>(std::ceil(len / h - 1e-9)));
            for (int k = 0; k < pieces; ++k) {
                const double t = static_cast<double>(k) / pieces;
                pts.push_back({a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)});
            }
        }
        loop.points = std::move(pts);
    }
    Refiner refiner(split, h, options);
    Mesh mesh = refiner.run();
    if (mesh.num_elements() == 0) {
        fail(ErrorCategory::mesh, "triangulation produced no elements");
    }
    return mesh;
}

} // namespace nfem::mesh
