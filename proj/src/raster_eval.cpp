#include "relcirc/raster_eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <tuple>

#include "relcirc/errors.hpp"
#include "relcirc/scene.hpp"

namespace relcirc::raster {

namespace {

constexpr const char* kModule = "raster-eval";

// Clockwise in image coordinates (y down), starting east.
constexpr int kDx[8] = {1, 1, 0, -1, -1, -1, 0, 1};
constexpr int kDy[8] = {0, 1, 1, 1, 0, -1, -1, -1};

int direction_of(int dx, int dy) {
    for (int d = 0; d < 8; ++d) {
        if (kDx[d] == dx && kDy[d] == dy) return d;
    }
    return -1;
}

double distance_to_line(Point p, Point a, Point b) {
    const double vx = b.x - a.x;
    const double vy = b.y - a.y;
    const double len = std::hypot(vx, vy);
    if (len == 0) return std::hypot(p.x - a.x, p.y - a.y);
    return std::abs(vx * (p.y - a.y) - vy * (p.x - a.x)) / len;
}

// Open-chain Douglas-Peucker over points[first..last]; marks kept indices.
void douglas_peucker(std::span<const Point> points, std::size_t first, std::size_t last, double epsilon,
                     std::vector<bool>& keep) {
    if (last <= first + 1) return;
    double best = -1;
    std::size_t index = first;
    for (std::size_t i = first + 1; i < last; ++i) {
        const double d = distance_to_line(points[i], points[first], points[last]);
        if (d > best) {
            best = d;
            index = i;
        }
    }
    if (best > epsilon) {
        keep[index] = true;
        douglas_peucker(points, first, index, epsilon, keep);
        douglas_peucker(points, index, last, epsilon, keep);
    }
}

std::size_t farthest_from(std::span<const Point> points, Point origin) {
    std::size_t index = 0;
    double best = -1;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const double d = std::hypot(points[i].x - origin.x, points[i].y - origin.y);
        if (d > best) {
            best = d;
            index = i;
        }
    }
    return index;
}

double shoelace_area(std::span<const Point> poly) {
    double twice = 0;
    for (std::size_t i = 0; i < poly.size(); ++i) {
        const auto& a = poly[i];
        const auto& b = poly[(i + 1) % poly.size()];
        twice += a.x * b.y - b.x * a.y;
    }
    return 0.5 * std::abs(twice);
}

}  // namespace

std::vector<PixelPoint> trace_boundary(std::span<const std::uint8_t> mask, int width, int height, PixelPoint start) {
    auto inside = [&](int x, int y) {
        return x >= 0 && y >= 0 && x < width && y < height && mask[static_cast<std::size_t>(y) * width + x] != 0;
    };
    std::vector<PixelPoint> contour{start};
    // The start pixel is top-left-most, so its west neighbor is background.
    PixelPoint current = start;
    int backtrack = 4;
    std::optional<PixelPoint> second;
    const std::size_t cap = 4 * static_cast<std::size_t>(width) * height + 8;
    for (std::size_t step = 0; step < cap; ++step) {
        int found = -1;
        for (int k = 1; k <= 8; ++k) {
            const int d = (backtrack + k) % 8;
            if (inside(current.x + kDx[d], current.y + kDy[d])) {
                found = d;
                break;
            }
        }
        if (found < 0) break;  // isolated pixel
        const PixelPoint next{current.x + kDx[found], current.y + kDy[found]};
        if (current == start && second && next == *second) break;
        if (!second) second = next;
        // The neighbor checked just before `found` is background; it becomes
        // the backtrack point seen from `next`.
        const int prev = (found + 7) % 8;
        const int bx = current.x + kDx[prev] - next.x;
        const int by = current.y + kDy[prev] - next.y;
        backtrack = direction_of(bx, by);
        current = next;
        contour.push_back(current);
    }
    // The loop closes on the repeated first move, leaving start at the tail.
    if (contour.size() > 1 && contour.back() == start) contour.pop_back();
    return contour;
}

double closed_perimeter(std::span<const Point> points) {
    double total = 0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto& a = points[i];
        const auto& b = points[(i + 1) % points.size()];
        total += std::hypot(b.x - a.x, b.y - a.y);
    }
    return total;
}

std::vector<Point> simplify_closed(std::span<const Point> points, double epsilon) {
    if (points.size() < 3) return {points.begin(), points.end()};
    // Anchor on an approximately diametral pair; both ends are extreme points.
    const std::size_t a = farthest_from(points, points[0]);
    const std::size_t b_rel = farthest_from(points, points[a]);
    std::vector<Point> ring;
    ring.reserve(points.size() + 1);
    for (std::size_t i = 0; i < points.size(); ++i) ring.push_back(points[(a + i) % points.size()]);
    ring.push_back(points[a]);
    const std::size_t b = (b_rel + points.size() - a) % points.size();
    std::vector<bool> keep(ring.size(), false);
    keep[0] = true;
    keep[b] = true;
    douglas_peucker(ring, 0, b, epsilon, keep);
    douglas_peucker(ring, b, ring.size() - 1, epsilon, keep);
    std::vector<Point> out;
    for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
        if (keep[i]) out.push_back(ring[i]);
    }
    return out;
}

ShapeKind classify_polygon(std::span<const Point> boundary, double epsilon_fraction) {
    if (boundary.size() < 3) throw ClassificationError(kModule, "boundary needs at least 3 points");
    const double perimeter = closed_perimeter(boundary);
    const auto poly = simplify_closed(boundary, epsilon_fraction * perimeter);
    if (poly.size() < 3 || shoelace_area(poly) <= 1e-9 * perimeter * perimeter) {
        throw ClassificationError(kModule, "degenerate (collinear) boundary");
    }
    if (poly.size() == 3) return ShapeKind::triangle;
    if (poly.size() == 4) return ShapeKind::square;
    return ShapeKind::circle;
}

std::vector<Detection> parse_objects(const Image& image, const ParseConfig& config) {
    const int w = image.width;
    const int h = image.height;
    const auto npix = static_cast<std::size_t>(w) * h;
    std::vector<Detection> detections;
    std::vector<std::uint8_t> mask(npix);
    std::vector<std::uint8_t> component(npix);
    std::vector<int> labels(npix);
    std::vector<std::size_t> stack;
    std::vector<std::size_t> members;

    for (int channel : config.channel_order) {
        for (std::size_t i = 0; i < npix; ++i) mask[i] = image.pixels[3 * i + channel] > config.intensity_threshold;
        std::fill(labels.begin(), labels.end(), 0);
        int next_label = 0;
        for (std::size_t seed = 0; seed < npix; ++seed) {
            if (!mask[seed] || labels[seed]) continue;
            ++next_label;
            members.clear();
            stack.assign(1, seed);
            labels[seed] = next_label;
            while (!stack.empty()) {
                const auto idx = stack.back();
                stack.pop_back();
                members.push_back(idx);
                const int x = static_cast<int>(idx % w);
                const int y = static_cast<int>(idx / w);
                for (int d = 0; d < 8; ++d) {
                    const int nx = x + kDx[d];
                    const int ny = y + kDy[d];
                    if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
                    const auto nidx = static_cast<std::size_t>(ny) * w + nx;
                    if (mask[nidx] && !labels[nidx]) {
                        labels[nidx] = next_label;
                        stack.push_back(nidx);
                    }
                }
            }
            if (static_cast<int>(members.size()) < config.min_area) continue;

            Detection det;
            det.channel = channel;
            det.area = static_cast<int>(members.size());
            det.bbox = {w, h, -1, -1};
            double sx = 0, sy = 0;
            std::array<double, 3> rgb{};
            std::fill(component.begin(), component.end(), 0);
            for (auto idx : members) {
                const int x = static_cast<int>(idx % w);
                const int y = static_cast<int>(idx / w);
                component[idx] = 1;
                det.pixels.push_back(static_cast<int>(idx));
                det.bbox.x0 = std::min(det.bbox.x0, x);
                det.bbox.y0 = std::min(det.bbox.y0, y);
                det.bbox.x1 = std::max(det.bbox.x1, x);
                det.bbox.y1 = std::max(det.bbox.y1, y);
                sx += x;
                sy += y;
                for (int c = 0; c < 3; ++c) rgb[c] += image.pixels[3 * idx + c];
            }
            std::sort(det.pixels.begin(), det.pixels.end());
            det.center = {sx / det.area, sy / det.area};
            for (int c = 0; c < 3; ++c) det.mean_rgb[c] = rgb[c] / det.area;
            const double hi = 255.0 - config.color_margin;
            const double lo = config.color_margin;
            det.is_red = det.mean_rgb[0] >= hi && det.mean_rgb[1] <= lo && det.mean_rgb[2] <= lo;
            det.is_blue = det.mean_rgb[2] >= hi && det.mean_rgb[0] <= lo && det.mean_rgb[1] <= lo;

            // `seed` is the first pixel in raster order, i.e. top-left-most.
            const PixelPoint start{static_cast<int>(seed % w), static_cast<int>(seed / w)};
            const auto contour = trace_boundary(component, w, h, start);
            std::vector<Point> boundary;
            boundary.reserve(contour.size());
            for (auto p : contour) boundary.push_back({double(p.x), double(p.y)});
            try {
                det.shape = classify_polygon(boundary, config.epsilon_fraction);
            } catch (const ClassificationError&) {
                continue;  // unclassifiable blobs are not objects
            }
            detections.push_back(det);
        }
    }
    std::sort(detections.begin(), detections.end(), [](const Detection& a, const Detection& b) {
        return std::tie(a.bbox.y0, a.bbox.x0, a.bbox.y1, a.bbox.x1, a.area, a.channel) <
               std::tie(b.bbox.y0, b.bbox.x0, b.bbox.y1, b.bbox.x1, b.area, b.channel);
    });
    return detections;
}

bool loose_relation_check(double dx, double dy, RelationLabel relation, double threshold) {
    if (!(threshold > 0)) throw InputError(kModule, "loose threshold must be positive");
    const double t = threshold;
    switch (relation) {
        case RelationLabel::above: return dy < -t;
        case RelationLabel::below: return dy > t;
        case RelationLabel::left: return dx < -t;
        case RelationLabel::right: return dx > t;
        case RelationLabel::upper_left: return dx < -t && dy < -t;
        case RelationLabel::upper_right: return dx > t && dy < -t;
        case RelationLabel::lower_left: return dx < -t && dy > t;
        case RelationLabel::lower_right: return dx > t && dy > t;
        case RelationLabel::in_front:
        case RelationLabel::behind: break;
    }
    throw UnsupportedError(kModule, "occlusion relation '" + std::string(to_string(relation)) +
                                        "' cannot be scored from centers");
}

EvalResult evaluate_scene(std::span<const Detection> detections, const SceneQuery& query, const EvalConfig& config) {
    if (!is_planar(query.relation)) {
        throw UnsupportedError(kModule, "occlusion relation '" + std::string(to_string(query.relation)) +
                                            "' is not supported for scoring");
    }
    auto has_color = [](const Detection& d, Color c) { return c == Color::red ? d.is_red : d.is_blue; };
    auto matches = [&](const Detection& d, ShapeKind s, const std::optional<Color>& c) {
        return d.shape == s && (!c || has_color(d, *c));
    };
    auto any_of = [&](auto pred) { return std::any_of(detections.begin(), detections.end(), pred); };

    EvalResult r;
    r.shape = any_of([&](const Detection& d) { return d.shape == query.shape1; }) &&
              any_of([&](const Detection& d) { return d.shape == query.shape2; });
    r.color = (!query.color1 || any_of([&](const Detection& d) { return has_color(d, *query.color1); })) &&
              (!query.color2 || any_of([&](const Detection& d) { return has_color(d, *query.color2); }));

    std::vector<const Detection*> o1, o2;
    for (const auto& d : detections) {
        if (matches(d, query.shape1, query.color1)) o1.push_back(&d);
        if (matches(d, query.shape2, query.color2)) o2.push_back(&d);
    }
    r.exist_binding = !o1.empty() && !o2.empty();
    r.unique_binding = o1.size() == 1 && o2.size() == 1;
    if (r.unique_binding) {
        r.center1 = o1.front()->center;
        r.center2 = o2.front()->center;
        r.dx = r.center1->x - r.center2->x;
        r.dy = r.center1->y - r.center2->y;
        r.spatial_relationship = relation_from_offsets(*r.dx, *r.dy, config.relation_tolerance) == query.relation;
        r.spatial_relationship_loose = loose_relation_check(*r.dx, *r.dy, query.relation, config.loose_threshold);
    }
    r.overall = r.shape && r.color && r.unique_binding && r.spatial_relationship;
    r.overall_loose = r.shape && r.color && r.unique_binding && r.spatial_relationship_loose;
    return r;
}

MetricSummary aggregate_metrics(std::span<const EvalResult> results) {
    if (results.empty()) throw AggregationError(kModule, "cannot aggregate an empty result list");
    MetricSummary s;
    s.count = results.size();
    double sum_dx = 0, sum_dy = 0;
    for (const auto& r : results) {
        s.shape += r.shape;
        s.color += r.color;
        s.exist_binding += r.exist_binding;
        s.unique_binding += r.unique_binding;
        s.spatial_relationship += r.spatial_relationship;
        s.spatial_relationship_loose += r.spatial_relationship_loose;
        s.overall += r.overall;
        s.overall_loose += r.overall_loose;
        if (r.unique_binding && r.dx && r.dy) {
            ++s.bound_count;
            sum_dx += *r.dx;
            sum_dy += *r.dy;
        }
    }
    const double n = static_cast<double>(s.count);
    for (double* v : {&s.shape, &s.color, &s.exist_binding, &s.unique_binding, &s.spatial_relationship,
                      &s.spatial_relationship_loose, &s.overall, &s.overall_loose}) {
        *v /= n;
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    s.mean_dx = s.bound_count ? sum_dx / s.bound_count : nan;
    s.mean_dy = s.bound_count ? sum_dy / s.bound_count : nan;
    return s;
}

std::string summary_csv_header() { return "shape,color,bind,sp rel,sp rel+,Dx,Dy"; }

std::string summary_csv_row(const MetricSummary& s) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f", s.shape, s.color, s.unique_binding,
                  s.spatial_relationship_loose, s.spatial_relationship, s.mean_dx, s.mean_dy);
    return buf;
}

nlohmann::json to_json(const EvalResult& r) {
    nlohmann::json j;
    j["shape"] = r.shape;
    j["color"] = r.color;
    j["exist_binding"] = r.exist_binding;
    j["unique_binding"] = r.unique_binding;
    j["spatial_relationship"] = r.spatial_relationship;
    j["spatial_relationship_loose"] = r.spatial_relationship_loose;
    j["overall"] = r.overall;
    j["overall_loose"] = r.overall_loose;
    j["dx"] = r.dx ? nlohmann::json(*r.dx) : nlohmann::json(nullptr);
    j["dy"] = r.dy ? nlohmann::json(*r.dy) : nlohmann::json(nullptr);
    j["center1"] = r.center1 ? nlohmann::json({r.center1->x, r.center1->y}) : nlohmann::json(nullptr);
    j["center2"] = r.center2 ? nlohmann::json({r.center2->x, r.center2->y}) : nlohmann::json(nullptr);
    return j;
}

nlohmann::json to_json(const Detection& d) {
    nlohmann::json j;
    j["shape"] = to_string(d.shape);
    j["bbox"] = {d.bbox.x0, d.bbox.y0, d.bbox.x1, d.bbox.y1};
    j["center"] = {d.center.x, d.center.y};
    j["area"] = d.area;
    j["mean_rgb"] = d.mean_rgb;
    j["is_red"] = d.is_red;
    j["is_blue"] = d.is_blue;
    return j;
}

EvalResult eval_result_from_json(const nlohmann::json& j) {
    EvalResult r;
    try {
        r.shape = j.at("shape").get<bool>();
        r.color = j.at("color").get<bool>();
        r.exist_binding = j.at("exist_binding").get<bool>();
        r.unique_binding = j.at("unique_binding").get<bool>();
        r.spatial_relationship = j.at("spatial_relationship").get<bool>();
        r.spatial_relationship_loose = j.at("spatial_relationship_loose").get<bool>();
        r.overall = j.at("overall").get<bool>();
        r.overall_loose = j.at("overall_loose").get<bool>();
        if (j.contains("dx") && !j["dx"].is_null()) r.dx = j["dx"].get<double>();
        if (j.contains("dy") && !j["dy"].is_null()) r.dy = j["dy"].get<double>();
        if (j.contains("center1") && !j["center1"].is_null()) r.center1 = Point{j["center1"][0], j["center1"][1]};
        if (j.contains("center2") && !j["center2"].is_null()) r.center2 = Point{j["center2"][0], j["center2"][1]};
    } catch (const nlohmann::json::exception& e) {
        throw InputError(kModule, std::string("malformed evaluation record: ") + e.what());
    }
    return r;
}

SceneQuery query_from_record(const nlohmann::json& record) {
    SceneQuery q;
    try {
        if (!record.contains("shape1")) {
            const auto caption = record.at("caption").get<std::string>();
            const auto parsed = scene::parse_caption(caption);
            if (!parsed) throw InputError(kModule, "caption outside the grammar: '" + caption + "'");
            return {parsed->shape1, parsed->shape2, parsed->color1, parsed->color2, parsed->relation};
        }
        auto shape_of = [&](const char* key) {
            const auto& v = record.at(key);
            if (v.is_number_integer()) {
                const int idx = v.get<int>();
                if (idx < 0 || idx > 2) throw InputError(kModule, std::string("bad shape index in ") + key);
                return kAllShapes[static_cast<std::size_t>(idx)];
            }
            const auto s = parse_shape(v.get<std::string>());
            if (!s) throw InputError(kModule, std::string("unknown shape in ") + key);
            return *s;
        };
        q.shape1 = shape_of("shape1");
        q.shape2 = shape_of("shape2");
        const auto rel = parse_relation(record.at("spatial_relationship").get<std::string>());
        if (!rel) throw InputError(kModule, "unknown spatial_relationship");
        q.relation = *rel;
        auto color_of = [&](const char* key) -> std::optional<Color> {
            if (!record.contains(key) || record[key].is_null()) return std::nullopt;
            const auto c = parse_color(record[key].get<std::string>());
            if (!c) throw InputError(kModule, std::string("unknown color in ") + key);
            return c;
        };
        q.color1 = color_of("color1");
        q.color2 = color_of("color2");
    } catch (const nlohmann::json::exception& e) {
        throw InputError(kModule, std::string("malformed label record: ") + e.what());
    }
    return q;
}

}  // namespace relcirc::raster
