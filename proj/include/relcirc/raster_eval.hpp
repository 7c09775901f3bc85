#pragma once

// Image -> metrics pipeline: per-channel thresholding, connected components,
// boundary tracing, polygon simplification and scoring against a scene query.

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "relcirc/geometry.hpp"
#include "relcirc/image.hpp"

namespace relcirc::raster {

struct ParseConfig {
    int intensity_threshold = 180;  // strict: value > threshold
    int min_area = 100;             // components below this are discarded
    int color_margin = 25;
    double epsilon_fraction = 0.04;  // Douglas-Peucker epsilon / perimeter
    std::array<int, 3> channel_order = {0, 1, 2};
};

struct BBox {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // inclusive pixel bounds
    bool operator==(const BBox&) const = default;
};

struct Detection {
    ShapeKind shape = ShapeKind::circle;
    BBox bbox;
    Point center;  // pixel centroid of the component
    int area = 0;  // pixel count
    std::array<double, 3> mean_rgb{};
    bool is_red = false;
    bool is_blue = false;
    int channel = 0;
    std::vector<int> pixels;  // flat indices y * width + x of the component
};

struct PixelPoint {
    int x = 0;
    int y = 0;
    bool operator==(const PixelPoint&) const = default;
};

// Outer boundary of the component containing `start` (its top-left-most
// pixel), traced clockwise with Moore neighborhoods.
std::vector<PixelPoint> trace_boundary(std::span<const std::uint8_t> mask, int width, int height, PixelPoint start);

// Closed-curve Douglas-Peucker; returns the retained vertices in order.
std::vector<Point> simplify_closed(std::span<const Point> points, double epsilon);

double closed_perimeter(std::span<const Point> points);

// Vertex count after simplification: 3 -> triangle, 4 -> square, else circle.
// Throws ClassificationError for fewer than 3 points or a collinear boundary.
ShapeKind classify_polygon(std::span<const Point> boundary, double epsilon_fraction = 0.04);

std::vector<Detection> parse_objects(const Image& image, const ParseConfig& config = {});

struct SceneQuery {
    ShapeKind shape1 = ShapeKind::circle;
    ShapeKind shape2 = ShapeKind::square;
    std::optional<Color> color1;
    std::optional<Color> color2;
    RelationLabel relation = RelationLabel::above;
};

struct EvalConfig {
    double relation_tolerance = 5.0;
    double loose_threshold = 8.0;
};

struct EvalResult {
    bool shape = false;
    bool color = false;
    bool exist_binding = false;
    bool unique_binding = false;
    bool spatial_relationship = false;
    bool spatial_relationship_loose = false;
    bool overall = false;
    bool overall_loose = false;
    std::optional<double> dx;
    std::optional<double> dy;
    std::optional<Point> center1;
    std::optional<Point> center2;
};

// Relation-specific inequalities with margin `threshold`. Cardinal relations
// constrain one axis only, diagonals both. Occlusion relations throw
// UnsupportedError.
bool loose_relation_check(double dx, double dy, RelationLabel relation, double threshold = 8.0);

EvalResult evaluate_scene(std::span<const Detection> detections, const SceneQuery& query,
                          const EvalConfig& config = {});

struct MetricSummary {
    std::size_t count = 0;
    double shape = 0;
    double color = 0;
    double exist_binding = 0;
    double unique_binding = 0;
    double spatial_relationship = 0;
    double spatial_relationship_loose = 0;
    double overall = 0;
    double overall_loose = 0;
    std::size_t bound_count = 0;
    double mean_dx = 0;  // over uniquely bound samples, NaN when none
    double mean_dy = 0;
};

MetricSummary aggregate_metrics(std::span<const EvalResult> results);

// Column set of the accuracy table: shape, color, bind, sp rel (loose),
// sp rel+ (strict), Dx, Dy.
std::string summary_csv_header();
std::string summary_csv_row(const MetricSummary& summary);

nlohmann::json to_json(const EvalResult& result);
nlohmann::json to_json(const Detection& detection);
EvalResult eval_result_from_json(const nlohmann::json& j);

// Query from a label record: explicit shape1/shape2/color1/color2/
// spatial_relationship fields when present, otherwise the parsed caption.
// A null or missing color means the caption does not name it.
SceneQuery query_from_record(const nlohmann::json& record);

}  // namespace relcirc::raster
