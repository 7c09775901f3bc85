#include "relcirc/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace relcirc {

std::string_view to_string(ShapeKind shape) {
    switch (shape) {
        case ShapeKind::circle: return "circle";
        case ShapeKind::square: return "square";
        case ShapeKind::triangle: return "triangle";
    }
    return "?";
}

std::string_view to_string(RelationLabel relation) {
    switch (relation) {
        case RelationLabel::above: return "above";
        case RelationLabel::below: return "below";
        case RelationLabel::left: return "left";
        case RelationLabel::right: return "right";
        case RelationLabel::upper_left: return "upper_left";
        case RelationLabel::upper_right: return "upper_right";
        case RelationLabel::lower_left: return "lower_left";
        case RelationLabel::lower_right: return "lower_right";
        case RelationLabel::in_front: return "in_front";
        case RelationLabel::behind: return "behind";
    }
    return "?";
}

std::string_view to_string(Color color) { return color == Color::red ? "red" : "blue"; }

std::optional<ShapeKind> parse_shape(std::string_view text) {
    for (auto s : kAllShapes) {
        if (to_string(s) == text) return s;
    }
    return std::nullopt;
}

std::optional<RelationLabel> parse_relation(std::string_view text) {
    for (auto r : kAllRelations) {
        if (to_string(r) == text) return r;
    }
    return std::nullopt;
}

std::optional<Color> parse_color(std::string_view text) {
    if (text == "red") return Color::red;
    if (text == "blue") return Color::blue;
    return std::nullopt;
}

int shape_index(ShapeKind shape) { return static_cast<int>(shape); }

RelationLabel relation_from_offsets(double dx, double dy, double tol) {
    if (std::abs(dx) <= tol) return dy < 0 ? RelationLabel::above : RelationLabel::below;
    if (std::abs(dy) <= tol) return dx < 0 ? RelationLabel::left : RelationLabel::right;
    if (dx < 0 && dy < 0) return RelationLabel::upper_left;
    if (dx < 0 && dy > 0) return RelationLabel::lower_left;
    if (dx > 0 && dy < 0) return RelationLabel::upper_right;
    return RelationLabel::lower_right;
}

OcclusionResult detect_occlusion(Point p1, Point p2, double radius, double threshold) {
    const double w = std::max(0.0, std::min(p1.x, p2.x) + radius - (std::max(p1.x, p2.x) - radius));
    const double h = std::max(0.0, std::min(p1.y, p2.y) + radius - (std::max(p1.y, p2.y) - radius));
    const double box_area = 4.0 * radius * radius;
    OcclusionResult result;
    result.overlap_ratio = (w * h) / box_area;
    result.occluding = result.overlap_ratio > threshold;
    return result;
}

}  // namespace relcirc
