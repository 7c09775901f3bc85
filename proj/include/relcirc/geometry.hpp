#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace relcirc {

enum class ShapeKind { circle, square, triangle };

inline constexpr std::array<ShapeKind, 3> kAllShapes = {ShapeKind::circle, ShapeKind::square, ShapeKind::triangle};

enum class RelationLabel {
    above,
    below,
    left,
    right,
    upper_left,
    upper_right,
    lower_left,
    lower_right,
    in_front,
    behind,
};

inline constexpr std::array<RelationLabel, 8> kPlanarRelations = {
    RelationLabel::above,      RelationLabel::below,       RelationLabel::left,       RelationLabel::right,
    RelationLabel::upper_left, RelationLabel::upper_right, RelationLabel::lower_left, RelationLabel::lower_right,
};

inline constexpr std::array<RelationLabel, 10> kAllRelations = {
    RelationLabel::above,      RelationLabel::below,       RelationLabel::left,       RelationLabel::right,
    RelationLabel::upper_left, RelationLabel::upper_right, RelationLabel::lower_left, RelationLabel::lower_right,
    RelationLabel::in_front,   RelationLabel::behind,
};

enum class Color { red, blue };

std::string_view to_string(ShapeKind shape);
std::string_view to_string(RelationLabel relation);
std::string_view to_string(Color color);

std::optional<ShapeKind> parse_shape(std::string_view text);
std::optional<RelationLabel> parse_relation(std::string_view text);
std::optional<Color> parse_color(std::string_view text);

// Index used in dataset labels: circle 0, square 1, triangle 2.
int shape_index(ShapeKind shape);

inline bool is_planar(RelationLabel relation) {
    return relation != RelationLabel::in_front && relation != RelationLabel::behind;
}

struct Point {
    double x = 0;
    double y = 0;
};

// Canonical relation of object 1 relative to object 2 from center offsets
// dx = x1 - x2, dy = y1 - y2 (y grows downward). Vertical alignment wins ties:
// |dx| <= tol gives above/below before |dy| <= tol gives left/right.
RelationLabel relation_from_offsets(double dx, double dy, double tol = 5.0);

inline RelationLabel relation_from_centers(Point c1, Point c2, double tol = 5.0) {
    return relation_from_offsets(c1.x - c2.x, c1.y - c2.y, tol);
}

struct OcclusionResult {
    bool occluding = false;
    double overlap_ratio = 0;
};

// Axis-aligned boxes [x-r, x+r] x [y-r, y+r]; the ratio is the intersection
// area over the smaller box area.
OcclusionResult detect_occlusion(Point p1, Point p2, double radius, double threshold = 0.05);

}  // namespace relcirc
