#pragma once

// Two-object synthetic scenes: sampling, rendering, relation annotation and
// paraphrased captions.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "relcirc/geometry.hpp"
#include "relcirc/image.hpp"
#include "relcirc/rng.hpp"

namespace relcirc::scene {

enum class OcclusionMode {
    allow,   // keep overlapping pairs and label them in_front / behind
    reject,  // resample positions until the pair does not occlude
};

struct GenConfig {
    int canvas = 128;
    int radius = 16;
    OcclusionMode occlusion_mode = OcclusionMode::reject;
    double color_drop_prob = 0.5;
    double relation_tolerance = 5.0;
    double occlusion_threshold = 0.05;
    std::uint64_t seed = 0;
    int max_attempts = 1000;

    void validate() const;
    // Inclusive coordinate bounds for object centers.
    int min_coord() const { return radius + 1; }
    int max_coord() const { return canvas - 1 - radius - 1; }
};

inline constexpr Rgb kBackground = {128, 128, 128};
inline constexpr Rgb kRed = {255, 0, 0};
inline constexpr Rgb kBlue = {0, 0, 255};

struct PixelPos {
    int x = 0;
    int y = 0;

    Point point() const { return {static_cast<double>(x), static_cast<double>(y)}; }
    bool operator==(const PixelPos&) const = default;
};

struct SceneSpec {
    ShapeKind shape1 = ShapeKind::circle;  // drawn red
    ShapeKind shape2 = ShapeKind::square;  // drawn blue
    PixelPos pos1;
    PixelPos pos2;
    bool shape1_on_top = false;
    bool occluding = false;
    double overlap_ratio = 0;
    RelationLabel relation = RelationLabel::above;
    std::string caption;
    bool color1_dropped = false;
    bool color2_dropped = false;
    int radius = 16;
    int canvas = 128;

    bool operator==(const SceneSpec&) const = default;
};

// Planar relation of a non-occluding pair; same rule table as
// relation_from_centers.
RelationLabel annotate_relation(PixelPos p1, PixelPos p2, double tol = 5.0);

SceneSpec sample_scene(const GenConfig& config, CounterRng& rng);

// Per-sample generator so sample `index` is reproducible on its own.
inline CounterRng sample_rng(std::uint64_t seed, std::uint64_t index) { return CounterRng(seed, index); }

SceneSpec generate_sample(const GenConfig& config, std::uint64_t index);

// Pixel centers sit on integer coordinates; a pixel is filled iff its center
// lies inside the closed analytic shape.
bool shape_contains(ShapeKind shape, Point center, double radius, Point p);

// Triangle vertices: equilateral, side 2r, apex up, centroid at `center`.
std::array<Point, 3> triangle_vertices(Point center, double radius);

Image render_scene(const SceneSpec& spec);

// Paraphrase table, indexed by relation.
std::span<const std::string_view> paraphrases(RelationLabel relation);

std::string compose_caption(ShapeKind shape1, ShapeKind shape2, RelationLabel relation, std::size_t paraphrase,
                            bool color1, bool color2);

// Draws the paraphrase and the two color-drop coins, then fills caption,
// color1_dropped and color2_dropped.
void make_caption(SceneSpec& spec, CounterRng& rng, double color_drop_prob = 0.5);

struct ParsedCaption {
    std::optional<Color> color1;
    ShapeKind shape1;
    RelationLabel relation;
    std::size_t paraphrase;
    std::optional<Color> color2;
    ShapeKind shape2;
};

// Inverse of compose_caption over the closed caption grammar.
std::optional<ParsedCaption> parse_caption(std::string_view caption);

nlohmann::json to_json(const SceneSpec& spec);
SceneSpec scene_from_json(const nlohmann::json& record);

enum class ImageFormat { png, atns };

struct DatasetSummary {
    std::size_t count = 0;
    std::string labels_path;
};

// Writes images/<index>.<ext> plus labels.jsonl under `out_dir`.
DatasetSummary generate_dataset(const GenConfig& config, std::size_t n, const std::string& out_dir,
                                ImageFormat format = ImageFormat::png);

}  // namespace relcirc::scene
