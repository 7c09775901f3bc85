#include "relcirc/scene.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "relcirc/errors.hpp"

namespace relcirc::scene {

namespace {

constexpr const char* kModule = "scene-gen";

constexpr std::string_view kUpperLeft[] = {"to the upper left of", "above and to the left of",
                                           "diagonally up and left from"};
constexpr std::string_view kUpperRight[] = {"to the upper right of", "above and to the right of",
                                            "diagonally up and right from"};
constexpr std::string_view kLowerLeft[] = {"to the lower left of", "below and to the left of",
                                           "diagonally down and left from"};
constexpr std::string_view kLowerRight[] = {"to the lower right of", "below and to the right of",
                                            "diagonally down and right from"};
constexpr std::string_view kAbove[] = {"above", "directly above", "higher than"};
constexpr std::string_view kBelow[] = {"below", "directly below", "lower than"};
constexpr std::string_view kLeft[] = {"to the left of", "left of"};
constexpr std::string_view kRight[] = {"to the right of", "right of"};
constexpr std::string_view kInFront[] = {"in front of", "overlapping and in front of"};
constexpr std::string_view kBehind[] = {"behind", "overlapped by"};

std::vector<std::string_view> split_words(std::string_view text) {
    std::vector<std::string_view> words;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && text[i] == ' ') ++i;
        const std::size_t start = i;
        while (i < text.size() && text[i] != ' ') ++i;
        if (i > start) words.push_back(text.substr(start, i - start));
    }
    return words;
}

// Parses "[color] shape" spanning exactly words[begin, end).
bool parse_object(std::span<const std::string_view> words, Color expected_color, std::optional<Color>& color,
                  ShapeKind& shape) {
    if (words.size() == 2) {
        const auto c = parse_color(words[0]);
        const auto s = parse_shape(words[1]);
        if (!c || *c != expected_color || !s) return false;
        color = c;
        shape = *s;
        return true;
    }
    if (words.size() == 1) {
        const auto s = parse_shape(words[0]);
        if (!s) return false;
        color.reset();
        shape = *s;
        return true;
    }
    return false;
}

}  // namespace

void GenConfig::validate() const {
    if (!(color_drop_prob >= 0.0 && color_drop_prob <= 1.0)) {
        throw InputError(kModule, "color_drop_prob must lie in [0, 1]");
    }
    if (!(occlusion_threshold > 0.0 && occlusion_threshold < 1.0)) {
        throw InputError(kModule, "occlusion_threshold must lie in (0, 1)");
    }
    if (radius < 1 || min_coord() > max_coord()) throw InputError(kModule, "radius does not fit the canvas");
    if (max_attempts < 1) throw InputError(kModule, "max_attempts must be >= 1");
}

RelationLabel annotate_relation(PixelPos p1, PixelPos p2, double tol) {
    return relation_from_centers(p1.point(), p2.point(), tol);
}

SceneSpec sample_scene(const GenConfig& config, CounterRng& rng) {
    config.validate();
    SceneSpec spec;
    spec.radius = config.radius;
    spec.canvas = config.canvas;

    const auto first = static_cast<std::size_t>(rng.uniform_int(0, 2));
    const auto offset = static_cast<std::size_t>(rng.uniform_int(1, 2));
    spec.shape1 = kAllShapes[first];
    spec.shape2 = kAllShapes[(first + offset) % 3];

    const int lo = config.min_coord();
    const int hi = config.max_coord();
    auto draw_positions = [&] {
        spec.pos1 = {static_cast<int>(rng.uniform_int(lo, hi)), static_cast<int>(rng.uniform_int(lo, hi))};
        spec.pos2 = {static_cast<int>(rng.uniform_int(lo, hi)), static_cast<int>(rng.uniform_int(lo, hi))};
        return detect_occlusion(spec.pos1.point(), spec.pos2.point(), config.radius, config.occlusion_threshold);
    };
    auto occlusion = draw_positions();
    if (config.occlusion_mode == OcclusionMode::reject) {
        int attempts = 1;
        while (occlusion.occluding) {
            if (attempts++ >= config.max_attempts) {
                throw GenerationError(kModule, "no non-occluding placement after " +
                                                   std::to_string(config.max_attempts) + " attempts");
            }
            occlusion = draw_positions();
        }
    }
    spec.shape1_on_top = rng.bernoulli(0.5);
    spec.occluding = occlusion.occluding;
    spec.overlap_ratio = occlusion.overlap_ratio;
    if (spec.occluding) {
        spec.relation = spec.shape1_on_top ? RelationLabel::in_front : RelationLabel::behind;
    } else {
        spec.relation = annotate_relation(spec.pos1, spec.pos2, config.relation_tolerance);
    }
    make_caption(spec, rng, config.color_drop_prob);
    return spec;
}

SceneSpec generate_sample(const GenConfig& config, std::uint64_t index) {
    auto rng = sample_rng(config.seed, index);
    return sample_scene(config, rng);
}

std::array<Point, 3> triangle_vertices(Point center, double radius) {
    const double height = std::sqrt(3.0) * radius;
    return {Point{center.x, center.y - 2.0 * height / 3.0}, Point{center.x - radius, center.y + height / 3.0},
            Point{center.x + radius, center.y + height / 3.0}};
}

bool shape_contains(ShapeKind shape, Point center, double radius, Point p) {
    const double dx = p.x - center.x;
    const double dy = p.y - center.y;
    switch (shape) {
        case ShapeKind::circle: return dx * dx + dy * dy <= radius * radius;
        case ShapeKind::square: return std::abs(dx) <= radius && std::abs(dy) <= radius;
        case ShapeKind::triangle: {
            const auto v = triangle_vertices(center, radius);
            constexpr double eps = 1e-9;
            auto edge = [&](Point a, Point b) { return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x); };
            const double e0 = edge(v[0], v[1]);
            const double e1 = edge(v[1], v[2]);
            const double e2 = edge(v[2], v[0]);
            const bool has_neg = e0 < -eps || e1 < -eps || e2 < -eps;
            const bool has_pos = e0 > eps || e1 > eps || e2 > eps;
            return !(has_neg && has_pos);
        }
    }
    return false;
}

Image render_scene(const SceneSpec& spec) {
    Image image(spec.canvas, spec.canvas, kBackground);
    auto draw = [&](ShapeKind shape, PixelPos pos, Rgb color) {
        // The triangle apex sits 2/sqrt(3) radii above its centroid.
        const int r = static_cast<int>(std::ceil(2.0 * spec.radius / std::sqrt(3.0))) + 1;
        for (int y = std::max(0, pos.y - r); y <= std::min(spec.canvas - 1, pos.y + r); ++y) {
            for (int x = std::max(0, pos.x - r); x <= std::min(spec.canvas - 1, pos.x + r); ++x) {
                if (shape_contains(shape, pos.point(), spec.radius, {double(x), double(y)})) image.set(x, y, color);
            }
        }
    };
    if (spec.shape1_on_top) {
        draw(spec.shape2, spec.pos2, kBlue);
        draw(spec.shape1, spec.pos1, kRed);
    } else {
        draw(spec.shape1, spec.pos1, kRed);
        draw(spec.shape2, spec.pos2, kBlue);
    }
    return image;
}

std::span<const std::string_view> paraphrases(RelationLabel relation) {
    switch (relation) {
        case RelationLabel::upper_left: return kUpperLeft;
        case RelationLabel::upper_right: return kUpperRight;
        case RelationLabel::lower_left: return kLowerLeft;
        case RelationLabel::lower_right: return kLowerRight;
        case RelationLabel::above: return kAbove;
        case RelationLabel::below: return kBelow;
        case RelationLabel::left: return kLeft;
        case RelationLabel::right: return kRight;
        case RelationLabel::in_front: return kInFront;
        case RelationLabel::behind: return kBehind;
    }
    return {};
}

std::string compose_caption(ShapeKind shape1, ShapeKind shape2, RelationLabel relation, std::size_t paraphrase,
                            bool color1, bool color2) {
    const auto phrases = paraphrases(relation);
    if (paraphrase >= phrases.size()) throw InputError(kModule, "paraphrase index out of range");
    std::string caption;
    if (color1) caption += "red ";
    caption += to_string(shape1);
    caption += " is ";
    caption += phrases[paraphrase];
    caption += ' ';
    if (color2) caption += "blue ";
    caption += to_string(shape2);
    return caption;
}

void make_caption(SceneSpec& spec, CounterRng& rng, double color_drop_prob) {
    const auto phrases = paraphrases(spec.relation);
    const auto idx = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(phrases.size()) - 1));
    spec.color1_dropped = rng.bernoulli(color_drop_prob);
    spec.color2_dropped = rng.bernoulli(color_drop_prob);
    spec.caption = compose_caption(spec.shape1, spec.shape2, spec.relation, idx, !spec.color1_dropped,
                                   !spec.color2_dropped);
}

std::optional<ParsedCaption> parse_caption(std::string_view caption) {
    const auto words = split_words(caption);
    std::optional<ParsedCaption> found;
    int matches = 0;
    for (std::size_t is_pos = 1; is_pos < words.size() && is_pos <= 2; ++is_pos) {
        if (words[is_pos] != "is") continue;
        ParsedCaption parsed{};
        if (!parse_object(std::span(words).subspan(0, is_pos), Color::red, parsed.color1, parsed.shape1)) continue;
        for (auto relation : kAllRelations) {
            const auto phrases = paraphrases(relation);
            for (std::size_t k = 0; k < phrases.size(); ++k) {
                const auto phrase_words = split_words(phrases[k]);
                const std::size_t start = is_pos + 1;
                if (start + phrase_words.size() > words.size()) continue;
                if (!std::equal(phrase_words.begin(), phrase_words.end(), words.begin() + start)) continue;
                auto tail = std::span(words).subspan(start + phrase_words.size());
                if (!parse_object(tail, Color::blue, parsed.color2, parsed.shape2)) continue;
                parsed.relation = relation;
                parsed.paraphrase = k;
                found = parsed;
                ++matches;
            }
        }
    }
    if (matches != 1) return std::nullopt;
    return found;
}

nlohmann::json to_json(const SceneSpec& spec) {
    nlohmann::json j;
    j["shape1"] = to_string(spec.shape1);
    j["shape2"] = to_string(spec.shape2);
    j["location1"] = {spec.pos1.x, spec.pos1.y};
    j["location2"] = {spec.pos2.x, spec.pos2.y};
    j["spatial_relationship"] = to_string(spec.relation);
    j["occluding"] = spec.occluding;
    j["overlap_ratio"] = spec.overlap_ratio;
    j["shape1_on_top"] = spec.shape1_on_top;
    j["caption"] = spec.caption;
    j["color1"] = spec.color1_dropped ? nlohmann::json(nullptr) : nlohmann::json("red");
    j["color2"] = spec.color2_dropped ? nlohmann::json(nullptr) : nlohmann::json("blue");
    j["radius"] = spec.radius;
    j["canvas"] = spec.canvas;
    return j;
}

SceneSpec scene_from_json(const nlohmann::json& j) {
    auto shape_of = [&](const char* key) {
        const auto& v = j.at(key);
        if (v.is_number_integer()) {
            const int idx = v.get<int>();
            if (idx < 0 || idx > 2) throw InputError(kModule, std::string("bad shape index in ") + key);
            return kAllShapes[static_cast<std::size_t>(idx)];
        }
        const auto s = parse_shape(v.get<std::string>());
        if (!s) throw InputError(kModule, std::string("unknown shape in ") + key);
        return *s;
    };
    try {
        SceneSpec spec;
        spec.shape1 = shape_of("shape1");
        spec.shape2 = shape_of("shape2");
        spec.pos1 = {j.at("location1").at(0).get<int>(), j.at("location1").at(1).get<int>()};
        spec.pos2 = {j.at("location2").at(0).get<int>(), j.at("location2").at(1).get<int>()};
        const auto rel = parse_relation(j.at("spatial_relationship").get<std::string>());
        if (!rel) throw InputError(kModule, "unknown spatial_relationship");
        spec.relation = *rel;
        spec.occluding = j.value("occluding", false);
        spec.overlap_ratio = j.value("overlap_ratio", 0.0);
        spec.shape1_on_top = j.value("shape1_on_top", false);
        spec.caption = j.value("caption", std::string{});
        spec.color1_dropped = j.contains("color1") && j["color1"].is_null();
        spec.color2_dropped = j.contains("color2") && j["color2"].is_null();
        spec.radius = j.value("radius", 16);
        spec.canvas = j.value("canvas", 128);
        return spec;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(kModule, std::string("malformed scene record: ") + e.what());
    }
}

DatasetSummary generate_dataset(const GenConfig& config, std::size_t n, const std::string& out_dir,
                                ImageFormat format) {
    config.validate();
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "images", ec);
    if (ec) throw IoError(kModule, "cannot create " + out_dir + ": " + ec.message());

    DatasetSummary summary;
    summary.labels_path = (fs::path(out_dir) / "labels.jsonl").string();
    std::ofstream labels(summary.labels_path);
    if (!labels) throw IoError(kModule, "cannot write " + summary.labels_path);

    const char* ext = format == ImageFormat::png ? ".png" : ".atns";
    for (std::size_t i = 0; i < n; ++i) {
        const auto spec = generate_sample(config, i);
        char name[32];
        std::snprintf(name, sizeof(name), "%06zu%s", i, ext);
        const auto rel = (fs::path("images") / name).string();
        try {
            write_image((fs::path(out_dir) / rel).string(), render_scene(spec));
        } catch (const Error& e) {
            throw IoError(kModule, "sample " + std::to_string(i) + ": " + e.what());
        }
        auto record = to_json(spec);
        record["index"] = i;
        record["image"] = rel;
        labels << record.dump() << '\n';
        if (!labels) throw IoError(kModule, "sample " + std::to_string(i) + ": failed writing labels");
        ++summary.count;
    }
    return summary;
}

}  // namespace relcirc::scene
