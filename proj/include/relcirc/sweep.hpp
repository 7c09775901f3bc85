#pragma once

// Prompt-level synopsis runs and the enumeration of the binary
// spatial-relation prompt set used by the sweep.

#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "relcirc/attn_synopsis.hpp"
#include "relcirc/geometry.hpp"

namespace relcirc::sweep {

struct PromptSpec {
    std::string id;  // e.g. "red-circle-upper_left-blue-square"
    std::string caption;
    ShapeKind shape1 = ShapeKind::circle;
    ShapeKind shape2 = ShapeKind::square;
    bool color1 = true;
    bool color2 = true;
    RelationLabel relation = RelationLabel::above;
};

std::string prompt_id(ShapeKind shape1, ShapeKind shape2, RelationLabel relation, bool color1, bool color2);

// 8 planar relations x 21 object pairings: each ordered pair of distinct
// shapes with both colors, only the first color, or only the second color
// (6 x 3), plus the three same-shape pairs with both colors. 168 prompts.
std::vector<PromptSpec> sweep_prompts();

// Image-token and text-token masks for one prompt.
struct MaskSet {
    std::map<std::string, attn::ImageMasks<double>> image;
    std::map<std::string, Eigen::VectorXd> text;
    std::vector<std::pair<std::string, std::string>> pairs;  // (image, text); all combinations when empty
};

// Mask JSON:
//   {"image_masks": {name: [[S values] x N]},
//    "images": [paths], "image_targets": [shape or "background"], "grid": 8,
//    "text_masks": {name: [W values]},
//    "pairs": [[image name, text name], ...]}
// "images" derives per-sample masks from raster detections on each image
// (paths relative to the JSON file).
MaskSet load_mask_set(const std::filesystem::path& path);
MaskSet mask_set_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);

struct SynopsisOptions {
    attn::ReduceMode mode = attn::ReduceMode::mean_time;
    std::size_t k = 5;
    attn::StreamOptions stream{1, true};
};

struct TemplateReport {
    std::string image;
    std::string text;
    attn::SynopsisResult<double> result;
    std::vector<attn::HeadScore> topk;  // conditional branch
};

struct PromptReport {
    std::string prompt_id;
    attn::AttnGeometry geometry;
    attn::Layout layout = attn::Layout::layer_major;
    attn::RowCheck rows;
    attn::ReduceMode mode = attn::ReduceMode::mean_time;
    std::vector<TemplateReport> templates;
};

// Streams one attention file once for every template pair. The layout
// comes from the sidecar axis names (layer-major when absent).
PromptReport run_synopsis(const std::string& attn_path, const MaskSet& masks, const SynopsisOptions& options,
                          std::string prompt_id = {});

nlohmann::json to_json(const PromptReport& report);

std::string topk_csv_header();
void write_topk_rows(std::ostream& out, const PromptReport& report);

// Rows are layers, columns heads.
void write_heatmap_csv(std::ostream& out, const attn::RowMatrix<double>& values);

}  // namespace relcirc::sweep
