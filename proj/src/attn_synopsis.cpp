#include "relcirc/attn_synopsis.hpp"

#include "relcirc/tensor_io.hpp"

namespace relcirc::attn {

namespace {

constexpr const char* kModule = "attn-synopsis";

}  // namespace

AttnGeometry geometry_from_dims(std::span<const std::uint64_t> dims, Layout layout) {
    if (dims.size() != 6) {
        throw InputError(kModule, "attention tensor must have 6 axes, got " + std::to_string(dims.size()));
    }
    const std::uint64_t sample_axis = layout == Layout::layer_major ? dims[2] : dims[0];
    if (sample_axis % 2 != 0) throw InputError(kModule, "sample axis must hold 2N samples (odd extent)");
    AttnGeometry g;
    g.samples = static_cast<std::int64_t>(sample_axis / 2);
    if (layout == Layout::layer_major) {
        g.layers = static_cast<std::int64_t>(dims[0]);
        g.steps = static_cast<std::int64_t>(dims[1]);
    } else {
        g.layers = static_cast<std::int64_t>(dims[1]);
        g.steps = static_cast<std::int64_t>(dims[2]);
    }
    g.heads = static_cast<std::int64_t>(dims[3]);
    g.image_tokens = static_cast<std::int64_t>(dims[4]);
    g.text_tokens = static_cast<std::int64_t>(dims[5]);
    return g;
}

Layout layout_from_axis_names(std::span<const std::string> axis_names) {
    if (axis_names.empty()) return Layout::layer_major;
    if (axis_names.size() != 6) throw InputError(kModule, "attention axis_names must name 6 axes");
    const std::vector<std::string> layer_major = {"layer", "step", "sample", "head", "img_tok", "txt_tok"};
    const std::vector<std::string> sample_major = {"sample", "layer", "step", "head", "img_tok", "txt_tok"};
    const std::vector<std::string> names(axis_names.begin(), axis_names.end());
    if (names == layer_major) return Layout::layer_major;
    if (names == sample_major) return Layout::sample_major;
    throw UnsupportedError(kModule, "unsupported attention axis order");
}

std::vector<TemplateScores<double>> score_templates_streamed(const std::string& path, Layout layout,
                                                             std::span<const TemplatePair> pairs,
                                                             const StreamOptions& options, RowCheck* check) {
    auto reader = tensor_io::stream_slices(path, 0, options.chunk);
    const auto geometry = geometry_from_dims(reader.header().dims, layout);
    std::vector<ScoreAccumulator<double>> accumulators;
    accumulators.reserve(pairs.size());
    for (const auto& pair : pairs) accumulators.emplace_back(geometry, layout, *pair.image_masks, pair.text_mask);

    RowCheck total;
    while (auto slab = reader.next()) {
        if (options.validate_rows) {
            const auto c = validate_attention_rows(slab->values, geometry.text_tokens);
            total.rows += c.rows;
            total.renormalized += c.renormalized;
        }
        for (auto& acc : accumulators) {
            acc.add_slab(slab->values, static_cast<std::int64_t>(slab->first), static_cast<std::int64_t>(slab->count));
        }
    }
    if (check) *check = total;
    std::vector<TemplateScores<double>> out;
    out.reserve(accumulators.size());
    for (const auto& acc : accumulators) out.push_back(acc.finish());
    return out;
}

std::string_view to_string(ReduceMode mode) {
    switch (mode) {
        case ReduceMode::mean_time: return "mean_time";
        case ReduceMode::max_time: return "max_time";
        case ReduceMode::max_step_select: return "max_step_select";
    }
    return "?";
}

std::optional<ReduceMode> parse_reduce_mode(std::string_view text) {
    for (auto m : {ReduceMode::mean_time, ReduceMode::max_time, ReduceMode::max_step_select}) {
        if (to_string(m) == text) return m;
    }
    return std::nullopt;
}

Eigen::VectorXd image_mask_from_detections(std::span<const raster::Detection> detections, int width, int height,
                                           int grid, const MaskTarget& target) {
    if (grid <= 0 || width % grid != 0 || height % grid != 0) {
        throw InputError(kModule, "grid " + std::to_string(grid) + " must divide the image size");
    }
    std::vector<std::uint8_t> pixels(static_cast<std::size_t>(width) * height, 0);
    const bool background = std::holds_alternative<std::monostate>(target);
    for (const auto& d : detections) {
        if (!background && d.shape != std::get<ShapeKind>(target)) continue;
        for (int idx : d.pixels) pixels[static_cast<std::size_t>(idx)] = 1;
    }
    if (background) {
        for (auto& p : pixels) p = !p;
    }
    const int cell_w = width / grid;
    const int cell_h = height / grid;
    Eigen::VectorXd mask = Eigen::VectorXd::Zero(grid * grid);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            if (pixels[static_cast<std::size_t>(y) * width + x]) mask((y / cell_h) * grid + x / cell_w) += 1.0;
        }
    }
    const double total = mask.sum();
    if (total > 0) mask /= total;
    return mask;
}

std::optional<MaskTarget> parse_mask_target(std::string_view text) {
    if (text == "background") return MaskTarget{std::monostate{}};
    if (auto s = parse_shape(text)) return MaskTarget{*s};
    return std::nullopt;
}

RowCheck validate_attention_rows(std::span<float> values, std::int64_t row_width, double tol, double renorm_tol) {
    if (row_width <= 0 || values.size() % static_cast<std::size_t>(row_width) != 0) {
        throw SizeError(kModule, "attention values are not a whole number of rows");
    }
    RowCheck check;
    const auto w = static_cast<std::size_t>(row_width);
    for (std::size_t start = 0; start < values.size(); start += w) {
        double sum = 0;
        for (std::size_t j = 0; j < w; ++j) {
            const float v = values[start + j];
            if (v < 0 || !std::isfinite(v)) {
                throw InputError(kModule, "attention row " + std::to_string(start / w) + " has a negative or non-finite entry");
            }
            sum += v;
        }
        ++check.rows;
        const double err = std::abs(sum - 1.0);
        if (err <= tol) continue;
        if (err > renorm_tol) {
            throw InputError(kModule, "attention row " + std::to_string(start / w) + " sums to " + std::to_string(sum));
        }
        for (std::size_t j = 0; j < w; ++j) values[start + j] = static_cast<float>(values[start + j] / sum);
        ++check.renormalized;
    }
    return check;
}

}  // namespace relcirc::attn
