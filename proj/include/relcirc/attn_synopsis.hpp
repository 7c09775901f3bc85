#pragma once

// Attention synopsis: contract the cross-attention tensor
// [layers, steps, 2N samples, heads, image tokens, text tokens] against
// image-token x text-token templates and reduce to layer x head matrices.
//
// The first N samples are the unconditional branch, the last N the
// conditional branch. Sample k of either branch uses image mask k.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "relcirc/errors.hpp"
#include "relcirc/geometry.hpp"
#include "relcirc/raster_eval.hpp"

namespace relcirc::attn {

struct AttnGeometry {
    std::int64_t layers = 0;
    std::int64_t steps = 0;
    std::int64_t samples = 0;  // N per branch; the sample axis holds 2N
    std::int64_t heads = 0;
    std::int64_t image_tokens = 0;
    std::int64_t text_tokens = 0;

    std::int64_t element_count() const { return layers * steps * 2 * samples * heads * image_tokens * text_tokens; }
    bool operator==(const AttnGeometry&) const = default;
};

enum class Layout {
    layer_major,   // [L, T, 2N, H, S, W]
    sample_major,  // [2N, L, T, H, S, W], the streaming-friendly export order
};

enum class Branch { uncond = 0, cond = 1 };

// Geometry and layout from tensor dims plus optional axis names.
AttnGeometry geometry_from_dims(std::span<const std::uint64_t> dims, Layout layout);
Layout layout_from_axis_names(std::span<const std::string> axis_names);

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Per-sample image-token masks, one row per generated image (N x S). A zero
// row marks a sample excluded from the means.
template <typename Scalar = double>
struct ImageMasks {
    RowMatrix<Scalar> rows;

    static ImageMasks shared(const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& mask, std::int64_t samples) {
        ImageMasks m;
        m.rows = mask.transpose().replicate(samples, 1);
        return m;
    }
    bool included(std::int64_t sample) const { return rows.row(sample).cwiseAbs().sum() > Scalar(0); }
};

// Scores indexed [layer, step, head].
template <typename Scalar = double>
struct StepScores {
    std::int64_t layers = 0, steps = 0, heads = 0;
    Eigen::Array<Scalar, Eigen::Dynamic, 1> data;

    StepScores() = default;
    StepScores(std::int64_t l, std::int64_t t, std::int64_t h)
        : layers(l), steps(t), heads(h), data(Eigen::Array<Scalar, Eigen::Dynamic, 1>::Zero(l * t * h)) {}

    Scalar& operator()(std::int64_t l, std::int64_t t, std::int64_t h) { return data((l * steps + t) * heads + h); }
    Scalar operator()(std::int64_t l, std::int64_t t, std::int64_t h) const { return data((l * steps + t) * heads + h); }
};

template <typename Scalar = double>
struct TemplateScores {
    StepScores<Scalar> uncond;
    StepScores<Scalar> cond;
    std::int64_t included_samples = 0;
};

// Sums per-sample template contractions over leading-axis slabs and divides
// by the number of included samples at the end. Works for either layout, so
// the full tensor is just one slab.
template <typename Scalar = double>
class ScoreAccumulator {
public:
    ScoreAccumulator(const AttnGeometry& geometry, Layout layout, const ImageMasks<Scalar>& image_masks,
                     const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& text_mask)
        : geom_(geometry),
          layout_(layout),
          masks_(image_masks),
          text_(text_mask),
          sums_{StepScores<Scalar>(geometry.layers, geometry.steps, geometry.heads),
                StepScores<Scalar>(geometry.layers, geometry.steps, geometry.heads)} {
        if (text_.size() != geom_.text_tokens) {
            throw InputError("attn-synopsis", "text mask width " + std::to_string(text_.size()) +
                                                  " does not match attention width " + std::to_string(geom_.text_tokens));
        }
        if (masks_.rows.rows() != geom_.samples || masks_.rows.cols() != geom_.image_tokens) {
            throw InputError("attn-synopsis", "image masks must be N x S = " + std::to_string(geom_.samples) + " x " +
                                                  std::to_string(geom_.image_tokens));
        }
        include_.resize(static_cast<std::size_t>(geom_.samples));
        for (std::int64_t n = 0; n < geom_.samples; ++n) {
            include_[static_cast<std::size_t>(n)] = masks_.included(n);
            included_count_ += include_[static_cast<std::size_t>(n)];
        }
        for (Eigen::Index j = 0; j < text_.size(); ++j) {
            if (text_(j) != Scalar(0)) nz_text_.push_back(j);
        }
    }

    // `values` holds `count` rows of the leading axis starting at `first`.
    void add_slab(std::span<const float> values, std::int64_t first, std::int64_t count) {
        const std::int64_t block = geom_.image_tokens * geom_.text_tokens;
        const std::int64_t two_n = 2 * geom_.samples;
        const std::int64_t expected = count * (geom_.element_count() / leading_extent());
        if (static_cast<std::int64_t>(values.size()) != expected) {
            throw SizeError("attn-synopsis", "slab has " + std::to_string(values.size()) + " values, expected " +
                                                 std::to_string(expected));
        }
        for (std::int64_t r = 0; r < count; ++r) {
            const std::int64_t lead = first + r;
            if (layout_ == Layout::layer_major) {
                const std::int64_t l = lead;
                for (std::int64_t t = 0; t < geom_.steps; ++t)
                    for (std::int64_t s = 0; s < two_n; ++s) {
                        const std::int64_t n = s % geom_.samples;
                        if (!include_[static_cast<std::size_t>(n)]) continue;
                        auto& out = sums_[s < geom_.samples ? 0 : 1];
                        for (std::int64_t h = 0; h < geom_.heads; ++h) {
                            const std::int64_t offset = (((r * geom_.steps + t) * two_n + s) * geom_.heads + h) * block;
                            out(l, t, h) += contract(values.data() + offset, n);
                        }
                    }
            } else {
                const std::int64_t s = lead;
                const std::int64_t n = s % geom_.samples;
                if (!include_[static_cast<std::size_t>(n)]) continue;
                auto& out = sums_[s < geom_.samples ? 0 : 1];
                for (std::int64_t l = 0; l < geom_.layers; ++l)
                    for (std::int64_t t = 0; t < geom_.steps; ++t)
                        for (std::int64_t h = 0; h < geom_.heads; ++h) {
                            const std::int64_t offset = (((r * geom_.layers + l) * geom_.steps + t) * geom_.heads + h) * block;
                            out(l, t, h) += contract(values.data() + offset, n);
                        }
            }
        }
    }

    TemplateScores<Scalar> finish() const {
        if (included_count_ == 0) {
            throw EmptyResultError("attn-synopsis", "every sample is excluded (target absent from all images)");
        }
        TemplateScores<Scalar> out;
        out.uncond = sums_[0];
        out.cond = sums_[1];
        out.uncond.data /= Scalar(included_count_);
        out.cond.data /= Scalar(included_count_);
        out.included_samples = included_count_;
        return out;
    }

    std::int64_t leading_extent() const {
        return layout_ == Layout::layer_major ? geom_.layers : 2 * geom_.samples;
    }

private:
    // sum_i img[n, i] * sum_j A(i, j) * text[j] over one S x W block.
    Scalar contract(const float* block, std::int64_t n) const {
        Scalar total = 0;
        const std::int64_t w = geom_.text_tokens;
        for (std::int64_t i = 0; i < geom_.image_tokens; ++i) {
            const Scalar img = masks_.rows(n, i);
            if (img == Scalar(0)) continue;
            Scalar row = 0;
            for (auto j : nz_text_) row += static_cast<Scalar>(block[i * w + j]) * text_(j);
            total += img * row;
        }
        return total;
    }

    AttnGeometry geom_;
    Layout layout_;
    ImageMasks<Scalar> masks_;
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> text_;
    std::vector<Eigen::Index> nz_text_;
    std::vector<char> include_;
    std::int64_t included_count_ = 0;
    StepScores<Scalar> sums_[2];
};

// In-memory scoring of a whole tensor.
template <typename Scalar = double>
TemplateScores<Scalar> score_templates(std::span<const float> attn, const AttnGeometry& geometry, Layout layout,
                                       const ImageMasks<Scalar>& image_masks,
                                       const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& text_mask) {
    ScoreAccumulator<Scalar> acc(geometry, layout, image_masks, text_mask);
    acc.add_slab(attn, 0, acc.leading_extent());
    return acc.finish();
}

struct StreamOptions {
    std::uint64_t chunk = 1;        // leading-axis rows per slab
    bool validate_rows = false;     // softmax check with renormalization
};

struct RowCheck {
    std::int64_t rows = 0;
    std::int64_t renormalized = 0;
};

// Streams an ATNS file along its leading axis; memory stays at one slab.
// Several masks pairs can share one pass over the file.
struct TemplatePair {
    const ImageMasks<double>* image_masks = nullptr;
    Eigen::VectorXd text_mask;
};

std::vector<TemplateScores<double>> score_templates_streamed(const std::string& path, Layout layout,
                                                             std::span<const TemplatePair> pairs,
                                                             const StreamOptions& options, RowCheck* check = nullptr);

inline TemplateScores<double> score_templates_streamed(const std::string& path, Layout layout,
                                                       const ImageMasks<double>& image_masks,
                                                       const Eigen::VectorXd& text_mask, const StreamOptions& options) {
    const TemplatePair pair{&image_masks, text_mask};
    return score_templates_streamed(path, layout, std::span(&pair, 1), options).front();
}

enum class ReduceMode { mean_time, max_time, max_step_select };

std::string_view to_string(ReduceMode mode);
std::optional<ReduceMode> parse_reduce_mode(std::string_view text);

template <typename Scalar = double>
struct BranchSynopsis {
    RowMatrix<Scalar> values;                                  // [L, H]
    std::optional<Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> argmax_step;  // [L, H]
};

template <typename Scalar = double>
BranchSynopsis<Scalar> reduce_branch(const StepScores<Scalar>& scores, ReduceMode mode) {
    BranchSynopsis<Scalar> out;
    out.values.resize(scores.layers, scores.heads);
    if (mode == ReduceMode::max_step_select) out.argmax_step.emplace(scores.layers, scores.heads);
    for (std::int64_t l = 0; l < scores.layers; ++l) {
        for (std::int64_t h = 0; h < scores.heads; ++h) {
            Scalar sum = 0;
            Scalar best = scores(l, 0, h);
            int best_t = 0;
            for (std::int64_t t = 0; t < scores.steps; ++t) {
                const Scalar v = scores(l, t, h);
                sum += v;
                if (v > best) {
                    best = v;
                    best_t = static_cast<int>(t);
                }
            }
            out.values(l, h) = mode == ReduceMode::mean_time ? sum / Scalar(scores.steps) : best;
            if (out.argmax_step) (*out.argmax_step)(l, h) = best_t;
        }
    }
    return out;
}

template <typename Scalar = double>
struct SynopsisResult {
    BranchSynopsis<Scalar> cond;
    BranchSynopsis<Scalar> uncond;
    StepScores<Scalar> per_step_cond;
    StepScores<Scalar> per_step_uncond;
    ReduceMode mode = ReduceMode::mean_time;
    std::int64_t samples_used = 0;
};

template <typename Scalar = double>
SynopsisResult<Scalar> reduce_synopsis(const TemplateScores<Scalar>& scores, ReduceMode mode) {
    SynopsisResult<Scalar> out;
    out.cond = reduce_branch(scores.cond, mode);
    out.uncond = reduce_branch(scores.uncond, mode);
    out.per_step_cond = scores.cond;
    out.per_step_uncond = scores.uncond;
    out.mode = mode;
    out.samples_used = scores.included_samples;
    return out;
}

struct HeadScore {
    int layer = 0;
    int head = 0;
    double score = 0;
    bool operator==(const HeadScore&) const = default;
};

// Descending by score; ties by (layer, head) ascending.
template <typename Derived>
std::vector<HeadScore> topk_heads(const Eigen::MatrixBase<Derived>& synopsis, std::size_t k) {
    const auto total = static_cast<std::size_t>(synopsis.rows() * synopsis.cols());
    if (k > total) {
        throw InputError("attn-synopsis", "k = " + std::to_string(k) + " exceeds layers x heads = " + std::to_string(total));
    }
    std::vector<HeadScore> all;
    all.reserve(total);
    for (Eigen::Index l = 0; l < synopsis.rows(); ++l)
        for (Eigen::Index h = 0; h < synopsis.cols(); ++h)
            all.push_back({static_cast<int>(l), static_cast<int>(h), static_cast<double>(synopsis(l, h))});
    std::stable_sort(all.begin(), all.end(), [](const HeadScore& a, const HeadScore& b) {
        if (a.score != b.score) return a.score > b.score;
        return std::tie(a.layer, a.head) < std::tie(b.layer, b.head);
    });
    all.resize(k);
    return all;
}

inline std::string head_name(const HeadScore& h) { return "L" + std::to_string(h.layer) + "H" + std::to_string(h.head); }

struct QkMetadata {
    int layer = -1;
    int head = -1;
    std::string word;
};

template <typename Scalar = double>
struct QkMap {
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> logits;  // one per image token
    QkMetadata meta;
};

// logits_i = (pos_emb_i Wq) . (word_vec Wk), divided by sqrt(d_head) when
// `scaled`.
template <typename Scalar, typename DerivedP, typename DerivedQ, typename DerivedK, typename DerivedW>
QkMap<Scalar> qk_logit_map(const Eigen::MatrixBase<DerivedP>& pos_emb, const Eigen::MatrixBase<DerivedQ>& wq,
                           const Eigen::MatrixBase<DerivedK>& wk, const Eigen::MatrixBase<DerivedW>& word_vec,
                           bool scaled, QkMetadata meta = {}) {
    const auto d = pos_emb.cols();
    if (wq.rows() != d || wk.rows() != d || word_vec.size() != d || wq.cols() != wk.cols()) {
        throw InputError("attn-synopsis", "qk_logit_map dimension mismatch: pos_emb " + std::to_string(pos_emb.rows()) +
                                              "x" + std::to_string(d) + ", Wq " + std::to_string(wq.rows()) + "x" +
                                              std::to_string(wq.cols()) + ", Wk " + std::to_string(wk.rows()) + "x" +
                                              std::to_string(wk.cols()) + ", word " + std::to_string(word_vec.size()));
    }
    using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    const Mat queries = pos_emb.template cast<Scalar>() * wq.template cast<Scalar>();
    const Vec key = wk.template cast<Scalar>().transpose() * word_vec.template cast<Scalar>().reshaped();
    QkMap<Scalar> out;
    out.logits = queries * key;
    if (scaled) out.logits /= std::sqrt(static_cast<Scalar>(wq.cols()));
    out.meta = std::move(meta);
    return out;
}

// Image mask target: a shape class or the background complement.
using MaskTarget = std::variant<ShapeKind, std::monostate>;

// Binary mask of the target's pixels, average-pooled to grid x grid cells
// (row-major tokens) and normalized to sum 1. All-zero when the target is
// absent.
Eigen::VectorXd image_mask_from_detections(std::span<const raster::Detection> detections, int width, int height,
                                           int grid, const MaskTarget& target);

std::optional<MaskTarget> parse_mask_target(std::string_view text);

// Softmax-row check over the last axis: rows within `tol` of 1 pass, rows
// within `renorm_tol` are rescaled in place, anything else (or a negative
// value) throws InputError.
RowCheck validate_attention_rows(std::span<float> values, std::int64_t row_width, double tol = 1e-3,
                                 double renorm_tol = 1e-2);

}  // namespace relcirc::attn
