#include "relcirc/sweep.hpp"

#include <cstdio>
#include <fstream>

#include "relcirc/image.hpp"
#include "relcirc/raster_eval.hpp"
#include "relcirc/scene.hpp"
#include "relcirc/tensor_io.hpp"

namespace relcirc::sweep {

namespace {

constexpr const char* kModule = "sweep";

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

nlohmann::json matrix_json(const attn::RowMatrix<double>& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        std::vector<double> row(static_cast<std::size_t>(m.cols()));
        for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
        rows.push_back(row);
    }
    return rows;
}

nlohmann::json steps_json(const attn::StepScores<double>& s) {
    nlohmann::json out = nlohmann::json::array();
    for (std::int64_t l = 0; l < s.layers; ++l) {
        nlohmann::json per_layer = nlohmann::json::array();
        for (std::int64_t t = 0; t < s.steps; ++t) {
            std::vector<double> heads(static_cast<std::size_t>(s.heads));
            for (std::int64_t h = 0; h < s.heads; ++h) heads[static_cast<std::size_t>(h)] = s(l, t, h);
            per_layer.push_back(heads);
        }
        out.push_back(per_layer);
    }
    return out;
}

attn::ImageMasks<double> masks_from_rows(const nlohmann::json& rows) {
    attn::ImageMasks<double> m;
    const auto n = rows.size();
    if (n == 0) throw InputError(kModule, "image mask has no sample rows");
    const auto s = rows.at(0).size();
    m.rows.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(s));
    for (std::size_t i = 0; i < n; ++i) {
        if (rows[i].size() != s) throw InputError(kModule, "image mask rows have different lengths");
        for (std::size_t j = 0; j < s; ++j) {
            const double v = rows[i][j].get<double>();
            if (v < 0) throw InputError(kModule, "image mask entries must be nonnegative");
            m.rows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
        }
    }
    return m;
}

}  // namespace

std::string prompt_id(ShapeKind shape1, ShapeKind shape2, RelationLabel relation, bool color1, bool color2) {
    std::string id;
    if (color1) id += "red-";
    id += to_string(shape1);
    id += '-';
    id += to_string(relation);
    id += '-';
    if (color2) id += "blue-";
    id += to_string(shape2);
    return id;
}

std::vector<PromptSpec> sweep_prompts() {
    struct Pairing {
        ShapeKind a, b;
        bool c1, c2;
    };
    std::vector<Pairing> pairings;
    for (auto a : kAllShapes) {
        for (auto b : kAllShapes) {
            if (a == b) continue;
            pairings.push_back({a, b, true, true});
            pairings.push_back({a, b, true, false});
            pairings.push_back({a, b, false, true});
        }
    }
    for (auto a : kAllShapes) pairings.push_back({a, a, true, true});

    std::vector<PromptSpec> prompts;
    for (auto relation : kPlanarRelations) {
        for (const auto& p : pairings) {
            PromptSpec spec;
            spec.shape1 = p.a;
            spec.shape2 = p.b;
            spec.color1 = p.c1;
            spec.color2 = p.c2;
            spec.relation = relation;
            spec.id = prompt_id(p.a, p.b, relation, p.c1, p.c2);
            spec.caption = scene::compose_caption(p.a, p.b, relation, 0, p.c1, p.c2);
            prompts.push_back(std::move(spec));
        }
    }
    return prompts;
}

MaskSet mask_set_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
    MaskSet set;
    try {
        if (j.contains("image_masks")) {
            for (const auto& [name, rows] : j["image_masks"].items()) set.image.emplace(name, masks_from_rows(rows));
        }
        if (j.contains("images")) {
            const int grid = j.value("grid", 8);
            std::vector<std::string> targets = j.value("image_targets", std::vector<std::string>{"circle", "square", "triangle", "background"});
            const auto& paths = j["images"];
            for (const auto& target_name : targets) {
                const auto target = attn::parse_mask_target(target_name);
                if (!target) throw InputError(kModule, "unknown image target '" + target_name + "'");
                attn::ImageMasks<double> m;
                m.rows.resize(static_cast<Eigen::Index>(paths.size()), grid * grid);
                set.image.emplace(target_name, std::move(m));
            }
            for (std::size_t i = 0; i < paths.size(); ++i) {
                const auto image = read_image((base_dir / paths[i].get<std::string>()).string());
                const auto detections = raster::parse_objects(image);
                for (const auto& target_name : targets) {
                    const auto mask = attn::image_mask_from_detections(detections, image.width, image.height, grid,
                                                                       *attn::parse_mask_target(target_name));
                    set.image.at(target_name).rows.row(static_cast<Eigen::Index>(i)) = mask.transpose();
                }
            }
        }
        for (const auto& [name, values] : j.at("text_masks").items()) {
            const auto v = values.get<std::vector<double>>();
            set.text.emplace(name, Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
        }
        if (j.contains("pairs")) {
            for (const auto& p : j["pairs"]) set.pairs.emplace_back(p.at(0).get<std::string>(), p.at(1).get<std::string>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw InputError(kModule, std::string("malformed mask file: ") + e.what());
    }
    if (set.image.empty()) throw InputError(kModule, "mask file defines no image masks");
    if (set.text.empty()) throw InputError(kModule, "mask file defines no text masks");
    if (set.pairs.empty()) {
        for (const auto& [img, _] : set.image)
            for (const auto& [txt, __] : set.text) set.pairs.emplace_back(img, txt);
    }
    for (const auto& [img, txt] : set.pairs) {
        if (!set.image.count(img)) throw InputError(kModule, "pair names unknown image mask '" + img + "'");
        if (!set.text.count(txt)) throw InputError(kModule, "pair names unknown text mask '" + txt + "'");
    }
    return set;
}

MaskSet load_mask_set(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(kModule, "cannot open mask file " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(kModule, path.string() + " is not valid JSON: " + e.what());
    }
    return mask_set_from_json(j, path.parent_path());
}

PromptReport run_synopsis(const std::string& attn_path, const MaskSet& masks, const SynopsisOptions& options,
                          std::string prompt_id) {
    PromptReport report;
    report.prompt_id = std::move(prompt_id);
    report.mode = options.mode;
    const auto header = tensor_io::read_header(attn_path);
    const auto meta = tensor_io::read_meta(attn_path);
    if (meta) tensor_io::validate_meta(header, *meta);
    report.layout = meta ? attn::layout_from_axis_names(meta->axis_names) : attn::Layout::layer_major;
    report.geometry = attn::geometry_from_dims(header.dims, report.layout);
    if (meta && meta->branch_split && static_cast<std::int64_t>(*meta->branch_split) != report.geometry.samples) {
        throw InputError(kModule, "branch_split " + std::to_string(*meta->branch_split) + " does not equal N = " +
                                      std::to_string(report.geometry.samples));
    }
    std::vector<attn::TemplatePair> pairs;
    for (const auto& [img, txt] : masks.pairs) pairs.push_back({&masks.image.at(img), masks.text.at(txt)});
    const auto scores = attn::score_templates_streamed(attn_path, report.layout, pairs, options.stream, &report.rows);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        TemplateReport t;
        t.image = masks.pairs[i].first;
        t.text = masks.pairs[i].second;
        t.result = attn::reduce_synopsis(scores[i], options.mode);
        t.topk = attn::topk_heads(t.result.cond.values, options.k);
        report.templates.push_back(std::move(t));
    }
    return report;
}

nlohmann::json to_json(const PromptReport& report) {
    const auto& g = report.geometry;
    nlohmann::json j;
    if (!report.prompt_id.empty()) j["prompt_id"] = report.prompt_id;
    j["geometry"] = {{"layers", g.layers}, {"steps", g.steps}, {"samples", g.samples},
                     {"heads", g.heads},   {"image_tokens", g.image_tokens}, {"text_tokens", g.text_tokens}};
    j["layout"] = report.layout == attn::Layout::layer_major ? "layer_major" : "sample_major";
    j["mode"] = std::string(attn::to_string(report.mode));
    j["row_check"] = {{"rows", report.rows.rows}, {"renormalized", report.rows.renormalized}};
    j["templates"] = nlohmann::json::array();
    for (const auto& t : report.templates) {
        nlohmann::json e;
        e["image"] = t.image;
        e["text"] = t.text;
        e["samples_used"] = t.result.samples_used;
        e["cond"] = matrix_json(t.result.cond.values);
        e["uncond"] = matrix_json(t.result.uncond.values);
        e["per_step_cond"] = steps_json(t.result.per_step_cond);
        e["per_step_uncond"] = steps_json(t.result.per_step_uncond);
        if (t.result.cond.argmax_step) {
            e["argmax_step_cond"] = matrix_json(t.result.cond.argmax_step->cast<double>());
            e["argmax_step_uncond"] = matrix_json(t.result.uncond.argmax_step->cast<double>());
        }
        nlohmann::json top = nlohmann::json::array();
        for (const auto& h : t.topk) {
            top.push_back({{"layer", h.layer}, {"head", h.head}, {"name", attn::head_name(h)}, {"score", h.score}});
        }
        e["topk"] = top;
        j["templates"].push_back(std::move(e));
    }
    return j;
}

std::string topk_csv_header() { return "prompt_id,image,text,rank,layer,head,name,score"; }

void write_topk_rows(std::ostream& out, const PromptReport& report) {
    for (const auto& t : report.templates) {
        for (std::size_t r = 0; r < t.topk.size(); ++r) {
            const auto& h = t.topk[r];
            out << report.prompt_id << ',' << t.image << ',' << t.text << ',' << r + 1 << ',' << h.layer << ','
                << h.head << ',' << attn::head_name(h) << ',' << fmt(h.score) << '\n';
        }
    }
}

void write_heatmap_csv(std::ostream& out, const attn::RowMatrix<double>& values) {
    out << "layer";
    for (Eigen::Index h = 0; h < values.cols(); ++h) out << ",H" << h;
    out << '\n';
    for (Eigen::Index l = 0; l < values.rows(); ++l) {
        out << 'L' << l;
        for (Eigen::Index h = 0; h < values.cols(); ++h) out << ',' << fmt(values(l, h));
        out << '\n';
    }
}

}  // namespace relcirc::sweep
