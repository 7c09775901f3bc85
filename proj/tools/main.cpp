// relcirc command-line driver.
//
// Exit codes: 0 success, 1 data error (message tagged with the module),
// 2 usage error.

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "relcirc/attn_synopsis.hpp"
#include "relcirc/embed_edit.hpp"
#include "relcirc/image.hpp"
#include "relcirc/raster_eval.hpp"
#include "relcirc/scene.hpp"
#include "relcirc/sweep.hpp"
#include "relcirc/tensor_io.hpp"
#include "relcirc/text_encoding.hpp"
#include "relcirc/varpart.hpp"
#include "relcirc/varpart_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace relcirc;

namespace {

bool g_quiet = false;
std::mutex g_log_mutex;

std::string utc_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// One JSON object per line on stderr.
void log_info(const std::string& event, json fields = json::object()) {
    if (g_quiet) return;
    fields["ts"] = utc_now();
    fields["level"] = "info";
    fields["event"] = event;
    std::lock_guard lock(g_log_mutex);
    std::cerr << fields.dump() << '\n';
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cli-driver", "cannot write " + path.string());
    out << text;
    if (!out) throw IoError("cli-driver", "write failed for " + path.string());
}

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cli-driver", "cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw InputError("cli-driver", path.string() + " is not valid JSON: " + e.what());
    }
}

std::vector<json> read_jsonl(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cli-driver", "cannot open " + path.string());
    std::vector<json> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            records.push_back(json::parse(line));
        } catch (const json::exception& e) {
            throw InputError("cli-driver", path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return records;
}

void require_distinct(const std::string& in, const std::string& out) {
    std::error_code ec;
    if (!in.empty() && !out.empty() && fs::exists(in) && fs::exists(out) && fs::equivalent(in, out, ec)) {
        throw InputError("cli-driver", "input and output paths are the same: " + in);
    }
}

std::size_t worker_count(std::size_t flag) {
    if (flag > 0) return flag;
    if (const char* env = std::getenv("RELCIRC_WORKERS")) {
        try {
            const long v = std::stol(env);
            if (v > 0) return static_cast<std::size_t>(v);
        } catch (const std::exception&) {
        }
        throw InputError("cli-driver", std::string("RELCIRC_WORKERS must be a positive integer, got '") + env + "'");
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stoi(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw InputError("cli-driver", "'" + item + "' is not an integer in list '" + text + "'");
        }
    }
    return out;
}

edit::FactorLevel parse_factor_level(const std::string& text) {
    const auto eq = text.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == text.size()) {
        throw InputError("cli-driver", "expected factor=level, got '" + text + "'");
    }
    return {text.substr(0, eq), text.substr(eq + 1)};
}

// [n, D] embeddings, or [n, L, D] with one token position selected.
Eigen::MatrixXd load_embedding_rows(const std::string& path, int token) {
    const auto t = tensor_io::read_tensor(path);
    const auto& d = t.dims();
    if (d.size() == 2) {
        return Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
                   t.values.data(), static_cast<Eigen::Index>(d[0]), static_cast<Eigen::Index>(d[1]))
            .cast<double>();
    }
    if (d.size() == 3) {
        if (token < 0 || static_cast<std::uint64_t>(token) >= d[1]) {
            throw InputError("cli-driver", "embedding is [n, L, D]; --token must be in 0.." + std::to_string(d[1] - 1));
        }
        Eigen::MatrixXd x(static_cast<Eigen::Index>(d[0]), static_cast<Eigen::Index>(d[2]));
        for (std::uint64_t i = 0; i < d[0]; ++i)
            for (std::uint64_t k = 0; k < d[2]; ++k)
                x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = t.values[(i * d[1] + token) * d[2] + k];
        return x;
    }
    throw InputError("cli-driver", "embedding tensor must be [n, D] or [n, L, D]");
}

varpart::FactorDesign build_design(const std::string& labels, const std::vector<std::string>& factors,
                                   const std::vector<std::string>& composites) {
    auto all = varpart::read_labels_csv(labels);
    for (const auto& c : composites) {
        const auto eq = c.find('=');
        if (eq == std::string::npos) throw InputError("cli-driver", "composite must be name=a+b, got '" + c + "'");
        std::vector<std::string> parts;
        std::stringstream in(c.substr(eq + 1));
        std::string p;
        while (std::getline(in, p, '+')) parts.push_back(p);
        all.add_composite(c.substr(0, eq), parts);
    }
    return varpart::select_factors(all, factors);
}

// ---------------------------------------------------------------- commands

struct GenArgs {
    std::size_t n = 0;
    std::string out;
    std::string occlusion = "reject";
    std::string format = "png";
    scene::GenConfig config;
};

int run_gen(const GenArgs& a) {
    auto config = a.config;
    config.occlusion_mode = a.occlusion == "allow" ? scene::OcclusionMode::allow : scene::OcclusionMode::reject;
    const auto format = a.format == "atns" ? scene::ImageFormat::atns : scene::ImageFormat::png;
    log_info("gen-dataset.start", {{"n", a.n}, {"seed", config.seed}, {"out", a.out}});
    const auto summary = scene::generate_dataset(config, a.n, a.out, format);
    log_info("gen-dataset.done", {{"count", summary.count}, {"labels", summary.labels_path}});
    return 0;
}

struct EvalArgs {
    std::string labels;
    std::string images_root;
    std::string out;
    std::string summary;
    raster::ParseConfig parse;
    raster::EvalConfig eval;
};

int run_evaluate(const EvalArgs& a) {
    require_distinct(a.labels, a.out);
    const auto records = read_jsonl(a.labels);
    const fs::path root = a.images_root.empty() ? fs::path(a.labels).parent_path() : fs::path(a.images_root);
    std::vector<raster::EvalResult> results;
    std::string lines;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& rec = records[i];
        if (!rec.contains("image")) throw InputError("cli-driver", "label record " + std::to_string(i) + " has no image path");
        const auto query = raster::query_from_record(rec);
        const auto image = read_image((root / rec["image"].get<std::string>()).string());
        const auto detections = raster::parse_objects(image, a.parse);
        const auto result = raster::evaluate_scene(detections, query, a.eval);
        results.push_back(result);
        auto j = raster::to_json(result);
        j["index"] = rec.value("index", static_cast<std::int64_t>(i));
        j["image"] = rec["image"];
        j["detections"] = detections.size();
        lines += j.dump() + "\n";
    }
    write_text(a.out, lines);
    const auto summary = raster::aggregate_metrics(results);
    if (!a.summary.empty()) {
        write_text(a.summary, raster::summary_csv_header() + "\n" + raster::summary_csv_row(summary) + "\n");
    }
    log_info("evaluate.done", {{"count", summary.count},
                               {"shape", summary.shape},
                               {"color", summary.color},
                               {"unique_binding", summary.unique_binding},
                               {"spatial_relationship", summary.spatial_relationship},
                               {"overall", summary.overall}});
    return 0;
}

struct EncodeArgs {
    std::vector<std::string> captions;
    std::string captions_file;
    std::string ids_json;
    std::string encoder = "rte";
    std::uint64_t seed = 0;
    int dim = text::kEmbeddingDim;
    double scale = text::kEmbeddingScale;
    double pos_scale = text::kPositionScale;
    int length = text::kContextLength;
    std::int64_t pad_id = 0;
    std::string out;
    std::string tokens_out;
    std::string vocab_out;
    std::string groups;
    std::string masks_out;
};

int run_encode(const EncodeArgs& a) {
    std::vector<std::vector<text::TokenId>> ids;
    std::vector<std::string> captions = a.captions;
    const text::CaptionTokenizer tokenizer;
    std::vector<text::TokenId> dict_ids;
    if (!a.ids_json.empty()) {
        const auto j = read_json_file(a.ids_json);
        try {
            ids = j.at("token_ids").get<std::vector<std::vector<text::TokenId>>>();
        } catch (const json::exception& e) {
            throw InputError("cli-driver", std::string("token id file needs a token_ids list: ") + e.what());
        }
        std::vector<text::TokenId> flat{a.pad_id};
        for (const auto& row : ids) flat.insert(flat.end(), row.begin(), row.end());
        dict_ids = text::unique_ids(flat);
    } else {
        if (!a.captions_file.empty()) {
            std::ifstream in(a.captions_file);
            if (!in) throw IoError("cli-driver", "cannot open " + a.captions_file);
            std::string line;
            while (std::getline(in, line)) {
                if (!line.empty() && line.back() == '\r') line.pop_back();
                captions.push_back(line);
            }
        }
        if (captions.empty()) throw InputError("cli-driver", "no captions given");
        for (const auto& c : captions) ids.push_back(tokenizer.tokenize(c, a.length));
        for (std::size_t i = 0; i < tokenizer.words().size(); ++i) dict_ids.push_back(static_cast<text::TokenId>(i));
    }
    const auto dict = text::build_embedding_dict(dict_ids, a.dim, a.scale, a.seed);
    text::EncodeOptions options;
    options.kind = a.encoder == "rte_pos" ? text::EncoderKind::rte_pos : text::EncoderKind::rte;
    options.context_length = a.length;
    options.pad_id = a.pad_id;
    options.position_scale = a.pos_scale;

    const std::vector<std::uint64_t> dims{ids.size(), static_cast<std::uint64_t>(a.length), static_cast<std::uint64_t>(a.dim)};
    tensor_io::TensorWriter writer(a.out, dims, tensor_io::DType::f32);
    for (const auto& row : ids) {
        const auto emb = text::encode(dict, row, options);
        writer.append(std::span<const float>(emb.data(), static_cast<std::size_t>(emb.size())));
    }
    writer.finish();
    tensor_io::write_meta(a.out, {{"sample", "token", "dim"}, std::nullopt});

    if (!a.tokens_out.empty()) {
        json j;
        j["token_ids"] = ids;
        if (!captions.empty()) j["captions"] = captions;
        std::vector<int> eos;
        for (const auto& row : ids) {
            const auto it = std::find(row.begin(), row.end(), text::CaptionTokenizer::kEos);
            eos.push_back(it == row.end() ? -1 : static_cast<int>(it - row.begin()));
        }
        j["eos_positions"] = eos;
        j["pad_id"] = a.pad_id;
        write_text(a.tokens_out, j.dump(2) + "\n");
    }
    if (!a.vocab_out.empty()) write_text(a.vocab_out, text::vocab_to_json(dict.vocab).dump(2) + "\n");
    if (!a.groups.empty()) {
        const auto spec = text::group_spec_from_json(read_json_file(a.groups), tokenizer);
        json masks = json::array();
        for (const auto& row : ids) masks.push_back(text::to_json(text::token_group_masks(row, spec, a.length)));
        write_text(a.masks_out.empty() ? (fs::path(a.out).replace_extension(".masks.json")).string() : a.masks_out,
                   masks.dump(2) + "\n");
    }
    log_info("encode.done", {{"prompts", ids.size()}, {"encoder", a.encoder}, {"dim", a.dim}, {"out", a.out}});
    return 0;
}

struct SynopsisArgs {
    std::string attn;
    std::string masks;
    std::string mode = "mean_time";
    std::size_t k = 5;
    std::uint64_t chunk = 1;
    bool no_row_check = false;
    std::string out;
    std::string topk_csv;
    std::string heatmap_dir;
};

sweep::SynopsisOptions synopsis_options(const std::string& mode, std::size_t k, std::uint64_t chunk, bool no_row_check) {
    sweep::SynopsisOptions o;
    o.mode = *attn::parse_reduce_mode(mode);
    o.k = k;
    o.stream.chunk = chunk;
    o.stream.validate_rows = !no_row_check;
    return o;
}

void write_heatmaps(const fs::path& dir, const sweep::PromptReport& report) {
    for (const auto& t : report.templates) {
        const std::string stem = (report.prompt_id.empty() ? "" : report.prompt_id + "__") + t.image + "__" + t.text;
        std::ostringstream cond, uncond;
        sweep::write_heatmap_csv(cond, t.result.cond.values);
        sweep::write_heatmap_csv(uncond, t.result.uncond.values);
        write_text(dir / (stem + "__cond.csv"), cond.str());
        write_text(dir / (stem + "__uncond.csv"), uncond.str());
    }
}

int run_synopsis(const SynopsisArgs& a) {
    require_distinct(a.attn, a.out);
    const auto masks = sweep::load_mask_set(a.masks);
    const auto report = sweep::run_synopsis(a.attn, masks, synopsis_options(a.mode, a.k, a.chunk, a.no_row_check),
                                            fs::path(a.attn).stem().string());
    write_text(a.out, to_json(report).dump() + "\n");
    if (!a.topk_csv.empty()) {
        std::ostringstream csv;
        csv << sweep::topk_csv_header() << '\n';
        sweep::write_topk_rows(csv, report);
        write_text(a.topk_csv, csv.str());
    }
    if (!a.heatmap_dir.empty()) write_heatmaps(a.heatmap_dir, report);
    log_info("synopsis.done", {{"templates", report.templates.size()},
                               {"rows_checked", report.rows.rows},
                               {"rows_renormalized", report.rows.renormalized}});
    return 0;
}

struct SweepArgs {
    std::string attn_dir;
    std::string masks;
    std::string out;
    std::string mode = "mean_time";
    std::size_t k = 5;
    std::uint64_t chunk = 1;
    std::size_t workers = 0;
    bool allow_missing = false;
    bool no_row_check = false;
    bool list = false;
};

int run_sweep(const SweepArgs& a) {
    const auto prompts = sweep::sweep_prompts();
    if (a.list) {
        std::cout << "prompt_id,caption\n";
        for (const auto& p : prompts) std::cout << p.id << ',' << p.caption << '\n';
        return 0;
    }
    if (a.attn_dir.empty() || a.masks.empty() || a.out.empty()) {
        throw InputError("cli-driver", "sweep needs --attn-dir, --masks and --out (or --list)");
    }
    const bool shared_masks = fs::is_regular_file(a.masks);
    std::vector<std::size_t> jobs;
    std::vector<std::string> missing;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        const auto attn_path = fs::path(a.attn_dir) / (prompts[i].id + ".atns");
        const auto mask_path = shared_masks ? fs::path(a.masks) : fs::path(a.masks) / (prompts[i].id + ".json");
        if (fs::exists(attn_path) && fs::exists(mask_path)) {
            jobs.push_back(i);
        } else {
            missing.push_back(prompts[i].id);
        }
    }
    if (!missing.empty() && !a.allow_missing) {
        throw InputError("cli-driver", std::to_string(missing.size()) + " of " + std::to_string(prompts.size()) +
                                           " prompts lack attention or mask files (first: " + missing.front() +
                                           "); pass --allow-missing to skip them");
    }
    for (const auto& id : missing) log_info("sweep.missing", {{"prompt_id", id}});
    fs::create_directories(a.out);
    std::optional<sweep::MaskSet> shared;
    if (shared_masks) shared = sweep::load_mask_set(a.masks);
    const auto options = synopsis_options(a.mode, a.k, a.chunk, a.no_row_check);
    const std::size_t workers = std::min(worker_count(a.workers), std::max<std::size_t>(1, jobs.size()));
    log_info("sweep.start", {{"prompts", prompts.size()}, {"jobs", jobs.size()}, {"workers", workers}});

    std::vector<std::optional<sweep::PromptReport>> reports(prompts.size());
    std::vector<std::string> failures(prompts.size());
    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> done{0};
    auto worker = [&] {
        for (std::size_t j = next++; j < jobs.size(); j = next++) {
            const auto& p = prompts[jobs[j]];
            try {
                const auto masks = shared ? *shared : sweep::load_mask_set(fs::path(a.masks) / (p.id + ".json"));
                auto report = sweep::run_synopsis((fs::path(a.attn_dir) / (p.id + ".atns")).string(), masks, options, p.id);
                auto j_report = to_json(report);
                j_report["caption"] = p.caption;
                write_text(fs::path(a.out) / (p.id + ".json"), j_report.dump() + "\n");
                reports[jobs[j]] = std::move(report);
                log_info("sweep.prompt", {{"prompt_id", p.id}, {"done", ++done}, {"of", jobs.size()}});
            } catch (const std::exception& e) {
                failures[jobs[j]] = e.what();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    for (std::size_t i = 0; i < prompts.size(); ++i) {
        if (!failures[i].empty()) throw InputError("cli-driver", "prompt " + prompts[i].id + ": " + failures[i]);
    }
    std::ostringstream csv;
    csv << sweep::topk_csv_header() << '\n';
    for (const auto& r : reports) {
        if (r) sweep::write_topk_rows(csv, *r);
    }
    write_text(fs::path(a.out) / "topk.csv", csv.str());
    log_info("sweep.done", {{"written", jobs.size()}, {"missing", missing.size()}});
    return 0;
}

struct VarpartArgs {
    std::string emb;
    std::string dist;
    std::string labels;
    std::vector<std::string> factors;
    std::vector<std::string> composites;
    std::string gram = "euclidean";
    int token = -1;
    std::size_t perm = 100;
    std::uint64_t seed = 0;
    double qr_tol = 1e-10;
    std::string out;
    std::string json_out;
};

int run_varpart(const VarpartArgs& a) {
    const auto design = build_design(a.labels, a.factors, a.composites);
    varpart::GramMatrix<double> gram;
    if (a.gram == "mds") {
        if (a.dist.empty()) throw InputError("cli-driver", "--gram mds needs --dist");
        const auto t = tensor_io::read_tensor(a.dist);
        if (t.dims().size() != 2) throw InputError("cli-driver", "distance tensor must be [n, n]");
        const Eigen::MatrixXd d = Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
                                      t.values.data(), static_cast<Eigen::Index>(t.dims()[0]),
                                      static_cast<Eigen::Index>(t.dims()[1]))
                                      .cast<double>();
        gram = varpart::gram_mds(d);
    } else {
        if (a.emb.empty()) throw InputError("cli-driver", "--gram euclidean needs --emb");
        gram = varpart::gram_euclidean(load_embedding_rows(a.emb, a.token));
    }
    varpart::PermutationOptions perm;
    perm.n_perm = a.perm;
    perm.seed = a.seed;
    perm.qr_tol = a.qr_tol;
    const auto report = varpart::partition(gram, design, perm);
    write_text(a.out, varpart::report_csv(report));
    if (!a.json_out.empty()) write_text(a.json_out, varpart::to_json(report).dump(2) + "\n");
    log_info("varpart.done", {{"n", report.n}, {"factors", report.rows.size()}, {"r2_total", report.r2_total}});
    return 0;
}

struct EffectsArgs {
    std::string emb;
    std::string labels;
    std::vector<std::string> factors;
    std::vector<std::string> composites;
    int token = -1;
    std::string out;
    int pca = 0;
    std::string pca_out;
};

int run_effects(const EffectsArgs& a) {
    const auto design = build_design(a.labels, a.factors, a.composites);
    const auto x = load_embedding_rows(a.emb, a.token);
    const auto effects = varpart::effect_vectors(x, design);
    varpart::write_effects(a.out, effects);
    if (a.pca > 0) {
        const auto pca = varpart::pca_project(x, a.pca);
        std::ostringstream csv;
        csv.precision(9);
        for (int c = 0; c < a.pca; ++c) csv << (c ? "," : "") << "PC" << c + 1;
        csv << '\n';
        for (Eigen::Index i = 0; i < pca.scores.rows(); ++i) {
            for (Eigen::Index c = 0; c < pca.scores.cols(); ++c) csv << (c ? "," : "") << pca.scores(i, c);
            csv << '\n';
        }
        const auto path = a.pca_out.empty() ? fs::path(a.out).replace_extension(".pca.csv") : fs::path(a.pca_out);
        write_text(path, csv.str());
        json ratios = std::vector<double>(pca.explained_ratio.data(), pca.explained_ratio.data() + pca.explained_ratio.size());
        log_info("effects.pca", {{"explained_ratio", ratios}});
    }
    log_info("effects.done", {{"factors", effects.factors.size()}, {"dim", effects.mean.size()}});
    return 0;
}

struct EditArgs {
    std::string emb;
    std::string effects;
    std::string remove;
    std::string add;
    Eigen::Index token = 0;
    double alpha = edit::kDefaultAlpha;
    std::string out;
};

int run_edit(const EditArgs& a) {
    require_distinct(a.emb, a.out);
    const auto t = tensor_io::read_tensor(a.emb);
    auto dims = t.dims();
    if (dims.size() == 3 && dims[0] == 1) dims.erase(dims.begin());
    if (dims.size() != 2) throw InputError("cli-driver", "prompt embedding must be [L, D] or [1, L, D]");
    using RowMatrixXf = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const RowMatrixXf embedding =
        Eigen::Map<const RowMatrixXf>(t.values.data(), static_cast<Eigen::Index>(dims[0]), static_cast<Eigen::Index>(dims[1]));
    const auto effects = varpart::read_effects(a.effects);
    edit::EditPlan plan{a.token, parse_factor_level(a.remove), parse_factor_level(a.add), a.alpha};
    const RowMatrixXf edited = edit::apply_edit(embedding, effects, plan);
    tensor_io::write_tensor(a.out, t.dims(), tensor_io::DType::f32,
                            std::span<const float>(edited.data(), static_cast<std::size_t>(edited.size())));
    log_info("edit-embedding.done", {{"token", a.token}, {"alpha", a.alpha}, {"out", a.out}});
    return 0;
}

struct PlanArgs {
    edit::ModelGeometry geometry;
    std::vector<std::string> masks;
    std::vector<std::string> mask_all;
    std::vector<std::string> injections;
    std::string validate;
    std::string out;
};

int run_plan(const PlanArgs& a) {
    if (!a.validate.empty()) {
        std::ifstream in(a.validate);
        if (!in) throw IoError("cli-driver", "cannot open " + a.validate);
        std::stringstream buf;
        buf << in.rdbuf();
        const auto plan = edit::parse_plan(buf.str());
        log_info("plan.valid", {{"interventions", plan.interventions.size()}});
        return 0;
    }
    edit::InterventionPlan plan;
    plan.geometry = a.geometry;
    for (const auto& m : a.masks) {
        const auto parts = m.find(':');
        const auto second = m.find(':', parts + 1);
        if (parts == std::string::npos || second == std::string::npos) {
            throw InputError("cli-driver", "--mask expects layer:head:t1,t2,... got '" + m + "'");
        }
        const auto lh = parse_int_list(m.substr(0, parts) + "," + m.substr(parts + 1, second - parts - 1));
        plan.interventions.push_back(edit::mask_head_tokens(lh[0], lh[1], parse_int_list(m.substr(second + 1))));
    }
    for (const auto& m : a.mask_all) plan.interventions.push_back(edit::mask_tokens_all_heads(parse_int_list(m)));
    for (const auto& s : a.injections) {
        std::string text = s;
        std::replace(text.begin(), text.end(), ':', ',');
        const auto v = parse_int_list(text);
        if (v.size() != 4) throw InputError("cli-driver", "--inject expects src_layer:src_head:dst_layer:dst_head");
        plan.interventions.push_back(edit::inject_vo({v[0], v[1]}, {v[2], v[3]}));
    }
    const auto text = edit::emit_plan(plan);
    if (a.out.empty() || a.out == "-") {
        std::cout << text;
    } else {
        write_text(a.out, text);
    }
    log_info("plan.done", {{"interventions", plan.interventions.size()}});
    return 0;
}

struct ReportArgs {
    std::vector<std::string> evals;
    std::string table_out;
    std::vector<std::string> synopses;
    std::string heatmap_dir;
};

attn::RowMatrix<double> matrix_from_json(const json& j) {
    attn::RowMatrix<double> m(static_cast<Eigen::Index>(j.size()), j.empty() ? 0 : static_cast<Eigen::Index>(j[0].size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = j[r][c].get<double>();
    return m;
}

int run_report(const ReportArgs& a) {
    if (a.evals.empty() && a.synopses.empty()) throw InputError("cli-driver", "report needs --eval or --synopsis inputs");
    if (!a.evals.empty()) {
        if (a.table_out.empty()) throw InputError("cli-driver", "--eval needs --table-out");
        std::string csv = raster::summary_csv_header() + "\n";
        for (const auto& path : a.evals) {
            std::vector<raster::EvalResult> results;
            for (const auto& rec : read_jsonl(path)) results.push_back(raster::eval_result_from_json(rec));
            csv += raster::summary_csv_row(raster::aggregate_metrics(results)) + "\n";
            log_info("report.table_row", {{"source", path}, {"count", results.size()}});
        }
        write_text(a.table_out, csv);
    }
    if (!a.synopses.empty()) {
        if (a.heatmap_dir.empty()) throw InputError("cli-driver", "--synopsis needs --heatmap-dir");
        for (const auto& path : a.synopses) {
            const auto j = read_json_file(path);
            const std::string id = j.value("prompt_id", fs::path(path).stem().string());
            try {
                for (const auto& t : j.at("templates")) {
                    const std::string stem = id + "__" + t.at("image").get<std::string>() + "__" + t.at("text").get<std::string>();
                    for (const char* branch : {"cond", "uncond"}) {
                        std::ostringstream out;
                        sweep::write_heatmap_csv(out, matrix_from_json(t.at(branch)));
                        write_text(fs::path(a.heatmap_dir) / (stem + "__" + branch + ".csv"), out.str());
                    }
                }
            } catch (const json::exception& e) {
                throw InputError("cli-driver", path + " is not a synopsis file: " + e.what());
            }
        }
        log_info("report.heatmaps", {{"files", a.synopses.size()}, {"dir", a.heatmap_dir}});
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"relcirc: synthetic spatial-relation scenes, raster evaluation and attention/embedding analysis"};
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);
    app.add_flag("--quiet", g_quiet, "Suppress JSON-lines logs on stderr");
    app.footer("Exit codes: 0 ok, 1 data error, 2 usage error. RELCIRC_WORKERS overrides the sweep worker count.");

    std::vector<std::pair<CLI::App*, std::function<int()>>> commands;

    GenArgs gen;
    auto* g = app.add_subcommand("gen-dataset", "Render random two-object scenes with captions and labels");
    g->add_option("--n", gen.n, "Number of samples")->required();
    g->add_option("--out", gen.out, "Output directory")->required();
    g->add_option("--seed", gen.config.seed, "Random seed");
    g->add_option("--occlusion", gen.occlusion, "Occlusion handling")->check(CLI::IsMember({"reject", "allow"}));
    g->add_option("--format", gen.format, "Image format")->check(CLI::IsMember({"png", "atns"}));
    g->add_option("--canvas", gen.config.canvas, "Canvas size in pixels");
    g->add_option("--radius", gen.config.radius, "Object radius in pixels");
    g->add_option("--color-drop", gen.config.color_drop_prob, "Probability of dropping each color word");
    g->add_option("--relation-tol", gen.config.relation_tolerance, "Cardinal relation tolerance in pixels");
    g->add_option("--occlusion-threshold", gen.config.occlusion_threshold, "Bounding-box overlap ratio counted as occlusion");
    g->add_option("--max-attempts", gen.config.max_attempts, "Position draws per sample in reject mode");
    commands.emplace_back(g, [&] { return run_gen(gen); });

    EvalArgs ev;
    auto* e = app.add_subcommand("evaluate", "Score images against the scene queries in a labels JSONL file");
    e->add_option("--labels", ev.labels, "labels.jsonl with image paths and query fields or captions")->required();
    e->add_option("--images-root", ev.images_root, "Directory image paths are relative to (default: labels directory)");
    e->add_option("--out", ev.out, "Per-sample results JSONL")->required();
    e->add_option("--summary", ev.summary, "Accuracy table CSV");
    e->add_option("--threshold", ev.parse.intensity_threshold, "Channel intensity threshold (strictly greater)");
    e->add_option("--min-area", ev.parse.min_area, "Minimum component area in pixels");
    e->add_option("--color-margin", ev.parse.color_margin, "Off-channel margin for pure red");
    e->add_option("--epsilon", ev.parse.epsilon_fraction, "Polygon simplification epsilon as a fraction of perimeter");
    e->add_option("--relation-tol", ev.eval.relation_tolerance, "Cardinal relation tolerance in pixels");
    e->add_option("--loose-threshold", ev.eval.loose_threshold, "Margin of the loose relation check in pixels");
    commands.emplace_back(e, [&] { return run_evaluate(ev); });

    EncodeArgs en;
    auto* c = app.add_subcommand("encode", "Random token embeddings for captions or token id lists");
    c->add_option("--caption", en.captions, "Caption text (repeatable)");
    c->add_option("--captions", en.captions_file, "File with one caption per line");
    c->add_option("--ids", en.ids_json, "JSON file with token_ids: [[...], ...] from an external tokenizer");
    c->add_option("--encoder", en.encoder, "Encoder")->check(CLI::IsMember({"rte", "rte_pos"}));
    c->add_option("--seed", en.seed, "Embedding seed");
    c->add_option("--dim", en.dim, "Embedding dimension");
    c->add_option("--scale", en.scale, "Embedding scale (row std = scale / sqrt(dim))");
    c->add_option("--pos-scale", en.pos_scale, "Positional encoding weight for rte_pos");
    c->add_option("--length", en.length, "Context length");
    c->add_option("--pad-id", en.pad_id, "Padding token id");
    c->add_option("--out", en.out, "Embedding ATNS [n, L, D]")->required();
    c->add_option("--tokens-out", en.tokens_out, "Token id JSON");
    c->add_option("--vocab-out", en.vocab_out, "Vocabulary map JSON");
    c->add_option("--groups", en.groups, "Token group spec JSON {name: {words|ids|positions}}");
    c->add_option("--masks-out", en.masks_out, "Group mask JSON (default: <out>.masks.json)");
    commands.emplace_back(c, [&] { return run_encode(en); });

    SynopsisArgs sy;
    auto* s = app.add_subcommand("synopsis", "Layer x head attention synopsis for one prompt");
    s->add_option("--attn", sy.attn, "Attention ATNS tensor")->required();
    s->add_option("--masks", sy.masks, "Mask JSON")->required();
    s->add_option("--mode", sy.mode, "Time reduction")->check(CLI::IsMember({"mean_time", "max_time", "max_step_select"}));
    s->add_option("--k", sy.k, "Top-k heads per template");
    s->add_option("--chunk", sy.chunk, "Leading-axis rows per streamed slab");
    s->add_flag("--no-row-check", sy.no_row_check, "Skip softmax row validation (1e-3 pass, 1e-2 renormalize)");
    s->add_option("--out", sy.out, "Synopsis JSON")->required();
    s->add_option("--topk-csv", sy.topk_csv, "Top-k CSV");
    s->add_option("--heatmap-dir", sy.heatmap_dir, "Directory for layer x head CSV tables");
    commands.emplace_back(s, [&] { return run_synopsis(sy); });

    SweepArgs sw;
    auto* w = app.add_subcommand("sweep", "Synopses for all 168 binary spatial-relation prompts");
    w->add_option("--attn-dir", sw.attn_dir, "Directory of <prompt_id>.atns attention tensors");
    w->add_option("--masks", sw.masks, "Mask JSON shared by all prompts, or directory of <prompt_id>.json");
    w->add_option("--out", sw.out, "Output directory");
    w->add_option("--mode", sw.mode, "Time reduction")->check(CLI::IsMember({"mean_time", "max_time", "max_step_select"}));
    w->add_option("--k", sw.k, "Top-k heads per template");
    w->add_option("--chunk", sw.chunk, "Leading-axis rows per streamed slab");
    w->add_option("--workers", sw.workers, "Worker threads (0: RELCIRC_WORKERS or hardware concurrency)");
    w->add_flag("--allow-missing", sw.allow_missing, "Skip prompts without attention or mask files");
    w->add_flag("--no-row-check", sw.no_row_check, "Skip softmax row validation");
    w->add_flag("--list", sw.list, "Print prompt ids and captions as CSV and exit");
    commands.emplace_back(w, [&] { return run_sweep(sw); });

    VarpartArgs vp;
    auto* v = app.add_subcommand("varpart", "Variance partitioning of embeddings over categorical factors");
    v->add_option("--emb", vp.emb, "Embedding ATNS [n, D] or [n, L, D]");
    v->add_option("--dist", vp.dist, "Distance ATNS [n, n] for --gram mds");
    v->add_option("--labels", vp.labels, "Factor label CSV with a header row")->required();
    v->add_option("--factors", vp.factors, "Factors to use, in order (default: all columns)")->delimiter(',');
    v->add_option("--composite", vp.composites, "Fused factor name=a+b (repeatable)");
    v->add_option("--gram", vp.gram, "Gram matrix source")->check(CLI::IsMember({"euclidean", "mds"}));
    v->add_option("--token", vp.token, "Token position for [n, L, D] embeddings");
    v->add_option("--perm", vp.perm, "Label permutations per factor (0 skips the test)");
    v->add_option("--seed", vp.seed, "Permutation seed");
    v->add_option("--qr-tol", vp.qr_tol, "Relative rank tolerance of the QR projector");
    v->add_option("--out", vp.out, "Report CSV")->required();
    v->add_option("--json", vp.json_out, "Report JSON");
    commands.emplace_back(v, [&] { return run_varpart(vp); });

    EffectsArgs ef;
    auto* f = app.add_subcommand("effects", "Per-level effect vectors and optional PCA scores");
    f->add_option("--emb", ef.emb, "Embedding ATNS [n, D] or [n, L, D]")->required();
    f->add_option("--labels", ef.labels, "Factor label CSV with a header row")->required();
    f->add_option("--factors", ef.factors, "Factors to use, in order (default: all columns)")->delimiter(',');
    f->add_option("--composite", ef.composites, "Fused factor name=a+b (repeatable)");
    f->add_option("--token", ef.token, "Token position for [n, L, D] embeddings");
    f->add_option("--out", ef.out, "Effect ATNS (index JSON written alongside)")->required();
    f->add_option("--pca", ef.pca, "Number of principal components (0: none)");
    f->add_option("--pca-out", ef.pca_out, "PCA score CSV (default: <out>.pca.csv)");
    commands.emplace_back(f, [&] { return run_effects(ef); });

    EditArgs ed;
    auto* d = app.add_subcommand("edit-embedding", "Replace one token row by V - beta_remove + alpha * beta_add");
    d->add_option("--emb", ed.emb, "Prompt embedding ATNS [L, D] or [1, L, D]")->required();
    d->add_option("--effects", ed.effects, "Effect ATNS from the effects command")->required();
    d->add_option("--token", ed.token, "Token row to edit")->required();
    d->add_option("--remove", ed.remove, "factor=level to subtract")->required();
    d->add_option("--add", ed.add, "factor=level to add, scaled by alpha")->required();
    d->add_option("--alpha", ed.alpha, "Scale of the added vector");
    d->add_option("--out", ed.out, "Edited embedding ATNS")->required();
    commands.emplace_back(d, [&] { return run_edit(ed); });

    PlanArgs pl;
    auto* p = app.add_subcommand("plan", "Write or validate an intervention plan JSON");
    p->add_option("--layers", pl.geometry.layers, "Model layers");
    p->add_option("--heads", pl.geometry.heads, "Heads per layer");
    p->add_option("--text-tokens", pl.geometry.text_tokens, "Text tokens per prompt");
    p->add_option("--image-tokens", pl.geometry.image_tokens, "Image tokens");
    p->add_option("--mask", pl.masks, "Mask attention to text tokens at one head: layer:head:t1,t2,...");
    p->add_option("--mask-all", pl.mask_all, "Mask text tokens at every head: t1,t2,...");
    p->add_option("--inject", pl.injections, "VO injection src_layer:src_head:dst_layer:dst_head");
    p->add_option("--validate", pl.validate, "Validate an existing plan file instead of writing one");
    p->add_option("--out", pl.out, "Plan JSON (default: stdout)");
    commands.emplace_back(p, [&] { return run_plan(pl); });

    ReportArgs rp;
    auto* r = app.add_subcommand("report", "Accuracy tables from evaluation JSONL and heat-map CSVs from synopses");
    r->add_option("--eval", rp.evals, "Evaluation JSONL (one table row each, in order)");
    r->add_option("--table-out", rp.table_out, "Accuracy table CSV");
    r->add_option("--synopsis", rp.synopses, "Synopsis JSON files");
    r->add_option("--heatmap-dir", rp.heatmap_dir, "Directory for layer x head CSV tables");
    commands.emplace_back(r, [&] { return run_report(rp); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int rc = app.exit(err);
        return rc == 0 ? 0 : 2;
    }

    try {
        for (auto& [sub, run] : commands) {
            if (sub->parsed()) return run();
        }
    } catch (const relcirc::Error& err) {
        std::cerr << "error [" << err.module() << "]: " << err.what() << '\n';
        return 1;
    } catch (const std::exception& err) {
        std::cerr << "error [cli-driver]: " << err.what() << '\n';
        return 1;
    }
    return 2;
}
