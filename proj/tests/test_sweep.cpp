#include <doctest.h>

#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "relcirc/errors.hpp"
#include "relcirc/scene.hpp"
#include "relcirc/sweep.hpp"
#include "relcirc/tensor_io.hpp"

using namespace relcirc;
using namespace relcirc::sweep;

TEST_CASE("the sweep enumerates 168 distinct prompts") {
    const auto prompts = sweep_prompts();
    CHECK(prompts.size() == 168);
    std::set<std::string> ids;
    std::map<RelationLabel, int> per_relation;
    int same_shape = 0, one_color = 0;
    for (const auto& p : prompts) {
        ids.insert(p.id);
        ++per_relation[p.relation];
        same_shape += p.shape1 == p.shape2;
        one_color += p.color1 != p.color2;
        CHECK_FALSE((!p.color1 && !p.color2));
        const auto parsed = scene::parse_caption(p.caption);
        REQUIRE(parsed.has_value());
        CHECK(parsed->shape1 == p.shape1);
        CHECK(parsed->shape2 == p.shape2);
        CHECK(parsed->relation == p.relation);
        CHECK(parsed->color1.has_value() == p.color1);
        CHECK(parsed->color2.has_value() == p.color2);
        CHECK(parsed->paraphrase == 0);
    }
    CHECK(ids.size() == 168);
    CHECK(per_relation.size() == 8);
    for (const auto& [rel, count] : per_relation) CHECK(count == 21);
    CHECK(same_shape == 24);
    CHECK(one_color == 96);
    CHECK(prompt_id(ShapeKind::circle, ShapeKind::square, RelationLabel::upper_left, true, true) ==
          "red-circle-upper_left-blue-square");
    CHECK(prompt_id(ShapeKind::circle, ShapeKind::square, RelationLabel::above, false, true) ==
          "circle-above-blue-square");
}

TEST_CASE("mask sets from explicit masks and from rendered images") {
    oracle::TempDir dir("sweep");
    scene::SceneSpec spec;
    spec.shape1 = ShapeKind::circle;
    spec.shape2 = ShapeKind::square;
    spec.pos1 = {30, 30};
    spec.pos2 = {90, 90};
    write_png(dir.file("a.png"), scene::render_scene(spec));
    write_png(dir.file("b.png"), Image(128, 128, scene::kBackground));

    nlohmann::json j;
    j["images"] = {"a.png", "b.png"};
    j["image_targets"] = {"circle", "background"};
    j["grid"] = 8;
    j["image_masks"] = {{"first_token", {std::vector<double>(64, 0.0), std::vector<double>(64, 0.0)}}};
    j["image_masks"]["first_token"][0][0] = 1.0;
    j["text_masks"] = {{"relation", std::vector<double>(20, 0.0)}};
    j["text_masks"]["relation"][3] = 1.0;
    {
        std::ofstream out(dir.file("masks.json"));
        out << j.dump();
    }
    const auto set = load_mask_set(dir.file("masks.json"));
    CHECK(set.image.size() == 3);
    CHECK(set.pairs.size() == 3);
    const auto& circle = set.image.at("circle");
    CHECK(circle.rows.rows() == 2);
    CHECK(circle.rows.row(0).sum() == doctest::Approx(1.0));
    CHECK(circle.rows.row(1).isZero());  // absent target, excluded sample
    CHECK(set.image.at("background").rows.row(1).sum() == doctest::Approx(1.0));

    nlohmann::json bad = j;
    bad["pairs"] = {{"circle", "nope"}};
    CHECK_THROWS_AS(mask_set_from_json(bad, dir.path()), InputError);
    nlohmann::json no_text = j;
    no_text.erase("text_masks");
    CHECK_THROWS_AS(mask_set_from_json(no_text, dir.path()), InputError);
}

TEST_CASE("run_synopsis streams one file against every pair") {
    oracle::TempDir dir("sweep");
    const attn::AttnGeometry g{3, 2, 2, 4, 4, 5};
    std::mt19937 gen(3);
    std::uniform_real_distribution<float> u(0.01f, 1.0f);
    std::vector<float> a(static_cast<std::size_t>(g.element_count()));
    for (std::size_t r = 0; r < a.size(); r += 5) {
        float sum = 0;
        for (int j = 0; j < 5; ++j) sum += a[r + j] = u(gen);
        for (int j = 0; j < 5; ++j) a[r + j] /= sum;
    }
    const auto path = dir.file("p.atns");
    tensor_io::write_tensor(path, std::vector<std::uint64_t>{4, 3, 2, 4, 4, 5}, tensor_io::DType::f32, a);
    tensor_io::write_meta(path, {{"sample", "layer", "step", "head", "img_tok", "txt_tok"}, 2});

    MaskSet masks;
    attn::ImageMasks<double> img;
    img.rows.resize(2, 4);
    img.rows << 0.5, 0.5, 0, 0, 0, 0, 0.25, 0.75;
    masks.image.emplace("obj", img);
    Eigen::VectorXd t1 = Eigen::VectorXd::Zero(5), t2 = Eigen::VectorXd::Zero(5);
    t1(1) = 1;
    t2(3) = t2(4) = 1;
    masks.text.emplace("rel", t1);
    masks.text.emplace("obj", t2);
    masks.pairs = {{"obj", "rel"}, {"obj", "obj"}};

    SynopsisOptions opt;
    opt.k = 3;
    const auto report = run_synopsis(path, masks, opt, "red-circle-above-blue-square");
    CHECK(report.layout == attn::Layout::sample_major);
    CHECK(report.geometry == g);
    CHECK(report.rows.rows == static_cast<std::int64_t>(a.size() / 5));
    REQUIRE(report.templates.size() == 2);
    const std::vector<std::vector<double>> img_rows{{0.5, 0.5, 0, 0}, {0, 0, 0.25, 0.75}};
    for (std::size_t p = 0; p < 2; ++p) {
        const auto& tm = p == 0 ? t1 : t2;
        const std::vector<double> txt(tm.data(), tm.data() + tm.size());
        const auto want = oracle::synopsis_scores(a, g, attn::Layout::sample_major, img_rows, txt);
        const auto& res = report.templates[p].result;
        for (int l = 0; l < 3; ++l)
            for (int h = 0; h < 4; ++h) {
                const double mean = (want.v[1][l][0][h] + want.v[1][l][1][h]) / 2;
                CHECK(res.cond.values(l, h) == doctest::Approx(mean).epsilon(1e-12));
            }
        CHECK(report.templates[p].topk.size() == 3);
    }

    const auto j = to_json(report);
    CHECK(j["prompt_id"] == "red-circle-above-blue-square");
    CHECK(j["layout"] == "sample_major");
    CHECK(j["templates"][0]["cond"].size() == 3);
    CHECK(j["templates"][0]["per_step_cond"][0].size() == 2);

    std::ostringstream topk;
    write_topk_rows(topk, report);
    std::istringstream lines(topk.str());
    std::string line;
    int count = 0;
    while (std::getline(lines, line)) {
        CHECK(line.rfind("red-circle-above-blue-square,obj,", 0) == 0);
        ++count;
    }
    CHECK(count == 6);
    CHECK(topk_csv_header() == "prompt_id,image,text,rank,layer,head,name,score");

    tensor_io::write_meta(path, {{"sample", "layer", "step", "head", "img_tok", "txt_tok"}, 3});
    CHECK_THROWS_AS(run_synopsis(path, masks, opt), InputError);
}

TEST_CASE("heatmap CSV layout") {
    attn::RowMatrix<double> m(2, 3);
    m << 0.5, 0.25, 1, 0, 0.125, 2;
    std::ostringstream out;
    write_heatmap_csv(out, m);
    CHECK(out.str() == "layer,H0,H1,H2\nL0,0.5,0.25,1\nL1,0,0.125,2\n");
}
