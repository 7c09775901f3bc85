#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "relcirc/errors.hpp"
#include "relcirc/text_encoding.hpp"

using namespace relcirc;
using namespace relcirc::text;

namespace {

bool bit_equal(const RowMatrixXf& a, const RowMatrixXf& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.size())) == 0;
}

}  // namespace

TEST_CASE("sinusoidal positions at t = 0 and t = 1") {
    const auto wpe = sinusoidal_pos_encoding<double>(4, 8);
    for (int k = 0; k < 8; ++k) CHECK(wpe(0, k) == (k % 2 ? 1.0 : 0.0));
    CHECK(wpe.row(0).squaredNorm() == 4.0);
    CHECK(wpe(1, 0) == doctest::Approx(0.8414709848).epsilon(1e-10));
    CHECK(wpe(1, 1) == doctest::Approx(std::cos(1.0)).epsilon(1e-12));
    CHECK(wpe(2, 2) == doctest::Approx(std::sin(2.0 / std::pow(10000.0, 2.0 / 8))).epsilon(1e-12));
    CHECK_THROWS_AS(sinusoidal_pos_encoding<float>(4, 7), InputError);
}

TEST_CASE("dictionary rows have the requested scale") {
    std::vector<TokenId> ids(1000);
    for (int i = 0; i < 1000; ++i) ids[static_cast<std::size_t>(i)] = i;
    const auto dict = build_embedding_dict(ids, 4096, 7.5, 0);
    CHECK(dict.matrix.rows() == 1000);
    double mean_sq = 0;
    for (Eigen::Index r = 0; r < dict.matrix.rows(); ++r) mean_sq += dict.matrix.row(r).cast<double>().squaredNorm();
    mean_sq /= 1000;
    CHECK(std::abs(mean_sq - 56.25) / 56.25 < 0.05);
}

TEST_CASE("dictionaries are reproducible and seed dependent") {
    const std::vector<TokenId> ids{5, 9, 100};
    const auto a = build_embedding_dict(ids, 64, 7.5, 3);
    const auto b = build_embedding_dict(ids, 64, 7.5, 3);
    CHECK(bit_equal(a.matrix, b.matrix));
    const auto c = build_embedding_dict(ids, 64, 7.5, 4);
    CHECK_FALSE(bit_equal(a.matrix, c.matrix));
    const std::vector<TokenId> one{42};
    CHECK(build_embedding_dict(one, 16).matrix.rows() == 1);
    const std::vector<TokenId> dup{1, 1};
    CHECK_THROWS_AS(build_embedding_dict(dup, 16), InputError);
}

TEST_CASE("vocab maps are inverse bijections") {
    const std::vector<TokenId> ids{3, 17, 250, 4};
    const auto dict = build_embedding_dict(ids, 8);
    for (std::size_t r = 0; r < ids.size(); ++r) {
        CHECK(dict.vocab.dict_ids2input_ids[r] == ids[r]);
        CHECK(dict.vocab.row_of(ids[r]) == r);
    }
    CHECK_THROWS_AS(dict.vocab.row_of(99), VocabularyError);
    const auto back = vocab_from_json(vocab_to_json(dict.vocab));
    CHECK(back.dict_ids2input_ids == dict.vocab.dict_ids2input_ids);
    CHECK(back.row_of(250) == 2);
}

TEST_CASE("rte is positionless: permuting tokens permutes rows") {
    CaptionTokenizer tok;
    std::vector<TokenId> all(tok.words().size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<TokenId>(i);
    const auto dict = build_embedding_dict(all, 32, 7.5, 1);
    const auto a = tok.tokenize("red circle is above blue square");
    auto b = a;
    std::vector<int> perm(20);
    for (int i = 0; i < 20; ++i) perm[static_cast<std::size_t>(i)] = (i * 7) % 20;
    for (int i = 0; i < 20; ++i) b[static_cast<std::size_t>(i)] = a[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
    const auto ea = encode(dict, a);
    const auto eb = encode(dict, b);
    for (int i = 0; i < 20; ++i) CHECK(eb.row(i) == ea.row(perm[static_cast<std::size_t>(i)]));
}

TEST_CASE("swapped object phrases give row-permuted rte encodings") {
    CaptionTokenizer tok;
    std::vector<TokenId> all(tok.words().size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<TokenId>(i);
    const auto dict = build_embedding_dict(all, 32, 7.5, 2);
    const auto a = encode(dict, tok.tokenize("red circle is above blue square"));
    const auto b = encode(dict, tok.tokenize("blue square is above red circle"));
    // Sort rows lexicographically and compare the multisets.
    auto sorted_rows = [](const RowMatrixXf& m) {
        std::vector<std::vector<float>> rows;
        for (Eigen::Index r = 0; r < m.rows(); ++r) rows.emplace_back(m.row(r).data(), m.row(r).data() + m.cols());
        std::sort(rows.begin(), rows.end());
        return rows;
    };
    CHECK(sorted_rows(a) == sorted_rows(b));
    CHECK_FALSE(bit_equal(a, b));
}

TEST_CASE("rte_pos adds exactly one sixth of the positional table") {
    const std::vector<TokenId> ids{0, 1, 2, 3};
    const auto dict = build_embedding_dict(ids, 64, 7.5, 9);
    const std::vector<TokenId> prompt{2, 3, 1};
    EncodeOptions pos;
    pos.kind = EncoderKind::rte_pos;
    const auto plain = encode(dict, prompt);
    const auto with_pos = encode(dict, prompt, pos);
    const RowMatrixXf shift = static_cast<float>(1.0 / 6.0) * sinusoidal_pos_encoding<float>(20, 64);
    const RowMatrixXf expected = plain + shift;
    CHECK(bit_equal(with_pos, expected));
    CHECK(((with_pos - plain) - shift).cwiseAbs().maxCoeff() <= 1e-6f);
}

TEST_CASE("encoding pads with the pad id and rejects unknown ids") {
    const std::vector<TokenId> ids{0, 7};
    const auto dict = build_embedding_dict(ids, 8);
    const std::vector<TokenId> prompt{7};
    const auto e = encode(dict, prompt);
    CHECK(e.rows() == 20);
    CHECK(e.row(0) == dict.matrix.row(1));
    for (int t = 1; t < 20; ++t) CHECK(e.row(t) == dict.matrix.row(0));
    const std::vector<TokenId> bad{8};
    CHECK_THROWS_AS(encode(dict, bad), VocabularyError);
    const std::vector<TokenId> too_long(21, 7);
    CHECK_THROWS_AS(encode(dict, too_long), InputError);
}

TEST_CASE("caption tokenizer") {
    CaptionTokenizer tok;
    CHECK(tok.word_of(0) == "<pad>");
    CHECK(tok.word_of(1) == "</s>");
    const auto ids = tok.tokenize("Red circle is above blue square.");
    REQUIRE(ids.size() == 20);
    CHECK(tok.word_of(ids[0]) == "red");
    CHECK(tok.word_of(ids[5]) == "square");
    CHECK(ids[6] == CaptionTokenizer::kEos);
    CHECK(std::all_of(ids.begin() + 7, ids.end(), [](TokenId t) { return t == CaptionTokenizer::kPad; }));
    CHECK_THROWS_AS(tok.tokenize("red dog"), VocabularyError);
}

TEST_CASE("group masks") {
    CaptionTokenizer tok;
    const auto ids = tok.tokenize("red square is above blue circle");
    GroupSpec spec;
    spec["square"].ids = {tok.id_of("square")};
    spec["empty"] = {};
    spec["first"].positions = {0};
    const auto masks = token_group_masks(ids, spec);
    CHECK(masks.at("square").sum() == 1.0f);
    CHECK(masks.at("square")(1) == 1.0f);
    CHECK(masks.at("empty").isZero());
    CHECK(masks.at("first")(0) == 1.0f);

    const auto ids2 = tok.tokenize("red square is above and to the left of blue circle");
    GroupSpec filler;
    for (const char* w : {"and", "to", "the", "of"}) filler["filler"].ids.insert(tok.id_of(w));
    const auto fm = token_group_masks(ids2, filler);
    CHECK(fm.at("filler").sum() >= 4.0f);
    for (Eigen::Index i = 0; i < fm.at("filler").size(); ++i) {
        const float v = fm.at("filler")(i);
        CHECK((v == 0.0f || v == 1.0f));
    }

    GroupSpec out_of_range;
    out_of_range["x"].positions = {20};
    CHECK_THROWS_AS(token_group_masks(ids, out_of_range), InputError);

    const auto parsed = group_spec_from_json(nlohmann::json::parse(R"({"obj": {"words": ["circle"], "positions": [2]}})"), tok);
    const auto pm = token_group_masks(ids, parsed);
    CHECK(pm.at("obj").sum() == 2.0f);
}
