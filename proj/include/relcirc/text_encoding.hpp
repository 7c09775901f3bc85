#pragma once

// Random-embedding text encoders and text-token group masks.

#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "relcirc/errors.hpp"

namespace relcirc::text {

using TokenId = std::int64_t;
using RowMatrixXf = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr int kContextLength = 20;
inline constexpr int kEmbeddingDim = 4096;
inline constexpr double kEmbeddingScale = 7.5;
inline constexpr double kPositionScale = 1.0 / 6.0;

// Bijection between tokenizer ids and dense dictionary rows.
struct VocabMap {
    std::unordered_map<TokenId, std::size_t> input_ids2dict_ids;
    std::vector<TokenId> dict_ids2input_ids;

    std::size_t size() const { return dict_ids2input_ids.size(); }
    bool contains(TokenId id) const { return input_ids2dict_ids.count(id) != 0; }
    // Throws VocabularyError for unknown ids.
    std::size_t row_of(TokenId id) const;
};

struct EmbeddingDict {
    RowMatrixXf matrix;  // V' x D
    double scale = kEmbeddingScale;
    std::uint64_t seed = 0;
    VocabMap vocab;
};

// Sorted unique ids of a token matrix (any shape, flattened).
std::vector<TokenId> unique_ids(std::span<const TokenId> ids);

// Row i is i.i.d. N(0, scale^2 / D) and a pure function of (seed, i, column),
// so the dictionary is bit-identical for the same id order and seed.
EmbeddingDict build_embedding_dict(std::span<const TokenId> unique_ids, int dim = kEmbeddingDim,
                                   double scale = kEmbeddingScale, std::uint64_t seed = 0);

// wpe[t, 2k] = sin(t / 10000^(2k/D)), wpe[t, 2k+1] = cos(t / 10000^(2k/D)).
template <typename Scalar = float>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> sinusoidal_pos_encoding(int length, int dim);

enum class EncoderKind { rte, rte_pos };

struct EncodeOptions {
    EncoderKind kind = EncoderKind::rte;
    int context_length = kContextLength;
    TokenId pad_id = 0;
    double position_scale = kPositionScale;
};

// Pads to the context length with pad_id and looks rows up; rte_pos adds
// position_scale * wpe.
RowMatrixXf encode(const EmbeddingDict& dict, std::span<const TokenId> token_ids, const EncodeOptions& options = {});

// Whitespace tokenizer over the closed caption vocabulary, used when no
// external tokenizer ids are supplied. <pad> = 0, </s> = 1.
class CaptionTokenizer {
public:
    CaptionTokenizer();

    static constexpr TokenId kPad = 0;
    static constexpr TokenId kEos = 1;

    // Lowercases, drops a trailing period, appends </s>, pads to `length`.
    std::vector<TokenId> tokenize(const std::string& caption, int length = kContextLength) const;
    TokenId id_of(const std::string& word) const;
    const std::string& word_of(TokenId id) const;
    const std::vector<std::string>& words() const { return words_; }

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, TokenId> ids_;
};

// A group is selected by token ids or by explicit positions (or both).
struct GroupSelector {
    std::set<TokenId> ids;
    std::vector<int> positions;
};

using GroupSpec = std::map<std::string, GroupSelector>;
using TokenGroupMask = std::map<std::string, Eigen::VectorXf>;

TokenGroupMask token_group_masks(std::span<const TokenId> token_ids, const GroupSpec& spec,
                                 int width = kContextLength);

// Group spec JSON: {"name": {"ids": [...], "words": [...], "positions": [...]}}.
// "words" resolve through the caption tokenizer.
GroupSpec group_spec_from_json(const nlohmann::json& j, const CaptionTokenizer& tokenizer);
nlohmann::json to_json(const TokenGroupMask& masks);

nlohmann::json vocab_to_json(const VocabMap& vocab);
VocabMap vocab_from_json(const nlohmann::json& j);

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> sinusoidal_pos_encoding(int length, int dim) {
    if (dim <= 0 || dim % 2 != 0) throw InputError("text-encoding", "positional encoding needs an even dimension");
    if (length <= 0) throw InputError("text-encoding", "positional encoding needs a positive length");
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> wpe(length, dim);
    for (int t = 0; t < length; ++t) {
        for (int k = 0; 2 * k < dim; ++k) {
            const double angle = t / std::pow(10000.0, (2.0 * k) / dim);
            wpe(t, 2 * k) = static_cast<Scalar>(std::sin(angle));
            wpe(t, 2 * k + 1) = static_cast<Scalar>(std::cos(angle));
        }
    }
    return wpe;
}

}  // namespace relcirc::text
