#include "relcirc/text_encoding.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "relcirc/geometry.hpp"
#include "relcirc/rng.hpp"
#include "relcirc/scene.hpp"

namespace relcirc::text {

namespace {

constexpr const char* kModule = "text-encoding";

}  // namespace

std::size_t VocabMap::row_of(TokenId id) const {
    const auto it = input_ids2dict_ids.find(id);
    if (it == input_ids2dict_ids.end()) throw VocabularyError(kModule, "token id " + std::to_string(id) + " not in vocabulary");
    return it->second;
}

std::vector<TokenId> unique_ids(std::span<const TokenId> ids) {
    std::vector<TokenId> out(ids.begin(), ids.end());
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

EmbeddingDict build_embedding_dict(std::span<const TokenId> ids, int dim, double scale, std::uint64_t seed) {
    if (ids.empty()) throw InputError(kModule, "embedding dictionary needs at least one token id");
    if (dim <= 0) throw InputError(kModule, "embedding dimension must be positive");
    EmbeddingDict dict;
    dict.scale = scale;
    dict.seed = seed;
    for (std::size_t row = 0; row < ids.size(); ++row) {
        if (!dict.vocab.input_ids2dict_ids.emplace(ids[row], row).second) {
            throw InputError(kModule, "duplicate token id " + std::to_string(ids[row]));
        }
        dict.vocab.dict_ids2input_ids.push_back(ids[row]);
    }
    const double sigma = scale / std::sqrt(static_cast<double>(dim));
    dict.matrix.resize(static_cast<Eigen::Index>(ids.size()), dim);
    for (Eigen::Index row = 0; row < dict.matrix.rows(); ++row) {
        for (int pair = 0; 2 * pair < dim; ++pair) {
            const auto [g0, g1] = gaussian_pair_at(seed, static_cast<std::uint64_t>(row), static_cast<std::uint64_t>(pair));
            dict.matrix(row, 2 * pair) = static_cast<float>(sigma * g0);
            if (2 * pair + 1 < dim) dict.matrix(row, 2 * pair + 1) = static_cast<float>(sigma * g1);
        }
    }
    return dict;
}

RowMatrixXf encode(const EmbeddingDict& dict, std::span<const TokenId> token_ids, const EncodeOptions& options) {
    const int length = options.context_length;
    if (static_cast<int>(token_ids.size()) > length) {
        throw InputError(kModule, "prompt has " + std::to_string(token_ids.size()) + " tokens, context length is " +
                                      std::to_string(length));
    }
    const auto dim = dict.matrix.cols();
    RowMatrixXf out(length, dim);
    for (int t = 0; t < length; ++t) {
        const TokenId id = t < static_cast<int>(token_ids.size()) ? token_ids[static_cast<std::size_t>(t)] : options.pad_id;
        out.row(t) = dict.matrix.row(static_cast<Eigen::Index>(dict.vocab.row_of(id)));
    }
    if (options.kind == EncoderKind::rte_pos) {
        const RowMatrixXf wpe = sinusoidal_pos_encoding<float>(length, static_cast<int>(dim));
        out += static_cast<float>(options.position_scale) * wpe;
    }
    return out;
}

CaptionTokenizer::CaptionTokenizer() {
    std::set<std::string> vocab{"red", "blue", "is"};
    for (auto s : kAllShapes) vocab.emplace(to_string(s));
    for (auto r : kAllRelations) {
        for (auto phrase : scene::paraphrases(r)) {
            std::istringstream words{std::string(phrase)};
            std::string w;
            while (words >> w) vocab.insert(w);
        }
    }
    words_ = {"<pad>", "</s>"};
    words_.insert(words_.end(), vocab.begin(), vocab.end());
    for (std::size_t i = 0; i < words_.size(); ++i) ids_[words_[i]] = static_cast<TokenId>(i);
}

TokenId CaptionTokenizer::id_of(const std::string& word) const {
    const auto it = ids_.find(word);
    if (it == ids_.end()) throw VocabularyError(kModule, "word '" + word + "' is outside the caption vocabulary");
    return it->second;
}

const std::string& CaptionTokenizer::word_of(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
        throw VocabularyError(kModule, "token id " + std::to_string(id) + " not in vocabulary");
    }
    return words_[static_cast<std::size_t>(id)];
}

std::vector<TokenId> CaptionTokenizer::tokenize(const std::string& caption, int length) const {
    std::string text = caption;
    std::transform(text.begin(), text.end(), text.begin(), [](unsigned char c) { return std::tolower(c); });
    while (!text.empty() && (text.back() == '.' || std::isspace(static_cast<unsigned char>(text.back())))) text.pop_back();
    std::vector<TokenId> ids;
    std::istringstream words(text);
    std::string w;
    while (words >> w) ids.push_back(id_of(w));
    ids.push_back(kEos);
    // Truncation keeps </s> last, like a max_length tokenizer.
    if (static_cast<int>(ids.size()) > length) {
        ids.resize(static_cast<std::size_t>(length));
        ids.back() = kEos;
    }
    ids.resize(static_cast<std::size_t>(length), kPad);
    return ids;
}

TokenGroupMask token_group_masks(std::span<const TokenId> token_ids, const GroupSpec& spec, int width) {
    if (static_cast<int>(token_ids.size()) > width) {
        throw InputError(kModule, "token sequence longer than mask width " + std::to_string(width));
    }
    TokenGroupMask masks;
    for (const auto& [name, selector] : spec) {
        Eigen::VectorXf mask = Eigen::VectorXf::Zero(width);
        for (std::size_t t = 0; t < token_ids.size(); ++t) {
            if (selector.ids.count(token_ids[t])) mask(static_cast<Eigen::Index>(t)) = 1.0f;
        }
        for (int p : selector.positions) {
            if (p < 0 || p >= width) {
                throw InputError(kModule, "group '" + name + "' position " + std::to_string(p) + " outside width " +
                                              std::to_string(width));
            }
            mask(p) = 1.0f;
        }
        masks.emplace(name, std::move(mask));
    }
    return masks;
}

GroupSpec group_spec_from_json(const nlohmann::json& j, const CaptionTokenizer& tokenizer) {
    GroupSpec spec;
    try {
        for (const auto& [name, value] : j.items()) {
            GroupSelector selector;
            if (value.contains("ids")) {
                for (const auto& id : value["ids"]) selector.ids.insert(id.get<TokenId>());
            }
            if (value.contains("words")) {
                for (const auto& w : value["words"]) selector.ids.insert(tokenizer.id_of(w.get<std::string>()));
            }
            if (value.contains("positions")) selector.positions = value["positions"].get<std::vector<int>>();
            spec.emplace(name, std::move(selector));
        }
    } catch (const nlohmann::json::exception& e) {
        throw InputError(kModule, std::string("malformed group spec: ") + e.what());
    }
    return spec;
}

nlohmann::json to_json(const TokenGroupMask& masks) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [name, mask] : masks) {
        std::vector<int> bits(static_cast<std::size_t>(mask.size()));
        for (Eigen::Index i = 0; i < mask.size(); ++i) bits[static_cast<std::size_t>(i)] = mask(i) != 0.0f;
        j[name] = bits;
    }
    return j;
}

nlohmann::json vocab_to_json(const VocabMap& vocab) {
    return nlohmann::json{{"dict_ids2input_ids", vocab.dict_ids2input_ids}};
}

VocabMap vocab_from_json(const nlohmann::json& j) {
    VocabMap vocab;
    try {
        vocab.dict_ids2input_ids = j.at("dict_ids2input_ids").get<std::vector<TokenId>>();
    } catch (const nlohmann::json::exception& e) {
        throw InputError(kModule, std::string("malformed vocab: ") + e.what());
    }
    for (std::size_t i = 0; i < vocab.dict_ids2input_ids.size(); ++i) {
        if (!vocab.input_ids2dict_ids.emplace(vocab.dict_ids2input_ids[i], i).second) {
            throw InputError(kModule, "duplicate id in vocab");
        }
    }
    return vocab;
}

}  // namespace relcirc::text
