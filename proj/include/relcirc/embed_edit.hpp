#pragma once

// Factor-vector arithmetic on prompt embeddings and authoring/validation of
// intervention plans executed by a model runtime.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "relcirc/errors.hpp"
#include "relcirc/varpart.hpp"

namespace relcirc::edit {

inline constexpr double kDefaultAlpha = 2.0;

struct FactorLevel {
    std::string factor;
    std::string level;
};

struct EditPlan {
    Eigen::Index token_index = 0;
    FactorLevel remove;
    FactorLevel add;
    double alpha = kDefaultAlpha;
};

// -beta_remove + alpha * beta_add, in double precision.
Eigen::VectorXd edit_delta(const varpart::EffectVectors<double>& effects, const EditPlan& plan);

// Row token_index becomes V - beta_remove + alpha * beta_add. Throws
// PlanError for an unknown factor or level and InputError on shape mismatch.
template <typename Derived>
typename Derived::PlainObject apply_edit(const Eigen::MatrixBase<Derived>& embedding,
                                         const varpart::EffectVectors<double>& effects, const EditPlan& plan) {
    using Scalar = typename Derived::Scalar;
    if (plan.token_index < 0 || plan.token_index >= embedding.rows()) {
        throw InputError("embed-edit", "token index " + std::to_string(plan.token_index) + " outside 0.." +
                                           std::to_string(embedding.rows() - 1));
    }
    const Eigen::VectorXd delta = edit_delta(effects, plan);
    if (delta.size() != embedding.cols()) {
        throw InputError("embed-edit", "effect vectors have dimension " + std::to_string(delta.size()) +
                                           ", embedding rows have " + std::to_string(embedding.cols()));
    }
    typename Derived::PlainObject out = embedding;
    out.row(plan.token_index) =
        (embedding.row(plan.token_index).template cast<double>() + delta.transpose()).template cast<Scalar>();
    return out;
}

enum class InterventionKind { mask_attention_to_tokens, mask_text_token, inject_vo };

std::string_view to_string(InterventionKind kind);
std::optional<InterventionKind> parse_intervention_kind(std::string_view text);

struct ModelGeometry {
    int layers = 0;
    int heads = 0;
    int text_tokens = 0;
    int image_tokens = 0;
};

struct HeadRef {
    int layer = 0;
    int head = 0;
};

inline constexpr const char* kVoDestination = "image-token positional embeddings";

struct Intervention {
    InterventionKind kind = InterventionKind::mask_attention_to_tokens;
    std::optional<int> layer;  // absent: every layer
    std::optional<int> head;   // absent: every head
    std::vector<int> text_token_indices;
    std::optional<HeadRef> source;  // inject_vo only
    std::string destination;        // inject_vo only
};

struct InterventionPlan {
    ModelGeometry geometry;
    std::vector<Intervention> interventions;
};

// One message per violated bound or ordering rule; empty when valid.
std::vector<std::string> validate_plan(const InterventionPlan& plan);

// Throws PlanError listing every violation.
void require_valid(const InterventionPlan& plan);

nlohmann::json to_json(const InterventionPlan& plan);
InterventionPlan plan_from_json(const nlohmann::json& j);

// Sorted-key JSON text with a trailing newline; validates first.
std::string emit_plan(const InterventionPlan& plan);
InterventionPlan parse_plan(const std::string& text);

Intervention mask_head_tokens(int layer, int head, std::vector<int> tokens);
Intervention mask_tokens_all_heads(std::vector<int> tokens);
Intervention inject_vo(HeadRef source, HeadRef destination);

}  // namespace relcirc::edit
