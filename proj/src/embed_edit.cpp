#include "relcirc/embed_edit.hpp"

#include <sstream>

namespace relcirc::edit {

namespace {

constexpr const char* kModule = "embed-edit";

Eigen::VectorXd level_vector(const varpart::EffectVectors<double>& effects, const FactorLevel& fl) {
    try {
        return effects.vector(fl.factor, fl.level);
    } catch (const InputError& e) {
        throw PlanError(kModule, e.what());
    }
}

void check_index(std::vector<std::string>& errors, const std::string& where, const char* what, int value, int bound) {
    if (value < 0 || value >= bound) {
        errors.push_back(where + ": " + what + " " + std::to_string(value) + " outside 0.." + std::to_string(bound - 1));
    }
}

}  // namespace

Eigen::VectorXd edit_delta(const varpart::EffectVectors<double>& effects, const EditPlan& plan) {
    return plan.alpha * level_vector(effects, plan.add) - level_vector(effects, plan.remove);
}

std::string_view to_string(InterventionKind kind) {
    switch (kind) {
        case InterventionKind::mask_attention_to_tokens: return "mask_attention_to_tokens";
        case InterventionKind::mask_text_token: return "mask_text_token";
        case InterventionKind::inject_vo: return "inject_vo";
    }
    return "?";
}

std::optional<InterventionKind> parse_intervention_kind(std::string_view text) {
    for (auto k : {InterventionKind::mask_attention_to_tokens, InterventionKind::mask_text_token,
                   InterventionKind::inject_vo}) {
        if (to_string(k) == text) return k;
    }
    return std::nullopt;
}

std::vector<std::string> validate_plan(const InterventionPlan& plan) {
    std::vector<std::string> errors;
    const auto& g = plan.geometry;
    if (g.layers <= 0 || g.heads <= 0 || g.text_tokens <= 0 || g.image_tokens <= 0) {
        errors.push_back("geometry: layers, heads, text_tokens and image_tokens must be positive");
        return errors;
    }
    for (std::size_t i = 0; i < plan.interventions.size(); ++i) {
        const auto& iv = plan.interventions[i];
        const std::string where = "interventions[" + std::to_string(i) + "]";
        if (iv.layer) check_index(errors, where, "layer", *iv.layer, g.layers);
        if (iv.head) check_index(errors, where, "head", *iv.head, g.heads);
        for (int t : iv.text_token_indices) check_index(errors, where, "text token", t, g.text_tokens);
        switch (iv.kind) {
            case InterventionKind::mask_attention_to_tokens:
            case InterventionKind::mask_text_token:
                if (iv.text_token_indices.empty()) errors.push_back(where + ": no text tokens listed");
                if (iv.source) errors.push_back(where + ": source is only valid for inject_vo");
                break;
            case InterventionKind::inject_vo:
                if (!iv.source) {
                    errors.push_back(where + ": inject_vo needs a source head");
                    break;
                }
                if (!iv.layer || !iv.head) errors.push_back(where + ": inject_vo needs a destination layer and head");
                check_index(errors, where, "source layer", iv.source->layer, g.layers);
                check_index(errors, where, "source head", iv.source->head, g.heads);
                if (iv.layer && iv.source->layer >= *iv.layer) {
                    errors.push_back(where + ": source layer " + std::to_string(iv.source->layer) +
                                     " must precede destination layer " + std::to_string(*iv.layer));
                }
                break;
        }
    }
    return errors;
}

void require_valid(const InterventionPlan& plan) {
    const auto errors = validate_plan(plan);
    if (errors.empty()) return;
    std::string message = "invalid intervention plan";
    for (const auto& e : errors) message += "; " + e;
    throw PlanError(kModule, message);
}

nlohmann::json to_json(const InterventionPlan& plan) {
    nlohmann::json j;
    j["geometry"] = {{"layers", plan.geometry.layers},
                     {"heads", plan.geometry.heads},
                     {"text_tokens", plan.geometry.text_tokens},
                     {"image_tokens", plan.geometry.image_tokens}};
    j["interventions"] = nlohmann::json::array();
    for (const auto& iv : plan.interventions) {
        nlohmann::json e;
        e["kind"] = std::string(to_string(iv.kind));
        if (iv.layer) e["layer"] = *iv.layer;
        if (iv.head) e["head"] = *iv.head;
        if (iv.kind != InterventionKind::inject_vo || !iv.text_token_indices.empty()) {
            e["text_token_indices"] = iv.text_token_indices;
        }
        if (iv.source) e["source"] = {{"layer", iv.source->layer}, {"head", iv.source->head}};
        if (!iv.destination.empty()) e["destination"] = iv.destination;
        j["interventions"].push_back(std::move(e));
    }
    return j;
}

InterventionPlan plan_from_json(const nlohmann::json& j) {
    InterventionPlan plan;
    try {
        const auto& g = j.at("geometry");
        plan.geometry.layers = g.at("layers").get<int>();
        plan.geometry.heads = g.at("heads").get<int>();
        plan.geometry.text_tokens = g.at("text_tokens").get<int>();
        plan.geometry.image_tokens = g.at("image_tokens").get<int>();
        for (const auto& e : j.at("interventions")) {
            Intervention iv;
            const auto kind_text = e.at("kind").get<std::string>();
            const auto kind = parse_intervention_kind(kind_text);
            if (!kind) throw PlanError(kModule, "unknown intervention kind '" + kind_text + "'");
            iv.kind = *kind;
            if (e.contains("layer")) iv.layer = e["layer"].get<int>();
            if (e.contains("head")) iv.head = e["head"].get<int>();
            if (e.contains("text_token_indices")) iv.text_token_indices = e["text_token_indices"].get<std::vector<int>>();
            if (e.contains("source")) iv.source = HeadRef{e["source"].at("layer").get<int>(), e["source"].at("head").get<int>()};
            if (e.contains("destination")) iv.destination = e["destination"].get<std::string>();
            plan.interventions.push_back(std::move(iv));
        }
    } catch (const nlohmann::json::exception& e) {
        throw PlanError(kModule, std::string("malformed plan: ") + e.what());
    }
    return plan;
}

std::string emit_plan(const InterventionPlan& plan) {
    require_valid(plan);
    // nlohmann::json objects are std::map backed, so keys come out sorted.
    return to_json(plan).dump(2) + "\n";
}

InterventionPlan parse_plan(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw PlanError(kModule, std::string("plan is not JSON: ") + e.what());
    }
    auto plan = plan_from_json(j);
    require_valid(plan);
    return plan;
}

Intervention mask_head_tokens(int layer, int head, std::vector<int> tokens) {
    Intervention iv;
    iv.kind = InterventionKind::mask_attention_to_tokens;
    iv.layer = layer;
    iv.head = head;
    iv.text_token_indices = std::move(tokens);
    return iv;
}

Intervention mask_tokens_all_heads(std::vector<int> tokens) {
    Intervention iv;
    iv.kind = InterventionKind::mask_text_token;
    iv.text_token_indices = std::move(tokens);
    return iv;
}

Intervention inject_vo(HeadRef source, HeadRef destination) {
    Intervention iv;
    iv.kind = InterventionKind::inject_vo;
    iv.source = source;
    iv.layer = destination.layer;
    iv.head = destination.head;
    iv.destination = kVoDestination;
    return iv;
}

}  // namespace relcirc::edit
