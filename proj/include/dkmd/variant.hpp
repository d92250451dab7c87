#pragma once

#include <array>
#include <string>

#include "dkmd/error.hpp"

namespace dkmd {

// Named model derivations. Each one is a fixed toggle set over the knowledge
// channels, the fusion refinements, and the decoder knowledge sub-layer.
enum class AblationVariant {
    full,
    wo_GlobalK_All,
    wo_GlobalK_OnlyV,
    wo_LocalK,
    w_LocalK_AddT,
    wo_DKDA,
    wo_K_All,
    wo_TextualK_All,
    wo_VisualK_All,
    wo_V,
    wo_Dual,
    wo_VR,
    wo_TR,
};

inline constexpr std::array<AblationVariant, 13> kAllVariants = {
    AblationVariant::full,           AblationVariant::wo_GlobalK_All, AblationVariant::wo_GlobalK_OnlyV,
    AblationVariant::wo_LocalK,      AblationVariant::w_LocalK_AddT,  AblationVariant::wo_DKDA,
    AblationVariant::wo_K_All,       AblationVariant::wo_TextualK_All, AblationVariant::wo_VisualK_All,
    AblationVariant::wo_V,           AblationVariant::wo_Dual,        AblationVariant::wo_VR,
    AblationVariant::wo_TR,
};

inline const char* variant_name(AblationVariant v) {
    switch (v) {
        case AblationVariant::full: return "full";
        case AblationVariant::wo_GlobalK_All: return "wo-globalk-all";
        case AblationVariant::wo_GlobalK_OnlyV: return "wo-globalk-onlyv";
        case AblationVariant::wo_LocalK: return "wo-localk";
        case AblationVariant::w_LocalK_AddT: return "w-localk-addt";
        case AblationVariant::wo_DKDA: return "wo-dkda";
        case AblationVariant::wo_K_All: return "wo-k-all";
        case AblationVariant::wo_TextualK_All: return "wo-textualk-all";
        case AblationVariant::wo_VisualK_All: return "wo-visualk-all";
        case AblationVariant::wo_V: return "wo-v";
        case AblationVariant::wo_Dual: return "wo-dual";
        case AblationVariant::wo_VR: return "wo-vr";
        case AblationVariant::wo_TR: return "wo-tr";
    }
    return "unknown";
}

inline AblationVariant parse_variant(const std::string& name) {
    for (AblationVariant v : kAllVariants)
        if (name == variant_name(v)) return v;
    throw Error(ErrorCategory::config, "unknown variant '" + name + "'");
}

// Effective switches for one variant.
struct VariantToggles {
    bool text_knowledge_in_input = true;    // K_t in the encoder input
    bool vision_knowledge_in_input = true;  // K_v in the encoder input
    bool local_attend = true;               // per-image knowledge attention
    bool local_attend_add_text = false;     // prepend text knowledge to it
    bool dkda = true;                       // decoder knowledge sub-layer
    bool text_knowledge_in_decoder = true;  // K_t in the decoder knowledge
    bool vision_knowledge_in_decoder = true;
    bool vision_refine = true;
    bool text_refine = true;
    bool use_images = true;
};

inline VariantToggles toggles_for(AblationVariant v) {
    VariantToggles t;
    switch (v) {
        case AblationVariant::full:
            break;
        case AblationVariant::wo_GlobalK_All:
            t.text_knowledge_in_input = false;
            t.vision_knowledge_in_input = false;
            break;
        case AblationVariant::wo_GlobalK_OnlyV:
            t.vision_knowledge_in_input = false;
            break;
        case AblationVariant::wo_LocalK:
            t.local_attend = false;
            break;
        case AblationVariant::w_LocalK_AddT:
            t.local_attend_add_text = true;
            break;
        case AblationVariant::wo_DKDA:
            t.dkda = false;
            break;
        case AblationVariant::wo_K_All:
            t.text_knowledge_in_input = false;
            t.vision_knowledge_in_input = false;
            t.local_attend = false;
            t.dkda = false;
            t.text_knowledge_in_decoder = false;
            t.vision_knowledge_in_decoder = false;
            break;
        case AblationVariant::wo_TextualK_All:
            t.text_knowledge_in_input = false;
            t.text_knowledge_in_decoder = false;
            break;
        case AblationVariant::wo_VisualK_All:
            t.vision_knowledge_in_input = false;
            t.local_attend = false;
            t.vision_knowledge_in_decoder = false;
            break;
        case AblationVariant::wo_V:
            t.use_images = false;
            t.vision_knowledge_in_input = false;
            t.local_attend = false;
            t.vision_knowledge_in_decoder = false;
            t.vision_refine = false;
            t.text_refine = false;
            break;
        case AblationVariant::wo_Dual:
            t.vision_refine = false;
            t.text_refine = false;
            break;
        case AblationVariant::wo_VR:
            t.vision_refine = false;
            break;
        case AblationVariant::wo_TR:
            t.text_refine = false;
            break;
    }
    return t;
}

}  // namespace dkmd
