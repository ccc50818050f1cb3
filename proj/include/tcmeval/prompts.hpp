#pragma once

#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "tcmeval/error.hpp"
#include "tcmeval/rubric.hpp"
#include "tcmeval/text.hpp"

namespace tcmeval {

inline constexpr std::string_view kLabelPlaceholder = "{label_content}";
inline constexpr std::string_view kResponsePlaceholder = "{model_response}";

// Judge rubric and output schema, reproduced verbatim.
inline constexpr std::string_view kJudgeSystemPrompt = R"PROMPT(You are a professional TCM evaluation expert. Your task is to compare the TCM diagnostic content generated by an AI model against a standard answer (label) and score/analyze the following five distinct Items.

Please output the evaluation results strictly in the following JSON SCHEMA:

```
{
  "Completeness": {
    "score": 0,
    "Number of Items Actually Answered ": 0,
    "Total Number of Items Requiring Responses ": 5,
    "Missing Item": []
  },
  "Analysis of Etiology and Pathogenesis": {
    "score": 0,
    "Recognition of Etiology": 0,
    "Description of Pathogenesis": 0,
    "Logical Coherence ": 0
  },
  "Syndrome Differentiation": {
    "score": 0,
    "Accuracy of Syndrome": 0,
    "Disease Location and Nature ": 0
  },
  "Treatment Principle": {
    "score": 0,
    "Accuracy of Treatment Principle": 0,
    " Specificity of Treatment Method ": 0,
    " Application of Specialized Methods ": 0
  },
  "TCM Prescription": {
    "score": 0,
    " Medicinal Match Score ": 0,
    "Number of matched herbs": 0,
    "Number of Herbs in Label Prescription": 0,
    "Number of Herbs in Model-Generated Prescription": 0,
    "The List of Overlapped Herbs in both TCM Prescriptions ": [],
    "Matching rates": "0%"
  },
  "Distinguished Theory application": {
    "score": 0,
    "Accuracy of Academic Thought": 0,
    "Pervasiveness of Thought": 0,
    "Completeness of Elaboration": 0
  },
  "Total Score": 0,
  "Maximum Score": 55
}
```

Detailed Evaluation Criteria:

0. Response Completeness (Basic points, Max 5 points)

- **Calculation:** Score = (Number of Items actually answered / 5) × 5
- All 5 Items answered: 5 points
- 4 Items answered: 4 points
- 3 Items answered: 3 points
- 2 Items answered: 2 points
- 1 Item answered: 1 point
- No valid response or completely unanswered: 0 points

Judgment Standard:

- **"Valid Response" Definition:** The Item contains substantive content, not blank, "unknown," "cannot answer," or other invalid expressions.
- If an Item has only 1-2 sentences but contains substantive content, it is considered a valid response, but quality differences will be reflected in the specific scoring for that Item.

1. Etiology and Pathogenesis Analysis (Max 10 points)

- **1.1 Accuracy of Etiology Identification (4 points)**
 - 4: Accurately identifies all main pathogenic factors; analysis is comprehensive and conforms to TCM theory.
 - 3: Identifies main etiology (>80%), with only minor factors omitted.
 - 2: Identifies some etiology (50%-80%), with certain omissions or slightly inaccurate.
 - 1: Identifies only a few etiological factors (<50%), or contains obvious errors.
 - 0: Completely incorrect or unanswered.
- **1.2 Completeness of Pathogenesis Elaboration (4 points)**
 - 4: Fully elaborates the pathological progression, including the nature of pathogenic qi, disease location, disease tendency, etc.
 - 3: Relatively complete elaboration, covering most core elements (>80%).
 - 2: Basically reasonable but incomplete elaboration (50%-80%).
 - 1: Incomplete elaboration (<50%).
 - 0: Completely incorrect or unanswered.
- **1.3 Logical Coherence (2 points)**
 - 2: Clear causal relationship from Etiology → Pathogenesis → Symptoms.

- 1: Basically coherent, but with some logical jumps in parts.
- 0: Illogical or self-contradictory.
- **Total Score Calculation:** Etiology Identification + Pathogenesis Elaboration + Logical Coherence

2. Syndrome Differentiation (Max 10 points)

- **2.1 Accuracy of Syndrome Diagnosis (6 points)**
 - 6: Syndrome name fully conforms to TCM standards, consistent with the standard answer or uses an equivalent syndrome name.
 - 5: Syndrome diagnosis is accurate, wording differs slightly but core meaning is the same (e.g., "Liver Depression and Spleen Deficiency" vs. "Liver-Spleen Disharmony").
 - 4: Syndrome is basically accurate, covers the main Pathogenesis, but might omit secondary syndromes or wording is not precise enough.
 - 3: Syndrome is partially accurate, captures some core elements but has certain deviations (e.g., correct only in disease location OR nature).
 - 2: Syndrome diagnosis has significant deviation, but still has some relevance to the condition.
 - 1: Syndrome is wrong, but disease location OR nature is partially correct.
 - 0: Completely incorrect or unanswered.
- **2.2 Clarity of Disease Location and Nature (4 points)**
 - 4: Clearly and accurately specifies disease location and nature.
 - 3: Disease location and nature are basically clear, with 1-2 minor inaccuracies in wording.
 - 2: Either disease location or nature is clear, the other is vague or deviated.
 - 1: Expression of disease location and nature is vague or only partially correct.
 - 0: Completely incorrect or not specified.
- **Total Score Calculation:** Syndrome Accuracy + Clarity of Location/Nature

3. Treatment Principles (Max 10 points)

- **3.1 Accuracy of Treatment Principle (5 points)**
 - 5: The overarching treatment method is completely correct and fully corresponds to the syndrome.
 - 4: Treatment principle is accurate, wording differs slightly but essence is the same.
 - 3: Treatment principle is basically correct, but might omit secondary principles.
 - 2: Treatment principle is partially correct, but has certain deviations.
 - 1: Treatment principle has major deviations.
 - 0: Treatment principle is wrong or unanswered.
- **3.2 Specificity of Treatment Method (3 points)**
 - 3: Treatment method highly aligns with the etiology, Pathogenesis, and syndrome differentiation result.
 - 2: Treatment method is relatively specific, but might lack consideration for minor aspects.
 - 1: Treatment method has some specificity, but is not precise enough.
 - 0: Treatment method lacks specificity or unanswered.
- **3.3 Application of Characteristic Methods (2 points)**

- 2: Clearly embodies the physician's characteristic treatment ideas, applied appropriately.
- 1: Somewhat embodied but not prominent.
- 0: Not embodied.
- **Total Score Calculation:** Principle Accuracy + Method Specificity + Characteristic Methods

4. TCM Prescription (Max 10 points)

- **4.1 Medicinal Match Score (9 points)**
 - **Calculation:** Score = (Number of identical medicinals / Total number of medicinals in standard answer) × 9
 - **Matching Rule:** Extract all Chinese medicinal names from the standard answer and the model's generation. Count the number of identical medicinals.
 - **Alias Handling:** Medicinals with the same efficacy but different names are considered identical. Medicinals with similar names but different efficacy are not considered identical. Medicinals from the same source but different processing methods are considered identical.
- **4.2 Formula Composition Logic (1 point)**
 - 1: Overall formula composition is reasonable, conforms to the principles of Sovereign, Minister, Assistant, Envoy (Jun Chen Zuo Shi).
 - 0.5: Composition is basically reasonable, but has minor flaws.
 - 0: Contains incompatibility contraindications or clearly unreasonable combination of traditional Chinese medicines.

Example:

- Standard Answer: Huang Qin 10g, Huang Lian 10g, Jin Yin Hua 10g, Lian Qiao 10g, Tao Ren 10g, Hong Hua 10g, Dang Gui 10g, Chuan Xiong 10g, Chi Shao 10g, Gui Zhi 10g, Zhi Qiao 10g, Gan Cao 10g (Total: 12 medicinals)
- Model Answer: Chai Hu 15g, Huang Qin 10g, Gui Zhi 9g, Bai Shao 12g, Ge Gen 20g, Huang Lian 6g, Tian Hua Fen 15g, Mu Dan Pi 10g, Chi Shao 10g, Sheng Jiang 3 slices, Da Zao 5 pieces, Gan Cao 6g (Total: 12 medicinals)
- Identical Medicinals: Huang Qin, Huang Lian, Gui Zhi, Chi Shao, Gan Cao (5 medicinals)
- Medicinal Match Score: $5/12 \times 9 = 3.75$ points
- Composition Logic: Reasonable, 1 point
- Total Score: $3.75 + 1 = 4.75$ points
- **Total Score Calculation:** Medicinal Match Score + Composition Logic

5. Application of Specialized TCM knowledge System (Max 10 points)

- **5.1 Accuracy of Academic Thought (5 points)**
 - 5: Accurately embodies the core academic thinking of the specific physician.
 - 4: Fairly accurately embodies the main academic thoughts.
 - 3: Basically embodies the academic thought.
 - 2: Partially embodies the academic thought.
 - 1: Embodiment of academic thought is not obvious.
 - 0: Not embodied or misunderstood.
- **5.2 Pervasiveness of Thought (3 points)**

- 3: Academic thought permeates the entire process: etiology/Pathogenesis, syndrome differentiation, treatment method, formula/medicinals.
- 2: Academic thought is reflected in multiple stages.
- 1: Academic thought is only reflected in partial stages.
- 0: Academic thought is not pervasive.
- **5.3 Completeness of Elaboration (2 points)**
 - 2: Elaboration of the characteristic thought is clear and complete.
 - 1: Elaboration is basically clear, but not complete enough.
 - 0: Elaboration is unclear or absent.
- **Total Score Calculation:** Academic Thought Accuracy + Thought Pervasiveness + Elaboration Completeness

Important Notes:

1. **Objectivity and Fairness:** Scoring must be based on TCM theory and clinical practice, avoiding subjective bias.
2. **Response Completeness Priority:** First, evaluate whether the model has answered all Items completely. This is the basic scoring item.
3. **Medicinal Matching Rules:**
 - Disregard differences in dosage, processing method, place of origin, etc.
 - For alias medicinals, judge equivalence based on formula indication and efficacy.
 - For medicinals with the same name but different sources (e.g., Nan Sha Shen / Bei Sha Shen), judge based on efficacy.
4. **Scoring Anchor:** Strictly adhere to the descriptions corresponding to each score. Each dimension has clear scoring criteria.
5. **Handling Missing Items:**
 - If an Item is missing from the standard answer, that Item is not scored, and the total score is adjusted accordingly.
 - If the model did not answer an Item, that Item scores 0 points, but it must be marked in the “Missing Items”.
6. If any or all of the five Items in JSON SCHEMA are null/empty, directly assign a score of 0 for the corresponding item.
7. **Total Score Calculation:** Max Score = Response Completeness (5 points) + Total of five Items (50 points) = 55 points.)PROMPT";

inline constexpr std::string_view kJudgeUserPrompt = R"PROMPT(Please evaluate the model-generated content with the label based on the instructions provided in **SYSTEM PROMPT**, and output the evaluations according the provided JSON SCHEMA:

Label: {label_content}

Model response: {model_response}

Output scores:)PROMPT";

struct PromptTemplate {
    std::string system{kJudgeSystemPrompt};
    std::string user{kJudgeUserPrompt};
};

struct PromptPair {
    std::string system;
    std::string user;
    bool operator==(const PromptPair&) const = default;
};

// Substitutes both payloads in one pass over the template, so placeholder
// text inside a payload is never expanded.
inline PromptPair build_judge_prompt(std::string_view label_content, std::string_view model_response,
                                     const PromptTemplate& tmpl = {}) {
    for (auto placeholder : {kLabelPlaceholder, kResponsePlaceholder}) {
        const auto n = text::count_occurrences(tmpl.user, placeholder);
        if (n != 1) {
            throw template_error("user template must contain " + std::string(placeholder) +
                                 " exactly once, found " + std::to_string(n));
        }
    }
    const auto label_at = tmpl.user.find(kLabelPlaceholder);
    const auto response_at = tmpl.user.find(kResponsePlaceholder);
    const bool label_first = label_at < response_at;
    const auto first_at = label_first ? label_at : response_at;
    const auto second_at = label_first ? response_at : label_at;
    const auto first_len = (label_first ? kLabelPlaceholder : kResponsePlaceholder).size();
    const auto second_len = (label_first ? kResponsePlaceholder : kLabelPlaceholder).size();
    const auto first_payload = label_first ? label_content : model_response;
    const auto second_payload = label_first ? model_response : label_content;

    std::string user;
    user.reserve(tmpl.user.size() + label_content.size() + model_response.size());
    user.append(tmpl.user, 0, first_at);
    user.append(first_payload);
    user.append(tmpl.user, first_at + first_len, second_at - first_at - first_len);
    user.append(second_payload);
    user.append(tmpl.user, second_at + second_len, std::string::npos);
    return {tmpl.system, std::move(user)};
}

// response_format payload for endpoints with native structured output.
inline nlohmann::json structured_output_format() {
    using nlohmann::json;
    auto number = json{{"type", "number"}};
    auto strings = json{{"type", "array"}, {"items", {{"type", "string"}}}};
    auto object = [](std::initializer_list<std::pair<std::string_view, json>> fields) {
        json props = json::object();
        json required = json::array();
        for (const auto& [key, type] : fields) {
            props[std::string(key)] = type;
            required.push_back(std::string(key));
        }
        return json{{"type", "object"},
                    {"properties", props},
                    {"required", required},
                    {"additionalProperties", false}};
    };
    auto schema = object({
        {keys::completeness, object({{keys::score, number}, {keys::answered, number},
                                     {keys::required, number}, {keys::missing, strings}})},
        {keys::etiology, object({{keys::score, number}, {keys::recognition, number},
                                 {keys::pathogenesis, number}, {keys::coherence, number}})},
        {keys::syndrome, object({{keys::score, number}, {keys::syndrome_accuracy, number},
                                 {keys::location_nature, number}})},
        {keys::principle, object({{keys::score, number}, {keys::principle_accuracy, number},
                                  {keys::specificity, number}, {keys::specialized, number}})},
        {keys::prescription,
         object({{keys::score, number}, {keys::match_score, number}, {keys::n_matched, number},
                 {keys::n_label, number}, {keys::n_generated, number}, {keys::overlapped, strings},
                 {keys::rate, json{{"type", "string"}}}})},
        {keys::theory, object({{keys::score, number}, {keys::theory_accuracy, number},
                               {keys::pervasiveness, number}, {keys::elaboration, number}})},
        {keys::total, number},
        {keys::maximum, number},
    });
    return json{{"type", "json_schema"},
                {"json_schema", {{"name", "tcm_evaluation"}, {"schema", schema}, {"strict", true}}}};
}

inline constexpr std::string_view kCorrectiveSuffix =
    "\n\nReturn only one JSON object that follows the JSON SCHEMA exactly, with no other text.";

} // namespace tcmeval
