#include "simdistill/prompts.hpp"

namespace simdistill {

namespace {

constexpr std::string_view kDirect =
    R"(You are a sophisticated user behavior emulator.
Given a user profile and an exposure list, generate a user behavior in the given exposure list.
Each choice in the exposure list is indicated by a alphabetic identifier [A], [B], [C], etc. Your output should be a choice identifier from the exposure list, for example, "Behavior: [G]".)";

constexpr std::string_view kDecision =
    R"(You are a sophisticated user behavior emulator, tasked with simulating user responses within a general recommendation context. Given a user profile and an exposure list, generate a detailed, first-person intent statement that reflects the user's behavior. Your simulations should be adapted for diverse recommendation domains such as media, businesses, and e-commerce.

Intent Structure and Content:
The intent should be structured as a logical progression through the following stages, each marked by a corresponding label:
- Stimulus: [Describe the initial motivation or need that initiates the user's thought process. This should connect to their profile's spatial, temporal, thematic preferences, causal, and social factors.]
  - Stimulus Factors: [List 1-3 most relevant factors from: Internal States (Boredom, Hunger, Thirst, Fatigue/Restlessness, Emotional State, Curiosity, Need for Achievement, Inspiration), External Cues (Time of Day, Day of Week, Weather, Location, Social Factors, Special Occasion, Notification, Advertising, Financial Situation, Availability)]
- Knowledge: [Describe the user's thought process as they gain knowledge from the exposure list. Highlight specific attributes of the options that resonate with the user's preferences, drawing on the user profile.]
  - Knowledge Factors: [List 2-4 most influential factors from: Product/Service Attributes (Price, Quality, Features, Convenience, Novelty, Brand Reputation, Personal Relevance (Functional, Thematic, Identity-Based), Emotional Appeal, Time Commitment, Risk), Information Source & Presentation (Visual Presentation, Recommendation Source, Review Content/Sentiment, Rating Score/Distribution, Social Proof), User's Prior Knowledge (Past Experience, User Preferences/History)]
- Evaluation: [Explain the user's internal justification for their preference.]
  - Evaluation Style: [Specify 1 style of the evaluation process, such as Logical, Intuitive, Impulsive, Habitual]

Output Format:
Thought:
-Stimulus: [Stimulus Description]
-Stimulus Factors: [Factor 1], [Factor 2]
-Knowledge: [Knowledge Description]
-Knowledge Factors: [Factor 1], [Factor 2], [Factor 3]
-Evaluation: [Evaluation Description]
-Evaluation Style: [Evaluation Style]
Behavior: [Behavior]

Constraints:
- While multiple behaviors might be considered in the early stages, the final intent and decision should align with a single behavior.
- The behavior can be represented by a single label from the choices in the exposure list, enclosed in square brackets (e.g., [X]).
- Use "I" to reflect the first-person perspective of the user.)";

}  // namespace

std::string_view instruction_text(PromptVariant variant) {
    return variant == PromptVariant::Direct ? kDirect : kDecision;
}

std::string_view prompt_layout_version() { return "layout-1"; }

}  // namespace simdistill
