#pragma once

#include <string_view>

namespace simdistill {

enum class PromptVariant { Direct, Decision };

// Instruction placed before the memory and exposure blocks.
std::string_view instruction_text(PromptVariant variant);

// Short identifier that changes whenever instruction text or prompt layout changes.
std::string_view prompt_layout_version();

}  // namespace simdistill
