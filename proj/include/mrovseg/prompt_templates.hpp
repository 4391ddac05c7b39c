#pragma once

#include <string>
#include <vector>

#include "mrovseg/common.hpp"

namespace mrovseg {

// Built-in prompt ensemble: 14 class-description templates, each with exactly
// one "{}" slot.
const std::vector<std::string>& default_prompt_templates();

// Fills the "{}" slot; throws ContractError if the template has no slot or
// more than one.
std::string fill_template(const std::string& tmpl, const std::string& name);

// Validates a template set (each entry has exactly one slot).
void validate_templates(const std::vector<std::string>& templates);

// Loads one template per line, skipping blank lines.
std::vector<std::string> load_templates_file(const std::string& path);

}  // namespace mrovseg
