#include "mrovseg/prompt_templates.hpp"

#include <fstream>

namespace mrovseg {

const std::vector<std::string>& default_prompt_templates() {
    static const std::vector<std::string> kTemplates = {
        "a photo of a {}.",
        "This is a photo of a {}",
        "There is a {} in the scene",
        "There is the {} in the scene",
        "a photo of a {} in the scene",
        "a photo of a small {}.",
        "a photo of a medium {}.",
        "a photo of a large {}.",
        "This is a photo of a small {}.",
        "This is a photo of a medium {}.",
        "This is a photo of a large {}.",
        "There is a small {} in the scene.",
        "There is a medium {} in the scene.",
        "There is a large {} in the scene.",
    };
    return kTemplates;
}

std::string fill_template(const std::string& tmpl, const std::string& name) {
    size_t pos = tmpl.find("{}");
    if (pos == std::string::npos)
        throw ContractError("template has no {} slot: " + tmpl);
    if (tmpl.find("{}", pos + 2) != std::string::npos)
        throw ContractError("template has more than one {} slot: " + tmpl);
    std::string out = tmpl;
    out.replace(pos, 2, name);
    return out;
}

void validate_templates(const std::vector<std::string>& templates) {
    if (templates.empty()) throw ContractError("template set is empty");
    for (const auto& t : templates) (void)fill_template(t, "x");
}

std::vector<std::string> load_templates_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open template file: " + path);
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
        if (!line.empty()) out.push_back(line);
    }
    validate_templates(out);
    return out;
}

}  // namespace mrovseg
