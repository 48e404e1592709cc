#include "dpar/manifest.hpp"

#include <json.hpp>

#include "dpar/binio.hpp"
#include "dpar/common.hpp"

namespace dpar {

void write_manifest(const RunManifest& m, const std::string& path) {
    nlohmann::json j;
    j["command"] = m.command;
    j["tool_version"] = kVersion;
    j["config"] = m.config_json.empty() ? nlohmann::json(nullptr)
                                        : nlohmann::json::parse(m.config_json);
    j["config_digest"] = m.config_digest;
    j["seed"] = m.seed;
    nlohmann::json inputs = nlohmann::json::object();
    for (const auto& [role, p] : m.inputs) inputs[role] = p;
    j["inputs"] = inputs;
    nlohmann::json outputs = nlohmann::json::object();
    for (const auto& [role, p] : m.outputs) outputs[role] = p;
    j["outputs"] = outputs;
    auto os = open_output(path);
    os << j.dump(2) << "\n";
    if (!os) throw ValidationError("write failed: " + path);
}

}  // namespace dpar
