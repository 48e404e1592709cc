#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace dpar {

// Every CLI run writes its resolved configuration next to its outputs so runs
// are reproducible from the manifest alone.
struct RunManifest {
    std::string command;
    std::string config_json;  // fully resolved, canonical
    uint64_t config_digest = 0;
    uint64_t seed = 0;
    std::vector<std::pair<std::string, std::string>> inputs;   // role, path
    std::vector<std::pair<std::string, std::string>> outputs;  // role, path
};

void write_manifest(const RunManifest& m, const std::string& path);

// Conventional manifest location for an output file.
inline std::string manifest_path_for(const std::string& output_path) {
    return output_path + ".manifest.json";
}

}  // namespace dpar
