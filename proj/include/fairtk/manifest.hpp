// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fairtk/io.hpp"

namespace fairtk {

inline constexpr const char* kToolVersion = "0.1.0";

/// Provenance record written next to every run's outputs.
struct RunManifest {
    std::string subcommand;
    nlohmann::json config;
    std::uint64_t seed = 0;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    double duration_seconds = 0.0;

    nlohmann::json to_json() const {
        const auto now = std::chrono::system_clock::now();
        const std::time_t t = std::chrono::system_clock::to_time_t(now);
        std::tm tm{};
        gmtime_r(&t, &tm);
        char stamp[32];
        std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", &tm);
        return {{"subcommand", subcommand},
                {"config", config},
                {"seed", seed},
                {"inputs", inputs},
                {"outputs", outputs},
                {"tool_version", kToolVersion},
                {"duration_seconds", duration_seconds},
                {"timestamp", stamp}};
    }

    void write(const std::filesystem::path& out_dir) const {
        io::write_file_atomic(out_dir / "manifest.json", to_json().dump(2) + "\n");
    }
};

} // namespace fairtk
