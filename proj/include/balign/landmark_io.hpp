#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "balign/geometry.hpp"

namespace balign {

/// {"points": [[x, y], ...], "eye_indices": [i, j]}
nlohmann::json landmarks_to_json(const LandmarkSet& set);
LandmarkSet landmarks_from_json(const nlohmann::json& j);

void write_landmarks(const std::filesystem::path& path, const LandmarkSet& set);
LandmarkSet read_landmarks(const std::filesystem::path& path);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace balign
