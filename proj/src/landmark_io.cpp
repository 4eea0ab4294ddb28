#include "balign/landmark_io.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "balign/format.hpp"

namespace balign {

nlohmann::json landmarks_to_json(const LandmarkSet& set) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : set.points()) pts.push_back({round_sig9(p.x), round_sig9(p.y)});
  return {{"points", pts}, {"eye_indices", {set.eye_indices().first, set.eye_indices().second}}};
}

LandmarkSet landmarks_from_json(const nlohmann::json& j) {
  std::vector<Point2> pts;
  for (const auto& p : j.at("points")) pts.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  const auto& e = j.at("eye_indices");
  return LandmarkSet(std::move(pts), {e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>()});
}

void write_landmarks(const std::filesystem::path& path, const LandmarkSet& set) {
  write_text_file(path, landmarks_to_json(set).dump() + "\n");
}

LandmarkSet read_landmarks(const std::filesystem::path& path) { return landmarks_from_json(read_json_file(path)); }

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace balign
