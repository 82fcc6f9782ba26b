#include "adstory/vocab.hpp"

#include <algorithm>
#include <fstream>

#include "adstory/common.hpp"

namespace adstory {

const std::array<std::string_view, kNumSentiments>& sentiment_names() {
  static constexpr std::array<std::string_view, kNumSentiments> names = {
      "active",     "afraid",      "alarmed",  "alert",       "amazed",
      "amused",     "angry",       "calm",     "cheerful",    "confident",
      "conscious",  "creative",    "disturbed", "eager",      "educated",
      "emotional",  "empathetic",  "fashionable", "feminine", "grateful",
      "inspired",   "jealous",     "loving",   "manly",       "persuaded",
      "pessimistic", "proud",      "sad",      "thrifty",     "youthful"};
  return names;
}

const std::array<std::string_view, kNumTopics>& topic_names() {
  static constexpr std::array<std::string_view, kNumTopics> names = {
      "restaurant",  "chocolate",       "chips",
      "seasoning",   "petfood",         "alcohol",
      "coffee",      "soda",            "cars",
      "electronics", "phone_tv_internet_providers", "financial",
      "education",   "security",        "software",
      "other_service", "beauty",        "healthcare",
      "clothing",    "baby",            "game",
      "cleaning",    "home_improvement", "home_appliance",
      "travel",      "media",           "sports",
      "shopping",    "gambling",        "environment",
      "animal_right", "human_right",    "safety",
      "smoking_alcohol_abuse", "domestic_violence", "self_esteem",
      "political",   "charities"};
  return names;
}

namespace {

template <std::size_t N>
std::optional<std::size_t> find_name(const std::array<std::string_view, N>& names,
                                     std::string_view name) {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) return std::nullopt;
  return static_cast<std::size_t>(it - names.begin());
}

}  // namespace

std::optional<std::size_t> sentiment_index(std::string_view name) {
  return find_name(sentiment_names(), name);
}

std::optional<std::size_t> topic_index(std::string_view name) {
  return find_name(topic_names(), name);
}

std::vector<std::string> load_vocabulary(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open vocabulary file " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

}  // namespace adstory
