#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace adstory {

inline constexpr std::size_t kNumSentiments = 30;
inline constexpr std::size_t kNumTopics = 38;
inline constexpr int kVocabVersion = 1;

/// Sentiment names; order defines the vector index. Mirrors
/// data/vocab/sentiments.v1.txt.
const std::array<std::string_view, kNumSentiments>& sentiment_names();

/// Topic names; order defines the class index. Mirrors
/// data/vocab/topics.v1.txt.
const std::array<std::string_view, kNumTopics>& topic_names();

std::optional<std::size_t> sentiment_index(std::string_view name);
std::optional<std::size_t> topic_index(std::string_view name);

/// Reads a one-name-per-line vocabulary file (blank lines ignored).
std::vector<std::string> load_vocabulary(const std::filesystem::path& path);

}  // namespace adstory
