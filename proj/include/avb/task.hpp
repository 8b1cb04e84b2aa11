#pragma once

#include <array>
#include <cctype>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"

namespace avb {

enum class Task { High, Two, Culture, Type };

inline constexpr std::array<Task, 4> kAllTasks = {Task::High, Task::Two, Task::Culture, Task::Type};

inline std::string_view to_string(Task t) {
  switch (t) {
    case Task::High: return "high";
    case Task::Two: return "two";
    case Task::Culture: return "culture";
    case Task::Type: return "type";
  }
  return "?";
}

/// Case-insensitive parse of "high", "two", "culture", "type".
inline Task parse_task(std::string_view s) {
  std::string lower(s);
  for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  for (Task t : kAllTasks)
    if (to_string(t) == lower) return t;
  throw Error("unknown task '" + std::string(s) + "' (expected high, two, culture or type)");
}

inline bool is_regression(Task t) { return t != Task::Type; }

/// Vocal-burst classes in their fixed index order.
inline constexpr std::array<std::string_view, 8> kTypeClasses = {
    "gasp", "cry", "laugh", "scream", "groan", "grunt", "pant", "other"};

inline constexpr std::array<std::string_view, 10> kEmotions = {
    "amusement", "awe", "awkwardness", "distress", "excitement",
    "fear", "horror", "sadness", "surprise", "triumph"};

inline constexpr std::array<std::string_view, 4> kCultures = {
    "china", "south_africa", "united_states", "venezuela"};

/// Number of network outputs: 10 / 2 / 40 regression targets, 8 classes.
inline std::size_t output_dim(Task t) {
  switch (t) {
    case Task::High: return kEmotions.size();
    case Task::Two: return 2;
    case Task::Culture: return kCultures.size() * kEmotions.size();
    case Task::Type: return kTypeClasses.size();
  }
  return 0;
}

/// Canonical target column names used when this library writes label files.
inline std::vector<std::string> default_target_names(Task t) {
  std::vector<std::string> names;
  switch (t) {
    case Task::High:
      for (auto e : kEmotions) names.emplace_back(e);
      break;
    case Task::Two:
      names = {"valence", "arousal"};
      break;
    case Task::Culture:
      for (auto c : kCultures)
        for (auto e : kEmotions) names.push_back(std::string(c) + "_" + std::string(e));
      break;
    case Task::Type:
      names = {"voc_type"};
      break;
  }
  return names;
}

inline int parse_type_class(std::string_view token) {
  for (std::size_t i = 0; i < kTypeClasses.size(); ++i)
    if (kTypeClasses[i] == token) return static_cast<int>(i);
  return -1;
}

enum class Split { Train, Val, Test };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

}  // namespace avb
