#pragma once

#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dvnav/strings.hpp"

namespace dvnav::cot {

/**
 * Landmark lexicon backing rule-based entity extraction. Entries are
 * lowercase phrases of up to three words; multi-word entries win over their
 * sub-words via longest-match.
 */
class Lexicon {
 public:
  Lexicon() = default;

  explicit Lexicon(const std::vector<std::string>& phrases) {
    for (const auto& p : phrases) add(p);
  }

  static const Lexicon& bundled() {
    static const Lexicon lex(default_phrases());
    return lex;
  }

  /// Plain word-list file: one phrase per line, '#' comments allowed.
  static Lexicon from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open lexicon file: " + path);
    Lexicon lex;
    std::string line;
    while (std::getline(in, line)) {
      const std::string t = strutil::trim(line);
      if (t.empty() || t[0] == '#') continue;
      lex.add(t);
    }
    return lex;
  }

  void add(const std::string& phrase) {
    auto tokens = strutil::tokenize_lower(phrase);
    if (tokens.empty()) return;
    std::string key;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (i) key += ' ';
      key += tokens[i];
    }
    max_words_ = std::max(max_words_, tokens.size());
    phrases_.insert(std::move(key));
  }

  bool contains(const std::string& normalized_phrase) const {
    return phrases_.count(normalized_phrase) != 0;
  }

  std::size_t max_words() const { return max_words_; }
  std::size_t size() const { return phrases_.size(); }

  static std::vector<std::string> default_phrases() {
    return {
        "sofa",          "couch",         "bathroom",       "bathroom door",
        "bedroom",       "bed",           "door",           "doors",
        "doorway",       "stairs",        "stairway",       "staircase",
        "kitchen",       "table",         "dining table",   "chair",
        "armchair",      "lamp",          "window",         "hallway",
        "corridor",      "living room",   "dining room",    "closet",
        "shelf",         "shelves",       "counter",        "sink",
        "mirror",        "toilet",        "shower",         "bathtub",
        "rug",           "carpet",        "painting",       "picture",
        "plant",         "television",    "fireplace",      "desk",
        "dresser",       "nightstand",    "refrigerator",   "fridge",
        "oven",          "stove",         "balcony",        "patio",
        "garage",        "office",        "laundry room",   "glass pane doors",
        "glass door",    "railing",       "banister",       "entrance",
        "elevator",      "archway",       "pillar",         "bench",
        "stool",         "cabinet",       "wardrobe",       "vase",
        "clock",         "bookshelf",     "piano",          "attic",
        "lights",        "wooden flooring"};
  }

 private:
  std::set<std::string> phrases_;
  std::size_t max_words_ = 1;
};

}  // namespace dvnav::cot
