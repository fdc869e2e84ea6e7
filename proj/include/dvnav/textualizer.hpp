#pragma once

/**
 * Converts the current viewpoint's navigable options into the lettered
 * textual observation consumed by prompts: option A is always "stop", move
 * options are lettered B.. in navigable_from order and rendered as
 * "<direction phrase> to <<caption>>".
 */

#include <cctype>
#include <cmath>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "dvnav/strings.hpp"
#include "dvnav/world.hpp"

namespace dvnav::textual {

struct TextualizeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Direction { turn_left, turn_right, go_forward, go_back, go_up, go_down };

inline std::string_view phrase(Direction d) {
  switch (d) {
    case Direction::turn_left: return "turn left";
    case Direction::turn_right: return "turn right";
    case Direction::go_forward: return "go forward";
    case Direction::go_back: return "go back";
    case Direction::go_up: return "go up";
    case Direction::go_down: return "go down";
  }
  return "go forward";
}

inline bool is_vertical(Direction d) {
  return d == Direction::go_up || d == Direction::go_down;
}

/// Angular cutoffs for the direction decision table. The defaults are the
/// usual VLN mapping; override via config when a dataset needs different ones.
struct DirectionRules {
  double elevation_cutoff_deg = 15.0;  // |dElev| beyond this -> up/down
  double forward_cutoff_deg = 45.0;    // |dHeading| within this -> forward
  double back_cutoff_deg = 135.0;      // |dHeading| beyond this -> back
};

/// Wraps a heading difference into (-180, 180].
inline double wrap_delta_deg(double deg) {
  double d = std::fmod(deg, 360.0);
  if (d > 180.0) d -= 360.0;
  if (d <= -180.0) d += 360.0;
  return d;
}

/**
 * Decision table on the heading/elevation deltas between the agent's facing
 * and an edge. Total: every input maps to exactly one of the six directions.
 */
inline Direction map_direction(double agent_heading_deg, double agent_elevation_deg,
                               double edge_heading_deg, double edge_elevation_deg,
                               const DirectionRules& rules = {}) {
  const double dpsi = wrap_delta_deg(edge_heading_deg - agent_heading_deg);
  const double dtheta = edge_elevation_deg - agent_elevation_deg;
  if (std::abs(dtheta) > rules.elevation_cutoff_deg) {
    return dtheta > 0 ? Direction::go_up : Direction::go_down;
  }
  if (std::abs(dpsi) <= rules.forward_cutoff_deg) return Direction::go_forward;
  if (std::abs(dpsi) >= rules.back_cutoff_deg) return Direction::go_back;
  return dpsi > 0 ? Direction::turn_right : Direction::turn_left;
}

/// "<phrase> to <<caption>>", e.g. "go forward to <a sofa>".
inline std::string render_option(Direction d, const std::string& caption) {
  const std::string trimmed = strutil::trim(caption);
  if (trimmed.empty()) throw TextualizeError("empty caption");
  return std::string(phrase(d)) + " to <" + trimmed + ">";
}

struct ObservationOption {
  char letter = 'A';
  bool is_stop = false;
  std::optional<world::NavEdge> edge;      // absent iff stop
  std::optional<Direction> direction;      // absent iff stop
  std::string text;                        // rendered description

  friend bool operator==(const ObservationOption&, const ObservationOption&) = default;
};

struct ObservationDescription {
  std::string viewpoint;
  double agent_heading_deg = 0.0;
  double agent_elevation_deg = 0.0;
  std::vector<ObservationOption> options;  // letters contiguous from 'A'
  std::string rendered;                    // "[A. stop, B. ..., ...]"

  bool has_letter(char letter) const {
    return letter >= 'A' && letter < static_cast<char>('A' + options.size());
  }

  const ObservationOption& option(char letter) const {
    if (!has_letter(letter)) {
      throw TextualizeError(std::string("no option with letter ") + letter);
    }
    return options[static_cast<std::size_t>(letter - 'A')];
  }

  char stop_letter() const { return 'A'; }
};

/// Resolves caption keys to caption text. Implementations must tolerate
/// concurrent reads.
class CaptionProvider {
 public:
  virtual ~CaptionProvider() = default;
  virtual std::optional<std::string> lookup(const std::string& caption_key) const = 0;
};

/**
 * In-memory caption table, loadable from a JSON object document
 * {caption_key: caption}. Multi-sentence captions are cut at the first
 * sentence; the cut is reported in warnings().
 */
class CaptionTable : public CaptionProvider {
 public:
  CaptionTable() = default;

  explicit CaptionTable(std::map<std::string, std::string> entries) {
    for (auto& [key, caption] : entries) set(key, caption);
  }

  static CaptionTable from_stream(std::istream& in) {
    nlohmann::json doc;
    try {
      in >> doc;
    } catch (const nlohmann::json::exception& e) {
      throw TextualizeError(std::string("malformed caption document: ") + e.what());
    }
    if (!doc.is_object()) throw TextualizeError("caption document must be a JSON object");
    CaptionTable table;
    for (auto it = doc.begin(); it != doc.end(); ++it) {
      if (!it.value().is_string()) {
        throw TextualizeError("caption for key '" + it.key() + "' must be a string");
      }
      table.set(it.key(), it.value().get<std::string>());
    }
    return table;
  }

  void set(const std::string& key, const std::string& caption) {
    // Dropping a lone trailing terminator is silent; losing content is not.
    if (has_extra_sentence(strutil::trim(caption))) {
      warnings_.push_back("caption '" + key + "' truncated to first sentence");
    }
    entries_[key] = first_sentence(caption);
  }

  std::optional<std::string> lookup(const std::string& key) const override {
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  const std::map<std::string, std::string>& entries() const { return entries_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

 private:
  static bool has_extra_sentence(const std::string& t) {
    for (std::size_t i = 0; i + 1 < t.size(); ++i) {
      if ((t[i] == '.' || t[i] == '!' || t[i] == '?') &&
          std::isspace(static_cast<unsigned char>(t[i + 1]))) {
        return !strutil::trim(t.substr(i + 1)).empty();
      }
    }
    return false;
  }

  static std::string first_sentence(const std::string& caption) {
    const std::string t = strutil::trim(caption);
    for (std::size_t i = 0; i + 1 < t.size(); ++i) {
      if ((t[i] == '.' || t[i] == '!' || t[i] == '?') && std::isspace(static_cast<unsigned char>(t[i + 1]))) {
        return strutil::trim(t.substr(0, i));
      }
    }
    // A single trailing terminator is dropped so captions splice into the
    // "<...>" template cleanly.
    if (!t.empty() && (t.back() == '.' || t.back() == '!' || t.back() == '?')) {
      return strutil::trim(t.substr(0, t.size() - 1));
    }
    return t;
  }

  std::map<std::string, std::string> entries_;
  std::vector<std::string> warnings_;
};

/**
 * Builds the lettered observation for a viewpoint. Option A is stop; move
 * options follow navigable_from order. A missing caption key is an error,
 * never a silent blank.
 */
inline ObservationDescription build_observation(const world::NavGraph& graph,
                                                const std::string& at, double agent_heading_deg,
                                                double agent_elevation_deg,
                                                const CaptionProvider& captions,
                                                const DirectionRules& rules = {}) {
  const auto& edges = graph.navigable_from(at);  // throws on unknown viewpoint
  if (edges.size() > 25) {
    throw TextualizeError("too many navigable options for single-letter labels at " + at);
  }

  ObservationDescription obs;
  obs.viewpoint = at;
  obs.agent_heading_deg = agent_heading_deg;
  obs.agent_elevation_deg = agent_elevation_deg;

  ObservationOption stop;
  stop.letter = 'A';
  stop.is_stop = true;
  stop.text = "stop";
  obs.options.push_back(std::move(stop));

  char letter = 'B';
  for (const auto& e : edges) {
    auto caption = captions.lookup(e.caption_key);
    if (!caption) throw TextualizeError("unresolved caption_key: " + e.caption_key);
    ObservationOption opt;
    opt.letter = letter++;
    opt.is_stop = false;
    opt.edge = e;
    opt.direction = map_direction(agent_heading_deg, agent_elevation_deg, e.heading_deg,
                                  e.elevation_deg, rules);
    opt.text = render_option(*opt.direction, *caption);
    obs.options.push_back(std::move(opt));
  }

  std::string rendered = "[";
  for (std::size_t i = 0; i < obs.options.size(); ++i) {
    if (i) rendered += ", ";
    rendered += obs.options[i].letter;
    rendered += ". ";
    rendered += obs.options[i].text;
  }
  rendered += "]";
  obs.rendered = std::move(rendered);
  return obs;
}

/**
 * Parses a rendered observation back into (letter, text) pairs. Inverse of
 * the rendering above for captions that do not themselves contain a
 * ", X. " separator; used by round-trip checks and prompt-reading test
 * doubles.
 */
inline std::vector<std::pair<char, std::string>> parse_rendered_observation(
    const std::string& rendered) {
  std::string body = strutil::trim(rendered);
  if (body.size() < 2 || body.front() != '[' || body.back() != ']') {
    throw TextualizeError("rendered observation must be bracketed");
  }
  body = body.substr(1, body.size() - 2);

  std::vector<std::pair<char, std::string>> items;
  char expected = 'A';
  std::size_t pos = 0;
  while (pos < body.size()) {
    if (body.size() - pos < 3 || body[pos] != expected || body[pos + 1] != '.' ||
        body[pos + 2] != ' ') {
      throw TextualizeError(std::string("expected option label '") + expected + ". '");
    }
    pos += 3;
    const std::string sep = std::string(", ") + static_cast<char>(expected + 1) + ". ";
    std::size_t next = body.find(sep, pos);
    std::size_t end = next == std::string::npos ? body.size() : next;
    items.emplace_back(expected, body.substr(pos, end - pos));
    pos = next == std::string::npos ? body.size() : next + 2;
    ++expected;
  }
  if (items.empty()) throw TextualizeError("rendered observation has no options");
  return items;
}

}  // namespace dvnav::textual
