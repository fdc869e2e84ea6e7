#pragma once

/**
 * Navigable graph world: viewpoints with 3D positions, directed navigable
 * edges carrying view metadata (heading/elevation/caption key), episodes,
 * and the geometry queries the agent and the metrics depend on.
 *
 * Graphs and episodes are immutable after load and safe to share across
 * concurrently running episodes.
 */

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <queue>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "dvnav/rng.hpp"
#include "dvnav/strings.hpp"

namespace dvnav::world {

struct GraphError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct UnknownViewpointError : GraphError {
  explicit UnknownViewpointError(const std::string& id)
      : GraphError("unknown viewpoint: " + id) {}
};

struct UnreachableError : GraphError {
  UnreachableError(const std::string& a, const std::string& b)
      : GraphError("no path between viewpoints: " + a + " -> " + b) {}
};

struct Viewpoint {
  std::string id;
  std::array<double, 3> position{0.0, 0.0, 0.0};
};

struct NavEdge {
  std::string from;
  std::string to;
  double heading_deg = 0.0;    // [0, 360)
  double elevation_deg = 0.0;  // [-90, 90]
  std::string caption_key;

  friend bool operator==(const NavEdge&, const NavEdge&) = default;
};

inline double euclidean(const Viewpoint& a, const Viewpoint& b) {
  const double dx = a.position[0] - b.position[0];
  const double dy = a.position[1] - b.position[1];
  const double dz = a.position[2] - b.position[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

/**
 * Immutable navigable graph. Adjacency lists are kept sorted by
 * (heading, elevation, target id); that order fixes option lettering
 * downstream, so it must never depend on input order.
 */
class NavGraph {
 public:
  NavGraph() = default;

  /// Validates invariants, deduplicates edges by (from, to), sorts adjacency.
  static NavGraph build(std::vector<Viewpoint> viewpoints, std::vector<NavEdge> edges) {
    NavGraph g;
    for (auto& vp : viewpoints) {
      if (vp.id.empty()) throw GraphError("viewpoint with empty id");
      for (double c : vp.position) {
        if (!std::isfinite(c)) throw GraphError("non-finite position for viewpoint " + vp.id);
      }
      if (!g.viewpoints_.emplace(vp.id, vp).second) {
        throw GraphError("duplicate viewpoint id: " + vp.id);
      }
    }
    for (auto& [id, vp] : g.viewpoints_) {
      (void)vp;
      g.adjacency_[id];  // every viewpoint gets an (initially empty) slot
    }
    std::set<std::pair<std::string, std::string>> seen;
    for (auto& e : edges) {
      if (e.from == e.to) throw GraphError("self-loop edge at viewpoint " + e.from);
      if (!g.viewpoints_.count(e.from)) throw GraphError("dangling edge endpoint: " + e.from);
      if (!g.viewpoints_.count(e.to)) throw GraphError("dangling edge endpoint: " + e.to);
      if (!(e.heading_deg >= 0.0 && e.heading_deg < 360.0)) {
        throw GraphError("edge heading out of [0,360): " + e.from + " -> " + e.to);
      }
      if (!(e.elevation_deg >= -90.0 && e.elevation_deg <= 90.0)) {
        throw GraphError("edge elevation out of [-90,90]: " + e.from + " -> " + e.to);
      }
      if (!seen.emplace(e.from, e.to).second) continue;  // dedup by (from, to)
      g.adjacency_[e.from].push_back(e);
      ++g.edge_count_;
    }
    for (auto& [id, out] : g.adjacency_) {
      (void)id;
      std::sort(out.begin(), out.end(), [](const NavEdge& a, const NavEdge& b) {
        if (a.heading_deg != b.heading_deg) return a.heading_deg < b.heading_deg;
        if (a.elevation_deg != b.elevation_deg) return a.elevation_deg < b.elevation_deg;
        return a.to < b.to;
      });
    }
    return g;
  }

  bool has_viewpoint(const std::string& id) const { return viewpoints_.count(id) != 0; }

  const Viewpoint& viewpoint(const std::string& id) const {
    auto it = viewpoints_.find(id);
    if (it == viewpoints_.end()) throw UnknownViewpointError(id);
    return it->second;
  }

  /// Outgoing edges sorted by heading, then elevation, then target id.
  const std::vector<NavEdge>& navigable_from(const std::string& id) const {
    auto it = adjacency_.find(id);
    if (it == adjacency_.end()) throw UnknownViewpointError(id);
    return it->second;
  }

  std::optional<NavEdge> edge_between(const std::string& from, const std::string& to) const {
    for (const auto& e : navigable_from(from)) {
      if (e.to == to) return e;
    }
    return std::nullopt;
  }

  std::size_t viewpoint_count() const { return viewpoints_.size(); }
  std::size_t edge_count() const { return edge_count_; }

  const std::map<std::string, Viewpoint>& viewpoints() const { return viewpoints_; }

  /// All edges in deterministic (from, then adjacency) order.
  std::vector<NavEdge> edges() const {
    std::vector<NavEdge> out;
    out.reserve(edge_count_);
    for (const auto& [id, adj] : adjacency_) {
      (void)id;
      out.insert(out.end(), adj.begin(), adj.end());
    }
    return out;
  }

  double distance(const std::string& a, const std::string& b) const {
    return euclidean(viewpoint(a), viewpoint(b));
  }

  /// Dijkstra over Euclidean edge weights. Distances to every reachable
  /// viewpoint; absent keys are unreachable.
  std::unordered_map<std::string, double> shortest_paths_from(const std::string& src) const {
    viewpoint(src);  // existence check
    std::unordered_map<std::string, double> dist;
    using Item = std::pair<double, std::string>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    dist[src] = 0.0;
    heap.emplace(0.0, src);
    while (!heap.empty()) {
      auto [d, id] = heap.top();
      heap.pop();
      auto it = dist.find(id);
      if (it != dist.end() && d > it->second) continue;
      for (const auto& e : navigable_from(id)) {
        const double nd = d + distance(e.from, e.to);
        auto [dit, inserted] = dist.emplace(e.to, nd);
        if (!inserted && dit->second <= nd) continue;
        dit->second = nd;
        heap.emplace(nd, e.to);
      }
    }
    return dist;
  }

  /// Minimal cumulative Euclidean weight; throws UnreachableError for
  /// disconnected pairs rather than returning a sentinel.
  double shortest_path_length(const std::string& a, const std::string& b) const {
    viewpoint(b);
    if (a == b) {
      viewpoint(a);
      return 0.0;
    }
    auto dist = shortest_paths_from(a);
    auto it = dist.find(b);
    if (it == dist.end()) throw UnreachableError(a, b);
    return it->second;
  }

  /// Shortest path as a viewpoint sequence (used by the synthetic worlds).
  std::vector<std::string> shortest_path(const std::string& a, const std::string& b) const {
    viewpoint(b);
    std::unordered_map<std::string, double> dist;
    std::unordered_map<std::string, std::string> prev;
    using Item = std::pair<double, std::string>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    dist[a] = 0.0;
    heap.emplace(0.0, a);
    while (!heap.empty()) {
      auto [d, id] = heap.top();
      heap.pop();
      if (dist.count(id) && d > dist[id]) continue;
      if (id == b) break;
      for (const auto& e : navigable_from(id)) {
        const double nd = d + distance(e.from, e.to);
        if (!dist.count(e.to) || nd < dist[e.to]) {
          dist[e.to] = nd;
          prev[e.to] = id;
          heap.emplace(nd, e.to);
        }
      }
    }
    if (a != b && !prev.count(b)) throw UnreachableError(a, b);
    std::vector<std::string> path{b};
    while (path.back() != a) path.push_back(prev.at(path.back()));
    std::reverse(path.begin(), path.end());
    return path;
  }

 private:
  std::map<std::string, Viewpoint> viewpoints_;
  std::map<std::string, std::vector<NavEdge>> adjacency_;
  std::size_t edge_count_ = 0;
};

struct Episode {
  std::string id;
  std::string scan;
  std::string instruction;
  std::string start;
  double start_heading_deg = 0.0;
  std::vector<std::string> gt_path;  // first element == start
};

/// Empty result means the episode satisfies all invariants against the graph.
inline std::optional<std::string> validate_episode(const Episode& ep, const NavGraph& graph) {
  if (strutil::trim(ep.instruction).empty()) return "empty instruction";
  if (ep.gt_path.empty()) return "empty gt_path";
  if (ep.gt_path.front() != ep.start) return "gt_path does not begin at start viewpoint";
  for (const auto& id : ep.gt_path) {
    if (!graph.has_viewpoint(id)) return "gt_path references unknown viewpoint: " + id;
  }
  for (std::size_t i = 0; i + 1 < ep.gt_path.size(); ++i) {
    if (!graph.edge_between(ep.gt_path[i], ep.gt_path[i + 1])) {
      return "gt_path step not edge-connected: " + ep.gt_path[i] + " -> " + ep.gt_path[i + 1];
    }
  }
  return std::nullopt;
}

/// Scan id -> graph. Lookups fall back to a lone graph so single-world runs
/// do not need scan bookkeeping.
class GraphRegistry {
 public:
  void add(std::string scan, NavGraph graph) { graphs_[std::move(scan)] = std::move(graph); }

  const NavGraph* find(const std::string& scan) const {
    auto it = graphs_.find(scan);
    if (it != graphs_.end()) return &it->second;
    if (graphs_.size() == 1) return &graphs_.begin()->second;
    return nullptr;
  }

  const NavGraph& at(const std::string& scan) const {
    const NavGraph* g = find(scan);
    if (!g) throw GraphError("no graph registered for scan: " + scan);
    return *g;
  }

  std::size_t size() const { return graphs_.size(); }
  const std::map<std::string, NavGraph>& all() const { return graphs_; }

 private:
  std::map<std::string, NavGraph> graphs_;
};

enum class GraphFormat { native, matterport_connectivity };

namespace detail {

inline double require_number(const nlohmann::json& j, const char* key, std::size_t record) {
  if (!j.contains(key) || !j[key].is_number()) {
    throw GraphError("record " + std::to_string(record) + ": missing or non-numeric '" + key + "'");
  }
  return j[key].get<double>();
}

inline std::string require_string(const nlohmann::json& j, const char* key, std::size_t record) {
  if (!j.contains(key) || !j[key].is_string()) {
    throw GraphError("record " + std::to_string(record) + ": missing or non-string '" + key + "'");
  }
  return j[key].get<std::string>();
}

inline double wrap_heading(double deg) {
  double h = std::fmod(deg, 360.0);
  if (h < 0) h += 360.0;
  return h;
}

}  // namespace detail

struct LoadReport {
  std::vector<std::string> warnings;
};

/**
 * Native format: one JSON document with
 *   {"scan": ..., "viewpoints": [{"id", "xyz"}], "edges": [{...}]}
 * Matterport connectivity format: the public per-scan connectivity layout
 * (array of {image_id, pose, included, unobstructed, ...}); image pointers
 * and other unsupported fields are discarded with a warning.
 */
inline NavGraph load_graph(std::istream& in, GraphFormat format, LoadReport* report = nullptr,
                           std::string* scan_out = nullptr) {
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw GraphError(std::string("malformed graph document: ") + e.what());
  }

  std::vector<Viewpoint> vps;
  std::vector<NavEdge> edges;

  if (format == GraphFormat::native) {
    if (!doc.is_object()) throw GraphError("native graph document must be a JSON object");
    if (scan_out && doc.contains("scan") && doc["scan"].is_string()) {
      *scan_out = doc["scan"].get<std::string>();
    }
    std::size_t idx = 0;
    for (const auto& v : doc.value("viewpoints", nlohmann::json::array())) {
      Viewpoint vp;
      vp.id = detail::require_string(v, "id", idx);
      if (!v.contains("xyz") || !v["xyz"].is_array() || v["xyz"].size() != 3) {
        throw GraphError("record " + std::to_string(idx) + ": viewpoint 'xyz' must be a 3-array");
      }
      for (std::size_t c = 0; c < 3; ++c) vp.position[c] = v["xyz"][c].get<double>();
      vps.push_back(std::move(vp));
      ++idx;
    }
    idx = 0;
    for (const auto& e : doc.value("edges", nlohmann::json::array())) {
      NavEdge edge;
      edge.from = detail::require_string(e, "from", idx);
      edge.to = detail::require_string(e, "to", idx);
      edge.heading_deg = detail::require_number(e, "heading_deg", idx);
      edge.elevation_deg = detail::require_number(e, "elevation_deg", idx);
      edge.caption_key = detail::require_string(e, "caption_key", idx);
      edges.push_back(std::move(edge));
      ++idx;
    }
  } else {
    if (!doc.is_array()) throw GraphError("connectivity document must be a JSON array");
    struct Entry {
      std::string id;
      std::array<double, 3> pos;
      bool included;
      std::vector<bool> unobstructed;
    };
    std::vector<Entry> entries;
    std::set<std::string> warned_keys;
    std::size_t idx = 0;
    for (const auto& rec : doc) {
      Entry ent;
      ent.id = detail::require_string(rec, "image_id", idx);
      if (!rec.contains("pose") || !rec["pose"].is_array() || rec["pose"].size() != 16) {
        throw GraphError("record " + std::to_string(idx) + ": 'pose' must be a 16-array");
      }
      // Translation column of the row-major 4x4 pose.
      ent.pos = {rec["pose"][3].get<double>(), rec["pose"][7].get<double>(),
                 rec["pose"][11].get<double>()};
      ent.included = rec.value("included", true);
      if (rec.contains("unobstructed") && rec["unobstructed"].is_array()) {
        for (const auto& b : rec["unobstructed"]) ent.unobstructed.push_back(b.get<bool>());
      }
      for (auto it = rec.begin(); it != rec.end(); ++it) {
        static const std::set<std::string> known = {"image_id", "pose", "included",
                                                    "unobstructed", "visible", "height"};
        if (!known.count(it.key()) && warned_keys.insert(it.key()).second && report) {
          report->warnings.push_back("connectivity: ignoring unsupported field '" + it.key() + "'");
        }
      }
      entries.push_back(std::move(ent));
      ++idx;
    }
    for (const auto& ent : entries) {
      if (!ent.included) continue;
      vps.push_back(Viewpoint{ent.id, ent.pos});
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (!entries[i].included) continue;
      for (std::size_t j = 0; j < entries[i].unobstructed.size() && j < entries.size(); ++j) {
        if (i == j || !entries[i].unobstructed[j] || !entries[j].included) continue;
        const auto& a = entries[i].pos;
        const auto& b = entries[j].pos;
        const double dx = b[0] - a[0];
        const double dy = b[1] - a[1];
        const double dz = b[2] - a[2];
        NavEdge edge;
        edge.from = entries[i].id;
        edge.to = entries[j].id;
        edge.heading_deg = detail::wrap_heading(std::atan2(dx, dy) * 180.0 / M_PI);
        edge.elevation_deg = std::atan2(dz, std::sqrt(dx * dx + dy * dy)) * 180.0 / M_PI;
        edge.caption_key = entries[i].id + "__" + entries[j].id;
        edges.push_back(std::move(edge));
      }
    }
  }
  return NavGraph::build(std::move(vps), std::move(edges));
}

/// Deterministic native-format emission; reloading yields an isomorphic graph.
inline void save_graph(const NavGraph& graph, std::ostream& out, const std::string& scan = "") {
  nlohmann::json doc;
  if (!scan.empty()) doc["scan"] = scan;
  doc["viewpoints"] = nlohmann::json::array();
  for (const auto& [id, vp] : graph.viewpoints()) {
    doc["viewpoints"].push_back({{"id", id}, {"xyz", {vp.position[0], vp.position[1], vp.position[2]}}});
  }
  doc["edges"] = nlohmann::json::array();
  for (const auto& e : graph.edges()) {
    doc["edges"].push_back({{"from", e.from},
                            {"to", e.to},
                            {"heading_deg", e.heading_deg},
                            {"elevation_deg", e.elevation_deg},
                            {"caption_key", e.caption_key}});
  }
  out << doc.dump(2) << "\n";
}

struct EpisodeRejection {
  std::size_t record_index = 0;
  std::string episode_id;
  std::string reason;
};

struct EpisodeLoadResult {
  std::vector<Episode> episodes;
  std::vector<EpisodeRejection> rejected;
};

/**
 * Loads an episode split (JSON array of records). Invariants are validated
 * against the registry; failing records are reported per episode while valid
 * ones are returned.
 */
inline EpisodeLoadResult load_episodes(std::istream& in, const GraphRegistry& registry) {
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw GraphError(std::string("malformed episode document: ") + e.what());
  }
  if (!doc.is_array()) throw GraphError("episode document must be a JSON array");

  EpisodeLoadResult result;
  std::size_t idx = 0;
  for (const auto& rec : doc) {
    Episode ep;
    try {
      ep.id = detail::require_string(rec, "id", idx);
      ep.scan = detail::require_string(rec, "scan", idx);
      ep.instruction = detail::require_string(rec, "instruction", idx);
      ep.start = detail::require_string(rec, "start", idx);
      ep.start_heading_deg = detail::require_number(rec, "start_heading_deg", idx);
      if (!rec.contains("path") || !rec["path"].is_array()) {
        throw GraphError("record " + std::to_string(idx) + ": missing 'path' array");
      }
      for (const auto& p : rec["path"]) ep.gt_path.push_back(p.get<std::string>());
    } catch (const std::exception& e) {
      result.rejected.push_back({idx, ep.id, e.what()});
      ++idx;
      continue;
    }
    const NavGraph* graph = registry.find(ep.scan);
    if (!graph) {
      result.rejected.push_back({idx, ep.id, "no graph for scan: " + ep.scan});
    } else if (auto reason = validate_episode(ep, *graph)) {
      result.rejected.push_back({idx, ep.id, *reason});
    } else {
      result.episodes.push_back(std::move(ep));
    }
    ++idx;
  }
  return result;
}

inline void save_episodes(const std::vector<Episode>& episodes, std::ostream& out) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& ep : episodes) {
    doc.push_back({{"id", ep.id},
                   {"scan", ep.scan},
                   {"instruction", ep.instruction},
                   {"start", ep.start},
                   {"start_heading_deg", ep.start_heading_deg},
                   {"path", ep.gt_path}});
  }
  out << doc.dump(2) << "\n";
}

struct SynthWorld {
  std::string scan;
  NavGraph graph;
  std::vector<Episode> episodes;
  std::map<std::string, std::string> captions;  // caption_key -> caption text
};

namespace detail {

// Destination descriptors for synthetic captions. Nouns are drawn from the
// landmark lexicon so rule-based entity extraction finds them; colors are
// deliberately absent from the lexicon.
inline const std::vector<std::string>& synth_nouns() {
  static const std::vector<std::string> nouns = {
      "sofa",   "table",  "chair",   "lamp",     "window", "mirror", "painting",
      "plant",  "desk",   "dresser", "bookshelf", "bench",  "cabinet", "rug",
      "vase",   "clock",  "piano",   "fireplace", "stool",  "wardrobe"};
  return nouns;
}

inline const std::vector<std::string>& synth_colors() {
  static const std::vector<std::string> colors = {
      "crimson", "amber", "ivory", "teal",  "indigo", "olive",  "maroon",
      "silver",  "coral", "beige", "azure", "violet", "bronze", "charcoal",
      "emerald", "golden", "lavender", "scarlet", "turquoise", "umber"};
  return colors;
}

}  // namespace detail

/**
 * Deterministic desk-scale world generator. Viewpoints sit on a jittered 2D
 * grid (~2.5 m spacing) with bidirectional edges between grid neighbours plus
 * extra shortcuts up to the branching factor. Every directed edge's caption
 * describes the destination viewpoint ("a crimson chair"); instructions
 * mention exactly the descriptors of the ground-truth path viewpoints, so the
 * ground-truth next view's caption always contains an instruction entity.
 */
inline SynthWorld synth_world(std::uint64_t seed, int n_viewpoints, int branching,
                              int n_episodes = 10) {
  if (n_viewpoints < 2) throw std::invalid_argument("synth_world: n_viewpoints must be >= 2");
  if (branching < 1) throw std::invalid_argument("synth_world: branching must be >= 1");
  if (n_episodes < 0) throw std::invalid_argument("synth_world: n_episodes must be >= 0");

  rng::SplitMix64 gen(rng::mix(seed, 0xD17A11));
  SynthWorld w;
  w.scan = "synth" + std::to_string(seed);

  const int side = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n_viewpoints))));
  const double spacing = 2.5;

  std::vector<Viewpoint> vps;
  std::vector<std::pair<int, int>> cells;
  for (int i = 0; i < n_viewpoints; ++i) {
    const int gx = i % side;
    const int gy = i / side;
    Viewpoint vp;
    vp.id = "v" + std::to_string(i);
    vp.position = {gx * spacing + gen.next_double() * 0.6 - 0.3,
                   gy * spacing + gen.next_double() * 0.6 - 0.3, 0.0};
    vps.push_back(std::move(vp));
    cells.emplace_back(gx, gy);
  }

  // Unique (color, noun) descriptor per viewpoint.
  const auto& nouns = detail::synth_nouns();
  const auto& colors = detail::synth_colors();
  std::vector<std::string> desc(static_cast<std::size_t>(n_viewpoints));
  {
    const std::size_t combos = nouns.size() * colors.size();
    std::vector<std::size_t> order(combos);
    for (std::size_t i = 0; i < combos; ++i) order[i] = i;
    for (std::size_t i = combos - 1; i > 0; --i) {
      std::swap(order[i], order[static_cast<std::size_t>(gen.next_int(0, static_cast<std::int64_t>(i)))]);
    }
    for (int i = 0; i < n_viewpoints; ++i) {
      const std::size_t combo = order[static_cast<std::size_t>(i) % combos];
      std::string d = colors[combo / nouns.size()] + " " + nouns[combo % nouns.size()];
      if (static_cast<std::size_t>(i) >= combos) d += " " + std::to_string(i / combos + 1);
      desc[static_cast<std::size_t>(i)] = std::move(d);
    }
  }

  auto index_of = [&](int gx, int gy) -> int {
    if (gx < 0 || gy < 0 || gx >= side || gy >= side) return -1;
    const int idx = gy * side + gx;
    return idx < n_viewpoints ? idx : -1;
  };

  std::set<std::pair<int, int>> links;
  auto link = [&](int a, int b) {
    if (a < 0 || b < 0 || a == b) return;
    links.emplace(std::min(a, b), std::max(a, b));
  };
  for (int i = 0; i < n_viewpoints; ++i) {
    link(i, index_of(cells[static_cast<std::size_t>(i)].first + 1, cells[static_cast<std::size_t>(i)].second));
    link(i, index_of(cells[static_cast<std::size_t>(i)].first, cells[static_cast<std::size_t>(i)].second + 1));
  }
  for (int i = 0; i < n_viewpoints && branching > 1; ++i) {
    for (int extra = 0; extra < branching - 1; ++extra) {
      link(i, static_cast<int>(gen.next_int(0, n_viewpoints - 1)));
    }
  }

  std::vector<NavEdge> edges;
  auto push_edge = [&](int a, int b) {
    const auto& pa = vps[static_cast<std::size_t>(a)].position;
    const auto& pb = vps[static_cast<std::size_t>(b)].position;
    const double dx = pb[0] - pa[0];
    const double dy = pb[1] - pa[1];
    NavEdge e;
    e.from = vps[static_cast<std::size_t>(a)].id;
    e.to = vps[static_cast<std::size_t>(b)].id;
    e.heading_deg = detail::wrap_heading(std::atan2(dx, dy) * 180.0 / M_PI);
    e.elevation_deg = 0.0;
    e.caption_key = e.from + "__" + e.to;
    w.captions[e.caption_key] = "a " + desc[static_cast<std::size_t>(b)];
    edges.push_back(std::move(e));
  };
  for (const auto& [a, b] : links) {
    push_edge(a, b);
    push_edge(b, a);
  }

  w.graph = NavGraph::build(std::move(vps), std::move(edges));

  std::set<std::string> used_instructions;  // instruction text identifies an episode
  for (int e = 0; e < n_episodes; ++e) {
    // Retry until a start/goal pair with a 2..5 hop shortest path appears.
    for (int attempt = 0; attempt < 200; ++attempt) {
      const int start = static_cast<int>(gen.next_int(0, n_viewpoints - 1));
      const int goal = static_cast<int>(gen.next_int(0, n_viewpoints - 1));
      if (start == goal) continue;
      auto path = w.graph.shortest_path("v" + std::to_string(start), "v" + std::to_string(goal));
      if (path.size() < 3 || path.size() > 6) continue;

      Episode ep;
      ep.id = w.scan + "_ep" + std::to_string(e);
      ep.scan = w.scan;
      ep.start = path.front();
      ep.gt_path = path;

      auto desc_of = [&](const std::string& id) {
        return desc[static_cast<std::size_t>(std::stoi(id.substr(1)))];
      };
      std::string instr = "Walk past the " + desc_of(path[1]);
      for (std::size_t i = 2; i + 1 < path.size(); ++i) {
        instr += ", then the " + desc_of(path[i]);
      }
      instr += ", and stop at the " + desc_of(path.back()) + ".";
      if (!used_instructions.insert(instr).second) continue;
      ep.instruction = instr;

      auto first_edge = w.graph.edge_between(path[0], path[1]);
      ep.start_heading_deg = first_edge ? first_edge->heading_deg : 0.0;
      w.episodes.push_back(std::move(ep));
      break;
    }
  }
  return w;
}

}  // namespace dvnav::world
