#pragma once

/**
 * Trajectory scoring. All distances are geodesic over the navigation graph
 * unless configured otherwise; the 3 m arrival radius doubles as the decay
 * scale for the soft alignment metrics.
 */

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "dvnav/world.hpp"

namespace dvnav::metrics {

struct MetricsError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class DistanceMode { geodesic, euclidean };

struct MetricsConfig {
  double success_radius = 3.0;  // meters; also the decay scale of nDTW and coverage
  DistanceMode mode = DistanceMode::geodesic;

  void validate() const {
    if (!(success_radius > 0.0)) throw MetricsError("MetricsConfig: success_radius must be > 0");
  }
};

/// Memoizes one Dijkstra map per queried source. Geodesic lookups between a
/// handful of paths then cost O(1) each.
class DistanceOracle {
 public:
  DistanceOracle(const world::NavGraph& graph, DistanceMode mode)
      : graph_(graph), mode_(mode) {}

  double operator()(const std::string& a, const std::string& b) const {
    if (mode_ == DistanceMode::euclidean) return graph_.distance(a, b);
    if (a == b) {
      graph_.viewpoint(a);
      return 0.0;
    }
    auto it = cache_.find(a);
    if (it == cache_.end()) {
      it = cache_.emplace(a, graph_.shortest_paths_from(a)).first;
    }
    auto dit = it->second.find(b);
    if (dit == it->second.end()) throw world::UnreachableError(a, b);
    return dit->second;
  }

 private:
  const world::NavGraph& graph_;
  DistanceMode mode_;
  mutable std::unordered_map<std::string, std::unordered_map<std::string, double>> cache_;
};

namespace detail {

inline void validate_path(const world::NavGraph& graph, const std::vector<std::string>& path,
                          const char* what) {
  if (path.empty()) throw MetricsError(std::string(what) + ": empty path");
  for (const auto& vp : path) {
    if (!graph.has_viewpoint(vp)) {
      throw MetricsError(std::string(what) + ": unknown viewpoint " + vp);
    }
  }
  for (std::size_t i = 1; i < path.size(); ++i) {
    if (path[i] == path[i - 1]) continue;
    if (!graph.edge_between(path[i - 1], path[i])) {
      throw MetricsError(std::string(what) + ": no edge " + path[i - 1] + " -> " + path[i]);
    }
  }
}

}  // namespace detail

/// Physical length: sum of straight-line hop distances.
inline double path_length(const world::NavGraph& graph, const std::vector<std::string>& path) {
  detail::validate_path(graph, path, "path_length");
  double total = 0.0;
  for (std::size_t i = 1; i < path.size(); ++i) {
    total += graph.distance(path[i - 1], path[i]);
  }
  return total;
}

/**
 * Dynamic time warping between two viewpoint sequences under the oracle's
 * distance. Full alignment; both sequences must be nonempty.
 */
inline double dtw_distance(const std::vector<std::string>& reference,
                           const std::vector<std::string>& query, const DistanceOracle& dist) {
  if (reference.empty() || query.empty()) throw MetricsError("dtw_distance: empty path");
  const std::size_t n = reference.size();
  const std::size_t m = query.size();
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> prev(m + 1, inf);
  std::vector<double> curr(m + 1, inf);
  prev[0] = 0.0;
  for (std::size_t i = 1; i <= n; ++i) {
    curr[0] = inf;
    for (std::size_t j = 1; j <= m; ++j) {
      const double cost = dist(reference[i - 1], query[j - 1]);
      curr[j] = cost + std::min({prev[j], curr[j - 1], prev[j - 1]});
    }
    std::swap(prev, curr);
  }
  return prev[m];
}

struct EpisodeMetrics {
  double navigation_error = 0.0;  // geodesic distance from final position to goal
  double success = 0.0;           // 1 when navigation_error <= radius
  double oracle_success = 0.0;    // 1 when any visited viewpoint is within radius
  double spl = 0.0;               // success weighted by inverse path-length ratio
  double ndtw = 0.0;              // exp(-DTW / (|reference| * radius))
  double sdtw = 0.0;              // success * ndtw
  double cls = 0.0;               // coverage * length score
  double trajectory_length = 0.0;
  double shortest_length = 0.0;   // geodesic start-to-goal
};

/**
 * Scores one trajectory against its ground-truth path. The trajectory must
 * start where the reference starts and traverse real edges.
 *
 * SPL: success * shortest / max(shortest, taken), and 1.0 when the episode
 * starts at the goal and succeeds. nDTW: exponential decay of the DTW
 * alignment cost, normalized by reference length times the radius. CLS:
 * coverage PC (mean decayed distance from each reference node to the
 * trajectory) times length score EPL / (EPL + |EPL - PL|) with EPL = PC
 * times the reference length.
 */
inline EpisodeMetrics compute_metrics(const world::NavGraph& graph,
                                      const std::vector<std::string>& trajectory,
                                      const std::vector<std::string>& gt_path,
                                      const MetricsConfig& config = {}) {
  config.validate();
  detail::validate_path(graph, trajectory, "trajectory");
  detail::validate_path(graph, gt_path, "gt_path");
  if (trajectory.front() != gt_path.front()) {
    throw MetricsError("compute_metrics: trajectory does not start at the reference start");
  }

  const DistanceOracle dist(graph, config.mode);
  const std::string& goal = gt_path.back();
  EpisodeMetrics m;

  m.navigation_error = dist(trajectory.back(), goal);
  m.success = m.navigation_error <= config.success_radius ? 1.0 : 0.0;

  for (const auto& vp : trajectory) {
    if (dist(vp, goal) <= config.success_radius) {
      m.oracle_success = 1.0;
      break;
    }
  }

  m.trajectory_length = path_length(graph, trajectory);
  m.shortest_length = dist(gt_path.front(), goal);

  if (m.success > 0.0) {
    m.spl = m.shortest_length == 0.0
                ? 1.0
                : m.shortest_length / std::max(m.shortest_length, m.trajectory_length);
  }

  const double dtw = dtw_distance(gt_path, trajectory, dist);
  m.ndtw = std::exp(-dtw / (static_cast<double>(gt_path.size()) * config.success_radius));
  m.sdtw = m.success * m.ndtw;

  double coverage = 0.0;
  for (const auto& r : gt_path) {
    double nearest = std::numeric_limits<double>::infinity();
    for (const auto& p : trajectory) {
      nearest = std::min(nearest, dist(r, p));
    }
    coverage += std::exp(-nearest / config.success_radius);
  }
  coverage /= static_cast<double>(gt_path.size());

  const double reference_length = path_length(graph, gt_path);
  const double expected = coverage * reference_length;
  double length_score;
  if (expected == 0.0) {
    length_score = m.trajectory_length == 0.0 ? 1.0 : 0.0;
  } else {
    length_score = expected / (expected + std::abs(expected - m.trajectory_length));
  }
  m.cls = coverage * length_score;
  return m;
}

struct SplitMetrics {
  std::size_t episodes = 0;
  double navigation_error = 0.0;
  double success_rate = 0.0;
  double oracle_success_rate = 0.0;
  double spl = 0.0;
  double ndtw = 0.0;
  double sdtw = 0.0;
  double cls = 0.0;
};

/// Unweighted means over episodes.
inline SplitMetrics aggregate_metrics(const std::vector<EpisodeMetrics>& all) {
  if (all.empty()) throw MetricsError("aggregate_metrics: no episodes");
  SplitMetrics s;
  s.episodes = all.size();
  for (const auto& m : all) {
    s.navigation_error += m.navigation_error;
    s.success_rate += m.success;
    s.oracle_success_rate += m.oracle_success;
    s.spl += m.spl;
    s.ndtw += m.ndtw;
    s.sdtw += m.sdtw;
    s.cls += m.cls;
  }
  const double n = static_cast<double>(all.size());
  s.navigation_error /= n;
  s.success_rate /= n;
  s.oracle_success_rate /= n;
  s.spl /= n;
  s.ndtw /= n;
  s.sdtw /= n;
  s.cls /= n;
  return s;
}

}  // namespace dvnav::metrics
