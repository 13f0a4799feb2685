#pragma once

#include "flowtwin/common.hpp"
#include "flowtwin/geometry.hpp"

#include <json.hpp>

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace flowtwin {

inline constexpr double kDefaultVicinityRadius = 15.0;
inline constexpr double kDefaultMobilitySpeedKmh = 20.0;
inline constexpr double kDefaultWalkSpeedKmh = 5.0;

struct Area {
  std::string id;
  geom::Polygon polygon;
  bool observed = false;
  std::vector<std::size_t> pois;  // indices into Network::pois(), ascending
};

struct Poi {
  std::string id;
  Vec2d position = Vec2d::Zero();
  double vicinity_radius = kDefaultVicinityRadius;
  double attraction = 0.0;
  std::size_t area = 0;
  std::size_t anchor = 0;  // nearest walkable node
};

struct Edge {
  std::size_t u = 0;
  std::size_t v = 0;
  double length = 0.0;
  bool walkable = true;
};

struct MobilityLink {
  std::size_t from = 0;  // PoI indices
  std::size_t to = 0;
  std::vector<std::size_t> path;  // node indices, anchor(from) .. anchor(to)
  double speed = kmh_to_mps(kDefaultMobilitySpeedKmh);
};

using Polyline = std::vector<Vec2d>;

// Everything a network file can carry, before indexing. Ids are strings.
struct NetworkSpec {
  struct Node {
    std::string id;
    Vec2d position;
  };
  struct EdgeSpec {
    std::string u, v;
    std::optional<double> length;
    bool walkable = true;
  };
  struct PoiSpec {
    std::string id;
    Vec2d position;
    std::optional<double> radius;
    std::optional<double> attraction;
    std::string area;
    std::optional<std::string> anchor;
  };
  struct AreaSpec {
    std::string id;
    geom::Polygon polygon;
    bool observed = false;
  };
  struct LinkSpec {
    std::string from, to;
    std::vector<std::string> path;
    std::optional<double> speed_kmh;
  };
  std::vector<Node> nodes;
  std::vector<EdgeSpec> edges;
  std::vector<PoiSpec> pois;
  std::vector<AreaSpec> areas;
  std::vector<LinkSpec> mobility_links;
  std::vector<Polyline> obstacles;
  std::optional<Vec2d> geo_origin;  // (lat, lon) of the planar origin, for export only
};

NetworkSpec network_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const NetworkSpec& spec);

// Pairwise effective speed caps between PoIs, indexed by PoI index.
using SpeedTable = MatXd;

// Walkable network plus PoIs, areas and mobility links. Immutable once built;
// all-pairs PoI shortest paths are computed at construction.
class Network {
 public:
  explicit Network(const NetworkSpec& spec);

  static Network from_json(const nlohmann::json& j) { return Network(network_spec_from_json(j)); }
  static Network load(const std::string& path);

  const NetworkSpec& spec() const { return spec_; }
  const std::vector<Vec2d>& nodes() const { return nodes_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const std::vector<Poi>& pois() const { return pois_; }
  const std::vector<Area>& areas() const { return areas_; }
  const std::vector<MobilityLink>& mobility_links() const { return links_; }
  const std::vector<Polyline>& obstacles() const { return obstacles_; }

  std::size_t poi_count() const { return pois_.size(); }
  std::size_t area_count() const { return areas_.size(); }

  std::size_t poi_index(std::string_view id) const;
  std::size_t area_index(std::string_view id) const;
  std::size_t node_index(std::string_view id) const;
  std::optional<std::size_t> find_poi(std::string_view id) const;

  // Index of the first area (file order) whose polygon contains x.
  std::optional<std::size_t> area_at(const Vec2d& x) const;

  // Walkable shortest-path length between PoI anchors. Throws NoPath.
  double shortest_path_distance(std::size_t p, std::size_t q) const;
  bool connected(std::size_t p, std::size_t q) const;
  // Node sequence anchor(p) .. anchor(q). Throws NoPath.
  std::vector<std::size_t> shortest_path_nodes(std::size_t p, std::size_t q) const;

  // Area-level distance used by demand reconstruction: between the
  // lowest-id PoIs of the two areas (0 for m == n).
  std::size_t representative_poi(std::size_t area) const { return areas_[area].pois.front(); }
  double area_distance(std::size_t m, std::size_t n) const;
  std::vector<std::size_t> area_path_nodes(std::size_t m, std::size_t n) const;

  // PoI whose vicinity contains x (inclusive); nearest centre wins, ties by lowest id.
  std::optional<std::size_t> detect_visit(const Vec2d& x) const;

  // Link index serving the unordered PoI pair, if any.
  std::optional<std::size_t> link_between(std::size_t p, std::size_t q) const;

  // Invariant violations a loader should reject: disconnected anchors,
  // attraction sum, polygon simplicity, area overlap, empty areas.
  std::vector<std::string> invariant_violations() const;

  nlohmann::json to_geojson() const;

 private:
  void compute_shortest_paths();

  NetworkSpec spec_;
  std::vector<Vec2d> nodes_;
  std::vector<Edge> edges_;
  std::vector<Poi> pois_;
  std::vector<Area> areas_;
  std::vector<MobilityLink> links_;
  std::vector<Polyline> obstacles_;
  std::unordered_map<std::string, std::size_t> node_ids_;
  std::unordered_map<std::string, std::size_t> poi_ids_;
  std::unordered_map<std::string, std::size_t> area_ids_;
  // adjacency over walkable edges: (neighbor, length)
  std::vector<std::vector<std::pair<std::size_t, double>>> adjacency_;
  // per PoI: distance to every node and predecessor tree from its anchor
  std::vector<std::vector<double>> node_dist_;
  std::vector<std::vector<std::size_t>> node_pred_;
  MatXd poi_dist_;
};

// d~ = dist / speed for one PoI pair under a speed table.
double effective_travel_time(const Network& net, std::size_t p, std::size_t q, const SpeedTable& speeds);

}  // namespace flowtwin
