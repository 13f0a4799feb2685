#include "flowtwin/netmodel.hpp"

#include "flowtwin/json_reader.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <queue>

namespace flowtwin {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr std::size_t kNoNode = std::numeric_limits<std::size_t>::max();

geom::Polygon read_points(JsonReader& r, const nlohmann::json& arr, const std::string& path) {
  geom::Polygon pts;
  if (!arr.is_array()) {
    r.fail(path, "expected an array of [x, y] points");
    return pts;
  }
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto& p = arr[i];
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
      r.fail(JsonReader::join(path, i), "expected [x, y]");
      continue;
    }
    pts.emplace_back(p[0].get<double>(), p[1].get<double>());
  }
  return pts;
}

nlohmann::json points_json(const geom::Polygon& pts) {
  auto arr = nlohmann::json::array();
  for (const auto& p : pts) arr.push_back({p.x(), p.y()});
  return arr;
}

}  // namespace

NetworkSpec network_spec_from_json(const nlohmann::json& j) {
  JsonReader r;
  NetworkSpec spec;
  if (!r.object(j, "", {"nodes", "edges", "pois", "areas", "mobility_links", "obstacles", "geo_origin", "label"})) {
    r.throw_if_errors();
  }
  if (const auto* nodes = r.array(j, "nodes", "")) {
    for (std::size_t i = 0; i < nodes->size(); ++i) {
      const auto& n = (*nodes)[i];
      const std::string path = "/nodes/" + std::to_string(i);
      if (!r.object(n, path, {"id", "x", "y"})) continue;
      auto id = r.id(n, "id", path);
      auto x = r.number(n, "x", path);
      auto y = r.number(n, "y", path);
      if (id && x && y) spec.nodes.push_back({*id, Vec2d(*x, *y)});
    }
  }
  if (const auto* edges = r.array(j, "edges", "")) {
    for (std::size_t i = 0; i < edges->size(); ++i) {
      const auto& e = (*edges)[i];
      const std::string path = "/edges/" + std::to_string(i);
      if (!r.object(e, path, {"u", "v", "length", "walkable"})) continue;
      auto u = r.id(e, "u", path);
      auto v = r.id(e, "v", path);
      auto len = r.number(e, "length", path, false);
      auto walk = r.boolean(e, "walkable", path, false);
      if (u && v) spec.edges.push_back({*u, *v, len, walk.value_or(true)});
    }
  }
  if (const auto* pois = r.array(j, "pois", "")) {
    for (std::size_t i = 0; i < pois->size(); ++i) {
      const auto& p = (*pois)[i];
      const std::string path = "/pois/" + std::to_string(i);
      if (!r.object(p, path, {"id", "x", "y", "radius", "attraction", "area", "anchor"})) continue;
      auto id = r.id(p, "id", path);
      auto x = r.number(p, "x", path);
      auto y = r.number(p, "y", path);
      auto radius = r.number(p, "radius", path, false);
      auto attraction = r.number(p, "attraction", path, false);
      auto area = r.id(p, "area", path);
      auto anchor = r.id(p, "anchor", path, false);
      if (id && x && y && area) spec.pois.push_back({*id, Vec2d(*x, *y), radius, attraction, *area, anchor});
    }
  }
  if (const auto* areas = r.array(j, "areas", "")) {
    for (std::size_t i = 0; i < areas->size(); ++i) {
      const auto& a = (*areas)[i];
      const std::string path = "/areas/" + std::to_string(i);
      if (!r.object(a, path, {"id", "polygon", "observed"})) continue;
      auto id = r.id(a, "id", path);
      auto observed = r.boolean(a, "observed", path, false);
      const auto* poly = r.array(a, "polygon", path);
      if (id && poly) spec.areas.push_back({*id, read_points(r, *poly, path + "/polygon"), observed.value_or(false)});
    }
  }
  if (const auto* links = r.array(j, "mobility_links", "", false)) {
    for (std::size_t i = 0; i < links->size(); ++i) {
      const auto& l = (*links)[i];
      const std::string path = "/mobility_links/" + std::to_string(i);
      if (!r.object(l, path, {"from", "to", "path", "speed_kmh"})) continue;
      auto from = r.id(l, "from", path);
      auto to = r.id(l, "to", path);
      auto speed = r.number(l, "speed_kmh", path, false);
      NetworkSpec::LinkSpec link{from.value_or(""), to.value_or(""), {}, speed};
      if (const auto* nodes = r.array(l, "path", path, false)) {
        for (std::size_t k = 0; k < nodes->size(); ++k) {
          if (auto nid = r.id_value((*nodes)[k], path + "/path/" + std::to_string(k))) link.path.push_back(*nid);
        }
      }
      if (from && to) spec.mobility_links.push_back(std::move(link));
    }
  }
  if (const auto* obstacles = r.array(j, "obstacles", "", false)) {
    for (std::size_t i = 0; i < obstacles->size(); ++i) {
      spec.obstacles.push_back(read_points(r, (*obstacles)[i], "/obstacles/" + std::to_string(i)));
    }
  }
  if (const auto* origin = r.field(j, "geo_origin", "", false)) {
    if (r.object(*origin, "/geo_origin", {"lat", "lon"})) {
      auto lat = r.number(*origin, "lat", "/geo_origin");
      auto lon = r.number(*origin, "lon", "/geo_origin");
      if (lat && lon) spec.geo_origin = Vec2d(*lat, *lon);
    }
  }
  r.throw_if_errors();
  return spec;
}

nlohmann::json to_json(const NetworkSpec& spec) {
  nlohmann::json j;
  j["nodes"] = nlohmann::json::array();
  for (const auto& n : spec.nodes) j["nodes"].push_back({{"id", n.id}, {"x", n.position.x()}, {"y", n.position.y()}});
  j["edges"] = nlohmann::json::array();
  for (const auto& e : spec.edges) {
    nlohmann::json je{{"u", e.u}, {"v", e.v}, {"walkable", e.walkable}};
    if (e.length) je["length"] = *e.length;
    j["edges"].push_back(je);
  }
  j["pois"] = nlohmann::json::array();
  for (const auto& p : spec.pois) {
    nlohmann::json jp{{"id", p.id}, {"x", p.position.x()}, {"y", p.position.y()}, {"area", p.area}};
    if (p.radius) jp["radius"] = *p.radius;
    if (p.attraction) jp["attraction"] = *p.attraction;
    if (p.anchor) jp["anchor"] = *p.anchor;
    j["pois"].push_back(jp);
  }
  j["areas"] = nlohmann::json::array();
  for (const auto& a : spec.areas) {
    j["areas"].push_back({{"id", a.id}, {"polygon", points_json(a.polygon)}, {"observed", a.observed}});
  }
  j["mobility_links"] = nlohmann::json::array();
  for (const auto& l : spec.mobility_links) {
    nlohmann::json jl{{"from", l.from}, {"to", l.to}};
    if (!l.path.empty()) jl["path"] = l.path;
    if (l.speed_kmh) jl["speed_kmh"] = *l.speed_kmh;
    j["mobility_links"].push_back(jl);
  }
  if (!spec.obstacles.empty()) {
    j["obstacles"] = nlohmann::json::array();
    for (const auto& o : spec.obstacles) j["obstacles"].push_back(points_json(o));
  }
  if (spec.geo_origin) j["geo_origin"] = {{"lat", spec.geo_origin->x()}, {"lon", spec.geo_origin->y()}};
  return j;
}

Network::Network(const NetworkSpec& spec) : spec_(spec), obstacles_(spec.obstacles) {
  std::vector<FieldError> errors;
  auto fail = [&](std::string path, std::string msg) { errors.push_back({std::move(path), std::move(msg)}); };

  for (std::size_t i = 0; i < spec.nodes.size(); ++i) {
    if (!node_ids_.emplace(spec.nodes[i].id, i).second) fail("/nodes/" + std::to_string(i), "duplicate node id");
    nodes_.push_back(spec.nodes[i].position);
  }
  adjacency_.resize(nodes_.size());
  for (std::size_t i = 0; i < spec.edges.size(); ++i) {
    const auto& e = spec.edges[i];
    const std::string path = "/edges/" + std::to_string(i);
    auto u = node_ids_.find(e.u);
    auto v = node_ids_.find(e.v);
    if (u == node_ids_.end() || v == node_ids_.end()) {
      fail(path, "edge references unknown node");
      continue;
    }
    const double straight = (nodes_[u->second] - nodes_[v->second]).norm();
    const double length = e.length.value_or(straight);
    if (length < straight - 1e-6) fail(path + "/length", "shorter than straight-line node distance");
    edges_.push_back({u->second, v->second, length, e.walkable});
    if (e.walkable) {
      adjacency_[u->second].emplace_back(v->second, length);
      adjacency_[v->second].emplace_back(u->second, length);
    }
  }

  for (std::size_t i = 0; i < spec.areas.size(); ++i) {
    if (!area_ids_.emplace(spec.areas[i].id, i).second) fail("/areas/" + std::to_string(i), "duplicate area id");
    areas_.push_back({spec.areas[i].id, spec.areas[i].polygon, spec.areas[i].observed, {}});
    if (spec.areas[i].polygon.size() < 3) fail("/areas/" + std::to_string(i) + "/polygon", "needs at least 3 points");
  }

  // PoIs are kept in ascending id order so index order is the tie-break order.
  std::vector<std::size_t> order(spec.pois.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return spec.pois[a].id < spec.pois[b].id; });
  bool any_attraction = false;
  for (std::size_t src : order) {
    const auto& ps = spec.pois[src];
    const std::string path = "/pois/" + std::to_string(src);
    Poi p;
    p.id = ps.id;
    p.position = ps.position;
    p.vicinity_radius = ps.radius.value_or(kDefaultVicinityRadius);
    if (!(p.vicinity_radius > 0.0)) fail(path + "/radius", "must be > 0");
    p.attraction = ps.attraction.value_or(0.0);
    if (ps.attraction) any_attraction = true;
    if (p.attraction < 0.0) fail(path + "/attraction", "must be >= 0");
    auto area = area_ids_.find(ps.area);
    if (area == area_ids_.end()) {
      fail(path + "/area", "unknown area");
    } else {
      p.area = area->second;
    }
    if (ps.anchor) {
      auto n = node_ids_.find(*ps.anchor);
      if (n == node_ids_.end()) {
        fail(path + "/anchor", "unknown node");
      } else {
        p.anchor = n->second;
      }
    } else {
      // Nearest node touching a walkable edge; any node if none qualify.
      std::size_t best = kNoNode;
      double best_d = kInf;
      for (int pass = 0; pass < 2 && best == kNoNode; ++pass) {
        for (std::size_t n = 0; n < nodes_.size(); ++n) {
          if (pass == 0 && adjacency_[n].empty()) continue;
          const double d = (nodes_[n] - p.position).squaredNorm();
          if (d < best_d) {
            best_d = d;
            best = n;
          }
        }
      }
      if (best == kNoNode) {
        fail(path, "no node to anchor to");
      } else {
        p.anchor = best;
      }
    }
    if (!poi_ids_.emplace(p.id, pois_.size()).second) fail(path + "/id", "duplicate PoI id");
    pois_.push_back(std::move(p));
  }
  if (!any_attraction && !pois_.empty()) {
    for (auto& p : pois_) p.attraction = 1.0 / static_cast<double>(pois_.size());
  }
  for (std::size_t i = 0; i < pois_.size(); ++i) {
    if (pois_[i].area < areas_.size()) areas_[pois_[i].area].pois.push_back(i);
  }

  for (std::size_t i = 0; i < spec.mobility_links.size(); ++i) {
    const auto& ls = spec.mobility_links[i];
    const std::string path = "/mobility_links/" + std::to_string(i);
    auto from = poi_ids_.find(ls.from);
    auto to = poi_ids_.find(ls.to);
    if (from == poi_ids_.end() || to == poi_ids_.end()) {
      fail(path, "mobility link endpoint is not a known PoI");
      continue;
    }
    MobilityLink link;
    link.from = from->second;
    link.to = to->second;
    link.speed = kmh_to_mps(ls.speed_kmh.value_or(kDefaultMobilitySpeedKmh));
    if (!(link.speed > 0.0)) fail(path + "/speed_kmh", "must be > 0");
    for (const auto& nid : ls.path) {
      auto n = node_ids_.find(nid);
      if (n == node_ids_.end()) {
        fail(path + "/path", "unknown node " + nid);
        break;
      }
      link.path.push_back(n->second);
    }
    links_.push_back(std::move(link));
  }
  if (!errors.empty()) throw ValidationError(std::move(errors));

  compute_shortest_paths();

  for (std::size_t i = 0; i < links_.size(); ++i) {
    auto& link = links_[i];
    const std::string path = "/mobility_links/" + std::to_string(i) + "/path";
    if (link.path.empty()) {
      if (!connected(link.from, link.to)) fail(path, "endpoints are not connected by a walkable route");
      else link.path = shortest_path_nodes(link.from, link.to);
      continue;
    }
    if (link.path.front() != pois_[link.from].anchor || link.path.back() != pois_[link.to].anchor) {
      fail(path, "must start and end at the endpoint PoI anchors");
    }
    for (std::size_t k = 0; k + 1 < link.path.size(); ++k) {
      const auto& nb = adjacency_[link.path[k]];
      if (std::none_of(nb.begin(), nb.end(), [&](const auto& e) { return e.first == link.path[k + 1]; })) {
        fail(path + "/" + std::to_string(k), "consecutive nodes not joined by a walkable edge");
        break;
      }
    }
  }
  if (!errors.empty()) throw ValidationError(std::move(errors));
}

Network Network::load(const std::string& path) { return from_json(read_json_file(path)); }

void Network::compute_shortest_paths() {
  const std::size_t n_poi = pois_.size();
  node_dist_.assign(n_poi, {});
  node_pred_.assign(n_poi, {});
  poi_dist_ = MatXd::Constant(static_cast<Eigen::Index>(n_poi), static_cast<Eigen::Index>(n_poi), kInf);
  using Item = std::pair<double, std::size_t>;
  for (std::size_t p = 0; p < n_poi; ++p) {
    auto& dist = node_dist_[p];
    auto& pred = node_pred_[p];
    dist.assign(nodes_.size(), kInf);
    pred.assign(nodes_.size(), kNoNode);
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    const std::size_t src = pois_[p].anchor;
    dist[src] = 0.0;
    heap.emplace(0.0, src);
    while (!heap.empty()) {
      auto [d, u] = heap.top();
      heap.pop();
      if (d > dist[u]) continue;
      for (auto [v, len] : adjacency_[u]) {
        const double nd = d + len;
        if (nd < dist[v]) {
          dist[v] = nd;
          pred[v] = u;
          heap.emplace(nd, v);
        }
      }
    }
    for (std::size_t q = 0; q < n_poi; ++q) {
      poi_dist_(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(q)) = dist[pois_[q].anchor];
    }
  }
}

std::size_t Network::poi_index(std::string_view id) const {
  auto it = poi_ids_.find(std::string(id));
  if (it == poi_ids_.end()) throw Error(ErrorCode::UnknownId, "unknown PoI " + std::string(id));
  return it->second;
}

std::optional<std::size_t> Network::find_poi(std::string_view id) const {
  auto it = poi_ids_.find(std::string(id));
  if (it == poi_ids_.end()) return std::nullopt;
  return it->second;
}

std::size_t Network::area_index(std::string_view id) const {
  auto it = area_ids_.find(std::string(id));
  if (it == area_ids_.end()) throw Error(ErrorCode::UnknownId, "unknown area " + std::string(id));
  return it->second;
}

std::size_t Network::node_index(std::string_view id) const {
  auto it = node_ids_.find(std::string(id));
  if (it == node_ids_.end()) throw Error(ErrorCode::UnknownId, "unknown node " + std::string(id));
  return it->second;
}

std::optional<std::size_t> Network::area_at(const Vec2d& x) const {
  for (std::size_t a = 0; a < areas_.size(); ++a) {
    if (geom::contains(areas_[a].polygon, x)) return a;
  }
  return std::nullopt;
}

bool Network::connected(std::size_t p, std::size_t q) const {
  return std::isfinite(poi_dist_(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(q)));
}

double Network::shortest_path_distance(std::size_t p, std::size_t q) const {
  const double d = poi_dist_(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(q));
  if (!std::isfinite(d)) throw Error(ErrorCode::NoPath, pois_[p].id + " -> " + pois_[q].id);
  return d;
}

std::vector<std::size_t> Network::shortest_path_nodes(std::size_t p, std::size_t q) const {
  if (!connected(p, q)) throw Error(ErrorCode::NoPath, pois_[p].id + " -> " + pois_[q].id);
  // Walk the predecessor tree rooted at q's anchor back to p's anchor, which
  // yields the path from p to q in forward order.
  std::vector<std::size_t> path;
  const auto& pred = node_pred_[q];
  for (std::size_t n = pois_[p].anchor; n != kNoNode; n = pred[n]) {
    path.push_back(n);
    if (n == pois_[q].anchor) break;
  }
  return path;
}

double Network::area_distance(std::size_t m, std::size_t n) const {
  if (m == n) return 0.0;
  return shortest_path_distance(representative_poi(m), representative_poi(n));
}

std::vector<std::size_t> Network::area_path_nodes(std::size_t m, std::size_t n) const {
  return shortest_path_nodes(representative_poi(m), representative_poi(n));
}

std::optional<std::size_t> Network::detect_visit(const Vec2d& x) const {
  std::optional<std::size_t> best;
  double best_d = kInf;
  for (std::size_t p = 0; p < pois_.size(); ++p) {
    const double d = (x - pois_[p].position).norm();
    if (d <= pois_[p].vicinity_radius && d < best_d) {
      best_d = d;
      best = p;
    }
  }
  return best;
}

std::optional<std::size_t> Network::link_between(std::size_t p, std::size_t q) const {
  for (std::size_t i = 0; i < links_.size(); ++i) {
    const auto& l = links_[i];
    if ((l.from == p && l.to == q) || (l.from == q && l.to == p)) return i;
  }
  return std::nullopt;
}

std::vector<std::string> Network::invariant_violations() const {
  std::vector<std::string> issues;
  for (std::size_t p = 0; p < pois_.size(); ++p) {
    for (std::size_t q = p + 1; q < pois_.size(); ++q) {
      if (!connected(p, q)) issues.push_back("PoIs " + pois_[p].id + " and " + pois_[q].id + " are disconnected");
    }
  }
  double sum = 0.0;
  for (const auto& p : pois_) sum += p.attraction;
  if (!pois_.empty() && std::abs(sum - 1.0) > 1e-9) issues.push_back("attractions sum to " + std::to_string(sum));
  for (std::size_t a = 0; a < areas_.size(); ++a) {
    if (!geom::is_simple(areas_[a].polygon)) issues.push_back("area " + areas_[a].id + " polygon is not simple");
    if (areas_[a].pois.empty()) issues.push_back("area " + areas_[a].id + " contains no PoI");
    for (std::size_t b = a + 1; b < areas_.size(); ++b) {
      if (geom::interiors_overlap(areas_[a].polygon, areas_[b].polygon)) {
        issues.push_back("areas " + areas_[a].id + " and " + areas_[b].id + " overlap");
      }
    }
  }
  for (const auto& p : pois_) {
    if (p.area < areas_.size() && !geom::contains(areas_[p.area].polygon, p.position)) {
      issues.push_back("PoI " + p.id + " lies outside area " + areas_[p.area].id);
    }
  }
  return issues;
}

nlohmann::json Network::to_geojson() const {
  // Equirectangular projection about geo_origin when given; raw meters otherwise.
  auto coord = [this](const Vec2d& p) {
    if (!spec_.geo_origin) return nlohmann::json::array({p.x(), p.y()});
    constexpr double kEarthRadius = 6371000.0;
    const double lat0 = spec_.geo_origin->x();
    const double lon0 = spec_.geo_origin->y();
    const double lat = lat0 + p.y() / kEarthRadius * 180.0 / std::numbers::pi;
    const double lon = lon0 + p.x() / (kEarthRadius * std::cos(lat0 * std::numbers::pi / 180.0)) * 180.0 / std::numbers::pi;
    return nlohmann::json::array({lon, lat});
  };
  auto features = nlohmann::json::array();
  for (const auto& a : areas_) {
    auto ring = nlohmann::json::array();
    for (const auto& p : a.polygon) ring.push_back(coord(p));
    ring.push_back(coord(a.polygon.front()));
    auto poi_ids = nlohmann::json::array();
    for (auto p : a.pois) poi_ids.push_back(pois_[p].id);
    features.push_back({{"type", "Feature"},
                        {"geometry", {{"type", "Polygon"}, {"coordinates", {ring}}}},
                        {"properties", {{"kind", "area"}, {"id", a.id}, {"observed", a.observed}, {"pois", poi_ids}}}});
  }
  for (const auto& p : pois_) {
    features.push_back({{"type", "Feature"},
                        {"geometry", {{"type", "Point"}, {"coordinates", coord(p.position)}}},
                        {"properties",
                         {{"kind", "poi"},
                          {"id", p.id},
                          {"area", areas_[p.area].id},
                          {"radius", p.vicinity_radius},
                          {"attraction", p.attraction}}}});
  }
  for (std::size_t i = 0; i < edges_.size(); ++i) {
    const auto& e = edges_[i];
    features.push_back({{"type", "Feature"},
                        {"geometry", {{"type", "LineString"}, {"coordinates", {coord(nodes_[e.u]), coord(nodes_[e.v])}}}},
                        {"properties",
                         {{"kind", "edge"},
                          {"u", spec_.nodes[e.u].id},
                          {"v", spec_.nodes[e.v].id},
                          {"length", e.length},
                          {"walkable", e.walkable}}}});
  }
  for (const auto& l : links_) {
    auto line = nlohmann::json::array();
    for (auto n : l.path) line.push_back(coord(nodes_[n]));
    features.push_back({{"type", "Feature"},
                        {"geometry", {{"type", "LineString"}, {"coordinates", line}}},
                        {"properties",
                         {{"kind", "mobility_link"},
                          {"from", pois_[l.from].id},
                          {"to", pois_[l.to].id},
                          {"speed_kmh", l.speed * 3.6}}}});
  }
  nlohmann::json fc{{"type", "FeatureCollection"}, {"features", features}};
  if (!spec_.geo_origin) fc["properties"] = {{"crs", "local planar meters"}};
  return fc;
}

double effective_travel_time(const Network& net, std::size_t p, std::size_t q, const SpeedTable& speeds) {
  const double dist = net.shortest_path_distance(p, q);
  return dist / speeds(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(q));
}

}  // namespace flowtwin
