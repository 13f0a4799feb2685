#include "flowtwin/scenario.hpp"

#include "flowtwin/json_reader.hpp"

#include <fmt/format.h>

#include <algorithm>

namespace flowtwin {

InterventionSpec intervention_from_json(const nlohmann::json& j) {
  JsonReader r;
  InterventionSpec spec;
  if (!r.object(j, "", {"label", "seed", "walk_speed_kmh", "mobility_speed_kmh", "mobility_links",
                        "attraction_overrides"})) {
    r.throw_if_errors();
  }
  if (auto s = r.string(j, "label", "", false)) spec.label = *s;
  if (const auto* s = r.field(j, "seed", "", false)) {
    if (s->is_number_unsigned()) spec.seed = s->get<std::uint64_t>();
    else if (s->is_number_integer() && s->get<long long>() >= 0) spec.seed = static_cast<std::uint64_t>(s->get<long long>());
    else r.fail("/seed", "expected a non-negative integer");
  }
  auto speed = [&](std::string_view key) -> std::optional<double> {
    auto v = r.number(j, key, "", false);
    if (v && !(*v > 0.0)) {
      r.fail(JsonReader::join("", key), "must be > 0");
      return std::nullopt;
    }
    return v;
  };
  spec.walk_speed_kmh = speed("walk_speed_kmh");
  spec.mobility_speed_kmh = speed("mobility_speed_kmh");

  if (const auto* links = r.array(j, "mobility_links", "", false)) {
    for (std::size_t i = 0; i < links->size(); ++i) {
      const auto& l = (*links)[i];
      const std::string path = JsonReader::join("/mobility_links", i);
      if (!r.object(l, path, {"from", "to", "path", "speed_kmh"})) continue;
      InterventionLink link;
      link.from = r.id(l, "from", path).value_or("");
      link.to = r.id(l, "to", path).value_or("");
      if (!link.from.empty() && link.from == link.to) r.fail(path + "/to", "link endpoints must differ");
      if (const auto* nodes = r.array(l, "path", path, false)) {
        for (std::size_t k = 0; k < nodes->size(); ++k) {
          if (auto n = r.id_value((*nodes)[k], JsonReader::join(path + "/path", k))) link.path.push_back(*n);
        }
      }
      if (auto s = r.number(l, "speed_kmh", path, false)) {
        if (*s > 0.0) link.speed_kmh = s;
        else r.fail(path + "/speed_kmh", "must be > 0");
      }
      spec.links.push_back(std::move(link));
    }
  }
  if (const auto* ov = r.field(j, "attraction_overrides", "", false)) {
    if (!ov->is_object()) {
      r.fail("/attraction_overrides", "expected an object of PoI id -> score");
    } else {
      for (const auto& [id, v] : ov->items()) {
        const std::string path = JsonReader::join("/attraction_overrides", id);
        if (auto x = r.number_value(v, path)) {
          if (*x < 0.0) r.fail(path, "must be >= 0");
          else spec.attraction_overrides[id] = *x;
        }
      }
    }
  }
  r.throw_if_errors();
  return spec;
}

nlohmann::json to_json(const InterventionSpec& spec) {
  nlohmann::json j = nlohmann::json::object();
  j["label"] = spec.label;
  if (spec.seed) j["seed"] = *spec.seed;
  if (spec.walk_speed_kmh) j["walk_speed_kmh"] = *spec.walk_speed_kmh;
  if (spec.mobility_speed_kmh) j["mobility_speed_kmh"] = *spec.mobility_speed_kmh;
  j["mobility_links"] = nlohmann::json::array();
  for (const auto& l : spec.links) {
    nlohmann::json jl = {{"from", l.from}, {"to", l.to}};
    if (!l.path.empty()) jl["path"] = l.path;
    if (l.speed_kmh) jl["speed_kmh"] = *l.speed_kmh;
    j["mobility_links"].push_back(jl);
  }
  j["attraction_overrides"] = nlohmann::json::object();
  for (const auto& [id, v] : spec.attraction_overrides) j["attraction_overrides"][id] = v;
  return j;
}

namespace {

struct Resolved {
  std::vector<MobilityLink> links;
  std::vector<std::pair<std::size_t, double>> overrides;
  std::vector<FieldError> errors;
};

Resolved resolve(const InterventionSpec& spec, const Network& net, double mobility_speed) {
  Resolved out;
  auto fail = [&](std::string path, std::string msg) { out.errors.push_back({std::move(path), std::move(msg)}); };
  for (std::size_t i = 0; i < spec.links.size(); ++i) {
    const auto& l = spec.links[i];
    const std::string path = fmt::format("/mobility_links/{}", i);
    const auto p = net.find_poi(l.from), q = net.find_poi(l.to);
    if (!p) fail(path + "/from", fmt::format("unknown PoI '{}'", l.from));
    if (!q) fail(path + "/to", fmt::format("unknown PoI '{}'", l.to));
    if (!p || !q || *p == *q) continue;
    MobilityLink link;
    link.from = *p;
    link.to = *q;
    link.speed = l.speed_kmh ? kmh_to_mps(*l.speed_kmh) : mobility_speed;
    if (!l.path.empty()) {
      bool ok = true;
      for (std::size_t k = 0; k < l.path.size(); ++k) {
        try {
          link.path.push_back(net.node_index(l.path[k]));
        } catch (const Error&) {
          fail(fmt::format("{}/path/{}", path, k), fmt::format("unknown node '{}'", l.path[k]));
          ok = false;
        }
      }
      if (!ok) continue;
      if (link.path.front() != net.pois()[*p].anchor || link.path.back() != net.pois()[*q].anchor) {
        fail(path + "/path", "path must run between the endpoint PoIs' anchor nodes");
        continue;
      }
      for (std::size_t k = 0; k + 1 < link.path.size(); ++k) {
        const auto a = link.path[k], b = link.path[k + 1];
        const bool adjacent = std::any_of(net.edges().begin(), net.edges().end(), [&](const Edge& e) {
          return (e.u == a && e.v == b) || (e.u == b && e.v == a);
        });
        if (!adjacent) {
          fail(fmt::format("{}/path/{}", path, k + 1), "consecutive path nodes are not joined by an edge");
          ok = false;
          break;
        }
      }
      if (!ok) continue;
    } else if (auto idx = net.link_between(*p, *q)) {
      link.path = net.mobility_links()[*idx].path;
      if (net.mobility_links()[*idx].from != *p) std::reverse(link.path.begin(), link.path.end());
    } else if (net.connected(*p, *q)) {
      link.path = net.shortest_path_nodes(*p, *q);
    } else {
      fail(path, "endpoints are not connected; give an explicit path");
      continue;
    }
    out.links.push_back(std::move(link));
  }
  for (const auto& [id, v] : spec.attraction_overrides) {
    const auto p = net.find_poi(id);
    if (!p) fail("/attraction_overrides/" + id, fmt::format("unknown PoI '{}'", id));
    else out.overrides.emplace_back(*p, v);
  }
  return out;
}

}  // namespace

std::vector<FieldError> intervention_errors(const InterventionSpec& spec, const Network& net) {
  auto errors = resolve(spec, net, kmh_to_mps(kDefaultMobilitySpeedKmh)).errors;
  if (!spec.attraction_overrides.empty()) {
    double total = 0.0;
    for (const auto& [id, v] : spec.attraction_overrides) total += v;
    // the overridden table must keep some mass
    if (total <= 0.0 && spec.attraction_overrides.size() == net.poi_count()) {
      errors.push_back({"/attraction_overrides", "all attraction scores are zero"});
    }
  }
  return errors;
}

VecXd normalize_attractions(const std::map<std::string, double>& area_shares, const Network& net) {
  VecXd table = VecXd::Zero(static_cast<Eigen::Index>(net.poi_count()));
  for (const auto& [id, share] : area_shares) {
    if (!(share >= 0.0)) throw Error(ErrorCode::Validation, fmt::format("area share for '{}' must be >= 0", id));
    const auto& area = net.areas()[net.area_index(id)];
    for (std::size_t p : area.pois) table[static_cast<Eigen::Index>(p)] += share / static_cast<double>(area.pois.size());
  }
  const double total = table.sum();
  if (!(total > 0.0)) throw Error(ErrorCode::AllZero, "all area shares are zero");
  return table / total;
}

EnvironmentView apply_intervention(const EnvironmentView& base, const InterventionSpec& spec) {
  const Network& net = base.network();
  const double walk = spec.walk_speed_kmh ? kmh_to_mps(*spec.walk_speed_kmh) : base.walk_speed();
  const double mobility = spec.mobility_speed_kmh ? kmh_to_mps(*spec.mobility_speed_kmh) : base.mobility_speed();
  auto resolved = resolve(spec, net, mobility);
  if (!resolved.errors.empty()) {
    const bool unknown = std::any_of(resolved.errors.begin(), resolved.errors.end(),
                                     [](const FieldError& e) { return e.message.rfind("unknown", 0) == 0; });
    if (unknown) throw Error(ErrorCode::UnknownId, resolved.errors.front().path + ": " + resolved.errors.front().message);
    throw ValidationError(resolved.errors);
  }

  std::vector<MobilityLink> links;
  for (const auto& l : base.links()) {
    const bool replaced = std::any_of(resolved.links.begin(), resolved.links.end(), [&](const MobilityLink& n) {
      return std::minmax(n.from, n.to) == std::minmax(l.from, l.to);
    });
    if (!replaced) links.push_back(l);
  }
  for (auto& l : resolved.links) links.push_back(std::move(l));

  VecXd attractions = base.attractions();
  if (!resolved.overrides.empty()) {
    for (const auto& [p, v] : resolved.overrides) attractions[static_cast<Eigen::Index>(p)] = v;
    const double total = attractions.sum();
    if (!(total > 0.0)) throw Error(ErrorCode::AllZero, "overridden attraction table is all zero");
    attractions /= total;
  }
  return EnvironmentView(base.network_ptr(), std::move(attractions), std::move(links), walk, mobility);
}

CounterfactualRun run_counterfactual(const DestinationPolicy& policy, const EnvironmentView& base,
                                     const InterventionSpec& spec, std::span<const DepartureEvent> departures,
                                     const SocialForceParams& params, const SimulationOptions& opt) {
  EnvironmentView env = apply_intervention(base, spec);
  SimulationResult result = run_simulation(env, departures, policy, params, opt);
  return {spec.label, std::move(env), std::move(result)};
}

}  // namespace flowtwin
