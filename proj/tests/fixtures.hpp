#pragma once

#include "flowtwin/netmodel.hpp"

#include <string>
#include <vector>

namespace flowtwin::testing {

// One square area covering everything; PoIs placed on the named nodes.
inline NetworkSpec single_area_spec(std::vector<NetworkSpec::Node> nodes,
                                    std::vector<NetworkSpec::EdgeSpec> edges,
                                    const std::vector<std::string>& poi_nodes,
                                    double half_extent = 5000.0) {
  NetworkSpec spec;
  spec.nodes = std::move(nodes);
  spec.edges = std::move(edges);
  spec.areas.push_back({"Z",
                        {Vec2d(-half_extent, -half_extent), Vec2d(half_extent, -half_extent),
                         Vec2d(half_extent, half_extent), Vec2d(-half_extent, half_extent)},
                        true});
  const double share = 1.0 / static_cast<double>(poi_nodes.size());
  for (const auto& n : poi_nodes) {
    Vec2d pos = Vec2d::Zero();
    for (const auto& node : spec.nodes) {
      if (node.id == n) pos = node.position;
    }
    spec.pois.push_back({n, pos, std::nullopt, share, "Z", n});
  }
  return spec;
}

// Triangle A-B 300 m, B-C 400 m, A-C 800 m.
inline NetworkSpec triangle_spec() {
  return single_area_spec({{"A", Vec2d(0, 0)}, {"B", Vec2d(300, 0)}, {"C", Vec2d(300, 400)}},
                          {{"A", "B", 300.0, true}, {"B", "C", 400.0, true}, {"A", "C", 800.0, true}},
                          {"A", "B", "C"});
}

// Straight corridor of three PoIs 0 -- 1 -- 2 spaced `spacing` meters apart,
// split into two areas at the midpoint of the first segment.
inline NetworkSpec corridor_spec(double spacing = 200.0) {
  NetworkSpec spec;
  spec.nodes = {{"n0", Vec2d(0, 0)}, {"n1", Vec2d(spacing, 0)}, {"n2", Vec2d(2 * spacing, 0)}};
  spec.edges = {{"n0", "n1", std::nullopt, true}, {"n1", "n2", std::nullopt, true}};
  const double mid = spacing / 2;
  spec.areas = {{"L", {Vec2d(-100, -100), Vec2d(mid, -100), Vec2d(mid, 100), Vec2d(-100, 100)}, true},
                {"R", {Vec2d(mid, -100), Vec2d(2 * spacing + 100, -100), Vec2d(2 * spacing + 100, 100), Vec2d(mid, 100)}, false}};
  spec.pois = {{"00", Vec2d(0, 0), 10.0, 0.5, "L", "n0"},
               {"01", Vec2d(spacing, 0), 10.0, 0.3, "R", "n1"},
               {"02", Vec2d(2 * spacing, 0), 10.0, 0.2, "R", "n2"}};
  return spec;
}

}  // namespace flowtwin::testing
