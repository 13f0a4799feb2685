#pragma once

#include "flowtwin/environment.hpp"
#include "flowtwin/microsim.hpp"

#include <json.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace flowtwin {

struct InterventionLink {
  std::string from, to;            // PoI ids
  std::vector<std::string> path;   // node ids; empty means catalogue or walking route
  std::optional<double> speed_kmh;
};

// A mobility-introduction scenario. Unset speeds keep the base view's values.
struct InterventionSpec {
  std::string label;
  std::optional<std::uint64_t> seed;
  std::optional<double> walk_speed_kmh;
  std::optional<double> mobility_speed_kmh;
  std::vector<InterventionLink> links;
  std::map<std::string, double> attraction_overrides;  // PoI id -> raw score

  bool empty() const { return links.empty() && attraction_overrides.empty() && !walk_speed_kmh && !mobility_speed_kmh; }
};

// Schema check only; ids are resolved by apply_intervention.
InterventionSpec intervention_from_json(const nlohmann::json& j);
nlohmann::json to_json(const InterventionSpec& spec);

// Problems resolving the spec against a network (unknown PoIs, bad paths).
std::vector<FieldError> intervention_errors(const InterventionSpec& spec, const Network& net);

// Area shares split equally among each area's PoIs, then normalized to sum 1.
VecXd normalize_attractions(const std::map<std::string, double>& area_shares, const Network& net);

// New view: links in service at their speeds, d~ recomputed, overrides
// substituted and the table renormalized. The base view is not touched.
EnvironmentView apply_intervention(const EnvironmentView& base, const InterventionSpec& spec);

struct CounterfactualRun {
  std::string scenario;
  EnvironmentView env;
  SimulationResult result;
};

CounterfactualRun run_counterfactual(const DestinationPolicy& policy, const EnvironmentView& base,
                                     const InterventionSpec& spec, std::span<const DepartureEvent> departures,
                                     const SocialForceParams& params, const SimulationOptions& opt);

}  // namespace flowtwin
