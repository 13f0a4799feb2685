#include "flowtwin/synth.hpp"

#include <gtest/gtest.h>

#include <set>

namespace flowtwin {
namespace {

TEST(ReferenceNetwork, Layout) {
  const Network net(synth::reference_network());
  EXPECT_TRUE(net.invariant_violations().empty());
  ASSERT_EQ(net.area_count(), 8u);
  ASSERT_EQ(net.poi_count(), 9u);
  const std::map<std::string, std::string> area_of{{"00", "A"}, {"01", "A"}, {"02", "D"}, {"03", "G"}, {"04", "F"},
                                                   {"05", "C"}, {"06", "B"}, {"07", "E"}, {"08", "H"}};
  double total = 0.0;
  for (const auto& p : net.pois()) {
    EXPECT_EQ(net.areas()[*net.area_at(p.position)].id, area_of.at(p.id)) << p.id;
    total += p.attraction;
  }
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_EQ(net.pois()[net.poi_index("00")].attraction, net.pois()[net.poi_index("01")].attraction);
  EXPECT_EQ(net.mobility_links().size(), 3u);
  // 00 -> 05 along the grid: 500 m east, 125 m north
  EXPECT_NEAR(net.shortest_path_distance(net.poi_index("00"), net.poi_index("05")), 625.0, 1e-9);
}

TEST(ReferenceIntervention, ValidAgainstNetwork) {
  const Network net(synth::reference_network());
  const auto spec = synth::reference_intervention();
  EXPECT_TRUE(intervention_errors(spec, net).empty());
  EXPECT_EQ(spec.attraction_overrides.size(), 9u);
  EXPECT_EQ(*spec.mobility_speed_kmh, 20.0);
  EXPECT_EQ(*spec.walk_speed_kmh, 5.0);
}

TEST(Observations, SampledSubsetAndCounterTotals) {
  const Network net(synth::reference_network());
  synth::ObservationOptions opt;
  const auto obs = synth::synthesize_observations(net, opt, 5);
  EXPECT_EQ(obs.trips.size(), 500u);
  EXPECT_GT(obs.od.size(), 100u);
  EXPECT_LT(obs.od.size(), 200u);
  for (std::size_t k = 1; k < obs.trips.size(); ++k) EXPECT_LE(obs.trips[k - 1].depart_s, obs.trips[k].depart_s);
  for (const auto& t : obs.trips) {
    EXPECT_NE(t.origin, t.destination);
    EXPECT_GE(t.depart_s, 6 * 3600.0);
    EXPECT_LT(t.depart_s, 20 * 3600.0);
  }
  for (const auto& s : obs.od) {  // implied walking speed stays in the drawn range
    const double speed = net.area_distance(s.origin, s.destination) / (s.duration_min * 60.0);
    EXPECT_GE(speed, 0.6 - 1e-9);
    EXPECT_LT(speed, 2.1);
  }
  // every counter total is a count of trips whose pair contributes to it
  const auto contrib = contribution_map(net);
  long long total = 0;
  for (const auto& [key, n] : obs.counts.counts) {
    EXPECT_TRUE(contrib.count(key.first));
    EXPECT_GT(n, 0);
    total += n;
  }
  EXPECT_GE(total, static_cast<long long>(obs.trips.size()));

  const auto again = synth::synthesize_observations(net, opt, 5);
  EXPECT_EQ(again.od.size(), obs.od.size());
  EXPECT_EQ(again.counts.counts, obs.counts.counts);
}

TEST(Reconstruction, RecoversTripVolume) {
  const Network net(synth::reference_network());
  const auto obs = synth::synthesize_observations(net, {}, 7);
  const auto deps = synth::reconstruct_departures(net, obs, 7);
  EXPECT_GT(deps.size(), 350u);
  EXPECT_LT(deps.size(), 650u);
  EXPECT_EQ(deps.size(), synth::reconstruct_departures(net, obs, 7).size());
}

TEST(PlantedModel, Structure) {
  const Network net(synth::reference_network());
  const auto m = synth::planted_model(net);
  EXPECT_EQ(m.exit.kind, ExitPolicyKind::ExitClass);
  EXPECT_EQ(m.mode, DecisionMode::Probabilistic);
  EXPECT_TRUE(m.net.hidden_w.empty());
  EXPECT_EQ(m.net.candidates, 10u);
  EXPECT_EQ(m.net.input_size(), m.layout.size());
  // round-trips through the model file format
  EXPECT_EQ(to_json(choice_model_from_json(to_json(m))), to_json(m));
}

TEST(PlantedModel, PrefersAttractiveNearbyUnvisited) {
  const auto net = std::make_shared<const Network>(synth::reference_network());
  const auto env = EnvironmentView::baseline(net);
  const auto m = synth::planted_model(*net);
  DecisionContext ctx;
  ctx.current_poi = net->poi_index("06");
  ctx.visited.assign(9, false);
  const VecXd fresh = decision_probabilities(m, encode_features(ctx, env, 36000.0), ctx.current_poi);
  ctx.visited[net->poi_index("05")] = true;
  const VecXd seen = decision_probabilities(m, encode_features(ctx, env, 36000.0), ctx.current_poi);
  EXPECT_LT(seen[net->poi_index("05")], fresh[net->poi_index("05")]);
  EXPECT_EQ(fresh[ctx.current_poi], 0.0);
  ctx.cumulative_distance = 4000.0;
  const VecXd tired = decision_probabilities(m, encode_features(ctx, env, 36000.0), ctx.current_poi);
  EXPECT_GT(tired[9], seen[9]);
  EXPECT_GT(tired[9], 0.9);
}

TEST(History, DaysVaryAttractionAndPilotLinks) {
  const Network net(synth::reference_network());
  const auto days = synth::history_scenarios(net, 6, 4, 3);
  ASSERT_EQ(days.size(), 6u);
  EXPECT_TRUE(days[0].empty());
  std::set<std::string> labels;
  for (std::size_t d = 1; d < days.size(); ++d) {
    labels.insert(days[d].label);
    EXPECT_EQ(days[d].links.size(), 4u);
    EXPECT_EQ(days[d].attraction_overrides.size(), 9u);
    EXPECT_TRUE(intervention_errors(days[d], net).empty());
    std::set<std::pair<std::size_t, std::size_t>> pairs;
    for (const auto& l : days[d].links) {
      const auto p = net.poi_index(l.from), q = net.poi_index(l.to);
      EXPECT_FALSE(net.link_between(p, q).has_value()) << "catalogue pair used as pilot";
      pairs.insert(std::minmax(p, q));
    }
    EXPECT_EQ(pairs.size(), 4u);
    double total = 0.0;
    for (const auto& [id, v] : days[d].attraction_overrides) total += v;
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
  EXPECT_EQ(labels.size(), 5u);
  EXPECT_EQ(to_json(synth::history_scenarios(net, 6, 4, 3)[3]), to_json(days[3]));
}

}  // namespace
}  // namespace flowtwin
