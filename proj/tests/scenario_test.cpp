#include "flowtwin/scenario.hpp"
#include "flowtwin/synth.hpp"

#include "fixtures.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <memory>
#include <sstream>

namespace flowtwin {
namespace {

std::shared_ptr<const Network> reference() {
  static const auto net = std::make_shared<const Network>(synth::reference_network());
  return net;
}

std::shared_ptr<const Network> corridor(double spacing) {
  return std::make_shared<const Network>(testing::corridor_spec(spacing));
}

std::size_t poi(const Network& net, const char* id) { return net.poi_index(id); }

TEST(NormalizeAttractions, SplitsAreaShareEquallyAmongItsPois) {
  const auto net = reference();
  const VecXd t = normalize_attractions({{"A", 0.136}, {"B", 0.864}}, *net);
  EXPECT_NEAR(t[poi(*net, "00")], 0.0680, 1e-12);
  EXPECT_NEAR(t[poi(*net, "01")], 0.0680, 1e-12);
  EXPECT_NEAR(t[poi(*net, "06")], 0.864, 1e-12);
  EXPECT_EQ(t[poi(*net, "05")], 0.0);
}

TEST(NormalizeAttractions, SinglePoi) {
  NetworkSpec spec = testing::single_area_spec({{"a", Vec2d(0, 0)}}, {}, {"a"});
  spec.pois[0].attraction = 1.0;
  const Network net(spec);
  const VecXd t = normalize_attractions({{"Z", 1.0}}, net);
  ASSERT_EQ(t.size(), 1);
  EXPECT_EQ(t[0], 1.0);
}

TEST(NormalizeAttractions, RandomSharesSumToOne) {
  const auto net = reference();
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    std::map<std::string, double> shares;
    for (const auto& a : net->areas()) shares[a.id] = rng.uniform() * std::pow(10.0, rng.uniform(-3, 3));
    EXPECT_NEAR(normalize_attractions(shares, *net).sum(), 1.0, 1e-9);
  }
}

TEST(NormalizeAttractions, Errors) {
  const auto net = reference();
  try {
    normalize_attractions({{"A", 0.0}, {"B", 0.0}}, *net);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::AllZero);
  }
  EXPECT_THROW(normalize_attractions({{"A", -0.1}, {"B", 1.0}}, *net), Error);
  EXPECT_THROW(normalize_attractions({{"nope", 1.0}}, *net), Error);
}

TEST(ApplyIntervention, EmptySpecGivesEqualView) {
  const auto base = EnvironmentView::baseline(reference());
  const auto view = apply_intervention(base, InterventionSpec{});
  EXPECT_TRUE(view == base);
  EXPECT_TRUE(view.links().empty());
}

TEST(ApplyIntervention, ReferenceOverridesReproduceRow05) {
  const auto net = reference();
  const auto base = EnvironmentView::baseline(net);
  const auto view = apply_intervention(base, synth::reference_intervention());
  const auto p05 = static_cast<Eigen::Index>(poi(*net, "05"));
  EXPECT_NEAR(view.attractions()[p05], 0.0990, 5e-4);
  // without mobility: raw share 0.0095 of a table summing to 0.9096
  EXPECT_NEAR(base.attractions()[p05], 0.0095 / 0.9096, 1e-12);
  EXPECT_GT(view.attractions()[p05], 9.0 * base.attractions()[p05]);
  // the biggest relative gain is at 05
  Eigen::Index best = 0;
  (view.attractions().array() / base.attractions().array()).maxCoeff(&best);
  EXPECT_EQ(best, p05);
  EXPECT_NEAR(view.attractions().sum(), 1.0, 1e-9);
}

TEST(ApplyIntervention, LinkTravelTimeAtServiceSpeed) {
  const auto net = corridor(600.0);
  const auto base = EnvironmentView::baseline(net);
  EXPECT_NEAR(base.travel_time(0, 1), 432.0, 1e-9);

  InterventionSpec spec;
  spec.mobility_speed_kmh = 20.0;
  spec.links.push_back({"00", "01", {}, std::nullopt});
  const auto view = apply_intervention(base, spec);
  EXPECT_NEAR(view.travel_time(0, 1), 108.0, 1e-9);
  EXPECT_NEAR(view.travel_time(1, 0), 108.0, 1e-9);
  EXPECT_NEAR(view.travel_time(0, 2), 864.0, 1e-9);  // not covered: walking
  EXPECT_NEAR(view.travel_time(1, 2), 432.0, 1e-9);
  ASSERT_EQ(view.links().size(), 1u);
  EXPECT_EQ(view.links()[0].path, (std::vector<std::size_t>{0, 1}));
}

TEST(ApplyIntervention, PerLinkSpeedAndWalkSpeed) {
  const auto base = EnvironmentView::baseline(corridor(600.0));
  InterventionSpec spec;
  spec.walk_speed_kmh = 4.0;
  spec.links.push_back({"01", "02", {}, 12.0});
  const auto view = apply_intervention(base, spec);
  EXPECT_NEAR(view.travel_time(1, 2), 180.0, 1e-9);
  EXPECT_NEAR(view.travel_time(0, 1), 540.0, 1e-9);
  EXPECT_NEAR(view.walk_speed(), kmh_to_mps(4.0), 1e-15);
  // unset speeds keep the base's values
  EXPECT_EQ(apply_intervention(base, InterventionSpec{}).walk_speed(), base.walk_speed());
}

TEST(ApplyIntervention, CatalogueLinkPathOrientedFromSpec) {
  const auto net = reference();
  const auto base = EnvironmentView::baseline(net);
  InterventionSpec spec;
  spec.links.push_back({"05", "00", {}, std::nullopt});  // catalogue lists 00 -> 05
  const auto view = apply_intervention(base, spec);
  ASSERT_EQ(view.links().size(), 1u);
  const auto& link = view.links()[0];
  EXPECT_EQ(link.from, poi(*net, "05"));
  EXPECT_EQ(link.path.front(), net->pois()[poi(*net, "05")].anchor);
  EXPECT_EQ(link.path.back(), net->pois()[poi(*net, "00")].anchor);
}

TEST(ApplyIntervention, RepeatedLinkReplacesEarlierOne) {
  const auto base = EnvironmentView::baseline(corridor(600.0));
  InterventionSpec first;
  first.links.push_back({"00", "01", {}, 20.0});
  const auto v1 = apply_intervention(base, first);
  InterventionSpec second;
  second.links.push_back({"01", "00", {}, 10.0});
  second.links.push_back({"01", "02", {}, std::nullopt});
  const auto v2 = apply_intervention(v1, second);
  EXPECT_EQ(v2.links().size(), 2u);
  EXPECT_NEAR(v2.travel_time(0, 1), 216.0, 1e-9);
}

TEST(ApplyIntervention, BaseViewUntouched) {
  const auto base = EnvironmentView::baseline(reference());
  const EnvironmentView copy = base;
  const auto view = apply_intervention(base, synth::reference_intervention());
  EXPECT_FALSE(view == base);
  EXPECT_TRUE(base == copy);
  EXPECT_EQ(base.speeds(), copy.speeds());
  EXPECT_EQ(base.travel_times(), copy.travel_times());
  EXPECT_EQ(base.attractions(), copy.attractions());
  EXPECT_TRUE(base.links().empty());
}

TEST(ApplyIntervention, TravelTimeTimesSpeedIsDistance) {
  const auto net = reference();
  const auto base = EnvironmentView::baseline(net);
  const auto view = apply_intervention(base, synth::reference_intervention());
  for (const auto* v : {&base, &view}) {
    for (std::size_t p = 0; p < net->poi_count(); ++p) {
      for (std::size_t q = 0; q < net->poi_count(); ++q) {
        const double dist = net->shortest_path_distance(p, q);
        EXPECT_NEAR(v->travel_time(p, q) * v->speed(p, q), dist, 1e-9 * std::max(1.0, dist));
      }
    }
  }
  EXPECT_TRUE(view.mobility_covered(poi(*net, "03"), poi(*net, "05")));
  EXPECT_FALSE(view.mobility_covered(poi(*net, "00"), poi(*net, "03")));  // no multi-hop chains
}

TEST(ApplyIntervention, RandomOverridesRenormalize) {
  const auto net = reference();
  const auto base = EnvironmentView::baseline(net);
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    InterventionSpec spec;
    for (const auto& p : net->pois()) {
      if (rng.uniform() < 0.5) spec.attraction_overrides[p.id] = rng.uniform() * 3.0;
    }
    if (spec.attraction_overrides.empty()) continue;
    const auto view = apply_intervention(base, spec);
    EXPECT_NEAR(view.attractions().sum(), 1.0, 1e-9);
    EXPECT_GE(view.attractions().minCoeff(), 0.0);
  }
}

TEST(ApplyIntervention, UnknownIdsAndBadPaths) {
  const auto net = reference();
  const auto base = EnvironmentView::baseline(net);

  InterventionSpec unknown;
  unknown.links.push_back({"00", "99", {}, std::nullopt});
  try {
    apply_intervention(base, unknown);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownId);
  }
  InterventionSpec override_unknown;
  override_unknown.attraction_overrides["zz"] = 1.0;
  EXPECT_THROW(apply_intervention(base, override_unknown), Error);

  InterventionSpec broken;
  broken.links.push_back({"00", "05", {"n1_1", "n3_2", "n5_2"}, std::nullopt});
  try {
    apply_intervention(base, broken);
    FAIL();
  } catch (const ValidationError& e) {
    ASSERT_EQ(e.errors().size(), 1u);
    EXPECT_EQ(e.errors()[0].path, "/mobility_links/0/path/1");
  }
  InterventionSpec wrong_ends;
  wrong_ends.links.push_back({"00", "05", {"n1_1", "n2_1"}, std::nullopt});
  const auto errors = intervention_errors(wrong_ends, *net);
  ASSERT_EQ(errors.size(), 1u);
  EXPECT_EQ(errors[0].path, "/mobility_links/0/path");

  InterventionSpec explicit_path;
  explicit_path.links.push_back({"00", "05", {"n1_1", "n1_2", "n2_2", "n3_2", "n4_2", "n5_2"}, std::nullopt});
  EXPECT_TRUE(intervention_errors(explicit_path, *net).empty());
  EXPECT_EQ(apply_intervention(base, explicit_path).links()[0].path.size(), 6u);
}

TEST(InterventionJson, RoundTrip) {
  const auto spec = synth::reference_intervention();
  const auto j = to_json(spec);
  const auto back = intervention_from_json(j);
  EXPECT_EQ(to_json(back), j);
  EXPECT_EQ(back.links.size(), 3u);
  EXPECT_EQ(back.attraction_overrides.at("05"), 0.0990);
}

TEST(InterventionJson, ValidationPaths) {
  const auto bad = nlohmann::json::parse(R"({
    "label": "x", "walk_speed_kmh": -1, "extra": 1,
    "mobility_links": [{"from": "00", "to": "00"}, {"from": "01", "speed_kmh": 0}],
    "attraction_overrides": {"05": -0.5, "06": "high"}
  })");
  try {
    intervention_from_json(bad);
    FAIL();
  } catch (const ValidationError& e) {
    std::vector<std::string> paths;
    for (const auto& err : e.errors()) paths.push_back(err.path);
    for (const char* expected : {"/extra", "/walk_speed_kmh", "/mobility_links/0/to", "/mobility_links/1/to",
                                 "/mobility_links/1/speed_kmh", "/attraction_overrides/05",
                                 "/attraction_overrides/06"}) {
      EXPECT_NE(std::find(paths.begin(), paths.end(), expected), paths.end()) << expected;
    }
  }
  EXPECT_THROW(intervention_from_json(nlohmann::json::array()), ValidationError);
  EXPECT_THROW(intervention_from_json(nlohmann::json::parse(R"({"seed": -3})")), ValidationError);
  EXPECT_NO_THROW(intervention_from_json(nlohmann::json::object()));
}

class CounterfactualTest : public ::testing::Test {
 protected:
  void SetUp() override {
    synth::ObservationOptions oo;
    oo.trips = 40;
    departures = synth::synthesize_observations(*reference(), oo, 3).trips;
  }
  std::shared_ptr<const ChoiceModel> planted =
      std::make_shared<const ChoiceModel>(synth::planted_model(*reference()));
  std::vector<DepartureEvent> departures;
};

std::string events_text(const SimulationResult& r, const Network& net) {
  std::ostringstream out;
  write_trajectory_events(out, r.trajectories, net);
  write_trajectory_samples(out, r.trajectories, net);
  return out.str();
}

TEST_F(CounterfactualTest, EmptySpecIsBitIdenticalToBaseline) {
  const auto base = EnvironmentView::baseline(reference());
  const ModelPolicy policy(planted);
  SimulationOptions opt;
  opt.seed = 21;
  const auto plain = run_simulation(base, departures, policy, {}, opt);
  const auto cf = run_counterfactual(policy, base, InterventionSpec{}, departures, {}, opt);
  EXPECT_EQ(events_text(plain, *reference()), events_text(cf.result, *reference()));
}

TEST_F(CounterfactualTest, SpawnScheduleSharedAcrossSpecs) {
  const auto base = EnvironmentView::baseline(reference());
  const ModelPolicy policy(planted);
  SimulationOptions opt;
  opt.seed = 8;
  const auto a = run_counterfactual(policy, base, InterventionSpec{}, departures, {}, opt);
  const auto b = run_counterfactual(policy, base, synth::reference_intervention(), departures, {}, opt);
  ASSERT_EQ(a.result.trajectories.size(), b.result.trajectories.size());
  auto schedule = [](const SimulationResult& r) {
    std::vector<std::pair<std::size_t, double>> s;
    for (const auto& t : r.trajectories) s.emplace_back(t.origin, t.spawn_time);
    std::sort(s.begin(), s.end());
    return s;
  };
  EXPECT_EQ(schedule(a.result), schedule(b.result));
  for (std::size_t k = 0; k < departures.size(); ++k) {
    const double lag = a.result.trajectories[k].spawn_time - departures[k].depart_s;  // spawns land on the step grid
    EXPECT_GE(lag, -1e-9);
    EXPECT_LT(lag, 0.05);
    EXPECT_EQ(a.result.trajectories[k].spawn_poi, b.result.trajectories[k].spawn_poi);
  }
  EXPECT_EQ(b.scenario, "mobility");
}

TEST_F(CounterfactualTest, ReferenceScenarioRunsAndRides) {
  const auto base = EnvironmentView::baseline(reference());
  const ModelPolicy policy(planted);
  SimulationOptions opt;
  opt.seed = 2;
  const auto run = run_counterfactual(policy, base, synth::reference_intervention(), departures, {}, opt);
  EXPECT_EQ(run.result.faults, 0u);
  std::size_t riding = 0;
  for (const auto& t : run.result.trajectories) {
    EXPECT_TRUE(t.exit.has_value());
    for (const auto& s : t.samples) riding += s.mode == TravelMode::Riding ? 1 : 0;
  }
  EXPECT_GT(riding, 0u);
}

}  // namespace
}  // namespace flowtwin
