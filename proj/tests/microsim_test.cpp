#include "flowtwin/microsim.hpp"

#include "fixtures.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <memory>
#include <sstream>

namespace flowtwin {
namespace {

// Visits a fixed PoI list in order, then exits.
class ScriptPolicy : public DestinationPolicy {
 public:
  explicit ScriptPolicy(std::vector<std::size_t> plan) : plan_(std::move(plan)) {}
  Decision decide(const DecisionContext& agent, const EnvironmentView&, double, Rng&) const override {
    std::size_t seen = 0;
    for (bool v : agent.visited) seen += v ? 1 : 0;
    if (seen >= plan_.size()) return {true, 0};
    return {false, plan_[seen]};
  }
  const ExitPolicy& exit_policy() const override { return exit_; }
  ExitPolicy exit_;

 private:
  std::vector<std::size_t> plan_;
};

AgentState walker(Vec2d at, std::vector<Vec2d> route, double cap = 1.389) {
  AgentState a;
  a.position = at;
  a.route = std::move(route);
  a.speed_cap = cap;
  a.walk_speed = cap;
  return a;
}

TEST(DesiredDirection, Examples) {
  auto a = walker(Vec2d(0, 0), {Vec2d(3, 4)});
  const Vec2d e = desired_direction(a);
  EXPECT_DOUBLE_EQ(e.x(), 0.6);
  EXPECT_DOUBLE_EQ(e.y(), 0.8);

  auto b = walker(Vec2d(3, 4), {Vec2d(3, 4), Vec2d(3, 14)});
  const Vec2d f = desired_direction(b);
  EXPECT_EQ(b.next_waypoint, 1u);
  EXPECT_DOUBLE_EQ(f.y(), 1.0);

  auto c = walker(Vec2d(3, 4.5), {Vec2d(3, 4)});
  EXPECT_EQ(desired_direction(c), Vec2d::Zero());
  auto d = walker(Vec2d(0, 0), {});
  EXPECT_EQ(desired_direction(d), Vec2d::Zero());
}

TEST(Step, LoneAgentDrivingTerm) {
  World w;
  w.agents.push_back(walker(Vec2d(0, 0), {Vec2d(100, 0)}));
  step(w, 0.05);
  EXPECT_NEAR(w.agents[0].velocity.x(), 0.1389, 1e-12);
  EXPECT_EQ(w.agents[0].velocity.y(), 0.0);
  EXPECT_NEAR(w.agents[0].position.x(), 0.05 * 0.1389, 1e-12);
  EXPECT_NEAR(w.agents[0].cumulative_distance, 0.05 * 0.1389, 1e-12);
}

TEST(Step, RelaxesToDesiredSpeed) {
  World w;
  const double cap = 1.389;
  w.agents.push_back(walker(Vec2d(0, 0), {Vec2d(1000, 0)}, cap));
  const double tau = w.params.relaxation, dt = 0.05;
  const int steps = static_cast<int>(std::lround(5 * tau / dt));
  for (int k = 0; k < steps; ++k) step(w, dt);
  const double speed = w.agents[0].velocity.norm();
  EXPECT_GE(speed, 0.99 * cap);
  const double closed_form = cap * (1.0 - std::exp(-5.0));
  EXPECT_NEAR(speed, closed_form, 0.02 * closed_form);
}

double head_on_min_distance(double lateral) {
  World w;
  w.obstacles = {{Vec2d(-50, -1), Vec2d(50, -1)}, {Vec2d(-50, 1), Vec2d(50, 1)}};
  w.agents.push_back(walker(Vec2d(-10, lateral), {Vec2d(20, lateral)}));
  w.agents.push_back(walker(Vec2d(10, -lateral), {Vec2d(-20, -lateral)}));
  double min_d = 1e9;
  for (int k = 0; k < 800; ++k) {
    step(w, 0.05);
    min_d = std::min(min_d, (w.agents[0].position - w.agents[1].position).norm());
  }
  EXPECT_GT(w.agents[0].position.x(), 10.0);  // they got past each other
  return min_d;
}

TEST(Step, HeadOnAgentsKeepApart) {
  Rng rng(2024);
  for (int trial = 0; trial < 5; ++trial) EXPECT_GT(head_on_min_distance(rng.uniform(0.01, 0.1)), 0.3);
}

TEST(Step, SpeedCapAndNoTeleport) {
  Rng rng(3);
  World w;
  for (int i = 0; i < 40; ++i) {
    const Vec2d a(rng.uniform(-10, 10), rng.uniform(-10, 10)), b(rng.uniform(-10, 10), rng.uniform(-10, 10));
    w.agents.push_back(walker(a, {b, a}, rng.uniform(0.5, 5.6)));
  }
  for (int k = 0; k < 400; ++k) {
    std::vector<Vec2d> before;
    for (const auto& a : w.agents) before.push_back(a.position);
    std::vector<double> dist_before;
    for (const auto& a : w.agents) dist_before.push_back(a.cumulative_distance);
    step(w, 0.05);
    for (std::size_t i = 0; i < w.agents.size(); ++i) {
      const auto& a = w.agents[i];
      ASSERT_LE(a.velocity.norm(), a.speed_cap + 1e-6);
      ASSERT_LE((a.position - before[i]).norm(), a.speed_cap * 0.05 + 1e-6);
      ASSERT_GE(a.cumulative_distance, dist_before[i]);
    }
  }
}

std::shared_ptr<const Network> corridor_net() {
  return std::make_shared<const Network>(testing::corridor_spec(200.0));
}

TEST(RunSimulation, NoDepartures) {
  const auto env = EnvironmentView::baseline(corridor_net());
  ScriptPolicy policy({});
  const auto res = run_simulation(env, {}, policy, {}, {});
  EXPECT_TRUE(res.trajectories.empty());
}

TEST(RunSimulation, ImmediateExit) {
  const auto env = EnvironmentView::baseline(corridor_net());
  ScriptPolicy policy({});
  const std::vector<DepartureEvent> deps{{0, 1, 1000.0, 1.2}};
  const auto res = run_simulation(env, deps, policy, {}, {});
  ASSERT_EQ(res.trajectories.size(), 1u);
  const auto& tr = res.trajectories[0];
  ASSERT_EQ(tr.samples.size(), 1u);
  EXPECT_EQ(tr.samples[0].time, 1000.0);
  EXPECT_EQ(tr.samples[0].position, Vec2d(0, 0));
  EXPECT_TRUE(tr.visits.empty());
  ASSERT_TRUE(tr.exit);
  EXPECT_EQ(tr.exit->reason, ExitReason::Choice);
  EXPECT_EQ(tr.exit->time, 1000.0);
}

TEST(RunSimulation, WalksScriptedTour) {
  const auto env = EnvironmentView::baseline(corridor_net());
  ScriptPolicy policy({2, 1});
  const std::vector<DepartureEvent> deps{{0, 1, 10.0, 1.25}};
  const auto res = run_simulation(env, deps, policy, {}, {});
  const auto& tr = res.trajectories[0];
  ASSERT_EQ(tr.visits.size(), 2u);
  EXPECT_EQ(tr.visits[0].poi, 2u);
  EXPECT_EQ(tr.visits[1].poi, 1u);
  // 400 m less the 10 m vicinity at 1.25 m/s, plus a short acceleration lag
  EXPECT_NEAR(tr.visits[0].time - 10.0, 390.0 / 1.25, 3.0);
  EXPECT_NEAR(tr.visits[0].distance, 390.0, 1.0);
  EXPECT_EQ(tr.exit->reason, ExitReason::Choice);
  for (const auto& s : tr.samples) EXPECT_EQ(s.mode, TravelMode::Walking);
}

TEST(RunSimulation, RidesCoveredLegs) {
  auto net = corridor_net();
  const auto base = EnvironmentView::baseline(net);
  MobilityLink link;
  link.from = 2;
  link.to = 0;
  link.path = net->shortest_path_nodes(2, 0);
  link.speed = kmh_to_mps(20.0);
  const EnvironmentView env(net, base.attractions(), {link}, base.walk_speed(), link.speed);
  ScriptPolicy policy({2, 1});
  const std::vector<DepartureEvent> deps{{0, 1, 0.0, 1.25}};
  const auto tr = run_simulation(env, deps, policy, {}, {}).trajectories[0];
  ASSERT_EQ(tr.visits.size(), 2u);
  EXPECT_NEAR(tr.visits[0].time, 390.0 / link.speed, 3.0);
  bool rode = false;
  for (const auto& s : tr.samples) {
    if (s.time == 0.0) continue;  // spawn sample precedes the first decision
    if (s.time < tr.visits[0].time) EXPECT_EQ(s.mode, TravelMode::Riding);
    if (s.time > tr.visits[0].time) EXPECT_EQ(s.mode, TravelMode::Walking);
    rode |= s.mode == TravelMode::Riding;
  }
  EXPECT_TRUE(rode);
}

TEST(RunSimulation, StaminaExhaustion) {
  const auto env = EnvironmentView::baseline(corridor_net());
  ScriptPolicy policy({2, 0, 2, 0, 2, 0, 2});
  policy.exit_.kind = ExitPolicyKind::Stamina;
  policy.exit_.log_mean = std::log(1000.0);
  policy.exit_.log_sd = 1e-9;
  const std::vector<DepartureEvent> deps{{0, 1, 0.0, 1.3}};
  const auto tr = run_simulation(env, deps, policy, {}, {}).trajectories[0];
  ASSERT_TRUE(tr.exit);
  EXPECT_EQ(tr.exit->reason, ExitReason::Stamina);
  EXPECT_NEAR(tr.exit->distance, 1000.0, 0.1);
  EXPECT_EQ(tr.visits.size(), 2u);
}

TEST(RunSimulation, EndOfDay) {
  const auto env = EnvironmentView::baseline(corridor_net());
  ScriptPolicy policy({2, 0});
  SimulationOptions opt;
  opt.horizon = 100.0;
  const std::vector<DepartureEvent> deps{{0, 1, 0.0, 1.3}};
  const auto tr = run_simulation(env, deps, policy, {}, opt).trajectories[0];
  EXPECT_EQ(tr.exit->reason, ExitReason::EndOfDay);
  EXPECT_EQ(tr.exit->time, 100.0);
  EXPECT_EQ(tr.samples.back().time, 100.0);
  EXPECT_EQ(tr.samples.size(), 101u);
}

TEST(RunSimulation, UnreachableTargetIsAFault) {
  auto spec = testing::corridor_spec(200.0);
  spec.nodes.push_back({"island", Vec2d(400, 50)});
  spec.pois.push_back({"03", Vec2d(400, 50), 5.0, 0.0, "R", "island"});
  spec.pois[2].attraction = 0.2;
  const auto env = EnvironmentView::baseline(std::make_shared<const Network>(spec));
  ScriptPolicy policy({3});
  const std::vector<DepartureEvent> deps{{0, 1, 0.0, 1.3}};
  const auto res = run_simulation(env, deps, policy, {}, {});
  EXPECT_EQ(res.faults, 1u);
  EXPECT_EQ(res.trajectories[0].exit->reason, ExitReason::Fault);
}

std::vector<DepartureEvent> random_departures(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<DepartureEvent> d;
  for (std::size_t i = 0; i < n; ++i) {
    d.push_back({rng.below(2), rng.below(2), rng.uniform(0.0, 3000.0), rng.uniform(0.6, 2.0)});
  }
  std::stable_sort(d.begin(), d.end(), [](const auto& a, const auto& b) { return a.depart_s < b.depart_s; });
  return d;
}

ChoiceModel random_model(std::size_t pois, std::uint64_t seed) {
  ChoiceModel m;
  m.layout = FeatureLayout{pois};
  m.net = ChoiceNetd::zeros(m.layout.size(), {8}, pois + 1, HeadType::Softmax, 1);
  Rng rng(seed);
  VecXd theta = m.net.flatten();
  for (Eigen::Index i = 0; i < theta.size(); ++i) theta[i] = rng.normal();
  m.net.unflatten(theta);
  m.net.out_b[static_cast<Eigen::Index>(pois)] = -1.0;  // exit a bit less likely
  m.mode = DecisionMode::Probabilistic;
  return m;
}

TEST(RunSimulation, InvariantsOnRandomRuns) {
  auto net = corridor_net();
  const auto env = EnvironmentView::baseline(net);
  const auto model = std::make_shared<const ChoiceModel>(random_model(3, 5));
  ModelPolicy policy(model);
  SimulationOptions opt;
  opt.seed = 17;
  opt.horizon = 6000.0;
  const auto deps = random_departures(60, 8);
  const auto res = run_simulation(env, deps, policy, {}, opt);
  ASSERT_EQ(res.trajectories.size(), deps.size());
  std::size_t visits = 0;
  for (const auto& tr : res.trajectories) {
    for (std::size_t k = 1; k < tr.samples.size(); ++k) {
      const auto &a = tr.samples[k - 1], &b = tr.samples[k];
      ASSERT_LT(a.time, b.time);
      ASSERT_LE((b.position - a.position).norm(), 2.0 * (b.time - a.time) + 1e-6);
    }
    double last = 0.0;
    for (const auto& v : tr.visits) {
      const auto& poi = net->pois()[v.poi];
      EXPECT_LE((v.position - poi.position).norm(), poi.vicinity_radius);
      EXPECT_GE(v.distance, last);
      last = v.distance;
    }
    ASSERT_TRUE(tr.exit);
    EXPECT_GE(tr.exit->distance, last);
    visits += tr.visits.size();
  }
  EXPECT_GT(visits, 10u);
}

std::string run_to_text(std::uint64_t seed) {
  auto net = corridor_net();
  const auto env = EnvironmentView::baseline(net);
  ModelPolicy policy(std::make_shared<const ChoiceModel>(random_model(3, 5)));
  SimulationOptions opt;
  opt.seed = seed;
  opt.horizon = 4000.0;
  const auto deps = random_departures(30, 9);
  const auto res = run_simulation(env, deps, policy, {}, opt);
  std::ostringstream out;
  write_trajectory_samples(out, res.trajectories, *net);
  write_trajectory_events(out, res.trajectories, *net);
  return out.str();
}

TEST(RunSimulation, SameSeedSameBytes) {
  const auto a = run_to_text(7), b = run_to_text(7);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, run_to_text(8));
}

TEST(TrajectoryFiles, EventsRoundTrip) {
  auto net = corridor_net();
  const auto env = EnvironmentView::baseline(net);
  ModelPolicy policy(std::make_shared<const ChoiceModel>(random_model(3, 5)));
  SimulationOptions opt;
  opt.seed = 3;
  opt.horizon = 3000.0;
  const auto deps = random_departures(20, 2);
  const auto res = run_simulation(env, deps, policy, {}, opt);
  std::stringstream ss;
  write_trajectory_events(ss, res.trajectories, *net);
  const auto back = read_trajectory_events(ss, *net, "mem");
  ASSERT_EQ(back.size(), res.trajectories.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].spawn_poi, res.trajectories[i].spawn_poi);
    ASSERT_EQ(back[i].visits.size(), res.trajectories[i].visits.size());
    for (std::size_t k = 0; k < back[i].visits.size(); ++k) {
      EXPECT_EQ(back[i].visits[k].time, res.trajectories[i].visits[k].time);
      EXPECT_EQ(back[i].visits[k].distance, res.trajectories[i].visits[k].distance);
    }
    EXPECT_EQ(back[i].exit->reason, res.trajectories[i].exit->reason);
  }
  const auto a = build_training_set(res.trajectories, env, ExitPolicy{});
  const auto b = build_training_set(back, env, ExitPolicy{});
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].features, b[i].features);
}

}  // namespace
}  // namespace flowtwin
