#pragma once

#include "flowtwin/choice.hpp"
#include "flowtwin/common.hpp"
#include "flowtwin/environment.hpp"
#include "flowtwin/reconstruct.hpp"
#include "flowtwin/rng.hpp"
#include "flowtwin/trajectory.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace flowtwin {

struct SocialForceParams {
  double mass = 0.25;            // inertial scale; repulsion acts as A / mass
  double relaxation = 0.5;       // s
  double agent_strength = 2.0;   // A_ped
  double agent_range = 0.3;      // B_ped, m
  double radius_sum = 0.4;       // r_i + r_j, m
  double obstacle_strength = 5.0;
  double obstacle_range = 0.2;
  double cutoff = 3.0;           // neighbour search radius, m

  double agent_radius() const { return radius_sum / 2.0; }
};

inline constexpr double kWaypointReach = 1.0;

struct AgentState {
  std::size_t id = 0;
  Vec2d position = Vec2d::Zero();
  Vec2d velocity = Vec2d::Zero();
  std::size_t target = 0;         // PoI heading to
  std::vector<Vec2d> route;       // remaining waypoints, ending at the target PoI
  std::size_t next_waypoint = 0;
  TravelMode mode = TravelMode::Walking;
  double speed_cap = 0.0;
  double walk_speed = 0.0;
  std::size_t current_poi = 0;    // PoI of the last decision epoch
  std::vector<bool> visited;
  double cumulative_distance = 0.0;
  std::optional<double> stamina;
  double spawn_time = 0.0;
};

struct Obstacle {
  Vec2d a, b;
};

struct World {
  std::vector<AgentState> agents;
  std::vector<Obstacle> obstacles;
  SocialForceParams params;
  double time = 0.0;
};

// Unit vector toward the next unreached waypoint; waypoints within 1 m are
// skipped. Zero once the route is used up.
Vec2d desired_direction(AgentState& agent);

// Total force on agent i (driving term plus repulsions) with neighbours
// taken from `neighbours`, which must be sorted.
Vec2d agent_force(const World& world, std::size_t i, const Vec2d& direction, std::span<const std::size_t> neighbours);

// One semi-implicit Euler step for every agent.
void step(World& world, double dt);

std::vector<Obstacle> obstacles_from(const Network& net);

// Destination selection at decision epochs.
class DestinationPolicy {
 public:
  virtual ~DestinationPolicy() = default;
  virtual Decision decide(const DecisionContext& agent, const EnvironmentView& env, double now, Rng& rng) const = 0;
  virtual const ExitPolicy& exit_policy() const = 0;
};

class ModelPolicy : public DestinationPolicy {
 public:
  explicit ModelPolicy(std::shared_ptr<const ChoiceModel> model) : ModelPolicy(model, model->mode) {}
  ModelPolicy(std::shared_ptr<const ChoiceModel> model, DecisionMode mode) : model_(std::move(model)), mode_(mode) {}

  Decision decide(const DecisionContext& agent, const EnvironmentView& env, double now, Rng& rng) const override;
  const ExitPolicy& exit_policy() const override { return model_->exit; }
  const ChoiceModel& model() const { return *model_; }

 private:
  std::shared_ptr<const ChoiceModel> model_;
  DecisionMode mode_;
};

// Walks each departure straight to a PoI of its destination area and exits.
// Used to replay the reconstructed OD demand before a choice model exists.
class OdReplayPolicy : public DestinationPolicy {
 public:
  Decision decide(const DecisionContext& agent, const EnvironmentView& env, double now, Rng& rng) const override;
  const ExitPolicy& exit_policy() const override { return exit_; }

 private:
  ExitPolicy exit_;
};

struct SimulationOptions {
  double dt = 0.05;
  double sample_interval = 1.0;
  double horizon = kSecondsPerDay;
  std::uint64_t seed = 0;
};

struct SimulationResult {
  std::vector<TrajectoryRecord> trajectories;  // ordered by agent id
  std::size_t faults = 0;
};

// Agent ids follow the order of `departures`, which must be sorted by time.
SimulationResult run_simulation(const EnvironmentView& env, std::span<const DepartureEvent> departures,
                                const DestinationPolicy& policy, const SocialForceParams& params,
                                const SimulationOptions& opt);

}  // namespace flowtwin
