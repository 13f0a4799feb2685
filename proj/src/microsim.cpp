#include "flowtwin/microsim.hpp"

#include "flowtwin/geometry.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace flowtwin {

namespace {

std::int64_t cell_key(const Vec2d& x, double size) {
  const auto cx = static_cast<std::int64_t>(std::floor(x.x() / size));
  const auto cy = static_cast<std::int64_t>(std::floor(x.y() / size));
  return (cx << 32) ^ (cy & 0xffffffffLL);
}

Vec2d clip(const Vec2d& u, double cap) {
  const double n = u.norm();
  return n > cap ? Vec2d(u * (cap / n)) : u;
}

}  // namespace

Vec2d desired_direction(AgentState& agent) {
  while (agent.next_waypoint < agent.route.size()) {
    const Vec2d d = agent.route[agent.next_waypoint] - agent.position;
    const double n = d.norm();
    if (n > kWaypointReach) return d / n;
    ++agent.next_waypoint;
  }
  return Vec2d::Zero();
}

Vec2d agent_force(const World& world, std::size_t i, const Vec2d& direction, std::span<const std::size_t> neighbours) {
  const auto& p = world.params;
  const auto& a = world.agents[i];
  Vec2d f = p.mass * (a.speed_cap * direction - a.velocity) / p.relaxation;
  for (std::size_t j : neighbours) {
    const Vec2d d = a.position - world.agents[j].position;
    const double dist = d.norm();
    // coincident agents are pushed apart along x, in index order
    const Vec2d n = dist > 0.0 ? Vec2d(d / dist) : Vec2d(i < j ? -1.0 : 1.0, 0.0);
    f += p.agent_strength * std::exp((p.radius_sum - dist) / p.agent_range) * n;
  }
  for (const auto& o : world.obstacles) {
    const Vec2d c = geom::closest_point_on_segment(a.position, o.a, o.b);
    const Vec2d d = a.position - c;
    const double dist = d.norm();
    if (dist >= p.cutoff || dist == 0.0) continue;
    f += p.obstacle_strength * std::exp((p.agent_radius() - dist) / p.obstacle_range) * (d / dist);
  }
  return f;
}

void step(World& world, double dt) {
  auto& agents = world.agents;
  const double cutoff = world.params.cutoff;
  std::vector<std::pair<std::int64_t, std::size_t>> grid(agents.size());
  for (std::size_t i = 0; i < agents.size(); ++i) grid[i] = {cell_key(agents[i].position, cutoff), i};
  std::sort(grid.begin(), grid.end());

  std::vector<Vec2d> forces(agents.size());
  std::vector<std::size_t> nb;
  for (std::size_t i = 0; i < agents.size(); ++i) {
    const Vec2d e = desired_direction(agents[i]);
    nb.clear();
    const Vec2d& x = agents[i].position;
    for (int dx = -1; dx <= 1; ++dx) {
      for (int dy = -1; dy <= 1; ++dy) {
        const std::int64_t key = cell_key(x + Vec2d(dx * cutoff, dy * cutoff), cutoff);
        auto it = std::lower_bound(grid.begin(), grid.end(), std::make_pair(key, std::size_t{0}));
        for (; it != grid.end() && it->first == key; ++it) {
          const std::size_t j = it->second;
          if (j != i && (agents[j].position - x).norm() < cutoff) nb.push_back(j);
        }
      }
    }
    std::sort(nb.begin(), nb.end());
    forces[i] = agent_force(world, i, e, nb);
  }
  for (std::size_t i = 0; i < agents.size(); ++i) {
    auto& a = agents[i];
    a.velocity = clip(a.velocity + dt * forces[i] / world.params.mass, a.speed_cap);
    const Vec2d dx = dt * a.velocity;
    a.position += dx;
    a.cumulative_distance += dx.norm();
  }
  world.time += dt;
}

std::vector<Obstacle> obstacles_from(const Network& net) {
  std::vector<Obstacle> out;
  for (const auto& line : net.obstacles()) {
    for (std::size_t k = 0; k + 1 < line.size(); ++k) out.push_back({line[k], line[k + 1]});
  }
  return out;
}

Decision ModelPolicy::decide(const DecisionContext& agent, const EnvironmentView& env, double now, Rng& rng) const {
  return decide_next(*model_, encode_features(agent, env, now), agent.current_poi, mode_, rng);
}

Decision OdReplayPolicy::decide(const DecisionContext& agent, const EnvironmentView& env, double, Rng& rng) const {
  if (!agent.at_spawn) return {true, 0};
  std::vector<std::size_t> options;
  for (std::size_t q : env.network().areas()[agent.destination_area].pois) {
    if (q != agent.current_poi) options.push_back(q);
  }
  if (options.empty()) return {true, 0};
  return {false, options[rng.below(options.size())]};
}

namespace {

class Simulator {
 public:
  Simulator(const EnvironmentView& env, const DestinationPolicy& policy, const SocialForceParams& params,
            const SimulationOptions& opt)
      : env_(env), net_(env.network()), policy_(policy), opt_(opt) {
    world_.params = params;
    world_.obstacles = obstacles_from(net_);
  }

  SimulationResult run(std::span<const DepartureEvent> departures);

 private:
  struct Slot {
    Rng rng;
    std::size_t record;
    bool alive = true;
  };

  void spawn(std::size_t id, const DepartureEvent& dep, double now);
  void decision_epoch(std::size_t i, double now, bool at_spawn);
  void finish(std::size_t i, double now, ExitReason reason);
  void sample(double t);

  const EnvironmentView& env_;
  const Network& net_;
  const DestinationPolicy& policy_;
  SimulationOptions opt_;
  World world_;
  std::vector<Slot> slots_;  // parallel to world_.agents
  SimulationResult result_;
};

void Simulator::spawn(std::size_t id, const DepartureEvent& dep, double now) {
  Rng rng(derive_seed(opt_.seed, "agent", {id}));
  const auto& pois = net_.areas()[dep.origin].pois;
  const std::size_t p = pois[rng.below(pois.size())];

  AgentState a;
  a.id = id;
  a.position = net_.pois()[p].position;
  a.walk_speed = dep.walk_speed;
  a.speed_cap = dep.walk_speed;
  a.current_poi = p;
  a.target = p;
  a.visited.assign(net_.poi_count(), false);
  a.spawn_time = now;
  if (!policy_.exit_policy().exit_class()) a.stamina = draw_stamina(policy_.exit_policy(), rng);

  TrajectoryRecord tr;
  tr.id = id;
  tr.origin = dep.origin;
  tr.destination = dep.destination;
  tr.spawn_time = now;
  tr.spawn_poi = p;
  tr.samples.push_back({now, a.position, net_.area_at(a.position), TravelMode::Walking});
  result_.trajectories.push_back(std::move(tr));

  world_.agents.push_back(std::move(a));
  slots_.push_back({std::move(rng), result_.trajectories.size() - 1});
  decision_epoch(world_.agents.size() - 1, now, true);
}

void Simulator::decision_epoch(std::size_t i, double now, bool at_spawn) {
  auto& a = world_.agents[i];
  auto& slot = slots_[i];
  const auto& tr = result_.trajectories[slot.record];
  DecisionContext ctx;
  ctx.current_poi = a.current_poi;
  ctx.visited = a.visited;
  ctx.cumulative_distance = a.cumulative_distance;
  ctx.origin_area = tr.origin;
  ctx.destination_area = tr.destination;
  ctx.at_spawn = at_spawn;
  const Decision d = policy_.decide(ctx, env_, now, slot.rng);
  a.visited[a.current_poi] = true;
  if (d.exit || d.poi == a.current_poi) {
    finish(i, now, ExitReason::Choice);
    return;
  }

  const std::size_t p = a.current_poi, q = d.poi;
  std::vector<std::size_t> nodes;
  if (const MobilityLink* link = env_.link_between(p, q)) {
    nodes = link->path;
    if (link->from != p) std::reverse(nodes.begin(), nodes.end());
    a.mode = TravelMode::Riding;
    a.speed_cap = link->speed;
  } else {
    if (!net_.connected(p, q)) {
      ++result_.faults;
      finish(i, now, ExitReason::Fault);
      return;
    }
    nodes = net_.shortest_path_nodes(p, q);
    a.mode = TravelMode::Walking;
    a.speed_cap = a.walk_speed;
  }
  a.target = q;
  a.route.clear();
  for (std::size_t k = 1; k < nodes.size(); ++k) a.route.push_back(net_.nodes()[nodes[k]]);
  a.route.push_back(net_.pois()[q].position);
  a.next_waypoint = 0;
  a.velocity = clip(a.velocity, a.speed_cap);
}

void Simulator::finish(std::size_t i, double now, ExitReason reason) {
  auto& slot = slots_[i];
  slot.alive = false;
  result_.trajectories[slot.record].exit = ExitEvent{now, reason, world_.agents[i].cumulative_distance};
}

void Simulator::sample(double t) {
  for (std::size_t i = 0; i < world_.agents.size(); ++i) {
    if (!slots_[i].alive) continue;
    const auto& a = world_.agents[i];
    auto& samples = result_.trajectories[slots_[i].record].samples;
    if (!samples.empty() && samples.back().time == t) continue;
    samples.push_back({t, a.position, net_.area_at(a.position), a.mode});
  }
}

SimulationResult Simulator::run(std::span<const DepartureEvent> departures) {
  const double dt = opt_.dt;
  if (!(dt > 0.0)) throw Error(ErrorCode::Validation, "dt must be > 0");
  const auto per_sample = static_cast<std::int64_t>(std::llround(opt_.sample_interval / dt));
  if (per_sample < 1 || std::abs(static_cast<double>(per_sample) * dt - opt_.sample_interval) > 1e-9) {
    throw Error(ErrorCode::Validation, "sample interval must be a whole number of steps");
  }
  for (std::size_t k = 1; k < departures.size(); ++k) {
    if (departures[k].depart_s < departures[k - 1].depart_s) {
      throw Error(ErrorCode::Validation, "departures must be sorted by time");
    }
  }
  const auto last_step = static_cast<std::int64_t>(std::llround(opt_.horizon / dt));
  auto step_of = [&](double t) { return static_cast<std::int64_t>(std::ceil(t / dt - 1e-9)); };
  // sample instants are exact multiples of the sample interval
  auto time_of = [&](std::int64_t s) {
    return s % per_sample == 0 ? static_cast<double>(s / per_sample) * opt_.sample_interval
                               : static_cast<double>(s) * dt;
  };

  std::size_t next = 0;
  std::int64_t k = 0;
  while (k <= last_step) {
    if (world_.agents.empty()) {
      if (next == departures.size()) break;
      k = std::max(k, step_of(departures[next].depart_s));
      if (k > last_step) break;
    } else {
      const double now = time_of(k);
      std::vector<double> before(world_.agents.size());
      for (std::size_t i = 0; i < before.size(); ++i) before[i] = world_.agents[i].cumulative_distance;
      step(world_, dt);
      for (std::size_t i = 0; i < world_.agents.size(); ++i) {
        auto& a = world_.agents[i];
        if (a.stamina) {
          const auto u = apply_stamina(policy_.exit_policy(), *a.stamina, a.cumulative_distance - before[i]);
          a.stamina = u.stamina;
          if (u.exit) {
            finish(i, now, ExitReason::Stamina);
            continue;
          }
        }
        const auto& target = net_.pois()[a.target];
        if ((a.position - target.position).norm() <= target.vicinity_radius) {
          result_.trajectories[slots_[i].record].visits.push_back({now, a.target, a.cumulative_distance, a.position});
          a.current_poi = a.target;
          a.mode = TravelMode::Walking;
          a.speed_cap = a.walk_speed;
          decision_epoch(i, now, false);
        } else if (a.next_waypoint >= a.route.size()) {
          // route used up without entering the vicinity: decide again from here
          a.current_poi = a.target;
          a.mode = TravelMode::Walking;
          a.speed_cap = a.walk_speed;
          decision_epoch(i, now, false);
        }
      }
    }
    const double now = time_of(k);
    while (next < departures.size() && step_of(departures[next].depart_s) <= k) {
      spawn(next, departures[next], now);
      ++next;
    }
    if (k % per_sample == 0) sample(now);
    if (k == last_step) {
      for (std::size_t i = 0; i < world_.agents.size(); ++i) {
        if (slots_[i].alive) finish(i, opt_.horizon, ExitReason::EndOfDay);
      }
    }
    // drop agents that left during this step, keeping spawn order
    std::size_t w = 0;
    for (std::size_t i = 0; i < world_.agents.size(); ++i) {
      if (!slots_[i].alive) continue;
      if (w != i) {
        world_.agents[w] = std::move(world_.agents[i]);
        slots_[w] = std::move(slots_[i]);
      }
      ++w;
    }
    world_.agents.resize(w);
    slots_.resize(w, Slot{Rng(0), 0});
    ++k;
  }
  return std::move(result_);
}

}  // namespace

SimulationResult run_simulation(const EnvironmentView& env, std::span<const DepartureEvent> departures,
                                const DestinationPolicy& policy, const SocialForceParams& params,
                                const SimulationOptions& opt) {
  Simulator sim(env, policy, params, opt);
  return sim.run(departures);
}

}  // namespace flowtwin
