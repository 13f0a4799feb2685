#pragma once

#include "flowtwin/common.hpp"
#include "flowtwin/netmodel.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace flowtwin {

enum class TravelMode { Walking, Riding };

enum class ExitReason {
  Choice,     // model picked the exit class (or the replay policy ended the trip)
  Stamina,    // distance budget exhausted
  Fault,      // no route to the chosen PoI
  EndOfDay,   // still alive at the horizon
};

const char* to_string(TravelMode m);
const char* to_string(ExitReason r);
TravelMode travel_mode_from_string(std::string_view s);
ExitReason exit_reason_from_string(std::string_view s);

struct TrajectorySample {
  double time = 0.0;
  Vec2d position = Vec2d::Zero();
  std::optional<std::size_t> area;
  TravelMode mode = TravelMode::Walking;
};

struct VisitEvent {
  double time = 0.0;
  std::size_t poi = 0;
  double distance = 0.0;  // cumulative distance at the visit
  Vec2d position = Vec2d::Zero();  // not persisted
};

struct ExitEvent {
  double time = 0.0;
  ExitReason reason = ExitReason::Choice;
  double distance = 0.0;
};

struct TrajectoryRecord {
  std::size_t id = 0;
  std::size_t origin = 0;  // area indices
  std::size_t destination = 0;
  double spawn_time = 0.0;
  std::size_t spawn_poi = 0;
  std::vector<TrajectorySample> samples;
  std::vector<VisitEvent> visits;
  std::optional<ExitEvent> exit;

  // Distance walked or ridden over the whole trajectory.
  double total_distance() const;
};

// JSON lines {t,id,x,y,area,mode}, ordered by agent then time.
void write_trajectory_samples(std::ostream& out, const std::vector<TrajectoryRecord>& trajectories,
                              const Network& net);
// CSV id,time,event,poi,distance_m,reason with spawn, visit and exit rows.
void write_trajectory_events(std::ostream& out, const std::vector<TrajectoryRecord>& trajectories,
                             const Network& net);
// Rebuilds records from an events file (samples are left empty).
std::vector<TrajectoryRecord> read_trajectory_events(std::istream& in, const Network& net, const std::string& source);

}  // namespace flowtwin
