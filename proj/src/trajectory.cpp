#include "flowtwin/trajectory.hpp"

#include "flowtwin/csv.hpp"

#include <fmt/format.h>

#include <map>
#include <ostream>

namespace flowtwin {

const char* to_string(TravelMode m) { return m == TravelMode::Walking ? "walking" : "riding"; }

const char* to_string(ExitReason r) {
  switch (r) {
    case ExitReason::Choice: return "choice";
    case ExitReason::Stamina: return "stamina";
    case ExitReason::Fault: return "fault";
    case ExitReason::EndOfDay: return "end_of_day";
  }
  return "?";
}

TravelMode travel_mode_from_string(std::string_view s) {
  if (s == "walking") return TravelMode::Walking;
  if (s == "riding") return TravelMode::Riding;
  throw Error(ErrorCode::Validation, fmt::format("unknown travel mode '{}'", s));
}

ExitReason exit_reason_from_string(std::string_view s) {
  for (auto r : {ExitReason::Choice, ExitReason::Stamina, ExitReason::Fault, ExitReason::EndOfDay}) {
    if (s == to_string(r)) return r;
  }
  throw Error(ErrorCode::Validation, fmt::format("unknown exit reason '{}'", s));
}

double TrajectoryRecord::total_distance() const {
  if (exit) return exit->distance;
  return visits.empty() ? 0.0 : visits.back().distance;
}

void write_trajectory_samples(std::ostream& out, const std::vector<TrajectoryRecord>& trajectories,
                              const Network& net) {
  for (const auto& tr : trajectories) {
    for (const auto& s : tr.samples) {
      const std::string area = s.area ? fmt::format("\"{}\"", net.areas()[*s.area].id) : "null";
      out << fmt::format("{{\"t\":{},\"id\":{},\"x\":{},\"y\":{},\"area\":{},\"mode\":\"{}\"}}\n", s.time, tr.id,
                         s.position.x(), s.position.y(), area, to_string(s.mode));
    }
  }
}

void write_trajectory_events(std::ostream& out, const std::vector<TrajectoryRecord>& trajectories,
                             const Network& net) {
  out << "id,time,event,poi,distance_m,reason\n";
  const auto& pois = net.pois();
  for (const auto& tr : trajectories) {
    out << fmt::format("{},{},spawn,{},0,\n", tr.id, tr.spawn_time, pois[tr.spawn_poi].id);
    for (const auto& v : tr.visits) {
      out << fmt::format("{},{},visit,{},{},\n", tr.id, v.time, pois[v.poi].id, v.distance);
    }
    if (tr.exit) {
      out << fmt::format("{},{},exit,,{},{}\n", tr.id, tr.exit->time, tr.exit->distance, to_string(tr.exit->reason));
    }
  }
}

std::vector<TrajectoryRecord> read_trajectory_events(std::istream& in, const Network& net,
                                                     const std::string& source) {
  csv::Reader r(in, source, {"id", "time", "event", "poi", "distance_m", "reason"});
  std::vector<TrajectoryRecord> out;
  std::map<long long, std::size_t> by_id;
  auto poi = [&](const std::string& id) {
    const auto p = net.find_poi(id);
    if (!p) throw ValidationError(r.where(), fmt::format("unknown PoI '{}'", id));
    return *p;
  };
  while (r.next()) {
    const long long id = r.integer(0);
    const double t = r.number(1);
    const std::string& event = r.text(2);
    if (event == "spawn") {
      if (by_id.count(id)) throw ValidationError(r.where(), "duplicate spawn");
      by_id[id] = out.size();
      TrajectoryRecord tr;
      tr.id = static_cast<std::size_t>(id);
      tr.spawn_time = t;
      tr.spawn_poi = poi(r.text(3));
      tr.origin = tr.destination = net.pois()[tr.spawn_poi].area;
      out.push_back(std::move(tr));
      continue;
    }
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw ValidationError(r.where(), "event before spawn");
    auto& tr = out[it->second];
    if (tr.exit) throw ValidationError(r.where(), "event after exit");
    const double last = tr.visits.empty() ? tr.spawn_time : tr.visits.back().time;
    if (t < last) throw ValidationError(r.where(), "events out of time order");
    if (event == "visit") {
      tr.visits.push_back({t, poi(r.text(3)), r.number(4), Vec2d::Zero()});
    } else if (event == "exit") {
      try {
        tr.exit = ExitEvent{t, exit_reason_from_string(r.text(5)), r.number(4)};
      } catch (const Error& e) {
        throw ValidationError(r.where(), e.what());
      }
    } else {
      throw ValidationError(r.where(), fmt::format("unknown event '{}'", event));
    }
  }
  return out;
}

}  // namespace flowtwin
