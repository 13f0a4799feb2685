#include "flowtwin/reconstruct.hpp"

#include "flowtwin/csv.hpp"
#include "flowtwin/json_reader.hpp"
#include "flowtwin/parallel.hpp"
#include "flowtwin/rng.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>

namespace flowtwin {

std::size_t SpeedBins::bin(double speed) const {
  std::size_t v = 0;
  while (v < boundaries.size() && speed >= boundaries[v]) ++v;
  return v;
}

std::pair<double, double> SpeedBins::sampling_range(std::size_t v) const {
  const double lo = v == 0 ? std::min(min_speed, boundaries.empty() ? min_speed : boundaries.front())
                           : boundaries[v - 1];
  const double hi = v < boundaries.size() ? boundaries[v] : std::max(max_speed, lo);
  return {lo, hi};
}

bool SpeedBins::contains(std::size_t v, double speed) const {
  const double lo = v == 0 ? 0.0 : boundaries[v - 1];
  const double hi = v < boundaries.size() ? boundaries[v] : std::numeric_limits<double>::infinity();
  return speed >= lo && speed < hi;
}

long long OdTensor::total() const {
  long long s = 0;
  for (const auto& [cell, n] : counts) s += n;
  return s;
}

long long DemandScenario::total() const {
  long long s = 0;
  for (const auto& [cell, n] : counts) s += n;
  return s;
}

long long SpotCountSeries::slot_total(std::size_t slot) const {
  long long s = 0;
  for (const auto& [key, n] : counts) {
    if (key.second == slot) s += n;
  }
  return s;
}

OdTensor aggregate_od(std::span<const OdSample> samples, const Network& net, const SlotGrid& grid,
                      const SpeedBins& bins) {
  OdTensor x;
  for (const auto& s : samples) {
    if (s.origin >= net.area_count() || s.destination >= net.area_count() || !grid.in_range(s.depart_s) ||
        !(s.duration_min > 0.0) || !std::isfinite(s.duration_min)) {
      ++x.rejected;
      continue;
    }
    double dist = 0.0;
    try {
      dist = net.area_distance(s.origin, s.destination);
    } catch (const Error&) {
      ++x.rejected;
      continue;
    }
    const double speed = dist / (s.duration_min * 60.0);
    ++x.counts[{s.origin, s.destination, grid.slot_of(s.depart_s), bins.bin(speed)}];
  }
  return x;
}

PairCounts transition_counts(const OdTensor& x, std::size_t area_count) {
  const auto n = static_cast<Eigen::Index>(area_count);
  PairCounts c = PairCounts::Zero(n, n);
  for (const auto& [cell, count] : x.counts) {
    c(static_cast<Eigen::Index>(cell.origin), static_cast<Eigen::Index>(cell.destination)) += count;
  }
  return c;
}

EmResult<double> fit_prior_gmm(std::span<const Vec2d> samples, std::size_t k, std::uint64_t seed,
                               const EmOptions& em) {
  if (samples.empty()) throw Error(ErrorCode::DegenerateData, "pair has no samples");
  return fit_gmm<double>(samples, std::max<std::size_t>(1, std::min(k, samples.size())), seed, em);
}

DeparturePriors fit_priors(std::span<const OdSample> samples, std::size_t area_count, const PriorFitOptions& opt,
                           std::uint64_t seed, unsigned threads) {
  std::map<std::pair<std::size_t, std::size_t>, std::vector<Vec2d>> by_pair;
  for (const auto& s : samples) {
    if (s.origin >= area_count || s.destination >= area_count) continue;
    if (!(s.duration_min > 0.0) || s.depart_s < 0.0 || s.depart_s >= kSecondsPerDay) continue;
    by_pair[{s.origin, s.destination}].emplace_back(s.depart_s, s.duration_min);
  }
  std::vector<std::pair<std::size_t, std::size_t>> keys;
  for (const auto& [key, _] : by_pair) keys.push_back(key);
  std::vector<GaussianMixture2d> fitted(keys.size());
  parallel_for(keys.size(), threads, [&](std::size_t i) {
    const auto [m, n] = keys[i];
    const auto& z = by_pair.at(keys[i]);
    fitted[i] = fit_prior_gmm(z, opt.components, derive_seed(seed, "gmm", {m, n}), opt.em).mixture;
  });
  DeparturePriors priors;
  for (std::size_t i = 0; i < keys.size(); ++i) priors.emplace(keys[i], std::move(fitted[i]));
  return priors;
}

DemandScenario sample_demand(const DeparturePriors& priors, const PairCounts& c, const Network& net,
                             const SlotGrid& grid, const SpeedBins& bins, std::uint64_t seed, unsigned threads,
                             SamplingReport* report) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (Eigen::Index m = 0; m < c.rows(); ++m) {
    for (Eigen::Index n = 0; n < c.cols(); ++n) {
      if (c(m, n) > 0) pairs.emplace_back(static_cast<std::size_t>(m), static_cast<std::size_t>(n));
    }
  }
  for (const auto& [m, n] : pairs) {
    if (!priors.count({m, n})) {
      throw Error(ErrorCode::DegenerateData,
                  "no prior for pair " + net.areas()[m].id + " -> " + net.areas()[n].id);
    }
    net.area_distance(m, n);  // NoPath surfaces before any sampling
  }

  std::vector<CellCounts> local(pairs.size());
  std::vector<char> flagged(pairs.size(), 0);
  parallel_for(pairs.size(), threads, [&](std::size_t i) {
    const auto [m, n] = pairs[i];
    const auto& prior = priors.at({m, n});
    const double dist = net.area_distance(m, n);
    Rng rng(derive_seed(seed, "demand", {m, n}));
    const long long want = c(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    for (long long k = 0; k < want; ++k) {
      bool accepted = false;
      for (int attempt = 0; attempt <= kMaxResampleRetries; ++attempt) {
        const Vec2d z = prior.sample(rng);
        const double t_dep = z.x();
        const double d_trav = z.y();
        if (!(d_trav > 0.0) || !grid.in_range(t_dep)) continue;
        const double speed = dist / (d_trav * 60.0);
        ++local[i][{m, n, grid.slot_of(t_dep), bins.bin(speed)}];
        accepted = true;
        break;
      }
      if (!accepted) {
        flagged[i] = 1;
        break;
      }
    }
  });

  DemandScenario demand;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    for (const auto& [cell, n] : local[i]) demand.counts[cell] += n;
    if (flagged[i] && report) report->flagged_pairs.push_back(pairs[i]);
  }
  return demand;
}

ContributionMap contribution_map(const Network& net) {
  ContributionMap map;
  const auto& nodes = net.nodes();
  for (std::size_t a = 0; a < net.area_count(); ++a) {
    if (!net.areas()[a].observed) continue;
    auto& pairs = map[a];
    const auto& poly = net.areas()[a].polygon;
    for (std::size_t m = 0; m < net.area_count(); ++m) {
      for (std::size_t n = 0; n < net.area_count(); ++n) {
        const auto p = net.representative_poi(m);
        const auto q = net.representative_poi(n);
        if (!net.connected(p, q)) continue;
        const auto path = net.shortest_path_nodes(p, q);
        bool hit = false;
        if (path.size() == 1) {
          hit = geom::contains(poly, nodes[path.front()]);
        }
        for (std::size_t k = 0; !hit && k + 1 < path.size(); ++k) {
          hit = geom::segment_intersects_polygon(nodes[path[k]], nodes[path[k + 1]], poly);
        }
        if (hit) pairs.emplace_back(m, n);
      }
    }
  }
  return map;
}

long long contributing_total(const CellCounts& counts, const ContributionMap& contributions, std::size_t slot) {
  long long total = 0;
  for (const auto& [a, pairs] : contributions) {
    for (const auto& [m, n] : pairs) {
      auto it = counts.lower_bound({m, n, slot, 0});
      for (; it != counts.end() && it->first.origin == m && it->first.destination == n && it->first.slot == slot; ++it) {
        total += it->second;
      }
    }
  }
  return total;
}

CalibrationResult calibrate_scale(const DemandScenario& demand, const SpotCountSeries& counts,
                                  const ContributionMap& contributions) {
  CalibrationResult result;
  result.scenario.calibrated = true;
  std::map<std::size_t, std::pair<long long, long long>> scale;  // slot -> (numerator, denominator)
  std::vector<std::size_t> slots;
  for (const auto& [cell, n] : demand.counts) slots.push_back(cell.slot);
  for (const auto& [key, n] : counts.counts) slots.push_back(key.second);
  std::sort(slots.begin(), slots.end());
  slots.erase(std::unique(slots.begin(), slots.end()), slots.end());
  for (auto t : slots) {
    const long long observed = counts.slot_total(t);
    const long long denom = contributing_total(demand.counts, contributions, t);
    if (denom > 0) {
      scale[t] = {observed, denom};
      result.ratios[t] = static_cast<double>(observed) / static_cast<double>(denom);
    } else if (observed > 0) {
      result.zero_denominator_slots.push_back(t);
      result.flagged = true;
    }
  }
  for (const auto& [cell, d] : demand.counts) {
    auto it = scale.find(cell.slot);
    long long scaled = d;
    if (it != scale.end()) {
      const auto [num, den] = it->second;
      // floor for non-negative operands; __int128 guards the product
      scaled = static_cast<long long>((static_cast<__int128>(num) * d) / den);
    }
    if (scaled > 0) result.scenario.counts[cell] = scaled;
  }
  return result;
}

std::vector<DepartureEvent> instantiate_departures(const DemandScenario& demand, const SlotGrid& grid,
                                                   const SpeedBins& bins, std::uint64_t seed) {
  std::vector<DepartureEvent> events;
  events.reserve(static_cast<std::size_t>(demand.total()));
  Rng rng(derive_seed(seed, "departures"));
  for (const auto& [cell, count] : demand.counts) {
    const auto [lo, hi] = bins.sampling_range(cell.speed_bin);
    for (long long k = 0; k < count; ++k) {
      DepartureEvent e;
      e.origin = cell.origin;
      e.destination = cell.destination;
      e.depart_s = grid.slot_start(cell.slot) + rng.uniform() * grid.slot_seconds;
      e.walk_speed = rng.uniform(lo, hi);
      events.push_back(e);
    }
  }
  std::stable_sort(events.begin(), events.end(),
                   [](const DepartureEvent& a, const DepartureEvent& b) { return a.depart_s < b.depart_s; });
  return events;
}

// --- file formats ---------------------------------------------------------

namespace {

std::size_t area_from(const csv::Reader& r, std::size_t col, const Network& net) {
  try {
    return net.area_index(r.text(col));
  } catch (const Error&) {
    throw ValidationError(r.where(), "unknown area '" + r.text(col) + "'");
  }
}

}  // namespace

std::vector<OdSample> read_od_samples(std::istream& in, const Network& net, const std::string& source) {
  csv::Reader r(in, source, {"origin", "destination", "depart_s", "duration_min"});
  std::vector<OdSample> out;
  while (r.next()) {
    out.push_back({area_from(r, 0, net), area_from(r, 1, net), r.number(2), r.number(3)});
  }
  return out;
}

void write_od_samples(std::ostream& out, std::span<const OdSample> samples, const Network& net) {
  out << "origin,destination,depart_s,duration_min\n";
  for (const auto& s : samples) {
    out << net.areas()[s.origin].id << ',' << net.areas()[s.destination].id << ',' << csv::num(s.depart_s) << ','
        << csv::num(s.duration_min) << '\n';
  }
}

SpotCountSeries read_spot_counts(std::istream& in, const Network& net, const SlotGrid& grid,
                                 const std::string& source) {
  csv::Reader r(in, source, {"area_id", "slot_index", "count"});
  SpotCountSeries s;
  s.grid = grid;
  while (r.next()) {
    const auto a = area_from(r, 0, net);
    if (!net.areas()[a].observed) throw ValidationError(r.where(), "area '" + r.text(0) + "' has no counter");
    const long long slot = r.integer(1);
    const long long count = r.integer(2);
    if (slot < 0 || static_cast<std::size_t>(slot) >= grid.slot_count) throw ValidationError(r.where(), "slot out of range");
    if (count < 0) throw ValidationError(r.where(), "count must be >= 0");
    s.counts[{a, static_cast<std::size_t>(slot)}] += count;
  }
  return s;
}

void write_spot_counts(std::ostream& out, const SpotCountSeries& counts, const Network& net) {
  out << "area_id,slot_index,count\n";
  for (const auto& [key, n] : counts.counts) out << net.areas()[key.first].id << ',' << key.second << ',' << n << '\n';
}

void write_demand(std::ostream& out, const DemandScenario& demand, const Network& net) {
  out << "origin,destination,slot,v_bin,count\n";
  for (const auto& [cell, n] : demand.counts) {
    out << net.areas()[cell.origin].id << ',' << net.areas()[cell.destination].id << ',' << cell.slot << ','
        << cell.speed_bin << ',' << n << '\n';
  }
}

DemandScenario read_demand(std::istream& in, const Network& net, const std::string& source) {
  csv::Reader r(in, source, {"origin", "destination", "slot", "v_bin", "count"});
  DemandScenario d;
  while (r.next()) {
    const long long slot = r.integer(2), bin = r.integer(3), count = r.integer(4);
    if (slot < 0 || bin < 0 || count < 0) throw ValidationError(r.where(), "negative field");
    d.counts[{area_from(r, 0, net), area_from(r, 1, net), static_cast<std::size_t>(slot),
              static_cast<std::size_t>(bin)}] += count;
  }
  return d;
}

void write_departures(std::ostream& out, std::span<const DepartureEvent> events, const Network& net) {
  out << "origin,destination,depart_s,speed_mps\n";
  for (const auto& e : events) {
    out << net.areas()[e.origin].id << ',' << net.areas()[e.destination].id << ',' << csv::num(e.depart_s) << ','
        << csv::num(e.walk_speed) << '\n';
  }
}

std::vector<DepartureEvent> read_departures(std::istream& in, const Network& net, const std::string& source) {
  csv::Reader r(in, source, {"origin", "destination", "depart_s", "speed_mps"});
  std::vector<DepartureEvent> out;
  double last = -std::numeric_limits<double>::infinity();
  while (r.next()) {
    DepartureEvent e{area_from(r, 0, net), area_from(r, 1, net), r.number(2), r.number(3)};
    if (!(e.walk_speed > 0.0)) throw ValidationError(r.where(), "speed must be > 0");
    if (e.depart_s < last) throw ValidationError(r.where(), "departures must be sorted by time");
    last = e.depart_s;
    out.push_back(e);
  }
  return out;
}

nlohmann::json priors_to_json(const DeparturePriors& priors, const Network& net) {
  auto pairs = nlohmann::json::array();
  for (const auto& [key, g] : priors) {
    nlohmann::json means = nlohmann::json::array(), covs = nlohmann::json::array();
    for (std::size_t k = 0; k < g.size(); ++k) {
      means.push_back({g.means[k].x(), g.means[k].y()});
      const auto& c = g.covariances[k];
      covs.push_back({{c(0, 0), c(0, 1)}, {c(1, 0), c(1, 1)}});
    }
    pairs.push_back({{"origin", net.areas()[key.first].id},
                     {"destination", net.areas()[key.second].id},
                     {"K", g.size()},
                     {"weights", g.weights},
                     {"means", means},
                     {"covariances", covs}});
  }
  return {{"z", {"depart_s", "duration_min"}}, {"pairs", pairs}};
}

DeparturePriors priors_from_json(const nlohmann::json& j, const Network& net) {
  JsonReader r;
  DeparturePriors priors;
  r.object(j, "", {"z", "pairs"});
  const auto* pairs = r.array(j, "pairs", "");
  if (pairs) {
    for (std::size_t i = 0; i < pairs->size(); ++i) {
      const auto& p = (*pairs)[i];
      const std::string path = "/pairs/" + std::to_string(i);
      if (!r.object(p, path, {"origin", "destination", "K", "weights", "means", "covariances"})) continue;
      auto o = r.id(p, "origin", path);
      auto d = r.id(p, "destination", path);
      auto k = r.integer(p, "K", path);
      const auto* w = r.array(p, "weights", path);
      const auto* mu = r.array(p, "means", path);
      const auto* cov = r.array(p, "covariances", path);
      if (!o || !d || !k || !w || !mu || !cov) continue;
      const auto kk = static_cast<std::size_t>(*k);
      if (*k < 1 || w->size() != kk || mu->size() != kk || cov->size() != kk) {
        r.fail(path, "component arrays must have length K >= 1");
        continue;
      }
      GaussianMixture2d g;
      try {
        for (std::size_t c = 0; c < kk; ++c) {
          g.weights.push_back((*w)[c].get<double>());
          g.means.emplace_back((*mu)[c][0].get<double>(), (*mu)[c][1].get<double>());
          Mat2d m;
          m << (*cov)[c][0][0].get<double>(), (*cov)[c][0][1].get<double>(), (*cov)[c][1][0].get<double>(),
              (*cov)[c][1][1].get<double>();
          g.covariances.push_back(m);
        }
        const auto m_idx = net.area_index(*o);
        const auto n_idx = net.area_index(*d);
        priors[{m_idx, n_idx}] = std::move(g);
      } catch (const nlohmann::json::exception&) {
        r.fail(path, "malformed component parameters");
      } catch (const Error& e) {
        r.fail(path, e.what());
      }
    }
  }
  r.throw_if_errors();
  return priors;
}

}  // namespace flowtwin
