#include "flowtwin/synth.hpp"

#include "flowtwin/parallel.hpp"
#include "flowtwin/rng.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace flowtwin::synth {

namespace {

constexpr double kGrid = 125.0;
constexpr int kCols = 9;  // 0 .. 1000 m
constexpr int kRows = 9;

std::string node_id(int i, int j) { return fmt::format("n{}_{}", i, j); }

struct PoiSeed {
  const char* id;
  const char* area;
  int i, j;  // grid node
};

constexpr PoiSeed kPois[] = {
    {"00", "A", 1, 1}, {"01", "A", 1, 3}, {"02", "D", 7, 2}, {"03", "G", 5, 6}, {"04", "F", 3, 6},
    {"05", "C", 5, 2}, {"06", "B", 3, 2}, {"07", "E", 1, 6}, {"08", "H", 7, 6},
};

}  // namespace

std::map<std::string, double> reference_area_shares() {
  return {{"A", 0.136}, {"B", 0.0962}, {"C", 0.0095}, {"D", 0.157},
          {"E", 0.0679}, {"F", 0.140}, {"G", 0.138}, {"H", 0.165}};
}

NetworkSpec reference_network() {
  NetworkSpec spec;
  for (int j = 0; j < kRows; ++j) {
    for (int i = 0; i < kCols; ++i) spec.nodes.push_back({node_id(i, j), Vec2d(i * kGrid, j * kGrid)});
  }
  for (int j = 0; j < kRows; ++j) {
    for (int i = 0; i < kCols; ++i) {
      if (i + 1 < kCols) spec.edges.push_back({node_id(i, j), node_id(i + 1, j), std::nullopt, true});
      if (j + 1 < kRows) spec.edges.push_back({node_id(i, j), node_id(i, j + 1), std::nullopt, true});
    }
  }
  const char* letters = "ABCDEFGH";
  const std::string observed = "ACDEGH";
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 4; ++c) {
      const std::string id(1, letters[r * 4 + c]);
      const double x0 = c * 250.0, y0 = r * 500.0;
      spec.areas.push_back({id,
                            {Vec2d(x0, y0), Vec2d(x0 + 250, y0), Vec2d(x0 + 250, y0 + 500), Vec2d(x0, y0 + 500)},
                            observed.find(id) != std::string::npos});
    }
  }
  const auto shares = reference_area_shares();
  double total = 0.0;
  for (const auto& [a, s] : shares) total += s;
  for (const auto& p : kPois) {
    const int in_area = static_cast<int>(std::count_if(std::begin(kPois), std::end(kPois),
                                                       [&](const PoiSeed& o) { return std::string(o.area) == p.area; }));
    spec.pois.push_back({p.id, Vec2d(p.i * kGrid, p.j * kGrid), std::nullopt,
                         shares.at(p.area) / in_area / total, p.area, node_id(p.i, p.j)});
  }
  spec.mobility_links = {{"00", "05", {}, std::nullopt}, {"05", "03", {}, std::nullopt}, {"01", "04", {}, std::nullopt}};
  return spec;
}

InterventionSpec reference_intervention() {
  InterventionSpec spec;
  spec.label = "mobility";
  spec.walk_speed_kmh = 5.0;
  spec.mobility_speed_kmh = 20.0;
  spec.links = {{"00", "05", {}, std::nullopt}, {"05", "03", {}, std::nullopt}, {"01", "04", {}, std::nullopt}};
  spec.attraction_overrides = {{"00", 0.0545}, {"01", 0.0545}, {"02", 0.151}, {"03", 0.153}, {"04", 0.152},
                               {"05", 0.0990}, {"06", 0.0978}, {"07", 0.0628}, {"08", 0.176}};
  return spec;
}

Observations synthesize_observations(const Network& net, const ObservationOptions& opt, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "synth"));
  const std::size_t n_areas = net.area_count();
  // entrances draw most arrivals
  std::vector<double> origin_w(n_areas, 0.05);
  const std::map<std::string, double> entrances{{"A", 0.35}, {"E", 0.2}, {"H", 0.2}, {"D", 0.1}};
  for (const auto& [id, w] : entrances) origin_w[net.area_index(id)] = w;
  const auto shares = reference_area_shares();

  auto pick = [&](const std::vector<double>& w) {
    double total = 0.0;
    for (double x : w) total += x;
    double u = rng.uniform() * total;
    for (std::size_t k = 0; k < w.size(); ++k) {
      if (u < w[k]) return k;
      u -= w[k];
    }
    return w.size() - 1;
  };

  Observations obs;
  obs.counts.grid = opt.grid;
  const double lo = 6.0 * 3600.0, hi = 20.0 * 3600.0;
  for (std::size_t k = 0; k < opt.trips; ++k) {
    const std::size_t m = pick(origin_w);
    std::vector<double> dest_w(n_areas);
    for (std::size_t a = 0; a < n_areas; ++a) dest_w[a] = a == m ? 0.0 : shares.at(net.areas()[a].id);
    const std::size_t n = pick(dest_w);
    double t;
    do {
      t = rng.uniform() < 0.6 ? 10.5 * 3600.0 + 5400.0 * rng.normal() : 14.5 * 3600.0 + 5400.0 * rng.normal();
    } while (t < lo || t >= hi);
    double speed;
    do {
      speed = 1.3 + 0.2 * rng.normal();
    } while (speed < 0.6 || speed >= 2.1);
    obs.trips.push_back({m, n, t, speed});
    if (rng.uniform() < opt.sample_rate) {
      const double minutes = net.area_distance(m, n) / speed / 60.0;
      obs.od.push_back({m, n, t, minutes});
    }
  }
  std::stable_sort(obs.trips.begin(), obs.trips.end(),
                   [](const DepartureEvent& a, const DepartureEvent& b) { return a.depart_s < b.depart_s; });

  const auto contrib = contribution_map(net);
  for (const auto& [area, pairs] : contrib) {
    for (const auto& trip : obs.trips) {
      if (std::find(pairs.begin(), pairs.end(), std::make_pair(trip.origin, trip.destination)) == pairs.end()) continue;
      ++obs.counts.counts[{area, opt.grid.slot_of(trip.depart_s)}];
    }
  }
  return obs;
}

ChoiceModel planted_model(const Network& net) {
  const std::size_t p = net.poi_count();
  ChoiceModel m;
  m.layout = FeatureLayout{p};
  for (const auto& poi : net.pois()) m.poi_ids.push_back(poi.id);
  m.exit.kind = ExitPolicyKind::ExitClass;
  m.mode = DecisionMode::Probabilistic;
  m.net = ChoiceNetd::zeros(m.layout.size(), {}, p + 1, HeadType::Softmax, 1);
  auto& w = m.net.out_w;
  auto& b = m.net.out_b;
  auto ix = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
  for (std::size_t q = 0; q < p; ++q) {
    w(ix(q), ix(m.layout.attraction() + q)) = 45.0;
    w(ix(q), ix(m.layout.travel_time() + q)) = -18.0;
    w(ix(q), ix(m.layout.visited() + q)) = -12.0;
    // mild candidate-specific time-of-day preference
    const double phase = 2.0 * std::numbers::pi * static_cast<double>(q) / static_cast<double>(p);
    w(ix(q), ix(m.layout.time())) = 1.8 * std::cos(phase);
    w(ix(q), ix(m.layout.time() + 1)) = 1.8 * std::sin(phase);
  }
  b[ix(p)] = -3.0;
  w(ix(p), ix(m.layout.distance())) = 36.0;
  m.training = {{"planted", true}};
  return m;
}

std::vector<InterventionSpec> history_scenarios(const Network& net, std::size_t days, std::size_t pilot_links,
                                                std::uint64_t seed) {
  const std::size_t p = net.poi_count();
  std::vector<InterventionSpec> out;
  for (std::size_t d = 0; d < days; ++d) {
    InterventionSpec spec;
    spec.label = fmt::format("day{:02}", d);
    if (d > 0) {
      Rng rng(derive_seed(seed, "history", {d}));
      const double w = rng.uniform();
      std::vector<double> g(p);
      double total = 0.0;
      for (auto& x : g) total += x = -std::log1p(-rng.uniform());
      for (std::size_t q = 0; q < p; ++q) {
        spec.attraction_overrides[net.pois()[q].id] = (1.0 - w) * net.pois()[q].attraction + w * g[q] / total;
      }
      std::vector<std::pair<std::size_t, std::size_t>> pairs;
      for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = i + 1; j < p; ++j) {
          if (!net.link_between(i, j)) pairs.emplace_back(i, j);
        }
      }
      for (std::size_t k = 0; k < pilot_links && !pairs.empty(); ++k) {
        const auto pick = rng.below(pairs.size());
        const auto [i, j] = pairs[pick];
        pairs.erase(pairs.begin() + static_cast<std::ptrdiff_t>(pick));
        spec.links.push_back({net.pois()[i].id, net.pois()[j].id, {}, std::nullopt});
      }
    }
    out.push_back(std::move(spec));
  }
  return out;
}

std::vector<DepartureEvent> reconstruct_departures(const Network& net, const Observations& obs, std::uint64_t seed,
                                                   DemandScenario* calibrated) {
  const SlotGrid& grid = obs.counts.grid;
  const SpeedBins bins;
  const auto tensor = aggregate_od(obs.od, net, grid, bins);
  const auto pairs = transition_counts(tensor, net.area_count());
  const auto priors = fit_priors(obs.od, net.area_count(), {}, derive_seed(seed, "priors"));
  const auto demand = sample_demand(priors, pairs, net, grid, bins, derive_seed(seed, "demand"));
  auto cal = calibrate_scale(demand, obs.counts, contribution_map(net));
  auto deps = instantiate_departures(cal.scenario, grid, bins, derive_seed(seed, "departures"));
  if (calibrated) *calibrated = std::move(cal.scenario);
  return deps;
}

namespace {

// Mean population over replicate runs of one scenario.
PopulationSeries replicate_mean(const DestinationPolicy& policy, const EnvironmentView& env,
                                std::span<const DepartureEvent> departures, const TwinOptions& opt,
                                const SlotGrid& grid) {
  std::vector<PopulationSeries> runs(opt.replicates);
  parallel_for(opt.replicates, opt.threads, [&](std::size_t r) {
    SimulationOptions so;
    so.seed = derive_seed(opt.seed, "replicate", {r});
    runs[r] = population_series(run_simulation(env, departures, policy, opt.social_force, so).trajectories,
                                env.network(), grid);
  });
  PopulationSeries mean = runs.front();
  for (std::size_t r = 1; r < runs.size(); ++r) mean.values += runs[r].values;
  mean.values /= static_cast<double>(runs.size());
  return mean;
}

}  // namespace

TwinTruth generate_truth(const TwinOptions& opt) {
  if (opt.replicates == 0 || opt.history_days == 0) throw ValidationError("twin", "needs at least one replicate and one history day");
  auto network = std::make_shared<const Network>(reference_network());
  TwinTruth truth{network, EnvironmentView::baseline(network), reference_intervention(), {}, {}, {}, {}};
  const Network& net = *truth.net;
  DemandScenario demand;
  const auto obs = synthesize_observations(net, opt.observations, opt.seed);
  truth.departures = reconstruct_departures(net, obs, opt.seed, &demand);

  const ModelPolicy planted(std::make_shared<const ChoiceModel>(planted_model(net)));
  const auto days = history_scenarios(net, opt.history_days, opt.pilot_links, opt.seed);
  truth.history.resize(days.size(), TwinDay{truth.base, {}});
  parallel_for(days.size(), opt.threads, [&](std::size_t d) {
    const auto deps = d == 0 ? truth.departures
                             : instantiate_departures(demand, opt.observations.grid, SpeedBins{},
                                                      derive_seed(opt.seed, "history-departures", {d}));
    SimulationOptions so;
    so.seed = derive_seed(opt.seed, "history-run", {d});
    auto run = run_counterfactual(planted, truth.base, days[d], deps, opt.social_force, so);
    truth.history[d] = {std::move(run.env), std::move(run.result.trajectories)};
  });

  const auto grid = opt.observations.grid;
  truth.base_population = replicate_mean(planted, truth.base, truth.departures, opt, grid);
  truth.intervention_population =
      replicate_mean(planted, apply_intervention(truth.base, truth.intervention), truth.departures, opt, grid);
  return truth;
}

TwinFit fit_and_replay(const TwinTruth& truth, ExitPolicyKind exit, const TwinOptions& opt) {
  ExitPolicy policy;
  if (exit == ExitPolicyKind::Stamina) {
    std::vector<double> totals;
    for (const auto& day : truth.history) {
      for (const auto& t : day.trajectories) totals.push_back(t.total_distance());
    }
    policy = fit_stamina(totals);
  }
  std::vector<DecisionRecord> data;
  for (const auto& day : truth.history) {
    auto more = build_training_set(day.trajectories, day.env, policy);
    data.insert(data.end(), more.begin(), more.end());
  }
  TrainingOptions training = opt.training;
  training.threads = opt.threads;
  TwinFit fit;
  fit.model = train(data, truth.net->poi_count(), policy, training, derive_seed(opt.seed, "train")).model;
  fit.model.mode = DecisionMode::Probabilistic;

  const ModelPolicy trained(std::make_shared<const ChoiceModel>(fit.model));
  const auto grid = opt.observations.grid;
  fit.base_population = replicate_mean(trained, truth.base, truth.departures, opt, grid);
  fit.intervention_population =
      replicate_mean(trained, apply_intervention(truth.base, truth.intervention), truth.departures, opt, grid);
  fit.mae = mae(fit.base_population, truth.base_population);
  fit.mae_intervention = mae(fit.intervention_population, truth.intervention_population);
  fit.cosine_population = cosine(fit.base_population.flatten(), truth.base_population.flatten());
  fit.cosine_population_intervention =
      cosine(fit.intervention_population.flatten(), truth.intervention_population.flatten());
  fit.cosine_change = change_cosine(fit.intervention_population.flatten(), fit.base_population.flatten(),
                                    truth.intervention_population.flatten(), truth.base_population.flatten());
  return fit;
}

}  // namespace flowtwin::synth
