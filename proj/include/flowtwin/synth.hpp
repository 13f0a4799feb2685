#pragma once

#include "flowtwin/choice.hpp"
#include "flowtwin/environment.hpp"
#include "flowtwin/eval.hpp"
#include "flowtwin/microsim.hpp"
#include "flowtwin/netmodel.hpp"
#include "flowtwin/reconstruct.hpp"
#include "flowtwin/scenario.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace flowtwin::synth {

// Eight 250 x 500 m areas (A-D bottom row, E-H top row) over a 125 m walking
// grid, nine PoIs, and three candidate mobility links.
NetworkSpec reference_network();

// Per-area visit shares before mobility is introduced (not normalized).
std::map<std::string, double> reference_area_shares();

// Links 00-05, 05-03 and 01-04 plus the with-mobility raw attraction scores.
InterventionSpec reference_intervention();

struct Observations {
  std::vector<DepartureEvent> trips;  // the full (unobserved) trip list
  std::vector<OdSample> od;           // sampled subset, as location data would see it
  SpotCountSeries counts;             // counter totals over the full trip list
};

struct ObservationOptions {
  std::size_t trips = 500;
  double sample_rate = 0.3;
  SlotGrid grid;
};

Observations synthesize_observations(const Network& net, const ObservationOptions& opt, std::uint64_t seed);

// Linear (no hidden layer) exit-class model with hand-set weights: prefers
// attractive, nearby, unvisited PoIs and leaves as walked distance grows.
// Sampled, not argmaxed.
ChoiceModel planted_model(const Network& net);

// Observed days used as training history. Day 0 is the plain baseline; the
// others blend the base attraction table with a random one and run pilot
// links on PoI pairs outside the network's link catalogue.
std::vector<InterventionSpec> history_scenarios(const Network& net, std::size_t days, std::size_t pilot_links,
                                                std::uint64_t seed);

// fit-prior -> sample -> calibrate -> instantiate, with default options.
std::vector<DepartureEvent> reconstruct_departures(const Network& net, const Observations& obs, std::uint64_t seed,
                                                   DemandScenario* calibrated = nullptr);

struct TwinOptions {
  std::uint64_t seed = 7;
  ObservationOptions observations;
  std::size_t history_days = 24;
  std::size_t pilot_links = 4;
  std::size_t replicates = 8;  // runs averaged per population series
  TrainingOptions training;
  SocialForceParams social_force;
  unsigned threads = 1;
};

struct TwinDay {
  EnvironmentView env;
  std::vector<TrajectoryRecord> trajectories;
};

struct TwinTruth {
  std::shared_ptr<const Network> net;
  EnvironmentView base;
  InterventionSpec intervention;
  std::vector<DepartureEvent> departures;
  std::vector<TwinDay> history;
  PopulationSeries base_population;  // replicate means
  PopulationSeries intervention_population;
};

// Planted-model world: departures from the reconstruction chain, history
// days for training, and replicate-mean populations with and without the
// reference intervention.
TwinTruth generate_truth(const TwinOptions& opt);

struct TwinFit {
  ChoiceModel model;
  PopulationSeries base_population;
  PopulationSeries intervention_population;
  MaeReport mae;  // baseline, against truth
  MaeReport mae_intervention;
  double cosine_population = 0.0;
  double cosine_population_intervention = 0.0;
  double cosine_change = 0.0;
};

// Rebuilds the training set from the history, trains a fresh MLP with the
// given exit policy and replays both scenarios with the same departures and
// replicate seeds as the truth.
TwinFit fit_and_replay(const TwinTruth& truth, ExitPolicyKind exit, const TwinOptions& opt);

}  // namespace flowtwin::synth
