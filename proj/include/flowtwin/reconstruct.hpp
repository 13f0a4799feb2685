#pragma once

#include "flowtwin/common.hpp"
#include "flowtwin/gmm.hpp"
#include "flowtwin/netmodel.hpp"

#include <json.hpp>

#include <compare>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace flowtwin {

// Speed categories: bins separated by ascending boundaries (m/s); the first
// bin is (0, b0) and the last is open-ended [b_last, inf).
struct SpeedBins {
  std::vector<double> boundaries{0.8, 1.2, 1.6};
  // Sampling support for the two unbounded ends.
  double min_speed = 0.5;
  double max_speed = 2.2;

  std::size_t count() const { return boundaries.size() + 1; }
  std::size_t bin(double speed) const;
  // Half-open sampling interval [lo, hi) for bin v.
  std::pair<double, double> sampling_range(std::size_t v) const;
  bool contains(std::size_t v, double speed) const;
};

struct SlotGrid {
  double slot_seconds = 600.0;
  std::size_t slot_count = 144;

  std::size_t slot_of(double t) const { return static_cast<std::size_t>(t / slot_seconds); }
  bool in_range(double t) const { return t >= 0.0 && t < horizon(); }
  double slot_start(std::size_t t) const { return static_cast<double>(t) * slot_seconds; }
  double horizon() const { return static_cast<double>(slot_count) * slot_seconds; }
};

struct OdSample {
  std::size_t origin = 0;  // area indices
  std::size_t destination = 0;
  double depart_s = 0.0;
  double duration_min = 0.0;
};

struct OdCell {
  std::size_t origin = 0;
  std::size_t destination = 0;
  std::size_t slot = 0;
  std::size_t speed_bin = 0;
  auto operator<=>(const OdCell&) const = default;
};

using CellCounts = std::map<OdCell, long long>;
using PairCounts = Eigen::Matrix<long long, Eigen::Dynamic, Eigen::Dynamic>;

struct OdTensor {
  CellCounts counts;
  std::size_t rejected = 0;

  long long total() const;
};

// Spot counts L[a,t] for observed areas (area index, slot) -> count.
struct SpotCountSeries {
  SlotGrid grid;
  std::map<std::pair<std::size_t, std::size_t>, long long> counts;

  long long slot_total(std::size_t slot) const;
};

using DeparturePriors = std::map<std::pair<std::size_t, std::size_t>, GaussianMixture2d>;

struct DemandScenario {
  CellCounts counts;
  bool calibrated = false;

  long long total() const;
};

struct DepartureEvent {
  std::size_t origin = 0;
  std::size_t destination = 0;
  double depart_s = 0.0;
  double walk_speed = 0.0;  // m/s
};

OdTensor aggregate_od(std::span<const OdSample> samples, const Network& net, const SlotGrid& grid,
                      const SpeedBins& bins);

// c[m,n]: marginal over slots and speed bins.
PairCounts transition_counts(const OdTensor& x, std::size_t area_count);

struct PriorFitOptions {
  std::size_t components = 3;
  EmOptions em;
};

// EM fit for one pair; K is reduced when samples are scarce.
EmResult<double> fit_prior_gmm(std::span<const Vec2d> samples, std::size_t k, std::uint64_t seed,
                               const EmOptions& em = {});

// Fits every ordered pair that has samples. Each pair uses its own seed
// stream derived from (seed, m, n).
DeparturePriors fit_priors(std::span<const OdSample> samples, std::size_t area_count, const PriorFitOptions& opt,
                           std::uint64_t seed, unsigned threads = 1);

struct SamplingReport {
  // Pairs that exhausted the resampling budget; their remaining draws were dropped.
  std::vector<std::pair<std::size_t, std::size_t>> flagged_pairs;
};

inline constexpr int kMaxResampleRetries = 100;

DemandScenario sample_demand(const DeparturePriors& priors, const PairCounts& c, const Network& net,
                             const SlotGrid& grid, const SpeedBins& bins, std::uint64_t seed, unsigned threads = 1,
                             SamplingReport* report = nullptr);

// For every observed area a, the ordered area pairs whose walkable shortest
// path crosses a's polygon.
using ContributionMap = std::map<std::size_t, std::vector<std::pair<std::size_t, std::size_t>>>;

ContributionMap contribution_map(const Network& net);

struct CalibrationResult {
  DemandScenario scenario;
  std::map<std::size_t, double> ratios;  // r_t for every scaled slot
  std::vector<std::size_t> zero_denominator_slots;
  bool flagged = false;
};

// Slot-wise absolute scaling D'[m,n,t,v] = floor(r_t * D[m,n,t,v]), computed
// in exact integer arithmetic.
CalibrationResult calibrate_scale(const DemandScenario& demand, const SpotCountSeries& counts,
                                  const ContributionMap& contributions);

// Sum over counters a and contributing pairs of D in one slot (denominator of r_t).
long long contributing_total(const CellCounts& counts, const ContributionMap& contributions, std::size_t slot);

std::vector<DepartureEvent> instantiate_departures(const DemandScenario& demand, const SlotGrid& grid,
                                                   const SpeedBins& bins, std::uint64_t seed);

// --- file formats ---------------------------------------------------------

std::vector<OdSample> read_od_samples(std::istream& in, const Network& net, const std::string& source);
void write_od_samples(std::ostream& out, std::span<const OdSample> samples, const Network& net);

SpotCountSeries read_spot_counts(std::istream& in, const Network& net, const SlotGrid& grid,
                                 const std::string& source);
void write_spot_counts(std::ostream& out, const SpotCountSeries& counts, const Network& net);

void write_demand(std::ostream& out, const DemandScenario& demand, const Network& net);
DemandScenario read_demand(std::istream& in, const Network& net, const std::string& source);

void write_departures(std::ostream& out, std::span<const DepartureEvent> events, const Network& net);
std::vector<DepartureEvent> read_departures(std::istream& in, const Network& net, const std::string& source);

nlohmann::json priors_to_json(const DeparturePriors& priors, const Network& net);
DeparturePriors priors_from_json(const nlohmann::json& j, const Network& net);

}  // namespace flowtwin
