#pragma once

#include "flowtwin/choice.hpp"
#include "flowtwin/common.hpp"
#include "flowtwin/netmodel.hpp"
#include "flowtwin/reconstruct.hpp"
#include "flowtwin/trajectory.hpp"

#include <json.hpp>

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace flowtwin {

// Occupancy per area (rows) and slot (columns).
struct PopulationSeries {
  double slot_seconds = 600.0;
  MatXd values;

  Eigen::Index areas() const { return values.rows(); }
  Eigen::Index slots() const { return values.cols(); }
  // Area-major flattening (area 0 slots, then area 1, ...).
  VecXd flatten() const;
};

// Number of agents whose sample at each slot-end instant (k+1)*slot lies in
// each area. Requires samples on a grid that includes those instants.
PopulationSeries population_series(const std::vector<TrajectoryRecord>& trajectories, const Network& net,
                                   const SlotGrid& grid);

struct MaeReport {
  VecXd per_area;
  double overall = 0.0;
  double day_aggregated = 0.0;
};

MaeReport mae(const PopulationSeries& pred, const PopulationSeries& truth);

double cosine(const VecXd& a, const VecXd& b);
double change_cosine(const VecXd& pred, const VecXd& pred_base, const VecXd& truth, const VecXd& truth_base);

struct AblationOptions {
  std::size_t permutations = 50;
  std::uint64_t seed = 0;
};

// Mean increase in cross-entropy when one group's columns are permuted
// (jointly) across the dataset.
std::map<std::string, double> grouped_ablation_importance(const ChoiceNetd& net,
                                                          std::span<const DecisionRecord> data,
                                                          const std::vector<FeatureLayout::Group>& groups,
                                                          const AblationOptions& opt);

struct MetricReport {
  std::vector<std::string> area_ids;
  MaeReport mae;
  double cosine_population = 0.0;
  std::optional<double> cosine_change;
  nlohmann::json metadata = nlohmann::json::object();
};

MetricReport evaluate(const PopulationSeries& pred, const PopulationSeries& truth,
                      const std::vector<std::string>& area_ids, const PopulationSeries* pred_base = nullptr,
                      const PopulationSeries* truth_base = nullptr);

nlohmann::json to_json(const MetricReport& report);

// Difference series a - b.
PopulationSeries difference(const PopulationSeries& a, const PopulationSeries& b);

void write_population(std::ostream& out, const PopulationSeries& series, const Network& net);
PopulationSeries read_population(std::istream& in, const Network& net, const SlotGrid& grid,
                                 const std::string& source);
nlohmann::json population_to_json(const PopulationSeries& series, const Network& net);

}  // namespace flowtwin
