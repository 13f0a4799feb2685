#include "flowtwin/eval.hpp"

#include "flowtwin/csv.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

namespace flowtwin {

VecXd PopulationSeries::flatten() const {
  VecXd v(values.size());
  Eigen::Index k = 0;
  for (Eigen::Index a = 0; a < values.rows(); ++a) {
    for (Eigen::Index t = 0; t < values.cols(); ++t) v[k++] = values(a, t);
  }
  return v;
}

PopulationSeries population_series(const std::vector<TrajectoryRecord>& trajectories, const Network& net,
                                   const SlotGrid& grid) {
  PopulationSeries out;
  out.slot_seconds = grid.slot_seconds;
  out.values = MatXd::Zero(static_cast<Eigen::Index>(net.area_count()), static_cast<Eigen::Index>(grid.slot_count));
  for (const auto& tr : trajectories) {
    const auto& s = tr.samples;
    for (std::size_t k = 0; k < grid.slot_count; ++k) {
      const double instant = grid.slot_start(k + 1);
      const auto it = std::lower_bound(s.begin(), s.end(), instant,
                                       [](const TrajectorySample& a, double t) { return a.time < t; });
      if (it == s.end() || it->time != instant || !it->area) continue;
      out.values(static_cast<Eigen::Index>(*it->area), static_cast<Eigen::Index>(k)) += 1.0;
    }
  }
  return out;
}

namespace {

void check_dims(const PopulationSeries& a, const PopulationSeries& b) {
  if (a.values.rows() != b.values.rows() || a.values.cols() != b.values.cols()) {
    throw Error(ErrorCode::DimensionMismatch,
                fmt::format("series are {}x{} and {}x{}", a.areas(), a.slots(), b.areas(), b.slots()));
  }
}

}  // namespace

MaeReport mae(const PopulationSeries& pred, const PopulationSeries& truth) {
  check_dims(pred, truth);
  const MatXd diff = (pred.values - truth.values).cwiseAbs();
  MaeReport r;
  r.per_area = diff.rowwise().mean();
  r.day_aggregated = diff.sum();
  r.overall = diff.size() > 0 ? r.day_aggregated / static_cast<double>(diff.size()) : 0.0;
  return r;
}

double cosine(const VecXd& a, const VecXd& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::DimensionMismatch, "cosine of vectors with different lengths");
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw Error(ErrorCode::ZeroVector, "cosine of a zero vector");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

double change_cosine(const VecXd& pred, const VecXd& pred_base, const VecXd& truth, const VecXd& truth_base) {
  return cosine(pred - pred_base, truth - truth_base);
}

std::map<std::string, double> grouped_ablation_importance(const ChoiceNetd& net,
                                                          std::span<const DecisionRecord> data,
                                                          const std::vector<FeatureLayout::Group>& groups,
                                                          const AblationOptions& opt) {
  std::map<std::string, double> out;
  if (data.empty()) return out;
  const double base = dataset_loss(net, data);
  std::vector<DecisionRecord> shuffled(data.begin(), data.end());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& cols = groups[g].columns;
    double total = 0.0;
    for (std::size_t r = 0; r < opt.permutations; ++r) {
      Rng rng(derive_seed(opt.seed, "ablation", {g, r}));
      std::vector<std::size_t> perm(data.size());
      std::iota(perm.begin(), perm.end(), 0);
      for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
      for (std::size_t i = 0; i < data.size(); ++i) {
        for (std::size_t c : cols) {
          const auto ci = static_cast<Eigen::Index>(c);
          shuffled[i].features[ci] = data[perm[i]].features[ci];
        }
      }
      total += dataset_loss(net, shuffled) - base;
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
      for (std::size_t c : cols) shuffled[i].features[static_cast<Eigen::Index>(c)] = data[i].features[static_cast<Eigen::Index>(c)];
    }
    out[groups[g].name] = total / static_cast<double>(std::max<std::size_t>(opt.permutations, 1));
  }
  return out;
}

MetricReport evaluate(const PopulationSeries& pred, const PopulationSeries& truth,
                      const std::vector<std::string>& area_ids, const PopulationSeries* pred_base,
                      const PopulationSeries* truth_base) {
  MetricReport r;
  r.area_ids = area_ids;
  r.mae = mae(pred, truth);
  r.cosine_population = cosine(pred.flatten(), truth.flatten());
  if (pred_base && truth_base) {
    check_dims(pred, *pred_base);
    check_dims(truth, *truth_base);
    r.cosine_change = change_cosine(pred.flatten(), pred_base->flatten(), truth.flatten(), truth_base->flatten());
  }
  return r;
}

nlohmann::json to_json(const MetricReport& report) {
  nlohmann::json per_area = nlohmann::json::object();
  for (std::size_t a = 0; a < report.area_ids.size(); ++a) {
    per_area[report.area_ids[a]] = report.mae.per_area[static_cast<Eigen::Index>(a)];
  }
  nlohmann::json j = {{"mae_per_area", per_area},
                      {"mae", report.mae.overall},
                      {"mae_day_aggregated", report.mae.day_aggregated},
                      {"cosine_population", report.cosine_population},
                      {"cosine_change", nullptr},
                      {"metadata", report.metadata}};
  if (report.cosine_change) j["cosine_change"] = *report.cosine_change;
  return j;
}

PopulationSeries difference(const PopulationSeries& a, const PopulationSeries& b) {
  check_dims(a, b);
  return {a.slot_seconds, a.values - b.values};
}

void write_population(std::ostream& out, const PopulationSeries& series, const Network& net) {
  out << "area_id,slot_index,count\n";
  for (Eigen::Index a = 0; a < series.areas(); ++a) {
    for (Eigen::Index t = 0; t < series.slots(); ++t) {
      out << net.areas()[static_cast<std::size_t>(a)].id << ',' << t << ',' << csv::num(series.values(a, t)) << '\n';
    }
  }
}

PopulationSeries read_population(std::istream& in, const Network& net, const SlotGrid& grid,
                                 const std::string& source) {
  csv::Reader r(in, source, {"area_id", "slot_index", "count"});
  PopulationSeries s;
  s.slot_seconds = grid.slot_seconds;
  s.values = MatXd::Zero(static_cast<Eigen::Index>(net.area_count()), static_cast<Eigen::Index>(grid.slot_count));
  while (r.next()) {
    std::size_t area = 0;
    try {
      area = net.area_index(r.text(0));
    } catch (const Error&) {
      throw ValidationError(r.where(), fmt::format("unknown area '{}'", r.text(0)));
    }
    const long long slot = r.integer(1);
    if (slot < 0 || static_cast<std::size_t>(slot) >= grid.slot_count) {
      throw ValidationError(r.where(), "slot index out of range");
    }
    const double count = r.number(2);
    if (!(count >= 0.0) || !std::isfinite(count)) throw ValidationError(r.where(), "count must be a finite value >= 0");
    s.values(static_cast<Eigen::Index>(area), slot) = count;
  }
  return s;
}

nlohmann::json population_to_json(const PopulationSeries& series, const Network& net) {
  nlohmann::json areas = nlohmann::json::object();
  for (Eigen::Index a = 0; a < series.areas(); ++a) {
    std::vector<double> row(static_cast<std::size_t>(series.slots()));
    for (Eigen::Index t = 0; t < series.slots(); ++t) row[static_cast<std::size_t>(t)] = series.values(a, t);
    areas[net.areas()[static_cast<std::size_t>(a)].id] = row;
  }
  return {{"slot_seconds", series.slot_seconds}, {"slots", series.slots()}, {"areas", areas}};
}

}  // namespace flowtwin
