#pragma once

#include "flowtwin/common.hpp"
#include "flowtwin/netmodel.hpp"

#include <map>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

namespace flowtwin {

// Environmental features seen by the decision model and the simulator: the
// active (normalized) attraction table, the mobility links in service, and
// the pairwise speed caps with the travel times they imply. Views are
// immutable snapshots; interventions produce new views.
class EnvironmentView {
 public:
  // Walk-only view using the network's own attraction table.
  static EnvironmentView baseline(std::shared_ptr<const Network> network,
                                  double walk_speed = kmh_to_mps(kDefaultWalkSpeedKmh));

  EnvironmentView(std::shared_ptr<const Network> network, VecXd attractions, std::vector<MobilityLink> links,
                  double walk_speed, double mobility_speed);

  const Network& network() const { return *network_; }
  const std::shared_ptr<const Network>& network_ptr() const { return network_; }
  std::size_t poi_count() const { return network_->poi_count(); }

  const VecXd& attractions() const { return attractions_; }
  const std::vector<MobilityLink>& links() const { return links_; }
  const SpeedTable& speeds() const { return speeds_; }
  // d~[p,q] = dist(p,q) / speed[p,q]; +inf when p and q are not connected
  const MatXd& travel_times() const { return travel_times_; }

  double walk_speed() const { return walk_speed_; }
  double mobility_speed() const { return mobility_speed_; }
  double speed(std::size_t p, std::size_t q) const { return speeds_(idx(p), idx(q)); }
  double travel_time(std::size_t p, std::size_t q) const { return travel_times_(idx(p), idx(q)); }

  // Active link whose endpoints are exactly {p, q}.
  const MobilityLink* link_between(std::size_t p, std::size_t q) const;
  bool mobility_covered(std::size_t p, std::size_t q) const { return link_between(p, q) != nullptr; }

  bool operator==(const EnvironmentView& other) const;

 private:
  static Eigen::Index idx(std::size_t i) { return static_cast<Eigen::Index>(i); }

  std::shared_ptr<const Network> network_;
  VecXd attractions_;
  std::vector<MobilityLink> links_;
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> link_index_;
  SpeedTable speeds_;
  MatXd travel_times_;
  double walk_speed_;
  double mobility_speed_;
};

}  // namespace flowtwin
