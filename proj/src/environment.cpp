#include "flowtwin/environment.hpp"

#include <limits>

namespace flowtwin {

EnvironmentView EnvironmentView::baseline(std::shared_ptr<const Network> network, double walk_speed) {
  const auto n = static_cast<Eigen::Index>(network->poi_count());
  VecXd attractions(n);
  for (Eigen::Index p = 0; p < n; ++p) attractions[p] = network->pois()[static_cast<std::size_t>(p)].attraction;
  return EnvironmentView(std::move(network), std::move(attractions), {}, walk_speed,
                         kmh_to_mps(kDefaultMobilitySpeedKmh));
}

EnvironmentView::EnvironmentView(std::shared_ptr<const Network> network, VecXd attractions,
                                 std::vector<MobilityLink> links, double walk_speed, double mobility_speed)
    : network_(std::move(network)),
      attractions_(std::move(attractions)),
      links_(std::move(links)),
      walk_speed_(walk_speed),
      mobility_speed_(mobility_speed) {
  const auto n = static_cast<Eigen::Index>(network_->poi_count());
  if (attractions_.size() != n) throw Error(ErrorCode::DimensionMismatch, "attraction table does not match PoI count");
  if (!(walk_speed_ > 0.0) || !(mobility_speed_ > 0.0)) throw Error(ErrorCode::Validation, "speeds must be > 0");
  speeds_ = SpeedTable::Constant(n, n, walk_speed_);
  for (std::size_t i = 0; i < links_.size(); ++i) {
    const auto& l = links_[i];
    if (l.from >= network_->poi_count() || l.to >= network_->poi_count() || l.from == l.to) {
      throw Error(ErrorCode::UnknownId, "mobility link endpoints must be two distinct PoIs");
    }
    if (!(l.speed > 0.0)) throw Error(ErrorCode::Validation, "link speed must be > 0");
    link_index_[std::minmax(l.from, l.to)] = i;
    speeds_(idx(l.from), idx(l.to)) = l.speed;
    speeds_(idx(l.to), idx(l.from)) = l.speed;
  }
  travel_times_.resize(n, n);
  for (Eigen::Index p = 0; p < n; ++p) {
    for (Eigen::Index q = 0; q < n; ++q) {
      const auto pp = static_cast<std::size_t>(p), qq = static_cast<std::size_t>(q);
      travel_times_(p, q) = network_->connected(pp, qq) ? effective_travel_time(*network_, pp, qq, speeds_)
                                                         : std::numeric_limits<double>::infinity();
    }
  }
}

const MobilityLink* EnvironmentView::link_between(std::size_t p, std::size_t q) const {
  const auto it = link_index_.find(std::minmax(p, q));
  return it == link_index_.end() ? nullptr : &links_[it->second];
}

bool EnvironmentView::operator==(const EnvironmentView& other) const {
  auto same_links = [&] {
    if (links_.size() != other.links_.size()) return false;
    for (std::size_t i = 0; i < links_.size(); ++i) {
      const auto &a = links_[i], &b = other.links_[i];
      if (a.from != b.from || a.to != b.to || a.path != b.path || a.speed != b.speed) return false;
    }
    return true;
  };
  return network_ == other.network_ && attractions_ == other.attractions_ && same_links() &&
         speeds_ == other.speeds_ && travel_times_ == other.travel_times_ && walk_speed_ == other.walk_speed_ &&
         mobility_speed_ == other.mobility_speed_;
}

}  // namespace flowtwin
