#pragma once

#include "flowtwin/common.hpp"
#include "flowtwin/environment.hpp"
#include "flowtwin/rng.hpp"
#include "flowtwin/trajectory.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace flowtwin {

// Feature layout for |P| PoIs:
//   [0, P)        current PoI one-hot
//   [P, 2P)       visited indicators
//   2P, 2P+1      sin, cos of time of day
//   2P+2          cumulative distance / 5000, clamped to [0, 2]
//   [2P+3, 3P+3)  travel time from current PoI / 1800
//   [3P+3, 4P+3)  attraction
struct FeatureLayout {
  std::size_t pois = 0;

  std::size_t size() const { return 4 * pois + 3; }
  std::size_t current() const { return 0; }
  std::size_t visited() const { return pois; }
  std::size_t time() const { return 2 * pois; }
  std::size_t distance() const { return 2 * pois + 2; }
  std::size_t travel_time() const { return 2 * pois + 3; }
  std::size_t attraction() const { return 3 * pois + 3; }

  struct Group {
    std::string name;
    std::vector<std::size_t> columns;
  };
  // Ablation groups, a partition of the layout.
  std::vector<Group> groups() const;
  std::vector<std::string> column_names(const std::vector<std::string>& poi_ids) const;
  nlohmann::json to_json() const;
};

inline constexpr double kTravelTimeScale = 1800.0;
inline constexpr double kDistanceScale = 5000.0;
// Unreachable candidates get this normalized travel time.
inline constexpr double kTravelTimeCap = 4.0;

// Agent-side inputs at a decision epoch.
struct DecisionContext {
  std::size_t current_poi = 0;
  std::vector<bool> visited;  // PoIs visited before the current one
  double cumulative_distance = 0.0;
  std::size_t origin_area = 0;
  std::size_t destination_area = 0;
  bool at_spawn = false;
};

VecXd encode_features(const DecisionContext& agent, const EnvironmentView& env, double now);

enum class HeadType { Softmax, MixtureOfSoftmax };
enum class DecisionMode { Deterministic, Probabilistic };
enum class ExitPolicyKind { ExitClass, Stamina };

struct ExitPolicy {
  ExitPolicyKind kind = ExitPolicyKind::ExitClass;
  // LogNormal budget in metres; used by Stamina only.
  double log_mean = std::log(3000.0);
  double log_sd = 0.4;

  bool exit_class() const { return kind == ExitPolicyKind::ExitClass; }
};

const char* to_string(HeadType h);
const char* to_string(DecisionMode m);
const char* to_string(ExitPolicyKind k);

// MLP with ReLU hidden layers and a plain or mixture-of-softmax head.
// Weight matrices are out x in. For the MoS head `out_w` stacks the M
// component projections (M*C rows) and `gate_w` holds the M gate rows.
template <typename S>
struct ChoiceNet {
  std::vector<MatX<S>> hidden_w;
  std::vector<VecX<S>> hidden_b;
  MatX<S> out_w;
  VecX<S> out_b;
  MatX<S> gate_w;
  VecX<S> gate_b;
  HeadType head = HeadType::Softmax;
  std::size_t mixtures = 1;
  std::size_t candidates = 0;

  std::size_t input_size() const {
    return static_cast<std::size_t>(hidden_w.empty() ? out_w.cols() : hidden_w.front().cols());
  }
  std::size_t hidden_output_size() const {
    return hidden_w.empty() ? input_size() : static_cast<std::size_t>(hidden_w.back().rows());
  }
  std::size_t parameter_count() const;

  // Zero-initialized net of the given shape.
  static ChoiceNet zeros(std::size_t inputs, const std::vector<std::size_t>& hidden, std::size_t candidates,
                         HeadType head, std::size_t mixtures);

  VecX<S> forward(const VecX<S>& x) const;
  // -log p(label | x). Accumulates weight * gradient into `grad` when given.
  S loss(const VecX<S>& x, std::size_t label, ChoiceNet* grad = nullptr, S weight = S(1)) const;

  VecX<S> flatten() const;
  void unflatten(const VecX<S>& theta);

  template <typename T>
  ChoiceNet<T> cast() const;
};

using ChoiceNetd = ChoiceNet<double>;

struct DecisionRecord {
  VecXd features;
  std::size_t label = 0;  // PoI index, or |P| for Exit
  double weight = 1.0;
};

struct TrainingOptions {
  std::vector<std::size_t> hidden{64, 64};
  HeadType head = HeadType::Softmax;
  std::size_t mixtures = 3;
  double learning_rate = 0.003;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  std::size_t epochs = 300;
  double l2 = 0.0;
  unsigned threads = 1;
};

struct ChoiceModel {
  FeatureLayout layout;
  std::vector<std::string> poi_ids;
  ChoiceNetd net;
  ExitPolicy exit;
  DecisionMode mode = DecisionMode::Deterministic;
  nlohmann::json training;  // metadata: seed, options, losses

  std::size_t candidates() const { return layout.pois + (exit.exit_class() ? 1 : 0); }
  std::size_t exit_label() const { return layout.pois; }
};

struct TrainingResult {
  ChoiceModel model;
  std::vector<double> epoch_loss;  // full-dataset loss after each epoch
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

// Mean weighted cross-entropy of a net over a dataset.
double dataset_loss(const ChoiceNetd& net, std::span<const DecisionRecord> data, unsigned threads = 1);
double dataset_accuracy(const ChoiceNetd& net, std::span<const DecisionRecord> data);

// Minibatch SGD with momentum. Shuffling depends on (seed, epoch) only and
// the minibatch gradient is reduced over fixed chunks, so the result does
// not depend on the thread count. Returns the lowest-loss epoch's params.
TrainingResult train(std::span<const DecisionRecord> data, std::size_t poi_count, const ExitPolicy& exit,
                     const TrainingOptions& opt, std::uint64_t seed);

// Candidate selection over a probability vector. Deterministic picks the
// lowest-index maximum; probabilistic inverts the CDF with one uniform draw.
std::size_t select_candidate(std::span<const double> probs, DecisionMode mode, Rng& rng);

struct Decision {
  bool exit = false;
  std::size_t poi = 0;
};

// Probabilities with the current PoI masked out and renormalized.
VecXd decision_probabilities(const ChoiceModel& model, const VecXd& features, std::size_t current_poi);
Decision decide_next(const ChoiceModel& model, const VecXd& features, std::size_t current_poi, DecisionMode mode,
                     Rng& rng);

struct StaminaUpdate {
  double stamina = 0.0;
  bool exit = false;
};

StaminaUpdate apply_stamina(const ExitPolicy& policy, double stamina, double moved);
double draw_stamina(const ExitPolicy& policy, Rng& rng);
// Method-of-moments LogNormal fit to per-trajectory total distances.
ExitPolicy fit_stamina(std::span<const double> total_distances);

// One record per decision epoch (spawn and each visit). The label is the
// next visited PoI; the final epoch gets the Exit label only under
// ExitClass and only when the trajectory ended by choice.
std::vector<DecisionRecord> build_training_set(const std::vector<TrajectoryRecord>& trajectories,
                                               const EnvironmentView& env, const ExitPolicy& exit);

// --- persistence -------------------------------------------------------------

nlohmann::json to_json(const ChoiceModel& model);
ChoiceModel choice_model_from_json(const nlohmann::json& j);

void write_training_set(std::ostream& out, std::span<const DecisionRecord> data, const FeatureLayout& layout,
                        const std::vector<std::string>& poi_ids);
std::vector<DecisionRecord> read_training_set(std::istream& in, const FeatureLayout& layout,
                                              const std::vector<std::string>& poi_ids, const std::string& source);

// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
VecX<S> softmax(const VecX<S>& z) {
  const S mx = z.maxCoeff();
  VecX<S> e = (z.array() - mx).exp().matrix();
  return e / e.sum();
}

template <typename S>
S log_sum_exp(const VecX<S>& z) {
  const S mx = z.maxCoeff();
  return mx + std::log((z.array() - mx).exp().sum());
}

}  // namespace detail

template <typename S>
std::size_t ChoiceNet<S>::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < hidden_w.size(); ++l) n += hidden_w[l].size() + hidden_b[l].size();
  n += out_w.size() + out_b.size() + gate_w.size() + gate_b.size();
  return n;
}

template <typename S>
ChoiceNet<S> ChoiceNet<S>::zeros(std::size_t inputs, const std::vector<std::size_t>& hidden, std::size_t candidates,
                                 HeadType head, std::size_t mixtures) {
  ChoiceNet net;
  net.head = head;
  net.mixtures = head == HeadType::Softmax ? 1 : mixtures;
  net.candidates = candidates;
  auto ix = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
  std::size_t in = inputs;
  for (std::size_t h : hidden) {
    net.hidden_w.push_back(MatX<S>::Zero(ix(h), ix(in)));
    net.hidden_b.push_back(VecX<S>::Zero(ix(h)));
    in = h;
  }
  net.out_w = MatX<S>::Zero(ix(net.mixtures * candidates), ix(in));
  net.out_b = VecX<S>::Zero(ix(net.mixtures * candidates));
  if (head == HeadType::MixtureOfSoftmax) {
    net.gate_w = MatX<S>::Zero(ix(net.mixtures), ix(in));
    net.gate_b = VecX<S>::Zero(ix(net.mixtures));
  }
  return net;
}

template <typename S>
VecX<S> ChoiceNet<S>::forward(const VecX<S>& x) const {
  if (static_cast<std::size_t>(x.size()) != input_size()) {
    throw Error(ErrorCode::DimensionMismatch, "feature length does not match the model input");
  }
  VecX<S> a = x;
  for (std::size_t l = 0; l < hidden_w.size(); ++l) {
    a = (hidden_w[l] * a + hidden_b[l]).cwiseMax(S(0));
  }
  const VecX<S> z = out_w * a + out_b;
  if (head == HeadType::Softmax) return detail::softmax<S>(z);
  const VecX<S> gate = detail::softmax<S>(gate_w * a + gate_b);
  const auto c = static_cast<Eigen::Index>(candidates);
  VecX<S> p = VecX<S>::Zero(c);
  for (Eigen::Index m = 0; m < static_cast<Eigen::Index>(mixtures); ++m) {
    p += gate[m] * detail::softmax<S>(z.segment(m * c, c));
  }
  return p;
}

template <typename S>
S ChoiceNet<S>::loss(const VecX<S>& x, std::size_t label, ChoiceNet* grad, S weight) const {
  if (static_cast<std::size_t>(x.size()) != input_size()) {
    throw Error(ErrorCode::DimensionMismatch, "feature length does not match the model input");
  }
  if (label >= candidates) throw Error(ErrorCode::LabelOutOfRange, "label outside the candidate set");
  const std::size_t layers = hidden_w.size();
  std::vector<VecX<S>> acts{x};
  std::vector<VecX<S>> pre;
  for (std::size_t l = 0; l < layers; ++l) {
    pre.push_back(hidden_w[l] * acts.back() + hidden_b[l]);
    acts.push_back(pre.back().cwiseMax(S(0)));
  }
  const VecX<S>& h = acts.back();
  const VecX<S> z = out_w * h + out_b;
  const auto y = static_cast<Eigen::Index>(label);
  const auto c = static_cast<Eigen::Index>(candidates);

  S nll;
  VecX<S> dz(z.size());
  VecX<S> dg;
  if (head == HeadType::Softmax) {
    nll = detail::log_sum_exp<S>(z) - z[y];
    dz = detail::softmax<S>(z);
    dz[y] -= S(1);
  } else {
    const auto mix = static_cast<Eigen::Index>(mixtures);
    const VecX<S> g = gate_w * h + gate_b;
    const S g_lse = detail::log_sum_exp<S>(g);
    // log(pi_m * q_my) per component
    VecX<S> joint(mix);
    std::vector<VecX<S>> q(static_cast<std::size_t>(mix));
    for (Eigen::Index m = 0; m < mix; ++m) {
      const VecX<S> zm = z.segment(m * c, c);
      q[static_cast<std::size_t>(m)] = detail::softmax<S>(zm);
      joint[m] = (g[m] - g_lse) + (zm[y] - detail::log_sum_exp<S>(zm));
    }
    const S log_p = detail::log_sum_exp<S>(joint);
    nll = -log_p;
    const VecX<S> resp = (joint.array() - log_p).exp().matrix();  // posterior over components
    dg = (g.array() - g_lse).exp().matrix() - resp;
    for (Eigen::Index m = 0; m < mix; ++m) {
      VecX<S> d = q[static_cast<std::size_t>(m)] * resp[m];
      d[y] -= resp[m];
      dz.segment(m * c, c) = d;
    }
  }
  if (!grad) return nll;

  dz *= weight;
  grad->out_w.noalias() += dz * h.transpose();
  grad->out_b += dz;
  VecX<S> dh = out_w.transpose() * dz;
  if (head == HeadType::MixtureOfSoftmax) {
    dg *= weight;
    grad->gate_w.noalias() += dg * h.transpose();
    grad->gate_b += dg;
    dh.noalias() += gate_w.transpose() * dg;
  }
  for (std::size_t l = layers; l-- > 0;) {
    const VecX<S> dpre = dh.cwiseProduct((pre[l].array() > S(0)).template cast<S>().matrix());
    grad->hidden_w[l].noalias() += dpre * acts[l].transpose();
    grad->hidden_b[l] += dpre;
    if (l > 0) dh = hidden_w[l].transpose() * dpre;
  }
  return nll;
}

template <typename S>
VecX<S> ChoiceNet<S>::flatten() const {
  VecX<S> theta(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index k = 0;
  auto put = [&](const auto& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) theta[k++] = m.data()[i];
  };
  for (std::size_t l = 0; l < hidden_w.size(); ++l) {
    put(hidden_w[l]);
    put(hidden_b[l]);
  }
  put(out_w);
  put(out_b);
  put(gate_w);
  put(gate_b);
  return theta;
}

template <typename S>
void ChoiceNet<S>::unflatten(const VecX<S>& theta) {
  if (static_cast<std::size_t>(theta.size()) != parameter_count()) {
    throw Error(ErrorCode::DimensionMismatch, "parameter vector length");
  }
  Eigen::Index k = 0;
  auto get = [&](auto& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = theta[k++];
  };
  for (std::size_t l = 0; l < hidden_w.size(); ++l) {
    get(hidden_w[l]);
    get(hidden_b[l]);
  }
  get(out_w);
  get(out_b);
  get(gate_w);
  get(gate_b);
}

template <typename S>
template <typename T>
ChoiceNet<T> ChoiceNet<S>::cast() const {
  ChoiceNet<T> o;
  for (const auto& w : hidden_w) o.hidden_w.push_back(w.template cast<T>());
  for (const auto& b : hidden_b) o.hidden_b.push_back(b.template cast<T>());
  o.out_w = out_w.template cast<T>();
  o.out_b = out_b.template cast<T>();
  o.gate_w = gate_w.template cast<T>();
  o.gate_b = gate_b.template cast<T>();
  o.head = head;
  o.mixtures = mixtures;
  o.candidates = candidates;
  return o;
}

}  // namespace flowtwin
