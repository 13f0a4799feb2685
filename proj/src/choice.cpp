#include "flowtwin/choice.hpp"

#include "flowtwin/csv.hpp"
#include "flowtwin/json_reader.hpp"
#include "flowtwin/parallel.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <ostream>

namespace flowtwin {

namespace {

constexpr std::size_t kGradChunk = 16;

Eigen::Index ix(std::size_t v) { return static_cast<Eigen::Index>(v); }

}  // namespace

const char* to_string(HeadType h) { return h == HeadType::Softmax ? "softmax" : "mos"; }
const char* to_string(DecisionMode m) { return m == DecisionMode::Deterministic ? "deterministic" : "probabilistic"; }
const char* to_string(ExitPolicyKind k) { return k == ExitPolicyKind::ExitClass ? "exit_class" : "stamina"; }

std::vector<FeatureLayout::Group> FeatureLayout::groups() const {
  auto range = [](std::size_t from, std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), from);
    return v;
  };
  return {
      {"current_poi", range(current(), pois)},
      {"visited_poi", range(visited(), pois)},
      {"time_of_day", range(time(), 2)},
      {"travel_distance", range(distance(), 1)},
      {"poi_distance", range(travel_time(), pois)},
      {"attraction", range(attraction(), pois)},
  };
}

std::vector<std::string> FeatureLayout::column_names(const std::vector<std::string>& poi_ids) const {
  std::vector<std::string> names;
  for (const auto& id : poi_ids) names.push_back("cur_" + id);
  for (const auto& id : poi_ids) names.push_back("vis_" + id);
  names.insert(names.end(), {"time_sin", "time_cos", "cum_dist"});
  for (const auto& id : poi_ids) names.push_back("tt_" + id);
  for (const auto& id : poi_ids) names.push_back("attr_" + id);
  return names;
}

nlohmann::json FeatureLayout::to_json() const {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& g : groups()) {
    blocks.push_back({{"name", g.name}, {"offset", g.columns.front()}, {"size", g.columns.size()}});
  }
  return {{"pois", pois}, {"length", size()}, {"blocks", blocks}};
}

VecXd encode_features(const DecisionContext& agent, const EnvironmentView& env, double now) {
  const FeatureLayout layout{env.poi_count()};
  VecXd f = VecXd::Zero(ix(layout.size()));
  const std::size_t p = agent.current_poi;
  f[ix(layout.current() + p)] = 1.0;
  for (std::size_t q = 0; q < layout.pois && q < agent.visited.size(); ++q) {
    if (agent.visited[q]) f[ix(layout.visited() + q)] = 1.0;
  }
  const double phase = 2.0 * std::numbers::pi * now / kSecondsPerDay;
  f[ix(layout.time())] = std::sin(phase);
  f[ix(layout.time() + 1)] = std::cos(phase);
  f[ix(layout.distance())] = std::clamp(agent.cumulative_distance / kDistanceScale, 0.0, 2.0);
  for (std::size_t q = 0; q < layout.pois; ++q) {
    const double tt = env.travel_time(p, q);
    f[ix(layout.travel_time() + q)] = std::isfinite(tt) ? std::min(tt / kTravelTimeScale, kTravelTimeCap)
                                                        : kTravelTimeCap;
    f[ix(layout.attraction() + q)] = env.attractions()[ix(q)];
  }
  return f;
}

// --- training ----------------------------------------------------------------

double dataset_loss(const ChoiceNetd& net, std::span<const DecisionRecord> data, unsigned threads) {
  const std::size_t chunks = (data.size() + 63) / 64;
  std::vector<double> sums(chunks, 0.0), weights(chunks, 0.0);
  parallel_for(chunks, threads, [&](std::size_t c) {
    for (std::size_t i = c * 64; i < std::min(data.size(), (c + 1) * 64); ++i) {
      sums[c] += data[i].weight * net.loss(data[i].features, data[i].label);
      weights[c] += data[i].weight;
    }
  });
  double s = 0.0, w = 0.0;
  for (std::size_t c = 0; c < chunks; ++c) {
    s += sums[c];
    w += weights[c];
  }
  return w > 0.0 ? s / w : 0.0;
}

double dataset_accuracy(const ChoiceNetd& net, std::span<const DecisionRecord> data) {
  if (data.empty()) return 0.0;
  std::size_t hit = 0;
  for (const auto& r : data) {
    const VecXd p = net.forward(r.features);
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < p.size(); ++k) {
      if (p[k] > p[best]) best = k;
    }
    if (static_cast<std::size_t>(best) == r.label) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(data.size());
}

namespace {

void init_weights(ChoiceNetd& net, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "init"));
  auto fill = [&](MatXd& w, double scale) {
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = scale * rng.normal();
  };
  for (auto& w : net.hidden_w) fill(w, std::sqrt(2.0 / static_cast<double>(w.cols())));
  fill(net.out_w, std::sqrt(1.0 / static_cast<double>(net.out_w.cols())));
  if (net.gate_w.size() > 0) fill(net.gate_w, std::sqrt(1.0 / static_cast<double>(net.gate_w.cols())));
}

nlohmann::json options_json(const TrainingOptions& opt) {
  return {{"hidden", opt.hidden},
          {"head", to_string(opt.head)},
          {"mixtures", opt.mixtures},
          {"learning_rate", opt.learning_rate},
          {"momentum", opt.momentum},
          {"batch_size", opt.batch_size},
          {"epochs", opt.epochs},
          {"l2", opt.l2}};
}

}  // namespace

TrainingResult train(std::span<const DecisionRecord> data, std::size_t poi_count, const ExitPolicy& exit,
                     const TrainingOptions& opt, std::uint64_t seed) {
  if (data.empty()) throw Error(ErrorCode::EmptyDataset, "training set is empty");
  if (opt.batch_size == 0) throw Error(ErrorCode::Validation, "batch size must be > 0");
  TrainingResult result;
  ChoiceModel& model = result.model;
  model.layout = FeatureLayout{poi_count};
  model.exit = exit;
  model.mode = opt.head == HeadType::MixtureOfSoftmax ? DecisionMode::Probabilistic : DecisionMode::Deterministic;
  const std::size_t candidates = model.candidates();
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (static_cast<std::size_t>(data[i].features.size()) != model.layout.size()) {
      throw Error(ErrorCode::DimensionMismatch, fmt::format("record {} has {} features, expected {}", i,
                                                            data[i].features.size(), model.layout.size()));
    }
    if (data[i].label >= candidates) {
      throw Error(ErrorCode::LabelOutOfRange, fmt::format("record {} label {} with {} candidates", i, data[i].label,
                                                          candidates));
    }
  }

  ChoiceNetd net = ChoiceNetd::zeros(model.layout.size(), opt.hidden, candidates, opt.head, opt.mixtures);
  init_weights(net, seed);
  VecXd theta = net.flatten();
  VecXd velocity = VecXd::Zero(theta.size());
  const ChoiceNetd zero_grad = ChoiceNetd::zeros(model.layout.size(), opt.hidden, candidates, opt.head, opt.mixtures);

  result.initial_loss = dataset_loss(net, data, opt.threads);
  double best_loss = result.initial_loss;
  VecXd best_theta = theta;

  std::vector<std::size_t> order(data.size());
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle(derive_seed(seed, "shuffle", {epoch}));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      const std::size_t end = std::min(order.size(), start + opt.batch_size);
      const std::size_t chunks = (end - start + kGradChunk - 1) / kGradChunk;
      std::vector<ChoiceNetd> grads(chunks, zero_grad);
      std::vector<double> chunk_weight(chunks, 0.0);
      parallel_for(chunks, opt.threads, [&](std::size_t c) {
        for (std::size_t i = start + c * kGradChunk; i < std::min(end, start + (c + 1) * kGradChunk); ++i) {
          const auto& r = data[order[i]];
          net.loss(r.features, r.label, &grads[c], r.weight);
          chunk_weight[c] += r.weight;
        }
      });
      VecXd g = VecXd::Zero(theta.size());
      double w = 0.0;
      for (std::size_t c = 0; c < chunks; ++c) {
        g += grads[c].flatten();
        w += chunk_weight[c];
      }
      if (w <= 0.0) continue;
      g /= w;
      if (opt.l2 > 0.0) g += opt.l2 * theta;
      velocity = opt.momentum * velocity - opt.learning_rate * g;
      theta += velocity;
      net.unflatten(theta);
    }
    const double loss = dataset_loss(net, data, opt.threads);
    result.epoch_loss.push_back(loss);
    if (loss < best_loss) {
      best_loss = loss;
      best_theta = theta;
    }
  }
  net.unflatten(best_theta);
  model.net = std::move(net);
  result.final_loss = best_loss;
  model.training = {{"seed", seed},
                    {"options", options_json(opt)},
                    {"records", data.size()},
                    {"initial_loss", result.initial_loss},
                    {"final_loss", result.final_loss}};
  return result;
}

// --- decisions ---------------------------------------------------------------

std::size_t select_candidate(std::span<const double> probs, DecisionMode mode, Rng& rng) {
  if (probs.empty()) throw Error(ErrorCode::DimensionMismatch, "no candidates");
  if (mode == DecisionMode::Deterministic) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < probs.size(); ++k) {
      if (probs[k] > probs[best]) best = k;
    }
    return best;
  }
  const double total = std::accumulate(probs.begin(), probs.end(), 0.0);
  const double u = rng.uniform() * total;
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    if (probs[k] <= 0.0) continue;
    acc += probs[k];
    last_positive = k;
    if (u < acc) return k;
  }
  return last_positive;
}

VecXd decision_probabilities(const ChoiceModel& model, const VecXd& features, std::size_t current_poi) {
  VecXd p = model.net.forward(features);
  if (current_poi < model.layout.pois) p[ix(current_poi)] = 0.0;
  const double s = p.sum();
  if (s > 0.0) p /= s;
  return p;
}

Decision decide_next(const ChoiceModel& model, const VecXd& features, std::size_t current_poi, DecisionMode mode,
                     Rng& rng) {
  const VecXd p = decision_probabilities(model, features, current_poi);
  if (!(p.sum() > 0.0)) return {true, 0};  // nothing left to choose
  const std::size_t k = select_candidate(std::span<const double>(p.data(), static_cast<std::size_t>(p.size())), mode, rng);
  if (k >= model.layout.pois) return {true, 0};
  return {false, k};
}

// --- stamina -------------------------------------------------------------------

StaminaUpdate apply_stamina(const ExitPolicy& policy, double stamina, double moved) {
  if (policy.exit_class()) return {stamina, false};
  const double left = stamina - moved;
  return {left, left <= 0.0};
}

double draw_stamina(const ExitPolicy& policy, Rng& rng) { return rng.lognormal(policy.log_mean, policy.log_sd); }

ExitPolicy fit_stamina(std::span<const double> total_distances) {
  if (total_distances.empty()) throw Error(ErrorCode::EmptyDataset, "no trajectories to fit stamina");
  const double n = static_cast<double>(total_distances.size());
  double mean = 0.0;
  for (double d : total_distances) mean += d;
  mean /= n;
  double var = 0.0;
  for (double d : total_distances) var += (d - mean) * (d - mean);
  var /= n;
  if (!(mean > 0.0)) throw Error(ErrorCode::DegenerateData, "mean trajectory distance must be > 0");
  ExitPolicy policy;
  policy.kind = ExitPolicyKind::Stamina;
  const double s2 = std::log1p(var / (mean * mean));
  policy.log_sd = std::sqrt(s2);
  policy.log_mean = std::log(mean) - 0.5 * s2;
  return policy;
}

// --- training set ------------------------------------------------------------

std::vector<DecisionRecord> build_training_set(const std::vector<TrajectoryRecord>& trajectories,
                                               const EnvironmentView& env, const ExitPolicy& exit) {
  std::vector<DecisionRecord> out;
  const std::size_t n_poi = env.poi_count();
  for (const auto& tr : trajectories) {
    struct Epoch {
      double time;
      std::size_t poi;
      double distance;
    };
    std::vector<Epoch> epochs{{tr.spawn_time, tr.spawn_poi, 0.0}};
    for (const auto& v : tr.visits) epochs.push_back({v.time, v.poi, v.distance});
    const bool exit_label = exit.exit_class() && tr.exit && tr.exit->reason == ExitReason::Choice;

    DecisionContext ctx;
    ctx.visited.assign(n_poi, false);
    ctx.origin_area = tr.origin;
    ctx.destination_area = tr.destination;
    for (std::size_t k = 0; k < epochs.size(); ++k) {
      const auto& e = epochs[k];
      ctx.current_poi = e.poi;
      ctx.cumulative_distance = e.distance;
      ctx.at_spawn = k == 0;
      const bool last = k + 1 == epochs.size();
      if (!last || exit_label) {
        DecisionRecord r;
        r.features = encode_features(ctx, env, e.time);
        r.label = last ? n_poi : epochs[k + 1].poi;
        out.push_back(std::move(r));
      }
      ctx.visited[e.poi] = true;
    }
  }
  return out;
}

// --- persistence -------------------------------------------------------------

namespace {

nlohmann::json flat(const auto& m) { return std::vector<double>(m.data(), m.data() + m.size()); }

}  // namespace

nlohmann::json to_json(const ChoiceModel& model) {
  const auto& net = model.net;
  nlohmann::json layers = nlohmann::json::array();
  layers.push_back(net.input_size());
  for (const auto& w : net.hidden_w) layers.push_back(w.rows());
  layers.push_back(net.candidates);

  nlohmann::json weights = nlohmann::json::array(), biases = nlohmann::json::array();
  for (std::size_t l = 0; l < net.hidden_w.size(); ++l) {
    weights.push_back(flat(net.hidden_w[l]));
    biases.push_back(flat(net.hidden_b[l]));
  }
  weights.push_back(flat(net.out_w));
  biases.push_back(flat(net.out_b));

  nlohmann::json head = {{"type", to_string(net.head)}};
  if (net.head == HeadType::MixtureOfSoftmax) {
    head["mixtures"] = net.mixtures;
    head["gate_weights"] = flat(net.gate_w);
    head["gate_biases"] = flat(net.gate_b);
  }
  nlohmann::json exit = {{"type", to_string(model.exit.kind)}};
  if (!model.exit.exit_class()) {
    exit["log_mean"] = model.exit.log_mean;
    exit["log_sd"] = model.exit.log_sd;
  }
  nlohmann::json layout = model.layout.to_json();
  layout["poi_ids"] = model.poi_ids;
  return {{"layout", layout},
          {"layers", layers},
          {"weights", weights},
          {"biases", biases},
          {"head", head},
          {"exit_policy", exit},
          {"decision_mode", to_string(model.mode)},
          {"training", model.training.is_null() ? nlohmann::json::object() : model.training}};
}

ChoiceModel choice_model_from_json(const nlohmann::json& j) {
  JsonReader r;
  ChoiceModel model;
  if (!r.object(j, "", {"layout", "layers", "weights", "biases", "head", "exit_policy", "decision_mode", "training"})) {
    r.throw_if_errors();
  }
  std::vector<std::size_t> layers;
  if (const auto* l = r.array(j, "layers", "")) {
    for (std::size_t i = 0; i < l->size(); ++i) {
      const auto v = r.number_value((*l)[i], fmt::format("/layers/{}", i));
      if (v && *v >= 1.0 && std::floor(*v) == *v) layers.push_back(static_cast<std::size_t>(*v));
      else r.fail(fmt::format("/layers/{}", i), "layer size must be a positive integer");
    }
    if (l->size() < 2) r.fail("/layers", "need at least input and output sizes");
  }
  if (const auto* lay = r.field(j, "layout", "", true)) {
    if (const auto* ids = r.array(*lay, "poi_ids", "/layout")) {
      for (std::size_t i = 0; i < ids->size(); ++i) {
        if (auto s = r.id_value((*ids)[i], fmt::format("/layout/poi_ids/{}", i))) model.poi_ids.push_back(*s);
      }
    }
    if (const auto pois = r.integer(*lay, "pois", "/layout")) model.layout.pois = static_cast<std::size_t>(*pois);
  }
  if (model.layout.pois != model.poi_ids.size()) r.fail("/layout/pois", "does not match poi_ids");

  std::string head_type = "softmax";
  std::size_t mixtures = 1;
  const nlohmann::json* head = r.field(j, "head", "", true);
  if (head) {
    if (auto s = r.string(*head, "type", "/head")) head_type = *s;
    if (head_type == "mos") {
      if (auto m = r.integer(*head, "mixtures", "/head"); m && *m > 0) mixtures = static_cast<std::size_t>(*m);
      else r.fail("/head/mixtures", "must be a positive integer");
    } else if (head_type != "softmax") {
      r.fail("/head/type", "expected softmax or mos");
    }
  }
  if (const auto* e = r.field(j, "exit_policy", "", true)) {
    const auto kind = r.string(*e, "type", "/exit_policy");
    if (kind == std::string("stamina")) {
      model.exit.kind = ExitPolicyKind::Stamina;
      if (auto v = r.number(*e, "log_mean", "/exit_policy")) model.exit.log_mean = *v;
      if (auto v = r.number(*e, "log_sd", "/exit_policy")) model.exit.log_sd = *v;
    } else if (kind && *kind != "exit_class") {
      r.fail("/exit_policy/type", "expected exit_class or stamina");
    }
  }
  if (auto m = r.string(j, "decision_mode", "")) {
    if (*m == "probabilistic") model.mode = DecisionMode::Probabilistic;
    else if (*m != "deterministic") r.fail("/decision_mode", "expected deterministic or probabilistic");
  }
  r.throw_if_errors();

  const std::size_t candidates = layers.back();
  if (layers.front() != model.layout.size()) r.fail("/layers/0", "input size does not match the feature layout");
  if (candidates != model.candidates()) r.fail(fmt::format("/layers/{}", layers.size() - 1),
                                               "output size does not match the exit policy");
  r.throw_if_errors();

  const HeadType ht = head_type == "mos" ? HeadType::MixtureOfSoftmax : HeadType::Softmax;
  std::vector<std::size_t> hidden(layers.begin() + 1, layers.end() - 1);
  ChoiceNetd net = ChoiceNetd::zeros(layers.front(), hidden, candidates, ht, mixtures);

  auto load = [&](const nlohmann::json& src, const std::string& path, auto& dst) {
    if (!src.is_array() || src.size() != static_cast<std::size_t>(dst.size())) {
      r.fail(path, fmt::format("expected {} numbers", dst.size()));
      return;
    }
    for (std::size_t i = 0; i < src.size(); ++i) {
      if (auto v = r.number_value(src[i], fmt::format("{}/{}", path, i))) dst.data()[i] = *v;
    }
  };
  const auto* weights = r.array(j, "weights", "");
  const auto* biases = r.array(j, "biases", "");
  if (weights && biases) {
    if (weights->size() != hidden.size() + 1 || biases->size() != hidden.size() + 1) {
      r.fail("/weights", "one weight matrix and bias vector per layer expected");
    } else {
      for (std::size_t l = 0; l < hidden.size(); ++l) {
        load((*weights)[l], fmt::format("/weights/{}", l), net.hidden_w[l]);
        load((*biases)[l], fmt::format("/biases/{}", l), net.hidden_b[l]);
      }
      load(weights->back(), fmt::format("/weights/{}", hidden.size()), net.out_w);
      load(biases->back(), fmt::format("/biases/{}", hidden.size()), net.out_b);
    }
  }
  if (ht == HeadType::MixtureOfSoftmax && head) {
    if (const auto* gw = r.field(*head, "gate_weights", "/head", true)) load(*gw, "/head/gate_weights", net.gate_w);
    if (const auto* gb = r.field(*head, "gate_biases", "/head", true)) load(*gb, "/head/gate_biases", net.gate_b);
  }
  r.throw_if_errors();
  model.net = std::move(net);
  if (j.contains("training")) model.training = j["training"];
  return model;
}

void write_training_set(std::ostream& out, std::span<const DecisionRecord> data, const FeatureLayout& layout,
                        const std::vector<std::string>& poi_ids) {
  const auto names = layout.column_names(poi_ids);
  for (const auto& n : names) out << n << ',';
  out << "label,weight\n";
  for (const auto& r : data) {
    for (Eigen::Index k = 0; k < r.features.size(); ++k) out << csv::num(r.features[k]) << ',';
    out << (r.label < poi_ids.size() ? poi_ids[r.label] : std::string("EXIT")) << ',' << csv::num(r.weight) << '\n';
  }
}

std::vector<DecisionRecord> read_training_set(std::istream& in, const FeatureLayout& layout,
                                              const std::vector<std::string>& poi_ids, const std::string& source) {
  auto header = layout.column_names(poi_ids);
  header.push_back("label");
  header.push_back("weight");
  csv::Reader r(in, source, header);
  std::vector<DecisionRecord> out;
  const std::size_t n = layout.size();
  while (r.next()) {
    DecisionRecord rec;
    rec.features.resize(ix(n));
    for (std::size_t k = 0; k < n; ++k) rec.features[ix(k)] = r.number(k);
    const auto& label = r.text(n);
    if (label == "EXIT") {
      rec.label = poi_ids.size();
    } else {
      const auto it = std::find(poi_ids.begin(), poi_ids.end(), label);
      if (it == poi_ids.end()) throw ValidationError(r.where(), fmt::format("unknown label '{}'", label));
      rec.label = static_cast<std::size_t>(it - poi_ids.begin());
    }
    rec.weight = r.number(n + 1);
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace flowtwin
