// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Usage: acceptance [criterion numbers...]   (default: all)

#include "flowtwin/gmm.hpp"
#include "flowtwin/json_reader.hpp"
#include "flowtwin/project.hpp"
#include "flowtwin/synth.hpp"

#include <fmt/format.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

using namespace flowtwin;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

bool report(int n, const std::string& name, const Outcome& o, double elapsed, double limit) {
  const bool in_time = elapsed < limit;
  const bool pass = o.pass && in_time;
  std::cout << fmt::format("[{}] {}. {}: {} ({:.1f} s, limit {:.0f} s{})", pass ? "PASS" : "FAIL", n, name, o.detail,
                           elapsed, limit, in_time ? "" : ", over time")
            << std::endl;
  return pass;
}

bool run_criterion(int n, const std::string& name, double limit, const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  return report(n, name, o, seconds_since(t0), limit);
}

// --- 1 -----------------------------------------------------------------------

double max_gradient_error(const ChoiceNetd& net, const std::vector<DecisionRecord>& data) {
  ChoiceNetd grad = net;
  grad.unflatten(VecXd::Zero(static_cast<Eigen::Index>(net.parameter_count())));
  for (const auto& r : data) net.loss(r.features, r.label, &grad, r.weight);
  const VecXd analytic = grad.flatten();
  using Real = long double;
  auto probe = net.cast<Real>();
  const VecX<Real> theta = probe.flatten();
  auto total = [&](const VecX<Real>& t) {
    probe.unflatten(t);
    Real s = 0;
    for (const auto& r : data) s += Real(r.weight) * probe.loss(r.features.cast<Real>(), r.label);
    return s;
  };
  const Real h = 1e-5L;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    VecX<Real> tp = theta, tm = theta;
    tp[i] += h;
    tm[i] -= h;
    const auto numeric = static_cast<double>((total(tp) - total(tm)) / (2 * h));
    const double scale = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-7});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / scale);
  }
  return worst;
}

Outcome gradients() {
  Rng rng(derive_seed(1, "acceptance-gradients"));
  double worst = 0.0;
  int instances = 0;
  for (auto head : {HeadType::Softmax, HeadType::MixtureOfSoftmax}) {
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t pois = 2 + rng.below(3);
      const bool exit_class = trial % 2 == 0;
      const std::size_t candidates = pois + (exit_class ? 1 : 0);
      std::vector<std::size_t> hidden;
      for (std::size_t l = rng.below(3); l > 0; --l) hidden.push_back(3 + rng.below(4));
      auto net = ChoiceNetd::zeros(FeatureLayout{pois}.size(), hidden, candidates, head, 2 + rng.below(3));
      VecXd theta(static_cast<Eigen::Index>(net.parameter_count()));
      for (auto& v : theta) v = rng.normal() * 0.7;
      net.unflatten(theta);
      std::vector<DecisionRecord> data;
      for (int r = 0; r < 5; ++r) {
        VecXd x(static_cast<Eigen::Index>(net.input_size()));
        for (auto& v : x) v = rng.uniform(-1.0, 1.0);
        data.push_back({x, rng.below(candidates), rng.uniform(0.5, 1.5)});
      }
      worst = std::max(worst, max_gradient_error(net, data));
      ++instances;
    }
  }
  return {worst < 1e-4, fmt::format("{} instances (plain and MoS), max relative error {:.2e} < 1e-4", instances, worst)};
}

// --- 2 -----------------------------------------------------------------------

Vec2d draw(const Vec2d& mean, const Mat2d& cov, Rng& rng) {
  const Mat2d l = cov.llt().matrixL();
  return mean + l * Vec2d(rng.normal(), rng.normal());
}

bool monotone(const std::vector<double>& ll) {
  for (std::size_t i = 1; i < ll.size(); ++i) {
    if (ll[i] < ll[i - 1] - 1e-9) return false;
  }
  return true;
}

Outcome em() {
  Rng rng(derive_seed(2, "acceptance-em"));
  const std::vector<Vec2d> means{Vec2d(36000.0, 12.0), Vec2d(54000.0, 30.0)};
  const std::vector<Mat2d> covs{(Mat2d() << 9.0e6, 1500.0, 1500.0, 4.0).finished(),
                                (Mat2d() << 1.6e7, -4000.0, -4000.0, 9.0).finished()};
  std::vector<Vec2d> samples;
  for (int i = 0; i < 10000; ++i) {
    const std::size_t c = rng.uniform() < 0.4 ? 0 : 1;
    samples.push_back(draw(means[c], covs[c], rng));
  }
  const auto fit = fit_gmm<double>(samples, 2, 17);
  bool mono = monotone(fit.log_likelihood);
  double worst = 0.0;
  for (const auto& truth : means) {
    double best = 1e300;
    for (const auto& m : fit.mixture.means) {
      best = std::min(best, std::max(std::abs(m.x() - truth.x()) / std::abs(truth.x()),
                                     std::abs(m.y() - truth.y()) / std::abs(truth.y())));
    }
    worst = std::max(worst, best);
  }
  // every fit: random data sets and component counts
  int fits = 1;
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<Vec2d> z;
    const int n = 20 + static_cast<int>(rng.below(400));
    for (int i = 0; i < n; ++i) z.emplace_back(rng.uniform(0, 86400), rng.lognormal(2.5, 0.6));
    mono = mono && monotone(fit_gmm<double>(z, 1 + rng.below(4), trial).log_likelihood);
    ++fits;
  }
  return {mono && worst < 0.05,
          fmt::format("log-likelihood non-decreasing on {}/{} fits; planted means recovered within {:.2f}% (< 5%)",
                      mono ? fits : 0, fits, 100.0 * worst)};
}

// --- 3 -----------------------------------------------------------------------

Outcome calibration() {
  Rng rng(derive_seed(3, "acceptance-calibration"));
  int checked = 0, violations = 0, identity_failures = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t areas = 2 + rng.below(5), slots = 1 + rng.below(6);
    ContributionMap contrib;
    for (std::size_t a = 0; a < areas; ++a) {
      for (std::size_t m = 0; m < areas; ++m) {
        for (std::size_t n = 0; n < areas; ++n) {
          if (m != n && rng.uniform() < 0.3) contrib[a].emplace_back(m, n);
        }
      }
    }
    DemandScenario d;
    for (int k = 0; k < 80; ++k) {
      d.counts[{rng.below(areas), rng.below(areas), rng.below(slots), rng.below(4)}] += 1 + static_cast<long long>(rng.below(40));
    }
    SpotCountSeries counts;
    for (const auto& [a, _] : contrib) {
      for (std::size_t t = 0; t < slots; ++t) counts.counts[{a, t}] = static_cast<long long>(rng.below(500));
    }
    const auto res = calibrate_scale(d, counts, contrib);
    for (std::size_t t = 0; t < slots; ++t) {
      long long scaled = 0, raw = 0, cells = 0;
      for (const auto& [a, pairs] : contrib) {
        for (const auto& [m, n] : pairs) {
          for (const auto& [cell, v] : d.counts) {
            if (cell.origin != m || cell.destination != n || cell.slot != t) continue;
            raw += v;
            if (v > 0) ++cells;
            const auto it = res.scenario.counts.find(cell);
            scaled += it == res.scenario.counts.end() ? 0 : it->second;
          }
        }
      }
      if (raw == 0) continue;
      const long long deviation = counts.slot_total(t) - scaled;
      ++checked;
      if (deviation < 0 || deviation > cells) ++violations;
    }
    // r_t = 1: counters report exactly the contributing totals
    SpotCountSeries exact;
    for (std::size_t t = 0; t < slots; ++t) {
      const long long total = contributing_total(d.counts, contrib, t);
      if (total > 0 && !contrib.empty()) exact.counts[{contrib.begin()->first, t}] = total;
    }
    const auto same = calibrate_scale(d, exact, contrib);
    if (same.scenario.counts != d.counts) ++identity_failures;
  }
  return {checked > 0 && violations == 0 && identity_failures == 0,
          fmt::format("{} slot checks, {} outside [0, #nonzero cells]; r_t = 1 pass-through failures {}", checked,
                      violations, identity_failures)};
}

// --- 4 -----------------------------------------------------------------------

AgentState walker(const Vec2d& at, const Vec2d& to, double cap) {
  AgentState a;
  a.position = at;
  a.route = {to};
  a.speed_cap = cap;
  a.walk_speed = cap;
  return a;
}

Outcome social_force() {
  const double cap = kmh_to_mps(kDefaultWalkSpeedKmh), dt = 0.05;
  World lone;
  lone.agents.push_back(walker(Vec2d(0, 0), Vec2d(1000, 0), cap));
  const double tau = lone.params.relaxation;
  for (int k = 0; k < static_cast<int>(std::lround(5 * tau / dt)); ++k) step(lone, dt);
  const double speed = lone.agents[0].velocity.norm();
  const double closed = cap * (1.0 - std::exp(-5.0));
  const bool relax_ok = speed >= 0.99 * cap && std::abs(speed - closed) <= 0.02 * closed;

  Rng rng(derive_seed(4, "acceptance-head-on"));
  double min_sep = 1e9;
  bool passed = true;
  for (int trial = 0; trial < 10; ++trial) {
    const double lateral = rng.uniform(0.01, 0.1);
    World w;
    w.obstacles = {{Vec2d(-50, -1), Vec2d(50, -1)}, {Vec2d(-50, 1), Vec2d(50, 1)}};
    w.agents.push_back(walker(Vec2d(-10, lateral), Vec2d(20, lateral), cap));
    w.agents.push_back(walker(Vec2d(10, -lateral), Vec2d(-20, -lateral), cap));
    for (int k = 0; k < 800; ++k) {
      step(w, dt);
      min_sep = std::min(min_sep, (w.agents[0].position - w.agents[1].position).norm());
    }
    passed = passed && w.agents[0].position.x() > 10.0 && w.agents[1].position.x() < -10.0;
  }
  return {relax_ok && passed && min_sep > 0.3,
          fmt::format("speed at 5 tau {:.4f} m/s vs cap {:.4f}, closed form {:.4f} (gap {:.2f}%); head-on minimum "
                      "separation {:.3f} m > 0.3 m over 10 seeded pairs",
                      speed, cap, closed, 100.0 * std::abs(speed - closed) / closed, min_sep)};
}

// --- 5 -----------------------------------------------------------------------

const fs::path kData = fs::path(FLOWTWIN_SOURCE_DIR) / "data";

int cli(const std::string& args) {
  const std::string cmd = std::string(FLOWTWIN_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome determinism(const fs::path& scratch) {
  auto cfg_for = [&](unsigned threads) {
    nlohmann::json c = read_json_file((kData / "config.json").string());
    for (const char* k : {"network", "counts", "od", "model", "departures"}) c[k] = (kData / c[k].get<std::string>()).string();
    for (auto& s : c["scenarios"]) s = (kData / s.get<std::string>()).string();
    c["threads"] = threads;
    const fs::path p = scratch / fmt::format("config_{}.json", threads);
    write_text(p, c.dump(2));
    return p.string();
  };
  const std::vector<std::string> files{"priors.json", "demand.csv", "demand_calibrated.csv", "departures.csv",
                                       "runs/baseline/trajectories.jsonl", "runs/baseline/events.csv",
                                       "runs/baseline/population.csv", "runs/mobility/trajectories.jsonl",
                                       "runs/mobility/events.csv", "trainset.csv", "model.json",
                                       "runs/trained/trajectories.jsonl"};
  const std::string scenario = (kData / "scenarios/mobility.json").string();
  auto pipeline = [&](const std::string& name, unsigned threads) {
    const std::string common = " --config " + cfg_for(threads) + " --out-dir " + (scratch / name).string();
    const std::string model = " --model " + (kData / "planted_model.json").string();
    for (const std::string& step : std::vector<std::string>{"fit-prior --seed 7", "reconstruct --seed 7", "simulate --seed 7 --name baseline" + model,
          "simulate --seed 7 --name mobility --scenario " + scenario + model, "build-trainset", "train --seed 7",
          "simulate --seed 7 --name trained --model " + (scratch / name / "model.json").string()}) {
      if (cli(step + common) != 0) throw std::runtime_error("command failed: " + step);
    }
  };
  pipeline("a", 1);
  pipeline("b", 1);
  pipeline("c", 4);
  int differing = 0;
  std::size_t bytes = 0;
  for (const auto& f : files) {
    const auto a = read_text(scratch / "a" / f);
    bytes += a.size();
    if (a.empty() || a != read_text(scratch / "b" / f) || a != read_text(scratch / "c" / f)) ++differing;
  }
  return {differing == 0, fmt::format("{} artifacts ({:.1f} MB) of reconstruct, simulate and train identical across two "
                                      "invocations and 1 vs 4 threads; {} differ",
                                      files.size(), bytes / 1e6, differing)};
}

// --- 6 and 9 -------------------------------------------------------------------

Outcome closed_loop(const synth::TwinFit& fit) {
  const bool pass = fit.cosine_population >= 0.85 && fit.cosine_population_intervention >= 0.85 &&
                    fit.cosine_change >= 0.6;
  return {pass, fmt::format("population cosine {:.3f} (baseline) and {:.3f} (with mobility) >= 0.85; change cosine "
                            "{:.3f} >= 0.6",
                            fit.cosine_population, fit.cosine_population_intervention, fit.cosine_change)};
}

Outcome exit_contrast(const synth::TwinFit& exit_class, const synth::TwinFit& stamina) {
  auto above_floor = [](const synth::TwinFit& f) {
    return f.cosine_population >= 0.85 && f.cosine_population_intervention >= 0.85 && f.cosine_change >= 0.6;
  };
  const bool order = exit_class.mae.day_aggregated <= stamina.mae.day_aggregated &&
                     exit_class.mae_intervention.day_aggregated <= stamina.mae_intervention.day_aggregated;
  return {order && above_floor(exit_class) && above_floor(stamina),
          fmt::format("day-aggregated MAE exit class {:.1f} <= stamina {:.1f} (baseline), {:.1f} <= {:.1f} (with "
                      "mobility); stamina cosines {:.3f} / {:.3f} / change {:.3f} above the floor",
                      exit_class.mae.day_aggregated, stamina.mae.day_aggregated,
                      exit_class.mae_intervention.day_aggregated, stamina.mae_intervention.day_aggregated,
                      stamina.cosine_population, stamina.cosine_population_intervention, stamina.cosine_change)};
}

// --- 7 -----------------------------------------------------------------------

std::string run_text(const SimulationResult& r, const Network& net) {
  std::ostringstream out;
  write_trajectory_events(out, r.trajectories, net);
  write_trajectory_samples(out, r.trajectories, net);
  return out.str();
}

Outcome intervention() {
  const auto net = load_network(kData / "network.json");
  const auto base = EnvironmentView::baseline(net);
  const auto deps = load_departures(kData / "trips.csv", *net);
  const ModelPolicy policy(load_model(kData / "planted_model.json", *net));
  SimulationOptions opt;
  opt.seed = 7;
  const auto plain = run_simulation(base, deps, policy, {}, opt);
  const auto empty = run_counterfactual(policy, base, InterventionSpec{}, deps, {}, opt);
  const bool identical = run_text(plain, *net) == run_text(empty.result, *net);

  const auto spec = load_scenario(kData / "scenarios/mobility.json", *net);
  const auto mob = apply_intervention(base, spec);
  double worst = 0.0;
  for (const auto* env : {&base, &mob}) {
    for (std::size_t p = 0; p < net->poi_count(); ++p) {
      for (std::size_t q = 0; q < net->poi_count(); ++q) {
        if (p == q) continue;
        const double dist = net->shortest_path_distance(p, q);
        worst = std::max(worst, std::abs(env->travel_time(p, q) * env->speed(p, q) - dist) / dist);
      }
    }
  }
  double sum_err = std::abs(mob.attractions().sum() - 1.0);
  Rng rng(derive_seed(7, "acceptance-overrides"));
  for (int trial = 0; trial < 100; ++trial) {
    InterventionSpec s;
    for (const auto& p : net->pois()) {
      if (rng.uniform() < 0.6) s.attraction_overrides[p.id] = rng.uniform(0.0, 5.0);
    }
    s.attraction_overrides[net->pois()[rng.below(net->poi_count())].id] = rng.uniform(0.1, 5.0);
    sum_err = std::max(sum_err, std::abs(apply_intervention(base, s).attractions().sum() - 1.0));
  }
  const std::size_t p05 = net->poi_index("05");
  const double row05 = mob.attractions()[static_cast<Eigen::Index>(p05)];
  std::size_t largest_gain = 0;
  for (std::size_t p = 0; p < net->poi_count(); ++p) {
    auto gain = [&](std::size_t i) {
      const auto k = static_cast<Eigen::Index>(i);
      return mob.attractions()[k] / base.attractions()[k];
    };
    if (gain(p) > gain(largest_gain)) largest_gain = p;
  }
  const bool pass = identical && worst <= 1e-9 && sum_err <= 1e-9 && std::abs(row05 - 0.0990) <= 5e-4 &&
                    largest_gain == p05;
  return {pass, fmt::format("empty spec run {}; max |d*u - dist|/dist {:.1e}; attraction sums within {:.1e} of 1; "
                            "PoI 05 {:.4f} -> {:.4f} (largest relative gain: {})",
                            identical ? "bit-identical" : "DIFFERS", worst, sum_err,
                            base.attractions()[static_cast<Eigen::Index>(p05)], row05,
                            net->pois()[largest_gain].id)};
}

// --- 8 -----------------------------------------------------------------------

PopulationSeries series(std::initializer_list<std::initializer_list<double>> rows) {
  PopulationSeries s;
  s.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index r = 0;
  for (const auto& row : rows) {
    Eigen::Index c = 0;
    for (double v : row) s.values(r, c++) = v;
    ++r;
  }
  return s;
}

Outcome metrics() {
  std::vector<std::string> fails;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) fails.push_back(what);
  };
  const auto a = mae(series({{2, 4}}), series({{3, 3}}));
  expect(a.overall == 1.0 && a.day_aggregated == 2.0, "[[2,4]] vs [[3,3]]");
  const auto b = mae(series({{2, 4}, {1, 1}}), series({{3, 3}, {1, 3}}));
  expect(b.overall == 1.0 && b.day_aggregated == 4.0 && b.per_area[0] == 1.0 && b.per_area[1] == 1.0, "2x2 MAE");
  const auto z = mae(series({{5, 0}, {2, 7}}), series({{5, 0}, {2, 7}}));
  expect(z.overall == 0.0 && z.day_aggregated == 0.0 && z.per_area.isZero(), "identity");
  expect(b.day_aggregated == b.overall * 4, "day-aggregated = overall x cells");
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    PopulationSeries p, t;
    const auto rows = static_cast<Eigen::Index>(1 + rng.below(8)), cols = static_cast<Eigen::Index>(1 + rng.below(144));
    p.values.resize(rows, cols);
    t.values.resize(rows, cols);
    for (Eigen::Index i = 0; i < p.values.size(); ++i) {
      p.values.data()[i] = static_cast<double>(rng.below(40));
      t.values.data()[i] = static_cast<double>(rng.below(40));
    }
    const auto m = mae(p, t);
    const double cells = static_cast<double>(rows * cols);
    if (std::abs(m.day_aggregated - m.overall * cells) > 1e-12 * std::max(1.0, m.day_aggregated)) {
      expect(false, fmt::format("day-aggregated identity on {}x{}", rows, cols));
      break;
    }
  }
  auto vec = [](std::initializer_list<double> v) {
    VecXd x(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double e : v) x[i++] = e;
    return x;
  };
  expect(cosine(vec({1, 0}), vec({0, 1})) == 0.0, "cosine (1,0) (0,1)");
  expect(std::abs(cosine(vec({1, 1}), vec({2, 2})) - 1.0) < 1e-15, "cosine (1,1) (2,2)");
  expect(std::abs(cosine(vec({3, 1, 4, 1}), vec({3, 1, 4, 1})) - 1.0) < 1e-15, "cosine identical");
  expect(std::abs(cosine(vec({2, 4, 1, 1}), vec({3, 3, 1, 3})) - 22.0 / std::sqrt(22.0 * 28.0)) < 1e-15, "2x2 cosine");
  expect(std::abs(change_cosine(vec({3, 5}), vec({1, 1}), vec({4, 7}), vec({2, 3})) - 1.0) < 1e-15, "change cosine");
  bool threw = false;
  try {
    cosine(vec({0, 0}), vec({1, 2}));
  } catch (const Error& e) {
    threw = e.code() == ErrorCode::ZeroVector;
  }
  expect(threw, "zero vector error");
  std::string detail = "MAE [[2,4]]/[[3,3]] = 1.0, day-aggregated 2; 2x2 overall 1.0, day-aggregated 4; cosine examples";
  for (const auto& f : fails) detail += "; FAILED " + f;
  return {fails.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  auto on = [&](int n) { return wanted.empty() || wanted.count(n) > 0; };
  bool all = true;

  if (on(1)) all &= run_criterion(1, "Gradient correctness", 10, gradients);
  if (on(2)) all &= run_criterion(2, "EM monotonicity and recovery", 30, em);
  if (on(3)) all &= run_criterion(3, "Calibration identities", 10, calibration);
  if (on(4)) all &= run_criterion(4, "Social Force sanity", 10, social_force);
  if (on(5)) {
    const fs::path scratch = fs::temp_directory_path() / fmt::format("flowtwin_acceptance_{}", getpid());
    fs::remove_all(scratch);
    all &= run_criterion(5, "Determinism", 120, [&] { return determinism(scratch); });
    fs::remove_all(scratch);
  }
  if (on(6) || on(9)) {
    synth::TwinOptions opt;
    const auto t0 = Clock::now();
    std::optional<synth::TwinTruth> truth;
    std::string failure;
    try {
      truth = synth::generate_truth(opt);
    } catch (const std::exception& e) {
      failure = e.what();
    }
    const double truth_s = seconds_since(t0);
    std::optional<synth::TwinFit> exit_fit;
    double exit_s = 0.0;
    if (truth) {
      const auto t1 = Clock::now();
      exit_fit = synth::fit_and_replay(*truth, ExitPolicyKind::ExitClass, opt);
      exit_s = seconds_since(t1);
    }
    if (on(6)) {
      const Outcome o = exit_fit ? closed_loop(*exit_fit) : Outcome{false, "truth generation failed: " + failure};
      all &= report(6, "Synthetic-twin closed loop", o, truth_s + exit_s, 300);
    }
    if (on(9)) {
      Outcome o{false, "truth generation failed: " + failure};
      double stamina_s = 0.0;
      if (truth) {
        const auto t2 = Clock::now();
        const auto stamina = synth::fit_and_replay(*truth, ExitPolicyKind::Stamina, opt);
        stamina_s = seconds_since(t2);
        o = exit_contrast(*exit_fit, stamina);
      }
      all &= report(9, "Exit-policy contrast", o, truth_s + exit_s + stamina_s, 600);
    }
  }
  if (on(7)) all &= run_criterion(7, "Intervention identities", 60, intervention);
  if (on(8)) all &= run_criterion(8, "Metric unit suite", 1, metrics);
  return all ? 0 : 1;
}
