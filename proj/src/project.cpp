#include "flowtwin/project.hpp"

#include "flowtwin/csv.hpp"
#include "flowtwin/json_reader.hpp"
#include "flowtwin/rng.hpp"

#include <fmt/format.h>
#include <openssl/evp.h>

#include <chrono>
#include <ctime>
#include <fstream>
#include <sstream>

namespace flowtwin {

// --- config ----------------------------------------------------------------

fs::path ProjectConfig::resolve(const std::string& p) const {
  const fs::path path(p);
  return path.is_absolute() ? path : base_dir / path;
}

SimulationOptions ProjectConfig::simulation(std::uint64_t seed) const {
  SimulationOptions opt;
  opt.dt = dt;
  opt.sample_interval = sample_interval;
  opt.horizon = grid.horizon();
  opt.seed = seed;
  return opt;
}

namespace {

template <typename T>
void positive(JsonReader& r, const nlohmann::json& obj, std::string_view key, const std::string& path, T& out) {
  if (auto v = r.number(obj, key, path, false)) {
    if (*v > 0.0) out = static_cast<T>(*v);
    else r.fail(JsonReader::join(path, key), "must be > 0");
  }
}

void count(JsonReader& r, const nlohmann::json& obj, std::string_view key, const std::string& path,
           std::size_t& out, long long min = 1) {
  if (auto v = r.integer(obj, key, path, false)) {
    if (*v >= min) out = static_cast<std::size_t>(*v);
    else r.fail(JsonReader::join(path, key), fmt::format("must be >= {}", min));
  }
}

std::optional<std::string> optional_path(JsonReader& r, const nlohmann::json& j, std::string_view key) {
  return r.string(j, key, "", false);
}

}  // namespace

ProjectConfig project_config_from_json(const nlohmann::json& j, const fs::path& base_dir) {
  JsonReader r;
  ProjectConfig c;
  c.base_dir = base_dir;
  if (!r.object(j, "", {"network", "counts", "od", "departures", "model", "scenarios", "truth_population",
                        "slot_seconds", "slot_count", "speed_bins", "gmm", "social_force", "simulation",
                        "training", "exit_policy", "decision_mode", "threads", "port"})) {
    r.throw_if_errors();
  }
  if (auto s = r.string(j, "network", "", false)) c.network = *s;
  if (auto s = r.string(j, "counts", "", false)) c.counts = *s;
  if (auto s = r.string(j, "od", "", false)) c.od = *s;
  c.departures = optional_path(r, j, "departures");
  c.model = optional_path(r, j, "model");
  c.truth_population = optional_path(r, j, "truth_population");
  if (const auto* a = r.array(j, "scenarios", "", false)) {
    for (std::size_t i = 0; i < a->size(); ++i) {
      if ((*a)[i].is_string()) c.scenarios.push_back((*a)[i].get<std::string>());
      else r.fail(JsonReader::join("/scenarios", i), "expected a string");
    }
  }

  positive(r, j, "slot_seconds", "", c.grid.slot_seconds);
  count(r, j, "slot_count", "", c.grid.slot_count);

  if (const auto* b = r.field(j, "speed_bins", "", false); b && r.object(*b, "/speed_bins", {"boundaries", "min_speed", "max_speed"})) {
    if (const auto* bounds = r.array(*b, "boundaries", "/speed_bins", false)) {
      std::vector<double> v;
      for (std::size_t i = 0; i < bounds->size(); ++i) {
        const std::string path = JsonReader::join("/speed_bins/boundaries", i);
        if (auto x = r.number_value((*bounds)[i], path)) {
          if (!(*x > 0.0) || (!v.empty() && *x <= v.back())) r.fail(path, "boundaries must be positive and ascending");
          v.push_back(*x);
        }
      }
      c.speed_bins.boundaries = std::move(v);
    }
    positive(r, *b, "min_speed", "/speed_bins", c.speed_bins.min_speed);
    positive(r, *b, "max_speed", "/speed_bins", c.speed_bins.max_speed);
    if (!c.speed_bins.boundaries.empty() && (c.speed_bins.min_speed >= c.speed_bins.boundaries.front() ||
                                             c.speed_bins.max_speed <= c.speed_bins.boundaries.back())) {
      r.fail("/speed_bins", "min_speed and max_speed must lie outside the boundaries");
    }
  }

  if (const auto* g = r.field(j, "gmm", "", false);
      g && r.object(*g, "/gmm", {"components", "max_iterations", "tolerance", "covariance_floor"})) {
    count(r, *g, "components", "/gmm", c.priors.components);
    std::size_t iters = static_cast<std::size_t>(c.priors.em.max_iterations);
    count(r, *g, "max_iterations", "/gmm", iters);
    c.priors.em.max_iterations = static_cast<int>(iters);
    positive(r, *g, "tolerance", "/gmm", c.priors.em.tolerance);
    positive(r, *g, "covariance_floor", "/gmm", c.priors.em.covariance_floor);
  }

  if (const auto* s = r.field(j, "social_force", "", false);
      s && r.object(*s, "/social_force", {"mass", "relaxation", "agent_strength", "agent_range", "radius_sum",
                                          "obstacle_strength", "obstacle_range", "cutoff"})) {
    auto& p = c.social_force;
    const std::string path = "/social_force";
    positive(r, *s, "mass", path, p.mass);
    positive(r, *s, "relaxation", path, p.relaxation);
    positive(r, *s, "agent_strength", path, p.agent_strength);
    positive(r, *s, "agent_range", path, p.agent_range);
    positive(r, *s, "radius_sum", path, p.radius_sum);
    positive(r, *s, "obstacle_strength", path, p.obstacle_strength);
    positive(r, *s, "obstacle_range", path, p.obstacle_range);
    positive(r, *s, "cutoff", path, p.cutoff);
  }

  if (const auto* s = r.field(j, "simulation", "", false);
      s && r.object(*s, "/simulation", {"dt", "sample_interval", "walk_speed_kmh"})) {
    positive(r, *s, "dt", "/simulation", c.dt);
    positive(r, *s, "sample_interval", "/simulation", c.sample_interval);
    positive(r, *s, "walk_speed_kmh", "/simulation", c.walk_speed_kmh);
  }

  if (const auto* t = r.field(j, "training", "", false);
      t && r.object(*t, "/training", {"hidden", "head", "mixtures", "learning_rate", "momentum", "batch_size",
                                      "epochs", "l2"})) {
    auto& o = c.training;
    if (const auto* h = r.array(*t, "hidden", "/training", false)) {
      o.hidden.clear();
      for (std::size_t i = 0; i < h->size(); ++i) {
        const auto& v = (*h)[i];
        if (v.is_number_integer() && v.get<long long>() > 0) o.hidden.push_back(v.get<std::size_t>());
        else r.fail(JsonReader::join("/training/hidden", i), "expected a positive integer");
      }
    }
    if (auto h = r.string(*t, "head", "/training", false)) {
      if (*h == "softmax") o.head = HeadType::Softmax;
      else if (*h == "mos") o.head = HeadType::MixtureOfSoftmax;
      else r.fail("/training/head", "expected \"softmax\" or \"mos\"");
    }
    count(r, *t, "mixtures", "/training", o.mixtures);
    if (auto v = r.number(*t, "learning_rate", "/training", false)) {
      if (*v >= 0.0) o.learning_rate = *v;
      else r.fail("/training/learning_rate", "must be >= 0");
    }
    if (auto v = r.number(*t, "momentum", "/training", false)) {
      if (*v >= 0.0 && *v < 1.0) o.momentum = *v;
      else r.fail("/training/momentum", "must be in [0, 1)");
    }
    count(r, *t, "batch_size", "/training", o.batch_size);
    count(r, *t, "epochs", "/training", o.epochs, 0);
    if (auto v = r.number(*t, "l2", "/training", false)) {
      if (*v >= 0.0) o.l2 = *v;
      else r.fail("/training/l2", "must be >= 0");
    }
  }

  if (auto s = r.string(j, "exit_policy", "", false)) {
    if (*s == "exit_class") c.exit_policy = ExitPolicyKind::ExitClass;
    else if (*s == "stamina") c.exit_policy = ExitPolicyKind::Stamina;
    else r.fail("/exit_policy", "expected \"exit_class\" or \"stamina\"");
  }
  if (auto s = r.string(j, "decision_mode", "", false)) {
    if (*s == "deterministic") c.decision_mode = DecisionMode::Deterministic;
    else if (*s == "probabilistic") c.decision_mode = DecisionMode::Probabilistic;
    else r.fail("/decision_mode", "expected \"deterministic\" or \"probabilistic\"");
  }
  std::size_t threads = c.threads;
  count(r, j, "threads", "", threads);
  c.threads = static_cast<unsigned>(threads);
  if (auto p = r.integer(j, "port", "", false)) {
    if (*p >= 0 && *p <= 65535) c.port = static_cast<int>(*p);
    else r.fail("/port", "must be in [0, 65535]");
  }
  r.throw_if_errors();
  c.training.threads = c.threads;
  return c;
}

nlohmann::json to_json(const ProjectConfig& c) {
  nlohmann::json j = {
      {"network", c.network},
      {"counts", c.counts},
      {"od", c.od},
      {"scenarios", c.scenarios},
      {"slot_seconds", c.grid.slot_seconds},
      {"slot_count", c.grid.slot_count},
      {"speed_bins",
       {{"boundaries", c.speed_bins.boundaries},
        {"min_speed", c.speed_bins.min_speed},
        {"max_speed", c.speed_bins.max_speed}}},
      {"gmm",
       {{"components", c.priors.components},
        {"max_iterations", c.priors.em.max_iterations},
        {"tolerance", c.priors.em.tolerance},
        {"covariance_floor", c.priors.em.covariance_floor}}},
      {"social_force",
       {{"mass", c.social_force.mass},
        {"relaxation", c.social_force.relaxation},
        {"agent_strength", c.social_force.agent_strength},
        {"agent_range", c.social_force.agent_range},
        {"radius_sum", c.social_force.radius_sum},
        {"obstacle_strength", c.social_force.obstacle_strength},
        {"obstacle_range", c.social_force.obstacle_range},
        {"cutoff", c.social_force.cutoff}}},
      {"simulation", {{"dt", c.dt}, {"sample_interval", c.sample_interval}, {"walk_speed_kmh", c.walk_speed_kmh}}},
      {"training",
       {{"hidden", c.training.hidden},
        {"head", to_string(c.training.head)},
        {"mixtures", c.training.mixtures},
        {"learning_rate", c.training.learning_rate},
        {"momentum", c.training.momentum},
        {"batch_size", c.training.batch_size},
        {"epochs", c.training.epochs},
        {"l2", c.training.l2}}},
      {"exit_policy", to_string(c.exit_policy)},
      {"decision_mode", to_string(c.decision_mode)},
      {"threads", c.threads},
      {"port", c.port},
  };
  if (c.departures) j["departures"] = *c.departures;
  if (c.model) j["model"] = *c.model;
  if (c.truth_population) j["truth_population"] = *c.truth_population;
  return j;
}

ProjectConfig load_project_config(const std::string& path) {
  require_file(path, "config file not found");
  const fs::path p(path);
  return project_config_from_json(read_json_file(path), p.has_parent_path() ? p.parent_path() : fs::path("."));
}

// --- manifests ---------------------------------------------------------------

const char* to_string(RunStatus s) {
  switch (s) {
    case RunStatus::Queued: return "queued";
    case RunStatus::Running: return "running";
    case RunStatus::Done: return "done";
    case RunStatus::Failed: return "failed";
  }
  return "?";
}

void RunManifest::advance(RunStatus next) {
  const bool ok = (status == RunStatus::Queued && next != RunStatus::Queued) ||
                  (status == RunStatus::Running && (next == RunStatus::Done || next == RunStatus::Failed));
  if (!ok) {
    throw Error(ErrorCode::Validation, fmt::format("run {}: {} -> {}", run_id, to_string(status), to_string(next)));
  }
  status = next;
  if (next == RunStatus::Running) started = utc_timestamp();
  else finished = utc_timestamp();
}

nlohmann::json to_json(const RunManifest& m) {
  nlohmann::json j = {{"run_id", m.run_id},   {"command", m.command},       {"inputs", m.inputs},
                      {"seed", nullptr},      {"parameters", m.parameters}, {"created", m.created},
                      {"started", m.started}, {"finished", m.finished},     {"outputs", m.outputs},
                      {"status", to_string(m.status)}};
  if (m.seed) j["seed"] = *m.seed;
  if (!m.error.empty()) j["error"] = m.error;
  return j;
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::Io, "sha256 failed");
  }
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_text(path)); }

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  return fmt::format("{}.{:03d}Z", buf, static_cast<int>(ms));
}

// --- files -------------------------------------------------------------------

void require_file(const fs::path& p, const std::string& hint) {
  if (!fs::is_regular_file(p)) throw MissingInputError(p.string(), hint);
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw MissingInputError(p.string(), "cannot open");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + tmp.string());
    out << text;
    if (!out) throw Error(ErrorCode::Io, "write failed: " + tmp.string());
  }
  fs::rename(tmp, p);
}

namespace {

std::ifstream open_input(const fs::path& p) {
  require_file(p, "input file not found");
  std::ifstream in(p);
  if (!in) throw MissingInputError(p.string(), "cannot open");
  return in;
}

template <typename F>
std::string render(F&& f) {
  std::ostringstream out;
  f(out);
  return out.str();
}

}  // namespace

std::shared_ptr<const Network> load_network(const fs::path& p) {
  require_file(p, "network file not found");
  auto net = std::make_shared<const Network>(Network::from_json(read_json_file(p.string())));
  const auto problems = net->invariant_violations();
  if (!problems.empty()) {
    std::vector<FieldError> errors;
    for (const auto& msg : problems) errors.push_back({p.string(), msg});
    throw ValidationError(errors);
  }
  return net;
}

InterventionSpec load_scenario(const fs::path& p, const Network& net) {
  require_file(p, "scenario file not found");
  auto spec = intervention_from_json(read_json_file(p.string()));
  auto errors = intervention_errors(spec, net);
  if (!errors.empty()) throw ValidationError(errors);
  return spec;
}

std::vector<DepartureEvent> load_departures(const fs::path& p, const Network& net) {
  auto in = open_input(p);
  return read_departures(in, net, p.string());
}

std::shared_ptr<const ChoiceModel> load_model(const fs::path& p, const Network& net) {
  require_file(p, "model file not found");
  auto model = choice_model_from_json(read_json_file(p.string()));
  std::vector<std::string> ids;
  for (const auto& poi : net.pois()) ids.push_back(poi.id);
  if (model.poi_ids != ids) throw ValidationError("/poi_ids", "model PoIs do not match the network");
  return std::make_shared<const ChoiceModel>(std::move(model));
}

// --- stages ------------------------------------------------------------------

namespace {

std::vector<OdSample> load_od(const ProjectConfig& cfg, const Network& net) {
  const auto path = cfg.resolve(cfg.od);
  auto in = open_input(path);
  return read_od_samples(in, net, path.string());
}

std::vector<std::string> poi_ids(const Network& net) {
  std::vector<std::string> ids;
  for (const auto& p : net.pois()) ids.push_back(p.id);
  return ids;
}

}  // namespace

std::vector<fs::path> stage_fit_prior(const ProjectConfig& cfg, const ProjectPaths& out, std::uint64_t seed) {
  const auto net = load_network(cfg.resolve(cfg.network));
  const auto samples = load_od(cfg, *net);
  const auto priors = fit_priors(samples, net->area_count(), cfg.priors, derive_seed(seed, "priors"), cfg.threads);
  write_text(out.priors(), priors_to_json(priors, *net).dump(2) + "\n");
  return {out.priors()};
}

std::vector<fs::path> stage_reconstruct(const ProjectConfig& cfg, const ProjectPaths& out, std::uint64_t seed) {
  require_file(out.priors(), "run fit-prior first");
  const auto net = load_network(cfg.resolve(cfg.network));
  const auto samples = load_od(cfg, *net);
  const auto counts_path = cfg.resolve(cfg.counts);
  auto counts_in = open_input(counts_path);
  const auto counts = read_spot_counts(counts_in, *net, cfg.grid, counts_path.string());
  const auto priors = priors_from_json(read_json_file(out.priors().string()), *net);

  const auto tensor = aggregate_od(samples, *net, cfg.grid, cfg.speed_bins);
  const auto pairs = transition_counts(tensor, net->area_count());
  SamplingReport sampling;
  const auto demand =
      sample_demand(priors, pairs, *net, cfg.grid, cfg.speed_bins, derive_seed(seed, "demand"), cfg.threads, &sampling);
  const auto cal = calibrate_scale(demand, counts, contribution_map(*net));
  const auto departures = instantiate_departures(cal.scenario, cfg.grid, cfg.speed_bins, derive_seed(seed, "departures"));

  nlohmann::json ratios = nlohmann::json::object();
  for (const auto& [slot, r] : cal.ratios) ratios[std::to_string(slot)] = r;
  nlohmann::json flagged = nlohmann::json::array();
  for (const auto& [m, n] : sampling.flagged_pairs) flagged.push_back({net->areas()[m].id, net->areas()[n].id});
  const nlohmann::json report = {{"od_samples", samples.size()},
                                 {"od_rejected", tensor.rejected},
                                 {"demand_total", demand.total()},
                                 {"calibrated_total", cal.scenario.total()},
                                 {"departures", departures.size()},
                                 {"ratios", ratios},
                                 {"zero_denominator_slots", cal.zero_denominator_slots},
                                 {"flagged", cal.flagged},
                                 {"flagged_pairs", flagged}};

  write_text(out.demand(), render([&](std::ostream& o) { write_demand(o, demand, *net); }));
  write_text(out.calibrated_demand(), render([&](std::ostream& o) { write_demand(o, cal.scenario, *net); }));
  write_text(out.departures(), render([&](std::ostream& o) { write_departures(o, departures, *net); }));
  write_text(out.calibration(), report.dump(2) + "\n");
  return {out.demand(), out.calibrated_demand(), out.departures(), out.calibration()};
}

SimulationOutput simulate_scenario(const ProjectConfig& cfg, const EnvironmentView& base,
                                   const InterventionSpec& scenario, std::span<const DepartureEvent> departures,
                                   const DestinationPolicy& policy, std::uint64_t seed) {
  auto run = run_counterfactual(policy, base, scenario, departures, cfg.social_force, cfg.simulation(seed));
  SimulationOutput out;
  out.population = population_series(run.result.trajectories, base.network(), cfg.grid);
  out.result = std::move(run.result);
  return out;
}

std::vector<fs::path> stage_simulate(const ProjectConfig& cfg, const ProjectPaths& out, const SimulateArgs& args,
                                     std::uint64_t seed) {
  const auto net = load_network(cfg.resolve(cfg.network));
  const auto departures = load_departures(args.departures, *net);
  const InterventionSpec scenario = args.scenario ? load_scenario(*args.scenario, *net) : InterventionSpec{};
  const auto base = EnvironmentView::baseline(net, kmh_to_mps(cfg.walk_speed_kmh));

  std::unique_ptr<DestinationPolicy> policy;
  if (args.model) policy = std::make_unique<ModelPolicy>(load_model(*args.model, *net));
  else policy = std::make_unique<OdReplayPolicy>();

  const auto sim = simulate_scenario(cfg, base, scenario, departures, *policy, seed);
  const fs::path dir = out.run_dir(args.name);
  const std::vector<fs::path> files{dir / "trajectories.jsonl", dir / "events.csv", dir / "population.csv",
                                    dir / "summary.json"};
  write_text(files[0], render([&](std::ostream& o) { write_trajectory_samples(o, sim.result.trajectories, *net); }));
  write_text(files[1], render([&](std::ostream& o) { write_trajectory_events(o, sim.result.trajectories, *net); }));
  write_text(files[2], render([&](std::ostream& o) { write_population(o, sim.population, *net); }));
  const nlohmann::json summary = {{"agents", sim.result.trajectories.size()},
                                  {"faults", sim.result.faults},
                                  {"scenario", scenario.label},
                                  {"policy", args.model ? "model" : "od_replay"},
                                  {"population", population_to_json(sim.population, *net)}};
  write_text(files[3], summary.dump(2) + "\n");
  return files;
}

std::vector<fs::path> stage_build_trainset(const ProjectConfig& cfg, const ProjectPaths& out,
                                           const std::vector<TrainsetDay>& days) {
  if (days.empty()) throw ValidationError("--events", "at least one events file is required");
  const auto net = load_network(cfg.resolve(cfg.network));
  const auto base = EnvironmentView::baseline(net, kmh_to_mps(cfg.walk_speed_kmh));

  std::vector<std::vector<TrajectoryRecord>> trajectories;
  std::vector<EnvironmentView> envs;
  std::vector<double> totals;
  for (const auto& day : days) {
    auto in = open_input(day.events);
    trajectories.push_back(read_trajectory_events(in, *net, day.events.string()));
    envs.push_back(day.scenario ? apply_intervention(base, load_scenario(*day.scenario, *net)) : base);
    for (const auto& t : trajectories.back()) totals.push_back(t.total_distance());
  }
  ExitPolicy exit;
  exit.kind = cfg.exit_policy;
  if (cfg.exit_policy == ExitPolicyKind::Stamina) exit = fit_stamina(totals);

  std::vector<DecisionRecord> data;
  nlohmann::json sources = nlohmann::json::array();
  for (std::size_t d = 0; d < days.size(); ++d) {
    auto records = build_training_set(trajectories[d], envs[d], exit);
    sources.push_back({{"events", days[d].events.string()},
                       {"scenario", days[d].scenario ? nlohmann::json(days[d].scenario->string()) : nullptr},
                       {"trajectories", trajectories[d].size()},
                       {"records", records.size()}});
    data.insert(data.end(), std::make_move_iterator(records.begin()), std::make_move_iterator(records.end()));
  }
  const FeatureLayout layout{net->poi_count()};
  write_text(out.trainset(), render([&](std::ostream& o) { write_training_set(o, data, layout, poi_ids(*net)); }));
  const nlohmann::json meta = {
      {"exit_policy", {{"type", to_string(exit.kind)}, {"log_mean", exit.log_mean}, {"log_sd", exit.log_sd}}},
      {"records", data.size()},
      {"days", sources}};
  write_text(out.trainset_meta(), meta.dump(2) + "\n");
  return {out.trainset(), out.trainset_meta()};
}

std::vector<fs::path> stage_train(const ProjectConfig& cfg, const ProjectPaths& out, std::uint64_t seed) {
  require_file(out.trainset(), "run build-trainset first");
  require_file(out.trainset_meta(), "run build-trainset first");
  const auto net = load_network(cfg.resolve(cfg.network));
  const auto meta = read_json_file(out.trainset_meta().string());

  JsonReader r;
  ExitPolicy exit;
  const std::string path = "/exit_policy";
  const auto* e = r.field(meta, "exit_policy", "", true);
  if (e && r.object(*e, path, {"type", "log_mean", "log_sd"})) {
    const auto type = r.string(*e, "type", path);
    if (type == "stamina") exit.kind = ExitPolicyKind::Stamina;
    else if (type && *type != "exit_class") r.fail(path + "/type", "expected \"exit_class\" or \"stamina\"");
    exit.log_mean = r.number(*e, "log_mean", path).value_or(exit.log_mean);
    exit.log_sd = r.number(*e, "log_sd", path).value_or(exit.log_sd);
  }
  r.throw_if_errors();

  const FeatureLayout layout{net->poi_count()};
  auto in = open_input(out.trainset());
  const auto data = read_training_set(in, layout, poi_ids(*net), out.trainset().string());
  auto result = train(data, net->poi_count(), exit, cfg.training, derive_seed(seed, "train"));
  result.model.mode = cfg.decision_mode;
  result.model.poi_ids = poi_ids(*net);
  write_text(out.model(), to_json(result.model).dump(2) + "\n");
  return {out.model()};
}

std::vector<fs::path> stage_evaluate(const ProjectConfig& cfg, const ProjectPaths& out, const EvaluateArgs& args) {
  const auto net = load_network(cfg.resolve(cfg.network));
  auto load = [&](const fs::path& p) {
    auto in = open_input(p);
    return read_population(in, *net, cfg.grid, p.string());
  };
  if (args.pred_base.has_value() != args.truth_base.has_value()) {
    throw ValidationError(args.pred_base ? "--truth-base" : "--pred-base",
                          "change cosine needs both baseline series");
  }
  const auto pred = load(args.pred);
  const auto truth = load(args.truth);
  std::optional<PopulationSeries> pred_base, truth_base;
  if (args.pred_base) {
    pred_base = load(*args.pred_base);
    truth_base = load(*args.truth_base);
  }
  std::vector<std::string> ids;
  for (const auto& a : net->areas()) ids.push_back(a.id);
  auto report = evaluate(pred, truth, ids, pred_base ? &*pred_base : nullptr, truth_base ? &*truth_base : nullptr);
  report.metadata = {{"label", args.label.empty() ? args.pred.stem().string() : args.label},
                     {"pred", args.pred.string()},
                     {"truth", args.truth.string()}};
  write_text(out.metrics(), to_json(report).dump(2) + "\n");
  return {out.metrics()};
}

std::string render_report(const std::vector<nlohmann::json>& metrics, const std::vector<std::string>& labels) {
  std::size_t width = 5;
  for (const auto& l : labels) width = std::max(width, l.size());
  std::string text = fmt::format("{:<{}}  {:>8}  {:>18}  {:>10}  {:>10}\n", "Model", width, "MAE",
                                 "Day-aggregated MAE", "Population", "Change");
  auto cell = [](const nlohmann::json& v) {
    return v.is_number() ? fmt::format("{:.3f}", v.get<double>()) : std::string("-");
  };
  for (std::size_t i = 0; i < metrics.size(); ++i) {
    const auto& m = metrics[i];
    text += fmt::format("{:<{}}  {:>8}  {:>18}  {:>10}  {:>10}\n", labels[i], width, cell(m.at("mae")),
                        fmt::format("{:.1f}", m.at("mae_day_aggregated").get<double>()),
                        cell(m.at("cosine_population")), cell(m.at("cosine_change")));
  }
  return text;
}

std::vector<fs::path> stage_report(const ProjectPaths& out, const std::vector<fs::path>& metrics) {
  if (metrics.empty()) require_file(out.metrics(), "run evaluate first");
  const std::vector<fs::path> files = metrics.empty() ? std::vector<fs::path>{out.metrics()} : metrics;
  std::vector<nlohmann::json> docs;
  std::vector<std::string> labels;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& f : files) {
    require_file(f, "metrics file not found");
    auto j = read_json_file(f.string());
    JsonReader r;
    if (r.object(j, "", {"mae_per_area", "mae", "mae_day_aggregated", "cosine_population", "cosine_change",
                         "metadata"})) {
      r.number(j, "mae", "");
      r.number(j, "mae_day_aggregated", "");
      r.number(j, "cosine_population", "");
      if (!j.contains("cosine_change")) r.fail("/cosine_change", "required field missing");
      else if (!j["cosine_change"].is_null()) r.number(j, "cosine_change", "");
    }
    if (!r.ok()) {
      auto errors = r.errors();
      for (auto& e : errors) e.path = f.string() + "#" + e.path;
      throw ValidationError(errors);
    }
    std::string label = f.parent_path().filename().string();
    if (j.contains("metadata") && j["metadata"].is_object() && j["metadata"].contains("label") &&
        j["metadata"]["label"].is_string()) {
      label = j["metadata"]["label"].get<std::string>();
    }
    if (label.empty()) label = f.stem().string();
    rows.push_back({{"model", label},
                    {"mae", j["mae"]},
                    {"mae_day_aggregated", j["mae_day_aggregated"]},
                    {"cosine_population", j["cosine_population"]},
                    {"cosine_change", j["cosine_change"]},
                    {"source", f.string()}});
    labels.push_back(label);
    docs.push_back(std::move(j));
  }
  write_text(out.report_json(), nlohmann::json{{"rows", rows}}.dump(2) + "\n");
  write_text(out.report_text(), render_report(docs, labels));
  return {out.report_json(), out.report_text()};
}

}  // namespace flowtwin
