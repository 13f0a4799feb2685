#include "flowtwin/serve.hpp"

#include "flowtwin/json_reader.hpp"

#include <fmt/format.h>
#include <httplib.h>

#include <condition_variable>
#include <cstdlib>
#include <deque>
#include <mutex>
#include <regex>
#include <shared_mutex>
#include <sstream>
#include <thread>

namespace flowtwin {

int serve_port(const ProjectConfig& config) {
  if (const char* env = std::getenv(kPortEnv); env && *env) {
    try {
      std::size_t used = 0;
      const int port = std::stoi(env, &used);
      if (used == std::string(env).size() && port >= 0 && port <= 65535) return port;
    } catch (const std::exception&) {
    }
    throw ValidationError(std::string("$") + kPortEnv, "expected a port number in [0, 65535]");
  }
  return config.port;
}

ServeContext load_serve_context(const ProjectConfig& config, const ProjectPaths& paths) {
  ServeContext ctx;
  ctx.config = config;
  ctx.paths = paths;
  const auto net_path = config.resolve(config.network);
  ctx.network = load_network(net_path);
  ctx.input_digests[net_path.string()] = sha256_file(net_path);

  fs::path deps = paths.departures();
  if (!fs::exists(deps)) {
    if (!config.departures) throw MissingInputError(deps.string(), "run reconstruct first or set \"departures\"");
    deps = config.resolve(*config.departures);
  }
  ctx.departures = load_departures(deps, *ctx.network);
  ctx.input_digests[deps.string()] = sha256_file(deps);

  std::optional<fs::path> model = fs::exists(paths.model()) ? std::optional<fs::path>(paths.model()) : std::nullopt;
  if (!model && config.model) model = config.resolve(*config.model);
  if (model) {
    ctx.model = load_model(*model, *ctx.network);
    ctx.input_digests[model->string()] = sha256_file(*model);
  }
  if (config.truth_population) {
    const auto p = config.resolve(*config.truth_population);
    std::istringstream in(read_text(p));
    ctx.truth = read_population(in, *ctx.network, config.grid, p.string());
    ctx.input_digests[p.string()] = sha256_file(p);
  }

  InterventionSpec baseline;
  baseline.label = "baseline";
  ctx.scenarios.emplace_back("baseline", baseline);
  for (const auto& s : config.scenarios) {
    const auto p = config.resolve(s);
    auto spec = load_scenario(p, *ctx.network);
    std::string id = spec.label.empty() ? p.stem().string() : spec.label;
    for (const auto& [existing, _] : ctx.scenarios) {
      if (existing == id) throw ValidationError("/scenarios", "duplicate scenario id " + id);
    }
    ctx.scenarios.emplace_back(id, std::move(spec));
  }
  return ctx;
}

namespace {

using json = nlohmann::json;

json errors_json(const std::vector<FieldError>& errors) {
  json list = json::array();
  for (const auto& e : errors) list.push_back({{"path", e.path}, {"message", e.message}});
  return list;
}

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, int status, const std::string& message,
                 const std::vector<FieldError>& errors = {}) {
  json body = {{"error", message}};
  if (!errors.empty()) body["errors"] = errors_json(errors);
  reply(res, status, body);
}

bool usable_id(const std::string& s) {
  static const std::regex re("[A-Za-z0-9_.-]{1,64}");
  return std::regex_match(s, re);
}

struct RunResult {
  PopulationSeries population;
  json metrics;
};

struct Run {
  RunManifest manifest;
  std::string scenario;
  std::shared_ptr<const RunResult> result;  // set once, when done
};

}  // namespace

struct Service::Impl {
  explicit Impl(ServeContext c) : ctx(std::move(c)), base(EnvironmentView::baseline(ctx.network, kmh_to_mps(ctx.config.walk_speed_kmh))) {
    if (ctx.model) policy = std::make_unique<ModelPolicy>(ctx.model);
    else policy = std::make_unique<OdReplayPolicy>();
    for (auto& [id, spec] : ctx.scenarios) scenarios.emplace(id, spec);
    for (const auto& [id, _] : ctx.scenarios) scenario_order.push_back(id);
    routes();
    worker = std::thread([this] { work(); });
  }

  ~Impl() {
    {
      std::lock_guard lock(queue_mutex);
      stopping = true;
    }
    queue_cv.notify_all();
    server.stop();
    if (worker.joinable()) worker.join();
  }

  ServeContext ctx;
  EnvironmentView base;
  std::unique_ptr<DestinationPolicy> policy;
  httplib::Server server;

  mutable std::shared_mutex state_mutex;  // scenarios and runs
  std::map<std::string, InterventionSpec> scenarios;
  std::vector<std::string> scenario_order;
  std::map<std::string, Run> runs;
  std::vector<std::string> run_order;
  std::size_t scenario_counter = 0;

  std::mutex queue_mutex;
  std::condition_variable queue_cv;
  std::condition_variable idle_cv;
  std::deque<std::string> queue;
  bool busy = false;
  bool stopping = false;
  std::thread worker;

  std::mutex io_mutex;

  fs::path run_dir(const std::string& id) const { return ctx.paths.out / "serve" / id; }

  void persist_manifest(const RunManifest& m) {
    std::lock_guard lock(io_mutex);
    write_text(run_dir(m.run_id) / "manifest.json", to_json(m).dump(2) + "\n");
  }

  // --- worker --------------------------------------------------------------

  void work() {
    for (;;) {
      std::string id;
      {
        std::unique_lock lock(queue_mutex);
        queue_cv.wait(lock, [&] { return stopping || !queue.empty(); });
        if (stopping) return;
        id = queue.front();
        queue.pop_front();
        busy = true;
      }
      execute(id);
      {
        std::lock_guard lock(queue_mutex);
        busy = false;
      }
      idle_cv.notify_all();
    }
  }

  void execute(const std::string& id) {
    InterventionSpec spec;
    RunManifest manifest;
    {
      std::unique_lock lock(state_mutex);
      auto& run = runs.at(id);
      run.manifest.advance(RunStatus::Running);
      manifest = run.manifest;
      spec = scenarios.at(run.scenario);
    }
    persist_manifest(manifest);
    try {
      const auto sim = simulate_scenario(ctx.config, base, spec, ctx.departures, *policy, *manifest.seed);
      auto result = std::make_shared<RunResult>();
      result->population = sim.population;
      result->metrics = metrics(manifest, sim);
      std::vector<std::string> outputs;
      {
        std::lock_guard lock(io_mutex);
        std::ostringstream csv;
        write_population(csv, sim.population, *ctx.network);
        write_text(run_dir(id) / "population.csv", csv.str());
        write_text(run_dir(id) / "metrics.json", result->metrics.dump(2) + "\n");
        outputs = {(run_dir(id) / "population.csv").string(), (run_dir(id) / "metrics.json").string()};
      }
      {
        std::unique_lock lock(state_mutex);
        auto& run = runs.at(id);
        run.result = std::move(result);
        run.manifest.outputs = outputs;
        run.manifest.advance(RunStatus::Done);
        manifest = run.manifest;
      }
    } catch (const std::exception& e) {
      std::unique_lock lock(state_mutex);
      auto& run = runs.at(id);
      run.manifest.error = e.what();
      run.manifest.advance(RunStatus::Failed);
      manifest = run.manifest;
    }
    persist_manifest(manifest);
  }

  json metrics(const RunManifest& m, const SimulationOutput& sim) const {
    const auto& pop = sim.population;
    json mean = json::object(), peak = json::object();
    for (Eigen::Index a = 0; a < pop.areas(); ++a) {
      const auto& id = ctx.network->areas()[static_cast<std::size_t>(a)].id;
      mean[id] = pop.values.row(a).mean();
      peak[id] = pop.values.row(a).maxCoeff();
    }
    std::size_t visits = 0;
    for (const auto& t : sim.result.trajectories) visits += t.visits.size();
    json j = {{"run_id", m.run_id},
              {"agents", sim.result.trajectories.size()},
              {"visits", visits},
              {"faults", sim.result.faults},
              {"area_mean", mean},
              {"area_peak", peak},
              {"vs_truth", nullptr}};
    if (ctx.truth) {
      std::vector<std::string> ids;
      for (const auto& a : ctx.network->areas()) ids.push_back(a.id);
      j["vs_truth"] = to_json(evaluate(pop, *ctx.truth, ids));
    }
    return j;
  }

  // --- handlers ------------------------------------------------------------

  json scenario_json(const std::string& id) const {
    return {{"id", id}, {"scenario", to_json(scenarios.at(id))}};
  }

  json run_json(const Run& run) const {
    json j = to_json(run.manifest);
    j["scenario"] = run.scenario;
    return j;
  }

  // Looks up a run for a result endpoint; replies 404/409 and returns null
  // when it is unknown or unfinished.
  std::shared_ptr<const RunResult> finished(const std::string& id, httplib::Response& res) const {
    std::shared_lock lock(state_mutex);
    auto it = runs.find(id);
    if (it == runs.end()) {
      reply_error(res, 404, "unknown run " + id);
      return nullptr;
    }
    if (!it->second.result) {
      reply(res, 409, {{"error", "run not finished"}, {"run_id", id}, {"status", to_string(it->second.manifest.status)}});
      return nullptr;
    }
    return it->second.result;
  }

  void post_scenario(const httplib::Request& req, httplib::Response& res) {
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::parse_error& e) {
      reply_error(res, 422, "invalid scenario", {{"/", std::string("malformed JSON: ") + e.what()}});
      return;
    }
    InterventionSpec spec;
    try {
      spec = intervention_from_json(body);
    } catch (const ValidationError& e) {
      reply_error(res, 422, "invalid scenario", e.errors());
      return;
    }
    if (auto errors = intervention_errors(spec, *ctx.network); !errors.empty()) {
      reply_error(res, 422, "invalid scenario", errors);
      return;
    }
    std::unique_lock lock(state_mutex);
    std::string id = spec.label;
    if (!usable_id(id) || scenarios.count(id)) {
      do {
        id = fmt::format("scenario-{}", ++scenario_counter);
      } while (scenarios.count(id));
    }
    scenarios.emplace(id, std::move(spec));
    scenario_order.push_back(id);
    reply(res, 201, scenario_json(id));
  }

  void post_run(const httplib::Request& req, httplib::Response& res) {
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::parse_error& e) {
      reply_error(res, 422, "invalid run request", {{"/", std::string("malformed JSON: ") + e.what()}});
      return;
    }
    JsonReader r;
    std::optional<std::string> scenario;
    std::optional<std::uint64_t> seed;
    if (r.object(body, "", {"scenario", "seed"})) {
      scenario = r.id(body, "scenario", "");
      if (const auto* s = r.field(body, "seed", "", false)) {
        if (s->is_number_unsigned()) seed = s->get<std::uint64_t>();
        else if (s->is_number_integer() && s->get<long long>() >= 0) seed = static_cast<std::uint64_t>(s->get<long long>());
        else r.fail("/seed", "expected a non-negative integer");
      }
    }
    if (!r.ok()) {
      reply_error(res, 422, "invalid run request", r.errors());
      return;
    }
    RunManifest manifest;
    {
      std::unique_lock lock(state_mutex);
      auto it = scenarios.find(*scenario);
      if (it == scenarios.end()) {
        reply_error(res, 404, "unknown scenario " + *scenario);
        return;
      }
      if (!seed) seed = it->second.seed;
      if (!seed) {
        reply_error(res, 422, "invalid run request", {{"/seed", "required (the scenario has no seed)"}});
        return;
      }
      manifest.run_id = fmt::format("run-{:04d}", runs.size() + 1);
      manifest.command = "serve/run";
      manifest.seed = seed;
      manifest.created = utc_timestamp();
      manifest.inputs = ctx.input_digests;
      const std::string scenario_text = to_json(it->second).dump();
      manifest.inputs["scenario:" + *scenario] = sha256_hex(scenario_text);
      manifest.parameters = {{"scenario", *scenario}, {"policy", ctx.model ? "model" : "od_replay"}};
      runs.emplace(manifest.run_id, Run{manifest, *scenario, nullptr});
      run_order.push_back(manifest.run_id);
    }
    persist_manifest(manifest);
    {
      std::lock_guard lock(queue_mutex);
      queue.push_back(manifest.run_id);
    }
    queue_cv.notify_one();
    reply(res, 202, {{"run_id", manifest.run_id}, {"status", to_string(RunStatus::Queued)}});
  }

  void routes() {
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                {"Access-Control-Allow-Headers", "Content-Type"},
                                {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
    server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      std::string what = "internal error";
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        what = e.what();
      } catch (...) {
      }
      reply_error(res, 500, what);
    });

    server.Get("/network", [this](const httplib::Request&, httplib::Response& res) {
      reply(res, 200, ctx.network->to_geojson());
    });

    server.Get("/scenarios", [this](const httplib::Request&, httplib::Response& res) {
      std::shared_lock lock(state_mutex);
      json list = json::array();
      for (const auto& id : scenario_order) list.push_back(scenario_json(id));
      reply(res, 200, list);
    });
    server.Get(R"(/scenarios/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      std::shared_lock lock(state_mutex);
      const std::string id = req.matches[1];
      if (!scenarios.count(id)) return reply_error(res, 404, "unknown scenario " + id);
      reply(res, 200, scenario_json(id));
    });
    server.Post("/scenarios", [this](const httplib::Request& req, httplib::Response& res) { post_scenario(req, res); });

    server.Post("/runs", [this](const httplib::Request& req, httplib::Response& res) { post_run(req, res); });
    server.Get("/runs", [this](const httplib::Request&, httplib::Response& res) {
      std::shared_lock lock(state_mutex);
      json list = json::array();
      for (const auto& id : run_order) list.push_back(run_json(runs.at(id)));
      reply(res, 200, list);
    });
    server.Get(R"(/runs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      std::shared_lock lock(state_mutex);
      auto it = runs.find(req.matches[1]);
      if (it == runs.end()) return reply_error(res, 404, "unknown run " + std::string(req.matches[1]));
      reply(res, 200, run_json(it->second));
    });
    server.Get(R"(/runs/([^/]+)/population)", [this](const httplib::Request& req, httplib::Response& res) {
      const auto result = finished(req.matches[1], res);
      if (!result) return;
      if (req.has_param("format") && req.get_param_value("format") == "csv") {
        std::ostringstream csv;
        write_population(csv, result->population, *ctx.network);
        res.status = 200;
        res.set_content(csv.str(), "text/csv");
        return;
      }
      reply(res, 200, population_to_json(result->population, *ctx.network));
    });
    server.Get(R"(/runs/([^/]+)/metrics)", [this](const httplib::Request& req, httplib::Response& res) {
      const auto result = finished(req.matches[1], res);
      if (result) reply(res, 200, result->metrics);
    });
    server.Get(R"(/runs/([^/]+)/diff)", [this](const httplib::Request& req, httplib::Response& res) {
      if (!req.has_param("base")) return reply_error(res, 400, "missing query parameter base");
      const std::string id = req.matches[1];
      const std::string base_id = req.get_param_value("base");
      const auto a = finished(id, res);
      if (!a) return;
      const auto b = finished(base_id, res);
      if (!b) return;
      json body = population_to_json(difference(a->population, b->population), *ctx.network);
      body["run_id"] = id;
      body["base"] = base_id;
      reply(res, 200, body);
    });
  }
};

Service::Service(ServeContext ctx) : impl_(std::make_unique<Impl>(std::move(ctx))) {}

Service::~Service() = default;

int Service::bind(const std::string& host, int port) {
  if (port == 0) return impl_->server.bind_to_any_port(host);
  return impl_->server.bind_to_port(host, port) ? port : -1;
}

void Service::listen() { impl_->server.listen_after_bind(); }

void Service::stop() { impl_->server.stop(); }

void Service::wait_idle() {
  std::unique_lock lock(impl_->queue_mutex);
  impl_->idle_cv.wait(lock, [&] { return impl_->queue.empty() && !impl_->busy; });
}

}  // namespace flowtwin
