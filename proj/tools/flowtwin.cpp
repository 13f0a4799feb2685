// flowtwin command-line front end: one subcommand per pipeline stage, plus
// `serve` for the HTTP API and `synth` for the bundled synthetic dataset.
//
// Exit codes: 0 ok, 2 invalid input (JSON errors with paths on stderr),
// 3 missing input or stage run out of order, 4 runtime failure.

#include "flowtwin/project.hpp"
#include "flowtwin/serve.hpp"
#include "flowtwin/synth.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include <cctype>
#include <iostream>
#include <sstream>

using namespace flowtwin;
using json = nlohmann::json;

namespace {

enum Exit { kOk = 0, kValidation = 2, kMissing = 3, kRuntime = 4 };

void print_error(const std::string& kind, const json& detail) {
  json j = {{"status", "error"}, {"kind", kind}};
  j.update(detail);
  std::cerr << j.dump() << std::endl;
}

struct Common {
  std::string config;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;
};

ProjectConfig load_config(const Common& c) {
  if (c.config.empty()) return ProjectConfig{};
  return load_project_config(c.config);
}

std::string compact_time(const std::string& iso) {
  std::string s;
  for (char ch : iso) {
    if (std::isdigit(static_cast<unsigned char>(ch))) s += ch;
  }
  return s.substr(0, 8) + "T" + s.substr(8, 9);
}

// Records input digests, runs the stage, and writes the manifest before and
// after. Returns the process exit code.
template <typename Body>
int run_stage(const std::string& command, const Common& common, const ProjectPaths& paths,
              const std::vector<std::pair<fs::path, std::string>>& inputs, json parameters, Body&& body) {
  RunManifest m;
  m.command = command;
  m.seed = common.seed;
  m.parameters = std::move(parameters);
  m.created = utc_timestamp();
  for (const auto& [path, hint] : inputs) {
    require_file(path, hint);
    m.inputs[path.string()] = sha256_file(path);
  }
  std::string key = command + (m.seed ? std::to_string(*m.seed) : "");
  for (const auto& [p, d] : m.inputs) key += p + d;
  m.run_id = fmt::format("{}-{}-{}", command, compact_time(m.created), sha256_hex(key).substr(0, 8));
  const fs::path manifest_path = paths.manifests() / (m.run_id + ".json");
  m.advance(RunStatus::Running);
  write_text(manifest_path, to_json(m).dump(2) + "\n");
  try {
    for (const auto& p : body()) m.outputs.push_back(p.string());
    m.advance(RunStatus::Done);
  } catch (const std::exception& e) {
    m.error = e.what();
    m.advance(RunStatus::Failed);
    write_text(manifest_path, to_json(m).dump(2) + "\n");
    throw;
  }
  write_text(manifest_path, to_json(m).dump(2) + "\n");
  std::cout << json{{"status", "ok"}, {"run_id", m.run_id}, {"outputs", m.outputs}}.dump() << std::endl;
  return kOk;
}

std::vector<std::pair<fs::path, std::string>> config_input(const Common& c) {
  if (c.config.empty()) return {};
  return {{c.config, "config file not found"}};
}

json config_parameters(const ProjectConfig& cfg) { return {{"config", to_json(cfg)}}; }

// --- synth -------------------------------------------------------------------

std::vector<fs::path> write_bundle(const fs::path& dir, std::uint64_t seed) {
  const auto spec = synth::reference_network();
  const Network net(spec);
  const auto obs = synth::synthesize_observations(net, {}, seed);
  std::vector<fs::path> files;
  auto put = [&](const fs::path& name, const std::string& text) {
    write_text(dir / name, text);
    files.push_back(dir / name);
  };
  auto csv = [](auto&& f) {
    std::ostringstream o;
    f(o);
    return o.str();
  };
  put("network.json", to_json(spec).dump(2) + "\n");
  put("od.csv", csv([&](std::ostream& o) { write_od_samples(o, obs.od, net); }));
  put("counts.csv", csv([&](std::ostream& o) { write_spot_counts(o, obs.counts, net); }));
  put("trips.csv", csv([&](std::ostream& o) { write_departures(o, obs.trips, net); }));
  put("planted_model.json", to_json(synth::planted_model(net)).dump(2) + "\n");
  put("scenarios/mobility.json", to_json(synth::reference_intervention()).dump(2) + "\n");
  const auto days = synth::history_scenarios(net, 24, 4, seed);
  for (std::size_t d = 1; d < days.size(); ++d) {
    put(fmt::format("history/{}.json", days[d].label), to_json(days[d]).dump(2) + "\n");
  }
  ProjectConfig cfg;
  cfg.model = "planted_model.json";
  cfg.departures = "trips.csv";
  cfg.scenarios = {"scenarios/mobility.json"};
  put("config.json", to_json(cfg).dump(2) + "\n");
  return files;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flowtwin: pedestrian flow digital twin"};
  app.require_subcommand(1);

  Common common;
  auto add_common = [&](CLI::App* sub, bool seeded) {
    sub->add_option("--config", common.config, "project config JSON");
    sub->add_option("--out-dir", common.out_dir, "output directory")->capture_default_str();
    auto* seed = sub->add_option("--seed", common.seed, "master seed");
    if (seeded) seed->required();
  };

  auto* fit_prior = app.add_subcommand("fit-prior", "fit per-pair departure priors from OD samples");
  add_common(fit_prior, true);

  auto* reconstruct = app.add_subcommand("reconstruct", "sample, calibrate and instantiate departures");
  add_common(reconstruct, true);

  SimulateArgs sim_args;
  std::string sim_model, sim_departures, sim_scenario;
  bool sim_replay = false;
  auto* simulate = app.add_subcommand("simulate", "run the microsimulation for one scenario");
  add_common(simulate, true);
  simulate->add_option("--name", sim_args.name, "run name under runs/")->capture_default_str();
  simulate->add_option("--model", sim_model, "model JSON (default: out dir, then config)");
  simulate->add_option("--departures", sim_departures, "departures CSV (default: out dir, then config)");
  simulate->add_option("--scenario", sim_scenario, "intervention scenario JSON");
  simulate->add_flag("--replay", sim_replay, "replay the OD demand without a choice model");

  std::vector<std::string> ts_events, ts_scenarios;
  auto* build = app.add_subcommand("build-trainset", "extract decision records from trajectory events");
  add_common(build, false);
  build->add_option("--events", ts_events, "events CSV, one per observed day (default: runs/baseline)");
  build->add_option("--scenario", ts_scenarios, "scenario JSON per events file, or none for all baseline");

  auto* train_cmd = app.add_subcommand("train", "train the destination-choice model");
  add_common(train_cmd, true);

  EvaluateArgs eval_args;
  std::string pred, truth, pred_base, truth_base;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "compare population series");
  add_common(evaluate_cmd, false);
  evaluate_cmd->add_option("--pred", pred, "predicted population CSV")->required();
  evaluate_cmd->add_option("--truth", truth, "reference population CSV")->required();
  evaluate_cmd->add_option("--pred-base", pred_base, "predicted baseline, for the change cosine");
  evaluate_cmd->add_option("--truth-base", truth_base, "reference baseline, for the change cosine");
  evaluate_cmd->add_option("--label", eval_args.label, "model label for reports");

  std::vector<std::string> report_metrics;
  auto* report = app.add_subcommand("report", "summary table from metrics files");
  add_common(report, false);
  report->add_option("--metrics", report_metrics, "metrics JSON files (default: out dir)");

  std::optional<int> port;
  auto* serve = app.add_subcommand("serve", "HTTP API for the explorer");
  add_common(serve, false);
  serve->add_option("--port", port, fmt::format("port (default: ${} or config)", kPortEnv));
  std::string host = "127.0.0.1";
  serve->add_option("--host", host)->capture_default_str();

  auto* synth_cmd = app.add_subcommand("synth", "write the synthetic reference dataset");
  add_common(synth_cmd, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    print_error("validation", {{"errors", json::array({{{"path", "argv"}, {"message", e.what()}}})}});
    return kValidation;
  }

  const ProjectPaths paths{common.out_dir};
  try {
    const ProjectConfig cfg = load_config(common);
    auto inputs = config_input(common);
    auto with = [&](std::vector<std::pair<fs::path, std::string>> more) {
      auto all = inputs;
      all.insert(all.end(), more.begin(), more.end());
      return all;
    };
    const fs::path network = cfg.resolve(cfg.network);

    if (*fit_prior) {
      return run_stage("fit-prior", common, paths,
                       with({{network, "network file not found"}, {cfg.resolve(cfg.od), "OD samples not found"}}),
                       config_parameters(cfg), [&] { return stage_fit_prior(cfg, paths, *common.seed); });
    }
    if (*reconstruct) {
      return run_stage("reconstruct", common, paths,
                       with({{network, "network file not found"},
                             {cfg.resolve(cfg.od), "OD samples not found"},
                             {cfg.resolve(cfg.counts), "spot counts not found"},
                             {paths.priors(), "run fit-prior first"}}),
                       config_parameters(cfg), [&] { return stage_reconstruct(cfg, paths, *common.seed); });
    }
    if (*simulate) {
      if (!sim_departures.empty()) sim_args.departures = sim_departures;
      else if (fs::exists(paths.departures()) || !cfg.departures) sim_args.departures = paths.departures();
      else sim_args.departures = cfg.resolve(*cfg.departures);
      if (!sim_replay) {
        if (!sim_model.empty()) sim_args.model = sim_model;
        else if (fs::exists(paths.model()) || !cfg.model) sim_args.model = paths.model();
        else sim_args.model = cfg.resolve(*cfg.model);
      } else if (!sim_model.empty()) {
        throw ValidationError("--replay", "--replay and --model are exclusive");
      }
      if (!sim_scenario.empty()) sim_args.scenario = sim_scenario;
      auto in = with({{network, "network file not found"}, {sim_args.departures, "run reconstruct first"}});
      if (sim_args.model) in.push_back({*sim_args.model, "run train first, or pass --replay"});
      if (sim_args.scenario) in.push_back({*sim_args.scenario, "scenario file not found"});
      json params = config_parameters(cfg);
      params["name"] = sim_args.name;
      params["policy"] = sim_args.model ? "model" : "od_replay";
      return run_stage("simulate", common, paths, in, params,
                       [&] { return stage_simulate(cfg, paths, sim_args, *common.seed); });
    }
    if (*build) {
      if (!ts_scenarios.empty() && ts_scenarios.size() != ts_events.size()) {
        throw ValidationError("--scenario", "give one scenario per events file, or none");
      }
      std::vector<TrainsetDay> days;
      if (ts_events.empty()) days.push_back({paths.run_dir("baseline") / "events.csv", std::nullopt});
      for (std::size_t i = 0; i < ts_events.size(); ++i) {
        days.push_back({ts_events[i], ts_scenarios.empty() ? std::nullopt : std::optional<fs::path>(ts_scenarios[i])});
      }
      auto in = with({{network, "network file not found"}});
      for (const auto& d : days) {
        in.push_back({d.events, "run simulate first"});
        if (d.scenario) in.push_back({*d.scenario, "scenario file not found"});
      }
      return run_stage("build-trainset", common, paths, in, config_parameters(cfg),
                       [&] { return stage_build_trainset(cfg, paths, days); });
    }
    if (*train_cmd) {
      return run_stage("train", common, paths,
                       with({{network, "network file not found"},
                             {paths.trainset(), "run build-trainset first"},
                             {paths.trainset_meta(), "run build-trainset first"}}),
                       config_parameters(cfg), [&] { return stage_train(cfg, paths, *common.seed); });
    }
    if (*evaluate_cmd) {
      eval_args.pred = pred;
      eval_args.truth = truth;
      if (!pred_base.empty()) eval_args.pred_base = pred_base;
      if (!truth_base.empty()) eval_args.truth_base = truth_base;
      auto in = with({{network, "network file not found"}, {pred, "prediction not found"}, {truth, "truth not found"}});
      if (eval_args.pred_base) in.push_back({*eval_args.pred_base, "baseline prediction not found"});
      if (eval_args.truth_base) in.push_back({*eval_args.truth_base, "baseline truth not found"});
      return run_stage("evaluate", common, paths, in, {{"label", eval_args.label}},
                       [&] { return stage_evaluate(cfg, paths, eval_args); });
    }
    if (*report) {
      std::vector<fs::path> files(report_metrics.begin(), report_metrics.end());
      std::vector<std::pair<fs::path, std::string>> in;
      if (files.empty()) in.push_back({paths.metrics(), "run evaluate first"});
      for (const auto& f : files) in.push_back({f, "metrics file not found"});
      const int code = run_stage("report", common, paths, in, json::object(),
                                 [&] { return stage_report(paths, files); });
      std::cout << read_text(paths.report_text());
      return code;
    }
    if (*synth_cmd) {
      return run_stage("synth", common, paths, {}, json::object(),
                       [&] { return write_bundle(common.out_dir, *common.seed); });
    }
    if (*serve) {
      auto ctx = load_serve_context(cfg, paths);
      const int wanted = port ? *port : serve_port(cfg);
      Service service(std::move(ctx));
      const int bound = service.bind(host, wanted);
      if (bound < 0) throw Error(ErrorCode::Io, fmt::format("cannot bind {}:{}", host, wanted));
      std::cout << json{{"status", "listening"}, {"host", host}, {"port", bound}}.dump() << std::endl;
      service.listen();
      return kOk;
    }
  } catch (const ValidationError& e) {
    json errors = json::array();
    for (const auto& f : e.errors()) errors.push_back({{"path", f.path}, {"message", f.message}});
    print_error("validation", {{"errors", errors}});
    return kValidation;
  } catch (const MissingInputError& e) {
    print_error("missing_input", {{"path", e.path()}, {"message", e.hint()}});
    return kMissing;
  } catch (const std::exception& e) {
    print_error("runtime", {{"message", e.what()}});
    return kRuntime;
  }
  return kRuntime;
}
