#pragma once

#include "flowtwin/choice.hpp"
#include "flowtwin/common.hpp"
#include "flowtwin/eval.hpp"
#include "flowtwin/microsim.hpp"
#include "flowtwin/reconstruct.hpp"
#include "flowtwin/scenario.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace flowtwin {

namespace fs = std::filesystem;

// A required input is absent, usually because an earlier stage has not run.
class MissingInputError : public Error {
 public:
  MissingInputError(std::string path, const std::string& hint)
      : Error(ErrorCode::Io, path + ": " + hint), path_(std::move(path)), hint_(hint) {}
  const std::string& path() const { return path_; }
  const std::string& hint() const { return hint_; }

 private:
  std::string path_;
  std::string hint_;
};

// Project settings. File paths are relative to the config file's directory.
struct ProjectConfig {
  fs::path base_dir = ".";
  std::string network = "network.json";
  std::string counts = "counts.csv";
  std::string od = "od.csv";
  std::optional<std::string> departures;  // used when the out dir has none
  std::optional<std::string> model;
  std::vector<std::string> scenarios;     // preloaded by serve
  std::optional<std::string> truth_population;

  SlotGrid grid;
  SpeedBins speed_bins;
  PriorFitOptions priors;
  SocialForceParams social_force;
  double dt = 0.05;
  double sample_interval = 1.0;
  double walk_speed_kmh = kDefaultWalkSpeedKmh;
  TrainingOptions training;
  ExitPolicyKind exit_policy = ExitPolicyKind::ExitClass;
  DecisionMode decision_mode = DecisionMode::Probabilistic;
  unsigned threads = 1;
  int port = 8765;

  fs::path resolve(const std::string& p) const;
  SimulationOptions simulation(std::uint64_t seed) const;
};

// Unknown keys and wrong types are reported with their JSON pointers.
ProjectConfig project_config_from_json(const nlohmann::json& j, const fs::path& base_dir);
nlohmann::json to_json(const ProjectConfig& config);
ProjectConfig load_project_config(const std::string& path);

enum class RunStatus { Queued, Running, Done, Failed };
const char* to_string(RunStatus s);

struct RunManifest {
  std::string run_id;
  std::string command;
  std::map<std::string, std::string> inputs;  // path -> sha256 hex
  std::optional<std::uint64_t> seed;
  nlohmann::json parameters = nlohmann::json::object();
  std::string created;
  std::string started;
  std::string finished;
  std::vector<std::string> outputs;
  RunStatus status = RunStatus::Queued;
  std::string error;

  // Moves forward only: queued -> running -> done | failed.
  void advance(RunStatus next);
};

nlohmann::json to_json(const RunManifest& m);

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const fs::path& path);
// UTC, ISO 8601 with milliseconds.
std::string utc_timestamp();

// Output layout of a project directory.
struct ProjectPaths {
  fs::path out;

  fs::path priors() const { return out / "priors.json"; }
  fs::path demand() const { return out / "demand.csv"; }
  fs::path calibrated_demand() const { return out / "demand_calibrated.csv"; }
  fs::path calibration() const { return out / "calibration.json"; }
  fs::path departures() const { return out / "departures.csv"; }
  fs::path run_dir(const std::string& name) const { return out / "runs" / name; }
  fs::path trainset() const { return out / "trainset.csv"; }
  fs::path trainset_meta() const { return out / "trainset.json"; }
  fs::path model() const { return out / "model.json"; }
  fs::path metrics() const { return out / "metrics.json"; }
  fs::path report_json() const { return out / "report.json"; }
  fs::path report_text() const { return out / "report.txt"; }
  fs::path manifests() const { return out / "manifests"; }
};

// Throws MissingInputError when `p` does not exist.
void require_file(const fs::path& p, const std::string& hint);

std::string read_text(const fs::path& p);
// Writes through a temporary file and renames, so readers never see a partial file.
void write_text(const fs::path& p, const std::string& text);

std::shared_ptr<const Network> load_network(const fs::path& p);
InterventionSpec load_scenario(const fs::path& p, const Network& net);
std::vector<DepartureEvent> load_departures(const fs::path& p, const Network& net);
std::shared_ptr<const ChoiceModel> load_model(const fs::path& p, const Network& net);

// --- pipeline stages ---------------------------------------------------------
// Each returns the paths it wrote.

std::vector<fs::path> stage_fit_prior(const ProjectConfig& cfg, const ProjectPaths& out, std::uint64_t seed);
std::vector<fs::path> stage_reconstruct(const ProjectConfig& cfg, const ProjectPaths& out, std::uint64_t seed);

struct SimulateArgs {
  std::string name = "baseline";
  fs::path departures;
  std::optional<fs::path> model;  // unset: replay the OD demand
  std::optional<fs::path> scenario;
};

struct SimulationOutput {
  SimulationResult result;
  PopulationSeries population;
};

SimulationOutput simulate_scenario(const ProjectConfig& cfg, const EnvironmentView& base,
                                   const InterventionSpec& scenario, std::span<const DepartureEvent> departures,
                                   const DestinationPolicy& policy, std::uint64_t seed);

std::vector<fs::path> stage_simulate(const ProjectConfig& cfg, const ProjectPaths& out, const SimulateArgs& args,
                                     std::uint64_t seed);

struct TrainsetDay {
  fs::path events;
  std::optional<fs::path> scenario;
};

std::vector<fs::path> stage_build_trainset(const ProjectConfig& cfg, const ProjectPaths& out,
                                           const std::vector<TrainsetDay>& days);
std::vector<fs::path> stage_train(const ProjectConfig& cfg, const ProjectPaths& out, std::uint64_t seed);

struct EvaluateArgs {
  fs::path pred, truth;
  std::optional<fs::path> pred_base, truth_base;
  std::string label;
};

std::vector<fs::path> stage_evaluate(const ProjectConfig& cfg, const ProjectPaths& out, const EvaluateArgs& args);

// Summary table rows: model, MAE, day-aggregated
// MAE, population cosine, change cosine.
std::string render_report(const std::vector<nlohmann::json>& metrics, const std::vector<std::string>& labels);
std::vector<fs::path> stage_report(const ProjectPaths& out, const std::vector<fs::path>& metrics);

}  // namespace flowtwin
