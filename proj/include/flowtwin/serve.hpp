#pragma once

#include "flowtwin/project.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace flowtwin {

inline constexpr const char* kPortEnv = "FLOWTWIN_PORT";

// Everything a serve session needs, loaded once at startup.
struct ServeContext {
  ProjectConfig config;
  ProjectPaths paths;
  std::shared_ptr<const Network> network;
  std::vector<DepartureEvent> departures;
  std::shared_ptr<const ChoiceModel> model;  // null: replay the OD demand
  std::optional<PopulationSeries> truth;
  std::map<std::string, std::string> input_digests;  // path -> sha256
  std::vector<std::pair<std::string, InterventionSpec>> scenarios;  // preloaded, "baseline" first
};

// Departures and model come from the out dir when present, else from the config.
ServeContext load_serve_context(const ProjectConfig& config, const ProjectPaths& paths);

// HTTP front end plus a single FIFO run worker. Handlers run concurrently;
// finished runs are immutable.
class Service {
 public:
  explicit Service(ServeContext ctx);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Binds host:port (0 picks a free port) and returns the bound port, or -1.
  int bind(const std::string& host, int port);
  // Serves requests until stop(). Call after bind().
  void listen();
  void stop();

  // Blocks until the run queue is empty and the worker is idle.
  void wait_idle();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Port from the environment variable when set, else the config's.
int serve_port(const ProjectConfig& config);

}  // namespace flowtwin
