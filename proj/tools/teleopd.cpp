// teleopd: simulator-backed teleoperation service.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <string>
#include <thread>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "equicontact/config.hpp"
#include "equicontact/errors.hpp"
#include "equicontact/teleop_server.hpp"

using namespace equicontact;

namespace {
std::atomic<bool> g_stop{false};
void on_signal(int) { g_stop = true; }
}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"teleopd: 200 Hz teleoperation simulator service"};
  std::string bind = "127.0.0.1:8765";
  std::string scene_cfg;
  std::string record_dir;
  double duration = 0.0;
  app.add_option("-b,--bind", bind, "host:port (port 0 picks one)")->capture_default_str();
  app.add_option("-c,--config", scene_cfg, "scene/teleop INI file")->check(CLI::ExistingFile);
  app.add_option("-r,--record-dir", record_dir, "where demonstrations are written");
  app.add_option("--duration", duration, "exit after this many seconds (0 = until signalled)");
  CLI11_PARSE(app, argc, argv);

  try {
    TeleopConfig cfg;
    ServerOptions opts;
    if (!scene_cfg.empty()) {
      const auto ini = read_ini(std::filesystem::path(scene_cfg));
      cfg = teleop_config_from_ini(ini);
      if (ini.contains("server")) {
        const auto& s = ini["server"];
        for (const auto& [k, v] : s.items()) {
          if (k == "bind") {
            if (!app.count("--bind")) bind = v.get<std::string>();
          } else if (k == "record_dir") {
            opts.record_dir = v.get<std::string>();
          } else if (k == "randomize_set") {
            opts.randomize_set = v.get<std::string>();
          } else {
            throw SchemaError("[server]: unknown key '" + k + "'");
          }
        }
      }
    }
    if (!record_dir.empty()) opts.record_dir = record_dir;
    const auto colon = bind.rfind(':');
    if (colon == std::string::npos) throw InvalidArgument("--bind expects host:port");
    opts.bind_address = bind.substr(0, colon);
    if (opts.bind_address.size() >= 2 && opts.bind_address.front() == '[') {
      opts.bind_address = opts.bind_address.substr(1, opts.bind_address.size() - 2);
    }
    opts.port = static_cast<std::uint16_t>(std::stoul(bind.substr(colon + 1)));

    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    TeleopServer server(cfg, opts);
    server.start();
    std::printf("teleopd listening on %s:%u\n", opts.bind_address.c_str(), server.port());
    std::fflush(stdout);
    const auto t0 = std::chrono::steady_clock::now();
    while (!g_stop) {
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
      if (duration > 0.0 &&
          std::chrono::steady_clock::now() - t0 > std::chrono::duration<double>(duration)) {
        break;
      }
    }
    server.stop();
    const LoopStats st = server.stats();
    std::printf("ticks %llu  overruns %llu  jitter mean %.3f ms max %.3f ms  states %llu\n",
                static_cast<unsigned long long>(st.ticks),
                static_cast<unsigned long long>(st.overruns), st.mean_jitter_ms, st.max_jitter_ms,
                static_cast<unsigned long long>(st.states_published));
  } catch (const std::exception& e) {
    spdlog::error("teleopd: {}", e.what());
    return 2;
  }
  return 0;
}
