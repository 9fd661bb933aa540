#pragma once
// teleopd: a 200 Hz control loop around a TeleopSession, fed by clients over
// length-prefixed JSON frames (u32 big-endian byte count, then UTF-8 JSON) or
// WebSocket text frames. Incoming commands land in a latest-wins slot; state
// snapshots go out at 30 Hz. Any protocol violation gets an error frame and the
// connection is closed.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <json.hpp>

#include "equicontact/teleop.hpp"

namespace equicontact {

inline constexpr std::size_t kMaxFrameBytes = 64 * 1024;

// Wire encoding ----------------------------------------------------------------------

std::string encode_frame(const nlohmann::json& msg);
/// Sec-WebSocket-Accept for a client key.
std::string websocket_accept_key(std::string_view client_key);
/// Single unfragmented frame. Clients must mask; servers must not.
std::string encode_ws_frame(std::string_view payload, std::uint8_t opcode = 0x1,
                            std::optional<std::uint32_t> mask = std::nullopt);

struct ServerOptions {
  std::string bind_address = "127.0.0.1";
  std::uint16_t port = 8765;  // 0 picks a free port
  std::filesystem::path record_dir = "demos";
  std::string randomize_set = "flat-ood";  // scenario set for "randomize" requests
  std::size_t max_frame_bytes = kMaxFrameBytes;
};

struct LoopStats {
  std::uint64_t ticks = 0;
  std::uint64_t overruns = 0;       // ticks that started more than one period late
  double max_jitter_ms = 0.0;       // wake-up lateness
  double mean_jitter_ms = 0.0;
  std::uint64_t states_published = 0;  // 30 Hz broadcasts
  std::uint64_t commands_consumed = 0;
  std::uint64_t commands_dropped = 0;  // overwritten in the slot before the loop saw them
  std::uint64_t protocol_errors = 0;
  std::size_t clients = 0;
  std::vector<std::filesystem::path> demos_written;
};

class TeleopServer {
 public:
  TeleopServer(TeleopConfig cfg, ServerOptions opts);
  ~TeleopServer();
  TeleopServer(const TeleopServer&) = delete;
  TeleopServer& operator=(const TeleopServer&) = delete;

  /// Binds and starts the loop and accept threads. Throws Error when binding fails.
  void start();
  void stop();
  bool running() const;
  std::uint16_t port() const;
  LoopStats stats() const;
  StateFrame latest_state() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Blocking client for the length-prefixed protocol (tests and scripts).
class FramedClient {
 public:
  FramedClient(const std::string& host, std::uint16_t port);
  ~FramedClient();
  FramedClient(const FramedClient&) = delete;
  FramedClient& operator=(const FramedClient&) = delete;

  void send(const nlohmann::json& msg);
  void send_raw(std::string_view bytes);
  /// Next frame, or nullopt on timeout. Throws ProtocolError when the peer closed.
  std::optional<nlohmann::json> receive(std::chrono::milliseconds timeout);
  /// True once the server has closed the connection (checked within `timeout`).
  bool closed_by_peer(std::chrono::milliseconds timeout);

 private:
  int fd_ = -1;
  std::string buf_;
};

}  // namespace equicontact
