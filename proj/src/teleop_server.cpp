#include "equicontact/teleop_server.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <fstream>
#include <mutex>

#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include "equicontact/errors.hpp"
#include "equicontact/harness.hpp"
#include "equicontact/random.hpp"

namespace equicontact {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

constexpr char kWsGuid[] = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";
constexpr int kPollMs = 50;
constexpr int kSniffMs = 250;
constexpr std::size_t kMaxHandshakeBytes = 8192;

void put_u32_be(std::string& out, std::uint32_t n) {
  out.push_back(static_cast<char>((n >> 24) & 0xFF));
  out.push_back(static_cast<char>((n >> 16) & 0xFF));
  out.push_back(static_cast<char>((n >> 8) & 0xFF));
  out.push_back(static_cast<char>(n & 0xFF));
}

std::uint32_t get_u32_be(const char* p) {
  const auto* u = reinterpret_cast<const unsigned char*>(p);
  return (std::uint32_t{u[0]} << 24) | (std::uint32_t{u[1]} << 16) | (std::uint32_t{u[2]} << 8) |
         std::uint32_t{u[3]};
}

bool send_all(int fd, std::string_view data) {
  while (!data.empty()) {
    const ssize_t n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
  return true;
}

// Connection closed or server stopping.
struct Disconnected {};

// Thrown by the readers for anything the peer got wrong.
struct Violation {
  std::string message;
};

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

}  // namespace

std::string encode_frame(const json& msg) {
  const std::string body = msg.dump();
  if (body.size() > kMaxFrameBytes) throw InvalidArgument("frame exceeds the size limit");
  std::string out;
  out.reserve(body.size() + 4);
  put_u32_be(out, static_cast<std::uint32_t>(body.size()));
  out += body;
  return out;
}

std::string websocket_accept_key(std::string_view client_key) {
  const std::string in = std::string(client_key) + kWsGuid;
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(in.data(), in.size(), digest, &len, EVP_sha1(), nullptr) != 1) {
    throw Error("websocket: SHA-1 failed");
  }
  std::string b64(4 * ((len + 2) / 3) + 1, '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(b64.data()), digest,
                                static_cast<int>(len));
  b64.resize(static_cast<std::size_t>(n));
  return b64;
}

std::string encode_ws_frame(std::string_view payload, std::uint8_t opcode,
                            std::optional<std::uint32_t> mask) {
  std::string out;
  out.push_back(static_cast<char>(0x80 | (opcode & 0x0F)));
  const std::uint8_t mbit = mask ? 0x80 : 0x00;
  const std::size_t n = payload.size();
  if (n < 126) {
    out.push_back(static_cast<char>(mbit | n));
  } else if (n <= 0xFFFF) {
    out.push_back(static_cast<char>(mbit | 126));
    out.push_back(static_cast<char>((n >> 8) & 0xFF));
    out.push_back(static_cast<char>(n & 0xFF));
  } else {
    out.push_back(static_cast<char>(mbit | 127));
    for (int s = 56; s >= 0; s -= 8) out.push_back(static_cast<char>((std::uint64_t{n} >> s) & 0xFF));
  }
  if (!mask) return out + std::string(payload);
  unsigned char key[4];
  put_u32_be(out, *mask);
  std::memcpy(key, out.data() + out.size() - 4, 4);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(static_cast<char>(static_cast<unsigned char>(payload[i]) ^ key[i % 4]));
  }
  return out;
}

// Server -------------------------------------------------------------------------------------

struct TeleopServer::Impl {
  struct Client {
    int fd = -1;
    std::string peer;
    bool websocket = false;
    std::mutex mu;
    std::condition_variable cv;
    std::optional<std::string> state;  // latest-wins
    std::deque<std::string> outbox;  // JSON bodies
    std::deque<std::string> raw;     // pre-encoded control frames
    bool closing = false;
    std::atomic<bool> ready{false};  // handshake done, receives states
    std::atomic<bool> done{false};
    std::thread reader;
    std::thread writer;
  };

  struct Request {
    enum class Kind { Rebias, RecordStart, RecordStop, Home, Randomize } kind;
    std::string name;
    std::optional<std::uint64_t> seed;
    std::weak_ptr<Client> origin;
  };

  struct PendingDemo {
    DemoRecord demo;
    std::weak_ptr<Client> origin;
  };

  Impl(TeleopConfig c, ServerOptions o) : cfg(std::move(c)), opts(std::move(o)), session(cfg) {}

  TeleopConfig cfg;
  ServerOptions opts;
  TeleopSession session;  // loop thread only

  std::atomic<bool> running{false};
  int listen_fd = -1;
  std::uint16_t bound_port = 0;
  std::thread loop_thread;
  std::thread accept_thread;
  std::thread broadcast_thread;

  std::mutex slot_mu;
  std::optional<TeleopCommand> slot;
  std::deque<Request> requests;

  std::mutex clients_mu;
  std::vector<std::shared_ptr<Client>> clients;

  std::mutex demos_mu;
  std::deque<PendingDemo> demos;

  mutable std::mutex stats_mu;
  LoopStats stats;
  StateFrame latest;
  std::uint64_t randomize_count = 0;
  std::uint64_t demo_count = 0;

  // Outgoing ------------------------------------------------------------------------------

  std::string wrap(const Client& c, const std::string& body) const {
    if (c.websocket) return encode_ws_frame(body);
    std::string out;
    put_u32_be(out, static_cast<std::uint32_t>(body.size()));
    return out + body;
  }

  static void reply(const std::shared_ptr<Client>& c, const json& msg, bool close_after = false) {
    if (!c) return;
    std::lock_guard lk(c->mu);
    if (c->closing) return;
    c->outbox.push_back(msg.dump());
    if (close_after) c->closing = true;
    c->cv.notify_one();
  }

  void writer_loop(const std::shared_ptr<Client>& c) {
    for (;;) {
      std::deque<std::string> out;
      std::deque<std::string> raw;
      std::optional<std::string> state;
      bool closing = false;
      {
        std::unique_lock lk(c->mu);
        c->cv.wait_for(lk, std::chrono::milliseconds(kPollMs), [&] {
          return !c->outbox.empty() || !c->raw.empty() || c->state || c->closing || !running;
        });
        out.swap(c->outbox);
        raw.swap(c->raw);
        if (!c->closing) state.swap(c->state);
        closing = c->closing || !running;
      }
      bool ok = true;
      for (const auto& m : raw) ok = ok && send_all(c->fd, m);
      for (const auto& m : out) ok = ok && send_all(c->fd, wrap(*c, m));
      if (ok && state) ok = send_all(c->fd, wrap(*c, *state));
      if (!ok || closing) break;
    }
    ::shutdown(c->fd, SHUT_RDWR);
    c->done = true;
  }

  // Incoming ------------------------------------------------------------------------------

  // Reads exactly n bytes, polling so a stop request is noticed.
  void read_exact(int fd, char* dst, std::size_t n) {
    std::size_t got = 0;
    while (got < n) {
      pollfd p{fd, POLLIN, 0};
      const int r = ::poll(&p, 1, kPollMs);
      if (!running) throw Disconnected{};
      if (r < 0 && errno != EINTR) throw Disconnected{};
      if (r <= 0) continue;
      const ssize_t k = ::recv(fd, dst + got, n - got, 0);
      if (k == 0) throw Disconnected{};
      if (k < 0) {
        if (errno == EINTR || errno == EAGAIN) continue;
        throw Disconnected{};
      }
      got += static_cast<std::size_t>(k);
    }
  }

  // Peeks for an HTTP upgrade. A client that stays silent through the grace
  // window is a framed client that only listens.
  bool sniff_websocket(int fd) {
    const auto deadline = Clock::now() + std::chrono::milliseconds(kSniffMs);
    char head[4];
    for (;;) {
      const ssize_t k = ::recv(fd, head, sizeof head, MSG_PEEK | MSG_DONTWAIT);
      if (k == 0) throw Disconnected{};
      if (k > 0 && std::string_view("GET ", static_cast<std::size_t>(k)) != std::string_view(head, static_cast<std::size_t>(k))) {
        return false;
      }
      if (k == 4) return true;
      if (!running || Clock::now() >= deadline) return false;
      pollfd p{fd, POLLIN, 0};
      ::poll(&p, 1, 10);
      if (k > 0) std::this_thread::sleep_for(std::chrono::milliseconds(1));
    }
  }

  void websocket_handshake(Client& c, const std::string& prefix) {
    std::string req = prefix;
    while (req.find("\r\n\r\n") == std::string::npos) {
      if (req.size() > kMaxHandshakeBytes) throw Violation{"websocket handshake too long"};
      char ch;
      read_exact(c.fd, &ch, 1);
      req.push_back(ch);
    }
    std::string key;
    std::size_t pos = req.find("\r\n");
    while (pos != std::string::npos && pos + 2 < req.size()) {
      const std::size_t end = req.find("\r\n", pos + 2);
      const std::string line = req.substr(pos + 2, end - pos - 2);
      const std::size_t colon = line.find(':');
      if (colon != std::string::npos &&
          lower(line.substr(0, colon)) == "sec-websocket-key") {
        key = line.substr(colon + 1);
        key.erase(0, key.find_first_not_of(' '));
        key.erase(key.find_last_not_of(" \t") + 1);
      }
      pos = end;
    }
    if (key.empty()) {
      send_all(c.fd, "HTTP/1.1 400 Bad Request\r\nContent-Length: 0\r\n\r\n");
      throw Disconnected{};
    }
    const std::string resp =
        "HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n"
        "Sec-WebSocket-Accept: " + websocket_accept_key(key) + "\r\n\r\n";
    if (!send_all(c.fd, resp)) throw Disconnected{};
    c.websocket = true;
  }

  // Next text message from a WebSocket client; answers pings, honours close.
  std::string read_ws_message(Client& c) {
    for (;;) {
      unsigned char h[2];
      read_exact(c.fd, reinterpret_cast<char*>(h), 2);
      const bool fin = (h[0] & 0x80) != 0;
      const std::uint8_t opcode = h[0] & 0x0F;
      if (!(h[1] & 0x80)) throw Violation{"websocket: client frames must be masked"};
      std::uint64_t len = h[1] & 0x7F;
      if (len == 126) {
        unsigned char e[2];
        read_exact(c.fd, reinterpret_cast<char*>(e), 2);
        len = (std::uint64_t{e[0]} << 8) | e[1];
      } else if (len == 127) {
        unsigned char e[8];
        read_exact(c.fd, reinterpret_cast<char*>(e), 8);
        len = 0;
        for (unsigned char b : e) len = (len << 8) | b;
      }
      if (len > opts.max_frame_bytes) throw Violation{"frame exceeds the size limit"};
      unsigned char mask[4];
      read_exact(c.fd, reinterpret_cast<char*>(mask), 4);
      std::string payload(static_cast<std::size_t>(len), '\0');
      if (len > 0) read_exact(c.fd, payload.data(), payload.size());
      for (std::size_t i = 0; i < payload.size(); ++i) payload[i] ^= static_cast<char>(mask[i % 4]);
      if (!fin || opcode == 0x0) throw Violation{"websocket: fragmented messages are not supported"};
      switch (opcode) {
        case 0x1: return payload;
        case 0x8: {
          std::lock_guard lk(c.mu);
          c.raw.push_back(encode_ws_frame({}, 0x8));
          c.cv.notify_one();
          throw Disconnected{};
        }
        case 0x9: {
          std::lock_guard lk(c.mu);
          c.raw.push_back(encode_ws_frame(payload, 0xA));
          c.cv.notify_one();
          continue;
        }
        case 0xA: continue;
        default: throw Violation{"websocket: only text frames carry messages"};
      }
    }
  }

  void handle_message(const std::shared_ptr<Client>& c, const std::string& body) {
    json j;
    try {
      j = json::parse(body);
    } catch (const json::exception&) {
      throw Violation{"malformed JSON"};
    }
    if (!j.is_object() || !j.contains("type") || !j["type"].is_string()) {
      throw Violation{"message needs a string 'type'"};
    }
    const std::string type = j["type"].get<std::string>();
    if (type == "cmd") {
      TeleopCommand cmd;
      try {
        cmd = command_from_json(j);
      } catch (const ProtocolError& e) {
        throw Violation{e.what()};
      }
      std::lock_guard lk(slot_mu);
      if (slot) {
        std::lock_guard sl(stats_mu);
        ++stats.commands_dropped;
      }
      // Toggles must not be lost when a newer command overwrites an unconsumed one.
      if (slot) {
        if (slot->gripper_toggle) cmd.gripper_toggle = !cmd.gripper_toggle;
        if (!cmd.mode_key) cmd.mode_key = slot->mode_key;
      }
      slot = cmd;
      return;
    }
    Request r;
    r.origin = c;
    if (type == "rebias") {
      r.kind = Request::Kind::Rebias;
    } else if (type == "record_start") {
      r.kind = Request::Kind::RecordStart;
      if (j.contains("name")) {
        if (!j["name"].is_string()) throw Violation{"record_start: 'name' must be a string"};
        r.name = j["name"].get<std::string>();
        const bool safe = std::all_of(r.name.begin(), r.name.end(), [](unsigned char ch) {
          return std::isalnum(ch) || ch == '-' || ch == '_';
        });
        if (!safe || r.name.size() > 64) throw Violation{"record_start: invalid name"};
      }
    } else if (type == "record_stop") {
      r.kind = Request::Kind::RecordStop;
    } else if (type == "home") {
      r.kind = Request::Kind::Home;
    } else if (type == "randomize") {
      r.kind = Request::Kind::Randomize;
      if (j.contains("seed")) {
        if (!j["seed"].is_number_unsigned()) throw Violation{"randomize: 'seed' must be unsigned"};
        r.seed = j["seed"].get<std::uint64_t>();
      }
    } else if (type == "state" || type == "error") {
      throw Violation{"'" + type + "' is a server-to-client message"};
    } else {
      throw Violation{"unknown message type '" + type + "'"};
    }
    std::lock_guard lk(slot_mu);
    requests.push_back(std::move(r));
  }

  void reader_loop(const std::shared_ptr<Client>& c) {
    try {
      try {
        if (sniff_websocket(c->fd)) {
          char head[4];
          read_exact(c->fd, head, 4);
          websocket_handshake(*c, std::string(head, 4));
        }
        c->ready = true;
        c->writer = std::thread([this, c] { writer_loop(c); });
        spdlog::info("teleopd: client {} connected ({})", c->peer,
                     c->websocket ? "websocket" : "framed");
        for (;;) {
          std::string body;
          if (c->websocket) {
            body = read_ws_message(*c);
          } else {
            char lenb[4];
            read_exact(c->fd, lenb, 4);
            const std::uint32_t len = get_u32_be(lenb);
            if (len == 0 || len > opts.max_frame_bytes) {
              throw Violation{"frame length " + std::to_string(len) + " outside (0, " +
                              std::to_string(opts.max_frame_bytes) + "]"};
            }
            body.resize(len);
            read_exact(c->fd, body.data(), len);
          }
          handle_message(c, body);
        }
      } catch (const Violation& v) {
        {
          std::lock_guard lk(stats_mu);
          ++stats.protocol_errors;
        }
        spdlog::warn("teleopd: protocol violation from {}: {}", c->peer, v.message);
        if (!c->writer.joinable()) {
          // Violation before registration: answer in the framing the client used.
          const std::string body = json{{"type", "error"}, {"message", v.message}}.dump();
          send_all(c->fd, wrap(*c, body));
          ::shutdown(c->fd, SHUT_RDWR);
          c->done = true;
        } else {
          reply(c, {{"type", "error"}, {"message", v.message}}, true);
        }
        return;
      }
    } catch (const Disconnected&) {
    }
    {
      std::lock_guard lk(c->mu);
      c->closing = true;
      c->cv.notify_one();
    }
    if (!c->writer.joinable()) {
      ::shutdown(c->fd, SHUT_RDWR);
      c->done = true;
    }
  }

  // Control loop ------------------------------------------------------------------------------

  void serve_request(const Request& r) {
    const auto origin = r.origin.lock();
    try {
      switch (r.kind) {
        case Request::Kind::Rebias:
          session.request_rebias();
          reply(origin, {{"type", "rebias"}, {"ok", true}});
          break;
        case Request::Kind::RecordStart:
          session.start_recording(r.name.empty() ? "demo-" + std::to_string(++demo_count) : r.name);
          reply(origin, {{"type", "record_start"}, {"ok", true}});
          break;
        case Request::Kind::RecordStop: {
          auto demo = session.stop_recording();
          if (!demo) throw InvalidArgument("record_stop: not recording");
          std::lock_guard lk(demos_mu);
          demos.push_back({std::move(*demo), r.origin});
          break;
        }
        case Request::Kind::Home:
          session.reset(cfg.scene);
          break;
        case Request::Kind::Randomize: {
          const std::uint64_t seed = r.seed ? *r.seed : mix_seed(cfg.seed, 0xA11 + randomize_count++);
          session.reset(build_scenario(scenario_for(opts.randomize_set, seed)));
          break;
        }
      }
    } catch (const Error& e) {
      // Valid protocol, refused request: report and keep the session open.
      reply(origin, {{"type", "error"}, {"message", e.what()}});
    }
  }

  // Broadcast thread: the latest snapshot goes out on a wall-clock 30 Hz cadence.
  void broadcast_loop() {
    const auto period = std::chrono::duration_cast<Clock::duration>(
        std::chrono::duration<double>(1.0 / kStateRateHz));
    auto next = Clock::now();
    while (running) {
      StateFrame s;
      {
        std::lock_guard lk(stats_mu);
        s = latest;
        ++stats.states_published;
      }
      const std::string body = to_json(s).dump();
      {
        std::lock_guard lk(clients_mu);
        for (const auto& c : clients) {
          if (!c->ready) continue;
          std::lock_guard cl(c->mu);
          c->state = body;
          c->cv.notify_one();
        }
      }
      next += period;
      if (Clock::now() > next + period) next = Clock::now();
      std::this_thread::sleep_until(next);
    }
  }

  void control_loop() {
    const auto period = std::chrono::duration_cast<Clock::duration>(
        std::chrono::duration<double>(kControlPeriod));
    auto next = Clock::now();
    double jitter_sum = 0.0;
    std::uint64_t overrun_logged = 0;
    while (running) {
      next += period;
      std::this_thread::sleep_until(next);
      const auto now = Clock::now();
      const double late_ms = std::chrono::duration<double, std::milli>(now - next).count();
      const bool overrun = now - next > period;
      if (now - next > 10 * period) next = now;  // do not try to catch up after a stall

      std::deque<Request> reqs;
      std::optional<TeleopCommand> cmd;
      {
        std::lock_guard lk(slot_mu);
        reqs.swap(requests);
        cmd.swap(slot);
      }
      for (const auto& r : reqs) serve_request(r);
      session.tick(cmd);
      const std::int64_t tick = session.state().tick;
      const StateFrame snap = session.snapshot();

      std::lock_guard lk(stats_mu);
      latest = snap;
      ++stats.ticks;
      if (cmd) ++stats.commands_consumed;
      jitter_sum += std::max(0.0, late_ms);
      stats.max_jitter_ms = std::max(stats.max_jitter_ms, late_ms);
      stats.mean_jitter_ms = jitter_sum / static_cast<double>(stats.ticks);
      if (overrun) {
        ++stats.overruns;
        if (stats.overruns == 1 || stats.overruns - overrun_logged >= 200) {
          overrun_logged = stats.overruns;
          spdlog::warn("teleopd: control loop overrun at tick {} ({:.3f} ms late, {} total)",
                       tick, late_ms, stats.overruns);
        }
      }
    }
  }

  // Accept loop and housekeeping -------------------------------------------------------------

  void write_pending_demos() {
    std::deque<PendingDemo> todo;
    {
      std::lock_guard lk(demos_mu);
      todo.swap(demos);
    }
    for (auto& d : todo) {
      const auto origin = d.origin.lock();
      try {
        std::filesystem::create_directories(opts.record_dir);
        const auto path = opts.record_dir / (d.demo.name + ".jsonl");
        std::ofstream os(path);
        if (!os) throw Error("cannot write " + path.string());
        write_demo_jsonl(os, d.demo);
        os.close();
        if (!os) throw Error("cannot write " + path.string());
        {
          std::lock_guard lk(stats_mu);
          stats.demos_written.push_back(path);
        }
        spdlog::info("teleopd: wrote {} ({} samples)", path.string(), d.demo.samples.size());
        reply(origin, {{"type", "record_stop"},
                       {"ok", true},
                       {"path", path.string()},
                       {"samples", d.demo.samples.size()}});
      } catch (const std::exception& e) {
        spdlog::error("teleopd: {}", e.what());
        reply(origin, {{"type", "error"}, {"message", e.what()}});
      }
    }
  }

  void reap(bool all) {
    std::vector<std::shared_ptr<Client>> dead;
    {
      std::lock_guard lk(clients_mu);
      auto it = std::stable_partition(clients.begin(), clients.end(),
                                      [&](const auto& c) { return !(all || c->done); });
      dead.assign(it, clients.end());
      clients.erase(it, clients.end());
    }
    for (auto& c : dead) {
      ::shutdown(c->fd, SHUT_RDWR);
      {
        std::lock_guard lk(c->mu);
        c->closing = true;
        c->cv.notify_one();
      }
      if (c->reader.joinable()) c->reader.join();
      if (c->writer.joinable()) c->writer.join();
      ::close(c->fd);
      if (c->ready) spdlog::info("teleopd: client {} disconnected", c->peer);
    }
  }

  void accept_loop() {
    while (running) {
      pollfd p{listen_fd, POLLIN, 0};
      const int r = ::poll(&p, 1, kPollMs);
      write_pending_demos();
      reap(false);
      {
        std::lock_guard lk(clients_mu);
        std::lock_guard sl(stats_mu);
        stats.clients = clients.size();
      }
      if (r <= 0 || !running) continue;
      sockaddr_storage addr{};
      socklen_t alen = sizeof addr;
      const int fd = ::accept(listen_fd, reinterpret_cast<sockaddr*>(&addr), &alen);
      if (fd < 0) continue;
      const int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      auto c = std::make_shared<Client>();
      c->fd = fd;
      char host[NI_MAXHOST] = "?";
      char serv[NI_MAXSERV] = "?";
      ::getnameinfo(reinterpret_cast<sockaddr*>(&addr), alen, host, sizeof host, serv, sizeof serv,
                    NI_NUMERICHOST | NI_NUMERICSERV);
      c->peer = std::string(host) + ":" + serv;
      {
        std::lock_guard lk(clients_mu);
        clients.push_back(c);
      }
      c->reader = std::thread([this, c] { reader_loop(c); });
    }
    write_pending_demos();
  }

  void bind_and_listen() {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    hints.ai_flags = AI_PASSIVE | AI_NUMERICSERV;
    addrinfo* res = nullptr;
    const std::string port = std::to_string(opts.port);
    const char* host = opts.bind_address.empty() ? nullptr : opts.bind_address.c_str();
    if (const int rc = ::getaddrinfo(host, port.c_str(), &hints, &res); rc != 0) {
      throw Error("teleopd: cannot resolve " + opts.bind_address + ": " + gai_strerror(rc));
    }
    std::string last_error = "no address";
    for (addrinfo* a = res; a != nullptr; a = a->ai_next) {
      const int fd = ::socket(a->ai_family, a->ai_socktype, a->ai_protocol);
      if (fd < 0) continue;
      const int one = 1;
      ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
      if (::bind(fd, a->ai_addr, a->ai_addrlen) == 0 && ::listen(fd, 16) == 0) {
        listen_fd = fd;
        break;
      }
      last_error = std::strerror(errno);
      ::close(fd);
    }
    ::freeaddrinfo(res);
    if (listen_fd < 0) {
      throw Error("teleopd: cannot bind " + opts.bind_address + ":" + port + ": " + last_error);
    }
    sockaddr_storage addr{};
    socklen_t alen = sizeof addr;
    ::getsockname(listen_fd, reinterpret_cast<sockaddr*>(&addr), &alen);
    bound_port = addr.ss_family == AF_INET6
                     ? ntohs(reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port)
                     : ntohs(reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
  }
};

TeleopServer::TeleopServer(TeleopConfig cfg, ServerOptions opts)
    : impl_(std::make_unique<Impl>(std::move(cfg), std::move(opts))) {}

TeleopServer::~TeleopServer() { stop(); }

void TeleopServer::start() {
  if (impl_->running) return;
  impl_->bind_and_listen();
  impl_->latest = impl_->session.snapshot();
  impl_->running = true;
  impl_->loop_thread = std::thread([this] { impl_->control_loop(); });
  impl_->broadcast_thread = std::thread([this] { impl_->broadcast_loop(); });
  impl_->accept_thread = std::thread([this] { impl_->accept_loop(); });
  spdlog::info("teleopd: listening on {}:{}", impl_->opts.bind_address, impl_->bound_port);
}

void TeleopServer::stop() {
  if (!impl_ || !impl_->running.exchange(false)) return;
  if (impl_->loop_thread.joinable()) impl_->loop_thread.join();
  if (impl_->broadcast_thread.joinable()) impl_->broadcast_thread.join();
  if (impl_->accept_thread.joinable()) impl_->accept_thread.join();
  impl_->reap(true);
  ::close(impl_->listen_fd);
  impl_->listen_fd = -1;
  spdlog::info("teleopd: stopped after {} ticks ({} overruns)", impl_->stats.ticks,
               impl_->stats.overruns);
}

bool TeleopServer::running() const { return impl_->running; }

std::uint16_t TeleopServer::port() const { return impl_->bound_port; }

LoopStats TeleopServer::stats() const {
  std::lock_guard lk(impl_->stats_mu);
  return impl_->stats;
}

StateFrame TeleopServer::latest_state() const {
  std::lock_guard lk(impl_->stats_mu);
  return impl_->latest;
}

// Client -------------------------------------------------------------------------------------

FramedClient::FramedClient(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0) {
    throw Error("client: cannot resolve " + host);
  }
  for (addrinfo* a = res; a != nullptr; a = a->ai_next) {
    const int fd = ::socket(a->ai_family, a->ai_socktype, a->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, a->ai_addr, a->ai_addrlen) == 0) {
      fd_ = fd;
      break;
    }
    ::close(fd);
  }
  ::freeaddrinfo(res);
  if (fd_ < 0) throw Error("client: cannot connect to " + host + ":" + std::to_string(port));
  const int one = 1;
  ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

FramedClient::~FramedClient() {
  if (fd_ >= 0) ::close(fd_);
}

void FramedClient::send(const json& msg) { send_raw(encode_frame(msg)); }

void FramedClient::send_raw(std::string_view bytes) {
  if (!send_all(fd_, bytes)) throw ProtocolError("client: send failed");
}

std::optional<json> FramedClient::receive(std::chrono::milliseconds timeout) {
  const auto deadline = Clock::now() + timeout;
  for (;;) {
    if (buf_.size() >= 4) {
      const std::uint32_t len = get_u32_be(buf_.data());
      if (buf_.size() >= 4 + std::size_t{len}) {
        json j = json::parse(buf_.begin() + 4, buf_.begin() + 4 + len);
        buf_.erase(0, 4 + std::size_t{len});
        return j;
      }
    }
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
    if (left.count() <= 0) return std::nullopt;
    pollfd p{fd_, POLLIN, 0};
    const int r = ::poll(&p, 1, static_cast<int>(left.count()));
    if (r <= 0) continue;
    char tmp[8192];
    const ssize_t n = ::recv(fd_, tmp, sizeof tmp, 0);
    if (n == 0) throw ProtocolError("client: connection closed by server");
    if (n < 0) {
      if (errno == EINTR) continue;
      throw ProtocolError("client: receive failed");
    }
    buf_.append(tmp, static_cast<std::size_t>(n));
  }
}

bool FramedClient::closed_by_peer(std::chrono::milliseconds timeout) {
  const auto deadline = Clock::now() + timeout;
  try {
    while (Clock::now() < deadline) {
      receive(std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()));
    }
  } catch (const ProtocolError&) {
    return true;
  }
  return false;
}

}  // namespace equicontact
