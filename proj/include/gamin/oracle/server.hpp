#pragma once

#include <atomic>
#include <cstdint>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "gamin/nn/model.hpp"

namespace gamin::oracle {

inline constexpr std::size_t kMaxRequestBatch = 1u << 16;

// Answers PREDICT requests for one model over TCP, one thread per connection.
//
//   request:  "GAMIN-ORACLE/1 PREDICT batch=<n> dim=<d>\n" + n*d float32 LE
//   response: "OK batch=<n> classes=<k>\n" + n*k float32 LE
//          or "ERR <code> <message>\n"
class OracleServer {
 public:
  // Port 0 picks a free port; see port().
  OracleServer(nn::Model<float> model, const std::string& bind_address, std::uint16_t port);
  ~OracleServer();
  OracleServer(const OracleServer&) = delete;
  OracleServer& operator=(const OracleServer&) = delete;

  std::uint16_t port() const { return port_; }
  std::uint64_t requests_served() const { return served_.load(); }

  // Blocks until stop() is called from another thread.
  void run();
  // Starts run() on a background thread.
  void start();
  void stop();

 private:
  void serve_connection(int fd);

  nn::Model<float> model_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::atomic<std::uint64_t> served_{0};
  std::thread runner_;
  std::mutex clients_mutex_;
  std::vector<int> client_fds_;
  std::vector<std::thread> client_threads_;
};

}  // namespace gamin::oracle
