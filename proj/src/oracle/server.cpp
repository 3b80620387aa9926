#include "gamin/oracle/server.hpp"

#include <cerrno>
#include <cmath>
#include <cstring>
#include <sstream>

#include <arpa/inet.h>
#include <fmt/format.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>

#include "gamin/error.hpp"
#include "wire.hpp"

namespace gamin::oracle {

namespace {

bool send_error(int fd, int code, const std::string& message) {
  const std::string line = fmt::format("ERR {} {}\n", code, message);
  return wire::write_all(fd, line.data(), line.size());
}

// Discards `bytes` of request payload so the connection stays in sync.
bool skip_payload(int fd, std::size_t bytes) {
  char sink[4096];
  while (bytes > 0) {
    const std::size_t n = std::min(bytes, sizeof sink);
    if (!wire::read_exact(fd, sink, n)) return false;
    bytes -= n;
  }
  return true;
}

}  // namespace

OracleServer::OracleServer(nn::Model<float> model, const std::string& bind_address, std::uint16_t port)
    : model_(std::move(model)) {
  nn::check_congruent(model_.spec, model_.params);
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw IoError(fmt::format("socket: {}", std::strerror(errno)));
  const int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, bind_address.c_str(), &addr.sin_addr) != 1) {
    wire::close_fd(listen_fd_);
    throw ConfigError("bind address must be an IPv4 literal, got " + bind_address);
  }
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(listen_fd_, 16) != 0) {
    const std::string reason = std::strerror(errno);
    wire::close_fd(listen_fd_);
    throw IoError(fmt::format("cannot listen on {}:{}: {}", bind_address, port, reason));
  }
  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

OracleServer::~OracleServer() { stop(); }

void OracleServer::start() {
  runner_ = std::thread([this] { run(); });
}

void OracleServer::stop() {
  stopping_ = true;
  if (runner_.joinable()) runner_.join();
  wire::close_fd(listen_fd_);
  listen_fd_ = -1;
  std::vector<std::thread> threads;
  {
    std::lock_guard lock(clients_mutex_);
    for (int fd : client_fds_) ::shutdown(fd, SHUT_RDWR);
    threads.swap(client_threads_);
  }
  for (auto& t : threads) t.join();
}

void OracleServer::run() {
  while (!stopping_) {
    pollfd p{listen_fd_, POLLIN, 0};
    const int ready = ::poll(&p, 1, 100);
    if (ready <= 0) continue;
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) continue;
    const int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    std::lock_guard lock(clients_mutex_);
    client_fds_.push_back(fd);
    client_threads_.emplace_back([this, fd] { serve_connection(fd); });
  }
}

void OracleServer::serve_connection(int fd) {
  const std::size_t dim = model_.spec.input_size();
  const std::size_t classes = model_.spec.output_dim;
  while (!stopping_) {
    bool too_long = false;
    const auto line = wire::read_line(fd, &too_long);
    if (!line) {
      if (too_long) send_error(fd, 400, "request header too long");
      break;
    }
    std::istringstream in(*line);
    std::string protocol, verb, batch_token, dim_token, extra;
    in >> protocol >> verb >> batch_token >> dim_token;
    const auto batch = wire::parse_field(batch_token, "batch");
    const auto got_dim = wire::parse_field(dim_token, "dim");
    if (protocol != wire::kProtocol || verb != "PREDICT" || !batch || !got_dim || (in >> extra)) {
      // the payload length is unknown, so the stream cannot be resynchronised
      send_error(fd, 400, "malformed request header");
      break;
    }
    if (*batch > kMaxRequestBatch) {
      send_error(fd, 413, fmt::format("batch {} exceeds the limit of {}", *batch, kMaxRequestBatch));
      break;
    }
    if (*got_dim != dim) {
      if (!skip_payload(fd, *batch * *got_dim * sizeof(float))) break;
      if (!send_error(fd, 422, fmt::format("wrong input dimension {}, expected dim={}", *got_dim, dim))) break;
      continue;
    }
    nn::Tensor inputs({*batch, dim});
    if (!wire::read_exact(fd, inputs.data(), inputs.size() * sizeof(float))) break;
    nn::Tensor out;
    try {
      out = *batch == 0 ? nn::Tensor({0, classes}) : nn::forward(model_, inputs, nn::Mode::infer);
    } catch (const std::exception& e) {
      if (!send_error(fd, 500, e.what())) break;
      continue;
    }
    const std::string header = fmt::format("OK batch={} classes={}\n", *batch, classes);
    if (!wire::write_all(fd, header.data(), header.size()) ||
        !wire::write_all(fd, out.data(), out.size() * sizeof(float))) {
      break;
    }
    ++served_;
  }
  std::lock_guard lock(clients_mutex_);
  std::erase(client_fds_, fd);
  wire::close_fd(fd);
}

}  // namespace gamin::oracle
