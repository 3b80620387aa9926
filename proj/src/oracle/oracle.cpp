#include "gamin/oracle/oracle.hpp"

#include <bit>
#include <cmath>
#include <sstream>

#include <fmt/format.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <sys/time.h>

#include "wire.hpp"

namespace gamin::oracle {

static_assert(std::endian::native == std::endian::little, "wire protocol assumes a little-endian host");

BudgetExhausted::BudgetExhausted(std::uint64_t requested, std::uint64_t remaining)
    : Error(fmt::format("query budget exhausted: {} queries requested, {} remaining", requested, remaining)),
      requested_(requested),
      remaining_(remaining) {}

RemoteError::RemoteError(int code, const std::string& message)
    : Error(fmt::format("oracle service error {}: {}", code, message)), code_(code) {}

LocalPredictor::LocalPredictor(nn::Model<float> model) : model_(std::move(model)) {
  nn::check_congruent(model_.spec, model_.params);
}

nn::Tensor LocalPredictor::predict(const nn::Tensor& inputs) { return nn::forward(model_, inputs, nn::Mode::infer); }

RemotePredictor::RemotePredictor(std::string host, std::uint16_t port, std::size_t input_dim,
                                 std::size_t num_classes)
    : host_(std::move(host)), port_(port), input_dim_(input_dim), num_classes_(num_classes) {}

RemotePredictor::~RemotePredictor() { disconnect(); }

void RemotePredictor::disconnect() {
  wire::close_fd(fd_);
  fd_ = -1;
}

nn::Tensor RemotePredictor::predict(const nn::Tensor& inputs) {
  std::lock_guard lock(mutex_);
  const bool reused = fd_ >= 0;
  try {
    return exchange(inputs);
  } catch (const TransportError&) {
    disconnect();
    if (!reused) throw;
  }
  // the kept-alive connection may have been closed by the server; one fresh attempt
  try {
    return exchange(inputs);
  } catch (const TransportError&) {
    disconnect();
    throw;
  }
}

nn::Tensor RemotePredictor::exchange(const nn::Tensor& inputs) {
  if (fd_ < 0) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* found = nullptr;
    const std::string service = std::to_string(port_);
    if (::getaddrinfo(host_.c_str(), service.c_str(), &hints, &found) != 0 || found == nullptr) {
      throw TransportError(fmt::format("cannot resolve {}:{}", host_, port_));
    }
    for (addrinfo* a = found; a != nullptr && fd_ < 0; a = a->ai_next) {
      const int fd = ::socket(a->ai_family, a->ai_socktype, a->ai_protocol);
      if (fd < 0) continue;
      if (::connect(fd, a->ai_addr, a->ai_addrlen) == 0) {
        fd_ = fd;
      } else {
        wire::close_fd(fd);
      }
    }
    ::freeaddrinfo(found);
    if (fd_ < 0) throw TransportError(fmt::format("cannot connect to {}:{}", host_, port_));
    const int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    timeval timeout{60, 0};
    ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &timeout, sizeof timeout);
  }

  const std::size_t batch = inputs.rows();
  const std::string header = fmt::format("{} PREDICT batch={} dim={}\n", wire::kProtocol, batch, input_dim_);
  if (!wire::write_all(fd_, header.data(), header.size()) ||
      !wire::write_all(fd_, inputs.data(), inputs.size() * sizeof(float))) {
    throw TransportError("connection lost while sending a request");
  }
  const auto line = wire::read_line(fd_);
  if (!line) throw TransportError("connection lost while waiting for a response");

  std::istringstream in(*line);
  std::string status;
  in >> status;
  if (status == "ERR") {
    int code = 0;
    in >> code;
    std::string message;
    std::getline(in >> std::ws, message);
    throw RemoteError(code, message);
  }
  std::string batch_token, classes_token;
  in >> batch_token >> classes_token;
  const auto got_batch = wire::parse_field(batch_token, "batch");
  const auto got_classes = wire::parse_field(classes_token, "classes");
  if (status != "OK" || !got_batch || !got_classes || *got_batch != batch || *got_classes != num_classes_) {
    disconnect();
    throw TransportError("unexpected response header: " + *line);
  }
  nn::Tensor out({batch, num_classes_});
  if (!wire::read_exact(fd_, out.data(), out.size() * sizeof(float))) {
    throw TransportError("connection lost while reading a response payload");
  }
  return out;
}

nn::Tensor round_confidences(const nn::Tensor& predictions, int decimals) {
  if (decimals < 0) throw ConfigError("rounding decimals must be non-negative");
  const double scale = std::pow(10.0, decimals);
  nn::Tensor out = predictions;
  for (float& v : out.values()) {
    // std::round is half away from zero
    v = static_cast<float>(std::round(static_cast<double>(v) * scale) / scale);
  }
  return out;
}

std::uint64_t QueryBudget::consumed() const {
  std::lock_guard lock(mutex_);
  return consumed_;
}

std::uint64_t QueryBudget::remaining() const {
  std::lock_guard lock(mutex_);
  return total_ - consumed_ - pending_;
}

void QueryBudget::reserve(std::uint64_t n) {
  std::lock_guard lock(mutex_);
  const std::uint64_t available = total_ - consumed_ - pending_;
  if (n > available) throw BudgetExhausted(n, available);
  pending_ += n;
}

void QueryBudget::commit(std::uint64_t n) {
  std::lock_guard lock(mutex_);
  pending_ -= n;
  consumed_ += n;
}

void QueryBudget::release(std::uint64_t n) {
  std::lock_guard lock(mutex_);
  pending_ -= n;
}

Oracle::Oracle(std::shared_ptr<Predictor> predictor, std::uint64_t budget, Defense defense)
    : predictor_(std::move(predictor)), budget_(budget), defense_(defense) {
  if (!predictor_) throw ConfigError("oracle needs a predictor");
  if (defense_.round_decimals && *defense_.round_decimals < 0) {
    throw ConfigError("rounding decimals must be non-negative");
  }
}

nn::Tensor Oracle::query(const nn::Tensor& inputs) {
  if (inputs.rank() >= 2 && inputs.rows() == 0) return nn::Tensor({0, num_classes()});
  if (inputs.rank() < 2 || inputs.row_size() != input_dim()) {
    throw ShapeError(fmt::format("oracle expects rows of {} values, got a tensor of shape {}", input_dim(),
                                 nn::to_string(inputs.shape())));
  }
  const std::uint64_t n = inputs.rows();
  budget_.reserve(n);
  nn::Tensor out;
  try {
    out = predictor_->predict(inputs);
    if (out.rows() != n || out.row_size() != num_classes()) {
      throw ShapeError(fmt::format("predictor returned shape {} for a batch of {}", nn::to_string(out.shape()), n));
    }
  } catch (...) {
    budget_.release(n);
    throw;
  }
  budget_.commit(n);
  if (defense_.round_decimals) out = round_confidences(out, *defense_.round_decimals);
  return out;
}

}  // namespace gamin::oracle
