#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "gamin/error.hpp"
#include "gamin/nn/model.hpp"

namespace gamin::oracle {

// Remaining budget is smaller than the requested batch. Nothing was consumed.
class BudgetExhausted : public Error {
 public:
  BudgetExhausted(std::uint64_t requested, std::uint64_t remaining);
  std::uint64_t requested() const noexcept { return requested_; }
  std::uint64_t remaining() const noexcept { return remaining_; }

 private:
  std::uint64_t requested_;
  std::uint64_t remaining_;
};

// Connection-level failure talking to a remote predictor; the request may be retried.
class TransportError : public Error {
 public:
  using Error::Error;
};

// The remote service answered with an ERR line.
class RemoteError : public Error {
 public:
  RemoteError(int code, const std::string& message);
  int code() const noexcept { return code_; }

 private:
  int code_;
};

class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual std::size_t input_dim() const = 0;
  virtual std::size_t num_classes() const = 0;
  // [batch, input_dim] (or any shape with input_dim values per row) -> [batch, num_classes]
  virtual nn::Tensor predict(const nn::Tensor& inputs) = 0;
};

class LocalPredictor final : public Predictor {
 public:
  explicit LocalPredictor(nn::Model<float> model);
  std::size_t input_dim() const override { return model_.spec.input_size(); }
  std::size_t num_classes() const override { return model_.spec.output_dim; }
  nn::Tensor predict(const nn::Tensor& inputs) override;
  const nn::Model<float>& model() const { return model_; }

 private:
  nn::Model<float> model_;
};

// Client side of the wire protocol. Keeps one connection alive and reconnects
// once when a reused connection turns out to be closed.
class RemotePredictor final : public Predictor {
 public:
  RemotePredictor(std::string host, std::uint16_t port, std::size_t input_dim, std::size_t num_classes);
  ~RemotePredictor() override;
  RemotePredictor(const RemotePredictor&) = delete;
  RemotePredictor& operator=(const RemotePredictor&) = delete;

  std::size_t input_dim() const override { return input_dim_; }
  std::size_t num_classes() const override { return num_classes_; }
  nn::Tensor predict(const nn::Tensor& inputs) override;

 private:
  nn::Tensor exchange(const nn::Tensor& inputs);
  void disconnect();

  std::string host_;
  std::uint16_t port_;
  std::size_t input_dim_;
  std::size_t num_classes_;
  int fd_ = -1;
  std::mutex mutex_;
};

// Entries rounded half away from zero to `decimals` places.
nn::Tensor round_confidences(const nn::Tensor& predictions, int decimals);

struct Defense {
  std::optional<int> round_decimals;  // none: raw model output
};

// Attacker-side ledger. consumed() only grows, and only by whole batches that
// were answered.
class QueryBudget {
 public:
  explicit QueryBudget(std::uint64_t total) : total_(total) {}
  std::uint64_t total() const { return total_; }
  std::uint64_t consumed() const;
  std::uint64_t remaining() const;

  // Reserves n queries or throws BudgetExhausted; reserved queries count as
  // unavailable until committed or released.
  void reserve(std::uint64_t n);
  void commit(std::uint64_t n);
  void release(std::uint64_t n);

 private:
  std::uint64_t total_;
  std::uint64_t consumed_ = 0;
  std::uint64_t pending_ = 0;
  mutable std::mutex mutex_;
};

class Oracle {
 public:
  Oracle(std::shared_ptr<Predictor> predictor, std::uint64_t budget, Defense defense = {});

  // Predictions for a batch, with the defense applied. Consumes exactly
  // batch-size queries on success and nothing on failure.
  nn::Tensor query(const nn::Tensor& inputs);

  std::size_t input_dim() const { return predictor_->input_dim(); }
  std::size_t num_classes() const { return predictor_->num_classes(); }
  std::uint64_t consumed() const { return budget_.consumed(); }
  std::uint64_t remaining() const { return budget_.remaining(); }
  std::uint64_t total() const { return budget_.total(); }
  const Defense& defense() const { return defense_; }

 private:
  std::shared_ptr<Predictor> predictor_;
  QueryBudget budget_;
  Defense defense_;
};

}  // namespace gamin::oracle
