#pragma once

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <future>
#include <set>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "prodcat/catalog.hpp"
#include "prodcat/multicnn.hpp"

namespace prodcat {

using Seconds = std::chrono::duration<double>;

struct BatcherConfig {
  Seconds poll_interval{0.3};
  std::size_t max_batch = 1024;
  std::size_t k = 3;
  Seconds request_timeout{10.0};
  std::size_t queue_capacity = 8 * 1024;

  void validate() const;
};

/// Applies PRODCAT_POLL_INTERVAL, PRODCAT_MAX_BATCH, PRODCAT_QUEUE_CAPACITY and
/// PRODCAT_BIND when set.
void apply_env_overrides(BatcherConfig& config, std::string& bind);

struct ServeRequest {
  std::string request_id;
  std::size_t k = 3;
  Product product;
};

enum class ReplyStatus { ok, invalid, overloaded, duplicate, internal_error, timeout, shutting_down };

struct Reply {
  ReplyStatus status = ReplyStatus::ok;
  std::string request_id;
  std::vector<Prediction> predictions;
  std::string message;
  std::uint64_t batch_id = 0;
};

/// Runs one forward pass over a batch and returns each request's top-k.
using BatchInference = std::function<std::vector<std::vector<Prediction>>(std::span<const ServeRequest>)>;

/// Bounded FIFO drained by one worker thread. A batch is flushed as soon as
/// max_batch requests are waiting, otherwise on every poll tick with a
/// non-empty queue.
class Batcher {
 public:
  struct Stats {
    std::size_t queue_depth = 0;
    std::size_t in_flight_batch = 0;
    std::uint64_t requests = 0;  ///< answered successfully
    std::uint64_t failed = 0;    ///< answered with an internal error
    std::uint64_t rejected = 0;  ///< overload or duplicate at enqueue
    std::uint64_t batches = 0;
    std::vector<std::size_t> recent_batch_sizes;
  };

  Batcher(BatcherConfig config, BatchInference inference);
  ~Batcher();
  Batcher(const Batcher&) = delete;
  Batcher& operator=(const Batcher&) = delete;

  const BatcherConfig& config() const { return config_; }

  /// Requests may be queued before start(); they wait for the first drain.
  void start();
  /// Stops the drain thread; requests still queued are answered with
  /// shutting_down.
  void stop();

  /// Rejections resolve the future immediately.
  std::future<Reply> submit(ServeRequest request);
  /// submit() bounded by request_timeout.
  Reply call(ServeRequest request);

  Stats stats() const;

 private:
  struct Pending {
    ServeRequest request;
    std::chrono::steady_clock::time_point arrival;
    std::promise<Reply> reply;
  };

  void drain_loop();
  void run_batch(std::vector<Pending> batch);

  static constexpr std::size_t kRecentBatches = 4096;

  BatcherConfig config_;
  BatchInference inference_;
  mutable std::mutex mu_;
  std::condition_variable wake_;
  std::deque<Pending> queue_;
  std::set<std::string, std::less<>> in_flight_ids_;
  bool running_ = false;
  bool stopping_ = false;
  std::size_t in_flight_batch_ = 0;
  std::uint64_t requests_ = 0;
  std::uint64_t failed_ = 0;
  std::uint64_t rejected_ = 0;
  std::uint64_t batches_ = 0;
  std::deque<std::size_t> recent_;
  std::thread worker_;
};

/// Batched top-k over a frozen model.
BatchInference model_inference(std::shared_ptr<const MultiCnnModel> model);

struct HttpReply {
  int status = 200;
  std::string body;
  /// Seconds for a Retry-After header; 0 for none.
  int retry_after = 0;
};

/// Request handling independent of the HTTP transport.
class PredictionService {
 public:
  PredictionService(std::shared_ptr<const MultiCnnModel> model, BatcherConfig config, std::uint64_t config_hash);
  /// Uses a caller-supplied inference function; `num_classes` bounds k.
  PredictionService(BatchInference inference, std::size_t num_classes, BatcherConfig config, std::uint64_t model_hash,
                    std::uint64_t config_hash);

  void start() { batcher_.start(); }
  void stop() { batcher_.stop(); }

  /// Body of POST /v1/predict.
  HttpReply predict(const std::string& body);
  /// Body of GET /v1/health.
  HttpReply health() const;

  Batcher& batcher() { return batcher_; }

 private:
  std::size_t num_classes_;
  std::uint64_t model_hash_;
  std::uint64_t config_hash_;
  Batcher batcher_;
};

/// Hash of a model's parameter values, labels and configuration.
std::uint64_t model_hash(const MultiCnnModel& model);

/// Thin HTTP front end over a PredictionService.
class HttpServer {
 public:
  HttpServer(PredictionService& service, std::size_t threads = 64);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds "host:port" (port 0 picks a free one) and serves on a background
  /// thread. Returns the bound port.
  int start(const std::string& bind);
  /// Binds and blocks until stop() is called from elsewhere.
  void run(const std::string& bind);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Splits "host:port"; a bare port binds 127.0.0.1.
std::pair<std::string, int> parse_bind(const std::string& bind);

}  // namespace prodcat
