#include "prodcat/serve.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

// Bursts of concurrent clients overflow httplib's default backlog of 5.
#define CPPHTTPLIB_LISTEN_BACKLOG 1024
#include "httplib.h"
#include "prodcat/checkpoint.hpp"
#include "prodcat/error.hpp"

namespace prodcat {

namespace {

using Clock = std::chrono::steady_clock;
using json = nlohmann::json;

Clock::duration to_clock(Seconds s) { return std::chrono::duration_cast<Clock::duration>(s); }

std::future<Reply> ready(ReplyStatus status, std::string id, std::string message) {
  std::promise<Reply> p;
  Reply r;
  r.status = status;
  r.request_id = std::move(id);
  r.message = std::move(message);
  p.set_value(std::move(r));
  return p.get_future();
}

std::string hex(std::uint64_t v) {
  std::ostringstream out;
  out << std::hex;
  out.width(16);
  out.fill('0');
  out << v;
  return out.str();
}

HttpReply error_reply(int status, std::string_view kind, const std::string& message,
                      const std::vector<std::string>& fields = {}) {
  json doc{{"error", kind}, {"message", message}};
  if (!fields.empty()) {
    doc["fields"] = fields;
  }
  return {status, doc.dump(), 0};
}

}  // namespace

void BatcherConfig::validate() const {
  if (!(poll_interval.count() > 0.0)) {
    throw ConfigError("poll_interval must be > 0");
  }
  if (max_batch < 1 || k < 1) {
    throw ConfigError("max_batch and k must be >= 1");
  }
  if (!(request_timeout.count() > 0.0)) {
    throw ConfigError("request_timeout must be > 0");
  }
  if (queue_capacity < 1) {
    throw ConfigError("queue_capacity must be >= 1");
  }
}

void apply_env_overrides(BatcherConfig& config, std::string& bind) {
  auto get = [](const char* name) -> const char* {
    const char* v = std::getenv(name);
    return v != nullptr && *v != '\0' ? v : nullptr;
  };
  try {
    if (const char* v = get("PRODCAT_POLL_INTERVAL")) config.poll_interval = Seconds(std::stod(v));
    if (const char* v = get("PRODCAT_MAX_BATCH")) config.max_batch = std::stoul(v);
    if (const char* v = get("PRODCAT_QUEUE_CAPACITY")) config.queue_capacity = std::stoul(v);
  } catch (const std::logic_error&) {
    throw ConfigError("malformed PRODCAT_* environment override");
  }
  if (const char* v = get("PRODCAT_BIND")) bind = v;
  config.validate();
}

Batcher::Batcher(BatcherConfig config, BatchInference inference)
    : config_(config), inference_(std::move(inference)) {
  config_.validate();
  if (!inference_) {
    throw std::invalid_argument("Batcher: no inference function");
  }
}

Batcher::~Batcher() { stop(); }

void Batcher::start() {
  std::lock_guard lock(mu_);
  if (running_) {
    return;
  }
  running_ = true;
  stopping_ = false;
  worker_ = std::thread([this] { drain_loop(); });
}

void Batcher::stop() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
  }
  wake_.notify_all();
  if (worker_.joinable()) {
    worker_.join();
  }
  std::deque<Pending> left;
  {
    std::lock_guard lock(mu_);
    running_ = false;
    left.swap(queue_);
    in_flight_ids_.clear();
  }
  for (auto& p : left) {
    Reply r;
    r.status = ReplyStatus::shutting_down;
    r.request_id = p.request.request_id;
    r.message = "service is shutting down";
    p.reply.set_value(std::move(r));
  }
}

std::future<Reply> Batcher::submit(ServeRequest request) {
  std::unique_lock lock(mu_);
  if (stopping_) {
    return ready(ReplyStatus::shutting_down, request.request_id, "service is shutting down");
  }
  if (in_flight_ids_.contains(request.request_id)) {
    ++rejected_;
    return ready(ReplyStatus::duplicate, request.request_id,
                 "request_id '" + request.request_id + "' is already in flight");
  }
  if (queue_.size() >= config_.queue_capacity) {
    ++rejected_;
    return ready(ReplyStatus::overloaded, request.request_id, "queue is full");
  }
  in_flight_ids_.insert(request.request_id);
  Pending p{std::move(request), Clock::now(), {}};
  auto fut = p.reply.get_future();
  queue_.push_back(std::move(p));
  const bool full = queue_.size() >= config_.max_batch;
  lock.unlock();
  if (full) {
    wake_.notify_all();
  }
  return fut;
}

Reply Batcher::call(ServeRequest request) {
  const std::string id = request.request_id;
  auto fut = submit(std::move(request));
  if (fut.wait_for(config_.request_timeout) != std::future_status::ready) {
    Reply r;
    r.status = ReplyStatus::timeout;
    r.request_id = id;
    r.message = "no result within request_timeout";
    return r;
  }
  return fut.get();
}

Batcher::Stats Batcher::stats() const {
  std::lock_guard lock(mu_);
  Stats s;
  s.queue_depth = queue_.size();
  s.in_flight_batch = in_flight_batch_;
  s.requests = requests_;
  s.failed = failed_;
  s.rejected = rejected_;
  s.batches = batches_;
  s.recent_batch_sizes.assign(recent_.begin(), recent_.end());
  return s;
}

void Batcher::drain_loop() {
  const auto poll = to_clock(config_.poll_interval);
  auto next_tick = Clock::now() + poll;
  std::unique_lock lock(mu_);
  while (true) {
    wake_.wait_until(lock, next_tick, [&] { return stopping_ || queue_.size() >= config_.max_batch; });
    if (stopping_) {
      break;
    }
    const auto now = Clock::now();
    const bool full = queue_.size() >= config_.max_batch;
    const bool tick = now >= next_tick;
    if (tick) {
      next_tick += poll;
      if (next_tick <= now) {
        next_tick = now + poll;
      }
    }
    if (!full && !(tick && !queue_.empty())) {
      continue;
    }
    const std::size_t n = std::min(queue_.size(), config_.max_batch);
    std::vector<Pending> batch;
    batch.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      batch.push_back(std::move(queue_.front()));
      queue_.pop_front();
    }
    in_flight_batch_ = n;
    lock.unlock();
    run_batch(std::move(batch));
    lock.lock();
    in_flight_batch_ = 0;
  }
}

void Batcher::run_batch(std::vector<Pending> batch) {
  std::uint64_t batch_id = 0;
  {
    std::lock_guard lock(mu_);
    batch_id = ++batches_;
    recent_.push_back(batch.size());
    if (recent_.size() > kRecentBatches) {
      recent_.pop_front();
    }
  }
  std::vector<ServeRequest> requests;
  requests.reserve(batch.size());
  for (auto& p : batch) {
    requests.push_back(std::move(p.request));
  }

  std::vector<std::vector<Prediction>> results;
  std::string failure;
  try {
    results = inference_(requests);
    if (results.size() != requests.size()) {
      failure = "inference returned " + std::to_string(results.size()) + " results for " +
                std::to_string(requests.size()) + " requests";
    }
  } catch (const std::exception& e) {
    failure = e.what();
  }

  std::vector<Reply> replies(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto& r = replies[i];
    r.request_id = requests[i].request_id;
    r.batch_id = batch_id;
    if (failure.empty()) {
      r.predictions = std::move(results[i]);
    } else {
      r.status = ReplyStatus::internal_error;
      r.message = "inference failed in batch " + std::to_string(batch_id) + ": " + failure;
    }
  }
  {
    std::lock_guard lock(mu_);
    for (const auto& r : replies) {
      in_flight_ids_.erase(r.request_id);
    }
    (failure.empty() ? requests_ : failed_) += batch.size();
  }
  for (std::size_t i = 0; i < batch.size(); ++i) {
    batch[i].reply.set_value(std::move(replies[i]));
  }
}

BatchInference model_inference(std::shared_ptr<const MultiCnnModel> model) {
  return [model = std::move(model)](std::span<const ServeRequest> requests) {
    std::vector<Product> products;
    products.reserve(requests.size());
    for (const auto& r : requests) {
      products.push_back(r.product);
    }
    const auto logits = model->logits(products);
    std::vector<std::vector<Prediction>> out;
    out.reserve(requests.size());
    for (std::size_t i = 0; i < requests.size(); ++i) {
      out.push_back(topk_from_logits(logits[i], model->labels(), requests[i].k));
    }
    return out;
  };
}

std::uint64_t model_hash(const MultiCnnModel& model) {
  const auto params = model.parameters();
  std::string bytes = serialize_checkpoint(snapshot(params, 0));
  for (const auto& label : model.labels()) {
    bytes += label;
    bytes += '\n';
  }
  return fnv1a64(bytes);
}

PredictionService::PredictionService(std::shared_ptr<const MultiCnnModel> model, BatcherConfig config,
                                     std::uint64_t config_hash)
    : num_classes_(model->num_classes()),
      model_hash_(model_hash(*model)),
      config_hash_(config_hash),
      batcher_(config, model_inference(model)) {}

PredictionService::PredictionService(BatchInference inference, std::size_t num_classes, BatcherConfig config,
                                     std::uint64_t model_hash, std::uint64_t config_hash)
    : num_classes_(num_classes),
      model_hash_(model_hash),
      config_hash_(config_hash),
      batcher_(config, std::move(inference)) {}

HttpReply PredictionService::predict(const std::string& body) {
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::parse_error& e) {
    return error_reply(400, "invalid_request", std::string("body is not valid JSON: ") + e.what(), {"body"});
  }
  if (!doc.is_object()) {
    return error_reply(400, "invalid_request", "body must be an object", {"body"});
  }

  std::vector<std::string> bad;
  ServeRequest req;
  req.k = std::min(batcher_.config().k, num_classes_);

  if (const auto it = doc.find("request_id"); it == doc.end() || !it->is_string() || it->get<std::string>().empty()) {
    bad.emplace_back("request_id");
  } else {
    req.request_id = it->get<std::string>();
    req.product.id = req.request_id;
  }

  if (const auto it = doc.find("k"); it != doc.end()) {
    if (!it->is_number_integer() || it->get<long long>() < 1 ||
        static_cast<std::size_t>(it->get<long long>()) > num_classes_) {
      bad.emplace_back("k");
    } else {
      req.k = static_cast<std::size_t>(it->get<long long>());
    }
  }

  if (const auto it = doc.find("unstructured"); it != doc.end()) {
    if (!it->is_object()) {
      bad.emplace_back("unstructured");
    } else {
      for (const auto& [name, text] : it->items()) {
        if (!text.is_string() || name.empty()) {
          bad.push_back("unstructured." + name);
        } else {
          req.product.unstructured[name] = text.get<std::string>();
        }
      }
    }
  }

  if (const auto it = doc.find("structured"); it != doc.end()) {
    if (!it->is_array()) {
      bad.emplace_back("structured");
    } else {
      for (std::size_t i = 0; i < it->size(); ++i) {
        const auto& pair = (*it)[i];
        if (!pair.is_array() || pair.size() != 2 || !pair[0].is_string() || !pair[1].is_string() ||
            pair[0].get<std::string>().empty()) {
          bad.push_back("structured[" + std::to_string(i) + "]");
        } else {
          req.product.structured.emplace_back(pair[0].get<std::string>(), pair[1].get<std::string>());
        }
      }
    }
  }

  for (const auto& [key, value] : doc.items()) {
    if (key != "request_id" && key != "k" && key != "unstructured" && key != "structured") {
      bad.push_back(key);
    }
  }

  if (!bad.empty()) {
    std::string message = "invalid fields:";
    for (const auto& f : bad) {
      message += " " + f;
    }
    return error_reply(400, "invalid_request", message, bad);
  }

  const auto reply = batcher_.call(std::move(req));
  switch (reply.status) {
    case ReplyStatus::ok: {
      json out{{"request_id", reply.request_id}, {"predictions", json::array()}};
      for (const auto& p : reply.predictions) {
        out["predictions"].push_back({{"label", p.label}, {"probability", p.probability}});
      }
      return {200, out.dump(), 0};
    }
    case ReplyStatus::overloaded: {
      auto r = error_reply(503, "overloaded", reply.message);
      r.retry_after = std::max(1, static_cast<int>(std::ceil(batcher_.config().poll_interval.count())));
      return r;
    }
    case ReplyStatus::shutting_down: {
      auto r = error_reply(503, "unavailable", reply.message);
      r.retry_after = 1;
      return r;
    }
    case ReplyStatus::duplicate:
      return error_reply(409, "duplicate_request", reply.message, {"request_id"});
    case ReplyStatus::timeout:
      return error_reply(504, "timeout", reply.message);
    case ReplyStatus::invalid:
      return error_reply(400, "invalid_request", reply.message);
    case ReplyStatus::internal_error: {
      json out{{"error", "internal"}, {"message", reply.message}, {"batch_id", reply.batch_id}};
      return {500, out.dump(), 0};
    }
  }
  return error_reply(500, "internal", "unhandled reply status");
}

HttpReply PredictionService::health() const {
  const auto s = batcher_.stats();
  const auto& cfg = batcher_.config();
  json doc{
      {"status", "ok"},
      {"queue_depth", s.queue_depth},
      {"in_flight_batch", s.in_flight_batch},
      {"requests", s.requests},
      {"failed", s.failed},
      {"rejected", s.rejected},
      {"batches", s.batches},
      {"mean_batch_size", s.batches == 0 ? 0.0
                                         : static_cast<double>(s.requests + s.failed) / static_cast<double>(s.batches)},
      {"recent_batch_sizes", s.recent_batch_sizes},
      {"model_hash", hex(model_hash_)},
      {"config_hash", hex(config_hash_)},
      {"poll_interval", cfg.poll_interval.count()},
      {"max_batch", cfg.max_batch},
      {"queue_capacity", cfg.queue_capacity},
      {"k", cfg.k},
  };
  return {200, doc.dump(), 0};
}

std::pair<std::string, int> parse_bind(const std::string& bind) {
  const auto colon = bind.rfind(':');
  std::string host = colon == std::string::npos ? "127.0.0.1" : bind.substr(0, colon);
  const std::string port_text = colon == std::string::npos ? bind : bind.substr(colon + 1);
  if (host.empty()) {
    host = "0.0.0.0";
  }
  int port = -1;
  try {
    std::size_t used = 0;
    port = std::stoi(port_text, &used);
    if (used != port_text.size()) {
      port = -1;
    }
  } catch (const std::logic_error&) {
  }
  if (port < 0 || port > 65535) {
    throw ConfigError("bind address '" + bind + "' is not host:port");
  }
  return {host, port};
}

struct HttpServer::Impl {
  PredictionService& service;
  httplib::Server server;
  std::thread thread;

  Impl(PredictionService& s, std::size_t threads) : service(s) {
    server.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
    auto send = [](httplib::Response& res, const HttpReply& r) {
      res.status = r.status;
      if (r.retry_after > 0) {
        res.set_header("Retry-After", std::to_string(r.retry_after));
      }
      res.set_content(r.body, "application/json");
    };
    server.Post("/v1/predict", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, service.predict(req.body));
    });
    server.Get("/v1/health",
               [this, send](const httplib::Request&, httplib::Response& res) { send(res, service.health()); });
  }

  int bind(const std::string& address) {
    const auto [host, port] = parse_bind(address);
    if (port == 0) {
      const int bound = server.bind_to_any_port(host);
      if (bound < 0) {
        throw IoError("cannot bind " + host);
      }
      return bound;
    }
    if (!server.bind_to_port(host, port)) {
      throw IoError("cannot bind " + address);
    }
    return port;
  }
};

HttpServer::HttpServer(PredictionService& service, std::size_t threads)
    : impl_(std::make_unique<Impl>(service, std::max<std::size_t>(1, threads))) {}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(const std::string& bind) {
  const int port = impl_->bind(bind);
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port;
}

void HttpServer::run(const std::string& bind) {
  impl_->bind(bind);
  impl_->server.listen_after_bind();
}

void HttpServer::stop() {
  if (!impl_) {
    return;
  }
  impl_->server.stop();
  if (impl_->thread.joinable()) {
    impl_->thread.join();
  }
}

}  // namespace prodcat
