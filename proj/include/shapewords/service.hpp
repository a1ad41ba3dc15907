#pragma once

// HTTP JSON service over a float backend suite and loaded Shape2CLIP
// parameters.
//
//   GET  /health          {"status":"ok","backend":<kind>}  (503 while loading)
//   GET  /shapes          {"shapes":[{"id","category"}]}
//   POST /encode_shape    {"shape_id"} -> {"shape_id","rows","cols","tokens","cached"}
//   POST /generate        {"shape_id","prompt_template","lambda","strategy","seed","steps",
//                          "handoff_k"?, "depth_ref"?: {"azimuth","elevation"}}
//                         -> {"run_id","image","timing_ms","layout":{"shape_span","eos_index"}}
//   POST /sweep           as /generate with "lambdas":[...] instead of "lambda"
//                         -> {"run_id","images":[{"lambda","image"}],"timing_ms","layout"}
//   GET  /runs/{id}       {"run_id","request","metrics","image"}
//
// Images are base64 PNG. Validation failures return 400 with
// {"error", "fields": {name: message}}; unknown shapes 404; a full
// generation queue 429.

#include "shapewords/backends.hpp"
#include "shapewords/shape2clip.hpp"

#include <json.hpp>

#include <atomic>
#include <condition_variable>
#include <deque>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

namespace httplib {
class Server;
}

namespace shapewords {

struct ShapeEntry {
  std::string id;
  std::string category;
  std::string cloud_path;
};

/// id -> shape, with a lazily filled token cache keyed by encoder digest.
class ShapeRegistry {
 public:
  ShapeRegistry() = default;
  ShapeRegistry(const ShapeRegistry&) = delete;
  ShapeRegistry& operator=(const ShapeRegistry&) = delete;

  /// `<root>/<category>/<id>.(xyz|ply)`.
  static std::unique_ptr<ShapeRegistry> from_directory(const std::string& root);

  void add(ShapeEntry entry);
  const ShapeEntry* find(const std::string& id) const;
  std::vector<ShapeEntry> list() const;
  std::size_t size() const { return entries_.size(); }

  /// Cached tokens; `cached` reports a hit.
  Matrix<float> tokens(const std::string& id, const ShapeEncoderBackend<float>& encoder, bool* cached = nullptr);
  void clear_cache();

 private:
  std::map<std::string, ShapeEntry> entries_;
  mutable std::shared_mutex cache_mutex_;
  std::map<std::string, std::pair<std::uint64_t, Matrix<float>>> cache_;  // id -> (encoder digest, tokens)
};

/// Fixed worker threads over a bounded queue; submit returns nothing when
/// the queue is full.
class BoundedExecutor {
 public:
  BoundedExecutor(int workers, int queue_limit);
  ~BoundedExecutor();
  BoundedExecutor(const BoundedExecutor&) = delete;
  BoundedExecutor& operator=(const BoundedExecutor&) = delete;

  std::optional<std::future<void>> submit(std::function<void()> task);

 private:
  void loop();

  std::size_t limit_;
  std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<std::packaged_task<void()>> queue_;
  bool stopping_ = false;
  std::vector<std::thread> threads_;
};

struct ServiceState {
  BackendSuite<float> suite;
  Shape2ClipParams<float> params;
  std::unique_ptr<ShapeRegistry> registry;
  std::uint64_t digest = 0;  // parameters and backends; filled by Service::set_state
};

struct ServiceOptions {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string runs_dir = "runs";
  int workers = 1;
  int queue_limit = 8;
  std::size_t max_sweep = 16;

  static ServiceOptions from_config(const Config& cfg);
};

class Service {
 public:
  using Loader = std::function<std::shared_ptr<ServiceState>()>;

  explicit Service(ServiceOptions options);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Runs the loader on a background thread; endpoints other than /health
  /// answer 503 until it finishes.
  void load_async(Loader loader);
  /// Installs an already-built state.
  void set_state(std::shared_ptr<ServiceState> state);
  bool ready() const { return state() != nullptr; }
  std::optional<std::string> load_error() const;

  /// Binds and serves until stop(); returns false if binding fails.
  bool listen();
  /// Binds to an ephemeral port on `host` and returns it (serve with listen_after_bind).
  int bind_any_port();
  bool listen_after_bind();
  void stop();
  void wait_until_ready() const;

  httplib::Server& server() { return *server_; }

 private:
  std::shared_ptr<ServiceState> state() const;
  void routes();

  ServiceOptions options_;
  std::unique_ptr<httplib::Server> server_;
  BoundedExecutor executor_;
  mutable std::mutex state_mutex_;
  std::shared_ptr<ServiceState> state_;
  std::optional<std::string> load_error_;
  std::thread loader_;
};

/// Loads backends, parameters, and the shape registry named by the config
/// (`params`, `shapes_dir`).
std::shared_ptr<ServiceState> load_service_state(const Config& cfg);

}  // namespace shapewords
