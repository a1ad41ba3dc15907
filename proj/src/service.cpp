#include "shapewords/service.hpp"

#include "shapewords/config.hpp"
#include "shapewords/dataset.hpp"
#include "shapewords/evaluation.hpp"
#include "shapewords/generation.hpp"
#include "shapewords/image_io.hpp"
#include "shapewords/json_codec.hpp"

#include <httplib.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <regex>
#include <set>

namespace shapewords {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Registry

std::unique_ptr<ShapeRegistry> ShapeRegistry::from_directory(const std::string& root) {
  auto reg = std::make_unique<ShapeRegistry>();
  for (const ShapeSource& s : scan_shapes_dir(root)) reg->add({s.shape_id, s.category, s.cloud_path});
  return reg;
}

void ShapeRegistry::add(ShapeEntry entry) {
  if (entry.id.empty()) throw ValidationError("shape id is empty");
  const std::string id = entry.id;
  if (!entries_.emplace(id, std::move(entry)).second) throw ValidationError("duplicate shape id '" + id + "'");
}

const ShapeEntry* ShapeRegistry::find(const std::string& id) const {
  const auto it = entries_.find(id);
  return it == entries_.end() ? nullptr : &it->second;
}

std::vector<ShapeEntry> ShapeRegistry::list() const {
  std::vector<ShapeEntry> out;
  for (const auto& [id, e] : entries_) out.push_back(e);
  return out;
}

Matrix<float> ShapeRegistry::tokens(const std::string& id, const ShapeEncoderBackend<float>& encoder, bool* cached) {
  const ShapeEntry* entry = find(id);
  if (!entry) throw ValidationError("unknown shape '" + id + "'");
  const std::uint64_t digest = encoder.state_digest() ^ static_cast<std::uint64_t>(encoder.shape_dim());
  {
    std::shared_lock lock(cache_mutex_);
    const auto it = cache_.find(id);
    if (it != cache_.end() && it->second.first == digest && it->second.second.cols() == encoder.shape_dim()) {
      if (cached) *cached = true;
      return it->second.second;
    }
  }
  Matrix<float> t = encoder.encode(read_point_cloud(entry->cloud_path));
  std::unique_lock lock(cache_mutex_);
  cache_[id] = {digest, t};
  if (cached) *cached = false;
  return t;
}

void ShapeRegistry::clear_cache() {
  std::unique_lock lock(cache_mutex_);
  cache_.clear();
}

// ---------------------------------------------------------------------------
// Executor

BoundedExecutor::BoundedExecutor(int workers, int queue_limit) : limit_(static_cast<std::size_t>(queue_limit)) {
  if (workers <= 0 || queue_limit < 0) throw ValidationError("executor needs workers > 0 and queue limit >= 0");
  for (int i = 0; i < workers; ++i) threads_.emplace_back([this] { loop(); });
}

BoundedExecutor::~BoundedExecutor() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  cv_.notify_all();
  for (auto& t : threads_) t.join();
}

std::optional<std::future<void>> BoundedExecutor::submit(std::function<void()> task) {
  std::packaged_task<void()> job(std::move(task));
  std::future<void> fut = job.get_future();
  {
    std::lock_guard lock(mutex_);
    if (stopping_ || queue_.size() >= limit_) return std::nullopt;
    queue_.push_back(std::move(job));
  }
  cv_.notify_one();
  return fut;
}

void BoundedExecutor::loop() {
  while (true) {
    std::packaged_task<void()> job;
    {
      std::unique_lock lock(mutex_);
      cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
      if (queue_.empty()) return;
      job = std::move(queue_.front());
      queue_.pop_front();
    }
    job();
  }
}

// ---------------------------------------------------------------------------
// Request validation

namespace {

struct FieldErrors {
  std::map<std::string, std::string> fields;
  void add(const std::string& name, const std::string& msg) { fields.emplace(name, msg); }
  bool empty() const { return fields.empty(); }
};

struct GenerateRequest {
  std::string shape_id;
  std::string prompt_template;
  std::vector<double> lambdas;
  TokenStrategy strategy = TokenStrategy::ObjectAndEos;
  std::uint64_t seed = 0;
  int steps = 50;
  double handoff_k = 0.0;
  std::optional<std::pair<double, double>> depth_ref;  // azimuth, elevation

  json canonical(bool sweep) const {
    json j = {{"shape_id", shape_id}, {"prompt_template", prompt_template}, {"strategy", to_string(strategy)},
              {"seed", seed},         {"steps", steps},                     {"handoff_k", handoff_k}};
    if (sweep)
      j["lambdas"] = lambdas;
    else
      j["lambda"] = lambdas.front();
    if (depth_ref) j["depth_ref"] = {{"azimuth", depth_ref->first}, {"elevation", depth_ref->second}};
    return j;
  }
};

bool is_number(const json& v) { return v.is_number() && std::isfinite(v.get<double>()); }

GenerateRequest parse_generate(const json& body, bool sweep, int max_steps, std::size_t max_sweep, FieldErrors& err) {
  GenerateRequest r;
  static const std::set<std::string> common = {"shape_id", "prompt_template", "strategy", "seed",
                                               "steps",    "handoff_k",       "depth_ref"};
  for (const auto& [key, _] : body.items())
    if (!common.count(key) && key != (sweep ? "lambdas" : "lambda")) err.add(key, "unknown field");

  if (!body.contains("shape_id") || !body["shape_id"].is_string() || body["shape_id"].get<std::string>().empty())
    err.add("shape_id", "required non-empty string");
  else
    r.shape_id = body["shape_id"];

  if (!body.contains("prompt_template") || !body["prompt_template"].is_string()) {
    err.add("prompt_template", "required string");
  } else {
    r.prompt_template = body["prompt_template"];
    if (count_placeholders(r.prompt_template) != 1)
      err.add("prompt_template", std::string("must contain exactly one ") + kShapePlaceholder);
  }

  auto check_lambda = [&](const json& v, const std::string& name) {
    if (!is_number(v))
      err.add(name, "must be a number in [0, 1]");
    else if (v.get<double>() < 0.0 || v.get<double>() > 1.0)
      err.add(name, "must be in [0, 1], got " + v.dump());
    else
      r.lambdas.push_back(v.get<double>());
  };
  if (sweep) {
    if (!body.contains("lambdas") || !body["lambdas"].is_array() || body["lambdas"].empty())
      err.add("lambdas", "required non-empty array");
    else if (body["lambdas"].size() > max_sweep)
      err.add("lambdas", "at most " + std::to_string(max_sweep) + " values");
    else
      for (std::size_t i = 0; i < body["lambdas"].size(); ++i) check_lambda(body["lambdas"][i], "lambdas[" + std::to_string(i) + "]");
  } else if (body.contains("lambda")) {
    check_lambda(body["lambda"], "lambda");
  } else {
    r.lambdas.push_back(1.0);
  }

  if (body.contains("strategy")) {
    try {
      r.strategy = parse_strategy(body["strategy"].is_string() ? body["strategy"].get<std::string>() : "");
    } catch (const ValidationError&) {
      err.add("strategy", "must be one of all_tokens, object_only, eos_only, object_and_eos");
    }
  }
  if (body.contains("seed")) {
    if (!body["seed"].is_number_integer() || body["seed"].get<long long>() < 0)
      err.add("seed", "must be a non-negative integer");
    else
      r.seed = body["seed"].get<std::uint64_t>();
  }
  if (body.contains("steps")) {
    if (!body["steps"].is_number_integer() || body["steps"].get<long long>() < 1 || body["steps"].get<long long>() > max_steps)
      err.add("steps", "must be an integer in [1, " + std::to_string(max_steps) + "]");
    else
      r.steps = body["steps"].get<int>();
  } else if (r.steps > max_steps) {
    r.steps = max_steps;
  }
  if (body.contains("handoff_k")) {
    if (!is_number(body["handoff_k"]) || body["handoff_k"].get<double>() < 0.0 || body["handoff_k"].get<double>() > 100.0)
      err.add("handoff_k", "must be a number in [0, 100]");
    else
      r.handoff_k = body["handoff_k"].get<double>();
  }
  if (body.contains("depth_ref")) {
    const json& d = body["depth_ref"];
    if (!d.is_object() || !d.contains("azimuth") || !is_number(d["azimuth"]) ||
        (d.contains("elevation") && !is_number(d["elevation"])))
      err.add("depth_ref", "must be {\"azimuth\": number, \"elevation\": number}");
    else
      r.depth_ref = std::make_pair(d["azimuth"].get<double>(), d.value("elevation", 20.0));
  }
  if (r.handoff_k > 0.0 && !r.depth_ref && !err.fields.count("depth_ref"))
    err.add("depth_ref", "required when handoff_k > 0");
  return r;
}

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, int status, const std::string& message) {
  reply(res, status, {{"error", message}});
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string base64_png(const Image& image) {
  const auto bytes = encode_png_rgb(image);
  return httplib::detail::base64_encode(std::string(bytes.begin(), bytes.end()));
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

std::uint64_t params_digest(const Shape2ClipParams<float>& p) {
  const auto bytes = serialize_params(p);
  return fnv1a(std::string(bytes.begin(), bytes.end()));
}

}  // namespace

// ---------------------------------------------------------------------------
// Service

ServiceOptions ServiceOptions::from_config(const Config& cfg) {
  ServiceOptions o;
  o.host = cfg.get_string("service.host", o.host);
  o.port = static_cast<int>(cfg.get_int("service.port", o.port));
  o.runs_dir = cfg.get_string("service.runs_dir", o.runs_dir);
  o.workers = static_cast<int>(cfg.get_int("service.workers", o.workers));
  o.queue_limit = static_cast<int>(cfg.get_int("service.queue_limit", o.queue_limit));
  o.max_sweep = static_cast<std::size_t>(cfg.get_int("service.max_sweep", static_cast<long>(o.max_sweep)));
  if (o.port < 0 || o.port > 65535) throw ValidationError("service.port out of range");
  return o;
}

Service::Service(ServiceOptions options)
    : options_(std::move(options)),
      server_(std::make_unique<httplib::Server>()),
      executor_(options_.workers, options_.queue_limit) {
  routes();
}

Service::~Service() {
  stop();
  if (loader_.joinable()) loader_.join();
}

void Service::load_async(Loader loader) {
  if (loader_.joinable()) loader_.join();
  loader_ = std::thread([this, loader = std::move(loader)] {
    try {
      set_state(loader());
    } catch (const std::exception& e) {
      std::lock_guard lock(state_mutex_);
      load_error_ = e.what();
    }
  });
}

void Service::set_state(std::shared_ptr<ServiceState> state) {
  if (!state || !state->registry || !state->suite.denoiser || !state->suite.text || !state->suite.shape) throw ValidationError("incomplete service state");
  state->digest = params_digest(state->params) ^ (state->suite.state_digest() * 0x100000001b3ULL);
  std::lock_guard lock(state_mutex_);
  state_ = std::move(state);
}

std::shared_ptr<ServiceState> Service::state() const {
  std::lock_guard lock(state_mutex_);
  return state_;
}

std::optional<std::string> Service::load_error() const {
  std::lock_guard lock(state_mutex_);
  return load_error_;
}

bool Service::listen() { return server_->listen(options_.host, options_.port); }

int Service::bind_any_port() { return server_->bind_to_any_port(options_.host); }

bool Service::listen_after_bind() { return server_->listen_after_bind(); }

void Service::stop() {
  if (server_) server_->stop();
}

void Service::wait_until_ready() const {
  while (!ready() && !load_error()) std::this_thread::sleep_for(std::chrono::milliseconds(5));
}

void Service::routes() {
  auto& srv = *server_;

  srv.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
    if (auto st = state()) return reply(res, 200, {{"status", "ok"}, {"backend", st->suite.kind}});
    if (auto err = load_error()) return reply(res, 503, {{"status", "error"}, {"error", *err}});
    reply(res, 503, {{"status", "loading"}});
  });

  srv.Get("/shapes", [this](const httplib::Request&, httplib::Response& res) {
    auto st = state();
    if (!st) return reply_error(res, 503, "backends are loading");
    json shapes = json::array();
    for (const ShapeEntry& e : st->registry->list()) shapes.push_back({{"id", e.id}, {"category", e.category}});
    reply(res, 200, {{"shapes", shapes}});
  });

  srv.Post("/encode_shape", [this](const httplib::Request& req, httplib::Response& res) {
    auto st = state();
    if (!st) return reply_error(res, 503, "backends are loading");
    json body = json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.is_object())
      return reply(res, 400, {{"error", "validation failed"}, {"fields", {{"body", "must be a JSON object"}}}});
    FieldErrors err;
    for (const auto& [key, _] : body.items())
      if (key != "shape_id") err.add(key, "unknown field");
    if (!body.contains("shape_id") || !body["shape_id"].is_string()) err.add("shape_id", "required string");
    if (!err.empty()) return reply(res, 400, {{"error", "validation failed"}, {"fields", err.fields}});
    const std::string id = body["shape_id"];
    if (!st->registry->find(id)) return reply_error(res, 404, "unknown shape '" + id + "'");
    bool cached = false;
    const Matrix<float> tokens = st->registry->tokens(id, *st->suite.shape, &cached);
    reply(res, 200,
          {{"shape_id", id}, {"rows", tokens.rows()}, {"cols", tokens.cols()}, {"cached", cached},
           {"tokens", codec::matrix_to_json(tokens)}});
  });

  auto generation_handler = [this](bool sweep) {
    return [this, sweep](const httplib::Request& req, httplib::Response& res) {
      auto st = state();
      if (!st) return reply_error(res, 503, "backends are loading");
      json body = json::parse(req.body, nullptr, false);
      if (body.is_discarded() || !body.is_object())
        return reply(res, 400, {{"error", "validation failed"}, {"fields", {{"body", "must be a JSON object"}}}});
      FieldErrors err;
      const GenerateRequest r =
          parse_generate(body, sweep, st->suite.denoiser->num_timesteps(), options_.max_sweep, err);
      if (!err.empty()) return reply(res, 400, {{"error", "validation failed"}, {"fields", err.fields}});
      const ShapeEntry* shape = st->registry->find(r.shape_id);
      if (!shape) return reply_error(res, 404, "unknown shape '" + r.shape_id + "'");

      const json canonical = r.canonical(sweep);
      const std::string run_id =
          hex(fnv1a((sweep ? "sweep:" : "generate:") + canonical.dump(), st->digest ^ 1469598103934665603ULL));
      int status = 200;
      json response;
      auto task = [&] {
        try {
          const auto t0 = std::chrono::steady_clock::now();
          ShapePrompt<float> sp{st->registry->tokens(r.shape_id, *st->suite.shape), r.prompt_template, shape->category};
          SamplerConfig sampler;
          sampler.steps = r.steps;
          sampler.seed = r.seed;
          GenerationTrace trace;
          std::vector<Image> images;
          if (sweep) {
            images = sweep_lambda(st->suite, st->params, sp, r.strategy, r.lambdas, sampler);
            trace.layout = encode_for_generation(st->suite, sp).layout;
          } else {
            HandoffSpec handoff;
            handoff.k_percent = r.handoff_k;
            if (r.depth_ref) {
              ViewSpec view;
              view.azimuth = r.depth_ref->first;
              view.elevation = r.depth_ref->second;
              view.height = view.width = st->suite.denoiser->latent_shape().height * 8;
              handoff.depth = render_depth(normalize_cloud(read_point_cloud(shape->cloud_path)), view);
            }
            images.push_back(generate_with_handoff(st->suite, st->params, sp, GuidanceSpec{r.lambdas.front(), r.strategy},
                                                   sampler, handoff, &trace));
          }
          const double ms =
              std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

          const json layout = {{"shape_span", {trace.layout.shape_begin, trace.layout.shape_end}},
                               {"eos_index", trace.layout.eos_index}};
          response = {{"run_id", run_id}, {"timing_ms", ms}, {"layout", layout}};
          if (sweep) {
            json arr = json::array();
            for (std::size_t i = 0; i < images.size(); ++i)
              arr.push_back({{"lambda", r.lambdas[i]}, {"image", base64_png(images[i])}});
            response["images"] = arr;
          } else {
            response["image"] = base64_png(images.front());
          }

          const fs::path dir = fs::path(options_.runs_dir) / run_id;
          fs::create_directories(dir);
          write_text(dir / "request.json", canonical.dump(2));
          write_png_rgb((dir / "image.png").string(), images.front());
          for (std::size_t i = 1; i < images.size(); ++i)
            write_png_rgb((dir / ("image_" + std::to_string(i) + ".png")).string(), images[i]);
          json metrics = {{"timing_ms", ms}, {"layout", layout}, {"backend", st->suite.kind}};
          if (st->suite.features) {
            const std::string text = expand_template(r.prompt_template, shape->category);
            metrics["clip"] = clip_score(*st->suite.features, images.front(), text);
            metrics["aes"] = st->suite.features->aesthetic_score(images.front());
          }
          write_text(dir / "metrics.json", metrics.dump(2));
        } catch (const ValidationError& e) {
          status = 400;
          response = {{"error", e.what()}};
        } catch (const std::exception& e) {
          status = 500;
          response = {{"error", e.what()}};
        }
      };
      auto fut = executor_.submit(task);
      if (!fut) return reply_error(res, 429, "generation queue is full");
      fut->get();
      reply(res, status, response);
    };
  };
  srv.Post("/generate", generation_handler(false));
  srv.Post("/sweep", generation_handler(true));

  srv.Get(R"(/runs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    static const std::regex valid("[0-9a-f]{16}");
    if (!std::regex_match(id, valid)) return reply_error(res, 404, "unknown run '" + id + "'");
    const fs::path dir = fs::path(options_.runs_dir) / id;
    if (!fs::is_regular_file(dir / "request.json")) return reply_error(res, 404, "unknown run '" + id + "'");
    auto slurp = [](const fs::path& p) {
      std::ifstream in(p, std::ios::binary);
      return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    };
    json out = {{"run_id", id}, {"request", json::parse(slurp(dir / "request.json"), nullptr, false)}};
    if (fs::is_regular_file(dir / "metrics.json")) out["metrics"] = json::parse(slurp(dir / "metrics.json"), nullptr, false);
    if (fs::is_regular_file(dir / "image.png")) out["image"] = httplib::detail::base64_encode(slurp(dir / "image.png"));
    reply(res, 200, out);
  });

  srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      reply_error(res, 500, e.what());
    } catch (...) {
      reply_error(res, 500, "unknown error");
    }
  });
}

std::shared_ptr<ServiceState> load_service_state(const Config& cfg) {
  auto st = std::make_shared<ServiceState>();
  st->suite = load_backend_suite<float>(cfg);
  const Shape2ClipDims dims = dims_from_config(cfg, st->suite.text->embed_dim(), st->suite.shape->shape_dim());
  if (auto path = cfg.find("params"))
    st->params = load_params<float>(*path, &dims);
  else
    st->params = init_params<float>(dims, static_cast<std::uint64_t>(cfg.get_int("shape2clip.seed", 0)));
  st->registry = ShapeRegistry::from_directory(cfg.require_string("shapes_dir"));
  return st;
}

}  // namespace shapewords
