// shapewords: train, generate, sweep, evaluate, build-dataset, serve and
// encode-shape. Exit status 0 on success, 1 on usage or validation errors,
// 2 on runtime failures.

#include "shapewords/dataset.hpp"
#include "shapewords/evaluation.hpp"
#include "shapewords/generation.hpp"
#include "shapewords/image_io.hpp"
#include "shapewords/json_codec.hpp"
#include "shapewords/service.hpp"
#include "shapewords/toy_shapes.hpp"
#include "shapewords/training.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

using namespace shapewords;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;  // key=value

  Config load() const {
    Config cfg = config_path.empty() ? Config{} : Config::load(config_path);
    for (const std::string& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos || eq == 0) throw ValidationError("--set expects key=value, got '" + kv + "'");
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
  }
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "key = value config file")->check(CLI::ExistingFile);
  app->add_option("--set", c.overrides, "override a config key (key=value); repeatable");
}

template <typename S>
Shape2ClipParams<S> params_for(const Config& cfg, const BackendSuite<S>& suite, const std::string& path,
                               const char* flag = "--params") {
  const Shape2ClipDims dims = dims_from_config(cfg, suite.text->embed_dim(), suite.shape->shape_dim());
  if (!path.empty()) return load_params<S>(path, &dims);
  std::cerr << "no " << flag << " given; using freshly initialized parameters (zero residual)\n";
  return init_params<S>(dims, static_cast<std::uint64_t>(cfg.get_int("shape2clip.seed", 0)));
}

std::string category_of(const std::string& cloud_path, const std::string& explicit_category) {
  if (!explicit_category.empty()) return explicit_category;
  const fs::path p(cloud_path);
  const std::string parent = p.parent_path().filename().string();
  return parent.empty() ? p.stem().string() : parent;
}

void ensure_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

std::ofstream open_out(const std::string& path) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  return out;
}

// ---------------------------------------------------------------------------

struct GenerateArgs {
  Common common;
  std::string shape, category, prompt, strategy = "object_and_eos", params, depth, out, handoff_mode = "shapewords";
  double lambda = 1.0, handoff_k = 0.0;
  std::vector<double> lambdas;
  std::uint64_t seed = 0;
  int steps = 50;
  bool plain = false;
};

void add_generation_options(CLI::App* app, GenerateArgs& a) {
  add_common(app, a.common);
  app->add_option("--shape", a.shape, "point cloud (.xyz or .ply)")->check(CLI::ExistingFile);
  app->add_option("--category", a.category, "label substituted for [SHAPE-ID] (default: parent directory name)");
  app->add_option("--prompt", a.prompt, "prompt template containing [SHAPE-ID]")->required();
  app->add_option("--strategy", a.strategy, "all_tokens | object_only | eos_only | object_and_eos");
  app->add_option("--seed", a.seed, "sampler seed");
  app->add_option("--steps", a.steps, "sampler steps")->check(CLI::PositiveNumber);
  app->add_option("--params", a.params, "Shape2CLIP parameter file")->check(CLI::ExistingFile);
}

SamplerConfig sampler_for(const GenerateArgs& a, const Config& cfg) {
  SamplerConfig s;
  s.steps = a.steps;
  s.seed = a.seed;
  s.eta = cfg.get_double("sampler.eta", s.eta);
  s.guidance_scale = cfg.get_double("sampler.guidance_scale", s.guidance_scale);
  s.validate();
  return s;
}

int run_generate(const GenerateArgs& a) {
  const Config cfg = a.common.load();
  const auto suite = load_backend_suite<float>(cfg);
  const SamplerConfig sampler = sampler_for(a, cfg);
  Image image;
  if (a.plain) {
    if (a.shape.empty() && a.category.empty()) throw ValidationError("--plain needs --category or --shape");
    image = generate_plain(suite, expand_template(a.prompt, category_of(a.shape, a.category)), sampler);
  } else {
    if (a.shape.empty()) throw ValidationError("--shape is required");
    const ShapePrompt<float> sp{suite.shape->encode(read_point_cloud(a.shape)), a.prompt, category_of(a.shape, a.category)};
    const auto params = params_for(cfg, suite, a.params);
    HandoffSpec handoff;
    handoff.k_percent = a.handoff_k;
    if (a.handoff_mode == "cnet-stop")
      handoff.mode = HandoffMode::CNetStop;
    else if (a.handoff_mode != "shapewords")
      throw ValidationError("--handoff-mode must be shapewords or cnet-stop");
    if (!a.depth.empty()) handoff.depth = read_png_gray(a.depth);
    GenerationTrace trace;
    image = generate_with_handoff(suite, params, sp, GuidanceSpec{a.lambda, parse_strategy(a.strategy)}, sampler, handoff,
                                  &trace);
    std::cerr << "shape span [" << trace.layout.shape_begin << ", " << trace.layout.shape_end << "], eos "
              << trace.layout.eos_index << "\n";
  }
  ensure_parent(a.out);
  write_png_rgb(a.out, image);
  std::cout << a.out << "\n";
  return 0;
}

int run_sweep(const GenerateArgs& a) {
  const Config cfg = a.common.load();
  if (a.shape.empty()) throw ValidationError("--shape is required");
  const auto suite = load_backend_suite<float>(cfg);
  const ShapePrompt<float> sp{suite.shape->encode(read_point_cloud(a.shape)), a.prompt, category_of(a.shape, a.category)};
  const auto params = params_for(cfg, suite, a.params);
  const auto images = sweep_lambda(suite, params, sp, parse_strategy(a.strategy), a.lambdas, sampler_for(a, cfg));
  fs::create_directories(a.out);
  for (std::size_t i = 0; i < images.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof name, "%02zu_lambda_%.2f.png", i, a.lambdas[i]);
    const std::string path = (fs::path(a.out) / name).string();
    write_png_rgb(path, images[i]);
    std::cout << path << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  Common common;
  std::string manifest, out, log, init, checkpoints;
  long max_steps = -2;
  int epochs = -1;
  long seed = -1;
};

int run_train(const TrainArgs& a) {
  Config cfg = a.common.load();
  if (!a.checkpoints.empty()) cfg.set("train.checkpoint_dir", a.checkpoints);
  if (a.max_steps != -2) cfg.set("train.max_steps", std::to_string(a.max_steps));
  if (a.epochs >= 0) cfg.set("train.epochs", std::to_string(a.epochs));
  if (a.seed >= 0) cfg.set("train.seed", std::to_string(a.seed));
  const TrainConfig tc = TrainConfig::from_config(cfg);
  const auto suite = load_backend_suite<double>(cfg);
  const auto data = load_triplets<double>(a.manifest, suite);
  const auto initial = params_for(cfg, suite, a.init, "--init");
  const std::string log_path = a.log.empty() ? a.out + ".log.jsonl" : a.log;
  std::ofstream log = open_out(log_path);
  std::cerr << "training on " << data.size() << " triplets\n";
  const auto result = train(data, *suite.denoiser, initial, tc, [&](const StepRecord& r) {
    log << step_record_json(r) << '\n';
    log.flush();
  });
  ensure_parent(a.out);
  save_params(a.out, result.params.cast<float>());
  if (!result.log.empty()) {
    std::vector<double> losses;
    for (const auto& r : result.log) losses.push_back(r.loss);
    const auto s = smoothed(losses, std::min<std::size_t>(50, losses.size()));
    std::cerr << result.log.size() << " steps, smoothed loss " << s.front() << " -> " << s.back() << "\n";
  }
  std::cout << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct EvaluateArgs {
  Common common;
  std::string manifest, params, out, strategy = "object_and_eos", run_id;
  double lambda = 1.0, handoff_k = 0.0;
  int views = 6, steps = 50;
  std::uint64_t seed = 0;
  bool closed_loop = false;
};

int run_evaluate(const EvaluateArgs& a) {
  const Config cfg = a.common.load();
  const auto suite = load_backend_suite<float>(cfg);
  if (!suite.segmenter) throw ValidationError("evaluate needs a segmenter backend (backend.model_path.segmenter)");
  if (!suite.features) throw ValidationError("evaluate needs an image feature backend (backend.model_path.features)");
  if (a.closed_loop && !suite.generator)
    throw ValidationError("--closed-loop needs an image generator backend (backend.model_path.generator)");
  const TokenStrategy strategy = parse_strategy(a.strategy);
  const auto params = params_for(cfg, suite, a.params);
  SamplerConfig sampler;
  sampler.steps = a.steps;
  sampler.seed = a.seed;
  sampler.validate();
  HandoffSpec k_check;
  k_check.k_percent = a.handoff_k;
  k_check.phase_one_steps(a.steps);

  const auto records = read_manifest(a.manifest);
  if (records.empty()) throw ValidationError("manifest " + a.manifest + " has no records");
  // First prompt per shape drives its adherence views; every distinct
  // (shape, prompt) pair is generated once for CLIP and distribution metrics.
  std::map<std::string, const ManifestRecord*> first_by_shape;
  std::set<std::pair<std::string, std::string>> seen;
  std::vector<const ManifestRecord*> pairs;
  for (const ManifestRecord& r : records) {
    first_by_shape.emplace(r.shape_id, &r);
    if (seen.emplace(r.shape_id, r.prompt).second) pairs.push_back(&r);
  }
  const int size = suite.denoiser->latent_shape().height * 8;
  const double elevation = cfg.get_double("evaluate.elevation", 20.0);
  const auto views = uniform_views(a.views, elevation, size, static_cast<int>(cfg.get_int("evaluate.splat_radius", 1)));

  std::map<std::string, Matrix<float>> tokens;
  std::map<std::string, Points<double>> clouds;
  auto shape_of = [&](const ManifestRecord& r) {
    if (!clouds.count(r.shape_id)) {
      clouds[r.shape_id] = read_point_cloud(resolve_asset(a.manifest, r.cloud_path));
      tokens[r.shape_id] = suite.shape->encode(clouds[r.shape_id]);
    }
    return ShapePrompt<float>{tokens[r.shape_id], r.prompt, r.label()};
  };
  auto generate_at = [&](const ManifestRecord& r, const Plane& depth) {
    if (a.closed_loop) return suite.generator->generate(depth, expand_template(r.prompt, r.label()), {}, a.seed);
    HandoffSpec h;
    h.k_percent = a.handoff_k;
    if (a.handoff_k > 0.0) h.depth = depth;
    return generate_with_handoff(suite, params, shape_of(r), GuidanceSpec{a.lambda, strategy}, sampler, h);
  };

  std::ofstream shapes_out = open_out(a.out + ".shapes.jsonl");
  double iou_sum = 0.0, cd_sum = 0.0;
  for (const auto& [id, rec] : first_by_shape) {
    shape_of(*rec);
    const AdherenceResult adh = multiview_adherence(
        clouds[id], [&](const ViewSpec&, const Plane& depth) { return generate_at(*rec, depth); }, *suite.segmenter, views);
    iou_sum += adh.mean_iou;
    cd_sum += adh.mean_chamfer;
    shapes_out << json{{"shape_id", id}, {"s_iou", adh.mean_iou}, {"s_cd", adh.mean_chamfer},
                       {"views", adh.views.size()}, {"exclusions", adh.exclusions}, {"errors", adh.errors}}
                      .dump()
               << '\n';
    for (const std::string& e : adh.errors) std::cerr << id << ": excluded " << e << "\n";
  }

  const ViewSpec front = views.front();
  std::vector<Eigen::VectorXd> generated, reference;
  double clip_sum = 0.0, aes_sum = 0.0;
  for (const ManifestRecord* r : pairs) {
    shape_of(*r);
    const Image img = generate_at(*r, render_depth(normalize_cloud(clouds[r->shape_id]), front));
    clip_sum += clip_score(*suite.features, img, expand_template(r->prompt, r->label()));
    aes_sum += suite.features->aesthetic_score(img);
    generated.push_back(suite.features->embed_image(img));
  }
  for (const ManifestRecord& r : records) reference.push_back(suite.features->embed_image(read_png_rgb(resolve_asset(a.manifest, r.image_path))));
  auto stack = [](const std::vector<Eigen::VectorXd>& rows) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    return m;
  };

  RunMetrics run;
  run.run_id = a.run_id.empty() ? fs::path(a.out).filename().string() : a.run_id;
  run.lambda = a.lambda;
  run.strategy = to_string(strategy);
  run.handoff_k = a.handoff_k;
  run.seed = a.seed;
  run.s_iou = iou_sum / static_cast<double>(first_by_shape.size());
  run.s_cd = cd_sum / static_cast<double>(first_by_shape.size());
  run.clip = clip_sum / static_cast<double>(pairs.size());
  run.aes = aes_sum / static_cast<double>(pairs.size());
  if (generated.size() >= 2 && reference.size() >= 2) {
    run.fid = frechet_distance(stack(generated), stack(reference));
    run.kid = kernel_distance(stack(generated), stack(reference));
  } else {
    std::cerr << "fewer than two images per set; FID and KID omitted\n";
  }
  const MetricsReport report = assemble_report({run});
  open_out(a.out + ".jsonl") << report.to_jsonl();
  const std::string table = report.to_table();
  open_out(a.out + ".md") << table;
  std::cout << table;
  return 0;
}

// ---------------------------------------------------------------------------

struct DatasetArgs {
  Common common;
  std::string shapes_dir, bank, out;
  int workers = 0, size = 0;
  long seed = -1;
};

int run_build_dataset(const DatasetArgs& a) {
  Config cfg = a.common.load();
  if (a.workers > 0) cfg.set("dataset.workers", std::to_string(a.workers));
  if (a.size > 0) cfg.set("dataset.image_size", std::to_string(a.size));
  if (a.seed >= 0) cfg.set("dataset.seed", std::to_string(a.seed));
  const DatasetOptions options = DatasetOptions::from_config(cfg);
  const auto suite = load_backend_suite<float>(cfg);
  if (!suite.generator || !suite.inpainter)
    throw ValidationError("build-dataset needs generator and inpainter backends (backend.model_path.generator/inpainter)");
  const auto shapes = scan_shapes_dir(a.shapes_dir);
  const auto bank = read_prompt_bank(a.bank);
  const DatasetSummary summary = build_dataset(shapes, bank, a.out, options, *suite.generator, *suite.inpainter);
  std::cout << summary.records.size() << " records from " << shapes.size() << " shapes -> "
            << (fs::path(a.out) / "manifest.jsonl").string() << "\n";
  for (const std::string& f : summary.failures) std::cerr << "failed: " << f << "\n";
  return summary.failures.empty() ? 0 : 2;
}

struct BankArgs {
  std::string mediums, adjectives, pattern = kDefaultBankPattern, out;
};

int run_prompt_bank(const BankArgs& a) {
  const PromptBank bank = build_prompt_bank(read_lines(a.mediums), read_lines(a.adjectives), a.pattern);
  ensure_parent(a.out);
  write_prompt_bank(a.out, bank);
  std::cout << bank.prompts.size() << " prompts -> " << a.out << "\n";
  return 0;
}

struct ToyShapesArgs {
  std::string out;
  int per_category = 2, points = 2048;
  std::uint64_t seed = 0;
};

int run_toy_shapes(const ToyShapesArgs& a) {
  toy::write_procedural_shapes(a.out, a.per_category, a.points, a.seed);
  std::cout << a.per_category * static_cast<int>(toy::procedural_categories().size()) << " shapes -> " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct ServeArgs {
  Common common;
  std::string host, params, shapes_dir, runs_dir;
  int port = -1;
};

Service* g_service = nullptr;

int run_serve(const ServeArgs& a) {
  Config cfg = a.common.load();
  if (!a.host.empty()) cfg.set("service.host", a.host);
  if (a.port >= 0) cfg.set("service.port", std::to_string(a.port));
  if (!a.params.empty()) cfg.set("params", a.params);
  if (!a.shapes_dir.empty()) cfg.set("shapes_dir", a.shapes_dir);
  if (!a.runs_dir.empty()) cfg.set("service.runs_dir", a.runs_dir);
  cfg.require_string("shapes_dir");
  const ServiceOptions options = ServiceOptions::from_config(cfg);
  Service service(options);
  service.load_async([cfg] { return load_service_state(cfg); });
  g_service = &service;
  std::signal(SIGINT, [](int) { g_service->stop(); });
  std::signal(SIGTERM, [](int) { g_service->stop(); });
  std::cerr << "listening on http://" << options.host << ":" << options.port << "\n";
  const bool ok = service.listen();
  g_service = nullptr;
  if (!ok) {
    std::cerr << "error: could not bind " << options.host << ":" << options.port << "\n";
    return 2;
  }
  return 0;
}

struct EncodeArgs {
  Common common;
  std::string shape, out;
};

int run_encode_shape(const EncodeArgs& a) {
  const Config cfg = a.common.load();
  const auto suite = load_backend_suite<float>(cfg);
  const Matrix<float> t = suite.shape->encode(read_point_cloud(a.shape));
  const std::string text =
      json{{"shape", a.shape}, {"rows", t.rows()}, {"cols", t.cols()}, {"tokens", codec::matrix_to_json(t)}}.dump() + "\n";
  if (a.out.empty())
    std::cout << text;
  else
    open_out(a.out) << text;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ShapeWords: shape-guided text-to-image generation at desk scale"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "generate one image");
  add_generation_options(generate, gen);
  generate->add_option("--lambda", gen.lambda, "guidance strength in [0, 1]");
  generate->add_option("--handoff-k", gen.handoff_k, "percent of steps under depth control");
  generate->add_option("--handoff-mode", gen.handoff_mode, "shapewords | cnet-stop");
  generate->add_option("--depth", gen.depth, "depth PNG for the handoff phase")->check(CLI::ExistingFile);
  generate->add_flag("--plain", gen.plain, "skip Shape2CLIP and condition on the plain prompt");
  generate->add_option("--out", gen.out, "output PNG")->required();

  GenerateArgs sw;
  auto* sweep = app.add_subcommand("sweep", "one image per lambda from a shared seed");
  add_generation_options(sweep, sw);
  sweep->add_option("--lambdas", sw.lambdas, "comma-separated guidance strengths")->delimiter(',')->required();
  sweep->add_option("--out", sw.out, "output directory")->required();

  TrainArgs tr;
  auto* trainc = app.add_subcommand("train", "fit Shape2CLIP parameters on a manifest");
  add_common(trainc, tr.common);
  trainc->add_option("--manifest", tr.manifest, "training manifest (jsonl)")->required()->check(CLI::ExistingFile);
  trainc->add_option("--out", tr.out, "output parameter file")->required();
  trainc->add_option("--log", tr.log, "metrics log (default <out>.log.jsonl)");
  trainc->add_option("--init", tr.init, "initial parameter file")->check(CLI::ExistingFile);
  trainc->add_option("--checkpoints", tr.checkpoints, "checkpoint directory");
  trainc->add_option("--max-steps", tr.max_steps, "stop after this many updates");
  trainc->add_option("--epochs", tr.epochs, "epochs when --max-steps is unset");
  trainc->add_option("--seed", tr.seed, "training seed");

  EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "shape and prompt adherence report for a manifest");
  add_common(evaluate, ev.common);
  evaluate->add_option("--manifest", ev.manifest, "manifest of shapes, prompts and reference images")
      ->required()
      ->check(CLI::ExistingFile);
  evaluate->add_option("--params", ev.params, "Shape2CLIP parameter file")->check(CLI::ExistingFile);
  evaluate->add_option("--views", ev.views, "uniform views per shape")->check(CLI::PositiveNumber);
  evaluate->add_option("--out", ev.out, "report path prefix (.jsonl, .md, .shapes.jsonl)")->required();
  evaluate->add_option("--lambda", ev.lambda, "guidance strength in [0, 1]");
  evaluate->add_option("--strategy", ev.strategy, "token strategy");
  evaluate->add_option("--handoff-k", ev.handoff_k, "percent of steps under depth control");
  evaluate->add_option("--seed", ev.seed, "sampler seed");
  evaluate->add_option("--steps", ev.steps, "sampler steps")->check(CLI::PositiveNumber);
  evaluate->add_option("--run-id", ev.run_id, "run label (default: --out file name)");
  evaluate->add_flag("--closed-loop", ev.closed_loop, "render views with the depth-compositing generator");

  DatasetArgs ds;
  auto* dataset = app.add_subcommand("build-dataset", "render shapes and synthesize training images");
  add_common(dataset, ds.common);
  dataset->add_option("--shapes-dir", ds.shapes_dir, "<dir>/<category>/<id>.(xyz|ply)")->required()->check(CLI::ExistingDirectory);
  dataset->add_option("--bank", ds.bank, "prompt bank (jsonl)")->required()->check(CLI::ExistingFile);
  dataset->add_option("--out", ds.out, "output directory")->required();
  dataset->add_option("--workers", ds.workers, "synthesis worker threads")->check(CLI::PositiveNumber);
  dataset->add_option("--size", ds.size, "image size in pixels")->check(CLI::PositiveNumber);
  dataset->add_option("--seed", ds.seed, "prompt assignment and synthesis seed");

  BankArgs bk;
  auto* bank = app.add_subcommand("prompt-bank", "cartesian product of mediums and adjectives");
  bank->add_option("--mediums", bk.mediums, "one medium per line")->required()->check(CLI::ExistingFile);
  bank->add_option("--adjectives", bk.adjectives, "one adjective per line")->required()->check(CLI::ExistingFile);
  bank->add_option("--pattern", bk.pattern, "template with {adjective}, {medium} and [SHAPE-ID]");
  bank->add_option("--out", bk.out, "output bank (jsonl)")->required();

  ToyShapesArgs ts;
  auto* toys = app.add_subcommand("toy-shapes", "write procedural point clouds for the toy world");
  toys->add_option("--out", ts.out, "output shapes directory")->required();
  toys->add_option("--per-category", ts.per_category, "shapes per category")->check(CLI::PositiveNumber);
  toys->add_option("--points", ts.points, "points per shape")->check(CLI::Range(64, 1 << 20));
  toys->add_option("--seed", ts.seed, "proportion jitter seed");

  ServeArgs sv;
  auto* serve = app.add_subcommand("serve", "HTTP JSON service");
  add_common(serve, sv.common);
  serve->add_option("--host", sv.host, "bind address (service.host)");
  serve->add_option("--port", sv.port, "port (service.port)")->check(CLI::Range(0, 65535));
  serve->add_option("--params", sv.params, "Shape2CLIP parameter file (params)")->check(CLI::ExistingFile);
  serve->add_option("--shapes-dir", sv.shapes_dir, "shape registry root (shapes_dir)");
  serve->add_option("--runs-dir", sv.runs_dir, "run directory (service.runs_dir)");

  EncodeArgs en;
  auto* encode = app.add_subcommand("encode-shape", "shape tokens as JSON");
  add_common(encode, en.common);
  encode->add_option("--shape", en.shape, "point cloud (.xyz or .ply)")->required()->check(CLI::ExistingFile);
  encode->add_option("--out", en.out, "output JSON (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    if (app.get_subcommands().empty() && argc >= 2 && argv[1][0] != '-') {
      std::cerr << "unknown subcommand '" << argv[1] << "'\n\n" << app.help();
      return 1;
    }
    app.exit(e);
    return 1;
  }

  try {
    if (*generate) return run_generate(gen);
    if (*sweep) return run_sweep(sw);
    if (*trainc) return run_train(tr);
    if (*evaluate) return run_evaluate(ev);
    if (*dataset) return run_build_dataset(ds);
    if (*bank) return run_prompt_bank(bk);
    if (*toys) return run_toy_shapes(ts);
    if (*serve) return run_serve(sv);
    if (*encode) return run_encode_shape(en);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
