#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>
#include <sstream>

#include "satkit/checkpoint.hpp"
#include "satkit/config.hpp"
#include "satkit/errors.hpp"
#include "satkit/eval.hpp"
#include "satkit/io.hpp"
#include "satkit/sat.hpp"
#include "satkit/saliency.hpp"
#include "satkit/training.hpp"

namespace fs = std::filesystem;
using namespace satkit;
using nlohmann::json;

namespace {

struct Cli {
  std::string config_path;
  std::string checkpoint;
  std::string grid = "default";
  std::string method;
  std::string mode_override;
  std::string out_override;
  bool force = false;
};

void require_fresh(const fs::path& p, bool force) {
  if (fs::exists(p) && !force) {
    throw ConfigError("refusing to overwrite " + p.string() + " (pass --force)");
  }
}

models::InputSpec input_of(const data::Dataset& ds) {
  return {ds.channels(), ds.height(), ds.width()};
}

std::string short_hash(const std::string& h) { return h.substr(0, 8); }

json provenance(const config::ExperimentConfig& cfg) {
  return {{"config_hash", cfg.config_hash}, {"seed", cfg.seed}};
}

fs::path out_dir(const config::ExperimentConfig& cfg, const Cli& cli) {
  fs::path base = cli.out_override.empty() ? cfg.output_dir : fs::path(cli.out_override);
  return config::resolve_output_dir(base);
}

// ---------------------------------------------------------------- teacher

int cmd_train_teacher(const Cli& cli) {
  auto cfg = config::ExperimentConfig::load(cli.config_path);
  auto out = out_dir(cfg, cli);
  auto ckpt_path = out / ("teacher-" + cfg.teacher.mode + ".ckpt");
  auto hist_path = out / ("teacher-" + cfg.teacher.mode + "-history.jsonl");
  require_fresh(ckpt_path, cli.force);

  auto ds = cfg.dataset.load_train();
  training::TrainConfig overrides;
  overrides.epochs = cfg.teacher.epochs.value_or(cfg.teacher.mode == "adv" ? 2 * cfg.train.epochs
                                                                           : cfg.train.epochs);
  overrides.batch_size = cfg.train.batch_size;
  overrides.learning_rate = cfg.teacher.learning_rate.value_or(cfg.train.learning_rate);
  if (cfg.train.attack) overrides.attack = cfg.train.attack;

  auto mode = cfg.teacher.mode == "adv" ? training::TeacherMode::adv : training::TeacherMode::std_;
  std::cout << "training " << cfg.teacher.arch << " teacher (" << cfg.teacher.mode << ", "
            << overrides.epochs << " epochs) on " << ds.size() << " samples\n";
  auto teacher = training::make_teacher(ds, cfg.teacher.arch, mode, cfg.seed, &overrides);

  json meta = provenance(cfg);
  meta["epochs"] = overrides.epochs;
  meta["arch"] = cfg.teacher.arch;
  models::save_checkpoint(teacher.model, ckpt_path, teacher.tag, meta);
  teacher.history.meta["config_hash"] = cfg.config_hash;
  teacher.history.write_jsonl(hist_path);
  std::cout << "wrote " << ckpt_path.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------- saliency

saliency::SaliencyMap extract_one(const models::Model& model, const std::string& method,
                                  const data::Dataset& ds, const data::Sample& sample,
                                  const config::SaliencyBlock& sc, std::uint64_t seed) {
  const Tensor& x = sample.image;
  int cls = sample.label;
  if (method == "vanilla_gradient") return saliency::vanilla_gradient(model, x, cls);
  if (method == "guided_backprop") return saliency::guided_backprop(model, x, cls);
  if (method == "smoothgrad") {
    return saliency::smoothgrad(model, x, cls, sc.smoothgrad_n, sc.smoothgrad_sigma,
                                rng::key(seed, "smoothgrad-sample", rng::hash_str(sample.id)));
  }
  if (method == "integrated_gradients") {
    return saliency::integrated_gradients(model, x, cls, nullptr, sc.ig_steps);
  }
  if (method == "gradcam") {
    return saliency::grad_cam(model, x, cls, saliency::CamVariant::gradcam, false);
  }
  if (method == "gradcam_pp") {
    return saliency::grad_cam(model, x, cls, saliency::CamVariant::gradcam_pp, false);
  }
  if (method == "guided_gradcam_pp") {
    return saliency::grad_cam(model, x, cls, saliency::CamVariant::gradcam_pp, true);
  }
  if (method == "weak_annotation") {
    auto it = ds.annotations.find(sample.id);
    if (it == ds.annotations.end()) {
      throw MissingArtifactError("sample " + sample.id + " has no annotation for weak saliency");
    }
    auto map = saliency::weak_saliency_from_annotation(
        it->second, {ds.channels(), ds.height(), ds.width()});
    map.class_index = cls;
    return map;
  }
  throw ConfigError("unknown saliency method: " + method);
}

int cmd_extract_saliency(const Cli& cli) {
  auto cfg = config::ExperimentConfig::load(cli.config_path);
  std::string method = cli.method.empty() ? cfg.saliency.method : cli.method;

  models::Model teacher;
  std::string teacher_id = "none";
  if (method != "weak_annotation") {
    if (cli.checkpoint.empty()) {
      throw ConfigError("extract-saliency needs --checkpoint for method " + method);
    }
    auto loaded = models::load_checkpoint(cli.checkpoint);
    teacher = std::move(loaded.model);
    teacher_id = loaded.info.architecture_id + "-" + loaded.info.training_mode_tag;
  }

  auto ds = cfg.dataset.load_train();
  auto out = out_dir(cfg, cli);
  fs::path root = !cfg.saliency.store.empty() && cli.out_override.empty()
                      ? config::resolve_output_dir(cfg.saliency.store)
                      : out / "stores" / (method + "-" + teacher_id);
  auto store = data::SaliencyStore::create(root, method, teacher_id, false, cli.force);

  const bool store_raw = cfg.saliency.binarize == "none";
  auto rule = cfg.saliency.binarize_rule();
  std::cout << "extracting " << method << " maps for " << ds.size() << " samples -> "
            << root.string() << "\n";
  for (const auto& sample : ds.samples) {
    auto map = extract_one(teacher, method, ds, sample, cfg.saliency, cfg.seed);
    map.teacher_id = teacher_id;
    if (!store_raw && map.kind == saliency::MapKind::raw) map = saliency::binarize(map, rule);
    store.put(sample.id, map);
  }
  store.save_manifest();
  io::write_text(root / "provenance.json", provenance(cfg).dump(2));
  std::cout << "wrote " << store.size() << " maps\n";
  return 0;
}

// ---------------------------------------------------------------- train

sat::MapSource open_map_source(const config::ExperimentConfig& cfg) {
  if (!cfg.saliency.stores.empty()) {
    std::vector<std::shared_ptr<const data::SaliencyStore>> members;
    for (const auto& p : cfg.saliency.stores) {
      members.push_back(std::make_shared<data::SaliencyStore>(
          data::SaliencyStore::open(config::resolve_output_dir(p))));
    }
    sat::MapSource src(saliency::EnsembleSelector(std::move(members), cfg.saliency.selection_seed));
    src.set_binarize(cfg.saliency.binarize_rule());
    return src;
  }
  if (cfg.saliency.store.empty()) {
    throw ConfigError("sat training needs saliency.store (or saliency.stores) in the config");
  }
  sat::MapSource src(std::make_shared<data::SaliencyStore>(
      data::SaliencyStore::open(config::resolve_output_dir(cfg.saliency.store))));
  src.set_binarize(cfg.saliency.binarize_rule());
  return src;
}

int cmd_train(const Cli& cli) {
  auto cfg = config::ExperimentConfig::load(cli.config_path);
  if (!cli.mode_override.empty()) cfg.train.mode = cli.mode_override;
  const std::string& mode = cfg.train.mode;

  auto out = out_dir(cfg, cli);
  auto ckpt_path = out / ("model-" + mode + ".ckpt");
  auto hist_path = out / ("history-" + mode + ".jsonl");
  require_fresh(ckpt_path, cli.force);

  auto ds = cfg.dataset.load_train();
  models::Model model = models::Model::make("cnn", input_of(ds), ds.num_classes,
                                            rng::key(cfg.seed, "student-init"));
  training::TrainConfig tc;
  tc.epochs = cfg.train.epochs;
  tc.batch_size = cfg.train.batch_size;
  tc.learning_rate = cfg.train.learning_rate;
  tc.seed = cfg.seed;
  tc.attack = cfg.train.attack;

  training::TrainResult result;
  std::string tag = mode;
  std::cout << "training student (" << mode << ", " << tc.epochs << " epochs) on " << ds.size()
            << " samples\n";
  if (mode == "standard") {
    tc.mode = training::TrainMode::standard;
    result = training::train(std::move(model), ds, tc);
  } else if (mode == "uniform") {
    tc.mode = training::TrainMode::uniform_noise;
    if (!tc.attack) tc.attack = attacks::AttackSpec::make(attacks::Family::uniform, 8.0 / 255.0);
    result = training::train(std::move(model), ds, tc);
  } else if (mode == "pgd" || mode == "trades" || mode == "pgd-uniform" ||
             mode == "trades-uniform") {
    tc.mode = mode == "pgd"             ? training::TrainMode::pgd_at
              : mode == "trades"        ? training::TrainMode::trades_at
              : mode == "pgd-uniform"   ? training::TrainMode::pgd_at_uniform
                                        : training::TrainMode::trades_at_uniform;
    if (!tc.attack) tc.attack = cfg.train.attack_or_default();
    result = training::train(std::move(model), ds, tc);
  } else if (mode == "sat") {
    auto maps = open_map_source(cfg);
    result = sat::sat_train(std::move(model), ds, maps, cfg.train.schedule(), tc);
  } else if (mode == "pgd-sat" || mode == "trades-sat") {
    auto maps = open_map_source(cfg);
    sat::HybridPolicy policy;
    policy.partner = mode == "pgd-sat" ? sat::HybridPolicy::Partner::pgd
                                       : sat::HybridPolicy::Partner::trades;
    policy.sat_probability = cfg.train.sat_probability;
    auto spec = cfg.train.attack_or_default();
    result = sat::hybrid_train(std::move(model), ds, maps, cfg.train.schedule(), policy, spec, tc);
  } else {
    throw ConfigError("unknown train mode: " + mode);
  }

  json meta = provenance(cfg);
  meta["epochs"] = tc.epochs;
  models::save_checkpoint(result.model, ckpt_path, tag, meta);
  result.history.meta["config_hash"] = cfg.config_hash;
  result.history.write_jsonl(hist_path);
  std::cout << "wrote " << ckpt_path.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------- evaluate

std::vector<attacks::AttackSpec> load_grid(const std::string& grid_arg,
                                           const config::ExperimentConfig& cfg) {
  if (grid_arg.empty() || grid_arg == "default") {
    if (!cfg.eval.default_grid) return cfg.eval.resolve();
    return eval::default_grid();
  }
  json j;
  try {
    j = json::parse(io::read_text(grid_arg));
  } catch (const MissingArtifactError&) {
    throw MissingArtifactError("grid file not found: " + grid_arg);
  } catch (const json::exception& e) {
    throw ConfigError("grid file is not valid JSON: " + std::string(e.what()));
  }
  std::vector<attacks::AttackSpec> specs;
  const json& list = j.is_array() ? j : j.at("specs");
  for (const auto& s : list) specs.push_back(attacks::AttackSpec::from_json(s));
  return specs;
}

eval::EvalReport evaluate_checkpoint(const fs::path& ckpt,
                                     const std::vector<attacks::AttackSpec>& specs,
                                     const config::ExperimentConfig& cfg) {
  auto loaded = models::load_checkpoint(ckpt);
  auto ds = cfg.dataset.load_eval();
  if (loaded.model.num_classes() != ds.num_classes ||
      !(loaded.model.input_spec() == input_of(ds))) {
    throw ConfigError("checkpoint does not match the configured eval dataset");
  }
  auto report = eval::eval_grid(loaded.model, ds, specs, cfg.seed);
  report.model_id = loaded.info.architecture_id + "|" + loaded.info.training_mode_tag + "|" +
                    short_hash(cfg.config_hash);
  report.config_hash = cfg.config_hash;
  return report;
}

int cmd_evaluate(const Cli& cli) {
  auto cfg = config::ExperimentConfig::load(cli.config_path);
  if (cli.checkpoint.empty()) throw ConfigError("evaluate needs --checkpoint");
  if (!fs::exists(cli.checkpoint)) {
    throw MissingArtifactError("checkpoint not found: " + cli.checkpoint);
  }
  auto out = out_dir(cfg, cli);
  auto json_path = out / "report.json";
  auto csv_path = out / "report.csv";
  require_fresh(json_path, cli.force);

  auto specs = load_grid(cli.grid, cfg);
  auto report = evaluate_checkpoint(cli.checkpoint, specs, cfg);
  report.write_json(json_path);
  report.write_csv(csv_path);
  std::cout << "clean accuracy " << report.clean_accuracy << ", " << report.grid.size()
            << " grid cells -> " << json_path.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------- sweep

void write_sweep_plot(const fs::path& path, const std::string& param,
                      const std::vector<double>& values,
                      const std::map<double, std::vector<std::pair<double, double>>>& lines) {
  // lines: epsilon -> [(value, accuracy)]
  const int W = 640, H = 420, ML = 60, MB = 50, MT = 30, MR = 20;
  double xmin = values.front(), xmax = values.back();
  if (xmax == xmin) xmax = xmin + 1.0;
  std::ostringstream svg;
  svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
  svg << "<rect width='100%' height='100%' fill='white'/>\n";
  auto X = [&](double v) { return ML + (v - xmin) / (xmax - xmin) * (W - ML - MR); };
  auto Y = [&](double a) { return H - MB - a * (H - MB - MT); };
  svg << "<line x1='" << ML << "' y1='" << H - MB << "' x2='" << W - MR << "' y2='" << H - MB
      << "' stroke='black'/>\n";
  svg << "<line x1='" << ML << "' y1='" << MT << "' x2='" << ML << "' y2='" << H - MB
      << "' stroke='black'/>\n";
  svg << "<text x='" << W / 2 << "' y='" << H - 12 << "' text-anchor='middle' font-size='13'>"
      << param << "</text>\n";
  svg << "<text x='16' y='" << H / 2 << "' font-size='13' transform='rotate(-90 16 " << H / 2
      << ")' text-anchor='middle'>robust accuracy</text>\n";
  const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"};
  int ci = 0;
  for (const auto& [eps, pts] : lines) {
    std::string color = colors[ci % 6];
    svg << "<polyline fill='none' stroke='" << color << "' stroke-width='2' points='";
    for (const auto& [v, acc] : pts) svg << X(v) << "," << Y(acc) << " ";
    svg << "'/>\n";
    svg << "<text x='" << W - MR - 150 << "' y='" << MT + 16 * (ci + 1)
        << "' font-size='12' fill='" << color << "'>eps=" << eps << "</text>\n";
    ++ci;
  }
  for (double v : values) {
    svg << "<circle cx='" << X(v) << "' cy='" << H - MB << "' r='2'/>\n";
    svg << "<text x='" << X(v) << "' y='" << H - MB + 16 << "' font-size='11' "
        << "text-anchor='middle'>" << v << "</text>\n";
  }
  svg << "</svg>\n";
  io::write_text(path, svg.str());
}

int cmd_sweep(const std::string& param_flag, const std::string& values_flag, const Cli& cli) {
  auto cfg = config::ExperimentConfig::load(cli.config_path);
  std::string param = param_flag;
  std::vector<double> values;
  if (!values_flag.empty()) {
    std::stringstream ss(values_flag);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (!tok.empty()) values.push_back(std::stod(tok));
    }
  }
  if (param.empty() && cfg.sweep) param = cfg.sweep->param;
  if (values.empty() && cfg.sweep) values = cfg.sweep->values;
  if (param != "alpha10" && param != "epsilon0") {
    throw ConfigError("sweep --param must be alpha10 or epsilon0");
  }
  if (values.empty()) throw ConfigError("sweep needs --values or a sweep block in the config");
  if (cfg.train.mode != "sat" && cfg.train.mode != "pgd-sat" && cfg.train.mode != "trades-sat") {
    throw ConfigError("sweep applies to sat-family train modes");
  }

  auto out = out_dir(cfg, cli) / ("sweep-" + param);
  auto combined_path = out / "combined.csv";
  require_fresh(combined_path, cli.force);

  auto ds = cfg.dataset.load_train();
  auto specs = cfg.eval.default_grid ? eval::default_grid() : cfg.eval.resolve();
  std::ostringstream combined;
  combined << "param,value,attack,steps,epsilon,accuracy\n";
  std::map<double, std::vector<std::pair<double, double>>> lines;

  for (double value : values) {
    config::ExperimentConfig run = cfg;
    if (param == "alpha10") {
      run.train.alpha10 = value;
    } else {
      run.train.epsilon0 = value;
    }
    std::cout << "sweep " << param << "=" << value << "\n";
    auto maps = open_map_source(run);
    models::Model model = models::Model::make("cnn", input_of(ds), ds.num_classes,
                                              rng::key(run.seed, "student-init"));
    training::TrainConfig tc;
    tc.epochs = run.train.epochs;
    tc.batch_size = run.train.batch_size;
    tc.learning_rate = run.train.learning_rate;
    tc.seed = run.seed;

    training::TrainResult result;
    if (run.train.mode == "sat") {
      result = sat::sat_train(std::move(model), ds, maps, run.train.schedule(), tc);
    } else {
      sat::HybridPolicy policy;
      policy.partner = run.train.mode == "pgd-sat" ? sat::HybridPolicy::Partner::pgd
                                                   : sat::HybridPolicy::Partner::trades;
      policy.sat_probability = run.train.sat_probability;
      result = sat::hybrid_train(std::move(model), ds, maps, run.train.schedule(), policy,
                                 run.train.attack_or_default(), tc);
    }

    std::ostringstream vdir;
    vdir << param << "=" << value;
    auto run_dir = out / vdir.str();
    json meta = provenance(cfg);
    meta[param] = value;
    models::save_checkpoint(result.model, run_dir / "model.ckpt", run.train.mode, meta);
    result.history.meta["config_hash"] = cfg.config_hash;
    result.history.write_jsonl(run_dir / "history.jsonl");

    auto report = evaluate_checkpoint(run_dir / "model.ckpt", specs, run);
    report.write_json(run_dir / "report.json");
    report.write_csv(run_dir / "report.csv");
    for (const auto& c : report.grid) {
      combined << param << "," << value << "," << attacks::family_name(c.family) << ","
               << c.steps << "," << c.epsilon << "," << c.accuracy << "\n";
      if (c.family == attacks::Family::pgd) {
        lines[c.epsilon].push_back({value, c.accuracy});
      }
    }
  }
  io::write_text(combined_path, combined.str());
  if (!lines.empty()) write_sweep_plot(out / "plot.svg", param, values, lines);
  std::cout << "wrote " << combined_path.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"saliency-guided adversarial training toolkit"};
  app.require_subcommand(1);
  Cli cli;
  std::string sweep_param, sweep_values;

  auto add_common = [&](CLI::App* cmd, bool needs_config = true) {
    auto* opt = cmd->add_option("--config", cli.config_path, "experiment config (JSON)");
    if (needs_config) opt->required();
    cmd->add_option("--out", cli.out_override, "override the config output_dir");
    cmd->add_flag("--force", cli.force, "overwrite existing artifacts");
  };

  auto* t = app.add_subcommand("train-teacher", "train a teacher network (std or adv)");
  add_common(t);

  auto* x = app.add_subcommand("extract-saliency", "write a saliency store for the train set");
  add_common(x);
  x->add_option("--checkpoint", cli.checkpoint, "teacher checkpoint (omit for weak_annotation)");
  x->add_option("--method", cli.method, "saliency method id (overrides config)");

  auto* tr = app.add_subcommand("train", "train a student model");
  add_common(tr);
  tr->add_option("--mode", cli.mode_override,
                 "standard|uniform|pgd|trades|pgd-uniform|trades-uniform|sat|pgd-sat|trades-sat");

  auto* ev = app.add_subcommand("evaluate", "robust-accuracy grid for a checkpoint");
  add_common(ev);
  ev->add_option("--checkpoint", cli.checkpoint, "model checkpoint")->required();
  ev->add_option("--grid", cli.grid, "grid spec file or 'default'");

  auto* sw = app.add_subcommand("sweep", "train+evaluate across a hyperparameter range");
  add_common(sw);
  sw->add_option("--param", sweep_param, "alpha10|epsilon0");
  sw->add_option("--values", sweep_values, "comma-separated values");

  CLI11_PARSE(app, argc, argv);

  try {
    if (t->parsed()) return cmd_train_teacher(cli);
    if (x->parsed()) return cmd_extract_saliency(cli);
    if (tr->parsed()) return cmd_train(cli);
    if (ev->parsed()) return cmd_evaluate(cli);
    if (sw->parsed()) return cmd_sweep(sweep_param, sweep_values, cli);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const MissingArtifactError& e) {
    std::cerr << "missing artifact: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
