#include "mdb/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>

#include "mdb/data.hpp"
#include "mdb/train.hpp"

namespace mdb {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json default_config() {
  return json{
      {"seed", 1},
      {"grid",
       {{"dims", {24, 16, 24}}, {"voxel_size", 0.2}, {"truncation", 0.6}}},
      {"image", {{"width", 64}, {"height", 48}, {"focal", 50.0}}},
      {"model",
       {{"widths", {16, 32, 64}},
        {"feature_channels", 16},
        {"fusion", "late"},
        {"block", "itrm"}}},
      {"train",
       {{"epochs", 8},
        {"batch_size", 2},
        {"lambda", 1.0},
        {"smoothing", 0.1},
        {"weighting", "kmeans"},
        {"kmeans_k", 3},
        {"resample_ratio", 2.0},
        {"sgd_max_lr", 0.01},
        {"sgd_momentum", 0.9},
        {"sgd_weight_decay", 5e-4},
        {"onecycle_warmup", 0.3},
        {"adamw_lr", 1e-3},
        {"adamw_weight_decay", 0.05},
        {"adamw_min_lr", 1e-7},
        {"head2d_warmup_steps", 300},
        {"patience", 15},
        {"folds", 3}}},
      {"eval", {{"sc_ratio", 1.0}}},
      {"gen",
       {{"tier", "easy"},
        {"count", 200},
        {"min_objects", -1},
        {"max_objects", -1},
        {"skew", -1.0},
        {"color_noise", -1.0},
        {"missing_depth_fraction", -1.0}}},
  };
}

void check_keys(const json& user, const json& reference, const std::string& path) {
  require(user.is_object(), Err::InvalidSpec, "config node must be an object: " + path);
  for (auto it = user.begin(); it != user.end(); ++it) {
    std::string here = path.empty() ? it.key() : path + "." + it.key();
    require(reference.contains(it.key()), Err::InvalidSpec, "unknown config key: " + here);
    if (reference[it.key()].is_object()) check_keys(it.value(), reference[it.key()], here);
  }
}

void merge(json& base, const json& user) {
  for (auto it = user.begin(); it != user.end(); ++it) {
    if (it.value().is_object() && base[it.key()].is_object())
      merge(base[it.key()], it.value());
    else
      base[it.key()] = it.value();
  }
}

json load_config(const std::string& config_path, const std::vector<std::string>& sets) {
  json cfg = default_config();
  if (!config_path.empty()) {
    json user = json::parse(read_text_file(config_path), nullptr, false);
    require(!user.is_discarded(), Err::InvalidSpec, "config is not valid JSON");
    check_keys(user, cfg, "");
    merge(cfg, user);
  }
  for (const std::string& s : sets) {
    auto eq = s.find('=');
    require(eq != std::string::npos, Err::InvalidSpec, "--set expects key.path=value");
    std::string key = s.substr(0, eq);
    std::string value = s.substr(eq + 1);
    // navigate dotted path
    json* node = &cfg;
    size_t pos = 0;
    while (true) {
      auto dot = key.find('.', pos);
      std::string part = key.substr(pos, dot == std::string::npos ? dot : dot - pos);
      require(node->contains(part), Err::InvalidSpec, "unknown config key: " + key);
      node = &(*node)[part];
      if (dot == std::string::npos) break;
      pos = dot + 1;
    }
    json parsed = json::parse(value, nullptr, false);
    *node = parsed.is_discarded() ? json(value) : parsed;
  }
  return cfg;
}

GridSpec grid_from(const json& cfg) {
  GridSpec g;
  auto dims = cfg.at("grid").at("dims");
  require(dims.is_array() && dims.size() == 3, Err::InvalidSpec, "grid.dims needs 3 entries");
  for (int a = 0; a < 3; ++a) g.dims[a] = dims[a].get<int>();
  g.voxel_size = cfg.at("grid").at("voxel_size").get<double>();
  g.truncation = cfg.at("grid").at("truncation").get<double>();
  g = g.snapped_to_f32();
  g.validate();
  return g;
}

SyntheticSceneSpec scene_spec_from(const json& cfg) {
  std::string tier = cfg.at("gen").at("tier").get<std::string>();
  SyntheticSceneSpec spec;
  if (tier == "easy")
    spec = SyntheticSceneSpec::easy_tier();
  else if (tier == "skewed")
    spec = SyntheticSceneSpec::skewed_tier();
  else
    fail(Err::InvalidSpec, "unknown tier: " + tier);
  spec.grid = grid_from(cfg);
  spec.image_width = cfg.at("image").at("width").get<int>();
  spec.image_height = cfg.at("image").at("height").get<int>();
  spec.focal = cfg.at("image").at("focal").get<double>();
  auto get = [&](const char* key, double fallback) {
    double v = cfg.at("gen").at(key).get<double>();
    return v < 0 ? fallback : v;
  };
  spec.min_objects = static_cast<int>(get("min_objects", spec.min_objects));
  spec.max_objects = static_cast<int>(get("max_objects", spec.max_objects));
  spec.skew = get("skew", spec.skew);
  spec.color_noise = get("color_noise", spec.color_noise);
  spec.missing_depth_fraction =
      get("missing_depth_fraction", spec.missing_depth_fraction);
  spec.validate();
  return spec;
}

TrainConfig train_config_from(const json& cfg) {
  TrainConfig tc;
  GridSpec g = grid_from(cfg);
  tc.model.grid_dims = g.dims;
  auto widths = cfg.at("model").at("widths");
  require(widths.is_array() && widths.size() == 3, Err::InvalidSpec,
          "model.widths needs 3 entries");
  for (int a = 0; a < 3; ++a) tc.model.widths[a] = widths[a].get<int>();
  tc.model.feature_channels = cfg.at("model").at("feature_channels").get<int>();
  tc.model.fusion = fusion_from_name(cfg.at("model").at("fusion").get<std::string>());
  tc.model.block_variant =
      block_variant_from_name(cfg.at("model").at("block").get<std::string>());
  tc.model.image_width = cfg.at("image").at("width").get<int>();
  tc.model.image_height = cfg.at("image").at("height").get<int>();

  const json& t = cfg.at("train");
  tc.epochs = t.at("epochs").get<int>();
  tc.batch_size = t.at("batch_size").get<int>();
  tc.lambda = t.at("lambda").get<double>();
  tc.smoothing = t.at("smoothing").get<double>();
  std::string weighting = t.at("weighting").get<std::string>();
  if (weighting == "kmeans")
    tc.weighting = WeightingMode::KMeansReweight;
  else if (weighting == "resample")
    tc.weighting = WeightingMode::Resample;
  else
    fail(Err::InvalidSpec, "unknown weighting: " + weighting);
  tc.kmeans_k = t.at("kmeans_k").get<int>();
  tc.resample_ratio = t.at("resample_ratio").get<double>();
  tc.sgd_max_lr = t.at("sgd_max_lr").get<double>();
  tc.sgd_momentum = t.at("sgd_momentum").get<double>();
  tc.sgd_weight_decay = t.at("sgd_weight_decay").get<double>();
  tc.onecycle_warmup = t.at("onecycle_warmup").get<double>();
  tc.adamw_lr = t.at("adamw_lr").get<double>();
  tc.adamw_weight_decay = t.at("adamw_weight_decay").get<double>();
  tc.adamw_min_lr = t.at("adamw_min_lr").get<double>();
  tc.head2d_warmup_steps = t.at("head2d_warmup_steps").get<int>();
  tc.patience = t.at("patience").get<int>();
  tc.folds = t.at("folds").get<int>();
  tc.sc_ratio = cfg.at("eval").at("sc_ratio").get<double>();
  tc.seed = cfg.at("seed").get<uint64_t>();
  tc.model.validate();
  return tc;
}

void echo_config(const json& cfg, const std::string& outdir) {
  fs::create_directories(outdir);
  write_text_file((fs::path(outdir) / "config.json").string(), cfg.dump(2) + "\n");
}

std::vector<Sample> load_dataset(const std::string& manifest) {
  std::vector<SamplePaths> paths = load_manifest(manifest);
  require(!paths.empty(), Err::InvalidSpec, "manifest lists no samples");
  std::string dir = fs::path(manifest).parent_path().string();
  std::vector<Sample> samples;
  samples.reserve(paths.size());
  for (const auto& p : paths) samples.push_back(load_sample(dir, p));
  return samples;
}

int cmd_gen(const json& cfg, const std::string& outdir) {
  SyntheticSceneSpec spec = scene_spec_from(cfg);
  const int count = cfg.at("gen").at("count").get<int>();
  const uint64_t seed = cfg.at("seed").get<uint64_t>();
  require(count >= 1, Err::InvalidSpec, "gen.count must be >= 1");
  echo_config(cfg, outdir);

  std::vector<SamplePaths> manifest;
  for (int i = 0; i < count; ++i) {
    GeneratedScene scene = generate_scene(spec, derive_seed(seed, i));
    char id[32];
    std::snprintf(id, sizeof(id), "scene_%05d", i);
    scene.sample.id = id;
    manifest.push_back(save_sample(outdir, scene.sample));
  }
  save_manifest((fs::path(outdir) / "manifest.txt").string(), manifest);
  std::cout << "wrote " << count << " scenes to " << outdir << "\n";
  return 0;
}

int cmd_voxelize(const json& cfg, const std::string& manifest, const std::string& outdir) {
  echo_config(cfg, outdir);
  std::vector<SamplePaths> paths = load_manifest(manifest);
  std::string dir = fs::path(manifest).parent_path().string();
  for (const auto& p : paths) {
    Sample s = load_sample(dir, p);
    fs::path out = fs::path(outdir) / (s.id + "_ftsdf.vxg");
    save_vxg(out.string(), s.ftsdf);
  }
  std::cout << "voxelized " << paths.size() << " depth maps into " << outdir << "\n";
  return 0;
}

int cmd_weights(const json& cfg, const std::string& manifest, const std::string& outfile) {
  TrainConfig tc = train_config_from(cfg);
  std::vector<Sample> samples = load_dataset(manifest);
  std::vector<PreparedSample> prepared;
  std::vector<const LabelVolume*> lvs;
  std::vector<const VoxelMask*> ms;
  prepared.reserve(samples.size());
  for (size_t i = 0; i < samples.size(); ++i)
    prepared.push_back(prepare_sample(samples[i], tc, static_cast<int>(i)));
  for (const auto& p : prepared) {
    lvs.push_back(&p.pooled_labels);
    ms.push_back(&p.loss_mask);
  }
  ClassWeights w =
      reweight_classes(class_frequencies(lvs, ms), tc.kmeans_k, derive_seed(tc.seed, 99));
  save_class_weights(outfile, w);
  write_text_file(outfile + ".config.json", cfg.dump(2) + "\n");
  std::cout << "wrote class weights to " << outfile << "\n";
  return 0;
}

int cmd_train(const json& cfg, const std::string& manifest, const std::string& outdir) {
  TrainConfig tc = train_config_from(cfg);
  echo_config(cfg, outdir);
  std::vector<Sample> samples = load_dataset(manifest);
  ExperimentResult result = run_experiment(tc, samples);

  std::vector<EvalReport> reports;
  for (size_t f = 0; f < result.folds.size(); ++f) {
    const FoldOutcome& fo = result.folds[f];
    fs::path fold_dir = fs::path(outdir) / ("fold" + std::to_string(f));
    fs::create_directories(fold_dir);
    save_checkpoint((fold_dir / "checkpoint.mdb").string(), fo.best_state,
                    fo.best_opt_state);
    write_steps_csv((fold_dir / "steps.csv").string(), fo.steps);
    save_class_weights((fold_dir / "class_weights.txt").string(), fo.class_weights);
    reports.push_back(fo.report);
  }
  write_eval_csv((fs::path(outdir) / "eval.csv").string(), reports, tc.sc_ratio);
  if (reports.size() >= 2) {
    std::string table = render_report_table(result.aggregate, "k-fold validation");
    write_text_file((fs::path(outdir) / "summary.txt").string(), table);
    std::cout << table;
  }
  return 0;
}

int cmd_eval(const json& cfg, const std::string& manifest, const std::string& checkpoint,
             const std::string& outdir, int fold_id) {
  TrainConfig tc = train_config_from(cfg);
  echo_config(cfg, outdir);
  std::vector<Sample> samples = load_dataset(manifest);

  MdbNet<float> model(tc.model, derive_seed(tc.seed, 100 + fold_id));
  auto [params, opt] = load_checkpoint(checkpoint);
  (void)opt;
  apply_entries(params, model.state_dict());

  std::vector<int> idx(samples.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  std::vector<PreparedSample> prepared(samples.size());
  for (size_t i = 0; i < samples.size(); ++i)
    prepared[i] = prepare_sample(samples[i], tc, static_cast<int>(i));
  EvalReport report = evaluate_fold(model, tc, samples, idx, prepared, fold_id);
  write_eval_csv((fs::path(outdir) / "eval.csv").string(), {report}, tc.sc_ratio);
  std::printf("fold %d: sc iou %.1f, ssc miou %.1f\n", fold_id, report.sc_iou,
              report.ssc_miou);
  return 0;
}

int cmd_gradcheck() {
  std::vector<GradCheckEntry> entries = run_gradient_suite();
  double worst = 0.0;
  for (const auto& e : entries) {
    std::printf("%-26s max relative error %.3e\n", e.name.c_str(), e.max_rel_error);
    worst = std::max(worst, e.max_rel_error);
  }
  std::printf("worst %.3e (threshold 1e-5)\n", worst);
  return worst < 1e-5 ? 0 : 1;
}

int cmd_report(const std::vector<std::string>& dirs, const std::string& names_csv,
               const std::string& outfile) {
  std::vector<std::string> names;
  {
    std::istringstream is(names_csv);
    std::string part;
    while (std::getline(is, part, ',')) names.push_back(part);
  }
  std::ostringstream out;
  std::vector<FusionRow> rows;
  for (size_t i = 0; i < dirs.size(); ++i) {
    std::vector<EvalReport> reports =
        read_eval_csv((fs::path(dirs[i]) / "eval.csv").string());
    require(reports.size() >= 2, Err::TooFewFolds,
            dirs[i] + " holds fewer than two fold reports");
    FoldAggregate agg = aggregate_folds(reports);
    std::string name = i < names.size() ? names[i] : dirs[i];
    out << render_report_table(agg, name) << "\n";
    rows.push_back({name, agg.sc_iou, agg.ssc_miou, false});
  }
  if (rows.size() > 1) {
    for (size_t i = 0; i < rows.size(); ++i)
      for (size_t j = 0; j < rows.size(); ++j) {
        if (i == j) continue;
        double lo_i = rows[i].ssc_miou.mean - rows[i].ssc_miou.stddev;
        double hi_i = rows[i].ssc_miou.mean + rows[i].ssc_miou.stddev;
        double lo_j = rows[j].ssc_miou.mean - rows[j].ssc_miou.stddev;
        double hi_j = rows[j].ssc_miou.mean + rows[j].ssc_miou.stddev;
        if (lo_i <= hi_j && lo_j <= hi_i) rows[i].overlap_flag = true;
      }
    out << render_fusion_table(rows);
  }
  std::cout << out.str();
  if (!outfile.empty()) write_text_file(outfile, out.str());
  return 0;
}

}  // namespace

int cli_run(int argc, const char* const* argv) {
  CLI::App app{"semantic scene completion pipeline"};
  app.require_subcommand(1);

  std::string config_path, manifest, outdir, outfile, checkpoint, names;
  std::vector<std::string> sets, report_dirs;
  int fold_id = 0;

  // ablation matrix flags mirror the config keys
  std::string fusion, block, weighting, lambda_str, seed_str, epochs_str, folds_str,
      count_str, tier;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file");
    cmd->add_option("--set", sets, "override config entries, key.path=value");
    cmd->add_option("--seed", seed_str, "override seed");
  };
  auto add_train_flags = [&](CLI::App* cmd) {
    cmd->add_option("--fusion", fusion, "early|mid|late");
    cmd->add_option("--block", block, "preact|itrm");
    cmd->add_option("--weighting", weighting, "kmeans|resample");
    cmd->add_option("--lambda", lambda_str, "combined loss coefficient");
    cmd->add_option("--epochs", epochs_str, "training epochs");
    cmd->add_option("--folds", folds_str, "cross-validation folds");
  };

  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic dataset + manifest");
  gen->add_option("--out", outdir, "output directory")->required();
  gen->add_option("--count", count_str, "number of scenes");
  gen->add_option("--tier", tier, "easy|skewed");
  add_common(gen);

  CLI::App* vox = app.add_subcommand("voxelize", "depth maps to F-TSDF volumes");
  vox->add_option("--data", manifest, "dataset manifest")->required();
  vox->add_option("--out", outdir, "output directory")->required();
  add_common(vox);

  CLI::App* wts = app.add_subcommand("weights", "emit the class-weight file");
  wts->add_option("--data", manifest, "dataset manifest")->required();
  wts->add_option("--out", outfile, "output weight file")->required();
  add_common(wts);

  CLI::App* tr = app.add_subcommand("train", "k-fold training");
  tr->add_option("--data", manifest, "dataset manifest")->required();
  tr->add_option("--out", outdir, "output directory")->required();
  add_common(tr);
  add_train_flags(tr);

  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  ev->add_option("--data", manifest, "dataset manifest")->required();
  ev->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  ev->add_option("--out", outdir, "output directory")->required();
  ev->add_option("--fold", fold_id, "fold id recorded in the report");
  add_common(ev);

  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  (void)gc;

  CLI::App* rep = app.add_subcommand("report", "aggregate eval artifacts into tables");
  rep->add_option("--in", report_dirs, "run directories holding eval.csv")->required();
  rep->add_option("--names", names, "comma-separated row names");
  rep->add_option("--out", outfile, "also write the tables to this file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 64;
  }

  try {
    json cfg = load_config(config_path, sets);
    if (!seed_str.empty()) cfg["seed"] = std::stoull(seed_str);
    if (!fusion.empty()) cfg["model"]["fusion"] = fusion;
    if (!block.empty()) cfg["model"]["block"] = block;
    if (!weighting.empty()) cfg["train"]["weighting"] = weighting;
    if (!lambda_str.empty()) cfg["train"]["lambda"] = std::stod(lambda_str);
    if (!epochs_str.empty()) cfg["train"]["epochs"] = std::stoi(epochs_str);
    if (!folds_str.empty()) cfg["train"]["folds"] = std::stoi(folds_str);
    if (!count_str.empty()) cfg["gen"]["count"] = std::stoi(count_str);
    if (!tier.empty()) cfg["gen"]["tier"] = tier;

    if (gen->parsed()) return cmd_gen(cfg, outdir);
    if (vox->parsed()) return cmd_voxelize(cfg, manifest, outdir);
    if (wts->parsed()) return cmd_weights(cfg, manifest, outfile);
    if (tr->parsed()) return cmd_train(cfg, manifest, outdir);
    if (ev->parsed()) return cmd_eval(cfg, manifest, checkpoint, outdir, fold_id);
    if (gc->parsed()) return cmd_gradcheck();
    if (rep->parsed()) return cmd_report(report_dirs, names, outfile);
    return 64;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace mdb
