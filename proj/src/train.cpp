#include "mdb/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <sstream>
#include <thread>

#include "mdb/gradcheck.hpp"

namespace mdb {

namespace {

int env_threads() {
  const char* v = std::getenv("MDB_THREADS");
  if (!v) return 1;
  int n = std::atoi(v);
  return n >= 1 ? n : 1;
}

Tensor<float> stack_ftsdf(const std::vector<Sample>& samples, const std::vector<int>& idx) {
  const GridSpec& g = samples[idx[0]].grid;
  const int64_t vox = g.voxel_count();
  std::vector<float> values;
  values.reserve(idx.size() * vox);
  for (int i : idx)
    values.insert(values.end(), samples[i].ftsdf.values.begin(),
                  samples[i].ftsdf.values.end());
  return Tensor<float>::from(
      {static_cast<int64_t>(idx.size()), 1, g.dims[0], g.dims[1], g.dims[2]},
      std::move(values));
}

Tensor<float> stack_rgb(const std::vector<Sample>& samples, const std::vector<int>& idx) {
  const Image& first = samples[idx[0]].rgb;
  std::vector<float> values;
  values.reserve(idx.size() * first.values.size());
  for (int i : idx)
    values.insert(values.end(), samples[i].rgb.values.begin(), samples[i].rgb.values.end());
  return Tensor<float>::from(
      {static_cast<int64_t>(idx.size()), 3, first.height, first.width}, std::move(values));
}

template <typename U>
std::vector<U> concat_per_sample(const std::vector<std::vector<U>>& parts) {
  std::vector<U> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

LabelVolume argmax_labels(const Tensor<float>& logits) {
  // logits [1,12,X,Y,Z]
  const int64_t S = logits.numel() / kNumClasses;
  LabelVolume pred(S, 0);
  const float* v = logits.data();
  for (int64_t s = 0; s < S; ++s) {
    int best = 0;
    float bv = v[s];
    for (int c = 1; c < kNumClasses; ++c) {
      float cv = v[c * S + s];
      if (cv > bv) {
        bv = cv;
        best = c;
      }
    }
    pred[s] = static_cast<uint8_t>(best);
  }
  return pred;
}

}  // namespace

MdbNet<float>::Output mdbnet_forward(MdbNet<float>& model, const Sample& sample,
                                     bool training) {
  const GridSpec& g = sample.grid;
  Tensor<float> ftsdf = Tensor<float>::from(
      {1, 1, g.dims[0], g.dims[1], g.dims[2]},
      std::vector<float>(sample.ftsdf.values.begin(), sample.ftsdf.values.end()));
  Tensor<float> rgb = Tensor<float>::from(
      {1, 3, sample.rgb.height, sample.rgb.width},
      std::vector<float>(sample.rgb.values.begin(), sample.rgb.values.end()));
  return model.forward(ftsdf, rgb, {&sample.projection}, training);
}

LabelVolume predict_labels(const Tensor<float>& logits3d) { return argmax_labels(logits3d); }

PreparedSample prepare_sample(const Sample& sample, const TrainConfig& cfg,
                              int global_index) {
  PreparedSample p;
  const int factor = MdbNetConfig::scale_factor;
  p.pooled_labels = pool_labels(sample.gt_labels, sample.grid.dims, factor);
  p.pooled_visibility = pool_visibility(sample.visibility.states, sample.grid.dims, factor);
  p.loss_mask = make_loss_mask(p.pooled_labels, p.pooled_visibility, cfg.weighting,
                               cfg.resample_ratio,
                               derive_seed(cfg.seed, 7000 + global_index));
  p.ssc_mask = make_ssc_mask(p.pooled_visibility, p.pooled_labels);
  p.ignore2d.assign(sample.labels2d.size(), 0);
  for (size_t i = 0; i < sample.labels2d.size(); ++i)
    p.ignore2d[i] = sample.labels2d[i] == kUnannotated ? 1 : 0;
  p.sc_seed = derive_seed(cfg.seed, 3000 + global_index);
  return p;
}

EvalReport evaluate_fold(MdbNet<float>& model, const TrainConfig& cfg,
                         const std::vector<Sample>& samples, const std::vector<int>& idx,
                         const std::vector<PreparedSample>& prepared, int fold_id) {
  ScCounts sc_total;
  SscClassCounts ssc_total;
  bool zero_flag = false;
  for (int i : idx) {
    auto out = mdbnet_forward(model, samples[i], false);
    LabelVolume pred = argmax_labels(out.logits3d);

    const PreparedSample& p = prepared[i];
    std::vector<int64_t> region =
        select_sc_region(p.pooled_labels, p.pooled_visibility, p.sc_seed, cfg.sc_ratio);
    ScCounts c = sc_counts(pred, p.pooled_labels, region);
    sc_total.tp += c.tp;
    sc_total.fp += c.fp;
    sc_total.fn += c.fn;
    ssc_total.add(ssc_counts(pred, p.pooled_labels, p.ssc_mask));
  }

  ScResult sc = sc_from_counts(sc_total);
  zero_flag = sc.zero_denominator;
  SscResult ssc = ssc_from_counts(ssc_total);

  EvalReport r;
  r.fold_id = fold_id;
  r.sc_precision = sc.precision;
  r.sc_recall = sc.recall;
  r.sc_iou = sc.iou;
  r.per_class_iou = ssc.per_class_iou;
  r.class_defined = ssc.defined;
  r.ssc_miou = ssc.miou;
  r.sc_resample_ratio = cfg.sc_ratio;
  r.zero_denominator = zero_flag;
  return r;
}

FoldOutcome train_fold(const TrainConfig& cfg, const std::vector<Sample>& samples,
                       const std::vector<int>& train_idx, const std::vector<int>& val_idx,
                       int fold_id) {
  require(!train_idx.empty() && !val_idx.empty(), Err::InvalidSpec,
          "fold needs train and val samples");

  std::vector<PreparedSample> prepared(samples.size());
  for (int i : train_idx) prepared[i] = prepare_sample(samples[i], cfg, i);
  for (int i : val_idx) prepared[i] = prepare_sample(samples[i], cfg, i);

  FoldOutcome outcome;
  // class weights from the training portion only
  if (cfg.weighting == WeightingMode::KMeansReweight) {
    std::vector<const LabelVolume*> lvs;
    std::vector<const VoxelMask*> ms;
    for (int i : train_idx) {
      lvs.push_back(&prepared[i].pooled_labels);
      ms.push_back(&prepared[i].loss_mask);
    }
    auto freqs = class_frequencies(lvs, ms);
    outcome.class_weights = reweight_classes(freqs, cfg.kmeans_k, derive_seed(cfg.seed, 99));
  }

  MdbNet<float> model(cfg.model, derive_seed(cfg.seed, 100 + fold_id));
  auto opt3d = Optimizer<float>::sgd_momentum(model.params_3d(),
                                              static_cast<float>(cfg.sgd_momentum),
                                              static_cast<float>(cfg.sgd_weight_decay));
  auto opt2d = Optimizer<float>::adamw(model.params_2d(),
                                       static_cast<float>(cfg.adamw_weight_decay));

  // warm up the semantic head on its own loss before the joint phase
  if (cfg.head2d_warmup_steps > 0) {
    auto wopt = Optimizer<float>::adamw(model.params_2d(),
                                        static_cast<float>(cfg.adamw_weight_decay));
    Rng wrng(derive_seed(cfg.seed, 600 + fold_id));
    std::vector<int> pool = train_idx;
    size_t cursor = pool.size();
    for (int step = 0; step < cfg.head2d_warmup_steps; ++step) {
      std::vector<int> batch;
      for (int b = 0; b < cfg.batch_size; ++b) {
        if (cursor >= pool.size()) {
          for (int i = static_cast<int>(pool.size()) - 1; i > 0; --i) {
            int j = static_cast<int>(wrng.uniform_int(0, i));
            std::swap(pool[i], pool[j]);
          }
          cursor = 0;
        }
        batch.push_back(pool[cursor++]);
      }
      Tensor<float> rgb = stack_rgb(samples, batch);
      std::vector<std::vector<uint8_t>> label_parts, ignore_parts;
      for (int i : batch) {
        label_parts.push_back(samples[i].labels2d);
        ignore_parts.push_back(prepared[i].ignore2d);
      }
      std::vector<uint8_t> labels2d = concat_per_sample(label_parts);
      std::vector<uint8_t> ignore2d = concat_per_sample(ignore_parts);
      for (size_t i = 0; i < labels2d.size(); ++i)
        if (ignore2d[i]) labels2d[i] = 0;
      auto [feat, logits2d] = model.semantic_head().forward(rgb);
      Tensor<float> l_ss = smooth_ce(logits2d, labels2d, cfg.smoothing, ignore2d);
      wopt.zero_grad();
      backward(l_ss);
      wopt.step(cfg.adamw_lr);
    }
  }

  const int steps_per_epoch =
      static_cast<int>((train_idx.size() + cfg.batch_size - 1) / cfg.batch_size);
  const int64_t total_steps = static_cast<int64_t>(steps_per_epoch) * cfg.epochs;
  LrSchedule sched3d = LrSchedule::one_cycle(cfg.sgd_max_lr, total_steps, cfg.onecycle_warmup);
  LrSchedule sched2d = LrSchedule::cosine_decay(cfg.adamw_lr, cfg.adamw_min_lr, total_steps);

  TrainState state;
  state.seed = cfg.seed;
  state.fold_id = fold_id;
  int64_t step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    state.epoch = epoch;
    std::vector<int> order = train_idx;
    Rng erng(derive_seed(cfg.seed, 500 + 1000ull * fold_id + epoch));
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
      int j = static_cast<int>(erng.uniform_int(0, i));
      std::swap(order[i], order[j]);
    }

    for (size_t b = 0; b < order.size(); b += cfg.batch_size) {
      std::vector<int> batch(order.begin() + b,
                             order.begin() + std::min(order.size(),
                                                      b + cfg.batch_size));
      Tensor<float> ftsdf = stack_ftsdf(samples, batch);
      Tensor<float> rgb = stack_rgb(samples, batch);
      std::vector<const ProjectionMap*> maps;
      std::vector<std::vector<uint8_t>> labels3d_parts, mask_parts, labels2d_parts,
          ignore_parts;
      for (int i : batch) {
        maps.push_back(&samples[i].projection);
        labels3d_parts.push_back(prepared[i].pooled_labels);
        mask_parts.push_back(prepared[i].loss_mask);
        labels2d_parts.push_back(samples[i].labels2d);
        ignore_parts.push_back(prepared[i].ignore2d);
      }

      auto out = model.forward(ftsdf, rgb, maps, true);
      Tensor<float> l_ssc = weighted_ce(out.logits3d, concat_per_sample(labels3d_parts),
                                        outcome.class_weights,
                                        concat_per_sample(mask_parts));
      // 2D labels may carry the 255 sentinel on ignored pixels; remap them so
      // the loss only sees valid classes
      std::vector<uint8_t> labels2d = concat_per_sample(labels2d_parts);
      std::vector<uint8_t> ignore2d = concat_per_sample(ignore_parts);
      for (size_t i = 0; i < labels2d.size(); ++i)
        if (ignore2d[i]) labels2d[i] = 0;
      Tensor<float> l_ss = smooth_ce(out.logits2d, labels2d, cfg.smoothing, ignore2d);
      Tensor<float> loss = combined_loss(l_ss, l_ssc, cfg.lambda);

      opt3d.zero_grad();
      opt2d.zero_grad();
      backward(loss);
      double lr3d = sched3d.at(step), lr2d = sched2d.at(step);
      opt3d.step(lr3d);
      opt2d.step(lr2d);

      outcome.steps.push_back({step, lr3d, lr2d, static_cast<double>(loss.item()),
                               static_cast<double>(l_ss.item()),
                               static_cast<double>(l_ssc.item())});
      ++step;
    }

    EvalReport report = evaluate_fold(model, cfg, samples, val_idx, prepared, fold_id);
    bool improved = report.ssc_miou > state.best_miou;
    StopDecision decision = early_stop(state, report.ssc_miou, cfg.patience);
    if (improved) {
      outcome.best_epoch = epoch;
      outcome.best_miou = report.ssc_miou;
      outcome.report = report;
      outcome.best_state = to_entries(model.state_dict());
      std::vector<std::pair<std::string, Tensor<float>>> opt_named = opt3d.state_buffers();
      auto o2 = opt2d.state_buffers();
      opt_named.insert(opt_named.end(), o2.begin(), o2.end());
      outcome.best_opt_state = to_entries(opt_named);
    }
    outcome.epochs_run = epoch + 1;
    if (decision == StopDecision::Stop) break;
  }

  // leave the model holding the best weights
  apply_entries(outcome.best_state, model.state_dict());
  return outcome;
}

ExperimentResult run_experiment(const TrainConfig& cfg, const std::vector<Sample>& samples) {
  auto folds = kfold_split(static_cast<int>(samples.size()), cfg.folds, cfg.seed);
  ExperimentResult result;
  result.folds.resize(folds.size());

  const int threads = std::min<int>(env_threads(), static_cast<int>(folds.size()));
  if (threads <= 1) {
    for (size_t f = 0; f < folds.size(); ++f)
      result.folds[f] =
          train_fold(cfg, samples, folds[f].first, folds[f].second, static_cast<int>(f));
  } else {
    std::vector<std::thread> pool;
    std::atomic<size_t> next{0};
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&]() {
        while (true) {
          size_t f = next.fetch_add(1);
          if (f >= folds.size()) return;
          result.folds[f] = train_fold(cfg, samples, folds[f].first, folds[f].second,
                                       static_cast<int>(f));
        }
      });
    }
    for (auto& th : pool) th.join();
  }

  std::vector<EvalReport> reports;
  for (const auto& f : result.folds) reports.push_back(f.report);
  if (reports.size() >= 2) result.aggregate = aggregate_folds(reports);
  return result;
}

double logistic_baseline_miou(const TrainConfig& cfg, const std::vector<Sample>& samples,
                              const std::vector<int>& train_idx,
                              const std::vector<int>& val_idx) {
  const int factor = MdbNetConfig::scale_factor;
  const GridSpec& g = samples[train_idx[0]].grid;
  const int nx = g.dims[0] / factor, ny = g.dims[1] / factor, nz = g.dims[2] / factor;
  const int64_t S = static_cast<int64_t>(nx) * ny * nz;
  constexpr int kFeat = 8;  // mean ftsdf, 4 visibility one-hots, 3 coords

  std::vector<PreparedSample> prepared(samples.size());
  for (int i : train_idx) prepared[i] = prepare_sample(samples[i], cfg, i);
  for (int i : val_idx) prepared[i] = prepare_sample(samples[i], cfg, i);

  auto features_of = [&](int idx) {
    const Sample& s = samples[idx];
    const PreparedSample& p = prepared[idx];
    std::vector<float> f(kFeat * S, 0.0f);
    for (int x = 0; x < nx; ++x)
      for (int y = 0; y < ny; ++y)
        for (int z = 0; z < nz; ++z) {
          int64_t cell = (static_cast<int64_t>(x) * ny + y) * nz + z;
          double mean = 0.0;
          for (int dx = 0; dx < factor; ++dx)
            for (int dy = 0; dy < factor; ++dy)
              for (int dz = 0; dz < factor; ++dz)
                mean += s.ftsdf.at(0, x * factor + dx, y * factor + dy, z * factor + dz);
          f[cell] = static_cast<float>(mean / (factor * factor * factor));
          f[(1 + static_cast<int>(p.pooled_visibility[cell])) * S + cell] = 1.0f;
          f[5 * S + cell] = static_cast<float>(x) / nx;
          f[6 * S + cell] = static_cast<float>(y) / ny;
          f[7 * S + cell] = static_cast<float>(z) / nz;
        }
    return f;
  };

  // one linear map per voxel, trained full-batch
  Rng rng(derive_seed(cfg.seed, 4242));
  Tensor<float> w = Tensor<float>::randn({kNumClasses, kFeat, 1, 1, 1}, rng, 0.01f, true);
  Tensor<float> b = Tensor<float>::zeros({kNumClasses}, true);
  auto opt = Optimizer<float>::sgd_momentum({{w, "w", false}, {b, "b", true}}, 0.9f, 0.0f);

  std::vector<float> all_feats;
  std::vector<uint8_t> all_labels, all_mask;
  for (int i : train_idx) {
    std::vector<float> f = features_of(i);
    all_feats.insert(all_feats.end(), f.begin(), f.end());
    all_labels.insert(all_labels.end(), prepared[i].pooled_labels.begin(),
                      prepared[i].pooled_labels.end());
    all_mask.insert(all_mask.end(), prepared[i].loss_mask.begin(),
                    prepared[i].loss_mask.end());
  }
  const int64_t NB = static_cast<int64_t>(train_idx.size());
  Tensor<float> X = Tensor<float>::from({NB, kFeat, nx, ny, nz}, std::move(all_feats));

  ClassWeights weights = ClassWeights::uniform();
  {
    std::vector<const LabelVolume*> lvs;
    std::vector<const VoxelMask*> ms;
    for (int i : train_idx) {
      lvs.push_back(&prepared[i].pooled_labels);
      ms.push_back(&prepared[i].loss_mask);
    }
    weights = reweight_classes(class_frequencies(lvs, ms), cfg.kmeans_k,
                               derive_seed(cfg.seed, 99));
  }

  Conv3dSpec spec;  // 1x1x1
  for (int it = 0; it < 300; ++it) {
    Tensor<float> logits = conv3d(X, w, b, spec);
    Tensor<float> loss = weighted_ce(logits, all_labels, weights, all_mask);
    opt.zero_grad();
    backward(loss);
    opt.step(0.25);
  }

  SscClassCounts total;
  for (int i : val_idx) {
    Tensor<float> X1 = Tensor<float>::from({1, kFeat, nx, ny, nz}, features_of(i));
    Tensor<float> logits = conv3d(X1, w, b, spec);
    LabelVolume pred = argmax_labels(logits);
    total.add(ssc_counts(pred, prepared[i].pooled_labels, prepared[i].ssc_mask));
  }
  return ssc_from_counts(total).miou;
}

void write_eval_csv(const std::string& path, const std::vector<EvalReport>& reports,
                    double sc_ratio) {
  std::ostringstream os;
  os << "# sc_resample_ratio=" << sc_ratio << "\n";
  os << "# absent classes print nan and are excluded from miou\n";
  os << "fold,sc_precision,sc_recall,sc_iou";
  for (int c = 1; c < kNumClasses; ++c) os << ",iou_" << class_names()[c];
  os << ",ssc_miou,zero_denominator\n";
  os.precision(10);
  for (const auto& r : reports) {
    os << r.fold_id << "," << r.sc_precision << "," << r.sc_recall << "," << r.sc_iou;
    for (int c = 0; c < 11; ++c) {
      os << ",";
      if (r.class_defined[c])
        os << r.per_class_iou[c];
      else
        os << "nan";
    }
    os << "," << r.ssc_miou << "," << (r.zero_denominator ? 1 : 0) << "\n";
  }
  write_text_file(path, os.str());
}

std::vector<EvalReport> read_eval_csv(const std::string& path) {
  std::istringstream is(read_text_file(path));
  std::vector<EvalReport> reports;
  std::string line;
  double ratio = 1.0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto pos = line.find("sc_resample_ratio=");
      if (pos != std::string::npos) ratio = std::atof(line.c_str() + pos + 18);
      continue;
    }
    if (line.rfind("fold,", 0) == 0) continue;  // header
    std::vector<std::string> tok;
    std::istringstream ls(line);
    std::string piece;
    while (std::getline(ls, piece, ',')) tok.push_back(piece);
    require(tok.size() == 17, Err::FormatViolation, "malformed eval csv line: " + line);
    EvalReport r;
    r.fold_id = std::atoi(tok[0].c_str());
    r.sc_precision = std::atof(tok[1].c_str());
    r.sc_recall = std::atof(tok[2].c_str());
    r.sc_iou = std::atof(tok[3].c_str());
    for (int c = 0; c < 11; ++c) {
      if (tok[4 + c] == "nan") {
        r.class_defined[c] = false;
      } else {
        r.class_defined[c] = true;
        r.per_class_iou[c] = std::atof(tok[4 + c].c_str());
      }
    }
    r.ssc_miou = std::atof(tok[15].c_str());
    r.zero_denominator = std::atoi(tok[16].c_str()) != 0;
    r.sc_resample_ratio = ratio;
    reports.push_back(r);
  }
  return reports;
}

void write_steps_csv(const std::string& path, const std::vector<StepLog>& steps) {
  std::ostringstream os;
  os << "step,lr3d,lr2d,loss,l_ss,l_ssc\n";
  os.precision(10);
  for (const auto& s : steps)
    os << s.step << "," << s.lr3d << "," << s.lr2d << "," << s.loss << "," << s.l_ss << ","
       << s.l_ssc << "\n";
  write_text_file(path, os.str());
}

namespace {

const std::array<const char*, 11> kShortNames = {"ceil.", "floor", "wall", "win.",
                                                 "chair", "bed",   "sofa", "table",
                                                 "tvs",   "furn.", "objs"};

void pad(std::ostringstream& os, const std::string& s, size_t width) {
  os << s;
  for (size_t i = s.size(); i < width; ++i) os << ' ';
}

}  // namespace

std::string render_report_table(const FoldAggregate& agg, const std::string& title) {
  std::ostringstream os;
  os << title << " (" << agg.folds << " folds, mean±std)\n";
  std::ostringstream header;
  pad(header, "Prec.", 12);
  pad(header, "Recall", 12);
  pad(header, "IoU", 12);
  for (const char* n : kShortNames) pad(header, n, 7);
  pad(header, "mIoU", 12);
  os << header.str() << "\n";

  std::ostringstream row;
  pad(row, agg.sc_precision.str(), 12);
  pad(row, agg.sc_recall.str(), 12);
  pad(row, agg.sc_iou.str(), 12);
  for (int c = 0; c < 11; ++c) {
    if (agg.class_defined[c]) {
      char buf[16];
      std::snprintf(buf, sizeof(buf), "%.1f", agg.per_class_iou[c].mean);
      pad(row, buf, 7);
    } else {
      pad(row, "-", 7);
    }
  }
  pad(row, agg.ssc_miou.str(), 12);
  os << row.str() << "\n";
  return os.str();
}

std::string render_fusion_table(const std::vector<FusionRow>& rows) {
  std::ostringstream os;
  os << "Fusion Method   SC-IoU%       SSC-mIoU%\n";
  for (const auto& r : rows) {
    std::ostringstream line;
    pad(line, r.name, 16);
    pad(line, r.sc_iou.str(), 14);
    pad(line, r.ssc_miou.str(), 14);
    if (r.overlap_flag) line << "  [std intervals overlap]";
    os << line.str() << "\n";
  }
  return os.str();
}

std::vector<GradCheckEntry> run_gradient_suite() {
  std::vector<GradCheckEntry> entries;
  Rng rng(20240901);

  auto add = [&](const std::string& name, double err) {
    entries.push_back({name, err});
  };

  using D = double;
  // conv3d wrt input, weights, bias
  {
    Tensor<D> w = Tensor<D>::randn({3, 2, 3, 3, 3}, rng, 0.5, true);
    Tensor<D> b = Tensor<D>::randn({3}, rng, 0.5, true);
    Tensor<D> x0 = Tensor<D>::randn({1, 2, 4, 4, 4}, rng);
    Conv3dSpec spec;
    spec.pad = {1, 1, 1};
    add("conv3d/input", grad_check(
                            [&](const Tensor<D>& x) { return sum(conv3d(x, w, b, spec)); },
                            x0));
    Tensor<D> xfix = Tensor<D>::randn({1, 2, 4, 4, 4}, rng);
    add("conv3d/weights",
        grad_check(
            [&](const Tensor<D>& wt) { return sum(conv3d(xfix, wt, b, spec)); },
            Tensor<D>::from(w.shape(), w.values())));
    add("conv3d/bias", grad_check(
                           [&](const Tensor<D>& bt) { return sum(conv3d(xfix, w, bt, spec)); },
                           Tensor<D>::from(b.shape(), b.values())));
  }
  // batch_norm, train and eval modes
  {
    Tensor<D> gamma = Tensor<D>::randn({3}, rng, 0.5, true);
    Tensor<D> beta = Tensor<D>::randn({3}, rng, 0.5, true);
    Tensor<D> x0 = Tensor<D>::randn({2, 3, 2, 3, 2}, rng);
    add("batch_norm/train/input",
        grad_check(
            [&](const Tensor<D>& x) {
              Tensor<D> rm = Tensor<D>::zeros({3});
              Tensor<D> rv = Tensor<D>::full({3}, 1.0);
              return sum(mul(batch_norm(x, gamma, beta, rm, rv, true), x));
            },
            x0));
    add("batch_norm/eval/input",
        grad_check(
            [&](const Tensor<D>& x) {
              Tensor<D> rm = Tensor<D>::full({3}, 0.2);
              Tensor<D> rv = Tensor<D>::full({3}, 1.5);
              return sum(mul(batch_norm(x, gamma, beta, rm, rv, false), x));
            },
            x0));
    add("batch_norm/scale",
        grad_check(
            [&](const Tensor<D>& g) {
              Tensor<D> rm = Tensor<D>::zeros({3});
              Tensor<D> rv = Tensor<D>::full({3}, 1.0);
              return sum(mul(batch_norm(x0, g, beta, rm, rv, true), x0));
            },
            Tensor<D>::from(gamma.shape(), gamma.values())));
  }
  // activations (relu probed away from the kink)
  {
    Tensor<D> x0 = Tensor<D>::randn({40}, rng);
    for (auto& v : x0.values())
      if (std::abs(v) < 1e-2) v += 0.1;
    add("relu", grad_check([&](const Tensor<D>& x) { return sum(mul(relu(x), x)); }, x0));
    add("tanh",
        grad_check([&](const Tensor<D>& x) { return sum(mul(mdb::tanh(x), x)); }, x0));
  }
  // trilinear resample, down and up
  {
    Tensor<D> x0 = Tensor<D>::randn({1, 2, 4, 4, 4}, rng);
    add("resample/trilinear_down",
        grad_check(
            [&](const Tensor<D>& x) {
              return sum(mul(resample_volume(x, {2, 2, 2}, ResampleMode::Trilinear),
                             resample_volume(x, {2, 2, 2}, ResampleMode::Trilinear)));
            },
            x0));
    Tensor<D> x1 = Tensor<D>::randn({1, 2, 2, 2, 2}, rng);
    add("resample/trilinear_up",
        grad_check(
            [&](const Tensor<D>& x) {
              Tensor<D> y = resample_volume(x, {3, 4, 3}, ResampleMode::Trilinear);
              return sum(mul(y, y));
            },
            x1));
  }
  // scatter projection through a synthetic map
  {
    GridSpec g = GridSpec::desk_scale();
    CameraModel cam;
    cam.fx = cam.fy = 20.0;
    cam.cx = 8.0;
    cam.cy = 6.0;
    cam.image_width = 16;
    cam.image_height = 12;
    cam.translation = {-2.4, -1.6, 0.4};
    DepthMap depth(16, 12, 2.0f);
    ProjectionMap map = build_projection_map(cam, depth, g);
    std::vector<const ProjectionMap*> maps{&map};
    Tensor<D> x0 = Tensor<D>::randn({1, 2, 12, 16}, rng);
    add("scatter_project",
        grad_check(
            [&](const Tensor<D>& x) {
              Tensor<D> y = scatter_project(x, maps);
              return sum(mul(y, y));
            },
            x0));
  }
  // residual blocks, both variants, and the PCR block
  {
    Rng brng(7);
    ResidualBlock<D> block = ResidualBlock<D>::create(2, brng);
    Tensor<D> x0 = Tensor<D>::randn({1, 2, 3, 3, 3}, rng);
    add("preact_block", grad_check(
                            [&](const Tensor<D>& x) {
                              Tensor<D> y = block.forward(x, BlockVariant::PreAct, true);
                              return sum(mul(y, y));
                            },
                            x0));
    add("itrm_block", grad_check(
                          [&](const Tensor<D>& x) {
                            Tensor<D> y = block.forward(x, BlockVariant::Itrm, true);
                            return sum(mul(y, y));
                          },
                          x0));
    PcrBlock<D> pcr = PcrBlock<D>::create(2, 3, 2, brng);
    add("pcr_block", grad_check(
                         [&](const Tensor<D>& x) {
                           Tensor<D> y = pcr.forward(x, true);
                           return sum(mul(y, y));
                         },
                         x0));
  }
  // losses wrt logits
  {
    Tensor<D> x0 = Tensor<D>::randn({kNumClasses, 2, 2, 2}, rng);
    std::vector<uint8_t> labels(8);
    for (size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<uint8_t>(i % 12);
    VoxelMask mask(8, 1);
    mask[3] = 0;
    ClassWeights w = ClassWeights::uniform();
    w.weights[0] = 0.3;
    w.weights[5] = 4.0;
    add("weighted_ce", grad_check(
                           [&](const Tensor<D>& x) { return weighted_ce(x, labels, w, mask); },
                           x0));
    Tensor<D> x1 = Tensor<D>::randn({kNumClasses, 3, 4}, rng);
    std::vector<uint8_t> labels2d(12);
    for (size_t i = 0; i < labels2d.size(); ++i) labels2d[i] = static_cast<uint8_t>(i % 12);
    std::vector<uint8_t> ignore(12, 0);
    ignore[5] = 1;
    add("smooth_ce",
        grad_check(
            [&](const Tensor<D>& x) { return smooth_ce(x, labels2d, 0.1, ignore); }, x1));
  }
  return entries;
}

}  // namespace mdb
