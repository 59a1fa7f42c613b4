#include "pand/train.hpp"

#include "pand/container.hpp"

#include <chrono>
#include <cstdlib>
#include <sstream>

namespace pand {

namespace {

constexpr const char* kPromptTemplate = "a photo of a [CLASS]";

double now_ms() {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::string data_root(const Config& cfg) {
  std::string root = cfg.get_str("data.root");
  if (root.empty()) {
    const char* env = std::getenv("PAND_DATA_ROOT");
    if (env) root = env;
  }
  if (root.empty()) {
    throw ConfigError("data.root is empty and PAND_DATA_ROOT is not set");
  }
  return root;
}

}  // namespace

ToySplits build_dataset(const Config& cfg) {
  const std::string kind = cfg.get_str("data.kind");
  if (kind == "toy") {
    return make_toy(static_cast<int>(cfg.get_int("data.classes")),
                    static_cast<int>(cfg.get_int("data.per_class")),
                    static_cast<int>(cfg.get_int("data.dim")), cfg.get_float("data.separation"),
                    cfg.get_float("data.noise"),
                    static_cast<std::uint64_t>(cfg.get_int("data.seed")));
  }
  const std::string root = data_root(cfg);
  ToySplits splits;
  if (kind == "folder") {
    splits.train = load_image_folder(root, root + "/" + cfg.get_str("data.train_split"), "train");
    splits.test = load_image_folder(root, root + "/" + cfg.get_str("data.test_split"), "test");
  } else if (kind == "container") {
    splits.train = load_split(root + "/" + cfg.get_str("data.train_split"));
    splits.test = load_split(root + "/" + cfg.get_str("data.test_split"));
  } else {
    throw ConfigError("data.kind must be toy, folder, or container, got '" + kind + "'");
  }
  if (splits.train.class_names != splits.test.class_names) {
    throw IngestError("train and test splits disagree on the class vocabulary");
  }
  return splits;
}

VlmBundle build_vlm(const Config& cfg, const DatasetSplit& train) {
  VlmBundle bundle;
  const auto seed = static_cast<std::uint64_t>(cfg.get_int("encoder.seed"));
  const Index token_dim = cfg.get_int("encoder.token_dim");
  auto vlm = std::make_unique<ToyVlm<float>>(train.inputs.cols(),
                                             cfg.get_int("encoder.feature_dim"), token_dim, seed);
  bundle.vocab = ClassVocabularyT<float>::hashed(train.class_names, token_dim, seed);
  bundle.template_vocab =
      ClassVocabularyT<float>::from_template(kPromptTemplate, train.class_names, token_dim, seed);

  // "Pretraining": associate each class's mean image direction with both its
  // bare-name token and its filled-template token.
  Mat<float> feats = vlm->encode_images(train.inputs);
  std::vector<Mat<float>> class_tokens;
  for (std::size_t c = 0; c < train.class_names.size(); ++c) {
    Mat<float> toks(2, token_dim);
    toks.row(0) = bundle.vocab.embeddings[c].row(0);
    toks.row(1) = bundle.template_vocab.embeddings[c].row(0);
    class_tokens.push_back(std::move(toks));
  }
  vlm->pretrain_alignment(feats, train.labels, class_tokens);
  bundle.pair = std::move(vlm);
  return bundle;
}

void validate_config(const Config& cfg) {
  const std::string kind = cfg.get_str("data.kind");
  if (kind != "toy" && kind != "folder" && kind != "container") {
    throw ConfigError("data.kind must be toy, folder, or container, got '" + kind + "'");
  }
  const std::string mode = cfg.get_str("psc.anchor_mode");
  if (mode != "learned" && mode != "template") {
    throw ConfigError("psc.anchor_mode must be learned or template, got '" + mode + "'");
  }
  const std::string schedule = cfg.get_str("nsd.weights.schedule");
  if (schedule != "fixed" && schedule != "linear") {
    throw ConfigError("nsd.weights.schedule must be fixed or linear, got '" + schedule + "'");
  }
  if (!(cfg.get_float("psc.lr") > 0)) throw ConfigError("psc.lr must be positive");
  if (!(cfg.get_float("nsd.lr") > 0)) throw ConfigError("nsd.lr must be positive");
  if (!(cfg.get_float("psc.tau") > 0)) throw ConfigError("psc.tau must be positive");
  if (!(cfg.get_float("nsd.weights.tau") > 0)) throw ConfigError("nsd.weights.tau must be positive");
  if (!(cfg.get_float("nsd.nsd_temperature") > 0)) {
    throw ConfigError("nsd.nsd_temperature must be positive");
  }
  if (cfg.get_int("psc.epochs") < 0) throw ConfigError("psc.epochs must be non-negative");
  if (cfg.get_int("nsd.epochs") < 0) throw ConfigError("nsd.epochs must be non-negative");
  if (cfg.get_int("psc.batch_size") < 1) throw ConfigError("psc.batch_size must be positive");
  if (cfg.get_int("nsd.batch_size") < 1) throw ConfigError("nsd.batch_size must be positive");
  if (cfg.get_int("nsd.weights.k") < 1) throw ConfigError("nsd.weights.k must be positive");
  if (cfg.get_int("psc.n_ctx") < 1) throw ConfigError("psc.n_ctx must be at least 1");
  for (const char* key : {"nsd.weights.lambda_cls", "nsd.weights.lambda_vis",
                          "nsd.weights.lambda_txt", "nsd.weights.lambda_nsd"}) {
    if (cfg.get_float(key) < 0) throw ConfigError(std::string(key) + " must be non-negative");
  }
}

LossWeights weights_at(const Config& cfg, int epoch, int total_epochs) {
  LossWeights w;
  w.tau = static_cast<float>(cfg.get_float("nsd.weights.tau"));
  w.k = static_cast<int>(cfg.get_int("nsd.weights.k"));
  w.nsd_temperature = static_cast<float>(cfg.get_float("nsd.nsd_temperature"));
  const bool linear = cfg.get_str("nsd.weights.schedule") == "linear";
  const double frac =
      (linear && total_epochs > 1) ? static_cast<double>(epoch) / (total_epochs - 1) : 0.0;
  auto lam = [&](const char* start_key, const char* end_key) {
    const double start = cfg.get_float(start_key);
    double end = cfg.get_float(end_key);
    if (end < 0) end = start;  // unset: hold the starting value
    return static_cast<float>(start + (end - start) * frac);
  };
  w.lambda_cls = lam("nsd.weights.lambda_cls", "nsd.weights.lambda_cls_end");
  w.lambda_vis = lam("nsd.weights.lambda_vis", "nsd.weights.lambda_vis_end");
  w.lambda_txt = lam("nsd.weights.lambda_txt", "nsd.weights.lambda_txt_end");
  w.lambda_nsd = lam("nsd.weights.lambda_nsd", "nsd.weights.lambda_nsd_end");
  return w;
}

SemanticAnchors stage_psc(const Config& cfg, const ToySplits& data, const VlmBundle& bundle,
                          MetricsLog& log) {
  if (cfg.get_str("psc.anchor_mode") == "template") {
    return fixed_template_anchors(*bundle.pair, bundle.template_vocab);
  }
  PscSettings st;
  st.lr = cfg.get_float("psc.lr");
  st.momentum = cfg.get_float("psc.momentum");
  st.weight_decay = cfg.get_float("psc.weight_decay");
  st.epochs = static_cast<int>(cfg.get_int("psc.epochs"));
  st.batch_size = static_cast<int>(cfg.get_int("psc.batch_size"));
  st.tau = cfg.get_float("psc.tau");
  st.n_ctx = cfg.get_int("psc.n_ctx");
  st.symmetric = cfg.get_bool("psc.symmetric");
  st.grad_clip = cfg.get_float("psc.grad_clip");
  st.seed = static_cast<std::uint64_t>(cfg.get_int("psc.seed"));

  const double t0 = now_ms();
  PscResult<float> result = run_psc(st, data.train, *bundle.pair, bundle.vocab);
  const double elapsed = now_ms() - t0;
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
    EpochRecord rec;
    rec.stage = "psc";
    rec.epoch = static_cast<int>(e);
    rec.lr = st.lr;
    rec.total = static_cast<double>(result.epoch_loss[e]);
    rec.wall_ms = elapsed / static_cast<double>(result.epoch_loss.size());
    log.append(rec);
  }
  return result.anchors;
}

namespace {

/// Everything both NSD and baseline epochs share: batching, the backward
/// pass, clipping, the optimizer step, and the epoch record. The loss
/// callback fills the breakdown and both upstream gradients.
template <class LossFn>
void run_stage_loop(const Config& cfg, const ToySplits& data,
                    const TeacherOutputT<float>& t_train, StudentModel<float>& student,
                    AdamW<float>& opt, MetricsLog& log, const char* stage_name,
                    LossFn&& loss_fn) {
  const int epochs = static_cast<int>(cfg.get_int("nsd.epochs"));
  const int batch_size = static_cast<int>(cfg.get_int("nsd.batch_size"));
  const float lr0 = static_cast<float>(cfg.get_float("nsd.lr"));
  const float min_lr = static_cast<float>(cfg.get_float("nsd.min_lr"));
  const float clip = static_cast<float>(cfg.get_float("nsd.grad_clip"));

  Rng rng(static_cast<std::uint64_t>(cfg.get_int("nsd.seed")));
  std::vector<TensorView<float>> params = student.params();

  for (int epoch = 0; epoch < epochs; ++epoch) {
    const double t0 = now_ms();
    const float lr_t = cosine_lr<float>(epoch, epochs, lr0, min_lr);
    const LossWeights w = weights_at(cfg, epoch, epochs);
    BatchPlan plan(data.train.size(), batch_size, rng);
    LossBreakdownT<double> sum;
    for (Index b = 0; b < plan.num_batches(); ++b) {
      const std::vector<int>& sel = plan.batch(b);
      const Mat<float> xb = take_rows(data.train.inputs, sel);
      const std::vector<int> yb = take(data.train.labels, sel);
      TeacherOutputT<float> tb;
      tb.features = take_rows(t_train.features, sel);
      tb.logits = take_rows(t_train.logits, sel);

      StudentOutput out = student.forward(xb);
      Mat<float> dlogits, dprojected;
      const LossBreakdown bd = loss_fn(out, tb, yb, w, &dlogits, &dprojected);
      if (!std::isfinite(static_cast<double>(bd.total))) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                           std::to_string(b));
      }
      StudentGrads<float> grads = student.backward(xb, out, dlogits, dprojected);
      std::vector<TensorView<float>> gviews = grads.views();
      clip_global_norm(gviews, clip);
      opt.step(params, gviews, lr_t);

      sum.cls += bd.cls;
      sum.vis += bd.vis;
      sum.txt += bd.txt;
      sum.nsd += bd.nsd;
      sum.base += bd.base;
      sum.total += bd.total;
    }
    const double nb = static_cast<double>(plan.num_batches());
    EpochRecord rec;
    rec.stage = stage_name;
    rec.epoch = epoch;
    rec.lr = static_cast<double>(lr_t);
    rec.cls = sum.cls / nb;
    rec.vis = sum.vis / nb;
    rec.txt = sum.txt / nb;
    rec.nsd = sum.nsd / nb;
    rec.base = sum.base / nb;
    rec.total = sum.total / nb;
    rec.top1 = top1_accuracy(student.forward(data.test.inputs).logits, data.test.labels);
    rec.wall_ms = now_ms() - t0;
    log.append(rec);
  }
}

}  // namespace

void run_nsd_stage(const Config& cfg, const ToySplits& data, const TeacherOutputT<float>& t_train,
                   const SemanticAnchors& anchors, StudentModel<float>& student,
                   AdamW<float>& opt, MetricsLog& log) {
  if (!anchors.frozen) throw FreezeError("Stage-NSD requires frozen anchors");
  run_stage_loop(cfg, data, t_train, student, opt, log, "nsd",
                 [&](const StudentOutput& out, const TeacherOutputT<float>& tb,
                     const std::vector<int>& yb, const LossWeights& w, Mat<float>* dlogits,
                     Mat<float>* dprojected) {
                   return total_loss(out, tb, anchors, yb, w, dlogits, dprojected);
                 });
}

void run_baseline_stage(const Config& cfg, const ToySplits& data,
                        const TeacherOutputT<float>& t_train, const SemanticAnchors& anchors,
                        StudentModel<float>& student, AdamW<float>& opt, MetricsLog& log) {
  if (!anchors.frozen) throw FreezeError("baseline stage requires frozen anchors");
  run_stage_loop(cfg, data, t_train, student, opt, log, "nsd",
                 [&](const StudentOutput& out, const TeacherOutputT<float>& tb,
                     const std::vector<int>& yb, const LossWeights& w, Mat<float>* dlogits,
                     Mat<float>* dprojected) {
                   return base_loss(out, tb, anchors, yb, w, dlogits, dprojected);
                 });
}

PipelineResult run_pipeline(const Config& raw, bool persist,
                            const SemanticAnchors* preset_anchors) {
  const Config cfg = raw.resolved();
  validate_config(cfg);

  ToySplits data = build_dataset(cfg);
  const Index c = data.train.num_classes();
  const int k = static_cast<int>(cfg.get_int("nsd.weights.k"));
  if (k > c - 1) {
    throw ConfigError("k exceeds C-1 (k=" + std::to_string(k) + ", C=" + std::to_string(c) +
                      ")");
  }

  VlmBundle bundle = build_vlm(cfg, data.train);
  PipelineResult res;
  res.config_hash = cfg.hash();

  SemanticAnchors anchors;
  if (preset_anchors) {
    if (!preset_anchors->frozen) throw FreezeError("preset anchors must be frozen");
    if (preset_anchors->num_classes() != c) {
      throw ShapeError("anchor class count " + std::to_string(preset_anchors->num_classes()) +
                       " vs dataset classes " + std::to_string(c));
    }
    anchors = *preset_anchors;
  } else {
    anchors = stage_psc(cfg, data, bundle, res.psc_log);
  }

  const std::uint64_t encoder_hash = bundle.pair->weight_hash();
  const std::uint64_t anchor_hash = hash_bytes(anchors.matrix);

  const TeacherOutput t_train = teacher_forward(*bundle.pair, anchors, data.train.inputs);
  const TeacherOutput t_test = teacher_forward(*bundle.pair, anchors, data.test.inputs);
  res.teacher_top1 = top1_accuracy(t_test.logits, data.test.labels);

  StudentModel<float> student(data.train.inputs.cols(), cfg.get_int("student.hidden_dim"),
                              cfg.get_int("student.feature_dim"), c,
                              bundle.pair->feature_dim(),
                              static_cast<std::uint64_t>(cfg.get_int("student.seed")));
  AdamW<float> opt(student.params(), static_cast<float>(cfg.get_float("nsd.weight_decay")));
  if (cfg.get_int("nsd.epochs") > 0) {
    run_nsd_stage(cfg, data, t_train, anchors, student, opt, res.nsd_log);
  }

  if (bundle.pair->weight_hash() != encoder_hash) {
    throw FreezeError("encoder weights changed during Stage-NSD");
  }
  if (hash_bytes(anchors.matrix) != anchor_hash) {
    throw FreezeError("anchors changed during Stage-NSD");
  }

  const StudentOutput s_test = student.forward(data.test.inputs);
  res.student_top1 = top1_accuracy(s_test.logits, data.test.labels);
  res.consistency =
      neighborhood_consistency(t_test.logits, s_test.logits, data.test.labels, k);

  if (persist) {
    const std::string anchors_path = cfg.get_str("paths.anchors");
    if (!anchors_path.empty()) save_anchors(anchors, anchors_path);
    const std::string ckpt_path = cfg.get_str("paths.checkpoints");
    if (!ckpt_path.empty()) {
      save_checkpoint(ckpt_path, student, &opt, static_cast<int>(cfg.get_int("nsd.epochs")), cfg);
    }
    const std::string metrics_path = cfg.get_str("paths.metrics");
    if (!metrics_path.empty()) {
      MetricsLog combined;
      for (const auto& r : res.psc_log.records()) combined.append(r);
      for (const auto& r : res.nsd_log.records()) combined.append(r);
      combined.write_jsonl(metrics_path);
    }
  }

  res.anchors = std::move(anchors);
  res.student.emplace(std::move(student));
  return res;
}

void save_checkpoint(const std::string& path, StudentModel<float>& student,
                     AdamW<float>* opt, int epoch, const Config& cfg) {
  Container box;
  for (const auto& view : student.params()) {
    NamedTensor t;
    t.name = view.name;
    t.value = Eigen::Map<const Mat<float>>(view.data, view.rows, view.cols);
    box.tensors.push_back(std::move(t));
  }
  if (opt) {
    const std::vector<TensorView<float>> params = student.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      NamedTensor m;
      m.name = "adam_m." + params[i].name;
      m.value = Eigen::Map<const Mat<float>>(opt->moments_m()[i].data(),
                                             opt->moments_m()[i].size(), 1);
      box.tensors.push_back(std::move(m));
      NamedTensor v;
      v.name = "adam_v." + params[i].name;
      v.value = Eigen::Map<const Mat<float>>(opt->moments_v()[i].data(),
                                             opt->moments_v()[i].size(), 1);
      box.tensors.push_back(std::move(v));
    }
  }
  std::ostringstream meta;
  meta << "epoch " << epoch << "\n";
  meta << "adam_step " << (opt ? opt->step_count() : 0) << "\n";
  meta << cfg.resolved().canonical();
  box.meta = meta.str();
  save_container(path, box);
}

CheckpointState load_checkpoint(const std::string& path) {
  Container box = load_container(path);
  const Mat<float>& w1 = box.find("w1");
  const Mat<float>& w2 = box.find("w2");
  const Mat<float>& fc_w = box.find("fc_w");
  const Mat<float>& proj_w = box.find("proj_w");

  CheckpointState state{
      StudentModel<float>(w1.cols(), w1.rows(), w2.rows(), fc_w.rows(), proj_w.rows(), 0),
      {}, {}, 0, 0, ""};
  for (auto& view : state.student.params()) {
    const Mat<float>& stored = box.find(view.name);
    if (stored.rows() != view.rows || stored.cols() != view.cols) {
      throw FormatError("checkpoint tensor " + view.name + " has shape " +
                        std::to_string(stored.rows()) + "x" + std::to_string(stored.cols()) +
                        ", expected " + std::to_string(view.rows) + "x" +
                        std::to_string(view.cols));
    }
    std::memcpy(view.data, stored.data(), sizeof(float) * static_cast<std::size_t>(view.size()));
  }
  if (box.contains("adam_m.w1")) {
    for (const auto& view : state.student.params()) {
      const Mat<float>& m = box.find("adam_m." + view.name);
      const Mat<float>& v = box.find("adam_v." + view.name);
      state.adam_m.push_back(Eigen::Map<const Vec<float>>(m.data(), m.size()));
      state.adam_v.push_back(Eigen::Map<const Vec<float>>(v.data(), v.size()));
    }
  }
  std::istringstream meta(box.meta);
  std::string line;
  while (std::getline(meta, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "epoch") {
      ls >> state.epoch;
    } else if (key == "adam_step") {
      ls >> state.adam_step;
    } else {
      state.config_echo += line + "\n";
    }
  }
  return state;
}

}  // namespace pand
