#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dualcore/checkpoint.hpp"
#include "dualcore/metrics.hpp"
#include "dualcore/model.hpp"
#include "dualcore/optimizer.hpp"
#include "dualcore/synthetic.hpp"

namespace dualcore {

struct ExperimentConfig {
  std::string model = "tiny";  // tiny | full | micro
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::int64_t batch = 8;  // tiny preset uses 4
  int epochs = 60;
  std::uint64_t seed = 0;
  std::string loss_config = "fusion+both";
  bool augment_flips = false;
  bool augment_crops = false;
  std::string pretrain_checkpoint;
  double gamma = 0.65;
  double alpha = 1.0;
  double beta = 1.0;
  double weight_decay = 0.0;
  bool residual = true;
  int patience = 20;
  double val_fraction = 0.1;
  std::string out_dir;
  // data source: an extracted-roi manifest, or a generated synthetic set
  std::string data_manifest;
  std::int64_t synthetic_samples = 0;

  static ExperimentConfig tiny_defaults() {
    ExperimentConfig c;
    c.model = "tiny";
    c.batch = 4;
    return c;
  }

  DualCoreConfig model_config() const {
    DualCoreConfig mc;
    if (model == "full")
      mc = DualCoreConfig::full();
    else if (model == "tiny")
      mc = DualCoreConfig::tiny();
    else if (model == "micro")
      mc = DualCoreConfig::micro();
    else
      throw std::invalid_argument("unknown model preset: " + model);
    mc.gamma = gamma;
    mc.fusion.alpha = alpha;
    mc.fusion.beta = beta;
    mc.lpl.residual = residual;
    mc.cgl.residual = residual;
    return mc;
  }

  std::int64_t input_size() const { return model_config().lpl.input_size; }

  // canonical key=value form, used for files and the config hash
  std::string serialize() const {
    std::ostringstream os;
    os << "alpha = " << plot::fmt(alpha) << '\n'
       << "augment_crops = " << (augment_crops ? 1 : 0) << '\n'
       << "augment_flips = " << (augment_flips ? 1 : 0) << '\n'
       << "batch = " << batch << '\n'
       << "beta = " << plot::fmt(beta) << '\n'
       << "beta1 = " << plot::fmt(beta1) << '\n'
       << "beta2 = " << plot::fmt(beta2) << '\n'
       << "epochs = " << epochs << '\n'
       << "gamma = " << plot::fmt(gamma) << '\n'
       << "loss_config = " << loss_config << '\n'
       << "lr = " << plot::fmt(lr) << '\n'
       << "data_manifest = " << data_manifest << '\n'
       << "model = " << model << '\n'
       << "out_dir = " << out_dir << '\n'
       << "patience = " << patience << '\n'
       << "pretrain_checkpoint = " << pretrain_checkpoint << '\n'
       << "residual = " << (residual ? 1 : 0) << '\n'
       << "seed = " << seed << '\n'
       << "synthetic_samples = " << synthetic_samples << '\n'
       << "val_fraction = " << plot::fmt(val_fraction) << '\n'
       << "weight_decay = " << plot::fmt(weight_decay) << '\n';
    return os.str();
  }

  std::string hash() const {
    // FNV-1a 64
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : serialize()) {
      h ^= ch;
      h *= 0x100000001b3ull;
    }
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }
};

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config " + path);
  ExperimentConfig c;
  std::string line;
  while (std::getline(f, line)) {
    const auto hashpos = line.find('#');
    if (hashpos != std::string::npos) line = line.substr(0, hashpos);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key == "model") c.model = val;
    else if (key == "lr") c.lr = std::stod(val);
    else if (key == "beta1") c.beta1 = std::stod(val);
    else if (key == "beta2") c.beta2 = std::stod(val);
    else if (key == "batch") c.batch = std::stoll(val);
    else if (key == "epochs") c.epochs = std::stoi(val);
    else if (key == "seed") c.seed = std::stoull(val);
    else if (key == "loss_config") c.loss_config = val;
    else if (key == "augment_flips") c.augment_flips = val == "1" || val == "true";
    else if (key == "augment_crops") c.augment_crops = val == "1" || val == "true";
    else if (key == "pretrain_checkpoint") c.pretrain_checkpoint = val;
    else if (key == "gamma") c.gamma = std::stod(val);
    else if (key == "alpha") c.alpha = std::stod(val);
    else if (key == "beta") c.beta = std::stod(val);
    else if (key == "weight_decay") c.weight_decay = std::stod(val);
    else if (key == "residual") c.residual = val == "1" || val == "true";
    else if (key == "patience") c.patience = std::stoi(val);
    else if (key == "val_fraction") c.val_fraction = std::stod(val);
    else if (key == "out_dir") c.out_dir = val;
    else if (key == "data_manifest") c.data_manifest = val;
    else if (key == "synthetic_samples") c.synthetic_samples = std::stoll(val);
    else if (!key.empty()) throw std::invalid_argument("unknown config key: " + key);
  }
  parse_loss_config(c.loss_config);  // validate early
  return c;
}

// Patient-level train/test partition of in-memory samples (ratio to train).
inline std::pair<std::vector<RoiSample>, std::vector<RoiSample>> split_samples_by_patient(
    const std::vector<RoiSample>& samples, double ratio, std::uint64_t seed) {
  std::vector<std::string> patients;
  for (const auto& s : samples)
    if (std::find(patients.begin(), patients.end(), s.patient_id) == patients.end())
      patients.push_back(s.patient_id);
  if (patients.size() < 2) throw InsufficientPatients(patients.size());
  Rng rng(mix64(seed ^ 0x517Cull));
  rng.shuffle(patients);
  const std::int64_t P = static_cast<std::int64_t>(patients.size());
  const std::int64_t n_train =
      std::clamp<std::int64_t>(std::llround(ratio * static_cast<double>(P)), 1, P - 1);
  std::map<std::string, bool> in_train;
  for (std::int64_t i = 0; i < P; ++i) in_train[patients[static_cast<std::size_t>(i)]] = i < n_train;
  std::pair<std::vector<RoiSample>, std::vector<RoiSample>> out;
  for (const auto& s : samples) (in_train[s.patient_id] ? out.first : out.second).push_back(s);
  return out;
}

// Resolve the config's data source into (train, test) pools.
inline std::pair<std::vector<RoiSample>, std::vector<RoiSample>> load_config_data(
    const ExperimentConfig& cfg) {
  if (!cfg.data_manifest.empty()) {
    return {load_roi_samples(cfg.data_manifest, "train"), load_roi_samples(cfg.data_manifest, "test")};
  }
  if (cfg.synthetic_samples > 0) {
    auto all = make_synthetic_roi_samples(cfg.synthetic_samples, cfg.seed, cfg.input_size());
    return split_samples_by_patient(all, 0.8, cfg.seed);
  }
  throw std::invalid_argument("config needs data_manifest or synthetic_samples");
}

struct EpochRecord {
  double train_total = 0, train_fusion = 0, train_lpl = 0, train_cgl = 0;
  double val_total = 0, val_fusion = 0, val_lpl = 0, val_cgl = 0;
  double val_dice = 0, val_auc = 0;
  bool has_val = false;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double wall_seconds = 0;
  std::string config_hash;
  double final_val_dice = 0, final_val_auc = 0;
  std::int64_t steps = 0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["config_hash"] = config_hash;
    j["best_epoch"] = best_epoch;
    j["wall_seconds"] = wall_seconds;
    j["steps"] = steps;
    j["final_val_dice"] = final_val_dice;
    j["final_val_auc"] = final_val_auc;
    j["epochs"] = nlohmann::json::array();
    for (const auto& e : epochs) {
      nlohmann::json je;
      je["train_total"] = e.train_total;
      je["train_fusion"] = e.train_fusion;
      je["train_lpl"] = e.train_lpl;
      je["train_cgl"] = e.train_cgl;
      if (e.has_val) {
        je["val_total"] = e.val_total;
        je["val_fusion"] = e.val_fusion;
        je["val_lpl"] = e.val_lpl;
        je["val_cgl"] = e.val_cgl;
        je["val_dice"] = e.val_dice;
        je["val_auc"] = e.val_auc;
      }
      j["epochs"].push_back(je);
    }
    return j;
  }
};

template <typename T>
struct TrainOutcome {
  std::unique_ptr<DualCoreNet<T>> model;
  TrainReport report;
};

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

template <typename T>
EvalReport evaluate_model(const DualCoreNet<T>& net, const std::vector<RoiSample>& samples,
                          std::int64_t batch = 8) {
  NoGradGuard guard;
  EvalReport report;
  const std::int64_t S = net.config().lpl.input_size;
  for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch)) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(samples.size(), start + static_cast<std::size_t>(batch)); ++i)
      idx.push_back(i);
    Tensor<T> lpl_img, cgl_img, masks;
    std::vector<int> labels;
    DualCoreNet<T>::batch_from_samples(samples, idx, lpl_img, cgl_img, masks, labels);
    auto out = net.forward(Var<T>(lpl_img), Var<T>(cgl_img), FwdCtx<T>{});
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto n = static_cast<std::int64_t>(k);
      SampleEval e;
      e.patient_id = samples[idx[k]].patient_id;
      e.label = samples[idx[k]].label;
      GrayImage crf_fg({S, S}), cnn_fg({S, S});
      for (std::int64_t i = 0; i < S * S; ++i) {
        crf_fg[i] = static_cast<double>(out.seg.crf_probs.value()[(n * 2 + 1) * S * S + i]);
        cnn_fg[i] = static_cast<double>(out.seg.cnn_probs.value()[(n * 2 + 1) * S * S + i]);
      }
      e.dice_crf = dice_coefficient(threshold_mask(crf_fg), samples[idx[k]].cgl_mask);
      e.dice_cnn = dice_coefficient(threshold_mask(cnn_fg), samples[idx[k]].cgl_mask);
      e.p_malignant = static_cast<double>(out.diagnosis.probs.value()[n * 2 + 1]);
      report.samples.push_back(std::move(e));
    }
  }
  report.finalize();
  return report;
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

namespace train_detail {

// hold out ~val_fraction of the patients (at least one when possible)
inline void split_validation(const std::vector<RoiSample>& pool, double val_fraction,
                             std::uint64_t seed, std::vector<std::size_t>& train_idx,
                             std::vector<std::size_t>& val_idx) {
  std::vector<std::string> patients;
  for (const auto& s : pool)
    if (std::find(patients.begin(), patients.end(), s.patient_id) == patients.end())
      patients.push_back(s.patient_id);
  train_idx.clear();
  val_idx.clear();
  if (patients.size() < 2 || val_fraction <= 0) {
    for (std::size_t i = 0; i < pool.size(); ++i) train_idx.push_back(i);
    return;
  }
  Rng rng(mix64(seed ^ 0x7A11ull));
  rng.shuffle(patients);
  const std::size_t n_val = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(patients.size()))));
  std::map<std::string, bool> is_val;
  for (std::size_t i = 0; i < patients.size(); ++i) is_val[patients[i]] = i < n_val;
  for (std::size_t i = 0; i < pool.size(); ++i)
    (is_val[pool[i].patient_id] ? val_idx : train_idx).push_back(i);
}

template <typename T>
std::vector<Tensor<T>> snapshot_params(const ParamStore<T>& ps) {
  std::vector<Tensor<T>> out;
  for (const auto& [name, v] : ps.entries()) out.push_back(v.value());
  return out;
}

template <typename T>
void restore_params(ParamStore<T>& ps, const std::vector<Tensor<T>>& snap) {
  std::size_t k = 0;
  for (auto& [name, v] : ps.entries()) v.value() = snap[k++];
}

}  // namespace train_detail

// Minimizes the configured loss over the training pool; deterministic under
// (config, seed, data). Returns the weights of the best validation epoch.
template <typename T = double>
TrainOutcome<T> train(const ExperimentConfig& cfg, const std::vector<RoiSample>& pool) {
  const auto t_start = std::chrono::steady_clock::now();
  const LossConfig lc = parse_loss_config(cfg.loss_config);

  TrainOutcome<T> out;
  out.model = std::make_unique<DualCoreNet<T>>(cfg.model_config(), cfg.seed);
  DualCoreNet<T>& net = *out.model;
  if (!cfg.pretrain_checkpoint.empty()) load_checkpoint(net.params(), cfg.pretrain_checkpoint);

  std::vector<std::size_t> train_idx, val_idx;
  train_detail::split_validation(pool, cfg.val_fraction, cfg.seed, train_idx, val_idx);
  std::vector<RoiSample> val_samples;
  for (auto i : val_idx) val_samples.push_back(pool[i]);

  AdamOptions aopt;
  aopt.lr = cfg.lr;
  aopt.beta1 = cfg.beta1;
  aopt.beta2 = cfg.beta2;
  aopt.weight_decay = cfg.weight_decay;
  Adam<T> adam(net.params(), aopt);

  AugmentFlags aug;
  aug.flips = cfg.augment_flips;
  aug.random_crop = cfg.augment_crops;
  const bool augment_on = cfg.augment_flips || cfg.augment_crops;

  Rng master(cfg.seed);
  TrainReport& report = out.report;
  report.config_hash = cfg.hash();
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<Tensor<T>> best_snap = train_detail::snapshot_params(net.params());
  int best_epoch = -1, since_best = 0;
  std::int64_t global_batch = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng = master.fork(0xE0, static_cast<std::uint64_t>(epoch));
    std::vector<std::size_t> order = train_idx;
    shuffle_rng.shuffle(order);

    EpochRecord rec;
    double train_sum[4] = {0, 0, 0, 0};
    std::int64_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() +
                                       static_cast<std::ptrdiff_t>(std::min(
                                           order.size(), start + static_cast<std::size_t>(cfg.batch))));
      std::vector<RoiSample> batch_samples;
      batch_samples.reserve(idx.size());
      for (auto i : idx) {
        if (augment_on) {
          Rng ar = master.fork(static_cast<std::uint64_t>(epoch) + 1,
                               0xA000 + static_cast<std::uint64_t>(i));
          batch_samples.push_back(augment(pool[i], ar, aug));
        } else {
          batch_samples.push_back(pool[i]);
        }
      }
      std::vector<std::size_t> local(idx.size());
      std::iota(local.begin(), local.end(), 0);
      Tensor<T> lpl_img, cgl_img, masks;
      std::vector<int> labels;
      DualCoreNet<T>::batch_from_samples(batch_samples, local, lpl_img, cgl_img, masks, labels);

      Rng drop = master.fork(0xD0, static_cast<std::uint64_t>(global_batch));
      FwdCtx<T> ctx{true, &drop};
      adam.zero_grad();
      auto fwd = net.forward(Var<T>(lpl_img), Var<T>(cgl_img), ctx);
      auto losses = net.losses(fwd, labels, masks, lc);
      const double lt = static_cast<double>(losses.total.item());
      if (!std::isfinite(lt)) throw NonFiniteLoss(global_batch);
      backward(losses.total);
      adam.step();

      train_sum[0] += lt;
      train_sum[1] += static_cast<double>(losses.fusion.item());
      train_sum[2] += static_cast<double>(losses.lpl.item());
      train_sum[3] += static_cast<double>(losses.cgl.item());
      seen += static_cast<std::int64_t>(idx.size());
      ++global_batch;
    }
    rec.train_total = train_sum[0] / static_cast<double>(seen);
    rec.train_fusion = train_sum[1] / static_cast<double>(seen);
    rec.train_lpl = train_sum[2] / static_cast<double>(seen);
    rec.train_cgl = train_sum[3] / static_cast<double>(seen);

    if (!val_samples.empty()) {
      rec.has_val = true;
      NoGradGuard guard;
      double val_sum[4] = {0, 0, 0, 0};
      for (std::size_t start = 0; start < val_samples.size();
           start += static_cast<std::size_t>(cfg.batch)) {
        std::vector<std::size_t> idx;
        for (std::size_t i = start;
             i < std::min(val_samples.size(), start + static_cast<std::size_t>(cfg.batch)); ++i)
          idx.push_back(i);
        Tensor<T> lpl_img, cgl_img, masks;
        std::vector<int> labels;
        DualCoreNet<T>::batch_from_samples(val_samples, idx, lpl_img, cgl_img, masks, labels);
        auto fwd = net.forward(Var<T>(lpl_img), Var<T>(cgl_img), FwdCtx<T>{});
        auto losses = net.losses(fwd, labels, masks, lc);
        val_sum[0] += static_cast<double>(losses.total.item());
        val_sum[1] += static_cast<double>(losses.fusion.item());
        val_sum[2] += static_cast<double>(losses.lpl.item());
        val_sum[3] += static_cast<double>(losses.cgl.item());
      }
      const double n = static_cast<double>(val_samples.size());
      rec.val_total = val_sum[0] / n;
      rec.val_fusion = val_sum[1] / n;
      rec.val_lpl = val_sum[2] / n;
      rec.val_cgl = val_sum[3] / n;
      EvalReport ev = evaluate_model(net, val_samples, cfg.batch);
      rec.val_dice = ev.mean_dice;
      rec.val_auc = ev.has_auc ? ev.auc : 0.0;

      if (rec.val_total < best_val - 1e-9) {
        best_val = rec.val_total;
        best_snap = train_detail::snapshot_params(net.params());
        best_epoch = epoch;
        since_best = 0;
      } else if (++since_best > cfg.patience) {
        report.epochs.push_back(rec);
        break;
      }
    } else {
      best_epoch = epoch;
    }
    report.epochs.push_back(rec);
  }

  if (!val_samples.empty() && best_epoch >= 0) {
    train_detail::restore_params(net.params(), best_snap);
    report.final_val_dice = report.epochs[static_cast<std::size_t>(best_epoch)].val_dice;
    report.final_val_auc = report.epochs[static_cast<std::size_t>(best_epoch)].val_auc;
  }
  report.best_epoch = best_epoch;
  report.steps = global_batch;
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();

  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    save_checkpoint(net.params(),
                    (std::filesystem::path(cfg.out_dir) / "model.ckpt").string());
    std::ofstream jf(std::filesystem::path(cfg.out_dir) / "train_report.json");
    jf << report.to_json().dump(2) << '\n';
    std::vector<plot::Series> curves;
    plot::Series tr{"train_total", {}, {}}, va{"val_total", {}, {}};
    for (std::size_t e = 0; e < report.epochs.size(); ++e) {
      tr.x.push_back(static_cast<double>(e));
      tr.y.push_back(report.epochs[e].train_total);
      if (report.epochs[e].has_val) {
        va.x.push_back(static_cast<double>(e));
        va.y.push_back(report.epochs[e].val_total);
      }
    }
    curves.push_back(tr);
    if (!va.x.empty()) curves.push_back(va);
    plot::emit((std::filesystem::path(cfg.out_dir) / "loss_curves").string(), "training loss",
               "epoch", "loss", curves);
  }
  return out;
}

// Training initialized from a checkpoint; layer shapes must match.
template <typename T = double>
TrainOutcome<T> fine_tune(const std::string& pretrained_path, ExperimentConfig cfg,
                          const std::vector<RoiSample>& pool) {
  cfg.pretrain_checkpoint = pretrained_path;
  if (cfg.epochs == 0) {
    // no-op training: return the loaded weights untouched
    TrainOutcome<T> out;
    out.model = std::make_unique<DualCoreNet<T>>(cfg.model_config(), cfg.seed);
    load_checkpoint(out.model->params(), pretrained_path);
    out.report.config_hash = cfg.hash();
    return out;
  }
  return train<T>(cfg, pool);
}

// ---------------------------------------------------------------------------
// ablations
// ---------------------------------------------------------------------------

struct AblationRun {
  std::string setting;
  TrainReport report;
  EvalReport eval;
};

// axis: "loss-config" (three loss configurations, ROC comparison),
//       "gamma" (gamma sweep, dice per gamma),
//       "residual" (residual vs vanilla validation-loss curves).
template <typename T = double>
std::vector<AblationRun> run_ablation(const std::string& axis, ExperimentConfig base,
                                      const std::vector<RoiSample>& train_pool,
                                      const std::vector<RoiSample>& test_pool,
                                      const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<AblationRun> runs;

  auto one = [&](const std::string& tag, const ExperimentConfig& cfg) {
    auto outcome = train<T>(cfg, train_pool);
    AblationRun run;
    run.setting = tag;
    run.report = outcome.report;
    run.eval = evaluate_model(*outcome.model, test_pool, cfg.batch);
    runs.push_back(std::move(run));
  };

  if (axis == "loss-config") {
    for (const char* lc : {"fusion+lpl", "fusion+cgl", "fusion+both"}) {
      ExperimentConfig cfg = base;
      cfg.loss_config = lc;
      cfg.out_dir.clear();
      one(lc, cfg);
    }
    std::vector<plot::Series> rocs;
    for (const auto& run : runs) {
      std::vector<double> scores;
      std::vector<int> labels;
      for (const auto& s : run.eval.samples) {
        scores.push_back(s.p_malignant);
        labels.push_back(s.label);
      }
      RocCurve c = roc_auc(scores, labels);
      rocs.push_back({run.setting, c.fpr, c.tpr});
    }
    plot::emit((std::filesystem::path(out_dir) / "roc_loss_configs").string(),
               "diagnosis ROC by loss configuration", "fpr", "tpr", rocs);
  } else if (axis == "gamma") {
    std::vector<plot::Series> sweep(1);
    sweep[0].name = "test_dice";
    for (double g : {0.0, 0.42, 0.65, 1.0}) {
      ExperimentConfig cfg = base;
      cfg.gamma = g;
      cfg.out_dir.clear();
      one("gamma=" + plot::fmt(g), cfg);
      sweep[0].x.push_back(g);
      sweep[0].y.push_back(runs.back().eval.mean_dice);
    }
    plot::emit((std::filesystem::path(out_dir) / "gamma_sweep").string(),
               "segmentation dice vs gamma", "gamma", "dice", sweep);
  } else if (axis == "residual") {
    for (bool res : {true, false}) {
      ExperimentConfig cfg = base;
      cfg.residual = res;
      // the regularization term accompanies the residual configuration
      cfg.weight_decay = res ? (base.weight_decay > 0 ? base.weight_decay : 1e-4) : 0.0;
      cfg.out_dir.clear();
      one(res ? "residual" : "vanilla", cfg);
    }
    std::vector<plot::Series> curves;
    for (const auto& run : runs) {
      plot::Series s{run.setting, {}, {}};
      for (std::size_t e = 0; e < run.report.epochs.size(); ++e)
        if (run.report.epochs[e].has_val) {
          s.x.push_back(static_cast<double>(e));
          s.y.push_back(run.report.epochs[e].val_total);
        }
      curves.push_back(std::move(s));
    }
    plot::emit((std::filesystem::path(out_dir) / "residual_val_loss").string(),
               "validation loss: residual vs vanilla", "epoch", "val loss", curves);
  } else {
    throw std::invalid_argument("unknown ablation axis: " + axis);
  }

  nlohmann::json j = nlohmann::json::array();
  for (const auto& run : runs) {
    nlohmann::json e;
    e["setting"] = run.setting;
    e["report"] = run.report.to_json();
    e["test_dice"] = run.eval.mean_dice;
    e["test_dice_std"] = run.eval.std_dice;
    if (run.eval.has_auc) e["test_auc"] = run.eval.auc;
    j.push_back(e);
  }
  std::ofstream jf(std::filesystem::path(out_dir) / ("ablation_" + axis + ".json"));
  jf << j.dump(2) << '\n';
  return runs;
}

}  // namespace dualcore
