#include "mer/train.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mer {

using nlohmann::json;

// ---------------------------------------------------------------------------
// config plumbing
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (lr <= 0.f) throw std::invalid_argument("train: lr must be positive");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (gamma1 < 0.f || gamma2 < 0.f) throw std::invalid_argument("train: gammas must be >= 0");
  if (std::string("tavx").find(eval_head) == std::string::npos)
    throw std::invalid_argument("train: eval head must be one of t,a,v,x");
  if (eval_head != 'x' && modalities.find(eval_head) == std::string::npos)
    throw std::invalid_argument("train: eval head not in modality subset");
}

ModelConfig TrainConfig::model_config(const Dataset& ds) const {
  validate();
  ModelConfig mc;
  mc.d = d;
  mc.heads = heads;
  mc.layers = layers;
  mc.d_ff = d_ff;
  mc.d_h = d_h;
  mc.kernel = kernel;
  mc.without_mr = without_mr;
  mc.without_cma = without_cma;
  mc.modalities = modalities;
  mc.dropout = dropout;
  mc.num_classes = ds.num_classes();
  mc.num_speakers = ds.num_speakers;
  mc.modality_dims = ds.modality_dims;
  mc.validate();
  return mc;
}

json train_config_to_json(const TrainConfig& c) {
  json j;
  j["d"] = c.d;
  j["heads"] = c.heads;
  j["layers"] = c.layers;
  j["d_ff"] = c.d_ff;
  j["d_h"] = c.d_h;
  j["k_t"] = c.kernel[0];
  j["k_a"] = c.kernel[1];
  j["k_v"] = c.kernel[2];
  j["modalities"] = c.modalities;
  j["dropout"] = c.dropout;
  j["lr"] = c.lr;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["seed"] = c.seed;
  j["gamma1"] = c.gamma1;
  j["gamma2"] = c.gamma2;
  j["grad_clip"] = c.grad_clip;
  j["without_mr"] = c.without_mr;
  j["without_cma"] = c.without_cma;
  j["without_lld"] = c.without_lld;
  j["without_hld"] = c.without_hld;
  j["eval_head"] = std::string(1, c.eval_head);
  return j;
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.d = j.at("d").get<int>();
  c.heads = j.at("heads").get<int>();
  c.layers = j.at("layers").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.d_h = j.at("d_h").get<int>();
  c.kernel = {j.at("k_t").get<int>(), j.at("k_a").get<int>(), j.at("k_v").get<int>()};
  c.modalities = j.at("modalities").get<std::string>();
  c.dropout = j.at("dropout").get<float>();
  c.lr = j.at("lr").get<float>();
  c.batch_size = j.at("batch_size").get<int>();
  c.epochs = j.at("epochs").get<int>();
  c.seed = j.at("seed").get<uint64_t>();
  c.gamma1 = j.at("gamma1").get<float>();
  c.gamma2 = j.at("gamma2").get<float>();
  c.grad_clip = j.at("grad_clip").get<float>();
  c.without_mr = j.at("without_mr").get<bool>();
  c.without_cma = j.at("without_cma").get<bool>();
  c.without_lld = j.at("without_lld").get<bool>();
  c.without_hld = j.at("without_hld").get<bool>();
  c.eval_head = j.at("eval_head").get<std::string>().at(0);
  return c;
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

void adam_step(ParamStore& params, AdamState& state, float lr, float grad_clip) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), {});
    state.v.assign(params.size(), {});
    for (size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(size_t(params.param(i).size()), 0.f);
      state.v[i].assign(size_t(params.param(i).size()), 0.f);
    }
  }

  double clip_scale = 1.0;
  if (grad_clip > 0.f) {
    double sq = 0.0;
    for (size_t i = 0; i < params.size(); ++i)
      for (float g : params.param(i).grad()) sq += double(g) * double(g);
    const double norm = std::sqrt(sq);
    if (norm > double(grad_clip)) clip_scale = double(grad_clip) / norm;
  }

  ++state.step;
  const double bc1 = 1.0 - std::pow(kBeta1, double(state.step));
  const double bc2 = 1.0 - std::pow(kBeta2, double(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = params.param(i);
    const auto& grad = p.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (size_t k = 0; k < m.size(); ++k) {
      const double g = grad.empty() ? 0.0 : double(grad[k]) * clip_scale;
      m[k] = float(kBeta1 * double(m[k]) + (1.0 - kBeta1) * g);
      v[k] = float(kBeta2 * double(v[k]) + (1.0 - kBeta2) * g * g);
      const double mhat = double(m[k]) / bc1;
      const double vhat = double(v[k]) / bc2;
      p.values()[k] = float(double(p.values()[k]) - double(lr) * mhat / (std::sqrt(vhat) + kEps));
    }
  }
}

// ---------------------------------------------------------------------------
// checkpoint container
// ---------------------------------------------------------------------------

uint64_t fnv1a64(const void* data, size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

json Checkpoint::config_json() const { return json::parse(config_text); }

TrainConfig Checkpoint::train_config() const {
  return train_config_from_json(config_json().at("train"));
}

ModelConfig Checkpoint::model_config() const {
  const json j = config_json();
  ModelConfig mc;
  const TrainConfig tc = train_config_from_json(j.at("train"));
  mc.d = tc.d;
  mc.heads = tc.heads;
  mc.layers = tc.layers;
  mc.d_ff = tc.d_ff;
  mc.d_h = tc.d_h;
  mc.kernel = tc.kernel;
  mc.without_mr = tc.without_mr;
  mc.without_cma = tc.without_cma;
  mc.modalities = tc.modalities;
  mc.dropout = tc.dropout;
  const json& data = j.at("data");
  mc.num_classes = int(data.at("class_names").size());
  mc.num_speakers = data.at("num_speakers").get<int>();
  auto dims = data.at("modality_dims").get<std::vector<int>>();
  for (int m = 0; m < kNumModalities; ++m) mc.modality_dims[size_t(m)] = dims[size_t(m)];
  return mc;
}

std::vector<std::string> Checkpoint::class_names() const {
  return config_json().at("data").at("class_names").get<std::vector<std::string>>();
}

Checkpoint make_checkpoint(const TrainConfig& cfg, const Dataset& train_ds,
                           const ParamStore& params, const AdamState& opt, uint32_t epoch,
                           const std::array<uint64_t, 4>& rng_state) {
  json j;
  j["train"] = train_config_to_json(cfg);
  j["data"]["class_names"] = train_ds.class_names;
  j["data"]["modality_dims"] =
      std::vector<int>(train_ds.modality_dims.begin(), train_ds.modality_dims.end());
  j["data"]["num_speakers"] = train_ds.num_speakers;
  Checkpoint ckpt;
  ckpt.config_text = j.dump();
  ckpt.params = params.clone();
  ckpt.opt = opt;
  ckpt.epoch = epoch;
  ckpt.rng_state = rng_state;
  return ckpt;
}

namespace {

constexpr char kMagic[8] = {'M', 'E', 'R', 'C', 'K', 'P', 'T', '1'};

void write_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = (unsigned char)((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}
void write_u64(std::ostream& out, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = (unsigned char)((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}
void write_f32(std::ostream& out, float f) {
  uint32_t v;
  std::memcpy(&v, &f, 4);
  write_u32(out, v);
}
uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= uint32_t(b[i]) << (8 * i);
  return v;
}
uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= uint64_t(b[i]) << (8 * i);
  return v;
}
float read_f32(std::istream& in) {
  const uint32_t v = read_u32(in);
  float f;
  std::memcpy(&f, &v, 4);
  return f;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write(kMagic, 8);
  write_u32(out, 1);  // format version
  write_u32(out, uint32_t(ckpt.config_text.size()));
  out.write(ckpt.config_text.data(), std::streamsize(ckpt.config_text.size()));
  write_u64(out, fnv1a64(ckpt.config_text.data(), ckpt.config_text.size()));
  write_u32(out, ckpt.epoch);
  for (uint64_t s : ckpt.rng_state) write_u64(out, s);
  write_u64(out, ckpt.opt.step);
  write_u32(out, uint32_t(ckpt.params.size()));
  const bool has_opt = ckpt.opt.m.size() == ckpt.params.size();
  for (size_t i = 0; i < ckpt.params.size(); ++i) {
    const auto& name = ckpt.params.name(i);
    const auto& p = ckpt.params.param(i);
    write_u32(out, uint32_t(name.size()));
    out.write(name.data(), std::streamsize(name.size()));
    write_u32(out, uint32_t(p.shape().size()));
    for (int64_t e : p.shape()) write_u64(out, uint64_t(e));
    for (float v : p.values()) write_f32(out, v);
    out.put(has_opt ? 1 : 0);
    if (has_opt) {
      for (float v : ckpt.opt.m[i]) write_f32(out, v);
      for (float v : ckpt.opt.v[i]) write_f32(out, v);
    }
  }
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw std::invalid_argument("not a checkpoint file: " + path);
  const uint32_t version = read_u32(in);
  if (version != 1) throw std::invalid_argument("unsupported checkpoint version");

  Checkpoint ckpt;
  const uint32_t cfg_len = read_u32(in);
  ckpt.config_text.resize(cfg_len);
  in.read(ckpt.config_text.data(), cfg_len);
  const uint64_t digest = read_u64(in);
  if (digest != fnv1a64(ckpt.config_text.data(), ckpt.config_text.size()))
    throw std::invalid_argument("checkpoint config digest mismatch");
  ckpt.epoch = read_u32(in);
  for (auto& s : ckpt.rng_state) s = read_u64(in);
  ckpt.opt.step = read_u64(in);
  const uint32_t n_params = read_u32(in);
  for (uint32_t i = 0; i < n_params; ++i) {
    const uint32_t name_len = read_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const uint32_t ndim = read_u32(in);
    Shape shape(ndim);
    for (auto& e : shape) e = int64_t(read_u64(in));
    auto& p = ckpt.params.add(name, shape);
    for (auto& v : p.values()) v = read_f32(in);
    const int has_opt = in.get();
    if (has_opt == 1) {
      ckpt.opt.m.emplace_back(p.values().size());
      ckpt.opt.v.emplace_back(p.values().size());
      for (auto& v : ckpt.opt.m.back()) v = read_f32(in);
      for (auto& v : ckpt.opt.v.back()) v = read_f32(in);
    }
  }
  if (!in) throw std::invalid_argument("truncated checkpoint: " + path);
  return ckpt;
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

namespace {

void check_dataset_compat(const Dataset& a, const Dataset& b, const char* what) {
  if (a.class_names != b.class_names)
    throw std::invalid_argument(std::string("dataset class mismatch: ") + what);
  if (a.modality_dims != b.modality_dims)
    throw std::invalid_argument(std::string("dataset dim mismatch: ") + what);
}

std::pair<std::vector<int>, std::vector<int>> predictions(const ModelConfig& mc,
                                                          const ParamStore& params,
                                                          const Dataset& ds, char head) {
  std::vector<int> truth, pred;
  for (const auto& conv : ds.convs) {
    if (!conv.has_labels) throw std::invalid_argument("evaluate: dataset has no labels");
    auto fwd = model_forward<float>(mc, params, conv_input(conv), Mode::kEval, nullptr, 0, 0);
    const auto& probs = fwd.head_probs(head);
    const int64_t c = probs.cols();
    for (int64_t i = 0; i < conv.length(); ++i) {
      int best = 0;
      for (int64_t j = 1; j < c; ++j)
        if (probs.at(i, j) > probs.at(i, best)) best = int(j);
      pred.push_back(best);
      truth.push_back(conv.labels[size_t(i)]);
    }
  }
  return {truth, pred};
}

}  // namespace

std::vector<LossParts> batch_losses(const ModelConfig& cfg, const ParamStore& params,
                                    const Batch& batch, const Dataset& ds, Mode mode, Rng* rng,
                                    double gamma1, double gamma2) {
  std::vector<LossParts> out;
  for (int ci : batch.conv_index) {
    auto fwd = model_forward<float>(cfg, params, conv_input(ds.convs[size_t(ci)]), mode, rng,
                                    gamma1, gamma2);
    if (!fwd.has_loss) throw std::invalid_argument("batch_losses: dataset has no labels");
    out.push_back(fwd.parts);
  }
  return out;
}

TrainResult train(const Dataset& train_ds, const Dataset& val_ds, const TrainConfig& cfg) {
  cfg.validate();
  check_dataset_compat(train_ds, val_ds, "train vs val");
  if (train_ds.convs.empty()) throw std::invalid_argument("train: empty training set");
  for (const auto& conv : train_ds.convs)
    if (!conv.has_labels) throw std::invalid_argument("train: unlabeled conversation");

  const ModelConfig mc = cfg.model_config(train_ds);
  ParamStore params;
  Rng init_rng(cfg.seed, 1);
  register_model_params(mc, params, init_rng);
  AdamState opt;
  Rng train_rng(cfg.seed, 2);

  const double g1 = cfg.effective_gamma1();
  const double g2 = cfg.effective_gamma2();

  TrainResult result;
  // "last finite" fallback, refreshed at every epoch boundary
  Checkpoint last_finite =
      make_checkpoint(cfg, train_ds, params, opt, 0, train_rng.state());
  result.best = last_finite;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto batches =
        make_batches(train_ds, cfg.batch_size, /*shuffle=*/true, mix_seed(cfg.seed, uint64_t(epoch)));
    std::vector<LossParts> epoch_parts;
    bool diverged = false;
    for (const auto& batch : batches) {
      params.zero_grad();
      std::vector<Tensor> totals;
      try {
        for (int ci : batch.conv_index) {
          auto fwd = model_forward<float>(mc, params, conv_input(train_ds.convs[size_t(ci)]),
                                          Mode::kTrain, &train_rng, g1, g2);
          totals.push_back(fwd.total);
          epoch_parts.push_back(fwd.parts);
        }
      } catch (const NonFiniteLossError&) {
        diverged = true;
        break;
      }
      Tensor batch_loss = totals[0];
      for (size_t i = 1; i < totals.size(); ++i) batch_loss = add(batch_loss, totals[i]);
      batch_loss = scale(batch_loss, 1.0f / float(totals.size()));
      batch_loss.backward();
      adam_step(params, opt, cfg.lr, cfg.grad_clip);
    }
    if (diverged) {
      result.aborted = true;
      result.best = last_finite;
      break;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = average_loss_parts(epoch_parts);
    auto [truth, pred] = predictions(mc, params, val_ds, cfg.eval_head);
    stats.val = compute_metrics(truth, pred, mc.num_classes);
    result.history.push_back(stats);

    last_finite = make_checkpoint(cfg, train_ds, params, opt, uint32_t(epoch + 1),
                                  train_rng.state());
    if (stats.val.weighted_f1 > result.best_wf1) {
      result.best_wf1 = stats.val.weighted_f1;
      result.best_epoch = epoch;
      result.best = last_finite;
    }
  }
  if (!result.aborted && result.best_epoch < 0) result.best = last_finite;
  return result;
}

Metrics evaluate(const Checkpoint& ckpt, const Dataset& ds, char head) {
  const ModelConfig mc = ckpt.model_config();
  if (ds.num_classes() != mc.num_classes)
    throw std::invalid_argument("evaluate: class count mismatch");
  if (ds.modality_dims != mc.modality_dims)
    throw std::invalid_argument("evaluate: modality dim mismatch");
  const char use_head = head ? head : ckpt.train_config().eval_head;
  auto [truth, pred] = predictions(mc, ckpt.params, ds, use_head);
  return compute_metrics(truth, pred, mc.num_classes);
}

void export_embeddings(const Checkpoint& ckpt, const Dataset& ds, const std::string& path) {
  const ModelConfig mc = ckpt.model_config();
  if (ds.modality_dims != mc.modality_dims)
    throw std::invalid_argument("export_embeddings: modality dim mismatch");
  bool any_labels = false;
  for (const auto& conv : ds.convs) any_labels = any_labels || conv.has_labels;
  if (any_labels && ds.num_classes() != mc.num_classes)
    throw std::invalid_argument("export_embeddings: class count mismatch");
  const char head = ckpt.train_config().eval_head;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write embeddings: " + path);
  for (const auto& conv : ds.convs) {
    auto fwd = model_forward<float>(mc, ckpt.params, conv_input(conv), Mode::kEval, nullptr, 0, 0);
    const auto& probs = fwd.head_probs(head);
    for (int64_t i = 0; i < conv.length(); ++i) {
      int best = 0;
      for (int64_t j = 1; j < probs.cols(); ++j)
        if (probs.at(i, j) > probs.at(i, best)) best = int(j);
      json rec;
      rec["conversation"] = conv.id;
      rec["index"] = i;
      if (conv.has_labels)
        rec["label"] = conv.labels[size_t(i)];
      else
        rec["label"] = nullptr;
      rec["pred"] = best;
      json emb = json::array();
      for (int64_t j = 0; j < fwd.h_fused.cols(); ++j)
        emb.push_back(double(fwd.h_fused.at(i, j)));
      rec["embedding"] = std::move(emb);
      out << rec.dump() << "\n";
    }
  }
  if (!out) throw std::runtime_error("embedding write failed: " + path);
}

// ---------------------------------------------------------------------------
// ablation runner
// ---------------------------------------------------------------------------

TrainConfig apply_variant(const TrainConfig& base, const std::string& variant) {
  TrainConfig cfg = base;
  std::string v;
  for (char c : variant) v += char(std::tolower((unsigned char)c));
  if (v == "full" || v == "tav") return cfg;
  if (v == "w/o mr" || v == "no-mr") {
    cfg.without_mr = true;
    return cfg;
  }
  if (v == "w/o cma-t" || v == "no-cma") {
    cfg.without_cma = true;
    return cfg;
  }
  if (v == "w/o lld" || v == "no-lld") {
    cfg.without_lld = true;
    return cfg;
  }
  if (v == "w/o hld" || v == "no-hld") {
    cfg.without_hld = true;
    return cfg;
  }
  if (v == "w/o hd" || v == "no-hd") {
    cfg.without_lld = true;
    cfg.without_hld = true;
    return cfg;
  }
  auto subset = [&cfg](const std::string& mods) {
    cfg.modalities = mods;
    if (cfg.eval_head != 'x' && mods.find(cfg.eval_head) == std::string::npos)
      cfg.eval_head = 'x';
    return cfg;
  };
  if (v == "text" || v == "t") return subset("t");
  if (v == "audio" || v == "a") return subset("a");
  if (v == "visual" || v == "v") return subset("v");
  if (v == "text+audio" || v == "ta") return subset("ta");
  if (v == "text+visual" || v == "tv") return subset("tv");
  if (v == "audio+visual" || v == "av") return subset("av");
  throw std::invalid_argument("unknown variant: " + variant);
}

std::vector<VariantResult> ablate(const Dataset& train_ds, const Dataset& val_ds,
                                  const Dataset& test_ds, const TrainConfig& base,
                                  const std::vector<std::string>& variants,
                                  const std::vector<uint64_t>& seeds) {
  if (variants.empty()) throw std::invalid_argument("ablate: no variants");
  if (seeds.empty()) throw std::invalid_argument("ablate: no seeds");
  check_dataset_compat(train_ds, test_ds, "train vs test");
  std::vector<VariantResult> out;
  for (const auto& name : variants) {
    VariantResult vr;
    vr.name = name;
    for (uint64_t seed : seeds) {
      TrainConfig cfg = apply_variant(base, name);
      cfg.seed = seed;
      auto result = train(train_ds, val_ds, cfg);
      auto metrics = evaluate(result.best, test_ds);
      vr.seeds.push_back(seed);
      vr.acc.push_back(metrics.accuracy);
      vr.wf1.push_back(metrics.weighted_f1);
    }
    const double n = double(vr.wf1.size());
    for (size_t i = 0; i < vr.wf1.size(); ++i) {
      vr.mean_acc += vr.acc[i] / n;
      vr.mean_wf1 += vr.wf1[i] / n;
    }
    double sq = 0.0;
    for (double w : vr.wf1) sq += (w - vr.mean_wf1) * (w - vr.mean_wf1);
    vr.std_wf1 = vr.wf1.size() > 1 ? std::sqrt(sq / (n - 1.0)) : 0.0;
    out.push_back(std::move(vr));
  }
  return out;
}

json ablation_report_json(const std::vector<VariantResult>& results) {
  json j = json::array();
  for (const auto& r : results) {
    json v;
    v["variant"] = r.name;
    json runs = json::array();
    for (size_t i = 0; i < r.seeds.size(); ++i)
      runs.push_back({{"seed", r.seeds[i]}, {"acc", r.acc[i]}, {"wf1", r.wf1[i]}});
    v["runs"] = std::move(runs);
    v["mean_acc"] = r.mean_acc;
    v["mean_wf1"] = r.mean_wf1;
    v["std_wf1"] = r.std_wf1;
    j.push_back(std::move(v));
  }
  return j;
}

// ---------------------------------------------------------------------------
// history serialization
// ---------------------------------------------------------------------------

namespace {

json loss_parts_json(const LossParts& p) {
  json j;
  j["total"] = p.total;
  j["re"] = p.re;
  j["ce_t"] = p.ce[0];
  j["ce_a"] = p.ce[1];
  j["ce_v"] = p.ce[2];
  j["ce_x"] = p.ce[3];
  j["mse_t"] = p.mse[0];
  j["mse_a"] = p.mse[1];
  j["mse_v"] = p.mse[2];
  j["kl_t"] = p.kl[0];
  j["kl_a"] = p.kl[1];
  j["kl_v"] = p.kl[2];
  j["gamma1"] = p.gamma1;
  j["gamma2"] = p.gamma2;
  return j;
}

}  // namespace

json TrainResult::history_json() const {
  json epochs = json::array();
  for (const auto& e : history) {
    json j;
    j["epoch"] = e.epoch;
    j["train"] = loss_parts_json(e.train_loss);
    j["val"]["accuracy"] = e.val.accuracy;
    j["val"]["weighted_f1"] = e.val.weighted_f1;
    epochs.push_back(std::move(j));
  }
  json out;
  out["epochs"] = std::move(epochs);
  out["best_epoch"] = best_epoch;
  out["best_weighted_f1"] = best_wf1;
  out["aborted"] = aborted;
  return out;
}

}  // namespace mer
