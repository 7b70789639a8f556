#pragma once
// End-to-end training (Adam with global-norm clipping), evaluation,
// checkpointing, ablation runner, and embedding export.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mer/data.hpp"
#include "mer/metrics.hpp"
#include "mer/model.hpp"
#include "mer/objectives.hpp"
#include "mer/param_store.hpp"

namespace mer {

struct TrainConfig {
  // model shape
  int d = 64;
  int heads = 4;
  int layers = 1;
  int d_ff = 0;
  int d_h = 0;
  std::array<int, kNumModalities> kernel{1, 1, 1};
  std::string modalities = "tav";
  float dropout = 0.f;
  // optimization
  float lr = 1e-3f;
  int batch_size = 16;
  int epochs = 50;
  uint64_t seed = 0;
  float gamma1 = 1.0f;
  float gamma2 = 1.0f;
  float grad_clip = 5.0f;  // global norm; <= 0 disables
  // ablation switches
  bool without_mr = false;
  bool without_cma = false;
  bool without_lld = false;
  bool without_hld = false;
  char eval_head = 'x';

  ModelConfig model_config(const Dataset& ds) const;
  double effective_gamma1() const { return without_lld ? 0.0 : double(gamma1); }
  double effective_gamma2() const { return without_hld ? 0.0 : double(gamma2); }
  void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct AdamState {
  std::vector<std::vector<float>> m, v;  // aligned with parameter order
  uint64_t step = 0;
};

// beta = (0.9, 0.999), eps = 1e-8, no weight decay
void adam_step(ParamStore& params, AdamState& state, float lr, float grad_clip);

struct Checkpoint {
  std::string config_text;  // canonical JSON, preserved verbatim on reload
  ParamStore params;
  AdamState opt;
  uint32_t epoch = 0;
  std::array<uint64_t, 4> rng_state{};

  nlohmann::json config_json() const;
  TrainConfig train_config() const;
  ModelConfig model_config() const;
  std::vector<std::string> class_names() const;
};

Checkpoint make_checkpoint(const TrainConfig& cfg, const Dataset& train_ds,
                           const ParamStore& params, const AdamState& opt, uint32_t epoch,
                           const std::array<uint64_t, 4>& rng_state);
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

struct EpochStats {
  int epoch = 0;
  LossParts train_loss;
  Metrics val;
};

struct TrainResult {
  Checkpoint best;
  std::vector<EpochStats> history;
  int best_epoch = -1;
  double best_wf1 = -1.0;
  bool aborted = false;

  nlohmann::json history_json() const;
};

TrainResult train(const Dataset& train_ds, const Dataset& val_ds, const TrainConfig& cfg);

// head 0 uses the head recorded in the checkpoint config
Metrics evaluate(const Checkpoint& ckpt, const Dataset& ds, char head = 0);

void export_embeddings(const Checkpoint& ckpt, const Dataset& ds, const std::string& path);

// per-conversation loss parts for the conversations of one batch
std::vector<LossParts> batch_losses(const ModelConfig& cfg, const ParamStore& params,
                                    const Batch& batch, const Dataset& ds, Mode mode, Rng* rng,
                                    double gamma1, double gamma2);

// ablation variants; accepts the canonical names ("full", "w/o MR",
// "w/o CMA-T", "w/o LLD", "w/o HLD", "w/o HD", "Text", "Text+Audio", ...)
// and their compact aliases (no-mr, no-cma, no-lld, no-hld, no-hd, t, ta, ...)
TrainConfig apply_variant(const TrainConfig& base, const std::string& variant);

struct VariantResult {
  std::string name;
  std::vector<uint64_t> seeds;
  std::vector<double> acc, wf1;
  double mean_acc = 0.0, mean_wf1 = 0.0, std_wf1 = 0.0;
};

std::vector<VariantResult> ablate(const Dataset& train_ds, const Dataset& val_ds,
                                  const Dataset& test_ds, const TrainConfig& base,
                                  const std::vector<std::string>& variants,
                                  const std::vector<uint64_t>& seeds);
nlohmann::json ablation_report_json(const std::vector<VariantResult>& results);

uint64_t fnv1a64(const void* data, size_t len);

}  // namespace mer
