#pragma once
// Conversation feature files (JSON lines), synthetic dataset generation,
// and padded/masked batching.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace mer {

constexpr int kNumModalities = 3;  // t, a, v
constexpr char kModalityTags[kNumModalities] = {'t', 'a', 'v'};

struct Conversation {
  std::string id;
  std::vector<int> speakers;
  std::vector<int> labels;  // empty when unlabeled
  bool has_labels = false;
  std::array<std::vector<float>, kNumModalities> feats;  // row-major n x d_m

  int64_t length() const { return int64_t(speakers.size()); }
};

struct Dataset {
  std::vector<Conversation> convs;
  std::vector<std::string> class_names;
  std::array<int, kNumModalities> modality_dims{0, 0, 0};
  int num_speakers = 0;

  int num_classes() const { return int(class_names.size()); }
  int64_t total_utterances() const {
    int64_t n = 0;
    for (const auto& c : convs) n += c.length();
    return n;
  }
};

// one padded batch; padded positions carry zero features and the
// ignore-label C (one past the last class)
struct Batch {
  std::vector<int> conv_index;  // into Dataset::convs
  int64_t n_max = 0;
  std::array<std::vector<float>, kNumModalities> feats;  // B x n_max x d_m
  std::vector<int> speakers;                             // B x n_max
  std::vector<int> labels;                               // B x n_max
  std::vector<uint8_t> mask;                             // B x n_max

  int64_t size() const { return int64_t(conv_index.size()); }
};

struct SynthConfig {
  int conversations = 20;
  int min_len = 5;
  int max_len = 15;
  int classes = 6;
  int speakers = 2;
  std::array<int, kNumModalities> dims{16, 12, 8};
  std::array<float, kNumModalities> informativeness{1.f, 1.f, 1.f};
  float cross_modal_only = 0.f;  // fraction of utterances whose label needs all modalities
  float noise_scale = 0.f;
  float signal_scale = 3.f;   // magnitude of the class code
  float share_noise = 6.f;    // spread of the per-modality shares in cross-modal mode
  float label_inertia = 0.f;  // P(utterance repeats the previous label); conversational
                              // context carries signal only when this is > 0
  uint64_t seed = 0;

  void validate() const;
};

Dataset load_dataset(const std::string& path);
void write_dataset(const Dataset& ds, const std::string& path);

Dataset generate_synthetic(const SynthConfig& cfg);

// Every conversation appears exactly once; each batch is padded to its own
// longest conversation. Shuffle order is a deterministic function of seed
// (callers mix in the epoch index).
std::vector<Batch> make_batches(const Dataset& ds, int batch_size, bool shuffle, uint64_t seed);

// Deterministic conversation-level split (fractions must sum to <= 1; the
// last part absorbs the remainder). Synthetic held-out evaluation must come
// from the same generated dataset, since the generator draws its embedding
// maps per dataset.
std::vector<Dataset> split_dataset(const Dataset& ds, const std::vector<double>& fractions);

}  // namespace mer
