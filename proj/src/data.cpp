#include "mer/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "mer/rng.hpp"

namespace mer {

using nlohmann::json;

namespace {

json feature_matrix_to_json(const std::vector<float>& flat, int64_t n, int64_t d) {
  json rows = json::array();
  for (int64_t i = 0; i < n; ++i) {
    json row = json::array();
    for (int64_t j = 0; j < d; ++j) row.push_back(double(flat[size_t(i * d + j)]));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<float> feature_matrix_from_json(const json& rows, int64_t n, int64_t d,
                                            const std::string& where) {
  if (!rows.is_array() || int64_t(rows.size()) != n)
    throw std::invalid_argument("ragged conversation: " + where);
  std::vector<float> flat(size_t(n * d));
  for (int64_t i = 0; i < n; ++i) {
    const json& row = rows[size_t(i)];
    if (!row.is_array() || int64_t(row.size()) != d)
      throw std::invalid_argument("bad feature dim: " + where);
    for (int64_t j = 0; j < d; ++j) {
      if (!row[size_t(j)].is_number())
        throw std::invalid_argument("non-numeric feature: " + where);
      const double v = row[size_t(j)].get<double>();
      if (!std::isfinite(v)) throw std::invalid_argument("non-finite feature: " + where);
      flat[size_t(i * d + j)] = float(v);
    }
  }
  return flat;
}

}  // namespace

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open dataset file: " + path);

  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("empty dataset file: " + path);

  json header = json::parse(line, nullptr, /*allow_exceptions=*/true);
  if (!header.contains("format_version") || header["format_version"].get<int>() != 1)
    throw std::invalid_argument("unsupported format_version in " + path);
  Dataset ds;
  ds.class_names = header.at("class_names").get<std::vector<std::string>>();
  auto dims = header.at("modality_dims").get<std::vector<int>>();
  if (dims.size() != kNumModalities)
    throw std::invalid_argument("modality_dims must have 3 entries");
  for (int m = 0; m < kNumModalities; ++m) ds.modality_dims[size_t(m)] = dims[size_t(m)];
  ds.num_speakers = header.at("num_speakers").get<int>();
  if (ds.num_classes() < 2) throw std::invalid_argument("need at least 2 classes");
  if (ds.num_speakers < 1) throw std::invalid_argument("need at least 1 speaker");
  for (int d : dims)
    if (d < 1) throw std::invalid_argument("modality dims must be positive");

  const int C = ds.num_classes();
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec = json::parse(line);
    Conversation conv;
    conv.id = rec.at("id").get<std::string>();
    const std::string where = "conversation '" + conv.id + "' (line " +
                              std::to_string(line_no) + ")";
    conv.speakers = rec.at("speakers").get<std::vector<int>>();
    const int64_t n = conv.length();
    if (n < 1) throw std::invalid_argument("empty conversation: " + where);
    for (int s : conv.speakers)
      if (s < 0 || s >= ds.num_speakers)
        throw std::invalid_argument("speaker index out of range: " + where);

    if (rec.contains("labels") && !rec["labels"].is_null()) {
      conv.labels = rec["labels"].get<std::vector<int>>();
      conv.has_labels = true;
      if (int64_t(conv.labels.size()) != n)
        throw std::invalid_argument("ragged conversation: labels in " + where);
      for (int y : conv.labels)
        if (y < 0 || y >= C) throw std::invalid_argument("bad label in " + where);
    }

    const char* keys[kNumModalities] = {"feat_t", "feat_a", "feat_v"};
    for (int m = 0; m < kNumModalities; ++m) {
      if (!rec.contains(keys[m]))
        throw std::invalid_argument(std::string("modality missing: ") + keys[m] + " in " + where);
      conv.feats[size_t(m)] = feature_matrix_from_json(
          rec[keys[m]], n, ds.modality_dims[size_t(m)], std::string(keys[m]) + " in " + where);
    }
    ds.convs.push_back(std::move(conv));
  }
  return ds;
}

void write_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset file: " + path);

  json header;
  header["format_version"] = 1;
  header["class_names"] = ds.class_names;
  header["modality_dims"] = std::vector<int>(ds.modality_dims.begin(), ds.modality_dims.end());
  header["num_speakers"] = ds.num_speakers;
  out << header.dump() << "\n";

  for (const auto& conv : ds.convs) {
    json rec;
    rec["id"] = conv.id;
    rec["speakers"] = conv.speakers;
    if (conv.has_labels)
      rec["labels"] = conv.labels;
    else
      rec["labels"] = nullptr;
    const char* keys[kNumModalities] = {"feat_t", "feat_a", "feat_v"};
    for (int m = 0; m < kNumModalities; ++m)
      rec[keys[m]] = feature_matrix_to_json(conv.feats[size_t(m)], conv.length(),
                                            ds.modality_dims[size_t(m)]);
    out << rec.dump() << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

void SynthConfig::validate() const {
  if (conversations < 1) throw std::invalid_argument("synth: need at least 1 conversation");
  if (min_len < 1 || max_len < min_len) throw std::invalid_argument("synth: bad length range");
  if (classes < 2) throw std::invalid_argument("synth: need at least 2 classes");
  if (speakers < 1) throw std::invalid_argument("synth: need at least 1 speaker");
  for (int m = 0; m < kNumModalities; ++m) {
    if (dims[size_t(m)] < classes)
      throw std::invalid_argument("synth: modality dim must be >= classes");
    if (informativeness[size_t(m)] < 0.f || informativeness[size_t(m)] > 1.f)
      throw std::invalid_argument("synth: informativeness must be in [0,1]");
  }
  if (cross_modal_only < 0.f || cross_modal_only > 1.f)
    throw std::invalid_argument("synth: cross_modal_only must be in [0,1]");
  if (label_inertia < 0.f || label_inertia >= 1.f)
    throw std::invalid_argument("synth: label_inertia must be in [0,1)");
  if (noise_scale < 0.f) throw std::invalid_argument("synth: noise_scale must be >= 0");
  if (signal_scale <= 0.f || share_noise < 0.f)
    throw std::invalid_argument("synth: bad signal constants");
}

// Each utterance carries a class code in a C-dimensional latent space that a
// fixed random map embeds into every modality. In cross-modal mode the code
// is split into three shares that sum to the code but are individually
// dominated by share noise, so no single modality suffices while the sum of
// the modality latents stays linearly decodable.
Dataset generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed, 0x5d0);
  Dataset ds;
  ds.num_speakers = cfg.speakers;
  ds.modality_dims = cfg.dims;
  for (int c = 0; c < cfg.classes; ++c) ds.class_names.push_back("class_" + std::to_string(c));

  const int C = cfg.classes;
  // fixed embedding maps M_m: R^C -> R^{d_m}
  std::array<std::vector<float>, kNumModalities> maps;
  for (int m = 0; m < kNumModalities; ++m) {
    maps[size_t(m)].resize(size_t(cfg.dims[size_t(m)]) * size_t(C));
    const float s = 1.0f / std::sqrt(float(C));
    for (auto& v : maps[size_t(m)]) v = s * rng.normal();
  }

  for (int ci = 0; ci < cfg.conversations; ++ci) {
    Conversation conv;
    conv.id = "synth_" + std::to_string(ci);
    conv.has_labels = true;
    const int64_t n =
        cfg.min_len + int64_t(rng.below(uint64_t(cfg.max_len - cfg.min_len + 1)));
    std::vector<float> code(size_t(C), 0.f);
    std::array<std::vector<float>, kNumModalities> share;
    for (auto& s : share) s.resize(size_t(C));
    int prev_label = -1;
    for (int64_t i = 0; i < n; ++i) {
      conv.speakers.push_back(int(rng.below(uint64_t(cfg.speakers))));
      int y;
      if (prev_label >= 0 && rng.uniformf() < cfg.label_inertia) {
        y = prev_label;
        rng.next_u64();  // keep the draw count label-independent
      } else {
        y = int(rng.below(uint64_t(C)));
      }
      prev_label = y;
      conv.labels.push_back(y);
      for (int c = 0; c < C; ++c) code[size_t(c)] = (c == y) ? cfg.signal_scale : 0.f;

      const bool cross = rng.uniformf() < cfg.cross_modal_only;
      if (cross) {
        // two modalities draw independent share noise, the third balances it
        // so the shares sum to the code; the balancing role rotates randomly
        // to keep the per-modality marginals identical
        const int bal = int(rng.below(kNumModalities));
        const int m1 = (bal + 1) % kNumModalities, m2 = (bal + 2) % kNumModalities;
        for (int c = 0; c < C; ++c) {
          const float d_1 = cfg.share_noise * rng.normal();
          const float d_2 = cfg.share_noise * rng.normal();
          share[size_t(m1)][size_t(c)] = code[size_t(c)] / 3.f + d_1;
          share[size_t(m2)][size_t(c)] = code[size_t(c)] / 3.f + d_2;
          share[size_t(bal)][size_t(c)] = code[size_t(c)] / 3.f - d_1 - d_2;
        }
      } else {
        for (int m = 0; m < kNumModalities; ++m)
          for (int c = 0; c < C; ++c)
            share[size_t(m)][size_t(c)] = cfg.informativeness[size_t(m)] * code[size_t(c)];
      }

      for (int m = 0; m < kNumModalities; ++m) {
        const int dm = cfg.dims[size_t(m)];
        const auto& M = maps[size_t(m)];
        for (int j = 0; j < dm; ++j) {
          double acc = 0.0;
          for (int c = 0; c < C; ++c)
            acc += double(M[size_t(j * C + c)]) * double(share[size_t(m)][size_t(c)]);
          const float noise = cfg.noise_scale > 0.f ? cfg.noise_scale * rng.normal() : 0.f;
          conv.feats[size_t(m)].push_back(float(acc) + noise);
        }
      }
    }
    ds.convs.push_back(std::move(conv));
  }
  return ds;
}

std::vector<Dataset> split_dataset(const Dataset& ds, const std::vector<double>& fractions) {
  if (fractions.empty()) throw std::invalid_argument("split_dataset: no fractions");
  double sum = 0;
  for (double f : fractions) {
    if (f <= 0) throw std::invalid_argument("split_dataset: fractions must be positive");
    sum += f;
  }
  if (sum > 1.0 + 1e-9) throw std::invalid_argument("split_dataset: fractions exceed 1");

  std::vector<Dataset> parts(fractions.size());
  for (auto& p : parts) {
    p.class_names = ds.class_names;
    p.modality_dims = ds.modality_dims;
    p.num_speakers = ds.num_speakers;
  }
  const size_t n = ds.convs.size();
  size_t start = 0;
  for (size_t k = 0; k < fractions.size(); ++k) {
    size_t end = k + 1 == fractions.size()
                     ? n
                     : std::min(n, start + size_t(std::llround(fractions[k] * double(n))));
    if (end <= start) throw std::invalid_argument("split_dataset: empty split part");
    for (size_t i = start; i < end; ++i) parts[k].convs.push_back(ds.convs[i]);
    start = end;
  }
  return parts;
}

std::vector<Batch> make_batches(const Dataset& ds, int batch_size, bool shuffle, uint64_t seed) {
  if (ds.convs.empty()) throw std::invalid_argument("make_batches: empty dataset");
  if (batch_size < 1) throw std::invalid_argument("make_batches: batch_size must be >= 1");

  std::vector<int> order(ds.convs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);
  if (shuffle) {
    Rng rng(seed, 0xba7c);
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[size_t(rng.below(uint64_t(i)))]);
  }

  const int C = ds.num_classes();
  std::vector<Batch> batches;
  for (size_t start = 0; start < order.size(); start += size_t(batch_size)) {
    Batch b;
    const size_t end = std::min(start + size_t(batch_size), order.size());
    for (size_t i = start; i < end; ++i) b.conv_index.push_back(order[i]);
    b.n_max = 0;
    for (int ci : b.conv_index) b.n_max = std::max(b.n_max, ds.convs[size_t(ci)].length());

    const int64_t bsz = b.size();
    for (int m = 0; m < kNumModalities; ++m)
      b.feats[size_t(m)].assign(size_t(bsz * b.n_max * ds.modality_dims[size_t(m)]), 0.f);
    b.speakers.assign(size_t(bsz * b.n_max), 0);
    b.labels.assign(size_t(bsz * b.n_max), C);  // ignore-label sentinel
    b.mask.assign(size_t(bsz * b.n_max), 0);

    for (int64_t bi = 0; bi < bsz; ++bi) {
      const Conversation& conv = ds.convs[size_t(b.conv_index[size_t(bi)])];
      const int64_t n = conv.length();
      for (int64_t i = 0; i < n; ++i) {
        b.mask[size_t(bi * b.n_max + i)] = 1;
        b.speakers[size_t(bi * b.n_max + i)] = conv.speakers[size_t(i)];
        if (conv.has_labels) b.labels[size_t(bi * b.n_max + i)] = conv.labels[size_t(i)];
      }
      for (int m = 0; m < kNumModalities; ++m) {
        const int dm = ds.modality_dims[size_t(m)];
        for (int64_t i = 0; i < n; ++i)
          std::copy_n(conv.feats[size_t(m)].begin() + i * dm, dm,
                      b.feats[size_t(m)].begin() + (bi * b.n_max + i) * dm);
      }
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace mer
