// Feature-file round trips, loader validation, batching, and the synthetic
// generator's recoverability contracts (checked with the least-squares
// linear-probe oracle).

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "mer/data.hpp"
#include "testutil.hpp"

using namespace mer;

namespace {

Dataset tiny_dataset() {
  Dataset ds;
  ds.class_names = {"neg", "pos"};
  ds.modality_dims = {4, 3, 2};
  ds.num_speakers = 2;
  Conversation c;
  c.id = "c0";
  c.speakers = {0, 1};
  c.labels = {0, 1};
  c.has_labels = true;
  c.feats[0] = {0.25f, -1.5f, 3.0f, 0.125f, 1.0f, 2.0f, -0.75f, 0.0f};
  c.feats[1] = {1.f, 2.f, 3.f, 4.f, 5.f, 6.f};
  c.feats[2] = {0.1f, -0.2f, 0.3f, -0.4f};
  ds.convs.push_back(c);
  return ds;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempFile {
  std::string path;
  explicit TempFile(std::string p) : path(std::move(p)) {}
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("minimal valid file loads with C inferred from the header") {
  TempFile f("data_minimal.jsonl");
  write_dataset(tiny_dataset(), f.path);
  auto ds = load_dataset(f.path);
  CHECK(ds.convs.size() == 1);
  CHECK(ds.num_classes() == 2);
  CHECK(ds.modality_dims == std::array<int, 3>{4, 3, 2});
  CHECK(ds.convs[0].length() == 2);
  CHECK(ds.convs[0].labels == std::vector<int>{0, 1});
}

TEST_CASE("round trip: write(load(p)) is bit-identical") {
  TempFile f1("data_rt1.jsonl");
  TempFile f2("data_rt2.jsonl");
  // values with awkward float representations
  auto ds = tiny_dataset();
  ds.convs[0].feats[0][0] = 0.1f;
  ds.convs[0].feats[0][1] = 1.0f / 3.0f;
  ds.convs[0].feats[0][2] = -2.71828182f;
  write_dataset(ds, f1.path);
  auto loaded = load_dataset(f1.path);
  write_dataset(loaded, f2.path);
  CHECK(slurp(f1.path) == slurp(f2.path));
  for (int m = 0; m < 3; ++m)
    CHECK(loaded.convs[0].feats[size_t(m)] == ds.convs[0].feats[size_t(m)]);
}

TEST_CASE("iemocap-shaped header is accepted") {
  Dataset ds;
  ds.class_names = {"hap", "sad", "neu", "ang", "exc", "fru"};
  ds.modality_dims = {1024, 1582, 342};
  ds.num_speakers = 10;
  Conversation c;
  c.id = "big";
  c.speakers = {0};
  c.labels = {5};
  c.has_labels = true;
  c.feats[0].assign(1024, 0.f);
  c.feats[1].assign(1582, 0.f);
  c.feats[2].assign(342, 0.f);
  ds.convs.push_back(c);
  TempFile f("data_iemocap_shape.jsonl");
  write_dataset(ds, f.path);
  auto loaded = load_dataset(f.path);
  CHECK(loaded.num_classes() == 6);
  CHECK(loaded.modality_dims == std::array<int, 3>{1024, 1582, 342});
}

TEST_CASE("loader rejects malformed records") {
  auto ds = tiny_dataset();
  TempFile f("data_bad.jsonl");

  SUBCASE("missing modality block") {
    write_dataset(ds, f.path);
    // strip feat_a from the conversation line
    auto text = slurp(f.path);
    auto pos = text.find("\"feat_a\"");
    auto end = text.find("\"feat_t\"", pos);
    text.erase(pos, end - pos);
    std::ofstream(f.path) << text;
    CHECK_THROWS_WITH_AS(load_dataset(f.path), doctest::Contains("modality missing"),
                         std::invalid_argument);
  }
  SUBCASE("ragged conversation") {
    ds.convs[0].feats[1].resize(3);  // audio has 1 row instead of 2
    std::ofstream out(f.path);
    out << R"({"format_version":1,"class_names":["a","b"],"modality_dims":[4,3,2],"num_speakers":2})"
        << "\n";
    out << R"({"id":"c0","speakers":[0,1],"labels":[0,1],"feat_t":[[0,0,0,0],[0,0,0,0]],"feat_a":[[0,0,0]],"feat_v":[[0,0],[0,0]]})"
        << "\n";
    out.close();
    CHECK_THROWS_WITH_AS(load_dataset(f.path), doctest::Contains("ragged conversation"),
                         std::invalid_argument);
  }
  SUBCASE("label out of range") {
    ds.convs[0].labels[1] = 7;
    write_dataset(ds, f.path);
    CHECK_THROWS_WITH_AS(load_dataset(f.path), doctest::Contains("bad label"),
                         std::invalid_argument);
  }
  SUBCASE("non-finite feature") {
    std::ofstream out(f.path);
    out << R"({"format_version":1,"class_names":["a","b"],"modality_dims":[1,1,1],"num_speakers":1})"
        << "\n";
    out << R"({"id":"c0","speakers":[0],"labels":[0],"feat_t":[[1e999]],"feat_a":[[0]],"feat_v":[[0]]})"
        << "\n";
    out.close();
    CHECK_THROWS_AS(load_dataset(f.path), std::exception);
  }
}

TEST_CASE("unlabeled conversations survive the round trip") {
  auto ds = tiny_dataset();
  ds.convs[0].has_labels = false;
  ds.convs[0].labels.clear();
  TempFile f("data_nolabel.jsonl");
  write_dataset(ds, f.path);
  auto loaded = load_dataset(f.path);
  CHECK_FALSE(loaded.convs[0].has_labels);
}

TEST_CASE("make_batches: sizes, padding, mask") {
  SynthConfig cfg;
  cfg.conversations = 5;
  cfg.min_len = 3;
  cfg.max_len = 5;
  cfg.classes = 2;
  cfg.dims = {2, 2, 2};
  cfg.seed = 4;
  auto ds = generate_synthetic(cfg);
  auto batches = make_batches(ds, 2, false, 0);
  REQUIRE(batches.size() == 3);
  CHECK(batches[0].size() == 2);
  CHECK(batches[1].size() == 2);
  CHECK(batches[2].size() == 1);

  // file order when shuffle is off
  CHECK(batches[0].conv_index == std::vector<int>{0, 1});
  CHECK(batches[2].conv_index == std::vector<int>{4});

  int64_t total_mask = 0;
  for (const auto& b : batches) {
    int64_t longest = 0;
    for (int ci : b.conv_index) longest = std::max(longest, ds.convs[size_t(ci)].length());
    CHECK(b.n_max == longest);
    for (int64_t bi = 0; bi < b.size(); ++bi) {
      const auto& conv = ds.convs[size_t(b.conv_index[size_t(bi)])];
      for (int64_t i = 0; i < b.n_max; ++i) {
        const bool valid = i < conv.length();
        CHECK(bool(b.mask[size_t(bi * b.n_max + i)]) == valid);
        if (!valid) {
          CHECK(b.labels[size_t(bi * b.n_max + i)] == ds.num_classes());  // ignore sentinel
          for (int m = 0; m < 3; ++m) {
            const int dm = ds.modality_dims[size_t(m)];
            for (int j = 0; j < dm; ++j)
              CHECK(b.feats[size_t(m)][size_t((bi * b.n_max + i) * dm + j)] == 0.f);
          }
        }
        total_mask += b.mask[size_t(bi * b.n_max + i)];
      }
    }
  }
  CHECK(total_mask == ds.total_utterances());
}

TEST_CASE("make_batches: shuffle is deterministic in the seed, epoch covers all") {
  SynthConfig cfg;
  cfg.conversations = 9;
  cfg.classes = 2;
  cfg.dims = {2, 2, 2};
  cfg.seed = 8;
  auto ds = generate_synthetic(cfg);
  auto b1 = make_batches(ds, 4, true, 123);
  auto b2 = make_batches(ds, 4, true, 123);
  auto b3 = make_batches(ds, 4, true, 124);
  std::vector<int> order1, order2, order3;
  for (const auto& b : b1) order1.insert(order1.end(), b.conv_index.begin(), b.conv_index.end());
  for (const auto& b : b2) order2.insert(order2.end(), b.conv_index.begin(), b.conv_index.end());
  for (const auto& b : b3) order3.insert(order3.end(), b.conv_index.begin(), b.conv_index.end());
  CHECK(order1 == order2);
  CHECK(order1 != order3);
  auto sorted = order1;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 9; ++i) CHECK(sorted[size_t(i)] == i);  // every conversation once
}

TEST_CASE("make_batches: empty dataset errors") {
  Dataset ds;
  ds.class_names = {"a", "b"};
  CHECK_THROWS_AS(make_batches(ds, 2, false, 0), std::invalid_argument);
}

TEST_CASE("synthetic generation is byte-identical for a fixed seed") {
  SynthConfig cfg;
  cfg.conversations = 4;
  cfg.noise_scale = 0.3f;
  cfg.cross_modal_only = 0.5f;
  cfg.seed = 42;
  auto a = generate_synthetic(cfg);
  auto b = generate_synthetic(cfg);
  REQUIRE(a.convs.size() == b.convs.size());
  for (size_t i = 0; i < a.convs.size(); ++i) {
    CHECK(a.convs[i].labels == b.convs[i].labels);
    for (int m = 0; m < 3; ++m) CHECK(a.convs[i].feats[size_t(m)] == b.convs[i].feats[size_t(m)]);
  }
}

TEST_CASE("synthetic shape mirrors the configured length range") {
  SynthConfig cfg;
  cfg.conversations = 20;
  cfg.min_len = 40;
  cfg.max_len = 60;
  cfg.classes = 6;
  cfg.speakers = 2;
  cfg.dims = {8, 8, 8};
  cfg.seed = 7;
  auto ds = generate_synthetic(cfg);
  CHECK(ds.convs.size() == 20);
  double mean_len = 0;
  for (const auto& c : ds.convs) {
    CHECK(c.length() >= 40);
    CHECK(c.length() <= 60);
    mean_len += double(c.length()) / 20.0;
  }
  CHECK(mean_len > 44.0);
  CHECK(mean_len < 56.0);

  // approximate class balance
  std::vector<int64_t> counts(6, 0);
  int64_t total = 0;
  for (const auto& c : ds.convs)
    for (int y : c.labels) {
      ++counts[size_t(y)];
      ++total;
    }
  for (int64_t cnt : counts) {
    CHECK(double(cnt) / double(total) > 0.5 / 6.0);
    CHECK(double(cnt) / double(total) < 2.0 / 6.0);
  }
}

TEST_CASE("full informativeness, zero noise: single-modality probe is perfect") {
  SynthConfig cfg;
  cfg.conversations = 30;
  cfg.min_len = 6;
  cfg.max_len = 12;
  cfg.classes = 4;
  cfg.dims = {8, 6, 5};
  cfg.informativeness = {1.f, 1.f, 1.f};
  cfg.cross_modal_only = 0.f;
  cfg.noise_scale = 0.f;
  cfg.seed = 5;
  auto ds = generate_synthetic(cfg);
  for (int m = 0; m < 3; ++m) {
    std::vector<std::vector<float>> x;
    std::vector<int> y;
    testutil::flatten_features(ds, {m}, x, y);
    CHECK(testutil::linear_probe_accuracy(x, y, x, y, 4) == doctest::Approx(1.0));
  }
}

TEST_CASE("cross-modal-only signal: single modality near chance, concat recovers") {
  SynthConfig cfg;
  cfg.conversations = 90;
  cfg.min_len = 10;
  cfg.max_len = 20;
  cfg.classes = 4;
  cfg.dims = {8, 6, 5};
  cfg.cross_modal_only = 1.f;
  cfg.noise_scale = 0.f;
  cfg.seed = 17;
  auto whole = generate_synthetic(cfg);
  auto parts = split_dataset(whole, {2.0 / 3.0, 1.0 / 3.0});
  const Dataset& fit = parts[0];
  const Dataset& held = parts[1];

  std::vector<std::vector<float>> x_fit, x_held;
  std::vector<int> y_fit, y_held;
  const double chance = 1.0 / 4.0;
  for (int m = 0; m < 3; ++m) {
    x_fit.clear(); y_fit.clear(); x_held.clear(); y_held.clear();
    testutil::flatten_features(fit, {m}, x_fit, y_fit);
    testutil::flatten_features(held, {m}, x_held, y_held);
    const double acc = testutil::linear_probe_accuracy(x_fit, y_fit, x_held, y_held, 4);
    CHECK(acc < chance + 0.10);
    CHECK(acc > chance - 0.10);
  }
  x_fit.clear(); y_fit.clear(); x_held.clear(); y_held.clear();
  testutil::flatten_features(fit, {0, 1, 2}, x_fit, y_fit);
  testutil::flatten_features(held, {0, 1, 2}, x_held, y_held);
  CHECK(testutil::linear_probe_accuracy(x_fit, y_fit, x_held, y_held, 4) > 0.9);
}

TEST_CASE("synth config validation") {
  SynthConfig cfg;
  cfg.min_len = 5;
  cfg.max_len = 4;
  CHECK_THROWS_AS(generate_synthetic(cfg), std::invalid_argument);
  cfg = SynthConfig{};
  cfg.informativeness[1] = 1.5f;
  CHECK_THROWS_AS(generate_synthetic(cfg), std::invalid_argument);
  cfg = SynthConfig{};
  cfg.dims = {4, 12, 12};  // below class count
  CHECK_THROWS_AS(generate_synthetic(cfg), std::invalid_argument);
}
