#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "capstext/config.hpp"
#include "capstext/errors.hpp"

using namespace capstext;

namespace {

struct Row {
  const char* name;
  std::size_t b;
  double l2;
  std::size_t fn, fs;
  double lr;
  std::size_t a, m, n;
};

const Row kTable[] = {
    {"20news", 40, 0.001, 256, 5, 0.001, 6, 10, 16},
    {"reuters10", 40, 0.001, 256, 3, 0.0001, 6, 10, 16},
    {"mr2004", 50, 0.001, 256, 3, 0.001, 6, 16, 16},
    {"mr2005", 50, 0.02, 256, 1, 0.0001, 16, 16, 24},
    {"trec", 50, 0.0085, 256, 5, 0.001, 16, 32, 16},
    {"mpqa", 40, 0.01, 256, 1, 0.00008, 16, 8, 16},
    {"imdb", 50, 0.01, 256, 6, 0.001, 6, 8, 16},
};

}  // namespace

TEST(Presets, PublishedHyperparameters) {
  ASSERT_EQ(presets().size(), std::size(kTable));
  for (const Row& r : kTable) {
    const ModelConfig c = preset_config(r.name);
    EXPECT_EQ(c.preset, r.name);
    EXPECT_EQ(c.train.batch_size, r.b) << r.name;
    EXPECT_EQ(c.train.l2_gate, r.l2) << r.name;
    EXPECT_EQ(c.train.l2_other, 0.01) << r.name;
    EXPECT_EQ(c.filters, r.fn) << r.name;
    EXPECT_EQ(c.filter_size, r.fs) << r.name;
    EXPECT_EQ(c.train.lr, r.lr) << r.name;
    EXPECT_EQ(c.capsules, r.a) << r.name;
    EXPECT_EQ(c.capsule_dim, r.m) << r.name;
    EXPECT_EQ(c.class_capsule_dim, r.n) << r.name;
    EXPECT_EQ(c.embed_dim, 300u);
    EXPECT_EQ(c.train.dropout, 0.5);
    EXPECT_EQ(c.train.lr_decay, 0.99);
  }
}

TEST(Presets, CorpusStatistics) {
  for (const Preset& p : presets()) EXPECT_EQ(p.config.num_classes, p.stats.classes) << p.name;
  const Preset* trec = nullptr;
  for (const Preset& p : presets())
    if (p.name == "trec") trec = &p;
  ASSERT_NE(trec, nullptr);
  EXPECT_EQ(trec->stats.classes, 6u);
  EXPECT_EQ(trec->stats.vocab, 8689u);
  EXPECT_THROW(preset_config("nope"), ConfigError);
}

TEST(Config, DefaultsAndDerivedShapes) {
  ModelConfig c;
  EXPECT_EQ(c.route_iters, 3u);
  EXPECT_EQ(c.init_std, 0.1);
  EXPECT_EQ(c.recon_scale, 0.03);
  c.max_len = 10;
  c.filter_size = 3;
  EXPECT_EQ(feature_rows(c), 8u);
  c.frontend = Frontend::kMultiFilterMaxpool;
  EXPECT_EQ(min_document_length(c), 6u);
  EXPECT_EQ(feature_rows(c), 3u);
  EXPECT_EQ(feature_channels(c), 300u);
  c.max_len = 5;
  EXPECT_THROW(feature_rows(c), ConfigError);
}

TEST(Config, ParseAppliesPresetFirst) {
  const ModelConfig c = parse_config("lr = 0.5\n# comment\npreset = trec\nrouting = dynamic # x\n");
  EXPECT_EQ(c.preset, "trec");
  EXPECT_EQ(c.train.lr, 0.5);
  EXPECT_EQ(c.routing, Routing::kDynamic);
  EXPECT_EQ(c.capsules, 16u);
}

TEST(Config, TextRoundTrip) {
  ModelConfig c = preset_config("mpqa");
  c.vocab_size = 123;
  c.max_len = 17;
  c.multi_filter_sizes = {2, 7};
  c.decoder = true;
  c.train.seed = 99;
  c.recon_scale = 0.1 + 0.2;
  ModelConfig back = parse_config(to_text(c));
  back.preset = c.preset;
  EXPECT_EQ(to_text(back), to_text(c));
  EXPECT_EQ(back.recon_scale, c.recon_scale);
}

TEST(Config, Errors) {
  ModelConfig c;
  EXPECT_THROW(apply_setting(c, "bogus", "1"), ConfigError);
  EXPECT_THROW(apply_setting(c, "filters", "-3"), ConfigError);
  EXPECT_THROW(apply_setting(c, "lr", "fast"), ConfigError);
  EXPECT_THROW(apply_setting(c, "decoder", "maybe"), ConfigError);
  EXPECT_THROW(apply_setting(c, "routing", "greedy"), ConfigError);
  EXPECT_THROW(apply_setting(c, "frontend", "lstm"), ConfigError);
  EXPECT_THROW(parse_config("just words\n"), ConfigError);
  EXPECT_THROW(load_config_file("/nonexistent/file.cfg"), ConfigError);
  for (auto [k, v] : {std::pair{"dropout", "1"}, {"route_iters", "0"}, {"lr", "0"},
                      {"filters", "0"}, {"l2_gate", "-1"}, {"init_std", "0"}}) {
    ModelConfig bad;
    apply_setting(bad, k, v);
    EXPECT_THROW(validate(bad), ConfigError) << k;
  }
}

TEST(Config, SettingPresetKeepsSeed) {
  ModelConfig c;
  apply_setting(c, "seed", "42");
  apply_setting(c, "preset", "imdb");
  EXPECT_EQ(c.train.seed, 42u);
  EXPECT_EQ(c.filter_size, 6u);
}

TEST(Config, LoadFromFile) {
  const auto path = std::filesystem::temp_directory_path() / "capstext_cfg_test.cfg";
  {
    std::ofstream out(path);
    out << "preset = 20news\nepochs = 3\n";
  }
  const ModelConfig c = load_config_file(path.string());
  EXPECT_EQ(c.train.epochs, 3u);
  EXPECT_EQ(c.num_classes, 20u);
  std::filesystem::remove(path);
}
