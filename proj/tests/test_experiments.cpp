#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "capstext/errors.hpp"
#include "capstext/experiments.hpp"
#include "capstext/optim.hpp"

using namespace capstext;

namespace {

const std::string kRoot = CAPSTEXT_SOURCE_DIR;

const std::vector<LabeledText> kToyRows = {
    {0, "the movie was good and fun today"},  {0, "a good film with a fun cast"},
    {0, "really good acting and fun story"},  {0, "good good fun all the way"},
    {1, "the movie was bad and dull today"},  {1, "a bad film with a dull cast"},
    {1, "really bad acting and dull story"},  {1, "bad bad dull all the way"},
};

Corpus toy_corpus() {
  Corpus c;
  std::vector<std::vector<std::string>> toks;
  for (const auto& r : kToyRows) toks.push_back(tokenize(r.text));
  c.vocab = build_vocab(toks);
  c.train = encode_dataset(kToyRows, c.vocab, "train");
  c.val = encode_dataset(kToyRows, c.vocab, "val");
  c.test = encode_dataset(kToyRows, c.vocab, "test");
  c.num_classes = 2;
  return c;
}

ModelConfig toy_config(Routing routing, Frontend frontend = Frontend::kEluGate) {
  ModelConfig c;
  c.embed_dim = 8;
  c.frontend = frontend;
  c.filters = 8;
  c.filter_size = 2;
  c.multi_filter_sizes = {2, 3};
  c.multi_filter_count = 4;
  c.capsules = 4;
  c.capsule_dim = 4;
  c.class_capsule_dim = 4;
  c.routing = routing;
  c.train.batch_size = 4;
  c.train.lr = 0.01;
  c.train.epochs = 50;
  c.train.seed = 3;
  c.init_std = 0.5;
  return c;
}

double max_val(const RunRecord& r) {
  double m = 0;
  for (const auto& e : r.epochs) m = std::max(m, e.val_acc);
  return m;
}

}  // namespace

TEST(Training, SeparableToyReachesFullTrainAccuracy) {
  const Corpus corpus = toy_corpus();
  for (Routing routing : {Routing::kStatic, Routing::kDynamic}) {
    auto res = run_training<float>(toy_config(routing), corpus);
    EXPECT_EQ(res.record.epochs.size(), 50u);
    EXPECT_EQ(max_val(res.record), 1.0) << to_string(routing);
    EXPECT_EQ(evaluate_accuracy(res.model, corpus.train), 1.0) << to_string(routing);
  }
}

TEST(Training, FixedSeedGivesIdenticalRecord) {
  const Corpus corpus = toy_corpus();
  ModelConfig cfg = toy_config(Routing::kDynamic);
  cfg.train.epochs = 6;
  const auto a = run_training<float>(cfg, corpus);
  const auto b = run_training<float>(cfg, corpus);
  EXPECT_EQ(a.record.to_csv(), b.record.to_csv());
  for (std::size_t i = 0; i < a.model.parameters().size(); ++i)
    EXPECT_EQ(a.model.parameters()[i].value, b.model.parameters()[i].value);
  cfg.train.seed = 4;
  EXPECT_NE(run_training<float>(cfg, corpus).record.to_csv(), a.record.to_csv());
}

TEST(Training, RecordShape) {
  const Corpus corpus = toy_corpus();
  ModelConfig cfg = toy_config(Routing::kStatic);
  cfg.train.epochs = 5;
  std::size_t calls = 0;
  TrainOptions opts;
  opts.on_epoch = [&](const EpochRecord&) { ++calls; };
  const auto res = run_training<double>(cfg, corpus, nullptr, opts);
  const RunRecord& r = res.record;
  EXPECT_EQ(calls, 5u);
  for (std::size_t i = 0; i < r.epochs.size(); ++i) {
    EXPECT_EQ(r.epochs[i].epoch, i);
    EXPECT_NEAR(r.epochs[i].lr, lr_schedule(0.01, i), 1e-15);
    EXPECT_GE(r.epochs[i].val_acc, 0.0);
    EXPECT_LE(r.epochs[i].val_acc, 1.0);
    EXPECT_FALSE(r.epochs[i].recon_mse.has_value());
  }
  EXPECT_EQ(r.best_val_acc, max_val(r));
  EXPECT_EQ(r.epochs[r.best_epoch].val_acc, r.best_val_acc);
  for (std::size_t i = 0; i < r.best_epoch; ++i) EXPECT_LT(r.epochs[i].val_acc, r.best_val_acc);
  EXPECT_EQ(evaluate_accuracy(res.model, corpus.val), r.best_val_acc);
  const std::string csv = r.to_csv();
  EXPECT_EQ(csv.rfind("epoch,train_loss,val_acc,lr\n", 0), 0u);
  EXPECT_NE(csv.find("# best_epoch="), std::string::npos);
}

TEST(Training, ConfigFitting) {
  const Corpus corpus = toy_corpus();
  const ModelConfig c = fit_config(toy_config(Routing::kStatic), corpus);
  EXPECT_EQ(c.vocab_size, corpus.vocab.size());
  EXPECT_EQ(c.num_classes, 2u);
  EXPECT_EQ(c.max_len, 7u);
  ModelConfig wide = toy_config(Routing::kStatic, Frontend::kMultiFilterMaxpool);
  wide.multi_filter_sizes = {9};
  EXPECT_EQ(fit_config(wide, corpus).max_len, 10u);
}

TEST(Training, NonFiniteEmbeddingsAbort) {
  const Corpus corpus = toy_corpus();
  std::mt19937_64 rng(1);
  EmbeddingMatrix emb = random_embeddings(corpus.vocab, 8, rng);
  emb.table(3, 0) = std::nanf("");
  try {
    run_training<float>(toy_config(Routing::kStatic), corpus, &emb);
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 0"), std::string::npos) << e.what();
  }
  EmbeddingMatrix narrow = random_embeddings(corpus.vocab, 5, rng);
  EXPECT_THROW(run_training<float>(toy_config(Routing::kStatic), corpus, &narrow), ShapeError);
}

TEST(Evaluation, OrderInvariantAndErrors) {
  const Corpus corpus = load_corpus(kRoot + "/data/questions/manifest.txt");
  ModelConfig cfg = fit_config(toy_config(Routing::kStatic), corpus);
  CapsNet<float> net(cfg, 11);
  const double acc = evaluate_accuracy(net, corpus.test, 64);
  Dataset rev = corpus.test;
  std::reverse(rev.examples.begin(), rev.examples.end());
  EXPECT_EQ(evaluate_accuracy(net, rev, 37), acc);
  Dataset empty{"empty", {}};
  EXPECT_THROW(evaluate_accuracy(net, empty), ContractError);
  Dataset bad = corpus.test;
  bad.examples[0].label = 6;
  EXPECT_THROW(evaluate_accuracy(net, bad), ShapeError);
}

TEST(Evaluation, UntrainedModelNearChance) {
  // Untrained predictions do not depend on the label; on near-balanced
  // 6-class data accuracy stays within 4 standard deviations of 1/6.
  const Corpus corpus = load_corpus(kRoot + "/data/questions/manifest.txt");
  ModelConfig cfg = fit_config(toy_config(Routing::kDynamic), corpus);
  const double n = static_cast<double>(corpus.test.examples.size());
  const double sigma = std::sqrt((1.0 / 6) * (5.0 / 6) / n);
  double max_share = 0;
  std::vector<int> counts(6, 0);
  for (const auto& e : corpus.test.examples) ++counts[e.label];
  for (int c : counts) max_share = std::max(max_share, c / n);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    CapsNet<float> net(cfg, seed);
    const double acc = evaluate_accuracy(net, corpus.test);
    EXPECT_LE(acc, std::max(1.0 / 6 + 4 * sigma, max_share)) << seed;
  }
}

TEST(Ablation, EveryVariantLearnsToyAndMeansAreExact) {
  const Corpus corpus = toy_corpus();
  const Frontend fes[] = {Frontend::kEluGate, Frontend::kConvPlain, Frontend::kMultiFilter,
                          Frontend::kMultiFilterMaxpool};
  const Routing rs[] = {Routing::kStatic, Routing::kDynamic};
  const std::uint64_t seeds[] = {0, 1};
  const auto table = run_ablation<float>(toy_config(Routing::kStatic), corpus, fes, rs, seeds);
  ASSERT_EQ(table.cells.size(), 8u);
  for (const auto& cell : table.cells) {
    ASSERT_EQ(cell.test_accs.size(), 2u);
    EXPECT_EQ(cell.mean_test_acc, (cell.test_accs[0] + cell.test_accs[1]) / 2.0);
    for (double a : cell.train_accs) EXPECT_EQ(a, 1.0) << to_string(cell.frontend);
  }
  EXPECT_NE(table.to_tsv().find("multi_filter_maxpool"), std::string::npos);
  EXPECT_FALSE(table.to_text().empty());
  EXPECT_THROW(run_ablation<float>(toy_config(Routing::kStatic), corpus, fes, rs, {}), ConfigError);
}

TEST(Perturbation, IdentityEqualsEvaluationAndAggregatesRecompute) {
  const Corpus corpus = toy_corpus();
  ModelConfig cfg = toy_config(Routing::kStatic);
  cfg.train.epochs = 8;
  const auto st = run_training<float>(cfg, corpus).model;
  cfg.routing = Routing::kDynamic;
  const auto dy = run_training<float>(cfg, corpus).model;

  std::vector<PerturbationItem> identity;
  for (const auto& r : kToyRows) identity.push_back({r.label, tokenize(r.text), tokenize(r.text)});
  const auto rep = run_order_perturbation<float>(st, dy, corpus.vocab, identity);
  EXPECT_EQ(rep.static_original_acc, evaluate_accuracy(st, corpus.test));
  EXPECT_EQ(rep.static_perturbed_acc, rep.static_original_acc);
  EXPECT_EQ(rep.dynamic_original_acc, evaluate_accuracy(dy, corpus.test));
  const auto preds = predict_dataset(st, corpus.test);
  for (std::size_t i = 0; i < rep.rows.size(); ++i) EXPECT_EQ(rep.rows[i].static_original, preds[i]);

  const auto shuffled = build_perturbation_set(kToyRows, ShuffleMode::kFull, 5);
  const auto rep2 = run_order_perturbation<float>(st, dy, corpus.vocab, shuffled);
  double s = 0, d = 0;
  std::size_t disagree = 0;
  for (const auto& r : rep2.rows) {
    s += r.static_perturbed == r.label;
    d += r.dynamic_perturbed == r.label;
    disagree += r.static_perturbed != r.dynamic_perturbed;
  }
  EXPECT_EQ(rep2.static_perturbed_acc, s / rep2.rows.size());
  EXPECT_EQ(rep2.dynamic_perturbed_acc, d / rep2.rows.size());
  EXPECT_EQ(rep2.disagreements().size(), disagree);
  const std::string tsv = rep2.to_tsv();
  EXPECT_EQ(std::count(tsv.begin(), tsv.end(), '\n'), 9);
  EXPECT_EQ(shuffled, build_perturbation_set(kToyRows, ShuffleMode::kFull, 5));

  EXPECT_THROW(run_order_perturbation<float>(st, dy, corpus.vocab, {}), ContractError);
  std::vector<PerturbationItem> bad{{2, {"good"}, {"good"}}};
  EXPECT_THROW(run_order_perturbation<float>(st, dy, corpus.vocab, bad), ShapeError);
}

TEST(Reconstruction, NoiseZeroAndZeroDecoder) {
  const Corpus corpus = toy_corpus();
  ModelConfig cfg = toy_config(Routing::kStatic);
  cfg.decoder = true;
  cfg.decoder_hidden1 = 16;
  cfg.decoder_hidden2 = 16;
  cfg.train.epochs = 5;
  auto res = run_training<float>(cfg, corpus);
  ASSERT_TRUE(res.record.epochs[0].recon_mse.has_value());
  const std::size_t dims[] = {1, 4};
  const double noises[] = {0.0, 0.3};
  const auto rep = run_reconstruction_noise<float>(res.model, corpus.vocab, "a good film", dims, noises);
  ASSERT_EQ(rep.lines.size(), 4u);
  for (const auto& line : rep.lines) {
    EXPECT_EQ(line.tokens.size(), res.model.config().max_len);
    if (line.noise == 0.0) EXPECT_EQ(line.tokens, rep.unperturbed);
  }

  CapsNet<float> zeroed = res.model;
  for (auto& p : zeroed.parameters())
    if (p.name.rfind("decoder.", 0) == 0 && p.name != "decoder.fc3.b") p.value.fill(0.0f);
  const auto zrep = run_reconstruction_noise<float>(zeroed, corpus.vocab, "bad dull film", dims, noises);
  for (const auto& line : zrep.lines) EXPECT_EQ(line.tokens, zrep.unperturbed);

  const std::size_t bad_dim[] = {5};
  EXPECT_THROW(run_reconstruction_noise<float>(res.model, corpus.vocab, "good", bad_dim, noises),
               LookupError);
  const std::size_t zero_dim[] = {0};
  EXPECT_THROW(run_reconstruction_noise<float>(res.model, corpus.vocab, "good", zero_dim, noises),
               LookupError);
  CapsNet<float> plain(fit_config(toy_config(Routing::kStatic), corpus), 1);
  EXPECT_THROW(run_reconstruction_noise<float>(plain, corpus.vocab, "good", dims, noises), ConfigError);
}

TEST(Reconstruction, DecodeRowsPicksCosineNeighbour) {
  const Vocabulary v = Vocabulary::from_tokens({"<pad>", "<unk>", "x", "y"});
  Tensor<double> emb({4, 2});
  emb(1, 0) = 1, emb(1, 1) = 1;
  emb(2, 0) = 1;
  emb(3, 1) = 1;
  const auto rows = Tensor<double>::from_rows({{0.9, 0.1}, {0.0, 2.0}, {0.01, 0.0}});
  EXPECT_EQ(decode_rows(rows, emb, v), (std::vector<std::string>{"x", "y", "<pad>"}));
}
