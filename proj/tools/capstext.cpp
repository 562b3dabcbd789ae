// capstext command-line driver.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <algorithm>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "capstext/checkpoint.hpp"
#include "capstext/config.hpp"
#include "capstext/data.hpp"
#include "capstext/errors.hpp"
#include "capstext/experiments.hpp"
#include "capstext/gradient_suite.hpp"

using namespace capstext;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

struct Common {
  std::string config_path;
  std::string preset;
  std::vector<std::string> settings;
  std::string dataset;
  std::string embeddings;
  bool pretrained = false;
  std::string routing;
  std::size_t route_iters = 0;
  long long seed = -1;
  long long epochs = -1;
  std::string out;
  std::string precision = "f32";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "key = value configuration file");
  cmd->add_option("--preset", c.preset, "named hyperparameter preset");
  cmd->add_option("--set", c.settings, "override a configuration key (key=value)");
  cmd->add_option("--dataset", c.dataset, "dataset manifest");
  cmd->add_option("--embeddings", c.embeddings, "word vector text file");
  cmd->add_flag("--pretrained", c.pretrained, "initialise embeddings from --embeddings");
  cmd->add_option("--routing", c.routing, "static or dynamic")
      ->check(CLI::IsMember({"static", "dynamic"}));
  cmd->add_option("--route-iters", c.route_iters, "dynamic routing iterations");
  cmd->add_option("--seed", c.seed, "random seed");
  cmd->add_option("--epochs", c.epochs, "training epochs");
  cmd->add_option("--out", c.out, "output path");
  cmd->add_option("--precision", c.precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
}

ModelConfig resolve_config(const Common& c) {
  ModelConfig cfg;
  if (!c.config_path.empty()) cfg = load_config_file(c.config_path);
  if (!c.preset.empty()) {
    const std::uint64_t seed = cfg.train.seed;
    cfg = preset_config(c.preset);
    cfg.train.seed = seed;
  }
  for (const auto& s : c.settings) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    apply_setting(cfg, s.substr(0, eq), s.substr(eq + 1));
  }
  if (!c.routing.empty()) cfg.routing = parse_routing(c.routing);
  if (c.route_iters) cfg.route_iters = c.route_iters;
  if (c.seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(c.seed);
  if (c.epochs >= 0) cfg.train.epochs = static_cast<std::size_t>(c.epochs);
  return cfg;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw FormatError("cannot write '" + path + "'");
  f << text;
}

std::string require(const std::string& value, const char* flag) {
  if (value.empty()) throw ConfigError(std::string(flag) + " is required");
  return value;
}

// ---------------------------------------------------------------------------

template <typename T>
int train(const Common& c, const std::string& csv_path) {
  ModelConfig cfg = resolve_config(c);
  const Corpus corpus = load_corpus(require(c.dataset, "--dataset"));
  std::optional<EmbeddingMatrix> emb;
  if (c.pretrained || !c.embeddings.empty()) {
    if (c.embeddings.empty()) throw ConfigError("--pretrained needs --embeddings PATH");
    if (!std::filesystem::exists(c.embeddings)) {
      throw ConfigError("embeddings file '" + c.embeddings + "' does not exist");
    }
    std::mt19937_64 rng(cfg.train.seed);
    emb = load_pretrained_vectors(c.embeddings, corpus.vocab, rng, cfg.embed_dim);
    std::cerr << "embeddings: " << emb->coverage << " of " << corpus.vocab.size()
              << " vocabulary rows from " << c.embeddings << "\n";
  }
  TrainOptions opts;
  opts.on_epoch = [](const EpochRecord& e) {
    std::fprintf(stderr, "epoch %3zu  loss %.5f  val_acc %.4f  lr %.6g%s\n", e.epoch, e.train_loss,
                 e.val_acc, e.lr,
                 e.recon_mse ? ("  recon_mse " + std::to_string(*e.recon_mse)).c_str() : "");
  };
  auto result = run_training<T>(cfg, corpus, emb ? &*emb : nullptr, opts);
  const std::string out = c.out.empty() ? "model.ckpt" : c.out;
  save_checkpoint(out, result.model, corpus.vocab);
  const std::string csv = csv_path.empty() ? out + ".csv" : csv_path;
  write_file(csv, result.record.to_csv());
  std::printf("best_epoch %zu  val_acc %.4f  test_acc %.4f\ncheckpoint %s\nrecord %s\n",
              result.record.best_epoch, result.record.best_val_acc, result.record.test_acc,
              out.c_str(), csv.c_str());
  return kExitOk;
}

Dataset split_with_vocab(const std::string& manifest, const std::string& split,
                         const Vocabulary& vocab) {
  const Manifest m = read_manifest(manifest);
  std::string path;
  if (split == "train") path = m.train;
  else if (split == "val") path = m.val;
  else if (split == "test") path = m.test;
  else throw ConfigError("unknown split '" + split + "'");
  return encode_dataset(read_labeled_tsv(path), vocab, split);
}

template <typename T>
int eval(const std::string& ckpt_path, const std::string& dataset, const std::string& split) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const CapsNet<T> model = model_from_checkpoint<T>(ckpt);
  const Dataset data = split_with_vocab(dataset, split, ckpt.vocab);
  std::printf("accuracy %.4f\n", evaluate_accuracy(model, data));
  return kExitOk;
}

template <typename T>
int ablation(const Common& c, const std::vector<std::string>& frontend_names, std::size_t runs) {
  const ModelConfig cfg = resolve_config(c);
  const Corpus corpus = load_corpus(require(c.dataset, "--dataset"));
  std::vector<Frontend> frontends;
  for (const auto& f : frontend_names) frontends.push_back(parse_frontend(f));
  std::vector<Routing> routings;
  if (c.routing.empty()) routings = {Routing::kStatic, Routing::kDynamic};
  else routings = {parse_routing(c.routing)};
  std::vector<std::uint64_t> seeds;
  for (std::size_t s = 0; s < runs; ++s) seeds.push_back(s);
  const auto table = run_ablation<T>(cfg, corpus, frontends, routings, seeds);
  if (!c.out.empty()) write_file(c.out, table.to_tsv());
  std::cout << table.to_text();
  return kExitOk;
}

template <typename T>
int perturb(const std::string& static_ckpt, const std::string& dynamic_ckpt,
            const std::string& sentences, const std::string& mode, const std::string& rewrites,
            std::uint64_t seed, const std::string& out) {
  const Checkpoint s = load_checkpoint(static_ckpt);
  const Checkpoint d = load_checkpoint(dynamic_ckpt);
  if (s.vocab.tokens() != d.vocab.tokens()) {
    throw ContractError("the two checkpoints were trained with different vocabularies");
  }
  const auto rows = read_labeled_tsv(sentences);
  std::vector<PerturbationItem> items;
  if (mode == "none") {
    for (const auto& r : rows) items.push_back({r.label, tokenize(r.text), tokenize(r.text)});
  } else if (mode == "full") {
    items = build_perturbation_set(rows, ShuffleMode::kFull, seed);
  } else {
    const RewriteTable table = RewriteTable::load(require(rewrites, "--rewrites"));
    items = build_perturbation_set(rows, ShuffleMode::kPhraseRewriteFile, seed, &table);
  }
  const auto rep = run_order_perturbation<T>(model_from_checkpoint<T>(s), model_from_checkpoint<T>(d),
                                             s.vocab, items);
  if (!out.empty()) write_file(out, rep.to_tsv());
  std::cout << rep.to_text();
  return kExitOk;
}

int neighbors(const std::string& ckpt_path, const std::string& embeddings, const std::string& word,
              std::size_t k) {
  std::vector<Neighbor> result;
  if (!ckpt_path.empty()) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    const auto* emb = find_parameter(ckpt.params, "embedding");
    result = nearest_words(emb->value, ckpt.vocab, word, k);
  } else {
    std::ifstream in(require(embeddings, "--checkpoint or --embeddings"));
    if (!in) throw ConfigError("cannot open '" + embeddings + "'");
    std::vector<std::vector<std::string>> tokens(1);
    for (std::string line; std::getline(in, line);) {
      std::istringstream ls(line);
      std::string tok;
      if (ls >> tok) tokens[0].push_back(tok);
    }
    const Vocabulary vocab = build_vocab(tokens);
    std::mt19937_64 rng(0);
    EmbeddingMatrix m = load_pretrained_vectors(embeddings, vocab, rng);
    // Rows without a vector would only add noise to the ranking.
    for (std::size_t r = 0; r < vocab.size(); ++r) {
      if (m.source[r] == RowSource::kRandom)
        std::fill_n(m.table.ptr() + r * m.table.dim(1), m.table.dim(1), 0.0f);
    }
    result = nearest_words(m.table, vocab, word, k);
  }
  for (const auto& n : result) std::printf("%s\t%.6f\n", n.token.c_str(), n.similarity);
  return kExitOk;
}

template <typename T>
int reconstruct(const std::string& ckpt_path, const std::string& sentence,
                std::vector<std::size_t> dims, std::vector<double> noises, const std::string& out) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const CapsNet<T> model = model_from_checkpoint<T>(ckpt);
  if (dims.empty()) {
    for (std::size_t d = 1; d <= model.config().class_capsule_dim; ++d) dims.push_back(d);
  }
  if (noises.empty()) noises = {-0.3, -0.2, 0.2, 0.3};
  const auto rep = run_reconstruction_noise(model, ckpt.vocab, sentence, dims, noises);
  if (!out.empty()) write_file(out, rep.to_tsv());
  if (dims.size() == 1 && noises.size() == 1) {
    std::printf("%s\n", join_tokens(rep.lines.front().tokens).c_str());
  } else {
    std::cout << rep.to_text();
  }
  return kExitOk;
}

int gradcheck(const std::string& precision, std::size_t instances, double eps,
              const std::string& layer, std::uint64_t seed) {
  if (precision != "f64") throw ConfigError("gradcheck runs in 64-bit mode (--precision f64)");
  std::vector<GradSuiteRow> rows;
  if (layer.empty()) rows = run_gradient_suite(instances, eps, seed);
  else rows.push_back(check_layer_gradients(layer, instances, eps, seed));
  bool ok = true;
  for (const auto& r : rows) {
    const bool pass = r.max_rel_error < 1e-4;
    ok = ok && pass;
    std::printf("%-22s %3zu  max_rel_error %.3e  %s  (worst %s)\n", r.layer.c_str(), r.instances,
                r.max_rel_error, pass ? "PASS" : "FAIL", r.worst_param.c_str());
  }
  return ok ? kExitOk : kExitNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Capsule networks for text classification"};
  app.require_subcommand(1);

  Common c;
  std::string csv;
  auto* train_cmd = app.add_subcommand("train", "train a model and write a checkpoint");
  add_common(train_cmd, c);
  train_cmd->add_option("--csv", csv, "run record path (default <out>.csv)");

  std::string ckpt, split = "test";
  auto* eval_cmd = app.add_subcommand("eval", "accuracy of a checkpoint on a dataset split");
  add_common(eval_cmd, c);
  eval_cmd->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--split", split, "train, val or test");

  std::vector<std::string> frontends{"elu_gate", "conv_plain", "multi_filter",
                                     "multi_filter_maxpool"};
  std::size_t runs = 5;
  auto* abl_cmd = app.add_subcommand("ablation", "front-end ablation over seeds and routing modes");
  add_common(abl_cmd, c);
  abl_cmd->add_option("--frontends", frontends, "front-end variants")->delimiter(',');
  abl_cmd->add_option("--runs", runs, "seeds per cell (0..runs-1)");

  std::string static_ckpt, dynamic_ckpt, sentences, rewrites, mode = "rewrite";
  auto* pert_cmd = app.add_subcommand("perturb-order", "word-order perturbation report");
  add_common(pert_cmd, c);
  pert_cmd->add_option("--static", static_ckpt, "static-routing checkpoint")->required();
  pert_cmd->add_option("--dynamic", dynamic_ckpt, "dynamic-routing checkpoint")->required();
  pert_cmd->add_option("--sentences", sentences, "label<TAB>sentence file")->required();
  pert_cmd->add_option("--rewrites", rewrites, "original<TAB>variant file");
  pert_cmd->add_option("--mode", mode, "rewrite, full or none")
      ->check(CLI::IsMember({"rewrite", "full", "none"}));

  std::string word;
  std::size_t k = 5;
  auto* nb_cmd = app.add_subcommand("neighbors", "nearest words by cosine similarity");
  add_common(nb_cmd, c);
  nb_cmd->add_option("--checkpoint", ckpt, "checkpoint whose embeddings to search");
  nb_cmd->add_option("--word", word, "query word")->required();
  nb_cmd->add_option("--k", k, "number of neighbours");

  std::string sentence;
  std::vector<std::size_t> dims;
  std::vector<double> noises;
  auto* rec_cmd = app.add_subcommand("reconstruct", "decode a sentence after capsule noise");
  add_common(rec_cmd, c);
  rec_cmd->add_option("--checkpoint", ckpt, "checkpoint trained with the decoder")->required();
  rec_cmd->add_option("--sentence", sentence, "input sentence")->required();
  rec_cmd->add_option("--dim", dims, "1-based capsule dimension(s)")->delimiter(',');
  rec_cmd->add_option("--noise", noises, "noise value(s)")->delimiter(',');

  std::size_t instances = 20;
  double eps = 1e-5;
  std::string layer;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  add_common(gc_cmd, c);
  gc_cmd->add_option("--instances", instances, "random problems per layer");
  gc_cmd->add_option("--eps", eps, "finite-difference step");
  gc_cmd->add_option("--layer", layer, "check a single layer");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  const bool f64 = c.precision == "f64";
  try {
    if (*train_cmd) return f64 ? train<double>(c, csv) : train<float>(c, csv);
    if (*eval_cmd) {
      const std::string ds = require(c.dataset, "--dataset");
      return f64 ? eval<double>(ckpt, ds, split) : eval<float>(ckpt, ds, split);
    }
    if (*abl_cmd) return f64 ? ablation<double>(c, frontends, runs) : ablation<float>(c, frontends, runs);
    if (*pert_cmd) {
      const std::uint64_t seed = c.seed >= 0 ? static_cast<std::uint64_t>(c.seed) : 0;
      return f64 ? perturb<double>(static_ckpt, dynamic_ckpt, sentences, mode, rewrites, seed, c.out)
                 : perturb<float>(static_ckpt, dynamic_ckpt, sentences, mode, rewrites, seed, c.out);
    }
    if (*nb_cmd) return neighbors(ckpt, c.embeddings, word, k);
    if (*rec_cmd) {
      return f64 ? reconstruct<double>(ckpt, sentence, dims, noises, c.out)
                 : reconstruct<float>(ckpt, sentence, dims, noises, c.out);
    }
    if (*gc_cmd) {
      const std::uint64_t seed = c.seed >= 0 ? static_cast<std::uint64_t>(c.seed) : 0;
      return gradcheck(c.precision == "f32" && !gc_cmd->count("--precision") ? "f64" : c.precision,
                       instances, eps, layer, seed);
    }
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
