#include "capstext/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "capstext/errors.hpp"
#include "capstext/optim.hpp"

namespace capstext {

namespace {

std::string num(double v, int precision = 6) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

void check_labels(const Dataset& data, std::size_t k) {
  for (const auto& e : data.examples) {
    if (e.label < 0 || static_cast<std::size_t>(e.label) >= k) {
      throw ShapeError(data.split + " split has label " + std::to_string(e.label) +
                       " but the model has " + std::to_string(k) + " classes");
    }
  }
}

}  // namespace

std::string RunRecord::to_csv() const {
  const bool recon = !epochs.empty() && epochs.front().recon_mse.has_value();
  std::ostringstream os;
  os << "epoch,train_loss,val_acc,lr" << (recon ? ",recon_mse" : "") << "\n";
  for (const auto& e : epochs) {
    os << e.epoch << "," << num(e.train_loss, 9) << "," << fixed(e.val_acc, 6) << ","
       << num(e.lr, 9);
    if (recon) os << "," << num(e.recon_mse.value_or(0.0), 9);
    os << "\n";
  }
  os << "# best_epoch=" << best_epoch << " best_val_acc=" << fixed(best_val_acc, 6)
     << " test_acc=" << fixed(test_acc, 6) << " seed=" << seed << " routing="
     << to_string(config.routing) << " frontend=" << to_string(config.frontend) << "\n";
  return os.str();
}

ModelConfig fit_config(ModelConfig cfg, const Corpus& corpus) {
  cfg.vocab_size = corpus.vocab.size();
  cfg.num_classes = corpus.num_classes;
  if (cfg.max_len == 0) {
    cfg.max_len = std::max(percentile_length(corpus.train, 0.95), min_document_length(cfg));
  }
  if (cfg.max_len < min_document_length(cfg)) {
    throw ConfigError("max_len " + std::to_string(cfg.max_len) + " is shorter than the " +
                      std::to_string(min_document_length(cfg)) + " tokens the front-end needs");
  }
  validate(cfg);
  return cfg;
}

template <typename T>
std::vector<int> predict_dataset(const CapsNet<T>& model, const Dataset& data, std::size_t batch) {
  const std::size_t l = model.config().max_len;
  std::vector<int> out;
  out.reserve(data.examples.size());
  for (std::size_t lo = 0; lo < data.examples.size(); lo += batch) {
    const std::size_t hi = std::min(data.examples.size(), lo + batch);
    const Batch b = pad_batch(std::span(data.examples).subspan(lo, hi - lo), l);
    const auto pred = model.predict(b.ids);
    out.insert(out.end(), pred.begin(), pred.end());
  }
  return out;
}

template <typename T>
double evaluate_accuracy(const CapsNet<T>& model, const Dataset& data, std::size_t batch) {
  if (data.examples.empty()) throw ContractError("evaluate_accuracy: empty " + data.split + " split");
  check_labels(data, model.config().num_classes);
  const auto pred = predict_dataset(model, data, batch);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.examples[i].label;
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

template <typename T>
TrainResult<T> run_training(ModelConfig cfg, const Corpus& corpus,
                            const EmbeddingMatrix* embeddings, const TrainOptions& opts) {
  const auto start = std::chrono::steady_clock::now();
  cfg = fit_config(std::move(cfg), corpus);
  if (corpus.train.examples.empty()) throw ContractError("run_training: empty training split");
  check_labels(corpus.train, cfg.num_classes);
  const Dataset& val = corpus.val.examples.empty() ? corpus.train : corpus.val;

  CapsNet<T> model(cfg, cfg.train.seed);
  if (embeddings) {
    if (embeddings->table.rank() != 2 || embeddings->table.dim(1) != cfg.embed_dim) {
      throw ShapeError("embedding table " + shape_str(embeddings->table.shape()) +
                       " does not match embed_dim " + std::to_string(cfg.embed_dim));
    }
    model.set_embeddings(embeddings->table.template cast<T>());
  }

  std::mt19937_64 order_rng(cfg.train.seed * 0x9E3779B97F4A7C15ULL + 1);
  std::mt19937_64 dropout_rng(cfg.train.seed * 0x9E3779B97F4A7C15ULL + 2);
  AdamState<T> adam;
  ParameterList<T> best = model.parameters();

  RunRecord rec;
  rec.seed = cfg.train.seed;
  rec.config = cfg;
  rec.best_val_acc = -1.0;

  const std::size_t n = corpus.train.examples.size();
  const std::size_t bs = cfg.train.batch_size;
  std::vector<std::size_t> order(n);
  std::vector<Example> chunk;
  for (std::size_t epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    const double lr = lr_schedule(cfg.train.lr, epoch, cfg.train.lr_decay);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), order_rng);
    double loss_sum = 0, recon_sum = 0;
    std::size_t step = 0;
    for (std::size_t lo = 0; lo < n; lo += bs, ++step) {
      const std::size_t hi = std::min(n, lo + bs);
      chunk.clear();
      for (std::size_t i = lo; i < hi; ++i) chunk.push_back(corpus.train.examples[order[i]]);
      const Batch b = pad_batch(chunk, cfg.max_len);

      Tape<T> tape;
      ForwardOptions<T> fo;
      fo.training = true;
      fo.rng = &dropout_rng;
      const ForwardResult<T> r = model.forward(tape, b.ids, b.labels, fo);
      const double loss = static_cast<double>(r.loss->value()[0]);
      if (!std::isfinite(loss)) {
        throw NumericalError("training diverged: loss " + num(loss) + " at epoch " +
                             std::to_string(epoch) + " step " + std::to_string(step));
      }
      const auto grads = tape.backward(*r.loss);
      try {
        adam_step<T>(model.parameters(), grads, adam, lr);
      } catch (const NumericalError& e) {
        throw NumericalError("epoch " + std::to_string(epoch) + " step " + std::to_string(step) +
                             ": " + e.what());
      }
      loss_sum += loss * static_cast<double>(b.size);
      if (r.recon_mse) recon_sum += static_cast<double>(r.recon_mse->value()[0]) * b.size;
    }

    EpochRecord er;
    er.epoch = epoch;
    er.train_loss = loss_sum / static_cast<double>(n);
    er.val_acc = evaluate_accuracy(model, val);
    er.lr = lr;
    if (cfg.decoder) er.recon_mse = recon_sum / static_cast<double>(n);
    rec.epochs.push_back(er);
    if (er.val_acc > rec.best_val_acc) {
      rec.best_val_acc = er.val_acc;
      rec.best_epoch = epoch;
      best = model.parameters();
    }
    if (opts.on_epoch) opts.on_epoch(er);
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (opts.time_budget_seconds > 0 && elapsed >= opts.time_budget_seconds) break;
  }

  if (rec.epochs.empty()) rec.best_val_acc = 0.0;
  model.parameters() = std::move(best);
  if (!corpus.test.examples.empty()) rec.test_acc = evaluate_accuracy(model, corpus.test);
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {std::move(rec), std::move(model)};
}

// ---------------------------------------------------------------------------

std::string AblationTable::to_tsv() const {
  std::ostringstream os;
  os << "frontend\trouting\tseed\ttest_acc\ttrain_acc\n";
  for (const auto& c : cells) {
    for (std::size_t i = 0; i < c.seeds.size(); ++i) {
      os << to_string(c.frontend) << "\t" << to_string(c.routing) << "\t" << c.seeds[i] << "\t"
         << fixed(c.test_accs[i], 6) << "\t" << fixed(c.train_accs[i], 6) << "\n";
    }
    os << to_string(c.frontend) << "\t" << to_string(c.routing) << "\tmean\t"
       << fixed(c.mean_test_acc, 6) << "\t\n";
  }
  return os.str();
}

std::string AblationTable::to_text() const {
  std::ostringstream os;
  os << std::left << std::setw(24) << "front-end" << std::setw(10) << "routing"
     << "mean test acc (runs)\n";
  for (const auto& c : cells) {
    os << std::setw(24) << to_string(c.frontend) << std::setw(10) << to_string(c.routing)
       << fixed(100.0 * c.mean_test_acc, 2) << " (" << c.seeds.size() << ")\n";
  }
  return os.str();
}

template <typename T>
AblationTable run_ablation(const ModelConfig& base, const Corpus& corpus,
                           std::span<const Frontend> frontends, std::span<const Routing> routings,
                           std::span<const std::uint64_t> seeds,
                           const EmbeddingMatrix* embeddings, const TrainOptions& opts) {
  if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
  AblationTable table;
  for (Frontend f : frontends) {
    for (Routing r : routings) {
      AblationCell cell;
      cell.frontend = f;
      cell.routing = r;
      for (std::uint64_t seed : seeds) {
        ModelConfig cfg = base;
        cfg.frontend = f;
        cfg.routing = r;
        cfg.train.seed = seed;
        auto result = run_training<T>(cfg, corpus, embeddings, opts);
        cell.seeds.push_back(seed);
        cell.test_accs.push_back(result.record.test_acc);
        cell.train_accs.push_back(evaluate_accuracy(result.model, corpus.train));
      }
      cell.mean_test_acc = std::accumulate(cell.test_accs.begin(), cell.test_accs.end(), 0.0) /
                           static_cast<double>(cell.test_accs.size());
      table.cells.push_back(std::move(cell));
    }
  }
  return table;
}

// ---------------------------------------------------------------------------

std::vector<PerturbationItem> build_perturbation_set(const std::vector<LabeledText>& rows,
                                                     ShuffleMode mode, std::uint64_t seed,
                                                     const RewriteTable* table) {
  std::vector<PerturbationItem> items;
  items.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    PerturbationItem it;
    it.label = rows[i].label;
    it.original = tokenize(rows[i].text);
    it.perturbed = shuffle_word_order(it.original, mode, seed + i, table);
    items.push_back(std::move(it));
  }
  return items;
}

std::vector<std::size_t> PerturbationReport::disagreements() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (rows[i].static_perturbed != rows[i].dynamic_perturbed) out.push_back(i);
  return out;
}

std::string PerturbationReport::to_tsv() const {
  std::ostringstream os;
  os << "label\tstatic_original\tstatic_perturbed\tdynamic_original\tdynamic_perturbed\t"
        "original\tperturbed\n";
  for (const auto& r : rows) {
    os << r.label << "\t" << r.static_original << "\t" << r.static_perturbed << "\t"
       << r.dynamic_original << "\t" << r.dynamic_perturbed << "\t" << r.original << "\t"
       << r.perturbed << "\n";
  }
  return os.str();
}

std::string PerturbationReport::to_text() const {
  std::ostringstream os;
  os << "sentences: " << rows.size() << "\n"
     << "static  routing: original " << fixed(100 * static_original_acc, 2) << "%  perturbed "
     << fixed(100 * static_perturbed_acc, 2) << "%\n"
     << "dynamic routing: original " << fixed(100 * dynamic_original_acc, 2) << "%  perturbed "
     << fixed(100 * dynamic_perturbed_acc, 2) << "%\n";
  const auto dis = disagreements();
  os << "disagreements on perturbed sentences: " << dis.size() << "\n";
  for (std::size_t i : dis) {
    const auto& r = rows[i];
    os << "  [" << r.label << "] static=" << r.static_perturbed << " dynamic=" << r.dynamic_perturbed
       << "  " << r.perturbed << "\n";
  }
  return os.str();
}

template <typename T>
PerturbationReport run_order_perturbation(const CapsNet<T>& static_model,
                                          const CapsNet<T>& dynamic_model,
                                          const Vocabulary& vocab,
                                          std::span<const PerturbationItem> items) {
  const std::size_t k = static_model.config().num_classes;
  if (dynamic_model.config().num_classes != k) {
    throw ContractError("perturbation: models disagree on the class count (" + std::to_string(k) +
                        " vs " + std::to_string(dynamic_model.config().num_classes) + ")");
  }
  if (static_model.config().vocab_size != vocab.size() ||
      dynamic_model.config().vocab_size != vocab.size()) {
    throw ContractError("perturbation: models were not trained on this vocabulary");
  }
  if (items.empty()) throw ContractError("perturbation: no sentences");

  Dataset orig{"original", {}}, pert{"perturbed", {}};
  for (const auto& it : items) {
    if (it.label < 0 || static_cast<std::size_t>(it.label) >= k) {
      throw ShapeError("perturbation: label " + std::to_string(it.label) + " outside " +
                       std::to_string(k) + " classes");
    }
    orig.examples.push_back({it.label, vocab.encode(it.original)});
    pert.examples.push_back({it.label, vocab.encode(it.perturbed)});
  }
  const auto so = predict_dataset(static_model, orig), sp = predict_dataset(static_model, pert);
  const auto dyo = predict_dataset(dynamic_model, orig), dp = predict_dataset(dynamic_model, pert);

  PerturbationReport rep;
  std::size_t c_so = 0, c_sp = 0, c_do = 0, c_dp = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const int y = items[i].label;
    rep.rows.push_back({y, join_tokens(items[i].original), join_tokens(items[i].perturbed), so[i],
                        sp[i], dyo[i], dp[i]});
    c_so += so[i] == y;
    c_sp += sp[i] == y;
    c_do += dyo[i] == y;
    c_dp += dp[i] == y;
  }
  const double n = static_cast<double>(items.size());
  rep.static_original_acc = c_so / n;
  rep.static_perturbed_acc = c_sp / n;
  rep.dynamic_original_acc = c_do / n;
  rep.dynamic_perturbed_acc = c_dp / n;
  return rep;
}

// ---------------------------------------------------------------------------

template <typename T>
std::vector<std::string> decode_rows(const Tensor<T>& rows, const Tensor<T>& embeddings,
                                     const Vocabulary& vocab) {
  if (rows.rank() != 2 || embeddings.rank() != 2 || rows.dim(1) != embeddings.dim(1) ||
      embeddings.dim(0) != vocab.size()) {
    throw ShapeError("decode_rows: rows " + shape_str(rows.shape()) + " vs embeddings " +
                     shape_str(embeddings.shape()));
  }
  const std::size_t v = embeddings.dim(0), e = embeddings.dim(1);
  std::vector<double> norms(v, 0.0);
  double mean = 0;
  for (std::size_t r = 1; r < v; ++r) {
    double s = 0;
    for (std::size_t j = 0; j < e; ++j) s += static_cast<double>(embeddings(r, j)) * embeddings(r, j);
    norms[r] = std::sqrt(s);
    mean += norms[r];
  }
  mean /= static_cast<double>(std::max<std::size_t>(v - 1, 1));
  const double pad_threshold = 0.5 * mean;

  std::vector<std::string> out;
  for (std::size_t t = 0; t < rows.dim(0); ++t) {
    double rn = 0;
    for (std::size_t j = 0; j < e; ++j) rn += static_cast<double>(rows(t, j)) * rows(t, j);
    rn = std::sqrt(rn);
    if (rn < pad_threshold || rn == 0.0) {
      out.push_back(std::string(Vocabulary::kPad));
      continue;
    }
    double best = -2.0;
    std::size_t best_id = kPadId;
    for (std::size_t r = 1; r < v; ++r) {
      if (norms[r] == 0.0) continue;
      double dot = 0;
      for (std::size_t j = 0; j < e; ++j) dot += static_cast<double>(rows(t, j)) * embeddings(r, j);
      const double cos = dot / (rn * norms[r]);
      if (cos > best) {
        best = cos;
        best_id = r;
      }
    }
    out.push_back(vocab.token(static_cast<std::int32_t>(best_id)));
  }
  return out;
}

std::string ReconstructionReport::to_tsv() const {
  std::ostringstream os;
  os << "dim\tnoise\tsentence\n";
  os << "-\t0\t" << join_tokens(unperturbed) << "\n";
  for (const auto& l : lines) os << l.dim << "\t" << num(l.noise) << "\t" << join_tokens(l.tokens) << "\n";
  return os.str();
}

std::string ReconstructionReport::to_text() const {
  std::ostringstream os;
  os << "input:       " << input << "\n"
     << "predicted:   " << predicted << "\n"
     << "unperturbed: " << join_tokens(unperturbed) << "\n";
  for (const auto& l : lines) {
    os << "dim " << std::setw(2) << l.dim << " noise " << std::showpos << fixed(l.noise, 2)
       << std::noshowpos << ": " << join_tokens(l.tokens) << "\n";
  }
  return os.str();
}

template <typename T>
ReconstructionReport run_reconstruction_noise(const CapsNet<T>& model, const Vocabulary& vocab,
                                              std::string_view sentence,
                                              std::span<const std::size_t> dims,
                                              std::span<const double> noises) {
  const ModelConfig& cfg = model.config();
  if (!cfg.decoder) throw ConfigError("reconstruction needs a model trained with the decoder");
  const DecoderParams<T> dec = model.decoder_params();
  const Tensor<T>& emb = model.parameter("embedding");
  const std::size_t k = cfg.num_classes, n = cfg.class_capsule_dim;

  const auto tokens = tokenize(sentence);
  const auto ids = pad_sequence(vocab.encode(tokens), cfg.max_len);
  ClassCapsules<T> caps{model.class_capsules(ids).reshaped({k, n})};

  ReconstructionReport rep;
  rep.input = join_tokens(tokens);
  rep.predicted = classify(caps);
  auto decode = [&](const ClassCapsules<T>& c) {
    return decode_rows(reconstruct_forward(c, rep.predicted, dec, cfg.max_len, cfg.embed_dim), emb,
                       vocab);
  };
  rep.unperturbed = decode(caps);
  for (std::size_t d : dims) {
    if (d == 0 || d > n) {
      throw LookupError("capsule dimension " + std::to_string(d) + " outside 1.." +
                        std::to_string(n));
    }
    for (double noise : noises)
      rep.lines.push_back({d, noise, decode(capsule_dim_perturb(caps, rep.predicted, d - 1, noise))});
  }
  return rep;
}

#define CAPSTEXT_INSTANTIATE(T)                                                                \
  template std::vector<int> predict_dataset(const CapsNet<T>&, const Dataset&, std::size_t);    \
  template double evaluate_accuracy(const CapsNet<T>&, const Dataset&, std::size_t);            \
  template TrainResult<T> run_training(ModelConfig, const Corpus&, const EmbeddingMatrix*,      \
                                       const TrainOptions&);                                    \
  template AblationTable run_ablation<T>(const ModelConfig&, const Corpus&,                     \
                                         std::span<const Frontend>, std::span<const Routing>,   \
                                         std::span<const std::uint64_t>,                        \
                                         const EmbeddingMatrix*, const TrainOptions&);          \
  template PerturbationReport run_order_perturbation(const CapsNet<T>&, const CapsNet<T>&,      \
                                                     const Vocabulary&,                         \
                                                     std::span<const PerturbationItem>);        \
  template std::vector<std::string> decode_rows(const Tensor<T>&, const Tensor<T>&,             \
                                                const Vocabulary&);                             \
  template ReconstructionReport run_reconstruction_noise(const CapsNet<T>&, const Vocabulary&,  \
                                                         std::string_view,                      \
                                                         std::span<const std::size_t>,          \
                                                         std::span<const double>);

CAPSTEXT_INSTANTIATE(float)
CAPSTEXT_INSTANTIATE(double)

#undef CAPSTEXT_INSTANTIATE

}  // namespace capstext
