#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "capstext/config.hpp"
#include "capstext/data.hpp"
#include "capstext/model.hpp"

namespace capstext {

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0;
  double val_acc = 0;
  double lr = 0;
  std::optional<double> recon_mse;  // mean unscaled reconstruction MSE, decoder runs only
};

struct RunRecord {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_acc = 0;
  double test_acc = 0;
  std::uint64_t seed = 0;
  ModelConfig config;
  double seconds = 0;  // wall time, not part of the CSV

  /// `epoch,train_loss,val_acc,lr` rows (plus `recon_mse` with a decoder)
  /// and a `# best_epoch=... best_val_acc=... test_acc=... seed=...` line.
  std::string to_csv() const;
};

struct TrainOptions {
  std::function<void(const EpochRecord&)> on_epoch;
  /// Stop after this many seconds (checked between epochs); 0 = no limit.
  double time_budget_seconds = 0;
};

template <typename T>
struct TrainResult {
  RunRecord record;
  CapsNet<T> model;  // parameters of the best validation epoch
};

/// Derives max_len (95th percentile of training lengths, at least the
/// front-end minimum), vocab_size and num_classes from the corpus.
ModelConfig fit_config(ModelConfig cfg, const Corpus& corpus);

/// Adam with per-epoch decay, dropout and L2 for cfg.train.epochs epochs,
/// keeping the parameters of the best validation epoch. `embeddings`, when
/// given, replaces the random embedding table. A non-finite loss throws
/// NumericalError naming the epoch and step.
template <typename T>
TrainResult<T> run_training(ModelConfig cfg, const Corpus& corpus,
                            const EmbeddingMatrix* embeddings = nullptr,
                            const TrainOptions& opts = {});

/// Fraction of examples whose predicted class equals the label.
template <typename T>
double evaluate_accuracy(const CapsNet<T>& model, const Dataset& data, std::size_t batch = 256);

template <typename T>
std::vector<int> predict_dataset(const CapsNet<T>& model, const Dataset& data,
                                 std::size_t batch = 256);

// ---------------------------------------------------------------------------

struct AblationCell {
  Frontend frontend = Frontend::kEluGate;
  Routing routing = Routing::kStatic;
  std::vector<std::uint64_t> seeds;
  std::vector<double> test_accs;
  std::vector<double> train_accs;
  double mean_test_acc = 0;
};

struct AblationTable {
  std::vector<AblationCell> cells;
  std::string to_tsv() const;
  std::string to_text() const;
};

/// One run per (front-end, routing, seed); means over seeds.
template <typename T>
AblationTable run_ablation(const ModelConfig& base, const Corpus& corpus,
                           std::span<const Frontend> frontends, std::span<const Routing> routings,
                           std::span<const std::uint64_t> seeds,
                           const EmbeddingMatrix* embeddings = nullptr,
                           const TrainOptions& opts = {});

// ---------------------------------------------------------------------------

struct PerturbationItem {
  int label = 0;
  std::vector<std::string> original;
  std::vector<std::string> perturbed;
  bool operator==(const PerturbationItem&) const = default;
};

/// Pairs each labeled sentence with its perturbed token sequence.
std::vector<PerturbationItem> build_perturbation_set(const std::vector<LabeledText>& rows,
                                                     ShuffleMode mode, std::uint64_t seed,
                                                     const RewriteTable* table = nullptr);

struct PerturbationRow {
  int label = 0;
  std::string original, perturbed;
  int static_original = 0, static_perturbed = 0;
  int dynamic_original = 0, dynamic_perturbed = 0;
};

struct PerturbationReport {
  std::vector<PerturbationRow> rows;
  double static_original_acc = 0, static_perturbed_acc = 0;
  double dynamic_original_acc = 0, dynamic_perturbed_acc = 0;

  /// Rows where the two routing modes disagree on the perturbed sentence.
  std::vector<std::size_t> disagreements() const;
  std::string to_tsv() const;
  std::string to_text() const;
};

/// Classifies original and perturbed sentences with both models. Both must
/// share num_classes and the vocabulary.
template <typename T>
PerturbationReport run_order_perturbation(const CapsNet<T>& static_model,
                                          const CapsNet<T>& dynamic_model,
                                          const Vocabulary& vocab,
                                          std::span<const PerturbationItem> items);

// ---------------------------------------------------------------------------

struct ReconstructionLine {
  std::size_t dim = 0;  // 1-based capsule dimension
  double noise = 0;
  std::vector<std::string> tokens;
};

struct ReconstructionReport {
  std::string input;
  std::size_t predicted = 0;
  std::vector<std::string> unperturbed;
  std::vector<ReconstructionLine> lines;
  std::string to_tsv() const;
  std::string to_text() const;
};

/// Maps each row of a reconstructed [l x e] matrix to the vocabulary token of
/// highest cosine similarity. Rows whose norm is under half the mean norm of
/// the non-pad embedding rows decode to the pad token.
template <typename T>
std::vector<std::string> decode_rows(const Tensor<T>& rows, const Tensor<T>& embeddings,
                                     const Vocabulary& vocab);

/// Adds each noise to each (1-based) dimension of the predicted class capsule
/// and decodes the reconstruction. ConfigError without a decoder.
template <typename T>
ReconstructionReport run_reconstruction_noise(const CapsNet<T>& model, const Vocabulary& vocab,
                                              std::string_view sentence,
                                              std::span<const std::size_t> dims,
                                              std::span<const double> noises);

}  // namespace capstext
