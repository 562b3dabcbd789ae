#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace capstext {

enum class Routing { kStatic, kDynamic };

enum class Frontend { kEluGate, kConvPlain, kMultiFilter, kMultiFilterMaxpool };

Routing parse_routing(std::string_view s);
Frontend parse_frontend(std::string_view s);
std::string to_string(Routing r);
std::string to_string(Frontend f);

struct TrainConfig {
  std::size_t batch_size = 50;
  double l2_gate = 0.001;   // applies to the front-end layer
  double l2_other = 0.01;   // every other weight except embeddings
  double lr = 0.001;
  double lr_decay = 0.99;   // per epoch
  double dropout = 0.5;     // on the front-end output
  std::size_t epochs = 20;
  std::uint64_t seed = 0;
};

struct ModelConfig {
  std::string preset = "custom";
  std::size_t num_classes = 2;
  std::size_t vocab_size = 0;
  std::size_t max_len = 0;  // 0: derive from the training split
  std::size_t embed_dim = 300;

  Frontend frontend = Frontend::kEluGate;
  std::size_t filters = 256;
  std::size_t filter_size = 3;
  std::vector<std::size_t> multi_filter_sizes{3, 4, 5};
  std::size_t multi_filter_count = 100;
  std::size_t pool_size = 2;

  std::size_t capsules = 6;            // a
  std::size_t capsule_dim = 16;        // M
  std::size_t class_capsule_dim = 16;  // N
  Routing routing = Routing::kStatic;
  std::size_t route_iters = 3;

  bool decoder = false;
  std::size_t decoder_hidden1 = 512;
  std::size_t decoder_hidden2 = 1024;
  double recon_scale = 0.03;

  double init_std = 0.1;

  TrainConfig train;
};

/// Summary statistics of a benchmark corpus (counts after tokenization).
struct CorpusStats {
  std::size_t classes, train, val, test, vocab, vocab_pretrained, avg_len;
};

struct Preset {
  std::string name;
  CorpusStats stats;
  ModelConfig config;
};

const std::vector<Preset>& presets();
/// Named preset with the published hyperparameters; ConfigError if unknown.
ModelConfig preset_config(std::string_view name);

/// Sets one `key = value` field. Unknown keys and bad values -> ConfigError.
void apply_setting(ModelConfig& cfg, std::string_view key, std::string_view value);

/// Parses flat `key = value` text ('#' comments). A `preset` line is applied
/// first regardless of position; other keys override it.
ModelConfig parse_config(std::string_view text);
ModelConfig load_config_file(const std::string& path);
std::string to_text(const ModelConfig& cfg);

/// Rows of the feature map fed to the capsule layer for a document of
/// max_len tokens.
std::size_t feature_rows(const ModelConfig& cfg);
/// Channels of that feature map.
std::size_t feature_channels(const ModelConfig& cfg);
/// Smallest document length the front-end accepts.
std::size_t min_document_length(const ModelConfig& cfg);

/// Throws ConfigError when a field is out of range.
void validate(const ModelConfig& cfg);

}  // namespace capstext
