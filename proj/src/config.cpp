#include "capstext/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "capstext/errors.hpp"

namespace capstext {

Routing parse_routing(std::string_view s) {
  if (s == "static") return Routing::kStatic;
  if (s == "dynamic") return Routing::kDynamic;
  throw ConfigError("unknown routing '" + std::string(s) + "' (static|dynamic)");
}

Frontend parse_frontend(std::string_view s) {
  if (s == "elu_gate") return Frontend::kEluGate;
  if (s == "conv_plain") return Frontend::kConvPlain;
  if (s == "multi_filter") return Frontend::kMultiFilter;
  if (s == "multi_filter_maxpool") return Frontend::kMultiFilterMaxpool;
  throw ConfigError("unknown front-end '" + std::string(s) +
                    "' (elu_gate|conv_plain|multi_filter|multi_filter_maxpool)");
}

std::string to_string(Routing r) { return r == Routing::kStatic ? "static" : "dynamic"; }

std::string to_string(Frontend f) {
  switch (f) {
    case Frontend::kEluGate: return "elu_gate";
    case Frontend::kConvPlain: return "conv_plain";
    case Frontend::kMultiFilter: return "multi_filter";
    case Frontend::kMultiFilterMaxpool: return "multi_filter_maxpool";
  }
  return "?";
}

namespace {

Preset make_preset(std::string name, CorpusStats stats, std::size_t batch, double l2,
                   std::size_t filters, std::size_t filter_size, double lr,
                   std::size_t capsules, std::size_t m, std::size_t n) {
  ModelConfig c;
  c.preset = name;
  c.num_classes = stats.classes;
  c.filters = filters;
  c.filter_size = filter_size;
  c.capsules = capsules;
  c.capsule_dim = m;
  c.class_capsule_dim = n;
  c.train.batch_size = batch;
  c.train.l2_gate = l2;
  c.train.lr = lr;
  return {std::move(name), stats, c};
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::size_t to_size(std::string_view key, std::string_view v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("'" + std::string(key) + "' expects a non-negative integer, got '" +
                      std::string(v) + "'");
  }
  return out;
}

double to_double(std::string_view key, std::string_view v) {
  std::string s(v);
  std::istringstream is(s);
  double out = 0;
  is >> out;
  if (!is || !is.eof()) {
    throw ConfigError("'" + std::string(key) + "' expects a number, got '" + s + "'");
  }
  return out;
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("'" + std::string(key) + "' expects a boolean, got '" + std::string(v) + "'");
}

std::vector<std::size_t> to_size_list(std::string_view key, std::string_view v) {
  std::vector<std::size_t> out;
  std::size_t start = 0;
  while (start <= v.size()) {
    std::size_t end = v.find(',', start);
    if (end == std::string_view::npos) end = v.size();
    out.push_back(to_size(key, trim(v.substr(start, end - start))));
    start = end + 1;
  }
  return out;
}

template <typename T>
std::string fmt(T v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

const std::vector<Preset>& presets() {
  // Corpus statistics and hyperparameters per benchmark. Column order of the
  // capsule dims is conv-capsule dim / text-capsule dim.
  static const std::vector<Preset> table = {
      make_preset("20news", {20, 10182, 1132, 7532, 177925, 50021, 315}, 40, 0.001, 256, 5, 0.001, 6, 10, 16),
      make_preset("reuters10", {10, 6472, 720, 2787, 28482, 17508, 168}, 40, 0.001, 256, 3, 0.0001, 6, 10, 16),
      make_preset("mr2004", {2, 1620, 180, 200, 40693, 31764, 779}, 50, 0.001, 256, 3, 0.001, 6, 16, 16),
      make_preset("mr2005", {2, 8635, 960, 1067, 18764, 16448, 22}, 50, 0.02, 256, 1, 0.0001, 16, 16, 24),
      make_preset("trec", {6, 4843, 539, 500, 8689, 7461, 9}, 50, 0.0085, 256, 5, 0.001, 16, 32, 16),
      make_preset("mpqa", {2, 8587, 955, 1067, 6246, 6083, 3}, 40, 0.01, 256, 1, 0.00008, 16, 8, 16),
      make_preset("imdb", {2, 22500, 2500, 25000, 112540, 58843, 231}, 50, 0.01, 256, 6, 0.001, 6, 8, 16),
  };
  return table;
}

ModelConfig preset_config(std::string_view name) {
  for (const Preset& p : presets())
    if (p.name == name) return p.config;
  throw ConfigError("unknown preset '" + std::string(name) + "'");
}

void apply_setting(ModelConfig& c, std::string_view key, std::string_view value) {
  const std::string v = trim(value);
  if (key == "preset") {
    TrainConfig keep_seed = c.train;
    c = preset_config(v);
    c.train.seed = keep_seed.seed;
  } else if (key == "num_classes") c.num_classes = to_size(key, v);
  else if (key == "vocab_size") c.vocab_size = to_size(key, v);
  else if (key == "max_len") c.max_len = to_size(key, v);
  else if (key == "embed_dim") c.embed_dim = to_size(key, v);
  else if (key == "frontend") c.frontend = parse_frontend(v);
  else if (key == "filters") c.filters = to_size(key, v);
  else if (key == "filter_size") c.filter_size = to_size(key, v);
  else if (key == "multi_filter_sizes") c.multi_filter_sizes = to_size_list(key, v);
  else if (key == "multi_filter_count") c.multi_filter_count = to_size(key, v);
  else if (key == "pool_size") c.pool_size = to_size(key, v);
  else if (key == "capsules") c.capsules = to_size(key, v);
  else if (key == "capsule_dim") c.capsule_dim = to_size(key, v);
  else if (key == "class_capsule_dim") c.class_capsule_dim = to_size(key, v);
  else if (key == "routing") c.routing = parse_routing(v);
  else if (key == "route_iters") c.route_iters = to_size(key, v);
  else if (key == "decoder") c.decoder = to_bool(key, v);
  else if (key == "decoder_hidden1") c.decoder_hidden1 = to_size(key, v);
  else if (key == "decoder_hidden2") c.decoder_hidden2 = to_size(key, v);
  else if (key == "recon_scale") c.recon_scale = to_double(key, v);
  else if (key == "init_std") c.init_std = to_double(key, v);
  else if (key == "batch_size") c.train.batch_size = to_size(key, v);
  else if (key == "l2_gate") c.train.l2_gate = to_double(key, v);
  else if (key == "l2_other") c.train.l2_other = to_double(key, v);
  else if (key == "lr") c.train.lr = to_double(key, v);
  else if (key == "lr_decay") c.train.lr_decay = to_double(key, v);
  else if (key == "dropout") c.train.dropout = to_double(key, v);
  else if (key == "epochs") c.train.epochs = to_size(key, v);
  else if (key == "seed") c.train.seed = to_size(key, v);
  else throw ConfigError("unknown config key '" + std::string(key) + "'");
}

ModelConfig parse_config(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::istringstream is{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    entries.emplace_back(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  ModelConfig cfg;
  for (const auto& [k, v] : entries)
    if (k == "preset") apply_setting(cfg, k, v);
  for (const auto& [k, v] : entries)
    if (k != "preset") apply_setting(cfg, k, v);
  return cfg;
}

ModelConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_text(const ModelConfig& c) {
  std::ostringstream os;
  std::string sizes;
  for (std::size_t i = 0; i < c.multi_filter_sizes.size(); ++i) {
    if (i) sizes += ",";
    sizes += std::to_string(c.multi_filter_sizes[i]);
  }
  os << "# preset " << c.preset << "\n"
     << "num_classes = " << c.num_classes << "\n"
     << "vocab_size = " << c.vocab_size << "\n"
     << "max_len = " << c.max_len << "\n"
     << "embed_dim = " << c.embed_dim << "\n"
     << "frontend = " << to_string(c.frontend) << "\n"
     << "filters = " << c.filters << "\n"
     << "filter_size = " << c.filter_size << "\n"
     << "multi_filter_sizes = " << sizes << "\n"
     << "multi_filter_count = " << c.multi_filter_count << "\n"
     << "pool_size = " << c.pool_size << "\n"
     << "capsules = " << c.capsules << "\n"
     << "capsule_dim = " << c.capsule_dim << "\n"
     << "class_capsule_dim = " << c.class_capsule_dim << "\n"
     << "routing = " << to_string(c.routing) << "\n"
     << "route_iters = " << c.route_iters << "\n"
     << "decoder = " << (c.decoder ? "true" : "false") << "\n"
     << "decoder_hidden1 = " << c.decoder_hidden1 << "\n"
     << "decoder_hidden2 = " << c.decoder_hidden2 << "\n"
     << "recon_scale = " << fmt(c.recon_scale) << "\n"
     << "init_std = " << fmt(c.init_std) << "\n"
     << "batch_size = " << c.train.batch_size << "\n"
     << "l2_gate = " << fmt(c.train.l2_gate) << "\n"
     << "l2_other = " << fmt(c.train.l2_other) << "\n"
     << "lr = " << fmt(c.train.lr) << "\n"
     << "lr_decay = " << fmt(c.train.lr_decay) << "\n"
     << "dropout = " << fmt(c.train.dropout) << "\n"
     << "epochs = " << c.train.epochs << "\n"
     << "seed = " << c.train.seed << "\n";
  return os.str();
}

std::size_t min_document_length(const ModelConfig& c) {
  switch (c.frontend) {
    case Frontend::kEluGate:
    case Frontend::kConvPlain:
      return c.filter_size;
    case Frontend::kMultiFilter:
      return *std::max_element(c.multi_filter_sizes.begin(), c.multi_filter_sizes.end());
    case Frontend::kMultiFilterMaxpool:
      return *std::max_element(c.multi_filter_sizes.begin(), c.multi_filter_sizes.end()) +
             c.pool_size - 1;
  }
  return c.filter_size;
}

std::size_t feature_rows(const ModelConfig& c) {
  if (c.max_len < min_document_length(c)) {
    throw ConfigError("max_len " + std::to_string(c.max_len) + " below the front-end minimum " +
                      std::to_string(min_document_length(c)));
  }
  switch (c.frontend) {
    case Frontend::kEluGate:
    case Frontend::kConvPlain:
      return c.max_len - c.filter_size + 1;
    case Frontend::kMultiFilter:
      return c.max_len - min_document_length(c) + 1;
    case Frontend::kMultiFilterMaxpool: {
      const std::size_t widest =
          *std::max_element(c.multi_filter_sizes.begin(), c.multi_filter_sizes.end());
      return (c.max_len - widest + 1) / c.pool_size;
    }
  }
  return 0;
}

std::size_t feature_channels(const ModelConfig& c) {
  if (c.frontend == Frontend::kEluGate || c.frontend == Frontend::kConvPlain) return c.filters;
  return c.multi_filter_sizes.size() * c.multi_filter_count;
}

void validate(const ModelConfig& c) {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(c.num_classes, "num_classes");
  positive(c.embed_dim, "embed_dim");
  positive(c.filters, "filters");
  positive(c.filter_size, "filter_size");
  positive(c.multi_filter_count, "multi_filter_count");
  positive(c.pool_size, "pool_size");
  positive(c.capsules, "capsules");
  positive(c.capsule_dim, "capsule_dim");
  positive(c.class_capsule_dim, "class_capsule_dim");
  positive(c.route_iters, "route_iters");
  positive(c.decoder_hidden1, "decoder_hidden1");
  positive(c.decoder_hidden2, "decoder_hidden2");
  positive(c.train.batch_size, "batch_size");
  if (c.multi_filter_sizes.empty()) throw ConfigError("multi_filter_sizes must not be empty");
  for (std::size_t s : c.multi_filter_sizes) positive(s, "multi_filter_sizes entry");
  if (c.train.dropout < 0.0 || c.train.dropout >= 1.0) {
    throw ConfigError("dropout must lie in [0, 1)");
  }
  if (!(c.train.lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(c.train.lr_decay > 0.0)) throw ConfigError("lr_decay must be positive");
  if (c.train.l2_gate < 0.0 || c.train.l2_other < 0.0) throw ConfigError("l2 constants must be >= 0");
  if (!(c.init_std > 0.0)) throw ConfigError("init_std must be positive");
  if (c.recon_scale < 0.0) throw ConfigError("recon_scale must be >= 0");
  if (c.max_len) feature_rows(c);
}

}  // namespace capstext
