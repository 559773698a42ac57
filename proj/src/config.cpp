#include "fedsm/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace fedsm {
namespace {

std::string trim(const std::string& s) {
  const std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::string format_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

class KvReader {
 public:
  explicit KvReader(const KvMap& kv) : kv_(kv) {}

  std::string str(const std::string& key, const std::string& fallback) {
    used_.insert(key);
    const auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
  }
  double num(const std::string& key, double fallback) {
    used_.insert(key);
    const auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
      std::size_t pos = 0;
      const double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument(it->second);
      return v;
    } catch (const std::exception&) {
      throw ConfigError(key + ": not a number: '" + it->second + "'");
    }
  }
  std::int64_t integer(const std::string& key, std::int64_t fallback) {
    const double v = num(key, static_cast<double>(fallback));
    const auto i = static_cast<std::int64_t>(v);
    if (static_cast<double>(i) != v) throw ConfigError(key + ": expected an integer");
    return i;
  }
  bool boolean(const std::string& key, bool fallback) {
    used_.insert(key);
    const auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ConfigError(key + ": expected true/false");
  }
  std::vector<int> int_list(const std::string& key, const std::vector<int>& fallback) {
    used_.insert(key);
    const auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    std::vector<int> out;
    std::stringstream ss(it->second);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      try {
        out.push_back(std::stoi(trim(tok)));
      } catch (const std::exception&) {
        throw ConfigError(key + ": bad integer list element '" + tok + "'");
      }
    }
    if (out.empty()) throw ConfigError(key + ": empty list");
    return out;
  }

  void reject_unknown() const {
    for (const auto& [key, value] : kv_) {
      if (!used_.count(key)) throw ConfigError("unknown config key: " + key);
    }
  }

 private:
  const KvMap& kv_;
  std::set<std::string> used_;
};

}  // namespace

KvMap parse_kv_text(const std::string& text) {
  KvMap kv;
  std::stringstream ss(text);
  std::string line;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError("line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError("line " + std::to_string(line_no) + ": empty key");
    kv[key] = value;
  }
  return kv;
}

KvMap parse_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_kv_text(buf.str());
}

void ExperimentConfig::validate() const {
  if (method != "fedsm" && method != "fedavg") throw ConfigError("method: must be fedsm or fedavg");
  if (data_source != "synthetic" && data_source != "file") {
    throw ConfigError("data.source: must be synthetic or file");
  }
  if (data_source == "file" && data_path.empty()) throw ConfigError("data.path: required");
  if (emb_source != "synthetic" && emb_source != "file") {
    throw ConfigError("emb.source: must be synthetic or file");
  }
  if (emb_source == "file" && emb_path.empty()) throw ConfigError("emb.path: required");
  if (classes < 2) throw ConfigError("data.classes: must be >= 2");
  if (input_dim < 1) throw ConfigError("data.dim: must be >= 1");
  if (head_count < 1) throw ConfigError("data.head_count: must be >= 1");
  if (imbalance_factor < 1.0) throw ConfigError("data.imbalance_factor: must be >= 1");
  if (spread <= 0.0) throw ConfigError("data.spread: must be > 0");
  if (noise < 0.0) throw ConfigError("data.noise: must be >= 0");
  if (test_per_class < 1) throw ConfigError("data.test_per_class: must be >= 1");
  if (num_clients < 1) throw ConfigError("partition.clients: must be >= 1");
  if (dirichlet_alpha <= 0.0) throw ConfigError("partition.alpha: must be > 0");
  if (min_per_client < 0) throw ConfigError("partition.min_per_client: must be >= 0");
  if (emb_dim < 1) throw ConfigError("emb.dim: must be >= 1");
  similarity_kind_from_string(similarity);
  if (relevance_transform != "softmax" && relevance_transform != "identity") {
    throw ConfigError("semantics.transform: must be softmax or identity");
  }
  if (tau <= 0.0) throw ConfigError("semantics.tau: must be > 0");
  if (lambda_lo < 0.0 || lambda_hi > 1.0 || lambda_lo > lambda_hi) {
    throw ConfigError("mixup.lambda range must satisfy 0 <= lo <= hi <= 1");
  }
  if (pseudo_per_class < 1) throw ConfigError("mixup.pseudo_per_class: must be >= 1");
  selection_mode_from_string(selection_mode);
  if (mixup_source != "sample" && mixup_source != "prototype") {
    throw ConfigError("mixup.source: must be sample or prototype");
  }
  if (feature_dim < 1) throw ConfigError("model.feature_dim: must be >= 1");
  for (int h : hidden_dims) {
    if (h < 1) throw ConfigError("model.hidden: widths must be >= 1");
  }
  if (lr_local <= 0.0 || lr_retrain <= 0.0) throw ConfigError("train.lr: must be > 0");
  if (batch_size < 1) throw ConfigError("train.batch_size: must be >= 1");
  if (epochs_per_round < 1) throw ConfigError("train.epochs_per_round: must be >= 1");
  distill_mode_from_string(distill);
  if (teacher_scale <= 0.0) throw ConfigError("train.teacher_scale: must be > 0");
  if (rounds < 1) throw ConfigError("fed.rounds: must be >= 1");
  if (retrain_rounds < 0 || retrain_rounds > rounds) {
    throw ConfigError("fed.retrain_rounds: must be in [0, fed.rounds]");
  }
  if (participation <= 0.0 || participation > 1.0) {
    throw ConfigError("fed.participation: must be in (0, 1]");
  }
  if (retrain_epochs < 0) throw ConfigError("fed.retrain_epochs: must be >= 0");
  if (few_max > many_min) throw ConfigError("eval.few_max must be <= eval.many_min");
  if (distill == "kl" || distill == "mse") {
    if (feature_dim != emb_dim) {
      throw ConfigError("model.feature_dim must equal emb.dim for distillation");
    }
  }
}

ExperimentConfig preset_config(const std::string& name) {
  ExperimentConfig cfg;  // paper-scale defaults
  if (name == "paper") return cfg;
  if (name == "desk") {
    cfg.rounds = 60;
    cfg.retrain_rounds = 15;
    cfg.epochs_per_round = 5;
    cfg.retrain_epochs = 20;
    return cfg;
  }
  throw ConfigError("unknown preset: " + name);
}

ExperimentConfig config_from_kv(const KvMap& kv, const ExperimentConfig& base) {
  KvReader r(kv);
  ExperimentConfig c = base;
  c.seed = static_cast<std::uint64_t>(r.integer("seed", static_cast<std::int64_t>(base.seed)));
  c.method = r.str("method", base.method);
  c.out_dir = r.str("out", base.out_dir);

  c.data_source = r.str("data.source", base.data_source);
  c.data_path = r.str("data.path", base.data_path);
  c.data_test_path = r.str("data.test_path", base.data_test_path);
  c.classes = static_cast<int>(r.integer("data.classes", base.classes));
  c.input_dim = static_cast<int>(r.integer("data.dim", base.input_dim));
  c.head_count = r.integer("data.head_count", base.head_count);
  c.imbalance_factor = r.num("data.imbalance_factor", base.imbalance_factor);
  c.anchored = r.boolean("data.anchored", base.anchored);
  c.spread = r.num("data.spread", base.spread);
  c.noise = r.num("data.noise", base.noise);
  c.test_per_class = r.integer("data.test_per_class", base.test_per_class);

  c.num_clients = static_cast<int>(r.integer("partition.clients", base.num_clients));
  c.dirichlet_alpha = r.num("partition.alpha", base.dirichlet_alpha);
  c.min_per_client = r.integer("partition.min_per_client", base.min_per_client);
  c.partition_path = r.str("partition.path", base.partition_path);

  c.emb_source = r.str("emb.source", base.emb_source);
  c.emb_dim = static_cast<int>(r.integer("emb.dim", base.emb_dim));
  c.emb_path = r.str("emb.path", base.emb_path);
  c.emb_samples_path = r.str("emb.samples_path", base.emb_samples_path);

  c.similarity = r.str("semantics.similarity", base.similarity);
  c.relevance_transform = r.str("semantics.transform", base.relevance_transform);
  c.tau = r.num("semantics.tau", base.tau);

  c.lambda_lo = r.num("mixup.lambda_lo", base.lambda_lo);
  c.lambda_hi = r.num("mixup.lambda_hi", base.lambda_hi);
  c.pseudo_per_class = static_cast<int>(r.integer("mixup.pseudo_per_class", base.pseudo_per_class));
  c.selection_mode = r.str("mixup.mode", base.selection_mode);
  c.mixup_source = r.str("mixup.source", base.mixup_source);

  c.hidden_dims = r.int_list("model.hidden", base.hidden_dims);
  c.feature_dim = static_cast<int>(r.integer("model.feature_dim", base.feature_dim));

  c.lr_local = r.num("train.lr_local", base.lr_local);
  c.lr_retrain = r.num("train.lr_retrain", base.lr_retrain);
  c.batch_size = static_cast<int>(r.integer("train.batch_size", base.batch_size));
  c.epochs_per_round = static_cast<int>(r.integer("train.epochs_per_round", base.epochs_per_round));
  c.distill = r.str("train.distill", base.distill);
  c.teacher_scale = r.num("train.teacher_scale", base.teacher_scale);

  c.rounds = static_cast<int>(r.integer("fed.rounds", base.rounds));
  c.retrain_rounds = static_cast<int>(r.integer("fed.retrain_rounds", base.retrain_rounds));
  c.participation = r.num("fed.participation", base.participation);
  c.retrain_epochs = static_cast<int>(r.integer("fed.retrain_epochs", base.retrain_epochs));

  c.many_min = r.integer("eval.many_min", base.many_min);
  c.few_max = r.integer("eval.few_max", base.few_max);

  r.reject_unknown();
  c.validate();
  return c;
}

KvMap config_to_kv(const ExperimentConfig& c) {
  KvMap kv;
  kv["seed"] = std::to_string(c.seed);
  kv["method"] = c.method;
  kv["out"] = c.out_dir;
  kv["data.source"] = c.data_source;
  kv["data.path"] = c.data_path;
  kv["data.test_path"] = c.data_test_path;
  kv["data.classes"] = std::to_string(c.classes);
  kv["data.dim"] = std::to_string(c.input_dim);
  kv["data.head_count"] = std::to_string(c.head_count);
  kv["data.imbalance_factor"] = format_double(c.imbalance_factor);
  kv["data.anchored"] = c.anchored ? "true" : "false";
  kv["data.spread"] = format_double(c.spread);
  kv["data.noise"] = format_double(c.noise);
  kv["data.test_per_class"] = std::to_string(c.test_per_class);
  kv["partition.clients"] = std::to_string(c.num_clients);
  kv["partition.alpha"] = format_double(c.dirichlet_alpha);
  kv["partition.min_per_client"] = std::to_string(c.min_per_client);
  kv["partition.path"] = c.partition_path;
  kv["emb.source"] = c.emb_source;
  kv["emb.dim"] = std::to_string(c.emb_dim);
  kv["emb.path"] = c.emb_path;
  kv["emb.samples_path"] = c.emb_samples_path;
  kv["semantics.similarity"] = c.similarity;
  kv["semantics.transform"] = c.relevance_transform;
  kv["semantics.tau"] = format_double(c.tau);
  kv["mixup.lambda_lo"] = format_double(c.lambda_lo);
  kv["mixup.lambda_hi"] = format_double(c.lambda_hi);
  kv["mixup.pseudo_per_class"] = std::to_string(c.pseudo_per_class);
  kv["mixup.mode"] = c.selection_mode;
  kv["mixup.source"] = c.mixup_source;
  {
    std::string list;
    for (std::size_t i = 0; i < c.hidden_dims.size(); ++i) {
      if (i) list += ',';
      list += std::to_string(c.hidden_dims[i]);
    }
    kv["model.hidden"] = list;
  }
  kv["model.feature_dim"] = std::to_string(c.feature_dim);
  kv["train.lr_local"] = format_double(c.lr_local);
  kv["train.lr_retrain"] = format_double(c.lr_retrain);
  kv["train.batch_size"] = std::to_string(c.batch_size);
  kv["train.epochs_per_round"] = std::to_string(c.epochs_per_round);
  kv["train.distill"] = c.distill;
  kv["train.teacher_scale"] = format_double(c.teacher_scale);
  kv["fed.rounds"] = std::to_string(c.rounds);
  kv["fed.retrain_rounds"] = std::to_string(c.retrain_rounds);
  kv["fed.participation"] = format_double(c.participation);
  kv["fed.retrain_epochs"] = std::to_string(c.retrain_epochs);
  kv["eval.many_min"] = std::to_string(c.many_min);
  kv["eval.few_max"] = std::to_string(c.few_max);
  return kv;
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& [key, value] : config_to_kv(cfg)) {
    out += key;
    out += " = ";
    out += value;
    out += "\n";
  }
  return out;
}

ExperimentConfig load_config(const std::string& path, const ExperimentConfig& base) {
  return config_from_kv(parse_kv_file(path), base);
}

}  // namespace fedsm
