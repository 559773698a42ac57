#include "fedsm/semantics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

namespace fedsm {
namespace {

std::vector<std::pair<std::int64_t, Vec>> read_embedding_rows(const std::string& path,
                                                              int& dim_out) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embedding file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("line 1: missing header");
  int dim = 0;
  if (std::sscanf(line.c_str(), "#dim=%d", &dim) != 1 || dim < 1) {
    throw ParseError("line 1: expected '#dim=<d>'");
  }
  dim_out = dim;
  std::vector<std::pair<std::int64_t, Vec>> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw ParseError("line " + std::to_string(line_no) + ": missing tab separator");
    }
    std::int64_t id = -1;
    try {
      id = std::stoll(line.substr(0, tab));
    } catch (const std::exception&) {
      throw ParseError("line " + std::to_string(line_no) + ": bad id");
    }
    if (id < 0) throw ParseError("line " + std::to_string(line_no) + ": negative id");
    const std::string rest = line.substr(tab + 1);
    Vec v(dim);
    std::size_t pos = 0;
    int j = 0;
    while (pos < rest.size() && j < dim) {
      std::size_t next = rest.find(',', pos);
      if (next == std::string::npos) next = rest.size();
      try {
        v[j++] = std::stof(rest.substr(pos, next - pos));
      } catch (const std::exception&) {
        throw ParseError("line " + std::to_string(line_no) + ": bad float");
      }
      pos = next + 1;
    }
    if (j != dim || pos < rest.size()) {
      throw ParseError("line " + std::to_string(line_no) + ": expected " + std::to_string(dim) +
                       " floats");
    }
    rows.emplace_back(id, std::move(v));
  }
  return rows;
}

}  // namespace

SelectionMode selection_mode_from_string(const std::string& s) {
  if (s == "probabilistic") return SelectionMode::kProbabilistic;
  if (s == "deterministic") return SelectionMode::kDeterministic;
  if (s == "random") return SelectionMode::kRandom;
  throw ConfigError("unknown selection mode: " + s);
}

std::string to_string(SelectionMode mode) {
  switch (mode) {
    case SelectionMode::kProbabilistic: return "probabilistic";
    case SelectionMode::kDeterministic: return "deterministic";
    case SelectionMode::kRandom: return "random";
  }
  return "?";
}

RelevanceMatrix build_relevance(const EmbeddingTable& emb, SimilarityKind kind,
                                RelevanceTransform transform, double temperature) {
  const int c = emb.num_classes();
  if (c < 2) throw ConfigError("relevance needs at least 2 classes");
  if (temperature <= 0.0) throw ConfigError("relevance temperature must be positive");

  RelevanceMatrix rel;
  rel.kind = kind;
  rel.transform = transform;
  rel.temperature = temperature;
  rel.raw.resize(c, c);
  for (int i = 0; i < c; ++i) {
    for (int j = 0; j < c; ++j) {
      rel.raw(i, j) = static_cast<float>(similarity(emb.label_vectors[i], emb.label_vectors[j], kind));
    }
  }
  rel.scores = rel.raw;
  if (transform == RelevanceTransform::kSoftmax) {
    for (int i = 0; i < c; ++i) {
      Vec off(c - 1);
      int n = 0;
      for (int j = 0; j < c; ++j) {
        if (j != i) off[n++] = rel.raw(i, j);
      }
      const Vec p = softmax(off, temperature);
      n = 0;
      for (int j = 0; j < c; ++j) rel.scores(i, j) = (j == i) ? 0.0f : p[n++];
    }
  }
  return rel;
}

Vec selection_distribution(const RelevanceMatrix& rel, int target_class,
                           const std::vector<int>& available,
                           const SelectionPolicy& policy) {
  if (available.empty()) throw DegenerateInput("selection: no available classes");

  // self-exclusion with singleton fallback
  std::vector<int> pool;
  for (int v : available) {
    if (v != target_class) pool.push_back(v);
  }
  if (pool.empty()) pool.push_back(target_class);

  Vec out = Vec::Zero(static_cast<Eigen::Index>(available.size()));
  auto slot = [&](int cls) {
    for (std::size_t i = 0; i < available.size(); ++i) {
      if (available[i] == cls) return static_cast<Eigen::Index>(i);
    }
    throw ProtocolError("selection: class not in available set");
  };

  switch (policy.mode) {
    case SelectionMode::kRandom: {
      const float p = 1.0f / static_cast<float>(pool.size());
      for (int v : pool) out[slot(v)] = p;
      break;
    }
    case SelectionMode::kDeterministic: {
      int best = pool[0];
      for (int v : pool) {
        if (rel.raw(target_class, v) > rel.raw(target_class, best)) best = v;
      }
      out[slot(best)] = 1.0f;
      break;
    }
    case SelectionMode::kProbabilistic: {
      Vec scores(static_cast<Eigen::Index>(pool.size()));
      for (std::size_t i = 0; i < pool.size(); ++i) scores[i] = rel.raw(target_class, pool[i]);
      const Vec p = softmax(scores, policy.temperature);
      for (std::size_t i = 0; i < pool.size(); ++i) out[slot(pool[i])] = p[i];
      break;
    }
  }
  return out;
}

EmbeddingTable synthetic_embeddings(int num_classes, int dim, RngStream& rng) {
  EmbeddingTable emb;
  emb.dim = dim;
  emb.label_vectors.resize(num_classes);
  for (int c = 0; c < num_classes; ++c) {
    Vec v(dim);
    double norm2 = 0.0;
    do {
      for (int j = 0; j < dim; ++j) v[j] = static_cast<float>(rng.gaussian());
      norm2 = v.cast<double>().squaredNorm();
    } while (norm2 < 1e-12);
    emb.label_vectors[c] = (v.cast<double>() / std::sqrt(norm2)).cast<float>();
  }
  return emb;
}

EmbeddingTable load_embeddings(const std::string& path, int expected_classes) {
  int dim = 0;
  const auto rows = read_embedding_rows(path, dim);
  if (rows.empty()) throw DataError("embedding file has no rows: " + path);

  std::map<std::int64_t, Vec> by_label;
  for (const auto& [id, v] : rows) {
    if (!by_label.emplace(id, v).second) {
      throw ParseError("duplicate label id " + std::to_string(id));
    }
  }
  const int c = expected_classes >= 0 ? expected_classes : static_cast<int>(by_label.size());
  EmbeddingTable emb;
  emb.dim = dim;
  emb.label_vectors.resize(c);
  for (int i = 0; i < c; ++i) {
    auto it = by_label.find(i);
    if (it == by_label.end()) throw ParseError("missing label id " + std::to_string(i));
    emb.label_vectors[i] = it->second;
  }
  if (static_cast<int>(by_label.size()) != c) {
    throw ParseError("embedding labels do not cover exactly 0.." + std::to_string(c - 1));
  }
  return emb;
}

void save_embeddings(const std::string& path, const EmbeddingTable& emb) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write embedding file: " + path);
  out << "#dim=" << emb.dim << "\n";
  char buf[32];
  for (int c = 0; c < emb.num_classes(); ++c) {
    out << c << '\t';
    for (int j = 0; j < emb.dim; ++j) {
      if (j) out << ',';
      std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(emb.label_vectors[c][j]));
      out << buf;
    }
    out << "\n";
  }
}

void load_sample_embeddings(const std::string& path, EmbeddingTable& emb) {
  int dim = 0;
  const auto rows = read_embedding_rows(path, dim);
  if (dim != emb.dim) {
    throw ParseError("sample embedding dim " + std::to_string(dim) + " != label embedding dim " +
                     std::to_string(emb.dim));
  }
  for (const auto& [id, v] : rows) {
    if (!emb.sample_vectors.emplace(id, v).second) {
      throw ParseError("duplicate sample index " + std::to_string(id));
    }
  }
}

}  // namespace fedsm
