#include "fedsm/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace fedsm {
namespace {

std::vector<float> parse_float_list(const std::string& text, int line_no) {
  std::vector<float> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t next = text.find(',', pos);
    if (next == std::string::npos) next = text.size();
    const std::string tok = text.substr(pos, next - pos);
    try {
      std::size_t used = 0;
      out.push_back(std::stof(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ParseError("line " + std::to_string(line_no) + ": bad float '" + tok + "'");
    }
    pos = next + 1;
  }
  return out;
}

std::string format_float(float v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
  return buf;
}

}  // namespace

void Dataset::recount() {
  class_counts.assign(num_classes, 0);
  for (const Sample& s : samples) ++class_counts[s.label];
}

void Dataset::validate() const {
  if (static_cast<int>(class_counts.size()) != num_classes) {
    throw DataError("class_counts size mismatch");
  }
  std::vector<std::int64_t> counts(num_classes, 0);
  for (const Sample& s : samples) {
    if (s.label < 0 || s.label >= num_classes) throw DataError("label out of range");
    if (s.features.size() != dim) throw DimensionError("sample feature dim mismatch");
    ++counts[s.label];
  }
  if (counts != class_counts) throw DataError("class_counts inconsistent with samples");
}

std::vector<std::int64_t> long_tail_counts(int num_classes, const LongTailSpec& spec) {
  if (spec.imbalance_factor < 1.0) throw ConfigError("imbalance factor must be >= 1");
  std::vector<std::int64_t> counts(num_classes);
  for (int c = 0; c < num_classes; ++c) {
    const double expo = num_classes > 1 ? -static_cast<double>(c) / (num_classes - 1) : 0.0;
    counts[c] = std::llround(spec.head_count * std::pow(spec.imbalance_factor, expo));
    counts[c] = std::max<std::int64_t>(counts[c], 1);
  }
  return counts;
}

Dataset generate_synthetic(int num_classes, int dim, std::int64_t per_class,
                           const std::vector<Vec>* class_anchors, double spread,
                           double noise, RngStream& rng) {
  if (num_classes < 2) throw ConfigError("need at least 2 classes");
  if (per_class < 1) throw ConfigError("per_class must be >= 1");
  if (spread <= 0.0 || noise < 0.0) throw ConfigError("spread must be > 0 and noise >= 0");
  if (class_anchors) {
    if (static_cast<int>(class_anchors->size()) != num_classes) {
      throw DimensionError("anchor count != class count");
    }
    for (const Vec& a : *class_anchors) {
      if (a.size() != dim) throw DimensionError("anchor dim != input dim");
    }
  }

  std::vector<Vec> means(num_classes);
  for (int c = 0; c < num_classes; ++c) {
    if (class_anchors) {
      means[c] = (*class_anchors)[c] * static_cast<float>(spread);
    } else {
      Vec m(dim);
      for (int j = 0; j < dim; ++j) m[j] = static_cast<float>(spread * rng.gaussian());
      means[c] = m;
    }
  }

  Dataset ds;
  ds.num_classes = num_classes;
  ds.dim = dim;
  ds.samples.reserve(static_cast<std::size_t>(num_classes) * per_class);
  for (int c = 0; c < num_classes; ++c) {
    for (std::int64_t i = 0; i < per_class; ++i) {
      Vec x = means[c];
      for (int j = 0; j < dim; ++j) x[j] += static_cast<float>(noise * rng.gaussian());
      ds.samples.push_back({std::move(x), c});
    }
  }
  ds.recount();
  return ds;
}

Dataset apply_long_tail(const Dataset& ds, const LongTailSpec& spec, RngStream& rng) {
  const std::vector<std::int64_t> targets = long_tail_counts(ds.num_classes, spec);

  std::vector<std::vector<std::int64_t>> by_class(ds.num_classes);
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(ds.samples.size()); ++i) {
    by_class[ds.samples[i].label].push_back(i);
  }
  std::vector<std::int64_t> keep;
  for (int c = 0; c < ds.num_classes; ++c) {
    auto& idx = by_class[c];
    if (static_cast<std::int64_t>(idx.size()) < targets[c]) {
      throw DataError("class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                      " samples, needs " + std::to_string(targets[c]));
    }
    // partial Fisher-Yates, then restore original order of the kept subset
    for (std::int64_t i = 0; i < targets[c]; ++i) {
      const std::int64_t j = i + static_cast<std::int64_t>(rng.below(idx.size() - i));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(targets[c]);
    std::sort(idx.begin(), idx.end());
    keep.insert(keep.end(), idx.begin(), idx.end());
  }
  std::sort(keep.begin(), keep.end());

  Dataset out;
  out.num_classes = ds.num_classes;
  out.dim = ds.dim;
  out.samples.reserve(keep.size());
  for (std::int64_t i : keep) out.samples.push_back(ds.samples[i]);
  out.recount();
  return out;
}

Partition dirichlet_partition(const Dataset& ds, int num_clients, double alpha,
                              std::int64_t min_per_client, RngStream& rng) {
  if (num_clients < 1) throw ConfigError("need at least 1 client");
  if (alpha <= 0.0) throw ConfigError("dirichlet alpha must be positive");
  const std::int64_t n = static_cast<std::int64_t>(ds.samples.size());
  if (static_cast<std::int64_t>(num_clients) * min_per_client > n) {
    throw ConfigError("min_per_client infeasible: " + std::to_string(num_clients) + " x " +
                      std::to_string(min_per_client) + " > " + std::to_string(n));
  }

  std::vector<std::vector<std::int64_t>> by_class(ds.num_classes);
  for (std::int64_t i = 0; i < n; ++i) by_class[ds.samples[i].label].push_back(i);

  auto draw = [&]() {
    Partition p;
    p.assignment.assign(num_clients, {});
    p.class_counts.assign(num_clients, std::vector<std::int64_t>(ds.num_classes, 0));
    for (int c = 0; c < ds.num_classes; ++c) {
      std::vector<std::int64_t> idx = by_class[c];
      for (std::size_t i = 0; i + 1 < idx.size(); ++i) {
        const std::size_t j = i + rng.below(idx.size() - i);
        std::swap(idx[i], idx[j]);
      }
      const Vec w = rng.dirichlet(alpha, num_clients);
      // largest-remainder rounding of w * |class c|
      const std::int64_t total = static_cast<std::int64_t>(idx.size());
      std::vector<std::int64_t> counts(num_clients);
      std::vector<std::pair<double, int>> remainders(num_clients);
      std::int64_t assigned = 0;
      for (int k = 0; k < num_clients; ++k) {
        const double exact = static_cast<double>(w[k]) * total;
        counts[k] = static_cast<std::int64_t>(std::floor(exact));
        remainders[k] = {exact - counts[k], k};
        assigned += counts[k];
      }
      std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
      });
      for (std::int64_t r = 0; r < total - assigned; ++r) ++counts[remainders[r % num_clients].second];
      std::int64_t pos = 0;
      for (int k = 0; k < num_clients; ++k) {
        for (std::int64_t i = 0; i < counts[k]; ++i) p.assignment[k].push_back(idx[pos++]);
        p.class_counts[k][c] += counts[k];
      }
    }
    return p;
  };

  auto smallest_size = [&](const Partition& p) {
    std::int64_t m = n;
    for (const auto& a : p.assignment) m = std::min<std::int64_t>(m, a.size());
    return m;
  };

  Partition p = draw();
  for (int retry = 0; retry < 50 && smallest_size(p) < min_per_client; ++retry) p = draw();

  // still short: move single samples from the largest client
  while (smallest_size(p) < min_per_client) {
    int small = 0, large = 0;
    for (int k = 0; k < num_clients; ++k) {
      if (p.assignment[k].size() < p.assignment[small].size()) small = k;
      if (p.assignment[k].size() > p.assignment[large].size()) large = k;
    }
    const std::int64_t moved = p.assignment[large].back();
    p.assignment[large].pop_back();
    p.assignment[small].push_back(moved);
    const int c = ds.samples[moved].label;
    --p.class_counts[large][c];
    ++p.class_counts[small][c];
  }
  for (auto& a : p.assignment) std::sort(a.begin(), a.end());
  return p;
}

void recount_partition(const Dataset& ds, Partition& p) {
  p.class_counts.assign(p.assignment.size(),
                        std::vector<std::int64_t>(ds.num_classes, 0));
  for (std::size_t k = 0; k < p.assignment.size(); ++k) {
    for (std::int64_t i : p.assignment[k]) {
      if (i < 0 || i >= static_cast<std::int64_t>(ds.samples.size())) {
        throw DataError("partition index out of range");
      }
      ++p.class_counts[k][ds.samples[i].label];
    }
  }
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("line 1: missing header");
  int num_classes = 0, dim = 0;
  if (std::sscanf(line.c_str(), "#classes=%d dim=%d", &num_classes, &dim) != 2 ||
      num_classes < 1 || dim < 1) {
    throw ParseError("line 1: expected '#classes=<C> dim=<m>'");
  }
  Dataset ds;
  ds.num_classes = num_classes;
  ds.dim = dim;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw ParseError("line " + std::to_string(line_no) + ": missing tab separator");
    }
    int label = 0;
    try {
      label = std::stoi(line.substr(0, tab));
    } catch (const std::exception&) {
      throw ParseError("line " + std::to_string(line_no) + ": bad label");
    }
    if (label < 0 || label >= num_classes) {
      throw ParseError("line " + std::to_string(line_no) + ": label out of range");
    }
    const std::vector<float> vals = parse_float_list(line.substr(tab + 1), line_no);
    if (static_cast<int>(vals.size()) != dim) {
      throw ParseError("line " + std::to_string(line_no) + ": expected " + std::to_string(dim) +
                       " features, got " + std::to_string(vals.size()));
    }
    Vec x(dim);
    for (int j = 0; j < dim; ++j) x[j] = vals[j];
    ds.samples.push_back({std::move(x), label});
  }
  if (ds.samples.empty()) throw DataError("dataset file has no samples: " + path);
  ds.recount();
  return ds;
}

void save_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write dataset file: " + path);
  out << "#classes=" << ds.num_classes << " dim=" << ds.dim << "\n";
  for (const Sample& s : ds.samples) {
    out << s.label << '\t';
    for (int j = 0; j < ds.dim; ++j) {
      if (j) out << ',';
      out << format_float(s.features[j]);
    }
    out << "\n";
  }
}

Partition load_partition(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open partition file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("line 1: missing header");
  int num_clients = 0;
  if (std::sscanf(line.c_str(), "#clients=%d", &num_clients) != 1 || num_clients < 1) {
    throw ParseError("line 1: expected '#clients=<K>'");
  }
  Partition p;
  p.assignment.assign(num_clients, {});
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw ParseError("line " + std::to_string(line_no) + ": missing tab separator");
    }
    int client = -1;
    try {
      client = std::stoi(line.substr(0, tab));
    } catch (const std::exception&) {
      throw ParseError("line " + std::to_string(line_no) + ": bad client id");
    }
    if (client < 0 || client >= num_clients) {
      throw ParseError("line " + std::to_string(line_no) + ": client id out of range");
    }
    std::vector<std::int64_t>& dst = p.assignment[client];
    const std::string rest = line.substr(tab + 1);
    std::size_t pos = 0;
    while (pos < rest.size()) {
      std::size_t next = rest.find(',', pos);
      if (next == std::string::npos) next = rest.size();
      try {
        dst.push_back(std::stoll(rest.substr(pos, next - pos)));
      } catch (const std::exception&) {
        throw ParseError("line " + std::to_string(line_no) + ": bad sample index");
      }
      pos = next + 1;
    }
  }
  return p;
}

void save_partition(const std::string& path, const Partition& p) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write partition file: " + path);
  out << "#clients=" << p.assignment.size() << "\n";
  for (std::size_t k = 0; k < p.assignment.size(); ++k) {
    out << k << '\t';
    for (std::size_t i = 0; i < p.assignment[k].size(); ++i) {
      if (i) out << ',';
      out << p.assignment[k][i];
    }
    out << "\n";
  }
}

}  // namespace fedsm
