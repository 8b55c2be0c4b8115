#pragma once

// Labeled point sets with split and provenance metadata, synthetic generation
// from Gaussian mixtures, CSV interchange, and seeded poisoning.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "dsaforge/oracles.hpp"

namespace dsaforge {

enum class Split : std::uint8_t { Train, Test, Holdout };
enum class Provenance : std::uint8_t { Clean, Poisoned };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Test: return "test";
    default: return "holdout";
  }
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  if (s == "holdout") return Split::Holdout;
  throw ConfigError("unknown split '" + s + "'");
}

using TriggerMap = std::function<std::vector<double>(std::span<const double>)>;

struct Dataset {
  int dim = 0;
  int num_classes = 0;
  std::vector<double> x;  // row-major n x dim
  std::vector<int> labels;
  std::vector<Split> split;
  std::vector<Provenance> provenance;

  std::size_t size() const { return labels.size(); }

  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(&x[i * dim], static_cast<std::size_t>(dim));
  }

  std::span<double> row(std::size_t i) {
    return std::span<double>(&x[i * dim], static_cast<std::size_t>(dim));
  }

  std::vector<int> rows_in(Split s) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < size(); ++i)
      if (split[i] == s) out.push_back(static_cast<int>(i));
    return out;
  }

  // Per-dimension standard deviation over the given split (clean rows).
  std::vector<double> per_dim_std(Split s) const {
    std::vector<double> mean(dim, 0.0), sq(dim, 0.0);
    std::size_t n = 0;
    for (std::size_t i = 0; i < size(); ++i) {
      if (split[i] != s || provenance[i] != Provenance::Clean) continue;
      ++n;
      for (int j = 0; j < dim; ++j) {
        mean[j] += x[i * dim + j];
        sq[j] += x[i * dim + j] * x[i * dim + j];
      }
    }
    std::vector<double> sd(dim, 0.0);
    for (int j = 0; j < dim; ++j) {
      mean[j] /= static_cast<double>(n);
      sd[j] = std::sqrt(std::max(sq[j] / static_cast<double>(n) - mean[j] * mean[j], 0.0));
    }
    return sd;
  }

  void check() const {
    if (size() == 0) throw ConfigError("Dataset: empty");
    for (std::size_t i = 0; i < size(); ++i) {
      if (labels[i] < 0 || labels[i] >= num_classes)
        throw ConfigError("Dataset: label out of range at row " + std::to_string(i));
      if (split[i] == Split::Holdout && provenance[i] == Provenance::Poisoned)
        throw ConfigError("Dataset: poisoned row in holdout at " + std::to_string(i));
    }
  }
};

inline Dataset gen_synthetic(const GaussianMixtureSpec& spec, int n, std::uint64_t seed,
                             const std::array<double, 3>& split_fractions) {
  spec.validate();
  if (n < 1) throw ConfigError("gen_synthetic: n must be >= 1");
  const double fsum = split_fractions[0] + split_fractions[1] + split_fractions[2];
  if (std::abs(fsum - 1.0) > 1e-9) throw ConfigError("gen_synthetic: split fractions must sum to 1");
  Rng rng(seed);
  Dataset d;
  d.dim = spec.dim();
  d.num_classes = spec.num_classes();
  d.x.resize(static_cast<std::size_t>(n) * d.dim);
  d.labels.resize(n);
  d.split.resize(n);
  d.provenance.assign(n, Provenance::Clean);
  std::vector<double> cum;
  double acc = 0.0;
  for (const auto& c : spec.components) cum.push_back(acc += c.weight);
  const int n_train = static_cast<int>(std::floor(split_fractions[0] * n));
  const int n_test = static_cast<int>(std::floor(split_fractions[1] * n));
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    std::size_t j = 0;
    while (j + 1 < cum.size() && u >= cum[j]) ++j;
    const auto& c = spec.components[j];
    for (int k = 0; k < d.dim; ++k)
      d.x[static_cast<std::size_t>(i) * d.dim + k] = c.mean[k] + std::sqrt(c.cov[k]) * rng.normal();
    d.labels[i] = c.label;
    d.split[i] = i < n_train ? Split::Train : (i < n_train + n_test ? Split::Test : Split::Holdout);
  }
  return d;
}

// CSV schema: x1..xd,label,split
inline void save_csv(const Dataset& d, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("save_csv: cannot open " + path.string());
  for (int j = 0; j < d.dim; ++j) out << "x" << (j + 1) << ",";
  out << "label,split\n";
  char buf[64];
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (int j = 0; j < d.dim; ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", d.x[i * d.dim + j]);
      out << buf << ",";
    }
    out << d.labels[i] << "," << to_string(d.split[i]) << "\n";
  }
}

inline Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("load_csv: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("load_csv: empty file " + path.string());
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  if (header.size() < 3 || header[header.size() - 2] != "label" || header.back() != "split")
    throw ConfigError("load_csv: header must be x1..xd,label,split");
  const int dim = static_cast<int>(header.size()) - 2;
  for (int j = 0; j < dim; ++j)
    if (header[j] != "x" + std::to_string(j + 1))
      throw ConfigError("load_csv: unexpected header column '" + header[j] + "'");
  Dataset d;
  d.dim = dim;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (static_cast<int>(cells.size()) != dim + 2)
      throw ConfigError("load_csv: line " + std::to_string(line_no) + ": expected " +
                        std::to_string(dim + 2) + " cells, got " + std::to_string(cells.size()));
    for (int j = 0; j < dim; ++j) {
      std::size_t pos = 0;
      double v = 0.0;
      try {
        v = std::stod(cells[j], &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (pos != cells[j].size() || cells[j].empty())
        throw ConfigError("load_csv: line " + std::to_string(line_no) + ": non-numeric cell '" +
                          cells[j] + "'");
      d.x.push_back(v);
    }
    std::size_t pos = 0;
    int lbl = 0;
    try {
      lbl = std::stoi(cells[dim], &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != cells[dim].size() || lbl < 0)
      throw ConfigError("load_csv: line " + std::to_string(line_no) + ": bad label '" +
                        cells[dim] + "'");
    d.labels.push_back(lbl);
    try {
      d.split.push_back(split_from_string(cells[dim + 1]));
    } catch (const ConfigError&) {
      throw ConfigError("load_csv: line " + std::to_string(line_no) + ": bad split '" +
                        cells[dim + 1] + "'");
    }
    d.provenance.push_back(Provenance::Clean);
  }
  if (d.labels.empty()) throw ConfigError("load_csv: no data rows in " + path.string());
  d.num_classes = *std::max_element(d.labels.begin(), d.labels.end()) + 1;
  return d;
}

// Uniform without-replacement selection of floor(rho * n_train) train rows.
inline std::vector<int> select_poison_rows(const Dataset& d, double rho, std::uint64_t seed) {
  if (!(rho > 0.0 && rho < 1.0)) throw ConfigError("select_poison_rows: rho outside (0,1)");
  std::vector<int> train = d.rows_in(Split::Train);
  const int m = static_cast<int>(std::floor(rho * static_cast<double>(train.size())));
  Rng rng(seed);
  // Partial Fisher-Yates.
  for (int i = 0; i < m; ++i) {
    const int j = i + rng.uniform_int(static_cast<int>(train.size()) - i);
    std::swap(train[i], train[j]);
  }
  train.resize(m);
  std::sort(train.begin(), train.end());
  return train;
}

inline Dataset poison_dataset(const Dataset& d, const TriggerMap& trigger, double rho, int t,
                              std::uint64_t seed) {
  if (t < 0 || t >= d.num_classes) throw ConfigError("poison_dataset: target class out of range");
  Dataset out = d;
  for (int i : select_poison_rows(d, rho, seed)) {
    const auto xt = trigger(d.row(i));
    std::copy(xt.begin(), xt.end(), out.row(i).begin());
    out.labels[i] = t;
    out.provenance[i] = Provenance::Poisoned;
  }
  return out;
}

}  // namespace dsaforge
