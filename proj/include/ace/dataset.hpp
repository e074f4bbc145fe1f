#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numbers>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "ace/errors.hpp"
#include "ace/format.hpp"
#include "ace/rng.hpp"
#include "ace/tensor.hpp"

namespace ace {

enum class Split { train, validation, test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "?";
}

struct LabeledDataset {
  std::vector<Tensor> features;
  std::vector<std::size_t> labels;
  std::size_t class_count = 0;
  Split split = Split::train;

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }
  std::size_t dim() const noexcept { return features.empty() ? 0 : features.front().size(); }

  void push_back(Tensor x, std::size_t y) {
    features.push_back(std::move(x));
    labels.push_back(y);
  }

  void validate() const {
    if (features.size() != labels.size()) throw DimensionError("features/labels length mismatch");
    const std::size_t d = dim();
    for (std::size_t i = 0; i < size(); ++i) {
      if (features[i].size() != d) throw DimensionError("ragged feature rows");
      if (!features[i].all_finite()) throw DomainError("non-finite feature in dataset");
      if (labels[i] >= class_count) throw DomainError("label out of range");
    }
  }
};

enum class Generator { blobs, rings };

struct DatasetSpec {
  Generator kind = Generator::blobs;
  std::size_t n_train = 4000;
  std::size_t n_validation = 1000;
  std::size_t n_test = 2000;
  std::size_t dim = 2;
  std::size_t classes = 4;
  // Blobs: radius of the circle the class centres sit on (unit-variance
  // clusters). Rings: radial gap between consecutive rings.
  double margin = 4.0;
  // Fraction of labels in every split replaced by a different class.
  double noise = 0.1;
  bool standardize = true;
};

struct DatasetSplits {
  LabeledDataset train;
  LabeledDataset validation;
  LabeledDataset test;
  std::vector<double> feature_mean;
  std::vector<double> feature_scale;
};

namespace detail {

inline Tensor sample_point(const DatasetSpec& spec, std::size_t label, Rng& rng) {
  std::vector<double> x(spec.dim);
  const double angle_step = 2.0 * std::numbers::pi / static_cast<double>(spec.classes);
  if (spec.kind == Generator::blobs) {
    for (double& v : x) v = rng.normal();
    x[0] += spec.margin * std::cos(angle_step * static_cast<double>(label));
    x[1] += spec.margin * std::sin(angle_step * static_cast<double>(label));
  } else {
    const double radius = 1.0 + spec.margin * static_cast<double>(label) + 0.25 * rng.normal();
    const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
    x[0] = radius * std::cos(theta);
    x[1] = radius * std::sin(theta);
    for (std::size_t j = 2; j < x.size(); ++j) x[j] = 0.25 * rng.normal();
  }
  return Tensor::vector(std::move(x));
}

inline LabeledDataset generate_split(const DatasetSpec& spec, std::size_t n, Split split,
                                     std::uint64_t seed) {
  Rng rng(seed);
  LabeledDataset ds;
  ds.class_count = spec.classes;
  ds.split = split;
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i % spec.classes;
  shuffle(labels, rng);
  for (std::size_t i = 0; i < n; ++i) ds.push_back(sample_point(spec, labels[i], rng), labels[i]);

  const auto flips = static_cast<std::size_t>(std::llround(spec.noise * static_cast<double>(n)));
  if (flips > 0) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    shuffle(order, rng);
    for (std::size_t k = 0; k < flips; ++k) {
      auto& y = ds.labels[order[k]];
      y = (y + 1 + rng.below(spec.classes - 1)) % spec.classes;
    }
  }
  return ds;
}

}  // namespace detail

inline void validate(const DatasetSpec& spec) {
  if (spec.classes < 2) throw ConfigError("dataset needs at least 2 classes");
  if (spec.dim < 2) throw ConfigError("dataset generators need dim >= 2");
  if (spec.n_train < spec.classes || spec.n_test < spec.classes) {
    throw ConfigError("train and test splits need n >= classes");
  }
  if (!(spec.noise >= 0.0 && spec.noise < 1.0)) throw ConfigError("noise rate must lie in [0,1)");
  if (!(spec.margin >= 0.0) || !std::isfinite(spec.margin)) throw ConfigError("margin must be >= 0");
}

/// Generates train/validation/test splits. Each split draws from its own
/// derived stream; when standardising, train-split statistics are applied to
/// all three.
inline DatasetSplits gen_dataset(const DatasetSpec& spec, std::uint64_t seed) {
  validate(spec);
  DatasetSplits out;
  out.train = detail::generate_split(spec, spec.n_train, Split::train, derive_seed(seed, {1}));
  out.validation =
      detail::generate_split(spec, spec.n_validation, Split::validation, derive_seed(seed, {2}));
  out.test = detail::generate_split(spec, spec.n_test, Split::test, derive_seed(seed, {3}));

  out.feature_mean.assign(spec.dim, 0.0);
  out.feature_scale.assign(spec.dim, 1.0);
  if (spec.standardize) {
    const double n = static_cast<double>(out.train.size());
    for (const auto& x : out.train.features) {
      for (std::size_t j = 0; j < spec.dim; ++j) out.feature_mean[j] += x[j] / n;
    }
    std::vector<double> var(spec.dim, 0.0);
    for (const auto& x : out.train.features) {
      for (std::size_t j = 0; j < spec.dim; ++j) {
        const double d = x[j] - out.feature_mean[j];
        var[j] += d * d / n;
      }
    }
    for (std::size_t j = 0; j < spec.dim; ++j) {
      out.feature_scale[j] = var[j] > 0.0 ? std::sqrt(var[j]) : 1.0;
    }
    for (auto* ds : {&out.train, &out.validation, &out.test}) {
      for (auto& x : ds->features) {
        for (std::size_t j = 0; j < spec.dim; ++j) {
          x[j] = (x[j] - out.feature_mean[j]) / out.feature_scale[j];
        }
      }
    }
  }
  return out;
}

// CSV with header `label,f0,f1,...`.
inline void write_dataset_csv(std::ostream& os, const LabeledDataset& ds) {
  os << "label";
  for (std::size_t j = 0; j < ds.dim(); ++j) os << ",f" << j;
  os << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    os << ds.labels[i];
    for (double v : ds.features[i]) os << ',' << format_exact(v);
    os << '\n';
  }
}

// `class_count` of 0 infers max(label) + 1.
inline LabeledDataset read_dataset_csv(std::istream& is, std::size_t class_count = 0,
                                       Split split = Split::test) {
  std::string line;
  if (!std::getline(is, line)) throw ConfigError("dataset CSV is empty");
  const auto header = ace::split(line, ',');
  if (header.empty() || header[0] != "label") throw ConfigError("dataset CSV must start with 'label'");
  for (std::size_t j = 1; j < header.size(); ++j) {
    if (header[j] != "f" + std::to_string(j - 1)) {
      throw ConfigError("unexpected dataset CSV column '" + header[j] + "'");
    }
  }
  const std::size_t d = header.size() - 1;
  LabeledDataset ds;
  ds.split = split;
  std::size_t max_label = 0;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = ace::split(line, ',');
    if (fields.size() != d + 1) {
      throw ConfigError("dataset CSV line " + std::to_string(line_no) + " has " +
                        std::to_string(fields.size()) + " fields, expected " +
                        std::to_string(d + 1));
    }
    const auto y = static_cast<std::size_t>(parse_unsigned(fields[0]));
    std::vector<double> x(d);
    for (std::size_t j = 0; j < d; ++j) x[j] = parse_double(fields[j + 1]);
    max_label = std::max(max_label, y);
    ds.push_back(Tensor::vector(std::move(x)), y);
  }
  if (ds.empty()) throw ConfigError("dataset CSV has no rows");
  ds.class_count = class_count ? class_count : max_label + 1;
  ds.validate();
  return ds;
}

}  // namespace ace
