#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "tae/data.hpp"
#include "tae/error.hpp"
#include "tae/rng.hpp"

namespace tae {

/// Gaussian blobs: one mean per class drawn uniformly on the sphere of
/// radius `radius` in R^D (D = prod(sample_shape)), isotropic noise `sigma`.
struct SyntheticSpec {
  std::size_t classes = 10;
  std::size_t train_per_class = 100;
  std::size_t test_per_class = 50;
  Shape sample_shape{32};
  double radius = 4.0;
  double sigma = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (classes < 2) throw Error(ErrorCode::Config, "synthetic: classes must be >= 2");
    if (!(sigma > 0.0)) throw Error(ErrorCode::Config, "synthetic: sigma must be > 0");
    if (!(radius >= 0.0)) throw Error(ErrorCode::Config, "synthetic: radius must be >= 0");
    if (train_per_class < 1) throw Error(ErrorCode::Config, "synthetic: train_per_class must be >= 1");
    if (sample_shape.empty() || shape_numel(sample_shape) == 0) throw Error(ErrorCode::Config, "synthetic: bad sample shape");
  }
};

struct SyntheticData {
  Tensor means;  // [classes, D]
  LabeledDataset train;
  LabeledDataset test;
};

namespace detail {

inline LabeledDataset sample_blobs(const SyntheticSpec& spec, const Tensor& means, std::size_t per_class, Rng rng) {
  const std::size_t D = means.dim(1);
  Shape shape{spec.classes * per_class};
  shape.insert(shape.end(), spec.sample_shape.begin(), spec.sample_shape.end());
  LabeledDataset ds{Tensor(shape), {}, spec.classes};
  ds.labels.reserve(spec.classes * per_class);
  std::size_t row = 0;
  for (std::size_t c = 0; c < spec.classes; ++c)
    for (std::size_t k = 0; k < per_class; ++k, ++row) {
      auto x = ds.samples.row(row);
      for (std::size_t j = 0; j < D; ++j) x[j] = static_cast<float>(means.at(c, j) + spec.sigma * rng.normal());
      ds.labels.push_back(static_cast<int>(c));
    }
  return ds;
}

}  // namespace detail

/// Samples are rounded to f32 so the data survives the file format exactly.
inline SyntheticData gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t D = shape_numel(spec.sample_shape);
  Rng mean_rng = Rng::stream(spec.seed, 1);
  Tensor means(Shape{spec.classes, D});
  for (std::size_t c = 0; c < spec.classes; ++c) {
    double norm = 0.0;
    auto row = means.row(c);
    while (norm < 1e-12) {
      norm = 0.0;
      for (auto& v : row) {
        v = mean_rng.normal();
        norm += v * v;
      }
      norm = std::sqrt(norm);
    }
    for (auto& v : row) v = v / norm * spec.radius;
  }
  SyntheticData out;
  out.means = means;
  out.train = detail::sample_blobs(spec, means, spec.train_per_class, Rng::stream(spec.seed, 2));
  if (spec.test_per_class > 0) out.test = detail::sample_blobs(spec, means, spec.test_per_class, Rng::stream(spec.seed, 3));
  return out;
}

}  // namespace tae
