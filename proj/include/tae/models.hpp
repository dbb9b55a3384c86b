#pragma once

// Desk-scale feature extractors and the expandable linear classifier head.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tae/autodiff.hpp"
#include "tae/binary_io.hpp"
#include "tae/error.hpp"
#include "tae/parameters.hpp"
#include "tae/rng.hpp"
#include "tae/tensor.hpp"

namespace tae {

enum class Architecture : std::uint8_t { Mlp = 0, SmallConv = 1 };

inline std::string to_string(Architecture a) { return a == Architecture::Mlp ? "mlp" : "small-conv"; }

inline Architecture parse_architecture(const std::string& s) {
  if (s == "mlp") return Architecture::Mlp;
  if (s == "small-conv") return Architecture::SmallConv;
  throw Error(ErrorCode::Config, "unknown architecture '" + s + "' (expected mlp or small-conv)");
}

/// Everything needed to rebuild an extractor: all integers.
///  - mlp: input -> hidden(relu) x hidden_layers -> feature_dim (linear)
///  - small-conv: conv3x3(hidden, relu) -> avgpool2 -> conv3x3(feature_dim, relu) -> global-avgpool
struct ArchitectureSpec {
  Architecture arch = Architecture::Mlp;
  Shape input_shape{32};  // per sample; [D] for mlp, [C,H,W] for small-conv
  std::size_t hidden = 64;
  std::size_t hidden_layers = 2;
  std::size_t feature_dim = 64;
};

class FeatureExtractor {
 public:
  FeatureExtractor() = default;

  /// Registers the extractor's parameters in `store` and initializes them
  /// (He-uniform for relu layers, fan-in uniform for the output layer, zero biases).
  static FeatureExtractor build(ParameterStore& store, const ArchitectureSpec& spec, Rng& rng) {
    FeatureExtractor fx;
    fx.spec_ = spec;
    const std::size_t before = store.scalar_count();
    auto uniform = [&rng](Shape shape, double bound) {
      Tensor t(std::move(shape));
      for (auto& v : t.values()) v = rng.uniform(-bound, bound);
      return t;
    };
    if (spec.arch == Architecture::Mlp) {
      if (spec.input_shape.size() != 1) throw Error(ErrorCode::Config, "mlp expects a flat input shape, got " + shape_str(spec.input_shape));
      std::size_t in = spec.input_shape[0];
      for (std::size_t l = 0; l <= spec.hidden_layers; ++l) {
        const bool last = l == spec.hidden_layers;
        const std::size_t out = last ? spec.feature_dim : spec.hidden;
        const double bound = last ? 1.0 / std::sqrt(static_cast<double>(in)) : std::sqrt(6.0 / static_cast<double>(in));
        fx.params_.push_back(store.add("fx.fc" + std::to_string(l) + ".w", uniform(Shape{in, out}, bound)));
        fx.params_.push_back(store.add("fx.fc" + std::to_string(l) + ".b", Tensor(Shape{out}, 0.0)));
        in = out;
      }
    } else {
      if (spec.input_shape.size() != 3) throw Error(ErrorCode::Config, "small-conv expects [C,H,W] input, got " + shape_str(spec.input_shape));
      if (spec.input_shape[1] < 2 || spec.input_shape[2] < 2) throw Error(ErrorCode::Config, "small-conv needs H,W >= 2");
      const std::size_t c = spec.input_shape[0];
      fx.params_.push_back(store.add("fx.conv0.w", uniform(Shape{spec.hidden, c, 3, 3}, std::sqrt(6.0 / static_cast<double>(c * 9)))));
      fx.params_.push_back(store.add("fx.conv0.b", Tensor(Shape{spec.hidden}, 0.0)));
      fx.params_.push_back(store.add("fx.conv1.w", uniform(Shape{spec.feature_dim, spec.hidden, 3, 3}, std::sqrt(6.0 / static_cast<double>(spec.hidden * 9)))));
      fx.params_.push_back(store.add("fx.conv1.b", Tensor(Shape{spec.feature_dim}, 0.0)));
    }
    fx.scalars_ = store.scalar_count() - before;
    fx.first_flat_ = before;
    return fx;
  }

  const ArchitectureSpec& spec() const noexcept { return spec_; }
  std::size_t feature_dim() const noexcept { return spec_.feature_dim; }
  const std::vector<ParamId>& params() const noexcept { return params_; }
  std::size_t scalar_count() const noexcept { return scalars_; }
  std::size_t first_flat() const noexcept { return first_flat_; }

  /// Batch [B, ...input_shape] -> features [B, feature_dim] on the tape.
  Var embed(Tape& tape, const ParameterStore& store, const Tensor& batch) const {
    Shape expected{batch.rows()};
    expected.insert(expected.end(), spec_.input_shape.begin(), spec_.input_shape.end());
    if (batch.shape() != expected)
      throw Error(ErrorCode::ShapeMismatch, "embed: batch shape " + shape_str(batch.shape()) + " does not match " + to_string(spec_.arch) +
                                                " input " + shape_str(spec_.input_shape));
    Var x = tape.constant(batch);
    if (spec_.arch == Architecture::Mlp) {
      const std::size_t layers = params_.size() / 2;
      for (std::size_t l = 0; l < layers; ++l) {
        x = add_bias(matmul(x, tape.param(store, params_[2 * l])), tape.param(store, params_[2 * l + 1]));
        if (l + 1 < layers) x = relu(x);
      }
      return x;
    }
    x = relu(conv2d(x, tape.param(store, params_[0]), tape.param(store, params_[1])));
    x = avgpool2(x);
    x = relu(conv2d(x, tape.param(store, params_[2]), tape.param(store, params_[3])));
    return global_avgpool(x);
  }

 private:
  ArchitectureSpec spec_;
  std::vector<ParamId> params_;
  std::size_t scalars_ = 0;
  std::size_t first_flat_ = 0;
};

/// Linear head over all seen classes. Each growth appends a new weight/bias
/// chunk, so rows of earlier classes keep their values and flat indices.
class ClassifierHead {
 public:
  struct Chunk {
    ParamId weight;  // [classes, feature_dim]
    ParamId bias;    // [classes]
    std::size_t classes = 0;
  };

  ClassifierHead() = default;
  explicit ClassifierHead(std::size_t feature_dim) : feature_dim_(feature_dim) {}

  std::size_t feature_dim() const noexcept { return feature_dim_; }
  std::size_t num_classes() const noexcept { return classes_; }
  const std::vector<Chunk>& chunks() const noexcept { return chunks_; }

  /// Appends `new_classes` rows initialized from U(-1/sqrt(d), 1/sqrt(d)) with zero bias.
  void grow(ParameterStore& store, std::size_t new_classes, Rng& rng) {
    if (new_classes < 1) throw Error(ErrorCode::InvalidArgument, "grow_head: new_classes must be >= 1");
    const double bound = 1.0 / std::sqrt(static_cast<double>(feature_dim_));
    Tensor w(Shape{new_classes, feature_dim_});
    for (auto& v : w.values()) v = rng.uniform(-bound, bound);
    const std::string tag = "head." + std::to_string(chunks_.size());
    Chunk c{store.add(tag + ".w", std::move(w)), store.add(tag + ".b", Tensor(Shape{new_classes}, 0.0)), new_classes};
    chunks_.push_back(c);
    classes_ += new_classes;
  }

  /// Flat indices [begin, end) of every head scalar in `store`.
  std::vector<std::size_t> flat_indices(const ParameterStore& store) const {
    std::vector<std::size_t> out;
    for (const auto& c : chunks_)
      for (ParamId id : {c.weight, c.bias})
        for (std::size_t k = 0; k < store.value(id).size(); ++k) out.push_back(store.flat_offset(id) + k);
    return out;
  }

  std::size_t scalar_count() const noexcept { return classes_ * (feature_dim_ + 1); }

  /// Features [B, feature_dim] -> logits [B, num_classes].
  Var predict(Tape& tape, const ParameterStore& store, Var features) const {
    if (features.shape().size() != 2 || features.shape()[1] != feature_dim_)
      throw Error(ErrorCode::ShapeMismatch, "predict: features " + shape_str(features.shape()) + " vs head feature_dim " + std::to_string(feature_dim_));
    if (chunks_.empty()) throw Error(ErrorCode::InvalidState, "predict: head has no classes");
    std::vector<Var> parts;
    for (const auto& c : chunks_)
      parts.push_back(add_bias(matmul(features, transpose(tape.param(store, c.weight))), tape.param(store, c.bias)));
    return parts.size() == 1 ? parts[0] : concat_cols(parts);
  }

 private:
  std::size_t feature_dim_ = 0;
  std::size_t classes_ = 0;
  std::vector<Chunk> chunks_;
};

/// Extractor and head sharing one parameter store. The extractor is
/// registered first, so its scalars occupy flat indices [0, extractor.scalar_count()).
struct Network {
  ParameterStore store;
  FeatureExtractor extractor;
  ClassifierHead head;

  static Network build(const ArchitectureSpec& spec, Rng& rng) {
    Network net;
    net.extractor = FeatureExtractor::build(net.store, spec, rng);
    net.head = ClassifierHead(spec.feature_dim);
    return net;
  }

  Var embed(Tape& tape, const Tensor& batch) const { return extractor.embed(tape, store, batch); }
  Var logits(Tape& tape, Var features) const { return head.predict(tape, store, features); }

  /// Plain forward pass: features for a batch, off any persistent tape.
  Tensor features(const Tensor& batch) const {
    Tape tape;
    return embed(tape, batch).value();
  }

  Tensor logits(const Tensor& batch) const {
    Tape tape;
    return logits(tape, embed(tape, batch)).value();
  }
};

// ---------------------------------------------------------------------------
// Checkpoint: "TAEC", u32 version, u8 arch, u32 feature_dim, u32 param count,
// then per parameter in flat order: u32 name length, name bytes, u8 ndim,
// ndim x u32 dims, numel x f64 values. All little-endian.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct ModelCheckpoint {
  Architecture arch = Architecture::Mlp;
  std::uint32_t feature_dim = 0;
  std::vector<NamedTensor> params;
};

inline ModelCheckpoint make_checkpoint(const Network& net) {
  ModelCheckpoint ck{net.extractor.spec().arch, static_cast<std::uint32_t>(net.extractor.feature_dim()), {}};
  for (std::size_t i = 0; i < net.store.count(); ++i) ck.params.push_back({net.store.name(ParamId{i}), net.store.value(ParamId{i})});
  return ck;
}

inline io::Bytes encode_checkpoint(const ModelCheckpoint& ck) {
  io::Writer w;
  w.magic("TAEC");
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(ck.arch));
  w.put<std::uint32_t>(ck.feature_dim);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ck.params.size()));
  for (const auto& p : ck.params) {
    w.str(p.name);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(p.value.rank()));
    for (std::size_t d : p.value.shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (double v : p.value.values()) w.put<double>(v);
  }
  return std::move(w.bytes());
}

inline ModelCheckpoint decode_checkpoint(const io::Bytes& bytes) {
  io::Reader r(bytes, "model checkpoint");
  r.expect_magic("TAEC");
  if (const auto v = r.get<std::uint32_t>("version"); v != kCheckpointVersion)
    throw Error(ErrorCode::BadVersion, "model checkpoint: unsupported version " + std::to_string(v));
  ModelCheckpoint ck;
  const auto arch = r.get<std::uint8_t>("architecture");
  if (arch > 1) throw Error(ErrorCode::BadDtype, "model checkpoint: unknown architecture " + std::to_string(arch));
  ck.arch = static_cast<Architecture>(arch);
  ck.feature_dim = r.get<std::uint32_t>("feature_dim");
  const auto count = r.get<std::uint32_t>("parameter count");
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor p;
    p.name = r.str("parameter name");
    const auto ndim = r.get<std::uint8_t>("ndim");
    Shape shape;
    std::uint64_t numel = 1;
    for (std::uint8_t d = 0; d < ndim; ++d) {
      shape.push_back(r.get<std::uint32_t>("dim"));
      numel *= shape.back();
      if (shape.back() == 0 || numel > (std::uint64_t{1} << 40)) throw Error(ErrorCode::DimOverflow, "model checkpoint: bad dims for '" + p.name + "'");
    }
    r.need(numel * sizeof(double), "parameter data");
    std::vector<double> data(numel);
    std::memcpy(data.data(), r.cursor(), numel * sizeof(double));
    r.skip(numel * sizeof(double));
    p.value = Tensor(std::move(shape), std::move(data));
    ck.params.push_back(std::move(p));
  }
  r.expect_end();
  return ck;
}

inline void save_checkpoint(const Network& net, const std::string& path) { io::write_file(path, encode_checkpoint(make_checkpoint(net))); }

inline ModelCheckpoint load_checkpoint(const std::string& path) { return decode_checkpoint(io::read_file(path)); }

/// Copies checkpoint values into a network of identical structure.
inline void restore_checkpoint(Network& net, const ModelCheckpoint& ck) {
  if (ck.arch != net.extractor.spec().arch || ck.feature_dim != net.extractor.feature_dim() || ck.params.size() != net.store.count())
    throw Error(ErrorCode::ShapeMismatch, "restore_checkpoint: checkpoint structure does not match network");
  for (std::size_t i = 0; i < ck.params.size(); ++i) {
    const ParamId id{i};
    if (ck.params[i].name != net.store.name(id) || ck.params[i].value.shape() != net.store.value(id).shape())
      throw Error(ErrorCode::ShapeMismatch, "restore_checkpoint: parameter '" + ck.params[i].name + "' does not match '" + net.store.name(id) + "'");
    net.store.value(id) = ck.params[i].value;
  }
}

}  // namespace tae
