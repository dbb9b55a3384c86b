#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "tae/models.hpp"

using namespace tae;

namespace {

Tensor random_batch(Rng& rng, Shape shape) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(-2.0, 2.0);
  return t;
}

ArchitectureSpec mlp_spec(std::size_t in, std::size_t hidden, std::size_t layers, std::size_t out) {
  ArchitectureSpec s;
  s.arch = Architecture::Mlp;
  s.input_shape = {in};
  s.hidden = hidden;
  s.hidden_layers = layers;
  s.feature_dim = out;
  return s;
}

bool same_bits(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST(Embed, ZeroWeightMlpGivesZeroFeatures) {
  Rng rng(1);
  Network net = Network::build(mlp_spec(5, 4, 2, 3), rng);
  for (std::size_t p = 0; p < net.store.count(); ++p)
    for (auto& v : net.store.value(ParamId{p}).values()) v = 0.0;
  const Tensor f = net.features(random_batch(rng, {4, 5}));
  EXPECT_EQ(f.shape(), (Shape{4, 3}));
  for (double v : f.values()) EXPECT_EQ(v, 0.0);
}

TEST(Embed, IdentityLinearLayerIsIdentity) {
  Rng rng(2);
  Network net = Network::build(mlp_spec(4, 8, 0, 4), rng);
  auto& w = net.store.value(net.store.find("fx.fc0.w"));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) w.at(i, j) = i == j ? 1.0 : 0.0;
  const Tensor x = random_batch(rng, {3, 4});
  EXPECT_EQ(net.features(x).values(), x.values());
}

TEST(Embed, FixedSeedIsReproducible) {
  for (auto arch : {Architecture::Mlp, Architecture::SmallConv}) {
    ArchitectureSpec spec = mlp_spec(6, 5, 2, 4);
    if (arch == Architecture::SmallConv) {
      spec.arch = arch;
      spec.input_shape = {2, 4, 4};
    }
    Rng a(77), b(77), in(3);
    Shape batch_shape{3};
    batch_shape.insert(batch_shape.end(), spec.input_shape.begin(), spec.input_shape.end());
    const Tensor x = random_batch(in, batch_shape);
    EXPECT_TRUE(same_bits(Network::build(spec, a).features(x), Network::build(spec, b).features(x))) << to_string(arch);
  }
}

TEST(Embed, WrongInputShapeIsStructuredError) {
  Rng rng(3);
  Network net = Network::build(mlp_spec(6, 4, 1, 3), rng);
  try {
    net.features(Tensor(Shape{2, 5}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
    EXPECT_NE(std::string(e.what()).find("[2,5]"), std::string::npos);
  }
}

TEST(Embed, SmallConvShapes) {
  Rng rng(4);
  ArchitectureSpec spec;
  spec.arch = Architecture::SmallConv;
  spec.input_shape = {3, 6, 6};
  spec.hidden = 5;
  spec.feature_dim = 7;
  Network net = Network::build(spec, rng);
  EXPECT_EQ(net.features(random_batch(rng, {2, 3, 6, 6})).shape(), (Shape{2, 7}));
  EXPECT_EQ(net.extractor.scalar_count(), 5u * 3 * 9 + 5 + 7u * 5 * 9 + 7);
}

TEST(Predict, ZeroHeadGivesZeroLogits) {
  Rng rng(5);
  Network net = Network::build(mlp_spec(3, 4, 1, 4), rng);
  net.head.grow(net.store, 3, rng);
  for (const auto& c : net.head.chunks())
    for (ParamId id : {c.weight, c.bias})
      for (auto& v : net.store.value(id).values()) v = 0.0;
  const Tensor z = net.logits(random_batch(rng, {2, 3}));
  EXPECT_EQ(z.shape(), (Shape{2, 3}));
  for (double v : z.values()) EXPECT_EQ(v, 0.0);
}

TEST(Predict, OneHotRowsSelectFeatures) {
  Rng rng(6);
  ClassifierHead head(4);
  ParameterStore store;
  head.grow(store, 2, rng);
  auto& w = store.value(head.chunks()[0].weight);
  for (auto& v : w.values()) v = 0.0;
  w.at(0, 2) = 1.0;
  w.at(1, 0) = 1.0;
  Tape t;
  Var f = t.constant(Tensor::matrix({{1, 2, 3, 4}, {5, 6, 7, 8}}));
  EXPECT_EQ(head.predict(t, store, f).value().values(), (std::vector<double>{3, 1, 7, 5}));
}

TEST(Predict, MatchesHandMultiply) {
  Rng rng(7);
  ClassifierHead head(5);
  ParameterStore store;
  head.grow(store, 1, rng);
  head.grow(store, 2, rng);
  for (const auto& c : head.chunks())
    for (auto& v : store.value(c.bias).values()) v = rng.uniform(-1, 1);
  const Tensor f = random_batch(rng, {4, 5});
  Tape t;
  const Tensor z = head.predict(t, store, t.constant(f)).value();
  ASSERT_EQ(z.shape(), (Shape{4, 3}));
  for (std::size_t i = 0; i < 4; ++i) {
    std::size_t col = 0;
    for (const auto& c : head.chunks()) {
      const Tensor& w = store.value(c.weight);
      const Tensor& b = store.value(c.bias);
      for (std::size_t r = 0; r < c.classes; ++r, ++col) {
        double s = b[r];
        for (std::size_t k = 0; k < 5; ++k) s += f.at(i, k) * w.at(r, k);
        EXPECT_NEAR(z.at(i, col), s, 1e-12);
      }
    }
  }
}

TEST(Predict, FeatureDimMismatch) {
  Rng rng(8);
  ClassifierHead head(3);
  ParameterStore store;
  head.grow(store, 2, rng);
  Tape t;
  EXPECT_THROW(head.predict(t, store, t.constant(Tensor(Shape{1, 4}))), Error);
}

TEST(GrowHead, PreservesOldRowsAndFlatIndices) {
  Rng rng(9);
  Network net = Network::build(mlp_spec(3, 4, 1, 4), rng);
  net.head.grow(net.store, 5, rng);
  const auto flat_before = net.head.flat_indices(net.store);
  const auto values_before = net.store.flatten();
  net.head.grow(net.store, 3, rng);
  EXPECT_EQ(net.head.num_classes(), 8u);
  const auto flat_after = net.head.flat_indices(net.store);
  ASSERT_GE(flat_after.size(), flat_before.size());
  EXPECT_TRUE(std::equal(flat_before.begin(), flat_before.end(), flat_after.begin()));
  for (std::size_t f = 0; f < values_before.size(); ++f) {
    const double now = net.store.scalar(f);
    EXPECT_EQ(std::memcmp(&now, &values_before[f], sizeof now), 0) << f;
  }
  EXPECT_EQ(net.head.scalar_count(), 8u * 5);
}

TEST(GrowHead, SuccessiveGrowsMatchCombinedInOldRows) {
  Rng a(10), b(10);
  ClassifierHead h1(3), h2(3);
  ParameterStore s1, s2;
  h1.grow(s1, 2, a);
  h2.grow(s2, 2, b);
  h1.grow(s1, 1, a);
  h1.grow(s1, 2, a);
  h2.grow(s2, 3, b);
  EXPECT_TRUE(same_bits(s1.value(h1.chunks()[0].weight), s2.value(h2.chunks()[0].weight)));
  EXPECT_EQ(h1.num_classes(), h2.num_classes());
  EXPECT_THROW(h1.grow(s1, 0, a), Error);
}

TEST(GrowHead, InitWithinFanInBound) {
  Rng rng(11);
  ClassifierHead head(16);
  ParameterStore store;
  head.grow(store, 4, rng);
  for (double v : store.value(head.chunks()[0].weight).values()) EXPECT_LE(std::abs(v), 0.25);
  for (double v : store.value(head.chunks()[0].bias).values()) EXPECT_EQ(v, 0.0);
}

TEST(Checkpoint, BitExactRoundTrip) {
  Rng rng(12);
  Network net = Network::build(mlp_spec(5, 6, 2, 4), rng);
  net.head.grow(net.store, 3, rng);
  const auto bytes = encode_checkpoint(make_checkpoint(net));
  ASSERT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "TAEC");
  const auto ck = decode_checkpoint(bytes);
  EXPECT_EQ(ck.arch, Architecture::Mlp);
  EXPECT_EQ(ck.feature_dim, 4u);
  EXPECT_EQ(encode_checkpoint(ck), bytes);

  Rng other(99);
  Network fresh = Network::build(mlp_spec(5, 6, 2, 4), other);
  fresh.head.grow(fresh.store, 3, other);
  restore_checkpoint(fresh, ck);
  EXPECT_TRUE(fresh.store.bit_equal(net.store));

  const auto path = (std::filesystem::temp_directory_path() / "tae_ck_test.model").string();
  save_checkpoint(net, path);
  EXPECT_EQ(encode_checkpoint(load_checkpoint(path)), bytes);
  std::filesystem::remove(path);
}

TEST(Checkpoint, CorruptionIsDetected) {
  Rng rng(13);
  Network net = Network::build(mlp_spec(3, 3, 1, 2), rng);
  auto bytes = encode_checkpoint(make_checkpoint(net));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad_magic), Error);
  try {
    decode_checkpoint(bad_magic);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BadMagic);
  }
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  try {
    decode_checkpoint(truncated);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Truncated);
  }
  auto bad_version = bytes;
  bad_version[4] = 9;
  try {
    decode_checkpoint(bad_version);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BadVersion);
  }
}

TEST(Architecture, ParseNames) {
  EXPECT_EQ(parse_architecture("mlp"), Architecture::Mlp);
  EXPECT_EQ(parse_architecture("small-conv"), Architecture::SmallConv);
  EXPECT_THROW(parse_architecture("resnet"), Error);
}
