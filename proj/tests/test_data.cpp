#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "acl/data.hpp"

using namespace acl;

namespace {

SyntheticSpec small_spec(std::uint64_t seed = 21) {
  SyntheticSpec s;
  s.train_per_class = 30;
  s.test_per_class = 20;
  s.seed = seed;
  return s;
}

std::string csv_of(const LabeledDataset& d) {
  std::ostringstream os;
  write_csv_dataset(d, os);
  return os.str();
}

LabeledDataset merged(const TaskStream& stream, bool test) {
  LabeledDataset out;
  for (const auto& t : stream.tasks) {
    const auto& src = test ? t.test : t.train;
    out.samples.insert(out.samples.end(), src.samples.begin(), src.samples.end());
  }
  return out;
}

}  // namespace

TEST(SyntheticSpec, Validation) {
  SyntheticSpec s;
  s.incremental_classes = 7;
  EXPECT_THROW(s.validate(), InvalidSpec);
  s = SyntheticSpec{};
  s.signal_dim = 17;
  EXPECT_THROW(s.validate(), InvalidSpec);
  s = SyntheticSpec{};
  s.spread = 0.0;
  EXPECT_THROW(s.validate(), InvalidSpec);
  EXPECT_NO_THROW(SyntheticSpec{}.validate());
}

TEST(GenerateSynthetic, SameSeedIsByteIdentical) {
  const SyntheticData a = generate_synthetic(small_spec());
  const SyntheticData b = generate_synthetic(small_spec());
  EXPECT_EQ(csv_of(a.pretrain_train), csv_of(b.pretrain_train));
  for (std::size_t k = 0; k < a.stream.size(); ++k) {
    EXPECT_EQ(csv_of(a.stream.tasks[k].train), csv_of(b.stream.tasks[k].train));
    EXPECT_EQ(csv_of(a.stream.tasks[k].test), csv_of(b.stream.tasks[k].test));
  }
  EXPECT_NE(csv_of(generate_synthetic(small_spec(22)).pretrain_train), csv_of(a.pretrain_train));
}

TEST(GenerateSynthetic, TasksAreDisjointAndExhaustive) {
  const SyntheticData d = generate_synthetic(small_spec());
  ASSERT_EQ(d.stream.size(), 4u);
  std::set<ClassId> seen;
  for (const auto& t : d.stream.tasks) {
    EXPECT_EQ(t.classes.size(), 2u);
    for (ClassId c : t.classes) EXPECT_TRUE(seen.insert(c).second) << "class " << c << " repeated";
    EXPECT_EQ(t.train.size(), 2u * 30u);
    EXPECT_EQ(t.test.size(), 2u * 20u);
    for (const auto& s : t.test.samples) EXPECT_TRUE(std::count(t.classes.begin(), t.classes.end(), s.y));
  }
  EXPECT_EQ(seen, (std::set<ClassId>{0, 1, 2, 3, 4, 5, 6, 7}));
  EXPECT_NO_THROW(d.stream.validate());
}

TEST(GenerateSynthetic, ZeroShiftIsIdentity) {
  SyntheticSpec s = small_spec();
  s.shift = 0.0;
  const SyntheticData d = generate_synthetic(s);
  EXPECT_TRUE(d.shift.is_identity());
  const Vector x{1.0, -2.0, 3.0};
  Vector padded(32, 0.0);
  std::copy(x.begin(), x.end(), padded.begin());
  EXPECT_EQ(d.shift.apply(padded), padded);
  EXPECT_FALSE(generate_synthetic(small_spec()).shift.is_identity());
}

TEST(Pretrain, ZeroEpochsReturnsInitialWeights) {
  const SyntheticData d = generate_synthetic(small_spec());
  Rng rng(1);
  const Backbone b0 = init_backbone(ModelConfig{}, rng);
  PretrainConfig cfg;
  cfg.epochs = 0;
  EXPECT_EQ(pretrain_backbone(b0, d.pretrain_train, cfg, rng), b0);
}

TEST(Pretrain, DeterministicAndWellAboveChance) {
  const SyntheticData d = generate_synthetic(small_spec());
  Rng init(3);
  const Backbone b0 = init_backbone(ModelConfig{}, init);
  Rng r1(4), r2(4);
  const Backbone b1 = pretrain_backbone(b0, d.pretrain_train, PretrainConfig{}, r1);
  const Backbone b2 = pretrain_backbone(b0, d.pretrain_train, PretrainConfig{}, r2);
  EXPECT_EQ(b1, b2);
  const double acc = ncm_accuracy(Model{b1, std::nullopt}, d.pretrain_train, d.pretrain_test);
  EXPECT_GT(acc, 3.0 / 10.0);
}

TEST(Pretrain, LargeShiftOpensAGap) {
  SyntheticSpec s = small_spec();
  s.shift = 1.5;  // 5 sigma
  const SyntheticData d = generate_synthetic(s);
  Rng init(3);
  Rng r(4);
  const Backbone b = pretrain_backbone(init_backbone(ModelConfig{}, init), d.pretrain_train, PretrainConfig{}, r);
  const Model m{b, std::nullopt};
  const double in_domain = ncm_accuracy(m, d.pretrain_train, d.pretrain_test);
  const double shifted = ncm_accuracy(m, merged(d.stream, false), merged(d.stream, true));
  EXPECT_LT(shifted, in_domain);
}

TEST(CsvDataset, RoundTrip) {
  const SyntheticData d = generate_synthetic(small_spec());
  std::istringstream in(csv_of(d.stream.tasks[0].train));
  const LabeledDataset back = read_csv_dataset(in);
  ASSERT_EQ(back.size(), d.stream.tasks[0].train.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back.samples[i].y, d.stream.tasks[0].train.samples[i].y);
    EXPECT_EQ(back.samples[i].x, d.stream.tasks[0].train.samples[i].x);
  }
}

TEST(CsvDataset, HandWrittenFixture) {
  std::istringstream in("y,x_1,x_2\n0,1.5,-2\n3,0,0.25\r\n1,1e-3,4\n");
  const LabeledDataset d = read_csv_dataset(in, "fixture");
  ASSERT_EQ(d.size(), 3u);
  EXPECT_EQ(d.dim(), 2u);
  EXPECT_EQ(d.samples[0].y, 0);
  EXPECT_EQ(d.samples[0].x, (Vector{1.5, -2.0}));
  EXPECT_EQ(d.samples[1].y, 3);
  EXPECT_EQ(d.samples[1].x, (Vector{0.0, 0.25}));
  EXPECT_EQ(d.samples[2].x, (Vector{1e-3, 4.0}));
  EXPECT_EQ(d.split, "fixture");
}

TEST(CsvDataset, RaggedRowNamesTheLine) {
  std::istringstream in("y,x_1,x_2\n0,1,2\n1,3\n");
  try {
    read_csv_dataset(in);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
}

TEST(CsvDataset, MalformedInputs) {
  std::istringstream bad_header("label,x_1\n0,1\n");
  EXPECT_THROW(read_csv_dataset(bad_header), ParseError);
  std::istringstream bad_number("y,x_1\n0,abc\n");
  EXPECT_THROW(read_csv_dataset(bad_number), ParseError);
  std::istringstream empty("");
  EXPECT_THROW(read_csv_dataset(empty), ParseError);
  EXPECT_THROW(load_csv_dataset("/nonexistent/file.csv"), ParseError);
}

TEST(LabeledDataset, InconsistentDimsRejected) {
  LabeledDataset d;
  d.samples = {{{1.0, 2.0}, 0}, {{1.0}, 1}};
  EXPECT_THROW(d.validate(), DimInconsistent);
}
