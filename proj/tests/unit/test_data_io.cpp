#include <gtest/gtest.h>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

#include "defa/data_io.hpp"
#include "fixtures.hpp"

using namespace defa;

namespace {

EmbeddingFile random_embeddings(std::uint64_t seed, int count, int dim) {
  Rng rng(seed);
  EmbeddingFile f;
  f.dim = dim;
  f.data = rng.normal_matrix(count, dim, 1.0).cast<float>().cast<double>();
  for (int i = 0; i < count; ++i) f.ids.push_back("img_" + std::to_string(i));
  return f;
}

FormatError::Kind decode_kind(std::string_view bytes) {
  try {
    decode_embeddings(bytes);
  } catch (const FormatError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "accepted malformed bytes";
  return FormatError::Kind::kIo;
}

void put_u32(std::string& s, std::size_t at, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s[at + i] = static_cast<char>((v >> (8 * i)) & 0xFF);
}

}  // namespace

TEST(Embeddings, EmptyFileIsSixteenBytes) {
  EmbeddingFile f;
  f.dim = 5;
  const std::string bytes = encode_embeddings(f);
  EXPECT_EQ(bytes.size(), 16u);
  const EmbeddingFile back = decode_embeddings(bytes);
  EXPECT_EQ(back.count(), 0u);
  EXPECT_EQ(back.dim, 5);
}

TEST(Embeddings, HeaderLayout) {
  EmbeddingFile f = random_embeddings(1, 3, 2);
  const std::string bytes = encode_embeddings(f);
  EXPECT_EQ(bytes.substr(0, 4), "DEFA");
  EXPECT_EQ(bytes.substr(4, 12), std::string("\x01\0\0\0\x03\0\0\0\x02\0\0\0", 12));
  std::size_t id_bytes = 0;
  for (const auto& id : f.ids) id_bytes += id.size() + 1;
  EXPECT_EQ(bytes.size(), 16 + 4 * 3 * 2 + id_bytes);
  float first = 0;
  std::memcpy(&first, bytes.data() + 16, 4);
  EXPECT_EQ(static_cast<double>(first), f.data(0, 0));
  EXPECT_EQ(bytes.substr(bytes.size() - 6), "img_2\n");
}

TEST(Embeddings, RoundTripIsBitwise) {
  const EmbeddingFile f = random_embeddings(2, 10, 8);
  const std::string path = defa::testing::scratch_dir("emb") + "/rt.bin";
  write_embeddings(path, f);
  const EmbeddingFile back = read_embeddings(path);
  EXPECT_EQ(back.ids, f.ids);
  EXPECT_EQ(back.dim, 8);
  ASSERT_EQ(back.data.rows(), 10);
  EXPECT_EQ(std::memcmp(back.data.data(), f.data.data(), sizeof(double) * 80), 0);
  EXPECT_EQ(encode_embeddings(back), encode_embeddings(f));
}

TEST(Embeddings, Utf8IdsSurvive) {
  EmbeddingFile f = random_embeddings(3, 2, 2);
  f.ids = {"caf\xC3\xA9", "\xE5\x9F\x8E"};
  EXPECT_EQ(decode_embeddings(encode_embeddings(f)).ids, f.ids);
}

TEST(Embeddings, RejectsMalformed) {
  const std::string good = encode_embeddings(random_embeddings(4, 4, 3));
  std::string bad = good;
  bad[0] = 'X';
  EXPECT_EQ(decode_kind(bad), FormatError::Kind::kBadMagic);
  bad = good;
  put_u32(bad, 4, 2);
  EXPECT_EQ(decode_kind(bad), FormatError::Kind::kBadVersion);
  EXPECT_EQ(decode_kind(good.substr(0, 10)), FormatError::Kind::kTruncated);
  EXPECT_EQ(decode_kind(good.substr(0, 40)), FormatError::Kind::kTruncated);
  EXPECT_EQ(decode_kind(good.substr(0, good.size() - 1)), FormatError::Kind::kTruncated);
  EXPECT_EQ(decode_kind(good + "x"), FormatError::Kind::kTrailingBytes);
  bad = good;
  put_u32(bad, 8, 1u << 30);
  EXPECT_EQ(decode_kind(bad), FormatError::Kind::kTruncated);
  bad = good;
  put_u32(bad, 16, 0x7FC00000u);  // NaN
  EXPECT_EQ(decode_kind(bad), FormatError::Kind::kNonFinite);
  bad = good;
  put_u32(bad, 20, 0x7F800000u);  // +inf
  EXPECT_EQ(decode_kind(bad), FormatError::Kind::kNonFinite);
  bad = good;
  bad.replace(bad.size() - 6, 5, "img_0");
  EXPECT_EQ(decode_kind(bad), FormatError::Kind::kDuplicateId);
  bad = good;
  bad[bad.size() - 2] = '\xFF';
  EXPECT_EQ(decode_kind(bad), FormatError::Kind::kBadId);
  bad = good;
  bad.insert(bad.size() - 6, "\n");  // an empty id
  EXPECT_EQ(decode_kind(bad), FormatError::Kind::kBadId);
  EXPECT_THROW(read_embeddings("/nonexistent/emb.bin"), FormatError);
}

TEST(Embeddings, EncoderRejectsBadInput) {
  EmbeddingFile f = random_embeddings(5, 2, 2);
  f.ids[1] = f.ids[0];
  EXPECT_THROW(encode_embeddings(f), FormatError);
  f = random_embeddings(5, 2, 2);
  f.ids[0] = "a\nb";
  EXPECT_THROW(encode_embeddings(f), FormatError);
  f = random_embeddings(5, 2, 2);
  f.dim = 3;
  EXPECT_THROW(encode_embeddings(f), FormatError);
}

TEST(Embeddings, EveryTruncationRejected) {
  const std::string good = encode_embeddings(random_embeddings(6, 5, 4));
  for (std::size_t n = 0; n < good.size(); ++n) {
    EXPECT_THROW(decode_embeddings(std::string_view(good).substr(0, n)), FormatError) << n;
  }
}

TEST(Manifest, ParseAndFormatRoundTrip) {
  const std::string text =
      "# comment\n"
      "attrs:\told\tnew\n"
      "objs:\tcastle\tcar\n"
      "pair\ttest\tunseen\tnew\tcastle\n"
      "i0\told\tcastle\ttrain\n"
      "i1\tnew\tcar\ttrain\n"
      "i2\tnew\tcastle\ttest\r\n"
      "\n";
  const Manifest m = parse_manifest(text);
  EXPECT_EQ(m.attrs, (std::vector<std::string>{"old", "new"}));
  EXPECT_EQ(m.objs, (std::vector<std::string>{"castle", "car"}));
  ASSERT_EQ(m.pairs.size(), 1u);
  EXPECT_FALSE(m.pairs[0].seen);
  ASSERT_EQ(m.samples.size(), 3u);
  EXPECT_EQ(m.samples[2].split, "test");
  const Manifest again = parse_manifest(format_manifest(m));
  EXPECT_EQ(format_manifest(again), format_manifest(m));

  const CompositionSpace train = build_space(m, "train");
  EXPECT_EQ(train.seen().size(), 2u);
  const CompositionSpace test = build_space(m, "test");
  EXPECT_TRUE(test.seen().empty());
  EXPECT_EQ(test.unseen(), (std::vector<Pair>{{1, 0}}));
}

TEST(Manifest, RejectsMalformed) {
  auto kind = [](const std::string& text) {
    try {
      parse_manifest(text);
    } catch (const FormatError& e) {
      return e.kind();
    }
    return FormatError::Kind::kIo;
  };
  const std::string head = "attrs:\ta\nobjs:\to\n";
  EXPECT_EQ(kind("objs:\to\n"), FormatError::Kind::kMissingEntry);
  EXPECT_EQ(kind(head + "attrs:\tb\n"), FormatError::Kind::kSyntax);
  EXPECT_EQ(kind(head + "i0\ta\to\n"), FormatError::Kind::kSyntax);
  EXPECT_EQ(kind(head + "i0\ta\to\tdev\n"), FormatError::Kind::kSyntax);
  EXPECT_EQ(kind(head + "pair\ttrain\tunseen\ta\to\n"), FormatError::Kind::kSyntax);
  EXPECT_EQ(kind(head + "pair\ttest\tmaybe\ta\to\n"), FormatError::Kind::kSyntax);
  EXPECT_EQ(kind(head + "\ta\to\ttrain\n"), FormatError::Kind::kSyntax);
  EXPECT_EQ(kind(head + "i0\t\xFF\to\ttrain\n"), FormatError::Kind::kSyntax);

  const Manifest unknown = parse_manifest(head + "i0\tb\to\ttrain\n");
  EXPECT_THROW(build_space(unknown, "train"), FormatError);
}

TEST(Manifest, MissingEmbeddingIsReported) {
  const Manifest m = parse_manifest("attrs:\ta\nobjs:\to\ni0\ta\to\ttrain\nzz\ta\to\ttrain\n");
  EmbeddingFile f = random_embeddings(7, 1, 2);
  f.ids = {"i0"};
  try {
    assemble_dataset(m, f);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind(), FormatError::Kind::kMissingEntry);
    EXPECT_NE(std::string(e.what()).find("zz"), std::string::npos);
  }
}

TEST(Manifest, UnseenPairSeenInTrainingIsRejected) {
  const Manifest m = parse_manifest(
      "attrs:\ta\tb\nobjs:\to\npair\ttest\tunseen\ta\to\ni0\ta\to\ttrain\n");
  EXPECT_THROW(build_space(m, "test"), SpaceError);
}

TEST(Manifest, MitStatesSplitSizes) {
  Manifest m;
  for (int a = 0; a < 115; ++a) m.attrs.push_back("attr" + std::to_string(a));
  for (int o = 0; o < 245; ++o) m.objs.push_back("obj" + std::to_string(o));
  // Deterministic disjoint pair layout over the 28175-pair grid.
  std::vector<Pair> grid;
  for (int a = 0; a < 115; ++a)
    for (int o = 0; o < 245; ++o) grid.push_back({a, o});
  Rng rng(8);
  rng.shuffle(grid);
  auto line = [&](const char* split, bool seen, Pair p) {
    m.pairs.push_back({split, seen, m.attrs[p.attr], m.objs[p.obj]});
  };
  std::size_t at = 0;
  for (; at < 1262; ++at) line("train", true, grid[at]);
  for (int i = 0; i < 300; ++i) line("val", true, grid[static_cast<std::size_t>(i)]);
  for (int i = 0; i < 300; ++i) line("val", false, grid[at++]);
  for (int i = 0; i < 400; ++i) line("test", true, grid[static_cast<std::size_t>(i) + 300]);
  for (int i = 0; i < 400; ++i) line("test", false, grid[at++]);

  const Manifest parsed = parse_manifest(format_manifest(m));
  const CompositionSpace train = build_space(parsed, "train");
  const CompositionSpace val = build_space(parsed, "val");
  const CompositionSpace test = build_space(parsed, "test");
  EXPECT_EQ(train.num_attrs(), 115);
  EXPECT_EQ(train.num_objs(), 245);
  EXPECT_EQ(train.num_comps(), 28175);
  EXPECT_EQ(train.seen().size(), 1262u);
  EXPECT_EQ(val.seen().size(), 300u);
  EXPECT_EQ(val.unseen().size(), 300u);
  EXPECT_EQ(test.seen().size(), 400u);
  EXPECT_EQ(test.unseen().size(), 400u);
}

TEST(Feasibility, ParsesFullGrid) {
  const CompositionSpace space({"a", "b"}, {"x", "y"}, {{0, 0}}, {});
  const std::string text = "a\tx\t0\na\ty\t0\nb\tx\t0\nb\ty\t0\n";
  const FeasibilityMask m = parse_feasibility(text, space, -1.0);
  for (int c = 0; c < 4; ++c) EXPECT_TRUE(m.passes(c));
  const FeasibilityMask m2 = parse_feasibility("# h\nb\ty\t0.5\na\tx\t-2\nb\tx\t1e-3\na\ty\t3\n",
                                               space, 0.0);
  EXPECT_EQ(m2.scores, (std::vector<double>{-2, 3, 1e-3, 0.5}));
}

TEST(Feasibility, Errors) {
  const CompositionSpace space({"a", "b"}, {"x", "y"}, {{0, 0}}, {});
  try {
    parse_feasibility("a\tx\t0\na\ty\t0\nb\tx\t0\n", space, 0.0);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind(), FormatError::Kind::kMissingEntry);
    EXPECT_NE(std::string(e.what()).find("b y"), std::string::npos);
  }
  EXPECT_THROW(parse_feasibility("a\tz\t0\n", space, 0.0), FormatError);
  EXPECT_THROW(parse_feasibility("a\tx\tabc\n", space, 0.0), FormatError);
  EXPECT_THROW(parse_feasibility("a\tx\t1\na\tx\t2\n", space, 0.0), FormatError);
  EXPECT_THROW(parse_feasibility("a\tx\tnan\n", space, 0.0), FormatError);
  EXPECT_THROW(parse_feasibility("a\tx\n", space, 0.0), FormatError);
}

TEST(Feasibility, MedianThresholdKeepsAboutHalf) {
  const SyntheticData data = [] {
    SyntheticSpec s;
    s.seed = 3;
    return generate_synthetic(s);
  }();
  const CompositionSpace space = build_space(data.manifest, "train");
  Rng rng(9);
  std::string text;
  std::vector<double> rest;
  for (int c = 0; c < space.num_comps(); ++c) {
    const double v = rng.uniform();
    const Pair p = space.pair_of(c);
    text += space.attributes()[p.attr] + "\t" + space.objects()[p.obj] + "\t" + std::to_string(v) + "\n";
    if (!space.is_seen(p)) rest.push_back(std::stod(std::to_string(v)));
  }
  std::vector<double> sorted = rest;
  std::sort(sorted.begin(), sorted.end());
  const double median = sorted[sorted.size() / 2];
  const FeasibilityMask mask = parse_feasibility(text, space, median);
  const CandidateSet cs =
      open_world_candidates(space.num_attrs(), space.num_objs(), space.seen(), &mask);
  const auto kept_unseen = static_cast<std::size_t>(std::count_if(
      rest.begin(), rest.end(), [&](double v) { return v >= median; }));
  EXPECT_EQ(cs.size(), space.seen().size() + kept_unseen);
  EXPECT_NEAR(static_cast<double>(kept_unseen), rest.size() / 2.0, 1.0);
}

TEST(Synthetic, Deterministic) {
  SyntheticSpec s;
  s.num_attrs = 8;
  s.num_objs = 10;
  s.seen_fraction = 0.6;
  s.seed = 7;
  const SyntheticData a = generate_synthetic(s);
  const SyntheticData b = generate_synthetic(s);
  EXPECT_EQ(encode_embeddings(a.embeddings), encode_embeddings(b.embeddings));
  EXPECT_EQ(format_manifest(a.manifest), format_manifest(b.manifest));
  s.seed = 8;
  EXPECT_NE(encode_embeddings(generate_synthetic(s).embeddings), encode_embeddings(a.embeddings));
}

TEST(Synthetic, SplitStructure) {
  SyntheticSpec s;
  s.seed = 1;
  const SyntheticData data = generate_synthetic(s);
  EXPECT_EQ(data.truth.seen.size(), 48u);
  EXPECT_EQ(data.truth.val_unseen.size() + data.truth.test_unseen.size(), 32u);
  const Dataset ds = assemble_dataset(data.manifest, data.embeddings);
  EXPECT_EQ(ds.train.size(), 48u * 40u);
  EXPECT_EQ(ds.dim, 32);
  EXPECT_EQ(ds.test_space.unseen().size(), data.truth.test_unseen.size());
  EXPECT_EQ(ds.val_space.seen().size(), 48u);
  // Every primitive appears in some seen pair.
  std::vector<int> ca(8), co(10);
  for (const Pair& p : data.truth.seen) ca[p.attr]++, co[p.obj]++;
  EXPECT_EQ(std::count(ca.begin(), ca.end(), 0), 0);
  EXPECT_EQ(std::count(co.begin(), co.end(), 0), 0);
}

TEST(Synthetic, NoiselessFeaturesAreIdentical) {
  SyntheticSpec s;
  s.sigma = 0.0;
  s.gamma = 0.0;
  s.samples_per_pair = 5;
  const SyntheticData data = generate_synthetic(s);
  const Dataset ds = assemble_dataset(data.manifest, data.embeddings);
  std::map<Pair, Vector> first;
  for (const Sample& x : ds.train) {
    auto [it, fresh] = first.emplace(x.pair(), x.feature);
    if (!fresh) {
      EXPECT_EQ(it->second, x.feature);
    }
  }
}

TEST(Synthetic, NoiselessDecodingIsExact) {
  SyntheticSpec s;
  s.sigma = 0.0;
  s.gamma = 0.0;
  const SyntheticData data = generate_synthetic(s);
  const SyntheticTruth& t = data.truth;
  const Eigen::Index k = t.attr_protos.cols();
  // Pre-image of v under W, then nearest prototypes on each half.
  const Eigen::ColPivHouseholderQR<Matrix> qr(t.mixing);
  for (int a = 0; a < s.num_attrs; ++a)
    for (int o = 0; o < s.num_objs; ++o) {
      const Vector z = qr.solve(synthetic_feature(t, 0.0, {a, o}));
      Eigen::Index ba = 0, bo = 0;
      (t.attr_protos * z.head(k)).maxCoeff(&ba);
      (t.obj_protos * z.tail(k)).maxCoeff(&bo);
      EXPECT_EQ(ba, a);
      EXPECT_EQ(bo, o);
    }
}

TEST(Synthetic, CompositionalPremise) {
  SyntheticSpec s;
  s.seed = 4;
  const SyntheticData data = generate_synthetic(s);
  const Dataset ds = assemble_dataset(data.manifest, data.embeddings);
  double same = 0, cross = 0;
  int ns = 0, nc = 0;
  for (std::size_t i = 0; i < ds.train.size(); i += 7)
    for (std::size_t j = i + 1; j < ds.train.size(); j += 13) {
      const double c = cosine(ds.train[i].feature, ds.train[j].feature);
      if (ds.train[i].pair() == ds.train[j].pair()) {
        same += c;
        ++ns;
      } else {
        cross += c;
        ++nc;
      }
    }
  ASSERT_GT(ns, 0);
  EXPECT_GT(same / ns, cross / nc + 0.3);
}

TEST(Synthetic, PowerLawCounts) {
  SyntheticSpec s;
  s.tail_exponent = 1.5;
  s.total_samples = 2000;
  s.seed = 5;
  const SyntheticData data = generate_synthetic(s);
  ASSERT_EQ(data.truth.seen.size(), 48u);
  std::map<std::pair<std::string, std::string>, int> counts;
  for (const auto& x : data.manifest.samples)
    if (x.split == "train") counts[{x.attr, x.obj}]++;
  int lo = 1 << 30, hi = 0;
  for (const auto& [_, c] : counts) {
    lo = std::min(lo, c);
    hi = std::max(hi, c);
  }
  EXPECT_EQ(counts.size(), 48u);
  EXPECT_GT(static_cast<double>(hi) / lo, 10.0);
}

TEST(Synthetic, SpecValidation) {
  SyntheticSpec s;
  s.seen_fraction = 0.0;
  EXPECT_THROW(generate_synthetic(s), ConfigError);
  s = {};
  s.seen_fraction = 0.001;
  EXPECT_THROW(generate_synthetic(s), ConfigError);
  s = {};
  s.sigma = -1;
  EXPECT_THROW(generate_synthetic(s), ConfigError);
  s = {};
  s.num_attrs = 1;
  s.num_objs = 3;
  EXPECT_THROW(generate_synthetic(s), ConfigError);
  s = {};
  s.d_backbone = 7;
  EXPECT_THROW(generate_synthetic(s), ConfigError);
}
