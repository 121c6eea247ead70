#include <gtest/gtest.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <set>

#include "dapa/data.hpp"
#include "dapa/errors.hpp"
#include "dapa/model.hpp"
#include "test_util.hpp"

using namespace dapa;
using dapa::testing::read_bytes;
using dapa::testing::TempDir;
using dapa::testing::write_text;

namespace {

std::string le32(std::uint32_t v) {
  std::string s;
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>(v >> (8 * i)));
  return s;
}

std::string le64(std::uint64_t v) {
  std::string s;
  for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>(v >> (8 * i)));
  return s;
}

std::string dapf_bytes(std::uint32_t version, std::uint64_t rows, std::uint64_t cols, const std::vector<float>& v) {
  std::string s = "DAPF" + le32(version) + le64(rows) + le64(cols);
  for (float x : v) s += le32(std::bit_cast<std::uint32_t>(x));
  return s;
}

template <typename F>
std::string error_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return "<no error>";
}

bool bit_equal(std::span<const float> a, std::span<const float> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

Session toy_session(const std::string& id, std::size_t n, std::size_t d, std::uint64_t seed, std::size_t domain = 0) {
  Session s;
  s.record.session_id = id;
  s.record.frame_count = n;
  s.domain_index = domain;
  s.x_t = dapa::testing::random_tensor<float>({n, d}, seed);
  s.x_p = dapa::testing::random_tensor<float>({n, d}, seed + 1);
  RngStream rng(seed + 2);
  for (std::size_t i = 0; i < n; ++i) s.labels.push_back(static_cast<float>(rng.uniform()));
  return s;
}

Corpus toy_corpus() {
  Corpus c;
  c.domains = {"alpha", "beta"};
  c.feature_dim = 3;
  c.sessions.push_back(toy_session("b1", 7, 3, 10, 1));
  c.sessions.push_back(toy_session("a1", 5, 3, 20, 0));
  c.sessions[0].record.domain = "beta";
  c.sessions[1].record.domain = "alpha";
  c.sessions[1].record.fps = 25.0;
  return c;
}

/// The padded sequence spelled out: 32 copies of frame 0, the session, then
/// the last frame repeated until every window is full.
std::vector<std::size_t> padded_frames(std::size_t n, WindowScheme s) {
  std::vector<std::size_t> out(s.context, 0);
  for (std::size_t i = 0; i < n; ++i) out.push_back(i);
  const std::size_t windows = (n + s.core - 1) / s.core;
  while (out.size() < (windows - 1) * s.core + s.length()) out.push_back(n - 1);
  return out;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i] / n, mb += b[i] / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST(Dapf, HandBuiltFileDecodesBitExact) {
  TempDir dir;
  const std::vector<float> v{1.5f, -0.0f, 3.25f, 1e-40f, -7.0f, 0.1f};
  write_text(dir / "m.dapf", dapf_bytes(1, 2, 3, v));
  const auto m = read_feature_matrix(dir / "m.dapf");
  ASSERT_EQ(m.shape(), (Shape{2, 3}));
  EXPECT_TRUE(bit_equal(m.data(), v));
}

TEST(Dapf, WriterProducesTheDocumentedLayout) {
  TempDir dir;
  const std::vector<float> v{0.5f, 2.0f, -1.0f, 4.0f};
  write_feature_matrix(dir / "m.dapf", Tensor<float>::from({2, 2}, v));
  EXPECT_EQ(read_bytes(dir / "m.dapf"), dapf_bytes(1, 2, 2, v));
}

TEST(Dapf, RoundTripIsBitIdentical) {
  TempDir dir;
  auto m = dapa::testing::random_tensor<float>({17, 11}, 3, 1e3);
  m.mutable_data()[0] = -0.0f;
  m.mutable_data()[1] = std::numeric_limits<float>::denorm_min();
  m.mutable_data()[2] = std::numeric_limits<float>::max();
  write_feature_matrix(dir / "m.dapf", m);
  const auto back = read_feature_matrix(dir / "m.dapf");
  EXPECT_EQ(back.shape(), m.shape());
  EXPECT_TRUE(bit_equal(back.data(), m.data()));
  write_feature_matrix(dir / "again.dapf", back);
  EXPECT_EQ(read_bytes(dir / "m.dapf"), read_bytes(dir / "again.dapf"));
}

TEST(Dapf, EmptyMatrixRoundTrips) {
  TempDir dir;
  write_feature_matrix(dir / "e.dapf", Tensor<float>::zeros({0, 4}));
  EXPECT_EQ(read_feature_matrix(dir / "e.dapf").shape(), (Shape{0, 4}));
}

TEST(Dapf, ChallengeLayoutWidth) {
  TempDir dir;
  const std::size_t width = 88 + 768 + 714 + 139 + 1280;
  write_feature_matrix(dir / "c.dapf", Tensor<float>::zeros({2, width}));
  EXPECT_EQ(read_feature_matrix(dir / "c.dapf").cols(), 2989u);
  EXPECT_EQ(ModelConfig{}.d_in, 2989u);
}

TEST(Dapf, BadMagicReportsOffset) {
  TempDir dir;
  write_text(dir / "m.dapf", "DAPX" + le32(1) + le64(1) + le64(1) + le32(0));
  const auto msg = error_of([&] { read_feature_matrix(dir / "m.dapf"); });
  EXPECT_NE(msg.find("magic"), std::string::npos) << msg;
  EXPECT_NE(msg.find("byte 0"), std::string::npos) << msg;
  EXPECT_THROW(read_feature_matrix(dir / "m.dapf"), FormatError);
}

TEST(Dapf, VersionMismatchReportsOffset) {
  TempDir dir;
  write_text(dir / "m.dapf", dapf_bytes(2, 1, 1, {1.0f}));
  const auto msg = error_of([&] { read_feature_matrix(dir / "m.dapf"); });
  EXPECT_NE(msg.find("version 2"), std::string::npos) << msg;
  EXPECT_NE(msg.find("byte 4"), std::string::npos) << msg;
}

TEST(Dapf, TruncationIsRejected) {
  TempDir dir;
  const std::string full = dapf_bytes(1, 2, 3, {1, 2, 3, 4, 5, 6});
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{10}, std::size_t{23}, std::size_t{24},
                          full.size() - 1}) {
    write_text(dir / "t.dapf", full.substr(0, cut));
    EXPECT_THROW(read_feature_matrix(dir / "t.dapf"), FormatError) << "cut at " << cut;
  }
  write_text(dir / "t.dapf", full.substr(0, full.size() - 2));
  const auto msg = error_of([&] { read_feature_matrix(dir / "t.dapf"); });
  EXPECT_NE(msg.find("truncated payload at byte " + std::to_string(full.size() - 2)), std::string::npos) << msg;
}

TEST(Dapf, HugeHeaderDoesNotAllocate) {
  TempDir dir;
  write_text(dir / "h.dapf", dapf_bytes(1, std::uint64_t{1} << 62, 1 << 20, {1.0f}));
  EXPECT_THROW(read_feature_matrix(dir / "h.dapf"), FormatError);
}

TEST(Dapf, TrailingBytesAreRejected) {
  TempDir dir;
  write_text(dir / "t.dapf", dapf_bytes(1, 1, 2, {1, 2}) + "xy");
  const auto msg = error_of([&] { read_feature_matrix(dir / "t.dapf"); });
  EXPECT_NE(msg.find("trailing"), std::string::npos) << msg;
}

TEST(Csv, ParsesNumericRowsAndComments) {
  TempDir dir;
  write_text(dir / "f.csv", "# header comment\n1, 2.5,-3\n\n4,5e-1, +6\n");
  const auto m = read_feature_matrix(dir / "f.csv");
  ASSERT_EQ(m.shape(), (Shape{2, 3}));
  EXPECT_EQ(m.values(), (std::vector<float>{1, 2.5f, -3, 4, 0.5f, 6}));
}

TEST(Csv, RaggedRowNamesTheLine) {
  TempDir dir;
  write_text(dir / "f.csv", "1,2,3\n4,5,6\n7,8\n");
  const auto msg = error_of([&] { read_feature_matrix(dir / "f.csv"); });
  EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
  EXPECT_NE(msg.find("ragged"), std::string::npos) << msg;
}

TEST(Csv, GarbageNamesTheLine) {
  TempDir dir;
  write_text(dir / "f.csv", "1,2\n3,abc\n");
  const auto msg = error_of([&] { read_feature_matrix(dir / "f.csv"); });
  EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
  EXPECT_NE(msg.find("abc"), std::string::npos) << msg;
}

TEST(Labels, RoundTripIsBitIdentical) {
  TempDir dir;
  const auto v = dapa::testing::random_tensor<float>({500}, 7, 1.0);
  write_labels(dir / "l.txt", v.data());
  EXPECT_TRUE(bit_equal(read_labels(dir / "l.txt"), v.data()));
}

TEST(Labels, AcceptsCrlfAndTrailingBlankLines) {
  TempDir dir;
  write_text(dir / "l.txt", "0.25\r\n1\r\n0\n\n\n");
  EXPECT_EQ(read_labels(dir / "l.txt"), (std::vector<float>{0.25f, 1.0f, 0.0f}));
}

TEST(Labels, BlankLineInsideIsAnError) {
  TempDir dir;
  write_text(dir / "l.txt", "0.25\n\n0.5\n");
  EXPECT_NE(error_of([&] { read_labels(dir / "l.txt"); }).find("line 2"), std::string::npos);
}

TEST(Manifest, WriteThenLoadRoundTrips) {
  TempDir dir;
  const Corpus c = toy_corpus();
  const auto manifest = write_corpus(c, dir.path());
  const Corpus back = load_corpus(manifest);
  EXPECT_EQ(back.domains, c.domains);
  EXPECT_EQ(back.feature_dim, 3u);
  ASSERT_EQ(back.sessions.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    const auto &a = c.sessions[i], &b = back.sessions[i];
    EXPECT_EQ(b.record.session_id, a.record.session_id);
    EXPECT_EQ(b.record.domain, a.record.domain);
    EXPECT_EQ(b.domain_index, a.domain_index);
    EXPECT_EQ(b.record.frame_count, a.frames());
    EXPECT_TRUE(bit_equal(b.x_t.data(), a.x_t.data()));
    EXPECT_TRUE(bit_equal(b.x_p.data(), a.x_p.data()));
    EXPECT_TRUE(bit_equal(b.labels, a.labels));
  }
  EXPECT_EQ(back.sessions[1].record.fps, 25.0);
  EXPECT_FALSE(back.sessions[0].record.fps.has_value());
}

TEST(Manifest, RecordsResolvePathsAgainstTheManifestDirectory) {
  TempDir dir;
  const auto manifest = write_corpus(toy_corpus(), dir / "nested");
  const auto records = load_manifest(manifest);
  ASSERT_EQ(records.size(), 2u);
  EXPECT_EQ(records[0].session_id, "b1");
  EXPECT_EQ(records[0].frame_count, 7u);
  EXPECT_EQ(records[0].target_features, dir / "nested" / "features" / "b1.target.dapf");
  EXPECT_TRUE(fs::exists(records[1].target_labels));
}

TEST(Manifest, DomainsAreSortedAndIndexed) {
  TempDir dir;
  Corpus c = toy_corpus();
  write_corpus(c, dir.path());
  write_text(dir / "m.json", R"({"version": 1, "domains": ["zeta", "beta", "alpha", "beta"],
    "sessions": [{"id": "b1", "domain": "beta", "target_features": "features/b1.target.dapf",
                  "partner_features": "features/b1.partner.dapf", "target_labels": "labels/b1.target.txt"}]})");
  const Corpus back = load_corpus(dir / "m.json");
  EXPECT_EQ(back.domains, (std::vector<std::string>{"alpha", "beta", "zeta"}));
  EXPECT_EQ(back.sessions[0].domain_index, 1u);
  EXPECT_EQ(back.domain_index("zeta"), 2u);
  EXPECT_FALSE(back.domain_index("gamma").has_value());
}

TEST(Manifest, TwoDomainsInferredWhenUnlisted) {
  TempDir dir;
  write_corpus(toy_corpus(), dir.path());
  write_text(dir / "m.json", R"({"version": 1, "sessions": [
    {"id": "b1", "domain": "beta", "target_features": "features/b1.target.dapf",
     "partner_features": "features/b1.partner.dapf", "target_labels": "labels/b1.target.txt"},
    {"id": "a1", "domain": "alpha", "target_features": "features/a1.target.dapf",
     "partner_features": "features/a1.partner.dapf", "target_labels": "labels/a1.target.txt"}]})");
  const Corpus back = load_corpus(dir / "m.json");
  EXPECT_EQ(back.domains, (std::vector<std::string>{"alpha", "beta"}));
  EXPECT_EQ(back.sessions[0].domain_index, 1u);
  EXPECT_EQ(back.sessions[1].domain_index, 0u);
}

TEST(Manifest, EmptySessionListGivesEmptyCorpus) {
  TempDir dir;
  write_text(dir / "m.json", R"({"version": 1, "sessions": []})");
  const Corpus c = load_corpus(dir / "m.json");
  EXPECT_TRUE(c.sessions.empty());
  EXPECT_TRUE(c.domains.empty());
}

TEST(Manifest, OutOfRangeLabelNamesFileLineAndSession) {
  TempDir dir;
  write_corpus(toy_corpus(), dir.path());
  write_text(dir / "labels" / "a1.target.txt", "0.1\n0.2\n1.3\n0.4\n0.5\n");
  const auto msg = error_of([&] { load_corpus(dir / "manifest.json"); });
  EXPECT_NE(msg.find("a1.target.txt"), std::string::npos) << msg;
  EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
  EXPECT_NE(msg.find("'a1'"), std::string::npos) << msg;
  EXPECT_THROW(load_corpus(dir / "manifest.json"), IngestionError);
}

TEST(Manifest, NanLabelIsRejected) {
  TempDir dir;
  write_corpus(toy_corpus(), dir.path());
  write_text(dir / "labels" / "a1.target.txt", "0.1\nnan\n0.3\n0.4\n0.5\n");
  EXPECT_THROW(load_corpus(dir / "manifest.json"), IngestionError);
}

TEST(Manifest, MissingFileNamesTheSession) {
  TempDir dir;
  write_corpus(toy_corpus(), dir.path());
  fs::remove(dir / "features" / "b1.partner.dapf");
  const auto msg = error_of([&] { load_corpus(dir / "manifest.json"); });
  EXPECT_NE(msg.find("'b1'"), std::string::npos) << msg;
  EXPECT_NE(msg.find("b1.partner.dapf"), std::string::npos) << msg;
}

TEST(Manifest, RowCountMismatchNamesTheSession) {
  TempDir dir;
  write_corpus(toy_corpus(), dir.path());
  write_labels(dir / "labels" / "b1.target.txt", std::vector<float>(6, 0.5f));
  const auto msg = error_of([&] { load_corpus(dir / "manifest.json"); });
  EXPECT_NE(msg.find("'b1'"), std::string::npos) << msg;
  EXPECT_NE(msg.find("6 rows"), std::string::npos) << msg;

  write_corpus(toy_corpus(), dir.path());
  write_feature_matrix(dir / "features" / "b1.partner.dapf", Tensor<float>::zeros({8, 3}));
  EXPECT_THROW(load_corpus(dir / "manifest.json"), IngestionError);
}

TEST(Manifest, FeatureWidthMustAgree) {
  TempDir dir;
  write_corpus(toy_corpus(), dir.path());
  write_feature_matrix(dir / "features" / "a1.target.dapf", Tensor<float>::zeros({5, 4}));
  write_feature_matrix(dir / "features" / "a1.partner.dapf", Tensor<float>::zeros({5, 4}));
  EXPECT_NE(error_of([&] { load_corpus(dir / "manifest.json"); }).find("corpus width"), std::string::npos);
  write_feature_matrix(dir / "features" / "a1.target.dapf", Tensor<float>::zeros({5, 3}));
  EXPECT_NE(error_of([&] { load_corpus(dir / "manifest.json"); }).find("partner feature width"), std::string::npos);
}

TEST(Manifest, CorruptFeatureFileIsAnIngestionError) {
  TempDir dir;
  write_corpus(toy_corpus(), dir.path());
  const auto path = dir / "features" / "a1.target.dapf";
  write_text(path, read_bytes(path).substr(0, 40));
  const auto msg = error_of([&] { load_corpus(dir / "manifest.json"); });
  EXPECT_NE(msg.find("'a1'"), std::string::npos) << msg;
  EXPECT_NE(msg.find("truncated"), std::string::npos) << msg;
}

TEST(Manifest, SchemaViolations) {
  TempDir dir;
  write_corpus(toy_corpus(), dir.path());
  const std::string ok_session = R"({"id": "a1", "domain": "alpha", "target_features": "features/a1.target.dapf",
     "partner_features": "features/a1.partner.dapf", "target_labels": "labels/a1.target.txt")";
  const std::vector<std::pair<std::string, std::string>> cases{
      {"{not json", "parse"},
      {R"({"sessions": []})", "version"},
      {R"({"version": 2, "sessions": []})", "version"},
      {R"({"version": 1, "sessions": [], "extra": 1})", "unknown key 'extra'"},
      {R"({"version": 1, "sessions": [)" + ok_session + R"(, "colour": "red"}]})", "unknown key 'colour'"},
      {R"({"version": 1, "sessions": [{"domain": "alpha"}]})", "missing 'id'"},
      {R"({"version": 1, "sessions": [)" + ok_session + "}, " + ok_session + "}]}", "duplicate"},
      {R"({"version": 1, "domains": ["beta"], "sessions": [)" + ok_session + "}]}", "not in the manifest's domain list"},
      {R"({"version": 1, "sessions": [)" + ok_session + R"(, "fps": -1}]})", "fps"},
  };
  for (const auto& [text, needle] : cases) {
    write_text(dir / "m.json", text);
    const auto msg = error_of([&] { load_corpus(dir / "m.json"); });
    EXPECT_NE(msg.find(needle), std::string::npos) << text << "\n  -> " << msg;
  }
}

TEST(Manifest, MissingManifestNamesThePath) {
  TempDir dir;
  try {
    load_corpus(dir / "nope.json");
    FAIL();
  } catch (const IngestionError& e) {
    EXPECT_NE(std::string(e.what()).find("nope.json"), std::string::npos);
    EXPECT_EQ(e.exit_code(), 2);
  }
}

TEST(Manifest, WriteRejectsUnsafeSessionIds) {
  TempDir dir;
  Corpus c = toy_corpus();
  c.sessions[0].record.session_id = "../escape";
  EXPECT_THROW(write_corpus(c, dir.path()), UsageError);
}

TEST(Split, HoldsOutWholeSessionsPerDomain) {
  const auto syn = generate_synthetic({.num_domains = 3, .sessions_per_domain = 5, .frames_per_session = 40});
  const auto split = split_sessions(syn.corpus, 0.2, 7);
  EXPECT_EQ(split.held_out.sessions.size(), 3u);
  EXPECT_EQ(split.train.sessions.size(), 12u);
  std::set<std::string> ids;
  std::vector<std::size_t> held_per_domain(3);
  for (const auto& s : split.train.sessions) ids.insert(s.record.session_id);
  for (const auto& s : split.held_out.sessions) {
    EXPECT_TRUE(ids.insert(s.record.session_id).second) << "session in both splits";
    ++held_per_domain[s.domain_index];
  }
  EXPECT_EQ(ids.size(), 15u);
  EXPECT_EQ(held_per_domain, (std::vector<std::size_t>{1, 1, 1}));
  EXPECT_EQ(split.train.domains, syn.corpus.domains);
}

TEST(Split, DeterministicAndClamped) {
  const auto syn = generate_synthetic({.num_domains = 2, .sessions_per_domain = 4, .frames_per_session = 10});
  auto ids = [](const Corpus& c) {
    std::vector<std::string> v;
    for (const auto& s : c.sessions) v.push_back(s.record.session_id);
    return v;
  };
  EXPECT_EQ(ids(split_sessions(syn.corpus, 0.25, 3).held_out), ids(split_sessions(syn.corpus, 0.25, 3).held_out));
  EXPECT_EQ(split_sessions(syn.corpus, 0.01, 3).held_out.sessions.size(), 2u);  // at least one per domain
  EXPECT_EQ(split_sessions(syn.corpus, 0.99, 3).train.sessions.size(), 2u);     // never all of a domain
  EXPECT_EQ(split_sessions(syn.corpus, 0.0, 3).held_out.sessions.size(), 0u);
  EXPECT_THROW(split_sessions(syn.corpus, 1.0, 3), ConfigError);

  const auto single = generate_synthetic({.num_domains = 1, .sessions_per_domain = 1, .frames_per_session = 10});
  EXPECT_EQ(split_sessions(single.corpus, 0.5, 1).train.sessions.size(), 1u);
}

TEST(Windows, SingleCoreSession) {
  const auto w = plan_windows(32);
  ASSERT_EQ(w.size(), 1u);
  EXPECT_EQ(w[0].core_start, 0u);
  EXPECT_EQ(w[0].source.size(), 96u);
  for (std::size_t j = 0; j < 96; ++j) {
    EXPECT_EQ(w[0].core_mask[j], j >= 32 && j < 64) << j;
    if (w[0].core_mask[j]) {
      EXPECT_EQ(w[0].source[j], j - 32);
    }
  }
}

TEST(Windows, NinetySixFramesGiveThreeWindows) {
  const auto w = plan_windows(96);
  ASSERT_EQ(w.size(), 3u);
  EXPECT_EQ(w[0].core_start, 0u);
  EXPECT_EQ(w[1].core_start, 32u);
  EXPECT_EQ(w[2].core_start, 64u);
  for (std::size_t j = 0; j < 32; ++j) EXPECT_EQ(w[0].source[j], 0u);    // leading replication
  for (std::size_t j = 64; j < 96; ++j) EXPECT_EQ(w[2].source[j], 95u);  // trailing replication
  for (std::size_t j = 0; j < 96; ++j) EXPECT_EQ(w[1].source[j], j);     // interior window is the session itself
  for (const auto& win : w) EXPECT_EQ(win.core_frames(), 32u);
}

TEST(Windows, SourcesMatchTheExplicitlyPaddedSequence) {
  RngStream rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(300);
    const auto padded = padded_frames(n, {});
    const auto windows = plan_windows(n);
    for (std::size_t w = 0; w < windows.size(); ++w) {
      ASSERT_EQ(windows[w].core_start, 32 * w);
      for (std::size_t j = 0; j < 96; ++j) ASSERT_EQ(windows[w].source[j], padded[32 * w + j]) << n << " " << w;
    }
  }
}

TEST(Windows, CorePartitionHoldsForRandomLengths) {
  RngStream rng(40);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(500);
    std::vector<int> hits(n, 0);
    const auto windows = plan_windows(n);
    EXPECT_EQ(windows.size(), (n + 31) / 32);
    for (std::size_t w = 0; w < windows.size(); ++w) {
      const auto& win = windows[w];
      if (w > 0) {
        EXPECT_EQ(win.core_start - windows[w - 1].core_start, 32u);
      }
      for (std::size_t j = 0; j < win.source.size(); ++j) {
        if (!win.core_mask[j]) continue;
        ASSERT_TRUE(j >= 32 && j < 64);
        ++hits[win.source[j]];
      }
      const bool full = win.core_start + 32 <= n;
      EXPECT_EQ(win.core_frames(), full ? 32u : n - win.core_start);
    }
    EXPECT_TRUE(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; })) << "n=" << n;
  }
}

TEST(Windows, StitchOfSegmentIsIdentityOnLabels) {
  RngStream rng(41);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(500);
    const Session s = toy_session("s" + std::to_string(trial), n, 2, 100 + trial);
    std::vector<WindowPrediction> preds;
    for (const auto& w : segment_windows(s)) preds.push_back({w.origin, w.y});
    const auto out = stitch_predictions(preds, {{s.record.session_id, n}});
    ASSERT_TRUE(bit_equal(out.at(s.record.session_id), s.labels)) << "n=" << n;
  }
}

TEST(Windows, StitchIsOrderIndependent) {
  const Session a = toy_session("a", 150, 2, 1), b = toy_session("b", 70, 2, 2);
  std::vector<WindowPrediction> preds;
  for (const auto* s : {&a, &b})
    for (const auto& w : segment_windows(*s)) preds.push_back({w.origin, w.y});
  const std::map<std::string, std::size_t> counts{{"a", 150}, {"b", 70}};
  const auto ref = stitch_predictions(preds, counts);
  RngStream rng(9);
  for (int k = 0; k < 5; ++k) {
    for (std::size_t i = preds.size() - 1; i > 0; --i) std::swap(preds[i], preds[rng.below(i + 1)]);
    EXPECT_EQ(stitch_predictions(preds, counts), ref);
  }
  EXPECT_TRUE(bit_equal(ref.at("a"), a.labels));
  EXPECT_TRUE(bit_equal(ref.at("b"), b.labels));
}

TEST(Windows, SingleWindowStitchIsTheCoreSlice) {
  std::vector<float> values(96);
  for (std::size_t j = 0; j < 96; ++j) values[j] = static_cast<float>(j);
  const std::vector<WindowPrediction> preds{{{"s", 0}, values}};
  const auto out = stitch_predictions(preds, {{"s", 20}});
  std::vector<float> expected;
  for (std::size_t j = 32; j < 52; ++j) expected.push_back(static_cast<float>(j));
  EXPECT_EQ(out.at("s"), expected);
}

TEST(Windows, StitchConsistencyErrors) {
  const std::vector<float> v(96, 0.5f);
  const std::map<std::string, std::size_t> counts{{"s", 64}};
  std::vector<WindowPrediction> overlap{{{"s", 0}, v}, {{"s", 32}, v}, {{"s", 32}, v}};
  EXPECT_NE(error_of([&] { stitch_predictions(overlap, counts); }).find("covered twice"), std::string::npos);
  std::vector<WindowPrediction> gap{{{"s", 0}, v}};
  EXPECT_NE(error_of([&] { stitch_predictions(gap, counts); }).find("frame 32 not covered"), std::string::npos);
  std::vector<WindowPrediction> unknown{{{"t", 0}, v}};
  EXPECT_THROW(stitch_predictions(unknown, counts), ConsistencyError);
  std::vector<WindowPrediction> short_window{{{"s", 0}, std::vector<float>(10)}};
  EXPECT_THROW(stitch_predictions(short_window, counts), ConsistencyError);
  std::vector<WindowPrediction> off_grid{{{"s", 5}, v}};
  EXPECT_THROW(stitch_predictions(off_grid, counts), ConsistencyError);
  std::vector<WindowPrediction> past_end{{{"s", 64}, v}};
  EXPECT_THROW(stitch_predictions(past_end, counts), ConsistencyError);
}

TEST(Windows, MakeWindowGathersRows) {
  const Session s = toy_session("s", 40, 3, 8, 1);
  const auto windows = segment_windows(s);
  ASSERT_EQ(windows.size(), 2u);
  const auto& w = windows[1];
  EXPECT_EQ(w.origin, (WindowOrigin{"s", 32}));
  EXPECT_EQ(w.domain, 1u);
  EXPECT_EQ(w.x_t.shape(), (Shape{96, 3}));
  for (std::size_t j = 0; j < 96; ++j) {
    const std::size_t src = std::min<std::size_t>(j, 39);  // frames 0..39 occupy positions 0..39 of window 1
    for (std::size_t c = 0; c < 3; ++c) {
      EXPECT_EQ(w.x_t.at(j, c), s.x_t.at(src, c));
      EXPECT_EQ(w.x_p.at(j, c), s.x_p.at(src, c));
    }
    EXPECT_EQ(w.y[j], s.labels[src]);
  }
  EXPECT_EQ(std::count(w.core_mask.begin(), w.core_mask.end(), 1), 8);
}

TEST(Windows, SmallSchemes) {
  const WindowScheme tiny{2, 2};
  EXPECT_EQ(tiny.length(), 6u);
  const auto w = plan_windows(5, tiny);
  ASSERT_EQ(w.size(), 3u);
  EXPECT_EQ(w[2].source, (std::vector<std::size_t>{2, 3, 4, 4, 4, 4}));
  EXPECT_EQ(w[2].core_mask, (std::vector<std::uint8_t>{0, 0, 1, 0, 0, 0}));
  const Session s = toy_session("s", 5, 1, 3);
  std::vector<WindowPrediction> preds;
  for (const auto& win : segment_windows(s, tiny)) preds.push_back({win.origin, win.y});
  EXPECT_TRUE(bit_equal(stitch_predictions(preds, {{"s", 5}}, tiny).at("s"), s.labels));
}

TEST(Windows, EmptySessionIsAUsageError) { EXPECT_THROW(plan_windows(0), UsageError); }

TEST(Synthetic, ShapesNamesAndRanges) {
  SyntheticSpec spec{.num_domains = 3, .sessions_per_domain = 2, .frames_per_session = 300, .feature_dim = 16};
  const auto syn = generate_synthetic(spec);
  const auto& c = syn.corpus;
  EXPECT_EQ(c.domains, (std::vector<std::string>{"d00", "d01", "d02"}));
  ASSERT_EQ(c.sessions.size(), 6u);
  EXPECT_EQ(c.feature_dim, 16u);
  for (std::size_t i = 0; i < 6; ++i) {
    const auto& s = c.sessions[i];
    EXPECT_EQ(s.domain_index, i / 2);
    EXPECT_EQ(s.record.domain, c.domains[i / 2]);
    EXPECT_EQ(s.x_t.shape(), (Shape{300, 16}));
    EXPECT_EQ(s.x_p.shape(), (Shape{300, 16}));
    ASSERT_EQ(s.labels.size(), 300u);
    EXPECT_EQ(s.partner_labels.size(), 300u);
    for (float y : s.labels) EXPECT_TRUE(y >= 0.0f && y <= 1.0f);
    const auto& e = syn.target_latent[i];
    EXPECT_EQ(*std::min_element(e.begin(), e.end()), 0.0);
    EXPECT_EQ(*std::max_element(e.begin(), e.end()), 1.0);
  }
}

TEST(Synthetic, LabelsAreTheDomainWarpOfTheLatent) {
  SyntheticSpec spec{.num_domains = 3, .sessions_per_domain = 1, .frames_per_session = 200};
  const auto syn = generate_synthetic(spec);
  const auto warps = SyntheticSpec::default_warps(3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t t = 0; t < 200; ++t) {
      const double e = syn.target_latent[i][t];
      ASSERT_EQ(syn.corpus.sessions[i].labels[t],
                static_cast<float>(warps[i].lo + (warps[i].hi - warps[i].lo) * std::pow(e, warps[i].gamma)));
    }
}

TEST(Synthetic, DefaultWarpsAreDistinctMonotoneAndInRange) {
  for (std::size_t k : {1u, 2u, 3u, 5u}) {
    const auto warps = SyntheticSpec::default_warps(k);
    ASSERT_EQ(warps.size(), k);
    for (const auto& w : warps) {
      double prev = -1;
      for (int i = 0; i <= 100; ++i) {
        const double y = w.apply(i / 100.0);
        EXPECT_GE(y, 0.0);
        EXPECT_LE(y, 1.0);
        EXPECT_GT(y, prev);
        prev = y;
      }
    }
    for (std::size_t a = 1; a < k; ++a) EXPECT_NE(warps[a].apply(0.5), warps[a - 1].apply(0.5));
  }
}

TEST(Synthetic, FullCouplingGivesIdenticalLatents) {
  const auto syn = generate_synthetic({.sessions_per_domain = 2, .frames_per_session = 500, .kappa = 1.0});
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(syn.target_latent[i], syn.partner_latent[i]);
}

TEST(Synthetic, CouplingRaisesLagZeroCorrelation) {
  auto mean_corr = [](double kappa) {
    const auto syn = generate_synthetic({.sessions_per_domain = 8, .frames_per_session = 2000, .kappa = kappa});
    double r = 0;
    for (std::size_t i = 0; i < 8; ++i) r += pearson(syn.target_latent[i], syn.partner_latent[i]) / 8;
    return r;
  };
  const double coupled = mean_corr(0.9), independent = mean_corr(0.0);
  EXPECT_GT(coupled, independent);
  EXPECT_GT(coupled, 0.9);
  EXPECT_LT(std::abs(independent), 0.5);
}

TEST(Synthetic, StepStyleHasAtMostFiveLevels) {
  const auto syn = generate_synthetic({.num_domains = 2, .sessions_per_domain = 2, .frames_per_session = 800,
                                       .style = AnnotationStyle::Step});
  for (const auto& s : syn.corpus.sessions) {
    const std::set<float> levels(s.labels.begin(), s.labels.end());
    EXPECT_LE(levels.size(), 5u);
    EXPECT_GE(levels.size(), 3u);
  }
}

TEST(Synthetic, SameSeedIsByteIdenticalOnDisk) {
  TempDir a, b, c;
  const SyntheticSpec spec{.num_domains = 2, .sessions_per_domain = 2, .frames_per_session = 100};
  generate_synthetic_corpus(spec, a.path());
  generate_synthetic_corpus(spec, b.path());
  SyntheticSpec other = spec;
  other.seed = 41;
  generate_synthetic_corpus(other, c.path());
  std::size_t files = 0;
  bool any_differs = false;
  for (const auto& entry : fs::recursive_directory_iterator(a.path())) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), a.path());
    EXPECT_EQ(read_bytes(entry.path()), read_bytes(b.path() / rel)) << rel;
    any_differs |= read_bytes(entry.path()) != read_bytes(c.path() / rel);
    ++files;
  }
  EXPECT_EQ(files, 1u + 4u * 4u);
  EXPECT_TRUE(any_differs);
  EXPECT_EQ(load_corpus(a / "manifest.json").sessions.size(), 4u);
}

TEST(Synthetic, NoiseLevels) {
  SyntheticSpec spec{.sessions_per_domain = 1, .frames_per_session = 400, .kappa = 1.0, .sigma = 0.0};
  const auto clean = generate_synthetic(spec);
  spec.target_sigma = 0.5;
  const auto noisy = generate_synthetic(spec);
  // Partner features are untouched by target_sigma; the target's residual has the requested spread.
  EXPECT_TRUE(bit_equal(clean.corpus.sessions[0].x_p.data(), noisy.corpus.sessions[0].x_p.data()));
  double ss = 0;
  const auto a = clean.corpus.sessions[0].x_t.data(), b = noisy.corpus.sessions[0].x_t.data();
  for (std::size_t i = 0; i < a.size(); ++i) ss += (b[i] - a[i]) * (b[i] - a[i]);
  EXPECT_NEAR(std::sqrt(ss / a.size()), 0.5, 0.02);
}

TEST(Synthetic, DomainIsInvisibleInFeatures) {
  // Latent draws and the lift ignore the domain count, so session 0 keeps its
  // features; only its label warp changes.
  SyntheticSpec one{.num_domains = 1, .sessions_per_domain = 1, .frames_per_session = 100};
  SyntheticSpec three{.num_domains = 3, .sessions_per_domain = 1, .frames_per_session = 100};
  const auto a = generate_synthetic(one), b = generate_synthetic(three);
  EXPECT_TRUE(bit_equal(a.corpus.sessions[0].x_t.data(), b.corpus.sessions[0].x_t.data()));
  EXPECT_NE(a.corpus.sessions[0].labels, b.corpus.sessions[0].labels);
}

TEST(Synthetic, SpecValidation) {
  auto bad = [](auto mutate) {
    SyntheticSpec s;
    mutate(s);
    return error_of([&] { generate_synthetic(s); });
  };
  EXPECT_NE(bad([](auto& s) { s.kappa = 1.5; }).find("kappa"), std::string::npos);
  EXPECT_NE(bad([](auto& s) { s.num_domains = 0; }).find("num_domains"), std::string::npos);
  EXPECT_NE(bad([](auto& s) { s.sigma = -1; }).find("noise"), std::string::npos);
  EXPECT_NE(bad([](auto& s) { s.warps = {{0.2, 1.2, 1.0}}; }).find("warps"), std::string::npos);
  EXPECT_NE(bad([](auto& s) { s.warps = {{0.1, 0.9, 1.0}, {0.1, 0.9, 1.0}}; }).find("one warp per domain"),
            std::string::npos);
}
