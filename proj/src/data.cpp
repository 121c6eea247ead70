#include "dapa/data.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dapa/errors.hpp"
#include "dapa/rng.hpp"

namespace dapa {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'D', 'A', 'P', 'F'};
constexpr std::size_t kHeaderBytes = 4 + 4 + 8 + 8;

std::string quoted(const fs::path& p) { return "'" + p.string() + "'"; }

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open " + quoted(path));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IngestionError("cannot write " + quoted(path));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IngestionError("write failed for " + quoted(path));
}

template <typename U>
U load_le(const char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

template <typename U>
void store_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

bool parse_float(std::string_view s, float& out) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && !s.empty();
}

std::string format_float(float v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, ptr};
}

/// Splits on '\n'; a final empty line (trailing newline) is dropped.
std::vector<std::string_view> lines_of(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto end = text.find('\n', pos);
    if (end == std::string_view::npos) {
      lines.push_back(text.substr(pos));
      break;
    }
    lines.push_back(text.substr(pos, end - pos));
    pos = end + 1;
  }
  return lines;
}

Tensor<float> read_dapf(const fs::path& path, const std::string& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw FormatError(quoted(path) + ": bad magic at byte 0 (expected \"DAPF\")");
  if (bytes.size() < kHeaderBytes)
    throw FormatError(quoted(path) + ": truncated header at byte " + std::to_string(bytes.size()) + " (need " +
                      std::to_string(kHeaderBytes) + ")");
  const auto version = load_le<std::uint32_t>(bytes.data() + 4);
  if (version != kDapfVersion)
    throw FormatError(quoted(path) + ": unsupported version " + std::to_string(version) + " at byte 4");
  const auto rows = load_le<std::uint64_t>(bytes.data() + 8);
  const auto cols = load_le<std::uint64_t>(bytes.data() + 16);
  const std::uint64_t payload = bytes.size() - kHeaderBytes;
  if (cols != 0 && rows > payload / 4 / cols)
    throw FormatError(quoted(path) + ": truncated payload at byte " + std::to_string(bytes.size()) + " (" +
                      std::to_string(rows) + "x" + std::to_string(cols) + " floats need " +
                      std::to_string(kHeaderBytes + rows * cols * 4) + " bytes)");
  const std::uint64_t count = rows * cols;
  if (payload != count * 4)
    throw FormatError(quoted(path) + ": " + std::to_string(payload - count * 4) + " trailing bytes at byte " +
                      std::to_string(kHeaderBytes + count * 4));
  std::vector<float> values(count);
  const char* p = bytes.data() + kHeaderBytes;
  for (auto& v : values) {
    v = std::bit_cast<float>(load_le<std::uint32_t>(p));
    p += 4;
  }
  return Tensor<float>::from({rows, cols}, std::move(values));
}

Tensor<float> read_csv(const fs::path& path, const std::string& text) {
  std::vector<float> values;
  std::size_t rows = 0, cols = 0;
  const auto lines = lines_of(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto line = trim(lines[i]);
    if (line.empty() || line.front() == '#') continue;
    std::size_t n = 0, pos = 0;
    while (true) {
      const auto comma = line.find(',', pos);
      const auto field = line.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos);
      float v;
      if (!parse_float(field, v))
        throw FormatError(quoted(path) + ": line " + std::to_string(i + 1) + ": not a number: '" +
                          std::string(trim(field)) + "'");
      values.push_back(v);
      ++n;
      if (comma == std::string_view::npos) break;
      pos = comma + 1;
    }
    if (rows == 0) cols = n;
    if (n != cols)
      throw FormatError(quoted(path) + ": line " + std::to_string(i + 1) + ": ragged row with " + std::to_string(n) +
                        " fields (expected " + std::to_string(cols) + ")");
    ++rows;
  }
  return Tensor<float>::from({rows, cols}, std::move(values));
}

void require_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& [key, _] : obj.items())
    if (!allowed.contains(key)) throw FormatError(where + ": unknown key '" + key + "'");
}

std::string string_field(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) throw FormatError(where + ": missing '" + key + "'");
  if (!obj[key].is_string()) throw FormatError(where + ": '" + key + "' must be a string");
  return obj[key].get<std::string>();
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

struct ParsedManifest {
  std::vector<std::string> domains;
  std::vector<SessionRecord> records;
};

ParsedManifest parse_manifest(const fs::path& path) {
  if (!fs::exists(path)) throw IngestionError("manifest not found: " + quoted(path));
  json doc;
  try {
    doc = json::parse(slurp(path));
  } catch (const json::parse_error& e) {
    throw FormatError(quoted(path) + ": " + e.what());
  }
  const std::string where = quoted(path);
  if (!doc.is_object()) throw FormatError(where + ": manifest must be an object");
  require_keys(doc, {"version", "domains", "sessions"}, where);
  if (!doc.contains("version") || !doc["version"].is_number_integer() || doc["version"].get<int>() != 1)
    throw FormatError(where + ": 'version' must be 1");

  ParsedManifest out;
  std::set<std::string> listed;
  const bool has_domains = doc.contains("domains");
  if (has_domains) {
    if (!doc["domains"].is_array()) throw FormatError(where + ": 'domains' must be a list");
    for (const auto& d : doc["domains"]) {
      if (!d.is_string()) throw FormatError(where + ": domain names must be strings");
      listed.insert(d.get<std::string>());
    }
  }
  if (!doc.contains("sessions") || !doc["sessions"].is_array())
    throw FormatError(where + ": 'sessions' must be a list");

  const fs::path base = path.parent_path();
  std::set<std::string> ids;
  std::size_t index = 0;
  for (const auto& s : doc["sessions"]) {
    const std::string at = where + " session #" + std::to_string(index++);
    if (!s.is_object()) throw FormatError(at + ": must be an object");
    require_keys(s, {"id", "domain", "target_features", "partner_features", "target_labels", "partner_labels", "fps"},
                 at);
    SessionRecord r;
    r.session_id = string_field(s, "id", at);
    const std::string named = where + " session '" + r.session_id + "'";
    if (!ids.insert(r.session_id).second) throw IngestionError(named + ": duplicate session id");
    r.domain = string_field(s, "domain", named);
    r.target_features = resolve(base, string_field(s, "target_features", named));
    r.partner_features = resolve(base, string_field(s, "partner_features", named));
    r.target_labels = resolve(base, string_field(s, "target_labels", named));
    if (s.contains("partner_labels")) r.partner_labels = resolve(base, string_field(s, "partner_labels", named));
    if (s.contains("fps")) {
      if (!s["fps"].is_number() || s["fps"].get<double>() <= 0.0)
        throw FormatError(named + ": 'fps' must be a positive number");
      r.fps = s["fps"].get<double>();
    }
    if (has_domains && !listed.contains(r.domain))
      throw IngestionError(named + ": domain '" + r.domain + "' is not in the manifest's domain list");
    listed.insert(r.domain);
    out.records.push_back(std::move(r));
  }
  out.domains.assign(listed.begin(), listed.end());
  return out;
}

std::vector<float> checked_labels(const fs::path& path, const std::string& session) {
  if (!fs::exists(path)) throw IngestionError("session '" + session + "': missing file " + quoted(path));
  std::vector<float> labels;
  try {
    labels = read_labels(path);
  } catch (const FormatError& e) {
    throw IngestionError("session '" + session + "': " + e.what());
  }
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (!(labels[i] >= 0.0f && labels[i] <= 1.0f))
      throw IngestionError("session '" + session + "': " + quoted(path) + " line " + std::to_string(i + 1) +
                           ": label " + format_float(labels[i]) + " outside [0, 1]");
  return labels;
}

Tensor<float> checked_features(const fs::path& path, const std::string& session) {
  if (!fs::exists(path)) throw IngestionError("session '" + session + "': missing file " + quoted(path));
  Tensor<float> m;
  try {
    m = read_feature_matrix(path);
  } catch (const FormatError& e) {
    throw IngestionError("session '" + session + "': " + e.what());
  }
  if (!m.all_finite()) throw IngestionError("session '" + session + "': " + quoted(path) + " has non-finite values");
  return m;
}

Corpus load(const fs::path& manifest) {
  auto parsed = parse_manifest(manifest);
  Corpus corpus;
  corpus.domains = std::move(parsed.domains);
  for (auto& r : parsed.records) {
    const std::string& id = r.session_id;
    Session s;
    s.x_t = checked_features(r.target_features, id);
    s.x_p = checked_features(r.partner_features, id);
    s.labels = checked_labels(r.target_labels, id);
    if (r.partner_labels) s.partner_labels = checked_labels(*r.partner_labels, id);

    const std::size_t n = s.x_t.rows();
    auto mismatch = [&](const std::string& what, std::size_t got) {
      return IngestionError("session '" + id + "': " + what + " has " + std::to_string(got) + " rows, target features " +
                            std::to_string(n));
    };
    if (n == 0) throw IngestionError("session '" + id + "': no frames");
    if (s.x_p.rows() != n) throw mismatch("partner features", s.x_p.rows());
    if (s.labels.size() != n) throw mismatch("target labels", s.labels.size());
    if (r.partner_labels && s.partner_labels.size() != n) throw mismatch("partner labels", s.partner_labels.size());
    if (s.x_p.cols() != s.x_t.cols())
      throw IngestionError("session '" + id + "': partner feature width " + std::to_string(s.x_p.cols()) +
                           " differs from target width " + std::to_string(s.x_t.cols()));
    if (corpus.sessions.empty()) corpus.feature_dim = s.x_t.cols();
    if (s.x_t.cols() != corpus.feature_dim)
      throw IngestionError("session '" + id + "': feature width " + std::to_string(s.x_t.cols()) +
                           " differs from the corpus width " + std::to_string(corpus.feature_dim));

    r.frame_count = n;
    s.domain_index = *corpus.domain_index(r.domain);
    s.record = std::move(r);
    corpus.sessions.push_back(std::move(s));
  }
  return corpus;
}

bool safe_id(const std::string& id) {
  return !id.empty() && id != "." && id != ".." && std::all_of(id.begin(), id.end(), [](unsigned char c) {
    return std::isalnum(c) || c == '_' || c == '-' || c == '.';
  });
}

}  // namespace

Tensor<float> read_feature_matrix(const fs::path& path) {
  const std::string bytes = slurp(path);
  const bool magic = bytes.size() >= 4 && std::memcmp(bytes.data(), kMagic, 4) == 0;
  if (magic || path.extension() == ".dapf") return read_dapf(path, bytes);
  return read_csv(path, bytes);
}

void write_feature_matrix(const fs::path& path, const Tensor<float>& m) {
  if (m.rank() != 2) throw DimensionError("write_feature_matrix: expected a matrix");
  std::string bytes(kMagic, 4);
  bytes.reserve(kHeaderBytes + m.size() * 4);
  store_le<std::uint32_t>(bytes, kDapfVersion);
  store_le<std::uint64_t>(bytes, m.rows());
  store_le<std::uint64_t>(bytes, m.cols());
  for (float v : m.data()) store_le(bytes, std::bit_cast<std::uint32_t>(v));
  spit(path, bytes);
}

std::vector<float> read_labels(const fs::path& path) {
  const std::string text = slurp(path);
  auto lines = lines_of(text);
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  std::vector<float> out;
  out.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    float v;
    if (!parse_float(lines[i], v))
      throw FormatError(quoted(path) + ": line " + std::to_string(i + 1) + ": not a number: '" +
                        std::string(trim(lines[i])) + "'");
    out.push_back(v);
  }
  return out;
}

void write_labels(const fs::path& path, std::span<const float> labels) {
  std::string text;
  for (float v : labels) text += format_float(v) + '\n';
  spit(path, text);
}

std::optional<std::size_t> Corpus::domain_index(const std::string& name) const {
  const auto it = std::lower_bound(domains.begin(), domains.end(), name);
  if (it == domains.end() || *it != name) return std::nullopt;
  return static_cast<std::size_t>(it - domains.begin());
}

std::size_t Corpus::total_frames() const {
  std::size_t n = 0;
  for (const auto& s : sessions) n += s.frames();
  return n;
}

std::vector<SessionRecord> load_manifest(const fs::path& path) {
  Corpus c = load(path);
  std::vector<SessionRecord> out;
  for (auto& s : c.sessions) out.push_back(std::move(s.record));
  return out;
}

Corpus load_corpus(const fs::path& manifest) { return load(manifest); }

fs::path write_corpus(const Corpus& corpus, const fs::path& dir) {
  json sessions = json::array();
  for (const auto& s : corpus.sessions) {
    const std::string& id = s.record.session_id;
    if (!safe_id(id)) throw UsageError("write_corpus: session id '" + id + "' is not usable as a file name");
    json entry{{"id", id},
               {"domain", corpus.domains.at(s.domain_index)},
               {"target_features", "features/" + id + ".target.dapf"},
               {"partner_features", "features/" + id + ".partner.dapf"},
               {"target_labels", "labels/" + id + ".target.txt"}};
    write_feature_matrix(dir / "features" / (id + ".target.dapf"), s.x_t);
    write_feature_matrix(dir / "features" / (id + ".partner.dapf"), s.x_p);
    write_labels(dir / "labels" / (id + ".target.txt"), s.labels);
    if (!s.partner_labels.empty()) {
      entry["partner_labels"] = "labels/" + id + ".partner.txt";
      write_labels(dir / "labels" / (id + ".partner.txt"), s.partner_labels);
    }
    if (s.record.fps) entry["fps"] = *s.record.fps;
    sessions.push_back(std::move(entry));
  }
  const json doc{{"version", 1}, {"domains", corpus.domains}, {"sessions", std::move(sessions)}};
  const fs::path manifest = dir / "manifest.json";
  spit(manifest, doc.dump(2) + '\n');
  return manifest;
}

CorpusSplit split_sessions(const Corpus& corpus, double held_out_fraction, std::uint64_t seed) {
  if (!(held_out_fraction >= 0.0 && held_out_fraction < 1.0))
    throw ConfigError("held-out fraction must be in [0, 1), got " + std::to_string(held_out_fraction));
  RngStream rng = RngStream(seed).derive("split");
  std::vector<bool> held(corpus.sessions.size(), false);
  for (std::size_t d = 0; d < corpus.domains.size(); ++d) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < corpus.sessions.size(); ++i)
      if (corpus.sessions[i].domain_index == d) members.push_back(i);
    const std::size_t n = members.size();
    if (n < 2 || held_out_fraction == 0.0) continue;
    const auto k = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(held_out_fraction * n)), 1, n - 1);
    for (std::size_t i = n - 1; i > 0; --i) std::swap(members[i], members[rng.below(i + 1)]);
    for (std::size_t i = 0; i < k; ++i) held[members[i]] = true;
  }
  CorpusSplit out{{corpus.domains, {}, corpus.feature_dim}, {corpus.domains, {}, corpus.feature_dim}};
  for (std::size_t i = 0; i < corpus.sessions.size(); ++i)
    (held[i] ? out.held_out : out.train).sessions.push_back(corpus.sessions[i]);
  return out;
}

std::size_t WindowLayout::core_frames() const {
  return static_cast<std::size_t>(std::count(core_mask.begin(), core_mask.end(), std::uint8_t{1}));
}

std::vector<WindowLayout> plan_windows(std::size_t n, WindowScheme scheme) {
  if (scheme.core == 0) throw ConfigError("window core length must be positive");
  if (n == 0) throw UsageError("plan_windows: session has no frames");
  const std::size_t count = (n + scheme.core - 1) / scheme.core;
  const std::size_t len = scheme.length();
  std::vector<WindowLayout> out(count);
  for (std::size_t w = 0; w < count; ++w) {
    auto& win = out[w];
    win.core_start = w * scheme.stride();
    win.source.resize(len);
    win.core_mask.resize(len);
    for (std::size_t j = 0; j < len; ++j) {
      // Frame index relative to the session, before clamping into [0, n).
      const auto frame = static_cast<std::ptrdiff_t>(win.core_start + j) - static_cast<std::ptrdiff_t>(scheme.context);
      win.source[j] = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(frame, 0, static_cast<std::ptrdiff_t>(n) - 1));
      win.core_mask[j] = j >= scheme.context && j < scheme.context + scheme.core && frame < static_cast<std::ptrdiff_t>(n);
    }
  }
  return out;
}

WindowSample make_window(const Session& session, const WindowLayout& layout) {
  auto rows = [&](const Tensor<float>& m) {
    const std::size_t d = m.cols();
    std::vector<float> v;
    v.reserve(layout.source.size() * d);
    for (std::size_t s : layout.source) {
      const auto row = m.data().subspan(s * d, d);
      v.insert(v.end(), row.begin(), row.end());
    }
    return Tensor<float>::from({layout.source.size(), d}, std::move(v));
  };
  return {rows(session.x_t), rows(session.x_p), gather<float>(session.labels, layout), layout.core_mask,
          session.domain_index, {session.record.session_id, layout.core_start}};
}

std::vector<WindowSample> segment_windows(const Session& session, WindowScheme scheme) {
  std::vector<WindowSample> out;
  for (const auto& layout : plan_windows(session.frames(), scheme)) out.push_back(make_window(session, layout));
  return out;
}

std::map<std::string, std::vector<float>> stitch_predictions(std::span<const WindowPrediction> windows,
                                                             const std::map<std::string, std::size_t>& frame_counts,
                                                             WindowScheme scheme) {
  std::map<std::string, std::vector<float>> out;
  std::map<std::string, std::vector<std::uint8_t>> seen;
  for (const auto& [id, n] : frame_counts) {
    out[id].assign(n, 0.0f);
    seen[id].assign(n, 0);
  }
  for (const auto& w : windows) {
    const auto& id = w.origin.session_id;
    const std::string at = "window (" + id + ", " + std::to_string(w.origin.core_start) + ")";
    const auto it = out.find(id);
    if (it == out.end()) throw ConsistencyError(at + ": unknown session");
    if (w.values.size() != scheme.length())
      throw ConsistencyError(at + ": " + std::to_string(w.values.size()) + " values, expected " +
                             std::to_string(scheme.length()));
    if (w.origin.core_start % scheme.stride() != 0) throw ConsistencyError(at + ": core start is off the stride grid");
    auto& flags = seen[id];
    const std::size_t n = flags.size();
    if (w.origin.core_start >= n) throw ConsistencyError(at + ": core starts past the session end");
    for (std::size_t k = 0; k < scheme.core && w.origin.core_start + k < n; ++k) {
      const std::size_t frame = w.origin.core_start + k;
      if (flags[frame]) throw ConsistencyError(at + ": frame " + std::to_string(frame) + " covered twice");
      flags[frame] = 1;
      it->second[frame] = w.values[scheme.context + k];
    }
  }
  for (const auto& [id, flags] : seen) {
    const auto gap = std::find(flags.begin(), flags.end(), std::uint8_t{0});
    if (gap != flags.end())
      throw ConsistencyError("session '" + id + "': frame " + std::to_string(gap - flags.begin()) +
                             " not covered by any window");
  }
  return out;
}

double LabelWarp::apply(double e) const { return lo + (hi - lo) * std::pow(e, gamma); }

void SyntheticSpec::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("synthetic spec: " + m); };
  if (num_domains == 0) fail("num_domains must be positive");
  if (sessions_per_domain == 0) fail("sessions_per_domain must be positive");
  if (frames_per_session == 0) fail("frames_per_session must be positive");
  if (latent_dims == 0) fail("latent_dims must be positive");
  if (feature_dim == 0) fail("feature_dim must be positive");
  if (sinusoids == 0) fail("sinusoids must be positive");
  if (!(kappa >= 0.0 && kappa <= 1.0)) fail("kappa must be in [0, 1]");
  if (!(sigma >= 0.0) || (target_sigma && !(*target_sigma >= 0.0))) fail("noise must be non-negative");
  if (!warps.empty() && warps.size() != num_domains) fail("need one warp per domain");
  for (const auto& w : warps)
    if (!(w.lo >= 0.0 && w.hi <= 1.0 && w.lo < w.hi && w.gamma > 0.0))
      fail("warps need 0 <= lo < hi <= 1 and gamma > 0");
}

std::vector<LabelWarp> SyntheticSpec::default_warps(std::size_t num_domains) {
  if (num_domains == 1) return {{0.05, 0.95, 1.0}};
  std::vector<LabelWarp> out;
  for (std::size_t k = 0; k < num_domains; ++k) {
    const double t = static_cast<double>(k) / static_cast<double>(num_domains - 1);
    out.push_back({0.05 + 0.30 * t, 0.60 + 0.35 * t, std::exp2(2.0 * t - 1.0)});
  }
  return out;
}

namespace {

/// Sum of slow sinusoids, min-max normalised to [0, 1].
std::vector<double> slow_latent(RngStream rng, std::size_t n, std::size_t components) {
  std::vector<double> v(n, 0.0);
  for (std::size_t c = 0; c < components; ++c) {
    const double f = rng.uniform(1.0 / 400.0, 1.0 / 50.0);
    const double a = rng.uniform(0.5, 1.0);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (std::size_t t = 0; t < n; ++t) v[t] += a * std::sin(2.0 * std::numbers::pi * f * static_cast<double>(t) + phase);
  }
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double low = *lo, span = *hi - *lo;
  for (auto& x : v) x = span > 0.0 ? (x - low) / span : 0.5;
  return v;
}

/// (latent, lag-1 diff) per channel, lifted to D features plus N(0, σ²) noise.
Tensor<float> lift(const std::vector<std::vector<double>>& channels, const std::vector<double>& w, std::size_t d,
                   double sigma, RngStream noise) {
  const std::size_t n = channels.front().size(), m = channels.size();
  std::vector<float> out(n * d);
  std::vector<double> z(2 * m);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t c = 0; c < m; ++c) {
      z[2 * c] = channels[c][t];
      z[2 * c + 1] = t == 0 ? 0.0 : channels[c][t] - channels[c][t - 1];
    }
    for (std::size_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 2 * m; ++k) acc += w[j * 2 * m + k] * z[k];
      out[t * d + j] = static_cast<float>(acc + sigma * noise.normal());
    }
  }
  return Tensor<float>::from({n, d}, std::move(out));
}

float annotate(const LabelWarp& warp, AnnotationStyle style, double e) {
  double y = warp.apply(e);
  if (style == AnnotationStyle::Step) {
    const double level = std::round(4.0 * (y - warp.lo) / (warp.hi - warp.lo));
    y = warp.lo + (warp.hi - warp.lo) * level / 4.0;
  }
  return static_cast<float>(std::clamp(y, 0.0, 1.0));
}

std::string padded(const std::string& prefix, std::size_t i) {
  std::string digits = std::to_string(i);
  if (digits.size() < 2) digits.insert(0, 2 - digits.size(), '0');
  return prefix + digits;
}

}  // namespace

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const auto warps = spec.warps.empty() ? SyntheticSpec::default_warps(spec.num_domains) : spec.warps;
  const RngStream root(spec.seed);
  const std::size_t m = spec.latent_dims, d = spec.feature_dim, n = spec.frames_per_session;

  std::vector<double> w(d * 2 * m);
  RngStream lift_rng = root.derive("lift");
  for (auto& x : w) x = lift_rng.normal() / std::sqrt(static_cast<double>(2 * m));

  SyntheticCorpus out;
  for (std::size_t k = 0; k < spec.num_domains; ++k) out.corpus.domains.push_back(padded("d", k));
  out.corpus.feature_dim = d;
  const double target_sigma = spec.target_sigma.value_or(spec.sigma);

  for (std::size_t k = 0; k < spec.num_domains; ++k) {
    for (std::size_t i = 0; i < spec.sessions_per_domain; ++i) {
      const std::uint64_t s = k * spec.sessions_per_domain + i;
      std::vector<std::vector<double>> target(m), partner(m);
      for (std::size_t c = 0; c < m; ++c) {
        target[c] = slow_latent(root.derive({s, 0, c}), n, spec.sinusoids);
        partner[c] = slow_latent(root.derive({s, 1, c}), n, spec.sinusoids);
      }
      // Channel 0 of the partner is the coupled engagement; its own draw is the independent part.
      for (std::size_t t = 0; t < n; ++t) partner[0][t] = spec.kappa * target[0][t] + (1.0 - spec.kappa) * partner[0][t];

      Session sess;
      sess.record.session_id = padded(out.corpus.domains[k] + "_s", i);
      sess.record.domain = out.corpus.domains[k];
      sess.record.frame_count = n;
      sess.domain_index = k;
      sess.x_t = lift(target, w, d, target_sigma, root.derive({s, 0, 1u << 20}));
      sess.x_p = lift(partner, w, d, spec.sigma, root.derive({s, 1, 1u << 20}));
      for (std::size_t t = 0; t < n; ++t) {
        sess.labels.push_back(annotate(warps[k], spec.style, target[0][t]));
        sess.partner_labels.push_back(annotate(warps[k], spec.style, partner[0][t]));
      }
      out.corpus.sessions.push_back(std::move(sess));
      out.target_latent.push_back(std::move(target[0]));
      out.partner_latent.push_back(std::move(partner[0]));
    }
  }
  return out;
}

fs::path generate_synthetic_corpus(const SyntheticSpec& spec, const fs::path& dir) {
  return write_corpus(generate_synthetic(spec).corpus, dir);
}

}  // namespace dapa
