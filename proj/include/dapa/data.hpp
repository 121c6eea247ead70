#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "dapa/tensor.hpp"

namespace dapa {

namespace fs = std::filesystem;

/// DAPF: "DAPF", u32 LE version 1, u64 LE rows, u64 LE cols, then rows·cols
/// float32 LE values in row-major order.
inline constexpr std::uint32_t kDapfVersion = 1;

/// Reads a DAPF file, or a numeric CSV (one frame per line, `#` comments)
/// when the file does not start with the DAPF magic and is not named *.dapf.
Tensor<float> read_feature_matrix(const fs::path& path);
void write_feature_matrix(const fs::path& path, const Tensor<float>& m);

/// One decimal value per line. Values are not range-checked here.
std::vector<float> read_labels(const fs::path& path);
void write_labels(const fs::path& path, std::span<const float> labels);

struct SessionRecord {
  std::string session_id;
  std::string domain;
  fs::path target_features;
  fs::path partner_features;
  fs::path target_labels;
  std::optional<fs::path> partner_labels;
  std::optional<double> fps;
  std::size_t frame_count = 0;
};

struct Session {
  SessionRecord record;
  std::size_t domain_index = 0;  // position in Corpus::domains
  Tensor<float> x_t;             // N × D
  Tensor<float> x_p;             // N × D
  std::vector<float> labels;     // N, in [0, 1]
  std::vector<float> partner_labels;  // empty unless the manifest lists them

  std::size_t frames() const { return labels.size(); }
};

struct Corpus {
  std::vector<std::string> domains;  // sorted, unique
  std::vector<Session> sessions;     // manifest order
  std::size_t feature_dim = 0;

  std::optional<std::size_t> domain_index(const std::string& name) const;
  std::size_t total_frames() const;
};

/// Parses and validates a JSON manifest; every referenced file is read and
/// checked (row counts, label range, feature width). Relative paths resolve
/// against the manifest's directory.
///
/// {"version": 1, "domains": ["a", ...],
///  "sessions": [{"id", "domain", "target_features", "partner_features",
///                "target_labels", "partner_labels"?, "fps"?}]}
std::vector<SessionRecord> load_manifest(const fs::path& path);
Corpus load_corpus(const fs::path& manifest);

/// Writes DAPF features, label files and manifest.json under `dir`; returns
/// the manifest path. Output bytes depend only on the corpus contents.
fs::path write_corpus(const Corpus& corpus, const fs::path& dir);

struct CorpusSplit {
  Corpus train;
  Corpus held_out;
};

/// Holds out whole sessions, per domain: round(fraction·n) of them, at least
/// one when a domain has two or more sessions and never all of them.
CorpusSplit split_sessions(const Corpus& corpus, double held_out_fraction, std::uint64_t seed);

struct WindowScheme {
  std::size_t core = 32;
  std::size_t context = 32;  // auxiliary frames on each side

  std::size_t length() const { return core + 2 * context; }
  std::size_t stride() const { return core; }
};

/// Frame indices and mask for one window. `source[j]` is the session frame
/// copied into position j (edges replicate the first/last frame).
struct WindowLayout {
  std::size_t core_start = 0;
  std::vector<std::size_t> source;
  std::vector<std::uint8_t> core_mask;  // real frames inside the core

  std::size_t core_frames() const;
};

/// ceil(n / core) windows whose cores partition frames 0..n−1.
std::vector<WindowLayout> plan_windows(std::size_t n, WindowScheme scheme = {});

struct WindowOrigin {
  std::string session_id;
  std::size_t core_start = 0;

  auto operator<=>(const WindowOrigin&) const = default;
};

struct WindowSample {
  Tensor<float> x_t;  // N_w × D
  Tensor<float> x_p;
  std::vector<float> y;
  std::vector<std::uint8_t> core_mask;
  std::size_t domain = 0;
  WindowOrigin origin;
};

/// Feature windows are stored in float; double-precision models widen them.
template <typename T>
Tensor<T> to_precision(const Tensor<float>& m) {
  if constexpr (std::is_same_v<T, float>) {
    return m;
  } else {
    return Tensor<T>::from(m.shape(), std::vector<T>(m.data().begin(), m.data().end()));
  }
}

WindowSample make_window(const Session& session, const WindowLayout& layout);
std::vector<WindowSample> segment_windows(const Session& session, WindowScheme scheme = {});

/// out[j] = values[layout.source[j]].
template <typename V>
std::vector<V> gather(std::span<const V> values, const WindowLayout& layout) {
  std::vector<V> out;
  out.reserve(layout.source.size());
  for (std::size_t s : layout.source) out.push_back(values[s]);
  return out;
}

struct WindowPrediction {
  WindowOrigin origin;
  std::vector<float> values;  // one per window position
};

/// Reassembles per-session series from core positions. Every frame must be
/// covered by exactly one core; window order does not matter.
std::map<std::string, std::vector<float>> stitch_predictions(std::span<const WindowPrediction> windows,
                                                             const std::map<std::string, std::size_t>& frame_counts,
                                                             WindowScheme scheme = {});

enum class AnnotationStyle { Continuous, Step };

/// y = lo + (hi − lo) · e^gamma, monotone for gamma > 0.
struct LabelWarp {
  double lo = 0.0;
  double hi = 1.0;
  double gamma = 1.0;

  double apply(double e) const;
};

struct SyntheticSpec {
  std::size_t num_domains = 1;
  std::size_t sessions_per_domain = 4;
  std::size_t frames_per_session = 2000;
  std::size_t latent_dims = 4;  // engagement + (latent_dims − 1) nuisance channels per participant
  std::size_t feature_dim = 32;
  std::size_t sinusoids = 4;    // components per latent channel
  double kappa = 0.9;
  double sigma = 0.05;                 // feature noise
  std::optional<double> target_sigma;  // overrides sigma for the target's features
  std::vector<LabelWarp> warps;        // one per domain; empty → default_warps
  AnnotationStyle style = AnnotationStyle::Continuous;
  std::uint64_t seed = 40;

  void validate() const;
  static std::vector<LabelWarp> default_warps(std::size_t num_domains);
};

struct SyntheticCorpus {
  Corpus corpus;
  std::vector<std::vector<double>> target_latent;   // e_t per session
  std::vector<std::vector<double>> partner_latent;  // κ·e_t + (1−κ)·u_t
};

/// Feature lifts are shared by every domain, so the domain is visible only
/// through the label warp (and the prompt).
SyntheticCorpus generate_synthetic(const SyntheticSpec& spec);

/// generate_synthetic + write_corpus.
fs::path generate_synthetic_corpus(const SyntheticSpec& spec, const fs::path& dir);

}  // namespace dapa
