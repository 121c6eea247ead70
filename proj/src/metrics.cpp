#include "dapa/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>

#include <json.hpp>

#include "dapa/errors.hpp"
#include "dapa/parallel.hpp"

namespace dapa {

namespace {

template <typename V>
CccValue ccc_impl(std::span<const V> x, std::span<const V> y) {
  if (x.size() != y.size())
    throw UsageError("ccc: length mismatch (" + std::to_string(x.size()) + " vs " + std::to_string(y.size()) + ")");
  if (x.size() < 2) throw UsageError("ccc: need at least 2 values, got " + std::to_string(x.size()));
  const double m = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= m;
  my /= m;
  double vx = 0.0, vy = 0.0, cov = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    vx += dx * dx;
    vy += dy * dy;
    cov += dx * dy;
  }
  const double den = vx / m + vy / m + (mx - my) * (mx - my);
  if (den < 1e-12) return {0.0, true};
  return {std::clamp(2.0 * (cov / m) / den, -1.0, 1.0), false};
}

CccValue ccc_or_degenerate(std::span<const float> x, std::span<const float> y) {
  if (x.size() < 2) return {0.0, true};
  return ccc(x, y);
}

template <typename V>
std::string shortest(V v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, ptr};
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw IngestionError("cannot write '" + path.string() + "'");
}

}  // namespace

CccValue ccc(std::span<const double> x, std::span<const double> y) { return ccc_impl(x, y); }
CccValue ccc(std::span<const float> x, std::span<const float> y) { return ccc_impl(x, y); }

DatasetMap load_dataset_map(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("dataset map not found: '" + path.string() + "'");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("'" + path.string() + "': " + e.what());
  }
  if (!doc.is_object()) throw FormatError("'" + path.string() + "': expected an object of domain → dataset");
  DatasetMap out;
  for (const auto& [domain, dataset] : doc.items()) {
    if (!dataset.is_string()) throw FormatError("'" + path.string() + "': dataset for '" + domain + "' must be a string");
    out[domain] = dataset.get<std::string>();
  }
  return out;
}

EvalReport score_predictions(std::span<const SessionPrediction> predictions, const DatasetMap& datasets) {
  if (predictions.empty()) throw UsageError("nothing to evaluate: no sessions");
  EvalReport report;
  std::map<std::string, std::pair<std::vector<float>, std::vector<float>>> pooled;
  std::map<std::string, std::size_t> counts;
  for (const auto& p : predictions) {
    if (p.prediction.size() != p.truth.size())
      throw UsageError("session '" + p.session_id + "': " + std::to_string(p.prediction.size()) + " predictions for " +
                       std::to_string(p.truth.size()) + " labels");
    const auto it = datasets.find(p.domain);
    const std::string dataset = it == datasets.end() ? p.domain : it->second;
    report.sessions.push_back({p.session_id, dataset, p.truth.size(), ccc_or_degenerate(p.prediction, p.truth)});
    auto& [x, y] = pooled[dataset];
    x.insert(x.end(), p.prediction.begin(), p.prediction.end());
    y.insert(y.end(), p.truth.begin(), p.truth.end());
    ++counts[dataset];
  }
  for (const auto& [name, xy] : pooled) {
    report.datasets.push_back({name, xy.first.size(), counts[name], ccc_or_degenerate(xy.first, xy.second)});
    report.global += report.datasets.back().ccc.value;
  }
  report.global /= static_cast<double>(report.datasets.size());
  return report;
}

WindowScheme scheme_for(const ModelConfig& config) {
  if (config.window_length % 3 != 0)
    throw ConfigError("window_length must split into core + two context thirds, got " +
                      std::to_string(config.window_length));
  const std::size_t third = config.window_length / 3;
  return {third, third};
}

template <typename T>
std::vector<float> predict_session(const DapaModel<T>& model, const Session& session, std::size_t workers) {
  const WindowScheme scheme = scheme_for(model.config);
  const DomainSelection domain = model.resolve_domain(session.record.domain);
  const auto layouts = plan_windows(session.frames(), scheme);
  std::vector<WindowPrediction> windows(layouts.size());
  parallel_for(layouts.size(), workers, [&](std::size_t w) {
    const WindowSample sample = make_window(session, layouts[w]);
    Tape<T> tape(false);
    Context<T> ctx{tape, RngStream(0), false};
    const Tensor<T> y = forward(ctx, model, to_precision<T>(sample.x_t), to_precision<T>(sample.x_p), domain);
    windows[w] = {sample.origin, std::vector<float>(y.data().begin(), y.data().end())};
  });
  return stitch_predictions(windows, {{session.record.session_id, session.frames()}}, scheme)
      .at(session.record.session_id);
}

template <typename T>
std::vector<SessionPrediction> predict_corpus(const DapaModel<T>& model, const Corpus& corpus, std::size_t workers) {
  std::vector<SessionPrediction> out;
  for (const auto& s : corpus.sessions)
    out.push_back({s.record.session_id, s.record.domain, predict_session(model, s, workers), s.labels});
  return out;
}

template <typename T>
EvalReport evaluate_corpus(const DapaModel<T>& model, const Corpus& corpus, const DatasetMap& datasets,
                           std::size_t workers) {
  return score_predictions(predict_corpus(model, corpus, workers), datasets);
}

void write_prediction_csv(const std::filesystem::path& path, std::span<const SessionPrediction> predictions) {
  std::string text = "session_id,frame,prediction,truth\n";
  for (const auto& p : predictions)
    for (std::size_t t = 0; t < p.prediction.size(); ++t)
      text += p.session_id + ',' + std::to_string(t) + ',' + shortest(p.prediction[t]) + ',' + shortest(p.truth[t]) + '\n';
  write_file(path, text);
}

void write_report(const std::filesystem::path& json_path, const std::filesystem::path& csv_path,
                  const EvalReport& report, const std::string& label) {
  nlohmann::json doc{{"label", label}, {"global", report.global}};
  auto& ds = doc["datasets"] = nlohmann::json::array();
  for (const auto& d : report.datasets)
    ds.push_back({{"name", d.name}, {"frames", d.frames}, {"sessions", d.sessions}, {"ccc", d.ccc.value},
                  {"degenerate", d.ccc.degenerate}});
  auto& ss = doc["sessions"] = nlohmann::json::array();
  for (const auto& s : report.sessions)
    ss.push_back({{"id", s.session_id}, {"dataset", s.dataset}, {"frames", s.frames}, {"ccc", s.ccc.value},
                  {"degenerate", s.ccc.degenerate}});
  write_file(json_path, doc.dump(2) + '\n');

  std::string header = "model", row = label;
  for (const auto& d : report.datasets) {
    header += ',' + d.name;
    row += ',' + shortest(d.ccc.value);
  }
  write_file(csv_path, header + ",global\n" + row + ',' + shortest(report.global) + '\n');
}

template std::vector<float> predict_session(const DapaModel<float>&, const Session&, std::size_t);
template std::vector<float> predict_session(const DapaModel<double>&, const Session&, std::size_t);
template std::vector<SessionPrediction> predict_corpus(const DapaModel<float>&, const Corpus&, std::size_t);
template std::vector<SessionPrediction> predict_corpus(const DapaModel<double>&, const Corpus&, std::size_t);
template EvalReport evaluate_corpus(const DapaModel<float>&, const Corpus&, const DatasetMap&, std::size_t);
template EvalReport evaluate_corpus(const DapaModel<double>&, const Corpus&, const DatasetMap&, std::size_t);

}  // namespace dapa
