#include "paraclap/eval.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include "json.hpp"
#include "paraclap/error.hpp"

namespace paraclap {

using nlohmann::json;

std::string_view to_string(QueryMode m) { return m == QueryMode::Raw ? "raw" : "templated"; }

QueryMode parse_query_mode(std::string_view s) {
  if (s == "raw") return QueryMode::Raw;
  if (s == "templated") return QueryMode::Templated;
  throw ValidationError("unknown query mode '" + std::string(s) + "' (expected raw or templated)");
}

LabelQuerySet build_label_queries(std::span<const std::string> labels, const ClapModel& model,
                                  QueryMode mode) {
  if (labels.size() < 2) throw ValidationError("need at least 2 labels for classification");
  std::set<std::string> distinct(labels.begin(), labels.end());
  if (distinct.size() != labels.size()) throw ValidationError("labels must be distinct");

  LabelQuerySet q;
  q.mode = mode;
  q.labels.assign(labels.begin(), labels.end());
  q.embeddings = Matrix(labels.size(), model.config.shared_dim);
  for (std::size_t k = 0; k < labels.size(); ++k) {
    std::string text;
    if (mode == QueryMode::Raw) {
      text = labels[k];
    } else {
      auto adj = emotion_adjective(labels[k]);
      if (!adj) q.warnings.push_back("label '" + labels[k] + "' has no adjective; used verbatim");
      text = "speaker is " + adj.value_or(labels[k]);
    }
    const auto tokens = tokenize(text, model.vocab);
    if (tokens.empty()) throw ValidationError("label '" + labels[k] + "' has no tokens");
    if (std::all_of(tokens.begin(), tokens.end(), [](std::size_t t) { return t == kUnknownToken; })) {
      q.warnings.push_back("query '" + text + "' has only unknown tokens");
    }
    auto e = embed_text(model, text);
    std::copy(e.begin(), e.end(), q.embeddings.row(k).begin());
    q.query_texts.push_back(std::move(text));
  }
  return q;
}

Classification classify_embedding(std::span<const double> audio_unit, const LabelQuerySet& queries) {
  Classification c;
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < queries.size(); ++k) {
    const double s = dot(audio_unit, queries.embeddings.row(k));
    if (s > best) {
      best = s;
      c.index = k;
      c.tie = false;
    } else if (s == best) {
      c.tie = true;
    }
  }
  return c;
}

Classification classify_features(const FeatureVector& fv, const LabelQuerySet& queries,
                                 const ClapModel& model) {
  return classify_embedding(embed_audio(model, fv), queries);
}

Classification classify(const Waveform& w, const LabelQuerySet& queries, const ClapModel& model) {
  return classify_features(extract_features(w), queries, model);
}

ConfusionMatrix confusion_matrix(std::span<const std::size_t> golds,
                                 std::span<const std::size_t> preds, std::size_t k) {
  if (golds.size() != preds.size()) throw ValidationError("golds and preds differ in length");
  ConfusionMatrix m(k, std::vector<long>(k, 0));
  for (std::size_t i = 0; i < golds.size(); ++i) {
    if (golds[i] >= k || preds[i] >= k) {
      throw ValidationError("class index out of range at item " + std::to_string(i));
    }
    ++m[golds[i]][preds[i]];
  }
  return m;
}

std::vector<std::optional<double>> per_class_recall(const ConfusionMatrix& confusion) {
  std::vector<std::optional<double>> out;
  for (std::size_t g = 0; g < confusion.size(); ++g) {
    long total = 0;
    for (long v : confusion[g]) total += v;
    if (total == 0) {
      out.push_back(std::nullopt);
    } else {
      out.push_back(static_cast<double>(confusion[g][g]) / static_cast<double>(total));
    }
  }
  return out;
}

double uar(const ConfusionMatrix& confusion) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& r : per_class_recall(confusion)) {
    if (!r) continue;
    sum += *r;
    ++count;
  }
  if (count == 0) throw ValidationError("UAR undefined: confusion matrix has no gold items");
  return sum / static_cast<double>(count);
}

EvalReport evaluate(std::span<const EvalItem> items, const LabelQuerySet& queries,
                    const ClapModel& model, EvalMetadata metadata) {
  std::map<std::string, std::size_t> index;
  for (std::size_t k = 0; k < queries.labels.size(); ++k) index[queries.labels[k]] = k;

  std::vector<std::size_t> golds;
  std::vector<std::size_t> preds;
  for (const auto& item : items) {
    auto it = index.find(item.label);
    if (it == index.end()) {
      throw ValidationError("item '" + item.id + "' has label '" + item.label +
                            "' which is not in the query set");
    }
    Classification c;
    try {
      c = classify_features(item.features, queries, model);
    } catch (const DegenerateEmbeddingError&) {
      metadata.failed_ids.push_back(item.id);
      continue;
    }
    if (c.tie) ++metadata.ties;
    golds.push_back(it->second);
    preds.push_back(c.index);
  }

  EvalReport r;
  r.confusion = confusion_matrix(golds, preds, queries.size());
  r.per_class_recall = per_class_recall(r.confusion);
  r.uar = uar(r.confusion);
  r.n = golds.size();
  metadata.labels = queries.labels;
  metadata.query_texts = queries.query_texts;
  metadata.query_mode = std::string(to_string(queries.mode));
  metadata.warnings.insert(metadata.warnings.end(), queries.warnings.begin(), queries.warnings.end());
  r.metadata = std::move(metadata);
  return r;
}

std::string report_to_json(const EvalReport& r) {
  json recalls = json::array();
  for (const auto& v : r.per_class_recall) recalls.push_back(v ? json(*v) : json(nullptr));
  const auto& m = r.metadata;
  json doc = {
      {"uar", r.uar},
      {"n", r.n},
      {"confusion", r.confusion},
      {"per_class_recall", recalls},
      {"metadata",
       {{"checkpoint_id", m.checkpoint_id},
        {"dataset_id", m.dataset_id},
        {"query_mode", m.query_mode},
        {"labels", m.labels},
        {"query_texts", m.query_texts},
        {"ties", m.ties},
        {"failed_ids", m.failed_ids},
        {"warnings", m.warnings}}},
  };
  return doc.dump(2) + "\n";
}

EvalReport report_from_json(std::string_view text) {
  try {
    const json doc = json::parse(text);
    EvalReport r;
    r.uar = doc.at("uar").get<double>();
    r.n = doc.at("n").get<std::size_t>();
    r.confusion = doc.at("confusion").get<ConfusionMatrix>();
    for (const auto& v : doc.at("per_class_recall")) {
      r.per_class_recall.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
    }
    const auto& m = doc.at("metadata");
    r.metadata.checkpoint_id = m.at("checkpoint_id").get<std::string>();
    r.metadata.dataset_id = m.at("dataset_id").get<std::string>();
    r.metadata.query_mode = m.at("query_mode").get<std::string>();
    r.metadata.labels = m.at("labels").get<std::vector<std::string>>();
    r.metadata.query_texts = m.at("query_texts").get<std::vector<std::string>>();
    r.metadata.ties = m.at("ties").get<std::size_t>();
    r.metadata.failed_ids = m.at("failed_ids").get<std::vector<std::string>>();
    r.metadata.warnings = m.at("warnings").get<std::vector<std::string>>();
    return r;
  } catch (const json::exception& e) {
    throw ParseError(std::string("report: ") + e.what());
  }
}

std::string confusion_to_csv(const EvalReport& report) {
  const auto& labels = report.metadata.labels;
  std::string out = "gold\\pred";
  for (const auto& l : labels) out += "," + l;
  out += '\n';
  for (std::size_t g = 0; g < report.confusion.size(); ++g) {
    out += g < labels.size() ? labels[g] : std::to_string(g);
    for (long v : report.confusion[g]) out += "," + std::to_string(v);
    out += '\n';
  }
  return out;
}

void write_report(const std::filesystem::path& json_path, const std::filesystem::path& csv_path,
                  const EvalReport& report) {
  for (const auto& [path, body] : {std::pair{json_path, report_to_json(report)},
                                   std::pair{csv_path, confusion_to_csv(report)}}) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << body;
    if (!out) throw IoError("write failed for " + path.string());
  }
}

}  // namespace paraclap
