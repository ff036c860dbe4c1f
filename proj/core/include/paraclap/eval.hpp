#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "paraclap/features.hpp"
#include "paraclap/model.hpp"
#include "paraclap/wav.hpp"

namespace paraclap {

enum class QueryMode { Raw, Templated };

std::string_view to_string(QueryMode m);
QueryMode parse_query_mode(std::string_view s);

struct LabelQuerySet {
  std::vector<std::string> labels;
  std::vector<std::string> query_texts;
  Matrix embeddings;  // K x d, unit rows
  QueryMode mode = QueryMode::Raw;
  std::vector<std::string> warnings;

  std::size_t size() const { return labels.size(); }
};

/// Raw encodes the bare label; Templated encodes "speaker is {adjective}".
/// Requires K >= 2 distinct labels.
LabelQuerySet build_label_queries(std::span<const std::string> labels, const ClapModel& model,
                                  QueryMode mode);

struct Classification {
  std::size_t index = 0;
  bool tie = false;
};

/// Argmax of <audio, query_k>; ties go to the lowest index.
Classification classify_embedding(std::span<const double> audio_unit, const LabelQuerySet& queries);
Classification classify_features(const FeatureVector& fv, const LabelQuerySet& queries,
                                 const ClapModel& model);
Classification classify(const Waveform& w, const LabelQuerySet& queries, const ClapModel& model);

using ConfusionMatrix = std::vector<std::vector<long>>;

/// [gold][pred] counts; throws ValidationError for out-of-range indices.
ConfusionMatrix confusion_matrix(std::span<const std::size_t> golds,
                                 std::span<const std::size_t> preds, std::size_t k);

/// Recall per class; nullopt for classes without gold items.
std::vector<std::optional<double>> per_class_recall(const ConfusionMatrix& confusion);

/// Mean recall over classes with at least one gold item.
double uar(const ConfusionMatrix& confusion);

struct EvalMetadata {
  std::string checkpoint_id;
  std::string dataset_id;
  std::string query_mode;
  std::vector<std::string> labels;
  std::vector<std::string> query_texts;
  std::size_t ties = 0;
  std::vector<std::string> failed_ids;
  std::vector<std::string> warnings;

  bool operator==(const EvalMetadata&) const = default;
};

struct EvalReport {
  ConfusionMatrix confusion;
  std::vector<std::optional<double>> per_class_recall;
  double uar = 0.0;
  std::size_t n = 0;
  EvalMetadata metadata;

  bool operator==(const EvalReport&) const = default;
};

struct EvalItem {
  std::string id;
  std::string label;
  FeatureVector features;
};

/// Classifies every item and folds the results into a report. Items whose
/// audio embedding is degenerate are listed in metadata.failed_ids and left
/// out of the confusion matrix.
EvalReport evaluate(std::span<const EvalItem> items, const LabelQuerySet& queries,
                    const ClapModel& model, EvalMetadata metadata = {});

std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(std::string_view text);

/// Header row and first column carry the class names.
std::string confusion_to_csv(const EvalReport& report);

void write_report(const std::filesystem::path& json_path, const std::filesystem::path& csv_path,
                  const EvalReport& report);

}  // namespace paraclap
