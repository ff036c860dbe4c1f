// paraclap: synth | extract | caption | train | eval
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or validation failure.

#include <atomic>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "paraclap/checkpoint.hpp"
#include "paraclap/corpus.hpp"
#include "paraclap/error.hpp"
#include "paraclap/eval.hpp"
#include "paraclap/features.hpp"
#include "paraclap/querygen.hpp"
#include "paraclap/training.hpp"
#include "paraclap/wav.hpp"

namespace fs = std::filesystem;
using namespace paraclap;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  bool verbose = false;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "Flat key=value file; flags take precedence")
      ->check(CLI::ExistingFile);
  sub->add_option("--seed", c.seed, "Seed for every random choice")->capture_default_str();
  sub->add_flag("--verbose", c.verbose, "Progress on stderr");
}

// Fills options that were not given on the command line from the config file.
void apply_config(CLI::App* sub, const std::string& path) {
  if (path.empty()) return;
  for (const auto& item : CLI::ConfigINI().from_file(path)) {
    const std::string key = item.parents.empty() ? item.name : item.fullname();
    CLI::Option* opt = sub->get_option_no_throw("--" + key);
    if (opt == nullptr) throw ValidationError("config " + path + ": unknown key '" + key + "'");
    if (opt->count() > 0 || key == "config") continue;
    opt->add_result(item.inputs);
    opt->run_callback();
  }
}

std::string config_snapshot(const CLI::App* sub) {
  std::istringstream in(sub->config_to_str(true, false));
  std::string out;
  for (std::string line; std::getline(in, line);) {
    if (line.rfind("config=", 0) == 0) continue;
    out += line;
    out += '\n';
  }
  return out;
}

void write_text(const fs::path& path, std::string_view body) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << body;
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<UtteranceRecord> load_nonempty_manifest(const fs::path& path) {
  auto records = load_manifest(path);
  if (records.empty()) throw ValidationError("manifest " + path.string() + " is empty");
  return records;
}

std::vector<FeatureVector> features_for(std::span<const UtteranceRecord> records,
                                        const fs::path& cache) {
  const auto rows = read_feature_csv(cache);
  const auto index = index_features(rows);
  std::vector<FeatureVector> out;
  std::vector<std::string> missing;
  for (const auto& r : records) {
    auto it = index.find(r.id);
    if (it == index.end()) {
      missing.push_back(r.id);
    } else {
      out.push_back(it->second);
    }
  }
  if (!missing.empty()) {
    std::string msg = "feature cache " + cache.string() + " lacks " +
                      std::to_string(missing.size()) + " manifest id(s):";
    for (std::size_t i = 0; i < missing.size() && i < 10; ++i) msg += " " + missing[i];
    throw ValidationError(msg);
  }
  return out;
}

std::vector<TrainingItem> training_items(const fs::path& manifest, const fs::path& cache) {
  const auto records = load_nonempty_manifest(manifest);
  const auto features = features_for(records, cache);
  std::vector<TrainingItem> items;
  for (std::size_t i = 0; i < records.size(); ++i) items.push_back({records[i], features[i]});
  return items;
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  Common common;
  std::string classes = "four-class";
  std::size_t n = 20;
  std::string out_dir;
};

int run_synth(const SynthArgs& a) {
  std::vector<ClassProfile> profiles;
  if (a.classes.find(':') == std::string::npos) {
    profiles = builtin_profiles(a.classes);
  } else {
    profiles = parse_class_profiles(a.classes);
  }
  Rng rng = make_rng(a.common.seed, {});
  const auto records = synthesize_corpus(profiles, a.n, rng, a.out_dir);
  std::cout << "wrote " << records.size() << " utterances to " << a.out_dir << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// extract

struct ExtractArgs {
  Common common;
  std::string manifest;
  std::string out;
  double clip_seconds = 0.0;
  unsigned jobs = 1;
};

int run_extract(const ExtractArgs& a) {
  const auto records = load_nonempty_manifest(a.manifest);
  const std::size_t n = records.size();
  std::vector<std::optional<FeatureVector>> results(n);
  std::vector<std::string> errors(n);

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        Waveform w = decode_wav(records[i].audio_path);
        if (a.clip_seconds > 0.0) {
          Rng rng = make_rng(a.common.seed, {i});
          w = clip_or_pad(w, a.clip_seconds, rng);
        }
        results[i] = extract_features(w);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const unsigned jobs = std::max(1u, a.jobs);
  std::vector<std::thread> pool;
  for (unsigned j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::vector<FeatureRow> rows;
  std::string sidecar;
  for (std::size_t i = 0; i < n; ++i) {
    if (results[i]) {
      rows.push_back({records[i].id, *results[i]});
    } else {
      sidecar += nlohmann::json{{"id", records[i].id}, {"error", errors[i]}}.dump() + "\n";
    }
    if (a.common.verbose) {
      std::cerr << records[i].id << (results[i] ? " ok" : " failed: " + errors[i]) << "\n";
    }
  }
  const fs::path out(a.out);
  fs::path err_path = out;
  err_path += ".errors.jsonl";
  write_text(err_path, sidecar);
  if (rows.empty()) {
    std::cerr << "error: no record could be extracted; see " << err_path.string() << "\n";
    return kExitRuntime;
  }
  write_feature_csv(out, rows);
  std::cout << rows.size() << " of " << n << " records extracted";
  if (rows.size() < n) std::cout << "; failures in " << err_path.string();
  std::cout << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// caption

struct CaptionArgs {
  Common common;
  std::string manifest;
  std::string features;
  std::string mode = "only-emo";
  std::size_t max_queries = 5;
  std::string out;
  std::string templates;
};

int run_caption(const CaptionArgs& a) {
  const CaptionPolicy policy = parse_caption_policy(a.mode, a.max_queries);
  const TemplateBank bank =
      a.templates.empty() ? default_template_bank() : load_template_bank(a.templates);
  const auto records = load_nonempty_manifest(a.manifest);
  const auto features = features_for(records, a.features);
  const ThresholdTable thresholds = fit_thresholds(records, features);

  Rng rng = make_rng(a.common.seed, {});
  std::string body;
  std::vector<std::string> skipped;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const CaptionPool pool = caption_pool(records[i], features[i], thresholds, bank);
    try {
      const Caption c = sample_caption(pool, policy, rng);
      body += nlohmann::json{{"id", records[i].id}, {"caption", c.text}, {"parts", c.parts}}.dump();
      body += '\n';
    } catch (const EmptyPoolError&) {
      skipped.push_back(records[i].id);
    }
  }
  const fs::path out(a.out);
  write_text(out, body);
  fs::path th_path = out;
  th_path.replace_extension(".thresholds.json");
  write_text(th_path, format_thresholds(thresholds));
  if (!skipped.empty()) {
    std::cerr << skipped.size() << " record(s) have no caption under " << to_string(policy) << ":";
    for (const auto& id : skipped) std::cerr << " " << id;
    std::cerr << "\n";
  }
  std::cout << records.size() - skipped.size() << " captions written to " << out.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  Common common;
  std::string manifest;
  std::string features;
  std::string heldout_manifest;
  std::string heldout_features;
  double heldout_fraction = 0.2;
  std::string mode = "only-emo";
  std::size_t max_queries = 5;
  std::size_t epochs = 50;
  std::size_t batch_size = 64;
  double lr_encoders = 1e-5;
  double lr_heads = 1e-3;
  std::size_t shared_dim = 64;
  std::string query_mode = "raw";
  std::string templates;
  std::string out_dir;
};

int run_train(const TrainArgs& a, const CLI::App* sub) {
  TrainConfig config;
  config.policy = parse_caption_policy(a.mode, a.max_queries);
  config.epochs = a.epochs;
  config.batch_size = a.batch_size;
  config.seed = a.common.seed;
  config.adam.lr_encoders = a.lr_encoders;
  config.adam.lr_heads = a.lr_heads;
  config.model.shared_dim = a.shared_dim;
  config.eval_query_mode = parse_query_mode(a.query_mode);
  validate(config);
  const TemplateBank bank =
      a.templates.empty() ? default_template_bank() : load_template_bank(a.templates);

  auto items = training_items(a.manifest, a.features);
  std::vector<TrainingItem> train_items;
  std::vector<TrainingItem> heldout;
  if (!a.heldout_manifest.empty()) {
    if (a.heldout_features.empty()) {
      throw ValidationError("--heldout-manifest requires --heldout-features");
    }
    train_items = std::move(items);
    heldout = training_items(a.heldout_manifest, a.heldout_features);
  } else {
    std::tie(train_items, heldout) = split_heldout(items, a.heldout_fraction, a.common.seed);
  }

  EpochCallback progress;
  if (a.common.verbose) {
    progress = [](const EpochLog& e) {
      std::fprintf(stderr, "epoch %zu loss %.6f uar %.4f\n", e.epoch, e.loss, e.uar);
    };
  }
  const TrainResult result = train(config, train_items, heldout, bank, progress);
  write_run_directory(a.out_dir, result, config_snapshot(sub));
  std::cout << "best epoch " << result.best_epoch << "\n";
  std::cout << "held-out UAR " << nlohmann::json(result.best_uar).dump() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  Common common;
  std::string manifest;
  std::string checkpoint;
  std::string labels;
  std::string query_mode = "raw";
  std::string features;
  std::string out;
};

int run_eval(const EvalArgs& a) {
  const QueryMode mode = parse_query_mode(a.query_mode);
  const auto records = load_nonempty_manifest(a.manifest);

  std::vector<std::string> unlabeled;
  std::set<std::string> present;
  for (const auto& r : records) {
    if (r.emotion) {
      present.insert(*r.emotion);
    } else {
      unlabeled.push_back(r.id);
    }
  }
  if (!unlabeled.empty()) {
    throw ValidationError(std::to_string(unlabeled.size()) +
                          " record(s) lack an emotion label, first: " + unlabeled.front());
  }
  std::vector<std::string> labels =
      a.labels.empty() ? std::vector<std::string>(present.begin(), present.end())
                       : split_csv(a.labels);
  const std::set<std::string> label_set(labels.begin(), labels.end());
  std::string offending;
  for (const auto& l : present) {
    if (!label_set.count(l)) offending += (offending.empty() ? "" : ", ") + l;
  }
  if (!offending.empty()) {
    throw ValidationError("manifest labels not in --labels: " + offending);
  }

  std::ifstream in(a.checkpoint, std::ios::binary);
  if (!in) throw IoError("cannot read " + a.checkpoint);
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string ckpt_bytes = buf.str();
  const ClapModel model = checkpoint_from_string(ckpt_bytes);

  std::vector<FeatureVector> features;
  if (!a.features.empty()) {
    features = features_for(records, a.features);
  } else {
    for (const auto& r : records) features.push_back(extract_features(decode_wav(r.audio_path)));
  }
  std::vector<EvalItem> items;
  for (std::size_t i = 0; i < records.size(); ++i) {
    items.push_back({records[i].id, *records[i].emotion, features[i]});
  }

  const LabelQuerySet queries = build_label_queries(labels, model, mode);
  EvalMetadata meta;
  meta.checkpoint_id = content_hash(ckpt_bytes);
  meta.dataset_id = content_hash(format_manifest(records, fs::path(a.manifest).parent_path()));
  const EvalReport report = evaluate(items, queries, model, meta);

  const fs::path out(a.out);
  fs::path csv = out;
  csv.replace_extension(".csv");
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_report(out, csv, report);
  for (const auto& w : report.metadata.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << "UAR " << nlohmann::json(report.uar).dump() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Paralinguistic contrastive language-audio pretraining on a desk"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Write a synthetic labelled corpus");
  add_common(s, synth.common);
  s->add_option("--classes", synth.classes, "Preset (four-class, two-class) or name:f0lo-f0hi:amplo-amphi:durlo-durhi,...")
      ->capture_default_str();
  s->add_option("--n", synth.n, "Utterances per class")->capture_default_str()->check(
      CLI::PositiveNumber);
  s->add_option("--out-dir", synth.out_dir)->required();

  ExtractArgs extract;
  auto* x = app.add_subcommand("extract", "Acoustic features for every manifest record");
  add_common(x, extract.common);
  x->add_option("--manifest", extract.manifest)->required()->check(CLI::ExistingFile);
  x->add_option("--out", extract.out, "Feature cache CSV")->required();
  x->add_option("--clip-seconds", extract.clip_seconds, "Clip or pad to this length first");
  x->add_option("--jobs", extract.jobs)->capture_default_str()->check(CLI::PositiveNumber);

  CaptionArgs caption;
  auto* c = app.add_subcommand("caption", "Sample one caption per record");
  add_common(c, caption.common);
  c->add_option("--manifest", caption.manifest)->required()->check(CLI::ExistingFile);
  c->add_option("--features", caption.features)->required()->check(CLI::ExistingFile);
  c->add_option("--mode", caption.mode, "only-emo, randN or no-emo-randN")->capture_default_str();
  c->add_option("--max-queries", caption.max_queries)->capture_default_str();
  c->add_option("--out", caption.out, "Captions JSONL")->required();
  c->add_option("--templates", caption.templates, "Template overrides JSON")
      ->check(CLI::ExistingFile);

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Contrastive training with held-out zero-shot UAR");
  add_common(t, tr.common);
  t->add_option("--manifest", tr.manifest)->required()->check(CLI::ExistingFile);
  t->add_option("--features", tr.features)->required()->check(CLI::ExistingFile);
  t->add_option("--heldout-manifest", tr.heldout_manifest)->check(CLI::ExistingFile);
  t->add_option("--heldout-features", tr.heldout_features)->check(CLI::ExistingFile);
  t->add_option("--heldout-fraction", tr.heldout_fraction)->capture_default_str();
  t->add_option("--mode", tr.mode, "only-emo, randN or no-emo-randN")->capture_default_str();
  t->add_option("--max-queries", tr.max_queries)->capture_default_str();
  t->add_option("--epochs", tr.epochs)->capture_default_str();
  t->add_option("--batch-size", tr.batch_size)->capture_default_str();
  t->add_option("--lr-encoders", tr.lr_encoders)->capture_default_str();
  t->add_option("--lr-heads", tr.lr_heads)->capture_default_str();
  t->add_option("--shared-dim", tr.shared_dim)->capture_default_str();
  t->add_option("--query-mode", tr.query_mode, "raw or templated")->capture_default_str();
  t->add_option("--templates", tr.templates, "Template overrides JSON")->check(CLI::ExistingFile);
  t->add_option("--out-dir", tr.out_dir)->required();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Zero-shot classification report");
  add_common(e, ev.common);
  e->add_option("--manifest", ev.manifest)->required()->check(CLI::ExistingFile);
  e->add_option("--checkpoint", ev.checkpoint)->required()->check(CLI::ExistingFile);
  e->add_option("--labels", ev.labels, "Ordered, comma separated; default sorted manifest labels");
  e->add_option("--query-mode", ev.query_mode, "raw or templated")->capture_default_str();
  e->add_option("--features", ev.features, "Feature cache instead of reading audio")
      ->check(CLI::ExistingFile);
  e->add_option("--out", ev.out, "Report JSON; the confusion CSV goes alongside")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (s->parsed()) {
      apply_config(s, synth.common.config);
      return run_synth(synth);
    }
    if (x->parsed()) {
      apply_config(x, extract.common.config);
      return run_extract(extract);
    }
    if (c->parsed()) {
      apply_config(c, caption.common.config);
      return run_caption(caption);
    }
    if (t->parsed()) {
      apply_config(t, tr.common.config);
      return run_train(tr, t);
    }
    apply_config(e, ev.common.config);
    return run_eval(ev);
  } catch (const CLI::Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitUsage;
  } catch (const ValidationError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitRuntime;
  }
}
