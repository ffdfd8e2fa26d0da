#include "distalign/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "distalign/mitigation.hpp"

namespace distalign {

namespace {

using nlohmann::json;

struct DataSet {
  std::vector<Profession> professions;
  std::vector<GenderedPair> pairs;
  std::vector<SentenceTemplate> templates;
};

DataSet load_dataset(const RunConfig& config) {
  DataSet data;
  const ProfessionLoadResult loaded = load_professions(config.professions_path);
  if (!loaded.excluded.empty()) {
    std::fprintf(stderr, "warning: %zu profession(s) outside every category band were excluded:",
                 loaded.excluded.size());
    for (const auto& name : loaded.excluded) std::fprintf(stderr, " %s", name.c_str());
    std::fprintf(stderr, "\n");
  }
  data.professions = loaded.professions;
  data.pairs = load_gendered_pairs(config.pairs_path);
  data.templates = load_templates(config.templates_path);
  return data;
}

// Tokens the probing pipeline will feed the model; all of them must exist in
// a checkpoint's vocabulary for detection to be meaningful.
std::vector<std::string> required_tokens(const DataSet& data) {
  std::set<std::string> needed;
  for (const auto& tmpl : data.templates) {
    for (const auto& pair : data.pairs) {
      for (const Gender g : {Gender::Male, Gender::Female}) {
        for (const auto& p : data.professions) {
          for (const auto& tok : expand_template(tmpl, pair, g, p.name).tokens) needed.insert(tok);
        }
      }
    }
  }
  return {needed.begin(), needed.end()};
}

std::vector<std::string> missing_tokens(const Vocabulary& vocab, const DataSet& data) {
  std::vector<std::string> missing;
  for (const auto& tok : required_tokens(data)) {
    if (!vocab.contains(tok)) missing.push_back(tok);
  }
  return missing;
}

std::uint64_t fnv1a(const std::string& text, std::uint64_t hash = 0xcbf29ce484222325ULL) {
  for (const unsigned char c : text) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::string dataset_id(const DataSet& data, const SplitAssignment& split, TargetMode target) {
  std::ostringstream canon;
  for (const auto& p : data.professions) canon << p.name << '|' << p.female_share << ';';
  for (const auto& pair : data.pairs) canon << pair.male << '/' << pair.female << ';';
  for (const auto& t : data.templates) canon << t.id << '=' << t.text << ';';
  const auto list = [&](const std::vector<std::string>& xs) {
    for (const auto& x : xs) canon << x << ',';
    canon << ';';
  };
  list(split.train_professions);
  list(split.validation_professions);
  list(split.test_professions);
  list(split.train_templates);
  list(split.test_templates);
  canon << to_string(target);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(canon.str())));
  return buf;
}

}  // namespace

std::filesystem::path split_file_path(const RunConfig& config) {
  return config.report_dir / "split.json";
}

void write_split_file(const std::filesystem::path& path, const SplitAssignment& split,
                      const TemplatePartition& partition, std::uint64_t seed) {
  json j;
  j["schema_version"] = 1;
  j["seed"] = seed;
  j["professions"] = {{"train", split.train_professions},
                      {"validation", split.validation_professions},
                      {"test", split.test_professions}};
  json rarity = json::object();
  for (const auto& [id, r] : partition.rarity) rarity[id] = r == Rarity::Rare ? "rare" : "common";
  j["templates"] = {{"train", split.train_templates},
                    {"test", split.test_templates},
                    {"rarity", rarity},
                    {"fraction_under_cutoff", partition.fraction_under_cutoff}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write split file: " + path.string());
  out << j.dump(2) << '\n';
}

SplitAssignment read_split_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open split file: " + path.string());
  json j;
  in >> j;
  SplitAssignment split;
  split.train_professions = j.at("professions").at("train").get<std::vector<std::string>>();
  split.validation_professions =
      j.at("professions").at("validation").get<std::vector<std::string>>();
  split.test_professions = j.at("professions").at("test").get<std::vector<std::string>>();
  split.train_templates = j.at("templates").at("train").get<std::vector<std::string>>();
  split.test_templates = j.at("templates").at("test").get<std::vector<std::string>>();
  return split;
}

namespace {

// Computes the profession split and the rarity-balanced template partition
// with the given model as the perplexity scorer: masked pseudo-perplexity,
// or exp of the sentence loss for autoregressive checkpoints.
SplitAssignment compute_split(const RunConfig& config, const DataSet& data, const ToyModel& model) {
  SplitAssignment split = stratified_split(data.professions, config.split_ratios, config.split_seed);
  const auto scorer = [&](const ProbeSentence& probe) {
    const std::vector<int> tokens = model.vocab.encode(probe.tokens);
    return model.mode == ModelMode::Masked ? pseudo_perplexity(model, tokens)
                                           : std::exp(alm_sentence_loss(model, tokens));
  };
  const TemplatePartition partition =
      categorize_templates(scorer, data.templates, data.professions, data.pairs, config.ppl_cutoff);
  split.train_templates = partition.train_templates;
  split.test_templates = partition.test_templates;
  std::filesystem::create_directories(config.report_dir);
  write_split_file(split_file_path(config), split, partition, config.split_seed);
  return split;
}

SplitAssignment load_or_compute_split(const RunConfig& config, const DataSet& data,
                                      const ToyModel& model) {
  if (std::filesystem::exists(split_file_path(config))) {
    return read_split_file(split_file_path(config));
  }
  return compute_split(config, data, model);
}

std::vector<std::vector<int>> read_token_file(const std::filesystem::path& path,
                                              const Vocabulary& vocab, int* unknown_total) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file: " + path.string());
  std::vector<std::vector<int>> sentences;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    int unknown = 0;
    sentences.push_back(vocab.encode(vocab.tokenize_line(line), &unknown));
    if (unknown_total != nullptr) *unknown_total += unknown;
  }
  return sentences;
}

std::vector<std::vector<int>> maybe_heldout_tokens(const RunConfig& config, const Vocabulary& vocab) {
  const auto path = config.corpus_dir / "heldout.txt";
  if (!std::filesystem::exists(path)) return {};
  int unknown = 0;
  auto tokens = read_token_file(path, vocab, &unknown);
  if (unknown > 0) {
    std::fprintf(stderr, "warning: %d unknown token(s) in held-out corpus scored as UNK\n", unknown);
  }
  return tokens;
}

DesiredDistribution desired_for(const RunConfig& config, const std::vector<Profession>& professions) {
  return config.train.target == TargetMode::Equal ? DesiredDistribution::equal(professions)
                                                  : DesiredDistribution::real_world(professions);
}

std::string fmt(double v, const char* format = "%.6g") {
  if (std::isnan(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof(buf), format, v);
  return buf;
}

const std::array<Category, 3> kCategoryOrder{Category::MaleDominated, Category::FemaleDominated,
                                             Category::Balanced};

// Summary table in the category-columns layout: base and tuned KL rows, the
// percentage drop with significance markers, and the held-out LM column.
void write_summary(const std::filesystem::path& csv_path, const std::filesystem::path& md_path,
                   const BiasReport& base, const BiasReport* tuned,
                   const std::map<Category, SignificanceResult>* per_category_significance) {
  const auto category_mean = [](const BiasReport& r, Category c) {
    const auto it = r.per_category.find(c);
    return it == r.per_category.end() ? std::numeric_limits<double>::quiet_NaN() : it->second.mean;
  };
  const auto significant_for = [&](Category c) {
    if (per_category_significance == nullptr) return false;
    const auto it = per_category_significance->find(c);
    return it != per_category_significance->end() && it->second.significant;
  };

  std::ofstream csv(csv_path);
  if (!csv) throw std::runtime_error("cannot write summary CSV: " + csv_path.string());
  csv << "row,DP_male_kl,DP_female_kl,DP_balanced_kl,ALL_kl,heldout_lm\n";
  const auto csv_row = [&](const std::string& name, const BiasReport& r) {
    csv << name;
    for (const Category c : kCategoryOrder) csv << ',' << fmt(category_mean(r, c), "%.17g");
    csv << ',' << fmt(r.all.mean, "%.17g") << ',' << fmt(r.heldout_lm_loss, "%.17g") << '\n';
  };
  csv_row("base", base);
  if (tuned != nullptr) {
    csv_row("tuned", *tuned);
    csv << "drop_pct";
    for (const Category c : kCategoryOrder) {
      csv << ',' << fmt(drop_percent(category_mean(base, c), category_mean(*tuned, c)), "%.17g");
    }
    csv << ',' << fmt(drop_percent(base.all.mean, tuned->all.mean), "%.17g") << ','
        << fmt(drop_percent(base.heldout_lm_loss, tuned->heldout_lm_loss), "%.17g") << '\n';
    csv << "significant";
    for (const Category c : kCategoryOrder) csv << ',' << (significant_for(c) ? "1" : "0");
    csv << ',' << (tuned->significance && tuned->significance->significant ? "1" : "0") << ",\n";
  }

  std::ofstream md(md_path);
  if (!md) throw std::runtime_error("cannot write summary markdown: " + md_path.string());
  md << "| model | DP_male (KL) | DP_female (KL) | DP_balanced (KL) | ALL (KL) | held-out LM |\n";
  md << "|---|---|---|---|---|---|\n";
  const auto md_row = [&](const std::string& name, const BiasReport& r) {
    md << "| " << name;
    for (const Category c : kCategoryOrder) md << " | " << fmt(category_mean(r, c));
    md << " | " << fmt(r.all.mean) << " | " << fmt(r.heldout_lm_loss) << " |\n";
  };
  md_row("base", base);
  if (tuned != nullptr) {
    md_row("tuned", *tuned);
    md << "| % drop";
    for (const Category c : kCategoryOrder) {
      md << " | " << fmt(drop_percent(category_mean(base, c), category_mean(*tuned, c)));
      if (significant_for(c)) md << "&dagger;";
    }
    md << " | " << fmt(drop_percent(base.all.mean, tuned->all.mean));
    if (tuned->significance && tuned->significance->significant) md << "&dagger;";
    md << " | " << fmt(drop_percent(base.heldout_lm_loss, tuned->heldout_lm_loss)) << " |\n";
  }
}

}  // namespace

int cmd_gen_corpus(const RunConfig& config) {
  DataSet data;
  try {
    data = load_dataset(config);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code::io;
  }
  try {
    const SkewConfig skew = config.skew_config(data.professions);
    const SyntheticCorpus corpus =
        generate_synthetic_corpus(skew, data.professions, data.pairs, data.templates);
    std::filesystem::create_directories(config.corpus_dir);
    const auto write_lines = [](const std::filesystem::path& path,
                                const std::vector<std::string>& lines) {
      std::ofstream out(path);
      if (!out) throw std::runtime_error("cannot write corpus file: " + path.string());
      for (const auto& line : lines) out << line << '\n';
      if (!out) throw std::runtime_error("failed while writing: " + path.string());
    };
    write_lines(config.corpus_dir / "pretrain.txt", corpus.pretrain);
    write_lines(config.corpus_dir / "heldout.txt", corpus.heldout);
    json manifest;
    manifest["schema_version"] = 1;
    manifest["seed"] = skew.seed;
    manifest["corpus_size"] = skew.corpus_size;
    manifest["heldout_size"] = skew.heldout_size;
    manifest["filler_ratio"] = skew.filler_ratio;
    manifest["male_probability"] = skew.male_probability;
    manifest["template_weight"] = skew.template_weight;
    std::ofstream out(config.corpus_dir / "manifest.json");
    if (!out) throw std::runtime_error("cannot write corpus manifest");
    out << manifest.dump(2) << '\n';
    std::printf("wrote %zu pretrain and %zu held-out sentences to %s\n", corpus.pretrain.size(),
                corpus.heldout.size(), config.corpus_dir.string().c_str());
    return exit_code::ok;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code::io;
  }
}

int cmd_pretrain(const RunConfig& config) {
  DataSet data;
  std::vector<std::vector<int>> corpus;
  std::vector<std::vector<int>> heldout;
  ToyModel model;
  try {
    data = load_dataset(config);
    const Vocabulary vocab = Vocabulary::build(data.professions, data.pairs, data.templates);
    model = ToyModel::create(vocab, config.model_mode, config.model_dim, config.model_max_len,
                             config.model_init_scale, config.model_seed);
    int unknown = 0;
    corpus = read_token_file(config.corpus_dir / "pretrain.txt", model.vocab, &unknown);
    heldout = maybe_heldout_tokens(config, model.vocab);
    if (unknown > 0) {
      std::fprintf(stderr, "warning: %d unknown token(s) in pretraining corpus scored as UNK\n",
                   unknown);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code::io;
  }
  try {
    PretrainConfig pc;
    pc.epochs = config.pretrain_epochs;
    pc.batch_size = config.pretrain_batch_size;
    pc.learning_rate = config.pretrain_learning_rate;
    pc.mask_prob = config.pretrain_mask_prob;
    pc.seed = config.pretrain_seed;
    const PretrainResult result = pretrain(model, corpus, heldout, pc);
    std::filesystem::create_directories(config.checkpoint_dir);
    std::filesystem::create_directories(config.report_dir);
    save_checkpoint(model, config.checkpoint_dir / "base.ckpt");
    std::ofstream curve(config.report_dir / "pretrain_curve.csv");
    curve << "epoch,heldout_lm_loss\n";
    for (std::size_t i = 0; i < result.heldout_loss.size(); ++i) {
      curve << i << ',' << fmt(result.heldout_loss[i], "%.17g") << '\n';
    }
    if (!result.heldout_loss.empty()) {
      std::printf("pretrained %d epoch(s); held-out loss %.4f -> %.4f\n", config.pretrain_epochs,
                  result.heldout_loss.front(), result.heldout_loss.back());
    }
    return exit_code::ok;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code::training_failure;
  }
}

int cmd_detect(const RunConfig& config, const std::filesystem::path& checkpoint,
               const std::string& report_name) {
  DataSet data;
  ToyModel model;
  try {
    model = load_checkpoint(checkpoint);
    data = load_dataset(config);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code::io;
  }
  const std::vector<std::string> missing = missing_tokens(model.vocab, data);
  if (!missing.empty()) {
    std::fprintf(stderr, "error: checkpoint vocabulary is missing %zu probe token(s):",
                 missing.size());
    for (const auto& tok : missing) std::fprintf(stderr, " '%s'", tok.c_str());
    std::fprintf(stderr, "\n");
    return exit_code::vocab_mismatch;
  }
  try {
    std::filesystem::create_directories(config.report_dir);
    const SplitAssignment split = load_or_compute_split(config, data, model);
    const DesiredDistribution desired = desired_for(config, data.professions);
    const ScoringMode mode =
        model.mode == ModelMode::Masked ? ScoringMode::Masked : ScoringMode::Autoregressive;

    std::vector<Profession> test_professions;
    for (const auto& p : data.professions) {
      if (std::find(split.test_professions.begin(), split.test_professions.end(), p.name) !=
          split.test_professions.end()) {
        test_professions.push_back(p);
      }
    }
    std::vector<SentenceTemplate> test_templates;
    for (const auto& id : split.test_templates) {
      for (const auto& t : data.templates) {
        if (t.id == id) test_templates.push_back(t);
      }
    }

    BiasReport report = evaluate_bias(model, test_professions, test_templates, data.pairs, desired,
                                      mode, dataset_id(data, split, config.train.target));
    const auto heldout = maybe_heldout_tokens(config, model.vocab);
    if (!heldout.empty()) report.heldout_lm_loss = corpus_lm_loss(model, heldout);

    write_bias_report_json(config.report_dir / (report_name + "_report.json"), report);
    write_bias_report_csv(config.report_dir / (report_name + "_report.csv"), report);

    std::vector<AssociationRecord> records;
    ScoringContext ctx(model, test_templates, data.pairs, mode);
    for (const auto& p : test_professions) {
      const auto scored = score_profession(ctx, p.name);
      records.insert(records.end(), scored.begin(), scored.end());
    }
    write_association_csv(config.report_dir / (report_name + "_associations.csv"), records);

    std::printf("%s: ALL KL %.6g over %zu professions (%s target)\n", report_name.c_str(),
                report.all.mean, report.records.size(), to_string(report.mode));
    return exit_code::ok;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code::failure;
  }
}

int cmd_mitigate(const RunConfig& config, const std::filesystem::path& checkpoint) {
  DataSet data;
  ToyModel base;
  BiasReport base_report;
  try {
    base = load_checkpoint(checkpoint);
    data = load_dataset(config);
    base_report = read_bias_report_json(config.report_dir / "base_report.json");
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s (run detect on the base checkpoint first)\n", e.what());
    return exit_code::io;
  }
  const std::vector<std::string> missing = missing_tokens(base.vocab, data);
  if (!missing.empty()) {
    std::fprintf(stderr, "error: checkpoint vocabulary is missing %zu probe token(s)\n",
                 missing.size());
    return exit_code::vocab_mismatch;
  }
  try {
    const SplitAssignment split = load_or_compute_split(config, data, base);
    const std::string id = dataset_id(data, split, config.train.target);
    if (!base_report.dataset_id.empty() && base_report.dataset_id != id) {
      std::fprintf(stderr, "error: base report was produced for different data (%s vs %s)\n",
                   base_report.dataset_id.c_str(), id.c_str());
      return exit_code::report_mismatch;
    }
    const auto heldout = maybe_heldout_tokens(config, base.vocab);

    FinetuneInputs inputs{&data.professions, &data.pairs, &data.templates, &split};
    const MultiSeedReport report = multi_seed_run(base, inputs, config.train, heldout);

    std::filesystem::create_directories(config.checkpoint_dir);
    std::filesystem::create_directories(config.report_dir);
    for (const auto& outcome : report.seeds) {
      if (!outcome.completed) continue;
      const std::string tag = "seed" + std::to_string(outcome.seed);
      save_checkpoint(outcome.model, config.checkpoint_dir / ("tuned_" + tag + ".ckpt"));
      write_history_csv(config.report_dir / ("history_" + tag + ".csv"), outcome.history);
    }
    if (report.completed_seeds == 0) {
      std::fprintf(stderr, "error: every seed failed\n");
      return exit_code::training_failure;
    }

    // Seed-averaged tuned report in the same shape as a detection report.
    BiasReport tuned;
    tuned.mode = config.train.target;
    tuned.dataset_id = id;
    std::map<std::string, double> mean_kl;
    std::map<std::string, Category> categories;
    for (const auto& outcome : report.seeds) {
      if (!outcome.completed) continue;
      for (const auto& record : outcome.test_records) {
        mean_kl[record.profession] += record.kl / report.completed_seeds;
        categories[record.profession] = record.category;
      }
    }
    for (const auto& [name, kl] : mean_kl) {
      tuned.records.push_back(KlRecord{name, categories.at(name), kl});
    }
    tuned.per_category = category_stats(tuned.records);
    tuned.all = overall_stats(tuned.records);
    tuned.significance = report.all_significance;
    tuned.heldout_lm_loss = report.tuned_heldout_lm_loss;
    write_bias_report_json(config.report_dir / "tuned_report.json", tuned);
    write_bias_report_csv(config.report_dir / "tuned_report.csv", tuned);

    BiasReport base_for_summary = base_report;
    base_for_summary.heldout_lm_loss = report.base_heldout_lm_loss;
    write_summary(config.report_dir / "summary.csv", config.report_dir / "summary.md",
                  base_for_summary, &tuned, &report.significance);

    std::printf("mitigation: ALL KL %.6g -> %.6g (%.1f%% drop, %s) over %d seed(s)\n",
                report.base_test.all.mean, report.tuned_all_kl, report.all_drop_percent,
                report.all_significance.significant ? "significant" : "not significant",
                report.completed_seeds);
    return exit_code::ok;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code::training_failure;
  }
}

int cmd_sweep(const RunConfig& config, const std::filesystem::path& checkpoint) {
  DataSet data;
  ToyModel base;
  try {
    base = load_checkpoint(checkpoint);
    data = load_dataset(config);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code::io;
  }
  try {
    const SplitAssignment split = load_or_compute_split(config, data, base);
    const DesiredDistribution desired = desired_for(config, data.professions);
    const ScoringMode mode =
        base.mode == ModelMode::Masked ? ScoringMode::Masked : ScoringMode::Autoregressive;

    std::vector<Profession> validation_professions;
    for (const auto& p : data.professions) {
      if (std::find(split.validation_professions.begin(), split.validation_professions.end(),
                    p.name) != split.validation_professions.end()) {
        validation_professions.push_back(p);
      }
    }
    std::vector<SentenceTemplate> train_templates;
    for (const auto& id : split.train_templates) {
      for (const auto& t : data.templates) {
        if (t.id == id) train_templates.push_back(t);
      }
    }
    const BiasReport base_validation =
        evaluate_bias(base, validation_professions, train_templates, data.pairs, desired, mode);

    FinetuneInputs inputs{&data.professions, &data.pairs, &data.templates, &split};
    std::vector<SweepRun> runs;
    for (const int batch_size : config.sweep_batch_sizes) {
      for (const double beta : config.sweep_betas) {
        for (const double gamma : config.sweep_gammas) {
          TrainConfig tc = config.train;
          tc.batch_size = batch_size;
          tc.beta = beta;
          tc.gamma = gamma;
          SweepRun run;
          run.batch_size = batch_size;
          run.beta = beta;
          run.gamma = gamma;
          {
            std::ostringstream key;
            key << "batch_size=" << batch_size << ";beta=" << beta << ";gamma=" << gamma;
            run.config_key = key.str();
          }
          try {
            // Hyperparameters are chosen with the first configured seed only.
            const std::uint64_t seed = tc.seeds.empty() ? 42 : tc.seeds.front();
            const FinetuneResult tuned = finetune(base, inputs, tc, seed);
            if (tuned.aborted) throw std::runtime_error("run aborted on non-finite loss");
            const BiasReport val = evaluate_bias(tuned.model, validation_professions,
                                                 train_templates, data.pairs, desired, mode);
            for (const Category c : kCategoryOrder) {
              if (base_validation.per_category.count(c) == 0 || val.per_category.count(c) == 0) {
                continue;
              }
              run.improvement_percent[c] = drop_percent(base_validation.per_category.at(c).mean,
                                                        val.per_category.at(c).mean);
            }
            run.all_improvement_percent = drop_percent(base_validation.all.mean, val.all.mean);
            finalize_sweep_run(run);
            runs.push_back(std::move(run));
          } catch (const std::exception& e) {
            std::fprintf(stderr, "warning: sweep run %s failed: %s\n", run.config_key.c_str(),
                         e.what());
          }
        }
      }
    }
    if (runs.empty()) {
      std::fprintf(stderr, "error: every sweep run failed\n");
      return exit_code::training_failure;
    }
    const std::size_t chosen = select_hyperparameters(runs);
    runs[chosen].selected = true;

    std::filesystem::create_directories(config.report_dir);
    write_sweep_csv(config.report_dir / "sweep.csv", runs);
    RunConfig selected = config;
    selected.train.batch_size = runs[chosen].batch_size;
    selected.train.beta = runs[chosen].beta;
    selected.train.gamma = runs[chosen].gamma;
    selected.save_json(config.report_dir / "selected_config.json");
    std::printf("sweep: %zu run(s), selected %s\n", runs.size(), runs[chosen].config_key.c_str());
    return exit_code::ok;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code::training_failure;
  }
}

int cmd_report(const RunConfig& config, const std::vector<std::filesystem::path>& reports,
               const std::optional<std::filesystem::path>& history_csv) {
  if (reports.empty()) {
    std::fprintf(stderr, "error: report needs at least one bias report JSON\n");
    return exit_code::io;
  }
  BiasReport base;
  std::optional<BiasReport> tuned;
  try {
    base = read_bias_report_json(reports.front());
    if (reports.size() > 1) tuned = read_bias_report_json(reports[1]);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code::io;
  }
  if (tuned && !base.dataset_id.empty() && !tuned->dataset_id.empty() &&
      base.dataset_id != tuned->dataset_id) {
    std::fprintf(stderr, "error: reports cover different data (%s vs %s)\n",
                 base.dataset_id.c_str(), tuned->dataset_id.c_str());
    return exit_code::report_mismatch;
  }
  try {
    std::filesystem::create_directories(config.report_dir);
    write_summary(config.report_dir / "summary.csv", config.report_dir / "summary.md", base,
                  tuned ? &*tuned : nullptr, nullptr);
    if (history_csv) {
      // Pivot validation rows into a plot-ready epoch-by-category table.
      std::ifstream in(*history_csv);
      if (!in) throw std::runtime_error("cannot open history CSV: " + history_csv->string());
      std::map<int, std::map<std::string, std::string>> by_epoch;
      std::string line;
      std::getline(in, line);  // header
      while (std::getline(in, line)) {
        std::stringstream ss(line);
        std::string epoch, split, category, kl_mean;
        std::getline(ss, epoch, ',');
        std::getline(ss, split, ',');
        std::getline(ss, category, ',');
        std::getline(ss, kl_mean, ',');
        if (split == "validation") by_epoch[std::stoi(epoch)][category] = kl_mean;
      }
      std::ofstream plot(config.report_dir / "plot.csv");
      plot << "epoch,DP_male,DP_female,DP_balanced,ALL\n";
      for (const auto& [epoch, row] : by_epoch) {
        plot << epoch;
        for (const char* cat : {"DP_male", "DP_female", "DP_balanced", "ALL"}) {
          plot << ',';
          const auto it = row.find(cat);
          if (it != row.end()) plot << it->second;
        }
        plot << '\n';
      }
    }
    std::printf("report: wrote summary for %zu report(s)\n", reports.size());
    return exit_code::ok;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code::failure;
  }
}

}  // namespace distalign
