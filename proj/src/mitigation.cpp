#include "distalign/mitigation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "distalign/optimizer.hpp"
#include "distalign/rng.hpp"

namespace distalign {

namespace {

const std::array<Category, 3> kCategoryOrder{Category::MaleDominated, Category::FemaleDominated,
                                             Category::Balanced};

std::string format_double(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Half-mean KL of the predicted pair from a fixed desired pair, on tape.
Var kl_to_target_var(GradientTape& tape, Var p_male, Var p_female, const GenderDistribution& desired) {
  std::vector<Var> terms;
  if (desired.p_male > 0.0) {
    terms.push_back(tape.scale(
        tape.sub(tape.constant(std::log(desired.p_male)), tape.log(p_male)), desired.p_male));
  }
  if (desired.p_female > 0.0) {
    terms.push_back(tape.scale(
        tape.sub(tape.constant(std::log(desired.p_female)), tape.log(p_female)), desired.p_female));
  }
  if (terms.empty()) return tape.constant(0.0);
  return tape.scale(tape.sum(terms), 0.5);
}

std::map<std::string, const Profession*> professions_by_name(const std::vector<Profession>& all) {
  std::map<std::string, const Profession*> index;
  for (const auto& p : all) index[p.name] = &p;
  return index;
}

std::vector<SentenceTemplate> pick_templates(const std::vector<SentenceTemplate>& all,
                                             const std::vector<std::string>& ids) {
  std::vector<SentenceTemplate> out;
  for (const auto& id : ids) {
    const auto it = std::find_if(all.begin(), all.end(),
                                 [&](const SentenceTemplate& t) { return t.id == id; });
    if (it == all.end()) throw std::runtime_error("split references unknown template " + id);
    out.push_back(*it);
  }
  return out;
}

std::vector<Profession> pick_professions(const std::vector<Profession>& all,
                                         const std::vector<std::string>& names) {
  const auto index = professions_by_name(all);
  std::vector<Profession> out;
  for (const auto& name : names) {
    const auto it = index.find(name);
    if (it == index.end()) throw std::runtime_error("split references unknown profession " + name);
    out.push_back(*it->second);
  }
  return out;
}

double median(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n == 0) return 0.0;
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace

const char* to_string(LossKind kind) {
  return kind == LossKind::Uniform ? "uniform" : "weighted_adaptive";
}

std::optional<LossKind> loss_kind_from_string(const std::string& s) {
  if (s == "uniform") return LossKind::Uniform;
  if (s == "weighted_adaptive") return LossKind::WeightedAdaptive;
  return std::nullopt;
}

double ema_update(GroupState& state, double batch_kl, double beta) {
  if (!(beta > 0.0 && beta < 1.0)) throw std::invalid_argument("EMA momentum must lie in (0,1)");
  if (batch_kl < 0.0) throw std::invalid_argument("batch KL cannot be negative");
  if (!state.ema_initialized) {
    state.ema_mean = batch_kl;
    state.ema_initialized = true;
  } else {
    state.ema_mean = beta * state.ema_mean + (1.0 - beta) * batch_kl;
  }
  return state.ema_mean;
}

void welford_update(GroupState& state, double batch_kl) {
  if (!std::isfinite(batch_kl)) throw std::invalid_argument("batch KL must be finite");
  state.welford_count += 1;
  const double delta = batch_kl - state.welford_mean;
  state.welford_mean += delta / static_cast<double>(state.welford_count);
  state.welford_m2 += delta * (batch_kl - state.welford_mean);
}

double var_factor(const GroupState& state) { return 1.0 / (1.0 + state.variance()); }

double stability_weight(double mu, double v, bool is_high_kl) {
  if (is_high_kl) return std::max(std::min(0.95 * mu * v, 1.5), 0.8);
  return std::max(std::min(1.2 * mu * v, 1.5), 1.0);
}

double adaptive_loss(double batch_kl, const GroupState& state) {
  const double denom = state.ema_mean + state.alpha;
  if (!(denom > 0.0)) throw std::logic_error("adaptive loss denominator must be positive");
  return batch_kl / denom;
}

double combined_loss(double kl_loss, double lm_loss, double gamma) {
  return kl_loss + gamma * lm_loss;
}

std::map<Category, GroupState> identify_groups(const BiasReport& validation_report,
                                               double alpha_high, double alpha_low) {
  if (validation_report.per_category.empty()) {
    throw std::invalid_argument("validation report has no category statistics");
  }
  std::map<Category, GroupState> states;
  const double all_mean = validation_report.all.mean;
  for (const auto& [category, stats] : validation_report.per_category) {
    GroupState state;
    state.category = category;
    state.is_high_kl = stats.mean > all_mean;
    state.alpha = state.is_high_kl ? alpha_high : alpha_low;
    states[category] = state;
  }
  return states;
}

Var uniform_kl_loss_var(GradientTape& tape, TapeScoring& scoring,
                        const std::vector<std::string>& batch, const DesiredDistribution& desired) {
  if (batch.empty()) throw std::invalid_argument("loss over an empty profession batch");
  std::vector<Var> per_profession;
  per_profession.reserve(batch.size());
  for (const auto& name : batch) {
    const auto [p_male, p_female] = predicted_distribution_var(scoring, name);
    per_profession.push_back(kl_to_target_var(tape, p_male, p_female, desired.target_for(name)));
  }
  return tape.mean(per_profession);
}

Var weighted_adaptive_loss_var(GradientTape& tape, Var batch_kl, GroupState& state, double beta,
                               LossBreakdown& breakdown) {
  const double kl_value = tape.value(batch_kl);
  // The running statistics include the current batch before the division.
  const double mu = ema_update(state, kl_value, beta);
  welford_update(state, kl_value);
  const double v = var_factor(state);
  const double lambda = stability_weight(mu, v, state.is_high_kl);
  breakdown.batch_kl = kl_value;
  breakdown.mu_kl = mu;
  breakdown.var_factor = v;
  breakdown.lambda = lambda;
  const double denom = mu + state.alpha;
  if (!(denom > 0.0)) throw std::logic_error("adaptive loss denominator must be positive");
  // lambda, mu, and alpha are constants of the step; only the batch KL is
  // differentiated.
  const Var scaled = tape.scale(batch_kl, lambda / denom);
  breakdown.kl_component = tape.value(scaled);
  return scaled;
}

namespace {

struct EpochAccumulator {
  std::vector<double> batch_kl;
  std::vector<double> lambda;
  std::vector<double> mu;
  std::vector<double> var_factor;
  std::vector<double> lm;
  std::vector<double> total;

  void add(const LossBreakdown& b, bool adaptive) {
    batch_kl.push_back(b.batch_kl);
    if (adaptive) {
      lambda.push_back(b.lambda);
      mu.push_back(b.mu_kl);
      var_factor.push_back(b.var_factor);
    }
    if (!std::isnan(b.lm_component)) lm.push_back(b.lm_component);
    total.push_back(b.total);
  }
};

double mean_of(const std::vector<double>& xs) {
  if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double population_variance_of(const std::vector<double>& xs) {
  if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double m = mean_of(xs);
  double total = 0.0;
  for (const double x : xs) total += (x - m) * (x - m);
  return total / static_cast<double>(xs.size());
}

// Validation KL per category and overall, always with the plain uniform
// formulation; this path never reads GroupState.
BiasReport validation_report(const ToyModel& model, const std::vector<Profession>& professions,
                             const std::vector<SentenceTemplate>& templates,
                             const std::vector<GenderedPair>& pairs,
                             const DesiredDistribution& desired, ScoringMode mode) {
  return evaluate_bias(model, professions, templates, pairs, desired, mode);
}

}  // namespace

FinetuneResult finetune(const ToyModel& base, const FinetuneInputs& inputs,
                        const TrainConfig& config, std::uint64_t seed) {
  if (config.batch_size < 1) throw std::invalid_argument("batch size must be at least 1");
  const auto& split = *inputs.split;
  const std::vector<SentenceTemplate> train_templates =
      pick_templates(*inputs.templates, split.train_templates);
  const std::vector<Profession> train_professions =
      pick_professions(*inputs.professions, split.train_professions);
  const std::vector<Profession> validation_professions =
      pick_professions(*inputs.professions, split.validation_professions);

  const DesiredDistribution desired = config.target == TargetMode::Equal
                                          ? DesiredDistribution::equal(*inputs.professions)
                                          : DesiredDistribution::real_world(*inputs.professions);
  const ScoringMode scoring_mode =
      base.mode == ModelMode::Masked ? ScoringMode::Masked : ScoringMode::Autoregressive;
  const bool use_lm_loss = base.mode == ModelMode::Masked && config.gamma > 0.0;

  FinetuneResult result;
  result.model = base;

  // Pre-tuning validation statistics drive both the baseline for early
  // stopping and the high/low-KL group assignment.
  const BiasReport initial_validation = validation_report(
      result.model, validation_professions, train_templates, *inputs.pairs, desired, scoring_mode);
  result.initial_validation_kl = initial_validation.all.mean;
  result.best_validation_kl = initial_validation.all.mean;
  result.best_epoch = 0;

  std::map<Category, GroupState> states;
  if (config.loss == LossKind::WeightedAdaptive) {
    states = identify_groups(initial_validation, config.alpha_high, config.alpha_low);
  }

  // Category-homogeneous batches over the training professions.
  std::map<Category, std::vector<std::string>> by_category;
  for (const auto& p : train_professions) by_category[p.category].push_back(p.name);

  ToyModel model = base;
  ToyModel best_model = base;
  AdamW optimizer(model.parameter_count(),
                  AdamWConfig{config.learning_rate, 0.9, 0.999, 1e-8, 0.01});
  Rng rng(seed);
  int stale_epochs = 0;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    // Build the epoch's batch list: shuffle within category, chunk, then
    // shuffle the batch order across categories.
    struct Batch {
      Category category;
      std::vector<std::string> professions;
    };
    std::vector<Batch> batches;
    for (const Category category : kCategoryOrder) {
      const auto it = by_category.find(category);
      if (it == by_category.end()) continue;
      std::vector<std::string> names = it->second;
      rng.shuffle(names);
      for (std::size_t start = 0; start < names.size();
           start += static_cast<std::size_t>(config.batch_size)) {
        const std::size_t end =
            std::min(names.size(), start + static_cast<std::size_t>(config.batch_size));
        batches.push_back(Batch{category, {names.begin() + static_cast<std::ptrdiff_t>(start),
                                           names.begin() + static_cast<std::ptrdiff_t>(end)}});
      }
    }
    rng.shuffle(batches);

    std::map<Category, EpochAccumulator> epoch_stats;
    bool aborted = false;
    for (const auto& batch : batches) {
      GradientTape tape;
      ModelGradients grads(model);
      TapeScoring scoring(tape, model, grads, train_templates, *inputs.pairs, scoring_mode);
      LossBreakdown breakdown;
      const Var batch_kl = uniform_kl_loss_var(tape, scoring, batch.professions, desired);
      breakdown.batch_kl = tape.value(batch_kl);
      Var kl_term = batch_kl;
      if (config.loss == LossKind::WeightedAdaptive) {
        auto state_it = states.find(batch.category);
        if (state_it == states.end()) {
          // The category was absent from the validation split; treat it as a
          // low-KL group.
          GroupState fallback;
          fallback.category = batch.category;
          fallback.alpha = config.alpha_low;
          state_it = states.emplace(batch.category, fallback).first;
        }
        kl_term = weighted_adaptive_loss_var(tape, batch_kl, state_it->second, config.beta,
                                             breakdown);
      } else {
        breakdown.kl_component = tape.value(batch_kl);
        breakdown.lambda = std::numeric_limits<double>::quiet_NaN();
        breakdown.mu_kl = std::numeric_limits<double>::quiet_NaN();
        breakdown.var_factor = std::numeric_limits<double>::quiet_NaN();
      }
      Var total = kl_term;
      if (use_lm_loss) {
        std::vector<Var> sentence_lls;
        for (const auto& name : batch.professions) {
          for (const auto& probe : probes_for_profession(train_templates, *inputs.pairs, name)) {
            sentence_lls.push_back(
                pseudo_log_likelihood_var(tape, model, grads, model.vocab.encode(probe.tokens)));
          }
        }
        const Var lm = tape.neg(tape.mean(sentence_lls));
        breakdown.lm_component = tape.value(lm);
        total = tape.add(total, tape.scale(lm, config.gamma));
      } else {
        breakdown.lm_component = std::numeric_limits<double>::quiet_NaN();
      }
      breakdown.total = tape.value(total);
      if (!std::isfinite(breakdown.total)) {
        aborted = true;
        break;
      }
      tape.backward(total);
      optimizer.step(ParamView(model), ParamView(grads));
      epoch_stats[batch.category].add(breakdown, config.loss == LossKind::WeightedAdaptive);
    }
    if (aborted) {
      result.aborted = true;
      break;
    }

    // Validation uses the plain uniform KL; adaptive weighting never applies
    // during evaluation.
    const BiasReport val = validation_report(model, validation_professions, train_templates,
                                             *inputs.pairs, desired, scoring_mode);

    for (const Category category : kCategoryOrder) {
      const auto it = epoch_stats.find(category);
      if (it == epoch_stats.end()) continue;
      HistoryRow row;
      row.epoch = epoch;
      row.split = "train";
      row.category = to_string(category);
      row.kl_mean = mean_of(it->second.batch_kl);
      row.kl_var = population_variance_of(it->second.batch_kl);
      row.lambda = mean_of(it->second.lambda);
      row.mu_kl = mean_of(it->second.mu);
      row.var_factor = mean_of(it->second.var_factor);
      row.lm_loss = mean_of(it->second.lm);
      row.total_loss = mean_of(it->second.total);
      result.history.push_back(std::move(row));
    }
    for (const Category category : kCategoryOrder) {
      const auto it = val.per_category.find(category);
      if (it == val.per_category.end()) continue;
      HistoryRow row;
      row.epoch = epoch;
      row.split = "validation";
      row.category = to_string(category);
      row.kl_mean = it->second.mean;
      row.kl_var = it->second.variance;
      result.history.push_back(std::move(row));
    }
    HistoryRow all_row;
    all_row.epoch = epoch;
    all_row.split = "validation";
    all_row.category = "ALL";
    all_row.kl_mean = val.all.mean;
    all_row.kl_var = val.all.variance;
    result.history.push_back(std::move(all_row));

    result.epochs_run = epoch;
    const double improvement = result.best_validation_kl - val.all.mean;
    if (improvement >= config.improvement_threshold()) {
      result.best_validation_kl = val.all.mean;
      result.best_epoch = epoch;
      best_model = model;
      stale_epochs = 0;
    } else {
      ++stale_epochs;
      if (stale_epochs >= config.patience) break;
    }
  }

  result.model = std::move(best_model);
  return result;
}

void write_history_csv(const std::filesystem::path& path, const std::vector<HistoryRow>& history) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write history CSV: " + path.string());
  out << "epoch,split,category,kl_mean,kl_var,lambda,mu_kl,var_factor,lm_loss,total_loss\n";
  for (const auto& row : history) {
    out << row.epoch << ',' << row.split << ',' << row.category << ',' << format_double(row.kl_mean)
        << ',' << format_double(row.kl_var) << ',' << format_double(row.lambda) << ','
        << format_double(row.mu_kl) << ',' << format_double(row.var_factor) << ','
        << format_double(row.lm_loss) << ',' << format_double(row.total_loss) << '\n';
  }
}

double drop_percent(double base, double tuned) {
  if (base == 0.0) return 0.0;
  return (base - tuned) / base * 100.0;
}

MultiSeedReport multi_seed_run(const ToyModel& base, const FinetuneInputs& inputs,
                               const TrainConfig& config,
                               const std::vector<std::vector<int>>& heldout_tokens) {
  if (config.seeds.empty()) throw std::invalid_argument("multi-seed run needs at least one seed");
  const auto& split = *inputs.split;
  const std::vector<SentenceTemplate> test_templates =
      pick_templates(*inputs.templates, split.test_templates);
  const std::vector<Profession> test_professions =
      pick_professions(*inputs.professions, split.test_professions);
  const DesiredDistribution desired = config.target == TargetMode::Equal
                                          ? DesiredDistribution::equal(*inputs.professions)
                                          : DesiredDistribution::real_world(*inputs.professions);
  const ScoringMode scoring_mode =
      base.mode == ModelMode::Masked ? ScoringMode::Masked : ScoringMode::Autoregressive;

  MultiSeedReport report;
  report.base_test =
      evaluate_bias(base, test_professions, test_templates, *inputs.pairs, desired, scoring_mode);
  report.base_heldout_lm_loss = heldout_tokens.empty()
                                    ? std::numeric_limits<double>::quiet_NaN()
                                    : corpus_lm_loss(base, heldout_tokens);

  for (const std::uint64_t seed : config.seeds) {
    SeedOutcome outcome;
    outcome.seed = seed;
    try {
      FinetuneResult tuned = finetune(base, inputs, config, seed);
      if (tuned.aborted) {
        std::fprintf(stderr, "warning: seed %llu aborted on a non-finite loss\n",
                     static_cast<unsigned long long>(seed));
      } else {
        const BiasReport test = evaluate_bias(tuned.model, test_professions, test_templates,
                                              *inputs.pairs, desired, scoring_mode);
        outcome.completed = true;
        outcome.epochs_run = tuned.epochs_run;
        outcome.best_validation_kl = tuned.best_validation_kl;
        for (const auto& [category, stats] : test.per_category) outcome.test_kl[category] = stats.mean;
        outcome.test_all_kl = test.all.mean;
        outcome.test_records = test.records;
        outcome.heldout_lm_loss = heldout_tokens.empty()
                                      ? std::numeric_limits<double>::quiet_NaN()
                                      : corpus_lm_loss(tuned.model, heldout_tokens);
        outcome.history = std::move(tuned.history);
        outcome.model = std::move(tuned.model);
      }
    } catch (const std::exception& e) {
      std::fprintf(stderr, "warning: seed %llu failed: %s\n",
                   static_cast<unsigned long long>(seed), e.what());
    }
    report.seeds.push_back(std::move(outcome));
  }

  std::vector<const SeedOutcome*> completed;
  for (const auto& outcome : report.seeds) {
    if (outcome.completed) completed.push_back(&outcome);
  }
  report.completed_seeds = static_cast<int>(completed.size());
  if (completed.empty()) return report;

  for (const Category category : kCategoryOrder) {
    if (report.base_test.per_category.count(category) == 0) continue;
    double total = 0.0;
    for (const auto* outcome : completed) total += outcome->test_kl.at(category);
    report.tuned_kl[category] = total / static_cast<double>(completed.size());
    report.drop_percent[category] =
        drop_percent(report.base_test.per_category.at(category).mean, report.tuned_kl[category]);
  }
  double total_all = 0.0;
  double total_lm = 0.0;
  for (const auto* outcome : completed) {
    total_all += outcome->test_all_kl;
    total_lm += outcome->heldout_lm_loss;
  }
  report.tuned_all_kl = total_all / static_cast<double>(completed.size());
  report.tuned_heldout_lm_loss = total_lm / static_cast<double>(completed.size());
  report.all_drop_percent = drop_percent(report.base_test.all.mean, report.tuned_all_kl);

  // Significance: base per-profession KLs against seed-averaged tuned KLs.
  std::map<std::string, double> tuned_by_profession;
  std::map<std::string, Category> category_by_profession;
  for (const auto* outcome : completed) {
    for (const auto& record : outcome->test_records) {
      tuned_by_profession[record.profession] += record.kl / static_cast<double>(completed.size());
      category_by_profession[record.profession] = record.category;
    }
  }
  std::map<Category, std::vector<double>> before_by_category;
  std::map<Category, std::vector<double>> after_by_category;
  std::vector<double> before_all;
  std::vector<double> after_all;
  for (const auto& record : report.base_test.records) {
    const auto it = tuned_by_profession.find(record.profession);
    if (it == tuned_by_profession.end()) continue;
    before_by_category[record.category].push_back(record.kl);
    after_by_category[record.category].push_back(it->second);
    before_all.push_back(record.kl);
    after_all.push_back(it->second);
  }
  for (const auto& [category, before] : before_by_category) {
    if (before.size() >= 2) {
      report.significance[category] = significance_test(before, after_by_category.at(category));
    }
  }
  if (before_all.size() >= 2) report.all_significance = significance_test(before_all, after_all);
  return report;
}

void finalize_sweep_run(SweepRun& run) {
  std::vector<double> improvements;
  for (const Category category : kCategoryOrder) {
    const auto it = run.improvement_percent.find(category);
    if (it != run.improvement_percent.end()) improvements.push_back(it->second);
  }
  const double mean = mean_of(improvements);
  const double stddev = std::sqrt(population_variance_of(improvements));
  run.r_score = stddev > 0.0 ? mean / stddev : std::numeric_limits<double>::infinity();
  run.median_improvement = median(improvements);
}

std::size_t select_hyperparameters(const std::vector<SweepRun>& runs) {
  if (runs.empty()) throw std::invalid_argument("no sweep runs to select from");
  if (runs.size() == 1) return 0;

  double mean_all = 0.0;
  for (const auto& run : runs) mean_all += run.all_improvement_percent;
  mean_all /= static_cast<double>(runs.size());

  // Runs within one point of the mean ALL improvement stay in play; the
  // maximum is always kept, so the list cannot be empty.
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (runs[i].all_improvement_percent >= mean_all - 1.0) kept.push_back(i);
  }

  std::stable_sort(kept.begin(), kept.end(), [&](std::size_t a, std::size_t b) {
    return runs[a].r_score > runs[b].r_score;
  });
  if (kept.size() > 2) kept.resize(2);

  std::stable_sort(kept.begin(), kept.end(), [&](std::size_t a, std::size_t b) {
    if (runs[a].median_improvement != runs[b].median_improvement) {
      return runs[a].median_improvement > runs[b].median_improvement;
    }
    if (runs[a].all_improvement_percent != runs[b].all_improvement_percent) {
      return runs[a].all_improvement_percent > runs[b].all_improvement_percent;
    }
    return runs[a].config_key < runs[b].config_key;
  });
  return kept.front();
}

void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRun>& runs) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write sweep CSV: " + path.string());
  out << "config,batch_size,beta,gamma,DP_male_improvement,DP_female_improvement,"
         "DP_balanced_improvement,ALL_improvement,R,median_improvement,selected\n";
  for (const auto& run : runs) {
    out << run.config_key << ',' << run.batch_size << ',' << format_double(run.beta) << ','
        << format_double(run.gamma);
    for (const Category category : kCategoryOrder) {
      out << ',';
      const auto it = run.improvement_percent.find(category);
      if (it != run.improvement_percent.end()) out << format_double(it->second);
    }
    out << ',' << format_double(run.all_improvement_percent) << ','
        << (std::isinf(run.r_score) ? "inf" : format_double(run.r_score)) << ','
        << format_double(run.median_improvement) << ',' << (run.selected ? 1 : 0) << '\n';
  }
}

}  // namespace distalign
