#include "distalign/bias.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace distalign {

namespace {

constexpr double kVarianceFloor = 1e-12;

double sample_mean(const std::vector<double>& xs) {
  double total = 0.0;
  for (const double x : xs) total += x;
  return total / static_cast<double>(xs.size());
}

double sample_variance(const std::vector<double>& xs, double mean) {
  if (xs.size() < 2) return 0.0;
  double total = 0.0;
  for (const double x : xs) total += (x - mean) * (x - mean);
  return total / static_cast<double>(xs.size() - 1);
}

// Regularised incomplete beta via the Lentz continued fraction.
double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIterations = 300;
  constexpr double kEpsilon = 3e-15;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIterations; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEpsilon) break;
  }
  return h;
}

double regularized_incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log(1.0 - x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * beta_continued_fraction(a, b, x) / a;
  }
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

nlohmann::json stats_to_json(const CategoryStats& s) {
  return nlohmann::json{{"mean", s.mean}, {"var", s.variance}, {"n", s.count}};
}

CategoryStats stats_from_json(const nlohmann::json& j) {
  CategoryStats s;
  s.mean = j.at("mean").get<double>();
  s.variance = j.at("var").get<double>();
  s.count = j.at("n").get<int>();
  return s;
}

}  // namespace

const char* to_string(TargetMode mode) { return mode == TargetMode::Equal ? "equal" : "real_world"; }

std::optional<TargetMode> target_mode_from_string(const std::string& s) {
  if (s == "equal") return TargetMode::Equal;
  if (s == "real_world") return TargetMode::RealWorld;
  return std::nullopt;
}

DesiredDistribution DesiredDistribution::equal(const std::vector<Profession>& professions) {
  DesiredDistribution desired;
  desired.mode = TargetMode::Equal;
  for (const auto& p : professions) desired.targets[p.name] = GenderDistribution{0.5, 0.5};
  return desired;
}

DesiredDistribution DesiredDistribution::real_world(const std::vector<Profession>& professions) {
  DesiredDistribution desired;
  desired.mode = TargetMode::RealWorld;
  for (const auto& p : professions) {
    desired.targets[p.name] = GenderDistribution{1.0 - p.female_share, p.female_share};
  }
  return desired;
}

const GenderDistribution& DesiredDistribution::target_for(const std::string& profession) const {
  const auto it = targets.find(profession);
  if (it == targets.end()) {
    throw std::out_of_range("no desired distribution for profession '" + profession + "'");
  }
  return it->second;
}

double kl_profession(const GenderDistribution& desired, const GenderDistribution& predicted) {
  if (!(predicted.p_male > 0.0) || !(predicted.p_female > 0.0)) {
    throw std::domain_error("predicted distribution has a zero component");
  }
  double total = 0.0;
  if (desired.p_male > 0.0) total += desired.p_male * std::log(desired.p_male / predicted.p_male);
  if (desired.p_female > 0.0) {
    total += desired.p_female * std::log(desired.p_female / predicted.p_female);
  }
  return 0.5 * total;
}

double bias_score(const std::vector<KlRecord>& records) {
  if (records.empty()) throw std::invalid_argument("bias score over an empty record list");
  double total = 0.0;
  for (const auto& r : records) total += r.kl;
  return total / static_cast<double>(records.size());
}

std::map<Category, CategoryStats> category_stats(const std::vector<KlRecord>& records) {
  std::map<Category, std::vector<double>> grouped;
  for (const auto& r : records) grouped[r.category].push_back(r.kl);
  std::map<Category, CategoryStats> stats;
  for (const auto& [category, values] : grouped) {
    CategoryStats s;
    s.count = static_cast<int>(values.size());
    s.mean = sample_mean(values);
    double total = 0.0;
    for (const double v : values) total += (v - s.mean) * (v - s.mean);
    s.variance = total / static_cast<double>(values.size());
    stats[category] = s;
  }
  return stats;
}

CategoryStats overall_stats(const std::vector<KlRecord>& records) {
  CategoryStats s;
  if (records.empty()) return s;
  std::vector<double> values;
  values.reserve(records.size());
  for (const auto& r : records) values.push_back(r.kl);
  s.count = static_cast<int>(values.size());
  s.mean = sample_mean(values);
  double total = 0.0;
  for (const double v : values) total += (v - s.mean) * (v - s.mean);
  s.variance = total / static_cast<double>(values.size());
  return s;
}

double student_t_upper_tail(double t, double df) {
  if (df <= 0.0) return 1.0;
  const double x = df / (df + t * t);
  const double half_tail = 0.5 * regularized_incomplete_beta(df / 2.0, 0.5, x);
  return t >= 0.0 ? half_tail : 1.0 - half_tail;
}

SignificanceResult significance_test(const std::vector<double>& kl_before,
                                     const std::vector<double>& kl_after) {
  if (kl_before.size() < 2 || kl_after.size() < 2) {
    throw std::invalid_argument("significance test needs at least 2 samples per side");
  }
  SignificanceResult result;
  const double mean_before = sample_mean(kl_before);
  const double mean_after = sample_mean(kl_after);
  const double var_before = std::max(sample_variance(kl_before, mean_before), kVarianceFloor);
  const double var_after = std::max(sample_variance(kl_after, mean_after), kVarianceFloor);
  const double nb = static_cast<double>(kl_before.size());
  const double na = static_cast<double>(kl_after.size());

  if (sample_variance(kl_before, mean_before) == 0.0 &&
      sample_variance(kl_after, mean_after) == 0.0 && mean_before == mean_after) {
    result.degenerate = true;
    result.t = 0.0;
    result.df = nb + na - 2.0;
    result.p = 1.0;
    result.significant = false;
    return result;
  }

  const double se_before = var_before / nb;
  const double se_after = var_after / na;
  const double se = std::sqrt(se_before + se_after);
  result.t = (mean_before - mean_after) / se;
  result.df = (se_before + se_after) * (se_before + se_after) /
              (se_before * se_before / (nb - 1.0) + se_after * se_after / (na - 1.0));
  result.p = student_t_upper_tail(result.t, result.df);
  result.significant = result.p < 0.05;
  return result;
}

BiasReport evaluate_bias(const ToyModel& model, const std::vector<Profession>& professions,
                         const std::vector<SentenceTemplate>& templates,
                         const std::vector<GenderedPair>& pairs, const DesiredDistribution& desired,
                         ScoringMode mode, std::string dataset_id) {
  BiasReport report;
  report.mode = desired.mode;
  report.dataset_id = std::move(dataset_id);
  ScoringContext ctx(model, templates, pairs, mode);
  for (const auto& profession : professions) {
    KlRecord record;
    record.profession = profession.name;
    record.category = profession.category;
    record.kl = kl_profession(desired.target_for(profession.name),
                              predicted_distribution(ctx, profession.name));
    report.records.push_back(std::move(record));
  }
  if (ctx.unknown_tokens > 0) {
    std::fprintf(stderr, "warning: %d unknown token(s) scored as UNK during bias evaluation\n",
                 ctx.unknown_tokens);
  }
  report.per_category = category_stats(report.records);
  report.all = overall_stats(report.records);
  return report;
}

void write_bias_report_json(const std::filesystem::path& path, const BiasReport& report) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["mode"] = to_string(report.mode);
  j["dataset_id"] = report.dataset_id;
  nlohmann::json per_category = nlohmann::json::object();
  for (const auto& [category, stats] : report.per_category) {
    per_category[to_string(category)] = stats_to_json(stats);
  }
  j["per_category"] = per_category;
  j["all"] = stats_to_json(report.all);
  nlohmann::json records = nlohmann::json::array();
  for (const auto& r : report.records) {
    records.push_back({{"profession", r.profession},
                       {"category", to_string(r.category)},
                       {"kl", r.kl}});
  }
  j["records"] = records;
  if (report.significance) {
    j["significance"] = {{"t", report.significance->t},
                         {"df", report.significance->df},
                         {"p", report.significance->p},
                         {"significant", report.significance->significant},
                         {"degenerate", report.significance->degenerate}};
  }
  if (std::isfinite(report.heldout_lm_loss)) j["heldout_lm_loss"] = report.heldout_lm_loss;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write bias report: " + path.string());
  out << j.dump(2) << '\n';
}

BiasReport read_bias_report_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open bias report: " + path.string());
  nlohmann::json j;
  in >> j;
  BiasReport report;
  const auto mode = target_mode_from_string(j.at("mode").get<std::string>());
  if (!mode) throw std::runtime_error("bias report has unknown mode");
  report.mode = *mode;
  report.dataset_id = j.value("dataset_id", std::string{});
  for (const auto& [name, stats] : j.at("per_category").items()) {
    const auto category = category_from_string(name);
    if (!category) throw std::runtime_error("bias report has unknown category " + name);
    report.per_category[*category] = stats_from_json(stats);
  }
  report.all = stats_from_json(j.at("all"));
  for (const auto& rj : j.at("records")) {
    KlRecord r;
    r.profession = rj.at("profession").get<std::string>();
    const auto category = category_from_string(rj.at("category").get<std::string>());
    if (!category) throw std::runtime_error("bias report record has unknown category");
    r.category = *category;
    r.kl = rj.at("kl").get<double>();
    report.records.push_back(std::move(r));
  }
  if (j.contains("significance")) {
    SignificanceResult s;
    s.t = j["significance"].at("t").get<double>();
    s.df = j["significance"].at("df").get<double>();
    s.p = j["significance"].at("p").get<double>();
    s.significant = j["significance"].at("significant").get<bool>();
    s.degenerate = j["significance"].value("degenerate", false);
    report.significance = s;
  }
  if (j.contains("heldout_lm_loss")) report.heldout_lm_loss = j["heldout_lm_loss"].get<double>();
  return report;
}

void write_bias_report_csv(const std::filesystem::path& path, const BiasReport& report) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write bias report CSV: " + path.string());
  const std::array<Category, 3> order{Category::MaleDominated, Category::FemaleDominated,
                                      Category::Balanced};
  out << "statistic,DP_male,DP_female,DP_balanced,ALL\n";
  char buf[64];
  const auto cell = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  const auto row = [&](const char* name, const auto& pick) {
    out << name;
    for (const Category c : order) {
      out << ',';
      const auto it = report.per_category.find(c);
      if (it != report.per_category.end()) out << cell(pick(it->second));
    }
    out << ',' << cell(pick(report.all)) << '\n';
  };
  row("kl_mean", [](const CategoryStats& s) { return s.mean; });
  row("kl_var", [](const CategoryStats& s) { return s.variance; });
  row("n", [](const CategoryStats& s) { return static_cast<double>(s.count); });
}

}  // namespace distalign
