#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "distalign/bias.hpp"
#include "distalign/rng.hpp"

using namespace distalign;

namespace {

// Independent re-evaluation of the half-mean divergence, plain loops only.
double kl_oracle(double tm, double tf, double pm, double pf) {
  double total = 0.0;
  if (tm > 0.0) total += tm * std::log(tm / pm);
  if (tf > 0.0) total += tf * std::log(tf / pf);
  return 0.5 * total;
}

// Numerical upper tail of the Student t distribution via Simpson's rule on
// the density, independent of the incomplete-beta path under test.
double t_tail_oracle(double t, double df) {
  const double log_norm = std::lgamma((df + 1.0) / 2.0) - std::lgamma(df / 2.0) -
                          0.5 * std::log(df * 3.14159265358979323846);
  const auto pdf = [&](double x) {
    return std::exp(log_norm - ((df + 1.0) / 2.0) * std::log1p(x * x / df));
  };
  const double hi = std::max(60.0, std::abs(t) * 20.0 + 60.0);
  const int steps = 200000;
  const double h = (hi - t) / steps;
  double sum = pdf(t) + pdf(hi);
  for (int i = 1; i < steps; ++i) sum += pdf(t + i * h) * (i % 2 == 1 ? 4.0 : 2.0);
  return sum * h / 3.0;
}

std::vector<KlRecord> records_from(const std::vector<double>& kls) {
  std::vector<KlRecord> records;
  for (std::size_t i = 0; i < kls.size(); ++i) {
    records.push_back(KlRecord{"p" + std::to_string(i), Category::Balanced, kls[i]});
  }
  return records;
}

}  // namespace

TEST_CASE("kl_profession identities and frozen values") {
  CHECK(kl_profession({0.5, 0.5}, {0.5, 0.5}) == 0.0);
  const double expected = kl_oracle(0.9, 0.1, 0.5, 0.5);
  CHECK(kl_profession({0.9, 0.1}, {0.5, 0.5}) == doctest::Approx(expected).epsilon(1e-15));
  CHECK(kl_profession({0.9, 0.1}, {0.5, 0.5}) == doctest::Approx(0.18403).epsilon(1e-4));
  // Zero desired component contributes nothing (limit convention).
  CHECK(kl_profession({1.0, 0.0}, {0.5, 0.5}) == doctest::Approx(0.5 * std::log(2.0)).epsilon(1e-15));
  CHECK_THROWS(kl_profession({0.5, 0.5}, {0.0, 1.0}));
}

TEST_CASE("kl_profession is nonnegative and zero only at equality") {
  Rng rng(7);
  for (int i = 0; i < 500; ++i) {
    const double tm = 0.01 + 0.98 * rng.uniform01();
    const double pm = 0.01 + 0.98 * rng.uniform01();
    const double kl = kl_profession({tm, 1.0 - tm}, {pm, 1.0 - pm});
    CHECK(kl >= 0.0);
    CHECK(kl == doctest::Approx(kl_oracle(tm, 1.0 - tm, pm, 1.0 - pm)).epsilon(1e-12));
    if (std::abs(tm - pm) > 1e-3) CHECK(kl > 0.0);
  }
  CHECK(kl_profession({0.3, 0.7}, {0.3, 0.7}) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("bias_score is the mean and permutation invariant") {
  CHECK(bias_score(records_from({0.3})) == 0.3);
  CHECK(bias_score(records_from({0.1, 0.3})) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(bias_score(records_from({0.0, 0.0, 0.0})) == 0.0);
  CHECK_THROWS(bias_score({}));

  Rng rng(11);
  std::vector<double> kls;
  for (int i = 0; i < 20; ++i) kls.push_back(rng.uniform01());
  const double forward = bias_score(records_from(kls));
  std::vector<double> reversed(kls.rbegin(), kls.rend());
  CHECK(bias_score(records_from(reversed)) == doctest::Approx(forward).epsilon(1e-15));
  double max_kl = 0.0;
  for (const double k : kls) max_kl = std::max(max_kl, k);
  CHECK(forward <= max_kl);
}

TEST_CASE("category_stats matches the two-pass oracle") {
  std::vector<KlRecord> records;
  records.push_back({"a", Category::MaleDominated, 0.1});
  records.push_back({"b", Category::MaleDominated, 0.2});
  records.push_back({"c", Category::MaleDominated, 0.3});
  records.push_back({"d", Category::Balanced, 0.5});
  records.push_back({"e", Category::Balanced, 0.5});

  const auto stats = category_stats(records);
  CHECK(stats.at(Category::MaleDominated).mean == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(stats.at(Category::MaleDominated).variance == doctest::Approx(0.02 / 3.0).epsilon(1e-12));
  CHECK(stats.at(Category::MaleDominated).variance == doctest::Approx(0.006667).epsilon(1e-3));
  CHECK(stats.at(Category::Balanced).variance == 0.0);
  CHECK(stats.count(Category::FemaleDominated) == 0);

  // The ALL row is exactly the bias score.
  CHECK(overall_stats(records).mean == bias_score(records));
}

TEST_CASE("student t upper tail against closed forms and numeric integration") {
  // Closed forms: df=1 is the Cauchy tail, df=2 has an algebraic CDF.
  for (const double t : {-1.3, 0.0, 0.7, 2.1, 4.0}) {
    CHECK(student_t_upper_tail(t, 1.0) ==
          doctest::Approx(0.5 - std::atan(t) / 3.14159265358979323846).epsilon(1e-10));
    CHECK(student_t_upper_tail(t, 2.0) ==
          doctest::Approx(0.5 * (1.0 - t / std::sqrt(2.0 + t * t))).epsilon(1e-10));
  }
  CHECK(student_t_upper_tail(0.0, 5.0) == doctest::Approx(0.5).epsilon(1e-12));
  // Numeric integration is reliable once the tail decays fast enough for the
  // truncated quadrature.
  for (const double df : {4.5, 17.0, 120.0}) {
    for (const double t : {-1.3, 0.7, 2.1, 4.0}) {
      CHECK(student_t_upper_tail(t, df) == doctest::Approx(t_tail_oracle(t, df)).epsilon(1e-6));
    }
  }
}

TEST_CASE("significance_test matches an independent Welch evaluation") {
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> before;
    std::vector<double> after;
    const std::size_t nb = 3 + rng.below(8);
    const std::size_t na = 3 + rng.below(8);
    for (std::size_t i = 0; i < nb; ++i) before.push_back(0.2 + 0.1 * rng.normal());
    for (std::size_t i = 0; i < na; ++i) after.push_back(0.1 + 0.05 * rng.normal());

    const SignificanceResult result = significance_test(before, after);

    double mb = 0.0, ma = 0.0;
    for (const double x : before) mb += x;
    for (const double x : after) ma += x;
    mb /= static_cast<double>(nb);
    ma /= static_cast<double>(na);
    double vb = 0.0, va = 0.0;
    for (const double x : before) vb += (x - mb) * (x - mb);
    for (const double x : after) va += (x - ma) * (x - ma);
    vb /= static_cast<double>(nb - 1);
    va /= static_cast<double>(na - 1);
    const double se_b = vb / static_cast<double>(nb);
    const double se_a = va / static_cast<double>(na);
    const double t = (mb - ma) / std::sqrt(se_b + se_a);
    const double df = (se_b + se_a) * (se_b + se_a) /
                      (se_b * se_b / static_cast<double>(nb - 1) +
                       se_a * se_a / static_cast<double>(na - 1));
    CHECK(result.t == doctest::Approx(t).epsilon(1e-10));
    CHECK(result.df == doctest::Approx(df).epsilon(1e-10));
    CHECK(result.p == doctest::Approx(t_tail_oracle(t, df)).epsilon(1e-5));
  }
}

TEST_CASE("significance_test degenerate and floor behaviour") {
  const SignificanceResult same = significance_test({0.5, 0.5, 0.5}, {0.5, 0.5, 0.5});
  CHECK(same.degenerate);
  CHECK(same.p == 1.0);
  CHECK_FALSE(same.significant);

  // Constant but different samples: the variance floor yields a huge t.
  const SignificanceResult drop =
      significance_test({0.5, 0.5, 0.5, 0.5}, {0.0, 0.0, 0.0, 0.0});
  CHECK_FALSE(drop.degenerate);
  CHECK(drop.significant);
  CHECK(drop.t > 1e3);

  CHECK_THROWS(significance_test({0.5}, {0.1, 0.2}));
}

TEST_CASE("tiny shift in noisy samples is not significant; permutation test agrees") {
  Rng rng(31);
  std::vector<double> before;
  std::vector<double> after;
  for (int i = 0; i < 10; ++i) {
    before.push_back(0.5 + 0.4 * rng.normal());
    after.push_back(0.49 + 0.4 * rng.normal());
  }
  const SignificanceResult result = significance_test(before, after);
  CHECK_FALSE(result.significant);

  // Permutation oracle: how often does a random relabelling produce a mean
  // difference at least as large?
  std::vector<double> pooled = before;
  pooled.insert(pooled.end(), after.begin(), after.end());
  double mb = 0.0, ma = 0.0;
  for (const double x : before) mb += x;
  for (const double x : after) ma += x;
  const double observed = mb / before.size() - ma / after.size();
  int at_least = 0;
  const int trials = 2000;
  for (int trial = 0; trial < trials; ++trial) {
    rng.shuffle(pooled);
    double pb = 0.0;
    for (std::size_t i = 0; i < before.size(); ++i) pb += pooled[i];
    double pa = 0.0;
    for (std::size_t i = before.size(); i < pooled.size(); ++i) pa += pooled[i];
    if (pb / before.size() - pa / after.size() >= observed) ++at_least;
  }
  CHECK(static_cast<double>(at_least) / trials > 0.05);
}

TEST_CASE("desired distributions") {
  std::vector<Profession> professions{{"carpenter", 0.03, std::nullopt, Category::MaleDominated},
                                      {"nurse", 0.87, std::nullopt, Category::FemaleDominated}};
  const auto equal = DesiredDistribution::equal(professions);
  CHECK(equal.target_for("carpenter").p_male == 0.5);
  const auto real = DesiredDistribution::real_world(professions);
  CHECK(real.target_for("carpenter").p_male == doctest::Approx(0.97).epsilon(1e-15));
  CHECK(real.target_for("nurse").p_female == doctest::Approx(0.87).epsilon(1e-15));
  CHECK_THROWS(real.target_for("pilot"));
}
