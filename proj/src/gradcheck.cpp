#include "vmae/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace vmae {

namespace {

double evaluate(const LossBuilder& loss) {
  Tape<double> tape;
  const double v = loss(tape).value()(0, 0);
  if (!std::isfinite(v)) throw NumericError("finite_diff_check: non-finite loss evaluation");
  return v;
}

std::vector<Index> pick_entries(Index size, Index limit, std::mt19937_64& rng) {
  std::vector<Index> all(static_cast<std::size_t>(size));
  std::iota(all.begin(), all.end(), Index{0});
  if (limit <= 0 || limit >= size) return all;
  std::vector<Index> picked;
  picked.reserve(static_cast<std::size_t>(limit));
  std::sample(all.begin(), all.end(), std::back_inserter(picked), limit, rng);
  return picked;
}

}  // namespace

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport finite_diff_check(const LossBuilder& loss, std::span<Param<double>* const> params,
                                  const GradCheckOptions& options) {
  if (!(options.step > 0)) throw ConfigError("finite_diff_check: step must be positive");
  for (auto* p : params) p->zero_grad();
  {
    Tape<double> tape;
    Var<double> l = loss(tape);
    if (!std::isfinite(l.value()(0, 0))) throw NumericError("finite_diff_check: non-finite loss evaluation");
    tape.backward(l);
  }

  GradCheckReport report;
  std::mt19937_64 rng(options.sample_seed);
  const double h = options.step;
  for (auto* p : params) {
    GradCheckParam c;
    c.name = p->name;
    double aa = 0, nn = 0, dd = 0;
    for (Index i : pick_entries(p->value.size(), options.max_entries_per_param, rng)) {
      const double original = p->value[i];
      p->value[i] = original + h;
      const double plus = evaluate(loss);
      p->value[i] = original - h;
      const double minus = evaluate(loss);
      p->value[i] = original;

      const double analytic = p->grad[i];
      const double numeric = (plus - minus) / (2 * h);
      if (!std::isfinite(analytic)) throw NumericError("finite_diff_check: non-finite gradient for " + p->name);
      aa += analytic * analytic;
      nn += numeric * numeric;
      dd += (analytic - numeric) * (analytic - numeric);
      ++c.entries;
    }
    c.analytic_norm = std::sqrt(aa);
    c.numeric_norm = std::sqrt(nn);
    c.difference_norm = std::sqrt(dd);
    c.relative_error = c.difference_norm / std::max({c.analytic_norm, c.numeric_norm, 1e-8});
    report.entries_checked += c.entries;
    if (report.params.empty() || c.relative_error > report.max_relative_error) {
      report.max_relative_error = c.relative_error;
      report.worst = c;
    }
    report.params.push_back(std::move(c));
  }
  return report;
}

void perturb_params(std::span<Param<double>* const> params, double scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, scale);
  for (auto* p : params) {
    for (Index i = 0; i < p->value.size(); ++i) p->value[i] += noise(rng);
  }
}

}  // namespace vmae
