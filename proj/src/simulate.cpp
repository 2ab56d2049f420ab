#include "ppfactor/simulate.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace ppf {

namespace {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr int kSamplerCells = 4096;
constexpr std::uint64_t kScoreStream = 0xffffffffULL;

}  // namespace

StreamRng::result_type StreamRng::operator()() {
  ++counter_;
  return mix64(key_ + counter_ * kGolden);
}

double StreamRng::uniform() {
  // 53 random bits, shifted off zero.
  return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
}

StreamRng make_stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::uint64_t key = mix64(seed + kGolden);
  key = mix64(key ^ (a + 0x632be59bd9b4e019ULL));
  key = mix64(key ^ (b + 0x85157af5ULL));
  key = mix64(key ^ (c + 0x1b873593ULL));
  return StreamRng(key);
}

std::vector<double> sample_process(const std::function<double(double)>& log_intensity, double a,
                                   double b, StreamRng& rng) {
  if (!(b > a)) throw std::invalid_argument("sample_process requires a < b");
  const double h = (b - a) / kSamplerCells;
  std::vector<double> cumulative(kSamplerCells + 1, 0.0);
  double prev = std::exp(log_intensity(a));
  for (int j = 1; j <= kSamplerCells; ++j) {
    const double cur = std::exp(log_intensity(a + j * h));
    cumulative[j] = cumulative[j - 1] + 0.5 * h * (prev + cur);
    prev = cur;
  }
  const double total = cumulative.back();
  if (!std::isfinite(total)) throw std::invalid_argument("log intensity not finite on [a, b]");

  std::poisson_distribution<long> count_dist(total);
  const long m = total > 0.0 ? count_dist(rng) : 0;
  std::vector<double> times;
  times.reserve(static_cast<std::size_t>(m));
  for (long e = 0; e < m; ++e) {
    const double target = rng.uniform() * total;
    auto it = std::upper_bound(cumulative.begin() + 1, cumulative.end(), target);
    if (it == cumulative.end()) --it;
    const auto j = static_cast<int>(it - cumulative.begin());
    const double lo = cumulative[j - 1];
    const double width = cumulative[j] - lo;
    const double frac = width > 0.0 ? (target - lo) / width : 0.5;
    times.push_back(std::min(a + (j - 1 + frac) * h, std::nextafter(b, a)));
  }
  std::sort(times.begin(), times.end());
  return times;
}

Scenario scenario_from_int(int id) {
  if (id < 1 || id > 3) throw std::invalid_argument("scenario must be 1, 2 or 3");
  return static_cast<Scenario>(id);
}

std::string scenario_name(Scenario s) {
  switch (s) {
    case Scenario::independent:
      return "independent";
    case Scenario::quadratic_trend:
      return "quadratic_trend";
    case Scenario::autoregressive:
      return "autoregressive";
  }
  return "unknown";
}

ScenarioSpec ScenarioSpec::for_rate(Scenario scenario, int n, int rate, std::uint64_t seed) {
  ScenarioSpec spec;
  spec.scenario = scenario;
  spec.n = n;
  spec.c = std::log(static_cast<double>(rate) / 2.0);
  spec.seed = seed;
  return spec;
}

double GroundTruth::mu(double t, double c) { return std::sin(std::numbers::pi * t) + c; }

double GroundTruth::phi(int k, double t) {
  return std::numbers::sqrt2 * std::sin(static_cast<double>(k + 1) * std::numbers::pi * t);
}

double GroundTruth::log_intensity(int day, double t) const {
  return mu(t, c) + scores(day, 0) * phi(0, t) + scores(day, 1) * phi(1, t);
}

ScenarioDraw gen_scenario(const ScenarioSpec& spec) {
  if (spec.n < 1) throw std::invalid_argument("scenario needs n >= 1");
  if (!(spec.sigma1 > spec.sigma2 && spec.sigma2 > 0.0)) {
    throw std::invalid_argument("scenario needs sigma1 > sigma2 > 0");
  }
  if (!(spec.ar >= 0.0 && spec.ar < 1.0)) throw std::invalid_argument("ar coefficient must be in [0, 1)");
  if (!(spec.trend_share >= 0.0 && spec.trend_share <= 1.0)) {
    throw std::invalid_argument("trend share must be in [0, 1]");
  }

  const int n = spec.n;
  const auto sid = static_cast<std::uint64_t>(spec.scenario);
  StreamRng score_rng = make_stream(spec.seed, sid, kScoreStream);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd z1(n), z2(n);
  for (int i = 0; i < n; ++i) z1(i) = normal(score_rng);
  for (int i = 0; i < n; ++i) z2(i) = normal(score_rng);

  GroundTruth truth;
  truth.c = spec.c;
  truth.scores.resize(n, 2);
  truth.scores.col(1) = spec.sigma2 * z2;
  switch (spec.scenario) {
    case Scenario::independent:
      truth.scores.col(0) = spec.sigma1 * z1;
      break;
    case Scenario::quadratic_trend: {
      Eigen::VectorXd s(n);
      for (int i = 0; i < n; ++i) {
        const double d = (i + 1) - n / 2.0;
        s(i) = -d * d;
      }
      const double mean = s.mean();
      const double sd = n > 1 ? std::sqrt((s.array() - mean).square().sum() / (n - 1)) : 0.0;
      const Eigen::VectorXd standardized =
          sd > 0.0 ? Eigen::VectorXd((s.array() - mean) / sd) : Eigen::VectorXd::Zero(n);
      truth.scores.col(0) = standardized * std::sqrt(spec.trend_share) * spec.sigma1 +
                            z1 * std::sqrt(1.0 - spec.trend_share) * spec.sigma1;
      break;
    }
    case Scenario::autoregressive: {
      const double sigma_e = spec.sigma1 * std::sqrt(1.0 - spec.ar * spec.ar);
      truth.scores(0, 0) = z1(0) * sigma_e;
      for (int i = 1; i < n; ++i) truth.scores(i, 0) = spec.ar * truth.scores(i - 1, 0) + z1(i) * sigma_e;
      break;
    }
  }

  ScenarioDraw draw;
  draw.data.unit = "scenario" + std::to_string(sid);
  draw.data.a = 0.0;
  draw.data.b = 1.0;
  draw.data.days.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    StreamRng rng = make_stream(spec.seed, sid, static_cast<std::uint64_t>(i));
    draw.data.days[static_cast<std::size_t>(i)] =
        sample_process([&](double t) { return truth.log_intensity(i, t); }, 0.0, 1.0, rng);
  }
  draw.truth = std::move(truth);
  return draw;
}

std::string truth_to_json(const GroundTruth& truth, int grid) {
  if (grid < 2) throw std::invalid_argument("truth grid needs at least 2 points");
  nlohmann::json doc;
  std::vector<double> ts(static_cast<std::size_t>(grid)), mu(ts.size()), phi1(ts.size()), phi2(ts.size());
  for (int g = 0; g < grid; ++g) {
    const double t = static_cast<double>(g) / (grid - 1);
    ts[g] = t;
    mu[g] = GroundTruth::mu(t, truth.c);
    phi1[g] = GroundTruth::phi(0, t);
    phi2[g] = GroundTruth::phi(1, t);
  }
  doc["c"] = truth.c;
  doc["t"] = ts;
  doc["mu"] = mu;
  doc["phi"] = {phi1, phi2};
  std::vector<std::vector<double>> scores;
  for (Eigen::Index i = 0; i < truth.scores.rows(); ++i) {
    scores.push_back({truth.scores(i, 0), truth.scores(i, 1)});
  }
  doc["scores"] = scores;
  return doc.dump() + "\n";
}

}  // namespace ppf
