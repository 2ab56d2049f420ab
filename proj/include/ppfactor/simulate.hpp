#pragma once

#include "ppfactor/events.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace ppf {

/// Counter-based generator: output k of stream `key` is a SplitMix64
/// finalization of key + k * golden-gamma. Distinct keys give independent
/// streams, so replications can be generated in any order or in parallel.
class StreamRng {
 public:
  using result_type = std::uint64_t;

  explicit StreamRng(std::uint64_t key) : key_(key) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()();

  /// Uniform on (0, 1).
  double uniform();

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Derives the key of stream (seed, a, b, c).
StreamRng make_stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

/// One realization of a Poisson process with intensity exp(log_intensity) on
/// [a, b]: a Poisson count, then i.i.d. times by inverse CDF on a 4096-cell
/// cumulative trapezoid grid. Returned sorted.
std::vector<double> sample_process(const std::function<double(double)>& log_intensity, double a,
                                   double b, StreamRng& rng);

enum class Scenario { independent = 1, quadratic_trend = 2, autoregressive = 3 };

Scenario scenario_from_int(int id);
std::string scenario_name(Scenario s);

struct ScenarioSpec {
  Scenario scenario = Scenario::independent;
  int n = 100;
  double c = 0.0;  // baseline constant: log 5 or log 15
  double sigma1 = 0.3 * 0.7745966692414834;  // .3 * sqrt(.6)
  double sigma2 = 0.3 * 0.6324555320336759;  // .3 * sqrt(.4)
  double trend_share = 0.75;
  double ar = 0.8;
  std::uint64_t seed = 1;

  /// Spec for nominal baseline rate 10 or 30 (c = log(rate / 2)).
  static ScenarioSpec for_rate(Scenario scenario, int n, int rate, std::uint64_t seed);
};

/// mu(t) = sin(pi t) + c, phi_1 = sqrt2 sin(pi t), phi_2 = sqrt2 sin(2 pi t)
/// on [0, 1], with the generated n x 2 score matrix.
struct GroundTruth {
  double c = 0.0;
  Eigen::MatrixXd scores;

  static double mu(double t, double c);
  static double phi(int k, double t);  // k = 0 or 1
  double log_intensity(int day, double t) const;
};

struct ScenarioDraw {
  ReplicatedPointData data;
  GroundTruth truth;
};

ScenarioDraw gen_scenario(const ScenarioSpec& spec);

/// Ground truth sampled on an equispaced grid of `grid` points.
std::string truth_to_json(const GroundTruth& truth, int grid = 1001);

}  // namespace ppf
