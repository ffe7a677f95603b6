#include "tmcda/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "tmcda/error.hpp"
#include "tmcda/seed.hpp"

namespace tmcda {

namespace synthetic {

const std::array<MovementCoefficients, 3>& base_coefficients() {
  static const std::array<MovementCoefficients, 3> kBase{{
      // left
      {std::log(22.0), {0.05, 0.00, -0.10, 0.45, 0.15, 0.05}, 0.00},
      // through
      {std::log(100.0), {0.45, 0.15, 0.20, 0.00, -0.05, 0.05}, 0.10},
      // right
      {std::log(20.0), {0.25, 0.05, 0.10, 0.05, 0.00, 0.15}, 0.05},
  }};
  return kBase;
}

const std::array<std::array<double, kLatent>, kDrivers>& drift_matrix() {
  static const std::array<std::array<double, kLatent>, kDrivers> kDrift{{
      {0.30, -0.20, 0.00},
      {0.00, 0.15, 0.10},
      {0.10, 0.00, -0.25},
      {-0.20, 0.10, 0.15},
      {0.10, 0.20, 0.00},
      {0.15, 0.00, 0.10},
  }};
  return kDrift;
}

double log_rate(const FeatureVector& x, const MovementCoefficients& c) {
  std::array<double, kDrivers> scaled{};
  for (std::size_t k = 0; k < kDrivers; ++k)
    scaled[k] = x[kDriverColumns[k]] / kDriverReference[k] - 1.0;
  double eta = c.intercept;
  for (std::size_t k = 0; k < kDrivers; ++k) eta += c.slopes[k] * scaled[k];
  eta += c.interaction * scaled[0] * scaled[2];
  return eta;
}

}  // namespace synthetic

namespace {

constexpr double kIntervalSeconds = 900.0;
constexpr double kMaxRate = 2000.0;

double daily_profile(int hour) {
  const double h = hour;
  return 0.3 + std::exp(-(h - 8.0) * (h - 8.0) / 4.5) + 0.8 * std::exp(-(h - 17.0) * (h - 17.0) / 6.0);
}

std::string intersection_name(std::size_t i, std::size_t n) {
  const int width = n < 100 ? 2 : (n < 1000 ? 3 : 6);
  char buf[32];
  std::snprintf(buf, sizeof buf, "I%0*zu", width, i + 1);
  return buf;
}

}  // namespace

SyntheticNetwork generate_synthetic_network_with_truth(std::uint64_t seed,
                                                       std::size_t n_intersections,
                                                       double shift_strength,
                                                       std::size_t n_intervals) {
  if (n_intersections < 2)
    throw ValidationError("synthetic network needs at least 2 intersections");
  if (n_intervals < 1) throw ValidationError("synthetic network needs at least 1 interval");
  if (!(shift_strength >= 0.0) || !std::isfinite(shift_strength))
    throw ValidationError("shift strength must be a finite value >= 0");

  const double s = shift_strength;
  const auto& base = synthetic::base_coefficients();
  const auto& drift = synthetic::drift_matrix();

  std::vector<Instance> instances;
  instances.reserve(n_intersections * 4 * n_intervals);
  std::vector<IntersectionTruth> truth;

  for (std::size_t i = 0; i < n_intersections; ++i) {
    std::mt19937_64 rng(derive_seed(seed, i));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);

    IntersectionTruth t;
    t.intersection_id = intersection_name(i, n_intersections);
    for (auto& z : t.latent) z = normal(rng);
    const auto& z = t.latent;
    for (std::size_t m = 0; m < 3; ++m) {
      t.coefficients[m] = base[m];
      for (std::size_t k = 0; k < synthetic::kDrivers; ++k) {
        double d = 0.0;
        for (std::size_t j = 0; j < synthetic::kLatent; ++j) d += drift[k][j] * z[j];
        t.coefficients[m].slopes[k] += s * d;
      }
    }

    const double demand_scale = std::exp(0.35 * s * z[0]);
    const double sensitivity = std::exp(0.25 * s * z[1]);
    const double green_bias = 0.06 * s * z[2];
    const double employees = std::round(800.0 * std::exp(0.5 * s * (0.7 * z[0] + 0.3 * z[2])));
    const double categories = std::round(30.0 * std::exp(0.4 * s * z[1]));
    const double extra_through = std::clamp(std::round(0.8 * s * z[0]), -1.0, 2.0);

    for (Approach a : {Approach::northbound, Approach::southbound, Approach::eastbound,
                       Approach::westbound}) {
      const bool major = a == Approach::northbound || a == Approach::southbound;
      const auto left_type = major ? LeftTurnType::protected_permissive : LeftTurnType::permissive_only;
      for (std::size_t step = 0; step < n_intervals; ++step) {
        Instance inst;
        inst.intersection_id = t.intersection_id;
        inst.approach = a;
        inst.interval_index = static_cast<int>(step);
        auto& x = inst.features;

        const int hour = static_cast<int>((step / 4) % 24);
        const double demand = (major ? 160.0 : 70.0) * daily_profile(hour) * demand_scale *
                              std::exp(0.15 * normal(rng));
        const double through_vehicles = 0.7 * demand;
        const double left_vehicles = 0.15 * demand;
        const double cycles = 7.0 + (uniform(rng) < 0.5 ? 1.0 : 0.0);

        const double through_split =
            std::clamp((major ? 0.50 : 0.32) + green_bias + 0.03 * normal(rng), 0.15, 0.75);
        const double left_split =
            std::clamp((major ? 0.12 : 0.08) - 0.5 * green_bias + 0.02 * normal(rng), 0.03, 0.30);

        std::poisson_distribution<int> through_triggers(through_vehicles * sensitivity);
        std::poisson_distribution<int> left_triggers(left_vehicles * sensitivity);
        const double d_tm = through_triggers(rng);
        const double d_lm = left_triggers(rng);

        x[col::o_TM] = std::min(kIntervalSeconds, 2.0 * d_tm * std::exp(0.12 * normal(rng)));
        x[col::d_TM] = d_tm;
        x[col::g_TM] = kIntervalSeconds * through_split;
        x[col::c_TM] = cycles;
        x[col::m_TM] = d_tm > 1.0 ? kIntervalSeconds / d_tm : kIntervalSeconds;
        x[col::s_TM] = x[col::m_TM] * (0.6 + 0.4 * uniform(rng));
        x[col::o_LM] = std::min(kIntervalSeconds, 2.5 * d_lm * std::exp(0.12 * normal(rng)));
        x[col::d_LM] = d_lm;
        x[col::g_LM] = kIntervalSeconds * left_split;
        x[col::c_LM] = cycles;
        x[col::m_LM] = d_lm > 1.0 ? kIntervalSeconds / d_lm : kIntervalSeconds;
        x[col::s_LM] = x[col::m_LM] * (0.6 + 0.4 * uniform(rng));
        x[col::p_LM] = left_type == LeftTurnType::protected_only ? 0.0 : 0.8 * x[col::g_TM];
        x[col::l_SL] = 0.0;
        x[col::l_EL] = 1.0;
        x[col::l_TL] = std::max(1.0, (major ? 2.0 : 1.0) + extra_through);
        x[col::l_ER] = major ? 1.0 : 0.0;
        x[col::l_SR] = major ? 0.0 : 1.0;
        x[col::e_POIE] = employees;
        x[col::e_POIC] = categories;
        x[col::road_type] = static_cast<double>(major ? RoadType::major : RoadType::minor);
        x[col::left_turn_type] = static_cast<double>(left_type);
        x[col::direction] = static_cast<double>(a);
        x[col::h_MOH] = static_cast<double>(step % 4 + 1);
        x[col::h_HOD] = static_cast<double>(hour);

        LabelTriple labels{};
        for (std::size_t m = 0; m < 3; ++m) {
          const double rate =
              std::min(kMaxRate, std::exp(synthetic::log_rate(x, t.coefficients[m])));
          std::poisson_distribution<int> count(rate);
          labels[m] = count(rng);
        }
        inst.labels = labels;
        instances.push_back(std::move(inst));
      }
    }
    truth.push_back(std::move(t));
  }

  char provenance[160];
  std::snprintf(provenance, sizeof provenance,
                "synthetic network (seed=%llu, intersections=%zu, shift=%g, intervals=%zu)",
                static_cast<unsigned long long>(seed), n_intersections, shift_strength,
                n_intervals);
  return SyntheticNetwork{Dataset(std::move(instances), provenance), std::move(truth)};
}

Dataset generate_synthetic_network(std::uint64_t seed, std::size_t n_intersections,
                                   double shift_strength, std::size_t n_intervals) {
  return generate_synthetic_network_with_truth(seed, n_intersections, shift_strength, n_intervals)
      .data;
}

}  // namespace tmcda
