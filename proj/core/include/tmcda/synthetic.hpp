#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "tmcda/dataset.hpp"

namespace tmcda {

/// Synthetic intersection network.
///
/// Every intersection i draws a latent profile z_i ~ N(0, I_3). The latent profile moves the
/// intersection's demand level, detector sensitivity, signal split, lane layout and POI
/// attributes, and it moves the label-generating coefficients; all of those movements are
/// multiplied by the shift strength, so a zero shift makes every intersection identically
/// distributed.
///
/// Counts are Poisson with log-rate
///   a_m + sum_k beta_{m,k,i} * (x_k / ref_k - 1) + eta_m * (x_dTM / ref - 1) * (x_gTM / ref - 1)
/// over six driver columns, where beta_{m,i} = beta_m + shift * drift * z_i.
namespace synthetic {

inline constexpr std::size_t kDrivers = 6;
inline constexpr std::size_t kLatent = 3;

// Driver columns, in coefficient order.
inline constexpr std::array<std::size_t, kDrivers> kDriverColumns{
    col::d_TM, col::o_TM, col::g_TM, col::d_LM, col::o_LM, col::e_POIE};
inline constexpr std::array<double, kDrivers> kDriverReference{80.0, 170.0, 420.0,
                                                               16.0, 40.0,  800.0};

struct MovementCoefficients {
  double intercept = 0.0;
  std::array<double, kDrivers> slopes{};
  double interaction = 0.0;  // on (d_TM, g_TM)
};

// Base coefficients per movement (zero-shift label function).
const std::array<MovementCoefficients, 3>& base_coefficients();
// Drift loading: beta_{m,i} = base_m.slopes + shift * drift_matrix() * z_i, shared by movements.
const std::array<std::array<double, kLatent>, kDrivers>& drift_matrix();

double log_rate(const FeatureVector& x, const MovementCoefficients& c);

}  // namespace synthetic

struct IntersectionTruth {
  std::string intersection_id;
  std::array<double, synthetic::kLatent> latent{};
  std::array<synthetic::MovementCoefficients, 3> coefficients{};
};

struct SyntheticNetwork {
  Dataset data;
  std::vector<IntersectionTruth> truth;
};

SyntheticNetwork generate_synthetic_network_with_truth(std::uint64_t seed,
                                                       std::size_t n_intersections,
                                                       double shift_strength,
                                                       std::size_t n_intervals);

// Deterministic in all arguments; throws ValidationError when n_intersections < 2.
Dataset generate_synthetic_network(std::uint64_t seed, std::size_t n_intersections,
                                   double shift_strength, std::size_t n_intervals);

}  // namespace tmcda
