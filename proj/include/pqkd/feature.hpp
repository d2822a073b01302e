// Copyright (c) 2026 PQKD Project Contributors
// SPDX-License-Identifier: Apache-2.0
#ifndef PQKD_FEATURE_HPP
#define PQKD_FEATURE_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pqkd/photonic.hpp"
#include "pqkd/rng.hpp"

namespace pqkd {

// Fixed-width feature map: 16-mode bitstrings -> two 256-bin marginal
// histograms -> standardized 512-vector. The width is part of the design;
// N != 16 is rejected.

constexpr int kFeatureDim = 512;

// MSB-first integer encoding of an 8-bit half: sum_j b_j 2^(8-j).
int index8(std::span<const std::uint8_t> half);

// Concatenated normalized marginal histograms of the two 8-bit halves.
// Each half sums to 1.
std::vector<double> marginal_histograms(const SampleBatch& batch);

struct FeatureStandardizer {
    std::vector<double> mu;     // 512
    std::vector<double> sigma;  // 512, nonnegative
    double eps = 1e-6;
    double gamma = 1.0;
};

// Elementwise mean and population standard deviation of >= 2 feature
// samples.
std::pair<std::vector<double>, std::vector<double>> fit_stats(
    const std::vector<std::vector<double>>& samples);

// z = gamma * (z_tilde - mu) / (sigma + eps), elementwise.
std::vector<double> standardize(const std::vector<double>& z_tilde, const FeatureStandardizer& st);

struct EmaState {
    double beta = 0.9;  // constant for the run
    std::vector<double> zbar;
    bool initialized = false;
};

// First call seeds zbar = z; later calls apply zbar = beta*zbar + (1-beta)*z.
// Returns the smoothed feature.
const std::vector<double>& ema_update(EmaState& state, const std::vector<double>& z);

// z + eta with eta ~ N(0, sigma_z^2 I); sigma_z = 0 is the identity.
std::vector<double> corrupt_feature(const std::vector<double>& z, double sigma_z, RngStream& rng);

// theta + xi with xi ~ N(0, sigma_theta^2 I), then clipped to
// [-theta_max, theta_max].
std::vector<double> drift_theta(const std::vector<double>& theta, double sigma_theta,
                                RngStream& rng, double theta_max = kThetaMax);

// End-to-end sampler-to-feature path used by training: builds the circuit
// for theta, draws `shots` outcomes with a seed derived from (seed_base,
// eval_index), and standardizes. Stats are fitted once (label-free) from
// reference evaluations at thetas drawn uniformly from [-theta_max,
// theta_max] and then frozen.
struct FeaturePipeline {
    int n_modes = 16;
    std::vector<std::uint8_t> input_pattern;  // defaults to alternating occupancy
    SamplerModel model = SamplerModel::distinguishable;
    long shots = 200;
    int dim_theta = 30;
    FeatureStandardizer stats;

    std::vector<double> raw_feature(const std::vector<double>& theta, std::uint64_t seed) const;
    std::vector<double> feature(const std::vector<double>& theta, std::uint64_t seed) const;

    // Exact infinite-shot raw feature (distinguishable model only).
    std::vector<double> infinite_shot_feature(const std::vector<double>& theta) const;

    static FeaturePipeline make(int dim_theta, long shots, std::uint64_t run_seed,
                                SamplerModel model = SamplerModel::distinguishable,
                                double gamma = 1.0, int fit_evals = 32);
};

// One row per (epoch, dim): raw vs smoothed feature values, for EMA
// diagnostics.
struct FeatureTraceRow {
    int epoch;
    int dim;
    double z_raw;
    double z_used;
};

void write_feature_trace(const std::vector<FeatureTraceRow>& rows, const std::string& path);
std::vector<FeatureTraceRow> read_feature_trace(const std::string& path);

}  // namespace pqkd

#endif
