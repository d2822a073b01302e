// Copyright (c) 2026 PQKD Project Contributors
// SPDX-License-Identifier: Apache-2.0
#include "pqkd/feature.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace pqkd {

int index8(std::span<const std::uint8_t> half) {
    if (half.size() != 8)
        throw UsageError("index8: expected 8 bits, got " + std::to_string(half.size()));
    int idx = 0;
    for (int j = 0; j < 8; ++j)
        if (half[static_cast<std::size_t>(j)]) idx |= 1 << (7 - j);
    return idx;
}

std::vector<double> marginal_histograms(const SampleBatch& batch) {
    if (batch.n_modes != 16)
        throw ConfigError("marginal_histograms: feature map is fixed to N=16 modes, got N=" +
                          std::to_string(batch.n_modes));
    if (batch.shots < 1) throw ConfigError("marginal_histograms: empty batch");
    std::vector<double> z(kFeatureDim, 0.0);
    const double inv = 1.0 / static_cast<double>(batch.shots);
    for (long s = 0; s < batch.shots; ++s) {
        const std::uint8_t* row = batch.bits.data() + static_cast<std::size_t>(s) * 16;
        const int i1 = index8(std::span<const std::uint8_t>(row, 8));
        const int i2 = index8(std::span<const std::uint8_t>(row + 8, 8));
        z[static_cast<std::size_t>(i1)] += inv;
        z[static_cast<std::size_t>(256 + i2)] += inv;
    }
    return z;
}

std::pair<std::vector<double>, std::vector<double>> fit_stats(
    const std::vector<std::vector<double>>& samples) {
    if (samples.size() < 2)
        throw UsageError("fit_stats: need at least 2 samples, got " + std::to_string(samples.size()));
    const std::size_t d = samples[0].size();
    for (const auto& s : samples)
        if (s.size() != d) throw UsageError("fit_stats: inconsistent sample dimensions");
    std::vector<double> mu(d, 0.0), sigma(d, 0.0);
    const double n = static_cast<double>(samples.size());
    for (const auto& s : samples)
        for (std::size_t i = 0; i < d; ++i) mu[i] += s[i];
    for (std::size_t i = 0; i < d; ++i) mu[i] /= n;
    for (const auto& s : samples)
        for (std::size_t i = 0; i < d; ++i) {
            const double dv = s[i] - mu[i];
            sigma[i] += dv * dv;
        }
    for (std::size_t i = 0; i < d; ++i) sigma[i] = std::sqrt(sigma[i] / n);
    return {std::move(mu), std::move(sigma)};
}

std::vector<double> standardize(const std::vector<double>& z_tilde, const FeatureStandardizer& st) {
    if (st.mu.size() != z_tilde.size() || st.sigma.size() != z_tilde.size())
        throw UsageError("standardize: standardizer not fitted for dimension " +
                         std::to_string(z_tilde.size()));
    if (!(st.eps > 0.0)) throw ConfigError("standardize: eps must be positive");
    std::vector<double> z(z_tilde.size());
    for (std::size_t i = 0; i < z.size(); ++i)
        z[i] = st.gamma * (z_tilde[i] - st.mu[i]) / (st.sigma[i] + st.eps);
    return z;
}

const std::vector<double>& ema_update(EmaState& state, const std::vector<double>& z) {
    if (state.beta < 0.0 || state.beta >= 1.0)
        throw ConfigError("ema_update: beta must lie in [0,1), got " + std::to_string(state.beta));
    if (!state.initialized) {
        state.zbar = z;
        state.initialized = true;
        return state.zbar;
    }
    if (state.zbar.size() != z.size()) throw UsageError("ema_update: dimension changed mid-run");
    for (std::size_t i = 0; i < z.size(); ++i)
        state.zbar[i] = state.beta * state.zbar[i] + (1.0 - state.beta) * z[i];
    return state.zbar;
}

std::vector<double> corrupt_feature(const std::vector<double>& z, double sigma_z, RngStream& rng) {
    if (sigma_z < 0.0) throw ConfigError("corrupt_feature: sigma_z must be >= 0");
    if (sigma_z == 0.0) return z;
    std::vector<double> out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] + sigma_z * rng.next_gaussian();
    return out;
}

std::vector<double> drift_theta(const std::vector<double>& theta, double sigma_theta,
                                RngStream& rng, double theta_max) {
    if (sigma_theta < 0.0) throw ConfigError("drift_theta: sigma_theta must be >= 0");
    std::vector<double> out(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double t = sigma_theta == 0.0 ? theta[i] : theta[i] + sigma_theta * rng.next_gaussian();
        out[i] = std::clamp(t, -theta_max, theta_max);
    }
    return out;
}

std::vector<double> FeaturePipeline::raw_feature(const std::vector<double>& theta,
                                                 std::uint64_t seed) const {
    const UnitaryMatrix u = build_unitary(InterferometerSpec::fit(theta, n_modes));
    SamplerConfig cfg;
    cfg.input_pattern = input_pattern;
    cfg.model = model;
    cfg.shots = shots;
    cfg.seed = seed;
    return marginal_histograms(sample(u, cfg));
}

std::vector<double> FeaturePipeline::feature(const std::vector<double>& theta,
                                             std::uint64_t seed) const {
    return standardize(raw_feature(theta, seed), stats);
}

std::vector<double> FeaturePipeline::infinite_shot_feature(const std::vector<double>& theta) const {
    if (model != SamplerModel::distinguishable)
        throw CapabilityError("infinite_shot_feature: exact marginals available for the "
                              "distinguishable model only");
    const UnitaryMatrix u = build_unitary(InterferometerSpec::fit(theta, n_modes));
    const auto halves = exact_half_marginals(u, input_pattern);
    std::vector<double> z(kFeatureDim);
    std::copy(halves[0].begin(), halves[0].end(), z.begin());
    std::copy(halves[1].begin(), halves[1].end(), z.begin() + 256);
    return z;
}

FeaturePipeline FeaturePipeline::make(int dim_theta, long shots, std::uint64_t run_seed,
                                      SamplerModel model, double gamma, int fit_evals) {
    FeaturePipeline p;
    p.input_pattern = default_input_pattern(p.n_modes);
    p.model = model;
    p.shots = shots;
    p.dim_theta = dim_theta;
    p.stats.gamma = gamma;

    // Reference stats: label-free evaluations at thetas covering the
    // clipped operating range. (At theta = 0 the circuit is the identity
    // and the histograms are deterministic, which would collapse sigma.)
    RngStream stats_rng = RngStream::named(run_seed, "stats");
    RngStream sample_rng = RngStream::named(run_seed, "stats.sampling");
    std::vector<std::vector<double>> evals;
    evals.reserve(static_cast<std::size_t>(fit_evals));
    for (int i = 0; i < fit_evals; ++i) {
        std::vector<double> theta(static_cast<std::size_t>(dim_theta));
        for (double& t : theta) t = stats_rng.next_uniform(-kThetaMax, kThetaMax);
        evals.push_back(p.raw_feature(theta, sample_rng.next_u64()));
    }
    auto [mu, sigma] = fit_stats(evals);
    p.stats.mu = std::move(mu);
    p.stats.sigma = std::move(sigma);
    return p;
}

void write_feature_trace(const std::vector<FeatureTraceRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw FormatError("write_feature_trace: cannot open " + path);
    out << "epoch,dim,z_raw,z_used\n";
    char buf[128];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%d,%d,%.12g,%.12g\n", r.epoch, r.dim, r.z_raw, r.z_used);
        out << buf;
    }
}

std::vector<FeatureTraceRow> read_feature_trace(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("read_feature_trace: cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != "epoch,dim,z_raw,z_used")
        throw FormatError("read_feature_trace: unexpected header in " + path);
    std::vector<FeatureTraceRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        FeatureTraceRow r{};
        std::istringstream ls(line);
        char c1, c2, c3;
        if (!(ls >> r.epoch >> c1 >> r.dim >> c2 >> r.z_raw >> c3 >> r.z_used) || c1 != ',' ||
            c2 != ',' || c3 != ',')
            throw FormatError("read_feature_trace: malformed row '" + line + "'");
        rows.push_back(r);
    }
    return rows;
}

}  // namespace pqkd
