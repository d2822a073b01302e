// Copyright (c) 2026 PQKD Project Contributors
// SPDX-License-Identifier: Apache-2.0
#ifndef PQKD_PHOTONIC_HPP
#define PQKD_PHOTONIC_HPP

#include <array>
#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "pqkd/common.hpp"
#include "pqkd/rng.hpp"

namespace pqkd {

// Tiled interferometer simulation. A circuit on N modes is a product of
// n_tiling identical-connectivity tiles; each tile applies beam splitters on
// adjacent mode pairs (j, j+1) for j = 1..N-1 in ascending order. The beam
// splitter convention is the real rotation
//     [[cos t, -sin t], [sin t, cos t]]
// embedded on the two coupled modes (fixed phase phi = 0), with angles
// wrapped to [-pi, pi] before circuit construction.

constexpr double kThetaMax = 3.14159265358979323846;

double wrap_angle(double theta);  // principal interval [-pi, pi]

struct InterferometerSpec {
    int n_modes = 16;
    std::vector<double> theta;      // raw parameter vector, any length >= 1
    std::vector<double> theta_fit;  // length (N-1) * n_tiling
    int n_tiling = 1;
    double bs_phase_phi = 0.0;  // recorded for reproducibility; only 0 supported

    static InterferometerSpec fit(std::vector<double> theta, int n_modes);
};

// n_tiling = ceil(dim(theta) / (N-1)); zero-pad or truncate theta to
// exactly (N-1)*n_tiling entries.
std::pair<std::vector<double>, int> fit_theta(const std::vector<double>& theta, int n_modes);

struct UnitaryMatrix {
    int n = 0;
    std::vector<std::complex<double>> a;  // row-major n x n

    std::complex<double>& at(int r, int c) { return a[static_cast<std::size_t>(r) * n + c]; }
    const std::complex<double>& at(int r, int c) const {
        return a[static_cast<std::size_t>(r) * n + c];
    }
    static UnitaryMatrix identity(int n);
};

UnitaryMatrix build_unitary(const InterferometerSpec& spec);

// max |(U^dag U - I)_{ij}|
double unitarity_defect(const UnitaryMatrix& u);

enum class SamplerModel { distinguishable, exact_boson };

struct SamplerConfig {
    std::vector<std::uint8_t> input_pattern;  // binary occupancy per mode
    SamplerModel model = SamplerModel::distinguishable;
    long shots = 1;
    std::uint64_t seed = 0;
};

// One photon in each odd-indexed mode (1-based): modes 1,3,5,... carry a
// photon, i.e. ceil(N/2) photons in N modes.
std::vector<std::uint8_t> default_input_pattern(int n_modes);

struct SampleBatch {
    long shots = 0;
    int n_modes = 0;
    std::vector<std::uint8_t> bits;  // shots x n_modes row-major, entries 0/1

    std::uint8_t bit(long s, int m) const {
        return bits[static_cast<std::size_t>(s) * n_modes + m];
    }
};

// Draws `shots` i.i.d. thresholded occupancy rows. Distinguishable model:
// each photon entering mode j independently lands in mode k with probability
// |U_{kj}|^2. Exact boson model: outcomes follow the indistinguishable-photon
// Fock distribution (matrix permanents), thresholded; guarded to <= 10
// photons. Rows are generated from per-shot substreams, so results do not
// depend on how shots are partitioned across workers.
SampleBatch sample(const UnitaryMatrix& u, const SamplerConfig& config);

// Probability table over thresholded outcomes, encoded as bitmasks with
// mode j at bit j. Enumerable regime only: n_ph <= 6 and N <= 8.
struct OutcomeTable {
    int n_modes = 0;
    std::vector<std::uint32_t> patterns;
    std::vector<double> probs;

    double prob_of(std::uint32_t pattern) const;
};

OutcomeTable exact_distribution(const UnitaryMatrix& u, const SamplerConfig& config);

// Total variation distance between the empirical distribution of a batch and
// an exact table.
double tv_distance(const SampleBatch& batch, const OutcomeTable& table);

// Permanent via Ryser's formula, O(2^n n).
std::complex<double> permanent(const std::complex<double>* m, int n);

// Exact thresholded-occupancy marginals of the two contiguous 8-mode halves
// under the distinguishable model (N must be 16). Index encoding is MSB
// first: within a half, the lowest mode carries weight 128. Used as the
// infinite-shot feature oracle.
std::array<std::vector<double>, 2> exact_half_marginals(const UnitaryMatrix& u,
                                                        const std::vector<std::uint8_t>& pattern);

// Binary dump: 8-byte magic "PQKDSMP1", little-endian u32 shots, u32 modes,
// then shots*modes bits packed row-major, MSB-first within each byte.
void write_sample_batch(const SampleBatch& batch, const std::string& path);
SampleBatch read_sample_batch(const std::string& path);

}  // namespace pqkd

#endif
