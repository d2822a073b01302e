// Copyright (c) 2026 PQKD Project Contributors
// SPDX-License-Identifier: Apache-2.0
#ifndef PQKD_DICTCONV_HPP
#define PQKD_DICTCONV_HPP

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pqkd/graph.hpp"
#include "pqkd/ops.hpp"
#include "pqkd/rng.hpp"

namespace pqkd {

// Kernel tensors of compressed layers are reconstructed from R trainable
// spatial basis filters B[r,a,b] and mixing coefficients M[o,i,r] generated
// from the conditioning feature through a fixed Gaussian projection:
// vec(M) = A z with A entries i.i.d. N(0, 1/d). vec() flattens with the
// output channel slowest and the rank index fastest, matching row-major
// [Cout,Cin,R] order.

Tensor make_projection(std::uint64_t seed, int rows, int d);

// Fixed projection held either materialized or regenerated from its seed on
// the fly; both paths produce bit-identical results. Rows above the dense
// threshold are streamed to bound memory.
class ProjectionMatrix {
  public:
    ProjectionMatrix() = default;
    ProjectionMatrix(std::uint64_t seed, int rows, int d, bool force_streamed = false);

    int rows() const { return rows_; }
    int cols() const { return d_; }
    bool streamed() const { return !dense_.has_value(); }
    std::uint64_t seed() const { return seed_; }

    // m = A z  (m has `rows` entries)
    void apply(const double* z, double* m) const;
    // y = A^T x (y has `d` entries)
    void apply_transposed(const double* x, double* y) const;

    // Largest singular value by power iteration on A^T A.
    double spectral_norm(double tol = 1e-6, int max_iters = 10000) const;

    Tensor materialize() const;

    static constexpr std::int64_t kDenseLimit = 16'000'000;  // doubles (~128 MB)

  private:
    void row_into(int r, double* out) const;

    std::uint64_t seed_ = 0;
    int rows_ = 0;
    int d_ = 0;
    std::optional<Tensor> dense_;
};

// M[o,i,r] = (A z) reshaped; rows(A) must equal Cout*Cin*R and len(z) = d.
Tensor generate_mixing(const ProjectionMatrix& a, const std::vector<double>& z, int c_out,
                       int c_in, int rank);
Tensor generate_mixing(const Tensor& a, const std::vector<double>& z, int c_out, int c_in,
                       int rank);

// W[o,i,a,b] = sum_r M[o,i,r] * B[r,a,b]
Tensor reconstruct_kernel(const Tensor& mixing, const Tensor& basis);

enum class MixingSource {
    from_feature,  // M = reshape(A z), constant for the student update
    trainable,     // dictionary-only baseline: M is a trainable parameter
};

struct DictConvLayer {
    int c_in = 0, c_out = 0, k = 0, rank = 0, padding = 0;
    int feature_dim = 512;
    std::uint64_t projection_seed = 0;
    ProjectionMatrix projection;
    NodeRef basis;  // [R,k,k], trainable
    NodeRef bias;   // [Cout], trainable
    NodeRef mixing_param;  // used only in trainable-mixing mode
    MixingSource source = MixingSource::from_feature;

    // The conditioning vector is frozen for a whole epoch, so the generated
    // mixing is memoized on the exact z.
    std::vector<double> cached_z;
    Tensor cached_mixing;
    bool cache_valid = false;

    // Basis entries ~ N(0, 2/(Cin*k^2*R)) so reconstructed kernels start at
    // the usual 2/(Cin*k^2) variance under unit-variance mixing.
    static DictConvLayer create(int c_in, int c_out, int k, int rank, int padding,
                                std::uint64_t projection_seed, RngStream& init_rng,
                                MixingSource source = MixingSource::from_feature,
                                int feature_dim = 512);

    long trainable_count() const;  // R*k^2 + Cout (+ Cout*Cin*R when M is trainable)
};

// Forward pass; gradients reach the basis and bias (and M when trainable)
// but never the projection or the feature.
NodeRef dictconv_forward(const NodeRef& x, DictConvLayer& layer, const std::vector<double>& z);

// --- parameter accounting -------------------------------------------------

struct Widths {
    int c1 = 32, c2 = 64, c3 = 128;
};

enum class Scope { Conv1, Conv12, AllConvs };

enum class BaselineVariant { none, dictionary_only, random_feature, fixed_feature };

struct CompressionConfig {
    Scope scope = Scope::Conv12;
    std::array<int, 3> ranks = {4, 4, 4};  // used for layers in scope only
    int dim_theta = 30;
};

struct ParamReport {
    Scope scope;
    std::array<int, 3> ranks;
    int dim_theta = 0;
    long teacher_total = 0;
    long student_total = 0;
    long teacher_conv = 0;
    long student_conv = 0;
};

bool scope_covers(Scope scope, int layer_index);  // layer_index in {0,1,2}

std::string scope_to_string(Scope scope);
Scope scope_from_string(const std::string& s);
std::string variant_to_string(BaselineVariant v);
BaselineVariant variant_from_string(const std::string& s);

// Teacher counts follow the dense closed form; student counts follow the
// compressed-layer law R*k^2 + Cout with dim(theta) added once. Fixed
// projections are never counted. The dictionary-only baseline counts M and
// drops theta.
ParamReport count_params(const Widths& widths, const CompressionConfig& config,
                         BaselineVariant variant = BaselineVariant::none);

// (CR_overall, CR_conv): teacher/student totals (theta included once in the
// overall denominator) and the conv-stack-only ratio.
std::pair<double, double> compression_ratios(const ParamReport& report);

// Per-layer ratio Cout*(Cin*k^2+1)/(R*k^2+Cout).
double cr_conv_layer(int c_out, int c_in, int k, int rank);

std::string report_to_json(const ParamReport& report);

// --- mixing-subspace analysis ----------------------------------------------

struct ProjectionResult {
    std::vector<double> z_star;
    double residual_norm = 0.0;
};

// Least-squares z* = argmin ||m - A z||_2 for dense A with full column rank;
// rank deficiency raises NumericalError with a condition estimate.
ProjectionResult project_mixing(const Tensor& a, const std::vector<double>& m_star);

double spectral_norm(const Tensor& a, double tol = 1e-6, int max_iters = 10000);

double frobenius_norm(const Tensor& t);

}  // namespace pqkd

#endif
