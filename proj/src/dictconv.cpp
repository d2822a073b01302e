// Copyright (c) 2026 PQKD Project Contributors
// SPDX-License-Identifier: Apache-2.0
#include "pqkd/dictconv.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <sstream>

namespace pqkd {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace {

std::uint64_t projection_key(std::uint64_t seed) { return mix64(seed ^ fnv1a64("projection")); }

// Sequential dot product; the shared accumulation order is what makes the
// dense and streamed projection paths bit-identical.
double dot_seq(const double* a, const double* b, int n) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

}  // namespace

Tensor make_projection(std::uint64_t seed, int rows, int d) {
    if (rows < 1 || d < 1)
        throw ConfigError("make_projection: rows and d must be >= 1, got rows=" +
                          std::to_string(rows) + " d=" + std::to_string(d));
    Tensor a({rows, d});
    const std::uint64_t key = projection_key(seed);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t i = 0; i < a.data.size(); ++i)
        a.data[i] = gaussian_at(key, static_cast<std::uint64_t>(i)) * scale;
    return a;
}

ProjectionMatrix::ProjectionMatrix(std::uint64_t seed, int rows, int d, bool force_streamed)
    : seed_(seed), rows_(rows), d_(d) {
    if (rows < 1 || d < 1)
        throw ConfigError("ProjectionMatrix: rows and d must be >= 1, got rows=" +
                          std::to_string(rows) + " d=" + std::to_string(d));
    if (!force_streamed && static_cast<std::int64_t>(rows) * d <= kDenseLimit)
        dense_ = make_projection(seed, rows, d);
}

void ProjectionMatrix::row_into(int r, double* out) const {
    const std::uint64_t key = projection_key(seed_);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d_));
    const std::uint64_t base = static_cast<std::uint64_t>(r) * static_cast<std::uint64_t>(d_);
    for (int c = 0; c < d_; ++c) out[c] = gaussian_at(key, base + c) * scale;
}

void ProjectionMatrix::apply(const double* z, double* m) const {
    if (dense_) {
        const double* a = dense_->ptr();
        for (int r = 0; r < rows_; ++r) m[r] = dot_seq(a + static_cast<std::size_t>(r) * d_, z, d_);
        return;
    }
    std::vector<double> row(static_cast<std::size_t>(d_));
    for (int r = 0; r < rows_; ++r) {
        row_into(r, row.data());
        m[r] = dot_seq(row.data(), z, d_);
    }
}

void ProjectionMatrix::apply_transposed(const double* x, double* y) const {
    std::fill(y, y + d_, 0.0);
    if (dense_) {
        const double* a = dense_->ptr();
        for (int r = 0; r < rows_; ++r) {
            const double xr = x[r];
            const double* row = a + static_cast<std::size_t>(r) * d_;
            for (int c = 0; c < d_; ++c) y[c] += row[c] * xr;
        }
        return;
    }
    std::vector<double> row(static_cast<std::size_t>(d_));
    for (int r = 0; r < rows_; ++r) {
        row_into(r, row.data());
        const double xr = x[r];
        for (int c = 0; c < d_; ++c) y[c] += row[c] * xr;
    }
}

Tensor ProjectionMatrix::materialize() const {
    if (dense_) return *dense_;
    return make_projection(seed_, rows_, d_);
}

namespace {

// Power iteration on A^T A for any operator pair (apply, apply_transposed).
template <typename ApplyFn, typename ApplyTFn>
double power_iteration_norm(int rows, int cols, ApplyFn&& apply, ApplyTFn&& apply_t, double tol,
                            int max_iters) {
    std::vector<double> v(static_cast<std::size_t>(cols));
    for (int i = 0; i < cols; ++i) v[static_cast<std::size_t>(i)] = 1.0 + 1e-3 * i;
    double nrm = std::sqrt(dot_seq(v.data(), v.data(), cols));
    for (double& x : v) x /= nrm;

    std::vector<double> w(static_cast<std::size_t>(rows));
    std::vector<double> y(static_cast<std::size_t>(cols));
    double sigma = 0.0;
    for (int it = 0; it < max_iters; ++it) {
        apply(v.data(), w.data());
        apply_t(w.data(), y.data());
        const double ynorm = std::sqrt(dot_seq(y.data(), y.data(), cols));
        if (ynorm == 0.0) return 0.0;
        const double next = std::sqrt(ynorm);
        for (int i = 0; i < cols; ++i) v[static_cast<std::size_t>(i)] = y[static_cast<std::size_t>(i)] / ynorm;
        if (it > 0 && std::abs(next - sigma) <= tol * std::max(1.0, next)) return next;
        sigma = next;
    }
    return sigma;
}

}  // namespace

double ProjectionMatrix::spectral_norm(double tol, int max_iters) const {
    return power_iteration_norm(
        rows_, d_, [this](const double* z, double* m) { apply(z, m); },
        [this](const double* x, double* y) { apply_transposed(x, y); }, tol, max_iters);
}

double spectral_norm(const Tensor& a, double tol, int max_iters) {
    if (a.ndim() != 2) throw ConfigError("spectral_norm: expected a matrix, got " + shape_str(a.shape));
    const int rows = a.dim(0), cols = a.dim(1);
    return power_iteration_norm(
        rows, cols,
        [&](const double* z, double* m) {
            for (int r = 0; r < rows; ++r)
                m[r] = dot_seq(a.ptr() + static_cast<std::size_t>(r) * cols, z, cols);
        },
        [&](const double* x, double* y) {
            std::fill(y, y + cols, 0.0);
            for (int r = 0; r < rows; ++r) {
                const double* row = a.ptr() + static_cast<std::size_t>(r) * cols;
                for (int c = 0; c < cols; ++c) y[c] += row[c] * x[r];
            }
        },
        tol, max_iters);
}

double frobenius_norm(const Tensor& t) {
    double s = 0.0;
    for (double v : t.data) s += v * v;
    return std::sqrt(s);
}

Tensor generate_mixing(const ProjectionMatrix& a, const std::vector<double>& z, int c_out,
                       int c_in, int rank) {
    if (a.rows() != c_out * c_in * rank)
        throw ConfigError("generate_mixing: projection has " + std::to_string(a.rows()) +
                          " rows but Cout*Cin*R = " + std::to_string(c_out * c_in * rank));
    if (static_cast<int>(z.size()) != a.cols())
        throw ConfigError("generate_mixing: feature length " + std::to_string(z.size()) +
                          " != projection width " + std::to_string(a.cols()));
    Tensor m({c_out, c_in, rank});
    a.apply(z.data(), m.ptr());
    return m;
}

Tensor generate_mixing(const Tensor& a, const std::vector<double>& z, int c_out, int c_in,
                       int rank) {
    if (a.ndim() != 2) throw ConfigError("generate_mixing: projection must be a matrix");
    if (a.dim(0) != c_out * c_in * rank)
        throw ConfigError("generate_mixing: projection has " + std::to_string(a.dim(0)) +
                          " rows but Cout*Cin*R = " + std::to_string(c_out * c_in * rank));
    if (static_cast<int>(z.size()) != a.dim(1))
        throw ConfigError("generate_mixing: feature length " + std::to_string(z.size()) +
                          " != projection width " + std::to_string(a.dim(1)));
    Tensor m({c_out, c_in, rank});
    const int d = a.dim(1);
    for (int r = 0; r < a.dim(0); ++r)
        m.data[static_cast<std::size_t>(r)] =
            dot_seq(a.ptr() + static_cast<std::size_t>(r) * d, z.data(), d);
    return m;
}

Tensor reconstruct_kernel(const Tensor& mixing, const Tensor& basis) {
    if (mixing.ndim() != 3 || basis.ndim() != 3)
        throw ConfigError("reconstruct_kernel: expected M:[Cout,Cin,R] and B:[R,k,k], got " +
                          shape_str(mixing.shape) + " and " + shape_str(basis.shape));
    const int c_out = mixing.dim(0), c_in = mixing.dim(1), rank = mixing.dim(2);
    const int k = basis.dim(1);
    if (basis.dim(0) != rank || basis.dim(2) != k)
        throw ConfigError("reconstruct_kernel: rank mismatch, M:" + shape_str(mixing.shape) +
                          " B:" + shape_str(basis.shape));
    Tensor w({c_out, c_in, k, k});
    Eigen::Map<const RowMat> mm(mixing.ptr(), c_out * c_in, rank);
    Eigen::Map<const RowMat> bm(basis.ptr(), rank, k * k);
    Eigen::Map<RowMat> wm(w.ptr(), c_out * c_in, k * k);
    wm.noalias() = mm * bm;
    return w;
}

namespace {

// Autodiff node for W = contract_r(M, B); routes cotangents to the basis and
// to M when M is a trainable parameter.
NodeRef reconstruct_kernel_node(const NodeRef& mixing, const NodeRef& basis) {
    Tensor w = reconstruct_kernel(mixing->value, basis->value);
    auto node = std::make_shared<Node>();
    node->value = std::move(w);
    node->inputs = {mixing, basis};
    node->requires_grad = mixing->requires_grad || basis->requires_grad;
    if (node->requires_grad) {
        NodeRef mr = mixing, br = basis;
        node->backward_op = [mr, br](Node& self) {
            const int oc_ic = mr->value.dim(0) * mr->value.dim(1);
            const int rank = mr->value.dim(2);
            const int kk = br->value.dim(1) * br->value.dim(2);
            Eigen::Map<const RowMat> dwm(self.grad.ptr(), oc_ic, kk);
            if (br->requires_grad) {
                Eigen::Map<const RowMat> mm(mr->value.ptr(), oc_ic, rank);
                Eigen::Map<RowMat> dbm(br->ensure_grad().ptr(), rank, kk);
                dbm.noalias() += mm.transpose() * dwm;
            }
            if (mr->requires_grad) {
                Eigen::Map<const RowMat> bm(br->value.ptr(), rank, kk);
                Eigen::Map<RowMat> dmm(mr->ensure_grad().ptr(), oc_ic, rank);
                dmm.noalias() += dwm * bm.transpose();
            }
        };
    }
    return node;
}

}  // namespace

DictConvLayer DictConvLayer::create(int c_in, int c_out, int k, int rank, int padding,
                                    std::uint64_t projection_seed, RngStream& init_rng,
                                    MixingSource source, int feature_dim) {
    if (c_in < 1 || c_out < 1 || k < 1 || rank < 1)
        throw ConfigError("DictConvLayer: bad geometry c_in=" + std::to_string(c_in) +
                          " c_out=" + std::to_string(c_out) + " k=" + std::to_string(k) +
                          " R=" + std::to_string(rank));
    DictConvLayer layer;
    layer.c_in = c_in;
    layer.c_out = c_out;
    layer.k = k;
    layer.rank = rank;
    layer.padding = padding;
    layer.feature_dim = feature_dim;
    layer.projection_seed = projection_seed;
    layer.source = source;
    if (source == MixingSource::from_feature)
        layer.projection = ProjectionMatrix(projection_seed, c_out * c_in * rank, feature_dim);

    Tensor basis({rank, k, k});
    const double std_b = std::sqrt(2.0 / (static_cast<double>(c_in) * k * k * rank));
    for (double& v : basis.data) v = std_b * init_rng.next_gaussian();
    layer.basis = make_param(std::move(basis), "dict.basis");
    layer.bias = make_param(Tensor::zeros({c_out}), "dict.bias");
    if (source == MixingSource::trainable) {
        Tensor mixing({c_out, c_in, rank});
        for (double& v : mixing.data) v = init_rng.next_gaussian();
        layer.mixing_param = make_param(std::move(mixing), "dict.mixing");
    }
    return layer;
}

long DictConvLayer::trainable_count() const {
    long n = static_cast<long>(rank) * k * k + c_out;
    if (source == MixingSource::trainable) n += static_cast<long>(c_out) * c_in * rank;
    return n;
}

NodeRef dictconv_forward(const NodeRef& x, DictConvLayer& layer, const std::vector<double>& z) {
    NodeRef mixing;
    if (layer.source == MixingSource::trainable) {
        mixing = layer.mixing_param;
    } else {
        if (!layer.cache_valid || layer.cached_z != z) {
            layer.cached_mixing =
                generate_mixing(layer.projection, z, layer.c_out, layer.c_in, layer.rank);
            layer.cached_z = z;
            layer.cache_valid = true;
        }
        mixing = make_constant(layer.cached_mixing);
    }
    NodeRef w = reconstruct_kernel_node(mixing, layer.basis);
    return conv2d(x, w, layer.bias, layer.padding);
}

// --- accounting -------------------------------------------------------------

bool scope_covers(Scope scope, int layer_index) {
    switch (scope) {
        case Scope::Conv1: return layer_index == 0;
        case Scope::Conv12: return layer_index <= 1;
        case Scope::AllConvs: return true;
    }
    return false;
}

std::string scope_to_string(Scope scope) {
    switch (scope) {
        case Scope::Conv1: return "conv1";
        case Scope::Conv12: return "conv12";
        case Scope::AllConvs: return "all";
    }
    return "all";
}

Scope scope_from_string(const std::string& s) {
    if (s == "conv1") return Scope::Conv1;
    if (s == "conv12") return Scope::Conv12;
    if (s == "all" || s == "allconvs") return Scope::AllConvs;
    throw ConfigError("unknown scope '" + s + "' (expected conv1, conv12, or all)");
}

std::string variant_to_string(BaselineVariant v) {
    switch (v) {
        case BaselineVariant::none: return "none";
        case BaselineVariant::dictionary_only: return "dict";
        case BaselineVariant::random_feature: return "randz";
        case BaselineVariant::fixed_feature: return "fixedtheta";
    }
    return "none";
}

BaselineVariant variant_from_string(const std::string& s) {
    if (s == "none") return BaselineVariant::none;
    if (s == "dict") return BaselineVariant::dictionary_only;
    if (s == "randz") return BaselineVariant::random_feature;
    if (s == "fixedtheta") return BaselineVariant::fixed_feature;
    throw ConfigError("unknown baseline '" + s + "' (expected none, dict, randz, fixedtheta)");
}

ParamReport count_params(const Widths& widths, const CompressionConfig& config,
                         BaselineVariant variant) {
    const int k[3] = {5, 3, 3};
    const int cin[3] = {1, widths.c1, widths.c2};
    const int cout[3] = {widths.c1, widths.c2, widths.c3};

    ParamReport rep;
    rep.scope = config.scope;
    rep.ranks = config.ranks;
    rep.dim_theta = config.dim_theta;

    for (int l = 0; l < 3; ++l)
        rep.teacher_conv += static_cast<long>(cout[l]) * cin[l] * k[l] * k[l] + cout[l];
    const long head = static_cast<long>(widths.c3) * 10 + 10;
    rep.teacher_total = rep.teacher_conv + head;

    for (int l = 0; l < 3; ++l) {
        if (scope_covers(config.scope, l)) {
            const int rank = config.ranks[static_cast<std::size_t>(l)];
            if (rank < 1)
                throw ConfigError("count_params: rank missing for compressed layer " +
                                  std::to_string(l + 1));
            long layer = static_cast<long>(rank) * k[l] * k[l] + cout[l];
            if (variant == BaselineVariant::dictionary_only)
                layer += static_cast<long>(cout[l]) * cin[l] * rank;
            rep.student_conv += layer;
        } else {
            rep.student_conv += static_cast<long>(cout[l]) * cin[l] * k[l] * k[l] + cout[l];
        }
    }
    rep.student_total = rep.student_conv + head;
    // theta counts once in the overall student budget; baselines either drop
    // the photonic module or keep theta frozen, so it is excluded there.
    if (variant == BaselineVariant::none) rep.student_total += config.dim_theta;
    return rep;
}

std::pair<double, double> compression_ratios(const ParamReport& report) {
    if (report.student_total <= 0 || report.student_conv <= 0)
        throw ConfigError("compression_ratios: empty student budget");
    return {static_cast<double>(report.teacher_total) / static_cast<double>(report.student_total),
            static_cast<double>(report.teacher_conv) / static_cast<double>(report.student_conv)};
}

double cr_conv_layer(int c_out, int c_in, int k, int rank) {
    return static_cast<double>(c_out) * (static_cast<double>(c_in) * k * k + 1.0) /
           (static_cast<double>(rank) * k * k + c_out);
}

std::string report_to_json(const ParamReport& report) {
    const auto [overall, conv] = compression_ratios(report);
    const char* scope = report.scope == Scope::Conv1 ? "conv1"
                        : report.scope == Scope::Conv12 ? "conv12"
                                                        : "all";
    std::ostringstream os;
    os << "{\"scope\":\"" << scope << "\",\"ranks\":[" << report.ranks[0] << ","
       << report.ranks[1] << "," << report.ranks[2] << "],\"dim_theta\":" << report.dim_theta
       << ",\"teacher_total\":" << report.teacher_total
       << ",\"student_total\":" << report.student_total << ",\"cr_overall\":" << std::fixed;
    os.precision(6);
    os << overall << ",\"cr_conv\":" << conv << "}";
    return os.str();
}

// --- mixing-subspace projection ---------------------------------------------

ProjectionResult project_mixing(const Tensor& a, const std::vector<double>& m_star) {
    if (a.ndim() != 2) throw ConfigError("project_mixing: projection must be a matrix");
    const int rows = a.dim(0), cols = a.dim(1);
    if (static_cast<int>(m_star.size()) != rows)
        throw ConfigError("project_mixing: target length " + std::to_string(m_star.size()) +
                          " != rows " + std::to_string(rows));
    if (rows < cols)
        throw NumericalError("project_mixing: projection is rank-deficient by shape (" +
                             std::to_string(rows) + " x " + std::to_string(cols) + ")");
    Eigen::Map<const RowMat> am(a.ptr(), rows, cols);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(am);
    const Eigen::MatrixXd rmat = qr.matrixR();
    const double r0 = std::abs(rmat(0, 0));
    const double rn = std::abs(rmat(cols - 1, cols - 1));
    if (qr.rank() < cols) {
        std::ostringstream os;
        os << "project_mixing: rank-deficient projection (rank " << qr.rank() << " of " << cols
           << ", condition estimate " << (rn > 0.0 ? r0 / rn : std::numeric_limits<double>::infinity())
           << ")";
        throw NumericalError(os.str());
    }
    Eigen::Map<const Eigen::VectorXd> mv(m_star.data(), rows);
    Eigen::VectorXd zs = qr.solve(mv);
    Eigen::VectorXd resid = mv - am * zs;
    ProjectionResult result;
    result.z_star.assign(zs.data(), zs.data() + cols);
    result.residual_norm = resid.norm();
    return result;
}

}  // namespace pqkd
