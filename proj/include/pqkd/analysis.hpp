// Copyright (c) 2026 PQKD Project Contributors
// SPDX-License-Identifier: Apache-2.0
#ifndef PQKD_ANALYSIS_HPP
#define PQKD_ANALYSIS_HPP

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pqkd/kd.hpp"

namespace pqkd {

// Flat key = value run configuration. Every key is echoed into the output
// manifest; typed accessors fall back to defaults.
struct RunConfig {
    std::vector<std::pair<std::string, std::string>> entries;  // file order

    bool has(const std::string& key) const;
    std::string get(const std::string& key, const std::string& fallback) const;
    long get_long(const std::string& key, long fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<long> get_longs(const std::string& key, std::vector<long> fallback) const;
    void set(const std::string& key, const std::string& value);

    std::string canonical_text() const;
};

RunConfig parse_config_text(const std::string& text);
RunConfig parse_config_file(const std::string& path);  // missing file -> FormatError

PqkdOptions options_from_config(const RunConfig& cfg);

struct DataBundle {
    Dataset train, val, test;
};

DataBundle load_data_from_config(const RunConfig& cfg);

// manifest.json: schema version, full config echo, content hash of the
// canonical config text, seeds, and the files the run produced.
void write_manifest(const std::string& dir, const RunConfig& cfg,
                    const std::vector<std::string>& outputs);

// --- shot-noise scaling ------------------------------------------------------

struct ShotNoisePoint {
    long shots = 0;
    double err_mean = 0.0;  // mean over trials of ||z_hat_raw - z_inf||_2
    double err_sd = 0.0;
};

// Feature concentration curve at a fixed random theta (distinguishable
// model, exact infinite-shot marginals as reference).
std::vector<ShotNoisePoint> shot_noise_curve(const std::vector<long>& shot_grid, int trials,
                                             int dim_theta, std::uint64_t seed);

// OLS slope of log(err) against log(S).
double loglog_slope(const std::vector<ShotNoisePoint>& points);

// --- delta(S) model fit ------------------------------------------------------

struct ShotDeltaRow {
    long shots = 0;
    double delta_mean = 0.0;
    double delta_sd = 0.0;
};

struct FitResult {
    double delta_inf = 0.0;
    double k = 0.0;
    double r2_weighted = 0.0;
    double se_delta_inf = 0.0;
    double se_k = 0.0;
    int points_used = 0;
    long s_min = 0;
};

// Weighted linear least squares for delta(S) = delta_inf - k/sqrt(S) using
// inverse-variance weights (unit weight where sd <= 0); restricted to rows
// with S >= s_min. Needs >= 3 usable points.
FitResult fit_shot_model(const std::vector<ShotDeltaRow>& rows, long s_min);

// --- full shot study (matched photonic vs gamma=0 trainings) ----------------

struct ShotStudyRow {
    long shots = 0;
    bool ema = false;
    double delta_mean = 0.0;  // acc(z) - acc(z=0), percentage points
    double delta_sd = 0.0;
    double feat_err_mean = 0.0;
};

std::vector<ShotStudyRow> shot_study(const RunConfig& cfg);
void write_shot_study_csv(const std::vector<ShotStudyRow>& rows, const std::string& path);

// --- bound suites ------------------------------------------------------------

struct LipschitzReport {
    int trials = 0;
    double max_kernel_ratio = 0.0;  // lhs / rhs of the kernel bound
    double max_mixing_ratio = 0.0;  // lhs / rhs of the mixing bound
    double l_phi_surrogate = 0.0;   // max ||dz||_2 / ||dp||_1 observed
};

struct HoeffdingRow {
    long shots = 0;
    double eps = 0.0;
    double p = 0.0;
    long trials = 0;
    long violations = 0;
    double bound = 0.0;  // 2 exp(-2 S eps^2)
};

struct BoundSuiteReport {
    LipschitzReport lipschitz;
    std::vector<HoeffdingRow> hoeffding;
    bool hoeffding_ok = true;  // every row within bound + 3 sigma MC slack
};

BoundSuiteReport bound_suite(int lipschitz_trials, long hoeffding_trials, std::uint64_t seed);

// --- EMA variance-ratio report -----------------------------------------------

struct EmaReport {
    int dims_used = 0;
    int dims_excluded = 0;  // zero raw variance
    double median_ratio = 0.0;
    double iqr_lo = 0.0;
    double iqr_hi = 0.0;
    std::vector<double> ratios;  // sorted, CDF-ready
};

EmaReport ema_report(const std::vector<FeatureTraceRow>& trace, int burn_in_epochs = 0);
void write_ema_report(const EmaReport& rep, const std::string& path);

// --- compression frontier ------------------------------------------------------

struct FrontierCell {
    Scope scope;
    int rank = 0;
    int dim_theta = 0;
    Widths widths;
    double acc_drop_mean = 0.0;  // teacher - student validation accuracy, points
    double acc_drop_sd = 0.0;
    double cx = 0.0;
    int seeds = 0;
};

std::vector<FrontierCell> frontier_sweep(const RunConfig& cfg);
void write_frontier_csv(const std::vector<FrontierCell>& cells, const std::string& path);

// --- run drivers (used by the CLI) -------------------------------------------

int run_train_teacher(const RunConfig& cfg, const std::string& out_dir);
int run_train_pqkd(const RunConfig& cfg, const std::string& out_dir);
int run_shot_study(const RunConfig& cfg, const std::string& out_dir);
int run_noise_study(const RunConfig& cfg, const std::string& out_dir);
int run_sweep(const RunConfig& cfg, const std::string& out_dir);
int run_report(const std::string& trace_path, const std::string& out_dir, int burn_in);
int run_selftest();

void save_teacher_checkpoint(const std::string& path, const TeacherCheckpoint& ckpt);
TeacherCheckpoint load_teacher_checkpoint(const std::string& path);

std::uint64_t content_hash(const std::string& text);

}  // namespace pqkd

#endif
