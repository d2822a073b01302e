// Copyright (c) 2026 PQKD Project Contributors
// SPDX-License-Identifier: Apache-2.0
#ifndef PQKD_KD_HPP
#define PQKD_KD_HPP

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "pqkd/adam.hpp"
#include "pqkd/data.hpp"
#include "pqkd/feature.hpp"
#include "pqkd/models.hpp"

namespace pqkd {

struct KDConfig {
    double tau = 3.0;
    double lambda = 0.5;
    int epochs_teacher = 100;
    int epochs_student = 100;
    int batch_size = 64;
    int theta_updates_per_epoch = 10;
    bool ema_enabled = true;
    double beta = 0.9;
    AdamConfig adam;
};

struct SpsaConfig {
    double a = 0.1;
    double c = 0.1;
    double theta_max = kThetaMax;
    int val_batches = 4;
};

// Temperature-softened probabilities: softmax(logits / tau) per row.
Tensor soften(const Tensor& logits, double tau);

// lambda * CE(y, softmax(s)) + (1-lambda) * tau^2 * KL(p_T^tau || p_S^tau),
// batch-averaged. Teacher logits are constants; gradients flow to the
// student logits only.
NodeRef kd_loss(const NodeRef& student_logits, const Tensor& teacher_logits,
                const std::vector<int>& labels, const KDConfig& cfg);

double kd_loss_value(const Tensor& student_logits, const Tensor& teacher_logits,
                     const std::vector<int>& labels, const KDConfig& cfg);

// Hard-label cross-entropy of a logits tensor (evaluation helper).
double mean_ce(const Tensor& logits, const std::vector<int>& labels);

// One SPSA step: Rademacher direction, symmetric clipped probes, gradient
// estimate (J+ - J-)/(2c) * Delta, clipped update. A non-finite probe value
// skips the update with a warning on stderr.
std::vector<double> spsa_update(const std::vector<double>& theta,
                                const std::function<double(const std::vector<double>&)>& objective,
                                const SpsaConfig& cfg, RngStream& rng);

struct MetricRecord {
    int epoch = 0;
    std::string split;
    double accuracy = 0.0;
    double ce_loss = 0.0;
    double j = 0.0;
    double delta_theta_norm = 0.0;
};

void write_metrics_csv(const std::vector<MetricRecord>& rows, const std::string& path);
std::vector<MetricRecord> read_metrics_csv(const std::string& path);

struct TeacherCheckpoint {
    Widths widths;
    std::vector<Tensor> params;  // epoch with best validation accuracy
    double best_val_accuracy = 0.0;
    int best_epoch = 0;
    std::vector<MetricRecord> metrics;
};

// Cross-entropy training with per-epoch validation; returns the best
// checkpoint. Diverging (non-finite) loss aborts with diagnostics.
TeacherCheckpoint train_teacher(const Dataset& train, const Dataset& val, const Widths& widths,
                                const KDConfig& cfg, std::uint64_t seed);

// Mean KD loss over fixed validation mini-batches with the feature sampled
// fresh at theta; deterministic given eval_seed.
double validation_proxy(const std::vector<double>& theta, StudentNet& student,
                        const FeaturePipeline& pipeline,
                        const std::vector<std::pair<Tensor, std::vector<int>>>& val_batches,
                        const std::vector<Tensor>& teacher_logits, const KDConfig& cfg,
                        std::uint64_t eval_seed);

struct PqkdOptions {
    Widths widths;
    Scope scope = Scope::AllConvs;
    std::array<int, 3> ranks = {8, 8, 8};
    int dim_theta = 30;
    long shots = 200;
    SamplerModel model = SamplerModel::distinguishable;
    KDConfig kd;
    SpsaConfig spsa;
    double gamma = 1.0;
    BaselineVariant baseline = BaselineVariant::none;
    double sigma_z = 0.0;      // feature corruption, applied pre-EMA
    double sigma_theta = 0.0;  // parameter drift between epochs
    std::uint64_t seed = 0;
    bool record_feature_trace = false;
};

struct PqkdResult {
    std::vector<Tensor> best_student;
    std::vector<Tensor> final_student;
    std::vector<double> theta;
    double best_val_accuracy = 0.0;
    int best_epoch = 0;
    double photonic_delta = 0.0;  // J(epoch 1) - J(final epoch)
    long spsa_eval_count = 0;
    std::vector<MetricRecord> metrics;
    std::vector<FeatureTraceRow> trace;
    FeatureStandardizer stats;
    long student_trainables = 0;
};

// Alternating loop: per epoch, theta_updates_per_epoch SPSA steps with the
// student frozen, one feature evaluation (EMA-smoothed when enabled) frozen
// for the epoch, then one Adam epoch on the KD loss with theta frozen.
// Baselines reuse identical budgets and seeds, changing only the
// conditioning source (dictionary-only trains M directly and runs no
// photonic phase; random-feature uses a per-run fixed Gaussian z; fixed-
// feature samples the photonic feature but never updates theta).
PqkdResult pqkd_train(const Dataset& train, const Dataset& val, const TeacherNet& teacher,
                      const PqkdOptions& opts);

// Versioned JSON checkpoint holding everything needed to rebuild a student:
// widths, scope, ranks, seeds, trainable tensors, theta, and the frozen
// standardizer.
void save_student_checkpoint(const std::string& path, const PqkdOptions& opts,
                             const PqkdResult& result);

struct StudentCheckpoint {
    PqkdOptions opts;
    std::vector<std::pair<std::string, Tensor>> params;
    std::vector<double> theta;
    FeatureStandardizer stats;
};

StudentCheckpoint load_student_checkpoint(const std::string& path);

}  // namespace pqkd

#endif
