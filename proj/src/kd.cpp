// Copyright (c) 2026 PQKD Project Contributors
// SPDX-License-Identifier: Apache-2.0
#include "pqkd/kd.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace pqkd {

namespace {

std::vector<long> shuffled_indices(long n, RngStream rng) {
    std::vector<long> idx(static_cast<std::size_t>(n));
    for (long i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    for (long i = n - 1; i > 0; --i) {
        const long j = static_cast<long>(rng.next_below(static_cast<std::uint64_t>(i + 1)));
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
    return idx;
}

Tensor gather_rows(const Tensor& table, const std::vector<long>& rows) {
    const int cols = table.dim(1);
    Tensor out({static_cast<int>(rows.size()), cols});
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy_n(table.ptr() + static_cast<std::size_t>(rows[i]) * cols, cols,
                    out.ptr() + i * cols);
    return out;
}

}  // namespace

Tensor soften(const Tensor& logits, double tau) {
    if (!(tau > 0.0)) throw ConfigError("soften: temperature must be positive, got " + std::to_string(tau));
    Tensor scaled = logits;
    for (double& v : scaled.data) v /= tau;
    return softmax_rows(scaled);
}

NodeRef kd_loss(const NodeRef& student_logits, const Tensor& teacher_logits,
                const std::vector<int>& labels, const KDConfig& cfg) {
    if (!(cfg.tau > 0.0)) throw ConfigError("kd_loss: temperature must be positive");
    if (cfg.lambda < 0.0 || cfg.lambda > 1.0)
        throw ConfigError("kd_loss: lambda must lie in [0,1], got " + std::to_string(cfg.lambda));
    check_same_shape(student_logits->value, teacher_logits, "kd_loss");
    const NodeRef hard = nll_mean(log_softmax(student_logits), labels);
    const Tensor p_teacher = soften(teacher_logits, cfg.tau);
    const NodeRef soft = kl_mean_const(log_softmax(scale(student_logits, 1.0 / cfg.tau)), p_teacher);
    return add(scale(hard, cfg.lambda), scale(soft, (1.0 - cfg.lambda) * cfg.tau * cfg.tau));
}

double kd_loss_value(const Tensor& student_logits, const Tensor& teacher_logits,
                     const std::vector<int>& labels, const KDConfig& cfg) {
    return kd_loss(make_constant(student_logits), teacher_logits, labels, cfg)->value.data[0];
}

double mean_ce(const Tensor& logits, const std::vector<int>& labels) {
    const Tensor logp = log_softmax_rows(logits);
    const int batch = logp.dim(0), classes = logp.dim(1);
    if (static_cast<int>(labels.size()) != batch) throw UsageError("mean_ce: label count mismatch");
    double s = 0.0;
    for (int bi = 0; bi < batch; ++bi) {
        const int y = labels[static_cast<std::size_t>(bi)];
        if (y < 0 || y >= classes) throw DataError("mean_ce: label outside range");
        s -= logp.data[static_cast<std::size_t>(bi) * classes + y];
    }
    return s / batch;
}

std::vector<double> spsa_update(const std::vector<double>& theta,
                                const std::function<double(const std::vector<double>&)>& objective,
                                const SpsaConfig& cfg, RngStream& rng) {
    if (!(cfg.a > 0.0) || !(cfg.c > 0.0) || !(cfg.theta_max > 0.0))
        throw ConfigError("spsa_update: a, c, theta_max must be positive");
    const std::size_t dim = theta.size();
    std::vector<double> delta(dim);
    for (double& d : delta) d = rng.next_unit() < 0.5 ? -1.0 : 1.0;

    std::vector<double> plus(dim), minus(dim);
    for (std::size_t i = 0; i < dim; ++i) {
        plus[i] = std::clamp(theta[i] + cfg.c * delta[i], -cfg.theta_max, cfg.theta_max);
        minus[i] = std::clamp(theta[i] - cfg.c * delta[i], -cfg.theta_max, cfg.theta_max);
    }
    const double j_plus = objective(plus);
    const double j_minus = objective(minus);
    if (!std::isfinite(j_plus) || !std::isfinite(j_minus)) {
        std::fprintf(stderr, "spsa_update: non-finite objective (J+=%g, J-=%g), skipping step\n",
                     j_plus, j_minus);
        return theta;
    }
    const double ghat = (j_plus - j_minus) / (2.0 * cfg.c);
    std::vector<double> next(dim);
    for (std::size_t i = 0; i < dim; ++i)
        next[i] = std::clamp(theta[i] - cfg.a * ghat * delta[i], -cfg.theta_max, cfg.theta_max);
    return next;
}

void write_metrics_csv(const std::vector<MetricRecord>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw FormatError("write_metrics_csv: cannot open " + path);
    out << "epoch,split,accuracy,ce_loss,J,delta_theta_norm\n";
    char buf[192];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%d,%s,%.12g,%.12g,%.12g,%.12g\n", r.epoch,
                      r.split.c_str(), r.accuracy, r.ce_loss, r.j, r.delta_theta_norm);
        out << buf;
    }
}

std::vector<MetricRecord> read_metrics_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("read_metrics_csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != "epoch,split,accuracy,ce_loss,J,delta_theta_norm")
        throw FormatError("read_metrics_csv: unexpected header in " + path);
    std::vector<MetricRecord> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        MetricRecord r;
        std::string field;
        if (!std::getline(ls, field, ',')) throw FormatError("read_metrics_csv: bad row " + line);
        r.epoch = std::stoi(field);
        if (!std::getline(ls, r.split, ',')) throw FormatError("read_metrics_csv: bad row " + line);
        auto next_double = [&]() {
            std::string f;
            if (!std::getline(ls, f, ',')) throw FormatError("read_metrics_csv: bad row " + line);
            return std::stod(f);
        };
        r.accuracy = next_double();
        r.ce_loss = next_double();
        r.j = next_double();
        r.delta_theta_norm = next_double();
        rows.push_back(std::move(r));
    }
    return rows;
}

namespace {

Tensor eval_logits_batched(const std::function<NodeRef(const Tensor&)>& fwd, const Dataset& ds,
                           int batch_size) {
    Tensor logits({static_cast<int>(ds.size()), kNumClasses});
    for (long lo = 0; lo < ds.size(); lo += batch_size) {
        const long hi = std::min<long>(lo + batch_size, ds.size());
        auto [x, y] = ds.batch(lo, hi);
        (void)y;
        const NodeRef out = fwd(x);
        std::copy_n(out->value.ptr(), static_cast<std::size_t>(hi - lo) * kNumClasses,
                    logits.ptr() + static_cast<std::size_t>(lo) * kNumClasses);
    }
    return logits;
}

}  // namespace

TeacherCheckpoint train_teacher(const Dataset& train, const Dataset& val, const Widths& widths,
                                const KDConfig& cfg, std::uint64_t seed) {
    if (train.size() < 1 || val.size() < 1) throw ConfigError("train_teacher: empty split");
    RngStream init_rng = RngStream::named(seed, "init.teacher");
    RngStream dropout_rng = RngStream::named(seed, "dropout.teacher");
    RngStream data_rng = RngStream::named(seed, "data.teacher");

    TeacherNet net(widths, train.images.dim(1), init_rng);
    Adam opt(net.params(), cfg.adam);

    TeacherCheckpoint ckpt;
    ckpt.widths = widths;

    auto eval_split = [&](const Dataset& ds) {
        const Tensor logits = eval_logits_batched(
            [&](const Tensor& x) { return net.forward(x, false, nullptr); }, ds, cfg.batch_size);
        return std::make_pair(accuracy(logits, ds.labels), mean_ce(logits, ds.labels));
    };

    // Zero-epoch request: hand back the initialization.
    {
        const auto [vacc, vce] = eval_split(val);
        ckpt.params = net.snapshot();
        ckpt.best_val_accuracy = vacc;
        ckpt.best_epoch = 0;
        (void)vce;
    }

    for (int epoch = 1; epoch <= cfg.epochs_teacher; ++epoch) {
        const auto order = shuffled_indices(train.size(), data_rng.substream(static_cast<std::uint64_t>(epoch)));
        double run_ce = 0.0;
        long run_hits = 0;
        for (long lo = 0; lo < train.size(); lo += cfg.batch_size) {
            const long hi = std::min<long>(lo + cfg.batch_size, train.size());
            const std::vector<long> rows(order.begin() + lo, order.begin() + hi);
            Dataset b = train.subset(rows, "batch");
            const NodeRef logits = net.forward(b.images, true, &dropout_rng);
            const NodeRef loss = nll_mean(log_softmax(logits), b.labels);
            if (!std::isfinite(loss->value.data[0]))
                throw DataError("train_teacher: non-finite loss at epoch " + std::to_string(epoch) +
                                ", batch " + std::to_string(lo / cfg.batch_size));
            backward(loss);
            opt.step();
            zero_grads(net.params());
            run_ce += loss->value.data[0] * static_cast<double>(hi - lo);
            const auto pred = predict_classes(logits->value);
            for (std::size_t i = 0; i < pred.size(); ++i)
                if (pred[i] == b.labels[i]) ++run_hits;
        }
        const double train_acc = static_cast<double>(run_hits) / static_cast<double>(train.size());
        const double train_ce = run_ce / static_cast<double>(train.size());
        const auto [val_acc, val_ce] = eval_split(val);
        ckpt.metrics.push_back({epoch, "train", train_acc, train_ce, 0.0, 0.0});
        ckpt.metrics.push_back({epoch, "val", val_acc, val_ce, 0.0, 0.0});
        if (val_acc > ckpt.best_val_accuracy) {
            ckpt.best_val_accuracy = val_acc;
            ckpt.best_epoch = epoch;
            ckpt.params = net.snapshot();
        }
    }
    return ckpt;
}

double validation_proxy(const std::vector<double>& theta, StudentNet& student,
                        const FeaturePipeline& pipeline,
                        const std::vector<std::pair<Tensor, std::vector<int>>>& val_batches,
                        const std::vector<Tensor>& teacher_logits, const KDConfig& cfg,
                        std::uint64_t eval_seed) {
    if (val_batches.empty()) throw UsageError("validation_proxy: no validation batches");
    if (val_batches.size() != teacher_logits.size())
        throw UsageError("validation_proxy: teacher logits missing for some batches");
    const std::vector<double> z = pipeline.feature(theta, eval_seed);
    double total = 0.0;
    for (std::size_t i = 0; i < val_batches.size(); ++i) {
        const NodeRef logits = student.forward(val_batches[i].first, z, false, nullptr);
        total += kd_loss_value(logits->value, teacher_logits[i], val_batches[i].second, cfg);
    }
    return total / static_cast<double>(val_batches.size());
}

PqkdResult pqkd_train(const Dataset& train, const Dataset& val, const TeacherNet& teacher,
                      const PqkdOptions& opts) {
    if (train.size() < 1 || val.size() < 1) throw ConfigError("pqkd_train: empty split");
    const KDConfig& cfg = opts.kd;

    RngStream init_rng = RngStream::named(opts.seed, "init.student");
    RngStream dropout_rng = RngStream::named(opts.seed, "dropout.student");
    RngStream data_rng = RngStream::named(opts.seed, "data.student");
    RngStream valsel_rng = RngStream::named(opts.seed, "data.valproxy");
    RngStream spsa_rng = RngStream::named(opts.seed, "spsa");
    RngStream feat_seed_rng = RngStream::named(opts.seed, "sampling.epoch");
    RngStream spsa_seed_rng = RngStream::named(opts.seed, "sampling.spsa");
    RngStream j_seed_rng = RngStream::named(opts.seed, "sampling.diagnostic");
    RngStream noise_rng = RngStream::named(opts.seed, "noise");

    const bool photonic_active = opts.baseline == BaselineVariant::none ||
                                 opts.baseline == BaselineVariant::fixed_feature;

    FeaturePipeline pipeline;
    if (photonic_active)
        pipeline = FeaturePipeline::make(opts.dim_theta, opts.shots, opts.seed, opts.model,
                                         opts.gamma);
    else {
        // Baselines without a sampler still need a well-formed pipeline for
        // the proxy signature; it is never sampled.
        pipeline.input_pattern = default_input_pattern(pipeline.n_modes);
        pipeline.dim_theta = opts.dim_theta;
        pipeline.shots = opts.shots;
        pipeline.stats.mu.assign(kFeatureDim, 0.0);
        pipeline.stats.sigma.assign(kFeatureDim, 1.0);
        pipeline.stats.gamma = opts.gamma;
    }

    const MixingSource source = opts.baseline == BaselineVariant::dictionary_only
                                    ? MixingSource::trainable
                                    : MixingSource::from_feature;
    StudentNet student(opts.widths, train.images.dim(1), opts.scope, opts.ranks, kFeatureDim,
                       opts.seed, init_rng, source);
    Adam opt(student.params(), cfg.adam);

    std::vector<double> theta(static_cast<std::size_t>(opts.dim_theta), 0.0);

    // Per-run fixed Gaussian conditioning for the random-feature baseline.
    std::vector<double> z_random(kFeatureDim, 0.0);
    if (opts.baseline == BaselineVariant::random_feature)
        for (double& v : z_random) v = noise_rng.next_gaussian();

    // Teacher logits are deterministic (evaluation mode), so they are
    // computed once for both splits and gathered per batch.
    const Tensor teacher_train_logits = eval_logits_batched(
        [&](const Tensor& x) { return teacher.forward(x, false, nullptr); }, train, cfg.batch_size);
    const Tensor teacher_val_logits = eval_logits_batched(
        [&](const Tensor& x) { return teacher.forward(x, false, nullptr); }, val, cfg.batch_size);

    PqkdResult result;
    result.stats = pipeline.stats;
    result.student_trainables = student.trainable_count(
        opts.baseline == BaselineVariant::none ? opts.dim_theta : 0);

    EmaState ema;
    ema.beta = cfg.beta;

    auto make_val_batches = [&](int epoch) {
        std::vector<std::pair<Tensor, std::vector<int>>> batches;
        std::vector<Tensor> tlogits;
        const auto perm = shuffled_indices(val.size(), valsel_rng.substream(static_cast<std::uint64_t>(epoch)));
        const long want = std::min<long>(static_cast<long>(opts.spsa.val_batches) * cfg.batch_size,
                                         val.size());
        for (long lo = 0; lo < want; lo += cfg.batch_size) {
            const long hi = std::min<long>(lo + cfg.batch_size, want);
            const std::vector<long> rows(perm.begin() + lo, perm.begin() + hi);
            Dataset b = val.subset(rows, "valproxy");
            batches.emplace_back(std::move(b.images), std::move(b.labels));
            tlogits.push_back(gather_rows(teacher_val_logits, rows));
        }
        return std::make_pair(std::move(batches), std::move(tlogits));
    };

    std::vector<double> z_used(kFeatureDim, 0.0);
    double j_first = 0.0, j_last = 0.0;

    for (int epoch = 1; epoch <= cfg.epochs_student; ++epoch) {
        if (epoch > 1 && opts.sigma_theta > 0.0 && photonic_active)
            theta = drift_theta(theta, opts.sigma_theta, noise_rng, opts.spsa.theta_max);

        auto [val_batches, val_tlogits] = make_val_batches(epoch);
        auto objective = [&](const std::vector<double>& th) {
            ++result.spsa_eval_count;
            return validation_proxy(th, student, pipeline, val_batches, val_tlogits, cfg,
                                    spsa_seed_rng.next_u64());
        };

        // Photonic phase: theta moves, student frozen.
        const std::vector<double> theta_before = theta;
        if (opts.baseline == BaselineVariant::none)
            for (int u = 0; u < cfg.theta_updates_per_epoch; ++u)
                theta = spsa_update(theta, objective, opts.spsa, spsa_rng);
        const double delta_theta = [&] {
            double s = 0.0;
            for (std::size_t i = 0; i < theta.size(); ++i) {
                const double d = theta[i] - theta_before[i];
                s += d * d;
            }
            return std::sqrt(s);
        }();

        // Epoch diagnostic J at the settled theta.
        double j_epoch = 0.0;
        if (opts.baseline == BaselineVariant::dictionary_only) {
            // No photonic feature exists; record the KD loss on the proxy
            // batches directly.
            double total = 0.0;
            for (std::size_t i = 0; i < val_batches.size(); ++i) {
                const NodeRef logits =
                    student.forward(val_batches[i].first, z_used, false, nullptr);
                total += kd_loss_value(logits->value, val_tlogits[i], val_batches[i].second, cfg);
            }
            j_epoch = total / static_cast<double>(val_batches.size());
        } else if (opts.baseline == BaselineVariant::random_feature) {
            double total = 0.0;
            for (std::size_t i = 0; i < val_batches.size(); ++i) {
                const NodeRef logits =
                    student.forward(val_batches[i].first, z_random, false, nullptr);
                total += kd_loss_value(logits->value, val_tlogits[i], val_batches[i].second, cfg);
            }
            j_epoch = total / static_cast<double>(val_batches.size());
        } else {
            j_epoch = validation_proxy(theta, student, pipeline, val_batches, val_tlogits, cfg,
                                       j_seed_rng.next_u64());
        }
        if (epoch == 1) j_first = j_epoch;
        j_last = j_epoch;

        // Classical phase conditioning: one fresh feature per epoch.
        std::vector<double> z_raw(kFeatureDim, 0.0);
        if (photonic_active) {
            z_raw = pipeline.feature(theta, feat_seed_rng.next_u64());
        } else if (opts.baseline == BaselineVariant::random_feature) {
            z_raw = z_random;
        }
        if (opts.sigma_z > 0.0 && opts.baseline != BaselineVariant::dictionary_only)
            z_raw = corrupt_feature(z_raw, opts.sigma_z, noise_rng);
        if (cfg.ema_enabled && opts.baseline != BaselineVariant::dictionary_only)
            z_used = ema_update(ema, z_raw);
        else
            z_used = z_raw;
        if (opts.record_feature_trace)
            for (int d = 0; d < kFeatureDim; ++d)
                result.trace.push_back({epoch, d, z_raw[static_cast<std::size_t>(d)],
                                        z_used[static_cast<std::size_t>(d)]});

        // Classical phase: one Adam epoch on the KD loss, theta frozen.
        const auto order = shuffled_indices(train.size(), data_rng.substream(static_cast<std::uint64_t>(epoch)));
        double run_ce = 0.0;
        long run_hits = 0;
        for (long lo = 0; lo < train.size(); lo += cfg.batch_size) {
            const long hi = std::min<long>(lo + cfg.batch_size, train.size());
            const std::vector<long> rows(order.begin() + lo, order.begin() + hi);
            Dataset b = train.subset(rows, "batch");
            const Tensor t_logits = gather_rows(teacher_train_logits, rows);
            const NodeRef logits = student.forward(b.images, z_used, true, &dropout_rng);
            const NodeRef loss = kd_loss(logits, t_logits, b.labels, cfg);
            if (!std::isfinite(loss->value.data[0]))
                throw DataError("pqkd_train: non-finite loss at epoch " + std::to_string(epoch));
            backward(loss);
            opt.step();
            zero_grads(student.params());
            run_ce += mean_ce(logits->value, b.labels) * static_cast<double>(hi - lo);
            const auto pred = predict_classes(logits->value);
            for (std::size_t i = 0; i < pred.size(); ++i)
                if (pred[i] == b.labels[i]) ++run_hits;
        }
        const double train_acc = static_cast<double>(run_hits) / static_cast<double>(train.size());
        const double train_ce = run_ce / static_cast<double>(train.size());

        const Tensor val_logits = eval_logits_batched(
            [&](const Tensor& x) { return student.forward(x, z_used, false, nullptr); }, val,
            cfg.batch_size);
        const double val_acc = accuracy(val_logits, val.labels);
        const double val_ce = mean_ce(val_logits, val.labels);

        result.metrics.push_back({epoch, "train", train_acc, train_ce, j_epoch, delta_theta});
        result.metrics.push_back({epoch, "val", val_acc, val_ce, j_epoch, delta_theta});
        if (result.best_student.empty() || val_acc > result.best_val_accuracy) {
            result.best_val_accuracy = val_acc;
            result.best_epoch = epoch;
            result.best_student = student.snapshot();
        }
    }

    result.final_student = student.snapshot();
    result.theta = theta;
    result.photonic_delta = j_first - j_last;
    if (result.best_student.empty()) result.best_student = result.final_student;
    return result;
}

void save_student_checkpoint(const std::string& path, const PqkdOptions& opts,
                             const PqkdResult& result) {
    nlohmann::json j;
    j["schema"] = "pqkd-checkpoint-v1";
    j["widths"] = {opts.widths.c1, opts.widths.c2, opts.widths.c3};
    j["scope"] = scope_to_string(opts.scope);
    j["ranks"] = {opts.ranks[0], opts.ranks[1], opts.ranks[2]};
    j["dim_theta"] = opts.dim_theta;
    j["shots"] = opts.shots;
    j["seed"] = opts.seed;
    j["baseline"] = variant_to_string(opts.baseline);
    j["gamma"] = opts.gamma;
    j["theta"] = result.theta;
    j["stats"] = {{"mu", result.stats.mu},
                  {"sigma", result.stats.sigma},
                  {"eps", result.stats.eps},
                  {"gamma", result.stats.gamma}};

    // Rebuild naming via a scratch student so tensors carry stable names.
    RngStream scratch_rng(0);
    StudentNet scratch(opts.widths, 1, opts.scope, opts.ranks, kFeatureDim, opts.seed, scratch_rng,
                       opts.baseline == BaselineVariant::dictionary_only
                           ? MixingSource::trainable
                           : MixingSource::from_feature);
    const auto params = scratch.params();
    if (params.size() != result.best_student.size())
        throw UsageError("save_student_checkpoint: snapshot does not match architecture");
    nlohmann::json plist = nlohmann::json::array();
    for (std::size_t i = 0; i < params.size(); ++i) {
        nlohmann::json p;
        p["name"] = params[i]->name;
        p["shape"] = result.best_student[i].shape;
        p["data"] = result.best_student[i].data;
        plist.push_back(std::move(p));
    }
    j["params"] = std::move(plist);

    std::ofstream out(path);
    if (!out) throw FormatError("save_student_checkpoint: cannot open " + path);
    out << j.dump();
}

StudentCheckpoint load_student_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("load_student_checkpoint: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw FormatError("load_student_checkpoint: invalid JSON in " + path + ": " + e.what());
    }
    if (j.value("schema", "") != "pqkd-checkpoint-v1")
        throw FormatError("load_student_checkpoint: unsupported schema in " + path);
    StudentCheckpoint ckpt;
    ckpt.opts.widths = {j["widths"][0], j["widths"][1], j["widths"][2]};
    ckpt.opts.scope = scope_from_string(j["scope"]);
    ckpt.opts.ranks = {j["ranks"][0], j["ranks"][1], j["ranks"][2]};
    ckpt.opts.dim_theta = j["dim_theta"];
    ckpt.opts.shots = j["shots"];
    ckpt.opts.seed = j["seed"];
    ckpt.opts.baseline = variant_from_string(j["baseline"]);
    ckpt.opts.gamma = j["gamma"];
    ckpt.theta = j["theta"].get<std::vector<double>>();
    ckpt.stats.mu = j["stats"]["mu"].get<std::vector<double>>();
    ckpt.stats.sigma = j["stats"]["sigma"].get<std::vector<double>>();
    ckpt.stats.eps = j["stats"]["eps"];
    ckpt.stats.gamma = j["stats"]["gamma"];
    for (const auto& p : j["params"]) {
        Tensor t = Tensor::from(p["shape"].get<std::vector<int>>(),
                                p["data"].get<std::vector<double>>());
        ckpt.params.emplace_back(p["name"].get<std::string>(), std::move(t));
    }
    return ckpt;
}

}  // namespace pqkd
