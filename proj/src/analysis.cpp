// Copyright (c) 2026 PQKD Project Contributors
// SPDX-License-Identifier: Apache-2.0
#include "pqkd/analysis.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace pqkd {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string item;
    while (std::getline(is, item, sep)) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

double quantile_sorted(const std::vector<double>& v, double q) {
    if (v.empty()) return 0.0;
    const double pos = q * (static_cast<double>(v.size()) - 1.0);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return v[lo] * (1.0 - frac) + v[hi] * frac;
}

}  // namespace

bool RunConfig::has(const std::string& key) const {
    for (const auto& [k, v] : entries)
        if (k == key) return true;
    return false;
}

std::string RunConfig::get(const std::string& key, const std::string& fallback) const {
    for (const auto& [k, v] : entries)
        if (k == key) return v;
    return fallback;
}

long RunConfig::get_long(const std::string& key, long fallback) const {
    const std::string v = get(key, "");
    if (v.empty()) return fallback;
    try {
        return std::stol(v);
    } catch (...) {
        throw ConfigError("config key '" + key + "' is not an integer: " + v);
    }
}

double RunConfig::get_double(const std::string& key, double fallback) const {
    const std::string v = get(key, "");
    if (v.empty()) return fallback;
    try {
        return std::stod(v);
    } catch (...) {
        throw ConfigError("config key '" + key + "' is not a number: " + v);
    }
}

bool RunConfig::get_bool(const std::string& key, bool fallback) const {
    const std::string v = get(key, "");
    if (v.empty()) return fallback;
    if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
    if (v == "off" || v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key '" + key + "' is not a flag: " + v);
}

std::vector<long> RunConfig::get_longs(const std::string& key, std::vector<long> fallback) const {
    const std::string v = get(key, "");
    if (v.empty()) return fallback;
    std::vector<long> out;
    for (const auto& item : split_list(v, ',')) out.push_back(std::stol(item));
    return out;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    for (auto& [k, v] : entries)
        if (k == key) {
            v = value;
            return;
        }
    entries.emplace_back(key, value);
}

std::string RunConfig::canonical_text() const {
    std::ostringstream os;
    for (const auto& [k, v] : entries) os << k << " = " << v << "\n";
    return os.str();
}

RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw FormatError("config line " + std::to_string(lineno) + " has no '=': " + t);
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (key.empty()) throw FormatError("config line " + std::to_string(lineno) + " has empty key");
        cfg.set(key, value);
    }
    return cfg;
}

RunConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("config file not found: " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return parse_config_text(os.str());
}

PqkdOptions options_from_config(const RunConfig& cfg) {
    PqkdOptions opts;
    const auto widths = cfg.get_longs("widths", {16, 32, 64});
    if (widths.size() != 3) throw ConfigError("widths must list three channel counts");
    opts.widths = {static_cast<int>(widths[0]), static_cast<int>(widths[1]),
                   static_cast<int>(widths[2])};
    opts.scope = scope_from_string(cfg.get("scope", "all"));
    auto ranks = cfg.get_longs("ranks", {8});
    if (ranks.empty() || ranks.size() > 3) throw ConfigError("ranks must list 1..3 values");
    while (ranks.size() < 3) ranks.push_back(ranks.back());
    opts.ranks = {static_cast<int>(ranks[0]), static_cast<int>(ranks[1]),
                  static_cast<int>(ranks[2])};
    opts.dim_theta = static_cast<int>(cfg.get_long("dim_theta", 30));
    opts.shots = cfg.get_long("shots", 200);
    opts.model = cfg.get("sampler_model", "distinguishable") == "exact_boson"
                     ? SamplerModel::exact_boson
                     : SamplerModel::distinguishable;
    opts.kd.tau = cfg.get_double("tau", 3.0);
    opts.kd.lambda = cfg.get_double("lambda", 0.5);
    opts.kd.epochs_teacher = static_cast<int>(cfg.get_long("epochs_teacher", 20));
    opts.kd.epochs_student = static_cast<int>(cfg.get_long("epochs_student", 20));
    opts.kd.batch_size = static_cast<int>(cfg.get_long("batch_size", 64));
    opts.kd.theta_updates_per_epoch = static_cast<int>(cfg.get_long("theta_updates_per_epoch", 10));
    opts.kd.ema_enabled = cfg.get_bool("ema", true);
    opts.kd.beta = cfg.get_double("beta", 0.9);
    opts.kd.adam.lr = cfg.get_double("lr", 1e-3);
    opts.spsa.a = cfg.get_double("spsa_a", 0.1);
    opts.spsa.c = cfg.get_double("spsa_c", 0.1);
    opts.spsa.theta_max = cfg.get_double("theta_max", kThetaMax);
    opts.spsa.val_batches = static_cast<int>(cfg.get_long("val_batches", 4));
    opts.gamma = cfg.get_double("gamma", 1.0);
    opts.baseline = variant_from_string(cfg.get("baseline", "none"));
    opts.sigma_z = cfg.get_double("sigma_z", 0.0);
    opts.sigma_theta = cfg.get_double("sigma_theta", 0.0);
    opts.seed = static_cast<std::uint64_t>(cfg.get_long("seed", 1));
    opts.record_feature_trace = cfg.get_bool("feature_trace", false);
    return opts;
}

DataBundle load_data_from_config(const RunConfig& cfg) {
    const std::string dataset = cfg.get("dataset", "synthetic");
    const long n_train = cfg.get_long("n_train", 2000);
    const long n_val = cfg.get_long("n_val", 500);
    const long n_test = cfg.get_long("n_test", 500);
    const std::uint64_t seed = static_cast<std::uint64_t>(cfg.get_long("data_seed", 7));
    Dataset all;
    if (dataset == "synthetic") {
        SyntheticConfig sc;
        sc.sigma_blob = cfg.get_double("sigma_blob", 1.6);
        sc.sigma_jit = cfg.get_double("sigma_jit", 0.8);
        sc.sigma_pix = cfg.get_double("sigma_pix", 0.05);
        sc.seed = seed;
        const long total = n_train + n_val + n_test;
        sc.n_per_class = static_cast<int>((total + 9) / 10);
        all = gen_synthetic(sc);
    } else if (dataset == "mnist" || dataset == "fashion") {
        const std::string imgs = cfg.get("idx_images", "");
        const std::string labs = cfg.get("idx_labels", "");
        if (imgs.empty() || labs.empty())
            throw ConfigError("dataset=" + dataset + " needs idx_images and idx_labels paths");
        all = load_idx(imgs, labs);
    } else {
        throw ConfigError("unknown dataset '" + dataset + "'");
    }
    auto parts = split(all, seed, {n_train, n_val});
    DataBundle bundle;
    bundle.train = std::move(parts[0]);
    bundle.val = std::move(parts[1]);
    bundle.test = std::move(parts[2]);
    if (n_test < bundle.test.size()) {
        std::vector<long> keep(static_cast<std::size_t>(n_test));
        for (long i = 0; i < n_test; ++i) keep[static_cast<std::size_t>(i)] = i;
        bundle.test = bundle.test.subset(keep, "test");
    }
    return bundle;
}

std::uint64_t content_hash(const std::string& text) { return fnv1a64(text); }

void write_manifest(const std::string& dir, const RunConfig& cfg,
                    const std::vector<std::string>& outputs) {
    nlohmann::json j;
    j["schema"] = "pqkd-run-v1";
    nlohmann::json conf = nlohmann::json::object();
    for (const auto& [k, v] : cfg.entries) conf[k] = v;
    j["config"] = conf;
    char hex[32];
    std::snprintf(hex, sizeof hex, "%016llx",
                  static_cast<unsigned long long>(content_hash(cfg.canonical_text())));
    j["config_hash"] = hex;
    j["seed"] = cfg.get_long("seed", 1);
    j["data_seed"] = cfg.get_long("data_seed", 7);
    j["outputs"] = outputs;
    std::ofstream out(dir + "/manifest.json");
    if (!out) throw FormatError("write_manifest: cannot open " + dir + "/manifest.json");
    out << j.dump(2) << "\n";
}

std::vector<ShotNoisePoint> shot_noise_curve(const std::vector<long>& shot_grid, int trials,
                                             int dim_theta, std::uint64_t seed) {
    if (shot_grid.empty() || trials < 1) throw ConfigError("shot_noise_curve: empty grid");
    RngStream theta_rng = RngStream::named(seed, "curve.theta");
    std::vector<double> theta(static_cast<std::size_t>(dim_theta));
    for (double& t : theta) t = theta_rng.next_uniform(-kThetaMax, kThetaMax);

    FeaturePipeline pipe;
    pipe.input_pattern = default_input_pattern(16);
    pipe.dim_theta = dim_theta;
    const std::vector<double> z_inf = pipe.infinite_shot_feature(theta);

    RngStream seed_rng = RngStream::named(seed, "curve.sampling");
    std::vector<ShotNoisePoint> points;
    for (long s : shot_grid) {
        FeaturePipeline p = pipe;
        p.shots = s;
        double sum = 0.0, sumsq = 0.0;
        for (int t = 0; t < trials; ++t) {
            const std::vector<double> z = p.raw_feature(theta, seed_rng.next_u64());
            double err = 0.0;
            for (std::size_t i = 0; i < z.size(); ++i) {
                const double d = z[i] - z_inf[i];
                err += d * d;
            }
            err = std::sqrt(err);
            sum += err;
            sumsq += err * err;
        }
        const double mean = sum / trials;
        const double var = std::max(0.0, sumsq / trials - mean * mean);
        points.push_back({s, mean, std::sqrt(var)});
    }
    return points;
}

double loglog_slope(const std::vector<ShotNoisePoint>& points) {
    if (points.size() < 2) throw UsageError("loglog_slope: need at least 2 points");
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    const double n = static_cast<double>(points.size());
    for (const auto& p : points) {
        if (p.err_mean <= 0.0) throw NumericalError("loglog_slope: nonpositive error value");
        const double x = std::log(static_cast<double>(p.shots));
        const double y = std::log(p.err_mean);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

FitResult fit_shot_model(const std::vector<ShotDeltaRow>& rows, long s_min) {
    std::vector<ShotDeltaRow> used;
    for (const auto& r : rows)
        if (r.shots >= s_min) used.push_back(r);
    if (used.size() < 3)
        throw UsageError("fit_shot_model: need >= 3 points with S >= " + std::to_string(s_min) +
                         ", got " + std::to_string(used.size()));
    // y = delta_inf - k * x with x = 1/sqrt(S); weighted normal equations.
    double s_w = 0.0, s_wx = 0.0, s_wxx = 0.0, s_wy = 0.0, s_wxy = 0.0;
    for (const auto& r : used) {
        const double w = r.delta_sd > 0.0 ? 1.0 / (r.delta_sd * r.delta_sd) : 1.0;
        const double x = -1.0 / std::sqrt(static_cast<double>(r.shots));
        s_w += w;
        s_wx += w * x;
        s_wxx += w * x * x;
        s_wy += w * r.delta_mean;
        s_wxy += w * x * r.delta_mean;
    }
    const double det = s_w * s_wxx - s_wx * s_wx;
    if (std::abs(det) < 1e-30) throw NumericalError("fit_shot_model: singular design matrix");
    FitResult fit;
    fit.points_used = static_cast<int>(used.size());
    fit.s_min = s_min;
    fit.delta_inf = (s_wxx * s_wy - s_wx * s_wxy) / det;
    fit.k = (s_w * s_wxy - s_wx * s_wy) / det;

    double ss_res = 0.0, ss_tot = 0.0;
    const double ybar = s_wy / s_w;
    for (const auto& r : used) {
        const double w = r.delta_sd > 0.0 ? 1.0 / (r.delta_sd * r.delta_sd) : 1.0;
        const double x = -1.0 / std::sqrt(static_cast<double>(r.shots));
        const double pred = fit.delta_inf + fit.k * x;
        ss_res += w * (r.delta_mean - pred) * (r.delta_mean - pred);
        ss_tot += w * (r.delta_mean - ybar) * (r.delta_mean - ybar);
    }
    fit.r2_weighted = ss_tot > 1e-30 ? 1.0 - ss_res / ss_tot : 1.0;
    if (used.size() > 2) {
        const double s2 = ss_res / static_cast<double>(used.size() - 2);
        fit.se_delta_inf = std::sqrt(std::max(0.0, s2 * s_wxx / det));
        fit.se_k = std::sqrt(std::max(0.0, s2 * s_w / det));
    }
    return fit;
}

namespace {

struct StudyContext {
    DataBundle data;
    TeacherCheckpoint teacher_ckpt;
};

StudyContext prepare_study(const RunConfig& cfg, std::uint64_t seed) {
    StudyContext ctx;
    ctx.data = load_data_from_config(cfg);
    PqkdOptions opts = options_from_config(cfg);
    opts.seed = seed;
    ctx.teacher_ckpt = train_teacher(ctx.data.train, ctx.data.val, opts.widths, opts.kd, seed);
    return ctx;
}

double final_val_accuracy(const PqkdResult& r) {
    for (auto it = r.metrics.rbegin(); it != r.metrics.rend(); ++it)
        if (it->split == "val") return it->accuracy;
    return 0.0;
}

}  // namespace

std::vector<ShotStudyRow> shot_study(const RunConfig& cfg) {
    const std::vector<long> grid = cfg.get_longs("shots_grid", {50, 100, 200, 400, 800});
    const std::vector<long> seeds = cfg.get_longs("seeds", {1, 2});
    std::vector<ShotStudyRow> rows;

    // Feature-noise curve is shared across the study.
    const auto curve =
        shot_noise_curve(grid, static_cast<int>(cfg.get_long("curve_trials", 16)),
                         static_cast<int>(cfg.get_long("dim_theta", 30)),
                         static_cast<std::uint64_t>(cfg.get_long("seed", 1)));

    std::map<long, double> feat_err;
    for (const auto& p : curve) feat_err[p.shots] = p.err_mean;

    // acc(z=0) ablations are shot-independent; one per seed.
    std::map<long, StudyContext> contexts;
    std::map<long, double> ablation_acc;
    for (long seed : seeds) {
        contexts.emplace(seed, prepare_study(cfg, static_cast<std::uint64_t>(seed)));
        StudyContext& ctx = contexts.at(seed);
        RngStream scratch(0);
        TeacherNet teacher(ctx.teacher_ckpt.widths, 1, scratch);
        teacher.restore(ctx.teacher_ckpt.params);
        PqkdOptions opts = options_from_config(cfg);
        opts.seed = static_cast<std::uint64_t>(seed);
        opts.gamma = 0.0;
        const PqkdResult ablation = pqkd_train(ctx.data.train, ctx.data.val, teacher, opts);
        ablation_acc[seed] = final_val_accuracy(ablation);
    }

    for (const bool ema : {true, false}) {
        for (long s : grid) {
            double sum = 0.0, sumsq = 0.0;
            for (long seed : seeds) {
                StudyContext& ctx = contexts.at(seed);
                RngStream scratch(0);
                TeacherNet teacher(ctx.teacher_ckpt.widths, 1, scratch);
                teacher.restore(ctx.teacher_ckpt.params);
                PqkdOptions opts = options_from_config(cfg);
                opts.seed = static_cast<std::uint64_t>(seed);
                opts.shots = s;
                opts.kd.ema_enabled = ema;
                const PqkdResult run = pqkd_train(ctx.data.train, ctx.data.val, teacher, opts);
                const double delta = (final_val_accuracy(run) - ablation_acc[seed]) * 100.0;
                sum += delta;
                sumsq += delta * delta;
            }
            const double n = static_cast<double>(seeds.size());
            const double mean = sum / n;
            const double var = std::max(0.0, sumsq / n - mean * mean);
            rows.push_back({s, ema, mean, std::sqrt(var), feat_err[s]});
        }
    }
    return rows;
}

void write_shot_study_csv(const std::vector<ShotStudyRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw FormatError("write_shot_study_csv: cannot open " + path);
    out << "shots,ema,delta_mean,delta_sd,feat_err_mean\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%ld,%s,%.12g,%.12g,%.12g\n", r.shots,
                      r.ema ? "on" : "off", r.delta_mean, r.delta_sd, r.feat_err_mean);
        out << buf;
    }
}

BoundSuiteReport bound_suite(int lipschitz_trials, long hoeffding_trials, std::uint64_t seed) {
    BoundSuiteReport report;
    report.lipschitz.trials = lipschitz_trials;
    RngStream rng = RngStream::named(seed, "bounds");

    for (int t = 0; t < lipschitz_trials; ++t) {
        const int c_out = 1 + static_cast<int>(rng.next_below(4));
        const int c_in = 1 + static_cast<int>(rng.next_below(4));
        const int rank = 1 + static_cast<int>(rng.next_below(4));
        const int k = 1 + 2 * static_cast<int>(rng.next_below(3));
        const int d = 8 + static_cast<int>(rng.next_below(25));
        const Tensor a = make_projection(rng.next_u64(), c_out * c_in * rank, d);
        const double a_norm = spectral_norm(a, 1e-10, 20000);

        Tensor basis({rank, k, k});
        for (double& v : basis.data) v = rng.next_gaussian();
        std::vector<double> z(static_cast<std::size_t>(d)), zhat(static_cast<std::size_t>(d));
        for (std::size_t i = 0; i < z.size(); ++i) {
            z[i] = rng.next_gaussian();
            zhat[i] = z[i] + 0.3 * rng.next_gaussian();
        }
        const Tensor m = generate_mixing(a, z, c_out, c_in, rank);
        const Tensor mhat = generate_mixing(a, zhat, c_out, c_in, rank);
        double dm = 0.0, dz = 0.0;
        for (std::size_t i = 0; i < m.data.size(); ++i) {
            const double dd = mhat.data[i] - m.data[i];
            dm += dd * dd;
        }
        for (std::size_t i = 0; i < z.size(); ++i) {
            const double dd = zhat[i] - z[i];
            dz += dd * dd;
        }
        dm = std::sqrt(dm);
        dz = std::sqrt(dz);
        report.lipschitz.max_mixing_ratio =
            std::max(report.lipschitz.max_mixing_ratio, dm / (a_norm * dz + 1e-9));

        const Tensor w = reconstruct_kernel(m, basis);
        const Tensor what = reconstruct_kernel(mhat, basis);
        double dw = 0.0;
        for (std::size_t i = 0; i < w.data.size(); ++i) {
            const double dd = what.data[i] - w.data[i];
            dw += dd * dd;
        }
        dw = std::sqrt(dw);
        report.lipschitz.max_kernel_ratio = std::max(
            report.lipschitz.max_kernel_ratio, dw / (a_norm * frobenius_norm(basis) * dz + 1e-9));
    }

    // Empirical Lipschitz surrogate of the feature map via paired empirical
    // histograms at a shared circuit.
    {
        FeaturePipeline pipe = FeaturePipeline::make(30, 100, seed);
        RngStream theta_rng = RngStream::named(seed, "bounds.theta");
        RngStream seed_rng = RngStream::named(seed, "bounds.sampling");
        for (int t = 0; t < 32; ++t) {
            std::vector<double> theta(30);
            for (double& v : theta) v = theta_rng.next_uniform(-kThetaMax, kThetaMax);
            const auto q1 = pipe.raw_feature(theta, seed_rng.next_u64());
            const auto q2 = pipe.raw_feature(theta, seed_rng.next_u64());
            const auto z1 = standardize(q1, pipe.stats);
            const auto z2 = standardize(q2, pipe.stats);
            double l1 = 0.0, l2 = 0.0;
            for (std::size_t i = 0; i < q1.size(); ++i) {
                l1 += std::abs(q1[i] - q2[i]);
                const double dd = z1[i] - z2[i];
                l2 += dd * dd;
            }
            if (l1 > 1e-12)
                report.lipschitz.l_phi_surrogate =
                    std::max(report.lipschitz.l_phi_surrogate, std::sqrt(l2) / l1);
        }
    }

    // Hoeffding rows: the reference bin p = 0.5 plus bins harvested from an
    // exact 4-mode two-photon instance.
    std::vector<std::pair<long, double>> se_grid = {{1000, 0.1}, {1000, 0.05}, {100, 0.05},
                                                    {100, 0.1}, {400, 0.02}};
    std::vector<double> probe_ps = {0.5};
    {
        InterferometerSpec spec = InterferometerSpec::fit({0.6, -1.1, 0.4}, 4);
        SamplerConfig sc;
        sc.input_pattern = {1, 0, 1, 0};
        sc.model = SamplerModel::exact_boson;
        const OutcomeTable table = exact_distribution(build_unitary(spec), sc);
        for (std::size_t i = 0; i < table.probs.size() && probe_ps.size() < 3; ++i)
            if (table.probs[i] > 0.05 && table.probs[i] < 0.95) probe_ps.push_back(table.probs[i]);
    }
    RngStream hrng = RngStream::named(seed, "bounds.hoeffding");
    for (const auto& [s, eps] : se_grid) {
        for (double p : probe_ps) {
            HoeffdingRow row;
            row.shots = s;
            row.eps = eps;
            row.p = p;
            row.trials = hoeffding_trials;
            row.bound = 2.0 * std::exp(-2.0 * static_cast<double>(s) * eps * eps);
            for (long t = 0; t < hoeffding_trials; ++t) {
                long hits = 0;
                for (long i = 0; i < s; ++i)
                    if (hrng.next_unit() < p) ++hits;
                const double phat = static_cast<double>(hits) / static_cast<double>(s);
                if (std::abs(phat - p) >= eps) ++row.violations;
            }
            const double rate = static_cast<double>(row.violations) / static_cast<double>(row.trials);
            const double sigma =
                std::sqrt(std::max(rate, 1.0 / static_cast<double>(row.trials)) /
                          static_cast<double>(row.trials));
            if (rate > row.bound + 3.0 * sigma) report.hoeffding_ok = false;
            report.hoeffding.push_back(row);
        }
    }
    return report;
}

EmaReport ema_report(const std::vector<FeatureTraceRow>& trace, int burn_in_epochs) {
    if (trace.empty()) throw UsageError("ema_report: empty trace");
    std::map<int, std::vector<std::pair<double, double>>> per_dim;
    for (const auto& r : trace)
        if (r.epoch > burn_in_epochs) per_dim[r.dim].emplace_back(r.z_raw, r.z_used);

    EmaReport rep;
    for (const auto& [dim, vals] : per_dim) {
        if (vals.size() < 2) continue;
        double mr = 0.0, mu = 0.0;
        for (const auto& [raw, used] : vals) {
            mr += raw;
            mu += used;
        }
        const double n = static_cast<double>(vals.size());
        mr /= n;
        mu /= n;
        double vr = 0.0, vu = 0.0;
        for (const auto& [raw, used] : vals) {
            vr += (raw - mr) * (raw - mr);
            vu += (used - mu) * (used - mu);
        }
        vr /= n;
        vu /= n;
        if (vr <= 0.0) {
            ++rep.dims_excluded;
            continue;
        }
        rep.ratios.push_back(vu / vr);
        ++rep.dims_used;
    }
    std::sort(rep.ratios.begin(), rep.ratios.end());
    rep.median_ratio = quantile_sorted(rep.ratios, 0.5);
    rep.iqr_lo = quantile_sorted(rep.ratios, 0.25);
    rep.iqr_hi = quantile_sorted(rep.ratios, 0.75);
    return rep;
}

void write_ema_report(const EmaReport& rep, const std::string& path) {
    nlohmann::json j;
    j["dims_used"] = rep.dims_used;
    j["dims_excluded_zero_variance"] = rep.dims_excluded;
    j["median_ratio"] = rep.median_ratio;
    j["iqr"] = {rep.iqr_lo, rep.iqr_hi};
    j["cdf"] = rep.ratios;
    std::ofstream out(path);
    if (!out) throw FormatError("write_ema_report: cannot open " + path);
    out << j.dump(2) << "\n";
}

std::vector<FrontierCell> frontier_sweep(const RunConfig& cfg) {
    std::vector<Scope> scopes;
    for (const auto& s : split_list(cfg.get("sweep_scopes", "conv1,conv12,all"), ','))
        scopes.push_back(scope_from_string(s));
    const std::vector<long> ranks = cfg.get_longs("sweep_ranks", {4, 8, 12});
    const std::vector<long> dims = cfg.get_longs("sweep_dim_thetas", {15, 30, 45});
    const std::vector<long> seeds = cfg.get_longs("seeds", {1, 2, 3});
    std::vector<Widths> widths_grid;
    for (const auto& triple : split_list(cfg.get("sweep_widths", "16,32,64"), ';')) {
        const auto parts = split_list(triple, ',');
        if (parts.size() != 3) throw ConfigError("sweep_widths entries must be c1,c2,c3 triples");
        widths_grid.push_back(
            {std::stoi(parts[0]), std::stoi(parts[1]), std::stoi(parts[2])});
    }

    const DataBundle data = load_data_from_config(cfg);

    // One teacher per (widths, seed), trained up front.
    std::map<std::pair<int, long>, TeacherCheckpoint> teachers;
    for (std::size_t wi = 0; wi < widths_grid.size(); ++wi)
        for (long seed : seeds) {
            PqkdOptions opts = options_from_config(cfg);
            teachers.emplace(std::make_pair(static_cast<int>(wi), seed),
                             train_teacher(data.train, data.val, widths_grid[wi], opts.kd,
                                           static_cast<std::uint64_t>(seed)));
        }

    struct Cell {
        Scope scope;
        int rank, dim;
        int widx;
    };
    std::vector<Cell> cells;
    for (const Scope sc : scopes)
        for (long r : ranks)
            for (long d : dims)
                for (std::size_t wi = 0; wi < widths_grid.size(); ++wi)
                    cells.push_back({sc, static_cast<int>(r), static_cast<int>(d),
                                     static_cast<int>(wi)});

    std::vector<FrontierCell> results(cells.size());
    int workers = 1;
    if (const char* env = std::getenv("PQKD_WORKERS")) workers = std::max(1, std::atoi(env));
    workers = std::min<int>(workers, static_cast<int>(cells.size()));

    std::atomic<std::size_t> next{0};
    auto work = [&]() {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cells.size()) return;
            const Cell& cell = cells[i];
            const Widths w = widths_grid[static_cast<std::size_t>(cell.widx)];
            double sum = 0.0, sumsq = 0.0;
            for (long seed : seeds) {
                const TeacherCheckpoint& tc = teachers.at({cell.widx, seed});
                RngStream scratch(0);
                TeacherNet teacher(w, 1, scratch);
                teacher.restore(tc.params);
                PqkdOptions opts = options_from_config(cfg);
                opts.widths = w;
                opts.scope = cell.scope;
                opts.ranks = {cell.rank, cell.rank, cell.rank};
                opts.dim_theta = cell.dim;
                opts.seed = static_cast<std::uint64_t>(seed);
                const PqkdResult run = pqkd_train(data.train, data.val, teacher, opts);
                const double drop = (tc.best_val_accuracy - final_val_accuracy(run)) * 100.0;
                sum += drop;
                sumsq += drop * drop;
            }
            const double n = static_cast<double>(seeds.size());
            const double mean = sum / n;
            const double var = std::max(0.0, sumsq / n - mean * mean);
            CompressionConfig cc;
            cc.scope = cell.scope;
            cc.ranks = {cell.rank, cell.rank, cell.rank};
            cc.dim_theta = cell.dim;
            const auto [overall, conv] = compression_ratios(count_params(w, cc));
            (void)conv;
            results[i] = {cell.scope, cell.rank, cell.dim, w,   mean,
                          std::sqrt(var), overall, static_cast<int>(seeds.size())};
        }
    };
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < workers; ++t) pool.emplace_back(work);
        for (auto& th : pool) th.join();
    }
    return results;
}

void write_frontier_csv(const std::vector<FrontierCell>& cells, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw FormatError("write_frontier_csv: cannot open " + path);
    out << "scope,rank,dim_theta,c1,c2,c3,acc_drop_mean,acc_drop_sd,cx,seeds\n";
    char buf[224];
    for (const auto& c : cells) {
        std::snprintf(buf, sizeof buf, "%s,%d,%d,%d,%d,%d,%.12g,%.12g,%.12g,%d\n",
                      scope_to_string(c.scope).c_str(), c.rank, c.dim_theta, c.widths.c1,
                      c.widths.c2, c.widths.c3, c.acc_drop_mean, c.acc_drop_sd, c.cx, c.seeds);
        out << buf;
    }
}

// --- drivers -----------------------------------------------------------------

namespace {

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw FormatError("cannot create output directory " + dir + ": " + ec.message());
}

}  // namespace

void save_teacher_checkpoint(const std::string& path, const TeacherCheckpoint& ckpt) {
    nlohmann::json j;
    j["schema"] = "pqkd-teacher-v1";
    j["widths"] = {ckpt.widths.c1, ckpt.widths.c2, ckpt.widths.c3};
    j["best_val_accuracy"] = ckpt.best_val_accuracy;
    j["best_epoch"] = ckpt.best_epoch;
    nlohmann::json plist = nlohmann::json::array();
    for (const auto& t : ckpt.params) {
        nlohmann::json p;
        p["shape"] = t.shape;
        p["data"] = t.data;
        plist.push_back(std::move(p));
    }
    j["params"] = std::move(plist);
    std::ofstream out(path);
    if (!out) throw FormatError("save_teacher_checkpoint: cannot open " + path);
    out << j.dump();
}

TeacherCheckpoint load_teacher_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("load_teacher_checkpoint: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw FormatError("load_teacher_checkpoint: invalid JSON: " + std::string(e.what()));
    }
    if (j.value("schema", "") != "pqkd-teacher-v1")
        throw FormatError("load_teacher_checkpoint: unsupported schema in " + path);
    TeacherCheckpoint ckpt;
    ckpt.widths = {j["widths"][0], j["widths"][1], j["widths"][2]};
    ckpt.best_val_accuracy = j["best_val_accuracy"];
    ckpt.best_epoch = j["best_epoch"];
    for (const auto& p : j["params"])
        ckpt.params.push_back(
            Tensor::from(p["shape"].get<std::vector<int>>(), p["data"].get<std::vector<double>>()));
    return ckpt;
}

int run_train_teacher(const RunConfig& cfg, const std::string& out_dir) {
    ensure_dir(out_dir);
    const DataBundle data = load_data_from_config(cfg);
    const PqkdOptions opts = options_from_config(cfg);
    const TeacherCheckpoint ckpt =
        train_teacher(data.train, data.val, opts.widths, opts.kd, opts.seed);
    write_metrics_csv(ckpt.metrics, out_dir + "/metrics.csv");
    save_teacher_checkpoint(out_dir + "/teacher_checkpoint.json", ckpt);
    write_manifest(out_dir, cfg, {"metrics.csv", "teacher_checkpoint.json"});
    std::printf("teacher: best val accuracy %.4f at epoch %d\n", ckpt.best_val_accuracy,
                ckpt.best_epoch);
    return 0;
}

int run_train_pqkd(const RunConfig& cfg, const std::string& out_dir) {
    ensure_dir(out_dir);
    const DataBundle data = load_data_from_config(cfg);
    PqkdOptions opts = options_from_config(cfg);

    TeacherCheckpoint tc;
    const std::string teacher_path = cfg.get("teacher_checkpoint", "");
    if (!teacher_path.empty()) {
        tc = load_teacher_checkpoint(teacher_path);
        if (tc.widths.c1 != opts.widths.c1 || tc.widths.c2 != opts.widths.c2 ||
            tc.widths.c3 != opts.widths.c3)
            throw ConfigError("teacher checkpoint widths do not match config");
    } else {
        tc = train_teacher(data.train, data.val, opts.widths, opts.kd, opts.seed);
    }
    RngStream scratch(0);
    TeacherNet teacher(tc.widths, 1, scratch);
    teacher.restore(tc.params);

    const PqkdResult result = pqkd_train(data.train, data.val, teacher, opts);
    write_metrics_csv(result.metrics, out_dir + "/metrics.csv");
    save_student_checkpoint(out_dir + "/student_checkpoint.json", opts, result);

    CompressionConfig cc{opts.scope, opts.ranks, opts.dim_theta};
    const ParamReport report = count_params(opts.widths, cc, opts.baseline);
    {
        std::ofstream out(out_dir + "/param_report.json");
        out << report_to_json(report) << "\n";
    }
    std::vector<std::string> outputs = {"metrics.csv", "student_checkpoint.json",
                                        "param_report.json"};
    if (opts.record_feature_trace) {
        write_feature_trace(result.trace, out_dir + "/feature_trace.csv");
        outputs.push_back("feature_trace.csv");
    }
    write_manifest(out_dir, cfg, outputs);
    std::printf("pqkd: best val accuracy %.4f at epoch %d (teacher %.4f), photonic delta %.4f\n",
                result.best_val_accuracy, result.best_epoch, tc.best_val_accuracy,
                result.photonic_delta);
    return 0;
}

int run_shot_study(const RunConfig& cfg, const std::string& out_dir) {
    ensure_dir(out_dir);
    const auto rows = shot_study(cfg);
    write_shot_study_csv(rows, out_dir + "/shot_study.csv");

    const auto curve = shot_noise_curve(
        cfg.get_longs("shots_grid", {50, 100, 200, 400, 800, 1600, 3200, 6400}),
        static_cast<int>(cfg.get_long("curve_trials", 24)),
        static_cast<int>(cfg.get_long("dim_theta", 30)),
        static_cast<std::uint64_t>(cfg.get_long("seed", 1)));
    {
        std::ofstream out(out_dir + "/shot_noise.csv");
        out << "shots,err_mean,err_sd\n";
        char buf[96];
        for (const auto& p : curve) {
            std::snprintf(buf, sizeof buf, "%ld,%.12g,%.12g\n", p.shots, p.err_mean, p.err_sd);
            out << buf;
        }
    }

    nlohmann::json fits = nlohmann::json::object();
    fits["loglog_slope"] = loglog_slope(curve);
    for (const bool ema : {true, false}) {
        std::vector<ShotDeltaRow> dr;
        for (const auto& r : rows)
            if (r.ema == ema) dr.push_back({r.shots, r.delta_mean, r.delta_sd});
        if (dr.size() >= 3) {
            const FitResult fit = fit_shot_model(dr, cfg.get_long("fit_s_min", 75));
            nlohmann::json f;
            f["delta_inf"] = fit.delta_inf;
            f["k"] = fit.k;
            f["r2_weighted"] = fit.r2_weighted;
            f["se_delta_inf"] = fit.se_delta_inf;
            f["se_k"] = fit.se_k;
            f["points_used"] = fit.points_used;
            f["s_min"] = fit.s_min;
            fits[ema ? "ema_on" : "ema_off"] = f;
        }
    }
    {
        std::ofstream out(out_dir + "/shot_fits.json");
        out << fits.dump(2) << "\n";
    }
    write_manifest(out_dir, cfg, {"shot_study.csv", "shot_noise.csv", "shot_fits.json"});
    return 0;
}

int run_noise_study(const RunConfig& cfg, const std::string& out_dir) {
    ensure_dir(out_dir);
    const DataBundle data = load_data_from_config(cfg);
    std::vector<double> sigma_zs, sigma_thetas;
    for (const auto& s : split_list(cfg.get("sigma_z_grid", "0,0.25,0.5"), ','))
        sigma_zs.push_back(std::stod(s));
    for (const auto& s : split_list(cfg.get("sigma_theta_grid", "0,0.05,0.1"), ','))
        sigma_thetas.push_back(std::stod(s));
    const std::vector<long> seeds = cfg.get_longs("seeds", {1, 2});

    std::ofstream out(out_dir + "/noise_study.csv");
    out << "kind,sigma,ema,val_acc_mean,val_acc_sd\n";
    char buf[160];
    for (const std::string kind : {"feature", "theta"}) {
        const auto& grid = kind == "feature" ? sigma_zs : sigma_thetas;
        for (double sigma : grid) {
            for (const bool ema : {true, false}) {
                double sum = 0.0, sumsq = 0.0;
                for (long seed : seeds) {
                    PqkdOptions opts = options_from_config(cfg);
                    opts.seed = static_cast<std::uint64_t>(seed);
                    opts.kd.ema_enabled = ema;
                    if (kind == "feature")
                        opts.sigma_z = sigma;
                    else
                        opts.sigma_theta = sigma;
                    const TeacherCheckpoint tc = train_teacher(data.train, data.val, opts.widths,
                                                               opts.kd, opts.seed);
                    RngStream scratch(0);
                    TeacherNet teacher(tc.widths, 1, scratch);
                    teacher.restore(tc.params);
                    const PqkdResult run = pqkd_train(data.train, data.val, teacher, opts);
                    const double acc = final_val_accuracy(run);
                    sum += acc;
                    sumsq += acc * acc;
                }
                const double n = static_cast<double>(seeds.size());
                const double mean = sum / n;
                const double var = std::max(0.0, sumsq / n - mean * mean);
                std::snprintf(buf, sizeof buf, "%s,%.12g,%s,%.12g,%.12g\n", kind.c_str(), sigma,
                              ema ? "on" : "off", mean, std::sqrt(var));
                out << buf;
            }
        }
    }
    out.close();
    write_manifest(out_dir, cfg, {"noise_study.csv"});
    return 0;
}

int run_sweep(const RunConfig& cfg, const std::string& out_dir) {
    ensure_dir(out_dir);
    const auto cells = frontier_sweep(cfg);
    write_frontier_csv(cells, out_dir + "/frontier.csv");
    write_manifest(out_dir, cfg, {"frontier.csv"});
    return 0;
}

int run_report(const std::string& trace_path, const std::string& out_dir, int burn_in) {
    ensure_dir(out_dir);
    const auto trace = read_feature_trace(trace_path);
    const EmaReport rep = ema_report(trace, burn_in);
    write_ema_report(rep, out_dir + "/ema_report.json");
    std::printf("ema report: %d dims, median ratio %.4f (IQR %.4f-%.4f), %d zero-variance rows "
                "excluded\n",
                rep.dims_used, rep.median_ratio, rep.iqr_lo, rep.iqr_hi, rep.dims_excluded);
    return 0;
}

int run_selftest() {
    int failures = 0;
    auto check = [&](bool ok, const char* what) {
        std::printf("[%s] %s\n", ok ? "ok" : "FAIL", what);
        if (!ok) ++failures;
    };

    {
        RngStream rng(42);
        std::vector<double> theta(45);
        for (double& t : theta) t = rng.next_uniform(-kThetaMax, kThetaMax);
        const UnitaryMatrix u = build_unitary(InterferometerSpec::fit(theta, 16));
        check(unitarity_defect(u) <= 1e-10, "interferometer unitarity");
    }
    {
        InterferometerSpec spec = InterferometerSpec::fit({kThetaMax / 4.0}, 2);
        SamplerConfig sc;
        sc.input_pattern = {1, 1};
        sc.model = SamplerModel::exact_boson;
        const OutcomeTable t = exact_distribution(build_unitary(spec), sc);
        check(t.prob_of(0b11u) <= 1e-12, "two-photon interference null");
    }
    {
        std::vector<double> theta(30, 0.7);
        FeaturePipeline pipe;
        pipe.input_pattern = default_input_pattern(16);
        pipe.shots = 500;
        const auto z = pipe.raw_feature(theta, 11);
        double h1 = 0.0, h2 = 0.0;
        for (int i = 0; i < 256; ++i) {
            h1 += z[static_cast<std::size_t>(i)];
            h2 += z[static_cast<std::size_t>(256 + i)];
        }
        check(std::abs(h1 - 1.0) <= 1e-12 && std::abs(h2 - 1.0) <= 1e-12,
              "marginal histograms normalized");
    }
    {
        KDConfig cfg;
        cfg.lambda = 0.0;
        RngStream rng(3);
        Tensor logits({4, 10});
        for (double& v : logits.data) v = rng.next_gaussian();
        const std::vector<int> labels = {1, 2, 3, 4};
        const double loss = kd_loss_value(logits, logits, labels, cfg);
        check(std::abs(loss) <= 1e-12, "KD loss vanishes on matched logits at lambda=0");
    }
    {
        const auto [fit, tiles] = fit_theta(std::vector<double>(45, 0.1), 16);
        check(tiles == 3 && fit.size() == 45, "theta tiling arithmetic");
    }
    {
        CompressionConfig cc{Scope::Conv1, {4, 4, 4}, 30};
        const auto rep = count_params({32, 64, 128}, cc);
        check(rep.teacher_total == 94474 && rep.student_total == 93804,
              "parameter accounting reference values");
    }
    if (failures == 0)
        std::printf("selftest: all checks passed\n");
    else
        std::printf("selftest: %d check(s) failed\n", failures);
    return failures == 0 ? 0 : 1;
}

}  // namespace pqkd
