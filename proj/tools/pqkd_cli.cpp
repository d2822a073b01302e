// Copyright (c) 2026 PQKD Project Contributors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment driver. Subcommands: train-teacher, train-pqkd, sweep,
// noise-study, shot-study, report, selftest. Runs are configured by a flat
// key = value file; common keys can be overridden by flags.

#include <cstdio>
#include <string>

#include "CLI11.hpp"
#include "pqkd/analysis.hpp"

namespace {

struct CommonFlags {
    std::string config_path;
    std::string out_dir = "runs/out";
    long seed = -1;
    long shots = -1;
    long dim_theta = -1;
    std::string scope, ranks, ema, baseline;
    double gamma = std::numeric_limits<double>::quiet_NaN();
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool config_required) {
    auto* opt = cmd->add_option("--config", flags.config_path, "run configuration file");
    if (config_required) opt->required();
    cmd->add_option("--out", flags.out_dir, "output directory");
    cmd->add_option("--seed", flags.seed, "run seed override");
    cmd->add_option("--shots", flags.shots, "shot budget override");
    cmd->add_option("--dim-theta", flags.dim_theta, "photonic parameter count override");
    cmd->add_option("--scope", flags.scope, "compression scope: conv1|conv12|all");
    cmd->add_option("--ranks", flags.ranks, "basis ranks R1[,R2[,R3]]");
    cmd->add_option("--ema", flags.ema, "feature smoothing: on|off");
    cmd->add_option("--gamma", flags.gamma, "feature scale override");
    cmd->add_option("--baseline", flags.baseline, "baseline: none|dict|randz|fixedtheta");
}

pqkd::RunConfig resolve_config(const CommonFlags& flags) {
    pqkd::RunConfig cfg;
    if (!flags.config_path.empty()) cfg = pqkd::parse_config_file(flags.config_path);
    if (flags.seed >= 0) cfg.set("seed", std::to_string(flags.seed));
    if (flags.shots >= 0) cfg.set("shots", std::to_string(flags.shots));
    if (flags.dim_theta >= 0) cfg.set("dim_theta", std::to_string(flags.dim_theta));
    if (!flags.scope.empty()) cfg.set("scope", flags.scope);
    if (!flags.ranks.empty()) cfg.set("ranks", flags.ranks);
    if (!flags.ema.empty()) cfg.set("ema", flags.ema);
    if (!flags.baseline.empty()) cfg.set("baseline", flags.baseline);
    if (!std::isnan(flags.gamma)) cfg.set("gamma", std::to_string(flags.gamma));
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"PQKD experiment driver"};
    app.require_subcommand(1);

    CommonFlags teacher_flags, pqkd_flags, sweep_flags, noise_flags, shot_flags;
    std::string trace_path, report_out = "runs/report";
    int burn_in = 0;

    auto* cmd_teacher = app.add_subcommand("train-teacher", "train the dense teacher");
    add_common(cmd_teacher, teacher_flags, true);
    auto* cmd_pqkd = app.add_subcommand("train-pqkd", "run the alternating distillation loop");
    add_common(cmd_pqkd, pqkd_flags, true);
    auto* cmd_sweep = app.add_subcommand("sweep", "compression frontier sweep");
    add_common(cmd_sweep, sweep_flags, true);
    auto* cmd_noise = app.add_subcommand("noise-study", "feature corruption / parameter drift study");
    add_common(cmd_noise, noise_flags, true);
    auto* cmd_shot = app.add_subcommand("shot-study", "shot budget sweep and delta(S) fits");
    add_common(cmd_shot, shot_flags, true);
    auto* cmd_report = app.add_subcommand("report", "EMA variance-ratio report from a feature trace");
    cmd_report->add_option("--trace", trace_path, "feature_trace.csv path")->required();
    cmd_report->add_option("--out", report_out, "output directory");
    cmd_report->add_option("--burn-in", burn_in, "epochs to drop before the analysis window");
    auto* cmd_selftest = app.add_subcommand("selftest", "run the built-in invariant suite");

    CLI11_PARSE(app, argc, argv);

    try {
        if (cmd_teacher->parsed())
            return pqkd::run_train_teacher(resolve_config(teacher_flags), teacher_flags.out_dir);
        if (cmd_pqkd->parsed())
            return pqkd::run_train_pqkd(resolve_config(pqkd_flags), pqkd_flags.out_dir);
        if (cmd_sweep->parsed())
            return pqkd::run_sweep(resolve_config(sweep_flags), sweep_flags.out_dir);
        if (cmd_noise->parsed())
            return pqkd::run_noise_study(resolve_config(noise_flags), noise_flags.out_dir);
        if (cmd_shot->parsed())
            return pqkd::run_shot_study(resolve_config(shot_flags), shot_flags.out_dir);
        if (cmd_report->parsed()) return pqkd::run_report(trace_path, report_out, burn_in);
        if (cmd_selftest->parsed()) return pqkd::run_selftest();
    } catch (const pqkd::FormatError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
