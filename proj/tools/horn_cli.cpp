// horn: command-line front end for the reflected-diffusion toolkit.
//
//   horn check      --config FILE
//   horn simulate   --config FILE [--seed N] [--threads N] [--out DIR]
//   horn experiment NAME --config FILE [--seed N] [--threads N] [--out DIR]
//   horn diagnose   --config FILE [--seed N] [--threads N] [--out DIR]
//
// Exit codes: 0 ok, 1 threshold or assumption failure, 2 usage or config error.

#include "horn/config.hpp"
#include "horn/diagnostics.hpp"
#include "horn/experiments.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace {

constexpr int kOk = 0;
constexpr int kFailed = 1;
constexpr int kUsage = 2;

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
    std::string out = "out";
};

void add_common(CLI::App* cmd, Common& c, bool run_flags) {
    cmd->add_option("--config", c.config, "TOML configuration file")->required();
    if (run_flags) {
        cmd->add_option("--seed", c.seed, "master seed (overrides the file)");
        cmd->add_option("--threads", c.threads, "worker threads");
        cmd->add_option("--out", c.out, "output directory");
    }
}

horn::ExperimentConfig load(const Common& c) {
    horn::ExperimentConfig cfg = horn::load_config(c.config);
    if (c.seed) cfg.seed = *c.seed;
    if (c.threads) cfg.threads = std::max(1u, *c.threads);
    return cfg;
}

void print_check(const horn::AssumptionCheck& c) {
    std::printf("%s  %-14s %-52s worst_x=%-12.6g value=%.6g\n", c.pass ? "PASS" : "FAIL", c.name.c_str(),
                c.condition.c_str(), c.worst_x, c.worst_value);
}

int cmd_check(const Common& c) {
    const horn::ExperimentConfig cfg = load(c);
    horn::AssumptionReport rep;
    std::optional<horn::DomainProfile> prof;
    try {
        prof.emplace(cfg.profile);
    } catch (const std::invalid_argument& e) {
        std::printf("FAIL  domain         %s\n", e.what());
        return kFailed;
    }
    rep.append(horn::check_assumptions(*prof));
    try {
        const horn::CovarianceSpec cov(cfg.covariance, cfg.profile.d);
        rep.append(horn::check_dynamics(cov, cfg.reflection, *prof));
    } catch (const std::invalid_argument& e) {
        rep.checks.push_back({"C.ellipticity", e.what(), false, 0.0, 0.0});
        rep.checks.push_back({"A.s0c0", "s_0, c_0 in (0, inf)", cfg.reflection.s0 > 0.0 && cfg.reflection.c0 > 0.0,
                              0.0, std::min(cfg.reflection.s0, cfg.reflection.c0)});
    }
    for (const auto& ch : rep.checks) print_check(ch);
    std::printf("%s\n", rep.all_pass() ? "all assumptions pass" : "assumption failure");
    return rep.all_pass() ? kOk : kFailed;
}

void report_gates(const std::vector<std::string>& failures) {
    for (const auto& f : failures) std::fprintf(stderr, "gate: %s\n", f.c_str());
}

void print_estimates(const horn::EnsembleResult& res) {
    for (const auto& e : res.estimates) {
        std::printf("%-34s mean=%-12.6g stderr=%-10.3g ci=[%.6g, %.6g] n=%zu", e.name.c_str(), e.agg.mean,
                    e.agg.stderr_, e.agg.ci_lo, e.agg.ci_hi, e.agg.n);
        if (e.has_target()) std::printf(" target=%.6g rel_err=%.4f", e.target, e.rel_error());
        std::printf("\n");
    }
    for (const auto& w : res.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    std::printf("runtime %.2f s\n", res.runtime_s);
}

int cmd_simulate(const Common& c) {
    const horn::ExperimentConfig cfg = load(c);
    const auto m = horn::make_manifest(cfg, c.config, c.out, "simulate");
    horn::write_manifest(c.out, m);
    const horn::EnsembleResult res = horn::exp_simulate(cfg);
    horn::write_simulation_outputs(c.out, res, m.hash);
    std::printf("simulated %zu paths, %zu errors, runtime %.2f s\n", res.paths.size(), res.path_errors, res.runtime_s);
    if (res.path_errors > 0) {
        for (const auto& w : res.warnings) std::fprintf(stderr, "error: %s\n", w.c_str());
        return kFailed;
    }
    return kOk;
}

int cmd_experiment(const std::string& name, const Common& c) {
    horn::ExperimentConfig cfg = load(c);
    cfg.name = name;
    const auto m = horn::make_manifest(cfg, c.config, c.out, "experiment " + name);
    horn::write_manifest(c.out, m);
    horn::EnsembleResult res = horn::run_experiment(name, cfg);
    horn::apply_gates(cfg, res);
    horn::write_outputs(c.out, res, m.hash);
    print_estimates(res);
    report_gates(res.gate_failures);
    return res.gate_failures.empty() ? kOk : kFailed;
}

int cmd_diagnose(const Common& c) {
    const horn::ExperimentConfig cfg = load(c);
    const auto m = horn::make_manifest(cfg, c.config, c.out, "diagnose");
    horn::write_manifest(c.out, m);
    horn::EnsembleResult ens;
    const horn::DiagnoseResult d = horn::run_diagnose(cfg, &ens);
    std::filesystem::create_directories(c.out);
    std::ofstream(std::filesystem::path(c.out) / "diagnostics.json", std::ios::binary)
        << d.to_json(m.hash, cfg.seed).dump(2) << '\n';
    horn::write_paths_csv(std::filesystem::path(c.out) / "paths.csv", ens, m.hash);
    for (const auto& g : d.per_gamma) {
        std::printf("gamma=%-6g theta=%-8g verdict=%s (expected %s) z=%.2f n=%zu  qv_exponent=%.4f  x1=%s\n", g.gamma,
                    g.drift.theta, horn::to_string(g.drift.verdict), horn::to_string(g.expected), g.drift.z_score,
                    g.drift.n_segments, g.qv.exponent, g.sign.x1 ? std::to_string(*g.sign.x1).c_str() : "none");
    }
    report_gates(d.gate_failures);
    return d.gate_failures.empty() ? kOk : kFailed;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Obliquely reflected diffusions in horn-shaped domains"};
    app.require_subcommand(1);
    Common common;
    std::string exp_name;

    auto* check = app.add_subcommand("check", "audit the domain, covariance and reflection assumptions");
    add_common(check, common, false);
    auto* simulate = app.add_subcommand("simulate", "run raw paths and write trajectories");
    add_common(simulate, common, true);
    auto* experiment = app.add_subcommand("experiment", "run a named experiment");
    experiment->add_option("name", exp_name, "lln | passage | explosion | strip | exit | ode")
        ->required()
        ->check(CLI::IsMember({"lln", "passage", "explosion", "strip", "exit", "ode"}));
    add_common(experiment, common, true);
    auto* diagnose = app.add_subcommand("diagnose", "Lyapunov drift and quadratic-variation checks");
    add_common(diagnose, common, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    try {
        if (check->parsed()) return cmd_check(common);
        if (simulate->parsed()) return cmd_simulate(common);
        if (experiment->parsed()) return cmd_experiment(exp_name, common);
        if (diagnose->parsed()) return cmd_diagnose(common);
    } catch (const horn::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kUsage;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "invalid configuration: %s\n", e.what());
        return kUsage;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kFailed;
    }
    std::cerr << app.help();
    return kUsage;
}
