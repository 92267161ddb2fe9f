#include "freqopf/error.hpp"
#include "freqopf/reporting.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace freqopf;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kValidation = 2, kInfeasible = 3, kTimeLimit = 4, kIo = 5 };

int exit_for(Errc c)
{
    switch (c) {
    case Errc::IoError: return kIo;
    case Errc::InfeasibleScenario:
    case Errc::NotOptimal: return kInfeasible;
    default: return kValidation;
    }
}

int exit_for(SolveStatus s)
{
    switch (s) {
    case SolveStatus::Optimal: return kOk;
    case SolveStatus::TimeLimit:
    case SolveStatus::IterationLimit: return kTimeLimit;
    default: return kInfeasible;
    }
}

std::string slurp(const fs::path& p)
{
    std::ifstream f(p);
    if (!f)
        throw Error(Errc::IoError, "cannot read " + p.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void spit(const fs::path& p, const std::string& text)
{
    if (p.has_parent_path())
        fs::create_directories(p.parent_path());
    std::ofstream f(p);
    if (!f || !(f << text << '\n'))
        throw Error(Errc::IoError, "cannot write " + p.string());
}

// Flag overrides land in the config JSON before it is parsed, so both paths share one parser.
struct Common {
    std::string config;
    std::string case_ref;
    int outaged = 0;
    double rocof = kInf, nadir = kInf;
    std::string encoding;
    double penalty = -1;
    std::vector<int> hidden;
    int samples = -1;
    long long seed = -1;
    double time_limit = -1;
    double load_scale = -1, ibr_scale = -1;
    bool refine = false;
    int threads = -1;
    int epochs = -1;
    std::string dataset, net, out_dir;

    void attach(CLI::App* app)
    {
        app->add_option("--config", config, "JSON run config");
        app->add_option("--case", case_ref, "case file or bundled case name");
        app->add_option("--outage", outaged, "outaged generator id");
        app->add_option("--rocof-limit", rocof, "RoCoF limit (Hz/s)");
        app->add_option("--nadir-limit", nadir, "nadir limit (Hz)");
        app->add_option("--encoding", encoding, "BPWL | CTAR | P-CTAR | PCAR");
        app->add_option("--penalty", penalty, "penalty coefficient");
        app->add_option("--hidden", hidden, "hidden layer widths")->delimiter(',');
        app->add_option("--samples", samples, "dataset size");
        app->add_option("--seed", seed, "top-level seed");
        app->add_option("--time-limit", time_limit, "per-solve time limit (s)");
        app->add_option("--load-scale", load_scale, "load multiplier");
        app->add_option("--ibr-scale", ibr_scale, "IBR availability multiplier");
        app->add_flag("--refine-mccormick", refine, "bisect alpha boxes until the McCormick gap closes");
        app->add_option("--threads", threads, "worker threads (0 = all cores)");
        app->add_option("--epochs", epochs, "training epochs");
        app->add_option("--data", dataset, "dataset CSV");
        app->add_option("--net", net, "trained net JSON");
        app->add_option("--out-dir", out_dir, "output directory");
    }

    RunConfig resolve() const
    {
        json j = json::object();
        fs::path base = ".";
        if (!config.empty()) {
            try {
                j = json::parse(slurp(config));
            } catch (const json::exception& e) {
                throw Error(Errc::ParseError, std::string("config is not JSON: ") + e.what());
            }
            base = fs::path(config).parent_path();
        }
        auto cwd = [](const std::string& s) { return fs::absolute(s).string(); };
        if (!case_ref.empty())
            j["case"] = fs::exists(case_ref) ? cwd(case_ref) : case_ref;
        if (outaged)
            j["outaged_gen_id"] = outaged;
        if (std::isfinite(rocof))
            j["rocof_limit"] = rocof;
        if (std::isfinite(nadir))
            j["nadir_limit"] = nadir;
        if (!encoding.empty())
            j["encoding"] = encoding;
        if (penalty >= 0)
            j["penalty"] = penalty;
        if (!hidden.empty())
            j["hidden"] = hidden;
        if (samples >= 0)
            j["samples"] = samples;
        if (seed >= 0)
            j["seed"] = seed;
        if (time_limit > 0)
            j["time_limit_s"] = time_limit;
        if (load_scale > 0)
            j["load_scale"] = load_scale;
        if (ibr_scale > 0)
            j["ibr_scale"] = ibr_scale;
        if (refine)
            j["refine_mccormick"] = true;
        if (threads >= 0)
            j["threads"] = threads;
        if (epochs > 0)
            j["epochs"] = epochs;
        if (!dataset.empty())
            j["dataset"] = cwd(dataset);
        if (!net.empty())
            j["net"] = cwd(net);
        if (!out_dir.empty())
            j["out_dir"] = cwd(out_dir);
        return parse_run_config(j.dump(), base);
    }
};

int cmd_case_validate(const std::string& ref)
{
    GridCase gc;
    try {
        gc = resolve_case(ref);
    } catch (const Error& e) {
        std::cerr << e.what() << '\n';
        for (const auto& d : e.details())
            std::cerr << "  " << d << '\n';
        return exit_for(e.code());
    }
    std::printf("ok: %zu buses, %zu lines, %zu gens, %zu IBRs, load %.2f MW, fingerprint %s\n", gc.buses.size(),
                gc.lines.size(), gc.gens.size(), gc.ibrs.size(), gc.total_load_mw(), case_fingerprint(gc).c_str());
    return kOk;
}

int cmd_data_gen(const Common& c, const std::string& out)
{
    RunConfig cfg = c.resolve();
    cfg.dataset_path.reset();
    BuildReport rep;
    Dataset d = obtain_dataset(cfg, &rep);
    write_dataset(d, out);
    std::printf("wrote %zu samples to %s (%zu skipped, %.1f s)\n", d.samples.size(), out.c_str(), rep.skipped.size(),
                rep.elapsed_s);
    for (const auto& s : rep.skipped)
        std::printf("  skipped %d: %s\n", s.scenario_id, s.reason.c_str());
    return kOk;
}

int cmd_train(const Common& c, const std::string& out)
{
    RunConfig cfg = c.resolve();
    cfg.net_path.reset();
    TrainReport rep;
    MlpNet net = obtain_predictor(cfg, &rep);
    save_net(net, out);
    std::printf("trained %d/%d samples, best epoch %d, val loss %.3e -> %.3e\n", rep.train_size, rep.val_size,
                rep.best_epoch, rep.initial_val_loss, rep.val_loss.empty() ? rep.initial_val_loss : rep.val_loss[static_cast<std::size_t>(std::max(0, rep.best_epoch - 1))]);
    return kOk;
}

int cmd_solve(const Common& c, const std::string& model, const std::string& out)
{
    RunConfig cfg = c.resolve();
    GridCase gc = scale_case(cfg.grid, cfg.load_scale, cfg.ibr_scale);
    OpfModel om;
    if (model == "topf")
        om = build_topf(gc, cfg.opf);
    else if (model == "lfcopf")
        om = build_lfcopf(gc, cfg.contingency, cfg.limits, cfg.opf);
    else if (model == "dlfcopf")
        om = build_dlfcopf(gc, cfg.contingency, obtain_predictor(cfg), cfg.limits, cfg.encoding, cfg.opf);
    else
        throw Error(Errc::InvalidConfig, "unknown model '" + model + "' (topf | lfcopf | dlfcopf)");
    SolveConfig sc;
    sc.time_limit_s = cfg.time_limit_s;
    sc.refine_mccormick = cfg.refine_mccormick;
    OpfResult r = solve_opf(om, sc);
    std::printf("%s: %s", model_name(om.kind), status_name(r.solution.status));
    if (r.diagnostic)
        std::printf(" (RoCoF short by %.4f Hz/s, nadir short by %.4f Hz)", r.diagnostic->rocof_violation_hz_s,
                    r.diagnostic->nadir_violation_hz);
    if (!r.dispatch) {
        std::printf("\n");
        return exit_for(r.solution.status);
    }
    std::printf(", cost %.4f $/h, %.2f s\n", r.dispatch->total_cost, r.solution.solve_time_s + om.build_time_s);
    if (!r.mccormick_ok)
        std::printf("warning: McCormick gap %.4f MW exceeds tolerance\n", r.mccormick_gap_mw);
    if (!out.empty())
        spit(out, dispatch_to_json(*r.dispatch, om, r));
    return exit_for(r.solution.status);
}

int cmd_validate(const Common& c, const std::string& dispatch_path, const std::string& traj)
{
    RunConfig cfg = c.resolve();
    GridCase gc = scale_case(cfg.grid, cfg.load_scale, cfg.ibr_scale);
    Dispatch d = dispatch_from_json(slurp(dispatch_path), gc);
    SimResult s = validate_dispatch(gc, d, cfg.contingency, cfg.sim);
    std::printf("RoCoF %.5f Hz/s, nadir %.5f Hz, settled %s\n", s.metrics.worst_rocof_hz_per_s, s.metrics.nadir_hz,
                s.metrics.settled ? "yes" : "no");
    for (std::size_t i = 0; i < s.ibr_ids.size(); ++i)
        std::printf("IBR %d headroom used %.4f MW\n", s.ibr_ids[i], s.metrics.headroom_used_mw[i]);
    if (!traj.empty())
        write_trajectory_csv(s, traj);
    bool ok = s.metrics.worst_rocof_hz_per_s >= cfg.limits.rocof_limit_hz_per_s &&
              s.metrics.nadir_hz >= cfg.limits.nadir_limit_hz;
    std::printf("limits %s\n", ok ? "met" : "violated");
    return ok ? kOk : kValidation;
}

int cmd_sweep(const Common& c, const std::string& axis_s)
{
    RunConfig cfg = c.resolve();
    SweepAxis axis = parse_axis(axis_s);
    std::optional<Dataset> data;
    std::optional<MlpNet> net;
    if (axis == SweepAxis::Neurons1Layer || axis == SweepAxis::Neurons2Layer)
        data = obtain_dataset(cfg);
    else
        net = obtain_predictor(cfg);
    SweepTable t = run_sensitivity_sweep(cfg, axis, data ? &*data : nullptr, net ? &*net : nullptr);
    fs::create_directories(cfg.out_dir);
    fs::path js = cfg.out_dir / ("sweep_" + axis_s + ".json");
    spit(js, sweep_to_json(t));
    auto files = emit_plots(t, cfg.out_dir);
    files.insert(files.begin(), js);
    write_manifest(cfg.out_dir, files);
    int code = kOk;
    for (const auto& r : t.rows) {
        std::printf("%-20s %-10s cost %12.4f  time %7.2f s  lin.err %.3e  real.err %.3e%s%s\n", r.label.c_str(),
                    r.status.c_str(), r.cost, r.solve_time_s, r.linearization_error, r.real_error,
                    r.error.empty() ? "" : "  ", r.error.c_str());
        if (r.status == "TimeLimit")
            code = kTimeLimit;
    }
    return code;
}

int cmd_report(const Common& c)
{
    RunConfig cfg = c.resolve();
    ComparisonReport rep = run_pipeline(cfg);
    fs::create_directories(cfg.out_dir);
    fs::path js = cfg.out_dir / "report.json";
    spit(js, report_to_json(rep));
    auto files = emit_plots(rep, cfg.out_dir);
    files.insert(files.begin(), js);
    write_manifest(cfg.out_dir, files);
    auto fmt = [](const std::optional<double>& v, const char* f) {
        if (!v)
            return std::string("N/A");
        char b[32];
        std::snprintf(b, sizeof b, f, *v);
        return std::string(b);
    };
    std::printf("%-9s %-10s %12s %9s %10s %10s %8s %10s %10s\n", "model", "status", "cost", "P_otg", "RoCoF est",
                "RoCoF sim", "err", "nadir est", "nadir sim");
    int code = kOk;
    for (const auto& r : rep.rows) {
        std::printf("%-9s %-10s %12.4f %9.3f %10s %10s %8s %10s %10s\n", model_name(r.kind), r.status.c_str(), r.cost,
                    r.p_outage_mw, fmt(r.rocof.estimated, "%.4f").c_str(), fmt(r.rocof.exact, "%.4f").c_str(),
                    fmt(r.rocof.rel_error ? std::optional(*r.rocof.rel_error * 100) : std::nullopt, "%.2f%%").c_str(),
                    fmt(r.nadir.estimated, "%.4f").c_str(), fmt(r.nadir.exact, "%.4f").c_str());
        if (!r.error.empty()) {
            std::printf("          %s\n", r.error.c_str());
            code = kInfeasible;
        }
    }
    std::printf("wrote %zu files under %s\n", files.size() + 1, cfg.out_dir.string().c_str());
    return code;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Frequency-constrained economic dispatch toolkit"};
    app.require_subcommand(1);

    auto* case_cmd = app.add_subcommand("case", "case file utilities");
    case_cmd->require_subcommand(1);
    std::string case_ref;
    auto* case_validate = case_cmd->add_subcommand("validate", "parse and validate a case");
    case_validate->add_option("case", case_ref, "case file or bundled name")->required();

    Common common;
    auto* data_cmd = app.add_subcommand("data", "training data");
    data_cmd->require_subcommand(1);
    auto* data_gen = data_cmd->add_subcommand("gen", "sample, simulate and label scenarios");
    std::string data_out;
    common.attach(data_gen);
    data_gen->add_option("-o,--out", data_out, "dataset CSV path")->required();

    auto* train_cmd = app.add_subcommand("train", "train the frequency predictor");
    std::string net_out;
    common.attach(train_cmd);
    train_cmd->add_option("-o,--out", net_out, "net JSON path")->required();

    auto* solve_cmd = app.add_subcommand("solve", "solve one dispatch model");
    std::string model = "dlfcopf", dispatch_out;
    common.attach(solve_cmd);
    solve_cmd->add_option("--model", model, "topf | lfcopf | dlfcopf");
    solve_cmd->add_option("-o,--out", dispatch_out, "dispatch JSON path");

    auto* validate_cmd = app.add_subcommand("validate", "simulate a dispatch under the contingency");
    std::string dispatch_in, traj_out;
    common.attach(validate_cmd);
    validate_cmd->add_option("--dispatch", dispatch_in, "dispatch JSON")->required();
    validate_cmd->add_option("--trajectory", traj_out, "trajectory CSV path");

    auto* sweep_cmd = app.add_subcommand("sweep", "sensitivity sweep");
    std::string axis = "penalty";
    common.attach(sweep_cmd);
    sweep_cmd->add_option("--axis", axis, "neurons_1layer | neurons_2layer | penalty | encoding");

    auto* report_cmd = app.add_subcommand("report", "compare T-OPF, L-FCOPF and DL-FCOPF");
    common.attach(report_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? kOk : kValidation;
    }

    try {
        if (*case_validate)
            return cmd_case_validate(case_ref);
        if (*data_gen)
            return cmd_data_gen(common, data_out);
        if (*train_cmd)
            return cmd_train(common, net_out);
        if (*solve_cmd)
            return cmd_solve(common, model, dispatch_out);
        if (*validate_cmd)
            return cmd_validate(common, dispatch_in, traj_out);
        if (*sweep_cmd)
            return cmd_sweep(common, axis);
        if (*report_cmd)
            return cmd_report(common);
    } catch (const Error& e) {
        std::cerr << e.what() << '\n';
        for (const auto& d : e.details())
            std::cerr << "  " << d << '\n';
        return exit_for(e.code());
    } catch (const fs::filesystem_error& e) {
        std::cerr << "IoError: " << e.what() << '\n';
        return kIo;
    }
    return kOk;
}
