// sam2aug command-line front end: eval, sweep, ablate, phantom, metrics.
//
// Exit codes: 0 success, 1 some cases failed, 2 usage or configuration error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sam2aug/harness.hpp"

namespace
{

using namespace sam2aug;

struct Shared
{
    std::string manifest;
    std::vector<std::string> backends;
    std::uint64_t seed = 0;
    int jitter_max = 5;
    double tau = 0.5;
    std::string unit = "voxel";
    std::string mode = "edt";
    std::string out = "out";
    int workers = 1;
};

void add_shared(CLI::App* cmd, Shared& s, bool multi_backend)
{
    cmd->add_option("--manifest", s.manifest, "dataset manifest (JSON)")->required()->check(CLI::ExistingFile);
    auto* b = cmd->add_option("--backend", s.backends, "propagate | prior-oracle | external:\"CMD\"");
    if (!multi_backend)
        b->expected(1);
    cmd->add_option("--seed", s.seed, "experiment seed");
    cmd->add_option("--jitter-max", s.jitter_max, "test-time box jitter bound (voxels)")->check(CLI::NonNegativeNumber);
    cmd->add_option("--tau", s.tau, "NSD tolerance")->check(CLI::NonNegativeNumber);
    cmd->add_option("--unit", s.unit, "distance unit")->check(CLI::IsMember({"voxel", "mm"}));
    cmd->add_option("--mode", s.mode, "surface distance mode")->check(CLI::IsMember({"edt", "brute"}));
    cmd->add_option("--out", s.out, "output directory");
    cmd->add_option("--workers", s.workers, "parallel cases")->check(CLI::Range(1, 64));
}

EvalOptions eval_options(const Shared& s, const std::string& policy_path)
{
    EvalOptions o;
    o.backend_label = s.backends.empty() ? "prior-oracle" : s.backends.front();
    if (policy_path.empty()) {
        o.policy = test_policy(s.jitter_max);
    } else {
        std::ifstream in(policy_path);
        if (!in)
            fail(Errc::IoFailure, "cannot open " + policy_path);
        try {
            o.policy = nlohmann::json::parse(in).get<AugPolicy>();
        } catch (const nlohmann::json::exception& e) {
            fail(Errc::InvalidArgument, std::string("policy: ") + e.what());
        }
    }
    o.policy.seed = s.seed;
    o.seed = s.seed;
    o.metrics.tau = s.tau;
    o.metrics.unit = parse_unit(s.unit);
    o.metrics.mode = parse_mode(s.mode);
    o.out_dir = s.out;
    o.workers = s.workers;
    return o;
}

void print_summary(const std::string& label, const ExperimentReport& rep)
{
    std::printf("%s: %zu cases, %zu failed, dice %s +- %s\n", label.c_str(), rep.rows.size(), rep.failed(),
                format_number(rep.agg.dice.mean).c_str(), format_number(rep.agg.dice.sd).c_str());
}

int cmd_eval(const Shared& s, const std::string& policy_path)
{
    const auto o = eval_options(s, policy_path);
    const auto manifest = load_manifest(s.manifest, true);
    auto backend = make_backend(o.backend_label);
    const auto rep = run_eval(manifest, *backend, o, s.manifest);
    write_report(rep, o.out_dir);
    print_summary("eval", rep);
    return rep.failed() ? 1 : 0;
}

int cmd_sweep(const Shared& s, int min_level, int max_level, int reps)
{
    const auto manifest = load_manifest(s.manifest, true);
    std::vector<std::string> labels = s.backends;
    if (labels.empty())
        labels = {"propagate", "prior-oracle"};
    SweepOptions o;
    o.min_level = min_level;
    o.max_level = max_level;
    o.reps = reps;
    o.seed = s.seed;
    o.out_dir = s.out;
    o.workers = s.workers;
    fs::create_directories(o.out_dir);
    nlohmann::json all{{"config",
                        {{"seed", s.seed}, {"levels", {min_level, max_level}}, {"reps", reps}, {"manifest", s.manifest}}},
                       {"backends", nlohmann::json::object()}};
    bool incomplete = false;
    const std::size_t expected = evaluable_cases(manifest).size() * static_cast<std::size_t>(reps);
    for (const auto& label : labels) {
        auto backend = make_backend(label);
        const auto rows = run_sweep(manifest, *backend, o, file_label(label));
        write_text(o.out_dir / ("sweep_" + file_label(label) + ".csv"), sweep_csv(rows));
        nlohmann::json table = nlohmann::json::array();
        for (const auto& r : rows) {
            table.push_back({{"level", r.level}, {"mean_dice", r.dice.mean}, {"sd_dice", r.dice.sd}, {"n", r.dice.n}});
            incomplete = incomplete || r.dice.n != expected;
        }
        all["backends"][label] = table;
        std::printf("sweep %s: %zu levels\n", label.c_str(), rows.size());
    }
    write_text(o.out_dir / "sweep.json", all.dump(2) + "\n");
    return incomplete ? 1 : 0;
}

int cmd_ablate(const Shared& s, const std::vector<std::string>& config_text)
{
    auto o = eval_options(s, "");
    std::vector<InputSelection> configs;
    for (const auto& c : config_text)
        configs.push_back(parse_input_selection(c));
    if (configs.empty())
        configs = {parse_input_selection("curMR"), parse_input_selection("curMR+priMR"),
                   parse_input_selection("curMR+priSeg"), parse_input_selection("curMR+priMR+priSeg")};
    const auto manifest = load_manifest(s.manifest, true);
    auto backend = make_backend(o.backend_label);
    const auto rows = run_ablation(manifest, *backend, o, configs, s.manifest);
    fs::create_directories(o.out_dir);
    bool any_failed = false;
    for (const auto& r : rows) {
        write_report(r.report, o.out_dir / ("ablate_" + r.config));
        print_summary(r.config, r.report);
        any_failed = any_failed || r.report.failed() > 0;
    }
    write_text(o.out_dir / "ablation.csv", ablation_csv(rows));
    return any_failed ? 1 : 0;
}

int cmd_phantom(const std::string& spec_path, const std::string& out, std::optional<int> patients,
                std::optional<int> fractions, std::optional<std::uint64_t> seed)
{
    nlohmann::json j = nlohmann::json::object();
    if (!spec_path.empty()) {
        std::ifstream in(spec_path);
        if (!in)
            fail(Errc::IoFailure, "cannot open " + spec_path);
        try {
            j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            fail(Errc::InvalidSpec, e.what());
        }
    }
    // A bare phantom spec is accepted as the template of a default manifest.
    if (j.is_object() && !j.contains("template") && (j.contains("dims") || j.contains("tumor")))
        j = nlohmann::json{{"template", j}};
    if (patients)
        j["n_patients"] = *patients;
    if (fractions)
        j["fractions"] = *fractions;
    if (seed)
        j["seed"] = *seed;
    const auto ms = j.get<ManifestSpec>();
    const auto m = generate_manifest(ms, out);
    validate(m, true);
    std::printf("phantom: %zu scans written to %s\n", m.cases.size(), out.c_str());
    return 0;
}

int cmd_metrics(const std::string& gt, const std::string& pred, const Shared& s)
{
    MetricConfig cfg;
    cfg.tau = s.tau;
    cfg.unit = parse_unit(s.unit);
    cfg.mode = parse_mode(s.mode);
    const auto g = read_nifti_mask(gt);
    const auto p = read_nifti_mask(pred);
    if (!(g.geom == p.geom))
        fail(Errc::GeometryMismatch, gt + " vs " + pred);
    nlohmann::json j = evaluate_case(g, p, cfg);
    std::cout << j.dump(2) << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"sam2aug: prior-knowledge prompt augmentation toolkit"};
    app.require_subcommand(1);

    Shared eval_s, sweep_s, ablate_s, metrics_s;
    std::string policy_path;
    auto* eval = app.add_subcommand("eval", "evaluate a backend over a manifest");
    add_shared(eval, eval_s, false);
    eval->add_option("--policy", policy_path, "augmentation policy (JSON)")->check(CLI::ExistingFile);

    int min_level = 1, max_level = 10, reps = 1;
    auto* sweep = app.add_subcommand("sweep", "box-expansion robustness sweep");
    add_shared(sweep, sweep_s, true);
    sweep->add_option("--min-level", min_level, "first expansion level")->check(CLI::NonNegativeNumber);
    sweep->add_option("--max-level", max_level, "last expansion level")->check(CLI::NonNegativeNumber);
    sweep->add_option("--reps", reps, "repetitions per case and level")->check(CLI::PositiveNumber);

    std::vector<std::string> configs;
    auto* ablate = app.add_subcommand("ablate", "input-channel ablation");
    add_shared(ablate, ablate_s, false);
    ablate->add_option("--configs", configs, "e.g. curMR+priMR priSeg")->delimiter(' ');

    std::string spec_path, phantom_out = "phantoms";
    std::optional<int> patients, fractions;
    std::optional<std::uint64_t> phantom_seed;
    auto* phantom = app.add_subcommand("phantom", "generate a phantom dataset");
    phantom->add_option("spec", spec_path, "phantom or manifest spec (JSON); defaults if omitted")
        ->check(CLI::ExistingFile);
    phantom->add_option("--out", phantom_out, "output directory");
    phantom->add_option("--patients", patients, "number of patients");
    phantom->add_option("--fractions", fractions, "adaptive fractions per patient");
    phantom->add_option("--seed", phantom_seed, "generator seed");

    std::string gt_path, pred_path;
    auto* metrics = app.add_subcommand("metrics", "score one prediction against ground truth");
    metrics->add_option("gt", gt_path, "ground-truth mask")->required();
    metrics->add_option("pred", pred_path, "predicted mask")->required();
    metrics->add_option("--tau", metrics_s.tau, "NSD tolerance")->check(CLI::NonNegativeNumber);
    metrics->add_option("--unit", metrics_s.unit, "distance unit")->check(CLI::IsMember({"voxel", "mm"}));
    metrics->add_option("--mode", metrics_s.mode, "surface distance mode")->check(CLI::IsMember({"edt", "brute"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*eval)
            return cmd_eval(eval_s, policy_path);
        if (*sweep)
            return cmd_sweep(sweep_s, min_level, max_level, reps);
        if (*ablate)
            return cmd_ablate(ablate_s, configs);
        if (*phantom)
            return cmd_phantom(spec_path, phantom_out, patients, fractions, phantom_seed);
        if (*metrics)
            return cmd_metrics(gt_path, pred_path, metrics_s);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 2;
}
